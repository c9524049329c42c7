"""SMILES reader for the organic subset.

Handles: organic-subset atoms (two-letter Cl/Br included), aromatic
lowercase atoms, bracket atoms with explicit hydrogen and formal charge,
bond symbols ``- = # :``, branches, ring-bond digits (1-9 and %nn).
Stereochemistry markers (``/ \\ @ @@``) are parsed and dropped with a
warning. Dot-separated multi-fragment input is rejected, as are isotope
labels; both are outside the supported subset.

Implicit hydrogens for atoms written without brackets are filled in from
the valence table after the scan, so downstream code never sees a partially
hydrogenated graph.
"""

from __future__ import annotations

import re
import warnings

from ..errors import (
    EmptyInput,
    InvalidGraph,
    SmilesParseError,
    UnbalancedBranch,
    UnclosedRing,
    UnknownElement,
)
from .graph import (
    AROMATIC_ELEMENTS,
    DEFAULT_VALENCE,
    ORGANIC_SUBSET,
    Atom,
    BondOrder,
    MolGraph,
    implicit_hydrogen_count,
)

BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
}

# Isotope digits are captured so they can be rejected with a clear message
# instead of a generic mismatch.
_BRACKET_RE = re.compile(
    r"\[(?P<isotope>\d+)?(?P<element>[A-Za-z][a-z]?)(?P<stereo>@{1,2})?"
    r"(?P<hydrogens>H(?P<hcount>\d+)?)?(?P<charge>[+-]\d+|[+-]{1,2})?\]"
)

_SINGLE_ATOMS = frozenset("BCNOPSFI")
_AROMATIC_ATOMS = frozenset("bcnops")


def _parse_charge(text: str | None) -> int:
    if not text:
        return 0
    if text in ("+", "++", "-", "--"):
        return len(text) if text[0] == "+" else -len(text)
    return int(text)


def _default_order(a: Atom, b: Atom) -> BondOrder:
    if a.aromatic and b.aromatic:
        return BondOrder.AROMATIC
    return BondOrder.SINGLE


class _Scanner:
    """Single pass over the string, building the graph as atoms appear."""

    def __init__(self, smiles: str):
        self.smiles = smiles
        self.graph = MolGraph()
        self.prev: int | None = None
        self.pending: BondOrder | None = None
        self.branch_stack: list[int] = []
        self.ring_open: dict[str, tuple[int, BondOrder | None]] = {}
        self.bracket_atoms: set[int] = set()

    def fail(self, pos: int, message: str) -> SmilesParseError:
        return SmilesParseError(f"{message} at position {pos} in {self.smiles!r}")

    def add_atom(self, atom: Atom, pos: int) -> None:
        idx = self.graph.add_atom(atom)
        if self.prev is not None:
            order = self.pending or _default_order(self.graph.atoms[self.prev], atom)
            self.graph.add_bond(self.prev, idx, order)
        elif self.pending is not None:
            raise self.fail(pos, "bond symbol with no preceding atom")
        self.prev = idx
        self.pending = None

    def close_ring(self, label: str, pos: int) -> None:
        if self.prev is None:
            raise self.fail(pos, "ring closure before any atom")
        if label not in self.ring_open:
            self.ring_open[label] = (self.prev, self.pending)
            self.pending = None
            return
        other, open_order = self.ring_open.pop(label)
        if other == self.prev:
            raise self.fail(pos, f"ring bond {label} closes on its own atom")
        if open_order and self.pending and open_order != self.pending:
            raise self.fail(pos, f"conflicting bond orders on ring bond {label}")
        order = (
            open_order
            or self.pending
            or _default_order(self.graph.atoms[other], self.graph.atoms[self.prev])
        )
        try:
            self.graph.add_bond(other, self.prev, order)
        except InvalidGraph as exc:
            raise self.fail(pos, f"ring bond {label} duplicates an existing bond") from exc
        self.pending = None

    def read_bracket(self, pos: int) -> int:
        match = _BRACKET_RE.match(self.smiles, pos)
        if match is None:
            raise self.fail(pos, "malformed bracket atom")
        if match.group("isotope"):
            raise self.fail(pos, "isotope labels are not supported")
        if match.group("stereo"):
            warnings.warn(
                f"discarding stereochemistry marker in {self.smiles!r}",
                stacklevel=4,
            )
        symbol = match.group("element")
        aromatic = symbol[0].islower()
        element = symbol.capitalize()
        if element not in DEFAULT_VALENCE:
            raise UnknownElement(f"unknown element {symbol!r} in {self.smiles!r}")
        if aromatic and element not in AROMATIC_ELEMENTS:
            raise UnknownElement(f"element {element} cannot be aromatic")
        h_count = 0
        if match.group("hydrogens"):
            h_count = int(match.group("hcount") or 1)
        charge = _parse_charge(match.group("charge"))
        atom = Atom(element, aromatic=aromatic, charge=charge, explicit_h=h_count)
        self.add_atom(atom, pos)
        self.bracket_atoms.add(self.graph.n_atoms() - 1)
        return match.end()

    def run(self) -> MolGraph:
        s = self.smiles
        i = 0
        while i < len(s):
            ch = s[i]
            if ch == "[":
                i = self.read_bracket(i)
                continue
            if ch == "C" and s[i : i + 2] == "Cl":
                self.add_atom(Atom("Cl"), i)
                i += 2
                continue
            if ch == "B" and s[i : i + 2] == "Br":
                self.add_atom(Atom("Br"), i)
                i += 2
                continue
            if ch in _SINGLE_ATOMS:
                self.add_atom(Atom(ch), i)
            elif ch in _AROMATIC_ATOMS:
                self.add_atom(Atom(ch.upper(), aromatic=True), i)
            elif ch in BOND_SYMBOLS:
                if self.pending is not None:
                    raise self.fail(i, "two bond symbols in a row")
                if self.prev is None:
                    raise self.fail(i, "bond symbol with no preceding atom")
                self.pending = BOND_SYMBOLS[ch]
            elif ch in "/\\":
                warnings.warn(
                    f"discarding stereo bond {ch!r} in {s!r}; treating as single",
                    stacklevel=3,
                )
                if self.pending is not None:
                    raise self.fail(i, "two bond symbols in a row")
                self.pending = BondOrder.SINGLE
            elif ch == "(":
                if self.prev is None:
                    raise UnbalancedBranch(f"branch opens before any atom in {s!r}")
                if self.pending is not None:
                    raise self.fail(i, "bond symbol before branch open")
                self.branch_stack.append(self.prev)
            elif ch == ")":
                if not self.branch_stack:
                    raise UnbalancedBranch(f"unmatched ')' at position {i} in {s!r}")
                if self.pending is not None:
                    raise self.fail(i, "dangling bond symbol before ')'")
                self.prev = self.branch_stack.pop()
            elif ch in "123456789":
                self.close_ring(ch, i)
            elif ch == "%":
                if not s[i + 1 : i + 3].isdigit():
                    raise self.fail(i, "'%' ring label needs two digits")
                self.close_ring(s[i + 1 : i + 3], i)
                i += 2
            elif ch == ".":
                raise SmilesParseError(f"multi-fragment input rejected: {s!r}")
            else:
                raise self.fail(i, f"unexpected character {ch!r}")
            i += 1

        if self.branch_stack:
            raise UnbalancedBranch(f"unclosed branch in {s!r}")
        if self.ring_open:
            labels = ", ".join(sorted(self.ring_open))
            raise UnclosedRing(f"unclosed ring bond(s) {labels} in {s!r}")
        if self.pending is not None:
            raise SmilesParseError(f"trailing bond symbol in {s!r}")
        return self.graph


def parse_smiles(smiles: str) -> MolGraph:
    """Parse a single-fragment SMILES string into a molecular graph.

    Atom order in the result follows the scan order of the string. Atoms
    written without brackets get their hydrogen count from the valence
    table; bracket atoms keep theirs verbatim.
    """
    if not smiles or not smiles.strip():
        raise EmptyInput("empty SMILES string")
    scanner = _Scanner(smiles.strip())
    graph = scanner.run()
    for idx, atom in enumerate(graph.atoms):
        if idx in scanner.bracket_atoms:
            continue
        if atom.element not in ORGANIC_SUBSET:
            raise UnknownElement(f"element {atom.element!r} requires brackets")
        atom.explicit_h = implicit_hydrogen_count(
            atom.element, atom.charge, graph.valence_sum(idx)
        )
    return graph
