"""Molecular graph types and valence bookkeeping.

The graph model is deliberately small: atoms carry element, aromatic flag,
formal charge and an attached-hydrogen count; bonds carry one of four
orders. There is no kekulization and no aromaticity perception, so the
aromatic flag is structural data that parses in and writes out unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from ..errors import InvalidGraph, UnknownElement

# Elements writable without brackets. H is excluded on purpose: a bare
# hydrogen atom must be written as [H].
ORGANIC_SUBSET = frozenset({"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"})

# Elements that may carry the aromatic flag (lowercase in SMILES).
AROMATIC_ELEMENTS = frozenset({"B", "C", "N", "O", "P", "S"})

# Allowed valences per element, smallest first. Multi-valued entries model
# hypervalent states (sulfate S, phosphate P).
DEFAULT_VALENCE: dict[str, tuple[int, ...]] = {
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
    "H": (1,),
}


class BondOrder(Enum):
    SINGLE = "single"
    DOUBLE = "double"
    TRIPLE = "triple"
    AROMATIC = "aromatic"


# Contribution of each order to an atom's valence sum. Aromatic bonds count
# as single here: without kekulization any fractional convention breaks
# either fused-ring junctions or pyrrole-type [nH] atoms.
ORDER_VALENCE: dict[BondOrder, int] = {
    BondOrder.SINGLE: 1,
    BondOrder.DOUBLE: 2,
    BondOrder.TRIPLE: 3,
    BondOrder.AROMATIC: 1,
}


@dataclass
class Atom:
    """One atom: element symbol (title case), flags and hydrogen count.

    ``explicit_h`` is the number of attached hydrogens this atom is stored
    with. For atoms parsed from bracket expressions it is the bracket count
    verbatim; for organic-subset atoms it is filled from the valence table.
    """

    element: str
    aromatic: bool = False
    charge: int = 0
    explicit_h: int = 0


@dataclass
class Bond:
    """Undirected bond between atom ids ``a`` and ``b``."""

    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE

    def other(self, idx: int) -> int:
        return self.b if idx == self.a else self.a


@dataclass
class MolGraph:
    """A connected molecular graph under construction or analysis.

    Connectivity is not enforced while bonds are being added; callers that
    need it check :meth:`is_connected` (the canonicalizer refuses
    disconnected input).
    """

    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    def n_atoms(self) -> int:
        return len(self.atoms)

    def add_atom(self, atom: Atom) -> int:
        self.atoms.append(atom)
        return len(self.atoms) - 1

    def add_bond(self, a: int, b: int, order: BondOrder = BondOrder.SINGLE) -> Bond:
        n = len(self.atoms)
        if not (0 <= a < n and 0 <= b < n):
            raise InvalidGraph(f"bond endpoint out of range: ({a}, {b}) with {n} atoms")
        if a == b:
            raise InvalidGraph(f"self-bond on atom {a}")
        if any((x.a, x.b) in ((a, b), (b, a)) for x in self.bonds):
            raise InvalidGraph(f"duplicate bond between {a} and {b}")
        bond = Bond(a, b, order)
        self.bonds.append(bond)
        return bond

    def neighbors(self, idx: int) -> list[tuple[int, Bond]]:
        out = []
        for bond in self.bonds:
            if bond.a == idx or bond.b == idx:
                out.append((bond.other(idx), bond))
        return out

    def degree(self, idx: int) -> int:
        return sum(1 for b in self.bonds if idx in (b.a, b.b))

    def valence_sum(self, idx: int) -> int:
        return sum(ORDER_VALENCE[b.order] for b in self.bonds if idx in (b.a, b.b))

    def is_connected(self) -> bool:
        if not self.atoms:
            return False
        seen = {0}
        stack = [0]
        while stack:
            for j, _ in self.neighbors(stack.pop()):
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == len(self.atoms)


def allowed_valences(element: str, charge: int) -> tuple[int, ...]:
    """Valence states for an element adjusted by formal charge.

    The adjustment is additive: N+ gets 4, O- gets 1. Values that go
    non-positive are dropped; an element with no surviving state is treated
    as zero-valent (only a bare ion can be valid then).
    """
    try:
        base = DEFAULT_VALENCE[element]
    except KeyError:
        raise UnknownElement(f"no valence entry for element {element!r}") from None
    adjusted = tuple(v + charge for v in base if v + charge > 0)
    return adjusted or (0,)


def implicit_hydrogen_count(element: str, charge: int, valence_sum: int) -> int:
    """Hydrogens needed to fill the smallest valence state that fits.

    Returns 0 when the bond sum already exceeds every allowed state; the
    valence check, not this helper, is where that becomes an error.
    """
    for v in allowed_valences(element, charge):
        if v >= valence_sum:
            return v - valence_sum
    return 0


def validate_valence(graph: MolGraph) -> bool:
    """True when every atom fits one of its allowed valence states."""
    for idx, atom in enumerate(graph.atoms):
        total = graph.valence_sum(idx) + atom.explicit_h
        if total > max(allowed_valences(atom.element, atom.charge)):
            return False
    return True


def ring_atoms(graph: MolGraph) -> set[int]:
    """Atom ids lying on at least one cycle (the 2-core of the graph)."""
    degree = {i: graph.degree(i) for i in range(graph.n_atoms())}
    adj = {i: [j for j, _ in graph.neighbors(i)] for i in degree}
    queue = [i for i, d in degree.items() if d < 2]
    dead: set[int] = set()
    while queue:
        i = queue.pop()
        if i in dead:
            continue
        dead.add(i)
        for j in adj[i]:
            if j not in dead:
                degree[j] -= 1
                if degree[j] == 1:
                    queue.append(j)
    return {i for i in degree if i not in dead}
