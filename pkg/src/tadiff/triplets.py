"""Graph-triplet serialization: the molecule-side token format.

A molecule is rendered as one segment per bond,

    [HEAD] C_1 [REL] SINGLE [TAIL] C_2

joined by [SEP]. Atom tokens fuse the element symbol (lowercase when
aromatic) with the atom's 1-based position in the canonical emission order,
and bonds are listed ascending by (head, tail) index, so the serialization
is a pure function of the canonical ranking. A single isolated atom becomes
the degenerate segment ``HEAD h REL NONE TAIL h``.

Decoding comes in two modes. ``strict`` raises on the first malformed
segment, duplicate conflict or disconnection; ``robust`` is for model
output and recovers what it can, counting what it skipped.
"""

from __future__ import annotations

import re
from collections import Counter, defaultdict
from dataclasses import dataclass

from . import chem
from .errors import (
    DisconnectedGraph,
    EmptyTriplets,
    IndexConflict,
    MalformedSegment,
)
from .tokenization import TokenSeq, Vocab

HEAD, REL, TAIL, SEP = "[HEAD]", "[REL]", "[TAIL]", "[SEP]"

REL_OF_ORDER = {
    chem.BondOrder.SINGLE: "SINGLE",
    chem.BondOrder.DOUBLE: "DOUBLE",
    chem.BondOrder.TRIPLE: "TRIPLE",
    chem.BondOrder.AROMATIC: "AROMATIC",
}
ORDER_OF_REL = {v: k for k, v in REL_OF_ORDER.items()}
NONE_REL = "NONE"

_ATOM_TOKEN_RE = re.compile(r"([A-Za-z][a-z]?)_([1-9]\d*)$")


@dataclass(frozen=True)
class Triplet:
    """One serialized bond, or an isolated atom when rel is NONE."""

    head: str
    rel: str
    tail: str


@dataclass
class TripletDecode:
    """Result of scanning a token stream for segments."""

    triplets: list[Triplet]
    skipped_segments: int = 0


@dataclass
class GraphDecode:
    """Result of rebuilding a graph from triplets."""

    graph: chem.MolGraph
    dropped_atoms: int = 0
    dropped_bonds: int = 0
    conflicts: int = 0


@dataclass(frozen=True)
class _AtomRef:
    element: str
    aromatic: bool
    index: int


def _atom_token(atom: chem.Atom, index: int) -> str:
    symbol = atom.element.lower() if atom.aromatic else atom.element
    return f"{symbol}_{index}"


def _parse_atom_token(token: str) -> _AtomRef | None:
    match = _ATOM_TOKEN_RE.match(token)
    if match is None:
        return None
    symbol, index = match.group(1), int(match.group(2))
    aromatic = symbol[0].islower()
    element = symbol.capitalize()
    if element not in chem.DEFAULT_VALENCE:
        return None
    if aromatic and element not in chem.AROMATIC_ELEMENTS:
        return None
    return _AtomRef(element, aromatic, index)


def graph_to_triplets(graph: chem.MolGraph) -> list[Triplet]:
    """Serialize a connected graph under its canonical atom numbering."""
    _, emission = chem.canonical_form(graph)
    index_of = {atom_id: pos + 1 for pos, atom_id in enumerate(emission)}
    if not graph.bonds:
        token = _atom_token(graph.atoms[emission[0]], 1)
        return [Triplet(token, NONE_REL, token)]
    out = []
    for bond in graph.bonds:
        i, j = sorted((index_of[bond.a], index_of[bond.b]))
        a = graph.atoms[emission[i - 1]]
        b = graph.atoms[emission[j - 1]]
        out.append(
            Triplet(_atom_token(a, i), REL_OF_ORDER[bond.order], _atom_token(b, j))
        )
    out.sort(key=lambda t: (int(t.head.split("_")[1]), int(t.tail.split("_")[1])))
    return out


def triplets_to_token_strings(triplets: list[Triplet]) -> list[str]:
    if not triplets:
        raise EmptyTriplets("nothing to serialize")
    out: list[str] = []
    for k, t in enumerate(triplets):
        if k:
            out.append(SEP)
        out.extend((HEAD, t.head, REL, t.rel, TAIL, t.tail))
    return out


def triplets_to_tokens(triplets: list[Triplet], vocab: Vocab) -> TokenSeq:
    return vocab.encode(triplets_to_token_strings(triplets))


def parse_token_stream(tokens: list[str], mode: str = "robust") -> TripletDecode:
    """Scan a token stream for HEAD..TAIL segments.

    In robust mode anything that is not part of a well-formed segment is
    skipped and counted; strict mode additionally requires the exact
    SEP-joined layout with nothing before, between or after segments.
    """
    if mode not in ("robust", "strict"):
        raise ValueError(f"unknown decode mode {mode!r}")
    triplets: list[Triplet] = []
    skipped = 0
    in_junk = False  # a maximal run of unusable tokens counts once
    i = 0
    n = len(tokens)
    while i < n:
        if tokens[i] != HEAD:
            if mode == "strict":
                raise MalformedSegment(f"expected {HEAD} at token {i}, got {tokens[i]!r}")
            skipped += not in_junk
            in_junk = True
            i += 1
            continue
        window = tokens[i : i + 6]
        seg = _segment_from(window, strict=mode == "strict")
        if seg is None:
            if mode == "strict":
                raise MalformedSegment(f"malformed segment at token {i}: {window!r}")
            skipped += not in_junk
            in_junk = True
            i += 1
            continue
        in_junk = False
        triplets.append(seg)
        i += 6
        if i < n:
            if tokens[i] == SEP:
                i += 1
            elif mode == "strict":
                raise MalformedSegment(f"expected {SEP} at token {i}, got {tokens[i]!r}")
    if not triplets:
        raise EmptyTriplets("no decodable segments in token stream")
    return TripletDecode(triplets, skipped)


def _segment_from(window: list[str], strict: bool = False) -> Triplet | None:
    if len(window) < 6:
        return None
    if window[0] != HEAD or window[2] != REL or window[4] != TAIL:
        return None
    head = _parse_atom_token(window[1])
    tail = _parse_atom_token(window[5])
    rel = window[3]
    if head is None or tail is None:
        return None
    if rel == NONE_REL:
        if window[1] != window[5]:
            return None
        return Triplet(window[1], rel, window[5])
    if rel not in ORDER_OF_REL:
        return None
    if head.index == tail.index:
        return None
    if head.index > tail.index:
        # reversed bonds are repairable model output, not valid input
        if strict:
            return None
        return Triplet(window[5], rel, window[1])
    return Triplet(window[1], rel, window[5])


def tokens_to_triplets(tokens: list[str], mode: str = "robust") -> list[Triplet]:
    return parse_token_stream(tokens, mode).triplets


def decode_triplets(seq: TokenSeq, vocab: Vocab, mode: str = "robust") -> list[Triplet]:
    return tokens_to_triplets(vocab.decode(seq), mode)


def triplets_to_graph(triplets: list[Triplet], mode: str = "robust") -> chem.MolGraph:
    return rebuild_graph(triplets, mode).graph


def rebuild_graph(triplets: list[Triplet], mode: str = "robust") -> GraphDecode:
    """Rebuild a molecular graph from triplets.

    Atoms are deduplicated by index (majority element wins in robust mode,
    ties to first seen), duplicate bonds collapse, and index gaps are
    compressed in ascending order. Robust decoding keeps the largest
    connected component; hydrogen counts are refilled from the valence
    table. Chemical validity is for the caller to judge.
    """
    if mode not in ("robust", "strict"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if not triplets:
        raise EmptyTriplets("no triplets to rebuild from")

    votes: dict[int, list[tuple[str, bool]]] = defaultdict(list)
    bonds: dict[tuple[int, int], chem.BondOrder] = {}
    conflicts = 0
    for t in triplets:
        head = _parse_atom_token(t.head)
        tail = _parse_atom_token(t.tail)
        if head is None or tail is None:
            raise MalformedSegment(f"unparseable atom token in {t}")
        votes[head.index].append((head.element, head.aromatic))
        if t.rel == NONE_REL:
            continue
        votes[tail.index].append((tail.element, tail.aromatic))
        key = (min(head.index, tail.index), max(head.index, tail.index))
        order = ORDER_OF_REL[t.rel]
        if key in bonds:
            if bonds[key] != order:
                if mode == "strict":
                    raise IndexConflict(f"bond {key} serialized with two orders")
                conflicts += 1
            continue
        bonds[key] = order

    species: dict[int, tuple[str, bool]] = {}
    for index, seen in votes.items():
        distinct = set(seen)
        if len(distinct) > 1:
            if mode == "strict":
                raise IndexConflict(
                    f"atom index {index} serialized as {sorted(distinct)}"
                )
            conflicts += len(distinct) - 1
            ranked = Counter(seen).most_common()
            top = ranked[0][1]
            first = next(s for s in seen if Counter(seen)[s] == top)
            species[index] = first
        else:
            species[index] = seen[0]

    if mode == "strict":
        indices = sorted(votes)
        if indices != list(range(1, len(indices) + 1)):
            raise IndexConflict(f"atom indices {indices} are not 1..n")

    compressed = {idx: pos for pos, idx in enumerate(sorted(votes))}
    graph = chem.MolGraph()
    for idx in sorted(votes):
        element, aromatic = species[idx]
        graph.add_atom(chem.Atom(element, aromatic=aromatic))
    for (i, j), order in sorted(bonds.items()):
        graph.add_bond(compressed[i], compressed[j], order)

    decode = GraphDecode(graph, conflicts=conflicts)
    if not graph.is_connected():
        if mode == "strict":
            raise DisconnectedGraph("triplets describe a disconnected graph")
        graph, dropped = _largest_component(graph)
        decode.graph = graph
        decode.dropped_atoms = dropped
    for idx, atom in enumerate(decode.graph.atoms):
        atom.explicit_h = chem.implicit_hydrogen_count(
            atom.element, atom.charge, decode.graph.valence_sum(idx)
        )
    return decode


def _largest_component(graph: chem.MolGraph) -> tuple[chem.MolGraph, int]:
    unseen = set(range(graph.n_atoms()))
    components: list[list[int]] = []
    while unseen:
        start = min(unseen)
        comp = {start}
        stack = [start]
        while stack:
            for j, _ in graph.neighbors(stack.pop()):
                if j not in comp:
                    comp.add(j)
                    stack.append(j)
        unseen -= comp
        components.append(sorted(comp))
    components.sort(key=lambda c: (-len(c), c[0]))
    keep = components[0]
    remap = {old: new for new, old in enumerate(keep)}
    out = chem.MolGraph()
    for old in keep:
        a = graph.atoms[old]
        out.add_atom(chem.Atom(a.element, a.aromatic, a.charge, a.explicit_h))
    for bond in graph.bonds:
        if bond.a in remap and bond.b in remap:
            out.add_bond(remap[bond.a], remap[bond.b], bond.order)
    return out, graph.n_atoms() - len(keep)


def smiles_to_triplet_tokens(smiles: str) -> list[str]:
    """Canonical triplet token strings for a SMILES input."""
    return triplets_to_token_strings(graph_to_triplets(chem.parse_smiles(smiles)))


def triplet_tokens_to_smiles(tokens: list[str], mode: str = "robust") -> str:
    """Decode triplet tokens back to a canonical SMILES string."""
    return chem.write_smiles(triplets_to_graph(tokens_to_triplets(tokens, mode), mode))
