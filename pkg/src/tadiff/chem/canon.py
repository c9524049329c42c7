"""Canonical atom ranking and the SMILES writer built on it.

Ranking is iterative invariant refinement: atoms start from local
invariants (element, aromatic flag, charge, hydrogen count, degree, bond
order sum) and are re-ranked by their sorted neighbor codes until the
partition stops splitting. Remaining ties are broken by trying every member
of the first tied class and keeping the lexicographically smallest output
string, so relabeling an input graph cannot change the result.

This gives internal determinism only. The strings are not guaranteed to
match any external toolkit's canonical form, and no such claim is made.
"""

from __future__ import annotations

from collections import Counter, defaultdict

from ..errors import DisconnectedGraph, InvalidGraph
from .graph import (
    AROMATIC_ELEMENTS,
    ORGANIC_SUBSET,
    Atom,
    Bond,
    BondOrder,
    MolGraph,
    implicit_hydrogen_count,
)

# Sort key for bond orders during refinement; values are arbitrary but fixed.
_ORDER_KEY = {
    BondOrder.SINGLE: 0,
    BondOrder.DOUBLE: 1,
    BondOrder.TRIPLE: 2,
    BondOrder.AROMATIC: 3,
}

# Hard cap on tie-break branches. Desk-scale molecules stay far below this;
# hitting it means the graph is pathologically regular.
_BRANCH_BUDGET = 20000


def _initial_ranks(graph: MolGraph) -> list[int]:
    invariants = [
        (
            atom.element,
            atom.aromatic,
            atom.charge,
            graph.degree(i),
            graph.valence_sum(i),
            atom.explicit_h,
        )
        for i, atom in enumerate(graph.atoms)
    ]
    by_value = {inv: r for r, inv in enumerate(sorted(set(invariants)))}
    return [by_value[inv] for inv in invariants]


def _refine(graph: MolGraph, ranks: list[int]) -> list[int]:
    """Re-rank by (own rank, sorted neighbor ranks) until stable."""
    nbrs = [
        [(_ORDER_KEY[b.order], j) for j, b in graph.neighbors(i)]
        for i in range(graph.n_atoms())
    ]
    while True:
        codes = [
            (ranks[i], tuple(sorted((k, ranks[j]) for k, j in nbrs[i])))
            for i in range(graph.n_atoms())
        ]
        by_value = {c: r for r, c in enumerate(sorted(set(codes)))}
        new_ranks = [by_value[c] for c in codes]
        if new_ranks == ranks:
            return ranks
        ranks = new_ranks


def _discrete_candidates(graph, ranks, budget):
    """Yield fully tie-broken rank vectors, branching over tied classes."""
    counts = Counter(ranks)
    tied = [r for r, c in counts.items() if c > 1]
    if not tied:
        yield ranks
        return
    cls = min(tied)
    for member in (i for i, r in enumerate(ranks) if r == cls):
        budget[0] -= 1
        if budget[0] < 0:
            raise InvalidGraph("tie-break budget exceeded; graph too symmetric")
        seed = [r * 2 for r in ranks]
        seed[member] -= 1
        yield from _discrete_candidates(graph, _refine(graph, seed), budget)


def _atom_token(graph: MolGraph, idx: int) -> str:
    atom = graph.atoms[idx]
    if atom.aromatic and atom.element not in AROMATIC_ELEMENTS:
        raise InvalidGraph(f"element {atom.element} cannot carry the aromatic flag")
    symbol = atom.element.lower() if atom.aromatic else atom.element
    plain_h = implicit_hydrogen_count(
        atom.element, atom.charge, graph.valence_sum(idx)
    )
    needs_bracket = (
        atom.element not in ORGANIC_SUBSET
        or atom.charge != 0
        or atom.explicit_h != plain_h
    )
    if not needs_bracket:
        return symbol
    if atom.explicit_h == 0:
        h = ""
    elif atom.explicit_h == 1:
        h = "H"
    else:
        h = f"H{atom.explicit_h}"
    if atom.charge == 0:
        charge = ""
    elif atom.charge in (1, -1):
        charge = "+" if atom.charge == 1 else "-"
    else:
        charge = f"{atom.charge:+d}"
    return f"[{symbol}{h}{charge}]"


def _bond_token(bond: Bond, a: Atom, b: Atom) -> str:
    both_aromatic = a.aromatic and b.aromatic
    if bond.order is BondOrder.SINGLE:
        return "-" if both_aromatic else ""
    if bond.order is BondOrder.DOUBLE:
        return "="
    if bond.order is BondOrder.TRIPLE:
        return "#"
    return "" if both_aromatic else ":"


def _ring_digit(d: int) -> str:
    if d < 10:
        return str(d)
    if d < 100:
        return f"%{d:02d}"
    raise InvalidGraph("more than 99 simultaneously open ring bonds")


def _write_ranked(graph: MolGraph, ranks: list[int]) -> tuple[str, list[int]]:
    """Emit SMILES for one fully discrete ranking.

    Returns the string together with the atom emission order, which is what
    downstream serialization uses as the canonical 1-based numbering.
    """
    root = ranks.index(min(ranks))
    pos: dict[int, int] = {}
    children: dict[int, list[tuple[int, Bond]]] = defaultdict(list)
    ring_bonds: list[Bond] = []

    def survey(u: int, via: Bond | None) -> None:
        pos[u] = len(pos)
        for v, bond in sorted(graph.neighbors(u), key=lambda t: ranks[t[0]]):
            if bond is via:
                continue
            if v in pos:
                if bond not in ring_bonds:
                    ring_bonds.append(bond)
            else:
                children[u].append((v, bond))
                survey(v, bond)

    survey(root, None)

    opens_at: dict[int, list[Bond]] = defaultdict(list)
    closes_at: dict[int, list[Bond]] = defaultdict(list)
    for bond in ring_bonds:
        first, second = sorted((bond.a, bond.b), key=pos.get)
        opens_at[first].append(bond)
        closes_at[second].append(bond)

    emission = sorted(pos, key=pos.get)
    digit_of: dict[int, int] = {}
    free = list(range(99, 0, -1))
    for u in emission:
        closes_at[u].sort(key=lambda b: pos[b.other(u)])
        opens_at[u].sort(key=lambda b: pos[b.other(u)])
        for bond in closes_at[u]:
            free.append(digit_of[id(bond)])
            free.sort(reverse=True)
        for bond in opens_at[u]:
            digit_of[id(bond)] = free.pop()

    def atom_part(u: int) -> str:
        parts = [_atom_token(graph, u)]
        for bond in closes_at[u]:
            parts.append(_ring_digit(digit_of[id(bond)]))
        for bond in opens_at[u]:
            v = bond.other(u)
            parts.append(_bond_token(bond, graph.atoms[u], graph.atoms[v]))
            parts.append(_ring_digit(digit_of[id(bond)]))
        return "".join(parts)

    def emit(u: int) -> str:
        parts = [atom_part(u)]
        kids = children[u]
        for v, bond in kids[:-1]:
            parts.append("(")
            parts.append(_bond_token(bond, graph.atoms[u], graph.atoms[v]))
            parts.append(emit(v))
            parts.append(")")
        if kids:
            v, bond = kids[-1]
            parts.append(_bond_token(bond, graph.atoms[u], graph.atoms[v]))
            parts.append(emit(v))
        return "".join(parts)

    return emit(root), emission


def canonical_form(graph: MolGraph) -> tuple[str, list[int]]:
    """Canonical SMILES plus the atom order it was emitted in."""
    if not graph.atoms:
        raise InvalidGraph("cannot canonicalize an empty graph")
    if not graph.is_connected():
        raise DisconnectedGraph("cannot canonicalize a disconnected graph")
    base = _refine(graph, _initial_ranks(graph))
    budget = [_BRANCH_BUDGET]
    best: tuple[str, list[int]] | None = None
    for ranks in _discrete_candidates(graph, base, budget):
        written = _write_ranked(graph, ranks)
        if best is None or written[0] < best[0]:
            best = written
    assert best is not None
    return best


def write_smiles(graph: MolGraph) -> str:
    """Write a graph as canonical SMILES."""
    return canonical_form(graph)[0]


def canonical_atom_order(graph: MolGraph) -> list[int]:
    """Atom ids in canonical emission order (position 0 is the root)."""
    return canonical_form(graph)[1]


def canonicalize(smiles: str) -> str:
    """Parse and re-write a SMILES string in canonical form."""
    from .parser import parse_smiles

    return write_smiles(parse_smiles(smiles))
