"""Molecular graphs: SMILES parsing, valence checks, canonical writing."""

from .canon import (
    canonical_atom_order,
    canonical_form,
    canonicalize,
    write_smiles,
)
from .graph import (
    AROMATIC_ELEMENTS,
    DEFAULT_VALENCE,
    ORGANIC_SUBSET,
    Atom,
    Bond,
    BondOrder,
    MolGraph,
    allowed_valences,
    implicit_hydrogen_count,
    ring_atoms,
    validate_valence,
)
from .parser import parse_smiles

__all__ = [
    "AROMATIC_ELEMENTS",
    "DEFAULT_VALENCE",
    "ORGANIC_SUBSET",
    "Atom",
    "Bond",
    "BondOrder",
    "MolGraph",
    "allowed_valences",
    "canonical_atom_order",
    "canonical_form",
    "canonicalize",
    "implicit_hydrogen_count",
    "parse_smiles",
    "ring_atoms",
    "validate_valence",
    "write_smiles",
]
