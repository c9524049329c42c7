"""SMILES tokenizers and the shared vocabulary type.

Three tokenizer kinds, all lossless:

* ``regex``: one pass with the usual SMILES token pattern (bracket
  expressions, two-letter halogens and %nn ring labels as units, every
  other character on its own).
* ``atom_level``: an explicit scanner producing the same unit boundaries;
  kept separate so the two can be swapped as an ablation axis.
* ``ais``: atom tokens annotated with their graph context (aromatic flag,
  ring membership, formal charge) behind a ``;`` separator. ``;`` cannot
  occur in the supported SMILES subset, so :func:`join_tokens` recovers the
  exact input by stripping the suffix.

Vocabulary ids 0-7 are reserved for the special tokens in :data:`SPECIALS`;
content tokens follow, ordered by descending count then token string.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
import re
import unicodedata

from . import chem
from .errors import EmptyCorpus, FormatError, IdOutOfRange

TOKENIZER_KINDS = ("regex", "atom_level", "ais")

SPECIALS = ("[PAD]", "[BOS]", "[EOS]", "[UNK]", "[HEAD]", "[REL]", "[TAIL]", "[SEP]")
PAD_ID, BOS_ID, EOS_ID, UNK_ID, HEAD_ID, REL_ID, TAIL_ID, SEP_ID = range(8)

_SMILES_TOKEN_RE = re.compile(r"\[[^\]]*\]|Br|Cl|%\d{2}|.")

_ATOM_START = frozenset("BCNOPSFIbcnops")


@dataclass(frozen=True)
class TokenSeq:
    """An encoded sequence; ids index into one specific vocabulary."""

    ids: tuple[int, ...]

    def __post_init__(self):
        if not self.ids:
            raise ValueError("TokenSeq needs at least one id")

    @property
    def length(self) -> int:
        return len(self.ids)


class Vocab:
    """Immutable token table with the eight reserved specials up front."""

    def __init__(self, content_tokens: list[str]):
        tokens = list(SPECIALS) + list(content_tokens)
        if len(set(tokens)) != len(tokens):
            raise FormatError("duplicate token in vocabulary")
        self._tokens = tuple(tokens)
        self._index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise IdOutOfRange(f"id {idx} outside vocabulary of size {len(self)}")
        return self._tokens[idx]

    def encode(self, tokens: list[str]) -> TokenSeq:
        return TokenSeq(tuple(self.id_of(t) for t in tokens))

    def decode(self, ids) -> list[str]:
        seq = ids.ids if isinstance(ids, TokenSeq) else ids
        return [self.token_of(i) for i in seq]

    def sha256(self) -> str:
        digest = hashlib.sha256()
        for tok in self._tokens:
            digest.update(tok.encode("utf-8"))
            digest.update(b"\n")
        return digest.hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(SPECIALS)]) != SPECIALS:
            raise FormatError(f"{path}: special tokens missing or reordered")
        return cls(lines[len(SPECIALS) :])


def build_vocab(corpus: list[list[str]], min_count: int = 1) -> Vocab:
    """Count tokens across the corpus and keep those seen often enough."""
    if not corpus:
        raise EmptyCorpus("cannot build a vocabulary from nothing")
    counts = Counter(tok for seq in corpus for tok in seq)
    kept = [t for t, c in counts.items() if c >= min_count and t not in SPECIALS]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept)


def _scan_units(smiles: str) -> list[str]:
    units = []
    i = 0
    while i < len(smiles):
        ch = smiles[i]
        if ch == "[":
            end = smiles.index("]", i) + 1
            units.append(smiles[i:end])
            i = end
        elif smiles[i : i + 2] in ("Cl", "Br"):
            units.append(smiles[i : i + 2])
            i += 2
        elif ch == "%":
            units.append(smiles[i : i + 3])
            i += 3
        else:
            units.append(ch)
            i += 1
    return units


def _is_atom_token(unit: str) -> bool:
    return unit.startswith("[") or unit in ("Cl", "Br") or unit in _ATOM_START


def _annotate(units: list[str], graph: chem.MolGraph) -> list[str]:
    in_ring = chem.ring_atoms(graph)
    out = []
    atom_idx = 0
    for unit in units:
        if not _is_atom_token(unit):
            out.append(unit)
            continue
        atom = graph.atoms[atom_idx]
        code = "{}{}{:+d}".format(
            "a" if atom.aromatic else "n",
            "r" if atom_idx in in_ring else "c",
            atom.charge,
        )
        out.append(f"{unit};{code}")
        atom_idx += 1
    if atom_idx != graph.n_atoms():
        raise FormatError(f"atom token count mismatch for {''.join(units)!r}")
    return out


def tokenize(smiles: str, kind: str = "regex") -> list[str]:
    """Split a valid SMILES string into tokens of the requested kind.

    The string is parsed first, so syntax errors surface here as the same
    exceptions :func:`tadiff.chem.parse_smiles` raises.
    """
    if kind not in TOKENIZER_KINDS:
        raise ValueError(f"unknown tokenizer kind {kind!r}")
    graph = chem.parse_smiles(smiles)
    text = smiles.strip()
    if kind == "regex":
        return _SMILES_TOKEN_RE.findall(text)
    units = _scan_units(text)
    if kind == "atom_level":
        return units
    return _annotate(units, graph)


def join_tokens(tokens: list[str], kind: str = "regex") -> str:
    """Invert :func:`tokenize`: concatenation, minus ais annotations."""
    if kind == "ais":
        return "".join(t.split(";", 1)[0] for t in tokens)
    return "".join(tokens)


_WORD_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")


def normalize_text(text: str) -> str:
    """Caption normal form: NFC, single spaces, lowercase."""
    collapsed = " ".join(unicodedata.normalize("NFC", text).split())
    return collapsed.lower()


def tokenize_text(text: str) -> list[str]:
    """Words and individual punctuation marks of the normalized caption."""
    return _WORD_RE.findall(normalize_text(text))


def detokenize_text(tokens: list[str]) -> str:
    """Inverse of tokenize_text up to spacing: punctuation glues leftward.

    Hyphenated compounds come back with a trailing space ("2- methyl"); the
    captions this package ships avoid them, and the comparison metrics
    retokenize anyway.
    """
    out = ""
    for tok in tokens:
        if out and len(tok) == 1 and not tok.isalnum():
            out += tok
        elif out:
            out += " " + tok
        else:
            out = tok
    return out
