"""Corpus loading, splitting and batching for (SMILES, caption) pairs.

The on-disk format is two-column UTF-8 TSV, ``smiles<TAB>caption``, with an
optional header row whose first cell is the literal string ``smiles``.
Records are stored canonicalized (molecule side) and normalized (text side);
anything that fails those steps is dropped and counted, never repaired.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from . import chem
from .errors import (
    BadFractions,
    BadParams,
    FormatError,
    InvalidGraph,
    IoError,
    SmilesParseError,
)
from .tokenization import normalize_text


@dataclass(frozen=True)
class PairRecord:
    """One molecule-caption pair; id is the source data-row number."""

    smiles: str
    caption: str
    id: int


@dataclass
class CorpusLoad:
    """Loader result: surviving records plus per-reason drop counts."""

    records: list = field(default_factory=list)
    dropped_format: int = 0
    dropped_length: int = 0
    dropped_parse: int = 0
    dropped_caption: int = 0

    @property
    def dropped(self) -> int:
        return (self.dropped_format + self.dropped_length
                + self.dropped_parse + self.dropped_caption)

    def __len__(self) -> int:
        return len(self.records)


def load_corpus(path: str | Path, max_smiles_len: int = 256,
                strict: bool = False) -> CorpusLoad:
    """Read a TSV corpus; invalid rows are dropped (or fatal when strict)."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"no corpus file at {path}")
    out = CorpusLoad()
    with open(path, encoding="utf-8") as fh:
        row = -1
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cells = line.split("\t")
            if lineno == 1 and cells[0] == "smiles":
                continue
            row += 1
            if len(cells) != 2:
                if strict:
                    raise FormatError(f"{path}:{lineno}: expected 2 columns, "
                                      f"got {len(cells)}")
                out.dropped_format += 1
                continue
            raw_smiles, raw_caption = cells
            if len(raw_smiles) > max_smiles_len:
                out.dropped_length += 1
                continue
            try:
                smiles = chem.canonicalize(raw_smiles)
            except (SmilesParseError, InvalidGraph):
                if strict:
                    raise FormatError(f"{path}:{lineno}: unparseable SMILES "
                                      f"{raw_smiles!r}")
                out.dropped_parse += 1
                continue
            caption = normalize_text(raw_caption)
            if not caption:
                if strict:
                    raise FormatError(f"{path}:{lineno}: empty caption")
                out.dropped_caption += 1
                continue
            out.records.append(PairRecord(smiles, caption, row))
    return out


def split(records: list, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle, then a floor-sized three-way partition.

    Each part gets floor(n * fraction) records; the remainder goes to train.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise BadFractions(f"need three nonnegative fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions sum to {sum(fractions)}, not 1")
    order = list(records)
    random.Random(seed).shuffle(order)
    n = len(order)
    n_valid = int(n * fractions[1])
    n_test = int(n * fractions[2])
    n_train = n - n_valid - n_test
    return (order[:n_train],
            order[n_train:n_train + n_valid],
            order[n_train + n_valid:])


def batches(records: list, size: int, *, rng: random.Random | None = None):
    """Yield lists of up to `size` records; pass an rng to shuffle first."""
    if size < 1:
        raise BadParams(f"batch size must be positive, got {size}")
    order = list(records)
    if rng is not None:
        rng.shuffle(order)
    for k in range(0, len(order), size):
        yield order[k: k + size]


def write_split_manifest(path: str | Path, records: list) -> None:
    """Record ids, one per line; enough to reconstruct a split from a corpus."""
    Path(path).write_text(
        "".join(f"{r.id}\n" for r in records), encoding="utf-8"
    )


def bundled_corpus_path() -> Path:
    """Location of the packaged example corpus."""
    return Path(__file__).resolve().parent / "assets" / "corpus.tsv"
