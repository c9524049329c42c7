"""Evaluation metrics: structural scores for molecules, overlap for text.

The fingerprint is an in-repo circular design (FNV-1a hashed neighborhood
codes, 2048 bits) rather than a toolkit port, so its bit patterns are
reproducible from this file alone.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

from . import chem
from .errors import InvalidGraph, ShapeMismatch, SmilesParseError, WidthMismatch
from .tokenization import normalize_text, tokenize_text

FP_WIDTH = 2048
FP_RADIUS = 2

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


@dataclass(frozen=True)
class FingerprintBits:
    """Set bits of a fixed-width structural fingerprint."""

    bits: frozenset = field(default_factory=frozenset)
    width: int = FP_WIDTH
    radius: int = FP_RADIUS


def circular_fingerprint(graph: chem.MolGraph, radius: int = FP_RADIUS,
                         width: int = FP_WIDTH) -> FingerprintBits:
    """Hash every atom's r-neighborhood code, r = 0..radius, into bits.

    Codes are built from (element, charge, aromatic) seeds and grown by
    folding in sorted (bond order, neighbor code) pairs, so atom numbering
    cannot influence the result.
    """
    if graph.n_atoms() == 0:
        raise InvalidGraph("cannot fingerprint an empty graph")
    codes = [
        _fnv1a(f"{a.element}|{a.charge}|{int(a.aromatic)}")
        for a in graph.atoms
    ]
    bits = set(c % width for c in codes)
    for _ in range(radius):
        grown = []
        for i in range(graph.n_atoms()):
            env = sorted(
                (bond.order.value, codes[j]) for j, bond in graph.neighbors(i)
            )
            parts = [str(codes[i])] + [f"{o}:{c}" for o, c in env]
            grown.append(_fnv1a(">".join(parts)))
        codes = grown
        bits.update(c % width for c in codes)
    return FingerprintBits(frozenset(bits), width, radius)


def tanimoto(a: FingerprintBits, b: FingerprintBits) -> float:
    """|intersection| / |union|; two empty fingerprints count as identical."""
    if a.width != b.width:
        raise WidthMismatch(f"fingerprint widths differ: {a.width} vs {b.width}")
    union = a.bits | b.bits
    if not union:
        return 1.0
    return len(a.bits & b.bits) / len(union)


def exact_match(pred: str, truth: str) -> bool:
    """True iff both strings parse and share one canonical form."""
    try:
        return chem.canonicalize(pred) == chem.canonicalize(truth)
    except (SmilesParseError, InvalidGraph):
        return False


def validity_rate(preds: list) -> float:
    """Fraction of strings that parse and satisfy the valence model."""
    if not preds:
        warnings.warn("validity_rate over an empty list is defined as 0.0")
        return 0.0
    good = 0
    for s in preds:
        try:
            if chem.validate_valence(chem.parse_smiles(s)):
                good += 1
        except (SmilesParseError, InvalidGraph):
            pass
    return good / len(preds)


def _ngram_counts(units, n: int) -> Counter:
    return Counter(tuple(units[k: k + n]) for k in range(len(units) - n + 1))


def bleu(pred: list, refs: list, max_n: int = 4) -> float:
    """Modified n-gram precision geometric mean times brevity penalty.

    Zero match counts are add-one smoothed for n >= 2; orders where the
    prediction has no n-grams at all are skipped. The effective reference
    length is the closest one (ties go to the shorter).
    """
    if not pred or not refs or all(not r for r in refs):
        return 0.0
    log_sum, n_orders = 0.0, 0
    for n in range(1, max_n + 1):
        cand = _ngram_counts(pred, n)
        total = sum(cand.values())
        if total == 0:
            continue
        clipped = 0
        for gram, count in cand.items():
            best = max(_ngram_counts(r, n).get(gram, 0) for r in refs)
            clipped += min(count, best)
        if clipped == 0:
            if n == 1:
                return 0.0
            clipped, total = 1, total + 1
        log_sum += math.log(clipped / total)
        n_orders += 1
    c = len(pred)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / n_orders)


def _fbeta_average(pred_units, ref_units, n_max: int, beta: float) -> float:
    b2 = beta * beta
    scores = []
    for n in range(1, n_max + 1):
        p = _ngram_counts(pred_units, n)
        r = _ngram_counts(ref_units, n)
        if not p and not r:
            continue
        overlap = sum((p & r).values())
        prec = overlap / sum(p.values()) if p else 0.0
        rec = overlap / sum(r.values()) if r else 0.0
        denom = b2 * prec + rec
        scores.append((1 + b2) * prec * rec / denom if denom > 0 else 0.0)
    if not scores:
        return 1.0  # both sides empty at every order
    return sum(scores) / len(scores)


def chrf(pred: str, ref: str, char_n: int = 6, beta: float = 2.0,
         word_n: int = 2, word_weight: float = 0.0) -> float:
    """Character n-gram F_beta averaged over n = 1..char_n.

    Whitespace is removed before character n-grams are taken. With a nonzero
    word_weight the word-n-gram average is blended in (the "++" variant).
    """
    char_score = _fbeta_average(
        list("".join(pred.split())), list("".join(ref.split())), char_n, beta
    )
    if word_weight <= 0:
        return char_score
    word_score = _fbeta_average(pred.split(), ref.split(), word_n, beta)
    return (1.0 - word_weight) * char_score + word_weight * word_score


def evaluation_report(preds: list, refs: list, direction: str = "s2g") -> dict:
    """Fixed-key metric summary for one prediction file.

    s2g scores the molecule side (exact match on canonical forms, validity,
    mean Tanimoto with parse failures counted as 0); bleu/chrf are null.
    g2s scores the text side (exact match on normalized captions, mean
    sentence BLEU, mean chrF); validity/tanimoto_mean are null.
    """
    if len(preds) != len(refs):
        raise ShapeMismatch(f"{len(preds)} predictions vs {len(refs)} references")
    if direction not in ("s2g", "g2s"):
        raise ValueError(f"unknown direction {direction!r}")
    n = len(preds)
    report = {
        "exact_match": None,
        "validity": None,
        "tanimoto_mean": None,
        "bleu": None,
        "chrf": None,
        "n_examples": n,
    }
    if n == 0:
        return report
    if direction == "s2g":
        report["exact_match"] = sum(
            exact_match(p, r) for p, r in zip(preds, refs)
        ) / n
        report["validity"] = validity_rate(preds)
        sims = []
        for p, r in zip(preds, refs):
            try:
                fp = circular_fingerprint(chem.parse_smiles(p))
                fr = circular_fingerprint(chem.parse_smiles(r))
                sims.append(tanimoto(fp, fr))
            except (SmilesParseError, InvalidGraph):
                sims.append(0.0)
        report["tanimoto_mean"] = sum(sims) / n
    elif direction == "g2s":
        report["exact_match"] = sum(
            normalize_text(p) == normalize_text(r) for p, r in zip(preds, refs)
        ) / n
        report["bleu"] = sum(
            bleu(tokenize_text(p), [tokenize_text(r)])
            for p, r in zip(preds, refs)
        ) / n
        report["chrf"] = sum(chrf(p, r) for p, r in zip(preds, refs)) / n
    return report
