"""Tests for fingerprints, match/validity rates and text overlap scores."""

from __future__ import annotations

import random

import pytest

from tadiff import chem
from tadiff.errors import InvalidGraph, ShapeMismatch, WidthMismatch
from tadiff.metrics import (
    FingerprintBits,
    bleu,
    chrf,
    circular_fingerprint,
    evaluation_report,
    exact_match,
    tanimoto,
    validity_rate,
)


def permuted(graph: chem.MolGraph, seed: int) -> chem.MolGraph:
    order = list(range(graph.n_atoms()))
    random.Random(seed).shuffle(order)
    inverse = {old: new for new, old in enumerate(order)}
    out = chem.MolGraph()
    for old in order:
        a = graph.atoms[old]
        out.add_atom(chem.Atom(a.element, a.aromatic, a.charge, a.explicit_h))
    for b in graph.bonds:
        out.add_bond(inverse[b.a], inverse[b.b], b.order)
    return out


class TestExactMatch:
    def test_same_molecule_different_writings(self):
        assert exact_match("OCC", "CCO")

    def test_identity(self):
        for s in ("CCO", "c1ccccc1", "CC(=O)O"):
            assert exact_match(s, s)

    def test_unparseable_pred(self):
        assert not exact_match("C1CC", "CCO")

    def test_unparseable_truth(self):
        assert not exact_match("CCO", "C1CC")

    def test_different_molecules(self):
        assert not exact_match("CCO", "CCN")


class TestFingerprint:
    def test_deterministic(self):
        a = circular_fingerprint(chem.parse_smiles("CC(=O)O"))
        b = circular_fingerprint(chem.parse_smiles("CC(=O)O"))
        assert a.bits == b.bits

    def test_relabeling_invariance(self):
        for s in ("CCO", "c1ccc2ccccc2c1", "CC(C)C(=O)O", "C1CCCCC1"):
            g = chem.parse_smiles(s)
            base = circular_fingerprint(g)
            for seed in range(5):
                assert circular_fingerprint(permuted(g, seed)).bits == base.bits

    def test_methane_vs_ethanol(self):
        a = circular_fingerprint(chem.parse_smiles("C"))
        b = circular_fingerprint(chem.parse_smiles("CCO"))
        assert tanimoto(a, b) < 1.0

    def test_aromatic_vs_saturated_ring(self):
        a = circular_fingerprint(chem.parse_smiles("c1ccccc1"))
        b = circular_fingerprint(chem.parse_smiles("C1CCCCC1"))
        assert a.bits != b.bits

    def test_empty_graph_rejected(self):
        with pytest.raises(InvalidGraph):
            circular_fingerprint(chem.MolGraph())


class TestTanimoto:
    def test_self_similarity(self):
        fp = circular_fingerprint(chem.parse_smiles("CCO"))
        assert tanimoto(fp, fp) == 1.0

    def test_symmetry(self):
        a = circular_fingerprint(chem.parse_smiles("CCO"))
        b = circular_fingerprint(chem.parse_smiles("CCN"))
        assert tanimoto(a, b) == tanimoto(b, a)

    def test_hand_counts(self):
        a = FingerprintBits(frozenset({1, 2, 3}))
        b = FingerprintBits(frozenset({2, 3, 4}))
        assert tanimoto(a, b) == 0.5

    def test_disjoint(self):
        a = FingerprintBits(frozenset({1}))
        b = FingerprintBits(frozenset({2}))
        assert tanimoto(a, b) == 0.0

    def test_both_empty(self):
        assert tanimoto(FingerprintBits(), FingerprintBits()) == 1.0

    def test_width_mismatch(self):
        with pytest.raises(WidthMismatch):
            tanimoto(FingerprintBits(width=512), FingerprintBits(width=2048))


class TestValidity:
    def test_all_valid(self):
        assert validity_rate(["CCO", "c1ccccc1"]) == 1.0

    def test_half_valid(self):
        assert validity_rate(["CCO", "C1CC"]) == 0.5

    def test_overbonded_invalid(self):
        assert validity_rate(["C(C)(C)(C)(C)C"]) == 0.0

    def test_empty_list(self):
        with pytest.warns(UserWarning):
            assert validity_rate([]) == 0.0


class TestBleu:
    def test_exact(self):
        assert bleu(list("abcde"), [list("abcde")]) == pytest.approx(1.0)

    def test_empty_pred(self):
        assert bleu([], [list("ab")]) == 0.0

    def test_hand_example(self):
        pred = "the cat sat".split()
        ref = "the cat sat down".split()
        # unigram..trigram precisions are all 1, no 4-grams to score,
        # so the value is the brevity penalty exp(1 - 4/3)
        assert bleu(pred, [ref]) == pytest.approx(0.7165313, abs=1e-6)

    def test_no_unigram_overlap(self):
        assert bleu("x y".split(), ["a b".split()]) == 0.0

    def test_smoothing_on_zero_bigrams(self):
        got = bleu("a b".split(), ["b a".split()])
        assert got == pytest.approx((1.0 * 0.5) ** 0.5)

    def test_closest_ref_length_breaks_to_shorter(self):
        pred = "a b c".split()
        # lengths 2 and 4 are equally close to 3; the shorter wins -> no BP
        refs = ["a b".split(), "a b c d".split()]
        assert bleu(pred, refs) > bleu(pred, ["a b c d".split()])

    def test_monotone_sanity(self):
        ref = "a b c".split()
        assert bleu(ref, [ref]) >= bleu([], [ref])


class TestChrf:
    def test_identical(self):
        assert chrf("alpha beta", "alpha beta") == 1.0

    def test_disjoint(self):
        assert chrf("aaa", "zzz") == 0.0

    def test_hand_table(self):
        # n=1: F=2/3, n=2: F=1/2, n=3: F=0, higher orders empty
        assert chrf("abc", "abd") == pytest.approx(7 / 18)

    def test_whitespace_stripped(self):
        assert chrf("a b c", "abc") == 1.0

    def test_word_component_blend(self):
        plain = chrf("ab cd", "ab ce")
        blended = chrf("ab cd", "ab ce", word_weight=0.5)
        assert 0 < blended < 1
        assert blended != plain

    def test_range(self):
        for pred, ref in (("abc", "abd"), ("a", "abcdef"), ("", "x")):
            assert 0.0 <= chrf(pred, ref) <= 1.0


class TestReport:
    def test_s2g_keys_and_values(self):
        report = evaluation_report(["CCO", "C1CC"], ["OCC", "CCN"], "s2g")
        assert set(report) == {
            "exact_match", "validity", "tanimoto_mean", "bleu", "chrf",
            "n_examples",
        }
        assert report["exact_match"] == 0.5
        assert report["validity"] == 0.5
        assert 0.0 <= report["tanimoto_mean"] <= 1.0
        assert report["bleu"] is None and report["chrf"] is None
        assert report["n_examples"] == 2

    def test_g2s_perfect_predictions(self):
        refs = ["an organic acid.", "a simple alcohol."]
        report = evaluation_report(refs, refs, "g2s")
        assert report["exact_match"] == 1.0
        assert report["bleu"] == pytest.approx(1.0)
        assert report["chrf"] == pytest.approx(1.0)
        assert report["validity"] is None and report["tanimoto_mean"] is None

    def test_g2s_normalization(self):
        report = evaluation_report(["An  Acid"], ["an acid"], "g2s")
        assert report["exact_match"] == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatch):
            evaluation_report(["a"], [], "g2s")

    def test_unknown_direction(self):
        with pytest.raises(ValueError):
            evaluation_report([], [], "both")

    def test_empty_inputs(self):
        report = evaluation_report([], [], "s2g")
        assert report["n_examples"] == 0
        assert report["exact_match"] is None
