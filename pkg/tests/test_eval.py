import functools

import numpy as np
import pytest

from semiscribe.data import ValidationError
from semiscribe.eval import WERReport, _edit_counts, word_error_rate

rng = np.random.default_rng(23)


def oracle_distance(ref, hyp):
    """Independent memoized edit distance over words."""
    @functools.lru_cache(maxsize=None)
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(go(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]),
                   go(i, j - 1) + 1,
                   go(i - 1, j) + 1)
    return go(len(ref), len(hyp))


class TestWordErrorRate:
    def test_identity_is_zero(self):
        report = word_error_rate(["hello world"], ["hello world"])
        assert report.wer_percent == 0.0
        assert (report.substitutions, report.deletions, report.insertions) == (0, 0, 0)

    def test_empty_hypothesis_counts_deletions(self):
        report = word_error_rate(["hello world"], [""])
        assert report.deletions == 2
        assert report.wer_percent == 100.0

    def test_derived_mixed_case(self):
        report = word_error_rate(["a b c"], ["a x c d"])
        assert (report.substitutions, report.insertions, report.deletions) == (1, 1, 0)
        assert report.wer_percent == pytest.approx(100.0 * 2 / 3)

    def test_matches_oracle_distance(self):
        words = ["a", "b", "c", "d"]
        for _ in range(200):
            ref = tuple(rng.choice(words, size=rng.integers(1, 9)))
            hyp = tuple(rng.choice(words, size=rng.integers(0, 9)))
            s, d, i = _edit_counts(list(ref), list(hyp))
            assert s + d + i == oracle_distance(ref, hyp)

    def test_counts_sum_to_distance_in_report(self):
        refs = ["a b c d", "b b"]
        hyps = ["a c d", "b a b"]
        report = word_error_rate(refs, hyps)
        expected = oracle_distance(("a", "b", "c", "d"), ("a", "c", "d")) \
            + oracle_distance(("b", "b"), ("b", "a", "b"))
        assert report.substitutions + report.deletions + report.insertions == expected
        assert report.ref_words == 6

    def test_corpus_pooling_not_mean_of_rates(self):
        # one perfect long utterance + one fully wrong short one
        report = word_error_rate(["a b c d e f g h", "x"], ["a b c d e f g h", "y"])
        assert report.wer_percent == pytest.approx(100.0 * 1 / 9)

    def test_multiple_spaces_equivalent(self):
        a = word_error_rate(["a  b   c"], ["a b"])
        b = word_error_rate(["a b c"], ["a b"])
        assert a == b

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            word_error_rate(["a"], ["a", "b"])

    def test_empty_reference_rejected(self):
        with pytest.raises(ValidationError):
            word_error_rate(["   "], ["a"])

    def test_wer_can_exceed_100(self):
        report = word_error_rate(["a"], ["b c d"])
        assert report.wer_percent > 100.0


class TestWERReport:
    def test_formula(self):
        report = WERReport.from_counts(substitutions=2, deletions=1, insertions=1, ref_words=8)
        assert report.wer_percent == pytest.approx(50.0)

    def test_needs_reference_words(self):
        with pytest.raises(ValidationError):
            WERReport.from_counts(0, 0, 0, 0)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValidationError):
            WERReport.from_counts(-1, 0, 0, 5)
