import itertools

import numpy as np
import pytest

from semiscribe.data import ValidationError, Vocabulary
from semiscribe.decode import (beam_search, greedy_ctc_decode, lm_score,
                               load_ngram_lm, save_ngram_lm, train_ngram_lm)
from semiscribe.model import (ModelConfig, _log_softmax, decoder_step, encode,
                              init_model, initial_decoder_state)

rng = np.random.default_rng(11)


def tiny_model_with_seed(seed, chars=("a", "b", "c")):
    config = ModelConfig(vocab=Vocabulary(chars=chars), input_channels=2,
                         encoder_layers=1, encoder_dim=4, decoder_dim=4,
                         attention_dim=3, attention_conv_filters=2,
                         attention_kernel=3, seed=seed)
    return init_model(config)


class TestNgramLM:
    def test_dominant_transition(self):
        lm = train_ngram_lm(["aaaa"], order=2, smoothing=0.1)
        probs = lm.next_log_probs("a")
        assert int(np.argmax(probs)) == 0  # 'a' is the most likely continuation

    def test_unigram_counts(self):
        lm = train_ngram_lm(["aab"], order=1, smoothing=0.5)
        # counts: a=2, b=1, eos=1; support = chars + eos = 3
        expected = np.log((2 + 0.5) / (4 + 0.5 * 3))
        assert lm.cond_log_prob("", "a") == pytest.approx(expected)

    def test_contexts_normalize(self):
        lm = train_ngram_lm(["abcab", "bca"], order=3, smoothing=0.2)
        for ctx in ("", "a", "ab", "bc", "zz"[:0] + "ca"):
            total = np.exp(lm.next_log_probs(ctx)).sum()
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValidationError):
            train_ngram_lm([], order=2, smoothing=0.1)

    def test_score_empty_sequence(self):
        lm = train_ngram_lm(["ab"], order=2, smoothing=0.1)
        assert lm_score(lm, "") == pytest.approx(lm.cond_log_prob("", "\x03"))

    def test_score_chain_rule(self):
        lm = train_ngram_lm(["ab", "ba"], order=2, smoothing=0.1)
        expected = (lm.cond_log_prob("", "a") + lm.cond_log_prob("a", "b")
                    + lm.cond_log_prob("ab", "\x03"))
        assert lm_score(lm, "ab") == pytest.approx(expected)

    def test_prefix_scores_decrease(self):
        lm = train_ngram_lm(["abcabc"], order=3, smoothing=0.1)
        partial = 0.0
        text = "abcab"
        for i, ch in enumerate(text):
            step = lm.cond_log_prob(text[:i], ch)
            assert step <= 0.0
            partial += step
            assert partial <= 0.0

    def test_oov_token_rejected(self):
        lm = train_ngram_lm(["ab"], order=2, smoothing=0.1)
        with pytest.raises(ValidationError):
            lm.cond_log_prob("a", "z")

    def test_charset_extends_support(self):
        lm = train_ngram_lm(["ab"], order=2, smoothing=0.1, charset=("a", "b", "c"))
        assert np.exp(lm.next_log_probs("a")).sum() == pytest.approx(1.0, abs=1e-9)
        assert lm.cond_log_prob("a", "c") < lm.cond_log_prob("a", "b")

    def test_serialization_roundtrip(self, tmp_path):
        lm = train_ngram_lm(["ab a", "ba b"], order=3, smoothing=0.25)
        save_ngram_lm(lm, tmp_path / "lm.txt")
        loaded = load_ngram_lm(tmp_path / "lm.txt")
        assert loaded.order == lm.order and loaded.smoothing == lm.smoothing
        assert loaded.chars == lm.chars
        for ctx in ("", "a", "b ", "ab"):
            np.testing.assert_allclose(loaded.next_log_probs(ctx), lm.next_log_probs(ctx))


def exhaustive_best(model, features, lm, lm_weight, max_len):
    """Score every character sequence up to max_len by teacher-forcing steps."""
    vocab = model.config.vocab
    enc = encode(model, features)
    best = None
    for length in range(max_len + 1):
        for seq in itertools.product(range(vocab.num_chars), repeat=length):
            state = initial_decoder_state(model, enc)
            prev = vocab.sos_id
            s2s = 0.0
            for token in seq:
                logits, state = decoder_step(model, state, prev, enc)
                s2s += _log_softmax(logits[None, :])[0, token]
                prev = token
            logits, _ = decoder_step(model, state, prev, enc)
            s2s += _log_softmax(logits[None, :])[0, vocab.eos_id]
            lm_part = lm_score(lm, vocab.decode(seq)) if lm is not None else 0.0
            score = s2s + lm_weight * lm_part if lm is not None else s2s
            key = (-score, seq)
            if best is None or key < best[0]:
                best = (key, seq, score)
    return best[1], best[2]


class TestBeamSearch:
    def test_beam_one_equals_greedy(self):
        model = tiny_model_with_seed(3)
        features = rng.normal(0.0, 1.0, (5, 2))
        hyp = beam_search(model, features, beam_size=1, max_len=4)
        vocab = model.config.vocab
        enc = encode(model, features)
        state = initial_decoder_state(model, enc)
        prev = vocab.sos_id
        tokens = []
        for _ in range(4):
            logits, state = decoder_step(model, state, prev, enc)
            lp = _log_softmax(logits[None, :])[0]
            choice = int(np.argmax(lp))  # ties impossible for random weights
            if choice == vocab.eos_id:
                break
            tokens.append(choice)
            prev = choice
        assert list(hyp.tokens) == tokens

    def test_exhaustive_equivalence_small(self):
        for seed in (0, 1, 2):
            model = tiny_model_with_seed(seed)
            features = rng.normal(0.0, 1.0, (4, 2))
            hyp = beam_search(model, features, beam_size=200, max_len=3)
            tokens, score = exhaustive_best(model, features, None, 0.0, 3)
            assert hyp.tokens == tokens
            assert hyp.score == pytest.approx(score, abs=1e-9)

    def test_exhaustive_equivalence_with_lm(self):
        lm = train_ngram_lm(["abc", "cba", "aab"], order=2, smoothing=0.2)
        model = tiny_model_with_seed(5)
        features = rng.normal(0.0, 1.0, (4, 2))
        hyp = beam_search(model, features, beam_size=200, lm=lm, lm_weight=0.4, max_len=3)
        tokens, score = exhaustive_best(model, features, lm, 0.4, 3)
        assert hyp.tokens == tokens
        assert hyp.score == pytest.approx(score, abs=1e-9)
        assert hyp.score == pytest.approx(hyp.s2s_score + 0.4 * hyp.lm_score, abs=1e-12)

    def test_zero_lm_weight_matches_no_lm(self):
        lm = train_ngram_lm(["abc"], order=2, smoothing=0.1)
        model = tiny_model_with_seed(7)
        features = rng.normal(0.0, 1.0, (5, 2))
        with_lm = beam_search(model, features, 4, lm=lm, lm_weight=0.0)
        without = beam_search(model, features, 4, lm=None)
        assert with_lm == without

    def test_deterministic(self):
        model = tiny_model_with_seed(9)
        features = rng.normal(0.0, 1.0, (6, 2))
        assert beam_search(model, features, 4) == beam_search(model, features, 4)

    def test_score_monotone_in_beam_size(self):
        for seed in range(6):
            model = tiny_model_with_seed(seed + 20)
            features = np.random.default_rng(seed).normal(0.0, 1.0, (5, 2))
            scores = [beam_search(model, features, b, max_len=4).score
                      for b in (1, 2, 4, 8, 50)]
            assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))

    def test_completed_hypothesis_flag(self):
        model = tiny_model_with_seed(1)
        hyp = beam_search(model, rng.normal(0.0, 1.0, (4, 2)), 4)
        assert hyp.complete

    def test_invalid_args_rejected(self):
        model = tiny_model_with_seed(1)
        with pytest.raises(ValidationError):
            beam_search(model, rng.normal(0.0, 1.0, (4, 2)), 0)
        with pytest.raises(ValidationError):
            beam_search(model, rng.normal(0.0, 1.0, (4, 2)), 2, lm_weight=-0.5)


class TestGreedyCtc:
    def lp(self, path, V=4):
        out = np.full((len(path), V), -10.0)
        for t, sym in enumerate(path):
            out[t, sym] = 0.0
        return out

    def test_collapse_and_blank_removal(self):
        # blank, k, k, blank, j with blank=3
        assert greedy_ctc_decode(self.lp([3, 0, 0, 3, 1]), 3) == [0, 1]

    def test_all_blank_gives_empty(self):
        assert greedy_ctc_decode(self.lp([3, 3, 3]), 3) == []

    def test_blank_separates_repeats(self):
        assert greedy_ctc_decode(self.lp([0, 3, 0]), 3) == [0, 0]
