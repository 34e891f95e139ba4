"""
Beam search with shallow LM fusion
==================================

Decoding runs the attention decoder autoregressively, expanding a beam of
hypotheses and scoring each as decoder log-prob + lm_weight * LM log-prob.
eos competes for beam slots, so beam size 1 degenerates to exactly greedy
decoding, and a wide-enough beam is provably exhaustive on tiny problems.
"""

import numpy as np

from semiscribe import (beam_search, greedy_ctc_decode, lm_score, train_ngram_lm,
                        ToyCorpusConfig, TrainConfig, generate_toy_corpus,
                        train_supervised)
from semiscribe.model import ctc_log_probs, encode
from semiscribe.selftrain import build_lm

"""
Train a quick model on a small corpus so the decoder has something to say.
"""

split = generate_toy_corpus(ToyCorpusConfig(vocab_size=6, num_channels=8, noise_std=0.2,
                                            transcript_length_range=(5, 10),
                                            num_labeled=80, num_unlabeled=0,
                                            num_dev=20, num_test=10, seed=3))
config = TrainConfig(epochs=12, learning_rate=1e-2, lr_halve_patience=3, seed=1,
                     beam_size=8, lm_weight=0.05)
model, report = train_supervised(split, config)
vocab = model.config.vocab
print("dev WER per epoch:", [round(e.dev_wer, 1) for e in report.epochs])

"""
A character n-gram LM with additive smoothing, trained on the labeled
transcripts, scores sequences by the chain rule (eos included).
"""

lm = build_lm(split, vocab, config)
for text in ("ab", "ba"):
    print(f"lm_score({text!r}) = {lm_score(lm, text):.3f}")

"""
Compare beam widths and fusion weights on a dev utterance. Scores can only
improve (or tie) as the beam widens; lm_weight=0 reproduces the LM-free path.
"""

utt = split.dev[0]
print("\nreference:", repr(utt.transcript))
for beam in (1, 4, 16):
    hyp = beam_search(model, utt.features, beam)
    print(f"beam {beam:>2}: {vocab.decode(hyp.tokens)!r:>14} score {hyp.score:.3f}")
fused = beam_search(model, utt.features, 8, lm=lm, lm_weight=0.05)
print(f"fused : {vocab.decode(fused.tokens)!r:>14} score {fused.score:.3f} "
      f"(s2s {fused.s2s_score:.3f} + 0.05 * lm {fused.lm_score:.3f})")

"""
The CTC head offers a cheap diagnostic decode: framewise argmax, collapse
repeats, drop blanks. Useful for eyeballing encoder quality without running
the decoder at all.
"""

ids = greedy_ctc_decode(ctc_log_probs(model, encode(model, utt.features)), vocab.blank_id)
chars = "".join(vocab.chars[i] if i < vocab.num_chars else "?" for i in ids)
print("\ngreedy CTC diagnostic:", repr(chars))
