"""
The combined objective, checked against oracles
===============================================

Training blends two losses per utterance group: CTC (alignment-free, over the
full vocabulary with blank) and per-step decoder cross-entropy. Group means
are mixed as beta*ctc + (1-beta)*s2s, and the pseudo-labeled group's mix is
added with weight alpha. Everything here is plain float64 numpy with
hand-written gradients, so we can afford to check them brutally.
"""

import itertools

import numpy as np

from semiscribe import (BatchItem, LossBreakdown, batch_loss, ctc_loss, multitask_loss,
                        s2s_loss, unified_loss)
from semiscribe.data import Utterance, Vocabulary
from semiscribe.losses import SELF_TRAIN, SUPERVISED
from semiscribe.model import ModelConfig, init_model

"""
CTC on a two-frame toy case, against exhaustive path enumeration. With a
uniform distribution over 3 symbols and a single-token target, exactly three
of the nine frame paths collapse to the target, so the loss is -log(3/9).
"""

lp = np.full((2, 3), np.log(1.0 / 3.0))
print("ctc_loss:", ctc_loss(lp, [0], blank_id=2), "expected:", -np.log(3 / 9))


def enumerate_ctc(log_probs, target, blank):
    T, V = log_probs.shape
    total = -np.inf
    for path in itertools.product(range(V), repeat=T):
        collapsed, prev = [], None
        for s in path:
            if s != prev and s != blank:
                collapsed.append(s)
            prev = s
        if collapsed == list(target):
            total = np.logaddexp(total, sum(log_probs[t, path[t]] for t in range(T)))
    return -total


rng = np.random.default_rng(0)
logits = rng.normal(size=(5, 4))
lp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
print("random case:", ctc_loss(lp, [0, 2], 3), "oracle:", enumerate_ctc(lp, [0, 2], 3))

"""
The interpolation arithmetic is small enough to read off: beta=0.2 weights
CTC at 0.2, and alpha scales the whole pseudo-label group.
"""

print("\nmultitask(5, 10, beta=0.2) =", multitask_loss(5.0, 10.0, 0.2))
print("unified(2, 3, alpha=1) =", unified_loss(2.0, 3.0, 1.0))
print("unified(2, 3, alpha=0) =", unified_loss(2.0, 3.0, 0.0))

"""
batch_loss runs the full network forward and backward for a mixed batch and
reports the per-group components. Finite differences confirm the gradients;
this same check, over every parameter, is acceptance criterion 2.
"""

vocab = Vocabulary(chars=("a", "b", "c"))
model = init_model(ModelConfig(vocab=vocab, input_channels=3, encoder_dim=6,
                               decoder_dim=5, attention_dim=4,
                               attention_conv_filters=2, attention_kernel=3, seed=1))


def utt(uid, text, frames, seed):
    gen = np.random.default_rng(seed)
    return Utterance(id=uid, duration_s=1.0, features=gen.normal(size=(frames, 3)),
                     transcript=text)


batch = [BatchItem(utt("u1", "ab", 7, 1), SUPERVISED),
         BatchItem(utt("u2", "bc", 8, 2), SELF_TRAIN)]
breakdown, grads = batch_loss(model, batch, beta=0.2, alpha=1.0)
print("\nbreakdown:", breakdown)

name, idx, h = "att_wq", 3, 1e-5
flat = model.params[name].ravel()
orig = flat[idx]
flat[idx] = orig + h
up, _ = batch_loss(model, batch, beta=0.2, alpha=1.0)
flat[idx] = orig - h
down, _ = batch_loss(model, batch, beta=0.2, alpha=1.0)
flat[idx] = orig
fd = (up.total - down.total) / (2 * h)
print(f"d(total)/d({name}[{idx}]): analytic {grads[name].ravel()[idx]:.8f} "
      f"finite-difference {fd:.8f}")
