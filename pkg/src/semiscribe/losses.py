"""CTC loss, sequence cross-entropy, and the combined semi-supervised objective.

The combined objective blends a CTC term and an attention-decoder term with
interpolation weight beta, separately for utterances with true labels and
utterances with pseudo labels; the pseudo-label group is then weighted by
alpha. Group losses are averaged, not summed, so alpha means the same thing
regardless of how a batch mixes the two kinds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Utterance, ValidationError
from .model import TranscriberModel, _softmax, training_backward, training_forward

SUPERVISED = "supervised"
SELF_TRAIN = "selftrain"


class CTCInfeasibleError(ValueError):
    """Target cannot be aligned: too few frames for its length and repeats."""


def ctc_repeat_count(target) -> int:
    target = np.asarray(target)
    return int(np.sum(target[1:] == target[:-1])) if target.size > 1 else 0


def ctc_min_frames(target) -> int:
    """Smallest frame count that admits any alignment of `target`."""
    return len(target) + ctc_repeat_count(target)


def _check_ctc_inputs(log_probs, target, blank_id):
    log_probs = np.asarray(log_probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.int64)
    if log_probs.ndim != 2:
        raise ValidationError("log_probs must be a (frames x vocab) matrix")
    T, V = log_probs.shape
    if target.ndim != 1 or target.size == 0:
        raise ValidationError("target must be a nonempty 1-D id sequence")
    if np.any(target == blank_id):
        raise ValidationError("target must not contain the blank id")
    if np.any(target < 0) or np.any(target >= V):
        raise ValidationError("target contains ids outside the vocabulary")
    needed = ctc_min_frames(target)
    if T < needed:
        raise CTCInfeasibleError(
            f"{T} frames cannot align a target of length {len(target)} "
            f"with {ctc_repeat_count(target)} adjacent repeats (needs {needed})"
        )
    return log_probs, target


def ctc_loss_and_grad(log_probs, target, blank_id: int):
    """Negative log-likelihood over all blank-augmented alignments, plus its
    gradient w.r.t. log_probs (the negated per-frame symbol posterior)."""
    log_probs, target = _check_ctc_inputs(log_probs, target, blank_id)
    T, V = log_probs.shape
    L = len(target)
    S = 2 * L + 1
    ext = np.full(S, blank_id, dtype=np.int64)
    ext[1::2] = target

    # skip transition s-2 -> s is legal when ext[s] is a char differing from ext[s-2]
    skip_ok = np.zeros(S, dtype=bool)
    skip_ok[3::2] = ext[3::2] != ext[1:-2:2]

    neg = -np.inf
    alpha = np.full((T, S), neg)
    alpha[0, 0] = log_probs[0, blank_id]
    if S > 1:
        alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step1 = np.concatenate(([neg], prev[:-1]))
        acc = np.logaddexp(stay, step1)
        step2 = np.concatenate(([neg, neg], prev[:-2]))
        acc = np.where(skip_ok, np.logaddexp(acc, step2), acc)
        alpha[t] = log_probs[t, ext] + acc

    if S > 1:
        loss = -np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        loss = -alpha[T - 1, 0]
    if not np.isfinite(loss):
        raise CTCInfeasibleError("no alignment carries probability mass")

    # beta is exclusive of frame t so alpha + beta never double counts it
    beta = np.full((T, S), neg)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + log_probs[t + 1, ext]
        stay = nxt
        step1 = np.concatenate((nxt[1:], [neg]))
        acc = np.logaddexp(stay, step1)
        step2 = np.concatenate((nxt[2:], [neg, neg]))
        can_skip = np.zeros(S, dtype=bool)
        can_skip[:-2] = skip_ok[2:]
        beta[t] = np.where(can_skip, np.logaddexp(acc, step2), acc)

    log_z = -loss
    gamma = alpha + beta
    grad = np.zeros_like(log_probs)
    for symbol in np.unique(ext):
        cols = gamma[:, ext == symbol]
        occupancy = np.logaddexp.reduce(cols, axis=1)
        grad[:, symbol] = -np.exp(occupancy - log_z)
    return float(loss), grad


def ctc_loss(log_probs, target, blank_id: int) -> float:
    loss, _ = ctc_loss_and_grad(log_probs, target, blank_id)
    return loss


def s2s_loss_and_grad(decoder_logits, target_with_eos):
    """Mean per-step cross-entropy under teacher forcing, plus d(loss)/d(logits)."""
    logits = np.asarray(decoder_logits, dtype=np.float64)
    targets = np.asarray(target_with_eos, dtype=np.int64)
    if logits.ndim != 2:
        raise ValidationError("decoder_logits must be a (steps x vocab) matrix")
    steps, width = logits.shape
    if targets.ndim != 1 or len(targets) != steps:
        raise ValidationError(
            f"target_with_eos has {len(targets)} steps but logits have {steps}"
        )
    if np.any(targets < 0) or np.any(targets >= width):
        raise ValidationError("target ids exceed the decoder output width")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -float(np.mean(log_probs[np.arange(steps), targets]))
    grad = _softmax(logits)
    grad[np.arange(steps), targets] -= 1.0
    grad /= steps
    return loss, grad


def s2s_loss(decoder_logits, target_with_eos) -> float:
    loss, _ = s2s_loss_and_grad(decoder_logits, target_with_eos)
    return loss


def multitask_loss(ctc: float, s2s: float, beta: float) -> float:
    """beta * ctc + (1 - beta) * s2s."""
    if not 0.0 <= beta <= 1.0:
        raise ValidationError(f"beta must be in [0, 1], got {beta}")
    return beta * ctc + (1.0 - beta) * s2s


def unified_loss(supervised: float, self_training: float, alpha: float) -> float:
    """supervised + alpha * self_training."""
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
    return supervised + alpha * self_training


@dataclass(frozen=True)
class LossBreakdown:
    ctc_s: float
    s2s_s: float
    ctc_st: float
    s2s_st: float
    beta: float
    alpha: float
    total: float

    @classmethod
    def combine(cls, ctc_s, s2s_s, ctc_st, s2s_st, beta, alpha) -> "LossBreakdown":
        total = unified_loss(multitask_loss(ctc_s, s2s_s, beta),
                             multitask_loss(ctc_st, s2s_st, beta), alpha)
        return cls(ctc_s=ctc_s, s2s_s=s2s_s, ctc_st=ctc_st, s2s_st=s2s_st,
                   beta=beta, alpha=alpha, total=total)


@dataclass(frozen=True)
class BatchItem:
    """An utterance tagged with how its transcript should be treated."""

    utterance: Utterance
    kind: str

    def __post_init__(self):
        if self.kind not in (SUPERVISED, SELF_TRAIN):
            raise ValidationError(f"unknown label kind {self.kind!r}")
        if not self.utterance.transcript:
            raise ValidationError(
                f"utterance {self.utterance.id!r} has no usable label of either kind"
            )


def batch_loss(model: TranscriberModel, batch, beta: float, alpha: float,
               dropout_rng=None):
    """Combined loss and parameter gradients over a mixed batch.

    Contributions are accumulated in utterance-id order within each group, so
    the result is invariant to the order the batch is presented in.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValidationError(f"beta must be in [0, 1], got {beta}")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
    batch = list(batch)
    if not batch:
        raise ValidationError("batch must be nonempty")
    groups = {SUPERVISED: [], SELF_TRAIN: []}
    for item in batch:
        groups[item.kind].append(item)
    for kind in groups:
        groups[kind].sort(key=lambda item: item.utterance.id)

    vocab = model.config.vocab
    grads = {name: np.zeros_like(value) for name, value in model.params.items()}
    sums = {SUPERVISED: [0.0, 0.0], SELF_TRAIN: [0.0, 0.0]}
    weights = {
        SUPERVISED: (beta, 1.0 - beta),
        SELF_TRAIN: (alpha * beta, alpha * (1.0 - beta)),
    }
    for kind, items in groups.items():
        if not items:
            continue
        w_ctc, w_s2s = weights[kind]
        w_ctc /= len(items)
        w_s2s /= len(items)
        for item in items:
            utt = item.utterance
            target = vocab.encode(utt.transcript)
            gen = None
            if model.config.dropout > 0 and dropout_rng is not None:
                gen = dropout_rng.child(utt.id).generator()
            lp, dec_logits, caches = training_forward(model, utt.features, target, gen)
            targets_with_eos = np.append(target, vocab.eos_id)
            ctc_value, d_lp = ctc_loss_and_grad(lp, target, vocab.blank_id)
            s2s_value, d_logits = s2s_loss_and_grad(dec_logits, targets_with_eos)
            sums[kind][0] += ctc_value
            sums[kind][1] += s2s_value
            if w_ctc == 0.0 and w_s2s == 0.0:
                continue
            utt_grads = training_backward(model, caches, w_ctc * d_lp, w_s2s * d_logits)
            for name, g in utt_grads.items():
                grads[name] += g

    def mean_of(kind, idx):
        items = groups[kind]
        return sums[kind][idx] / len(items) if items else 0.0

    breakdown = LossBreakdown.combine(
        ctc_s=mean_of(SUPERVISED, 0), s2s_s=mean_of(SUPERVISED, 1),
        ctc_st=mean_of(SELF_TRAIN, 0), s2s_st=mean_of(SELF_TRAIN, 1),
        beta=beta, alpha=alpha)
    return breakdown, grads
