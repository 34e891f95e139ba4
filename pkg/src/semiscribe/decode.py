"""Beam search over the attention decoder with optional n-gram LM shallow fusion.

Also holds the character n-gram LM itself and a greedy CTC decode used as a
training diagnostic. Beam scoring is decoder log-prob + lm_weight * LM
log-prob; ties break lexicographically on token ids so decoding is
bit-deterministic.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ValidationError
from .model import TranscriberModel, _decoder_step_batch, _log_softmax, encode, initial_attention

_BOS = "\x02"
_EOS = "\x03"
LM_HEADER = "#ngram-lm v1"


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    s2s_score: float
    lm_score: float
    complete: bool = True


class NgramLM:
    """Character n-gram model with additive smoothing over chars + eos."""

    def __init__(self, order: int, smoothing: float, chars: tuple[str, ...],
                 counts: dict[tuple, dict[str, int]]):
        if order < 1:
            raise ValidationError("order must be >= 1")
        if smoothing <= 0:
            raise ValidationError("smoothing must be positive")
        self.order = order
        self.smoothing = smoothing
        self.chars = tuple(chars)
        self._char_set = set(chars)
        self.counts = counts
        self.totals = {ctx: sum(d.values()) for ctx, d in counts.items()}

    @property
    def support(self) -> int:
        return len(self.chars) + 1  # next token is a character or eos

    def _context(self, text: str) -> tuple:
        padded = (_BOS,) * (self.order - 1) + tuple(text)
        return padded[len(padded) - (self.order - 1):]

    def cond_log_prob(self, context_text: str, token: str) -> float:
        if token != _EOS and token not in self._char_set:
            raise ValidationError(f"token {token!r} not in the language model vocabulary")
        ctx = self._context(context_text)
        count = self.counts.get(ctx, {}).get(token, 0)
        total = self.totals.get(ctx, 0)
        return math.log((count + self.smoothing) / (total + self.smoothing * self.support))

    def next_log_probs(self, context_text: str) -> np.ndarray:
        """Log-probabilities over [chars..., eos] given the context."""
        ctx = self._context(context_text)
        seen = self.counts.get(ctx, {})
        total = self.totals.get(ctx, 0)
        counts = np.array([seen.get(ch, 0) for ch in self.chars] + [seen.get(_EOS, 0)],
                          dtype=np.float64)
        return np.log((counts + self.smoothing) / (total + self.smoothing * self.support))


def train_ngram_lm(corpus, order: int, smoothing: float, charset=None) -> NgramLM:
    """Additive-smoothed maximum-likelihood conditionals from a text corpus.

    `charset` fixes the smoothing support; when given, the corpus may not use
    characters outside it. Defaults to the characters observed in the corpus.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValidationError("cannot train a language model on an empty corpus")
    observed = sorted(set("".join(corpus)))
    if charset is None:
        chars = tuple(observed)
    else:
        chars = tuple(charset)
        extra = set(observed) - set(chars)
        if extra:
            raise ValidationError(f"corpus uses characters outside charset: {sorted(extra)}")
    if any(ch in ("<", ">") for ch in chars):
        raise ValidationError("characters '<' and '>' are reserved by the LM text format")
    counts: dict[tuple, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for text in corpus:
        context = (_BOS,) * (order - 1)
        for ch in text:
            counts[context][ch] += 1
            context = (context + (ch,))[1:] if order > 1 else context
        counts[context][_EOS] += 1
    frozen = {ctx: dict(tokens) for ctx, tokens in counts.items()}
    return NgramLM(order=order, smoothing=smoothing, chars=chars, counts=frozen)


def lm_score(lm: NgramLM, tokens: str) -> float:
    """Chain-rule log-probability of `tokens` followed by eos."""
    total = 0.0
    for i, ch in enumerate(tokens):
        total += lm.cond_log_prob(tokens[:i], ch)
    return total + lm.cond_log_prob(tokens, _EOS)


def _render_context(ctx: tuple) -> str:
    return "".join("<s>" if ch == _BOS else ch for ch in ctx)


def _parse_context(text: str) -> tuple:
    out = []
    i = 0
    while i < len(text):
        if text.startswith("<s>", i):
            out.append(_BOS)
            i += 3
        else:
            out.append(text[i])
            i += 1
    return tuple(out)


def save_ngram_lm(lm: NgramLM, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [LM_HEADER,
             f"order\t{lm.order}",
             f"smoothing\t{lm.smoothing!r}",
             f"chars\t{''.join(lm.chars)}"]
    for ctx in sorted(lm.counts, key=_render_context):
        context_text = "".join(c for c in ctx if c != _BOS)
        for token in sorted(lm.counts[ctx]):
            rendered = "</s>" if token == _EOS else token
            logp = lm.cond_log_prob(context_text, token)
            count = lm.counts[ctx][token]
            lines.append(f"{_render_context(ctx)}\t{rendered}\t{logp!r}\t{count}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ngram_lm(path) -> NgramLM:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != LM_HEADER:
        raise ValidationError(f"{path}: missing header {LM_HEADER!r}")
    header: dict[str, str] = {}
    body_start = 1
    for line in lines[1:4]:
        key, _, value = line.partition("\t")
        header[key] = value
        body_start += 1
    counts: dict[tuple, dict[str, int]] = {}
    for line in lines[body_start:]:
        if not line:
            continue
        ctx_text, token_text, _, count_text = line.split("\t")
        ctx = _parse_context(ctx_text)
        token = _EOS if token_text == "</s>" else token_text
        counts.setdefault(ctx, {})[token] = int(count_text)
    return NgramLM(order=int(header["order"]), smoothing=float(header["smoothing"]),
                   chars=tuple(header["chars"]), counts=counts)


# ---------------------------------------------------------------------------
# Beam search
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class _Beam:
    tokens: tuple[int, ...]
    text: str
    s2s: float
    lm: float
    score: float
    hidden: np.ndarray
    attention: np.ndarray
    prev_token: int


def beam_search(model: TranscriberModel, features, beam_size: int,
                lm: NgramLM | None = None, lm_weight: float = 0.3,
                max_len: int | None = None) -> Hypothesis:
    """Best eos-terminated hypothesis under decoder + weighted LM log-probs.

    `max_len` caps the number of character tokens (default: twice the encoder
    frame count). With `lm` absent or `lm_weight` zero the score is the pure
    decoder log-probability.
    """
    if beam_size < 1:
        raise ValidationError("beam_size must be >= 1")
    if lm_weight < 0:
        raise ValidationError("lm_weight must be >= 0")
    vocab = model.config.vocab
    enc = encode(model, features)
    T = enc.shape[0]
    if max_len is None:
        max_len = 2 * T
    if max_len < 1:
        raise ValidationError("max_len must be >= 1")
    fuse = lm is not None and lm_weight > 0
    if fuse and tuple(lm.chars) != tuple(vocab.chars):
        raise ValidationError("language model characters do not match the vocabulary")

    params = model.params
    config = model.config
    enc_k = enc @ params["att_wk"]
    eos = vocab.eos_id
    num_chars = vocab.num_chars

    lm_cache: dict[str, np.ndarray] = {}

    def lm_vector(context: str) -> np.ndarray:
        vec = lm_cache.get(context)
        if vec is None:
            vec = lm.next_log_probs(context)
            lm_cache[context] = vec
        return vec

    live = [_Beam(tokens=(), text="", s2s=0.0, lm=0.0, score=0.0,
                  hidden=np.zeros(config.decoder_dim), attention=initial_attention(T),
                  prev_token=vocab.sos_id)]
    best: Hypothesis | None = None

    # eos competes with characters for beam slots, so beam_size=1 follows the
    # stepwise argmax exactly; eos-terminated survivors finalize.
    for step in range(max_len + 1):
        s_prev = np.stack([b.hidden for b in live])
        alpha_prev = np.stack([b.attention for b in live])
        tokens = np.array([b.prev_token for b in live])
        logits, s_new, alpha_new, _ = _decoder_step_batch(
            params, config, s_prev, alpha_prev, tokens, enc, enc_k)
        log_probs = _log_softmax(logits)

        candidates: list[tuple[float, tuple[int, ...], int, int, float, float]] = []
        for i, beam in enumerate(live):
            lm_vec = lm_vector(beam.text) if fuse else None
            allowed = range(num_chars + 1) if step < max_len else (eos,)
            for token in allowed:
                s2s = beam.s2s + log_probs[i, token]
                lm_part = beam.lm + (lm_vec[token] if fuse else 0.0)
                score = s2s + lm_weight * lm_part
                new_tokens = beam.tokens if token == eos else beam.tokens + (token,)
                candidates.append((score, new_tokens, i, token, s2s, lm_part))
        candidates.sort(key=lambda cand: (-cand[0], cand[1]))
        next_live = []
        for score, toks, i, token, s2s, lm_part in candidates[:beam_size]:
            if token == eos:
                finished = Hypothesis(tokens=toks, score=score, s2s_score=s2s,
                                      lm_score=lm_part)
                if best is None or (-score, toks) < (-best.score, best.tokens):
                    best = finished
            else:
                next_live.append(_Beam(
                    tokens=toks, text=live[i].text + vocab.chars[token],
                    s2s=s2s, lm=lm_part, score=score,
                    hidden=s_new[i], attention=alpha_new[i], prev_token=token))
        live = next_live
        if not live:
            break
        # additions are log-probs (<= 0), so no live beam can beat this later
        if best is not None and live[0].score < best.score:
            break

    if best is not None:
        return best
    top = min(live, key=lambda b: (-b.score, b.tokens))
    return Hypothesis(tokens=top.tokens, score=top.score, s2s_score=top.s2s,
                      lm_score=top.lm, complete=False)


def greedy_ctc_decode(ctc_log_probs, blank_id: int) -> list[int]:
    """Framewise argmax, collapse repeats, drop blanks."""
    path = np.asarray(ctc_log_probs).argmax(axis=1)
    out: list[int] = []
    prev = None
    for symbol in path:
        symbol = int(symbol)
        if symbol != prev and symbol != blank_id:
            out.append(symbol)
        prev = symbol
    return out


def write_decode_records(path, records) -> None:
    """Line-delimited decode outputs: id, text, s2s, lm, combined score."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["#decodes v1\t" + "\t".join(["id", "text", "s2s_score", "lm_score", "score"])]
    for utt_id, text, hyp in records:
        lines.append(f"{utt_id}\t{text}\t{hyp.s2s_score!r}\t{hyp.lm_score!r}\t{hyp.score!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
