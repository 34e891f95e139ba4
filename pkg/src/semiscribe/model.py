"""Transcriber network: recurrent encoder, CTC head, location-aware attention decoder.

Everything is plain numpy in float64 with hand-written backward passes, which
keeps training bit-reproducible and lets gradients be checked against finite
differences exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ValidationError, Vocabulary

CHECKPOINT_FORMAT = "transcriber-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Sizes and seeds. The decoder output head covers characters plus eos;
    the CTC head covers the full vocabulary (characters plus all specials)."""

    vocab: Vocabulary
    input_channels: int
    encoder_layers: int = 1
    encoder_dim: int = 32
    decoder_dim: int = 32
    attention_dim: int = 16
    attention_conv_filters: int = 4
    attention_kernel: int = 3
    subsample: int = 1
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("input_channels", "encoder_layers", "encoder_dim",
                     "decoder_dim", "attention_dim", "attention_conv_filters"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.attention_kernel < 1 or self.attention_kernel % 2 == 0:
            raise ValidationError("attention_kernel must be odd and >= 1")
        if self.subsample < 1:
            raise ValidationError("subsample must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must be in [0, 1)")
        if self.seed < 0:
            raise ValidationError("seed must be >= 0")


@dataclass(eq=False)
class TranscriberModel:
    params: dict[str, np.ndarray]
    config: ModelConfig

    def copy(self) -> "TranscriberModel":
        return TranscriberModel({k: v.copy() for k, v in self.params.items()}, self.config)


@dataclass(eq=False)
class DecoderState:
    """Recurrent hidden vector plus the previous attention distribution."""

    hidden: np.ndarray
    attention: np.ndarray
    step: int = 0


def _parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    F = config.input_channels
    D = config.encoder_dim
    H = config.decoder_dim
    E = config.decoder_dim
    A = config.attention_dim
    K = config.attention_conv_filters
    V = config.vocab.size
    V_dec = config.vocab.decoder_width
    shapes: list[tuple[str, tuple[int, ...]]] = [("enc_in_w", (F, D)), ("enc_in_b", (D,))]
    for layer in range(config.encoder_layers):
        for gate in ("z", "r", "n"):
            shapes += [(f"enc{layer}_w{gate}", (D, D)),
                       (f"enc{layer}_u{gate}", (D, D)),
                       (f"enc{layer}_b{gate}", (D,))]
    shapes += [("ctc_w", (D, V)), ("ctc_b", (V,))]
    shapes += [("emb", (V, E))]
    shapes += [("att_wq", (H, A)), ("att_wk", (D, A)), ("att_wf", (K, A)),
               ("att_b", (A,)), ("att_v", (A,)),
               ("att_conv", (K, config.attention_kernel)), ("att_conv_b", (K,))]
    for gate in ("z", "r", "n"):
        shapes += [(f"dec_w{gate}", (E + D, H)),
                   (f"dec_u{gate}", (H, H)),
                   (f"dec_b{gate}", (H,))]
    shapes += [("out_w", (H + D, V_dec)), ("out_b", (V_dec,))]
    return shapes


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in _parameter_shapes(config))


def init_model(config: ModelConfig) -> TranscriberModel:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in _parameter_shapes(config):
        if len(shape) == 1:
            if name == "att_v":
                bound = 1.0 / np.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, shape)
            else:
                params[name] = np.zeros(shape)
        else:
            fan_in = shape[1] if name == "att_conv" else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, shape)
    return TranscriberModel(params=params, config=config)


def _sigmoid(x):
    # stable and branch-free: sigmoid(x) = (tanh(x/2) + 1) / 2
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _log_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softmax(x):
    ex = np.exp(x - x.max(axis=-1, keepdims=True))
    return ex / ex.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

def _gru_layer_forward(params, prefix, x):
    wz, uz, bz = params[f"{prefix}_wz"], params[f"{prefix}_uz"], params[f"{prefix}_bz"]
    wr, ur, br = params[f"{prefix}_wr"], params[f"{prefix}_ur"], params[f"{prefix}_br"]
    wn, un, bn = params[f"{prefix}_wn"], params[f"{prefix}_un"], params[f"{prefix}_bn"]
    T = x.shape[0]
    H = uz.shape[0]
    xz = x @ wz + bz
    xr = x @ wr + br
    xn = x @ wn + bn
    hs = np.empty((T, H))
    zs = np.empty((T, H))
    rs = np.empty((T, H))
    ns = np.empty((T, H))
    h_prevs = np.empty((T, H))
    h = np.zeros(H)
    for t in range(T):
        z = _sigmoid(xz[t] + h @ uz)
        r = _sigmoid(xr[t] + h @ ur)
        n = np.tanh(xn[t] + (r * h) @ un)
        h_prevs[t] = h
        h = (1.0 - z) * n + z * h
        hs[t], zs[t], rs[t], ns[t] = h, z, r, n
    return hs, (x, h_prevs, zs, rs, ns)


def _gru_layer_backward(params, prefix, cache, d_hs):
    x, h_prevs, zs, rs, ns = cache
    uz, ur, un = params[f"{prefix}_uz"], params[f"{prefix}_ur"], params[f"{prefix}_un"]
    wz, wr, wn = params[f"{prefix}_wz"], params[f"{prefix}_wr"], params[f"{prefix}_wn"]
    T, H = d_hs.shape
    d_az = np.empty((T, H))
    d_ar = np.empty((T, H))
    d_an = np.empty((T, H))
    dh = np.zeros(H)
    for t in reversed(range(T)):
        dht = d_hs[t] + dh
        z, r, n, hp = zs[t], rs[t], ns[t], h_prevs[t]
        dn = dht * (1.0 - z)
        dz = dht * (hp - n)
        dh = dht * z
        an = dn * (1.0 - n * n)
        d_an[t] = an
        d_rh = an @ un.T
        dh += d_rh * r
        dr = d_rh * hp
        az = dz * z * (1.0 - z)
        d_az[t] = az
        dh += az @ uz.T
        ar = dr * r * (1.0 - r)
        d_ar[t] = ar
        dh += ar @ ur.T
    grads = {
        f"{prefix}_wz": x.T @ d_az, f"{prefix}_uz": h_prevs.T @ d_az, f"{prefix}_bz": d_az.sum(0),
        f"{prefix}_wr": x.T @ d_ar, f"{prefix}_ur": h_prevs.T @ d_ar, f"{prefix}_br": d_ar.sum(0),
        f"{prefix}_wn": x.T @ d_an, f"{prefix}_un": (rs * h_prevs).T @ d_an, f"{prefix}_bn": d_an.sum(0),
    }
    dx = d_az @ wz.T + d_ar @ wr.T + d_an @ wn.T
    return dx, grads


def _encode_forward(params, config: ModelConfig, features, dropout_gen=None):
    a0 = features @ params["enc_in_w"] + params["enc_in_b"]
    h = np.tanh(a0)
    masks = []
    layer_caches = []
    layer_inputs = [h]
    drop = config.dropout
    for layer in range(config.encoder_layers):
        x = layer_inputs[-1]
        if drop > 0 and dropout_gen is not None:
            mask = (dropout_gen.random(x.shape) >= drop) / (1.0 - drop)
            x = x * mask
            masks.append(mask)
        else:
            masks.append(None)
        hs, cache = _gru_layer_forward(params, f"enc{layer}", x)
        layer_caches.append(cache)
        layer_inputs.append(hs)
    enc = layer_inputs[-1][::config.subsample]
    return enc, (features, h, layer_inputs, layer_caches, masks)


def _encode_backward(params, config: ModelConfig, cache, d_enc):
    features, h0, layer_inputs, layer_caches, masks = cache
    grads: dict[str, np.ndarray] = {}
    d_out = np.zeros_like(layer_inputs[-1])
    d_out[::config.subsample] = d_enc
    for layer in reversed(range(config.encoder_layers)):
        dx, layer_grads = _gru_layer_backward(params, f"enc{layer}", layer_caches[layer], d_out)
        grads.update(layer_grads)
        if masks[layer] is not None:
            dx = dx * masks[layer]
        d_out = dx
    d_a0 = d_out * (1.0 - h0 * h0)
    grads["enc_in_w"] = features.T @ d_a0
    grads["enc_in_b"] = d_a0.sum(0)
    return grads


def encode(model: TranscriberModel, features) -> np.ndarray:
    """Eval-mode encoding of a (frames x channels) matrix into (frames' x encoder_dim)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValidationError("features must be a nonempty (frames x channels) matrix")
    if features.shape[1] != model.config.input_channels:
        raise ValidationError(
            f"expected {model.config.input_channels} feature channels, got {features.shape[1]}"
        )
    if not np.all(np.isfinite(features)):
        raise ValidationError("features contain non-finite values")
    enc, _ = _encode_forward(model.params, model.config, features)
    return enc


# ---------------------------------------------------------------------------
# CTC head
# ---------------------------------------------------------------------------

def _ctc_head_forward(params, enc):
    logits = enc @ params["ctc_w"] + params["ctc_b"]
    return _log_softmax(logits), (enc, logits)


def _ctc_head_backward(params, cache, d_log_probs):
    enc, logits = cache
    probs = _softmax(logits)
    d_logits = d_log_probs - probs * d_log_probs.sum(axis=1, keepdims=True)
    grads = {"ctc_w": enc.T @ d_logits, "ctc_b": d_logits.sum(0)}
    return d_logits @ params["ctc_w"].T, grads


def ctc_log_probs(model: TranscriberModel, encoder_states) -> np.ndarray:
    """Per-frame log distribution over the full vocabulary (blank included)."""
    lp, _ = _ctc_head_forward(model.params, np.asarray(encoder_states, dtype=np.float64))
    return lp


# ---------------------------------------------------------------------------
# Attention decoder
# ---------------------------------------------------------------------------

def _location_conv(params, config: ModelConfig, alpha_prev):
    # alpha_prev: (B, T'). Returns (B, T', K).
    kernel = config.attention_kernel
    pad = kernel // 2
    B, T = alpha_prev.shape
    conv_w = params["att_conv"]
    K = conv_w.shape[0]
    alpha_pad = np.zeros((B, T + 2 * pad))
    alpha_pad[:, pad:pad + T] = alpha_prev
    f = np.empty((B, T, K))
    f[:] = params["att_conv_b"]
    for d in range(kernel):
        f += alpha_pad[:, d:d + T, None] * conv_w[None, None, :, d]
    return f, alpha_pad


def _decoder_step_batch(params, config: ModelConfig, s_prev, alpha_prev, tokens, enc, enc_k):
    """One decoder step for a batch of hypotheses sharing one encoded utterance.

    s_prev (B, H), alpha_prev (B, T'), tokens (B,) int ids. Returns logits over
    characters + eos, the new hidden states, new attention weights, and the
    intermediates needed for backprop.
    """
    f, alpha_pad = _location_conv(params, config, alpha_prev)
    pre = (s_prev @ params["att_wq"])[:, None, :] + enc_k[None, :, :] \
        + f @ params["att_wf"] + params["att_b"]
    u = np.tanh(pre)
    e = u @ params["att_v"]
    alpha = _softmax(e)
    c = alpha @ enc
    x = np.concatenate([params["emb"][tokens], c], axis=1)
    az = x @ params["dec_wz"] + s_prev @ params["dec_uz"] + params["dec_bz"]
    ar = x @ params["dec_wr"] + s_prev @ params["dec_ur"] + params["dec_br"]
    z = _sigmoid(az)
    r = _sigmoid(ar)
    an = x @ params["dec_wn"] + (r * s_prev) @ params["dec_un"] + params["dec_bn"]
    n = np.tanh(an)
    s = (1.0 - z) * n + z * s_prev
    cat = np.concatenate([s, c], axis=1)
    logits = cat @ params["out_w"] + params["out_b"]
    extras = {"f": f, "alpha_pad": alpha_pad, "u": u, "alpha": alpha, "c": c,
              "x": x, "z": z, "r": r, "n": n, "s_prev": s_prev, "s": s,
              "tokens": tokens, "cat": cat}
    return logits, s, alpha, extras


def initial_attention(num_frames: int) -> np.ndarray:
    """Start peaked on the first frame so the location convolution has a
    structured input to advance from the very first step."""
    alpha = np.zeros(num_frames)
    alpha[0] = 1.0
    return alpha


def initial_decoder_state(model: TranscriberModel, encoder_states) -> DecoderState:
    """Zero hidden state, attention concentrated on the first encoder frame."""
    T = np.asarray(encoder_states).shape[0]
    return DecoderState(hidden=np.zeros(model.config.decoder_dim),
                        attention=initial_attention(T), step=0)


def decoder_step(model: TranscriberModel, state: DecoderState, prev_token: int,
                 encoder_states) -> tuple[np.ndarray, DecoderState]:
    """Advance the decoder one step; logits cover characters + eos."""
    vocab = model.config.vocab
    enc = np.asarray(encoder_states, dtype=np.float64)
    if state.attention.shape[0] != enc.shape[0]:
        raise ValidationError(
            f"decoder state covers {state.attention.shape[0]} frames but "
            f"encoder_states has {enc.shape[0]}"
        )
    prev_token = int(prev_token)
    if not (0 <= prev_token < vocab.num_chars or prev_token == vocab.sos_id):
        raise ValidationError(f"prev_token {prev_token} is not a character or sos id")
    enc_k = enc @ model.params["att_wk"]
    logits, s, alpha, _ = _decoder_step_batch(
        model.params, model.config, state.hidden[None, :], state.attention[None, :],
        np.array([prev_token]), enc, enc_k)
    new_state = DecoderState(hidden=s[0], attention=alpha[0], step=state.step + 1)
    return logits[0], new_state


def _decoder_forward(params, config: ModelConfig, enc, target):
    vocab = config.vocab
    enc_k = enc @ params["att_wk"]
    T = enc.shape[0]
    s = np.zeros((1, config.decoder_dim))
    alpha = initial_attention(T)[None, :]
    inputs = [vocab.sos_id] + [int(t) for t in target]
    logits_rows = []
    step_caches = []
    for token in inputs:
        logits, s, alpha, extras = _decoder_step_batch(
            params, config, s, alpha, np.array([token]), enc, enc_k)
        logits_rows.append(logits[0])
        step_caches.append(extras)
    return np.array(logits_rows), (enc, enc_k, step_caches)


def _decoder_backward(params, config: ModelConfig, cache, d_logits):
    """Backprop through the teacher-forced decoder; returns grads + d(enc)."""
    enc, enc_k, step_caches = cache
    T = enc.shape[0]
    H = config.decoder_dim
    E = config.decoder_dim
    kernel = config.attention_kernel
    pad = kernel // 2
    grads = {name: np.zeros_like(params[name]) for name in (
        "emb", "att_wq", "att_wk", "att_wf", "att_b", "att_v", "att_conv", "att_conv_b",
        "dec_wz", "dec_uz", "dec_bz", "dec_wr", "dec_ur", "dec_br",
        "dec_wn", "dec_un", "dec_bn", "out_w", "out_b")}
    d_enc = np.zeros_like(enc)
    d_enc_k = np.zeros_like(enc_k)
    ds_next = np.zeros(H)
    dalpha_next = np.zeros(T)
    for t in reversed(range(len(step_caches))):
        cache_t = step_caches[t]
        s_prev = cache_t["s_prev"][0]
        alpha = cache_t["alpha"][0]
        c = cache_t["c"][0]
        x = cache_t["x"][0]
        z, r, n, s = cache_t["z"][0], cache_t["r"][0], cache_t["n"][0], cache_t["s"][0]
        u = cache_t["u"][0]
        f = cache_t["f"][0]
        alpha_pad = cache_t["alpha_pad"][0]
        token = int(cache_t["tokens"][0])
        dl = d_logits[t]

        cat = cache_t["cat"][0]
        grads["out_w"] += np.outer(cat, dl)
        grads["out_b"] += dl
        d_cat = params["out_w"] @ dl
        ds = d_cat[:H] + ds_next
        dc = d_cat[H:].copy()

        # GRU cell
        dn = ds * (1.0 - z)
        dz = ds * (s_prev - n)
        ds_prev = ds * z
        d_an = dn * (1.0 - n * n)
        grads["dec_wn"] += np.outer(x, d_an)
        grads["dec_un"] += np.outer(r * s_prev, d_an)
        grads["dec_bn"] += d_an
        dx = params["dec_wn"] @ d_an
        d_rh = params["dec_un"] @ d_an
        ds_prev += d_rh * r
        dr = d_rh * s_prev
        d_az = dz * z * (1.0 - z)
        grads["dec_wz"] += np.outer(x, d_az)
        grads["dec_uz"] += np.outer(s_prev, d_az)
        grads["dec_bz"] += d_az
        dx += params["dec_wz"] @ d_az
        ds_prev += params["dec_uz"] @ d_az
        d_ar = dr * r * (1.0 - r)
        grads["dec_wr"] += np.outer(x, d_ar)
        grads["dec_ur"] += np.outer(s_prev, d_ar)
        grads["dec_br"] += d_ar
        dx += params["dec_wr"] @ d_ar
        ds_prev += params["dec_ur"] @ d_ar

        grads["emb"][token] += dx[:E]
        dc += dx[E:]

        # context and attention
        dalpha = enc @ dc + dalpha_next
        d_enc += np.outer(alpha, dc)
        de = alpha * (dalpha - alpha @ dalpha)
        grads["att_v"] += u.T @ de
        du = np.outer(de, params["att_v"])
        dpre = du * (1.0 - u * u)
        dpre_sum = dpre.sum(0)
        grads["att_wq"] += np.outer(s_prev, dpre_sum)
        ds_prev += params["att_wq"] @ dpre_sum
        grads["att_b"] += dpre_sum
        d_enc_k += dpre
        grads["att_wf"] += f.T @ dpre
        d_f = dpre @ params["att_wf"].T
        grads["att_conv_b"] += d_f.sum(0)
        d_alpha_pad = np.zeros_like(alpha_pad)
        conv_w = params["att_conv"]
        for d in range(kernel):
            grads["att_conv"][:, d] += d_f.T @ alpha_pad[d:d + T]
            d_alpha_pad[d:d + T] += d_f @ conv_w[:, d]
        dalpha_prev = d_alpha_pad[pad:pad + T]

        ds_next = ds_prev
        dalpha_next = dalpha_prev
    grads["att_wk"] += enc.T @ d_enc_k
    d_enc += d_enc_k @ params["att_wk"].T
    return grads, d_enc


def _validate_target(vocab: Vocabulary, target):
    target = np.asarray(target, dtype=np.int64)
    if target.ndim != 1 or target.size == 0:
        raise ValidationError("target must be a nonempty 1-D id sequence")
    if np.any(target < 0) or np.any(target >= vocab.num_chars):
        bad = target[(target < 0) | (target >= vocab.num_chars)][0]
        raise ValidationError(
            f"target id {int(bad)} is not a character id (blank/sos/eos/pad not allowed)"
        )
    return target


def forward_teacher_forced(model: TranscriberModel, features, target):
    """Eval-mode joint forward: (ctc log-probs, decoder logits with len(target)+1 steps)."""
    target = _validate_target(model.config.vocab, target)
    enc = encode(model, features)
    lp, _ = _ctc_head_forward(model.params, enc)
    dec_logits, _ = _decoder_forward(model.params, model.config, enc, target)
    return lp, dec_logits


def training_forward(model: TranscriberModel, features, target, dropout_gen=None):
    """Joint forward pass that also returns the caches for `training_backward`."""
    target = _validate_target(model.config.vocab, target)
    features = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise ValidationError("features contain non-finite values")
    enc, enc_cache = _encode_forward(model.params, model.config, features, dropout_gen)
    lp, head_cache = _ctc_head_forward(model.params, enc)
    dec_logits, dec_cache = _decoder_forward(model.params, model.config, enc, target)
    return lp, dec_logits, (enc_cache, head_cache, dec_cache)


def training_backward(model: TranscriberModel, caches, d_ctc_log_probs, d_dec_logits):
    """Gradients of a scalar loss given its partials w.r.t. both heads."""
    enc_cache, head_cache, dec_cache = caches
    grads = {name: np.zeros_like(value) for name, value in model.params.items()}
    d_enc_head, head_grads = _ctc_head_backward(model.params, head_cache, d_ctc_log_probs)
    dec_grads, d_enc_dec = _decoder_backward(model.params, model.config, dec_cache, d_dec_logits)
    enc_grads = _encode_backward(model.params, model.config, enc_cache, d_enc_head + d_enc_dec)
    for part in (head_grads, dec_grads, enc_grads):
        for name, g in part.items():
            grads[name] += g
    return grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _config_to_dict(config: ModelConfig) -> dict:
    return {
        "vocab_chars": list(config.vocab.chars),
        "input_channels": config.input_channels,
        "encoder_layers": config.encoder_layers,
        "encoder_dim": config.encoder_dim,
        "decoder_dim": config.decoder_dim,
        "attention_dim": config.attention_dim,
        "attention_conv_filters": config.attention_conv_filters,
        "attention_kernel": config.attention_kernel,
        "subsample": config.subsample,
        "dropout": config.dropout,
        "seed": config.seed,
    }


def _config_from_dict(obj: dict) -> ModelConfig:
    kwargs = dict(obj)
    chars = kwargs.pop("vocab_chars")
    return ModelConfig(vocab=Vocabulary(chars=tuple(chars)), **kwargs)


def save_checkpoint(model: TranscriberModel, path) -> None:
    for name, value in model.params.items():
        if not np.all(np.isfinite(value)):
            raise ValidationError(f"parameter {name!r} contains non-finite values")
    meta = json.dumps({"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                       "config": _config_to_dict(model.config)}, sort_keys=True)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    np.savez(path, __meta__=np.array(meta), **arrays)


def load_checkpoint(path) -> TranscriberModel:
    with np.load(path) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
        config = _config_from_dict(meta["config"])
        params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    model = TranscriberModel(params=params, config=config)
    expected = {name for name, _ in _parameter_shapes(config)}
    if set(params) != expected:
        raise ValidationError(f"{path}: checkpoint parameter set does not match its config")
    for name, value in params.items():
        if not np.all(np.isfinite(value)):
            raise ValidationError(f"{path}: parameter {name!r} contains non-finite values")
    return model


def checkpoint_id(model: TranscriberModel) -> str:
    """Content hash of config + parameters; stable across processes."""
    digest = hashlib.sha256()
    digest.update(json.dumps(_config_to_dict(model.config), sort_keys=True).encode())
    for name in sorted(model.params):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(model.params[name]).tobytes())
    return digest.hexdigest()[:12]
