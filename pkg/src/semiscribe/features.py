"""Feature extraction stand-in and the noisy-student augmentation pipeline."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .data import Utterance, ValidationError

# Counts every apply_noisy_augmentation call; the pseudo-labeling path must
# leave it untouched.
_augmentation_calls = 0


def augmentation_call_count() -> int:
    return _augmentation_calls


def reset_augmentation_calls() -> None:
    global _augmentation_calls
    _augmentation_calls = 0


@dataclass(frozen=True)
class RngStream:
    """Named random stream: identical (seed, stream_key) replay identically."""

    seed: int
    stream_key: str

    def __post_init__(self):
        if self.seed < 0:
            raise ValidationError("RngStream seed must be >= 0")

    def generator(self) -> np.random.Generator:
        digest = hashlib.blake2b(self.stream_key.encode("utf-8"), digest_size=8).digest()
        key = int.from_bytes(digest, "big")
        return np.random.default_rng(np.random.SeedSequence([self.seed, key]))

    def child(self, suffix: str) -> "RngStream":
        return RngStream(self.seed, f"{self.stream_key}/{suffix}")


@dataclass(frozen=True)
class AugmentationPolicy:
    """Speed perturbation plus time/frequency masking settings."""

    speed_factors: tuple[float, ...] = (0.9, 1.0, 1.1)
    speed_probs: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    max_time_masks: int = 2
    time_mask_max_frames: int = 4
    max_freq_masks: int = 2
    freq_mask_max_channels: int = 2
    enabled: bool = True

    def __post_init__(self):
        if len(self.speed_factors) != len(self.speed_probs) or not self.speed_factors:
            raise ValidationError("speed_factors and speed_probs must be nonempty and equal length")
        if any(f <= 0 for f in self.speed_factors):
            raise ValidationError("speed factors must be positive")
        if any(p < 0 for p in self.speed_probs):
            raise ValidationError("speed probabilities must be nonnegative")
        if abs(sum(self.speed_probs) - 1.0) > 1e-9:
            raise ValidationError("speed probabilities must sum to 1")
        for name in ("max_time_masks", "time_mask_max_frames",
                     "max_freq_masks", "freq_mask_max_channels"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    @property
    def max_speed_factor(self) -> float:
        return max(self.speed_factors)

    def to_dict(self) -> dict:
        return {
            "speed_factors": list(self.speed_factors),
            "speed_probs": list(self.speed_probs),
            "max_time_masks": self.max_time_masks,
            "time_mask_max_frames": self.time_mask_max_frames,
            "max_freq_masks": self.max_freq_masks,
            "freq_mask_max_channels": self.freq_mask_max_channels,
            "enabled": self.enabled,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AugmentationPolicy":
        kwargs = dict(obj)
        for key in ("speed_factors", "speed_probs"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def default_augmentation_policy(typical_frames: int = 40, num_channels: int = 12) -> AugmentationPolicy:
    """Two time masks up to ~10% of frames, two frequency masks up to ~20% of channels."""
    return AugmentationPolicy(
        time_mask_max_frames=max(1, round(0.1 * typical_frames)),
        freq_mask_max_channels=max(1, round(0.2 * num_channels)),
    )


def disabled_augmentation_policy() -> AugmentationPolicy:
    return AugmentationPolicy(enabled=False)


def extract_features(samples: np.ndarray, frame_size: int, hop: int,
                     num_bands: int = 8) -> np.ndarray:
    """Log band-energy features: one row per frame, one column per band."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValidationError("samples must be a 1-D vector")
    if frame_size < 1 or hop < 1 or num_bands < 1:
        raise ValidationError("frame_size, hop, and num_bands must be >= 1")
    if len(samples) < frame_size:
        raise ValidationError(
            f"need at least frame_size={frame_size} samples, got {len(samples)}"
        )
    num_frames = (len(samples) - frame_size) // hop + 1
    rows = np.empty((num_frames, num_bands))
    for i in range(num_frames):
        frame = samples[i * hop: i * hop + frame_size]
        bands = np.array_split(frame, num_bands)
        rows[i] = [np.log(np.mean(b ** 2) + 1e-8) for b in bands]
    return rows


def speed_perturb(features: np.ndarray, factor: float) -> np.ndarray:
    """Resample the time axis to round(frames / factor) rows by linear interpolation."""
    if factor <= 0:
        raise ValidationError("speed factor must be positive")
    features = np.asarray(features, dtype=np.float64)
    num_in = features.shape[0]
    num_out = int(np.round(num_in / factor))
    if num_out < 1:
        raise ValidationError(
            f"speed factor {factor} leaves no frames (input had {num_in})"
        )
    if num_out == 1:
        positions = np.zeros(1)
    else:
        positions = np.linspace(0.0, num_in - 1, num_out)
    lower = np.floor(positions).astype(int)
    upper = np.minimum(lower + 1, num_in - 1)
    frac = (positions - lower)[:, None]
    return (1.0 - frac) * features[lower] + frac * features[upper]


def _mask_spans(matrix: np.ndarray, axis: int, num_masks: int, max_width: int,
                gen: np.random.Generator) -> np.ndarray:
    out = matrix.copy()
    dim = out.shape[axis]
    for _ in range(num_masks):
        width = min(int(gen.integers(0, max_width + 1)), dim)
        start = int(gen.integers(0, dim - width + 1))
        if width == 0:
            continue
        if axis == 0:
            out[start:start + width, :] = 0.0
        else:
            out[:, start:start + width] = 0.0
    return out


def time_mask(features: np.ndarray, policy: AugmentationPolicy, rng: RngStream) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if not policy.enabled or policy.max_time_masks == 0 or policy.time_mask_max_frames == 0:
        return features.copy()
    return _mask_spans(features, 0, policy.max_time_masks, policy.time_mask_max_frames,
                       rng.generator())


def freq_mask(features: np.ndarray, policy: AugmentationPolicy, rng: RngStream) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if not policy.enabled or policy.max_freq_masks == 0 or policy.freq_mask_max_channels == 0:
        return features.copy()
    return _mask_spans(features, 1, policy.max_freq_masks, policy.freq_mask_max_channels,
                       rng.generator())


def apply_noisy_augmentation(utt: Utterance, policy: AugmentationPolicy,
                             rng: RngStream) -> Utterance:
    """Speed perturb, then time mask, then frequency mask. Labels pass through."""
    global _augmentation_calls
    _augmentation_calls += 1
    if utt.features is None:
        raise ValidationError(f"utterance {utt.id!r} has no features to augment")
    if not policy.enabled:
        return replace(utt, features=utt.features.copy())
    gen = rng.child("speed").generator()
    factor = float(gen.choice(np.asarray(policy.speed_factors), p=np.asarray(policy.speed_probs)))
    feats = speed_perturb(utt.features, factor)
    feats = time_mask(feats, policy, rng.child("time"))
    feats = freq_mask(feats, policy, rng.child("freq"))
    scale = feats.shape[0] / utt.features.shape[0]
    return replace(utt, features=feats, duration_s=utt.duration_s * scale)
