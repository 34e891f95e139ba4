"""Corpus plumbing: manifests, splits, vocabularies, synthetic corpus generation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

MANIFEST_HEADER = "#utterance-manifest v1"
REFERENCES_HEADER = "#utterance-references v1"

# Nominal wall-clock length of one synthetic feature frame.
FRAME_SECONDS = 0.02

# Universal token indexing for the synthetic corpus: the prototype channel of a
# character depends only on the character itself, so a manifest record can be
# regenerated without knowing the rest of the corpus.
TOY_ALPHABET = " abcdefghijklmnopqrstuvwxyz'"

_DISALLOWED = re.compile(r"[^a-z' ]")
_ROLES = ("labeled", "unlabeled", "dev", "test")


class ManifestError(ValueError):
    """Malformed manifest file (bad header, field count, or field value)."""


class ValidationError(ValueError):
    """A corpus invariant was violated."""


def normalize_transcript(text: str) -> str:
    """Lowercase, keep letters/space/apostrophe, collapse whitespace runs."""
    text = _DISALLOWED.sub("", text.lower().replace("\t", " "))
    return " ".join(text.split())


@dataclass(eq=False)
class Utterance:
    """One audio-like example. `source` records how features can be rebuilt."""

    id: str
    duration_s: float
    features: np.ndarray | None = None
    samples: np.ndarray | None = None
    transcript: str | None = None
    source: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("utterance id must be nonempty")
        if not self.duration_s > 0:
            raise ValidationError(f"utterance {self.id!r}: duration_s must be > 0")
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
                raise ValidationError(
                    f"utterance {self.id!r}: features must be a (frames x channels) "
                    f"matrix with both dims >= 1, got shape {feats.shape}"
                )
            self.features = feats
        if self.samples is not None:
            self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def num_frames(self) -> int:
        if self.features is None:
            raise ValidationError(f"utterance {self.id!r} has no features")
        return self.features.shape[0]


class DatasetSplit:
    """Labeled/unlabeled/dev/test partition of a corpus.

    Gold transcripts of unlabeled utterances, when known (synthetic corpora),
    are reachable only through :meth:`unlabeled_reference`. Training code must
    never call it; tests watch :attr:`reference_read_count` to enforce that.
    """

    def __init__(self, labeled=(), unlabeled=(), dev=(), test=(),
                 unlabeled_references: dict[str, str] | None = None):
        self.labeled: list[Utterance] = list(labeled)
        self.unlabeled: list[Utterance] = list(unlabeled)
        self.dev: list[Utterance] = list(dev)
        self.test: list[Utterance] = list(test)
        self._unlabeled_references = dict(unlabeled_references or {})
        self._reference_reads = 0
        self._validate()

    def _validate(self):
        for role in _ROLES:
            utts = getattr(self, role)
            ids = [u.id for u in utts]
            if len(set(ids)) != len(ids):
                dup = next(i for i in ids if ids.count(i) > 1)
                raise ValidationError(f"duplicate utterance id {dup!r} in {role} split")
        overlap = {u.id for u in self.labeled} & {u.id for u in self.unlabeled}
        if overlap:
            raise ValidationError(
                f"ids present in both labeled and unlabeled splits: {sorted(overlap)}"
            )
        for role in ("labeled", "dev", "test"):
            for utt in getattr(self, role):
                if not utt.transcript:
                    raise ValidationError(
                        f"{role} utterance {utt.id!r} must have a nonempty transcript"
                    )
        for utt in self.unlabeled:
            if utt.transcript is not None:
                raise ValidationError(
                    f"unlabeled utterance {utt.id!r} must not carry a transcript; "
                    "hidden references go in unlabeled_references"
                )
        unknown = set(self._unlabeled_references) - {u.id for u in self.unlabeled}
        if unknown:
            raise ValidationError(
                f"unlabeled references for unknown ids: {sorted(unknown)}"
            )

    def unlabeled_reference(self, utt_id: str) -> str:
        """Evaluation-only accessor for the hidden gold transcript."""
        self._reference_reads += 1
        return self._unlabeled_references[utt_id]

    def has_unlabeled_references(self) -> bool:
        return bool(self._unlabeled_references)

    @property
    def reference_read_count(self) -> int:
        return self._reference_reads

    def counts(self) -> dict[str, int]:
        return {role: len(getattr(self, role)) for role in _ROLES}


@dataclass(frozen=True)
class Vocabulary:
    """Character inventory plus eos/blank/sos/pad specials.

    Index layout: characters occupy [0, C), then eos=C, blank=C+1, sos=C+2,
    pad=C+3. Keeping eos right after the characters makes the decoder output
    head a contiguous prefix (chars + eos) of the id space.
    """

    chars: tuple[str, ...]

    def __post_init__(self):
        if not self.chars:
            raise ValidationError("vocabulary needs at least one character")
        if len(set(self.chars)) != len(self.chars):
            raise ValidationError("vocabulary characters must be unique")
        for ch in self.chars:
            if len(ch) != 1:
                raise ValidationError(f"vocabulary entries must be single characters, got {ch!r}")

    @property
    def num_chars(self) -> int:
        return len(self.chars)

    @property
    def eos_id(self) -> int:
        return len(self.chars)

    @property
    def blank_id(self) -> int:
        return len(self.chars) + 1

    @property
    def sos_id(self) -> int:
        return len(self.chars) + 2

    @property
    def pad_id(self) -> int:
        return len(self.chars) + 3

    @property
    def size(self) -> int:
        """Total id count: characters plus the four specials."""
        return len(self.chars) + 4

    @property
    def decoder_width(self) -> int:
        """Width of the attention-decoder output: characters plus eos."""
        return len(self.chars) + 1

    @cached_property
    def _char_to_id(self) -> dict[str, int]:
        return {ch: i for i, ch in enumerate(self.chars)}

    def encode(self, text: str) -> np.ndarray:
        try:
            return np.array([self._char_to_id[ch] for ch in text], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"character {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < self.num_chars:
                raise ValidationError(f"id {i} is not a character id")
            out.append(self.chars[i])
        return "".join(out)

    def to_json(self) -> str:
        return json.dumps({"format": "vocabulary", "version": 1, "chars": list(self.chars)},
                          sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        if obj.get("format") != "vocabulary" or obj.get("version") != 1:
            raise ValidationError("unrecognized vocabulary serialization")
        return cls(chars=tuple(obj["chars"]))


def build_vocabulary(transcripts) -> Vocabulary:
    """Character vocabulary over everything appearing in `transcripts`."""
    transcripts = list(transcripts)
    if not transcripts:
        raise ValidationError("cannot build a vocabulary from an empty transcript list")
    chars = sorted(set("".join(transcripts)))
    if not chars:
        raise ValidationError("transcripts contain no characters")
    return Vocabulary(chars=tuple(chars))


# ---------------------------------------------------------------------------
# Manifest I/O
#
# Line-delimited UTF-8, tab-separated fields:
#   id  role  duration_s  features  transcript
# `features` is "-" (absent), a relative "*.npy" path, "archive.npz#key", or
# an inline synthetic spec "toy:v1;channels=..;mean=..;jitter=..;noise=..;
# seed=..;text=..". Hidden gold transcripts for unlabeled utterances live in a
# sidecar "<stem>.refs.tsv" next to the manifest.
# ---------------------------------------------------------------------------

def _parse_toy_source(spec: str, line_no: int) -> np.ndarray:
    body = spec[len("toy:"):]
    parts = body.split(";")
    if not parts or parts[0] != "v1":
        raise ManifestError(f"line {line_no}: unsupported synthetic spec version in {spec!r}")
    fields: dict[str, str] = {}
    for part in parts[1:]:
        key, sep, value = part.partition("=")
        if not sep:
            raise ManifestError(f"line {line_no}: bad synthetic spec field {part!r}")
        fields[key] = value
    try:
        channels = int(fields["channels"])
        mean = int(fields["mean"])
        jitter = int(fields["jitter"])
        noise = float(fields["noise"])
        seed = int(fields["seed"])
        text = fields["text"]
    except KeyError as exc:
        raise ManifestError(f"line {line_no}: synthetic spec missing field {exc.args[0]!r}") from None
    except ValueError:
        raise ManifestError(f"line {line_no}: unparseable synthetic spec {spec!r}") from None
    return synthesize_token_features(text, channels, mean, jitter, noise,
                                     np.random.default_rng(seed))


def _resolve_features(spec: str, base_dir: Path, npz_cache: dict, line_no: int):
    if spec == "-":
        return None
    if spec.startswith("toy:"):
        return _parse_toy_source(spec, line_no)
    if "#" in spec:
        archive, _, key = spec.partition("#")
        path = base_dir / archive
        if path not in npz_cache:
            try:
                npz_cache[path] = np.load(path)
            except FileNotFoundError:
                raise ManifestError(f"line {line_no}: feature archive {archive!r} not found") from None
        archive_data = npz_cache[path]
        if key not in archive_data:
            raise ManifestError(f"line {line_no}: key {key!r} missing from {archive!r}")
        return archive_data[key]
    if spec.endswith(".npy"):
        try:
            return np.load(base_dir / spec)
        except FileNotFoundError:
            raise ManifestError(f"line {line_no}: feature file {spec!r} not found") from None
    raise ManifestError(f"line {line_no}: unrecognized feature source {spec!r}")


def _load_references(path: Path) -> dict[str, str]:
    refs: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != REFERENCES_HEADER:
        raise ManifestError(f"{path}: missing references header {REFERENCES_HEADER!r}")
    for n, line in enumerate(lines[1:], start=2):
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ManifestError(f"{path} line {n}: expected 2 fields, got {len(parts)}")
        refs[parts[0]] = parts[1]
    return refs


def references_path_for(manifest_path) -> Path:
    path = Path(manifest_path)
    return path.with_name(path.stem + ".refs" + path.suffix)


def load_manifest(path) -> DatasetSplit:
    """Read a v1 manifest (and its references sidecar if present)."""
    path = Path(path)
    base_dir = path.parent
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ManifestError(f"{path}: line 1: expected header {MANIFEST_HEADER!r}")

    by_role: dict[str, list[Utterance]] = {role: [] for role in _ROLES}
    seen: dict[str, str] = {}
    npz_cache: dict = {}
    for n, line in enumerate(lines[1:], start=2):
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ManifestError(f"{path}: line {n}: expected 5 tab-separated fields, got {len(parts)}")
        utt_id, role, duration_text, feature_spec, transcript = parts
        if role not in _ROLES:
            raise ManifestError(f"{path}: line {n}: unknown role {role!r}")
        try:
            duration = float(duration_text)
        except ValueError:
            raise ManifestError(f"{path}: line {n}: bad duration {duration_text!r}") from None
        if utt_id in seen:
            if {seen[utt_id], role} == {"labeled", "unlabeled"}:
                raise ValidationError(
                    f"id {utt_id!r} appears as both labeled and unlabeled (line {n})"
                )
            raise ValidationError(f"duplicate utterance id {utt_id!r} (line {n})")
        seen[utt_id] = role
        features = _resolve_features(feature_spec, base_dir, npz_cache, n)
        text = normalize_transcript(transcript) if transcript else ""
        if role == "unlabeled":
            if text:
                raise ValidationError(
                    f"unlabeled utterance {utt_id!r} carries a transcript (line {n})"
                )
            text = None
        elif not text:
            raise ValidationError(f"{role} utterance {utt_id!r} has an empty transcript (line {n})")
        by_role[role].append(Utterance(
            id=utt_id, duration_s=duration, features=features,
            transcript=text if text else None,
            source=feature_spec if feature_spec != "-" else None,
        ))

    refs_path = references_path_for(path)
    references = _load_references(refs_path) if refs_path.exists() else None
    return DatasetSplit(labeled=by_role["labeled"], unlabeled=by_role["unlabeled"],
                        dev=by_role["dev"], test=by_role["test"],
                        unlabeled_references=references)


def write_manifest(split: DatasetSplit, path) -> None:
    """Write `split` as a v1 manifest plus references sidecar.

    Utterances that carry a `source` spec are written by reference; anything
    else has its features stored in a sibling `<stem>_features.npz` archive.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    archive: dict[str, np.ndarray] = {}
    archive_name = path.stem + "_features.npz"
    rows = []
    for role in _ROLES:
        for utt in getattr(split, role):
            if utt.source:
                spec = utt.source
            elif utt.features is not None:
                archive[utt.id] = utt.features
                spec = f"{archive_name}#{utt.id}"
            else:
                spec = "-"
            rows.append("\t".join([
                utt.id, role, repr(float(utt.duration_s)), spec, utt.transcript or "",
            ]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        fh.write("\n".join(rows) + ("\n" if rows else ""))
    if archive:
        np.savez(path.parent / archive_name, **archive)
    if split.has_unlabeled_references():
        refs = split._unlabeled_references
        with open(references_path_for(path), "w", encoding="utf-8") as fh:
            fh.write(REFERENCES_HEADER + "\n")
            for utt in split.unlabeled:
                if utt.id in refs:
                    fh.write(f"{utt.id}\t{refs[utt.id]}\n")


def filter_by_duration(split: DatasetSplit, max_duration_s: float):
    """Drop utterances longer than `max_duration_s` (boundary kept).

    Returns (filtered split, removed counts per split). Survivor order is
    preserved, as are hidden references of surviving unlabeled utterances.
    """
    if not max_duration_s > 0:
        raise ValidationError("max_duration_s must be > 0")
    kept: dict[str, list[Utterance]] = {}
    removed: dict[str, int] = {}
    for role in _ROLES:
        utts = getattr(split, role)
        kept[role] = [u for u in utts if u.duration_s <= max_duration_s]
        removed[role] = len(utts) - len(kept[role])
    surviving_ids = {u.id for u in kept["unlabeled"]}
    references = {k: v for k, v in split._unlabeled_references.items() if k in surviving_ids}
    filtered = DatasetSplit(labeled=kept["labeled"], unlabeled=kept["unlabeled"],
                            dev=kept["dev"], test=kept["test"],
                            unlabeled_references=references)
    return filtered, removed


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyCorpusConfig:
    """Knobs for the deterministic synthetic corpus."""

    vocab_size: int = 8
    num_channels: int = 12
    frames_per_token_mean: int = 6
    frames_per_token_jitter: int = 2
    noise_std: float = 0.3
    transcript_length_range: tuple[int, int] = (6, 14)
    num_labeled: int = 20
    num_unlabeled: int = 80
    num_dev: int = 10
    num_test: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.vocab_size <= 26:
            raise ValidationError("vocab_size must be in [1, 26]")
        if self.num_channels < 1:
            raise ValidationError("num_channels must be >= 1")
        if self.frames_per_token_mean < 1:
            raise ValidationError("frames_per_token_mean must be >= 1")
        if not 0 <= self.frames_per_token_jitter < self.frames_per_token_mean:
            raise ValidationError("jitter must satisfy 0 <= jitter < frames_per_token_mean")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        lo, hi = self.transcript_length_range
        if not 1 <= lo <= hi:
            raise ValidationError("transcript_length_range must satisfy 1 <= lo <= hi")
        for name in ("num_labeled", "num_unlabeled", "num_dev", "num_test"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.seed < 0:
            raise ValidationError("seed must be >= 0")

    @property
    def letters(self) -> str:
        return TOY_ALPHABET[1:1 + self.vocab_size]


def synthesize_token_features(text: str, num_channels: int, mean_frames: int,
                              jitter: int, noise_std: float,
                              rng: np.random.Generator) -> np.ndarray:
    """Concatenate per-character prototype blocks, then add Gaussian noise.

    Character c lights channel (TOY_ALPHABET.index(c) mod num_channels) with
    amplitude 1 for a jittered number of frames.
    """
    if not text:
        raise ValidationError("cannot synthesize features for empty text")
    blocks = []
    for ch in text:
        try:
            token = TOY_ALPHABET.index(ch)
        except ValueError:
            raise ValidationError(f"character {ch!r} outside the synthetic alphabet") from None
        length = mean_frames + (int(rng.integers(-jitter, jitter + 1)) if jitter else 0)
        block = np.zeros((length, num_channels))
        block[:, token % num_channels] = 1.0
        blocks.append(block)
    feats = np.concatenate(blocks, axis=0)
    feats += noise_std * rng.standard_normal(feats.shape)
    return feats


def _toy_transcript(rng: np.random.Generator, letters: str, lo: int, hi: int) -> str:
    target = int(rng.integers(lo, hi + 1))
    words = []
    budget = target
    while budget > 0:
        wlen = min(budget, int(rng.integers(1, 4)))
        words.append("".join(letters[int(i)] for i in rng.integers(0, len(letters), wlen)))
        budget -= wlen + 1
    return " ".join(words)


def _utterance_seeds(seed: int, role_idx: int, utt_idx: int) -> tuple[int, int]:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(role_idx, utt_idx))
    text_seed, feat_seed = ss.generate_state(2, dtype=np.uint64)
    return int(text_seed), int(feat_seed)


def generate_toy_corpus(config: ToyCorpusConfig) -> DatasetSplit:
    """Deterministic synthetic corpus; unlabeled gold goes to the hidden accessor."""
    prefixes = {"labeled": "lab", "unlabeled": "unl", "dev": "dev", "test": "tst"}
    counts = {"labeled": config.num_labeled, "unlabeled": config.num_unlabeled,
              "dev": config.num_dev, "test": config.num_test}
    by_role: dict[str, list[Utterance]] = {role: [] for role in _ROLES}
    references: dict[str, str] = {}
    for role_idx, role in enumerate(_ROLES):
        for utt_idx in range(counts[role]):
            text_seed, feat_seed = _utterance_seeds(config.seed, role_idx, utt_idx)
            lo, hi = config.transcript_length_range
            text = _toy_transcript(np.random.default_rng(text_seed), config.letters, lo, hi)
            feats = synthesize_token_features(
                text, config.num_channels, config.frames_per_token_mean,
                config.frames_per_token_jitter, config.noise_std,
                np.random.default_rng(feat_seed))
            source = (
                f"toy:v1;channels={config.num_channels};mean={config.frames_per_token_mean};"
                f"jitter={config.frames_per_token_jitter};noise={config.noise_std!r};"
                f"seed={feat_seed};text={text}"
            )
            utt_id = f"{prefixes[role]}-{utt_idx:05d}"
            unlabeled = role == "unlabeled"
            by_role[role].append(Utterance(
                id=utt_id, duration_s=feats.shape[0] * FRAME_SECONDS, features=feats,
                transcript=None if unlabeled else text, source=source,
            ))
            if unlabeled:
                references[utt_id] = text
    return DatasetSplit(labeled=by_role["labeled"], unlabeled=by_role["unlabeled"],
                        dev=by_role["dev"], test=by_role["test"],
                        unlabeled_references=references)
