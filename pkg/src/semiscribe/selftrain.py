"""Teacher training, pseudo-labeling, noisy-student retraining, and iteration.

The flow: train a supervised teacher on the labeled pool, decode the unlabeled
pool with the clean (un-augmented) teacher plus LM fusion to get pseudo labels,
then retrain a student from fresh initialization on both pools with noisy
augmentation applied to its inputs. Repeating the label/retrain cycle with the
improved student is one "generation".
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DatasetSplit, ValidationError, build_vocabulary, filter_by_duration
from .decode import NgramLM, beam_search, train_ngram_lm, write_decode_records
from .eval import word_error_rate
from .features import (AugmentationPolicy, RngStream, apply_noisy_augmentation,
                       default_augmentation_policy)
from .losses import (SELF_TRAIN, SUPERVISED, BatchItem, LossBreakdown, batch_loss,
                     ctc_min_frames)
from .model import (ModelConfig, TranscriberModel, checkpoint_id, init_model,
                    save_checkpoint)

logger = logging.getLogger(__name__)

TRAIN_LOG_HEADER = "#train-log v1\tepoch\tstep\tctc_s\ts2s_s\tctc_st\ts2s_st\tbeta\talpha\ttotal"
PSEUDO_HEADER = "#pseudo-labels v1"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 2
    beta: float = 0.2
    alpha: float = 1.0
    learning_rate: float = 3e-3
    lr_halve_patience: int = 2
    grad_clip: float = 5.0
    seed: int = 0
    sup_augmentation: AugmentationPolicy = field(default_factory=default_augmentation_policy)
    noisy_augmentation: AugmentationPolicy = field(default_factory=default_augmentation_policy)
    beam_size: int = 8
    lm_weight: float = 0.3
    max_utt_duration_s: float = 28.0
    encoder_layers: int = 1
    encoder_dim: int = 32
    decoder_dim: int = 32
    attention_dim: int = 16
    attention_conv_filters: int = 8
    attention_kernel: int = 9
    subsample: int = 2
    lm_order: int = 3
    lm_smoothing: float = 0.1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError("beta must be in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError("alpha must be in [0, 1]")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.grad_clip <= 0:
            raise ValidationError("grad_clip must be positive")
        if self.lr_halve_patience < 1:
            raise ValidationError("lr_halve_patience must be >= 1")
        if self.seed < 0:
            raise ValidationError("seed must be >= 0")
        if self.beam_size < 1:
            raise ValidationError("beam_size must be >= 1")
        if self.lm_weight < 0:
            raise ValidationError("lm_weight must be >= 0")
        if self.max_utt_duration_s <= 0:
            raise ValidationError("max_utt_duration_s must be positive")
        if self.lm_order < 1:
            raise ValidationError("lm_order must be >= 1")
        if self.lm_smoothing <= 0:
            raise ValidationError("lm_smoothing must be positive")


@dataclass(frozen=True)
class PseudoLabel:
    transcript: str
    score: float


@dataclass(eq=False)
class PseudoLabelSet:
    entries: dict[str, PseudoLabel]
    generation: int
    teacher_checkpoint: str
    dropped_empty: int = 0

    def __post_init__(self):
        if self.generation < 1:
            raise ValidationError("generation must be >= 1")
        for utt_id, entry in self.entries.items():
            if not entry.transcript:
                raise ValidationError(f"pseudo label for {utt_id!r} is empty")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class GenerationReport:
    generation: int
    dev_wer: float
    test_wer: float
    pseudo_label_count: int
    dropped_empty_count: int
    log_ref: str = ""

    def __post_init__(self):
        if self.dev_wer < 0 or self.test_wer < 0:
            raise ValidationError("WER values must be nonnegative")

    def to_dict(self) -> dict:
        return {"generation": self.generation, "dev_wer": self.dev_wer,
                "test_wer": self.test_wer, "pseudo_label_count": self.pseudo_label_count,
                "dropped_empty_count": self.dropped_empty_count, "log_ref": self.log_ref}


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    breakdown: LossBreakdown


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_total: float
    dev_wer: float
    learning_rate: float


@dataclass(eq=False)
class TrainingReport:
    steps: list[StepRecord] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_wer: float | None = None


class Adam:
    """Moment-based gradient descent; updates parameters in place."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale the whole gradient so its global L2 norm is at most `max_norm`."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def generation_seed(seed: int, generation: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(0xA11, generation))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def prepare_split(split: DatasetSplit, config: TrainConfig):
    """Duration filtering applied once at pipeline entry."""
    return filter_by_duration(split, config.max_utt_duration_s)


def model_config_for(split: DatasetSplit, config: TrainConfig,
                     seed: int | None = None) -> ModelConfig:
    if not split.labeled:
        raise ValidationError("labeled split is empty")
    vocab = build_vocabulary([u.transcript for u in split.labeled])
    return ModelConfig(
        vocab=vocab, input_channels=split.labeled[0].features.shape[1],
        encoder_layers=config.encoder_layers, encoder_dim=config.encoder_dim,
        decoder_dim=config.decoder_dim, attention_dim=config.attention_dim,
        attention_conv_filters=config.attention_conv_filters,
        attention_kernel=config.attention_kernel,
        subsample=config.subsample, seed=config.seed if seed is None else seed)


def fresh_student(model_config: ModelConfig, seed: int) -> TranscriberModel:
    return init_model(replace(model_config, seed=seed))


def build_lm(split: DatasetSplit, vocab, config: TrainConfig) -> NgramLM:
    """LM stand-in trained on the labeled transcripts."""
    return train_ngram_lm([u.transcript for u in split.labeled], config.lm_order,
                          config.lm_smoothing, charset=vocab.chars)


def _max_decode_len(num_frames: int, policy: AugmentationPolicy, subsample: int) -> int:
    """Character cap keeping CTC feasible after the worst-case speed-up."""
    factor = policy.max_speed_factor if policy.enabled else 1.0
    worst = int(np.round(num_frames / factor)) // subsample
    return max(1, (worst + 1) // 2)


def _check_feasible(utts, policy: AugmentationPolicy, model: TranscriberModel):
    factor = policy.max_speed_factor if policy.enabled else 1.0
    vocab = model.config.vocab
    for utt in utts:
        worst = int(np.round(utt.num_frames / factor)) // model.config.subsample
        needed = ctc_min_frames(vocab.encode(utt.transcript))
        if worst < needed:
            raise ValidationError(
                f"utterance {utt.id!r}: {utt.num_frames} frames shrink to {worst} under "
                f"the augmentation policy but its target needs {needed}"
            )


MONITOR_BEAM = 4


def _monitor_dev_wer(model: TranscriberModel, dev, config: TrainConfig) -> float:
    """Per-epoch checkpoint selection metric: narrow beam, no LM fusion.

    Kept deliberately cheap; reported dev/test WERs come from evaluate_model
    with the configured beam and LM."""
    vocab = model.config.vocab
    beam = min(MONITOR_BEAM, config.beam_size)
    refs, hyps = [], []
    for utt in dev:
        hyp = beam_search(model, utt.features, beam, lm=None)
        refs.append(utt.transcript)
        hyps.append(vocab.decode(hyp.tokens))
    return word_error_rate(refs, hyps).wer_percent


def _fit(model: TranscriberModel, labeled, pseudo_pool, dev, config: TrainConfig,
         labeled_policy: AugmentationPolicy, pseudo_policy: AugmentationPolicy | None):
    """Shared loop for supervised and semi-supervised training.

    The labeled stream's shuffling and augmentation draws are keyed only by
    (seed, utterance id, epoch), so two runs with the same seed walk the
    labeled pool identically whether or not a pseudo stream is attached.
    """
    work = model.copy()
    report = TrainingReport()
    if config.epochs == 0:
        return work, report
    if not dev:
        raise ValidationError("training needs a nonempty dev split for checkpoint selection")
    _check_feasible(labeled, labeled_policy, work)
    if pseudo_pool:
        _check_feasible(pseudo_pool, pseudo_policy, work)

    optimizer = Adam(work.params)
    lr = config.learning_rate
    lr_floor = config.learning_rate / 64.0
    best_params = work.copy().params
    best_wer: float | None = None
    best_epoch = 0
    plateau = 0
    pseudo_order: list[int] = []
    pseudo_pos = 0
    pseudo_wraps = 0
    global_step = 0

    for epoch in range(1, config.epochs + 1):
        order = RngStream(config.seed, f"labeled-order/{epoch}").generator().permutation(len(labeled))
        totals = []
        for start in range(0, len(order), config.batch_size):
            items = []
            for idx in order[start:start + config.batch_size]:
                utt = labeled[int(idx)]
                noised = apply_noisy_augmentation(
                    utt, labeled_policy, RngStream(config.seed, f"augment/{utt.id}/{epoch}"))
                items.append(BatchItem(noised, SUPERVISED))
            if pseudo_pool:
                for _ in range(config.batch_size):
                    if pseudo_pos >= len(pseudo_order):
                        gen = RngStream(config.seed, f"pseudo-order/{pseudo_wraps}").generator()
                        pseudo_order = list(gen.permutation(len(pseudo_pool)))
                        pseudo_pos = 0
                        pseudo_wraps += 1
                    utt = pseudo_pool[pseudo_order[pseudo_pos]]
                    pseudo_pos += 1
                    noised = apply_noisy_augmentation(
                        utt, pseudo_policy, RngStream(config.seed, f"augment/{utt.id}/{epoch}"))
                    items.append(BatchItem(noised, SELF_TRAIN))
            breakdown, grads = batch_loss(work, items, config.beta, config.alpha)
            clip_gradients(grads, config.grad_clip)
            optimizer.step(work.params, grads, lr)
            global_step += 1
            report.steps.append(StepRecord(epoch=epoch, step=global_step, breakdown=breakdown))
            totals.append(breakdown.total)
        dev_wer = _monitor_dev_wer(work, dev, config)
        report.epochs.append(EpochRecord(epoch=epoch, mean_total=float(np.mean(totals)),
                                         dev_wer=dev_wer, learning_rate=lr))
        logger.info("epoch %d: mean loss %.4f, dev WER %.2f%%, lr %.2g",
                    epoch, float(np.mean(totals)), dev_wer, lr)
        if best_wer is None or dev_wer < best_wer:
            best_wer = dev_wer
            best_epoch = epoch
            best_params = work.copy().params
            plateau = 0
        else:
            plateau += 1
            if plateau >= config.lr_halve_patience:
                lr = max(lr / 2.0, lr_floor)
                plateau = 0
    report.best_epoch = best_epoch
    report.best_dev_wer = best_wer
    return TranscriberModel(params=best_params, config=work.config), report


def train_supervised(split: DatasetSplit, config: TrainConfig):
    """Teacher training on the labeled pool; returns (best model, report)."""
    if not split.labeled:
        raise ValidationError("labeled split is empty")
    model = init_model(model_config_for(split, config))
    return _fit(model, split.labeled, None, split.dev, config,
                labeled_policy=config.sup_augmentation, pseudo_policy=None)


def pseudo_label(teacher: TranscriberModel, unlabeled, lm: NgramLM | None,
                 config: TrainConfig, generation: int = 1) -> PseudoLabelSet:
    """Decode the unlabeled pool with the clean teacher and LM fusion.

    The teacher sees raw features: no augmentation call happens on this path.
    Empty decodes are dropped and counted. Hypothesis lengths are capped so the
    resulting targets stay CTC-feasible under the student's worst-case speed-up.
    """
    unlabeled = list(unlabeled)
    if not unlabeled:
        raise ValidationError("unlabeled pool is empty")
    vocab = teacher.config.vocab
    entries: dict[str, PseudoLabel] = {}
    dropped = 0
    for utt in unlabeled:
        cap = _max_decode_len(utt.num_frames, config.noisy_augmentation,
                              teacher.config.subsample)
        hyp = beam_search(teacher, utt.features, config.beam_size, lm=lm,
                          lm_weight=config.lm_weight, max_len=cap)
        text = vocab.decode(hyp.tokens)
        if not text:
            dropped += 1
            continue
        entries[utt.id] = PseudoLabel(transcript=text, score=hyp.score)
    return PseudoLabelSet(entries=entries, generation=generation,
                          teacher_checkpoint=checkpoint_id(teacher), dropped_empty=dropped)


def train_semi(init: TranscriberModel, split: DatasetSplit, pseudo: PseudoLabelSet,
               config: TrainConfig):
    """Noisy-student training on true labels plus pseudo labels (both augmented)."""
    if not split.labeled:
        raise ValidationError("labeled split is empty")
    unlabeled_ids = {u.id for u in split.unlabeled}
    unknown = set(pseudo.entries) - unlabeled_ids
    if unknown:
        raise ValidationError(f"pseudo labels for ids outside the unlabeled split: {sorted(unknown)}")
    pseudo_pool = [replace(u, transcript=pseudo.entries[u.id].transcript)
                   for u in split.unlabeled if u.id in pseudo.entries]
    if not pseudo_pool:
        warnings.warn("pseudo-label set is empty; falling back to supervised training",
                      stacklevel=2)
        return _fit(init, split.labeled, None, split.dev, config,
                    labeled_policy=config.noisy_augmentation, pseudo_policy=None)
    return _fit(init, split.labeled, pseudo_pool, split.dev, config,
                labeled_policy=config.noisy_augmentation,
                pseudo_policy=config.noisy_augmentation)


def evaluate_model(model: TranscriberModel, utts, lm: NgramLM | None,
                   config: TrainConfig):
    """Beam + LM decoding of a transcribed split; returns (WERReport, records)."""
    utts = list(utts)
    if not utts:
        raise ValidationError("nothing to evaluate")
    vocab = model.config.vocab
    refs, hyps, records = [], [], []
    for utt in utts:
        hyp = beam_search(model, utt.features, config.beam_size, lm=lm,
                          lm_weight=config.lm_weight)
        text = vocab.decode(hyp.tokens)
        refs.append(utt.transcript)
        hyps.append(text)
        records.append((utt.id, text, hyp))
    return word_error_rate(refs, hyps), records


def write_training_log(path, steps) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [TRAIN_LOG_HEADER]
    for rec in steps:
        b = rec.breakdown
        lines.append("\t".join([str(rec.epoch), str(rec.step), repr(b.ctc_s), repr(b.s2s_s),
                                repr(b.ctc_st), repr(b.s2s_st), repr(b.beta), repr(b.alpha),
                                repr(b.total)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_pseudo_labels(pseudo: PseudoLabelSet, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [PSEUDO_HEADER,
             f"#generation\t{pseudo.generation}",
             f"#teacher\t{pseudo.teacher_checkpoint}",
             f"#dropped-empty\t{pseudo.dropped_empty}"]
    for utt_id, entry in pseudo.entries.items():
        lines.append(f"{utt_id}\t{entry.transcript}\t{entry.score!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_pseudo_labels(path) -> PseudoLabelSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != PSEUDO_HEADER:
        raise ValidationError(f"{path}: missing header {PSEUDO_HEADER!r}")
    meta = {}
    entries: dict[str, PseudoLabel] = {}
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].partition("\t")
            meta[key] = value
            continue
        utt_id, transcript, score = line.split("\t")
        entries[utt_id] = PseudoLabel(transcript=transcript, score=float(score))
    return PseudoLabelSet(entries=entries, generation=int(meta["generation"]),
                          teacher_checkpoint=meta["teacher"],
                          dropped_empty=int(meta["dropped-empty"]))


def self_training_iterations(split: DatasetSplit, n_generations: int,
                             config: TrainConfig, out_dir=None):
    """Run generation 0 (teacher) plus `n_generations` label/retrain cycles.

    Every generation's student starts from a fresh seed-derived initialization
    rather than the previous checkpoint. Returns the model with the best dev
    WER across generations and one report per generation.
    """
    if n_generations < 1:
        raise ValidationError("n_generations must be >= 1")
    out_dir = Path(out_dir) if out_dir is not None else None
    filtered, removed = prepare_split(split, config)
    if any(removed.values()):
        logger.info("duration filter removed %s", removed)

    teacher, teacher_report = train_supervised(filtered, config)
    vocab = teacher.config.vocab
    lm = build_lm(filtered, vocab, config)

    models = [teacher]
    fit_reports = [teacher_report]
    reports: list[GenerationReport] = []

    def finish_generation(generation, model, fit_report, pseudo):
        dev, dev_records = evaluate_model(model, filtered.dev, lm, config)
        test, test_records = evaluate_model(model, filtered.test, lm, config)
        log_ref = ""
        if out_dir is not None:
            gen_dir = out_dir / f"g{generation}"
            gen_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, gen_dir / "checkpoint.npz")
            write_training_log(gen_dir / "train_log.tsv", fit_report.steps)
            log_ref = f"g{generation}/train_log.tsv"
            if pseudo is not None:
                write_pseudo_labels(pseudo, gen_dir / "pseudo_labels.tsv")
            write_decode_records(gen_dir / "decodes_dev.tsv", dev_records)
            write_decode_records(gen_dir / "decodes_test.tsv", test_records)
        report = GenerationReport(
            generation=generation, dev_wer=dev.wer_percent, test_wer=test.wer_percent,
            pseudo_label_count=len(pseudo) if pseudo else 0,
            dropped_empty_count=pseudo.dropped_empty if pseudo else 0,
            log_ref=log_ref)
        if out_dir is not None:
            (out_dir / f"g{generation}" / "report.json").write_text(
                json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
                encoding="utf-8")
        reports.append(report)

    finish_generation(0, teacher, teacher_report, None)
    for generation in range(1, n_generations + 1):
        pseudo = pseudo_label(models[-1], filtered.unlabeled, lm, config,
                              generation=generation)
        init = fresh_student(teacher.config, generation_seed(config.seed, generation))
        student, student_report = train_semi(init, filtered, pseudo, config)
        models.append(student)
        fit_reports.append(student_report)
        finish_generation(generation, student, student_report, pseudo)
        logger.info("generation %d: dev WER %.2f%%, test WER %.2f%%",
                    generation, reports[-1].dev_wer, reports[-1].test_wer)

    best_idx = min(range(len(reports)), key=lambda i: (reports[i].dev_wer, i))
    return models[best_idx], reports
