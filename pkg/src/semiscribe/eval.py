"""Word error rate and the experiment runners (alpha sweep, ablation table)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data import DatasetSplit, ValidationError


@dataclass(frozen=True)
class WERReport:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int
    wer_percent: float

    @classmethod
    def from_counts(cls, substitutions: int, deletions: int, insertions: int,
                    ref_words: int) -> "WERReport":
        if ref_words < 1:
            raise ValidationError("a WER report needs at least one reference word")
        if min(substitutions, deletions, insertions) < 0:
            raise ValidationError("error counts must be nonnegative")
        wer = 100.0 * (substitutions + deletions + insertions) / ref_words
        return cls(substitutions=substitutions, deletions=deletions,
                   insertions=insertions, ref_words=ref_words, wer_percent=wer)

    def to_dict(self) -> dict:
        return {"substitutions": self.substitutions, "deletions": self.deletions,
                "insertions": self.insertions, "ref_words": self.ref_words,
                "wer_percent": self.wer_percent}


def _edit_counts(ref: list[str], hyp: list[str]) -> tuple[int, int, int]:
    """Unit-cost word alignment; ties prefer substitution, then insertion, then deletion."""
    R, H = len(ref), len(hyp)
    d = np.zeros((R + 1, H + 1), dtype=np.int64)
    d[:, 0] = np.arange(R + 1)
    d[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i, j - 1] + 1, d[i - 1, j] + 1)
    subs = dels = ins = 0
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return int(subs), int(dels), int(ins)


def word_error_rate(refs, hyps) -> WERReport:
    """Corpus-level WER: error counts pooled over utterances before dividing."""
    refs = list(refs)
    hyps = list(hyps)
    if len(refs) != len(hyps):
        raise ValidationError(
            f"got {len(refs)} references but {len(hyps)} hypotheses"
        )
    total_s = total_d = total_i = total_words = 0
    for idx, (ref, hyp) in enumerate(zip(refs, hyps)):
        ref_words = ref.split()
        if not ref_words:
            raise ValidationError(f"reference {idx} is empty after word splitting")
        s, d, i = _edit_counts(ref_words, hyp.split())
        total_s += s
        total_d += d
        total_i += i
        total_words += len(ref_words)
    return WERReport.from_counts(total_s, total_d, total_i, total_words)


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlphaSweepRow:
    alpha: float
    dev_wer: float


@dataclass(frozen=True)
class AlphaSweepResult:
    rows: tuple[AlphaSweepRow, ...]
    best_alpha: float


@dataclass(frozen=True)
class AblationRow:
    variant: str
    dev_wer: float
    test_wer: float


def alpha_sweep(split: DatasetSplit, alphas, config, out_dir=None) -> AlphaSweepResult:
    """One student run per alpha against a shared teacher and pseudo-label set.

    Students reuse the teacher's initialization seed, so with matching
    augmentation policies the alpha=0 row reproduces the supervised baseline.
    With `out_dir` set, each run's step-level loss log is written to
    `alpha_<value>/train_log.tsv`.
    """
    from pathlib import Path

    from . import selftrain

    alphas = list(alphas)
    if not alphas:
        raise ValidationError("alphas must be nonempty")
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ValidationError(f"alpha must be in [0, 1], got {a}")
    unique = sorted(set(alphas))
    if len(unique) != len(alphas):
        warnings.warn("duplicate alpha values were deduplicated", stacklevel=2)

    filtered, _ = selftrain.prepare_split(split, config)
    teacher, teacher_report = selftrain.train_supervised(filtered, config)
    lm = selftrain.build_lm(filtered, teacher.config.vocab, config)
    pseudo = selftrain.pseudo_label(teacher, filtered.unlabeled, lm, config)
    if out_dir is not None:
        selftrain.write_training_log(Path(out_dir) / "teacher" / "train_log.tsv",
                                     teacher_report.steps)

    rows = []
    for a in unique:
        student_config = replace(config, alpha=a)
        init = selftrain.fresh_student(teacher.config, config.seed)
        student, fit_report = selftrain.train_semi(init, filtered, pseudo, student_config)
        report, _ = selftrain.evaluate_model(student, filtered.dev, lm, config)
        if out_dir is not None:
            selftrain.write_training_log(Path(out_dir) / f"alpha_{a:g}" / "train_log.tsv",
                                         fit_report.steps)
        rows.append(AlphaSweepRow(alpha=a, dev_wer=report.wer_percent))
    best = min(rows, key=lambda r: (r.dev_wer, r.alpha))
    return AlphaSweepResult(rows=tuple(rows), best_alpha=best.alpha)


ABLATION_VARIANTS = ("full", "-iteration", "-iteration-noisyaug",
                     "-selftrain", "-selftrain-supaug")


def ablation_run(split: DatasetSplit, config, out_dir=None) -> tuple[AblationRow, ...]:
    """Five-variant component-removal table, sharing runs where definitions allow.

    full: two self-training generations; -iteration: one generation;
    -iteration-noisyaug: one generation, student trained on clean features;
    -selftrain: the supervised teacher; -selftrain-supaug: supervised with
    augmentation off. With `out_dir` set, each variant's step-level loss log
    goes to `<variant>/train_log.tsv`.
    """
    from pathlib import Path

    from . import selftrain
    from .features import disabled_augmentation_policy

    filtered, _ = selftrain.prepare_split(split, config)
    teacher, teacher_report = selftrain.train_supervised(filtered, config)
    vocab = teacher.config.vocab
    lm = selftrain.build_lm(filtered, vocab, config)

    pseudo1 = selftrain.pseudo_label(teacher, filtered.unlabeled, lm, config, generation=1)
    init1 = selftrain.fresh_student(teacher.config, selftrain.generation_seed(config.seed, 1))
    student1, student1_report = selftrain.train_semi(init1.copy(), filtered, pseudo1, config)

    pseudo2 = selftrain.pseudo_label(student1, filtered.unlabeled, lm, config, generation=2)
    init2 = selftrain.fresh_student(teacher.config, selftrain.generation_seed(config.seed, 2))
    student2, student2_report = selftrain.train_semi(init2, filtered, pseudo2, config)

    clean_config = replace(config, noisy_augmentation=disabled_augmentation_policy())
    student1_clean, clean_report = selftrain.train_semi(init1.copy(), filtered, pseudo1,
                                                        clean_config)

    plain_config = replace(config, sup_augmentation=disabled_augmentation_policy())
    teacher_plain, plain_report = selftrain.train_supervised(filtered, plain_config)

    if out_dir is not None:
        logs = {"full": student2_report, "-iteration": student1_report,
                "-iteration-noisyaug": clean_report, "-selftrain": teacher_report,
                "-selftrain-supaug": plain_report}
        for variant, fit_report in logs.items():
            selftrain.write_training_log(
                Path(out_dir) / variant.lstrip("-") / "train_log.tsv", fit_report.steps)

    def wer_pair(model):
        dev, _ = selftrain.evaluate_model(model, filtered.dev, lm, config)
        test, _ = selftrain.evaluate_model(model, filtered.test, lm, config)
        return dev.wer_percent, test.wer_percent

    results = {
        "full": wer_pair(student2),
        "-iteration": wer_pair(student1),
        "-iteration-noisyaug": wer_pair(student1_clean),
        "-selftrain": wer_pair(teacher),
        "-selftrain-supaug": wer_pair(teacher_plain),
    }
    return tuple(AblationRow(variant=v, dev_wer=results[v][0], test_wer=results[v][1])
                 for v in ABLATION_VARIANTS)


def format_alpha_table(result: AlphaSweepResult, config_digest: str = "") -> str:
    lines = [f"alpha sweep (dev WER%){'  config=' + config_digest if config_digest else ''}",
             f"{'alpha':>8}  {'dev_wer':>8}"]
    for row in result.rows:
        marker = "  <- best" if row.alpha == result.best_alpha else ""
        lines.append(f"{row.alpha:>8.3g}  {row.dev_wer:>8.2f}{marker}")
    return "\n".join(lines)


def format_ablation_table(rows, config_digest: str = "") -> str:
    lines = [f"ablation (WER%){'  config=' + config_digest if config_digest else ''}",
             f"{'variant':<22}  {'dev':>8}  {'test':>8}"]
    for row in rows:
        lines.append(f"{row.variant:<22}  {row.dev_wer:>8.2f}  {row.test_wer:>8.2f}")
    return "\n".join(lines)
