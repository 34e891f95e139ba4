"""Command-line entry points: generate | train-supervised | selftrain | evaluate
| sweep-alpha | ablate.

All commands read one JSON experiment config (see README for the schema) and
accept a few overrides. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .data import (DatasetSplit, ToyCorpusConfig, ValidationError, generate_toy_corpus,
                   load_manifest, write_manifest)
from .eval import ablation_run, alpha_sweep, format_ablation_table, format_alpha_table
from .features import AugmentationPolicy
from .model import load_checkpoint, save_checkpoint
from .selftrain import (TrainConfig, build_lm, evaluate_model, prepare_split,
                        self_training_iterations, train_supervised, write_training_log)

logger = logging.getLogger(__name__)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str
    train: TrainConfig
    manifest: str | None = None
    toy_corpus: ToyCorpusConfig | None = None

    def __post_init__(self):
        if (self.manifest is None) == (self.toy_corpus is None):
            raise UsageError("config needs exactly one of 'manifest' or 'toy_corpus'")


def _train_config_from_dict(obj: dict) -> TrainConfig:
    kwargs = dict(obj)
    for key in ("sup_augmentation", "noisy_augmentation"):
        if key in kwargs:
            kwargs[key] = AugmentationPolicy.from_dict(kwargs[key])
    return TrainConfig(**kwargs)


def _train_config_to_dict(config: TrainConfig) -> dict:
    out = {}
    for name in config.__dataclass_fields__:
        value = getattr(config, name)
        out[name] = value.to_dict() if isinstance(value, AugmentationPolicy) else value
    return out


def load_experiment_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file {path} does not exist")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    train_obj = dict(obj.get("train", {}))
    for key, value in (overrides or {}).items():
        if value is not None:
            train_obj[key] = value
    toy = obj.get("toy_corpus")
    try:
        return ExperimentConfig(
            out_dir=obj.get("out_dir", "runs"),
            manifest=obj.get("manifest"),
            toy_corpus=ToyCorpusConfig(**{**toy, "transcript_length_range":
                                          tuple(toy.get("transcript_length_range", (6, 14)))})
            if toy is not None else None,
            train=_train_config_from_dict(train_obj))
    except TypeError as exc:
        raise UsageError(f"bad config field: {exc}") from None


def config_digest(config: ExperimentConfig) -> str:
    payload = {
        "out_dir": config.out_dir,
        "manifest": config.manifest,
        "toy_corpus": None if config.toy_corpus is None else {
            name: getattr(config.toy_corpus, name)
            for name in config.toy_corpus.__dataclass_fields__},
        "train": _train_config_to_dict(config.train),
    }
    blob = json.dumps(payload, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _load_split(config: ExperimentConfig) -> DatasetSplit:
    if config.manifest is not None:
        return load_manifest(config.manifest)
    return generate_toy_corpus(config.toy_corpus)


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise ValidationError(f"output directory {path} exists; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_generate(config: ExperimentConfig, force: bool) -> int:
    if config.toy_corpus is None:
        raise UsageError("generate needs a 'toy_corpus' section in the config")
    out = _prepare_out(Path(config.out_dir) / "corpus", force)
    split = generate_toy_corpus(config.toy_corpus)
    write_manifest(split, out / "manifest.tsv")
    counts = split.counts()
    _write_json(out / "generate.json", {"config_digest": config_digest(config), "counts": counts})
    print(f"wrote {out / 'manifest.tsv'} ({counts})")
    return 0


def cmd_train_supervised(config: ExperimentConfig, force: bool) -> int:
    out = _prepare_out(Path(config.out_dir) / "supervised", force)
    split, _ = prepare_split(_load_split(config), config.train)
    model, report = train_supervised(split, config.train)
    save_checkpoint(model, out / "checkpoint.npz")
    write_training_log(out / "train_log.tsv", report.steps)
    epochs_lines = ["#epochs v1\tepoch\tmean_total\tdev_wer\tlearning_rate"]
    epochs_lines += [f"{e.epoch}\t{e.mean_total!r}\t{e.dev_wer!r}\t{e.learning_rate!r}"
                     for e in report.epochs]
    (out / "epochs.tsv").write_text("\n".join(epochs_lines) + "\n", encoding="utf-8")
    _write_json(out / "report.json", {
        "config_digest": config_digest(config),
        "best_epoch": report.best_epoch,
        "best_dev_wer": report.best_dev_wer,
        "epochs": [{"epoch": e.epoch, "mean_total": e.mean_total, "dev_wer": e.dev_wer,
                    "learning_rate": e.learning_rate} for e in report.epochs],
    })
    print(f"checkpoint: {out / 'checkpoint.npz'} (best epoch {report.best_epoch})")
    return 0


def cmd_selftrain(config: ExperimentConfig, generations: int, force: bool) -> int:
    out = _prepare_out(Path(config.out_dir) / "selftrain", force)
    split = _load_split(config)
    final, reports = self_training_iterations(split, generations, config.train, out_dir=out)
    save_checkpoint(final, out / "final_checkpoint.npz")
    best = min(reports, key=lambda r: (r.dev_wer, r.generation))
    _write_json(out / "summary.json", {
        "config_digest": config_digest(config),
        "generations": [r.to_dict() for r in reports],
        "best_generation": best.generation,
    })
    for r in reports:
        print(f"g{r.generation}: dev {r.dev_wer:.2f}% test {r.test_wer:.2f}% "
              f"pseudo {r.pseudo_label_count} (dropped {r.dropped_empty_count})")
    print(f"best: g{best.generation}; final checkpoint {out / 'final_checkpoint.npz'}")
    return 0


def cmd_evaluate(config: ExperimentConfig, checkpoint: str, which_split: str,
                 force: bool) -> int:
    ckpt_path = Path(checkpoint)
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint {ckpt_path} does not exist")
    out = _prepare_out(Path(config.out_dir) / "evaluate", force)
    split, _ = prepare_split(_load_split(config), config.train)
    utts = getattr(split, which_split)
    model = load_checkpoint(ckpt_path)
    lm = build_lm(split, model.config.vocab, config.train)
    report, records = evaluate_model(model, utts, lm, config.train)
    from .decode import write_decode_records
    write_decode_records(out / "decodes.tsv", records)
    _write_json(out / "wer_report.json", {
        "config_digest": config_digest(config), "split": which_split,
        **report.to_dict(),
    })
    print(f"{which_split}: WER {report.wer_percent:.2f}% "
          f"(S={report.substitutions} D={report.deletions} I={report.insertions} "
          f"N={report.ref_words})")
    return 0


def cmd_sweep_alpha(config: ExperimentConfig, alphas: list[float], force: bool) -> int:
    out = _prepare_out(Path(config.out_dir) / "sweep_alpha", force)
    split = _load_split(config)
    result = alpha_sweep(split, alphas, config.train, out_dir=out)
    digest = config_digest(config)
    table = format_alpha_table(result, digest)
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    lines = [f"#alpha-sweep v1\tconfig={digest}", "alpha\tdev_wer"]
    lines += [f"{row.alpha!r}\t{row.dev_wer!r}" for row in result.rows]
    (out / "records.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(table)
    return 0


def cmd_ablate(config: ExperimentConfig, force: bool) -> int:
    out = _prepare_out(Path(config.out_dir) / "ablate", force)
    split = _load_split(config)
    rows = ablation_run(split, config.train, out_dir=out)
    digest = config_digest(config)
    table = format_ablation_table(rows, digest)
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    lines = [f"#ablation v1\tconfig={digest}", "variant\tdev_wer\ttest_wer"]
    lines += [f"{row.variant}\t{row.dev_wer!r}\t{row.test_wer!r}" for row in rows]
    (out / "records.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semiscribe",
                                     description="Semi-supervised transcription experiments")
    parser.add_argument("--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override training seed")
        p.add_argument("--beam-size", type=int, default=None, help="override beam size")
        p.add_argument("--out-dir", default=None, help="override output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    common(sub.add_parser("generate", help="write the synthetic corpus + manifest"))
    p = sub.add_parser("train-supervised", help="train the supervised teacher")
    common(p)
    p.add_argument("--epochs", type=int, default=None, help="override epoch count")
    p = sub.add_parser("selftrain", help="teacher + N self-training generations")
    common(p)
    p.add_argument("--generations", type=int, default=1)
    p = sub.add_parser("evaluate", help="decode a split and score WER")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("dev", "test"), default="dev")
    p = sub.add_parser("sweep-alpha", help="train students across alpha values")
    common(p)
    p.add_argument("--alphas", required=True, help="comma-separated values in [0, 1]")
    common(sub.add_parser("ablate", help="component-removal comparison table"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "beam_size": args.beam_size}
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    try:
        config = load_experiment_config(args.config, overrides)
        if args.out_dir is not None:
            config = replace(config, out_dir=args.out_dir)
        if args.command == "generate":
            return cmd_generate(config, args.force)
        if args.command == "train-supervised":
            return cmd_train_supervised(config, args.force)
        if args.command == "selftrain":
            return cmd_selftrain(config, args.generations, args.force)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.checkpoint, args.split, args.force)
        if args.command == "sweep-alpha":
            try:
                alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
            except ValueError:
                raise UsageError(f"could not parse --alphas {args.alphas!r}") from None
            return cmd_sweep_alpha(config, alphas, args.force)
        if args.command == "ablate":
            return cmd_ablate(config, args.force)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # runtime failures get a distinct exit code
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
