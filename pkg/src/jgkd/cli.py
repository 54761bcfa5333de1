"""Command-line front end.

Verbs: gen-data, train-teachers, train-student, eval, ablate, selfcheck.
All experiment knobs live in a flat key=value config file (--config);
flags override file values. Exit codes: 0 success, 1 validation or
configuration error, 2 numeric failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_key_help
from .corpus import generate_corpus, load_corpus, save_corpus, schema_labels, split_corpus
from .errors import ConfigError, FormatError, JgkdError, NumericError, ValidationError
from .harness import (
    AblationSetup,
    ablate_architecture,
    ablate_losses,
    ablate_teachers,
    evaluate,
    teacher_token_f1,
    train_student,
)
from .metrics import micro_f1
from .student import StudentConfig, load_student, save_student
from .teachers import (
    TeacherRoster,
    load_teacher,
    save_teacher,
    train_coarse_teacher,
    train_fine_teacher,
)

logger = logging.getLogger(__name__)

TEACHER_SUFFIX = ".jgkd"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="key=value config file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config 'seed' key")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jgkd",
        description="Joint-grained multi-teacher knowledge distillation "
                    "for form-document token/entity labeling.",
        epilog=config_key_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and split a synthetic corpus")
    _add_common(p)

    p = sub.add_parser("train-teachers", help="train and freeze the teacher pool")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True,
                   help="directory with train/val/test JSONL splits")

    p = sub.add_parser("train-student", help="train the joint-grained student")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--teachers", type=Path, required=True,
                   help="directory with teacher checkpoints")
    p.add_argument("--variant", choices=["encoder_only", "decoder_only",
                                         "encoder_and_decoder"], default=None,
                   help="override student.variant")
    p.add_argument("--losses", default=None,
                   help="comma list of sim,distil,triplet,align to enable "
                        "(task losses always on)")

    p = sub.add_parser("eval", help="evaluate a student checkpoint on a split")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--teachers", type=Path, required=True)
    p.add_argument("--split", type=Path, required=True,
                   help="corpus JSONL file to evaluate on")

    p = sub.add_parser("ablate", help="run an ablation grid and emit reports")
    _add_common(p)
    p.add_argument("--which", choices=["losses", "teachers", "architecture"],
                   required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--teachers", type=Path, required=True)
    p.add_argument("--seeds", default=None,
                   help="comma list of seeds (overrides ablate.seeds)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for independent runs")

    p = sub.add_parser("selfcheck", help="finite-difference and oracle suite")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", args.seed)
    if getattr(args, "variant", None):
        cfg.set("student.variant", args.variant)
    if getattr(args, "losses", None) is not None:
        aux = [s.strip() for s in args.losses.split(",") if s.strip()]
        cfg.set("loss.enable", ["task_fine", "task_coarse"] + aux)
    return cfg


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_splits(corpus_dir: Path):
    splits = []
    for name in ("train", "val", "test"):
        path = corpus_dir / f"{name}.jsonl"
        if not path.is_file():
            raise FormatError(f"missing corpus split file: {path}")
        splits.append(load_corpus(path))
    return splits


def _load_teacher_bank(teacher_dir: Path, names) -> dict:
    bank = {}
    for name in names:
        path = teacher_dir / f"{name}{TEACHER_SUFFIX}"
        if not path.is_file():
            raise FormatError(f"missing teacher checkpoint: {path}")
        bank[name] = load_teacher(path)
    return bank


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    out = _prepare_out(args)
    corpus = generate_corpus(cfg.gen_spec(), seed=cfg["seed"])
    train, val, test = split_corpus(corpus, cfg.split_fractions(), seed=cfg["seed"])
    for name, part in (("train", train), ("val", val), ("test", test)):
        save_corpus(part, out / f"{name}.jsonl")
    cfg.echo(out)
    logger.info("wrote %d/%d/%d pages to %s", len(train), len(val), len(test), out)
    return 0


def _entity_micro_f1(teacher, split) -> float:
    true = np.concatenate([p.entity_labels() for p in split])
    pred = np.concatenate([np.argmax(teacher.infer(p).logits, axis=1)
                           for p in split])
    return micro_f1(true, pred, schema_labels(teacher.schema_id))


def cmd_train_teachers(args) -> int:
    cfg = _config_from_args(args)
    out = _prepare_out(args)
    train, val, _ = _load_splits(args.corpus)
    hps = cfg.teacher_hps(cfg["seed"])
    rows = []
    for name, hp in hps.items():
        if name.startswith("fine"):
            teacher, _ = train_fine_teacher(train, hp)
            kind = "fine"
            scorer = teacher_token_f1
        else:
            teacher, _ = train_coarse_teacher(train, hp)
            kind = "coarse"
            scorer = _entity_micro_f1
        save_teacher(teacher, out / f"{name}{TEACHER_SUFFIX}")
        train_f1 = scorer(teacher, train)
        val_f1 = scorer(teacher, val) if val else 0.0
        rows.append((name, kind, teacher.hp.dim, train_f1, val_f1))
        logger.info("teacher %s: train F1 %.4f, val F1 %.4f", name, train_f1, val_f1)
    summary = out / "teachers.csv"
    lines = ["name,kind,dim,train_f1,val_f1"]
    lines += [f"{n},{k},{d},{tf!r},{vf!r}" for n, k, d, tf, vf in rows]
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    cfg.echo(out)
    return 0


def _student_ingredients(cfg: RunConfig, args):
    train, val, test = _load_splits(args.corpus)
    roster_names = cfg["student.fine_roster"] + cfg["student.coarse_roster"]
    bank = _load_teacher_bank(args.teachers, roster_names)
    roster = TeacherRoster(fine=[bank[n] for n in cfg["student.fine_roster"]],
                           coarse=[bank[n] for n in cfg["student.coarse_roster"]])
    roster.validate()
    weights = cfg.loss_weights()
    # fail fast on roster/loss conflicts before any training happens
    weights.validate(len(roster.fine), len(roster.coarse))
    config = StudentConfig.for_roster(roster, **cfg.student_kwargs())
    return train, val, test, roster, config, weights


def cmd_train_student(args) -> int:
    from .report import (emit_history, emit_report, render_history_figure,
                         render_report_figure, single_metrics_report)
    cfg = _config_from_args(args)
    out = _prepare_out(args)
    train, val, test, roster, config, weights = _student_ingredients(cfg, args)
    spec = cfg.train_spec(cfg["seed"])
    params, history = train_student(train, val, roster, config, weights, spec)
    save_student(params, out / "student.jgkd")
    emit_history(history, out / "history.jsonl")
    render_history_figure(history, out / "history.png")
    metrics = evaluate(params, roster, config, test)
    report = single_metrics_report(metrics, descriptor="student", seed=cfg["seed"])
    emit_report(report, out / "metrics.csv", "csv")
    emit_report(report, out / "metrics.jsonl", "jsonl")
    render_report_figure(report, out / "metrics.png")
    cfg.echo(out)
    logger.info("test token F1 %.4f, entity F1 %.4f",
                metrics.token_overall_f1, metrics.entity_overall_f1)
    return 0


def cmd_eval(args) -> int:
    from .report import emit_report, render_report_figure, single_metrics_report
    cfg = _config_from_args(args)
    out = _prepare_out(args)
    params = load_student(args.checkpoint)
    corpus = load_corpus(args.split)
    names = cfg["student.fine_roster"] + cfg["student.coarse_roster"]
    bank = _load_teacher_bank(args.teachers, names)
    roster = TeacherRoster(fine=[bank[n] for n in cfg["student.fine_roster"]],
                           coarse=[bank[n] for n in cfg["student.coarse_roster"]])
    roster.validate()
    metrics = evaluate(params, roster, params.config, corpus)
    report = single_metrics_report(metrics, descriptor=Path(args.checkpoint).stem)
    emit_report(report, out / "metrics.csv", "csv")
    emit_report(report, out / "metrics.jsonl", "jsonl")
    render_report_figure(report, out / "metrics.png")
    cfg.echo(out)
    return 0


def cmd_ablate(args) -> int:
    from .report import emit_report, render_report_figure
    cfg = _config_from_args(args)
    out = _prepare_out(args)
    train, val, test = _load_splits(args.corpus)
    grid_names = {"fine1", "fine2", "coarse1", "coarse2", "rand"}
    names = sorted(grid_names | set(cfg["student.fine_roster"])
                   | set(cfg["student.coarse_roster"]))
    bank = _load_teacher_bank(args.teachers, names)
    if args.seeds is not None:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --seeds value: {args.seeds!r}") from exc
    else:
        seeds = cfg["ablate.seeds"]
    if not seeds:
        raise ConfigError("at least one seed required")
    student_kwargs = cfg.student_kwargs()
    student_kwargs.pop("variant")  # grids choose variants themselves
    setup = AblationSetup(train=train, val=val, test=test, teacher_bank=bank,
                          train_spec=cfg.train_spec(cfg["seed"]),
                          base_weights=cfg.loss_weights(),
                          student_kwargs=student_kwargs,
                          default_fine=tuple(cfg["student.fine_roster"]),
                          default_coarse=tuple(cfg["student.coarse_roster"]))
    if args.which == "losses":
        report = ablate_losses(setup, seeds=seeds, threads=args.threads)
    elif args.which == "teachers":
        report = ablate_teachers(setup, seeds=seeds, threads=args.threads)
    else:
        report = ablate_architecture(setup, seeds=seeds, threads=args.threads)
    emit_report(report, out / "report.csv", "csv")
    emit_report(report, out / "report.jsonl", "jsonl")
    render_report_figure(report, out / "report.png")
    cfg.echo(out)
    logger.info("%s ablation: %d rows -> %s", args.which, len(report.rows), out)
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck
    failures = run_selfcheck(seed=args.seed)
    if failures:
        raise NumericError(f"{failures} selfcheck item(s) failed")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-data": cmd_gen_data,
        "train-teachers": cmd_train_teachers,
        "train-student": cmd_train_student,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
        "selfcheck": cmd_selfcheck,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except JgkdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
