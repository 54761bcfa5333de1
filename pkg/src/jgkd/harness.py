"""Training loop, F1 evaluation, the three ablation grids, and the soft
multi-teacher trend check.

Every run is a pure function of its seeds: corpora are shuffled with a
run-local generator, teacher outputs are precomputed once per run (the
teachers are frozen), and the best-validation-F1 parameter snapshot is
returned. Ablation grids fan independent (configuration, seed) runs out
over an optional thread pool and assemble rows in grid order.
"""

from __future__ import annotations

import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tape
from .corpus import DocumentPage, schema_labels
from .errors import NumericError, ValidationError
from .losses import LossBreakdown, LossWeights, total_loss
from .metrics import LabelScore, Metrics, micro_f1, scores_from_pairs
from .nn import Adam
from .student import StudentConfig, StudentParams, student_forward
from .teachers import TeacherRoster

logger = logging.getLogger(__name__)

LOSS_FAMILY_SHORT = {"sim": "similarity", "distil": "distilling",
                     "triplet": "triplet", "align": "alignment"}

# fixed grid orders; reports emit rows exactly in this order
DEFAULT_LOSS_COMBINATIONS: tuple[tuple[str, ...], ...] = (
    ("sim",), ("distil",), ("triplet",), ("align",),
    ("sim", "distil"), ("sim", "triplet"), ("sim", "align"),
    ("distil", "triplet"), ("distil", "align"),
    ("sim", "distil", "triplet"), ("sim", "distil", "align"),
    ("sim", "distil", "triplet", "align"),
)

ARCHITECTURE_VARIANTS: tuple[tuple[str, str, bool], ...] = (
    # (row descriptor, student variant, multi-teacher roster)
    ("JG-E", "encoder_only", False),
    ("JG-D", "decoder_only", False),
    ("JG-E&D", "encoder_and_decoder", False),
    ("MT-JG-E&D", "encoder_and_decoder", True),
)

DEFAULT_TEACHER_GRID: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...] = (
    (("fine1",), ("coarse2",)),
    (("fine1",), ("coarse1",)),
    (("fine1",), ("rand",)),
    (("fine2",), ("coarse2",)),
    (("fine2",), ("coarse1",)),
    (("fine2",), ("rand",)),
    (("fine1",), ("coarse2", "coarse1")),
    (("fine1", "fine2"), ("coarse1",)),
)


@dataclass
class TrainSpec:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 50
    seed: int = 0
    patience: int = 10

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")


@dataclass
class EpochRecord:
    epoch: int
    steps: list[LossBreakdown]
    mean_losses: dict[str, float]
    val_token_f1: float

    def to_record(self) -> dict:
        rec = {"epoch": self.epoch, "val_token_f1": self.val_token_f1}
        rec.update(self.mean_losses)
        return rec


def _mean_losses(steps: Sequence[LossBreakdown]) -> dict[str, float]:
    out: dict[str, float] = {}
    for name in list(LossBreakdown().parts()) + ["total"]:
        vals = [getattr(s, name) for s in steps]
        present = [v for v in vals if v is not None]
        if present:
            out[name] = float(np.mean(present))
    return out


def train_student(train_corpus: Sequence[DocumentPage],
                  val_corpus: Sequence[DocumentPage],
                  roster: TeacherRoster, config: StudentConfig,
                  weights: LossWeights, spec: TrainSpec
                  ) -> tuple[StudentParams, list[EpochRecord]]:
    """Adam over per-page steps; returns the best-validation-F1 snapshot."""
    spec.validate()
    config.validate()
    roster.validate()
    weights.validate(len(roster.fine), len(roster.coarse))
    if not train_corpus or not val_corpus:
        raise ValidationError("train and validation corpora must be nonempty")

    params = StudentParams(config, seed=spec.seed)
    adam = Adam(params.params(), lr=spec.lr, betas=spec.betas, eps=spec.eps)
    rng = np.random.default_rng([spec.seed, 7])
    cached = [roster.infer(page) for page in train_corpus]

    history: list[EpochRecord] = []
    best_state = params.state_arrays()
    best_f1 = -1.0
    best_epoch = -1
    for epoch in range(spec.epochs):
        steps: list[LossBreakdown] = []
        for idx in rng.permutation(len(train_corpus)):
            page = train_corpus[idx]
            fine_outputs, coarse_outputs = cached[idx]
            adam.zero_grad()
            try:
                with Tape() as tape:
                    trace = student_forward(page, (fine_outputs, coarse_outputs),
                                            config, params)
                    total, breakdown = total_loss(trace, page, fine_outputs,
                                                  coarse_outputs, params,
                                                  weights, rng)
                    tape.backward(total)
            except NumericError as exc:
                raise NumericError(
                    f"training diverged at epoch {epoch}, page {idx}: {exc}"
                ) from exc
            adam.step()
            steps.append(breakdown)
        val_f1 = evaluate(params, roster, config, val_corpus).token_overall_f1
        history.append(EpochRecord(epoch=epoch, steps=steps,
                                   mean_losses=_mean_losses(steps),
                                   val_token_f1=val_f1))
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_epoch = epoch
            best_state = params.state_arrays()
        elif epoch - best_epoch >= spec.patience:
            logger.info("early stop at epoch %d (best val F1 %.4f at epoch %d)",
                        epoch, best_f1, best_epoch)
            break
    params.load_state(best_state)
    return params, history


def evaluate(params: StudentParams, roster: TeacherRoster,
             config: StudentConfig, corpus: Sequence[DocumentPage]) -> Metrics:
    """Argmax the student heads over a split and score both grains."""
    if not corpus:
        raise ValidationError("cannot evaluate on an empty split")
    labels = schema_labels(roster.schema_id)
    tok_true, tok_pred, ent_true, ent_pred = [], [], [], []
    for page in corpus:
        trace = student_forward(page, roster, config, params)
        tok_true.append(page.token_labels())
        tok_pred.append(np.argmax(trace.p_t.data, axis=1))
        ent_true.append(page.entity_labels())
        ent_pred.append(np.argmax(trace.p_e.data, axis=1))
    token_scores, token_overall = scores_from_pairs(
        np.concatenate(tok_true), np.concatenate(tok_pred), labels)
    entity_scores, entity_overall = scores_from_pairs(
        np.concatenate(ent_true), np.concatenate(ent_pred), labels)
    return Metrics(schema_id=roster.schema_id, token=token_scores,
                   entity=entity_scores, token_overall_f1=token_overall,
                   entity_overall_f1=entity_overall)


# ---------------------------------------------------------------------------
# ablation grids


@dataclass
class RunResult:
    descriptor: str
    seed: int
    metrics: Metrics


@dataclass
class ReportRow:
    descriptor: str
    metrics: Metrics           # elementwise median over the row's runs
    runs: list[RunResult]


@dataclass
class AblationReport:
    schema_id: str
    rows: list[ReportRow] = field(default_factory=list)


def median_metrics(metrics_list: Sequence[Metrics]) -> Metrics:
    """Elementwise median of every score; recomputable from raw runs."""
    first = metrics_list[0]

    def med(getter):
        return float(statistics.median(getter(m) for m in metrics_list))

    def med_label(level: str, label: str) -> LabelScore:
        def g(attr):
            return med(lambda m: getattr(getattr(m, level)[label], attr))
        return LabelScore(precision=g("precision"), recall=g("recall"),
                          f1=g("f1"), support=int(g("support")))

    labels = schema_labels(first.schema_id)
    return Metrics(
        schema_id=first.schema_id,
        token={lb: med_label("token", lb) for lb in labels},
        entity={lb: med_label("entity", lb) for lb in labels},
        token_overall_f1=med(lambda m: m.token_overall_f1),
        entity_overall_f1=med(lambda m: m.entity_overall_f1),
    )


@dataclass
class AblationSetup:
    """Shared ingredients for one ablation grid."""

    train: list
    val: list
    test: list
    teacher_bank: dict                      # name -> frozen teacher
    train_spec: TrainSpec
    base_weights: LossWeights = field(default_factory=LossWeights)
    student_kwargs: dict = field(default_factory=dict)
    default_fine: tuple[str, ...] = ("fine1", "fine2")
    default_coarse: tuple[str, ...] = ("coarse1", "coarse2")

    def roster(self, fine_names: Sequence[str], coarse_names: Sequence[str]
               ) -> TeacherRoster:
        missing = [n for n in list(fine_names) + list(coarse_names)
                   if n not in self.teacher_bank]
        if missing:
            raise ValidationError(f"unknown teacher names: {missing}")
        roster = TeacherRoster(fine=[self.teacher_bank[n] for n in fine_names],
                               coarse=[self.teacher_bank[n] for n in coarse_names])
        roster.validate()
        return roster


def weights_for_combination(combo: Sequence[str], base: LossWeights) -> LossWeights:
    """Task losses stay on; the named auxiliary families are enabled."""
    unknown = [name for name in combo if name not in LOSS_FAMILY_SHORT]
    if unknown:
        raise ValidationError(
            f"unknown loss names {unknown}; valid: {sorted(LOSS_FAMILY_SHORT)}")
    if len(set(combo)) != len(combo):
        raise ValidationError(f"duplicate loss names in {combo}")
    enabled = {LOSS_FAMILY_SHORT[name] for name in combo}
    kwargs = {}
    for family in ("similarity", "distilling", "triplet", "alignment"):
        base_w = getattr(base, family)
        kwargs[family] = (base_w if base_w is not None else 1.0) \
            if family in enabled else None
    return replace(base, **kwargs)


def _run_jobs(jobs, threads: int):
    if threads <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def _grid_report(setup: AblationSetup, row_specs, run_one, seeds, threads
                 ) -> AblationReport:
    jobs = []
    for row_idx, row_spec in enumerate(row_specs):
        for seed in seeds:
            jobs.append(lambda rs=row_spec, s=seed: run_one(rs, s))
    flat = _run_jobs(jobs, threads)
    schema_id = next(iter(setup.teacher_bank.values())).schema_id
    report = AblationReport(schema_id=schema_id)
    per_row = len(seeds)
    for row_idx, row_spec in enumerate(row_specs):
        runs = flat[row_idx * per_row:(row_idx + 1) * per_row]
        report.rows.append(ReportRow(
            descriptor=runs[0].descriptor,
            metrics=median_metrics([r.metrics for r in runs]),
            runs=list(runs)))
    return report


def ablate_losses(setup: AblationSetup,
                  combinations: Optional[Sequence[Sequence[str]]] = None,
                  seeds: Sequence[int] = (0, 1, 2),
                  threads: int = 1) -> AblationReport:
    """One row per loss combination (task CE always on), median over seeds."""
    combos = [tuple(c) for c in (combinations if combinations is not None
                                 else DEFAULT_LOSS_COMBINATIONS)]
    for combo in combos:
        weights_for_combination(combo, setup.base_weights)  # validate early

    def run_one(combo: tuple[str, ...], seed: int) -> RunResult:
        descriptor = "+".join(combo)
        roster = setup.roster(setup.default_fine, setup.default_coarse)
        weights = weights_for_combination(combo, setup.base_weights)
        config = StudentConfig.for_roster(roster, **setup.student_kwargs)
        spec = replace(setup.train_spec, seed=seed)
        params, _ = train_student(setup.train, setup.val, roster, config,
                                  weights, spec)
        return RunResult(descriptor=descriptor, seed=seed,
                         metrics=evaluate(params, roster, config, setup.test))

    return _grid_report(setup, combos, run_one, seeds, threads)


def _ce_only(base: LossWeights) -> LossWeights:
    return replace(base, similarity=None, distilling=None, triplet=None,
                   alignment=None)


def ablate_architecture(setup: AblationSetup, seeds: Sequence[int] = (0, 1, 2),
                        threads: int = 1) -> AblationReport:
    """Single-teacher encoder/decoder variants plus the multi-teacher row,
    all trained with task cross entropy only."""

    def run_one(row: tuple[str, str, bool], seed: int) -> RunResult:
        descriptor, variant, multi = row
        if multi:
            roster = setup.roster(setup.default_fine, setup.default_coarse)
        else:
            roster = setup.roster(setup.default_fine[:1], setup.default_coarse[:1])
        config = StudentConfig.for_roster(roster, variant=variant,
                                          **setup.student_kwargs)
        spec = replace(setup.train_spec, seed=seed)
        params, _ = train_student(setup.train, setup.val, roster, config,
                                  _ce_only(setup.base_weights), spec)
        return RunResult(descriptor=descriptor, seed=seed,
                         metrics=evaluate(params, roster, config, setup.test))

    return _grid_report(setup, ARCHITECTURE_VARIANTS, run_one, seeds, threads)


def ablate_teachers(setup: AblationSetup,
                    rosters: Optional[Sequence] = None,
                    seeds: Sequence[int] = (0, 1, 2),
                    threads: int = 1) -> AblationReport:
    """One row per teacher roster, task cross entropy only."""
    grid = [(tuple(f), tuple(c)) for f, c in
            (rosters if rosters is not None else DEFAULT_TEACHER_GRID)]
    for fine_names, coarse_names in grid:
        setup.roster(fine_names, coarse_names)  # validate names early

    def run_one(row, seed: int) -> RunResult:
        fine_names, coarse_names = row
        descriptor = "&".join(fine_names) + "+" + "&".join(coarse_names)
        roster = setup.roster(fine_names, coarse_names)
        config = StudentConfig.for_roster(roster, **setup.student_kwargs)
        spec = replace(setup.train_spec, seed=seed)
        params, _ = train_student(setup.train, setup.val, roster, config,
                                  _ce_only(setup.base_weights), spec)
        return RunResult(descriptor=descriptor, seed=seed,
                         metrics=evaluate(params, roster, config, setup.test))

    return _grid_report(setup, grid, run_one, seeds, threads)


# ---------------------------------------------------------------------------
# soft trend check


@dataclass
class TrendResult:
    student_median_f1: float
    best_teacher_f1: float
    per_seed_f1: list[float]
    passed: bool


def teacher_token_f1(teacher, corpus: Sequence[DocumentPage]) -> float:
    """Micro token F1 (excluding "other") of one fine teacher on a split."""
    labels = schema_labels(teacher.schema_id)
    true = np.concatenate([p.token_labels() for p in corpus])
    pred = np.concatenate([np.argmax(teacher.infer(p).logits, axis=1)
                           for p in corpus])
    return micro_f1(true, pred, labels)


def trend_check(setup: AblationSetup, seeds: Sequence[int] = (0, 1, 2),
                threads: int = 1) -> TrendResult:
    """Compare the all-losses multi-teacher student against the best fine
    teacher on the test split. Violations are logged, never fatal."""
    best_teacher = max(teacher_token_f1(setup.teacher_bank[name], setup.test)
                       for name in setup.default_fine)

    def run_one(_, seed: int) -> RunResult:
        roster = setup.roster(setup.default_fine, setup.default_coarse)
        config = StudentConfig.for_roster(roster, **setup.student_kwargs)
        spec = replace(setup.train_spec, seed=seed)
        params, _ = train_student(setup.train, setup.val, roster, config,
                                  setup.base_weights, spec)
        return RunResult(descriptor="all-losses", seed=seed,
                         metrics=evaluate(params, roster, config, setup.test))

    runs = _run_jobs([lambda s=seed: run_one(None, s) for seed in seeds], threads)
    per_seed = [r.metrics.token_overall_f1 for r in runs]
    student_median = float(statistics.median(per_seed))
    passed = student_median >= best_teacher
    if not passed:
        logger.warning(
            "trend check: student median token F1 %.4f below best single "
            "teacher %.4f (soft check, not a failure)", student_median, best_teacher)
    return TrendResult(student_median_f1=student_median,
                       best_teacher_f1=best_teacher,
                       per_seed_f1=per_seed, passed=passed)
