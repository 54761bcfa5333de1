"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line (run with `pytest tests/test_acceptance.py -v -s`).

Published absolute F1 scores from large pretrained stacks are explicitly
out of scope at this scale; the property checks below (gradient suite,
oracle table, convergence, trend direction, grid structure, round trips,
determinism) stand in for them.
"""

import os
import time

import numpy as np
import pytest

from jgkd.cli import main
from jgkd.corpus import FUNSD4, GenSpec, generate_corpus, load_funsd, split_corpus
from jgkd.harness import (
    AblationSetup,
    TrainSpec,
    ablate_architecture,
    ablate_losses,
    ablate_teachers,
    evaluate,
    train_student,
    trend_check,
)
from jgkd.losses import LossWeights
from jgkd.selfcheck import loss_checks, oracle_checks, primitive_checks
from jgkd.student import StudentConfig, load_student, save_student, student_forward
from jgkd.teachers import (
    TeacherRoster,
    load_teacher,
    save_teacher,
    train_coarse_teacher,
    train_fine_teacher,
)


def _report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {name}: {status} {detail}".rstrip())


def _train_default_bank(train, seed=0):
    from jgkd.teachers import default_teacher_hps
    hps = default_teacher_hps(seed=seed)
    bank = {}
    for name in ("fine1", "fine2"):
        bank[name], _ = train_fine_teacher(train, hps[name])
    for name in ("coarse1", "coarse2", "rand"):
        bank[name], _ = train_coarse_teacher(train, hps[name])
    return bank


@pytest.fixture(scope="module")
def clean_world():
    """Default toy config: clean separable corpus + default teacher pool."""
    pages = generate_corpus(GenSpec(), seed=0)
    train, val, test = split_corpus(pages, (0.6, 0.2, 0.2), seed=0)
    t0 = time.monotonic()
    bank = _train_default_bank(train)
    teacher_seconds = time.monotonic() - t0
    return dict(train=train, val=val, test=test, bank=bank,
                teacher_seconds=teacher_seconds)


def test_gradient_suite_under_60s():
    t0 = time.monotonic()
    results = primitive_checks(0) + loss_checks(0)
    elapsed = time.monotonic() - t0
    failures = [r for r in results if not r.passed]
    ok = not failures and elapsed < 60.0
    _report("gradient-suite", ok,
            f"({len(results)} checks, {elapsed:.1f}s)"
            + (f" failures: {[f.name for f in failures]}" if failures else ""))
    assert not failures, failures
    assert elapsed < 60.0


def test_loss_oracle_table():
    results = oracle_checks()
    failures = [r for r in results if not r.passed]
    _report("loss-oracle-table", not failures,
            f"({len(results)} oracle values)"
            + (f" failures: {[(f.name, f.detail) for f in failures]}" if failures else ""))
    assert not failures, failures


def test_end_to_end_convergence_and_wall_time(clean_world):
    t0 = time.monotonic()
    roster = TeacherRoster(
        fine=[clean_world["bank"]["fine1"], clean_world["bank"]["fine2"]],
        coarse=[clean_world["bank"]["coarse1"], clean_world["bank"]["coarse2"]])
    config = StudentConfig.for_roster(roster)  # d=64, 2+2 layers, 4 heads
    f1s = []
    epochs_used = []
    for seed in (0, 1, 2):
        params, history = train_student(
            clean_world["train"], clean_world["val"], roster, config,
            LossWeights(), TrainSpec(epochs=50, seed=seed))
        epochs_used.append(len(history))
        metrics = evaluate(params, roster, config, clean_world["test"])
        f1s.append(metrics.token_overall_f1)
    median = sorted(f1s)[1]
    elapsed = time.monotonic() - t0 + clean_world["teacher_seconds"]
    ok = median >= 0.95 and elapsed < 600.0 and max(epochs_used) <= 50
    _report("end-to-end-convergence", ok,
            f"(median token F1 {median:.4f} over seeds 0/1/2 = "
            f"{[round(f, 4) for f in f1s]}, epochs {epochs_used}, "
            f"{elapsed:.0f}s wall incl. teacher training)")
    assert median >= 0.95
    assert elapsed < 600.0


def test_trend_check_soft_logged():
    pages = generate_corpus(GenSpec(n_pages=80, label_signal_strength=0.9,
                                    noise_rate=0.3), seed=0)
    train, val, test = split_corpus(pages, (0.6, 0.2, 0.2), seed=0)
    bank = _train_default_bank(train)
    setup = AblationSetup(train=train, val=val, test=test, teacher_bank=bank,
                          train_spec=TrainSpec(epochs=50))
    result = trend_check(setup, seeds=(0, 1, 2))
    _report("trend-check(soft)", True,
            f"(student median {result.student_median_f1:.4f} vs best single "
            f"teacher {result.best_teacher_f1:.4f}; "
            f"{'improves on' if result.passed else 'WARNING: below'} teacher)")
    # soft criterion: a violation is logged by the harness, never fatal
    assert result.per_seed_f1 and 0.0 <= result.student_median_f1 <= 1.0


@pytest.fixture(scope="module")
def tiny_setup():
    """Small world for grid-structure checks (structure, not scores)."""
    gen = GenSpec(n_pages=16, entities_min=2, entities_max=3,
                  tokens_min=1, tokens_max=3, vocab_size=80)
    pages = generate_corpus(gen, seed=5)
    train, val, test = split_corpus(pages, (0.6, 0.2, 0.2), seed=5)
    from jgkd.teachers import TeacherHP
    bank = {}
    bank["fine1"], _ = train_fine_teacher(train, TeacherHP(
        dim=16, layers=1, heads=2, epochs=3, vocab_size=80, seed=1))
    bank["fine2"], _ = train_fine_teacher(train, TeacherHP(
        dim=12, layers=1, heads=2, epochs=3, vocab_size=80, seed=2,
        use_position=False))
    bank["coarse1"], _ = train_coarse_teacher(train, TeacherHP(
        dim=12, layers=1, heads=2, epochs=3, vocab_size=80, seed=3))
    bank["coarse2"], _ = train_coarse_teacher(train, TeacherHP(
        dim=8, layers=1, heads=2, epochs=3, vocab_size=80, seed=4,
        use_visual=False))
    bank["rand"], _ = train_coarse_teacher(train, TeacherHP(
        dim=12, layers=1, heads=2, epochs=0, vocab_size=80, seed=5))
    return AblationSetup(
        train=train, val=val, test=test, teacher_bank=bank,
        train_spec=TrainSpec(epochs=2, seed=0),
        student_kwargs=dict(dim=16, encoder_layers=1, decoder_layers=1, heads=2))


def test_ablation_structure(tiny_setup):
    losses_rep = ablate_losses(tiny_setup, seeds=(0,))
    arch_rep = ablate_architecture(tiny_setup, seeds=(0,))
    teach_rep = ablate_teachers(tiny_setup, seeds=(0,))
    counts = (len(losses_rep.rows), len(arch_rep.rows), len(teach_rep.rows))
    complete = all(
        set(row.metrics.token) == set(FUNSD4)
        and set(row.metrics.entity) == set(FUNSD4)
        and 0.0 <= row.metrics.token_overall_f1 <= 1.0
        for rep in (losses_rep, arch_rep, teach_rep) for row in rep.rows)
    ok = counts == (12, 4, 8) and complete
    _report("ablation-structure", ok,
            f"(losses/architecture/teachers rows = {counts}, metrics complete)")
    assert counts == (12, 4, 8)
    assert complete


FUNSD_TABLE = {          # test-split distribution: label -> (entities, tokens)
    "question": (1077, 2654),
    "answer": (821, 3294),
    "header": (122, 374),
    "other": (312, 2385),
}


@pytest.mark.skipif("JGKD_FUNSD_DIR" not in os.environ,
                    reason="set JGKD_FUNSD_DIR to the FUNSD test-split "
                           "annotations directory to enable")
def test_funsd_test_split_counts():
    pages = load_funsd(os.environ["JGKD_FUNSD_DIR"])
    ent_counts = {name: 0 for name in FUNSD4}
    tok_counts = {name: 0 for name in FUNSD4}
    for page in pages:
        for ent in page.entities:
            ent_counts[FUNSD4[ent.label]] += 1
            tok_counts[FUNSD4[ent.label]] += len(ent.token_ids)
    total_ok = (sum(ent_counts.values()) == 2332
                and sum(tok_counts.values()) == 8707)
    per_label_ok = all(ent_counts[k] == v[0] and tok_counts[k] == v[1]
                       for k, v in FUNSD_TABLE.items())
    _report("funsd-loader-counts", total_ok and per_label_ok,
            f"(entities {sum(ent_counts.values())}, tokens {sum(tok_counts.values())})")
    assert sum(ent_counts.values()) == 2332
    assert sum(tok_counts.values()) == 8707
    for label, (n_ent, n_tok) in FUNSD_TABLE.items():
        assert ent_counts[label] == n_ent, label
        assert tok_counts[label] == n_tok, label


def test_checkpoint_round_trips_bit_identical(tiny_setup, tmp_path):
    page = tiny_setup.test[0]
    teacher = tiny_setup.teacher_bank["fine1"]
    before = teacher.infer(page)
    save_teacher(teacher, tmp_path / "t.jgkd")
    after = load_teacher(tmp_path / "t.jgkd").infer(page)
    teacher_ok = (np.array_equal(before.hidden, after.hidden)
                  and np.array_equal(before.logits, after.logits))

    roster = tiny_setup.roster(("fine1", "fine2"), ("coarse1", "coarse2"))
    config = StudentConfig.for_roster(roster, **tiny_setup.student_kwargs)
    params, _ = train_student(tiny_setup.train, tiny_setup.val, roster, config,
                              LossWeights(), TrainSpec(epochs=1, seed=0))
    trace_before = student_forward(page, roster, config, params)
    save_student(params, tmp_path / "s.jgkd")
    loaded = load_student(tmp_path / "s.jgkd")
    trace_after = student_forward(page, roster, loaded.config, loaded)
    student_ok = (np.array_equal(trace_before.p_t.data, trace_after.p_t.data)
                  and np.array_equal(trace_before.p_e.data, trace_after.p_e.data)
                  and np.array_equal(trace_before.p_align.data,
                                     trace_after.p_align.data))
    _report("checkpoint-round-trip", teacher_ok and student_ok,
            "(teacher and student inference bit-identical after save/load)")
    assert teacher_ok and student_ok


def test_full_pipeline_determinism(tmp_path):
    cfg_text = (
        "gen.n_pages = 14\ngen.entities_min = 2\ngen.entities_max = 3\n"
        "gen.tokens_min = 1\ngen.tokens_max = 3\ngen.vocab_size = 80\n"
        "teachers.epochs = 2\nteachers.layers = 1\nteachers.heads = 2\n"
        "teachers.fine_dims = 16,12\nteachers.coarse_dims = 12,8\n"
        "student.dim = 16\nstudent.encoder_layers = 1\n"
        "student.decoder_layers = 1\nstudent.heads = 2\n"
        "train.epochs = 2\n")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(cfg_text, encoding="utf-8")
    outputs = []
    for tag in ("a", "b"):
        root = tmp_path / tag
        assert main(["gen-data", "--config", str(cfg),
                     "--out", str(root / "data")]) == 0
        assert main(["train-teachers", "--config", str(cfg),
                     "--corpus", str(root / "data"),
                     "--out", str(root / "teachers")]) == 0
        assert main(["train-student", "--config", str(cfg),
                     "--corpus", str(root / "data"),
                     "--teachers", str(root / "teachers"),
                     "--out", str(root / "student")]) == 0
        outputs.append(root)
    identical = all(
        (outputs[0] / rel).read_bytes() == (outputs[1] / rel).read_bytes()
        for rel in ("student/metrics.csv", "student/metrics.jsonl",
                    "student/history.jsonl", "student/student.jgkd",
                    "teachers/teachers.csv", "data/train.jsonl"))
    _report("pipeline-determinism", identical,
            "(two full runs, metric files byte-identical)")
    assert identical
