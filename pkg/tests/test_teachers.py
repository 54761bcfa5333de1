"""Teacher training, inference purity, freezing, and checkpoint round trips."""

import copy

import numpy as np
import pytest

from jgkd.corpus import GenSpec, generate_corpus
from jgkd.errors import FormatError, SchemaError, ValidationError
from jgkd.teachers import (
    FineTeacher,
    TeacherHP,
    TeacherRoster,
    load_teacher,
    save_teacher,
    teacher_infer,
    train_coarse_teacher,
    train_fine_teacher,
)

SEPARABLE = GenSpec(n_pages=12, label_signal_strength=1.0, noise_rate=0.0)


@pytest.fixture(scope="module")
def pages():
    return generate_corpus(SEPARABLE, seed=1)


@pytest.fixture(scope="module")
def fine(pages):
    teacher, history = train_fine_teacher(pages, TeacherHP(dim=48, epochs=20, seed=0))
    return teacher, history


@pytest.fixture(scope="module")
def coarse(pages):
    teacher, history = train_coarse_teacher(pages, TeacherHP(dim=32, epochs=20, seed=0))
    return teacher, history


def test_fine_teacher_reaches_high_f1_on_separable_train(fine):
    _, history = fine
    assert history[-1]["token_f1"] >= 0.99
    assert len(history) == 20


def test_coarse_teacher_reaches_high_f1_on_separable_train(coarse):
    _, history = coarse
    assert history[-1]["entity_f1"] >= 0.99


def test_zero_epochs_returns_frozen_initialization(pages):
    hp = TeacherHP(dim=32, epochs=0, seed=7)
    trained, history = train_fine_teacher(pages, hp)
    fresh = FineTeacher(pages[0].schema_id, hp)
    assert history == []
    assert trained.frozen
    assert trained.checksum() == fresh.checksum()


def test_different_seeds_different_checksums(pages):
    a, _ = train_fine_teacher(pages, TeacherHP(dim=24, epochs=1, seed=1))
    b, _ = train_fine_teacher(pages, TeacherHP(dim=24, epochs=1, seed=2))
    assert a.checksum() != b.checksum()


def test_infer_shape_contract(fine, pages):
    teacher, _ = fine
    page = pages[0]
    out = teacher_infer(teacher, page)
    assert out.hidden.shape == (page.k, 48)
    assert out.logits.shape == (page.k, 4)


def test_infer_bit_identical_and_pure(fine, pages):
    teacher, _ = fine
    before = teacher.checksum()
    a = teacher_infer(teacher, pages[2])
    b = teacher_infer(teacher, pages[2])
    assert np.array_equal(a.hidden, b.hidden)
    assert np.array_equal(a.logits, b.logits)
    assert teacher.checksum() == before


def test_trained_fine_argmax_matches_labels(fine, pages):
    teacher, _ = fine
    for page in pages:
        pred = np.argmax(teacher_infer(teacher, page).logits, axis=1)
        np.testing.assert_array_equal(pred, page.token_labels())


def test_coarse_without_visual_signal_still_learns(pages):
    zeroed = copy.deepcopy(pages)
    for p in zeroed:
        for e in p.entities:
            e.visual_feat = np.zeros_like(e.visual_feat)
    teacher, history = train_coarse_teacher(zeroed, TeacherHP(dim=32, epochs=20, seed=0))
    assert history[-1]["entity_f1"] >= 0.9


def test_schema_mismatch_raises(fine):
    teacher, _ = fine
    other = generate_corpus(GenSpec(n_pages=1, schema_id="formnlu7"), seed=0)[0]
    with pytest.raises(SchemaError):
        teacher_infer(teacher, other)


def test_empty_corpus_rejected():
    with pytest.raises(ValidationError):
        train_fine_teacher([], TeacherHP())
    with pytest.raises(ValidationError):
        train_coarse_teacher([], TeacherHP())


def test_checkpoint_round_trip_bit_exact(fine, pages, tmp_path):
    teacher, _ = fine
    before = teacher_infer(teacher, pages[0])
    path = tmp_path / "fine.jgkd"
    save_teacher(teacher, path)
    loaded = load_teacher(path)
    assert isinstance(loaded, FineTeacher)
    assert loaded.frozen
    assert loaded.checksum() == teacher.checksum()
    after = teacher_infer(loaded, pages[0])
    assert np.array_equal(before.hidden, after.hidden)
    assert np.array_equal(before.logits, after.logits)


def test_truncated_checkpoint_is_format_error(fine, tmp_path):
    teacher, _ = fine
    path = tmp_path / "fine.jgkd"
    save_teacher(teacher, path)
    raw = path.read_bytes()
    (tmp_path / "cut.jgkd").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(FormatError, match="truncated"):
        load_teacher(tmp_path / "cut.jgkd")


def test_wrong_magic_is_format_error(tmp_path):
    path = tmp_path / "junk.jgkd"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FormatError, match="magic"):
        load_teacher(path)


def test_fine_checkpoint_loaded_as_coarse_is_type_tag_error(fine, tmp_path):
    teacher, _ = fine
    path = tmp_path / "fine.jgkd"
    save_teacher(teacher, path)
    with pytest.raises(FormatError, match="type tag"):
        load_teacher(path, expected_kind="coarse-teacher")


def test_roster_validation(fine, coarse):
    ft, _ = fine
    ct, _ = coarse
    TeacherRoster(fine=[ft], coarse=[ct]).validate()
    with pytest.raises(ValidationError):
        TeacherRoster(fine=[ft], coarse=[]).validate()
    with pytest.raises(ValidationError, match="coarse roster"):
        TeacherRoster(fine=[ft], coarse=[ft]).validate()
