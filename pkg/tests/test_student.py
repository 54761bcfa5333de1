"""Student forward contracts: projections, encoder equivariances,
decoder behavior, variant wiring, and finite-difference verification."""

import numpy as np
import pytest

from jgkd import autodiff as ad
from jgkd.autodiff import Tape, Tensor, grad_check
from jgkd.corpus import GenSpec, generate_corpus
from jgkd.errors import ShapeError, ValidationError
from jgkd.student import (
    StudentConfig,
    StudentParams,
    coarse_decode,
    fine_decode,
    joint_encode,
    load_student,
    project_teachers,
    save_student,
    student_forward,
)
from jgkd.teachers import TeacherOutput

RNG = np.random.default_rng(99)


def _outputs(k, dims, c=4, rng=RNG):
    return [TeacherOutput(hidden=rng.normal(size=(k, d)),
                          logits=rng.normal(size=(k, c))) for d in dims]


def _config(**kw):
    base = dict(fine_dims=[48], coarse_dims=[32], n_classes=4, dim=64,
                encoder_layers=2, decoder_layers=2, heads=4)
    base.update(kw)
    cfg = StudentConfig(**base)
    cfg.validate()
    return cfg


def _page(k=4, n=2, seed=0):
    spec = GenSpec(n_pages=50, entities_min=n, entities_max=n,
                   tokens_min=1, tokens_max=max(1, k), vocab_size=40)
    for page in generate_corpus(spec, seed=seed):
        if page.k == k and page.n == n:
            return page
    raise AssertionError(f"no generated page with k={k}, n={n}")


def test_projection_shape_single_teacher():
    cfg = _config()
    params = StudentParams(cfg, seed=1)
    t_hat, e_hat = project_teachers(_outputs(5, [48]), _outputs(3, [32]), params)
    assert t_hat.shape == (5, 64)
    assert e_hat.shape == (3, 64)


def test_projection_shape_two_teachers():
    cfg = _config(fine_dims=[48, 40], coarse_dims=[32, 24])
    params = StudentParams(cfg, seed=1)
    t_hat, e_hat = project_teachers(_outputs(7, [48, 40]), _outputs(2, [32, 24]), params)
    assert t_hat.shape == (7, 64)
    assert e_hat.shape == (2, 64)


def test_projection_zero_parameters_hits_layernorm_epsilon_path():
    cfg = _config()
    params = StudentParams(cfg, seed=1)
    params.fine_proj.w.data[:] = 0.0
    params.fine_proj.b.data[:] = 0.0
    t_hat, _ = project_teachers(_outputs(5, [48]), _outputs(3, [32]), params)
    assert np.all(np.isfinite(t_hat.data))
    np.testing.assert_array_equal(t_hat.data, np.zeros((5, 64)))


def test_projection_roster_mismatch():
    params = StudentParams(_config(fine_dims=[48, 40], coarse_dims=[32]), seed=1)
    with pytest.raises(ShapeError):
        project_teachers(_outputs(5, [48]), _outputs(3, [32]), params)


def test_joint_encode_shapes_k1_n1():
    params = StudentParams(_config(), seed=2)
    t_hat = Tensor(RNG.normal(size=(1, 64)))
    e_hat = Tensor(RNG.normal(size=(1, 64)))
    t_enc, e_enc = joint_encode(t_hat, e_hat, params)
    assert t_enc.shape == (1, 64) and e_enc.shape == (1, 64)


def test_joint_encode_entity_permutation_equivariance():
    params = StudentParams(_config(use_positions=False), seed=3)
    t_hat = Tensor(RNG.normal(size=(5, 64)))
    e_rows = RNG.normal(size=(4, 64))
    perm = np.array([2, 0, 3, 1])
    _, e_enc = joint_encode(t_hat, Tensor(e_rows), params)
    _, e_enc_p = joint_encode(t_hat, Tensor(e_rows[perm]), params)
    np.testing.assert_allclose(e_enc_p.data, e_enc.data[perm], atol=1e-10)


def test_joint_encode_grain_mask_reproduces_independent_encoders():
    cfg = _config(cross_grain_attention=False)
    params = StudentParams(cfg, seed=4)
    t_hat = Tensor(RNG.normal(size=(6, 64)))
    e_hat = Tensor(RNG.normal(size=(3, 64)))
    t_enc, e_enc = joint_encode(t_hat, e_hat, params)

    # reference: run the same encoder stack separately per grain
    t_ref = ad.add(t_hat, ad.take_rows(params.grain_emb, [0] * 6))
    e_ref = ad.add(e_hat, ad.take_rows(params.grain_emb, [1] * 3))
    for layer in params.encoder:
        t_ref = layer(t_ref)
    for layer in params.encoder:
        e_ref = layer(e_ref)
    np.testing.assert_allclose(t_enc.data, t_ref.data, atol=1e-10)
    np.testing.assert_allclose(e_enc.data, e_ref.data, atol=1e-10)


def test_fine_decode_single_memory_row_duplication_invariant():
    # softmax over one key puts weight 1 on it, so duplicating the row
    # (two identical keys at weight 1/2 each) cannot change the output
    params = StudentParams(_config(), seed=5)
    t_in = Tensor(RNG.normal(size=(4, 64)))
    mem = RNG.normal(size=(1, 64))
    out1 = fine_decode(t_in, Tensor(mem), params)
    out2 = fine_decode(t_in, Tensor(np.vstack([mem, mem])), params)
    np.testing.assert_allclose(out1.data, out2.data, atol=1e-10)


@pytest.mark.parametrize("k,n", [(1, 1), (2, 1), (8, 3), (64, 16)])
def test_decode_shape_preserved(k, n):
    params = StudentParams(_config(), seed=6)
    t_in = Tensor(RNG.normal(size=(k, 64)))
    e_in = Tensor(RNG.normal(size=(n, 64)))
    assert fine_decode(t_in, e_in, params).shape == (k, 64)
    assert coarse_decode(e_in, t_in, params).shape == (n, 64)


def test_decoder_without_cross_attention_is_plain_self_attention_stack():
    cfg = _config(cross_attention=False)
    params = StudentParams(cfg, seed=7)
    x_in = Tensor(RNG.normal(size=(5, 64)))
    mem = Tensor(RNG.normal(size=(3, 64)))
    got = fine_decode(x_in, mem, params)
    ref = x_in
    for layer in params.fine_decoder:
        ref = layer.ln1(ad.add(ref, layer.self_attn(ref, ref, ref)))
        ref = layer.ln3(ad.add(ref, layer.ff(ref)))
    np.testing.assert_array_equal(got.data, ref.data)


def test_decoder_construction_symmetry_with_tied_stacks():
    params = StudentParams(_config(), seed=8)
    params.coarse_decoder = params.fine_decoder  # tie the two stacks
    a = Tensor(RNG.normal(size=(4, 64)))
    b = Tensor(RNG.normal(size=(4, 64)))
    np.testing.assert_array_equal(fine_decode(a, b, params).data,
                                  coarse_decode(a, b, params).data)


def test_student_forward_shape_contract():
    page = _page(k=4, n=2)
    cfg = _config(fine_dims=[48, 40], coarse_dims=[32, 24])
    params = StudentParams(cfg, seed=9)
    outs = (_outputs(4, [48, 40]), _outputs(2, [32, 24]))
    trace = student_forward(page, outs, cfg, params)
    assert trace.p_t.shape == (4, 4)
    assert trace.p_e.shape == (2, 4)
    assert trace.p_align.shape == (4, 2)
    np.testing.assert_array_equal(trace.p_align.data, trace.t.data @ trace.e.data.T)


def test_variants_differ_in_parameters_and_outputs():
    page = _page(k=4, n=2)
    outs = (_outputs(4, [48]), _outputs(2, [32]))
    checks = {}
    counts = {}
    for variant in ("encoder_only", "decoder_only", "encoder_and_decoder"):
        cfg = _config(variant=variant)
        params = StudentParams(cfg, seed=10)
        counts[variant] = sum(p.data.size for p in params.params())
        trace = student_forward(page, outs, cfg, params)
        checks[variant] = trace.p_t.data.tobytes()
    assert len(set(counts.values())) == 3
    assert len(set(checks.values())) == 3


def test_student_forward_deterministic():
    page = _page(k=5, n=2)
    cfg = _config()
    params = StudentParams(cfg, seed=11)
    outs = (_outputs(5, [48]), _outputs(2, [32]))
    a = student_forward(page, outs, cfg, params)
    b = student_forward(page, outs, cfg, params)
    assert np.array_equal(a.p_t.data, b.p_t.data)
    assert np.array_equal(a.p_align.data, b.p_align.data)


def test_teacher_outputs_receive_no_gradient():
    page = _page(k=4, n=2)
    cfg = _config()
    params = StudentParams(cfg, seed=12)
    fine = _outputs(4, [48])
    coarse = _outputs(2, [32])
    with Tape() as tape:
        trace = student_forward(page, (fine, coarse), cfg, params)
        leaf_grads = tape.backward(ad.tmean(trace.p_t))
    own = {p.uid for p in params.params()}
    assert set(leaf_grads) <= own


def test_full_forward_grad_check_small_page():
    page = _page(k=4, n=2)
    cfg = StudentConfig(fine_dims=[6, 5], coarse_dims=[7, 4], n_classes=3,
                        dim=8, encoder_layers=1, decoder_layers=1, heads=2)
    cfg.validate()
    # seed chosen so every relu pre-activation is > 1e-2 from its kink,
    # keeping central differences valid at h=1e-5
    params = StudentParams(cfg, seed=17)
    rng = np.random.default_rng(0)
    fine = _outputs(4, [6, 5], c=3, rng=rng)
    coarse = _outputs(2, [7, 4], c=3, rng=rng)
    w_t = rng.normal(size=(4, 3))
    w_e = rng.normal(size=(2, 3))
    w_a = rng.normal(size=(4, 2))
    named = dict(params.named_params())

    def f(_):
        trace = student_forward(page, (fine, coarse), cfg, params)
        s = ad.tsum(ad.mul(trace.p_t, Tensor(w_t)))
        s = ad.add(s, ad.tsum(ad.mul(trace.p_e, Tensor(w_e))))
        return ad.add(s, ad.tsum(ad.mul(trace.p_align, Tensor(w_a))))

    rep = grad_check(f, named, h=1e-5, tol=1e-3)
    assert rep.passed, rep


def _synthetic_page(k, n):
    from jgkd.corpus import DocumentPage, Entity, Token
    assert k >= n >= 1
    counts = [1] * n
    for i in range(k - n):
        counts[i % n] += 1
    tokens, entities = [], []
    band = 1.0 / n
    idx = 0
    for j, cnt in enumerate(counts):
        ids = []
        for t in range(cnt):
            x0, x1 = t / cnt + 0.001, (t + 1) / cnt - 0.001
            tokens.append(Token(text_id=(idx * 7) % 40,
                                bbox=(x0, j * band + 0.001, x1, (j + 1) * band - 0.001),
                                entity_id=j))
            ids.append(idx)
            idx += 1
        entities.append(Entity(label=j % 4, token_ids=ids,
                               visual_feat=np.zeros(4),
                               bbox=(0.0, j * band + 0.001, 1.0, (j + 1) * band - 0.001)))
    page = DocumentPage(tokens=tokens, entities=entities, schema_id="funsd4")
    page.validate()
    return page


@pytest.mark.parametrize("k,n", [(1, 1), (2, 2), (5, 1), (16, 16), (37, 7), (64, 16)])
def test_student_forward_shape_contract_sweep(k, n):
    page = _synthetic_page(k, n)
    cfg = StudentConfig(fine_dims=[6], coarse_dims=[5], n_classes=4, dim=8,
                        encoder_layers=1, decoder_layers=1, heads=2)
    cfg.validate()
    params = StudentParams(cfg, seed=0)
    rng = np.random.default_rng(k * 100 + n)
    fine = [TeacherOutput(hidden=rng.normal(size=(k, 6)),
                          logits=rng.normal(size=(k, 4)))]
    coarse = [TeacherOutput(hidden=rng.normal(size=(n, 5)),
                            logits=rng.normal(size=(n, 4)))]
    trace = student_forward(page, (fine, coarse), cfg, params)
    assert trace.t_hat.shape == (k, 8) and trace.e_hat.shape == (n, 8)
    assert trace.p_t.shape == (k, 4) and trace.p_e.shape == (n, 4)
    assert trace.p_align.shape == (k, n)


def test_student_checkpoint_round_trip(tmp_path):
    page = _page(k=4, n=2)
    cfg = _config()
    params = StudentParams(cfg, seed=14)
    outs = (_outputs(4, [48]), _outputs(2, [32]))
    before = student_forward(page, outs, cfg, params)
    save_student(params, tmp_path / "student.jgkd")
    loaded = load_student(tmp_path / "student.jgkd")
    after = student_forward(page, outs, loaded.config, loaded)
    assert np.array_equal(before.p_t.data, after.p_t.data)
    assert np.array_equal(before.p_align.data, after.p_align.data)


def test_invalid_variant_rejected():
    with pytest.raises(ValidationError):
        StudentConfig(fine_dims=[8], coarse_dims=[8], variant="both").validate()
