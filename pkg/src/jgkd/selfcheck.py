"""Built-in verification: finite-difference checks over the whole
primitive registry and all nine loss values, plus a table of hand-derived
oracle values. `jgkd selfcheck` runs everything and exits nonzero on any
failure.

Shapes are drawn from small random ranges (rows <= 6, classes <= 4,
dims <= 8); inputs land away from relu/hinge kinks by construction so the
central differences are valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import GradCheckReport, Tensor, grad_check
from .nn import Linear

H = 1e-5
TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _p(rng, shape, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _away_from_zero(rng, shape, gap=0.1):
    data = rng.uniform(-2.0, 2.0, size=shape)
    data = np.where(np.abs(data) < gap, data + np.sign(data + 1e-9) * gap, data)
    return Tensor(data, requires_grad=True)


def _gc(name: str, build: Callable[[], Tensor], params: dict,
        rng) -> CheckResult:
    """Grad-check `build()`, scalarized once against fixed random weights."""
    probe = build()
    w = rng.normal(size=probe.shape) if probe.ndim else None

    def f(_params):
        out = build()
        return ad.tsum(ad.mul(out, Tensor(w))) if w is not None else out

    rep: GradCheckReport = grad_check(f, params, h=H, tol=TOL)
    detail = f"max_rel_err={rep.max_rel_error:.3e} worst={rep.worst_param or '-'}"
    return CheckResult(name=name, passed=rep.passed, detail=detail)


def primitive_checks(seed: int = 0) -> list[CheckResult]:
    """One grad check per registry primitive, plus the attention composite."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 7))
    n = int(rng.integers(1, 4))
    c = int(rng.integers(2, 5))
    d = 2 * int(rng.integers(1, 5))  # even so attention heads divide it
    results = []

    a, b = _p(rng, (m, d)), _p(rng, (m, d))
    results.append(_gc("add", lambda: ad.add(a, b), {"a": a, "b": b}, rng))
    results.append(_gc("sub", lambda: ad.sub(a, b), {"a": a, "b": b}, rng))
    results.append(_gc("mul", lambda: ad.mul(a, b), {"a": a, "b": b}, rng))
    bias = _p(rng, (d,))
    results.append(_gc("add_row_broadcast", lambda: ad.add(a, bias),
                       {"a": a, "bias": bias}, rng))
    results.append(_gc("scale", lambda: ad.scale(a, -1.7), {"a": a}, rng))
    w = _p(rng, (d, c))
    results.append(_gc("matmul", lambda: ad.matmul(a, w), {"a": a, "w": w}, rng))
    results.append(_gc("transpose", lambda: ad.transpose(a), {"a": a}, rng))
    results.append(_gc("concat_rows", lambda: ad.concat([a, b], axis=0),
                       {"a": a, "b": b}, rng))
    results.append(_gc("concat_cols", lambda: ad.concat([a, b], axis=1),
                       {"a": a, "b": b}, rng))
    results.append(_gc("slice_rows", lambda: ad.slice_rows(a, 1, m), {"a": a}, rng))
    results.append(_gc("slice_cols", lambda: ad.slice_cols(a, 1, d), {"a": a}, rng))
    table = _p(rng, (m + 2, d))
    idx = rng.integers(0, m + 2, size=m)
    results.append(_gc("take_rows (embedding lookup)",
                       lambda: ad.take_rows(table, idx), {"t": table}, rng))
    x = _p(rng, (m, c))
    results.append(_gc("softmax_rows", lambda: ad.softmax_rows(x), {"x": x}, rng))
    targets = rng.integers(0, c, size=m)
    results.append(_gc("cross_entropy_rows",
                       lambda: ad.cross_entropy_rows(x, targets), {"x": x}, rng))
    r = _away_from_zero(rng, (m, d))
    results.append(_gc("relu (hinge/max)", lambda: ad.relu(r), {"r": r}, rng))
    gain, lnb = _p(rng, (d,), 0.5, 1.5), _p(rng, (d,))
    results.append(_gc("layer_norm", lambda: ad.layer_norm(a, gain, lnb),
                       {"a": a, "g": gain, "b": lnb}, rng))
    nz = _away_from_zero(rng, (m, d), gap=0.3)
    results.append(_gc("l2_norm_rows", lambda: ad.l2_norm_rows(nz), {"z": nz}, rng))
    ca, cb = _away_from_zero(rng, (m, d), 0.3), _away_from_zero(rng, (m, d), 0.3)
    results.append(_gc("cosine_rows", lambda: ad.cosine_rows(ca, cb),
                       {"a": ca, "b": cb}, rng))
    results.append(_gc("sum", lambda: ad.tsum(a), {"a": a}, rng))
    results.append(_gc("mean", lambda: ad.tmean(a), {"a": a}, rng))

    q, k, v = _p(rng, (m, d)), _p(rng, (n, d)), _p(rng, (n, d))
    results.append(_gc("attention", lambda: ad.attention(q, k, v),
                       {"q": q, "k": k, "v": v}, rng))
    mask_arr = np.zeros((m, n))
    if n > 1:
        mask_arr[:, n - 1] = -1e30
    mask = Tensor(mask_arr)
    results.append(_gc("attention_masked", lambda: ad.attention(q, k, v, mask),
                       {"q": q, "k": k, "v": v}, rng))
    return results


def loss_checks(seed: int = 0) -> list[CheckResult]:
    """Finite-difference checks for all nine loss values."""
    rng = np.random.default_rng(seed + 1)
    k = int(rng.integers(2, 7))
    n = int(rng.integers(1, 4))
    c = int(rng.integers(2, 5))
    d = int(rng.integers(2, 9))
    owners = rng.integers(0, n, size=k)
    results = []

    for name, rows in (("loss l_t (token task CE)", k),
                       ("loss l_e (entity task CE)", n)):
        logits = _p(rng, (rows, c))
        targets = rng.integers(0, c, size=rows)
        results.append(_gc(name,
                           lambda lg=logits, t=targets: losses.task_ce(lg, t),
                           {"x": logits}, rng))

    for name, rows in (("loss l_sim_t", k), ("loss l_sim_e", n)):
        sets = [rng.normal(size=(rows, c)) + 0.5 for _ in range(2)]
        student = _away_from_zero(rng, (rows, c), 0.3)
        results.append(_gc(name,
                           lambda s=sets, st=student: losses.similarity_loss(s, st),
                           {"x": student}, rng))
    for name, rows in (("loss l_distil_t", k), ("loss l_distil_e", n)):
        sets = [rng.normal(size=(rows, c)) for _ in range(2)]
        student = _p(rng, (rows, c))
        results.append(_gc(name,
                           lambda s=sets, st=student: losses.distil_loss(s, st),
                           {"x": student}, rng))

    # triplet: configurations resampled until every pair sits away from the
    # tie point; the margin is set above the largest gap so every hinge is
    # active (nonzero gradient) yet clear of its kink
    for name in ("loss l_triplet_fg", "loss l_triplet_cg"):
        is_fg = name.endswith("fg")
        while True:
            anchors = _p(rng, (n if is_fg else k, d))
            items = k if is_fg else n
            sets = [rng.normal(size=(items, d)),
                    3.0 * rng.normal(size=(items, d)) + 2.0]
            bridges = [Linear(rng, d, d), Linear(rng, d, d)]
            bridged = [s @ br.w.data + br.b.data for s, br in zip(sets, bridges)]
            if is_fg:
                am = anchors.data[owners]
                d_a = np.linalg.norm(am - bridged[0], axis=1)
                d_b = np.linalg.norm(am - bridged[1], axis=1)
            else:
                d_a = np.linalg.norm(anchors.data - bridged[0][owners], axis=1)
                d_b = np.linalg.norm(anchors.data - bridged[1][owners], axis=1)
            gap = np.abs(d_a - d_b)
            margin = float(np.max(gap) * 1.5 + 0.05)
            if np.all(gap > 1e-2) and np.all(np.abs(gap - margin) > 1e-2) \
                    and np.all(d_a > 0.05) and np.all(d_b > 0.05):
                break
        fn = losses.triplet_fg if is_fg else losses.triplet_cg
        params = {"anchors": anchors,
                  "b0w": bridges[0].w, "b0b": bridges[0].b,
                  "b1w": bridges[1].w, "b1b": bridges[1].b}
        results.append(_gc(name,
                           lambda fn=fn, an=anchors, s=sets, br=bridges, mg=margin:
                           fn(an, s, br, owners, mg), params, rng))

    t = _p(rng, (k, d))
    e = _p(rng, (n, d))
    results.append(_gc("loss l_align",
                       lambda: losses.alignment_loss(t, e, owners),
                       {"t": t, "e": e}, rng))
    return results


def oracle_checks() -> list[CheckResult]:
    """Frozen hand-derived loss values at their stated tolerances."""
    results = []

    def close(name, got, want, tol=1e-9):
        results.append(CheckResult(name=name, passed=abs(got - want) <= tol,
                                   detail=f"got={got!r} want={want!r} tol={tol}"))

    close("oracle ce_uniform_2class",
          losses.task_ce(Tensor([[0.0, 0.0]]), [0]).item(), math.log(2.0))
    rows = np.array([[0.2, -1.4, 0.7], [2.0, 0.1, -0.3]])
    close("oracle similarity_identical",
          losses.similarity_loss([rows.copy()], Tensor(rows)).item(), -1.0)
    close("oracle similarity_45_degrees",
          losses.similarity_loss([np.array([[1.0, 0.0]])],
                                 Tensor([[1.0, 1.0]])).item(),
          -math.sqrt(0.5), tol=1e-6)
    close("oracle distil_identical",
          losses.distil_loss([np.array([[0.3, -0.7]])],
                             Tensor([[0.3, -0.7]])).item(), 0.0)
    close("oracle distil_hand_case",
          losses.distil_loss([np.array([[0.0, 2.0]])],
                             Tensor([[1.0, 0.0]])).item(), 2.5)
    bridge = Linear(np.random.default_rng(0), 1, 1)
    bridge.w.data = np.eye(1)
    bridge.b.data = np.zeros(1)
    close("oracle triplet_equal_candidates",
          losses.triplet_fg(Tensor([[0.5]]),
                            [np.array([[2.0]]), np.array([[2.0]])],
                            [bridge, bridge], [0], 1.0).item(), 1.0, tol=0.0)
    close("oracle triplet_one_dim",
          losses.triplet_fg(Tensor([[0.0]]),
                            [np.array([[1.0]]), np.array([[1.5]])],
                            [bridge, bridge], [0], 1.0).item(), 0.5)
    close("oracle alignment_single_entity",
          losses.alignment_loss(Tensor([[1.0, 2.0]]), Tensor([[0.5, 0.5]]),
                                [0]).item(), 0.0, tol=0.0)
    close("oracle alignment_orthogonal_uniform",
          losses.alignment_loss(Tensor([[1.0, 0.0, 0.0]]),
                                Tensor(np.zeros((4, 3))), [1]).item(),
          math.log(4.0))
    close("oracle alignment_basis_case",
          losses.alignment_loss(Tensor([[1.0, 0.0, 0.0, 0.0]]),
                                Tensor(np.eye(4)[:2]), [0]).item(),
          0.313262, tol=1e-4)
    return results


def run_selfcheck(seed: int = 0, printer=print) -> int:
    """Run every check; returns the number of failures."""
    all_results = primitive_checks(seed) + loss_checks(seed) + oracle_checks()
    failures = 0
    for res in all_results:
        status = "PASS" if res.passed else "FAIL"
        printer(f"[{status}] {res.name}: {res.detail}")
        failures += 0 if res.passed else 1
    printer(f"selfcheck: {len(all_results) - failures}/{len(all_results)} checks passed")
    return failures
