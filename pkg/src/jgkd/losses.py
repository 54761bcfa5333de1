"""The five loss families and their weighted combination.

Per grain, a training step can combine:

  task         cross entropy of student logits against gold labels
  similarity   negative cosine similarity between student and teacher
               logits, averaged over teachers and positions
  distilling   mean squared error between student and teacher logits,
               averaged over teachers and positions
  triplet      cross-grain hinge: anchors from one grain's student
               states, candidates from two teachers' bridged hidden
               states of the paired item in the other grain, L2 distance
  alignment    cross entropy of token-entity alignment logits (t @ E^T)
               against each token's owner entity

Averaged (not summed) reductions keep magnitudes length-invariant; the
constant factor is absorbed by the family weight. raw_sum=True restores
the literal double-sum for similarity and a per-teacher sum for
distilling. Disabled families are reported as absent, never as zero.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ValidationError
from .student import ForwardTrace, StudentParams

FAMILIES = ("task_fine", "task_coarse", "similarity", "distilling",
            "triplet", "alignment")


@dataclass
class LossWeights:
    """Per-family weights; None disables a family entirely.

    A family enabled with weight 0.0 still runs (its value is reported
    and its zero-scaled gradient flows), which is distinct from None.
    """

    task_fine: Optional[float] = 1.0
    task_coarse: Optional[float] = 1.0
    similarity: Optional[float] = 1.0
    distilling: Optional[float] = 1.0
    triplet: Optional[float] = 1.0
    alignment: Optional[float] = 1.0
    margin: float = 1.0
    raw_sum: bool = False

    def validate(self, n_fine_teachers: Optional[int] = None,
                 n_coarse_teachers: Optional[int] = None) -> None:
        for name in FAMILIES:
            w = getattr(self, name)
            if w is not None and w < 0:
                raise ValidationError(f"loss weight {name} must be >= 0, got {w}")
        if self.margin < 0:
            raise ValidationError(f"triplet margin must be >= 0, got {self.margin}")
        if self.task_fine is None and self.task_coarse is None:
            raise ValidationError("at least one task loss must be enabled")
        if self.triplet is not None:
            if n_fine_teachers is not None and n_fine_teachers < 2:
                raise ConfigError("triplet loss needs at least two fine teachers "
                                  "(disable it or extend the roster)")
            if n_coarse_teachers is not None and n_coarse_teachers < 2:
                raise ConfigError("triplet loss needs at least two coarse teachers "
                                  "(disable it or extend the roster)")

    def enabled_families(self) -> tuple[str, ...]:
        return tuple(n for n in FAMILIES if getattr(self, n) is not None)


@dataclass
class LossBreakdown:
    """Per-family scalar values for one step; disabled parts are None."""

    l_t: Optional[float] = None
    l_e: Optional[float] = None
    l_sim_t: Optional[float] = None
    l_sim_e: Optional[float] = None
    l_distil_t: Optional[float] = None
    l_distil_e: Optional[float] = None
    l_triplet_fg: Optional[float] = None
    l_triplet_cg: Optional[float] = None
    l_align: Optional[float] = None
    total: float = 0.0

    def parts(self) -> dict[str, Optional[float]]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.name != "total"}


def task_ce(logits: Tensor, labels) -> Tensor:
    """Gold-label cross entropy for either grain."""
    return ad.cross_entropy_rows(logits, labels)


def _teacher_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def similarity_loss(teacher_logit_sets: Sequence, student_logits: Tensor,
                    raw_sum: bool = False) -> Tensor:
    if not teacher_logit_sets:
        raise ValidationError("similarity loss needs at least one teacher")
    pieces = []
    for t in teacher_logit_sets:
        t = _teacher_tensor(t)
        if t.shape != student_logits.shape:
            raise ValidationError(
                f"teacher logits {t.shape} vs student {student_logits.shape}")
        cos = ad.cosine_rows(t, student_logits)
        pieces.append(ad.tsum(cos) if raw_sum else ad.tmean(cos))
    acc = pieces[0]
    for p in pieces[1:]:
        acc = ad.add(acc, p)
    if not raw_sum:
        acc = ad.scale(acc, 1.0 / len(pieces))
    return ad.scale(acc, -1.0)


def distil_loss(teacher_logit_sets: Sequence, student_logits: Tensor,
                raw_sum: bool = False) -> Tensor:
    if not teacher_logit_sets:
        raise ValidationError("distilling loss needs at least one teacher")
    pieces = []
    for t in teacher_logit_sets:
        t = _teacher_tensor(t)
        if t.shape != student_logits.shape:
            raise ValidationError(
                f"teacher logits {t.shape} vs student {student_logits.shape}")
        diff = ad.sub(t, student_logits)
        pieces.append(ad.tmean(ad.mul(diff, diff)))
    acc = pieces[0]
    for p in pieces[1:]:
        acc = ad.add(acc, p)
    if not raw_sum:
        acc = ad.scale(acc, 1.0 / len(pieces))
    return acc


def _pick_two(n_teachers: int, rng: Optional[np.random.Generator]) -> tuple[int, int]:
    if n_teachers == 2:
        return 0, 1
    if rng is None:
        raise ValidationError("rng required to sample two of >2 teachers")
    picked = sorted(rng.choice(n_teachers, size=2, replace=False).tolist())
    return picked[0], picked[1]


def _hinge_mean(d_a: Tensor, d_b: Tensor, margin: float) -> Tensor:
    # positive = closer candidate, so d_pos - d_neg = -|d_a - d_b|; at a
    # tie the hinge is exactly the margin whichever candidate is "positive"
    gap = ad.sub(d_a, d_b)
    gap_abs = ad.add(ad.relu(gap), ad.relu(ad.scale(gap, -1.0)))
    hinge = ad.relu(ad.add(ad.scale(gap_abs, -1.0),
                           Tensor(np.full(gap.shape, margin))))
    return ad.tmean(hinge)


def triplet_fg(anchor_entities: Tensor, teacher_token_sets: Sequence,
               bridges: Sequence, pairing, margin: float,
               rng: Optional[np.random.Generator] = None) -> Tensor:
    """Anchors are student entity states; candidates are two fine
    teachers' bridged token states of each token owned by the entity."""
    if len(teacher_token_sets) < 2:
        raise ConfigError("cross-grain triplet needs at least two fine teachers")
    pairing = np.asarray(pairing, dtype=np.int64)
    i, j = _pick_two(len(teacher_token_sets), rng)
    anchors = ad.take_rows(anchor_entities, pairing)              # [k x d]
    cand_a = bridges[i](_teacher_tensor(teacher_token_sets[i]))   # [k x d]
    cand_b = bridges[j](_teacher_tensor(teacher_token_sets[j]))
    d_a = ad.l2_norm_rows(ad.sub(anchors, cand_a))
    d_b = ad.l2_norm_rows(ad.sub(anchors, cand_b))
    return _hinge_mean(d_a, d_b, margin)


def triplet_cg(anchor_tokens: Tensor, teacher_entity_sets: Sequence,
               bridges: Sequence, pairing, margin: float,
               rng: Optional[np.random.Generator] = None) -> Tensor:
    """Anchors are student token states; candidates are two coarse
    teachers' bridged states of each token's owner entity; all k
    token-entity pairs contribute."""
    if len(teacher_entity_sets) < 2:
        raise ConfigError("cross-grain triplet needs at least two coarse teachers")
    pairing = np.asarray(pairing, dtype=np.int64)
    i, j = _pick_two(len(teacher_entity_sets), rng)
    cand_a = ad.take_rows(bridges[i](_teacher_tensor(teacher_entity_sets[i])), pairing)
    cand_b = ad.take_rows(bridges[j](_teacher_tensor(teacher_entity_sets[j])), pairing)
    d_a = ad.l2_norm_rows(ad.sub(anchor_tokens, cand_a))
    d_b = ad.l2_norm_rows(ad.sub(anchor_tokens, cand_b))
    return _hinge_mean(d_a, d_b, margin)


def alignment_loss(t: Tensor, e: Tensor, owners) -> Tensor:
    """Cross entropy of per-token alignment logits against owner indices."""
    owners = np.asarray(owners, dtype=np.int64)
    p_align = ad.matmul(t, ad.transpose(e))
    return ad.cross_entropy_rows(p_align, owners)


def total_loss(trace: ForwardTrace, page, fine_outputs, coarse_outputs,
               params: StudentParams, weights: LossWeights,
               rng: Optional[np.random.Generator] = None
               ) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the enabled families for one page."""
    weights.validate(len(fine_outputs), len(coarse_outputs))
    owners = page.owners()
    terms: list[tuple[float, Tensor]] = []
    bd = LossBreakdown()

    def admit(weight, tensor):
        terms.append((weight, tensor))
        return tensor.item()

    if weights.task_fine is not None:
        bd.l_t = admit(weights.task_fine, task_ce(trace.p_t, page.token_labels()))
    if weights.task_coarse is not None:
        bd.l_e = admit(weights.task_coarse, task_ce(trace.p_e, page.entity_labels()))
    if weights.similarity is not None:
        bd.l_sim_t = admit(weights.similarity, similarity_loss(
            [o.logits for o in fine_outputs], trace.p_t, weights.raw_sum))
        bd.l_sim_e = admit(weights.similarity, similarity_loss(
            [o.logits for o in coarse_outputs], trace.p_e, weights.raw_sum))
    if weights.distilling is not None:
        bd.l_distil_t = admit(weights.distilling, distil_loss(
            [o.logits for o in fine_outputs], trace.p_t, weights.raw_sum))
        bd.l_distil_e = admit(weights.distilling, distil_loss(
            [o.logits for o in coarse_outputs], trace.p_e, weights.raw_sum))
    if weights.triplet is not None:
        bd.l_triplet_fg = admit(weights.triplet, triplet_fg(
            trace.e, [o.hidden for o in fine_outputs], params.fine_bridges,
            owners, weights.margin, rng))
        bd.l_triplet_cg = admit(weights.triplet, triplet_cg(
            trace.t, [o.hidden for o in coarse_outputs], params.coarse_bridges,
            owners, weights.margin, rng))
    if weights.alignment is not None:
        bd.l_align = admit(weights.alignment,
                           ad.cross_entropy_rows(trace.p_align, owners))

    total = None
    for w, tensor in terms:
        scaled = ad.scale(tensor, w)
        total = scaled if total is None else ad.add(total, scaled)
    bd.total = total.item()
    return total, bd
