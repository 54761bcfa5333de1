"""The joint-grained student: multi-teacher projections, a shared encoder
over the concatenated token+entity sequence, dual decoders with
cross-grain memory, and per-grain classification heads.

Three variants share the same parameter layout minus unused stacks:

    encoder_only         heads read the joint encoder outputs
    decoder_only         decoders run directly on the projected inputs
    encoder_and_decoder  full pipeline

Token-entity alignment logits are always t @ E^T for whichever (t, E)
feed the heads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor
from .corpus import DocumentPage, schema_labels
from .errors import FormatError, ShapeError, ValidationError
from .nn import DecoderLayer, EncoderLayer, LayerNorm, Linear, Module, sinusoidal_positions
from .teachers import TeacherOutput, TeacherRoster

VARIANTS = ("encoder_only", "decoder_only", "encoder_and_decoder")
GRAIN_MASK_VALUE = -1e30


@dataclass
class StudentConfig:
    fine_dims: list[int]
    coarse_dims: list[int]
    n_classes: int = 4
    variant: str = "encoder_and_decoder"
    dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    ff_dim: int = 0          # 0 means 4 * dim
    use_positions: bool = False
    cross_grain_attention: bool = True
    cross_attention: bool = True

    def resolved_ff(self) -> int:
        return self.ff_dim if self.ff_dim else 4 * self.dim

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant '{self.variant}'")
        if self.dim % self.heads != 0:
            raise ValidationError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not self.fine_dims or not self.coarse_dims:
            raise ValidationError("teacher roster empty for one grain")
        if self.n_classes < 2:
            raise ValidationError("need at least two classes")

    def to_dict(self) -> dict:
        return {
            "fine_dims": list(self.fine_dims),
            "coarse_dims": list(self.coarse_dims),
            "n_classes": self.n_classes,
            "variant": self.variant,
            "dim": self.dim,
            "encoder_layers": self.encoder_layers,
            "decoder_layers": self.decoder_layers,
            "heads": self.heads,
            "ff_dim": self.ff_dim,
            "use_positions": self.use_positions,
            "cross_grain_attention": self.cross_grain_attention,
            "cross_attention": self.cross_attention,
        }

    @staticmethod
    def from_dict(d: dict) -> "StudentConfig":
        return StudentConfig(**d)

    @staticmethod
    def for_roster(roster: TeacherRoster, **kwargs) -> "StudentConfig":
        cfg = StudentConfig(fine_dims=[t.hp.dim for t in roster.fine],
                            coarse_dims=[t.hp.dim for t in roster.coarse],
                            n_classes=len(schema_labels(roster.schema_id)),
                            **kwargs)
        cfg.validate()
        return cfg


class StudentParams(Module):
    """All learnable leaves of the student, enumerable by name."""

    def __init__(self, config: StudentConfig, seed: int):
        config.validate()
        self.config = config
        d, heads, ff = config.dim, config.heads, config.resolved_ff()
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(d)
        self.fine_proj = Linear(rng, sum(config.fine_dims), d)
        self.fine_norm = LayerNorm(d)
        self.coarse_proj = Linear(rng, sum(config.coarse_dims), d)
        self.coarse_norm = LayerNorm(d)
        self.grain_emb = Tensor(rng.uniform(-bound, bound, size=(2, d)),
                                requires_grad=True)
        use_enc = config.variant in ("encoder_only", "encoder_and_decoder")
        use_dec = config.variant in ("decoder_only", "encoder_and_decoder")
        self.encoder = [EncoderLayer(rng, d, heads, ff)
                        for _ in range(config.encoder_layers)] if use_enc else []
        self.fine_decoder = [DecoderLayer(rng, d, heads, ff)
                             for _ in range(config.decoder_layers)] if use_dec else []
        self.coarse_decoder = [DecoderLayer(rng, d, heads, ff)
                               for _ in range(config.decoder_layers)] if use_dec else []
        self.token_head = Linear(rng, d, config.n_classes)
        self.entity_head = Linear(rng, d, config.n_classes)
        self.fine_bridges = [Linear(rng, df, d) for df in config.fine_dims]
        self.coarse_bridges = [Linear(rng, dc, d) for dc in config.coarse_dims]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        named = dict(self.named_params())
        if set(named) != set(arrays):
            raise FormatError("student arrays do not match parameter structure")
        for name, p in named.items():
            if p.data.shape != arrays[name].shape:
                raise FormatError(f"array '{name}' has shape {arrays[name].shape}, "
                                  f"expected {p.data.shape}")
            p.data = np.array(arrays[name], dtype=np.float64, copy=True)


@dataclass
class ForwardTrace:
    t_hat: Tensor
    e_hat: Tensor
    t_enc: Optional[Tensor]
    e_enc: Optional[Tensor]
    t: Tensor
    e: Tensor
    p_t: Tensor
    p_e: Tensor
    p_align: Tensor


def project_teachers(fine_outputs: Sequence[TeacherOutput],
                     coarse_outputs: Sequence[TeacherOutput],
                     params: StudentParams) -> tuple[Tensor, Tensor]:
    """Concatenate per-position teacher hidden states and project per grain."""
    cfg = params.config
    if len(fine_outputs) != len(cfg.fine_dims) or len(coarse_outputs) != len(cfg.coarse_dims):
        raise ShapeError(
            f"roster mismatch: got {len(fine_outputs)} fine / {len(coarse_outputs)} "
            f"coarse outputs, config expects {len(cfg.fine_dims)}/{len(cfg.coarse_dims)}")

    def stack(outputs, dims, label):
        rows = {o.hidden.shape[0] for o in outputs}
        if len(rows) != 1:
            raise ShapeError(f"{label} teacher outputs disagree on rows: {sorted(rows)}")
        for o, d in zip(outputs, dims):
            if o.hidden.shape[1] != d:
                raise ShapeError(f"{label} teacher hidden dim {o.hidden.shape[1]}, "
                                 f"config expects {d}")
        return ad.concat([Tensor(o.hidden) for o in outputs], axis=1)

    t_hat = params.fine_norm(params.fine_proj(stack(fine_outputs, cfg.fine_dims, "fine")))
    e_hat = params.coarse_norm(params.coarse_proj(stack(coarse_outputs, cfg.coarse_dims,
                                                        "coarse")))
    return t_hat, e_hat


def _grain_mask(k: int, n: int) -> Tensor:
    mask = np.zeros((k + n, k + n))
    mask[:k, k:] = GRAIN_MASK_VALUE
    mask[k:, :k] = GRAIN_MASK_VALUE
    return Tensor(mask)


def joint_encode(t_hat: Tensor, e_hat: Tensor, params: StudentParams
                 ) -> tuple[Tensor, Tensor]:
    """Full self-attention over the [tokens; entities] sequence with
    learned grain-type embeddings (and optional sinusoidal positions)."""
    cfg = params.config
    k, n = t_hat.shape[0], e_hat.shape[0]
    t_in = ad.add(t_hat, ad.take_rows(params.grain_emb, [0] * k))
    e_in = ad.add(e_hat, ad.take_rows(params.grain_emb, [1] * n))
    if cfg.use_positions:
        t_in = ad.add(t_in, Tensor(sinusoidal_positions(k, cfg.dim)))
        e_in = ad.add(e_in, Tensor(sinusoidal_positions(n, cfg.dim)))
    x = ad.concat([t_in, e_in], axis=0)
    mask = None if cfg.cross_grain_attention else _grain_mask(k, n)
    for layer in params.encoder:
        x = layer(x, mask)
    return ad.slice_rows(x, 0, k), ad.slice_rows(x, k, k + n)


def fine_decode(t_in: Tensor, memory: Tensor, params: StudentParams) -> Tensor:
    x = t_in
    for layer in params.fine_decoder:
        x = layer(x, memory, params.config.cross_attention)
    return x


def coarse_decode(e_in: Tensor, memory: Tensor, params: StudentParams) -> Tensor:
    x = e_in
    for layer in params.coarse_decoder:
        x = layer(x, memory, params.config.cross_attention)
    return x


TeacherSource = Union[TeacherRoster, tuple]


def student_forward(page: DocumentPage, teachers: TeacherSource,
                    config: StudentConfig, params: StudentParams) -> ForwardTrace:
    """Run the configured variant over one page.

    `teachers` is either a TeacherRoster (inference runs here) or a
    precomputed (fine_outputs, coarse_outputs) pair, which training loops
    use to avoid re-running frozen teachers every epoch.
    """
    config.validate()
    if isinstance(teachers, TeacherRoster):
        fine_outputs, coarse_outputs = teachers.infer(page)
    else:
        fine_outputs, coarse_outputs = teachers
    t_hat, e_hat = project_teachers(fine_outputs, coarse_outputs, params)
    t_enc = e_enc = None
    if config.variant == "encoder_only":
        t_enc, e_enc = joint_encode(t_hat, e_hat, params)
        t, e = t_enc, e_enc
    elif config.variant == "decoder_only":
        t = fine_decode(t_hat, e_hat, params)
        e = coarse_decode(e_hat, t_hat, params)
    else:
        t_enc, e_enc = joint_encode(t_hat, e_hat, params)
        t = fine_decode(t_enc, e_enc, params)
        e = coarse_decode(e_enc, t_enc, params)
    p_t = params.token_head(t)
    p_e = params.entity_head(e)
    p_align = ad.matmul(t, ad.transpose(e))
    return ForwardTrace(t_hat=t_hat, e_hat=e_hat, t_enc=t_enc, e_enc=e_enc,
                        t=t, e=e, p_t=p_t, p_e=p_e, p_align=p_align)


# ---------------------------------------------------------------------------
# persistence

STUDENT_KIND = "student"


def save_student(params: StudentParams, path) -> None:
    checkpoint.save_arrays(path, STUDENT_KIND, params.config.to_dict(),
                           {name: p.data for name, p in params.named_params()})


def load_student(path) -> StudentParams:
    kind, config, arrays = checkpoint.load_arrays(path, expected_kind=STUDENT_KIND)
    params = StudentParams(StudentConfig.from_dict(config), seed=0)
    params.load_state(arrays)
    return params
