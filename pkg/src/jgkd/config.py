"""Flat key=value run configuration.

Every key has a documented default (DEFAULTS below); unknown keys are
rejected; types are coerced from the default's type. CLI flags override
file values, and the fully-resolved configuration is echoed into each
command's output directory as config.resolved.txt.
"""

from __future__ import annotations

from pathlib import Path

from .corpus import GenSpec, SCHEMAS
from .errors import ConfigError
from .harness import TrainSpec
from .losses import LossWeights
from .teachers import TeacherHP

_LOSS_KEYS = ("task_fine", "task_coarse", "sim", "distil", "triplet", "align")
_LOSS_FAMILY = {"task_fine": "task_fine", "task_coarse": "task_coarse",
                "sim": "similarity", "distil": "distilling",
                "triplet": "triplet", "align": "alignment"}

DEFAULTS: dict[str, object] = {
    "seed": 0,
    # corpus generator
    "gen.schema": "funsd4",
    "gen.n_pages": 48,
    "gen.entities_min": 3,
    "gen.entities_max": 6,
    "gen.tokens_min": 1,
    "gen.tokens_max": 4,
    "gen.vocab_size": 200,
    "gen.visual_dim": 16,
    "gen.signal": 1.0,
    "gen.noise": 0.0,
    "gen.split_train": 0.6,
    "gen.split_val": 0.2,
    "gen.split_test": 0.2,
    # teacher pool (parallel lists describe the fine/coarse teachers)
    "teachers.epochs": 20,
    "teachers.lr": 0.003,
    "teachers.layers": 2,
    "teachers.heads": 4,
    "teachers.fine_dims": [48, 40],
    "teachers.fine_positions": [True, False],
    "teachers.coarse_dims": [32, 24],
    "teachers.coarse_visuals": [True, False],
    # student
    "student.variant": "encoder_and_decoder",
    "student.dim": 64,
    "student.encoder_layers": 2,
    "student.decoder_layers": 2,
    "student.heads": 4,
    "student.ff_dim": 0,
    "student.positions": False,
    "student.cross_grain_attention": True,
    "student.cross_attention": True,
    "student.fine_roster": ["fine1", "fine2"],
    "student.coarse_roster": ["coarse1", "coarse2"],
    # losses (enable list + per-family weights)
    "loss.enable": list(_LOSS_KEYS),
    "loss.task_fine": 1.0,
    "loss.task_coarse": 1.0,
    "loss.sim": 1.0,
    "loss.distil": 1.0,
    "loss.triplet": 1.0,
    "loss.align": 1.0,
    "loss.margin": 1.0,
    "loss.raw_sum": False,
    # student training
    "train.lr": 0.001,
    "train.epochs": 50,
    "train.patience": 10,
    # ablations
    "ablate.seeds": [0, 1, 2],
}

KEY_DOC: dict[str, str] = {
    "seed": "base seed for generation/training (overridden by --seed)",
    "gen.schema": f"label schema, one of {sorted(SCHEMAS)}",
    "gen.n_pages": "number of synthetic pages before splitting",
    "gen.entities_min": "min entities per page",
    "gen.entities_max": "max entities per page",
    "gen.tokens_min": "min tokens per entity",
    "gen.tokens_max": "max tokens per entity",
    "gen.vocab_size": "token vocabulary size",
    "gen.visual_dim": "entity visual feature length",
    "gen.signal": "label signal strength in [0,1]",
    "gen.noise": "token text corruption rate in [0,1]",
    "gen.split_train": "train fraction",
    "gen.split_val": "validation fraction",
    "gen.split_test": "test fraction",
    "teachers.epochs": "teacher training epochs",
    "teachers.lr": "teacher Adam learning rate",
    "teachers.layers": "teacher encoder layers",
    "teachers.heads": "teacher attention heads",
    "teachers.fine_dims": "hidden dim of each fine teacher",
    "teachers.fine_positions": "per fine teacher: add sinusoidal positions",
    "teachers.coarse_dims": "hidden dim of each coarse teacher",
    "teachers.coarse_visuals": "per coarse teacher: consume visual features",
    "student.variant": "encoder_only | decoder_only | encoder_and_decoder",
    "student.dim": "student model dim",
    "student.encoder_layers": "joint encoder layers",
    "student.decoder_layers": "layers per decoder",
    "student.heads": "student attention heads",
    "student.ff_dim": "feed-forward dim (0 = 4*dim)",
    "student.positions": "add sinusoidal positions in the joint encoder",
    "student.cross_grain_attention": "allow attention between grains",
    "student.cross_attention": "enable decoder cross-attention",
    "student.fine_roster": "fine teachers feeding the student",
    "student.coarse_roster": "coarse teachers feeding the student",
    "loss.enable": f"enabled loss families, subset of {list(_LOSS_KEYS)}",
    "loss.task_fine": "weight of token task cross entropy",
    "loss.task_coarse": "weight of entity task cross entropy",
    "loss.sim": "weight of the cosine similarity family",
    "loss.distil": "weight of the mean-squared-error family",
    "loss.triplet": "weight of the cross-grain triplet family",
    "loss.align": "weight of the token-entity alignment family",
    "loss.margin": "triplet margin",
    "loss.raw_sum": "use literal sums instead of means in sim/distil",
    "train.lr": "student Adam learning rate",
    "train.epochs": "max student epochs",
    "train.patience": "early-stop patience on validation token F1",
    "ablate.seeds": "seeds used by ablate (overridden by --seeds)",
}


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            elem = default[0] if default else ""
            if isinstance(elem, bool):
                return [_coerce(key, s, True) for s in items]
            if isinstance(elem, int):
                return [int(s) for s in items]
            return items
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': {exc}") from exc


class RunConfig:
    """Resolved configuration: defaults, then file values, then overrides."""

    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        if values:
            for key, val in values.items():
                if key not in DEFAULTS:
                    raise ConfigError(f"unknown config key '{key}'")
                self.values[key] = val

    @staticmethod
    def load(path) -> "RunConfig":
        cfg = RunConfig()
        path = Path(path)
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
            cfg.values[key] = _coerce(key, raw, DEFAULTS[key])
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        self.values[key] = value

    def resolved_text(self) -> str:
        def fmt(v):
            if isinstance(v, list):
                return ",".join(str(x).lower() if isinstance(x, bool) else str(x)
                                for x in v)
            if isinstance(v, bool):
                return str(v).lower()
            return str(v)

        lines = [f"{key} = {fmt(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def echo(self, out_dir) -> Path:
        out = Path(out_dir) / "config.resolved.txt"
        out.write_text(self.resolved_text(), encoding="utf-8")
        return out

    # ------------------------------------------------------------------
    # factories

    def gen_spec(self) -> GenSpec:
        return GenSpec(
            n_pages=self["gen.n_pages"],
            schema_id=self["gen.schema"],
            entities_min=self["gen.entities_min"],
            entities_max=self["gen.entities_max"],
            tokens_min=self["gen.tokens_min"],
            tokens_max=self["gen.tokens_max"],
            vocab_size=self["gen.vocab_size"],
            visual_feat_dim=self["gen.visual_dim"],
            label_signal_strength=self["gen.signal"],
            noise_rate=self["gen.noise"],
        )

    def split_fractions(self) -> tuple[float, float, float]:
        return (self["gen.split_train"], self["gen.split_val"],
                self["gen.split_test"])

    def teacher_hps(self, seed: int) -> dict[str, TeacherHP]:
        base = dict(layers=self["teachers.layers"], heads=self["teachers.heads"],
                    lr=self["teachers.lr"], epochs=self["teachers.epochs"],
                    vocab_size=self["gen.vocab_size"],
                    visual_feat_dim=self["gen.visual_dim"])
        fine_dims = self["teachers.fine_dims"]
        fine_pos = self["teachers.fine_positions"]
        coarse_dims = self["teachers.coarse_dims"]
        coarse_vis = self["teachers.coarse_visuals"]
        if len(fine_dims) != len(fine_pos) or len(coarse_dims) != len(coarse_vis):
            raise ConfigError("teacher dim/flag lists must have matching lengths")
        hps = {}
        for i, (dim, pos) in enumerate(zip(fine_dims, fine_pos), 1):
            hps[f"fine{i}"] = TeacherHP(dim=dim, use_position=pos,
                                        seed=seed + 11 * i, **base)
        for i, (dim, vis) in enumerate(zip(coarse_dims, coarse_vis), 1):
            hps[f"coarse{i}"] = TeacherHP(dim=dim, use_visual=vis,
                                          seed=seed + 1000 + 11 * i, **base)
        rand = dict(base)
        rand["epochs"] = 0
        hps["rand"] = TeacherHP(dim=coarse_dims[0], use_visual=True,
                                seed=seed + 5555, **rand)
        return hps

    def student_kwargs(self) -> dict:
        return dict(
            variant=self["student.variant"],
            dim=self["student.dim"],
            encoder_layers=self["student.encoder_layers"],
            decoder_layers=self["student.decoder_layers"],
            heads=self["student.heads"],
            ff_dim=self["student.ff_dim"],
            use_positions=self["student.positions"],
            cross_grain_attention=self["student.cross_grain_attention"],
            cross_attention=self["student.cross_attention"],
        )

    def loss_weights(self) -> LossWeights:
        enabled = self["loss.enable"]
        unknown = [e for e in enabled if e not in _LOSS_KEYS]
        if unknown:
            raise ConfigError(f"loss.enable has unknown families {unknown}; "
                              f"valid: {list(_LOSS_KEYS)}")
        kwargs = {}
        for short in _LOSS_KEYS:
            family = _LOSS_FAMILY[short]
            kwargs[family] = self[f"loss.{short}"] if short in enabled else None
        return LossWeights(margin=self["loss.margin"],
                           raw_sum=self["loss.raw_sum"], **kwargs)

    def train_spec(self, seed: int) -> TrainSpec:
        return TrainSpec(lr=self["train.lr"], epochs=self["train.epochs"],
                         seed=seed, patience=self["train.patience"])


def config_key_help() -> str:
    """One line per documented key, for --help output."""
    lines = ["configuration keys (key = default  # description):"]
    for key in sorted(DEFAULTS):
        default = DEFAULTS[key]
        if isinstance(default, list):
            shown = ",".join(str(x).lower() if isinstance(x, bool) else str(x)
                             for x in default)
        elif isinstance(default, bool):
            shown = str(default).lower()
        else:
            shown = str(default)
        lines.append(f"  {key} = {shown}  # {KEY_DOC[key]}")
    return "\n".join(lines)
