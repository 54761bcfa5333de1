"""Small frozen teachers: token classifiers (fine grain) and entity
classifiers (coarse grain).

Each teacher is a transformer encoder over its own input features and
exposes, per page, its last-layer hidden states and classification
logits. Teachers are trained once, frozen, and never receive gradients
from the student; freezing is verifiable through parameter checksums.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tape, Tensor
from .corpus import DocumentPage, schema_labels
from .errors import FormatError, SchemaError, ValidationError
from .metrics import micro_f1
from .nn import Adam, EncoderLayer, Linear, Module, sinusoidal_positions


@dataclass
class TeacherHP:
    dim: int = 48
    layers: int = 2
    heads: int = 4
    lr: float = 3e-3
    epochs: int = 20
    seed: int = 0
    vocab_size: int = 200
    use_position: bool = True   # fine teachers: add sinusoidal positions
    use_visual: bool = True     # coarse teachers: consume visual features
    visual_feat_dim: int = 16


@dataclass
class TeacherOutput:
    hidden: np.ndarray   # [k x d_f] or [n x d_c]
    logits: np.ndarray   # [k x C] or [n x C]


class _TeacherBase(Module):
    kind = ""

    def __init__(self, schema_id: str, hp: TeacherHP):
        self.schema_id = schema_id
        self.n_classes = len(schema_labels(schema_id))
        self.hp = hp
        self.frozen = False

    def freeze(self) -> None:
        self.frozen = True

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_params()}

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.named_arrays().items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def _check_page(self, page: DocumentPage) -> None:
        if page.schema_id != self.schema_id:
            raise SchemaError(
                f"page schema '{page.schema_id}' does not match teacher "
                f"schema '{self.schema_id}'")

    def forward(self, page: DocumentPage) -> tuple[Tensor, Tensor]:
        raise NotImplementedError

    def infer(self, page: DocumentPage) -> TeacherOutput:
        hidden, logits = self.forward(page)
        return TeacherOutput(hidden=hidden.data.copy(), logits=logits.data.copy())

    def config(self) -> dict:
        return {
            "schema_id": self.schema_id,
            "dim": self.hp.dim,
            "layers": self.hp.layers,
            "heads": self.hp.heads,
            "lr": self.hp.lr,
            "epochs": self.hp.epochs,
            "seed": self.hp.seed,
            "vocab_size": self.hp.vocab_size,
            "use_position": self.hp.use_position,
            "use_visual": self.hp.use_visual,
            "visual_feat_dim": self.hp.visual_feat_dim,
            "frozen": self.frozen,
        }


class FineTeacher(_TeacherBase):
    """Per-token classifier over text id + box (+ sinusoidal position)."""

    kind = "fine-teacher"

    def __init__(self, schema_id: str, hp: TeacherHP):
        super().__init__(schema_id, hp)
        rng = np.random.default_rng(hp.seed)
        bound = 1.0 / np.sqrt(hp.dim)
        self.emb = Tensor(rng.uniform(-bound, bound, size=(hp.vocab_size, hp.dim)),
                          requires_grad=True)
        self.box = Linear(rng, 4, hp.dim)
        self.encoder = [EncoderLayer(rng, hp.dim, hp.heads, 4 * hp.dim)
                        for _ in range(hp.layers)]
        self.head = Linear(rng, hp.dim, self.n_classes)

    def forward(self, page: DocumentPage) -> tuple[Tensor, Tensor]:
        self._check_page(page)
        ids = [t.text_id for t in page.tokens]
        boxes = Tensor(np.array([t.bbox for t in page.tokens]))
        x = ad.add(ad.take_rows(self.emb, ids), self.box(boxes))
        if self.hp.use_position:
            x = ad.add(x, Tensor(sinusoidal_positions(page.k, self.hp.dim)))
        for layer in self.encoder:
            x = layer(x)
        return x, self.head(x)


class CoarseTeacher(_TeacherBase):
    """Per-entity classifier over pooled token embedding + box (+ visual)."""

    kind = "coarse-teacher"

    def __init__(self, schema_id: str, hp: TeacherHP):
        super().__init__(schema_id, hp)
        rng = np.random.default_rng(hp.seed)
        bound = 1.0 / np.sqrt(hp.dim)
        self.emb = Tensor(rng.uniform(-bound, bound, size=(hp.vocab_size, hp.dim)),
                          requires_grad=True)
        in_dim = hp.dim + 4 + (hp.visual_feat_dim if hp.use_visual else 0)
        self.input_map = Linear(rng, in_dim, hp.dim)
        self.encoder = [EncoderLayer(rng, hp.dim, hp.heads, 4 * hp.dim)
                        for _ in range(hp.layers)]
        self.head = Linear(rng, hp.dim, self.n_classes)

    def forward(self, page: DocumentPage) -> tuple[Tensor, Tensor]:
        self._check_page(page)
        pool = np.zeros((page.n, page.k))
        for j, ent in enumerate(page.entities):
            pool[j, ent.token_ids] = 1.0 / len(ent.token_ids)
        ids = [t.text_id for t in page.tokens]
        pooled = ad.matmul(Tensor(pool), ad.take_rows(self.emb, ids))
        parts = [pooled, Tensor(np.array([e.bbox for e in page.entities]))]
        if self.hp.use_visual:
            parts.append(Tensor(np.stack([e.visual_feat for e in page.entities])))
        x = self.input_map(ad.concat(parts, axis=1))
        for layer in self.encoder:
            x = layer(x)
        return x, self.head(x)


def teacher_infer(teacher: _TeacherBase, page: DocumentPage) -> TeacherOutput:
    """Pure function of (teacher parameters, page); never mutates."""
    return teacher.infer(page)


def _train(teacher, corpus, hp, labels_of, level_true):
    if not corpus:
        raise ValidationError("cannot train a teacher on an empty corpus")
    labels = schema_labels(teacher.schema_id)
    rng = np.random.default_rng([hp.seed, 1])
    adam = Adam(teacher.params(), lr=hp.lr)
    history = []
    for epoch in range(hp.epochs):
        total = 0.0
        for i in rng.permutation(len(corpus)):
            page = corpus[i]
            adam.zero_grad()
            with Tape() as tape:
                _, logits = teacher.forward(page)
                loss = ad.cross_entropy_rows(logits, labels_of(page))
                tape.backward(loss)
            adam.step()
            total += loss.item()
        true = np.concatenate([labels_of(p) for p in corpus])
        pred = np.concatenate([np.argmax(teacher.infer(p).logits, axis=1)
                               for p in corpus])
        history.append({"epoch": epoch, "loss": total / len(corpus),
                        f"{level_true}_f1": micro_f1(true, pred, labels)})
    teacher.freeze()
    return teacher, history


def train_fine_teacher(corpus, hp: TeacherHP) -> tuple[FineTeacher, list[dict]]:
    if not corpus:
        raise ValidationError("cannot train a teacher on an empty corpus")
    teacher = FineTeacher(corpus[0].schema_id, hp)
    return _train(teacher, corpus, hp, lambda p: p.token_labels(), "token")


def train_coarse_teacher(corpus, hp: TeacherHP) -> tuple[CoarseTeacher, list[dict]]:
    if not corpus:
        raise ValidationError("cannot train a teacher on an empty corpus")
    teacher = CoarseTeacher(corpus[0].schema_id, hp)
    return _train(teacher, corpus, hp, lambda p: p.entity_labels(), "entity")


# ---------------------------------------------------------------------------
# persistence


def save_teacher(teacher: _TeacherBase, path) -> None:
    checkpoint.save_arrays(path, teacher.kind, teacher.config(),
                           teacher.named_arrays())


def load_teacher(path, expected_kind: str | None = None) -> "_TeacherBase":
    kind, config, arrays = checkpoint.load_arrays(path, expected_kind=expected_kind)
    if kind == FineTeacher.kind:
        cls = FineTeacher
    elif kind == CoarseTeacher.kind:
        cls = CoarseTeacher
    else:
        raise FormatError(f"unknown checkpoint type tag '{kind}'")
    hp = TeacherHP(dim=config["dim"], layers=config["layers"], heads=config["heads"],
                   lr=config["lr"], epochs=config["epochs"], seed=config["seed"],
                   vocab_size=config["vocab_size"],
                   use_position=config["use_position"],
                   use_visual=config["use_visual"],
                   visual_feat_dim=config["visual_feat_dim"])
    teacher = cls(config["schema_id"], hp)
    named = dict(teacher.named_params())
    if set(named) != set(arrays):
        raise FormatError("checkpoint arrays do not match teacher structure")
    for name, param in named.items():
        if param.data.shape != arrays[name].shape:
            raise FormatError(f"array '{name}' has shape {arrays[name].shape}, "
                              f"expected {param.data.shape}")
        param.data = arrays[name]
    if config.get("frozen"):
        teacher.freeze()
    return teacher


# ---------------------------------------------------------------------------
# rosters


@dataclass
class TeacherRoster:
    """The teacher pool feeding one student: ordered fine + coarse lists."""

    fine: list = field(default_factory=list)
    coarse: list = field(default_factory=list)

    def validate(self) -> None:
        if not self.fine or not self.coarse:
            raise ValidationError("roster needs at least one teacher per grain")
        for t in self.fine:
            if not isinstance(t, FineTeacher):
                raise ValidationError(f"fine roster entry is a '{t.kind}'")
        for t in self.coarse:
            if not isinstance(t, CoarseTeacher):
                raise ValidationError(f"coarse roster entry is a '{t.kind}'")
        schemas = {t.schema_id for t in self.fine + self.coarse}
        if len(schemas) != 1:
            raise SchemaError(f"roster mixes schemas: {sorted(schemas)}")

    @property
    def schema_id(self) -> str:
        return self.fine[0].schema_id

    def infer(self, page: DocumentPage) -> tuple[list[TeacherOutput], list[TeacherOutput]]:
        return ([teacher_infer(t, page) for t in self.fine],
                [teacher_infer(t, page) for t in self.coarse])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for t in self.fine + self.coarse:
            h.update(t.checksum().encode("ascii"))
        return h.hexdigest()


def default_teacher_hps(seed: int = 0, vocab_size: int = 200,
                        visual_feat_dim: int = 16, epochs: int = 20,
                        lr: float = 3e-3) -> dict[str, TeacherHP]:
    """The default heterogeneous pool: two fine and two coarse teachers
    with different dims and modality access, plus an untrained coarse
    baseline ("rand") for the random-initialization ablation row."""
    base = TeacherHP(vocab_size=vocab_size, visual_feat_dim=visual_feat_dim,
                     epochs=epochs, lr=lr)
    return {
        "fine1": replace(base, dim=48, seed=seed + 11, use_position=True),
        "fine2": replace(base, dim=40, seed=seed + 22, use_position=False),
        "coarse1": replace(base, dim=32, seed=seed + 33, use_visual=True),
        "coarse2": replace(base, dim=24, seed=seed + 44, use_visual=False),
        "rand": replace(base, dim=32, seed=seed + 55, use_visual=True, epochs=0),
    }
