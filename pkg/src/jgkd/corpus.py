"""Synthetic form-page corpus, native JSONL persistence, and a loader for
published form-annotation files (one JSON per page with entity blocks).

A page is k tokens grouped into n entities; every token belongs to
exactly one entity, every entity owns at least one token, boxes are
normalized to [0,1], and labels come from one of two schemas:

    funsd4:    question, answer, header, other
    formnlu7:  title, section, form_key, form_value, table_key,
               table_value, other

The generator is label-separable by construction: each label owns a
disjoint vocabulary block, and with label_signal_strength=1 and
noise_rate=0 a majority vote over token ids recovers every entity label.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

FUNSD4 = ("question", "answer", "header", "other")
FORMNLU7 = ("title", "section", "form_key", "form_value",
            "table_key", "table_value", "other")
SCHEMAS: dict[str, tuple[str, ...]] = {"funsd4": FUNSD4, "formnlu7": FORMNLU7}
OTHER_LABEL = "other"


def schema_labels(schema_id: str) -> tuple[str, ...]:
    try:
        return SCHEMAS[schema_id]
    except KeyError:
        raise SchemaError(f"unknown schema '{schema_id}'") from None


@dataclass
class Token:
    text_id: int
    bbox: tuple[float, float, float, float]
    entity_id: int


@dataclass
class Entity:
    label: int
    token_ids: list[int]
    visual_feat: np.ndarray
    bbox: tuple[float, float, float, float]

    def __eq__(self, other):
        return (isinstance(other, Entity)
                and self.label == other.label
                and self.token_ids == other.token_ids
                and np.array_equal(self.visual_feat, other.visual_feat)
                and self.bbox == other.bbox)


@dataclass
class DocumentPage:
    tokens: list[Token]
    entities: list[Entity]
    schema_id: str

    @property
    def k(self) -> int:
        return len(self.tokens)

    @property
    def n(self) -> int:
        return len(self.entities)

    def token_labels(self) -> np.ndarray:
        return np.array([self.entities[t.entity_id].label for t in self.tokens],
                        dtype=np.int64)

    def entity_labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entities], dtype=np.int64)

    def owners(self) -> np.ndarray:
        return np.array([t.entity_id for t in self.tokens], dtype=np.int64)

    def validate(self) -> None:
        labels = schema_labels(self.schema_id)
        if not (self.k >= self.n >= 1):
            raise ValidationError(f"page needs k >= n >= 1, got k={self.k}, n={self.n}")
        seen: dict[int, list[int]] = {}
        for i, t in enumerate(self.tokens):
            x0, y0, x1, y1 = t.bbox
            if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
                raise ValidationError(f"token {i} bbox {t.bbox} out of bounds")
            if not 0 <= t.entity_id < self.n:
                raise ValidationError(f"token {i} entity_id {t.entity_id} out of range")
            seen.setdefault(t.entity_id, []).append(i)
        for j, e in enumerate(self.entities):
            if not e.token_ids:
                raise ValidationError(f"entity {j} owns no tokens")
            if sorted(e.token_ids) != sorted(seen.get(j, [])):
                raise ValidationError(f"entity {j} token list inconsistent with ownership")
            if not 0 <= e.label < len(labels):
                raise ValidationError(f"entity {j} label {e.label} outside schema")


Corpus = list


@dataclass
class GenSpec:
    n_pages: int = 48
    schema_id: str = "funsd4"
    entities_min: int = 3
    entities_max: int = 6
    tokens_min: int = 1
    tokens_max: int = 4
    vocab_size: int = 200
    visual_feat_dim: int = 16
    label_signal_strength: float = 1.0
    noise_rate: float = 0.0

    def validate(self) -> None:
        bad = []
        if self.n_pages < 0:
            bad.append("n_pages")
        if self.schema_id not in SCHEMAS:
            bad.append("schema_id")
        if not (1 <= self.entities_min <= self.entities_max):
            bad.append("entities_min/entities_max")
        if not (1 <= self.tokens_min <= self.tokens_max):
            bad.append("tokens_min/tokens_max")
        if self.vocab_size < len(SCHEMAS.get(self.schema_id, FUNSD4)):
            bad.append("vocab_size")
        if self.visual_feat_dim < 1:
            bad.append("visual_feat_dim")
        if not 0.0 <= self.label_signal_strength <= 1.0:
            bad.append("label_signal_strength")
        if not 0.0 <= self.noise_rate <= 1.0:
            bad.append("noise_rate")
        if bad:
            raise ValidationError("invalid generator spec fields: " + ", ".join(bad))


def label_vocab_block(spec: GenSpec, label: int) -> range:
    """Disjoint id range owned by a label; used by the generator and by
    the majority-vote separability oracle."""
    block = spec.vocab_size // len(schema_labels(spec.schema_id))
    return range(label * block, (label + 1) * block)


def _union_bbox(boxes) -> tuple[float, float, float, float]:
    xs0, ys0, xs1, ys1 = zip(*boxes)
    return (min(xs0), min(ys0), max(xs1), max(ys1))


def _block_probs(block_size: int, decay: float = 0.65) -> np.ndarray:
    """Geometric weights: a handful of ids per label carry almost all the
    mass, so held-out pages mostly reuse vocabulary already seen at
    training time."""
    w = decay ** np.arange(block_size, dtype=np.float64)
    return w / w.sum()


def generate_corpus(spec: GenSpec, seed: int) -> Corpus:
    """Deterministic synthetic corpus; same (spec, seed) gives identical pages.

    Label signal enters through three channels, all scaled by
    label_signal_strength: token ids drawn from the label's vocabulary
    block, a label-dependent x-indent of the entity's boxes, and the
    entity visual feature mean.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    labels = schema_labels(spec.schema_id)
    n_labels = len(labels)
    signal = spec.label_signal_strength
    sigma = 1.0 - signal
    block_size = spec.vocab_size // n_labels
    probs = _block_probs(block_size)
    pages = []
    for _ in range(spec.n_pages):
        n_ent = int(rng.integers(spec.entities_min, spec.entities_max + 1))
        tokens: list[Token] = []
        entities: list[Entity] = []
        band = 1.0 / spec.entities_max   # constant so box height is comparable
        for j in range(n_ent):
            label = int(rng.integers(0, n_labels))
            n_tok = int(rng.integers(spec.tokens_min, spec.tokens_max + 1))
            label_frac = (label + 1) / n_labels
            # layout channels: every box of the entity shares a height and
            # a left margin that encode the label at full signal strength
            height_frac = signal * label_frac + (1.0 - signal) * float(rng.uniform(0, 1))
            indent = (signal * 0.3 * label_frac
                      + (1.0 - signal) * float(rng.uniform(0.0, 0.3)))
            y0 = j * band + 0.02 * band
            y1 = y0 + band * (0.2 + 0.7 * height_frac)
            width = (1.0 - indent) / n_tok
            token_ids = []
            for t in range(n_tok):
                if rng.random() < signal:
                    block = label_vocab_block(spec, label)
                    text_id = block.start + int(rng.choice(block_size, p=probs))
                else:
                    text_id = int(rng.integers(0, spec.vocab_size))
                x0 = indent + t * width + 0.02 * width
                x1 = indent + (t + 1) * width - 0.02 * width
                tokens.append(Token(text_id=text_id,
                                    bbox=(x0, y0, x1, y1),
                                    entity_id=j))
                token_ids.append(len(tokens) - 1)
            mean = np.zeros(spec.visual_feat_dim)
            mean[label % spec.visual_feat_dim] = 2.0
            feat = mean + rng.normal(0.0, sigma, size=spec.visual_feat_dim)
            entities.append(Entity(label=label, token_ids=token_ids,
                                   visual_feat=feat,
                                   bbox=_union_bbox([tokens[i].bbox for i in token_ids])))
        for tok in tokens:
            if rng.random() < spec.noise_rate:
                tok.text_id = int(rng.integers(0, spec.vocab_size))
        page = DocumentPage(tokens=tokens, entities=entities, schema_id=spec.schema_id)
        page.validate()
        pages.append(page)
    return pages


def split_corpus(corpus: Corpus, fractions: tuple[float, float, float],
                 seed: int) -> tuple[Corpus, Corpus, Corpus]:
    """Page-level partition; val/test sizes are floored, remainder to train."""
    f_train, f_val, f_test = fractions
    if min(fractions) < 0 or abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValidationError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    n = len(corpus)
    n_val = int(np.floor(f_val * n))
    n_test = int(np.floor(f_test * n))
    n_train = n - n_val - n_test
    perm = np.random.default_rng(seed).permutation(n)
    train = [corpus[i] for i in perm[:n_train]]
    val = [corpus[i] for i in perm[n_train:n_train + n_val]]
    test = [corpus[i] for i in perm[n_train + n_val:]]
    return train, val, test


# ---------------------------------------------------------------------------
# native JSONL persistence (one page per line, UTF-8)


def page_to_record(page: DocumentPage) -> dict:
    labels = schema_labels(page.schema_id)
    return {
        "schema": page.schema_id,
        "tokens": [{"text_id": t.text_id, "bbox": list(t.bbox),
                    "entity_id": t.entity_id} for t in page.tokens],
        "entities": [{"label": labels[e.label], "token_ids": e.token_ids,
                      "visual_feat": [float(v) for v in e.visual_feat],
                      "bbox": list(e.bbox)} for e in page.entities],
    }


def page_from_record(rec: dict) -> DocumentPage:
    labels = schema_labels(rec["schema"])
    entities = []
    for e in rec["entities"]:
        if e["label"] not in labels:
            raise SchemaError(f"label '{e['label']}' not in schema '{rec['schema']}'")
        entities.append(Entity(label=labels.index(e["label"]),
                               token_ids=list(e["token_ids"]),
                               visual_feat=np.array(e["visual_feat"], dtype=np.float64),
                               bbox=tuple(e["bbox"])))
    tokens = [Token(text_id=t["text_id"], bbox=tuple(t["bbox"]),
                    entity_id=t["entity_id"]) for t in rec["tokens"]]
    page = DocumentPage(tokens=tokens, entities=entities, schema_id=rec["schema"])
    page.validate()
    return page


def save_corpus(corpus: Corpus, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for page in corpus:
            fh.write(json.dumps(page_to_record(page), sort_keys=True))
            fh.write("\n")


def load_corpus(path) -> Corpus:
    path = Path(path)
    pages = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                pages.append(page_from_record(json.loads(line)))
            except (KeyError, json.JSONDecodeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad page record: {exc}") from exc
    return pages


# ---------------------------------------------------------------------------
# loader for published annotation files ("form" entity blocks with words)


def load_funsd(directory, visual_feat_dim: int = 16) -> Corpus:
    """Load a directory of per-page annotation JSON files.

    Each file holds {"form": [entity, ...]} where an entity carries
    "label", "box", and "words" ([{"text", "box"}, ...]). Word boxes are
    absolute pixel coordinates; they are normalized by the page's maximum
    coordinate. Words with empty text are dropped; entities left without
    words are skipped with a warning. Visual features are zero-filled
    (no image pipeline here).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"annotation directory not found: {directory}")
    files = sorted(directory.glob("*.json"))
    if not files:
        logger.warning("no annotation files in %s; returning empty corpus", directory)
        return []
    pages = []
    for path in files:
        try:
            with path.open("r", encoding="utf-8") as fh:
                doc = json.load(fh)
            blocks = doc["form"]
        except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
            raise FormatError(f"{path.name}: malformed annotation file: {exc}") from exc
        raw_entities = []
        max_x, max_y = 1.0, 1.0
        for block in blocks:
            label = str(block.get("label", "")).lower()
            if label not in FUNSD4:
                raise SchemaError(f"{path.name}: unknown label '{label}'")
            words = [w for w in block.get("words", [])
                     if str(w.get("text", "")).strip()]
            if not words:
                logger.warning("%s: skipping empty '%s' entity", path.name, label)
                continue
            for w in words:
                max_x = max(max_x, float(w["box"][2]))
                max_y = max(max_y, float(w["box"][3]))
            raw_entities.append((label, words))
        if not raw_entities:
            logger.warning("%s: page has no usable entities; skipped", path.name)
            continue
        tokens: list[Token] = []
        entities: list[Entity] = []
        for label, words in raw_entities:
            token_ids = []
            for w in words:
                x0, y0, x1, y1 = (float(v) for v in w["box"])
                x0, x1 = sorted((x0 / max_x, x1 / max_x))
                y0, y1 = sorted((y0 / max_y, y1 / max_y))
                x1 = min(max(x1, x0 + 1e-6), 1.0)
                y1 = min(max(y1, y0 + 1e-6), 1.0)
                x0 = min(x0, x1 - 1e-7)
                y0 = min(y0, y1 - 1e-7)
                tokens.append(Token(text_id=_word_text_id(w["text"]),
                                    bbox=(max(x0, 0.0), max(y0, 0.0), x1, y1),
                                    entity_id=len(entities)))
                token_ids.append(len(tokens) - 1)
            entities.append(Entity(label=FUNSD4.index(label), token_ids=token_ids,
                                   visual_feat=np.zeros(visual_feat_dim),
                                   bbox=_union_bbox([tokens[i].bbox for i in token_ids])))
        page = DocumentPage(tokens=tokens, entities=entities, schema_id="funsd4")
        page.validate()
        pages.append(page)
    return pages


def _word_text_id(text: str, vocab_size: int = 200) -> int:
    """Stable hash of the word text into the toy vocabulary."""
    h = 0
    for ch in text:
        h = (h * 131 + ord(ch)) % 1_000_003
    return h % vocab_size
