"""Target-linear losses and the label -> target embeddings they act on."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from os import PathLike

import numpy as np

LOG_FLOOR = 1e-12
SIMPLEX_TOL = 1e-9
UNIT_TOL = 1e-6
DEFAULT_EMBED_DIM = 16


class LossKind(enum.Enum):
    CROSS_ENTROPY = "cross_entropy"
    NEGATIVE_COSINE = "negative_cosine"

    @classmethod
    def parse(cls, text: "str | LossKind") -> "LossKind":
        if isinstance(text, cls):
            return text
        aliases = {"ce": cls.CROSS_ENTROPY, "nc": cls.NEGATIVE_COSINE}
        key = str(text).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)

    @property
    def short(self) -> str:
        return "CE" if self is LossKind.CROSS_ENTROPY else "NC"

    @property
    def embedding_kind(self) -> str:
        return "one_hot" if self is LossKind.CROSS_ENTROPY else "unit_vector"


@dataclass(frozen=True, eq=False)
class TargetEmbedding:
    """Fixed map from label ids to target vectors (rows of ``vectors``)."""

    kind: str
    vectors: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise ValueError("embedding vectors must be a nonempty 2-D array")
        if self.kind == "one_hot":
            if not np.array_equal(vectors, np.eye(vectors.shape[0])):
                raise ValueError("one_hot embedding must be the identity matrix")
        elif self.kind == "unit_vector":
            norms = np.linalg.norm(vectors, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-12:
                raise ValueError("unit_vector rows must have norm 1")
            gram = vectors @ vectors.T
            off = gram[~np.eye(len(gram), dtype=bool)]
            if off.size and np.max(off) >= 1.0 - 1e-12:
                raise ValueError("unit_vector rows must be pairwise distinct")
        else:
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        vectors.flags.writeable = False
        object.__setattr__(self, "vectors", vectors)

    @property
    def n_labels(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __call__(self, labels) -> np.ndarray:
        return embed_label(self, labels)

    def decode(self, outputs: np.ndarray) -> np.ndarray:
        """Predicted labels: argmax for probabilities, nearest target by inner product otherwise."""
        if self.kind == "one_hot":
            return np.argmax(outputs, axis=-1)
        return np.argmax(outputs @ self.vectors.T, axis=-1)


def one_hot_embedding(n_labels: int) -> TargetEmbedding:
    return TargetEmbedding("one_hot", np.eye(n_labels))


def unit_vector_embedding(n_labels: int, dim: int = DEFAULT_EMBED_DIM, seed: int = 0) -> TargetEmbedding:
    """Rows are seeded i.i.d. Gaussian vectors scaled to unit length."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n_labels, dim))
    return TargetEmbedding("unit_vector", raw / np.linalg.norm(raw, axis=1, keepdims=True), seed=seed)


def make_embedding(kind: "LossKind | str", n_labels: int, dim: int = DEFAULT_EMBED_DIM, seed: int = 0) -> TargetEmbedding:
    if LossKind.parse(kind) is LossKind.CROSS_ENTROPY:
        return one_hot_embedding(n_labels)
    return unit_vector_embedding(n_labels, dim, seed)


def embed_label(emb: TargetEmbedding, label) -> np.ndarray:
    labels = np.asarray(label)
    if not np.issubdtype(labels.dtype, np.integer):
        raise IndexError(f"labels must be integers, got {labels.dtype}")
    if np.any(labels < 0) or np.any(labels >= emb.n_labels):
        raise IndexError(f"label out of range [0, {emb.n_labels})")
    return emb.vectors[labels]


class ClampCounter:
    """Counts log-floor clamps hit while evaluating cross-entropy."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def cross_entropy(prediction, target, counter: ClampCounter | None = None):
    """-sum_y target(y) log prediction(y), row-wise; log is floored at 1e-12."""
    prediction = np.asarray(prediction, dtype=float)
    target = np.asarray(target, dtype=float)
    clamped = prediction < LOG_FLOOR
    if counter is not None:
        counter.add(np.count_nonzero(clamped & (target != 0)))
    logq = np.log(np.maximum(prediction, LOG_FLOOR))
    return -np.sum(target * logq, axis=-1)


def negative_cosine(prediction, target):
    return -np.sum(np.asarray(prediction, dtype=float) * np.asarray(target, dtype=float), axis=-1)


def _check_prediction(kind: LossKind, prediction: np.ndarray) -> None:
    if kind is LossKind.CROSS_ENTROPY:
        if np.any(prediction < 0) or np.any(np.abs(prediction.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
            raise ValueError("cross-entropy prediction must lie on the probability simplex")
    elif np.any(np.abs(np.linalg.norm(prediction, axis=-1) - 1.0) > UNIT_TOL):
        raise ValueError("negative-cosine prediction must have unit norm")


def loss(kind: "LossKind | str", prediction, target, counter: ClampCounter | None = None, check: bool = True):
    """Evaluate the loss of ``prediction`` against ``target``.

    Works row-wise on 2-D inputs.  The target is not validated: both losses
    are linear in it, and mixed targets need not be valid embeddings.
    """
    kind = LossKind.parse(kind)
    prediction = np.asarray(prediction, dtype=float)
    if check:
        _check_prediction(kind, prediction)
    if kind is LossKind.CROSS_ENTROPY:
        out = cross_entropy(prediction, target, counter)
    else:
        out = negative_cosine(prediction, target)
    return float(out) if np.ndim(out) == 0 else out


def check_target_linearity(kind, prediction, z1, z2, alpha: float, beta: float) -> float:
    """|l(z', a z1 + b z2) - a l(z', z1) - b l(z', z2)|."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    lhs = loss(kind, prediction, alpha * z1 + beta * z2)
    rhs = alpha * loss(kind, prediction, z1) + beta * loss(kind, prediction, z2)
    return float(np.max(np.abs(np.asarray(lhs) - np.asarray(rhs))))


# -- text format ------------------------------------------------------------


def format_embedding(emb: TargetEmbedding) -> str:
    seed = "none" if emb.seed is None else emb.seed
    lines = [f"embedding kind={emb.kind} n_labels={emb.n_labels} dim={emb.dim} seed={seed}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in emb.vectors)
    return "\n".join(lines) + "\n"


def parse_embedding(text: str) -> TargetEmbedding:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("embedding "):
        raise ValueError("missing 'embedding' header")
    fields = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    try:
        n_labels, dim = int(fields["n_labels"]), int(fields["dim"])
        kind = fields["kind"]
    except KeyError as exc:
        raise ValueError(f"embedding header lacks {exc}") from None
    seed = None if fields.get("seed", "none") == "none" else int(fields["seed"])
    vectors = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    if vectors.shape != (n_labels, dim):
        raise ValueError(f"expected {n_labels}x{dim} matrix, got {vectors.shape}")
    return TargetEmbedding(kind, vectors, seed=seed)


def save_embedding(emb: TargetEmbedding, path: str | PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(format_embedding(emb))


def load_embedding(path: str | PathLike) -> TargetEmbedding:
    with open(path) as fh:
        return parse_embedding(fh.read())
