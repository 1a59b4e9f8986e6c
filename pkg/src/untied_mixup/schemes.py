"""MixUp, DAT and Untied MixUp losses on example pairs.

All three schemes feed the model a convex combination of two inputs and
differ only in the training target:

* mix:  input ``lam x + (1-lam) x'``, target ``lam phi(x) + (1-lam) phi(x')``
* dat:  input ``s x + (1-s) x'``,     target ``phi(x)``
* umix: input ``lam x + (1-lam) x'``, target ``g phi(x) + (1-g) phi(x')``
  with ``g = gamma(lam)``

so each reduces to ``mixed_batch`` followed by the loss.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from os import PathLike
from typing import Iterator

import numpy as np

from .losses import LossKind, TargetEmbedding, loss
from .model import Model, forward
from .policy import Policy, WeightingFunction

SCHEMES = ("mix", "dat", "umix")
_CHUNK_ROWS = 1 << 15


class SchemeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledExample:
    features: np.ndarray
    label: int
    index: int | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with integer labels in ``range(n_labels)``."""

    features: np.ndarray
    labels: np.ndarray
    n_labels: int

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels, dtype=np.int64)
        if X.shape[0] != y.shape[0]:
            raise SchemeError("features and labels differ in length")
        if y.size and (y.min() < 0 or y.max() >= self.n_labels):
            raise SchemeError("labels out of range")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __getitem__(self, i: int) -> LabeledExample:
        return LabeledExample(self.features[i], int(self.labels[i]), int(i))

    def __iter__(self) -> Iterator[LabeledExample]:
        return (self[i] for i in range(len(self)))

    def __eq__(self, other) -> bool:
        return (isinstance(other, Dataset) and self.n_labels == other.n_labels
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True, eq=False)
class PairSequence:
    """Ordered pairs of dataset rows, stored as two index arrays.

    With ``symmetric=True`` the constructor verifies that every ordered
    pair (a, b) occurs exactly as often as (b, a).
    """

    dataset: Dataset
    first: np.ndarray
    second: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        a = np.asarray(self.first, dtype=np.int64).ravel()
        b = np.asarray(self.second, dtype=np.int64).ravel()
        if a.shape != b.shape:
            raise SchemeError("pair index arrays differ in length")
        n = len(self.dataset)
        if a.size and (min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= n):
            raise SchemeError("pair index out of range")
        object.__setattr__(self, "first", a)
        object.__setattr__(self, "second", b)
        if self.symmetric and not is_symmetric(a, b):
            raise SchemeError("pair sequence flagged symmetric but (a, b) and (b, a) counts differ")

    def __len__(self) -> int:
        return self.first.size

    @property
    def pairs(self) -> list[tuple[LabeledExample, LabeledExample]]:
        return [(self.dataset[i], self.dataset[j]) for i, j in zip(self.first, self.second)]

    def arrays(self):
        """(X, X', y, y') for the whole sequence."""
        d = self.dataset
        return d.features[self.first], d.features[self.second], d.labels[self.first], d.labels[self.second]


def is_symmetric(first, second) -> bool:
    forward_counts = Counter(zip(np.asarray(first).tolist(), np.asarray(second).tolist()))
    swapped = Counter({(b, a): c for (a, b), c in forward_counts.items()})
    return forward_counts == swapped


def pairs_from_examples(pairs: list[tuple[LabeledExample, LabeledExample]], n_labels: int,
                        symmetric: bool = False) -> PairSequence:
    """Build a PairSequence from explicit example pairs.

    Examples are identified by ``index`` when set, else by (features, label).
    """
    rows: dict = {}
    feats, labels, first, second = [], [], [], []

    def key(ex: LabeledExample):
        if ex.index is not None:
            return ("i", ex.index)
        return ("v", tuple(np.asarray(ex.features, dtype=float).tolist()), ex.label)

    def row(ex: LabeledExample) -> int:
        k = key(ex)
        if k not in rows:
            rows[k] = len(feats)
            feats.append(np.asarray(ex.features, dtype=float))
            labels.append(ex.label)
        return rows[k]

    for a, b in pairs:
        first.append(row(a))
        second.append(row(b))
    return PairSequence(Dataset(np.array(feats), np.array(labels), n_labels), first, second, symmetric)


# -- per-pair losses --------------------------------------------------------


def _check_kind(model: Model, emb: TargetEmbedding, kind) -> LossKind:
    kind = LossKind.parse(kind)
    if kind is not model.loss_kind:
        raise SchemeError(f"{kind.value} loss on a model with a {model.head} head")
    if emb.kind != kind.embedding_kind:
        raise SchemeError(f"{kind.value} loss needs a {kind.embedding_kind} embedding, got {emb.kind}")
    if emb.dim != model.output_dim:
        raise SchemeError(f"embedding dim {emb.dim} != model output dim {model.output_dim}")
    return kind


def mixed_batch(tag: str, emb: TargetEmbedding, X1, X2, y1, y2, lam, gamma=None):
    """Inputs and targets of a scheme for rows of pairs.

    ``lam`` is the input weight on the first element (``s`` for DAT);
    ``gamma`` is the target weight for umix.
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape != X2.shape:
        raise SchemeError(f"pair feature shapes differ: {X1.shape} vs {X2.shape}")
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (X1.shape[0],))
    if np.any(lam < 0) or np.any(lam > 1):
        raise SchemeError("mixing weights must lie in [0, 1]")
    w = lam[:, None]
    inputs = w * X1 + (1.0 - w) * X2
    E1 = emb.vectors[np.atleast_1d(y1)]
    if tag == "dat":
        return inputs, E1
    if tag == "mix":
        g = w
    elif tag == "umix":
        if gamma is None:
            raise SchemeError("umix needs gamma values")
        g = np.broadcast_to(np.asarray(gamma, dtype=float), (X1.shape[0],))[:, None]
        if np.any(g < 0) or np.any(g > 1):
            raise SchemeError("gamma values must lie in [0, 1]")
    else:
        raise SchemeError(f"unknown scheme {tag!r}")
    E2 = emb.vectors[np.atleast_1d(y2)]
    return inputs, g * E1 + (1.0 - g) * E2


def row_losses(model: Model, emb: TargetEmbedding, kind, tag: str, X1, X2, y1, y2, lam, gamma=None) -> np.ndarray:
    """Scheme loss for each row of pairs, evaluated in bounded chunks."""
    _check_kind(model, emb, kind)
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    n = X1.shape[0]
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (n,))
    gamma = None if gamma is None else np.broadcast_to(np.asarray(gamma, dtype=float), (n,))
    y1 = np.broadcast_to(np.asarray(y1), (n,))
    y2 = np.broadcast_to(np.asarray(y2), (n,))
    out = np.empty(n)
    for lo in range(0, n, _CHUNK_ROWS):
        hi = min(lo + _CHUNK_ROWS, n)
        inputs, targets = mixed_batch(tag, emb, X1[lo:hi], X2[lo:hi], y1[lo:hi], y2[lo:hi],
                                      lam[lo:hi], None if gamma is None else gamma[lo:hi])
        out[lo:hi] = loss(model.loss_kind, forward(model, inputs), targets, check=False)
    return out


def _single(model, emb, kind, tag, x: LabeledExample, x_prime: LabeledExample, lam, gamma=None) -> float:
    return float(row_losses(model, emb, kind, tag, x.features, x_prime.features,
                            x.label, x_prime.label, lam, gamma)[0])


def plain_loss(model: Model, emb: TargetEmbedding, kind, x: LabeledExample) -> float:
    """Loss of the model on an unperturbed example."""
    return _single(model, emb, kind, "dat", x, x, 1.0)


def ell_mix(model, emb, kind, x: LabeledExample, x_prime: LabeledExample, lam: float) -> float:
    return _single(model, emb, kind, "mix", x, x_prime, lam)


def ell_dat(model, emb, kind, x: LabeledExample, x_prime: LabeledExample, s: float) -> float:
    """Loss of ``x`` moved toward ``x_prime`` by fraction ``1 - s``, keeping x's target."""
    return _single(model, emb, kind, "dat", x, x_prime, s)


def ell_umix(model, emb, kind, x: LabeledExample, x_prime: LabeledExample, lam: float, gamma_value: float) -> float:
    return _single(model, emb, kind, "umix", x, x_prime, lam, gamma_value)


def bernoulli_dat_surrogate(model, emb, kind, x: LabeledExample, x_prime: LabeledExample,
                            lam: float, gamma_value: float, rng) -> float:
    """One DAT case chosen by W ~ Bernoulli(gamma): x -> x' at lam, or x' -> x at 1 - lam."""
    rng = np.random.default_rng(rng)
    if rng.random() < gamma_value:
        return ell_dat(model, emb, kind, x, x_prime, lam)
    return ell_dat(model, emb, kind, x_prime, x, 1.0 - lam)


# -- batch losses -----------------------------------------------------------


def _lambdas(pairs: PairSequence, lambdas) -> np.ndarray:
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if lambdas.size != len(pairs):
        raise SchemeError(f"{lambdas.size} mixing weights for {len(pairs)} pairs")
    return lambdas


def batch_losses(model, emb, kind, tag: str, pairs: PairSequence, lambdas,
                 weighting: WeightingFunction | None = None) -> np.ndarray:
    lambdas = _lambdas(pairs, lambdas)
    gamma = None
    if tag == "umix":
        if weighting is None:
            raise SchemeError("umix needs a weighting function")
        gamma = weighting(lambdas)
    X1, X2, y1, y2 = pairs.arrays()
    return row_losses(model, emb, kind, tag, X1, X2, y1, y2, lambdas, gamma)


def batch_loss_mix(model, emb, kind, pairs: PairSequence, lambdas) -> float:
    return float(np.mean(batch_losses(model, emb, kind, "mix", pairs, lambdas)))


def batch_loss_dat(model, emb, kind, pairs: PairSequence, lambdas) -> float:
    return float(np.mean(batch_losses(model, emb, kind, "dat", pairs, lambdas)))


def batch_loss_umix(model, emb, kind, pairs: PairSequence, lambdas, weighting: WeightingFunction) -> float:
    return float(np.mean(batch_losses(model, emb, kind, "umix", pairs, lambdas, weighting)))


def node_loss_table(model, emb, kind, tag: str, pairs: PairSequence, policy: Policy,
                    weighting: WeightingFunction | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair losses at the policy's support nodes.

    Returns ``(table, support)``: ``table[k, j]`` is the loss of pair k at
    node ``policy.nodes[support[j]]``.  Zero-mass bins are skipped, so an
    undefined weighting there is never consulted.
    """
    if tag == "umix" and weighting is None:
        raise SchemeError("umix expected loss needs a weighting function")
    support = np.flatnonzero(policy.masses > 0)
    nodes = policy.nodes[support]
    gamma = None
    if tag == "umix":
        gamma = np.tile(weighting.at_nodes(policy.nodes)[support], len(pairs))
    X1, X2, y1, y2 = pairs.arrays()
    m = support.size
    rows = row_losses(model, emb, kind, tag,
                      np.repeat(X1, m, axis=0), np.repeat(X2, m, axis=0),
                      np.repeat(y1, m), np.repeat(y2, m),
                      np.tile(nodes, len(pairs)), gamma)
    return rows.reshape(len(pairs), m), support


def expected_loss(model, emb, kind, scheme_tag: str, pairs: PairSequence, policy: Policy,
                  weighting: WeightingFunction | None = None) -> float:
    """Exact expectation over i.i.d. lambdas from the grid policy.

    Independence lets the expectation pass through the mean over pairs:
    ``(1/K) sum_k sum_i mass_i * loss_k(node_i)``.
    """
    if scheme_tag not in SCHEMES:
        raise SchemeError(f"unknown scheme {scheme_tag!r}")
    if scheme_tag == "umix" and weighting is None:
        raise SchemeError("umix expected loss needs a weighting function")
    if len(pairs) == 0:
        raise SchemeError("empty pair sequence")
    table, support = node_loss_table(model, emb, kind, scheme_tag, pairs, policy, weighting)
    return float(np.mean(table @ policy.masses[support]))


# -- pair sequences ---------------------------------------------------------


def make_pair_sequence(dataset: Dataset, epoch_seed) -> PairSequence:
    """Two independent shuffles of the dataset zipped into pairs."""
    if len(dataset) == 0:
        raise SchemeError("cannot pair an empty dataset")
    rng = np.random.default_rng(epoch_seed)
    first = rng.permutation(len(dataset))
    second = rng.permutation(len(dataset))
    return PairSequence(dataset, first, second, symmetric=False)


def symmetrize(pairs: PairSequence) -> PairSequence:
    """The sequence followed by its swapped copy; length doubles."""
    return PairSequence(
        pairs.dataset,
        np.concatenate([pairs.first, pairs.second]),
        np.concatenate([pairs.second, pairs.first]),
        symmetric=True,
    )


# -- dataset text format ----------------------------------------------------


def format_dataset(ds: Dataset) -> str:
    lines = [f"dataset n={len(ds)} dim={ds.dim} labels={ds.n_labels}"]
    for x, y in zip(ds.features, ds.labels):
        lines.append(" ".join(repr(float(v)) for v in x) + f" {int(y)}")
    return "\n".join(lines) + "\n"


def parse_dataset(text: str) -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("dataset "):
        raise SchemeError("missing 'dataset' header")
    try:
        fields = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
        n, dim, n_labels = int(fields["n"]), int(fields["dim"]), int(fields["labels"])
        rows = [ln.split() for ln in lines[1:]]
        X = np.array([[float(v) for v in r[:-1]] for r in rows]).reshape(len(rows), -1)
        y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    except (KeyError, ValueError) as exc:
        raise SchemeError(f"malformed dataset file: {exc}") from None
    if len(rows) != n or (n and X.shape[1] != dim):
        raise SchemeError(f"header says n={n} dim={dim}, data is {X.shape}")
    return Dataset(X.reshape(n, dim), y, n_labels)


def save_dataset(ds: Dataset, path: str | PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(format_dataset(ds))


def load_dataset(path: str | PathLike) -> Dataset:
    with open(path) as fh:
        return parse_dataset(fh.read())
