"""SGD training with MixUp / DAT / Untied MixUp and the evaluation protocol.

Each epoch draws two fresh shuffles of the training set, pairs them up and
splits the pairs into mini-batches; every pair gets its own lambda.  A run's
error is the mean test error over its last ``eval_window`` epochs, and runs
are summarized by their mean with a normal 95% confidence half-width.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from os import PathLike

import numpy as np

from .losses import LossKind, TargetEmbedding, make_embedding
from .model import Model, forward, head_for, init_model, loss_and_grad
from .policy import Policy, UntiedScheme, WeightingFunction, sample_policy
from .schemes import Dataset, PairSequence, SchemeError, make_pair_sequence, mixed_batch

logger = logging.getLogger(__name__)

TRAIN_SCHEMES = ("baseline", "mix", "umix", "dat")
Z_95 = 1.96


class TrainingDiverged(RuntimeError):
    pass


# -- datasets ---------------------------------------------------------------


def _blobs(n: int, rng: np.random.Generator, dim: int, n_classes: int, separation: float):
    """Unit-variance Gaussian clusters whose centers are ``separation`` apart."""
    centers = np.zeros((n_classes, dim))
    if n_classes == 2:
        centers[0, 0], centers[1, 0] = -separation / 2, separation / 2
    else:
        if n_classes > dim:
            raise ValueError("blobs need dim >= n_classes")
        centers[np.arange(n_classes), np.arange(n_classes)] = separation / math.sqrt(2.0)
    y = rng.integers(0, n_classes, size=n)
    X = centers[y] + rng.standard_normal((n, dim))
    return X, y


def _spirals(n: int, rng: np.random.Generator, noise: float = 0.2):
    y = rng.integers(0, 2, size=n)
    t = np.sqrt(rng.random(n)) * 3.0 * np.pi
    r = t / (3.0 * np.pi) * 3.0
    sign = np.where(y == 0, 1.0, -1.0)
    X = np.stack([sign * r * np.cos(t), sign * r * np.sin(t)], axis=1)
    return X + noise * rng.standard_normal(X.shape), y


def make_toy_dataset(kind: str, n: int, seed: int, *, flip_rate: float = 0.2, n_test: int = 2000,
                     dim: int = 10, n_classes: int = 2, separation: float = 3.0) -> tuple[Dataset, Dataset]:
    """Seeded (train, test) pair of size (n, n_test).

    ``blobs`` are Gaussian clusters; ``noisy_blobs`` are the same clusters
    with each training label replaced by a different class with probability
    ``flip_rate`` (test labels stay clean); ``two_spirals`` interleaves two
    arms in the plane.
    """
    if n < 10:
        raise ValueError("toy datasets need n >= 10")
    data_seq, flip_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(data_seq)
    if kind in ("blobs", "noisy_blobs"):
        X, y = _blobs(n + n_test, rng, dim, n_classes, separation)
        labels = n_classes
    elif kind == "two_spirals":
        X, y = _spirals(n + n_test, rng)
        labels = 2
    else:
        raise ValueError(f"unknown toy dataset {kind!r}")
    y_train = y[:n].copy()
    if kind == "noisy_blobs" and flip_rate > 0:
        frng = np.random.default_rng(flip_seq)
        flip = frng.random(n) < flip_rate
        shift = frng.integers(1, labels, size=n)
        y_train[flip] = (y_train[flip] + shift[flip]) % labels
    return Dataset(X[:n], y_train, labels), Dataset(X[n:], y[n:], labels)


# -- configuration and reports ----------------------------------------------


@dataclass
class TrainConfig:
    scheme: str = "baseline"
    policy: Policy | None = None
    weighting: WeightingFunction | None = None
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.1
    weight_decay: float = 0.0
    seed: int = 0
    eval_window: int = 10
    loss: str = "cross_entropy"
    architecture: str = "mlp"
    width: int = 64
    embed_dim: int = 16
    policy_label: str = "-"

    def __post_init__(self):
        if self.scheme not in TRAIN_SCHEMES:
            raise ValueError(f"scheme must be one of {TRAIN_SCHEMES}, got {self.scheme!r}")
        if self.scheme != "baseline" and self.policy is None:
            raise ValueError(f"scheme {self.scheme!r} needs a policy")
        if self.scheme == "umix" and self.weighting is None:
            raise ValueError("umix needs a weighting function")
        if not 1 <= self.eval_window <= self.epochs:
            raise ValueError("eval_window must be between 1 and epochs")
        self.loss = LossKind.parse(self.loss).value

    @classmethod
    def untied(cls, scheme: UntiedScheme, **kw) -> "TrainConfig":
        return cls(scheme="umix", policy=scheme.policy, weighting=scheme.weighting, **kw)

    @property
    def model_label(self) -> str:
        names = {"baseline": "baseline", "mix": "mixUp", "umix": "uMixUp", "dat": "DAT"}
        return f"{names[self.scheme]}-{LossKind.parse(self.loss).short}"


@dataclass
class RunReport:
    per_epoch_test_error: np.ndarray
    final_error: float
    wall_time: float = 0.0
    clamps: int = 0
    model: Model | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.final_error <= 1.0:
            raise ValueError("final_error must lie in [0, 1]")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "test_error"])
        for i, e in enumerate(self.per_epoch_test_error, start=1):
            w.writerow([i, repr(float(e))])
        w.writerow(["final", repr(float(self.final_error))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RunReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["epoch", "test_error"] or rows[-1][0] != "final":
            raise ValueError("not a run report CSV")
        errs = np.array([float(r[1]) for r in rows[1:-1]])
        return cls(errs, float(rows[-1][1]))


# -- gradients --------------------------------------------------------------


def scheme_loss_and_grad(model: Model, emb: TargetEmbedding, kind, tag: str,
                         pairs: PairSequence, lambdas=None,
                         weighting: WeightingFunction | None = None) -> tuple[float, np.ndarray]:
    """Batch scheme loss (mean over pairs) and its exact gradient in theta.

    ``tag="baseline"`` trains on the first element of each pair unmixed.
    """
    X1, X2, y1, y2 = pairs.arrays()
    kind = LossKind.parse(kind)
    if kind is not model.loss_kind:
        raise SchemeError(f"{kind.value} loss on a model with a {model.head} head")
    if tag == "baseline":
        inputs, targets = X1, emb.vectors[y1]
    else:
        if lambdas is None:
            raise SchemeError(f"{tag} needs mixing weights")
        gamma = weighting(lambdas) if tag == "umix" else None
        inputs, targets = mixed_batch(tag, emb, X1, X2, y1, y2, lambdas, gamma)
    value, grad, _ = loss_and_grad(model, inputs, targets)
    return value, grad


def grad_scheme_loss(model, emb, kind, tag, pairs, lambdas=None, weighting=None) -> np.ndarray:
    return scheme_loss_and_grad(model, emb, kind, tag, pairs, lambdas, weighting)[1]


# -- training ---------------------------------------------------------------


def evaluation_error(model: Model, emb: TargetEmbedding, data: Dataset) -> float:
    """Fraction of misclassified rows under the embedding's decision rule."""
    return float(np.mean(emb.decode(forward(model, data.features)) != data.labels))


def setup_run(config: TrainConfig, train: Dataset) -> tuple[Model, TargetEmbedding]:
    kind = LossKind.parse(config.loss)
    init_seq, emb_seq = np.random.SeedSequence(config.seed).spawn(2)
    emb = make_embedding(kind, train.n_labels, config.embed_dim,
                         seed=int(emb_seq.generate_state(1)[0]))
    model = init_model(config.architecture, train.dim, emb.dim, head_for(kind),
                       seed=int(init_seq.generate_state(1)[0]), width=config.width)
    return model, emb


def train(config: TrainConfig, dataset_train: Dataset, dataset_test: Dataset) -> RunReport:
    """Run SGD for ``config.epochs`` epochs; deterministic given ``config.seed``."""
    start = time.perf_counter()
    model, emb = setup_run(config, dataset_train)
    kind = LossKind.parse(config.loss)
    _, _, pair_seq, lam_seq = np.random.SeedSequence(config.seed).spawn(4)
    pair_rng = np.random.default_rng(pair_seq)
    lam_rng = np.random.default_rng(lam_seq)
    theta = model.params.copy()
    n = len(dataset_train)
    errors = np.empty(config.epochs)
    clamps = 0
    X, y = dataset_train.features, dataset_train.labels
    targets_all = emb.vectors
    for epoch in range(config.epochs):
        pairs = make_pair_sequence(dataset_train, pair_rng)
        lambdas = None if config.scheme == "baseline" else sample_policy(config.policy, n, lam_rng)
        gammas = config.weighting(lambdas) if config.scheme == "umix" else None
        for lo in range(0, n, config.batch_size):
            hi = min(lo + config.batch_size, n)
            a, b = pairs.first[lo:hi], pairs.second[lo:hi]
            if config.scheme == "baseline":
                inputs, targets = X[a], targets_all[y[a]]
            else:
                inputs, targets = mixed_batch(
                    config.scheme, emb, X[a], X[b], y[a], y[b], lambdas[lo:hi],
                    None if gammas is None else gammas[lo:hi])
            value, grad, c = loss_and_grad(model, inputs, targets)
            clamps += c
            if not math.isfinite(value) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(
                    f"{config.model_label} seed={config.seed}: non-finite loss at epoch {epoch + 1}")
            if config.weight_decay:
                grad = grad + config.weight_decay * theta
            theta -= config.learning_rate * grad
            model = model.with_params(theta)
        errors[epoch] = evaluation_error(model, emb, dataset_test)
        logger.debug("%s seed=%d epoch=%d test_error=%.4f", config.model_label, config.seed,
                     epoch + 1, errors[epoch])
    if clamps:
        logger.info("%s seed=%d: %d cross-entropy log-floor clamps", config.model_label, config.seed, clamps)
    final = float(np.mean(errors[-config.eval_window:]))
    return RunReport(errors, final, time.perf_counter() - start, clamps, model)


# -- aggregation ------------------------------------------------------------


def aggregate_runs(reports: list[RunReport]) -> tuple[float, float]:
    """Mean final error and the 95% half-width 1.96 * s / sqrt(runs)."""
    if len(reports) < 2:
        raise ValueError("a confidence interval needs at least 2 runs")
    errs = np.array([r.final_error for r in reports])
    return float(errs.mean()), float(Z_95 * errs.std(ddof=1) / math.sqrt(errs.size))


@dataclass
class TableRow:
    model: str
    policy: str
    runs: int
    mean: float
    confint: float


def table_row(config: TrainConfig, reports: list[RunReport]) -> TableRow:
    mean, half = aggregate_runs(reports)
    return TableRow(config.model_label, config.policy_label, len(reports), mean, half)


def format_table(rows: list[TableRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "policy", "runs", "mean", "confint"])
    for r in rows:
        w.writerow([r.model, r.policy, r.runs, f"{r.mean:.6f}", f"{r.confint:.6f}"])
    return buf.getvalue()


def save_report(report: RunReport, path: str | PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(report.to_csv())
