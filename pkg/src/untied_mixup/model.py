"""Small differentiable classifiers: linear or one-hidden-layer tanh MLP.

Parameters live in one flat vector so that optimizers and finite-difference
checks can treat the model as a point in R^n.  The head is softmax for
cross-entropy models and Euclidean normalization for negative-cosine ones.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .losses import LOG_FLOOR, LossKind

NORM_FLOOR = 1e-8
_LOG_FLOOR = float(np.log(LOG_FLOOR))

ARCHITECTURES = ("linear_softmax", "mlp")
HEADS = ("softmax", "unit")


@dataclass(frozen=True, eq=False)
class Model:
    architecture: str
    input_dim: int
    output_dim: int
    head: str
    params: np.ndarray
    width: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.architecture == "mlp" and self.width < 1:
            raise ValueError("mlp needs a positive hidden width")
        params = np.array(self.params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        object.__setattr__(self, "params", params)

    @property
    def n_params(self) -> int:
        d, m, w = self.input_dim, self.output_dim, self.width
        if self.architecture == "linear_softmax":
            return m * d + m
        return w * d + w + m * w + m

    @property
    def loss_kind(self) -> LossKind:
        return LossKind.CROSS_ENTROPY if self.head == "softmax" else LossKind.NEGATIVE_COSINE

    def unpack(self, params: np.ndarray | None = None) -> tuple[np.ndarray, ...]:
        """Views (W1, b1, W2, b2) for the MLP, (W, b) for the linear model."""
        p = self.params if params is None else params
        d, m, w = self.input_dim, self.output_dim, self.width
        if self.architecture == "linear_softmax":
            return p[: m * d].reshape(m, d), p[m * d:]
        i = 0
        W1 = p[i:i + w * d].reshape(w, d); i += w * d
        b1 = p[i:i + w]; i += w
        W2 = p[i:i + m * w].reshape(m, w); i += m * w
        return W1, b1, W2, p[i:]

    def with_params(self, params: np.ndarray) -> "Model":
        return replace(self, params=params)

    def __call__(self, features) -> np.ndarray:
        return forward(self, features)


def init_model(architecture: str, input_dim: int, output_dim: int, head: str,
               seed: int = 0, width: int = 64, scale: float = 1.0) -> Model:
    """Gaussian init with variance scale / fan_in; biases start at zero."""
    rng = np.random.default_rng(seed)
    if architecture == "linear_softmax":
        W = rng.standard_normal((output_dim, input_dim)) * np.sqrt(scale / input_dim)
        params = np.concatenate([W.ravel(), np.zeros(output_dim)])
        width = 0
    else:
        W1 = rng.standard_normal((width, input_dim)) * np.sqrt(scale / input_dim)
        W2 = rng.standard_normal((output_dim, width)) * np.sqrt(scale / width)
        params = np.concatenate([W1.ravel(), np.zeros(width), W2.ravel(), np.zeros(output_dim)])
    return Model(architecture, input_dim, output_dim, head, params, width)


def zero_model(architecture: str, input_dim: int, output_dim: int, head: str, width: int = 64) -> Model:
    tmp = init_model(architecture, input_dim, output_dim, head, width=width)
    return tmp.with_params(np.zeros(tmp.n_params))


def head_for(kind: LossKind | str) -> str:
    return "softmax" if LossKind.parse(kind) is LossKind.CROSS_ENTROPY else "unit"


def _as_batch(model: Model, features) -> tuple[np.ndarray, bool]:
    X = np.asarray(features, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[-1] != model.input_dim:
        raise ValueError(f"model expects {model.input_dim} features, got {X.shape[-1]}")
    return X, single


def logits(model: Model, features) -> np.ndarray:
    X, single = _as_batch(model, features)
    z = _logits(model, X)
    return z[0] if single else z


def apply_head(head: str, z: np.ndarray) -> np.ndarray:
    if head == "softmax":
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    norm = np.maximum(np.linalg.norm(z, axis=-1, keepdims=True), NORM_FLOOR)
    return z / norm


def forward(model: Model, features) -> np.ndarray:
    """Model prediction F(x): a probability vector or a unit vector per row."""
    return apply_head(model.head, logits(model, features))


def loss_and_grad(model: Model, inputs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray, int]:
    """Mean loss over rows of (inputs, targets) and its exact gradient in theta.

    Returns ``(loss, grad, clamps)`` where ``clamps`` counts cross-entropy
    log-floor hits on positive target weights.
    """
    X, _ = _as_batch(model, inputs)
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    if T.shape != (X.shape[0], model.output_dim):
        raise ValueError(f"targets must have shape {(X.shape[0], model.output_dim)}, got {T.shape}")
    return _loss_and_grad(model, X, T)


# -- kernels ----------------------------------------------------------------


def _logits(model, X: np.ndarray) -> np.ndarray:
    if model.architecture == "linear_softmax":
        W, b = model.unpack()
        return X @ W.T + b
    W1, b1, W2, b2 = model.unpack()
    return np.tanh(X @ W1.T + b1) @ W2.T + b2


def _head_loss_grad(head: str, z: np.ndarray, T: np.ndarray):
    """Per-row losses, dL/dz per row, and the clamp count."""
    if head == "softmax":
        zs = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
        logq = zs - lse
        live = logq >= _LOG_FLOOR
        clamps = int(np.count_nonzero(~live & (T != 0)))
        losses = -np.sum(T * np.where(live, logq, _LOG_FLOOR), axis=1)
        Tl = np.where(live, T, 0.0)
        dz = np.exp(logq) * Tl.sum(axis=1, keepdims=True) - Tl
        return losses, dz, clamps
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    safe = np.maximum(norm, NORM_FLOOR)
    u = z / safe
    proj = np.sum(u * T, axis=1, keepdims=True)
    losses = -proj[:, 0]
    dz = np.where(norm > NORM_FLOOR, -(T - u * proj) / safe, -T / NORM_FLOOR)
    return losses, dz, 0


def _loss_and_grad(model, X: np.ndarray, T: np.ndarray):
    n = X.shape[0]
    if model.architecture == "linear_softmax":
        W, b = model.unpack()
        z = X @ W.T + b
        losses, dz, clamps = _head_loss_grad(model.head, z, T)
        dz /= n
        grad = np.concatenate([(dz.T @ X).ravel(), dz.sum(axis=0)])
        return float(losses.mean()), grad, clamps
    W1, b1, W2, b2 = model.unpack()
    a = np.tanh(X @ W1.T + b1)
    z = a @ W2.T + b2
    losses, dz, clamps = _head_loss_grad(model.head, z, T)
    dz /= n
    dh = (dz @ W2) * (1.0 - a * a)
    grad = np.concatenate([
        (dh.T @ X).ravel(), dh.sum(axis=0), (dz.T @ a).ravel(), dz.sum(axis=0),
    ])
    return float(losses.mean()), grad, clamps
