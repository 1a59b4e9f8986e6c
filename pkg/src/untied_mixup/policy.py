"""Distributions on [0, 1] and the maps between MixUp, DAT and Untied MixUp.

A :class:`Policy` is a vector of bin masses over ``n_bins`` uniform bins of
[0, 1].  Each bin carries one quadrature node; nodes default to the bin
midpoints and always satisfy ``nodes[i] + nodes[N-1-i] == 1``, so reversing
the array is the same as the substitution ``lam -> 1 - lam``.  All three
transforms are written in terms of that reversal, which makes the
expected-loss identities hold exactly on the grid.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable

import numpy as np
from scipy.special import betainc

logger = logging.getLogger(__name__)

DEFAULT_BINS = 1024
EPSILON_ZERO = 1e-12
NORMALIZATION_TOL = 1e-9
RESOLUTION_TOL = 1e-6


class PolicyError(ValueError):
    """Invalid policy parameters or malformed policy data."""


class ResolutionWarning(UserWarning):
    """A transform lost more mass to discretization than the grid allows."""


def bin_edges(n_bins: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_bins + 1)


def bin_midpoints(n_bins: int) -> np.ndarray:
    # (2i + 1) / 2N is exactly mirror-symmetric in floating point
    return (2.0 * np.arange(n_bins) + 1.0) / (2.0 * n_bins)


def bin_index(lam, n_bins: int):
    """Index of the bin containing ``lam``; 1.0 belongs to the last bin."""
    idx = np.floor(np.asarray(lam, dtype=float) * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def _check_n_bins(n_bins: int) -> None:
    if n_bins < 2 or n_bins % 2:
        raise PolicyError(f"n_bins must be an even integer >= 2, got {n_bins}")


@dataclass(frozen=True, eq=False)
class Policy:
    """Probability masses on the uniform grid of [0, 1].

    ``exact_nodes`` marks atomic policies (point masses): sampling returns
    the node values themselves instead of jittering within the bin.
    ``beta`` holds the shape parameters when the policy was built from an
    analytic Beta distribution; transforms always return grid policies.
    """

    masses: np.ndarray
    nodes: np.ndarray = None
    exact_nodes: bool = False
    beta: tuple[float, float] | None = None

    def __post_init__(self):
        masses = np.array(self.masses, dtype=float)
        if masses.ndim != 1:
            raise PolicyError("masses must be one-dimensional")
        n = masses.size
        _check_n_bins(n)
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise PolicyError("masses must be finite and nonnegative")
        total = masses.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise PolicyError(f"masses sum to {total!r}, expected 1")
        masses /= total
        if self.nodes is None:
            nodes = bin_midpoints(n)
        else:
            nodes = np.array(self.nodes, dtype=float)
            edges = bin_edges(n)
            if nodes.shape != (n,):
                raise PolicyError("nodes must match masses in length")
            if np.any(nodes < edges[:-1]) or np.any(nodes > edges[1:]):
                raise PolicyError("every node must lie inside its own bin")
            if np.max(np.abs(nodes + nodes[::-1] - 1.0)) > 1e-15:
                raise PolicyError("nodes must be mirror-symmetric about 0.5")
        masses.flags.writeable = False
        nodes.flags.writeable = False
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_bins(self) -> int:
        return self.masses.size

    @property
    def representation(self) -> str:
        return "beta" if self.beta is not None else "grid"

    def reversed(self) -> np.ndarray:
        """Masses of ``1 - Lambda`` on the same grid."""
        return self.masses[::-1]

    def mean(self) -> float:
        return float(self.masses @ self.nodes)

    def _derived(self, masses: np.ndarray) -> "Policy":
        return Policy(masses, nodes=self.nodes, exact_nodes=self.exact_nodes)


@dataclass(frozen=True, eq=False)
class WeightingFunction:
    """Target weight gamma: [0, 1] -> [0, 1], tabulated per bin.

    ``func`` optionally keeps the closed form (e.g. the identity) so that
    evaluation at arbitrary points is exact instead of piecewise constant.
    """

    values: np.ndarray
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise PolicyError("weighting values must be one-dimensional")
        _check_n_bins(values.size)
        if not np.all(np.isfinite(values)) or np.any(values < 0) or np.any(values > 1):
            raise PolicyError("weighting values must lie in [0, 1]")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_bins(self) -> int:
        return self.values.size

    def __call__(self, lam):
        """Evaluate gamma at arbitrary points of [0, 1]."""
        lam = np.asarray(lam, dtype=float)
        if self.func is not None:
            return np.clip(self.func(lam), 0.0, 1.0)
        return self.values[bin_index(lam, self.n_bins)]

    def at_nodes(self, nodes: np.ndarray) -> np.ndarray:
        """Gamma at a policy's quadrature nodes, one value per bin.

        Grid values are taken bin-by-bin rather than by locating the node,
        because an atomic node may sit exactly on a bin edge.
        """
        if nodes.size != self.n_bins:
            raise PolicyError("weighting and policy grids differ")
        if self.func is not None:
            return np.clip(self.func(nodes), 0.0, 1.0)
        return self.values


@dataclass(frozen=True)
class UntiedScheme:
    policy: Policy
    weighting: WeightingFunction

    def __post_init__(self):
        if self.policy.n_bins != self.weighting.n_bins:
            raise PolicyError(
                f"policy has {self.policy.n_bins} bins but weighting has "
                f"{self.weighting.n_bins}"
            )


# -- constructors -----------------------------------------------------------


def beta_policy(alpha: float, beta: float, n_bins: int = DEFAULT_BINS) -> Policy:
    """Beta(alpha, beta) as exact bin masses from the regularized incomplete beta."""
    if not (alpha > 0 and beta > 0):
        raise PolicyError(f"Beta shape parameters must be positive, got ({alpha}, {beta})")
    _check_n_bins(n_bins)
    cdf = betainc(alpha, beta, bin_edges(n_bins))
    cdf[0], cdf[-1] = 0.0, 1.0
    masses = np.maximum(np.diff(cdf), 0.0)
    return Policy(masses / masses.sum(), beta=(float(alpha), float(beta)))


def uniform_policy(n_bins: int = DEFAULT_BINS) -> Policy:
    return beta_policy(1.0, 1.0, n_bins)


def point_policy(lam: float, n_bins: int = DEFAULT_BINS) -> Policy:
    """Point mass at ``lam``; its node (and the mirrored node) sit exactly on it."""
    if not 0.0 <= lam <= 1.0:
        raise PolicyError(f"point mass location must be in [0, 1], got {lam}")
    _check_n_bins(n_bins)
    b = int(bin_index(lam, n_bins))
    nodes = bin_midpoints(n_bins)
    nodes[b] = lam
    nodes[n_bins - 1 - b] = 1.0 - lam
    masses = np.zeros(n_bins)
    masses[b] = 1.0
    return Policy(masses, nodes=nodes, exact_nodes=True)


def identity_weighting(n_bins: int = DEFAULT_BINS) -> WeightingFunction:
    """Gamma(lam) = lam; pairs with a policy to reproduce plain MixUp."""
    return WeightingFunction(bin_midpoints(n_bins), func=lambda lam: lam)


def constant_weighting(value: float, n_bins: int = DEFAULT_BINS) -> WeightingFunction:
    return WeightingFunction(np.full(n_bins, float(value)),
                             func=lambda lam: np.full_like(lam, value, dtype=float))


# -- transforms -------------------------------------------------------------


def _finish(raw: np.ndarray, what: str) -> np.ndarray:
    total = raw.sum()
    residual = abs(total - 1.0)
    if residual > RESOLUTION_TOL:
        warnings.warn(
            f"{what}: discretization residual {residual:.3g} exceeds {RESOLUTION_TOL:g}",
            ResolutionWarning,
            stacklevel=3,
        )
    return np.maximum(raw, 0.0) / total


def transform_D(p: Policy) -> Policy:
    """MixUp policy -> DAT policy: lam * (p(lam) + p(1 - lam))."""
    raw = p.nodes * (p.masses + p.reversed())
    return p._derived(_finish(raw, "transform_D"))


def transform_U(p: Policy) -> UntiedScheme:
    """DAT policy -> Untied MixUp scheme (symmetrized policy, weighting)."""
    both = p.masses + p.reversed()
    sym = 0.5 * both
    # exact mirror symmetry regardless of rounding in the sum
    sym = 0.5 * (sym + sym[::-1])
    defined = both >= EPSILON_ZERO
    gamma = np.full(p.n_bins, 0.5)
    gamma[defined] = p.masses[defined] / both[defined]
    gamma = np.clip(gamma, 0.0, 1.0)
    policy = p._derived(_finish(sym, "transform_U"))
    return UntiedScheme(policy, WeightingFunction(gamma))


def transform_Du(scheme: UntiedScheme) -> Policy:
    """Untied MixUp scheme -> DAT policy: g(lam) p(lam) + (1 - g(1 - lam)) p(1 - lam)."""
    p = scheme.policy
    g = scheme.weighting.at_nodes(p.nodes)
    raw = g * p.masses + (1.0 - g[::-1]) * p.reversed()
    total = raw.sum()
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise AssertionError(f"transform_Du lost normalization: sum = {total!r}")
    return p._derived(np.maximum(raw, 0.0) / total)


# -- sampling ---------------------------------------------------------------


def sample_policy(p: Policy, count: int, rng_seed=None) -> np.ndarray:
    """Draw ``count`` values of lambda by inverse CDF over the bin masses.

    ``rng_seed`` may be an integer or an existing ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(rng_seed)
    if count == 0:
        return np.empty(0)
    cdf = np.cumsum(p.masses)
    u = rng.random(count)
    jitter = rng.random(count)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    # side="right" skips zero-mass bins on flat stretches of the CDF
    idx = np.minimum(idx, p.n_bins - 1)
    if p.exact_nodes:
        return p.nodes[idx].copy()
    return (idx + jitter) / p.n_bins


# -- text format ------------------------------------------------------------


def _format_table(tag: str, values: np.ndarray) -> str:
    lines = [f"{tag} n_bins={values.size}"]
    lines.extend(f"{v:.12f}" for v in values)
    return "\n".join(lines) + "\n"


def _parse_table(text: str, tag: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise PolicyError(f"empty {tag} file")
    head = lines[0].split()
    if head[0] != tag or len(head) != 2 or not head[1].startswith("n_bins="):
        raise PolicyError(f"expected header '{tag} n_bins=<N>', got {lines[0]!r}")
    try:
        n = int(head[1].split("=", 1)[1])
        values = np.array([float(v) for v in lines[1:]])
    except ValueError as exc:
        raise PolicyError(f"malformed {tag} file: {exc}") from None
    if values.size != n:
        raise PolicyError(f"header says {n} bins but file has {values.size} values")
    return values


def format_policy(p: Policy) -> str:
    return _format_table("policy", p.masses)


def parse_policy(text: str) -> Policy:
    masses = _parse_table(text, "policy")
    # 12 fractional digits leave up to ~N * 5e-13 of rounding in the total
    return Policy(masses / masses.sum())


def format_weighting(w: WeightingFunction) -> str:
    return _format_table("gamma", w.values)


def parse_weighting(text: str) -> WeightingFunction:
    return WeightingFunction(_parse_table(text, "gamma"))


def save_policy(p: Policy, path: str | PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(format_policy(p))


def load_policy(path: str | PathLike) -> Policy:
    with open(path) as fh:
        return parse_policy(fh.read())


def save_weighting(w: WeightingFunction, path: str | PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(format_weighting(w))


def load_weighting(path: str | PathLike) -> WeightingFunction:
    with open(path) as fh:
        return parse_weighting(fh.read())


def l1_distance(a: Policy | np.ndarray, b: Policy | np.ndarray) -> float:
    ma = a.masses if isinstance(a, Policy) else np.asarray(a)
    mb = b.masses if isinstance(b, Policy) else np.asarray(b)
    return float(np.abs(ma - mb).sum())
