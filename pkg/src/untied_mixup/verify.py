"""Numerical checks of the MixUp / DAT / Untied MixUp equivalences.

Equality checks compare two expected losses computed by exact quadrature
over a grid policy.  Concentration checks sample lambda sequences and
compare the empirical tail of ``|sampled - expected|`` with the McDiarmid
bound ``2 exp(-2 eps^2 K / delta^2)``.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import policy as pa
from .losses import LossKind, check_target_linearity, make_embedding
from .model import Model, head_for, init_model, zero_model
from .schemes import (
    Dataset,
    PairSequence,
    SchemeError,
    expected_loss,
    node_loss_table,
    row_losses,
    symmetrize,
)

logger = logging.getLogger(__name__)

EQUALITY_TOL = 1e-6
IDENTITY_TOL = 1e-10


class SymmetryError(SchemeError):
    """An equality check was given a pair sequence that is not symmetric."""


@dataclass
class EquivalenceReport:
    scheme_pair: str
    expected_loss_a: float
    expected_loss_b: float
    abs_gap: float
    tolerance: float
    passed: bool
    config: dict = field(default_factory=dict)


@dataclass
class ConcentrationReport:
    K_values: np.ndarray
    epsilon: float
    empirical_tail_prob: np.ndarray
    mcdiarmid_bound: np.ndarray
    delta_hat: float
    replicates: int
    rms_deviation: np.ndarray
    scheme: str = "mix"

    def binomial_slack(self, sigmas: float = 3.0) -> np.ndarray:
        b = np.clip(self.mcdiarmid_bound, 0.0, 1.0)
        return sigmas * np.sqrt(b * (1.0 - b) / self.replicates)

    @property
    def bound_holds(self) -> np.ndarray:
        return self.empirical_tail_prob <= self.mcdiarmid_bound + self.binomial_slack()


@dataclass
class GapReport:
    K_values: np.ndarray
    median_gap: np.ndarray
    gaps: np.ndarray  # replicates x len(K_values)
    replicates: int
    scheme: str = "mix"

    @property
    def decreasing(self) -> bool:
        return bool(self.median_gap[-1] < self.median_gap[0])


def _equivalence(name: str, a: float, b: float, tolerance: float, config: dict) -> EquivalenceReport:
    gap = abs(a - b)
    return EquivalenceReport(name, a, b, gap, tolerance, bool(gap < tolerance), dict(config))


def _require_symmetric(pairs: PairSequence, require: bool) -> None:
    if require and not pairs.symmetric:
        raise SymmetryError("the equivalence only holds on symmetric pair sequences")


# -- expected-loss equalities -----------------------------------------------


def check_mix_dat_equality(model: Model, emb, kind, pairs: PairSequence, p_mix: pa.Policy,
                   tolerance: float = EQUALITY_TOL, require_symmetric: bool = True,
                   config: dict | None = None) -> EquivalenceReport:
    """MixUp with ``p_mix`` vs DAT with ``transform_D(p_mix)``."""
    _require_symmetric(pairs, require_symmetric)
    p_dat = pa.transform_D(p_mix)
    a = expected_loss(model, emb, kind, "mix", pairs, p_mix)
    b = expected_loss(model, emb, kind, "dat", pairs, p_dat)
    return _equivalence("mix~dat", a, b, tolerance, config or {})


def check_dat_untied_equality(model: Model, emb, kind, pairs: PairSequence, p_dat: pa.Policy,
                   tolerance: float = EQUALITY_TOL, require_symmetric: bool = True,
                   config: dict | None = None) -> EquivalenceReport:
    """Untied MixUp with ``transform_U(p_dat)`` vs DAT with ``p_dat``."""
    _require_symmetric(pairs, require_symmetric)
    scheme = pa.transform_U(p_dat)
    a = expected_loss(model, emb, kind, "umix", pairs, scheme.policy, scheme.weighting)
    b = expected_loss(model, emb, kind, "dat", pairs, p_dat)
    return _equivalence("umix~dat (U)", a, b, tolerance, config or {})


def check_untied_dat_equality(model: Model, emb, kind, pairs: PairSequence, scheme: pa.UntiedScheme,
                   tolerance: float = EQUALITY_TOL, require_symmetric: bool = True,
                   config: dict | None = None) -> EquivalenceReport:
    """Untied MixUp ``scheme`` vs DAT with ``transform_Du(scheme)``."""
    _require_symmetric(pairs, require_symmetric)
    p_dat = pa.transform_Du(scheme)
    a = expected_loss(model, emb, kind, "umix", pairs, scheme.policy, scheme.weighting)
    b = expected_loss(model, emb, kind, "dat", pairs, p_dat)
    return _equivalence("umix~dat (Du)", a, b, tolerance, config or {})


# -- pointwise identities ---------------------------------------------------


def decomposition_deviation(model: Model, emb, kind, X1, X2, y1, y2, lam, gamma=None) -> np.ndarray:
    """|l_umix - g l_dat(x->x', lam) - (1-g) l_dat(x'->x, 1-lam)| per row.

    With ``gamma=None`` the weight is ``lam`` itself and the left side is
    the MixUp loss.
    """
    lam = np.asarray(lam, dtype=float)
    if gamma is None:
        g, lhs = lam, row_losses(model, emb, kind, "mix", X1, X2, y1, y2, lam)
    else:
        g = np.asarray(gamma, dtype=float)
        lhs = row_losses(model, emb, kind, "umix", X1, X2, y1, y2, lam, g)
    fwd = row_losses(model, emb, kind, "dat", X1, X2, y1, y2, lam)
    back = row_losses(model, emb, kind, "dat", X2, X1, y2, y1, 1.0 - lam)
    return np.abs(lhs - g * fwd - (1.0 - g) * back)


# -- concentration ----------------------------------------------------------


def iid_pairs(dataset: Dataset, K: int, rng: np.random.Generator) -> PairSequence:
    """K pairs drawn i.i.d. from the uniform distribution on D x D."""
    n = len(dataset)
    return PairSequence(dataset, rng.integers(0, n, K), rng.integers(0, n, K))


def all_pairs(dataset: Dataset) -> PairSequence:
    n = len(dataset)
    a, b = np.divmod(np.arange(n * n), n)
    return PairSequence(dataset, a, b, symmetric=True)


def loss_range(model, emb, kind, tag: str, pairs: PairSequence, n_bins: int = pa.DEFAULT_BINS,
               weighting: pa.WeightingFunction | None = None) -> float:
    """Max over pairs of the spread of the scheme loss across a lambda sweep.

    The sweep covers every bin midpoint plus both endpoints.
    """
    sweep = np.concatenate([[0.0], pa.bin_midpoints(n_bins), [1.0]])
    X1, X2, y1, y2 = pairs.arrays()
    m = sweep.size
    gamma = None if weighting is None else np.tile(weighting(sweep), len(pairs))
    vals = row_losses(model, emb, kind, tag, np.repeat(X1, m, axis=0), np.repeat(X2, m, axis=0),
                      np.repeat(y1, m), np.repeat(y2, m), np.tile(sweep, len(pairs)), gamma)
    vals = vals.reshape(len(pairs), m)
    return float(np.max(vals.max(axis=1) - vals.min(axis=1)))


def check_convergence(model: Model, emb, kind, dataset: Dataset, p_mix: pa.Policy, K_values,
                      replicates: int = 2000, seed: int = 0, scheme: str = "mix",
                      weighting: pa.WeightingFunction | None = None,
                      epsilon: float | None = None) -> ConcentrationReport:
    """Empirical tails of the sampled batch loss around its expectation.

    One pair sequence of length ``max(K_values)`` is fixed; for each K its
    first K pairs are used with ``replicates`` independent lambda draws.
    ``epsilon`` defaults to a quarter of the loss range.
    """
    K_values = np.asarray(K_values, dtype=int)
    if np.any(np.diff(K_values) <= 0):
        raise ValueError("K_values must be strictly increasing")
    pair_seq, lam_seq = np.random.SeedSequence(seed).spawn(2)
    seq = iid_pairs(dataset, int(K_values[-1]), np.random.default_rng(pair_seq))
    lam_rng = np.random.default_rng(lam_seq)
    delta = loss_range(model, emb, kind, scheme, all_pairs(dataset), p_mix.n_bins, weighting)
    eps = delta / 4.0 if epsilon is None else float(epsilon)
    tails, bounds, rms = [], [], []
    for K in K_values:
        sub = PairSequence(dataset, seq.first[:K], seq.second[:K])
        table, support = node_loss_table(model, emb, kind, scheme, sub, p_mix, weighting)
        expect = float(np.mean(table @ p_mix.masses[support]))
        lams = pa.sample_policy(p_mix, K * replicates, lam_rng)
        gamma = None if weighting is None else weighting(lams)
        X1, X2, y1, y2 = sub.arrays()
        sampled = row_losses(model, emb, kind, scheme, np.tile(X1, (replicates, 1)),
                             np.tile(X2, (replicates, 1)), np.tile(y1, replicates),
                             np.tile(y2, replicates), lams, gamma)
        dev = sampled.reshape(replicates, K).mean(axis=1) - expect
        tails.append(float(np.mean(np.abs(dev) >= eps)))
        rms.append(float(np.sqrt(np.mean(dev ** 2))))
        bounds.append(2.0 * math.exp(-2.0 * eps ** 2 * K / delta ** 2) if delta > 0 else 0.0)
    return ConcentrationReport(K_values, eps, np.array(tails), np.array(bounds), delta,
                               replicates, np.array(rms), scheme)


def check_mix_dat_gap(model: Model, emb, kind, dataset: Dataset, p_mix: pa.Policy, K_values,
                      replicates: int = 200, seed: int = 0,
                      weighting: pa.WeightingFunction | None = None) -> GapReport:
    """Distribution of |sampled MixUp loss - sampled DAT loss| on i.i.d. pairs.

    Without ``weighting`` the DAT policy is ``transform_D(p_mix)``; with it
    the MixUp side is Untied and the DAT policy is ``transform_Du``.  Both
    schemes see the same pairs but independent lambda draws.
    """
    K_values = np.asarray(K_values, dtype=int)
    if np.any(np.diff(K_values) <= 0):
        raise ValueError("K_values must be strictly increasing")
    if weighting is None:
        tag, p_dat = "mix", pa.transform_D(p_mix)
    else:
        tag, p_dat = "umix", pa.transform_Du(pa.UntiedScheme(p_mix, weighting))
    rng = np.random.default_rng(seed)
    gaps = np.empty((replicates, K_values.size))
    for j, K in enumerate(K_values):
        for r in range(replicates):
            pairs = iid_pairs(dataset, int(K), rng)
            X1, X2, y1, y2 = pairs.arrays()
            lam = pa.sample_policy(p_mix, int(K), rng)
            s = pa.sample_policy(p_dat, int(K), rng)
            gamma = None if weighting is None else weighting(lam)
            a = row_losses(model, emb, kind, tag, X1, X2, y1, y2, lam, gamma).mean()
            b = row_losses(model, emb, kind, "dat", X1, X2, y1, y2, s).mean()
            gaps[r, j] = abs(a - b)
    return GapReport(K_values, np.median(gaps, axis=0), gaps, replicates, tag)


# -- suites -----------------------------------------------------------------

SUITE_POLICIES = ("uniform", "B(0.9,0.9)", "B(2.2,0.9)", "B(1.4,0.7)", "random")
SUITE_MODELS = ("zero", "linear", "mlp")
SUITE_K = (2, 8, 16)
SUITE_LOSSES = (LossKind.CROSS_ENTROPY, LossKind.NEGATIVE_COSINE)


def random_grid_policy(rng: np.random.Generator, n_bins: int = pa.DEFAULT_BINS) -> pa.Policy:
    """Dirichlet masses with roughly a tenth of the bins emptied."""
    masses = rng.dirichlet(np.full(n_bins, 0.5))
    masses[rng.random(n_bins) < 0.1] = 0.0
    return pa.Policy(masses / masses.sum())


def random_weighting(rng: np.random.Generator, n_bins: int = pa.DEFAULT_BINS) -> pa.WeightingFunction:
    return pa.WeightingFunction(rng.random(n_bins))


def suite_policy(name: str, rng: np.random.Generator, n_bins: int = pa.DEFAULT_BINS) -> pa.Policy:
    if name == "uniform":
        return pa.uniform_policy(n_bins)
    if name == "random":
        return random_grid_policy(rng, n_bins)
    a, b = (float(v) for v in name[2:-1].split(","))
    return pa.beta_policy(a, b, n_bins)


def suite_model(name: str, kind: LossKind, input_dim: int, output_dim: int, seed: int) -> Model:
    head = head_for(kind)
    if name == "zero":
        return zero_model("linear_softmax", input_dim, output_dim, head)
    arch = "linear_softmax" if name == "linear" else "mlp"
    return init_model(arch, input_dim, output_dim, head, seed=seed, width=16, scale=4.0)


def suite_data(rng: np.random.Generator, n: int = 12, dim: int = 5, n_labels: int = 3) -> Dataset:
    return Dataset(rng.standard_normal((n, dim)), rng.integers(0, n_labels, n), n_labels)


def symmetric_pairs(dataset: Dataset, K: int, rng: np.random.Generator) -> PairSequence:
    """Symmetric sequence of length K (K/2 random pairs plus their swaps)."""
    if K % 2:
        raise ValueError("a symmetric sequence of distinct draws needs even K")
    return symmetrize(iid_pairs(dataset, K // 2, rng))


def run_equality_suite(seed: int = 0, tolerance: float = EQUALITY_TOL,
                      n_bins: int = pa.DEFAULT_BINS) -> list[EquivalenceReport]:
    """All three expected-loss equalities over losses x models x policies x K."""
    rng = np.random.default_rng(seed)
    data = suite_data(rng)
    reports = []
    for kind, model_name, pol_name, K in itertools.product(SUITE_LOSSES, SUITE_MODELS, SUITE_POLICIES, SUITE_K):
        emb = make_embedding(kind, data.n_labels, seed=seed)
        model = suite_model(model_name, kind, data.dim, emb.dim, int(rng.integers(2**31)))
        pairs = symmetric_pairs(data, K, rng)
        p = suite_policy(pol_name, rng, n_bins)
        cfg = dict(loss=kind.short, model=model_name, policy=pol_name, K=K)
        reports.append(check_mix_dat_equality(model, emb, kind, pairs, p, tolerance, config={**cfg, "check": "mix_dat_equality"}))
        reports.append(check_dat_untied_equality(model, emb, kind, pairs, p, tolerance, config={**cfg, "check": "dat_untied_equality"}))
        scheme = pa.UntiedScheme(p, random_weighting(rng, n_bins))
        reports.append(check_untied_dat_equality(model, emb, kind, pairs, scheme, tolerance,
                                      config={**cfg, "check": "untied_dat_equality"}))
    return reports


def negative_control(seed: int = 0, n_bins: int = pa.DEFAULT_BINS, trials: int = 5) -> list[EquivalenceReport]:
    """The MixUp/DAT equality on single-pair (asymmetric) sequences; these should fail."""
    rng = np.random.default_rng(seed)
    data = suite_data(rng)
    kind = LossKind.CROSS_ENTROPY
    emb = make_embedding(kind, data.n_labels)
    out = []
    for t in range(trials):
        model = suite_model("mlp", kind, data.dim, emb.dim, int(rng.integers(2**31)))
        a = int(rng.integers(len(data)))
        b = int(rng.choice(np.flatnonzero(data.labels != data.labels[a])))
        pairs = PairSequence(data, [a], [b])
        out.append(check_mix_dat_equality(model, emb, kind, pairs, pa.uniform_policy(n_bins),
                                  require_symmetric=False,
                                  config=dict(check="negative_control", loss="CE", model="mlp",
                                              policy="uniform", K=1)))
    return out


@dataclass
class CheckRow:
    check: str
    config: str
    value: float
    tolerance: float
    passed: bool


def _rows_from_equivalence(reports: list[EquivalenceReport]) -> list[CheckRow]:
    rows = []
    for r in reports:
        cfg = " ".join(f"{k}={v}" for k, v in r.config.items() if k != "check")
        rows.append(CheckRow(r.config.get("check", r.scheme_pair), cfg, r.abs_gap, r.tolerance, r.passed))
    return rows


def run_identity_checks(seed: int = 0, draws: int = 10_000, linearity_draws: int = 1000) -> list[CheckRow]:
    """Target-linearity of both losses and the pointwise MixUp/Untied MixUp decompositions."""
    rng = np.random.default_rng(seed)
    rows = []
    for kind in SUITE_LOSSES:
        emb = make_embedding(kind, 4, seed=seed)
        worst = 0.0
        for _ in range(linearity_draws):
            pred, z1, z2 = _random_loss_inputs(kind, emb.dim, rng)
            alpha, beta = rng.uniform(-5, 5, 2)
            worst = max(worst, check_target_linearity(kind, pred, z1, z2, alpha, beta))
        rows.append(CheckRow("target_linearity", f"loss={kind.short} draws={linearity_draws}", worst,
                             IDENTITY_TOL, worst < IDENTITY_TOL))
        model = suite_model("mlp", kind, 5, emb.dim, seed)
        X1, X2 = rng.standard_normal((draws, 5)), rng.standard_normal((draws, 5))
        y1, y2 = rng.integers(0, 4, draws), rng.integers(0, 4, draws)
        lam, g = rng.random(draws), rng.random(draws)
        for name, gamma in (("mix_decomposition", None), ("untied_decomposition", g)):
            dev = float(decomposition_deviation(model, emb, kind, X1, X2, y1, y2, lam, gamma).max())
            rows.append(CheckRow(name, f"loss={kind.short} draws={draws}", dev, IDENTITY_TOL, dev < IDENTITY_TOL))
    return rows


def _random_loss_inputs(kind: LossKind, dim: int, rng: np.random.Generator):
    if kind is LossKind.CROSS_ENTROPY:
        pred = rng.dirichlet(np.ones(dim))
        pred = np.maximum(pred, 1e-300)
        pred /= pred.sum()
        z1, z2 = np.eye(dim)[rng.integers(0, dim, 2)]
        return pred, z1, z2
    pred, z1, z2 = rng.standard_normal((3, dim))
    return pred / np.linalg.norm(pred), z1 / np.linalg.norm(z1), z2 / np.linalg.norm(z2)


def run_concentration_suite(seed: int = 0, replicates: int = 2000,
                            K_values=(25, 100, 400), gap_K=(100, 10_000),
                            gap_replicates: int = 200) -> tuple[list[CheckRow], list]:
    """McDiarmid tail bounds per scheme and the decrease of the sampled MixUp/DAT gap."""
    rng = np.random.default_rng(seed)
    data = suite_data(rng, n=20)
    kind = LossKind.CROSS_ENTROPY
    emb = make_embedding(kind, data.n_labels)
    model = suite_model("mlp", kind, data.dim, emb.dim, seed)
    p_mix = pa.beta_policy(0.9, 0.9)
    untied = pa.transform_U(pa.beta_policy(2.2, 0.9))
    rows, reports = [], []
    cases = (
        ("tail_mix", "mix", p_mix, None),
        ("tail_dat", "dat", pa.transform_D(p_mix), None),
        ("tail_umix", "umix", untied.policy, untied.weighting),
    )
    for name, tag, pol, w in cases:
        rep = check_convergence(model, emb, kind, data, pol, K_values, replicates, seed, tag, w)
        reports.append(rep)
        holds = rep.bound_holds
        for K, tail, bound, ok in zip(rep.K_values, rep.empirical_tail_prob, rep.mcdiarmid_bound, holds):
            rows.append(CheckRow(name, f"scheme={tag} K={K} eps={rep.epsilon:.4g}", float(tail),
                                 float(bound), bool(ok)))
        ks = rep.K_values.tolist()
        k_hi = ks[-1]
        if k_hi // 4 in ks:
            ratio = rep.rms_deviation[-1] / rep.rms_deviation[ks.index(k_hi // 4)]
            rows.append(CheckRow(f"{name}_rms", f"scheme={tag} rms(K={k_hi})/rms(K={k_hi // 4})",
                                 float(ratio), 0.6, bool(ratio <= 0.6)))
    for name, w in (("gap_mix_dat", None), ("gap_umix_dat", untied.weighting)):
        pol = p_mix if w is None else untied.policy
        gap = check_mix_dat_gap(model, emb, kind, data, pol, gap_K, gap_replicates, seed, w)
        reports.append(gap)
        rows.append(CheckRow(name, f"median gap K={gap.K_values[0]}: {gap.median_gap[0]:.3g} -> "
                                   f"K={gap.K_values[-1]}", float(gap.median_gap[-1]),
                             float(gap.median_gap[0]), gap.decreasing))
    return rows, reports


def run_suite(suite: str = "all", seed: int = 0) -> list[CheckRow]:
    if suite not in ("theorems", "concentration", "all"):
        raise ValueError(f"unknown suite {suite!r}")
    rows: list[CheckRow] = []
    if suite in ("theorems", "all"):
        start = time.perf_counter()
        rows += _rows_from_equivalence(run_equality_suite(seed))
        neg = negative_control(seed)
        worst = max(neg, key=lambda r: r.abs_gap)
        rows.append(CheckRow("negative_control", "mix_dat_equality on asymmetric single pairs, needs gap > 1e-3",
                             worst.abs_gap, 1e-3, worst.abs_gap > 1e-3))
        rows += run_identity_checks(seed)
        logger.info("equality suite: %.1fs", time.perf_counter() - start)
    if suite in ("concentration", "all"):
        rows += run_concentration_suite(seed)[0]
    return rows


def format_rows(rows: list[CheckRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "config", "value", "tolerance", "passed"])
    for r in rows:
        w.writerow([r.check, r.config, repr(float(r.value)), repr(float(r.tolerance)), str(r.passed).lower()])
    return buf.getvalue()


def report_as_dict(report) -> dict:
    d = asdict(report)
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}
