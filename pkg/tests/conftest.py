"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest
from scipy import integrate, stats

from untied_mixup import policy as pa
from untied_mixup.losses import LossKind, make_embedding
from untied_mixup.model import head_for, init_model
from untied_mixup.schemes import Dataset

KINDS = (LossKind.CROSS_ENTROPY, LossKind.NEGATIVE_COSINE)


def quad_bin_masses(pdf, n_bins, points=None):
    """Bin masses by adaptive quadrature of a density, one integral per bin."""
    edges = pa.bin_edges(n_bins)
    out = np.empty(n_bins)
    for i in range(n_bins):
        out[i] = integrate.quad(pdf, edges[i], edges[i + 1], limit=200, epsabs=1e-14, epsrel=1e-12)[0]
    return out


def beta_bin_masses_by_quadrature(a, b, n_bins):
    dist = stats.beta(a, b)
    return quad_bin_masses(dist.pdf, n_bins)


def random_policy(rng, n_bins=64, zero_fraction=0.1):
    masses = rng.dirichlet(np.full(n_bins, 0.7))
    masses[rng.random(n_bins) < zero_fraction] = 0.0
    if masses.sum() == 0:
        masses[0] = 1.0
    return pa.Policy(masses / masses.sum())


def frozen_setup(kind, arch="mlp", seed=0, n=12, dim=4, n_labels=3, scale=4.0):
    """A random frozen model, matching embedding and small dataset."""
    kind = LossKind.parse(kind)
    rng = np.random.default_rng(seed)
    emb = make_embedding(kind, n_labels, dim=8, seed=seed)
    model = init_model(arch, dim, emb.dim, head_for(kind), seed=seed + 1, width=8, scale=scale)
    data = Dataset(rng.standard_normal((n, dim)), rng.integers(0, n_labels, n), n_labels)
    return model, emb, kind, data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=KINDS, ids=lambda k: k.short)
def kind(request):
    return request.param
