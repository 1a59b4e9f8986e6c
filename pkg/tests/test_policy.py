"""Policies on the grid, the three transforms, sampling and the text format."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from untied_mixup import policy as pa
from conftest import beta_bin_masses_by_quadrature, quad_bin_masses, random_policy


def policies(min_bins=1, max_bins=32):
    """Hypothesis strategy: normalized grid policies with some empty bins."""
    def build(args):
        half, raw = args
        masses = np.array(raw[: 2 * half])
        if masses.sum() == 0:
            masses[0] = 1.0
        return pa.Policy(masses / masses.sum())

    return st.integers(min_bins, max_bins).flatmap(
        lambda h: st.tuples(
            st.just(h),
            st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 1.0)), min_size=2 * h, max_size=2 * h),
        )
    ).map(build)


class TestGrid:
    def test_midpoints_mirror(self):
        mids = pa.bin_midpoints(8)
        np.testing.assert_array_equal(mids + mids[::-1], np.ones(8))

    def test_bin_index_edges(self):
        assert pa.bin_index(0.0, 4) == 0
        assert pa.bin_index(0.5, 4) == 2
        assert pa.bin_index(1.0, 4) == 3

    @pytest.mark.parametrize("n", [0, 3, 7])
    def test_odd_or_empty_grid_rejected(self, n):
        with pytest.raises(pa.PolicyError):
            pa.Policy(np.full(max(n, 1), 1.0 / max(n, 1)) if n else np.array([]))


class TestPolicy:
    def test_unnormalized_rejected(self):
        with pytest.raises(pa.PolicyError):
            pa.Policy([0.5, 0.6])

    def test_negative_rejected(self):
        with pytest.raises(pa.PolicyError):
            pa.Policy([1.5, -0.5])

    def test_tiny_residual_renormalized(self):
        p = pa.Policy([0.5 + 1e-10, 0.5])
        assert abs(p.masses.sum() - 1.0) < 1e-15

    def test_masses_read_only(self):
        p = pa.uniform_policy(4)
        with pytest.raises(ValueError):
            p.masses[0] = 0.0

    def test_representation(self):
        assert pa.beta_policy(2, 3, 8).representation == "beta"
        assert pa.transform_D(pa.beta_policy(2, 3, 8)).representation == "grid"


class TestBetaPolicy:
    def test_uniform_four_bins(self):
        np.testing.assert_allclose(pa.beta_policy(1, 1, 4).masses, [0.25] * 4, atol=1e-15)

    def test_symmetric_two_bins(self):
        np.testing.assert_allclose(pa.beta_policy(2, 2, 2).masses, [0.5, 0.5], atol=1e-15)

    def test_matches_quadrature(self):
        """B(0.9, 0.9) bin masses against per-bin adaptive quadrature of the pdf."""
        got = pa.beta_policy(0.9, 0.9, 1024).masses
        want = beta_bin_masses_by_quadrature(0.9, 0.9, 1024)
        assert np.abs(got - want).sum() < 1e-8

    @pytest.mark.parametrize("a,b", [(0, 1), (1, -2), (-1, -1)])
    def test_bad_shape(self, a, b):
        with pytest.raises(pa.PolicyError):
            pa.beta_policy(a, b, 8)

    def test_singular_endpoints_finite(self):
        p = pa.beta_policy(0.2, 0.3, 1024)
        assert np.all(np.isfinite(p.masses))
        assert p.masses[0] > p.masses[1] and p.masses[-1] > p.masses[-2]


class TestTransformD:
    def test_uniform_gives_linear_density(self):
        d = pa.transform_D(pa.uniform_policy(1024))
        assert pa.l1_distance(d, pa.beta_policy(2, 1, 1024)) < 1e-12

    @pytest.mark.parametrize("alpha", [0.9, 1.0, 2.0])
    def test_symmetric_beta_identity(self, alpha):
        d = pa.transform_D(pa.beta_policy(alpha, alpha, 1024))
        assert pa.l1_distance(d, pa.beta_policy(alpha + 1, alpha, 1024)) < 1e-6

    def test_symmetric_beta_identity_singular_shape(self):
        """alpha=0.5 has an integrable endpoint singularity; a finer grid resolves it."""
        d = pa.transform_D(pa.beta_policy(0.5, 0.5, 8192))
        assert pa.l1_distance(d, pa.beta_policy(1.5, 0.5, 8192)) < 1e-6

    def test_singular_shape_error_shrinks_with_resolution(self):
        errs = []
        for n in (256, 1024, 4096):
            d = pa.transform_D(pa.beta_policy(0.5, 0.5, n))
            errs.append(pa.l1_distance(d, pa.beta_policy(1.5, 0.5, n)))
        assert errs[0] > errs[1] > errs[2]
        # roughly N^-1.5: each 4x refinement gains a factor of about 8
        assert errs[1] / errs[2] > 5

    def test_target_identity_by_quadrature(self):
        """Closed form lambda * 2 f(lambda) checked against an independent quadrature of Beta(3, 2)."""
        f = stats.beta(2, 2).pdf
        want = quad_bin_masses(lambda t: 2 * t * f(t), 256)
        d = pa.transform_D(pa.beta_policy(2, 2, 256))
        assert np.abs(d.masses - want).sum() < 1e-4

    def test_point_mass_at_one(self):
        d = pa.transform_D(pa.point_policy(1.0, 16))
        assert d.masses[-1] == 1.0 and d.nodes[-1] == 1.0

    def test_point_mass_at_half(self):
        # both bins adjacent to 0.5 carry node 0.5, so the mass may split between them
        d = pa.transform_D(pa.point_policy(0.5, 16))
        assert d.masses[d.nodes == 0.5].sum() == pytest.approx(1.0, abs=1e-15)

    @given(policies(max_bins=4))
    @settings(max_examples=100, deadline=None)
    def test_mirror_grid_conserves_mass(self, p):
        """Pairing bin i with bin N-1-i makes the unnormalized output sum to 1 even on coarse grids."""
        raw = p.nodes * (p.masses + p.masses[::-1])
        assert abs(raw.sum() - 1.0) < 1e-12
        with warnings.catch_warnings():
            warnings.simplefilter("error", pa.ResolutionWarning)
            pa.transform_D(p)

    def test_large_residual_warns(self):
        with pytest.warns(pa.ResolutionWarning):
            out = pa._finish(np.array([0.5, 0.49]), "test")
        assert out.sum() == pytest.approx(1.0)


class TestTransformU:
    def test_uniform(self):
        s = pa.transform_U(pa.uniform_policy(64))
        np.testing.assert_allclose(s.policy.masses, 1 / 64, atol=1e-15)
        np.testing.assert_allclose(s.weighting.values, 0.5, atol=1e-15)

    def test_linear_density_gives_identity_weighting(self):
        s = pa.transform_U(pa.beta_policy(2, 1, 1024))
        np.testing.assert_allclose(s.policy.masses, 1 / 1024, atol=1e-15)
        np.testing.assert_allclose(s.weighting.values, pa.bin_midpoints(1024), atol=1e-12)

    def test_skewed_beta_symmetrized(self):
        """Symmetrized B(2.2, 0.9) against quadrature of the averaged densities."""
        s = pa.transform_U(pa.beta_policy(2.2, 0.9, 1024))
        want = 0.5 * (beta_bin_masses_by_quadrature(2.2, 0.9, 1024)
                      + beta_bin_masses_by_quadrature(0.9, 2.2, 1024))
        assert np.abs(s.policy.masses - want).sum() < 1e-6

    def test_undefined_weighting_is_half(self):
        masses = np.zeros(8)
        masses[6] = 1.0
        s = pa.transform_U(pa.Policy(masses))
        assert s.weighting.values[6] == 1.0 and s.weighting.values[1] == 0.0
        assert s.weighting.values[0] == 0.5 and s.weighting.values[3] == 0.5

    @given(policies())
    @settings(max_examples=200, deadline=None)
    def test_output_symmetry(self, p):
        s = pa.transform_U(p)
        np.testing.assert_array_equal(s.policy.masses, s.policy.masses[::-1])
        both = p.masses + p.masses[::-1]
        ok = both >= pa.EPSILON_ZERO
        g = s.weighting.values
        np.testing.assert_allclose((g + g[::-1])[ok], 1.0, atol=1e-12)


class TestTransformDu:
    def test_identity_weighting_matches_D(self, rng):
        for _ in range(50):
            p = random_policy(rng, 128)
            got = pa.transform_Du(pa.UntiedScheme(p, pa.identity_weighting(128)))
            assert pa.l1_distance(got, pa.transform_D(p)) < 1e-9

    def test_round_trip(self, rng):
        for _ in range(50):
            p = random_policy(rng, 128)
            assert pa.l1_distance(pa.transform_Du(pa.transform_U(p)), p) < 1e-9

    def test_full_weight_on_uniform(self):
        got = pa.transform_Du(pa.UntiedScheme(pa.uniform_policy(32), pa.constant_weighting(1.0, 32)))
        np.testing.assert_allclose(got.masses, 1 / 32, atol=1e-15)

    def test_mismatched_grids(self):
        with pytest.raises(pa.PolicyError):
            pa.UntiedScheme(pa.uniform_policy(8), pa.identity_weighting(16))

    def test_weighting_out_of_range(self):
        with pytest.raises(pa.PolicyError):
            pa.WeightingFunction(np.full(4, 1.2))

    @given(policies(), st.integers(0, 2**32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_outputs_normalized(self, p, seed):
        g = pa.WeightingFunction(np.random.default_rng(seed).random(p.n_bins))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", pa.ResolutionWarning)
            outs = [pa.transform_D(p), pa.transform_U(p).policy, pa.transform_Du(pa.UntiedScheme(p, g))]
        for q in outs:
            assert np.all(q.masses >= 0)
            assert abs(q.masses.sum() - 1) < 1e-9

    @given(policies())
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, p):
        assert pa.l1_distance(pa.transform_Du(pa.transform_U(p)), p) < 1e-9


class TestSampling:
    def test_point_mass_bin(self):
        n = 1024
        masses = np.zeros(n)
        masses[n // 2] = 1.0
        lam = pa.sample_policy(pa.Policy(masses), 5000, 3)
        assert np.all((lam >= 0.5) & (lam < 0.5 + 1 / n))

    def test_exact_point(self):
        lam = pa.sample_policy(pa.point_policy(0.3, 1024), 100, 1)
        assert np.all(lam == 0.3)

    def test_uniform_mean(self):
        lam = pa.sample_policy(pa.uniform_policy(), 100_000, 0)
        assert abs(lam.mean() - 0.5) < 0.005

    def test_linear_density_mean(self):
        lam = pa.sample_policy(pa.beta_policy(2, 1), 100_000, 0)
        assert abs(lam.mean() - 2 / 3) < 0.004

    def test_empty(self):
        assert pa.sample_policy(pa.uniform_policy(8), 0, 0).shape == (0,)

    def test_deterministic(self):
        p = pa.beta_policy(0.9, 0.9)
        np.testing.assert_array_equal(pa.sample_policy(p, 1000, 9), pa.sample_policy(p, 1000, 9))

    def test_never_hits_empty_bins(self, rng):
        p = random_policy(rng, 64, zero_fraction=0.5)
        idx = pa.bin_index(pa.sample_policy(p, 20_000, 4), 64)
        assert np.all(p.masses[idx] > 0)

    def test_matches_beta_distribution(self):
        lam = pa.sample_policy(pa.beta_policy(2.2, 0.9), 20_000, 5)
        assert stats.kstest(lam, stats.beta(2.2, 0.9).cdf).pvalue > 0.01


class TestTextFormat:
    def test_policy_round_trip(self, tmp_path):
        p = pa.beta_policy(1.4, 0.7, 64)
        pa.save_policy(p, tmp_path / "p.txt")
        q = pa.load_policy(tmp_path / "p.txt")
        assert pa.l1_distance(p, q) < 64 * 1e-12
        assert (tmp_path / "p.txt").read_text().splitlines()[0] == "policy n_bins=64"

    def test_weighting_round_trip(self, tmp_path):
        w = pa.transform_U(pa.beta_policy(2.2, 0.9, 32)).weighting
        pa.save_weighting(w, tmp_path / "g.txt")
        np.testing.assert_allclose(pa.load_weighting(tmp_path / "g.txt").values, w.values, atol=1e-12)

    def test_twelve_digits(self):
        line = pa.format_policy(pa.uniform_policy(4)).splitlines()[1]
        assert line == "0.250000000000"

    @pytest.mark.parametrize("text", ["", "policy n_bins=4\n0.5\n0.5\n", "gamma n_bins=2\n0.5\n0.5\n"])
    def test_malformed(self, text):
        with pytest.raises(pa.PolicyError):
            pa.parse_policy(text)
