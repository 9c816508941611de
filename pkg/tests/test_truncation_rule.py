import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from termcov import (
    ConfigError,
    DataError,
    DifferenceReturnPanel,
    GridSpec,
    MahalanobisParams,
    NumericalError,
    TruncationSpec,
    build_rule,
    g_l2,
    g_mahalanobis,
    niqr,
    preliminary_estimate,
)
from termcov.truncation_rule import QUARTILE_Z


def panel(rows, dn):
    rows = np.asarray(rows, dtype=float)
    n, m = rows.shape
    return DifferenceReturnPanel(GridSpec(dn, n, (m + 1) * dn), rows)


def orthonormal_heights(rng, m, d, dn):
    Q = np.linalg.qr(rng.standard_normal((m, d)))[0]
    return Q / np.sqrt(dn)


def random_params(rng, m=10, d=3, dn=0.1, power=1):
    E = orthonormal_heights(rng, m, d, dn)
    lam = np.sort(rng.uniform(0.5, 3.0, d))[::-1]
    return MahalanobisParams(lam, E, tail_mass=rng.uniform(0.1, 1.0), power=power)


def gaussian_rows(rng, lam, dn, n):
    """Rows with covariance dn * sum lam_i e_i (x) e_i on the cell grid."""
    m = lam.size
    V = np.linalg.qr(rng.standard_normal((m, m)))[0]
    # operator eigenvalues lam, matrix vectors V; row covariance dn^2 * V diag(lam/dn) V' * dn
    z = rng.standard_normal((n, m)) * np.sqrt(lam)
    return dn * z @ V.T, V


class TestL2:
    def test_examples(self):
        assert g_l2(np.zeros(3), 0.1) == 0
        assert g_l2([3.0, 4.0], 1.0) == 5.0
        assert g_l2([3.0, 4.0], 0.5) == 10.0

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5, 5), st.integers(0, 100))
    def test_homogeneous(self, c, seed):
        r = np.random.default_rng(seed).standard_normal(6)
        assert g_l2(c * r, 0.1) == pytest.approx(abs(c) * g_l2(r, 0.1), rel=1e-12, abs=1e-12)


class TestMahalanobis:
    def test_zero(self):
        assert g_mahalanobis(np.zeros(10), random_params(np.random.default_rng(0)), 0.1) == 0

    def test_aligned_with_first(self):
        rng = np.random.default_rng(1)
        E = orthonormal_heights(rng, 5, 2, 1.0)
        p = MahalanobisParams(np.array([4.0, 1.0]), E, 0.5)
        row = 2.0 * E[:, 0]  # L2 coefficient sqrt(lam_1) = 2 with dn = 1
        assert g_mahalanobis(row, p, 1.0) == pytest.approx(1.0, rel=1e-12)

    def test_tail_direction(self):
        rng = np.random.default_rng(2)
        dn = 0.2
        E = orthonormal_heights(rng, 6, 2, dn)
        p = MahalanobisParams(np.array([2.0, 1.0]), E, 0.25)
        h = rng.standard_normal(6)
        h -= E @ (dn * E.T @ h)  # orthogonal to the leading block
        h /= math.sqrt(dn * h @ h)
        # row = dn * h has ||h|| = 1 so g^2 = 1 / tail
        assert g_mahalanobis(dn * h, p, dn) == pytest.approx(2.0, rel=1e-10)

    def test_power_two(self):
        rng = np.random.default_rng(3)
        E = orthonormal_heights(rng, 5, 1, 1.0)
        p = MahalanobisParams(np.array([4.0]), E, 0.5, power=2)
        assert g_mahalanobis(2.0 * E[:, 0], p, 1.0) == pytest.approx(0.5, rel=1e-12)

    def test_expected_square(self):
        # E[g^2] = dn (d + 1) for Gaussian increments with the true spectrum
        rng = np.random.default_rng(4)
        dn, m, d = 0.05, 12, 4
        lam = np.sort(rng.uniform(0.1, 2.0, m))[::-1]
        rows, V = gaussian_rows(rng, lam, dn, 40000)
        p = MahalanobisParams(lam[:d], V[:, :d] / np.sqrt(dn), lam[d:].sum())
        g2 = g_mahalanobis(rows, p, dn) ** 2
        # the tail term has mean dn but its ratio form is not chi-square, only the mean is checked
        assert g2.mean() == pytest.approx(dn * (d + 1), rel=0.02)

    def test_vectorized(self):
        rng = np.random.default_rng(5)
        p = random_params(rng)
        rows = rng.standard_normal((7, 10))
        g = g_mahalanobis(rows, p, 0.1)
        assert g.shape == (7,)
        assert g[3] == pytest.approx(g_mahalanobis(rows[3], p, 0.1))

    def test_validation(self):
        E = np.eye(3)[:, :2]
        with pytest.raises(ConfigError):
            MahalanobisParams(np.array([1.0, 0.0]), E, 1.0)
        with pytest.raises(ConfigError):
            MahalanobisParams(np.array([1.0, 1.0]), E, 0.0)
        with pytest.raises(ConfigError):
            MahalanobisParams(np.array([1.0]), E, 1.0)
        with pytest.raises(ConfigError):
            MahalanobisParams(np.array([1.0, 1.0]), E, 1.0, power=3)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            g_mahalanobis(np.ones(4), random_params(np.random.default_rng(6)), 0.1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_norm_sandwich(self, seed):
        rng = np.random.default_rng(seed)
        dn = 0.1
        p = random_params(rng, dn=dn)
        row = rng.standard_normal(10)
        h_norm = math.sqrt(row @ row / dn)
        lo = 1 / math.sqrt(max(p.eigenvalues[0], p.tail_mass))
        hi = 1 / math.sqrt(min(p.eigenvalues[-1], p.tail_mass))
        g = g_mahalanobis(row, p, dn)
        assert lo * h_norm * (1 - 1e-10) <= g <= hi * h_norm * (1 + 1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_subadditive(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params(rng)
        a, b = rng.standard_normal((2, 10)) * rng.uniform(0.01, 10, 2)[:, None]
        assert g_mahalanobis(a + b, p, 0.1) <= g_mahalanobis(a, p, 0.1) + g_mahalanobis(b, p, 0.1) + 1e-10
        assert g_l2(a + b, 0.1) <= g_l2(a, 0.1) + g_l2(b, 0.1) + 1e-10


class TestNiqr:
    def test_gaussian_scale(self):
        x = np.random.default_rng(7).normal(0, 2.5, 100_000)
        assert niqr(x) ** 2 == pytest.approx(2.5**2, rel=0.05)

    def test_constant(self):
        assert niqr(np.ones(10)) == 0.0

    def test_constant_value(self):
        assert QUARTILE_Z == pytest.approx(0.6744898, abs=1e-7)


class TestSpec:
    def test_invariants(self):
        with pytest.raises(ConfigError):
            TruncationSpec(u_n=0.0)
        with pytest.raises(ConfigError):
            TruncationSpec(u_n=1.0, g_kind="mahalanobis")
        with pytest.raises(ConfigError):
            TruncationSpec(u_n=1.0, g_kind="huber")

    def test_no_truncation(self):
        spec = TruncationSpec.no_truncation()
        assert not spec.flags(np.full((5, 3), 1e6), 0.01).any()

    def test_multiplier_nesting(self):
        rng = np.random.default_rng(8)
        p = random_params(rng)
        base = TruncationSpec(u_n=3.0, g_kind="mahalanobis", mahalanobis=p, l=3.0)
        rows = rng.standard_normal((500, 10)) * rng.exponential(1.0, (500, 1))
        f3 = base.flags(rows, 0.1)
        f4 = base.with_multiplier(4).flags(rows, 0.1)
        f5 = base.with_multiplier(5).flags(rows, 0.1)
        assert base.with_multiplier(5).u_n == pytest.approx(5.0)
        assert np.all(f5 <= f4) and np.all(f4 <= f3)
        assert f3.sum() > f5.sum()

    def test_json(self):
        spec = TruncationSpec(u_n=2.0, l=4.0)
        back = json.loads(spec.to_json())
        assert back["u_n"] == 2.0 and back["g_kind"] == "l2"
        assert json.loads(TruncationSpec.no_truncation().to_json())["u_n"] == "inf"

    def test_rescale_needs_finite(self):
        with pytest.raises(ConfigError):
            TruncationSpec.no_truncation().with_multiplier(3)


class TestPreliminary:
    def test_identical_rows_degenerate(self):
        rows = np.tile(np.array([0.01, -0.02, 0.005]), (12, 1))
        pre = preliminary_estimate(panel(rows, 0.1))
        assert pre.kept_fraction == 1.0
        assert pre.degenerate and pre.rho_star == 1.0
        assert pre.warnings

    def test_excludes_inflated_rows(self):
        rng = np.random.default_rng(9)
        rows = rng.standard_normal((100, 6)) * 0.01
        big = rng.choice(100, 25, replace=False)
        rows[big] *= 50
        pre = preliminary_estimate(panel(rows, 0.01))
        assert set(np.nonzero(~pre.kept_mask)[0]) == set(big)
        assert pre.kept_fraction == 0.75

    def test_kept_fraction_near_quarter(self):
        rng = np.random.default_rng(10)
        for n in (37, 50, 101):
            pre = preliminary_estimate(panel(rng.standard_normal((n, 4)), 0.1))
            assert abs(pre.kept_fraction - 0.75) <= 1.0 / n + 1e-12

    def test_rescaling_oracle(self):
        # rho* formula by hand on a small panel
        rng = np.random.default_rng(11)
        dn = 0.05
        rows = rng.standard_normal((40, 5)) * 0.1
        pre = preliminary_estimate(panel(rows, dn))
        g = np.linalg.norm(rows, axis=1) / dn
        cut = np.sort(g)[29]
        kept = rows[g <= cut]
        V = kept.T @ kept / dn**2 / (40 * dn)
        lam, vec = np.linalg.eigh(dn * V)
        e1 = vec[:, -1] / np.sqrt(dn)
        q25, q75 = np.percentile(rows @ e1, [25, 75])
        rho = (q75 - q25) ** 2 / (4 * 0.6744897501960817**2 * dn * lam[-1])
        assert pre.rho_star == pytest.approx(rho, rel=1e-10)
        np.testing.assert_allclose(pre.kernel.values, rho * V, rtol=1e-10)

    def test_consistent_scale_on_gaussian_rows(self):
        # with Gaussian rows the rescaled kernel recovers the covariance on the leading direction
        rng = np.random.default_rng(12)
        dn = 0.01
        lam = np.array([2.0, 0.5, 0.2, 0.1])
        rows, V = gaussian_rows(rng, lam, dn, 20000)
        pre = preliminary_estimate(panel(rows, dn))
        e1 = V[:, 0] / np.sqrt(dn)
        lead = dn**2 * e1 @ pre.kernel.values @ e1
        assert lead == pytest.approx(2.0, rel=0.05)

    def test_too_few_rows(self):
        with pytest.raises(DataError):
            preliminary_estimate(panel(np.ones((5, 3)), 0.1))

    def test_zero_rows(self):
        with pytest.raises(NumericalError):
            preliminary_estimate(panel(np.zeros((10, 3)), 0.1))


class TestBuildRule:
    def setup_method(self):
        rng = np.random.default_rng(13)
        self.dn = 0.01
        lam = np.array([1.0, 0.6, 0.3, 0.1, 0.05, 0.02])
        rows, _ = gaussian_rows(rng, lam, self.dn, 400)
        rows[[17, 203]] *= 40
        self.panel = panel(rows, self.dn)

    def test_threshold_formula(self):
        spec = build_rule(self.panel, 4)
        assert spec.g_kind == "mahalanobis"
        assert spec.u_n == pytest.approx(4 * math.sqrt(spec.d + 1) * self.dn**0.49)
        assert spec.mahalanobis.tail_mass > 0

    def test_flags_planted_rows(self):
        spec = build_rule(self.panel, 3)
        flagged = np.nonzero(spec.flags(self.panel.values, self.dn))[0]
        assert {17, 203} <= set(flagged)

    def test_infinite(self):
        spec = build_rule(self.panel, math.inf)
        assert math.isinf(spec.u_n)
        assert not spec.flags(self.panel.values, self.dn).any()

    def test_deterministic(self):
        a, b = build_rule(self.panel, 3), build_rule(self.panel, 3)
        assert a.d == b.d and a.u_n == b.u_n
        np.testing.assert_array_equal(a.mahalanobis.eigenfunctions, b.mahalanobis.eigenfunctions)

    def test_row_order_invariant(self):
        perm = np.random.default_rng(14).permutation(self.panel.n_rows)
        shuffled = panel(self.panel.values[perm], self.dn)
        a, b = build_rule(self.panel, 3), build_rule(shuffled, 3)
        assert a.d == b.d
        assert a.u_n == b.u_n
        np.testing.assert_allclose(a.mahalanobis.eigenvalues, b.mahalanobis.eigenvalues, rtol=1e-10)
        np.testing.assert_allclose(a.rho_star, b.rho_star, rtol=1e-10)

    def test_rank_one_falls_back(self):
        rng = np.random.default_rng(15)
        rows = np.outer(rng.standard_normal(30), [1.0, 2.0, -1.0])
        spec = build_rule(panel(rows, 0.1), 3)
        assert spec.g_kind == "l2"
        assert any("tail" in w for w in spec.warnings)

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            build_rule(self.panel, 3, w_exponent=0.5)
        with pytest.raises(ConfigError):
            build_rule(self.panel, 0)
        with pytest.raises(ConfigError):
            build_rule(self.panel, 3, explained=1.0)
