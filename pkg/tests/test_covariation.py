
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from termcov import (
    ConfigError,
    DataError,
    DifferenceReturnPanel,
    GridSpec,
    StepKernel,
    TruncationSpec,
    build_rule,
    clt_asymptotic_variance,
    clt_entry_variance,
    hs_norm,
    long_time_average,
    realized_covariation,
    truncated_covariation,
    yearwise_covariations,
)


def panel(rows, dn, dates=None):
    rows = np.asarray(rows, dtype=float)
    n, m = rows.shape
    return DifferenceReturnPanel(GridSpec(dn, n, (m + 1) * dn), rows, dates=dates)


class TestRealized:
    def test_single_row(self):
        d = panel([[1.0, 2.0]], 0.5)
        np.testing.assert_allclose(realized_covariation(d).values, [[4.0, 8.0], [8.0, 16.0]])

    def test_brute_force(self):
        rng = np.random.default_rng(0)
        R = rng.standard_normal((9, 4))
        k = realized_covariation(panel(R, 0.1))
        brute = sum(np.outer(r, r) for r in R) / 0.01
        np.testing.assert_allclose(k.values, brute, rtol=1e-12)

    def test_row_range(self):
        R = np.random.default_rng(1).standard_normal((10, 3))
        k = realized_covariation(panel(R, 1.0), rows=range(2, 5))
        np.testing.assert_allclose(k.values, R[2:5].T @ R[2:5])

    def test_bad_rows(self):
        d = panel(np.ones((4, 2)), 1.0)
        with pytest.raises(DataError):
            realized_covariation(d, rows=slice(3, 3))
        with pytest.raises(DataError):
            realized_covariation(d, rows=range(0, 4, 2))

    def test_constant_increments(self):
        # each row h * dn gives q = n * h h'
        h = np.array([0.3, -0.1, 0.2])
        dn = 0.01
        k = realized_covariation(panel(np.tile(h * dn, (50, 1)), dn))
        np.testing.assert_allclose(k.values, 50 * np.outer(h, h), rtol=1e-12)


class TestTruncated:
    def setup_method(self):
        rng = np.random.default_rng(2)
        self.dn = 0.01
        R = rng.standard_normal((200, 5)) * self.dn
        self.jumps = [13, 77, 150]
        R[self.jumps] += rng.standard_normal((3, 5)) * 2.0
        self.d = panel(R, self.dn)

    def test_identity_and_flags(self):
        spec = build_rule(self.d, 3)
        res = truncated_covariation(self.d, spec)
        assert set(self.jumps) <= set(res.flagged.tolist())
        q, qm, qp = res.kernel.values, res.truncated_kernel.values, res.jump_kernel.values
        np.testing.assert_allclose(q, qm + qp, rtol=1e-10, atol=1e-14 * np.abs(q).max())
        R = self.d.values
        brute = sum(np.outer(R[i], R[i]) for i in res.flagged) / self.dn**2
        np.testing.assert_allclose(qp, brute, rtol=1e-9, atol=1e-12 * np.abs(q).max())

    def test_infinite_threshold(self):
        res = truncated_covariation(self.d, TruncationSpec.no_truncation())
        assert len(res.flagged) == 0
        assert res.ratio == 1.0
        np.testing.assert_array_equal(res.truncated_kernel.values, res.kernel.values)
        assert hs_norm(res.jump_kernel) == 0.0

    def test_everything_flagged(self):
        spec = TruncationSpec(u_n=1e-12, l=1.0)
        res = truncated_covariation(self.d, spec)
        assert len(res.flagged) == self.d.n_rows
        assert hs_norm(res.truncated_kernel) == 0.0
        np.testing.assert_allclose(res.jump_kernel.values, res.kernel.values, rtol=1e-12)

    def test_ratio_and_manifest(self):
        res = truncated_covariation(self.d, build_rule(self.d, 3))
        assert 0 < res.ratio < 1
        man = res.manifest()
        assert man["rows_used"] == 200
        assert man["rows_flagged"] == len(res.flagged)
        assert man["ratio"] == pytest.approx(man["hs_norm_truncated"] / man["hs_norm_total"])

    def test_absolute_indices_in_subpanel(self):
        sub = self.d.select(slice(100, 200))
        res = truncated_covariation(sub, build_rule(sub, 3))
        assert 150 in res.flagged.tolist()

    def test_spec_type_checked(self):
        with pytest.raises(ConfigError):
            truncated_covariation(self.d, 3.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.5, 50.0))
    def test_identity_random(self, seed, u):
        rng = np.random.default_rng(seed)
        R = rng.standard_normal((30, 4)) * rng.exponential(1.0, (30, 1)) * 0.1
        d = panel(R, 0.1)
        res = truncated_covariation(d, TruncationSpec(u_n=u, l=1.0))
        q = res.kernel.values
        np.testing.assert_allclose(
            q, res.truncated_kernel.values + res.jump_kernel.values, rtol=1e-10, atol=1e-13 * np.abs(q).max()
        )


class TestPeriods:
    def test_yearwise_sum(self):
        rng = np.random.default_rng(3)
        d = panel(rng.standard_normal((60, 4)) * 0.1, 0.1)
        res = yearwise_covariations(d, [0, 20, 40, 60], lambda sub: TruncationSpec.no_truncation())
        total = sum(r.kernel.values for r in res)
        np.testing.assert_allclose(total, realized_covariation(d).values, rtol=1e-12)
        assert [r.rows for r in res] == [slice(0, 20), slice(20, 40), slice(40, 60)]

    def test_threads_match_serial(self):
        rng = np.random.default_rng(4)
        d = panel(rng.standard_normal((90, 4)) * 0.01, 0.01)
        b = [0, 30, 60, 90]
        a = yearwise_covariations(d, b, lambda s: build_rule(s, 3))
        c = yearwise_covariations(d, b, lambda s: build_rule(s, 3), workers=3)
        for x, y in zip(a, c):
            np.testing.assert_array_equal(x.truncated_kernel.values, y.truncated_kernel.values)

    def test_bad_boundaries(self):
        d = panel(np.ones((10, 2)), 1.0)
        with pytest.raises(DataError):
            yearwise_covariations(d, [0, 5, 5, 10], lambda s: TruncationSpec.no_truncation())
        with pytest.raises(DataError):
            yearwise_covariations(d, [0, 11], lambda s: TruncationSpec.no_truncation())

    def test_long_run_mean(self):
        ks = [StepKernel(np.eye(2) * c, 0.5) for c in (1.0, 2.0, 6.0)]
        lr = long_time_average(ks)
        np.testing.assert_allclose(lr.kernel.values, 3.0 * np.eye(2))
        with pytest.raises(DataError):
            long_time_average([])


class TestClt:
    def test_formula(self):
        v = np.array([[2.0, 0.5], [0.5, 1.0]])
        k = StepKernel(v, 1.0)
        assert clt_entry_variance(k, 2.0, 0.5, 1.5) == pytest.approx((0.25 + 2.0) / 2.0)
        assert clt_asymptotic_variance(k, 1.0, (0.5, 0.5, 0.5, 0.5)) == pytest.approx(8.0)

    def test_bad_period(self):
        with pytest.raises(ConfigError):
            clt_entry_variance(StepKernel(np.eye(1), 1.0), 0.0, 0.1, 0.1)

    def test_gaussian_variance_oracle(self):
        # iid Gaussian rows: Var(q(x,y)) = n dn^-2 (C_xx C_yy + C_xy^2) with C the row covariance
        rng = np.random.default_rng(5)
        dn, n = 0.02, 50
        Q = np.array([[1.0, 0.6], [0.6, 2.0]])
        L = np.linalg.cholesky(Q * dn)
        vals = []
        for _ in range(4000):
            R = rng.standard_normal((n, 2)) @ L.T * dn
            vals.append(realized_covariation(panel(R, dn)).values[0, 1])
        T = n * dn
        target = T * Q[0, 1]
        qm = StepKernel(T * Q, 1.0)
        asy = clt_entry_variance(qm, T, 0.5, 1.5)
        assert np.mean(vals) == pytest.approx(target, rel=0.02)
        assert n * np.var(vals) == pytest.approx(asy, rel=0.08)
