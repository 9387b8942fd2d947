import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frflab import kernels
from frflab.errors import InvalidArgument
from frflab.kernels import KernelSpec
from frflab.localwin import extract_window, powers

from _kernels import dp_series


def dc_entry(lam, alpha, beta, w, wp):
    """DC covariance written out term by term."""
    return (lam / math.sqrt(2 * math.pi)) * (1 / (beta + 1j * w - 1j * wp)) * (
        1 / (alpha + beta / 2 + 1j * w) + 1 / (alpha + beta / 2 - 1j * wp))


def r1_entry(b1, b2, g1, g2, w, wp):
    num = g1 ** 2 * (1j * w + b1) * (-1j * wp + b1) + g2 ** 2 * b2 ** 2
    return num / (((1j * w + b1) ** 2 + b2 ** 2) * ((-1j * wp + b1) ** 2 + b2 ** 2))


DP_ETA = {"alpha_G": 1.0, "lam": 0.02, "beta_G": 0.5, "kap": 0.01}
R1_ETA = {"beta1": 0.05, "beta2": 3.0, "gamma1": 0.4, "gamma2": 1.1}
DC_ETA = {"dc_lambda": 2.0, "dc_alpha": 0.5, "dc_beta": 0.8}


class TestDI:
    def test_zero_rates(self):
        spec = KernelSpec("DI", {"alpha_G": 2.0, "alpha_T": 3.0, "lam": 0.0, "beta_G": 1.0, "kap": 0.0})
        M = kernels.di_kernel(spec, 2, 2)
        # beta_T = alpha_T * beta_G / alpha_G = 1.5
        np.testing.assert_allclose(np.diag(M.gamma).real, [3, 0, 0, 4.5, 0, 0])

    def test_equal_scales_kill_relation(self):
        spec = KernelSpec("DI", {"alpha_G": 1.3, "alpha_T": 0.4, "lam": 0.2, "beta_G": 1.3, "kap": 0.2})
        np.testing.assert_allclose(kernels.di_kernel(spec, 3, 3).relation, 0, atol=1e-15)

    def test_hand_value(self):
        spec = KernelSpec("DI", {"alpha_G": 1.0, "alpha_T": 1.0, "lam": 0.3, "beta_G": 0.5, "kap": 0.2})
        M = kernels.di_kernel(spec, 1, 0)
        np.testing.assert_allclose(np.diag(M.gamma)[:2].real, [1.5, 0.4], rtol=1e-14)
        np.testing.assert_allclose(np.diag(M.relation)[:2].real, [0.5, 0.2], rtol=1e-14)

    def test_bounds(self):
        spec = KernelSpec("DI", {"alpha_G": 1.0, "alpha_T": 1.0, "lam": 0.3, "beta_G": 0.5, "kap": 0.2})
        with pytest.raises(InvalidArgument):
            kernels.di_kernel(spec, 2, 2, lam_max=0.25)
        bad = KernelSpec("DI", {**spec.eta, "alpha_G": -1.0})
        with pytest.raises(InvalidArgument):
            kernels.di_kernel(bad, 2, 2)

    def test_exact_factors(self):
        spec = KernelSpec("DI", {"alpha_G": 2.0, "alpha_T": 0.5, "lam": 0.3, "beta_G": 0.7, "kap": 0.1})
        x = np.linspace(-2, 2, 7)
        for M in (kernels.di_kernel(spec, 4, 3), *kernels.di_pushforward(spec, x, 4, 4)):
            np.testing.assert_allclose(M.factor @ M.factor.conj().T, M.M, atol=1e-13 * np.abs(M.M).max())

    def test_pushforward_equals_truncated_dp(self):
        eta = {"alpha_G": 1.2, "alpha_T": 0.7, "lam": 0.04, "beta_G": 0.3, "kap": 0.01}
        x = np.arange(-5, 6).astype(float)
        MG, MT = kernels.di_pushforward(KernelSpec("DI", eta), x, 4, 4)
        g, c = dp_series(eta["alpha_G"], eta["lam"], eta["beta_G"], eta["kap"], x, terms=4)
        np.testing.assert_allclose(MG.gamma, g, rtol=1e-10)
        np.testing.assert_allclose(MG.relation, c, rtol=1e-10, atol=1e-12)
        bT = eta["alpha_T"] * eta["beta_G"] / eta["alpha_G"]
        gT, _ = dp_series(eta["alpha_T"], eta["lam"], bT, eta["kap"], x, terms=4)
        np.testing.assert_allclose(MT.gamma, gT, rtol=1e-10)

    def test_pushforward_matches_phi_gamma_phi(self, rng):
        eta = {"alpha_G": 0.8, "alpha_T": 0.5, "lam": 0.1, "beta_G": 0.6, "kap": 0.05}
        x = np.arange(-3, 4).astype(float)
        spec = KernelSpec("DI", eta)
        M = kernels.di_kernel(spec, 2, 3)
        Phi = np.hstack([powers(x, 2), np.zeros((7, 4))])
        MG, _ = kernels.di_pushforward(spec, x, 2, 3)
        np.testing.assert_allclose(MG.gamma, Phi @ M.gamma @ Phi.T, rtol=1e-12)


class TestDP:
    def test_equal_parts_kill_relation(self):
        spec = KernelSpec("DP", {"alpha_G": 0.7, "lam": 0.01, "beta_G": 0.7, "kap": 0.01})
        np.testing.assert_allclose(kernels.dp_kernel(spec, np.arange(-5, 6.0)).relation, 0, atol=1e-15)

    def test_centre_entry(self):
        M = kernels.dp_kernel(KernelSpec("DP", DP_ETA), np.arange(-5, 6.0))
        assert M.gamma[5, 5] == pytest.approx(1.5)
        assert M.relation[5, 5] == pytest.approx(0.5)

    def test_series_oracle(self):
        ell = 5
        eta = {"alpha_G": 1.0, "lam": 0.5 / ell ** 2, "beta_G": 2.0, "kap": 0.5 / ell ** 2}
        x = np.arange(-ell, ell + 1.0)
        M = kernels.dp_kernel(KernelSpec("DP", eta), x)
        g, c = dp_series(1.0, eta["lam"], 2.0, eta["kap"], x)
        np.testing.assert_allclose(M.gamma, g, rtol=1e-10)
        np.testing.assert_allclose(M.relation, c, rtol=1e-10, atol=1e-10)

    def test_near_bound_needs_long_series(self):
        x = np.arange(-5, 6.0)
        lam = 0.999 / 25
        M = kernels.dp_kernel(KernelSpec("DP", {"alpha_G": 1.0, "lam": lam, "beta_G": 0.0, "kap": 0.0}), x)
        g, _ = dp_series(1.0, lam, 0.0, 0.0, x, terms=40000)
        np.testing.assert_allclose(M.gamma, g, rtol=1e-10)

    def test_bound(self):
        x = np.arange(-5, 6.0)
        assert kernels.dp_bound(x) == pytest.approx((1 - 1e-6) / 25)
        with pytest.raises(InvalidArgument):
            kernels.dp_kernel(KernelSpec("DP", {**DP_ETA, "lam": 0.04}), x)


class TestDC:
    def test_hand_value(self):
        M = kernels.dc_kernel(KernelSpec("DC", {"dc_lambda": 1.0, "dc_alpha": 1.0, "dc_beta": 2.0}), np.zeros(1))
        assert M.gamma[0, 0] == pytest.approx(1 / (2 * math.sqrt(2 * math.pi)), rel=1e-14)
        assert M.gamma[0, 0].real == pytest.approx(0.19947, abs=1e-5)

    def test_entries_and_relation_convention(self, rng):
        w = np.sort(rng.uniform(0.5, 4.0, 9))
        M = kernels.dc_kernel(KernelSpec("DC", DC_ETA), w)
        for r in range(9):
            for s in range(9):
                assert M.gamma[r, s] == pytest.approx(dc_entry(2.0, 0.5, 0.8, w[r], w[s]), rel=1e-12)
                assert M.relation[r, s] == pytest.approx(dc_entry(2.0, 0.5, 0.8, w[r], -w[s]), rel=1e-12)

    def test_hermitian(self, rng):
        for _ in range(10):
            w = rng.uniform(0, 6, 15)
            eta = {"dc_lambda": rng.uniform(0.1, 5), "dc_alpha": rng.uniform(0.01, 3), "dc_beta": rng.uniform(0.01, 3)}
            M = kernels.dc_kernel(KernelSpec("DC", eta), w)
            np.testing.assert_allclose(M.gamma, M.gamma.conj().T, atol=1e-12 * np.abs(M.gamma).max())
            np.testing.assert_allclose(M.relation, M.relation.T, atol=1e-12 * np.abs(M.relation).max())

    def test_bounds(self):
        with pytest.raises(InvalidArgument):
            kernels.dc_kernel(KernelSpec("DC", {**DC_ETA, "dc_beta": 0.0}), np.zeros(2))


class TestR1:
    def test_dc_value(self):
        b1, b2, g1, g2 = 0.3, 1.7, 0.8, 1.4
        M = kernels.r1_kernel(KernelSpec("R1", {"beta1": b1, "beta2": b2, "gamma1": g1, "gamma2": g2}), np.zeros(1))
        expected = (g1 ** 2 * b1 ** 2 + g2 ** 2 * b2 ** 2) / (b1 ** 2 + b2 ** 2) ** 2
        assert M.gamma[0, 0] == pytest.approx(expected, rel=1e-14)

    def test_zero_gains(self):
        M = kernels.r1_kernel(KernelSpec("R1", {**R1_ETA, "gamma1": 0.0, "gamma2": 0.0}), np.linspace(0, 5, 7))
        assert np.all(M.gamma == 0) and np.all(M.relation == 0)

    def test_entries(self, rng):
        w = rng.uniform(0, 6, 8)
        M = kernels.r1_kernel(KernelSpec("R1", R1_ETA), w)
        for r in range(8):
            for s in range(8):
                assert M.gamma[r, s] == pytest.approx(r1_entry(0.05, 3.0, 0.4, 1.1, w[r], w[s]), rel=1e-12)
                assert M.relation[r, s] == pytest.approx(r1_entry(0.05, 3.0, 0.4, 1.1, w[r], -w[s]), rel=1e-12)

    def test_peak_location(self):
        w = np.linspace(2.0, 4.0, 41)
        M = kernels.r1_kernel(KernelSpec("R1", {"beta1": 0.01, "beta2": 3.0, "gamma1": 1.0, "gamma2": 1.0}), w)
        assert w[np.argmax(np.diag(M.gamma).real)] == pytest.approx(3.0)

    def test_bounds(self):
        with pytest.raises(InvalidArgument):
            kernels.r1_kernel(KernelSpec("R1", {**R1_ETA, "beta1": 0.0}), np.zeros(2))
        with pytest.raises(InvalidArgument):
            kernels.r1_kernel(KernelSpec("R1", {**R1_ETA, "gamma2": -1.0}), np.zeros(2))


class TestComposite:
    def test_zero_transient_scale(self):
        w = np.linspace(2.5, 3.5, 11)
        MG, MT = kernels.composite(KernelSpec("DPpR1", {**DP_ETA, **R1_ETA}, c_T=0.0), w, np.arange(-5, 6.0))
        assert np.all(MT.M == 0) and np.any(MG.M != 0)

    def test_transient_is_scaled_frf_prior(self):
        w = np.linspace(2.5, 3.5, 11)
        MG, MT = kernels.composite(KernelSpec("DCpR1", {**DC_ETA, **R1_ETA}, c_T=0.25), w, np.arange(-5, 6.0))
        np.testing.assert_allclose(MT.M, 0.25 * MG.M)

    def test_dppr1_without_resonance_is_dp(self):
        w, x = np.linspace(2.5, 3.5, 11), np.arange(-5, 6.0)
        eta = {**DP_ETA, **R1_ETA, "gamma1": 0.0, "gamma2": 0.0}
        MG, _ = kernels.composite(KernelSpec("DPpR1", eta), w, x)
        np.testing.assert_array_equal(MG.M, kernels.dp_kernel(KernelSpec("DP", DP_ETA), x).M)

    def test_sum_of_parts(self):
        w, x = np.linspace(2.5, 3.5, 11), np.arange(-5, 6.0)
        MG, _ = kernels.composite(KernelSpec("DCpR1", {**DC_ETA, **R1_ETA}), w, x)
        parts = kernels.dc_kernel(KernelSpec("DC", DC_ETA), w) + kernels.r1_kernel(KernelSpec("R1", R1_ETA), w)
        np.testing.assert_allclose(MG.M, parts.M, rtol=1e-14)

    def test_di_is_not_frf(self):
        with pytest.raises(InvalidArgument):
            kernels.composite(KernelSpec("DI"), np.zeros(3), np.zeros(3))


@pytest.mark.parametrize("family", ["DP", "DC", "R1", "DCpR1", "DPpR1"])
def test_log_derivatives_match_finite_differences(family):
    eta = {**DP_ETA, **DC_ETA, **R1_ETA}
    names = kernels.FAMILY_PARAMS[family]
    eta = {k: eta[k] for k in names}
    w = np.linspace(2.6, 3.4, 7)
    x = np.arange(-3, 4.0)
    _, _, d = kernels.frf_terms(family, eta, w, x, want=names)
    h = 1e-6
    for name in names:
        up = kernels.frf_terms(family, {**eta, name: eta[name] * math.exp(h)}, w, x)
        dn = kernels.frf_terms(family, {**eta, name: eta[name] * math.exp(-h)}, w, x)
        for j in (0, 1):
            fd = (up[j] - dn[j]) / (2 * h)
            np.testing.assert_allclose(d[name][j], fd, rtol=1e-5, atol=1e-7 * np.abs(fd).max())


class TestSpec:
    def test_json_round_trip(self):
        spec = KernelSpec("DPpR1", {**DP_ETA, **R1_ETA}, c_T=0.3)
        doc = json.loads(spec.to_json())
        assert doc == {"family": "DPpR1", "eta": {**DP_ETA, **R1_ETA}, "c_T": 0.3}
        assert KernelSpec.from_json(spec.to_json()).to_dict() == spec.to_dict()

    def test_tunable_includes_transient_scale(self):
        assert KernelSpec("DP").tunable == ("alpha_G", "lam", "beta_G", "kap", "c_T")
        assert "c_T" not in KernelSpec("DI").tunable

    def test_rejects_unknown(self):
        with pytest.raises(InvalidArgument):
            KernelSpec("XYZ")
        with pytest.raises(InvalidArgument):
            KernelSpec("DP", {"gamma1": 1.0})
        with pytest.raises(InvalidArgument):
            KernelSpec("DP", c_T=-1.0)
        with pytest.raises(InvalidArgument):
            kernels.dp_kernel(KernelSpec("DP", {"alpha_G": 1.0}), np.zeros(2))

    def test_default_bounds_cover_window(self, record60):
        w = extract_window(record60, 60, 5)
        b = kernels.default_bounds("DPpR1", w)
        assert b["beta2"][0] < w.omega[0] and b["beta2"][1] > w.omega[-1]
        assert b["lam"][1] < kernels.dp_bound(w.scaled())
        assert set(b) == set(KernelSpec("DPpR1").tunable) | {"sigma2"}
        assert set(kernels.default_bounds("DI", w)) == set(KernelSpec("DI").tunable) | {"sigma2"}
