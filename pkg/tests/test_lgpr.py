import math

import numpy as np
import pytest

from frflab import cgauss, lgpr
from frflab.cgauss import decompose
from frflab.errors import InvalidArgument
from frflab.kernels import FAMILY_PARAMS, KernelSpec, default_bounds, dp_kernel
from frflab.localwin import extract_window

from _synth import record_from

SMOOTH_BINS = [20, 60, 120, 180, 240]
R1_FROZEN = {"beta1": (1.0, 1.0), "beta2": (1.0, 1.0), "gamma1": (0.0, 0.0), "gamma2": (0.0, 0.0)}


def draw(rng, M):
    """One complex sample from the augmented prior M."""
    K = decompose(M).K
    z = rng.multivariate_normal(np.zeros(K.shape[0]), K, method="eigh")
    n = M.n
    return z[:n] + 1j * z[n:]


def objective(window, family):
    spec = KernelSpec(family)
    bounds = lgpr.resolve_bounds(spec, window)
    names = list(spec.tunable) + ["sigma2"]
    return lgpr._Objective(window, family, names, {}, None, (4, 4)), bounds, names


class TestObjective:
    @pytest.mark.parametrize("family", ["DI", "DP", "DC", "R1", "DCpR1", "DPpR1"])
    def test_compiled_matches_reference(self, record60, family, rng):
        w = extract_window(record60, 61, 5)
        obj, bounds, names = objective(w, family)
        lo = obj.coords([bounds[n][0] for n in names])
        hi = obj.coords([bounds[n][1] for n in names])
        for _ in range(5):
            frac = rng.uniform(0.2, 0.8, lo.size)
            # noise variance at or above the data noise level keeps the covariance well conditioned
            frac[-1] = rng.uniform(0.6, 0.9)
            c = lo + frac * (hi - lo)
            f, g = obj(c)
            fr, gr = obj.reference(c)
            assert f == pytest.approx(fr, rel=1e-9, abs=1e-9)
            np.testing.assert_allclose(g, gr, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(gr).max()))

    @pytest.mark.parametrize("family", ["DP", "DPpR1"])
    def test_gradient_matches_finite_differences(self, record60, family, rng):
        w = extract_window(record60, 100, 5)
        obj, bounds, names = objective(w, family)
        lo = obj.coords([bounds[n][0] for n in names])
        hi = obj.coords([bounds[n][1] for n in names])
        frac = rng.uniform(0.3, 0.7, lo.size)
        frac[-1] = 0.75
        c = lo + frac * (hi - lo)
        _, g = obj(c)
        h = 1e-6
        for j in range(c.size):
            e = np.zeros(c.size)
            e[j] = h
            fd = (obj.value(c + e) - obj.value(c - e)) / (2 * h)
            assert g[j] == pytest.approx(fd, rel=1e-4, abs=1e-5)

    def test_nll_equals_cgauss(self, record60):
        w = extract_window(record60, 100, 5)
        obj, bounds, names = objective(w, "DP")
        c = 0.5 * (obj.coords([bounds[n][0] for n in names]) + obj.coords([bounds[n][1] for n in names]))
        vals = obj.values(c)
        MG = dp_kernel(KernelSpec("DP", {n: vals[n] for n in FAMILY_PARAMS["DP"]}), w.scaled())
        expected = cgauss.nll(w.Y, w.U, MG, MG.scaled(vals["c_T"]), vals["sigma2"])
        assert obj.value(c) == pytest.approx(expected, rel=1e-9)


class TestEbTune:
    def test_frozen_hyperparameters(self, record60):
        w = extract_window(record60, 80, 5)
        point = {"alpha_G": 2.0, "lam": 0.01, "beta_G": 0.5, "kap": 0.005, "c_T": 0.1}
        spec = KernelSpec("DP", bounds={k: (v, v) for k, v in point.items()})
        tuned = lgpr.eb_tune(w, spec)
        assert tuned.eta == point
        lo, hi = default_bounds("DP", w)["sigma2"]
        assert lo < tuned.sigma2 < hi

    def test_more_starts_never_worse(self, record60):
        for k in (40, 119):
            w = extract_window(record60, k, 5)
            few = lgpr.eb_tune(w, KernelSpec("DPpR1"), starts=4, seed=3)
            many = lgpr.eb_tune(w, KernelSpec("DPpR1"), starts=8, seed=3)
            assert many.nll <= few.nll
            assert len(many.trace) == 8

    def test_default_start_count(self, record60):
        w = extract_window(record60, 80, 5)
        tuned = lgpr.eb_tune(w, KernelSpec("DP"))
        # alpha_G, lam, beta_G, kap, c_T and sigma2 are free
        assert len(tuned.trace) == lgpr.default_starts(KernelSpec("DP"), lgpr.resolve_bounds(KernelSpec("DP"), w))
        assert len(tuned.trace) == 5 * 5 + 1
        assert tuned.nll == min(t.nll for t in tuned.trace)

    def test_compiled_and_scipy_agree(self, record60):
        for k in (30, 60):
            w = extract_window(record60, k, 5)
            a = lgpr.eb_tune(w, KernelSpec("DP"), seed=1)
            b = lgpr.eb_tune(w, KernelSpec("DP"), seed=1, optimizer="scipy")
            assert a.nll == pytest.approx(b.nll, abs=1e-6 * max(1.0, abs(b.nll)))

    def test_sigma2_recovered_from_prior_draws(self):
        rng = np.random.default_rng(42)
        x = np.arange(-5, 6.0)
        eta = {"alpha_G": 1.0, "lam": 0.02, "beta_G": 0.5, "kap": 0.01}
        MG = dp_kernel(KernelSpec("DP", eta), x)
        MT = MG.scaled(0.2)
        estimates = []
        for _ in range(200):
            U = rng.normal(size=11) + 1j * rng.normal(size=11)
            v = math.sqrt(0.5) * (rng.normal(size=11) + 1j * rng.normal(size=11))
            Y = U * draw(rng, MG) + draw(rng, MT) + v
            w = extract_window(record_from(U, Y), 6, 5)
            estimates.append(lgpr.eb_tune(w, KernelSpec("DP"), starts=6, seed=0).sigma2)
        assert 0.5 <= np.median(estimates) <= 2.0

    def test_invalid_arguments(self, record60):
        w = extract_window(record60, 80, 5)
        with pytest.raises(InvalidArgument):
            lgpr.eb_tune(w, KernelSpec("DP"), starts=0)
        with pytest.raises(InvalidArgument):
            lgpr.eb_tune(w, KernelSpec("DP"), optimizer="newton")
        with pytest.raises(InvalidArgument):
            lgpr.eb_tune(w, KernelSpec("DP", bounds={"lam": (0.2, 0.1)}))
        with pytest.raises(InvalidArgument):
            lgpr.eb_tune(w, KernelSpec("DP", bounds={"gamma1": (1.0, 2.0)}))
        with pytest.raises(InvalidArgument):
            lgpr.eb_tune(w, KernelSpec("DP", bounds={"lam": (0.0, 0.01)}))

    def test_resonance_start_sits_on_peak(self, record60):
        w = extract_window(record60, 119, 5)
        obj, bounds, names = objective(w, "DPpR1")
        lo = obj.coords([bounds[n][0] for n in names])
        hi = obj.coords([bounds[n][1] for n in names])
        start = obj.values(lgpr.resonance_start(w, obj, lo, hi))
        peak = w.omega[np.argmax(np.abs(w.Y / w.U))]
        assert start["beta2"] == pytest.approx(peak)
        assert start["beta1"] == pytest.approx(w.freq_step)


class TestEstimators:
    def test_lrpm_smooth_noise_free(self, smooth_clean):
        est = lgpr.lrpm_estimate(smooth_clean, 5, bins=SMOOTH_BINS)
        assert est.method == "LRPM(DI)" and not est.failed
        assert np.max(np.abs(est.G - smooth_clean.G_true[SMOOTH_BINS])) < 1e-4

    def test_lgpr_dp_smooth_noise_free(self, smooth_clean):
        est = lgpr.lgpr_estimate(smooth_clean, 5, "DP", bins=SMOOTH_BINS)
        assert np.max(np.abs(est.G - smooth_clean.G_true[SMOOTH_BINS])) < 1e-4
        assert np.all(est.sigma2 > 0)

    def test_extension_equivalence(self, smooth_clean):
        a = lgpr.lrpm_estimate(smooth_clean, 5, bins=SMOOTH_BINS)
        b = lgpr.lgpr_estimate(smooth_clean, 5, "DI", bins=SMOOTH_BINS)
        np.testing.assert_allclose(a.G, b.G, rtol=0, atol=1e-8)
        np.testing.assert_array_equal(a.sigma2, b.sigma2)

    def test_zero_window(self):
        rec = record_from(np.zeros(30), np.zeros(30))
        for est in (lgpr.lrpm_estimate(rec, 3, bins=[10], starts=3),
                    lgpr.lgpr_estimate(rec, 3, "DPpR1", bins=[10], starts=3)):
            assert est.G[0] == 0

    def test_frozen_resonance_equals_dp(self, record60):
        bins = [30, 60, 119]
        frozen = lgpr.lgpr_estimate(record60, 5, KernelSpec("DPpR1", bounds=R1_FROZEN), bins=bins, seed=2)
        dp = lgpr.lgpr_estimate(record60, 5, "DP", bins=bins, seed=2)
        np.testing.assert_allclose(frozen.G, dp.G, rtol=0, atol=1e-9)

    def test_shrinkage_monotone_in_noise_variance(self, record60):
        w = extract_window(record60, 90, 5)
        MG = dp_kernel(KernelSpec("DP", {"alpha_G": 1.0, "lam": 0.02, "beta_G": 0.5, "kap": 0.01}), w.scaled())
        norms = [np.linalg.norm(cgauss.map_gt(w.Y, w.U, MG, MG.scaled(0.1), s2).G)
                 for s2 in np.geomspace(1e-4, 1e4, 30)]
        assert np.all(np.diff(norms) < 0)

    def test_conjugate_consistency(self, record60):
        w = extract_window(record60, 60, 5)
        tuned = lgpr.eb_tune(w, KernelSpec("DPpR1"), starts=5)
        MG, MT = lgpr.frf_priors(tuned.spec, w)
        est = cgauss.map_gt(w.Y, w.U, MG, MT, tuned.sigma2)
        scale = np.abs(est.G_aug).max()
        np.testing.assert_allclose(est.G_aug[11:], est.G_aug[:11].conj(), atol=1e-10 * scale)
        np.testing.assert_allclose(est.T_aug[11:], est.T_aug[:11].conj(), atol=1e-10 * np.abs(est.T_aug).max())

    def test_deterministic(self, record60):
        a = lgpr.lgpr_estimate(record60, 5, "DCpR1", bins=[58, 59], seed=9, starts=6)
        b = lgpr.lgpr_estimate(record60, 5, "DCpR1", bins=[58, 59], seed=9, starts=6)
        assert a.G.tobytes() == b.G.tobytes() and a.sigma2.tobytes() == b.sigma2.tobytes()
        assert a.to_json(trace=True) == b.to_json(trace=True)

    def test_resonance_handled_by_dppr1(self, record60):
        bins = [59, 60, 61]
        est = lgpr.lgpr_estimate(record60, 5, "DPpR1", bins=bins)
        rel = np.abs(est.G - record60.G_true[bins]) / np.abs(record60.G_true[bins])
        assert np.max(rel) < 1e-2

    def test_rejects_family(self, record60):
        with pytest.raises(InvalidArgument):
            lgpr.lgpr_estimate(record60, 5, "XX")
