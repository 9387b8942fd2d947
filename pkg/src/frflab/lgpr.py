"""Local regularized estimators.

LRPM is the regularized local polynomial method: MAP coefficients under the DI
prior. LGPR is local Gaussian process regression: MAP FRF and transient
samples under an FRF-space prior. Both tune the prior hyperparameters and the
noise variance per window by minimizing the negative log marginal likelihood
from several quasi-random starts.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from . import _fastnll, cgauss
from .errors import FrfLabError, InvalidArgument, TuningFailed
from .estimate import FrfEstimate
from .kernels import (FAMILY_PARAMS, KernelSpec, default_bounds, di_bound, di_diagonals, di_kernel,
                      di_log_derivatives, di_pushforward, frf_terms, composite)
from .localwin import LocalWindow, extract_window, powers, regressors
from .spectra import SpectraRecord

log = logging.getLogger(__name__)

_PENALTY = _fastnll.PENALTY
OPTIMIZERS = ("compiled", "scipy")


@dataclass
class StartResult:
    start: dict
    nll: float
    converged: bool          # stopped by a convergence test rather than the iteration cap
    iterations: int


@dataclass
class TunedWindow:
    spec: KernelSpec          # tuned hyperparameters (c_T included)
    sigma2: float
    nll: float
    trace: list = field(default_factory=list)
    G: complex = complex("nan")
    T: complex = complex("nan")
    identity_residual: Optional[float] = None   # map_gt self-check, LGPR only

    @property
    def eta(self) -> dict:
        out = dict(self.spec.eta)
        if self.spec.family != "DI":
            out["c_T"] = self.spec.c_T
        return out


# Entries searched on a linear axis in units of the bin spacing; the resonance
# frequency has a peak far narrower than its log range.
LINEAR_IN_BINS = ("beta2",)


class _Objective:
    """Negative log marginal likelihood for one window.

    Search coordinates are log-parameters, except LINEAR_IN_BINS entries
    which are the parameter divided by the frequency step.
    """

    def __init__(self, window: LocalWindow, family: str, free: list, fixed: dict, alpha, orders):
        self.y = window.Y
        self.family = family
        self.free = free
        self.fixed = fixed
        m = window.size
        self.eye = np.eye(m)
        self.zero = np.zeros((m, m))
        self.kernel_free = [n for n in free if n in FAMILY_PARAMS[family]]
        layout = list(FAMILY_PARAMS[family]) + ([] if family == "DI" else ["c_T"]) + ["sigma2"]
        self.full = np.array([fixed.get(n, 1.0) for n in layout], dtype=float)
        self.idx = np.array([layout.index(n) for n in free], dtype=np.int64)
        self.lin = np.array([n in LINEAR_IN_BINS for n in free], dtype=bool)
        self.unit = window.freq_step
        if family == "DI":
            n_b, n_i = orders
            self.orders = orders
            self.psi = regressors(window, n_b, n_i, alpha).Psi
        else:
            self.omega = np.ascontiguousarray(window.omega, dtype=float)
            self.x = np.ascontiguousarray(window.scaled(alpha), dtype=float)
            self.u = np.ascontiguousarray(window.U, dtype=complex)
            self.w1 = np.outer(window.U, window.U.conj())
            self.w2 = np.outer(window.U, window.U)
            self.code = _fastnll.FAMILY_CODE[family]
        self.y = np.ascontiguousarray(self.y, dtype=complex)
        self.args = self._compiled_args()    # trailing arguments of the compiled routines

    def natural(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        v = np.exp(np.where(self.lin, 0.0, c))
        v[self.lin] = c[self.lin] * self.unit
        return v

    def coords(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        c = np.log(np.where(self.lin, 1.0, v))
        c[self.lin] = v[self.lin] / self.unit
        return c

    def _chain(self, grad, v):
        # d/d(log v) -> d/d(v / unit) on linear entries
        grad = np.array(grad, dtype=float)
        grad[self.lin] *= self.unit / v[self.lin]
        return grad

    def values(self, c) -> dict:
        vals = dict(self.fixed)
        vals.update(zip(self.free, self.natural(c)))
        return vals

    def blocks(self, vals: dict, grad: bool):
        s2 = vals["sigma2"]
        dg, dr = [], []
        if self.family == "DI":
            n_b, n_i = self.orders
            gG, cG, gT, cT = di_diagonals(vals, n_b, n_i)
            psi = self.psi
            gam = (psi * np.concatenate([gG, gT])) @ psi.conj().T + s2 * self.eye
            rel = (psi * np.concatenate([cG, cT])) @ psi.T
            if grad:
                ders = di_log_derivatives(vals, n_b, n_i, self.kernel_free)
                for n in self.free:
                    if n == "sigma2":
                        dg.append(s2 * self.eye)
                        dr.append(self.zero)
                    else:
                        a, b, c, d = ders[n]
                        dg.append((psi * np.concatenate([a, c])) @ psi.conj().T)
                        dr.append((psi * np.concatenate([b, d])) @ psi.T)
            return gam, rel, dg, dr
        g, r, ders = frf_terms(self.family, vals, self.omega, self.x, self.kernel_free if grad else ())
        cT = vals["c_T"]
        f1 = self.w1 + cT
        f2 = self.w2 + cT
        gam = g * f1 + s2 * self.eye
        rel = r * f2
        if grad:
            for n in self.free:
                if n == "sigma2":
                    dg.append(s2 * self.eye)
                    dr.append(self.zero)
                elif n == "c_T":
                    dg.append(cT * g)
                    dr.append(cT * r)
                else:
                    dg.append(ders[n][0] * f1)
                    dr.append(ders[n][1] * f2)
        return gam, rel, dg, dr

    def _compiled_args(self) -> tuple:
        if self.family == "DI":
            dummy = np.zeros(1)
            return (1, 0, self.lin, self.unit, self.full, self.idx, dummy, dummy, dummy + 0j,
                    np.ascontiguousarray(self.psi, dtype=complex), self.orders[0], self.y)
        return (0, self.code, self.lin, self.unit, self.full, self.idx, self.omega, self.x, self.u,
                np.zeros((1, 1), dtype=complex), 0, self.y)

    def __call__(self, c):
        kind, code, *rest = self.args
        value, grad, _ = _fastnll.evaluate(kind, code, np.asarray(c, dtype=float), *rest)
        return value, grad

    def reference(self, c):
        """Same objective through the array-level kernel and cgauss code."""
        gam, rel, dg, dr = self.blocks(self.values(c), True)
        value, grad = cgauss.nll_and_grad(self.y, gam, rel, np.array(dg), np.array(dr))
        return value, self._chain(grad, self.natural(c))

    def value(self, c) -> float:
        gam, rel, _, _ = self.blocks(self.values(c), False)
        return cgauss.gaussian_nll(self.y, gam, rel)


def _window_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(k)]).generate_state(1)[0])


def resonance_start(window: LocalWindow, obj: _Objective, lo: np.ndarray, hi: np.ndarray) -> Optional[np.ndarray]:
    """Start that puts the resonance kernel on the peak of Y/U.

    The peak of the R1 variance is about (gamma1^2 + gamma2^2) / (4 beta1^2)
    at omega = beta2, so the gains are matched to the ETFE peak with a damping
    of one bin. Other entries sit at the box centre.
    """
    free = obj.free
    if "beta2" not in free:
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        etfe = np.abs(window.Y / window.U)
    etfe[~np.isfinite(etfe)] = 0.0
    j = int(np.argmax(etfe))
    beta1 = window.freq_step
    gain = math.sqrt(2.0) * beta1 * max(etfe[j], np.finfo(float).tiny)
    guess = {"beta1": beta1, "beta2": float(window.omega[j]), "gamma1": gain, "gamma2": gain}
    v = obj.natural(0.5 * (lo + hi))
    for t, n in enumerate(free):
        if n in guess and guess[n] > 0:
            v[t] = guess[n]
    return np.clip(obj.coords(v), lo, hi)


def default_starts(spec: KernelSpec, bounds: dict) -> int:
    free = [n for n in spec.tunable if bounds[n][0] < bounds[n][1]]
    return 5 * len(free) + 1


def resolve_bounds(spec: KernelSpec, window: LocalWindow, alpha=None) -> dict:
    bounds = default_bounds(spec.family, window, alpha)
    if spec.bounds:
        for name, (lo, hi) in spec.bounds.items():
            if name not in bounds:
                raise InvalidArgument(f"no hyperparameter {name!r} in {spec.family}")
            if lo > hi:
                raise InvalidArgument(f"empty range for {name}")
            bounds[name] = (float(lo), float(hi))
    return bounds


def eb_tune(window: LocalWindow, spec: KernelSpec, *, alpha: Optional[float] = None,
            orders: tuple = (4, 4), starts: Optional[int] = None, seed: int = 0,
            warm: Optional[dict] = None, maxiter: int = 1000, ftol: float = 2.2e-9, pgtol: float = 1e-5,
            optimizer: str = "compiled") -> TunedWindow:
    """Empirical-Bayes hyperparameters and noise variance for one window.

    Runs ``starts`` bounded quasi-Newton minimizations of the negative log
    marginal likelihood over the search coordinates: one from the centre of the
    box, one from ``warm`` when given, one on the ETFE peak for kernels
    with a resonance part, the rest from scrambled Sobol points. Collapsed
    bounds freeze an entry.

    ``optimizer`` selects the compiled projected L-BFGS ("compiled") or
    scipy's L-BFGS-B ("scipy"); both use the same stopping tolerances.
    """
    if optimizer not in OPTIMIZERS:
        raise InvalidArgument(f"unknown optimizer {optimizer!r}")
    bounds = resolve_bounds(spec, window, alpha)
    names = list(spec.tunable) + ["sigma2"]
    free = [n for n in names if bounds[n][0] < bounds[n][1]]
    fixed = {n: bounds[n][0] for n in names if n not in free}
    for n, (lo, hi) in bounds.items():
        if n in free and lo <= 0:
            raise InvalidArgument(f"tuned entry {n} needs a positive lower bound")
    n_starts = default_starts(spec, bounds) if starts is None else int(starts)
    if n_starts < 1:
        raise InvalidArgument("at least one start is required")
    obj = _Objective(window, spec.family, free, fixed, alpha, orders)
    lo = obj.coords([bounds[n][0] for n in free])
    hi = obj.coords([bounds[n][1] for n in free])

    points = [0.5 * (lo + hi)]
    if warm is not None and free:
        mid = obj.natural(0.5 * (lo + hi))
        w = obj.coords([warm[n] if warm.get(n, 0) > 0 else m for n, m in zip(free, mid)])
        points.append(np.clip(w, lo, hi))
    if spec.family in ("R1", "DCpR1", "DPpR1"):
        res = resonance_start(window, obj, lo, hi)
        if res is not None:
            points.append(res)
    extra = n_starts - len(points)
    if extra > 0 and free:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            unit = qmc.Sobol(len(free), scramble=True, seed=_window_seed(seed, window.k)).random(extra)
        points.extend(lo + unit * (hi - lo))
    points = points[:n_starts]

    trace = []
    best = None
    for p0 in points:
        if not free:
            value = obj.value(np.zeros(0))
            res_x, ok, nit = np.zeros(0), np.isfinite(value), 0
        elif optimizer == "compiled":
            kind, code, *rest = obj.args
            res_x, value, nit, _, status = _fastnll.minimize_box(
                np.asarray(p0, dtype=float), lo, hi, maxiter, ftol, pgtol, 10, kind, code, *rest)
            value = float(value)
            ok = status in (0, 1) and value < _PENALTY
        else:
            res = optimize.minimize(obj, p0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                                    options={"maxiter": maxiter, "ftol": ftol, "gtol": pgtol})
            value, res_x, nit = float(res.fun), res.x, int(res.nit)
            ok = bool(res.success) and value < _PENALTY
        trace.append(StartResult(start=dict(zip(free, obj.natural(p0).tolist())), nll=value,
                                 converged=ok, iterations=nit))
        # a run stopped by the iteration cap still ends at a feasible point with a finite NLL
        if value < _PENALTY and np.isfinite(value):
            if best is None or value < best[0]:
                best = (value, res_x)
    if best is None:
        raise TuningFailed(f"no start gave a finite objective at bin {window.k}", trace)
    vals = obj.values(best[1])
    tuned = spec.with_values(vals)
    return TunedWindow(spec=tuned, sigma2=float(vals["sigma2"]), nll=float(best[0]), trace=trace)


def _estimate_loop(record: SpectraRecord, ell: int, bins, method: str, per_window, warm_start: bool) -> FrfEstimate:
    if bins is None:
        lo, hi = record.excited_band()
        bins = np.arange(lo, hi + 1)
    bins = np.asarray(bins, dtype=int)
    G = np.full(bins.size, np.nan, dtype=complex)
    T = np.full(bins.size, np.nan, dtype=complex)
    s2 = np.full(bins.size, np.nan)
    detail, failed = [], {}
    warm = None
    for j, k in enumerate(bins):
        try:
            window = extract_window(record, int(k), ell)
            tuned = per_window(window, warm if warm_start else None)
        except (FrfLabError, np.linalg.LinAlgError) as exc:
            failed[int(k)] = f"{type(exc).__name__}: {exc}"
            detail.append({})
            log.debug("bin %d failed: %s", k, exc)
            continue
        G[j], T[j], s2[j] = tuned.G, tuned.T, tuned.sigma2
        warm = {**tuned.eta, "sigma2": tuned.sigma2}
        det = {"eta": tuned.eta, "nll": tuned.nll, "trace": [t.__dict__ for t in tuned.trace]}
        if tuned.identity_residual is not None:
            det["identity_residual"] = tuned.identity_residual
        detail.append(det)
    return FrfEstimate(method=method, k=bins, omega=record.omega[bins], G=G, T=T, sigma2=s2,
                       detail=detail, failed=failed)


def lrpm_window(window: LocalWindow, *, alpha=None, orders=(4, 4), spec: Optional[KernelSpec] = None,
                starts=None, seed=0, warm=None) -> TunedWindow:
    spec = spec or KernelSpec("DI")
    n_b, n_i = orders
    tuned = eb_tune(window, spec, alpha=alpha, orders=orders, starts=starts, seed=seed, warm=warm)
    reg = regressors(window, n_b, n_i, alpha)
    prior = di_kernel(tuned.spec, n_b, n_i, lam_max=math.inf)
    theta = cgauss.map_theta(window.Y, reg.Psi, prior, tuned.sigma2)
    xe = reg.phi1[window.eval_index]
    tuned.G = complex(np.polyval(theta[: n_b + 1][::-1], xe))
    tuned.T = complex(np.polyval(theta[n_b + 1:][::-1], xe))
    return tuned


def lrpm_estimate(record: SpectraRecord, ell: int, alpha: Optional[float] = None, orders: tuple = (4, 4),
                  bins: Optional[Sequence[int]] = None, starts: Optional[int] = None, seed: int = 0,
                  spec: Optional[KernelSpec] = None, warm_start: bool = True) -> FrfEstimate:
    """LRPM over the requested bins (all excited bins by default)."""
    fn = lambda w, warm: lrpm_window(w, alpha=alpha, orders=orders, spec=spec, starts=starts, seed=seed, warm=warm)
    return _estimate_loop(record, ell, bins, "LRPM(DI)", fn, warm_start)


def frf_priors(spec: KernelSpec, window: LocalWindow, alpha=None, orders=(4, 4)):
    """(M_G, M_T) on a window grid; DI specs are pushed forward through Phi."""
    x = window.scaled(alpha)
    if spec.family == "DI":
        return di_pushforward(spec, x, *orders)
    return composite(spec, window.omega, x)


def lgpr_window(window: LocalWindow, spec: KernelSpec, *, alpha=None, orders=(4, 4), starts=None, seed=0,
                warm=None) -> TunedWindow:
    tuned = eb_tune(window, spec, alpha=alpha, orders=orders, starts=starts, seed=seed, warm=warm)
    MG, MT = frf_priors(tuned.spec, window, alpha, orders)
    est = cgauss.map_gt(window.Y, window.U, MG, MT, tuned.sigma2)
    tuned.G = complex(est.G[window.eval_index])
    tuned.T = complex(est.T[window.eval_index])
    tuned.identity_residual = est.identity_residual
    return tuned


def lgpr_estimate(record: SpectraRecord, ell: int, spec, alpha: Optional[float] = None,
                  bins: Optional[Sequence[int]] = None, starts: Optional[int] = None, seed: int = 0,
                  orders: tuple = (4, 4), warm_start: bool = True) -> FrfEstimate:
    """LGPR over the requested bins with the kernel family of ``spec``."""
    if isinstance(spec, str):
        spec = KernelSpec(spec)
    if spec.family not in ("DP", "DC", "DCpR1", "DPpR1", "R1", "DI"):
        raise InvalidArgument(f"LGPR does not support family {spec.family}")
    fn = lambda w, warm: lgpr_window(w, spec, alpha=alpha, orders=orders, starts=starts, seed=seed, warm=warm)
    return _estimate_loop(record, ell, bins, f"LGPR({spec.family})", fn, warm_start)
