"""Classical local estimators: LPM, LRM (Levy linearization) and ILRM
(output-error refinement of an LRM fit), plus MDL order selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument, OrderTooLarge
from .localwin import LocalWindow, powers, regressors

EPS = np.finfo(float).eps


@dataclass
class LocalFit:
    method: str
    a: np.ndarray                # denominator coefficients a_1..a_na (a_0 = 1 implied)
    b: np.ndarray
    i: np.ndarray
    G: complex
    T: complex
    sigma2: float
    criterion: float             # value of the criterion that was minimized
    loe: float                   # squared local output error
    orders: tuple                # (n_a, n_b, n_i)
    rank: int = 0
    truncated: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    pole_in_window: bool = False
    improved: bool = True

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.i])

    @property
    def n_k(self) -> int:
        return self.theta.size


def tsvd_solve(A: np.ndarray, y: np.ndarray):
    """Least squares by SVD, discarding singular values below
    eps * max(A.shape) * s_max. Returns (x, rank, discarded values)."""
    u, s, vh = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.shape[1], dtype=complex), 0, s
    keep = s > EPS * max(A.shape) * s[0]
    coef = (u[:, keep].conj().T @ y) / s[keep]
    return vh[keep].conj().T @ coef, int(keep.sum()), s[~keep]


def _poly(coef: np.ndarray, x) -> np.ndarray:
    if coef.size == 0:
        return np.zeros_like(np.asarray(x, dtype=complex))
    return np.polyval(coef[::-1], x)


def _check_dof(window: LocalWindow, n_k: int):
    if window.size <= n_k:
        raise OrderTooLarge(f"{n_k} parameters do not fit in a window of {window.size} bins")


def _rational_outputs(window, x, a, b, i):
    A = 1.0 + x * _poly(a, x) if a.size else np.ones(x.shape, dtype=complex)
    return (_poly(b, x) * window.U + _poly(i, x)) / A, A


def _finish(method, window, x, a, b, i, orders, criterion, rank=0, truncated=None, iterations=0,
            improved=True) -> LocalFit:
    Yhat, A = _rational_outputs(window, x, a, b, i)
    resid = window.Y - Yhat
    loe = float(np.real(np.vdot(resid, resid)))
    n_k = a.size + b.size + i.size
    xe = x[window.eval_index]
    Ae = 1.0 + xe * _poly(a, xe) if a.size else 1.0 + 0j
    scale = 1.0 + np.sum(np.abs(a) * np.abs(xe) ** np.arange(1, a.size + 1)) if a.size else 1.0
    pole = bool(a.size and (abs(Ae) <= math.sqrt(EPS) * scale or not np.all(np.isfinite(Yhat))))
    with np.errstate(divide="ignore", invalid="ignore"):
        G = complex(_poly(b, xe) / Ae)
        T = complex(_poly(i, xe) / Ae) if i.size else 0j
    return LocalFit(
        method=method, a=a, b=b, i=i, G=G, T=T,
        sigma2=loe / (window.size - n_k), criterion=float(criterion), loe=loe, orders=orders,
        rank=rank, truncated=np.zeros(0) if truncated is None else truncated,
        iterations=iterations, pole_in_window=pole, improved=improved,
    )


def lpm_fit(window: LocalWindow, n_b: int, n_i: Optional[int], alpha: Optional[float] = None) -> LocalFit:
    """Local polynomial fit minimizing the output error."""
    reg = regressors(window, n_b, n_i, alpha)
    _check_dof(window, reg.Psi.shape[1])
    theta, rank, dropped = tsvd_solve(reg.Psi, window.Y)
    b, i = theta[: n_b + 1], theta[n_b + 1:]
    resid = window.Y - reg.Psi @ theta
    loe = float(np.real(np.vdot(resid, resid)))
    return _finish("LPM", window, reg.phi1, np.zeros(0, dtype=complex), b, i,
                   (0, n_b, n_i), loe, rank, dropped)


def levy_matrix(window: LocalWindow, n_a: int, n_b: int, n_i: Optional[int], alpha=None):
    """Linear system for A*Y - B*U - I = 0 with a_0 = 1; unknowns ordered [b, i, a]."""
    reg = regressors(window, n_b, n_i, alpha)
    cols = [reg.Psi]
    if n_a > 0:
        cols.append(-window.Y[:, None] * powers(reg.phi1, n_a)[:, 1:])
    return np.hstack(cols), reg.phi1


def lrm_fit(window: LocalWindow, n_a: int, n_b: int, n_i: Optional[int], alpha: Optional[float] = None) -> LocalFit:
    """Local rational fit minimizing the Levy-weighted criterion."""
    n_k = n_a + n_b + 1 + (0 if n_i is None else n_i + 1)
    _check_dof(window, n_k)
    A, x = levy_matrix(window, n_a, n_b, n_i, alpha)
    theta, rank, dropped = tsvd_solve(A, window.Y)
    nbi = n_b + 1 + (0 if n_i is None else n_i + 1)
    b, i, a = theta[: n_b + 1], theta[n_b + 1: nbi], theta[nbi:]
    resid = window.Y - A @ theta
    ll = float(np.real(np.vdot(resid, resid)))
    return _finish("LRM", window, x, a, b, i, (n_a, n_b, n_i), ll, rank, dropped)


def _pack(a, b, i):
    theta = np.concatenate([a, b, i])
    return np.concatenate([theta.real, theta.imag])


def _unpack(p, na, nb):
    half = p.size // 2
    theta = p[:half] + 1j * p[half:]
    return theta[:na], theta[na: na + nb], theta[na + nb:]


def ilrm_fit(window: LocalWindow, start: LocalFit, max_iter: int = 200, tol: float = 1e-10,
             alpha: Optional[float] = None) -> LocalFit:
    """Levenberg-Marquardt refinement of a rational fit on the output error.

    The returned output error never exceeds that of ``start``; when no
    descent step is found the start is returned with ``improved=False``.
    """
    n_a, n_b, n_i = start.orders
    x = window.scaled(alpha)
    U, Y = window.U, window.Y
    na, nb = start.a.size, start.b.size
    Xa = powers(x, max(n_a, 0))[:, 1:]
    Xb = powers(x, n_b)
    Xi = powers(x, n_i) if n_i is not None else np.zeros((x.size, 0))

    def residual(p):
        a, b, i = _unpack(p, na, nb)
        A = 1.0 + Xa @ a
        num = (Xb @ b) * U + Xi @ i
        return Y - num / A, A, num

    def stacked(r):
        return np.concatenate([r.real, r.imag])

    p = _pack(start.a, start.b, start.i)
    r, A, num = residual(p)
    loe = float(np.real(np.vdot(r, r)))
    loe0 = loe
    if not np.isfinite(loe):
        return _mark(start, improved=False)
    floor = (EPS * np.linalg.norm(Y)) ** 2
    mu = None
    it = 0
    for it in range(1, max_iter + 1):
        # complex Jacobian of r w.r.t. (a, b, i); r is holomorphic in theta
        Jc = np.hstack([(num / A ** 2)[:, None] * Xa,
                        -(U / A)[:, None] * Xb,
                        -(1.0 / A)[:, None] * Xi])
        J = np.block([[Jc.real, -Jc.imag], [Jc.imag, Jc.real]])
        res = stacked(r)
        g = J.T @ res
        if loe <= floor or np.linalg.norm(g) <= tol * np.linalg.norm(J) * math.sqrt(loe):
            break
        JtJ = J.T @ J
        d = np.diag(JtJ).copy()
        d[d == 0] = 1.0
        if mu is None:
            mu = 1e-3
        accepted = False
        while mu <= 1e16:
            try:
                step = np.linalg.solve(JtJ + mu * np.diag(d), -g)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            cand = p + step
            rc, Ac, numc = residual(cand)
            loec = float(np.real(np.vdot(rc, rc)))
            if np.isfinite(loec) and loec < loe:
                accepted = True
                small = np.linalg.norm(step) <= tol * (np.linalg.norm(p) + tol)
                p, r, A, num, loe = cand, rc, Ac, numc, loec
                mu = max(mu / 10, 1e-15)
                break
            mu *= 10
        if not accepted or small:
            break
    if not loe < loe0:
        return _mark(start, improved=False, iterations=it)
    a, b, i = _unpack(p, na, nb)
    return _finish("ILRM", window, x, a, b, i, start.orders, loe, iterations=it)


def _mark(fit: LocalFit, improved: bool, iterations: int = 0) -> LocalFit:
    out = LocalFit(**{**fit.__dict__})
    out.method = "ILRM"
    out.criterion = fit.loe
    out.improved = improved
    out.iterations = iterations
    return out


def mdl_penalty(ell: int, n_k: int) -> float:
    return math.exp(math.log(4 * ell + 2) * n_k / (2 * ell + 1 - n_k - 2))


@dataclass
class MdlChoice:
    orders: tuple
    fit: LocalFit
    criteria: dict


def mdl_select(window: LocalWindow, order_grid: Sequence[int] = (0, 1, 2, 3, 4), method: str = "LPM",
               alpha: Optional[float] = None) -> MdlChoice:
    """Pick equal orders (n_b = n_i, and n_a too for LRM) by the modified MDL criterion.

    Variance estimates below the round-off floor are clamped so that exact
    fits tie, and ties go to the smaller parameter count.
    """
    method = method.upper()
    if method not in ("LPM", "LRM"):
        raise InvalidArgument(f"unknown method {method!r}")
    m, ell = window.size, window.ell
    floor = (64 * EPS) ** 2 * float(np.mean(np.abs(window.Y) ** 2))
    best = None
    criteria = {}
    candidates = []
    for n in sorted(set(int(v) for v in order_grid)):
        n_k = (3 if method == "LRM" else 2) * n + 2
        if m - n_k - 2 > 0:
            candidates.append((n_k, n))
    if not candidates:
        raise InvalidArgument("order grid is empty after the degrees-of-freedom filter")
    for n_k, n in sorted(candidates):
        fit = lpm_fit(window, n, n, alpha) if method == "LPM" else lrm_fit(window, n, n, n, alpha)
        if not np.isfinite(fit.sigma2):
            continue
        value = max(fit.sigma2, floor) * mdl_penalty(ell, n_k)
        criteria[n] = value
        if best is None or value < best[0]:
            best = (value, fit)
    if best is None:
        raise InvalidArgument("no order in the grid produced a finite fit")
    return MdlChoice(orders=best[1].orders, fit=best[1], criteria=criteria)
