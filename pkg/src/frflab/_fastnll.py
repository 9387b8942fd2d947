"""Compiled window objective for empirical-Bayes tuning.

Mirrors kernels.frf_terms / cgauss.nll_and_grad on flat parameter arrays so
the inner loop of the multistart optimizer avoids Python overhead. Parameter
layout per family: the family entries in FAMILY_PARAMS order, then c_T, then
sigma2 (DI has no c_T). Gradients are w.r.t. log parameters.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

FAMILY_CODE = {"DP": 0, "DC": 1, "R1": 2, "DCpR1": 3, "DPpR1": 4}
_INV_SQRT_2PI = 1.0 / math.sqrt(2 * math.pi)
_LOG_2PI = math.log(2 * math.pi)


@nb.njit(cache=True)
def _dp_fill(p, x, G, C, dG, dC, off):
    aG, lam, bG, kap = p[0], p[1], p[2], p[3]
    m = x.size
    for i in range(m):
        for j in range(m):
            P = x[i] * x[j]
            fa = 1.0 / (1.0 - lam * P)
            fb = 1.0 / (1.0 - kap * P)
            G[i, j] += aG * fa + bG * fb
            C[i, j] += aG * fa - bG * fb
            dG[off, i, j] = aG * fa
            dC[off, i, j] = aG * fa
            t = aG * lam * P * fa * fa
            dG[off + 1, i, j] = t
            dC[off + 1, i, j] = t
            dG[off + 2, i, j] = bG * fb
            dC[off + 2, i, j] = -bG * fb
            t = bG * kap * P * fb * fb
            dG[off + 3, i, j] = t
            dC[off + 3, i, j] = -t


@nb.njit(cache=True)
def _dc_fill(p, w, G, C, dG, dC, off):
    # row factor a1 = 1/(s + jw); the column factor is conj(a1) for Gamma and a1 for C
    lam, alpha, beta = p[0], p[1], p[2]
    s = alpha + 0.5 * beta
    c = lam * _INV_SQRT_2PI
    m = w.size
    a1 = np.empty(m, dtype=np.complex128)
    for i in range(m):
        a1[i] = 1.0 / (s + 1j * w[i])
    for i in range(m):
        for j in range(m):
            for rel in range(2):
                a2 = a1[j] if rel else np.conj(a1[j])
                E = 1.0 / (beta + 1j * (w[i] + w[j] if rel else w[i] - w[j]))
                F = a1[i] + a2
                dF = -(a1[i] * a1[i]) - (a2 * a2)
                out = c * E * F
                if rel:
                    C[i, j] += out
                    dC[off, i, j] = out
                    dC[off + 1, i, j] = alpha * c * E * dF
                    dC[off + 2, i, j] = beta * c * E * (0.5 * dF - E * F)
                else:
                    G[i, j] += out
                    dG[off, i, j] = out
                    dG[off + 1, i, j] = alpha * c * E * dF
                    dG[off + 2, i, j] = beta * c * E * (0.5 * dF - E * F)


@nb.njit(cache=True)
def _r1_fill(p, w, G, C, dG, dC, off):
    # rows use P = jw + b1 and 1/(P^2 + b2^2); columns use the conjugates for Gamma, the same for C
    b1, b2, g1, g2 = p[0], p[1], p[2], p[3]
    m = w.size
    P = np.empty(m, dtype=np.complex128)
    iD = np.empty(m, dtype=np.complex128)
    for i in range(m):
        P[i] = 1j * w[i] + b1
        iD[i] = 1.0 / (P[i] * P[i] + b2 * b2)
    g1s, g2s, b2s = g1 * g1, g2 * g2, b2 * b2
    for i in range(m):
        for j in range(m):
            for rel in range(2):
                q = P[j] if rel else np.conj(P[j])
                iq = iD[j] if rel else np.conj(iD[j])
                inv = iD[i] * iq
                pq = P[i] * q
                num = g1s * pq + g2s * b2s
                v0 = num * inv
                v1 = b1 * (g1s * (P[i] + q) - 2.0 * num * (P[i] * iD[i] + q * iq)) * inv
                v2 = b2 * (2.0 * g2s * b2 - 2.0 * num * b2 * (iD[i] + iq)) * inv
                v3 = 2.0 * g1s * pq * inv
                v4 = 2.0 * g2s * b2s * inv
                if rel:
                    C[i, j] += v0
                    dC[off, i, j] = v1
                    dC[off + 1, i, j] = v2
                    dC[off + 2, i, j] = v3
                    dC[off + 3, i, j] = v4
                else:
                    G[i, j] += v0
                    dG[off, i, j] = v1
                    dG[off + 1, i, j] = v2
                    dG[off + 2, i, j] = v3
                    dG[off + 3, i, j] = v4


@nb.njit(cache=True)
def _cholesky(S):
    n = S.shape[0]
    L = np.zeros_like(S)
    for j in range(n):
        acc = S[j, j]
        for k in range(j):
            acc -= L[j, k] * L[j, k]
        if not acc > 0.0:
            return L, False
        L[j, j] = math.sqrt(acc)
        for i in range(j + 1, n):
            acc = S[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    return L, True


@nb.njit(cache=True)
def _nll_grad(y, G, C, dG, dC):
    """Real-coordinate Gaussian NLL of y and its gradient for stacked block derivatives."""
    m = y.size
    n = 2 * m
    S = np.empty((n, n))
    for i in range(m):
        for j in range(m):
            s = G[i, j] + C[i, j]
            d = G[i, j] - C[i, j]
            S[i, j] = 0.5 * s.real
            S[i, m + j] = -0.5 * d.imag
            S[m + i, j] = 0.5 * s.imag
            S[m + i, m + j] = 0.5 * d.real
    for i in range(n):
        for j in range(i):
            v = 0.5 * (S[i, j] + S[j, i])
            S[i, j] = v
            S[j, i] = v
    L, ok = _cholesky(S)
    if not ok:
        tr = 0.0
        for i in range(n):
            tr += S[i, i]
        jit = 1e-10 * tr / n
        for i in range(n):
            S[i, i] += jit
        L, ok = _cholesky(S)
        if not ok:
            return np.inf, np.zeros(dG.shape[0]), False
    # rows of L^-1 by forward substitution
    Li = np.zeros((n, n))
    for i in range(n):
        Li[i, i] = 1.0
        for k in range(i):
            lik = L[i, k]
            for t in range(k + 1):
                Li[i, t] -= lik * Li[k, t]
        inv = 1.0 / L[i, i]
        for t in range(i + 1):
            Li[i, t] *= inv
    Sinv = Li.T @ Li
    z = np.empty(n)
    for i in range(m):
        z[i] = y[i].real
        z[m + i] = y[i].imag
    a = Sinv @ z
    value = 0.5 * (z @ a) + m * _LOG_2PI
    for i in range(n):
        value += math.log(L[i, i])
    # Re(dG * Bg) with Bg = (Wxx + Wyy) - j(Wyx - Wxy), likewise Bc = (Wxx - Wyy) - j(Wxy + Wyx)
    bgr = np.empty((m, m))
    bgi = np.empty((m, m))
    bcr = np.empty((m, m))
    bci = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            wxx = Sinv[i, j] - a[i] * a[j]
            wxy = Sinv[i, m + j] - a[i] * a[m + j]
            wyx = Sinv[m + i, j] - a[m + i] * a[j]
            wyy = Sinv[m + i, m + j] - a[m + i] * a[m + j]
            bgr[i, j] = wxx + wyy
            bgi[i, j] = wxy - wyx
            bcr[i, j] = wxx - wyy
            bci[i, j] = -(wxy + wyx)
    npar = dG.shape[0]
    grad = np.zeros(npar)
    for p in range(npar):
        acc = 0.0
        for i in range(m):
            for j in range(m):
                g = dG[p, i, j]
                c = dC[p, i, j]
                acc += g.real * bgr[i, j] - g.imag * bgi[i, j] + c.real * bcr[i, j] - c.imag * bci[i, j]
        grad[p] = 0.25 * acc
    return value, grad, True


@nb.njit(cache=True)
def frf_objective(code, p, omega, x, U, y):
    """NLL and log-gradient for FRF-space families; p = [eta..., c_T, sigma2]."""
    m = y.size
    npar = p.size
    G = np.zeros((m, m), dtype=np.complex128)
    C = np.zeros((m, m), dtype=np.complex128)
    dG = np.zeros((npar, m, m), dtype=np.complex128)
    dC = np.zeros((npar, m, m), dtype=np.complex128)
    if code == 0:
        _dp_fill(p[0:4], x, G, C, dG, dC, 0)
    elif code == 1:
        _dc_fill(p[0:3], omega, G, C, dG, dC, 0)
    elif code == 2:
        _r1_fill(p[0:4], omega, G, C, dG, dC, 0)
    elif code == 3:
        _dc_fill(p[0:3], omega, G, C, dG, dC, 0)
        _r1_fill(p[3:7], omega, G, C, dG, dC, 3)
    else:
        _dp_fill(p[0:4], x, G, C, dG, dC, 0)
        _r1_fill(p[4:8], omega, G, C, dG, dC, 4)
    cT = p[npar - 2]
    s2 = p[npar - 1]
    nk = npar - 2
    for i in range(m):
        for j in range(m):
            f1 = U[i] * np.conj(U[j]) + cT
            f2 = U[i] * U[j] + cT
            dG[nk, i, j] = cT * G[i, j]
            dC[nk, i, j] = cT * C[i, j]
            for t in range(nk):
                dG[t, i, j] *= f1
                dC[t, i, j] *= f2
            G[i, j] *= f1
            C[i, j] *= f2
        G[i, i] += s2
        dG[npar - 1, i, i] = s2
    return _nll_grad(y, G, C, dG, dC)


@nb.njit(cache=True)
def di_objective(p, psi, n_b, y):
    """NLL and log-gradient for the DI prior; p = [alpha_G, alpha_T, lam, beta_G, kap, sigma2]."""
    aG, aT, lam, bG, kap, s2 = p[0], p[1], p[2], p[3], p[4], p[5]
    bT = aT * bG / aG
    m, q = psi.shape
    # diagonals of Gamma / C and their log-derivatives, rows: value, aG, aT, lam, bG, kap
    dg = np.zeros((6, q))
    dc = np.zeros((6, q))
    for t in range(q):
        isg = t < n_b + 1
        e = t if isg else t - n_b - 1
        lp = lam ** e
        kp = kap ** e
        if isg:
            dg[0, t] = aG * lp + bG * kp
            dc[0, t] = aG * lp - bG * kp
            dg[1, t] = aG * lp
            dc[1, t] = aG * lp
            dg[3, t] = aG * e * lp
            dc[3, t] = aG * e * lp
            dg[4, t] = bG * kp
            dc[4, t] = -bG * kp
            dg[5, t] = bG * e * kp
            dc[5, t] = -bG * e * kp
        else:
            dg[0, t] = aT * lp + bT * kp
            dc[0, t] = aT * lp - bT * kp
            dg[1, t] = -bT * kp
            dc[1, t] = bT * kp
            dg[2, t] = aT * lp + bT * kp
            dc[2, t] = aT * lp - bT * kp
            dg[3, t] = aT * e * lp
            dc[3, t] = aT * e * lp
            dg[4, t] = bT * kp
            dc[4, t] = -bT * kp
            dg[5, t] = bT * e * kp
            dc[5, t] = -bT * e * kp
    G = np.zeros((m, m), dtype=np.complex128)
    C = np.zeros((m, m), dtype=np.complex128)
    dG = np.zeros((6, m, m), dtype=np.complex128)
    dC = np.zeros((6, m, m), dtype=np.complex128)
    for i in range(m):
        for j in range(m):
            for t in range(q):
                hg = psi[i, t] * np.conj(psi[j, t])
                hc = psi[i, t] * psi[j, t]
                G[i, j] += dg[0, t] * hg
                C[i, j] += dc[0, t] * hc
                for r in range(5):
                    dG[r, i, j] += dg[r + 1, t] * hg
                    dC[r, i, j] += dc[r + 1, t] * hc
        G[i, i] += s2
        dG[5, i, i] = s2
    return _nll_grad(y, G, C, dG, dC)


PENALTY = 1e30


@nb.njit(cache=True)
def evaluate(kind, code, c, lin, unit, full, idx, omega, x, U, psi, n_b, y):
    """Objective in search coordinates: log-parameters, or value/unit where ``lin``."""
    nf = c.size
    v = np.empty(nf)
    for t in range(nf):
        v[t] = c[t] * unit if lin[t] else math.exp(c[t])
    p = full.copy()
    for t in range(nf):
        p[idx[t]] = v[t]
    if kind == 0:
        value, g, ok = frf_objective(code, p, omega, x, U, y)
    else:
        value, g, ok = di_objective(p, psi, n_b, y)
    grad = np.empty(nf)
    good = ok and math.isfinite(value)
    for t in range(nf):
        grad[t] = g[idx[t]] * (unit / v[t] if lin[t] else 1.0)
        if not math.isfinite(grad[t]):
            good = False
    if not good:
        return PENALTY, np.zeros(nf), False
    return value, grad, True


@nb.njit(cache=True)
def _project(z, lo, hi):
    out = z.copy()
    for t in range(z.size):
        if out[t] < lo[t]:
            out[t] = lo[t]
        elif out[t] > hi[t]:
            out[t] = hi[t]
    return out


@nb.njit(cache=True)
def _pg_norm(c, g, lo, hi):
    top = 0.0
    for t in range(c.size):
        z = c[t] - g[t]
        if z < lo[t]:
            z = lo[t]
        elif z > hi[t]:
            z = hi[t]
        top = max(top, abs(z - c[t]))
    return top


@nb.njit(cache=True)
def minimize_box(c0, lo, hi, maxiter, ftol, pgtol, mem,
                 kind, code, lin, unit, full, idx, omega, x, U, psi, n_b, y):
    """Projected limited-memory BFGS on a box.

    Variables at a bound whose gradient pushes outward are held fixed; the
    two-loop recursion acts on the rest. Steps are projected back onto the
    box and accepted by an Armijo test along the projection arc.
    Status: 0 projected-gradient test, 1 relative reduction test,
    2 iteration limit, 3 line search failure, 4 infeasible start.
    Returns (c, f, iterations, evaluations, status).
    """
    n = c0.size
    c = _project(c0, lo, hi)
    f, g, ok = evaluate(kind, code, c, lin, unit, full, idx, omega, x, U, psi, n_b, y)
    nfev = 1
    if not ok:
        return c, f, 0, nfev, 4
    S = np.zeros((mem, n))
    Yv = np.zeros((mem, n))
    rho = np.zeros(mem)
    alpha = np.zeros(mem)
    count = 0
    head = 0
    it = 0
    while it < maxiter:
        if _pg_norm(c, g, lo, hi) <= pgtol:
            return c, f, it, nfev, 0
        free = np.ones(n)
        for t in range(n):
            if (c[t] <= lo[t] and g[t] > 0) or (c[t] >= hi[t] and g[t] < 0):
                free[t] = 0.0
        q = g * free
        for k in range(count):
            j = (head - 1 - k) % mem
            alpha[j] = rho[j] * np.dot(S[j] * free, q)
            q = q - alpha[j] * Yv[j] * free
        if count > 0:
            j = (head - 1) % mem
            sy = np.dot(S[j], Yv[j])
            yy = np.dot(Yv[j], Yv[j])
            q = q * (sy / yy)
        for k in range(count - 1, -1, -1):
            j = (head - 1 - k) % mem
            beta = rho[j] * np.dot(Yv[j] * free, q)
            q = q + (alpha[j] - beta) * S[j] * free
        d = -q
        slope = np.dot(g, d)
        if not slope < 0:
            count = 0
            d = -g * free
            slope = np.dot(g, d)
            if not slope < 0:
                return c, f, it, nfev, 0
        step = 1.0
        if count == 0:
            dn = 0.0
            for t in range(n):
                dn = max(dn, abs(d[t]))
            step = min(1.0, 1.0 / dn) if dn > 0 else 1.0
        accepted = False
        for _ in range(40):
            cn = _project(c + step * d, lo, hi)
            fn, gn, okn = evaluate(kind, code, cn, lin, unit, full, idx, omega, x, U, psi, n_b, y)
            nfev += 1
            if okn and fn <= f + 1e-4 * np.dot(g, cn - c):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if count > 0:
                count = 0
                continue
            return c, f, it, nfev, 3
        it += 1
        s = cn - c
        yk = gn - g
        sy = np.dot(s, yk)
        if sy > 1e-10 * np.dot(yk, yk):
            S[head] = s
            Yv[head] = yk
            rho[head] = 1.0 / sy
            head = (head + 1) % mem
            count = min(count + 1, mem)
        f_old = f
        c, f, g = cn, fn, gn
        if (f_old - f) <= ftol * max(abs(f_old), abs(f), 1.0):
            return c, f, it, nfev, 1
    return c, f, it, nfev, 2
