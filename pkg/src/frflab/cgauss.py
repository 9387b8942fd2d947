"""Complex Gaussian linear algebra.

A zero-mean complex Gaussian vector z is described either by its augmented
pair (covariance Gamma = E[z z^H], relation C = E[z z^T]) or by the real
covariance of [Re z; Im z]. The two are related by M = J K J^H with
J = [[I, jI], [I, -jI]].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import InvalidArgument, NotPositiveDefinite

PSD_TOL = 1e-10
EXT = np.clongdouble     # extended precision where the platform has it
REFINE_STEPS = 4


@dataclass(frozen=True)
class AugmentedKernel:
    gamma: np.ndarray
    relation: np.ndarray
    factor: Optional[np.ndarray] = field(default=None, compare=False, repr=False)   # exact B with B B^H = M

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    @property
    def M(self) -> np.ndarray:
        return np.block([[self.gamma, self.relation],
                         [self.relation.conj(), self.gamma.conj()]])

    def __add__(self, other: "AugmentedKernel") -> "AugmentedKernel":
        return AugmentedKernel(self.gamma + other.gamma, self.relation + other.relation)

    def scaled(self, c: float) -> "AugmentedKernel":
        f = None if self.factor is None else math.sqrt(c) * self.factor
        return AugmentedKernel(c * self.gamma, c * self.relation, f)

    @classmethod
    def zeros(cls, n: int) -> "AugmentedKernel":
        z = np.zeros((n, n), dtype=complex)
        return cls(z, z.copy())

    def min_eig_ratio(self) -> float:
        """Smallest eigenvalue of M divided by the largest magnitude one."""
        w = np.linalg.eigvalsh(self.M)
        top = np.max(np.abs(w))
        return float(w[0] / top) if top > 0 else 0.0

    def validate(self, tol: float = PSD_TOL) -> "AugmentedKernel":
        scale = max(np.max(np.abs(self.gamma)), np.max(np.abs(self.relation)), 1e-300)
        if np.max(np.abs(self.gamma - self.gamma.conj().T)) > 1e-10 * scale:
            raise InvalidArgument("covariance block is not Hermitian")
        if np.max(np.abs(self.relation - self.relation.T)) > 1e-10 * scale:
            raise InvalidArgument("relation block is not symmetric")
        if self.min_eig_ratio() < -tol:
            raise NotPositiveDefinite("augmented kernel is not positive semidefinite")
        return self


@dataclass(frozen=True)
class RealCompositeKernel:
    K: np.ndarray

    @property
    def n(self) -> int:
        return self.K.shape[0] // 2

    @property
    def rr(self):
        return self.K[: self.n, : self.n]

    @property
    def ri(self):
        return self.K[: self.n, self.n:]

    @property
    def ir(self):
        return self.K[self.n:, : self.n]

    @property
    def ii(self):
        return self.K[self.n:, self.n:]

    @classmethod
    def from_blocks(cls, rr, ri, ir, ii) -> "RealCompositeKernel":
        return cls(np.block([[rr, ri], [ir, ii]]))


def compose(K: RealCompositeKernel) -> AugmentedKernel:
    """Augmented (Gamma, C) of a real composite covariance."""
    Kc = np.asarray(K.K, dtype=float)
    if np.max(np.abs(Kc - Kc.T)) > 1e-12 * max(np.max(np.abs(Kc)), 1e-300):
        raise InvalidArgument("real composite kernel is not symmetric")
    w = np.linalg.eigvalsh(Kc)
    if w[0] < -PSD_TOL * max(np.max(np.abs(w)), 1e-300):
        raise NotPositiveDefinite("real composite kernel is not positive semidefinite")
    rr, ri, ir, ii = K.rr, K.ri, K.ir, K.ii
    gamma = rr + ii + 1j * (ir - ri)
    relation = rr - ii + 1j * (ir + ri)
    return AugmentedKernel(gamma, relation)


def real_blocks(gamma: np.ndarray, relation: np.ndarray) -> np.ndarray:
    """Real covariance of [Re z; Im z] from an augmented pair."""
    s = gamma + relation
    d = gamma - relation
    return 0.5 * np.block([[s.real, -d.imag], [s.imag, d.real]])


def decompose(M: AugmentedKernel) -> RealCompositeKernel:
    return RealCompositeKernel(real_blocks(M.gamma, M.relation))


def _cholesky(S: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying once with diagonal jitter."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.real(np.trace(S)) / S.shape[0]
        try:
            return np.linalg.cholesky(S + jitter * np.eye(S.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("covariance is not positive definite after jitter") from exc


def _augment(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v, v.conj()])


def _solve_hermitian(S: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    L = _cholesky(S)
    return linalg.cho_solve((L, True), rhs)


def prior_factor(prior: AugmentedKernel) -> np.ndarray:
    """B with B B^H = M, clipping round-off negative eigenvalues to zero."""
    if prior.factor is not None:
        return prior.factor
    w, V = np.linalg.eigh(0.5 * (prior.M + prior.M.conj().T))
    top = max(float(np.max(np.abs(w))) if w.size else 0.0, np.finfo(float).tiny)
    if w[0] < -PSD_TOL * top:
        raise NotPositiveDefinite("prior is not positive semidefinite")
    keep = w > 0
    return V[:, keep] * np.sqrt(w[keep])


def _ridge(A: np.ndarray, B: np.ndarray, ya: np.ndarray, sigma2: float) -> np.ndarray:
    """B z with z = argmin |ya - A z|^2 + sigma2 |z|^2, via stacked least squares."""
    r = B.shape[1]
    if r == 0:
        return np.zeros(B.shape[0], dtype=complex)
    stacked = np.vstack([A, math.sqrt(sigma2) * np.eye(r)])
    rhs = np.concatenate([ya, np.zeros(r)])
    return B @ linalg.lstsq(stacked, rhs, check_finite=False)[0]


def map_theta(y, psi, prior: AugmentedKernel, sigma2: float, full: bool = False):
    """MAP coefficients of y = psi theta + v under theta ~ CN(0, Gamma, C).

    Uses the square-root form: with M = B B^H the estimate is B z where z
    solves a ridge problem in z, so the conditioning is never squared.
    Returns the top half of the augmented estimate (and the whole augmented
    vector when ``full``).
    """
    if not sigma2 > 0:
        raise InvalidArgument("noise variance must be positive")
    y = np.asarray(y, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    m, n = psi.shape
    if prior.n != n or y.size != m:
        raise InvalidArgument("regressor, data and prior dimensions disagree")
    B = prior_factor(prior)
    A = np.vstack([psi @ B[:n], psi.conj() @ B[n:]])
    theta = _ridge(A, B, _augment(y), sigma2)
    return (theta[:n], theta) if full else theta[:n]


@dataclass(frozen=True)
class GTEstimate:
    G: np.ndarray
    T: np.ndarray
    G_aug: np.ndarray
    T_aug: np.ndarray
    identity_residual: float     # ||U~ G~ + T~ + s2 O^-1 Y~ - Y~|| / ||Y~||


def map_gt(y, u, prior_g: AugmentedKernel, prior_t: AugmentedKernel, sigma2: float) -> GTEstimate:
    """MAP estimates of the window FRF and transient samples.

    With O = U~ M_G U~^H + M_T + s2 I: G~ = M_G U~^H O^-1 Y~ and T~ = M_T O^-1 Y~.
    """
    if not sigma2 > 0:
        raise InvalidArgument("noise variance must be positive")
    y = np.asarray(y, dtype=complex)
    u = np.asarray(u, dtype=complex)
    m = y.size
    if prior_g.n != m or prior_t.n != m or u.size != m:
        raise InvalidArgument("window and kernel dimensions disagree")
    ua = _augment(u).astype(EXT)
    ya = _augment(y).astype(EXT)
    MG, MT = prior_g.M.astype(EXT), prior_t.M.astype(EXT)
    O = ua[:, None] * MG * ua.conj()[None, :] + MT + sigma2 * np.eye(2 * m)
    O2 = O.astype(complex)
    L = _cholesky(0.5 * (O2 + O2.conj().T))
    # Mixed-precision refinement: the double factor preconditions, residuals
    # are formed in extended precision. With s2 near its floor O is nearly
    # singular and a plain double solve leaves a visible identity residual.
    w = linalg.cho_solve((L, True), ya.astype(complex)).astype(EXT)
    best = math.inf
    for _ in range(REFINE_STEPS):
        r = ya - O @ w
        size = float(np.sqrt(np.sum(np.abs(r) ** 2)))
        if not size < best:
            break
        best = size
        w = w + linalg.cho_solve((L, True), r.astype(complex))
    g_aug = (MG @ (ua.conj() * w)).astype(complex)
    t_aug = (MT @ w).astype(complex)
    recon = ua * g_aug + t_aug + sigma2 * w - ya
    scale = max(float(np.sqrt(np.sum(np.abs(ya) ** 2))), np.finfo(float).tiny)
    resid = float(np.sqrt(np.sum(np.abs(recon) ** 2))) / scale
    return GTEstimate(G=g_aug[:m], T=t_aug[:m], G_aug=g_aug, T_aug=t_aug, identity_residual=resid)


def output_covariance(u, prior_g: AugmentedKernel, prior_t: AugmentedKernel, sigma2: float):
    """Augmented blocks (Gamma_O, C_O) of the window output."""
    u = np.asarray(u, dtype=complex)
    gamma = np.outer(u, u.conj()) * prior_g.gamma + prior_t.gamma + sigma2 * np.eye(u.size)
    relation = np.outer(u, u) * prior_g.relation + prior_t.relation
    return gamma, relation


def gaussian_nll(y, gamma_o, relation_o) -> float:
    """Negative log density of complex data y in real coordinates."""
    y = np.asarray(y, dtype=complex)
    z = np.concatenate([y.real, y.imag])
    S = real_blocks(gamma_o, relation_o)
    L = _cholesky(0.5 * (S + S.T))
    a = linalg.solve_triangular(L, z, lower=True)
    return float(0.5 * a @ a + np.sum(np.log(np.diag(L))) + 0.5 * z.size * math.log(2 * math.pi))


def nll(y, u, prior_g: AugmentedKernel, prior_t: AugmentedKernel, sigma2: float) -> float:
    """Negative log marginal likelihood of window data for the FRF-space model."""
    if not sigma2 > 0:
        raise InvalidArgument("noise variance must be positive")
    return gaussian_nll(y, *output_covariance(u, prior_g, prior_t, sigma2))


def nll_theta(y, psi, prior: AugmentedKernel, sigma2: float) -> float:
    """Same objective for the coefficient-space model y = psi theta + v."""
    if not sigma2 > 0:
        raise InvalidArgument("noise variance must be positive")
    psi = np.asarray(psi, dtype=complex)
    gamma = psi @ prior.gamma @ psi.conj().T + sigma2 * np.eye(psi.shape[0])
    relation = psi @ prior.relation @ psi.T
    return gaussian_nll(y, gamma, relation)


def nll_augmented(y, u, prior_g: AugmentedKernel, prior_t: AugmentedKernel, sigma2: float) -> float:
    """Augmented-complex form 1/2 Y~^H O^-1 Y~ + 1/2 log|O| + m log(pi)."""
    ua = _augment(np.asarray(u, dtype=complex))
    O = ua[:, None] * prior_g.M * ua.conj()[None, :] + prior_t.M + sigma2 * np.eye(ua.size)
    O = 0.5 * (O + O.conj().T)
    ya = _augment(np.asarray(y, dtype=complex))
    L = _cholesky(O)
    a = linalg.solve_triangular(L, ya, lower=True)
    m = ya.size // 2
    return float(0.5 * np.real(np.vdot(a, a)) + np.sum(np.log(np.real(np.diag(L)))) + m * math.log(math.pi))


def nll_and_grad(y, gamma_o, relation_o, d_gamma, d_relation):
    """Objective and gradient for stacked derivative blocks.

    ``d_gamma``/``d_relation`` have shape (p, m, m) and hold the derivatives of
    the output blocks with respect to p parameters.
    """
    z = np.concatenate([y.real, y.imag])
    m = y.size
    S = real_blocks(gamma_o, relation_o)
    L = _cholesky(0.5 * (S + S.T))
    Li = linalg.solve_triangular(L, np.eye(2 * m), lower=True, check_finite=False)
    Sinv = Li.T @ Li
    a = Sinv @ z
    value = 0.5 * z @ a + np.sum(np.log(np.diag(L))) + m * math.log(2 * math.pi)
    W = Sinv - np.outer(a, a)
    Wxx, Wxy, Wyx, Wyy = W[:m, :m], W[:m, m:], W[m:, :m], W[m:, m:]
    Bg = (Wxx + Wyy) - 1j * (Wyx - Wxy)
    Bc = (Wxx - Wyy) - 1j * (Wxy + Wyx)
    grad = 0.25 * np.real(np.einsum("pij,ij->p", d_gamma, Bg) + np.einsum("pij,ij->p", d_relation, Bc))
    return float(value), grad
