"""Random positive semidefinite priors for linear-algebra tests."""

import math

import numpy as np

from frflab.cgauss import RealCompositeKernel, compose


def random_real_psd(rng, n, rank=None, ridge=0.0):
    B = rng.normal(size=(2 * n, rank or 2 * n))
    K = B @ B.T / B.shape[1] + ridge * np.eye(2 * n)
    return 0.5 * (K + K.T)


def random_prior(rng, n, rank=None, ridge=1e-3):
    return compose(RealCompositeKernel(random_real_psd(rng, n, rank, ridge)))


def rls_oracle(y, psi, prior, sigma2):
    """Minimizer of ||Y - Psi theta||^2 + sigma2/2 * theta~^H M^-1 theta~ in real coordinates."""
    m, n = psi.shape
    A = np.block([[psi.real, -psi.imag], [psi.imag, psi.real]])
    z = np.concatenate([y.real, y.imag])
    J = np.block([[np.eye(n), 1j * np.eye(n)], [np.eye(n), -1j * np.eye(n)]])
    Q = np.real(J.conj().T @ np.linalg.solve(prior.M, J))
    # stacked least squares instead of normal equations keeps the conditioning of A
    R = np.linalg.cholesky(0.5 * (Q + Q.T)).T
    stacked = np.vstack([A, math.sqrt(0.5 * sigma2) * R])
    x = np.linalg.lstsq(stacked, np.concatenate([z, np.zeros(2 * n)]), rcond=None)[0]
    return x[:n] + 1j * x[n:]


def dp_series(aG, lam, bG, kap, x, terms=400):
    P = np.outer(x, x)
    n = np.arange(terms + 1)[:, None, None]
    # powers of lam*P stay bounded inside the convergence range
    A, B = (lam * P[None]) ** n, (kap * P[None]) ** n
    return np.sum(aG * A + bG * B, axis=0), np.sum(aG * A - bG * B, axis=0)
