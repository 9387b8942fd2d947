"""Sliding local windows and polynomial regressors.

Frequencies inside a window are measured from the window centre and scaled
by ``alpha``. With the default ``alpha = N*Ts/(2*pi)`` the scaled frequency of
bin offset r is exactly r.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .spectra import SpectraRecord


@dataclass(frozen=True)
class LocalWindow:
    k: int
    ell: int
    bins: np.ndarray
    offsets: np.ndarray
    omega_offsets: np.ndarray
    omega: np.ndarray
    eval_offset: int
    U: np.ndarray
    Y: np.ndarray
    freq_step: float

    @property
    def size(self) -> int:
        return 2 * self.ell + 1

    @property
    def center(self) -> int:
        return int(self.bins[self.ell])

    @property
    def eval_index(self) -> int:
        """Position of the evaluated bin inside the window arrays."""
        return self.eval_offset + self.ell

    @property
    def default_alpha(self) -> float:
        return 1.0 / self.freq_step

    def scaled(self, alpha: Optional[float] = None) -> np.ndarray:
        """alpha * omega_r for every window bin."""
        alpha = self.default_alpha if alpha is None else alpha
        if not alpha > 0:
            raise InvalidArgument("alpha must be positive")
        if alpha == self.default_alpha:
            return self.offsets.astype(float)
        return alpha * self.omega_offsets


def extract_window(record: SpectraRecord, k: int, ell: int) -> LocalWindow:
    """Window of 2*ell+1 excited bins used to estimate bin ``k``.

    Near the band edges the window is shifted inward and the estimate is read
    off-centre at ``eval_offset = k - centre``.
    """
    lo, hi = record.excited_band()
    if ell < 0:
        raise InvalidArgument("half-width must be non-negative")
    if not lo <= k <= hi or not record.excited[k]:
        raise InvalidArgument(f"bin {k} lies outside the excited band [{lo}, {hi}]")
    if 2 * ell + 1 > hi - lo + 1:
        raise InvalidArgument(f"window of {2 * ell + 1} bins does not fit in {hi - lo + 1} excited bins")
    center = min(max(k, lo + ell), hi - ell)
    bins = np.arange(center - ell, center + ell + 1)
    offsets = np.arange(-ell, ell + 1)
    step = record.freq_step
    return LocalWindow(
        k=int(k), ell=int(ell), bins=bins, offsets=offsets,
        omega_offsets=offsets * step, omega=record.omega[bins],
        eval_offset=int(k - center),
        U=record.U[bins], Y=record.Y[bins], freq_step=step,
    )


def powers(x: np.ndarray, order: int) -> np.ndarray:
    """Columns x**0 .. x**order."""
    return np.vander(np.asarray(x), order + 1, increasing=True)


@dataclass(frozen=True)
class RegressorSet:
    alpha: float
    phi1: np.ndarray
    Phi_b: np.ndarray
    Phi_i: Optional[np.ndarray]
    Psi: np.ndarray

    @property
    def n_b(self) -> int:
        return self.Phi_b.shape[1] - 1

    @property
    def n_i(self) -> Optional[int]:
        return None if self.Phi_i is None else self.Phi_i.shape[1] - 1


def regressors(window: LocalWindow, n_b: int, n_i: Optional[int], alpha: Optional[float] = None) -> RegressorSet:
    """Psi = [diag(U) Phi^{n_b}, Phi^{n_i}]; ``n_i=None`` drops the transient block."""
    if n_b < 0 or (n_i is not None and n_i < 0):
        raise InvalidArgument("polynomial orders must be non-negative")
    alpha = window.default_alpha if alpha is None else float(alpha)
    x = window.scaled(alpha)
    Phi_b = powers(x, n_b)
    blocks = [window.U[:, None] * Phi_b]
    Phi_i = None
    if n_i is not None:
        Phi_i = powers(x, n_i)
        blocks.append(Phi_i)
    return RegressorSet(alpha=alpha, phi1=x, Phi_b=Phi_b, Phi_i=Phi_i, Psi=np.hstack(blocks).astype(complex))


def band_bins(record: SpectraRecord, omega_max: float = 2 * np.pi, omega_min: float = 0.0) -> np.ndarray:
    """Excited bins with omega_min <= omega < omega_max."""
    mask = record.excited & (record.omega >= omega_min) & (record.omega < omega_max)
    return np.flatnonzero(mask)
