"""Kernel priors for local FRF estimation.

Coefficient space: the diagonal DI kernel over polynomial coefficients.
FRF space: the dot-product (DP) kernel, the diagonal-correlated (DC) kernel,
the second-order resonance kernel (R1) and the additive DCpR1 / DPpR1
composites. FRF-space kernels return the augmented pair (Gamma, C); the
transient prior is the FRF prior scaled by ``c_T``.

DP works on scaled offsets x = alpha*omega_r; DC and R1 on absolute window
frequencies.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy import linalg

from .cgauss import AugmentedKernel
from .errors import InvalidArgument
from .localwin import LocalWindow, powers

DP_MARGIN = 1e-6
_SQRT_2PI = math.sqrt(2 * math.pi)

FAMILY_PARAMS = {
    "DI": ("alpha_G", "alpha_T", "lam", "beta_G", "kap"),
    "DP": ("alpha_G", "lam", "beta_G", "kap"),
    "DC": ("dc_lambda", "dc_alpha", "dc_beta"),
    "R1": ("beta1", "beta2", "gamma1", "gamma2"),
}
FAMILY_PARAMS["DCpR1"] = FAMILY_PARAMS["DC"] + FAMILY_PARAMS["R1"]
FAMILY_PARAMS["DPpR1"] = FAMILY_PARAMS["DP"] + FAMILY_PARAMS["R1"]
FRF_FAMILIES = ("DP", "DC", "R1", "DCpR1", "DPpR1")


@dataclass
class KernelSpec:
    """Kernel family, hyperparameter values and optional per-entry bounds.

    ``bounds`` maps a hyperparameter name (``c_T`` included) to ``(lo, hi)``;
    a collapsed interval freezes that entry during tuning.
    """

    family: str
    eta: dict = field(default_factory=dict)
    c_T: float = 1.0
    bounds: Optional[dict] = None

    def __post_init__(self):
        if self.family not in FAMILY_PARAMS:
            raise InvalidArgument(f"unknown kernel family {self.family!r}")
        unknown = set(self.eta) - set(FAMILY_PARAMS[self.family])
        if unknown:
            raise InvalidArgument(f"unknown hyperparameters {sorted(unknown)} for {self.family}")
        if self.c_T < 0:
            raise InvalidArgument("transient scale c_T must be non-negative")

    @property
    def names(self) -> tuple:
        return FAMILY_PARAMS[self.family]

    @property
    def tunable(self) -> tuple:
        """Entries tuned by empirical Bayes (noise variance excluded)."""
        return self.names if self.family == "DI" else self.names + ("c_T",)

    def with_values(self, values: dict) -> "KernelSpec":
        eta = {k: float(values[k]) for k in self.names if k in values}
        return KernelSpec(self.family, {**self.eta, **eta}, float(values.get("c_T", self.c_T)), self.bounds)

    def to_dict(self) -> dict:
        return {"family": self.family, "eta": {k: float(v) for k, v in self.eta.items()}, "c_T": float(self.c_T)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelSpec":
        return cls(family=doc["family"], eta=dict(doc.get("eta", {})), c_T=float(doc.get("c_T", 1.0)))

    @classmethod
    def from_json(cls, text: str) -> "KernelSpec":
        return cls.from_dict(json.loads(text))


def _require(eta: dict, names: Iterable[str]) -> list:
    try:
        return [float(eta[n]) for n in names]
    except KeyError as exc:
        raise InvalidArgument(f"missing hyperparameter {exc.args[0]!r}") from None


def di_bound(x: np.ndarray) -> float:
    """Upper limit 1/max|alpha*omega_r| for the DI decay rates."""
    top = float(np.max(np.abs(x))) if np.size(x) else 0.0
    return math.inf if top == 0 else 1.0 / top


def dp_bound(x: np.ndarray) -> float:
    """Convergence limit (1 - delta)/max|x|^2 for the DP decay rates."""
    top = float(np.max(np.abs(x))) if np.size(x) else 0.0
    return math.inf if top == 0 else (1.0 - DP_MARGIN) / top ** 2


# -- DI -----------------------------------------------------------------

def _di_values(eta):
    aG, aT, lam, bG, kap = _require(eta, FAMILY_PARAMS["DI"])
    bT = aT * bG / aG if aG > 0 else 0.0
    return aG, aT, lam, bG, kap, bT


def _di_check(eta, lam_max):
    aG, aT, lam, bG, kap, _ = _di_values(eta)
    if min(aG, aT, bG) < 0:
        raise InvalidArgument("DI scales must be non-negative")
    for name, v in (("lam", lam), ("kap", kap)):
        if not 0 <= v < lam_max:
            raise InvalidArgument(f"DI {name}={v} outside [0, {lam_max})")


def di_diagonals(eta: dict, n_b: int, n_i: int):
    """Diagonals of Gamma and C for the G block and the T block."""
    aG, aT, lam, bG, kap, bT = _di_values(eta)
    nb, ni = np.arange(n_b + 1), np.arange(n_i + 1)
    gG = aG * lam ** nb + bG * kap ** nb
    cG = aG * lam ** nb - bG * kap ** nb
    gT = aT * lam ** ni + bT * kap ** ni
    cT = aT * lam ** ni - bT * kap ** ni
    return gG, cG, gT, cT


def _di_factor(P: np.ndarray, a: float, lam: float, b: float, kap: float) -> np.ndarray:
    """Exact square root of a DI block pushed through the real basis P.

    Each coefficient pair [[g, c], [c, g]] has eigenvalues 2 a lam^i and
    2 b kap^i along (1, 1) and (1, -1), so no eigen-solve is needed.
    """
    i = np.arange(P.shape[1])
    sa = np.sqrt(a * lam ** i) * P
    sb = np.sqrt(b * kap ** i) * P
    return np.block([[sa, sb], [sa, -sb]]) + 0j


def di_kernel(spec: KernelSpec, n_b: int, n_i: int, lam_max: float = math.inf) -> AugmentedKernel:
    """Coefficient-space prior over theta = [b_0..b_nb, i_0..i_ni]."""
    if spec.family != "DI":
        raise InvalidArgument("di_kernel needs a DI spec")
    _di_check(spec.eta, lam_max)
    gG, cG, gT, cT = di_diagonals(spec.eta, n_b, n_i)
    aG, aT, lam, bG, kap, bT = _di_values(spec.eta)
    n = n_b + n_i + 2
    FG = _di_factor(np.eye(n_b + 1), aG, lam, bG, kap)
    FT = _di_factor(np.eye(n_i + 1), aT, lam, bT, kap)
    # reorder rows from [G, conj G, T, conj T] to [G, T, conj G, conj T]
    F = linalg.block_diag(FG, FT)
    rows = np.r_[0:n_b + 1, 2 * (n_b + 1):2 * (n_b + 1) + n_i + 1,
                 n_b + 1:2 * (n_b + 1), 2 * (n_b + 1) + n_i + 1:2 * n]
    return AugmentedKernel(np.diag(np.concatenate([gG, gT])).astype(complex),
                           np.diag(np.concatenate([cG, cT])).astype(complex), F[rows])


def di_log_derivatives(eta: dict, n_b: int, n_i: int, names: Iterable[str]) -> dict:
    """d(diagonals)/d(log parameter) for the DI kernel, with beta_T tied to the others."""
    aG, aT, lam, bG, kap, bT = _di_values(eta)
    nb, ni = np.arange(n_b + 1), np.arange(n_i + 1)
    lb, kb, li, ki = lam ** nb, kap ** nb, lam ** ni, kap ** ni
    zb, zi = np.zeros(n_b + 1), np.zeros(n_i + 1)
    table = {
        "alpha_G": (aG * lb, aG * lb, -bT * ki, bT * ki),
        "alpha_T": (zb, zb, aT * li + bT * ki, aT * li - bT * ki),
        "beta_G": (bG * kb, -bG * kb, bT * ki, -bT * ki),
        "lam": (aG * nb * lb, aG * nb * lb, aT * ni * li, aT * ni * li),
        "kap": (bG * nb * kb, -bG * nb * kb, bT * ni * ki, -bT * ni * ki),
    }
    return {n: table[n] for n in names}


def di_pushforward(spec: KernelSpec, x: np.ndarray, n_b: int, n_i: int):
    """FRF-space priors (M_G, M_T) induced by the DI kernel through Phi."""
    gG, cG, gT, cT = di_diagonals(spec.eta, n_b, n_i)
    Pb, Pi = powers(x, n_b), powers(x, n_i)
    aG, aT, lam, bG, kap, bT = _di_values(spec.eta)
    MG = AugmentedKernel((Pb * gG) @ Pb.T + 0j, (Pb * cG) @ Pb.T + 0j, _di_factor(Pb, aG, lam, bG, kap))
    MT = AugmentedKernel((Pi * gT) @ Pi.T + 0j, (Pi * cT) @ Pi.T + 0j, _di_factor(Pi, aT, lam, bT, kap))
    return MG, MT


# -- FRF-space families -------------------------------------------------

def _dp_terms(eta, x, want):
    aG, lam, bG, kap = _require(eta, FAMILY_PARAMS["DP"])
    P = np.outer(x, x)
    fa = 1.0 / (1.0 - lam * P)
    fb = 1.0 / (1.0 - kap * P)
    gamma = aG * fa + bG * fb
    rel = aG * fa - bG * fb
    d = {}
    if "alpha_G" in want:
        d["alpha_G"] = (aG * fa, aG * fa)
    if "beta_G" in want:
        d["beta_G"] = (bG * fb, -bG * fb)
    if "lam" in want:
        t = aG * lam * P * fa * fa
        d["lam"] = (t, t)
    if "kap" in want:
        t = bG * kap * P * fb * fb
        d["kap"] = (t, -t)
    return gamma + 0j, rel + 0j, {k: (g + 0j, c + 0j) for k, (g, c) in d.items()}


def _dc_block(lam, alpha, beta, w, wp, want):
    """DC covariance between frequencies w (rows) and wp (columns)."""
    s = alpha + beta / 2
    jw = 1j * w[:, None]
    jwp = 1j * wp[None, :]
    E = 1.0 / (beta + jw - jwp)
    a1 = 1.0 / (s + jw)
    a2 = 1.0 / (s - jwp)
    F = a1 + a2
    c = lam / _SQRT_2PI
    out = c * E * F
    d = {}
    if want:
        dF = -(a1 * a1) - (a2 * a2)
        if "dc_lambda" in want:
            d["dc_lambda"] = out
        if "dc_alpha" in want:
            d["dc_alpha"] = alpha * c * E * dF
        if "dc_beta" in want:
            d["dc_beta"] = beta * c * (-(E * E) * F + 0.5 * E * dF)
    return out, d


def _dc_terms(eta, omega, want):
    lam, alpha, beta = _require(eta, FAMILY_PARAMS["DC"])
    w = np.asarray(omega, dtype=float)
    gamma, dg = _dc_block(lam, alpha, beta, w, w, want)
    rel, dr = _dc_block(lam, alpha, beta, w, -w, want)
    return gamma, rel, {k: (dg[k], dr[k]) for k in dg}


def _r1_block(b1, b2, g1, g2, w, wp, want):
    p = 1j * w[:, None] + b1
    q = -1j * wp[None, :] + b1
    D1 = p * p + b2 * b2
    D2 = q * q + b2 * b2
    inv = 1.0 / (D1 * D2)
    pq = p * q
    num = g1 * g1 * pq + g2 * g2 * b2 * b2
    out = num * inv
    d = {}
    if want:
        if "gamma1" in want:
            d["gamma1"] = 2 * g1 * g1 * pq * inv
        if "gamma2" in want:
            d["gamma2"] = 2 * g2 * g2 * b2 * b2 * inv
        if "beta1" in want:
            d["beta1"] = b1 * (g1 * g1 * (p + q) - num * (2 * p / D1 + 2 * q / D2)) * inv
        if "beta2" in want:
            d["beta2"] = b2 * (2 * g2 * g2 * b2 - num * (2 * b2 / D1 + 2 * b2 / D2)) * inv
    return out, d


def _r1_terms(eta, omega, want):
    b1, b2, g1, g2 = _require(eta, FAMILY_PARAMS["R1"])
    w = np.asarray(omega, dtype=float)
    gamma, dg = _r1_block(b1, b2, g1, g2, w, w, want)
    rel, dr = _r1_block(b1, b2, g1, g2, w, -w, want)
    return gamma, rel, {k: (dg[k], dr[k]) for k in dg}


def _check_frf(family, eta, x):
    vals = dict(zip(FAMILY_PARAMS[family], _require(eta, FAMILY_PARAMS[family])))
    if family in ("DP", "DPpR1"):
        bound = dp_bound(x)
        if min(vals["alpha_G"], vals["beta_G"]) < 0:
            raise InvalidArgument("DP scales must be non-negative")
        for name in ("lam", "kap"):
            if not 0 <= vals[name] < bound:
                raise InvalidArgument(f"DP {name}={vals[name]} outside the convergence range [0, {bound})")
    if family in ("DC", "DCpR1"):
        if vals["dc_lambda"] < 0 or vals["dc_alpha"] <= 0 or vals["dc_beta"] <= 0:
            raise InvalidArgument("DC needs lambda >= 0, alpha > 0, beta > 0")
    if family in ("R1", "DCpR1", "DPpR1"):
        if vals["beta1"] <= 0 or min(vals["beta2"], vals["gamma1"], vals["gamma2"]) < 0:
            raise InvalidArgument("R1 needs beta1 > 0 and beta2, gamma1, gamma2 >= 0")


def frf_terms(family: str, eta: dict, omega: np.ndarray, x: np.ndarray, want: Iterable[str] = ()):
    """(Gamma_G, C_G, {name: (dGamma, dC)}) with derivatives taken w.r.t. log(name)."""
    want = set(want)
    if family == "DP":
        return _dp_terms(eta, x, want)
    if family == "DC":
        return _dc_terms(eta, omega, want)
    if family == "R1":
        return _r1_terms(eta, omega, want)
    if family in ("DCpR1", "DPpR1"):
        first = _dc_terms(eta, omega, want) if family == "DCpR1" else _dp_terms(eta, x, want)
        res = _r1_terms(eta, omega, want)
        return first[0] + res[0], first[1] + res[1], {**first[2], **res[2]}
    raise InvalidArgument(f"{family} is not an FRF-space family")


def dp_kernel(spec: KernelSpec, x: np.ndarray) -> AugmentedKernel:
    """Closed-form dot-product kernel on scaled offsets ``x``."""
    x = np.asarray(x, dtype=float)
    _check_frf("DP", spec.eta, x)
    g, c, _ = _dp_terms(spec.eta, x, ())
    return AugmentedKernel(g, c)


def dc_kernel(spec: KernelSpec, omega: np.ndarray) -> AugmentedKernel:
    _check_frf("DC", spec.eta, None)
    g, c, _ = _dc_terms(spec.eta, omega, ())
    return AugmentedKernel(g, c)


def r1_kernel(spec: KernelSpec, omega: np.ndarray) -> AugmentedKernel:
    _check_frf("R1", spec.eta, None)
    g, c, _ = _r1_terms(spec.eta, omega, ())
    return AugmentedKernel(g, c)


def frf_kernel(spec: KernelSpec, omega: np.ndarray, x: np.ndarray) -> AugmentedKernel:
    _check_frf(spec.family, spec.eta, np.asarray(x, dtype=float))
    g, c, _ = frf_terms(spec.family, spec.eta, omega, x)
    return AugmentedKernel(g, c)


def composite(spec: KernelSpec, omega: np.ndarray, x: np.ndarray):
    """(M_G, M_T) for an FRF-space family, with M_T = c_T * M_G."""
    if spec.family not in FRF_FAMILIES:
        raise InvalidArgument(f"{spec.family} is not an FRF-space family")
    MG = frf_kernel(spec, omega, x)
    return MG, MG.scaled(spec.c_T)


# -- default tuning ranges ----------------------------------------------

def default_bounds(family: str, window: LocalWindow, alpha: Optional[float] = None) -> dict:
    """Data-scaled hyperparameter ranges for one window (c_T and sigma2 included)."""
    x = window.scaled(alpha)
    py = float(np.mean(np.abs(window.Y) ** 2))
    pu = float(np.mean(np.abs(window.U) ** 2))
    py = py if py > 0 else 1.0
    g2 = py / pu if pu > 0 else py
    step = window.freq_step
    span = max(float(window.omega[-1] - window.omega[0]), step)
    out = {"sigma2": (1e-12 * py, 1e4 * py), "c_T": (1e-6, 1e6)}
    if family == "DI":
        ub = di_bound(x) * (1 - DP_MARGIN)
        ub = 1.0 if math.isinf(ub) else ub
        out.update(alpha_G=(1e-8 * g2, 1e4 * g2), beta_G=(1e-8 * g2, 1e4 * g2),
                   alpha_T=(1e-8 * py, 1e4 * py), lam=(1e-6 * ub, ub), kap=(1e-6 * ub, ub))
        del out["c_T"]
        return out
    if family in ("DP", "DPpR1"):
        ub = dp_bound(x) * (1 - DP_MARGIN)
        ub = 1.0 if math.isinf(ub) else ub
        out.update(alpha_G=(1e-8 * g2, 1e4 * g2), beta_G=(1e-8 * g2, 1e4 * g2),
                   lam=(1e-6 * ub, ub), kap=(1e-6 * ub, ub))
    if family in ("DC", "DCpR1"):
        out.update(dc_lambda=(1e-8 * g2, 1e8 * g2), dc_alpha=(1e-4, 1e2), dc_beta=(1e-4, 1e2))
    if family in ("R1", "DCpR1", "DPpR1"):
        lo_w = max(float(window.omega[0]) - step, 1e-3 * step)
        hi_w = float(window.omega[-1]) + step
        gscale = math.sqrt(g2) * span
        out.update(beta1=(1e-3 * step, 2 * span), beta2=(lo_w, hi_w),
                   gamma1=(1e-8 * gscale, 1e3 * gscale), gamma2=(1e-8 * gscale, 1e3 * gscale))
    if family not in FAMILY_PARAMS:
        raise InvalidArgument(f"unknown kernel family {family!r}")
    return out
