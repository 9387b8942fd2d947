"""Synthetic experiments: multisine excitation, lightly damped test systems,
calibrated output noise and the frequency-domain records built from them.

A record holds the unitary N-point DFT of the last N samples of a long
periodic run. When N is smaller than the multisine period the retained
window is not periodic, so the output spectrum carries a leakage term on top
of G(k) U(k).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate, signal

from .errors import InvalidArgument, UnstableSystem

CSV_COLUMNS = (
    "k", "omega", "re_U", "im_U", "re_Y", "im_Y",
    "re_Gtrue", "im_Gtrue", "sigma2_true", "excited",
)


@dataclass(frozen=True)
class ExperimentConfig:
    N: int = 2500
    Ts: float = 0.1
    P: int = 3100
    excited_fraction: float = 0.4
    snr_db: float = 60.0
    warmup_periods: int = 10
    seed: int = 0

    def __post_init__(self):
        if int(self.N) < 1 or int(self.P) < 1:
            raise InvalidArgument("N and P must be positive")
        if self.N > self.P:
            raise InvalidArgument(f"N={self.N} exceeds the multisine period P={self.P}")
        if not self.Ts > 0:
            raise InvalidArgument("sampling interval must be positive")
        if not 0.0 < self.excited_fraction <= 1.0:
            raise InvalidArgument("excited_fraction must lie in (0, 1]")
        if int(self.warmup_periods) < 1:
            raise InvalidArgument("warmup_periods must be a positive integer")

    @property
    def max_excited_omega(self) -> float:
        return self.excited_fraction * math.pi / self.Ts

    def child_seeds(self) -> list[np.random.SeedSequence]:
        """Independent streams for the multisine phases and the noise."""
        return np.random.SeedSequence(int(self.seed)).spawn(2)


def _prewarped_mode(wn: float, zeta: float, gain: float, Ts: float):
    """Bilinear discretization of gain*wn^2/(s^2 + 2 zeta wn s + wn^2),
    prewarped so the discrete resonance sits exactly at wn."""
    if not 0 < wn * Ts / 2 < math.pi / 2:
        raise InvalidArgument(f"natural frequency {wn} is above the Nyquist frequency")
    c = wn / math.tan(wn * Ts / 2)
    den = np.array([
        c * c + 2 * zeta * wn * c + wn * wn,
        2 * (wn * wn - c * c),
        c * c - 2 * zeta * wn * c + wn * wn,
    ])
    num = gain * wn * wn * np.array([1.0, 2.0, 1.0])
    return num / den[0], den / den[0]


@dataclass(frozen=True)
class TestSystem:
    """Parallel connection of second-order modes, discretized per mode.

    ``modes`` holds ``(natural frequency [rad/s], damping ratio, DC gain)``.
    ``feedthrough`` adds a static gain path (a pure gain system has no modes).
    """

    __test__ = False  # not a pytest class

    modes: tuple = ((1.5, 0.005, 1.0), (3.0, 0.003, 1.0), (5.0, 0.008, 1.0))
    Ts: float = 0.1
    feedthrough: float = 0.0
    sections: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sections = []
        for wn, zeta, gain in self.modes:
            b, a = _prewarped_mode(float(wn), float(zeta), float(gain), self.Ts)
            if np.any(np.abs(np.roots(a)) >= 1.0):
                raise UnstableSystem(f"mode (wn={wn}, zeta={zeta}) is not stable after discretization")
            sections.append((b, a))
        object.__setattr__(self, "modes", tuple(tuple(float(v) for v in m) for m in self.modes))
        object.__setattr__(self, "sections", tuple(sections))

    @property
    def slowest_time_constant(self) -> float:
        if not self.modes:
            return 0.0
        return max(1.0 / (zeta * wn) for wn, zeta, _ in self.modes)

    def frf(self, omega) -> np.ndarray:
        """Discrete transfer function evaluated at exp(j omega Ts)."""
        zinv = np.exp(-1j * np.asarray(omega, dtype=float) * self.Ts)
        out = np.full(zinv.shape, self.feedthrough, dtype=complex)
        for b, a in self.sections:
            out += np.polyval(b[::-1], zinv) / np.polyval(a[::-1], zinv)
        return out

    def response(self, u: np.ndarray) -> np.ndarray:
        """Zero-initial-state response to ``u``."""
        y = self.feedthrough * u
        for b, a in self.sections:
            y = y + signal.lfilter(b, a, u)
        return y


def default_system(Ts: float = 0.1) -> TestSystem:
    return TestSystem(Ts=Ts)


@dataclass
class SpectraRecord:
    """Per-bin input/output spectra on k = 0..floor(N/2), with optional ground truth."""

    omega: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    excited: np.ndarray
    G_true: Optional[np.ndarray] = None
    sigma2_true: Optional[np.ndarray] = None
    N: Optional[int] = None
    Ts: Optional[float] = None

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.U = np.asarray(self.U, dtype=complex)
        self.Y = np.asarray(self.Y, dtype=complex)
        self.excited = np.asarray(self.excited, dtype=bool)
        n = self.omega.size
        if not (self.U.size == self.Y.size == self.excited.size == n):
            raise InvalidArgument("record columns have inconsistent lengths")
        if self.G_true is not None:
            self.G_true = np.asarray(self.G_true, dtype=complex)
        if self.sigma2_true is not None:
            self.sigma2_true = np.asarray(self.sigma2_true, dtype=float)

    @property
    def k(self) -> np.ndarray:
        return np.arange(self.omega.size)

    @property
    def has_truth(self) -> bool:
        return self.G_true is not None

    @property
    def freq_step(self) -> float:
        """Bin spacing 2*pi/(N*Ts) in rad/s."""
        if self.N is not None and self.Ts is not None:
            return 2 * math.pi / (self.N * self.Ts)
        return float(self.omega[1] - self.omega[0])

    def excited_band(self) -> tuple[int, int]:
        idx = np.flatnonzero(self.excited)
        if idx.size == 0:
            raise InvalidArgument("record has no excited bins")
        return int(idx[0]), int(idx[-1])

    # -- serialization -------------------------------------------------
    def _columns(self) -> dict:
        cols = {
            "k": self.k,
            "omega": self.omega,
            "re_U": self.U.real, "im_U": self.U.imag,
            "re_Y": self.Y.real, "im_Y": self.Y.imag,
        }
        if self.G_true is not None:
            cols["re_Gtrue"] = self.G_true.real
            cols["im_Gtrue"] = self.G_true.imag
        if self.sigma2_true is not None:
            cols["sigma2_true"] = self.sigma2_true
        cols["excited"] = self.excited.astype(int)
        return cols

    def to_csv(self, path) -> None:
        cols = self._columns()
        names = [c for c in CSV_COLUMNS if c in cols]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for i in range(self.omega.size):
                w.writerow([_fmt(cols[c][i]) for c in names])

    def to_json(self, path=None) -> str:
        cols = {name: [_jsonable(v) for v in vals] for name, vals in self._columns().items()}
        doc = json.dumps({"N": self.N, "Ts": self.Ts, "bins": cols})
        if path is not None:
            Path(path).write_text(doc)
        return doc

    @classmethod
    def from_columns(cls, cols: dict, N=None, Ts=None) -> "SpectraRecord":
        missing = {"omega", "re_U", "im_U", "re_Y", "im_Y"} - set(cols)
        if missing:
            raise InvalidArgument(f"record is missing columns {sorted(missing)}")
        arr = {k: np.asarray(v, dtype=float) for k, v in cols.items()}
        omega = arr["omega"]
        if "k" in arr and arr["k"].size and arr["k"][0] != 0:
            raise InvalidArgument("records must start at bin k=0")
        G = None
        if "re_Gtrue" in arr and "im_Gtrue" in arr and not np.isnan(arr["re_Gtrue"]).all():
            G = arr["re_Gtrue"] + 1j * arr["im_Gtrue"]
        s2 = arr.get("sigma2_true")
        if s2 is not None and np.isnan(s2).all():
            s2 = None
        excited = arr["excited"].astype(bool) if "excited" in arr else np.arange(omega.size) > 0
        return cls(omega=omega, U=arr["re_U"] + 1j * arr["im_U"], Y=arr["re_Y"] + 1j * arr["im_Y"],
                   excited=excited, G_true=G, sigma2_true=s2, N=N, Ts=Ts)

    @classmethod
    def from_csv(cls, path) -> "SpectraRecord":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InvalidArgument(f"{path} is empty")
        header = [h.strip() for h in rows[0]]
        cols = {h: [] for h in header}
        for row in rows[1:]:
            if not row:
                continue
            for h, v in zip(header, row):
                v = v.strip()
                cols[h].append(float(v) if v else math.nan)
        return cls.from_columns(cols)

    @classmethod
    def from_json(cls, text_or_path) -> "SpectraRecord":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text()
        doc = json.loads(text)
        cols = {k: [math.nan if v is None else v for v in vals] for k, vals in doc["bins"].items()}
        return cls.from_columns(cols, N=doc.get("N"), Ts=doc.get("Ts"))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _jsonable(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(v)


def dft(x) -> np.ndarray:
    """Unitary N-point DFT, X(k) = N**-0.5 * sum_n x(n) exp(-2j pi n k / N)."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgument("dft needs a non-empty 1-D sequence")
    return np.fft.fft(x) / math.sqrt(x.size)


def excited_bins(period: int, excited_fraction: float) -> np.ndarray:
    """Bins 1..floor(fraction*period/2) of a period-``period`` DFT."""
    top = int(math.floor(excited_fraction * (period / 2) + 1e-9))
    if top < 1:
        raise InvalidArgument("excited_fraction leaves no excited bin")
    return np.arange(1, top + 1)


def multisine(config: ExperimentConfig) -> np.ndarray:
    """One period of an equal-amplitude random-phase multisine with unit RMS."""
    lines = excited_bins(config.P, config.excited_fraction)
    rng = np.random.default_rng(config.child_seeds()[0])
    spectrum = np.zeros(config.P // 2 + 1, dtype=complex)
    spectrum[lines] = np.exp(2j * math.pi * rng.random(lines.size))
    u = np.fft.irfft(spectrum, n=config.P)
    return u / math.sqrt(np.mean(u * u))


def simulate(system: TestSystem, config: ExperimentConfig, noise_filter=None) -> SpectraRecord:
    """Run ``warmup_periods`` periods plus N samples, keep the last N samples.

    ``noise_filter`` is an optional ``(b, a)`` pair colouring the disturbance;
    the per-bin true variance then follows |H|^2.
    """
    if not math.isclose(system.Ts, config.Ts):
        raise InvalidArgument("system and experiment use different sampling intervals")
    for _, a in system.sections:
        if np.any(np.abs(np.roots(a)) >= 1.0):
            raise UnstableSystem("test system is unstable")
    N, P = config.N, config.P
    total = config.warmup_periods * P + N
    u_period = multisine(config)
    u = np.tile(u_period, total // P + 1)[:total]
    y_clean = system.response(u)[-N:]
    u = u[-N:]

    kk = np.arange(N // 2 + 1)
    omega = 2 * math.pi * kk / (N * config.Ts)
    excited = (kk >= 1) & (omega <= config.max_excited_omega * (1 + 1e-12))

    if math.isinf(config.snr_db) and config.snr_db > 0:
        noise_var = 0.0
        v = np.zeros(N)
    else:
        noise_var = float(np.var(y_clean)) / 10 ** (config.snr_db / 10)
        rng = np.random.default_rng(config.child_seeds()[1])
        if noise_filter is None:
            v = rng.normal(0.0, math.sqrt(noise_var), total)[-N:]
        else:
            b, a = noise_filter
            grid = np.linspace(0, math.pi, 4097)
            _, h = signal.freqz(b, a, worN=grid)
            power = integrate.trapezoid(np.abs(h) ** 2, grid) / math.pi
            e = rng.normal(0.0, math.sqrt(noise_var / power), total)
            v = signal.lfilter(b, a, e)[-N:]

    if noise_filter is None:
        sigma2 = np.full(kk.size, noise_var)
    else:
        b, a = noise_filter
        _, h = signal.freqz(b, a, worN=omega * config.Ts)
        sigma2 = np.abs(h) ** 2 * noise_var / power

    U = dft(u)[: kk.size]
    Y = dft(y_clean + v)[: kk.size]
    return SpectraRecord(omega=omega, U=U, Y=Y, excited=excited,
                         G_true=system.frf(omega), sigma2_true=sigma2, N=N, Ts=config.Ts)


def replicate_seeds(base_seed: int, count: int) -> list[int]:
    """Deterministic per-replicate seeds derived from one base seed."""
    children = np.random.SeedSequence(int(base_seed)).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]
