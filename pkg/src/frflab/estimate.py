"""Per-bin FRF estimates and their CSV/JSON forms."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("k", "omega", "re_Ghat", "im_Ghat", "re_That", "im_That", "sigma2_hat", "method", "detail")


@dataclass
class FrfEstimate:
    method: str
    k: np.ndarray
    omega: np.ndarray
    G: np.ndarray
    T: np.ndarray
    sigma2: np.ndarray
    detail: list = field(default_factory=list)      # one dict per bin
    failed: dict = field(default_factory=dict)      # bin -> reason

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=int)
        self.omega = np.asarray(self.omega, dtype=float)
        self.G = np.asarray(self.G, dtype=complex)
        self.T = np.asarray(self.T, dtype=complex)
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        if not self.detail:
            self.detail = [{} for _ in range(self.k.size)]

    @property
    def ok(self) -> np.ndarray:
        return np.array([int(k) not in self.failed for k in self.k], dtype=bool) & np.isfinite(self.G)

    def to_csv(self, path, trace: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for j in range(self.k.size):
                det = dict(self.detail[j])
                if not trace:
                    det.pop("trace", None)
                if int(self.k[j]) in self.failed:
                    det["failed"] = self.failed[int(self.k[j])]
                w.writerow([int(self.k[j]), _num(self.omega[j]), _num(self.G[j].real), _num(self.G[j].imag),
                            _num(self.T[j].real), _num(self.T[j].imag), _num(self.sigma2[j]), self.method,
                            json.dumps(det, sort_keys=True, default=_plain)])

    def to_dict(self, trace: bool = False) -> dict:
        details = []
        for det in self.detail:
            det = dict(det)
            if not trace:
                det.pop("trace", None)
            details.append(det)
        return {
            "method": self.method,
            "k": self.k.tolist(),
            "omega": self.omega.tolist(),
            "re_Ghat": self.G.real.tolist(), "im_Ghat": self.G.imag.tolist(),
            "re_That": self.T.real.tolist(), "im_That": self.T.imag.tolist(),
            "sigma2_hat": self.sigma2.tolist(),
            "detail": details,
            "failed": {str(k): v for k, v in self.failed.items()},
        }

    def to_json(self, path=None, trace: bool = False) -> str:
        doc = json.dumps(self.to_dict(trace), default=_plain)
        if path is not None:
            Path(path).write_text(doc)
        return doc

    @classmethod
    def from_csv(cls, path) -> "FrfEstimate":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        method = rows[0]["method"] if rows else ""
        details, failed = [], {}
        for r in rows:
            det = json.loads(r["detail"]) if r.get("detail") else {}
            if "failed" in det:
                failed[int(r["k"])] = det.pop("failed")
            details.append(det)
        f = lambda c: np.array([float(r[c]) for r in rows])
        return cls(method=method, k=f("k").astype(int), omega=f("omega"),
                   G=f("re_Ghat") + 1j * f("im_Ghat"), T=f("re_That") + 1j * f("im_That"),
                   sigma2=f("sigma2_hat"), detail=details, failed=failed)


def _num(v) -> str:
    return repr(float(v))


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")
