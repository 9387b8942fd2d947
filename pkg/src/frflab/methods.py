"""Named estimators as used by the benchmark and the command line.

Every method maps a record to an FrfEstimate over a set of bins. Names follow
the benchmark tables, e.g. ``LPM(2)``, ``ILRM(MDL)``, ``LGPR(DPpR1)``; the
dashed spelling ``LGPR-DPpR1`` is accepted as well.
"""

from __future__ import annotations

import logging
import re
from typing import Optional, Sequence

import numpy as np

from . import classic, lgpr
from .errors import FrfLabError, InvalidArgument
from .estimate import FrfEstimate
from .kernels import KernelSpec
from .localwin import extract_window
from .spectra import SpectraRecord

log = logging.getLogger(__name__)

METHODS = ("LPM(2)", "LPM(MDL)", "LRM(2)", "LRM(MDL)", "ILRM(MDL)", "LRPM(DI)",
           "LGPR(DP)", "LGPR(DC)", "LGPR(DCpR1)", "LGPR(DPpR1)")
FIXED_ORDER = 2
MDL_GRID = (0, 1, 2, 3, 4)

_BY_KEY = {m.upper(): m for m in METHODS}


def canonical(name: str) -> str:
    """Table spelling of a method name; raises InvalidArgument if unknown."""
    text = str(name).strip()
    m = re.fullmatch(r"([A-Za-z]+)\s*[-(]\s*([A-Za-z0-9]+)\s*\)?", text)
    key = f"{m.group(1)}({m.group(2)})".upper() if m else text.upper()
    if key not in _BY_KEY:
        raise InvalidArgument(f"unknown method {name!r}; expected one of {', '.join(METHODS)}")
    return _BY_KEY[key]


def _classic_fit(window, method: str, alpha):
    if method == "LPM(2)":
        return classic.lpm_fit(window, FIXED_ORDER, FIXED_ORDER, alpha), None
    if method == "LRM(2)":
        return classic.lrm_fit(window, FIXED_ORDER, FIXED_ORDER, FIXED_ORDER, alpha), None
    if method == "LPM(MDL)":
        return classic.mdl_select(window, MDL_GRID, "LPM", alpha).fit, None
    start = classic.mdl_select(window, MDL_GRID, "LRM", alpha).fit
    if method == "LRM(MDL)":
        return start, None
    return classic.ilrm_fit(window, start, alpha=alpha), start


def _fit_detail(fit, start) -> dict:
    det = {"orders": list(fit.orders), "loe": fit.loe, "criterion": fit.criterion, "rank": fit.rank,
           "pole_in_window": fit.pole_in_window}
    if start is not None:
        det.update(loe_start=start.loe, iterations=fit.iterations, improved=fit.improved)
    return det


def classic_estimate(record: SpectraRecord, ell: int, method: str, bins=None, alpha=None) -> FrfEstimate:
    """LPM, LRM or ILRM over ``bins`` (all excited bins by default)."""
    method = canonical(method)
    if bins is None:
        lo, hi = record.excited_band()
        bins = np.arange(lo, hi + 1)
    bins = np.asarray(bins, dtype=int)
    G = np.full(bins.size, np.nan, dtype=complex)
    T = np.full(bins.size, np.nan, dtype=complex)
    s2 = np.full(bins.size, np.nan)
    detail, failed = [], {}
    for j, k in enumerate(bins):
        try:
            fit, start = _classic_fit(extract_window(record, int(k), ell), method, alpha)
        except (FrfLabError, np.linalg.LinAlgError) as exc:
            failed[int(k)] = f"{type(exc).__name__}: {exc}"
            detail.append({})
            continue
        G[j], T[j], s2[j] = fit.G, fit.T, fit.sigma2
        detail.append(_fit_detail(fit, start))
    return FrfEstimate(method=method, k=bins, omega=record.omega[bins], G=G, T=T, sigma2=s2,
                       detail=detail, failed=failed)


def run_method(name: str, record: SpectraRecord, ell: int, bins: Optional[Sequence[int]] = None,
               seed: int = 0, starts: Optional[int] = None, alpha: Optional[float] = None) -> FrfEstimate:
    """Run one named method on ``record``."""
    method = canonical(name)
    if 2 * ell + 1 > int(np.count_nonzero(record.excited)):
        raise InvalidArgument(f"window of {2 * ell + 1} bins exceeds the excited band")
    log.debug("running %s on %d bins", method, record.omega.size if bins is None else len(bins))
    if method.startswith(("LPM", "LRM", "ILRM")):
        return classic_estimate(record, ell, method, bins, alpha)
    if method == "LRPM(DI)":
        return lgpr.lrpm_estimate(record, ell, alpha=alpha, bins=bins, starts=starts, seed=seed)
    family = method[len("LGPR("):-1]
    return lgpr.lgpr_estimate(record, ell, KernelSpec(family), alpha=alpha, bins=bins, starts=starts, seed=seed)
