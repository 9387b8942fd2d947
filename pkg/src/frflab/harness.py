"""Benchmark orchestration: scenario x method x replicate grids, the MSE
figure of merit, summary tables and per-bin plot data.

Every cell regenerates its record from a seed derived from (base_seed,
scenario index, replicate index), so cells are independent and can run in a
process pool in any order. Results are assembled in configuration order and
all files are written atomically.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FrfLabError, InvalidArgument
from .estimate import FrfEstimate
from .localwin import band_bins
from .methods import METHODS, canonical, run_method
from .spectra import ExperimentConfig, SpectraRecord, default_system, simulate

log = logging.getLogger(__name__)

THREADS_ENV = "FRF_LAB_THREADS"
DESCENT_TOL = 1e-12
SUMMARY_COLUMNS = ("scenario", "N", "P", "ell", "snr_db", "method", "replicates", "mse_db_mean",
                   "mse_db_std", "mse_db_min", "mse_db_max", "failed_bins", "status")
PERBIN_COLUMNS = ("replicate", "seed", "k", "omega", "abs_err", "re_Ghat", "im_Ghat", "sigma2_hat",
                  "sigma2_true", "loe", "loe_start", "failed")


class OutputError(FrfLabError):
    """The output directory cannot be created or written."""


@dataclass(frozen=True)
class Scenario:
    N: int
    P: int
    ell: int
    snr_db: float

    @property
    def label(self) -> str:
        return f"N{self.N}_P{self.P}_l{self.ell}_snr{_fmt_num(self.snr_db)}"


@dataclass
class RunConfig:
    scenarios: list
    methods: list
    replicates: int = 1
    base_seed: int = 0
    output_dir: Optional[str] = None
    Ts: float = 0.1
    excited_fraction: float = 0.4
    warmup_periods: int = 10
    starts: Optional[int] = None
    omega_max: float = 2 * math.pi

    def __post_init__(self):
        self.scenarios = [s if isinstance(s, Scenario) else Scenario(**_scenario_fields(s)) for s in self.scenarios]
        self.methods = [canonical(m) for m in self.methods]
        if not self.scenarios:
            raise InvalidArgument("at least one scenario is required")
        if not self.methods:
            raise InvalidArgument("at least one method is required")
        if len(set(self.methods)) != len(self.methods):
            raise InvalidArgument("duplicate method in config")
        if int(self.replicates) < 1:
            raise InvalidArgument("replicates must be at least 1")
        self.replicates = int(self.replicates)
        for s in self.scenarios:
            exp = self.experiment(s, 0)
            n_exc = int(np.count_nonzero(simulate_mask(exp)))
            if not 2 * s.ell + 1 < n_exc:
                raise InvalidArgument(f"window 2*{s.ell}+1 is not smaller than the {n_exc} excited bins")

    def experiment(self, scenario: Scenario, seed: int) -> ExperimentConfig:
        return ExperimentConfig(N=scenario.N, Ts=self.Ts, P=scenario.P, excited_fraction=self.excited_fraction,
                                snr_db=scenario.snr_db, warmup_periods=self.warmup_periods, seed=seed)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["scenarios"] = [asdict(s) for s in self.scenarios]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InvalidArgument(f"unknown config fields {sorted(unknown)}")
        if "scenarios" not in doc or "methods" not in doc:
            raise InvalidArgument("config needs 'scenarios' and 'methods'")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgument(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise InvalidArgument("config must be a JSON object")
        return cls.from_dict(doc)


def _scenario_fields(doc) -> dict:
    if isinstance(doc, (list, tuple)):
        doc = dict(zip(("N", "P", "ell", "snr_db"), doc))
    try:
        return {"N": int(doc["N"]), "P": int(doc["P"]), "ell": int(doc["ell"]), "snr_db": float(doc["snr_db"])}
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"bad scenario {doc!r}: needs N, P, ell, snr_db") from exc


def simulate_mask(exp: ExperimentConfig) -> np.ndarray:
    """Excited-bin mask of a record generated from ``exp``, without simulating it."""
    kk = np.arange(exp.N // 2 + 1)
    omega = 2 * math.pi * kk / (exp.N * exp.Ts)
    return (kk >= 1) & (omega <= exp.max_excited_omega * (1 + 1e-12))


def cell_seed(base_seed: int, scenario_index: int, replicate: int) -> int:
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFF, int(scenario_index), int(replicate)])
    return int(ss.generate_state(1)[0])


# -- figure of merit ------------------------------------------------------

def mse_db(estimate: FrfEstimate, record: SpectraRecord, band=None) -> float:
    """10*log10 of the mean squared FRF error over ``band`` (default: excited bins below 2*pi rad/s).

    Returns -inf when the error is exactly zero; failed or missing bins give NaN.
    """
    if not record.has_truth:
        raise InvalidArgument("record has no ground-truth FRF")
    band = band_bins(record) if band is None else np.asarray(band, dtype=int)
    if band.size == 0:
        raise InvalidArgument("evaluation band is empty")
    pos = {int(k): j for j, k in enumerate(estimate.k)}
    missing = [int(k) for k in band if int(k) not in pos]
    if missing:
        raise InvalidArgument(f"estimate lacks bins {missing[:5]}")
    idx = np.array([pos[int(k)] for k in band])
    err = np.abs(estimate.G[idx] - record.G_true[band]) ** 2
    total = float(np.mean(err))
    if math.isnan(total):
        return math.nan
    return -math.inf if total == 0.0 else 10.0 * math.log10(total)


# -- results --------------------------------------------------------------

@dataclass
class CellResult:
    scenario: int
    method: str
    replicate: int
    seed: int
    mse_db: float
    estimate: Optional[FrfEstimate] = None
    sigma2_true: Optional[np.ndarray] = None
    abs_err: Optional[np.ndarray] = None
    error: Optional[str] = None

    @property
    def failed_bins(self) -> int:
        return 0 if self.estimate is None else len(self.estimate.failed)


@dataclass
class ResultTable:
    config: RunConfig
    cells: list = field(default_factory=list)

    def cell(self, scenario: int, method: str) -> list:
        method = canonical(method)
        return sorted((c for c in self.cells if c.scenario == scenario and c.method == method),
                      key=lambda c: c.replicate)

    def mse(self, scenario: int, method: str) -> np.ndarray:
        return np.array([c.mse_db for c in self.cell(scenario, method)], dtype=float)

    def mean_mse(self, scenario: int, method: str) -> float:
        values = self.mse(scenario, method)
        return float(np.mean(values)) if values.size else math.nan

    @property
    def partial(self) -> bool:
        return any(c.error is not None or c.failed_bins for c in self.cells)

    def descent_violations(self) -> list:
        """(scenario, replicate, bin, excess) where ILRM raised the output error above its LRM start."""
        out = []
        for c in self.cells:
            if c.method != "ILRM(MDL)" or c.estimate is None:
                continue
            for k, det in zip(c.estimate.k, c.estimate.detail):
                if "loe" in det and "loe_start" in det:
                    excess = det["loe"] - det["loe_start"]
                    if excess > DESCENT_TOL:
                        out.append((c.scenario, c.replicate, int(k), excess))
        return out

    def rows(self) -> list:
        rows = []
        for si, s in enumerate(self.config.scenarios):
            for m in self.config.methods:
                cells = self.cell(si, m)
                values = np.array([c.mse_db for c in cells], dtype=float)
                errors = [f"replicate {c.replicate}: {c.error}" for c in cells if c.error]
                failed = sum(c.failed_bins for c in cells)
                finite = values[~np.isnan(values)]
                if errors:
                    status = "failed: " + "; ".join(errors)
                elif failed:
                    status = f"partial: {failed} bins failed"
                else:
                    status = "ok"
                stats = _stats(finite)
                rows.append({"scenario": s.label, "N": s.N, "P": s.P, "ell": s.ell, "snr_db": s.snr_db,
                             "method": m, "replicates": len(cells), **stats, "failed_bins": failed,
                             "status": status})
        return rows

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in self.rows():
            w.writerow([_fmt_num(r[c]) if isinstance(r[c], float) else r[c] for c in SUMMARY_COLUMNS])
        return buf.getvalue()

    def summary_json(self) -> str:
        doc = {
            "config": self.config.to_dict(),
            "rows": [{k: _json_num(v) for k, v in r.items()} for r in self.rows()],
            "replicates": [
                {"scenario": self.config.scenarios[c.scenario].label, "method": c.method,
                 "replicate": c.replicate, "seed": c.seed, "mse_db": _json_num(c.mse_db),
                 "failed_bins": c.failed_bins, "error": c.error}
                for c in sorted(self.cells, key=_cell_key(self.config))
            ],
            "ilrm_descent_violations": [list(v) for v in self.descent_violations()],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def perbin_csv(self, scenario: int, method: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PERBIN_COLUMNS)
        for c in self.cell(scenario, method):
            if c.estimate is None:
                continue
            est = c.estimate
            for j, k in enumerate(est.k):
                det = est.detail[j] if j < len(est.detail) else {}
                s2t = c.sigma2_true[j] if c.sigma2_true is not None else math.nan
                err = c.abs_err[j] if c.abs_err is not None else math.nan
                w.writerow([c.replicate, c.seed, int(k), _fmt_num(est.omega[j]), _fmt_num(err),
                            _fmt_num(est.G[j].real), _fmt_num(est.G[j].imag), _fmt_num(est.sigma2[j]),
                            _fmt_num(s2t), _fmt_num(det.get("loe", math.nan)),
                            _fmt_num(det.get("loe_start", math.nan)), est.failed.get(int(k), "")])
        return buf.getvalue()


def _cell_key(config: RunConfig):
    order = {m: i for i, m in enumerate(config.methods)}
    return lambda c: (c.scenario, order[c.method], c.replicate)


def _stats(values: np.ndarray) -> dict:
    if values.size == 0:
        return {"mse_db_mean": math.nan, "mse_db_std": math.nan, "mse_db_min": math.nan, "mse_db_max": math.nan}
    with np.errstate(invalid="ignore"):
        std = float(np.std(values)) if np.all(np.isfinite(values)) else math.nan
    return {"mse_db_mean": float(np.mean(values)), "mse_db_std": std,
            "mse_db_min": float(np.min(values)), "mse_db_max": float(np.max(values))}


def _fmt_num(v) -> str:
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return repr(v)


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return _fmt_num(v)
    return v


# -- execution ------------------------------------------------------------

def worker_count(n_tasks: int) -> int:
    """Pool size: FRF_LAB_THREADS if set, else the CPU count, never above the task count."""
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise InvalidArgument(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if cap < 1:
            raise InvalidArgument(f"{THREADS_ENV} must be at least 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def make_record(config: RunConfig, scenario: int, replicate: int) -> tuple:
    seed = cell_seed(config.base_seed, scenario, replicate)
    exp = config.experiment(config.scenarios[scenario], seed)
    return simulate(default_system(config.Ts), exp), seed


def run_cell(config: RunConfig, scenario: int, method: str, replicate: int) -> CellResult:
    """One (scenario, method, replicate) cell; errors are captured, never raised."""
    s = config.scenarios[scenario]
    try:
        record, seed = make_record(config, scenario, replicate)
    except FrfLabError as exc:
        return CellResult(scenario, method, replicate, -1, math.nan, error=f"{type(exc).__name__}: {exc}")
    band = band_bins(record, config.omega_max)
    try:
        est = run_method(method, record, s.ell, bins=band, seed=seed, starts=config.starts)
        value = mse_db(est, record, band)
    except FrfLabError as exc:
        return CellResult(scenario, method, replicate, seed, math.nan, error=f"{type(exc).__name__}: {exc}")
    return CellResult(scenario, method, replicate, seed, value, estimate=est,
                      sigma2_true=record.sigma2_true[band], abs_err=np.abs(est.G - record.G_true[band]))


def _run_cell_args(args):
    return run_cell(*args)


def _init_worker():
    # one BLAS thread per worker process
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:  # pragma: no cover
        pass


def prepare_output(path) -> Path:
    """Create ``path`` and check it is writable; raises OutputError."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out, prefix=".probe-", delete=True):
            pass
    except OSError as exc:
        raise OutputError(f"output directory {out} is not writable: {exc}") from exc
    return out


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(config: RunConfig, output_dir=None, workers: Optional[int] = None) -> ResultTable:
    """Run every cell of ``config`` and, when an output directory is given, write
    summary.csv, summary.json and perbin/<scenario>__<method>.csv."""
    target = output_dir if output_dir is not None else config.output_dir
    out = prepare_output(target) if target is not None else None
    tasks = [(config, si, m, r) for si in range(len(config.scenarios)) for m in config.methods
             for r in range(config.replicates)]
    n_workers = worker_count(len(tasks)) if workers is None else max(1, min(int(workers), len(tasks)))
    log.info("running %d cells on %d workers", len(tasks), n_workers)
    if n_workers == 1:
        cells = [_run_cell_args(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_workers, initializer=_init_worker) as pool:
            cells = list(pool.map(_run_cell_args, tasks, chunksize=1))
    table = ResultTable(config=config, cells=sorted(cells, key=_cell_key(config)))
    for c in table.cells:
        if c.error:
            log.warning("cell %s / %s / replicate %d failed: %s",
                        config.scenarios[c.scenario].label, c.method, c.replicate, c.error)
    if out is not None:
        write_results(table, out)
    return table


def perbin_name(scenario: Scenario, method: str) -> str:
    safe = method.replace("(", "_").replace(")", "")
    return f"{scenario.label}__{safe}.csv"


def write_results(table: ResultTable, out) -> None:
    out = Path(out)
    atomic_write(out / "summary.csv", table.summary_csv())
    atomic_write(out / "summary.json", table.summary_json())
    perbin = out / "perbin"
    perbin.mkdir(exist_ok=True)
    for si, s in enumerate(table.config.scenarios):
        for m in table.config.methods:
            atomic_write(perbin / perbin_name(s, m), table.perbin_csv(si, m))


def generate(config: RunConfig, output_dir=None) -> list:
    """Write the spectra records of every (scenario, replicate) without estimating anything."""
    target = output_dir if output_dir is not None else config.output_dir
    if target is None:
        raise InvalidArgument("no output directory given")
    out = prepare_output(target)
    paths = []
    for si, s in enumerate(config.scenarios):
        folder = out / s.label
        folder.mkdir(exist_ok=True)
        for r in range(config.replicates):
            record, seed = make_record(config, si, r)
            path = folder / f"replicate_{r:03d}.csv"
            buf_path = folder / f".replicate_{r:03d}.csv.tmp"
            record.to_csv(buf_path)
            os.replace(buf_path, path)
            paths.append(path)
    atomic_write(out / "config.json", json.dumps(config.to_dict(), indent=2, sort_keys=True))
    return paths


__all__ = ["METHODS", "CellResult", "OutputError", "ResultTable", "RunConfig", "Scenario", "atomic_write",
           "cell_seed", "generate", "mse_db", "run", "run_cell", "worker_count", "write_results"]
