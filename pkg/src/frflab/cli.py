"""``frf-lab`` command line: generate data, run the benchmark, or estimate
an FRF from a spectra CSV.

Exit codes: 0 success, 2 when some method cells or bins failed, 1 on fatal
errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import FrfLabError
from .harness import RunConfig, generate, mse_db, prepare_output, run
from .localwin import band_bins
from .methods import METHODS, run_method
from .spectra import SpectraRecord

log = logging.getLogger("frflab")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frf-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write synthetic spectra records only")
    g.add_argument("--config", required=True, help="RunConfig JSON file")
    g.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("run", help="run the full benchmark")
    r.add_argument("--config", required=True, help="RunConfig JSON file")
    r.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("estimate", help="run one method on a spectra CSV")
    e.add_argument("--data", required=True, help="spectra CSV (k, omega, re_U, im_U, re_Y, im_Y, ...)")
    e.add_argument("--method", required=True, help=f"one of {', '.join(METHODS)} (dashes accepted)")
    e.add_argument("--ell", required=True, type=int, help="window half-width")
    e.add_argument("--out", required=True, help="output CSV")
    e.add_argument("--seed", type=int, default=0, help="start-point seed for tuned methods")
    e.add_argument("--starts", type=int, default=None, help="multistart count for tuned methods")
    e.add_argument("--omega-max", type=float, default=None, help="only estimate bins below this frequency")
    e.add_argument("--trace", action="store_true", help="embed per-bin tuning traces in the detail column")
    return p


def _cmd_gen(args) -> int:
    config = RunConfig.from_json(args.config)
    paths = generate(config, args.out)
    print(f"wrote {len(paths)} records to {args.out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = RunConfig.from_json(args.config)
    table = run(config, args.out)
    sys.stdout.write(table.summary_csv())
    for v in table.descent_violations():
        log.warning("ILRM raised the output error at scenario %d, replicate %d, bin %d by %.3g", *v)
    return EXIT_PARTIAL if table.partial else EXIT_OK


def _cmd_estimate(args) -> int:
    try:
        record = SpectraRecord.from_csv(args.data)
    except OSError as exc:
        raise FrfLabError(f"cannot read {args.data}: {exc}") from exc
    bins = None
    if args.omega_max is not None:
        bins = band_bins(record, args.omega_max)
    est = run_method(args.method, record, args.ell, bins=bins, seed=args.seed, starts=args.starts)
    prepare_output(Path(args.out).resolve().parent)
    est.to_csv(args.out, trace=args.trace)
    msg = f"{est.method}: {int(np.count_nonzero(est.ok))}/{est.k.size} bins estimated"
    if record.has_truth:
        msg += f", MSE {mse_db(est, record, est.k[est.ok] if est.failed else est.k):.2f} dB"
    print(msg)
    return EXIT_PARTIAL if est.failed else EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"gen": _cmd_gen, "run": _cmd_run, "estimate": _cmd_estimate}
    try:
        return handlers[args.command](args)
    except FrfLabError as exc:
        print(f"frf-lab: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
