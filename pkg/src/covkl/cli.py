"""``covkl`` command line: experiment runs and one-off KL / oracle evaluations."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import divergence as dv
from .harness import ConfigError, build_config, emit_csv, emit_svg, run_experiment
from .harness.config import EXPERIMENTS, dump_config, load_config_file, parse_assignments
from .linalg import EigenDecompositionError, NotSPDError, read_basis_csv, read_matrix_csv
from .optimize import OptimizationError, oracle_frobenius
from .sampling import RngStream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("covkl")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="covkl", description="Frobenius oracle vs. KL-optimal covariance cleaning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a figure experiment and write CSV (and SVG)")
    r.add_argument("--experiment", choices=EXPERIMENTS)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--desk", action="store_true", help="reduced desk-scale defaults")
    r.add_argument("--plot", action="store_true", help="also write an SVG plot")
    r.add_argument("--config", help="flat key = value config file")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--workers", type=int)
    r.add_argument("--timing", action="store_true", help="fill the wall_time_ms column")
    r.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")

    k = sub.add_parser("kl", help="evaluate one KL divergence between two matrix files")
    k.add_argument("--kind", required=True, choices=("gauss", "t-mc", "t-quad", "asym", "h"))
    k.add_argument("--c", required=True, type=Path)
    k.add_argument("--xi", required=True, type=Path)
    k.add_argument("--nu", type=float)
    k.add_argument("--h", type=float)
    k.add_argument("--samples", type=int, default=100_000)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--half-width", type=float, default=100.0)
    k.add_argument("--grid-points", type=int, default=2001)

    o = sub.add_parser("oracle", help="Frobenius oracle spectrum of C on basis V")
    o.add_argument("--c", required=True, type=Path)
    o.add_argument("--v", required=True, type=Path)
    return p


def _cmd_run(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = parse_assignments(args.set)
    if args.experiment:
        overrides["experiment"] = args.experiment
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    cfg = build_config(desk=args.desk, file_values=file_values, overrides=overrides)
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    table = run_experiment(cfg)
    out = Path(cfg.output_dir)
    csv_path = emit_csv(table, out / f"{cfg.experiment}.csv", timing=args.timing)
    print(csv_path)
    if args.plot:
        print(emit_svg(table, out / f"{cfg.experiment}.svg"))
    failed = [r for r in table if r.estimator.startswith("failed")]
    if failed:
        log.warning("%d run(s) failed; see 'failed:*' rows", len(failed))
    return EXIT_OK


def _need(value, flag: str, kind: str):
    if value is None:
        raise ConfigError(f"--kind {kind} needs {flag}")
    return value


def _estimate_json(est: dv.KlEstimate) -> dict:
    return {
        "mean": est.mean,
        "std_error": est.std_error,
        "n_samples": est.n_samples,
        "estimator_kind": est.estimator_kind.value,
        **est.info,
    }


def _cmd_kl(args) -> int:
    C = read_matrix_csv(args.c)
    Xi = read_matrix_csv(args.xi)
    if args.kind == "gauss":
        res = _estimate_json(dv.kl_gaussian(C, Xi))
    elif args.kind == "t-mc":
        nu = _need(args.nu, "--nu", args.kind)
        res = _estimate_json(dv.kl_t_mc(C, Xi, nu, args.samples, RngStream(args.seed)))
    elif args.kind == "t-quad":
        nu = _need(args.nu, "--nu", args.kind)
        res = _estimate_json(dv.kl_t_quadrature2(C, Xi, nu, args.half_width, args.grid_points))
    elif args.kind == "asym":
        res = {
            "kl_t_asym_normalized": dv.kl_t_asym_normalized(C, Xi),
            "kl_gauss_normalized": dv.kl_gauss_normalized(C, Xi),
        }
        if args.nu is not None:
            res["kl_t_largen"] = dv.kl_t_largen(C, Xi, args.nu).mean
    else:
        h = _need(args.h, "--h", args.kind)
        res = {"kl_h": dv.kl_h(C, Xi, h)}
    print(json.dumps(res, indent=2))
    return EXIT_OK


def _cmd_oracle(args) -> int:
    C = read_matrix_csv(args.c)
    V = read_basis_csv(args.v)
    lam = oracle_frobenius(C, V)
    print(json.dumps({
        "spectrum": [float(x) for x in lam.values],
        "trace": float(np.sum(lam.values)),
        "kl_oracle_asym": dv.kl_oracle_asym(C, V),
    }, indent=2))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"covkl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "kl": _cmd_kl, "oracle": _cmd_oracle}
    try:
        return handlers[args.command](args)
    except (NotSPDError, EigenDecompositionError, OptimizationError, dv.NuRangeError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"covkl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError) as exc:
        print(f"covkl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
