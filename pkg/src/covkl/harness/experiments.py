"""Experiment runner for the oracle-vs-KL comparisons."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize as sopt

from .. import divergence as dv
from ..linalg import OrthonormalBasis, SymmetricMatrix, eigendecompose, frobenius_distance, rie_build
from ..optimize import (
    FrozenTObjective,
    OptimizerOptions,
    minimize_kl_t,
    oracle_frobenius,
)
from ..sampling import RngStream, gen_population, sample_covariance, sample_mvt
from .config import ExperimentConfig

log = logging.getLogger(__name__)

AGGREGATE_RUN = -1

# estimator label -> the one library routine that produced the number
ESTIMATOR_SOURCES = {
    "kl_t_mc": "covkl.divergence.kl_t_mc",
    "kl_t_mc_frozen": "covkl.optimize.FrozenTObjective.estimate",
    "kl_t_quadrature2": "covkl.divergence.kl_t_quadrature2",
    "kl_gaussian": "covkl.divergence.kl_gaussian",
    "kl_gauss_normalized": "covkl.divergence.kl_gauss_normalized",
    "kl_t_asym_normalized": "covkl.divergence.kl_t_asym_normalized",
    "kl_t_largen": "covkl.divergence.kl_t_largen",
    "kl_h": "covkl.divergence.kl_h",
    "kl_oracle_asym": "covkl.divergence.kl_oracle_asym",
    "frobenius_sq": "covkl.linalg.frobenius_distance",
    "kl_frozen_oracle": "covkl.optimize.FrozenTObjective.estimate",
    "kl_frozen_optimal": "covkl.optimize.minimize_kl_t",
    "delta_kl": "covkl.optimize.minimize_kl_t",
    "argmin_kl_t_mc": "covkl.optimize.minimize_kl_t",
    "argmin_kl_t_quadrature2": "covkl.divergence.kl_t_quadrature2",
    "argmin_frobenius_sq": "covkl.optimize.oracle_frobenius",
}
FAILED = "failed"


@dataclass(frozen=True)
class RunRecord:
    experiment: str
    run_index: int
    grid_value: float
    estimator: str
    kl_mean: float
    kl_std_error: float
    wall_time_ms: float
    seed: int


def _worker_count(cfg: ExperimentConfig) -> int:
    env = os.environ.get("COVKL_THREADS")
    cap = max(1, int(env)) if env else None
    return min(cfg.workers, cap) if cap else cfg.workers


def _pair_rows(cfg, run, value, seed, t0, rows):
    ms = (time.perf_counter() - t0) * 1e3
    return [RunRecord(cfg.experiment, run, float(value), est, float(m), float(s), ms, seed)
            for est, m, s in rows]


def _fig1_left(cfg: ExperimentConfig, run: int) -> list[RunRecord]:
    stream = RngStream(cfg.master_seed, run)
    t0 = time.perf_counter()
    model = gen_population(2, cfg.ratio, cfg.rotation_scale, stream.child(0))
    V = model.rie_basis
    frozen = FrozenTObjective(model, cfg.nu, cfg.mc_samples, stream.child(1))
    out = []

    def quad(l1):
        xi = rie_build(V, (l1, 2.0 - l1))
        return dv.kl_t_quadrature2(model.C, xi, cfg.nu, cfg.half_width, cfg.quad_points).mean

    for l1 in cfg.lambda_grid:
        t1 = time.perf_counter()
        lam = np.array([l1, 2.0 - l1])
        est = frozen.estimate(lam)
        q = quad(l1)
        fro = frobenius_distance(model.C, rie_build(V, lam))
        out += _pair_rows(cfg, run, l1, stream.master_seed, t1, [
            ("kl_t_mc_frozen", est.mean, est.std_error),
            ("kl_t_quadrature2", q, 0.0),
            ("frobenius_sq", fro, 0.0),
        ])

    opts = OptimizerOptions.for_monte_carlo(mc_samples=cfg.mc_samples, constraint=cfg.constraint)
    res = minimize_kl_t(model, cfg.nu, opts, objective=frozen)
    lam_f = oracle_frobenius(model.C, V).values
    qmin = sopt.minimize_scalar(quad, bounds=(1e-3, 2 - 1e-3), method="bounded",
                                options={"xatol": 1e-7})
    fro_min = frobenius_distance(model.C, rie_build(V, lam_f))
    out += _pair_rows(cfg, run, res.spectrum.values[0], stream.master_seed, t0,
                      [("argmin_kl_t_mc", res.objective.mean, res.objective.std_error)])
    out += _pair_rows(cfg, run, qmin.x, stream.master_seed, t0,
                      [("argmin_kl_t_quadrature2", qmin.fun, 0.0)])
    out += _pair_rows(cfg, run, lam_f[0], stream.master_seed, t0,
                      [("argmin_frobenius_sq", fro_min, 0.0)])
    return out


def _fig1_right(cfg: ExperimentConfig, run: int) -> list[RunRecord]:
    stream = RngStream(cfg.master_seed, run)
    model = gen_population(cfg.n, cfg.ratio, cfg.rotation_scale, stream.child(0))
    lam_f = oracle_frobenius(model.C, model.rie_basis).values
    opts = OptimizerOptions.for_monte_carlo(mc_samples=cfg.mc_samples, constraint=cfg.constraint)
    out = []
    for k, nu in enumerate(cfg.nu_grid):
        t0 = time.perf_counter()
        frozen = FrozenTObjective(model, nu, cfg.mc_samples, stream.child(1 + k))
        res = minimize_kl_t(model, nu, opts, objective=frozen)
        at_f = frozen.estimate(lam_f)
        diff = frozen.terms(lam_f) - frozen.terms(res.spectrum.values)
        se = float(np.std(diff, ddof=1) / math.sqrt(diff.size))
        out += _pair_rows(cfg, run, nu, stream.master_seed, t0, [
            ("kl_frozen_oracle", at_f.mean, at_f.std_error),
            ("kl_frozen_optimal", res.objective.mean, res.objective.std_error),
            ("delta_kl", at_f.mean - res.objective.mean, se),
        ])
    return out


def _fig2(cfg: ExperimentConfig, run: int) -> list[RunRecord]:
    stream = RngStream(cfg.master_seed, run)
    n = cfg.n
    model = gen_population(n, cfg.ratio, cfg.rotation_scale, stream.child(0))
    C = model.C
    t_obs = max(n + 1, int(round(cfg.obs_per_var * n)))
    out = []
    for k, h in enumerate(cfg.h_grid):
        t0 = time.perf_counter()
        nu = h * n
        sub = stream.child(1 + k)
        block = sample_mvt(C, nu, t_obs, sub.child(0))
        S = np.asarray(sample_covariance(block))
        # trace n, like C: removes the nu/(nu-2) covariance inflation
        S = S * (n / np.trace(S))
        if cfg.experiment == "fig2_right":
            _, V = eigendecompose(S)
            Xi = rie_build(V, oracle_frobenius(C, V))
        else:
            Xi = SymmetricMatrix(S, check=False)
        mc = dv.kl_t_mc(C, Xi, nu, cfg.mc_samples, sub.child(1), workers=1)
        rows = [
            ("kl_t_mc", mc.mean / n, mc.std_error / n),
            ("kl_gauss_normalized", dv.kl_gauss_normalized(C, Xi), 0.0),
            ("kl_t_asym_normalized", dv.kl_t_asym_normalized(C, Xi), 0.0),
            ("kl_h", dv.kl_h(C, Xi, h), 0.0),
        ]
        if nu > 2:
            rows.append(("kl_t_largen", dv.kl_t_largen(C, Xi, nu).mean / n, 0.0))
        if cfg.experiment == "fig2_right":
            rows.append(("kl_oracle_asym", dv.kl_oracle_asym(C, V), 0.0))
        out += _pair_rows(cfg, run, h, stream.master_seed, t0, rows)
    return out


def _custom(cfg: ExperimentConfig, run: int) -> list[RunRecord]:
    stream = RngStream(cfg.master_seed, run)
    model = gen_population(cfg.n, cfg.ratio, cfg.rotation_scale, stream.child(0))
    Xi = rie_build(model.rie_basis, oracle_frobenius(model.C, model.rie_basis))
    out = []
    for k, nu in enumerate(cfg.nu_grid):
        t0 = time.perf_counter()
        mc = dv.kl_t_mc(model.C, Xi, nu, cfg.mc_samples, stream.child(1 + k), workers=1)
        rows = [("kl_t_mc", mc.mean, mc.std_error), ("kl_gaussian", dv.kl_gaussian(model.C, Xi).mean, 0.0)]
        if nu > 2:
            rows.append(("kl_t_largen", dv.kl_t_largen(model.C, Xi, nu).mean, 0.0))
        out += _pair_rows(cfg, run, nu, stream.master_seed, t0, rows)
    return out


_RUNNERS = {
    "fig1_left": _fig1_left,
    "fig1_right": _fig1_right,
    "fig2_left": _fig2,
    "fig2_right": _fig2,
    "custom": _custom,
}


def run_single(cfg: ExperimentConfig, run: int) -> list[RunRecord]:
    """One run; numerical failures become a ``failed`` row instead of raising."""
    t0 = time.perf_counter()
    try:
        return _RUNNERS[cfg.experiment](cfg, run)
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        log.warning("run %d of %s failed: %s", run, cfg.experiment, exc)
        ms = (time.perf_counter() - t0) * 1e3
        return [RunRecord(cfg.experiment, run, math.nan, f"{FAILED}:{type(exc).__name__}",
                          math.nan, math.nan, ms, cfg.master_seed)]


def aggregate(records: list[RunRecord]) -> list[RunRecord]:
    """Mean and sample standard deviation over runs per (grid_value, estimator)."""
    groups: dict[tuple[float, str], list[RunRecord]] = {}
    for r in records:
        if r.run_index < 0 or r.estimator.startswith(FAILED):
            continue
        groups.setdefault((r.grid_value, r.estimator), []).append(r)
    out = []
    for (value, est), rs in groups.items():
        vals = np.array([r.kl_mean for r in rs])
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        out.append(RunRecord(rs[0].experiment, AGGREGATE_RUN, value, est, float(vals.mean()),
                             std, float(np.mean([r.wall_time_ms for r in rs])), rs[0].seed))
    return out


def run_experiment(cfg: ExperimentConfig, *, workers: int | None = None) -> list[RunRecord]:
    """All runs of ``cfg``, per-run rows sorted by run, then aggregate rows.

    Run ``i`` draws only from ``RngStream(master_seed, i)``, so the table is
    the same for any worker count and dropping a run leaves the others alone.
    """
    workers = workers or _worker_count(cfg)
    runs = range(cfg.runs)
    if workers > 1 and cfg.runs > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_run = list(pool.map(lambda i: run_single(cfg, i), runs))
    else:
        per_run = [run_single(cfg, i) for i in runs]
    records = [r for rs in per_run for r in rs]
    records.sort(key=lambda r: (r.run_index, math.inf if math.isnan(r.grid_value) else r.grid_value))
    return records + aggregate(records)
