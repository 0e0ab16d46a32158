"""Monte Carlo comparison of offline and renewable estimators.

Every replication draws its own stream from a counter-based generator keyed
by ``(seed, rep)``, so replications can run in any order or in parallel and
the pooled metrics do not depend on scheduling.

Timing: ``C.Time`` counts estimator work only; ``R.Time`` adds the time spent
producing the data (generation and, for offline fits, pooling the batches).
"""
from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .gee import fit_offline_gee, gee_variance, init_gee_state, renew_gee_update
from .model import ClusterBatch, Family, ModelSpec
from .qif import ConvergenceWarning, fit_offline_qif, qif_covariance
from .renew import RenewConfig, init_state, variance_of, wald_report
from .driver import process_batch
from .simulate import Contamination, SimConfig, gen_batch, quarter_positions, replicate_seed

TABLES = ("linear-fixed-N", "linear-growing-B", "logistic-growing-B", "monitoring-grid")
METHODS = ("offline GEE", "RenewGEE", "offline QIF", "RenewQIF")
Z975 = 1.959963984540054

SCALES = {
    "smoke": {"fixed_N": 1000, "fixed_B": (2, 5, 10), "growing_B": (10,), "mon_N": 2000,
              "mon_nb": (50, 100), "alphas": (0.05,)},
    "desk": {"fixed_N": 10**4, "fixed_B": (10, 50, 100), "growing_B": (10, 100, 1000), "mon_N": 10**4,
             "mon_nb": (50, 100, 200, 400), "alphas": (0.1, 0.05, 0.01, 0.001, 5e-6)},
    "full": {"fixed_N": 10**5, "fixed_B": (100, 500, 2000), "growing_B": (10, 100, 1000, 10**4), "mon_N": 10**4,
              "mon_nb": (50, 100, 200, 400), "alphas": (0.1, 0.05, 0.01, 0.001, 5e-6)},
}


@dataclass
class MethodRun:
    estimate: np.ndarray
    se: np.ndarray
    c_time: float
    r_time: float
    used: int = 0
    trace: np.ndarray | None = None
    bad_variances: int = 0
    iterations: list | None = None


@dataclass
class Metrics:
    a_bias: float
    ase: float
    ese: float
    cp: float
    c_time: float
    r_time: float
    used_fraction: float | None = None


def summarize(estimates, ses, beta0, coef=None, used=None, total=None) -> Metrics:
    """Average absolute bias, mean asymptotic SE, empirical SE and 95% coverage.

    ``coef`` restricts the summaries to one coefficient; otherwise each is
    averaged over coefficients.
    """
    est = np.atleast_2d(np.asarray(estimates, float))
    se = np.atleast_2d(np.asarray(ses, float))
    beta0 = np.asarray(beta0, float)
    if coef is not None:
        est, se, beta0 = est[:, [coef]], se[:, [coef]], beta0[[coef]]
    err = est - beta0
    ese = est.std(axis=0, ddof=1) if est.shape[0] > 1 else np.zeros(est.shape[1])
    cover = np.abs(err) <= Z975 * se
    frac = None if used is None else float(np.sum(used) / np.sum(total))
    return Metrics(float(np.abs(err).mean()), float(se.mean()), float(ese.mean()), float(cover.mean()),
                   0.0, 0.0, frac)


def _se(cov):
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def is_symmetric_psd(V, rtol: float = 1e-10) -> bool:
    V = np.asarray(V, float)
    if not np.all(np.isfinite(V)):
        return False
    scale = max(float(np.max(np.abs(V))), np.finfo(float).tiny)
    if np.max(np.abs(V - V.T)) > rtol * scale:
        return False
    return float(np.linalg.eigvalsh(V)[0]) >= -rtol * scale


def run_methods(sim: SimConfig, model: ModelSpec, methods=METHODS, monitor: bool = False, alpha: float = 0.05,
                keep_trace: bool = False, check_states: bool = False) -> dict:
    """Run the requested estimators on one simulated stream.

    With ``check_states`` every committed RenewQIF state has its online
    covariance checked for symmetry and positive semidefiniteness; failures
    are counted in ``bad_variances``.
    """
    out = {}
    load = 0.0
    batches = []
    for b in range(1, sim.B + 1):
        t = time.perf_counter()
        batches.append(gen_batch(sim, b))
        load += time.perf_counter() - t
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if "offline GEE" in methods or "offline QIF" in methods:
            t = time.perf_counter()
            pooled = ClusterBatch.concat(batches)
            pool_time = time.perf_counter() - t
            if "offline GEE" in methods:
                t = time.perf_counter()
                fit = fit_offline_gee(model, pooled)
                c = time.perf_counter() - t
                out["offline GEE"] = MethodRun(fit.beta_hat, _se(fit.cov), c, c + load + pool_time, sim.n_b * sim.B)
            if "offline QIF" in methods:
                t = time.perf_counter()
                fit = fit_offline_qif(model, pooled)
                c = time.perf_counter() - t
                out["offline QIF"] = MethodRun(fit.beta_hat, _se(qif_covariance(fit.summary)), c,
                                               c + load + pool_time, sim.n_b * sim.B)
            del pooled
        if "RenewGEE" in methods:
            t = time.perf_counter()
            st = init_gee_state(model, batches[0])
            for batch in batches[1:]:
                st = renew_gee_update(st, batch)
            c = time.perf_counter() - t
            out["RenewGEE"] = MethodRun(st.beta, _se(gee_variance(st)), c, c + load, st.N)
        if "RenewQIF" in methods:
            t = time.perf_counter()
            st = init_state(model, batches[0], RenewConfig(alpha=alpha, monitor=monitor))
            trace = []
            bad = 0
            iters = [st.last_iterations]
            if keep_trace:
                trace.append(wald_report(st.beta, variance_of(st)).neglog10_p)
            for batch in batches[1:]:
                st, _, status, _ = process_batch(st, batch)
                iters.append(st.last_iterations if status == "accepted" else None)
                if check_states and status == "accepted" and not is_symmetric_psd(variance_of(st)):
                    bad += 1
                if keep_trace:
                    trace.append(wald_report(st.beta, variance_of(st)).neglog10_p)
            V = variance_of(st)
            c = time.perf_counter() - t
            if check_states and not is_symmetric_psd(V):
                bad += 1
            out["RenewQIF"] = MethodRun(st.beta, _se(V), c, c + load, st.N,
                                        np.array(trace) if keep_trace else None, bad, iters)
    return out


@dataclass(frozen=True)
class Cell:
    """One column of a results table: a simulation design and the methods run on it."""

    label: str
    sim: SimConfig
    methods: tuple
    monitor: bool = False
    alpha: float = 0.05
    coef: int | None = None


def table_cells(table: str, scale: str = "desk") -> list:
    if table not in TABLES:
        raise ValueError(f"unknown table {table!r}; choose from {', '.join(TABLES)}")
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}; choose from {', '.join(SCALES)}")
    s = SCALES[scale]
    cells = []
    if table == "linear-fixed-N":
        for B in s["fixed_B"]:
            n_b = s["fixed_N"] // B
            cells.append(Cell(f"B={B}", SimConfig("gaussian", n_b=n_b, B=B), METHODS))
    elif table in ("linear-growing-B", "logistic-growing-B"):
        fam = "gaussian" if table.startswith("linear") else "binomial"
        for B in s["growing_B"]:
            cells.append(Cell(f"B={B},N={100 * B}", SimConfig(fam, n_b=100, B=B), METHODS))
    else:
        for n_b in s["mon_nb"]:
            B = s["mon_N"] // n_b
            sim = SimConfig("binomial", n_b=n_b, B=B, contamination=Contamination(quarter_positions(B), 0.5))
            cells.append(Cell(f"n_b={n_b},no-monitor", sim, ("RenewQIF",), False, 0.05, 1))
            for a in s["alphas"]:
                cells.append(Cell(f"n_b={n_b},alpha={a:g}", sim, ("RenewQIF",), True, a, 1))
    return cells


def _one_rep(cell: Cell, seed: int, rep: int, keep_trace: bool):
    sim = replace(cell.sim, seed=replicate_seed(seed, rep))
    model = ModelSpec(sim.family, sim.p)
    runs = run_methods(sim, model, cell.methods, cell.monitor, cell.alpha, keep_trace)
    return rep, runs


def run_cell(cell: Cell, reps: int, seed: int = 0, workers: int = 1, trace_rep0: bool = False) -> dict:
    """Replicate one cell and return ``{method: Metrics}`` plus an optional trace."""
    jobs = (delayed(_one_rep)(cell, seed, r, trace_rep0 and r == 0) for r in range(reps))
    results = Parallel(n_jobs=workers)(jobs) if workers != 1 else [_one_rep(cell, seed, r, trace_rep0 and r == 0)
                                                                     for r in range(reps)]
    results.sort(key=lambda t: t[0])
    total = cell.sim.n_b * cell.sim.B
    metrics = {}
    trace = None
    for method in cell.methods:
        runs = [res[method] for _, res in results]
        m = summarize([r.estimate for r in runs], [r.se for r in runs], cell.sim.beta0, cell.coef,
                      used=[r.used for r in runs] if cell.monitor else None,
                      total=[total] * len(runs) if cell.monitor else None)
        m.c_time = float(np.mean([r.c_time for r in runs]))
        m.r_time = float(np.mean([r.r_time for r in runs]))
        metrics[method] = m
        if method == "RenewQIF" and runs[0].trace is not None:
            trace = runs[0].trace
    return {"metrics": metrics, "trace": trace}


@dataclass
class BenchResult:
    table: str
    scale: str
    reps: int
    seed: int
    cells: list = field(default_factory=list)  # (label, {method: Metrics})
    traces: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "table": self.table, "scale": self.scale, "reps": self.reps, "seed": self.seed,
            "cells": [{"label": lab, "methods": {k: vars(v) for k, v in ms.items()}} for lab, ms in self.cells],
        }

    def to_text(self) -> str:
        rows = [("cell", "method", "A.bias*1e3", "ASE*1e3", "ESE*1e3", "CP", "C.Time", "R.Time", "N0/NB")]
        for lab, ms in self.cells:
            for meth, m in ms.items():
                rows.append((lab, meth, f"{1e3 * m.a_bias:.2f}", f"{1e3 * m.ase:.2f}", f"{1e3 * m.ese:.2f}",
                             f"{m.cp:.3f}", f"{m.c_time:.4f}", f"{m.r_time:.4f}",
                             "" if m.used_fraction is None else f"{m.used_fraction:.3f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
                 for r in rows]
        return "\n".join([f"# {self.table} (scale={self.scale}, reps={self.reps}, seed={self.seed})"] + lines) + "\n"

    def write(self, out_dir) -> list:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        path = out_dir / f"{self.table}.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(path)
        path = out_dir / f"{self.table}.txt"
        path.write_text(self.to_text())
        written.append(path)
        for lab, tr in self.traces.items():
            safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in lab)
            path = out_dir / f"trace_{self.table}_{safe}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["b"] + [f"neglog10p_{k}" for k in range(1, tr.shape[1] + 1)])
                for b, row in enumerate(tr, start=1):
                    w.writerow([b] + [format(float(v), ".17g") for v in row])
            written.append(path)
        return written


def run_benchmark(table: str, reps: int = 100, scale: str = "desk", seed: int = 0, workers: int = 1,
                  out_dir=None) -> BenchResult:
    if reps < 1:
        raise ValueError("reps must be positive")
    result = BenchResult(table, scale, reps, seed)
    for cell in table_cells(table, scale):
        res = run_cell(cell, reps, seed, workers, trace_rep0=True)
        result.cells.append((cell.label, res["metrics"]))
        if res["trace"] is not None:
            result.traces[cell.label] = res["trace"]
    if out_dir is not None:
        result.write(out_dir)
    return result
