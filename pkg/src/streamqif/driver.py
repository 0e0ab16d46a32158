"""Sequential stream driver: monitor, renew, report, checkpoint.

Each incoming batch is screened against the retained reference batch,
folded into the state if accepted, reported, and then dropped. The state
file is rewritten after every batch, so a halted stream can be resumed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .gee import GeeState, gee_variance, init_gee_state, renew_gee_update
from .model import ClusterBatch, ModelSpec, as_corr, as_family
from .monitor import MonitorDecision, screen_batch
from .renew import (
    InferenceReport,
    RenewConfig,
    RenewState,
    inference_report,
    init_state,
    record_rejection,
    renew_update,
    wald_report,
)
from .storage import StateFileError, load_checkpoint, read_batch, save_state

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StreamConfig:
    family: str = "gaussian-identity"
    p: int | None = None
    corr: str = "compound-symmetry"
    alpha: float = 0.05
    monitor: bool = True
    tol: float = 1e-6
    maxit: int = 50
    track_gee: bool = False

    def renew_config(self) -> RenewConfig:
        return RenewConfig(tol=self.tol, maxit=self.maxit, alpha=self.alpha, monitor=self.monitor)

    def model(self, p: int) -> ModelSpec:
        return ModelSpec(self.family, p, self.corr)


REPORT_FIXED_COLUMNS = (
    "b", "source", "status", "lambda", "df", "monitor_p", "N", "batches_rejected", "iterations",
)
REPORT_COEF_FIELDS = ("est", "se", "z", "p", "neglog10p")


def report_columns(p: int) -> list:
    return list(REPORT_FIXED_COLUMNS) + [f"{f}_{k}" for k in range(1, p + 1) for f in REPORT_COEF_FIELDS]


def _num(x) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class BatchReport:
    b: int
    source: str
    status: str  # init | accepted | rejected | empty
    decision: MonitorDecision | None
    inference: InferenceReport
    iterations: int
    gee: InferenceReport | None = None

    def row(self) -> list:
        d = self.decision
        inf = self.inference
        out = [str(self.b), self.source, self.status,
               "" if d is None else _num(d.lambda_), "" if d is None else str(d.df),
               "" if d is None else _num(d.p_value), str(inf.N), str(inf.batches_rejected),
               str(self.iterations)]
        for k in range(inf.estimate.size):
            out += [_num(inf.estimate[k]), _num(inf.se[k]), _num(inf.z[k]),
                    _num(inf.p_value[k]), _num(inf.neglog10_p[k])]
        return out


class LiveBatchCounter:
    """Instrumentation hook: counts clusters of streamed batches currently held."""

    def __init__(self):
        self.live = 0
        self.peak = 0
        self.loaded = 0

    def on_load(self, batch: ClusterBatch):
        self.live += batch.n
        self.loaded += 1
        self.peak = max(self.peak, self.live)

    def on_release(self, batch: ClusterBatch):
        self.live -= batch.n


def _load(source, p, batch_id) -> ClusterBatch:
    if isinstance(source, ClusterBatch):
        return replace(source, batch_id=batch_id) if source.batch_id != batch_id else source
    if callable(source):
        return source()
    return read_batch(source, p=p, batch_id=batch_id)


def _label(source) -> str:
    if isinstance(source, (str, Path)):
        return str(source)
    if isinstance(source, ClusterBatch):
        return f"batch:{source.batch_id}"
    return getattr(source, "__name__", "source")


def _gee_report(gee: GeeState, state: RenewState) -> InferenceReport:
    return wald_report(gee.beta, gee_variance(gee), gee.N, gee.b, state.batches_rejected)


def process_batch(state: RenewState, batch: ClusterBatch, gee: GeeState | None = None):
    """Screen one batch and fold it in if accepted.

    Returns ``(state, gee, status, decision)``; ``status`` is one of
    ``accepted``, ``rejected`` or ``empty``.
    """
    decision = None
    if batch.n == 0:
        state = renew_update(state, batch)
        if gee is not None:
            gee = replace(gee, b=gee.b + 1)
        return state, gee, "empty", None
    cfg = state.config
    if cfg.monitor:
        decision = screen_batch(state.model, state.reference, batch, alpha=cfg.alpha, beta_init=state.beta,
                                tol=cfg.tol, maxit=cfg.maxit, score_tol=cfg.score_tol)
    if decision is not None and decision.reject:
        log.info("batch %d rejected: Lambda=%.4g df=%d p=%.3g", state.b + 1, decision.lambda_, decision.df,
                 decision.p_value)
        state = record_rejection(state)
        if gee is not None:
            gee = replace(gee, b=gee.b + 1)
        return state, gee, "rejected", decision
    state = renew_update(state, batch)
    if gee is not None:
        gee = renew_gee_update(gee, batch)
    return state, gee, "accepted", decision


def run_stream(config: StreamConfig, sources, state_path, hooks=None) -> list:
    """Process ``sources`` in order and return one :class:`BatchReport` per batch.

    Without an existing state file the first source initialises the state;
    otherwise the stream resumes from the file. Errors propagate with the
    state file reflecting the last completed batch.
    """
    state_path = Path(state_path)
    hooks = hooks or LiveBatchCounter()
    sources = iter(sources)
    reports = []
    gee = None
    if state_path.exists():
        ck = load_checkpoint(state_path)
        state, gee = ck.state, ck.gee
        want = (as_family(config.family), as_corr(config.corr))
        if want != (state.model.family, state.model.corr) or (config.p not in (None, state.model.p)):
            raise StateFileError(
                f"{state_path} holds a {state.model.family.value}/{state.model.corr.value} model with "
                f"p={state.model.p}, which does not match the requested configuration"
            )
        state = replace(state, config=config.renew_config())
        if config.track_gee and gee is None:
            raise StateFileError(f"{state_path} has no GEE section to resume")
        if not config.track_gee:
            gee = None
    else:
        try:
            source = next(sources)
        except StopIteration:
            return reports
        batch = _load(source, config.p, 1)
        hooks.on_load(batch)
        model = config.model(batch.p)
        state = init_state(model, batch, config.renew_config())
        if config.track_gee:
            gee = init_gee_state(model, batch, tol=config.tol, maxit=config.maxit)
        save_state(state, state_path, gee)
        reports.append(BatchReport(1, _label(source), "init", None, inference_report(state), state.last_iterations,
                                   None if gee is None else _gee_report(gee, state)))
        hooks.on_release(batch)
        del batch

    model = state.model
    for source in sources:
        b = state.b + 1
        batch = _load(source, model.p, b)
        hooks.on_load(batch)
        state, gee, status, decision = process_batch(state, batch, gee)
        save_state(state, state_path, gee)
        reports.append(BatchReport(b, _label(source), status, decision, inference_report(state),
                                   state.last_iterations, None if gee is None else _gee_report(gee, state)))
        hooks.on_release(batch)
        del batch
    return reports


def report_from_state(state_path) -> InferenceReport:
    return inference_report(load_checkpoint(state_path).state)


def trace_neglog10p(reports) -> np.ndarray:
    """``-log10(p)`` per batch (rows) and coefficient (columns)."""
    return np.array([r.inference.neglog10_p for r in reports])
