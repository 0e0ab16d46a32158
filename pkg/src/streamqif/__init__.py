"""Renewable quadratic inference functions for streams of clustered data."""
from .bench import run_benchmark
from .driver import BatchReport, LiveBatchCounter, StreamConfig, process_batch, run_stream
from .estimators import GEERegressor, QIFRegressor, RenewableGEERegressor, RenewableQIFRegressor
from .gee import GeeState, fit_offline_gee, init_gee_state, renew_gee_update
from .model import ClusterBatch, CorrStructure, Family, ModelSpec
from .monitor import MonitorDecision, screen_batch
from .qif import BatchSummary, ConvergenceWarning, DivergenceError, batch_summary, fit_offline_qif
from .renew import InferenceReport, RenewConfig, RenewState, inference_report, init_state, renew_update
from .simulate import Contamination, SimConfig, gen_batch, iter_stream
from .storage import load_checkpoint, load_state, read_batch, save_state, write_batch

__version__ = "0.1.0"

__all__ = [
    "BatchReport", "BatchSummary", "ClusterBatch", "Contamination", "ConvergenceWarning", "CorrStructure",
    "DivergenceError", "Family", "GEERegressor", "GeeState", "InferenceReport", "LiveBatchCounter", "ModelSpec",
    "MonitorDecision", "QIFRegressor", "RenewConfig", "RenewState", "RenewableGEERegressor",
    "RenewableQIFRegressor", "SimConfig", "StreamConfig", "batch_summary", "fit_offline_gee", "fit_offline_qif",
    "gen_batch", "inference_report", "init_gee_state", "init_state", "iter_stream", "load_checkpoint",
    "load_state", "process_batch", "read_batch", "renew_gee_update", "renew_update", "run_benchmark",
    "run_stream", "save_state", "screen_batch", "write_batch",
]
