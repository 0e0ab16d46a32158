"""Command line entry point: ``streamqif {simulate,fit,stream,bench}``.

Exit codes: 0 ok, 2 batch-file parse error, 3 numerical failure,
4 state-file version or integrity error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import SCALES, TABLES, run_benchmark
from .driver import StreamConfig, report_columns, run_stream
from .gee import fit_offline_gee
from .model import ClusterBatch, ModelSpec
from .monitor import DegenerateReferenceError
from .numerics import NotPositiveDefiniteError
from .qif import DivergenceError, fit_offline_qif, qif_covariance
from .renew import inference_report, wald_report
from .simulate import Contamination, SimConfig, gen_batch
from .storage import BatchParseError, StateFileError, load_checkpoint, read_batch, write_batch

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NUMERIC = 3
EXIT_STATE = 4

log = logging.getLogger("streamqif")


def _add_model_flags(p, defaults=True):
    p.add_argument("--family", default="gaussian-identity" if defaults else None,
                   help="gaussian-identity | binomial-logit (aliases: gaussian, binomial, logistic)")
    p.add_argument("--corr", default="compound-symmetry" if defaults else None,
                   help="independence | compound-symmetry | ar1")


def _write_rows(rows, header, out):
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)


def _coef_table(rep, out):
    header = ["coef", "est", "se", "z", "p", "neglog10p"]
    rows = [[f"x{k + 1}", format(rep.estimate[k], ".10g"), format(rep.se[k], ".10g"), format(rep.z[k], ".6g"),
             format(rep.p_value[k], ".6g"), format(rep.neglog10_p[k], ".6g")] for k in range(rep.estimate.size)]
    _write_rows(rows, header, out)


def cmd_simulate(args) -> int:
    cont = None
    if args.contaminate:
        cont = Contamination(tuple(args.positions), args.contaminate)
    cfg = SimConfig(args.family, m=args.m, n_b=args.n_b, B=args.batches, seed=args.seed, contamination=cont)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = len(str(cfg.B))
    for b in range(1, cfg.B + 1):
        path = out / f"batch_{b:0{width}d}.csv"
        write_batch(gen_batch(cfg, b), path)
        print(path)
    return EXIT_OK


def cmd_fit(args) -> int:
    batches = [read_batch(f, batch_id=i + 1) for i, f in enumerate(args.files)]
    data = ClusterBatch.concat(batches)
    model = ModelSpec(args.family, data.p, args.corr)
    if args.method == "qif":
        fit = fit_offline_qif(model, data)
        cov = qif_covariance(fit.summary)
    else:
        fit = fit_offline_gee(model, data)
        cov = fit.cov
    _coef_table(wald_report(fit.beta_hat, cov, data.n, len(batches)), sys.stdout)
    return EXIT_OK


def _stream_config(args, state_path: Path, init: bool) -> StreamConfig:
    if init:
        return StreamConfig(family=args.family, corr=args.corr, alpha=args.alpha if args.alpha is not None else 0.05,
                            monitor=not args.no_monitor)
    st = load_checkpoint(state_path).state
    return StreamConfig(
        family=args.family or st.model.family.value, corr=args.corr or st.model.corr.value, p=st.model.p,
        alpha=st.config.alpha if args.alpha is None else args.alpha,
        monitor=st.config.monitor and not args.no_monitor,
        tol=st.config.tol, maxit=st.config.maxit,
    )


def cmd_stream(args) -> int:
    state_path = Path(args.state)
    if args.action == "report":
        rep = inference_report(load_checkpoint(state_path).state)
        print(f"# b={rep.b} N={rep.N} batches_rejected={rep.batches_rejected}")
        _coef_table(rep, sys.stdout)
        return EXIT_OK
    init = args.action == "init"
    if init and state_path.exists() and not args.force:
        print(f"error: {state_path} already exists (use --force to overwrite)", file=sys.stderr)
        return 1
    if not init and not state_path.exists():
        print(f"error: {state_path} does not exist; run 'stream init' first", file=sys.stderr)
        return 1
    if init and state_path.exists():
        state_path.unlink()
    config = _stream_config(args, state_path, init)
    reports = run_stream(config, args.files, state_path)
    out = open(args.report, "a", newline="") if args.report else sys.stdout
    try:
        if reports:
            p = reports[0].inference.estimate.size
            write_header = not args.report or out.tell() == 0
            w = csv.writer(out, lineterminator="\n")
            if write_header:
                w.writerow(report_columns(p))
            for r in reports:
                w.writerow(r.row())
    finally:
        if args.report:
            out.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    res = run_benchmark(args.table, reps=args.reps, scale=args.scale, seed=args.seed, workers=args.workers,
                        out_dir=args.out)
    sys.stdout.write(res.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamqif", description="Renewable QIF/GEE estimation for streams of clustered data.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated stream as batch files")
    p.add_argument("--family", default="gaussian-identity")
    p.add_argument("--batches", "-B", type=int, default=10)
    p.add_argument("--n-b", type=int, default=100, help="clusters per batch")
    p.add_argument("--m", type=int, default=5, help="cluster size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contaminate", type=float, default=0.0, metavar="D",
                   help="shift the second coefficient by -D in the listed batches")
    p.add_argument("--positions", type=int, nargs="*", default=[])
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="offline fit on pooled batch files")
    p.add_argument("method", choices=("gee", "qif"))
    p.add_argument("files", nargs="+")
    _add_model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("stream", help="initialise, update or report a persisted stream state")
    ssub = p.add_subparsers(dest="action", required=True)
    for action, helptext in (("init", "start a state from the first batch file, then process the rest"),
                             ("update", "screen and renew with further batch files"),
                             ("report", "print the current estimates and Wald tests")):
        sp = ssub.add_parser(action, help=helptext)
        sp.add_argument("--state", required=True)
        if action != "report":
            sp.add_argument("files", nargs="+")
            _add_model_flags(sp, defaults=False)
            sp.add_argument("--alpha", type=float, default=None, help="monitor level (default 0.05)")
            sp.add_argument("--no-monitor", action="store_true")
            sp.add_argument("--report", help="append report rows to this file instead of stdout")
        if action == "init":
            sp.add_argument("--force", action="store_true", help="overwrite an existing state")
        sp.set_defaults(func=cmd_stream)

    p = sub.add_parser("bench", help="run a simulation table")
    p.add_argument("table", choices=TABLES)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--scale", choices=tuple(SCALES), default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="directory for JSON, text and trace files")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "stream" and args.action == "init" and args.family is None:
        args.family = "gaussian-identity"
    if args.command == "stream" and args.action == "init" and args.corr is None:
        args.corr = "compound-symmetry"
    try:
        return args.func(args)
    except BatchParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except StateFileError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, DegenerateReferenceError, NotPositiveDefiniteError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
