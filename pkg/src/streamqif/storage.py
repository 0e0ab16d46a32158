"""Batch files (CSV text) and the binary state file.

State file layout, all integers little-endian::

    magic        4 bytes   b"RNQF"
    version      uint16
    header_len   uint32
    header       header_len bytes of UTF-8 JSON
    payload      arrays listed in header["arrays"], in order, each raw
                 row-major float64 ('<f8') or int64 ('<i8')
    checksum     32 bytes  SHA-256 of every preceding byte

Floating scalars in the header are stored with ``float.hex`` so a save/load
cycle is bit-exact.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gee import GeeNuisance, GeeState
from .model import ClusterBatch, ModelSpec
from .renew import RenewConfig, RenewState

MAGIC = b"RNQF"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_DIGEST = 32
PSD_RTOL = 1e-8


class BatchParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class StateFileError(ValueError):
    pass


class ChecksumError(StateFileError):
    pass


class UnsupportedVersionError(StateFileError):
    pass


# ---------------------------------------------------------------- batch files

def batch_header(p: int) -> list:
    return ["cluster_id", "y"] + [f"x{k}" for k in range(1, p + 1)]


def read_batch(path, p: int | None = None, batch_id: int = 0) -> ClusterBatch:
    """Parse one batch file; clusters must occupy contiguous rows."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise BatchParseError(path, 0, f"cannot open: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise BatchParseError(path, 1, "empty file, expected a header row")
        header = [h.strip() for h in header]
        width = len(header) - 2
        if width < 1 or header != batch_header(width):
            raise BatchParseError(path, 1, f"header must be cluster_id,y,x1,...,xp; got {','.join(header)}")
        if p is not None and width != p:
            raise BatchParseError(path, 1, f"file has p={width} covariates, expected {p}")
        ys, rows, sizes = [], [], []
        seen = set()
        current = None
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != width + 2:
                raise BatchParseError(path, line_no, f"expected {width + 2} columns, found {len(rec)}")
            cid = rec[0].strip()
            try:
                vals = [float(f) for f in rec[1:]]
            except ValueError as exc:
                raise BatchParseError(path, line_no, f"non-numeric field ({exc})") from None
            if not all(np.isfinite(vals)):
                raise BatchParseError(path, line_no, "non-finite value")
            if cid != current:
                if cid in seen:
                    raise BatchParseError(path, line_no, f"cluster_id {cid!r} is not contiguous")
                seen.add(cid)
                current = cid
                sizes.append(0)
            sizes[-1] += 1
            ys.append(vals[0])
            rows.append(vals[1:])
    X = np.array(rows, dtype=float).reshape(len(rows), width)
    return ClusterBatch(np.array(ys, dtype=float), X, np.array(sizes, dtype=np.int64), batch_id)


def write_batch(batch: ClusterBatch, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(batch_header(batch.p))
        off = batch.offsets
        for i in range(batch.n):
            for r in range(off[i], off[i + 1]):
                w.writerow([i + 1, repr(float(batch.y[r]))] + [repr(float(v)) for v in batch.X[r]])


# ---------------------------------------------------------------- state file

@dataclass(frozen=True)
class Checkpoint:
    state: RenewState
    gee: GeeState | None = None


def _hex(x: float) -> str:
    return float(x).hex()


def _unhex(s: str) -> float:
    return float.fromhex(s)


def _check_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"refusing to save: {name} has non-finite entries")


def _encode(state: RenewState, gee: GeeState | None) -> bytes:
    model = state.model
    arrays = [("beta", state.beta), ("g", state.g), ("G", state.G), ("C", state.C)]
    ref = state.reference
    if ref is not None:
        arrays += [("ref_y", ref.y), ("ref_X", ref.X), ("ref_sizes", ref.sizes)]
    if gee is not None:
        arrays += [("gee_beta", gee.beta), ("gee_S", gee.S), ("gee_V", gee.V)]
    for name, a in arrays:
        _check_finite(name, a)
    cfg = state.config
    header = {
        "model": {"family": model.family.value, "corr": model.corr.value},
        "p": model.p,
        "S": model.basis_count,
        "m_policy": "variable",
        "b": state.b,
        "N": state.N,
        "n1": state.n1,
        "batches_rejected": state.batches_rejected,
        "alpha": _hex(cfg.alpha),
        "config": {"tol": _hex(cfg.tol), "maxit": cfg.maxit, "monitor": cfg.monitor,
                   "score_tol": None if cfg.score_tol is None else _hex(cfg.score_tol)},
        "floor": _hex(state.floor),
        "reference_batch_id": None if ref is None else ref.batch_id,
        "arrays": [],
    }
    if gee is not None:
        header["gee"] = {
            "alpha": _hex(gee.nuisance.alpha), "phi": _hex(gee.nuisance.phi),
            "clamped": gee.nuisance.clamped, "N": gee.N, "n_obs": gee.n_obs, "b": gee.b,
            "tol": _hex(gee.tol), "maxit": gee.maxit,
        }
    chunks = []
    for name, a in arrays:
        a = np.asarray(a)
        dtype = "<i8" if a.dtype.kind in "iu" else "<f8"
        header["arrays"].append({"name": name, "dtype": dtype, "shape": list(a.shape)})
        chunks.append(np.ascontiguousarray(a, dtype=dtype).tobytes(order="C"))
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_state(state: RenewState, path, gee: GeeState | None = None) -> None:
    """Write a checkpoint atomically: temp file in the same directory, then rename."""
    data = _encode(state, gee)
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write state file {path}: {exc.strerror}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _decode(data: bytes, path) -> Checkpoint:
    if len(data) < _PREFIX.size + _DIGEST:
        raise ChecksumError(f"{path}: file too short ({len(data)} bytes); truncated or not a state file")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise StateFileError(f"{path}: bad magic {magic!r}, not a state file")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported state format version {version} (this build reads {FORMAT_VERSION})")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch; the file is truncated or corrupted")
    pos = _PREFIX.size
    header = json.loads(body[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(body):
            raise StateFileError(f"{path}: array {entry['name']} runs past the payload")
        a = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape)
        arrays[entry["name"]] = a.astype(np.float64 if dt.kind == "f" else np.int64)
        pos += nbytes
    if pos != len(body):
        raise StateFileError(f"{path}: {len(body) - pos} unexpected trailing payload bytes")

    model = ModelSpec(header["model"]["family"], header["p"], header["model"]["corr"])
    if header["S"] != model.basis_count:
        raise StateFileError(f"{path}: basis count {header['S']} inconsistent with {model.corr.value}")
    pS = model.p * model.basis_count
    C = arrays["C"]
    if arrays["beta"].shape != (model.p,) or arrays["g"].shape != (pS,) or arrays["G"].shape != (pS, model.p) \
            or C.shape != (pS, pS):
        raise StateFileError(f"{path}: array shapes do not match p={model.p}, S={model.basis_count}")
    if not np.array_equal(C, C.T):
        raise StateFileError(f"{path}: stored C is not symmetric")
    w = np.linalg.eigvalsh(C)
    if w.size and w[0] < -PSD_RTOL * max(abs(w[-1]), 1.0):
        raise StateFileError(f"{path}: stored C is not positive semidefinite (min eigenvalue {w[0]:.3g})")

    ref = None
    if "ref_y" in arrays:
        ref = ClusterBatch(arrays["ref_y"], arrays["ref_X"], arrays["ref_sizes"], header["reference_batch_id"] or 0)
    c = header["config"]
    cfg = RenewConfig(tol=_unhex(c["tol"]), maxit=int(c["maxit"]), alpha=_unhex(header["alpha"]),
                      monitor=bool(c["monitor"]),
                      score_tol=None if c["score_tol"] is None else _unhex(c["score_tol"]))
    state = RenewState(
        model=model, beta=arrays["beta"], g=arrays["g"], G=arrays["G"], C=C,
        floor=_unhex(header["floor"]), N=int(header["N"]), b=int(header["b"]), n1=int(header["n1"]),
        batches_rejected=int(header["batches_rejected"]), reference=ref, config=cfg,
    )
    gee = None
    if "gee" in header:
        h = header["gee"]
        gee = GeeState(
            model=model, beta=arrays["gee_beta"], S=arrays["gee_S"], V=arrays["gee_V"],
            nuisance=GeeNuisance(_unhex(h["alpha"]), _unhex(h["phi"]), bool(h["clamped"])),
            N=int(h["N"]), n_obs=int(h["n_obs"]), b=int(h["b"]), tol=_unhex(h["tol"]), maxit=int(h["maxit"]),
        )
    return Checkpoint(state, gee)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read state file {path}: {exc.strerror}") from exc
    return _decode(data, path)


def load_state(path) -> RenewState:
    return load_checkpoint(path).state


def state_fields_equal(a: RenewState, b: RenewState) -> bool:
    """Field-for-field bit equality of two states (ignoring per-update diagnostics)."""
    arr = ("beta", "g", "G", "C")
    if a.model != b.model or a.config != b.config:
        return False
    if any(getattr(a, k) != getattr(b, k) for k in ("N", "b", "n1", "batches_rejected")):
        return False
    if np.float64(a.floor).tobytes() != np.float64(b.floor).tobytes():
        return False
    if any(getattr(a, k).tobytes() != getattr(b, k).tobytes() for k in arr):
        return False
    ra, rb = a.reference, b.reference
    if (ra is None) != (rb is None):
        return False
    if ra is not None:
        return (ra.y.tobytes() == rb.y.tobytes() and ra.X.tobytes() == rb.X.tobytes()
                and ra.sizes.tobytes() == rb.sizes.tobytes())
    return True
