"""File formats: event streams, histograms, reports, rate curves, traces.

Event streams have two encodings.

Text::

    # key=value          (header, one per line)
    1234                 (one gate index per line, decimal)

Binary (little-endian)::

    b"SPDS" | u8 version | u64 n_gates | u64 seed | u64 n_events
    | u64 meta_len | meta_len bytes of UTF-8 JSON header
    | LEB128 varints of index deltas (first delta is from gate 0)
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ParameterError
from .model import DetectorParams, SourceParams
from .montecarlo import EventStream

MAGIC = b"SPDS"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sBQQQQ")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (list, tuple)):
        return ",".join(_fmt(v) for v in x)
    return str(x)


def stream_header(stream: EventStream) -> dict:
    """Flat ``key -> value`` header describing a stream and how it was made."""
    h = {
        "format": "spadsim-stream",
        "tool_version": __version__,
        "seed": stream.seed,
        "n_gates": stream.n_gates,
        "n_events": len(stream),
    }
    if stream.detector is not None:
        for k, v in stream.detector.to_dict().items():
            h[f"detector.{k}"] = v
    if stream.source is not None:
        for k, v in stream.source.to_dict().items():
            h[f"source.{k}"] = v
    for k, v in sorted(stream.meta.items()):
        h[f"meta.{k}"] = v
    return h


def _stream_from_header(h: dict, events) -> EventStream:
    det = src = None
    if "detector.qe" in h:
        det = DetectorParams.from_dict(
            {
                "qe": float(h["detector.qe"]),
                "dark_prob": float(h.get("detector.dark_prob", 0.0)),
                "afterpulse_probs": _floats(h.get("detector.afterpulse_probs", "0.0")),
                "dead_pulses": int(h.get("detector.dead_pulses", 0)),
            }
        )
    if "source.rep_rate_hz" in h:
        src = SourceParams(float(h["source.rep_rate_hz"]), float(h.get("source.mu", 0.0)))
    seed = h.get("seed")
    seed = None if seed in (None, "None", "") else int(seed)
    meta = {k[5:]: v for k, v in h.items() if k.startswith("meta.")}
    return EventStream(events, int(h["n_gates"]), seed, det, src, meta)


def _floats(v):
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).split(",") if x.strip()]


def write_stream_text(stream: EventStream, path) -> None:
    lines = [f"# {k}={_fmt(v)}" for k, v in stream_header(stream).items()]
    body = "\n".join(map(str, stream.events.tolist()))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
        if body:
            fh.write(body + "\n")


def read_stream_text(path) -> EventStream:
    header = {}
    body = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if not sep:
                    raise ParameterError(f"malformed header line: {line.rstrip()!r}")
                header[key.strip()] = value.strip()
            else:
                body.append(line)
                break
        body.append(fh.read())
    if "n_gates" not in header:
        raise ParameterError("stream header lacks n_gates")
    events = np.array("".join(body).split(), dtype=np.int64)
    return _stream_from_header(header, events)


def encode_varints(values: np.ndarray) -> bytes:
    """Unsigned LEB128 encoding of a non-negative int array."""
    v = np.asarray(values, dtype=np.uint64)
    if v.size == 0:
        return b""
    nbytes = np.ones(v.size, dtype=np.int64)
    rest = v >> np.uint64(7)
    while np.any(rest):
        nbytes += rest > 0
        rest >>= np.uint64(7)
    width = int(nbytes.max())
    shifts = (np.arange(width, dtype=np.uint64) * np.uint64(7))[None, :]
    groups = ((v[:, None] >> shifts) & np.uint64(0x7F)).astype(np.uint8)
    col = np.arange(width)[None, :]
    groups[col < (nbytes[:, None] - 1)] |= 0x80
    return groups[col < nbytes[:, None]].tobytes()


def decode_varints(buf: bytes, count: int) -> np.ndarray:
    b = np.frombuffer(buf, dtype=np.uint8)
    ends = np.flatnonzero((b & 0x80) == 0)
    if ends.size != count:
        raise ParameterError(f"expected {count} varints, found {ends.size}")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    if ends[-1] != b.size - 1:
        raise ParameterError("trailing bytes after last varint")
    starts = np.concatenate([[0], ends[:-1] + 1])
    pos = np.arange(b.size) - np.repeat(starts, ends - starts + 1)
    vals = (b & 0x7F).astype(np.uint64) << (pos.astype(np.uint64) * np.uint64(7))
    return np.add.reduceat(vals, starts).astype(np.int64)


def write_stream_binary(stream: EventStream, path) -> None:
    header = stream_header(stream)
    meta = json.dumps(header, sort_keys=True).encode("utf-8")
    deltas = np.diff(stream.events, prepend=0) if len(stream) else np.empty(0, dtype=np.int64)
    seed = 0 if stream.seed is None else stream.seed
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, BINARY_VERSION, stream.n_gates, seed, len(stream), len(meta)))
        fh.write(meta)
        fh.write(encode_varints(deltas))


def read_stream_binary(path) -> EventStream:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ParameterError("file too short for a binary stream header")
    magic, version, n_gates, seed, n_events, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParameterError(f"bad magic {magic!r}")
    if version != BINARY_VERSION:
        raise ParameterError(f"unsupported binary stream version {version}")
    off = _HEADER.size
    header = json.loads(data[off : off + meta_len].decode("utf-8"))
    header["n_gates"] = n_gates
    if header.get("seed") is not None:
        header["seed"] = seed
    events = np.cumsum(decode_varints(data[off + meta_len :], n_events))
    return _stream_from_header(header, events)


def write_stream(stream: EventStream, path) -> None:
    """Binary when the suffix is ``.spds``, text otherwise."""
    if Path(path).suffix == ".spds":
        write_stream_binary(stream, path)
    else:
        write_stream_text(stream, path)


def read_stream(path) -> EventStream:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_stream_binary(path) if head == MAGIC else read_stream_text(path)


def write_histogram_csv(hist, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "count"])
        for n, c in zip(hist.n.tolist(), hist.counts.tolist()):
            w.writerow([n, c])


def read_histogram_csv(path):
    from .intervals import IntervalHistogram

    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = rows[:, 0].astype(int)
    if not np.array_equal(n, np.arange(1, n.size + 1)):
        raise ParameterError("histogram CSV must list n = 1, 2, ... in order")
    counts = rows[:, 1]
    if np.all(counts == np.round(counts)):
        counts = counts.astype(np.int64)
    return IntervalHistogram(counts)


def write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None if np.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def read_rate_curve_csv(path, rep_rate: float, window_s: float = 1.0):
    """Rows of ``n_ph,n_c[,sigma]``; a header line is optional."""
    from .ratecurve import RateCurve

    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].lstrip().startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    if not rows:
        raise ParameterError("rate curve CSV has no data rows")
    widths = {len(r) for r in rows}
    if widths - {2, 3} or len(widths) != 1:
        raise ParameterError("rate curve rows must all have 2 or 3 columns")
    data = np.array([[float(x) for x in r] for r in rows])
    sigma = data[:, 2] if data.shape[1] == 3 else None
    return RateCurve(data[:, 0], data[:, 1], rep_rate, sigma=sigma, window_s=window_s)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_rate_curve_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_ph", "n_c", "sigma"])
        for row in zip(curve.n_ph.tolist(), curve.n_c.tolist(), curve.sigma.tolist()):
            w.writerow([repr(x) for x in row])


def write_prediction_csv(table: np.ndarray, n_d_values, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_ph"] + [f"n_c_nd{k}" for k in n_d_values])
        for row in table.tolist():
            w.writerow([repr(x) for x in row])


def write_columns_csv(path, names, *cols) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*(np.asarray(c).tolist() for c in cols)):
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def write_trace_binary(trace, params: dict, path) -> Path:
    """Raw little-endian float64 samples plus a ``.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    np.asarray(trace.v, dtype="<f8").tofile(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    write_json({"dtype": "<f8", "n_samples": int(trace.v.size), "sample_rate_hz": trace.sample_rate, **params}, sidecar)
    return sidecar


def read_trace_binary(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    v = np.fromfile(path, dtype=meta.get("dtype", "<f8"))
    if v.size != meta["n_samples"]:
        raise ParameterError("trace length disagrees with its sidecar")
    return v, meta
