"""Digitized homodyne traces and the binary trace-dataset format.

File layout (little endian)::

    header   magic b"CVTR" | version u32 | N u64 | dt f64 | t_start f64
             | samples_per_trace u64 | config hash (32 bytes, sha256)
    records  N x (trace_id u64 | true_phase f64 | samples f64[samples_per_trace])

``true_phase`` is NaN for ingested data with no generator ground truth.
"""

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CVTR"
VERSION = 1
_HEADER = struct.Struct("<4sIQddQ32s")


@dataclass
class HomodyneTrace:
    """Photocurrent samples in shot-noise units (vacuum variance 1/2 per unit mode)."""

    samples: np.ndarray
    dt: float
    t_start: float
    true_phase: float | None = None
    trace_id: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.dt <= 0:
            raise ValueError("sample spacing must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"trace {self.trace_id} has non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def t(self):
        return self.t_start + self.dt * np.arange(self.samples.size)

    @property
    def duration(self):
        return self.samples.size * self.dt


@dataclass
class TraceSet:
    """Block of N traces sharing dt and length; per-trace start times may differ
    by a sub-sample offset (decimation phase)."""

    samples: np.ndarray  # (N, M)
    dt: float
    t_start: np.ndarray  # (N,)
    true_phase: np.ndarray  # (N,), NaN when unknown
    trace_id: np.ndarray  # (N,)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.samples.shape[0]

    @classmethod
    def from_traces(cls, traces):
        traces = list(traces)
        if not traces:
            raise ValueError("empty trace collection")
        m = len(traces[0])
        dt = traces[0].dt
        for tr in traces:
            if len(tr) != m or not np.isclose(tr.dt, dt, rtol=1e-12):
                raise ValueError(f"trace {tr.trace_id} is on a different grid")
        return cls(
            samples=np.stack([tr.samples for tr in traces]),
            dt=dt,
            t_start=np.array([tr.t_start for tr in traces]),
            true_phase=np.array([np.nan if tr.true_phase is None else tr.true_phase for tr in traces]),
            trace_id=np.array([tr.trace_id for tr in traces], dtype=np.int64),
        )

    def trace(self, i):
        phase = self.true_phase[i]
        return HomodyneTrace(self.samples[i], self.dt, float(self.t_start[i]),
                             None if np.isnan(phase) else float(phase), int(self.trace_id[i]))

    def __iter__(self):
        return (self.trace(i) for i in range(len(self)))

    def replace(self, **changes):
        fields = dict(samples=self.samples, dt=self.dt, t_start=self.t_start,
                      true_phase=self.true_phase, trace_id=self.trace_id, meta=dict(self.meta))
        fields.update(changes)
        return TraceSet(**fields)


def write_trace_file(path, traces, config_hash=b""):
    """Write a TraceSet in the CVTR format. All traces must share t_start."""
    if not np.allclose(traces.t_start, traces.t_start[0], rtol=0, atol=1e-3 * traces.dt):
        raise ValueError("CVTR files store a single t_start; traces are misaligned")
    n, m = traces.samples.shape
    digest = bytes(config_hash)[:32].ljust(32, b"\0")
    rec = np.dtype([("trace_id", "<u8"), ("true_phase", "<f8"), ("samples", "<f8", (m,))])
    body = np.empty(n, dtype=rec)
    body["trace_id"] = traces.trace_id
    body["true_phase"] = traces.true_phase
    body["samples"] = traces.samples
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, traces.dt, float(traces.t_start[0]), m, digest))
        fh.write(body.tobytes())


def read_trace_file(path):
    """Read a CVTR file; returns ``(TraceSet, config_hash)``."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, n, dt, t_start, m, digest = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        rec = np.dtype([("trace_id", "<u8"), ("true_phase", "<f8"), ("samples", "<f8", (m,))])
        body = np.frombuffer(fh.read(), dtype=rec)
    if body.size != n:
        raise ValueError(f"{path}: header announces {n} traces, found {body.size}")
    ts = TraceSet(
        samples=np.array(body["samples"], dtype=float).reshape(n, m),
        dt=dt,
        t_start=np.full(n, t_start),
        true_phase=np.array(body["true_phase"], dtype=float),
        trace_id=np.array(body["trace_id"], dtype=np.int64),
    )
    return ts, digest


def write_truth_csv(path, trace_id, theta, x_true):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trace_id", "theta", "X_true"])
        for i, th, x in zip(trace_id, theta, x_true):
            w.writerow([int(i), repr(float(th)), repr(float(x))])


def read_truth_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return data["trace_id"].astype(np.int64), data["theta"], data["X_true"]
