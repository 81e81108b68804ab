"""Temporal-mode reconstruction from the trace autocorrelation matrix."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, eigh

from .signal_model import TemporalMode

DEGENERACY_GAP = 1e-6


class DegenerateModeWarning(UserWarning):
    pass


@dataclass
class AutocorrMatrix:
    entries: np.ndarray
    dt: float
    t_start: float
    count: int = 0


class AutocorrAccumulator:
    """Streaming sum of outer products v v^T; partial sums merge with ``+=``.

    Traces are accepted when they share dt and length and their start times
    agree to within one sample (decimated traces carry sub-sample jitter).
    """

    def __init__(self):
        self.sum = None
        self.count = 0
        self.dt = None
        self.t_start = None
        self.size = None
        self.t_sum = 0.0

    def _check(self, dt, size, t_start):
        if self.sum is None:
            self.dt, self.size, self.t_start = dt, size, float(np.min(t_start))
            self.sum = np.zeros((size, size))
            return
        if size != self.size or not np.isclose(dt, self.dt, rtol=1e-9):
            raise ValueError("trace grid differs from the accumulated grid")
        if np.max(np.abs(np.asarray(t_start) - self.t_start)) > self.dt * (1 + 1e-9):
            raise ValueError("trace start times differ by more than one sample")

    def add_block(self, samples, dt, t_start):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        self._check(dt, samples.shape[1], t_start)
        self.sum += samples.T @ samples
        self.count += samples.shape[0]
        self.t_sum += float(np.sum(t_start))
        return self

    def add(self, trace):
        return self.add_block(trace.samples[None, :], trace.dt, [trace.t_start])

    def __iadd__(self, other):
        if other.sum is None:
            return self
        self._check(other.dt, other.size, [other.t_start])
        self.sum += other.sum
        self.count += other.count
        self.t_sum += other.t_sum
        return self

    def result(self):
        if not self.count:
            raise ValueError("no traces accumulated")
        k = self.sum / self.count
        # jittered (decimated) traces: the effective grid starts at the mean offset
        return AutocorrMatrix(0.5 * (k + k.T), self.dt, self.t_sum / self.count, self.count)


def autocorr_matrix(traces, block=2048):
    """K[j, k] = (1/N) sum_i v_i(t_j) v_i(t_k) over a TraceSet or iterable of traces."""
    acc = AutocorrAccumulator()
    if hasattr(traces, "samples") and np.ndim(traces.samples) == 2:
        for s in range(0, len(traces), block):
            acc.add_block(traces.samples[s:s + block], traces.dt, traces.t_start[s:s + block])
    else:
        for tr in traces:
            acc.add(tr)
    return acc.result()


def dominant_mode(K):
    """Normalized eigenvector of the largest eigenvalue of K, positive peak.

    The result's ``info`` carries the top eigenvalue, the relative gap to the
    next one and a ``degenerate`` flag (gap below 1e-6).
    """
    m = K.entries.shape[0]
    try:
        if m == 1:
            vals, vecs = np.array([K.entries[0, 0]]), np.ones((1, 1))
        else:
            vals, vecs = eigh(K.entries, subset_by_index=[m - 2, m - 1])
    except LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed on the {m}x{m} autocorrelation matrix") from exc
    top = vals[-1]
    gap = 1.0 if m == 1 else (vals[-1] - vals[-2]) / max(abs(top), np.finfo(float).tiny)
    degenerate = bool(gap < DEGENERACY_GAP)
    if degenerate:
        warnings.warn(f"top eigenvalue is degenerate (relative gap {gap:.1e})", DegenerateModeWarning)
    mode = TemporalMode(vecs[:, -1], K.dt, K.t_start).normalized()
    mode.info.update(eigenvalue=float(top), gap=float(gap), degenerate=degenerate)
    return mode


def _aligned(u, ref):
    same = len(u) == len(ref) and np.isclose(u.dt, ref.dt, rtol=1e-9) \
        and abs(u.t_start - ref.t_start) <= 0.5 * ref.dt
    if same:
        return u.normalized()
    lo = max(u.t[0], ref.t[0])
    hi = min(u.t[-1], ref.t[-1])
    if hi <= lo:
        raise ValueError("modes have non-overlapping time supports")
    return u.on_grid(ref.t_start, ref.dt, len(ref))


def mode_mismatch(u, u_ref):
    """1 - |sum u u_ref dt| with both modes unit-normalized.

    If the grids differ, ``u`` is linearly interpolated onto the grid of
    ``u_ref`` and renormalized.
    """
    ref = u_ref.normalized()
    v = _aligned(u, ref)
    eta = abs(np.sum(v.samples * ref.samples) * ref.dt)
    return float(min(max(1.0 - eta, 0.0), 1.0))


def rms_deviation(u, u_ref):
    """RMS of u - u_ref on the grid of ``u`` (u_ref interpolated), in units of peak |u_ref|."""
    ref = u_ref.on_grid(u.t_start, u.dt, len(u)) if len(u) != len(u_ref) or not np.isclose(u.dt, u_ref.dt) \
        else u_ref.normalized()
    v = u.normalized()
    return float(np.sqrt(np.mean((v.samples - ref.samples) ** 2)) / np.max(np.abs(ref.samples)))
