"""Detection-chain degradations: zero-phase Butterworth bandwidth limiting,
randomized decimation without anti-alias filter, and window extraction."""

from dataclasses import dataclass

import numpy as np

from .signal_model import ButterworthSpec, butterworth_gain, filter_samples
from .traces import HomodyneTrace

CHUNK = 1024


def apply_bandwidth(trace, spec):
    """Multiply every DFT bin of the trace by the Butterworth gain (no padding)."""
    if len(trace) == 0:
        raise ValueError("cannot filter an empty trace")
    out = filter_samples(trace.samples, trace.dt, lambda f: butterworth_gain(f, spec))
    return HomodyneTrace(out, trace.dt, trace.t_start, trace.true_phase, trace.trace_id)


def filter_set(traces, spec):
    """Batch version of :func:`apply_bandwidth` over a TraceSet."""
    if traces.samples.shape[1] == 0:
        raise ValueError("cannot filter empty traces")
    out = np.empty_like(traces.samples)
    gain = lambda f: butterworth_gain(f, spec)  # noqa: E731
    for s in range(0, len(traces), CHUNK):
        out[s:s + CHUNK] = filter_samples(traces.samples[s:s + CHUNK], traces.dt, gain)
    return traces.replace(samples=out)


def decimate(trace, n, rng=None, offset=None):
    """Keep one sample out of ``n`` starting at a random offset in {0..n-1}."""
    if n < 1:
        raise ValueError(f"decimation factor must be >= 1, got {n}")
    if n > len(trace):
        raise ValueError(f"decimation factor {n} exceeds trace length {len(trace)}")
    if offset is None:
        offset = 0 if n == 1 else int(rng.integers(n))
    return HomodyneTrace(trace.samples[offset::n], trace.dt * n, trace.t_start + offset * trace.dt,
                         trace.true_phase, trace.trace_id)


def decimate_set(traces, n, offsets):
    """Decimate each trace with its own offset; output length is len // n for all."""
    if n < 1:
        raise ValueError(f"decimation factor must be >= 1, got {n}")
    offsets = np.asarray(offsets, dtype=np.int64)
    if np.any((offsets < 0) | (offsets >= n)):
        raise ValueError("offsets must lie in [0, n)")
    length = traces.samples.shape[1] // n
    idx = offsets[:, None] + n * np.arange(length)[None, :]
    samples = np.take_along_axis(traces.samples, idx, axis=1)
    return traces.replace(samples=samples, dt=traces.dt * n,
                          t_start=traces.t_start + offsets * traces.dt)


def _window_indices(t_start, dt, size, window):
    w0, w1 = window
    i0 = int(np.round((w0 - t_start) / dt))
    i1 = int(np.round((w1 - t_start) / dt))
    if i0 < 0 or i1 > size or i1 <= i0:
        raise ValueError(
            f"window [{w0:.4g}, {w1:.4g}] s is outside the trace span "
            f"[{t_start:.4g}, {t_start + size * dt:.4g}] s"
        )
    return i0, i1


def extract_window(trace, window):
    """Contiguous sub-trace covering ``window``, boundaries snapped to the nearest sample."""
    i0, i1 = _window_indices(trace.t_start, trace.dt, len(trace), window)
    return HomodyneTrace(trace.samples[i0:i1], trace.dt, trace.t_start + i0 * trace.dt,
                         trace.true_phase, trace.trace_id)


def window_set(traces, window):
    """Fixed-length windows for every trace of a set.

    The length is round(duration / dt); each trace's start is snapped to its own
    nearest sample, so decimated traces keep their sub-sample timing jitter.
    """
    size = int(np.round((window[1] - window[0]) / traces.dt))
    m = traces.samples.shape[1]
    starts = np.round((window[0] - traces.t_start) / traces.dt).astype(np.int64)
    if size < 1 or starts.min() < 0 or starts.max() + size > m:
        raise ValueError(f"window {window} is outside the trace span")
    idx = starts[:, None] + np.arange(size)[None, :]
    return traces.replace(samples=np.take_along_axis(traces.samples, idx, axis=1),
                          t_start=traces.t_start + starts * traces.dt)


def white_noise_autocovariance(size, dt, gains_fn, white_var):
    """Circular autocovariance, at lags 0..size-1, of white noise with per-sample
    variance ``white_var`` after zero-phase filtering with gain ``gains_fn``."""
    f = np.fft.rfftfreq(size, dt)
    power = np.abs(gains_fn(f)) ** 2
    return white_var * np.fft.irfft(power, n=size)


@dataclass(frozen=True)
class ChainSpec:
    """Native acquisition grid plus the processing applied to it.

    ``native_fc`` is the detector bandwidth already present in the traces
    (None for a flat response); ``fc`` is the extra degradation filter (None
    when skipped); ``n`` is the decimation factor.
    """

    dt: float
    size: int
    native_fc: float | None = None
    fc: float | None = None
    n: int = 1

    def gain(self, f):
        g = np.ones_like(np.asarray(f, dtype=float))
        for fc in (self.native_fc, self.fc):
            if fc is not None:
                g = g * butterworth_gain(f, ButterworthSpec(fc))
        return g

    @property
    def noise_gain(self):
        """Per-sample variance of filtered white noise relative to the unfiltered one."""
        return float(white_noise_autocovariance(self.size, self.dt, self.gain, 1.0)[0])

    def noise_autocovariance(self, white_var, lags):
        """Autocovariance of white noise (per native sample variance ``white_var``)
        through the chain, at ``lags`` counted in decimated samples."""
        c = white_noise_autocovariance(self.size, self.dt, self.gain, white_var)
        return c[np.asarray(lags) * self.n]
