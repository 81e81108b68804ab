"""Synthetic heralded homodyne traces.

Each trace is X * u_id(t) + b(t) + e(t), filtered at the native detector
bandwidth: X is a quadrature of the heralded state (after detection loss) at
the trace's LO phase, b is white squeezed-vacuum background with its u_id
component removed, e is white electronic noise. Every trace draws from its own
random stream keyed by (seed, trace_id), so datasets do not depend on how the
work is split between processes.
"""

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .fock import apply_loss
from .signal_model import ButterworthSpec, TemporalMode, butterworth_gain, filter_samples, ideal_mode_values
from .states import HeraldedStateModel, heralded_density, sample_quadratures, squeezed_variance
from .traces import HomodyneTrace, TraceSet

STREAM_TRACE = 1
STREAM_DECIMATE = 2
STREAM_TRIGGER = 3
STREAM_PHASE_EST = 4

CHUNK = 512


def stream(seed, *key):
    """Independent generator for a (seed, purpose, ...) key."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


@dataclass
class AcquisitionConfig:
    gamma: float = 9.3e6
    f_c: float | None = 301e6
    f_s: float = 5e9
    n_traces: int = 10_000
    window: tuple = (-1.25e-6, -1.0e-6)
    side: float = 0.5e-6
    trace_span: tuple | None = None
    t0: float = -1.05e-6
    snr_db: float | None = 12.0
    eta_hd: float = 0.72
    scan_rate: float = 4e5
    scan_offset: float = 0.0
    herald_rate: float = 2e4
    state: HeraldedStateModel = field(default_factory=HeraldedStateModel)
    background: bool = True
    seed: int = 20240601

    def __post_init__(self):
        self.window = tuple(float(w) for w in self.window)
        if self.trace_span is not None:
            self.trace_span = tuple(float(w) for w in self.trace_span)
        if isinstance(self.state, dict):
            self.state = HeraldedStateModel(**self.state)
        if not 0.0 < self.eta_hd <= 1.0:
            raise ValueError(f"eta_hd must lie in (0, 1], got {self.eta_hd}")
        if self.gamma <= 0 or self.f_s <= 0:
            raise ValueError("gamma and f_s must be positive")
        if self.f_c is not None and self.f_c <= 0:
            raise ValueError("native bandwidth must be positive")
        if self.n_traces < 1:
            raise ValueError("need at least one trace")
        w0, w1 = self.window
        if w1 - w0 < 3.0 / (np.pi * self.gamma):
            raise ValueError("analysis window shorter than 3/(pi*gamma)")
        s0, s1 = self.span
        if w0 < s0 or w1 > s1:
            raise ValueError("analysis window is not inside the trace span")

    @property
    def dt(self):
        return 1.0 / self.f_s

    @property
    def span(self):
        if self.trace_span is not None:
            return self.trace_span
        return (self.window[0] - self.side, self.window[1] + self.side)

    @property
    def n_samples(self):
        return int(round((self.span[1] - self.span[0]) / self.dt))

    @property
    def t(self):
        return self.span[0] + self.dt * np.arange(self.n_samples)

    @property
    def electronic_variance(self):
        """Electronic-noise variance per unit mode, in shot-noise units."""
        return 0.0 if self.snr_db is None else 0.5 * 10 ** (-self.snr_db / 10)

    @property
    def background_efficiency(self):
        return self.state.eta_prep * self.eta_hd

    def native_gain(self, f):
        if self.f_c is None:
            return np.ones_like(np.asarray(f, dtype=float))
        return butterworth_gain(f, ButterworthSpec(self.f_c))

    def to_dict(self):
        d = asdict(self)
        d["window"] = list(self.window)
        d["trace_span"] = None if self.trace_span is None else list(self.trace_span)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "state" in d and isinstance(d["state"], dict):
            d["state"] = HeraldedStateModel(**d["state"])
        return cls(**d)

    def replace(self, **changes):
        d = self.to_dict()
        d["state"] = self.state
        d.update(changes)
        return AcquisitionConfig.from_dict(d)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


def ideal_mode_on_trace_grid(cfg):
    t = cfg.t
    return TemporalMode(ideal_mode_values(t, cfg.gamma, cfg.t0), cfg.dt, cfg.span[0]).normalized()


def detected_density(cfg):
    """Heralded state after the homodyne detection loss, as seen by the traces."""
    return apply_loss(heralded_density(cfg.state), cfg.eta_hd)


def _check_grid(cfg, u_id):
    if len(u_id) != cfg.n_samples or not np.isclose(u_id.dt, cfg.dt, rtol=1e-9) \
            or not np.isclose(u_id.t_start, cfg.span[0], rtol=0, atol=1e-3 * cfg.dt):
        raise ValueError("ideal mode is not defined on the trace grid")


def _draws(rng, size):
    # fixed draw order per trace: quadrature uniform, background, electronic
    return rng.random(), rng.standard_normal(size), rng.standard_normal(size)


def _assemble(cfg, u_id, thetas, x, n_bg, n_el):
    """Vectorized trace assembly for a block of traces."""
    dt = cfg.dt
    u = u_id.samples
    v = np.zeros_like(n_bg)
    if cfg.background:
        phase_t = thetas[:, None] + cfg.scan_rate * (cfg.t[None, :] - cfg.t0)
        var = squeezed_variance(cfg.state.r, phase_t, cfg.background_efficiency)
        b = np.sqrt(var / dt) * n_bg
        b -= np.outer(b @ u * dt, u)
        v += b
    if cfg.electronic_variance > 0:
        v += np.sqrt(cfg.electronic_variance / dt) * n_el
    v += np.outer(x, u)
    if cfg.f_c is not None:
        v = filter_samples(v, dt, cfg.native_gain)
    return v


def synth_trace(cfg, u_id, theta, rng, rho_det=None, trace_id=0):
    """One synthetic trace at LO phase ``theta``; returns ``(trace, X)``."""
    _check_grid(cfg, u_id)
    if rho_det is None:
        rho_det = detected_density(cfg)
    uni, n_bg, n_el = _draws(rng, cfg.n_samples)
    x = sample_quadratures(rho_det, [theta], [uni])
    v = _assemble(cfg, u_id, np.array([theta]), x, n_bg[None, :], n_el[None, :])
    return HomodyneTrace(v[0], cfg.dt, cfg.span[0], float(theta), trace_id), float(x[0])


def trigger_phases(cfg):
    """LO phase at the mode time t0 for every trigger of a linear phase scan."""
    rng = stream(cfg.seed, STREAM_TRIGGER)
    times = np.cumsum(rng.exponential(1.0 / cfg.herald_rate, cfg.n_traces))
    return np.mod(cfg.scan_offset + cfg.scan_rate * (times + cfg.t0), 2 * np.pi), times


@dataclass
class SyntheticDataset:
    traces: TraceSet
    x_true: np.ndarray
    config: AcquisitionConfig
    trigger_times: np.ndarray

    @property
    def theta(self):
        return self.traces.true_phase


def _synth_chunk(args):
    cfg, ids, thetas, rho_det = args
    u_id = ideal_mode_on_trace_grid(cfg)
    m = cfg.n_samples
    uni = np.empty(ids.size)
    n_bg = np.empty((ids.size, m))
    n_el = np.empty((ids.size, m))
    for j, tid in enumerate(ids):
        uni[j], n_bg[j], n_el[j] = _draws(stream(cfg.seed, STREAM_TRACE, tid), m)
    x = sample_quadratures(rho_det, thetas, uni)
    return _assemble(cfg, u_id, thetas, x, n_bg, n_el), x


def synth_dataset(cfg, workers=1):
    """Generate ``cfg.n_traces`` traces plus the (theta, X) truth record."""
    thetas, times = trigger_phases(cfg)
    rho_det = detected_density(cfg)
    ids = np.arange(cfg.n_traces, dtype=np.int64)
    jobs = [(cfg, ids[s:s + CHUNK], thetas[s:s + CHUNK], rho_det) for s in range(0, ids.size, CHUNK)]
    samples = np.empty((cfg.n_traces, cfg.n_samples))
    x_true = np.empty(cfg.n_traces)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_synth_chunk, jobs))
    else:
        results = map(_synth_chunk, jobs)
    for (_, chunk_ids, _, _), (v, x) in zip(jobs, results):
        samples[chunk_ids] = v
        x_true[chunk_ids] = x
    traces = TraceSet(samples=samples, dt=cfg.dt, t_start=np.full(cfg.n_traces, cfg.span[0]),
                      true_phase=thetas, trace_id=ids)
    return SyntheticDataset(traces=traces, x_true=x_true, config=cfg, trigger_times=times)
