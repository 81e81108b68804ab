"""State calibration, (f_c, f_s) degradation sweeps and report files."""

import csv
import json
import logging
import multiprocessing
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy

from . import __version__
from .dsp import ChainSpec, decimate_set, filter_set, window_set
from .fock import apply_loss
from .modes import autocorr_matrix, dominant_mode, mode_mismatch
from .quadrature import (PhaseScan, block_variances, collect_tomo_set, fit_phases,
                         shot_noise_variance, write_tomo_csv)
from .signal_model import ButterworthSpec, TemporalMode, filter_samples, ideal_mode_values
from .states import HeraldedStateModel, heralded_density, marginal_pdf, quadrature_moments
from .synth import STREAM_DECIMATE, AcquisitionConfig, ideal_mode_on_trace_grid, stream
from .tomography import check_density, fidelity, run_maxlik, wigner, wigner_origin

log = logging.getLogger(__name__)

FC_LIST = (11e6, 31e6, 51e6, 101e6, 151e6, 201e6, 301e6)
N_LIST = (1, 2, 9, 17, 21, 25, 33)
BASELINE = (301e6, 1)
FIG4_POINTS = ((301e6, 1), (301e6, 21), (31e6, 1), (31e6, 21))
MODE_SOURCES = ("reconstructed", "ideal")
PHASE_SOURCES = ("truth", "estimated")

# expected-likelihood grid of the calibration surrogate
CAL_PHASES = 24
CAL_POINTS = 300


@dataclass
class PipelineConfig:
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    fc_list: tuple = FC_LIST
    n_list: tuple = N_LIST
    dim: int = 12
    iters: int = 1000
    rtol: float = 1e-10
    mode_source: str = "reconstructed"
    efficiency_mode: str = "povm"
    phase_source: str = "truth"
    wigner_points: tuple = FIG4_POINTS
    wigner_extent: float = 3.0
    wigner_steps: int = 61
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.acquisition, dict):
            self.acquisition = AcquisitionConfig.from_dict(self.acquisition)
        self.fc_list = tuple(float(f) for f in self.fc_list)
        self.n_list = tuple(int(n) for n in self.n_list)
        self.wigner_points = tuple((float(f), int(n)) for f, n in self.wigner_points)
        if self.mode_source not in MODE_SOURCES:
            raise ValueError(f"mode_source must be one of {MODE_SOURCES}")
        if self.phase_source not in PHASE_SOURCES:
            raise ValueError(f"phase_source must be one of {PHASE_SOURCES}")
        if self.efficiency_mode not in ("povm", "rescale"):
            raise ValueError("efficiency_mode must be povm or rescale")
        if any(f <= 0 for f in self.fc_list) or any(n < 1 for n in self.n_list):
            raise ValueError("cutoffs must be positive and decimation factors >= 1")
        if self.iters < 1 or self.dim < 4:
            raise ValueError("need iters >= 1 and dim >= 4")

    def to_dict(self):
        d = asdict(self)
        d["acquisition"] = self.acquisition.to_dict()
        d["fc_list"] = list(self.fc_list)
        d["n_list"] = list(self.n_list)
        d["wigner_points"] = [list(p) for p in self.wigner_points]
        return d

    @classmethod
    def from_dict(cls, d):
        """Top-level keys are AcquisitionConfig fields; sweep options sit under "pipeline"."""
        d = dict(d)
        opts = dict(d.pop("pipeline", {}))
        known = set(cls.__dataclass_fields__) - {"acquisition"}
        unknown = set(opts) - known
        if unknown:
            raise ValueError(f"unknown pipeline keys: {sorted(unknown)}")
        return cls(acquisition=AcquisitionConfig.from_dict(d), **opts)

    def replace(self, **changes):
        d = self.to_dict()
        d["acquisition"] = self.acquisition
        d.update(changes)
        return PipelineConfig(**d)


@dataclass
class SweepResult:
    f_c: float
    f_s: float
    n: int
    nyquist_ok: bool
    W00: float = float("nan")
    fidelity_vs_baseline: float = float("nan")
    mode_mismatch: float = float("nan")
    maxlik_converged_at: int | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def key(self):
        return (self.f_c, self.n)


@dataclass
class SweepOutcome:
    results: list
    modes: dict
    states: dict
    wigner_grids: dict
    config: PipelineConfig
    baseline: tuple = BASELINE
    calibration: dict | None = None

    def result(self, f_c, n):
        for r in self.results:
            if r.key == (float(f_c), int(n)):
                return r
        raise KeyError((f_c, n))


def nyquist_ok(f_c, f_s):
    return bool(2 * f_c <= f_s)


def decimation_factor(f_s_target, f_s):
    """Integer n with f_s / n == f_s_target (to 0.5%); raises otherwise."""
    n = int(round(f_s / f_s_target))
    if n < 1 or abs(f_s / n - f_s_target) > 5e-3 * f_s_target:
        raise ValueError(f"{f_s_target:g} Sps is not reachable by decimating {f_s:g} Sps")
    return n


def chain_for(acq, f_c, n):
    """Processing chain of one grid point; no extra filter at or above the native cutoff."""
    extra = f_c if f_c is not None and (acq.f_c is None or f_c < acq.f_c) else None
    return ChainSpec(acq.dt, acq.n_samples, acq.f_c, extra, n)


def decimation_offsets(seed, n, trace_ids):
    if n == 1:
        return np.zeros(len(trace_ids), dtype=np.int64)
    return np.array([stream(seed, STREAM_DECIMATE, n, i).integers(n) for i in trace_ids], dtype=np.int64)


def expected_mode(acq, chain, t_start, dt, size):
    """Ideal mode sent through the chain's filters, resampled on a (decimated) window grid."""
    u = ideal_mode_on_trace_grid(acq)
    fine = filter_samples(u.samples, acq.dt, chain.gain)
    return TemporalMode(fine, acq.dt, u.t_start).on_grid(t_start, dt, size)


def theoretical_mode(acq, t_start, dt, size):
    t = t_start + dt * np.arange(size)
    return TemporalMode(ideal_mode_values(t, acq.gamma, acq.t0), dt, t_start).normalized()


def estimate_phases(processed, acq, chain):
    """LO phases at t0 fitted from the side regions of processed full-span traces."""
    dt = processed.dt
    s0, s1 = acq.span
    w0, w1 = acq.window
    parts = []
    for lo, hi in ((s0 + dt, w0), (w1, s1 - 2 * dt)):
        if hi - lo >= dt:
            parts.append(window_set(processed, (lo, hi)))
    if not parts or sum(p.samples.shape[1] for p in parts) < 200 // chain.n:
        raise ValueError("side regions too short for phase estimation")
    tau = 1.0 / (np.pi * acq.gamma)
    vs, ts = zip(*(block_variances(p.samples, dt, p.t_start, tau, chain.noise_gain, acq.dt,
                                   acq.electronic_variance) for p in parts))
    return fit_phases(np.hstack(vs), np.hstack(ts), PhaseScan(acq.scan_rate, acq.t0), acq.state.r,
                      acq.background_efficiency)


def analyze_point(processed, cfg, f_c, n, chain):
    """Mode, quadratures and MaxLik state for one already filtered and decimated set."""
    acq = cfg.acquisition
    win = window_set(processed, acq.window)
    t_nom = float(np.mean(win.t_start))
    size = win.samples.shape[1]
    ref = expected_mode(acq, chain, t_nom, win.dt, size)
    if cfg.mode_source == "reconstructed":
        mode = dominant_mode(autocorr_matrix(win))
    else:
        mode = theoretical_mode(acq, t_nom, win.dt, size)
    vac = shot_noise_variance(mode, chain)
    phases = estimate_phases(processed, acq, chain) if cfg.phase_source == "estimated" else None
    f_s = acq.f_s / n
    tomo = collect_tomo_set(win, mode, acq.eta_hd, phases, vac, cfg.efficiency_mode,
                            meta=dict(f_c=f_c, f_s=f_s))
    ml = run_maxlik(tomo.x, tomo.theta, cfg.dim, cfg.iters, tomo.eta, rtol=cfg.rtol)
    check_density(ml.rho)
    res = SweepResult(
        f_c=f_c, f_s=f_s, n=n, nyquist_ok=nyquist_ok(f_c, f_s), W00=wigner_origin(ml.rho),
        maxlik_converged_at=ml.converged_at,
        extra=dict(mismatch_vs_chain_mode=mode_mismatch(mode, ref), vacuum_variance=vac,
                   samples_per_window=size, loglik=float(ml.loglik[-1]),
                   loglik_monotone=bool(np.all(np.diff(ml.loglik) >= -1e-9 * np.abs(ml.loglik[1:]))),
                   mode_degenerate=bool(mode.info.get("degenerate", False))),
    )
    return res, mode, ml.rho, tomo


def process_row(traces, cfg, f_c, ns):
    """All decimation factors at one cutoff; failures are recorded per point."""
    acq = cfg.acquisition
    out = []
    chain0 = chain_for(acq, f_c, 1)
    filtered = filter_set(traces, ButterworthSpec(chain0.fc)) if chain0.fc is not None else traces
    for n in ns:
        chain = chain_for(acq, f_c, n)
        try:
            processed = decimate_set(filtered, n, decimation_offsets(acq.seed, n, traces.trace_id))
            res, mode, rho, _ = analyze_point(processed, cfg, f_c, n, chain)
        except (ValueError, FloatingPointError, RuntimeError, np.linalg.LinAlgError) as exc:
            log.warning("point f_c=%g n=%d failed: %s", f_c, n, exc)
            f_s = acq.f_s / n
            res, mode, rho = SweepResult(f_c, f_s, n, nyquist_ok(f_c, f_s), error=str(exc)), None, None
        out.append((res, mode, rho))
    return out


_SHARED = {}


def _row_job(args):
    f_c, ns = args
    return process_row(_SHARED["traces"], _SHARED["cfg"], f_c, ns)


def run_sweep(traces, cfg, baseline=BASELINE):
    """Degrade, reconstruct and compare every (f_c, n) point of ``cfg``.

    ``traces`` is the full-span dataset at the native rate. Rows run in
    parallel when ``cfg.workers > 1``; results do not depend on the split.
    """
    baseline = (float(baseline[0]), int(baseline[1]))
    rows = {f: list(cfg.n_list) for f in cfg.fc_list}
    rows.setdefault(baseline[0], [])
    if baseline[1] not in rows[baseline[0]]:
        rows[baseline[0]].append(baseline[1])
    jobs = [(f, tuple(ns)) for f, ns in rows.items()]
    if cfg.workers > 1 and len(jobs) > 1:
        _SHARED.update(traces=traces, cfg=cfg)
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(min(cfg.workers, len(jobs)), mp_context=ctx) as pool:
                done = list(pool.map(_row_job, jobs))
        finally:
            _SHARED.clear()
    else:
        done = [process_row(traces, cfg, f, ns) for f, ns in jobs]
    results, modes, states = [], {}, {}
    for row in done:
        for res, mode, rho in row:
            results.append(res)
            if mode is not None:
                modes[res.key] = mode
                states[res.key] = rho
    results.sort(key=lambda r: (r.f_c, -r.f_s))
    base_mode = modes.get(baseline)
    base_rho = states.get(baseline)
    for r in results:
        if r.error is not None:
            continue
        try:
            if base_mode is not None:
                r.mode_mismatch = mode_mismatch(modes[r.key], base_mode)
            if base_rho is not None:
                r.fidelity_vs_baseline = fidelity(states[r.key], base_rho)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("comparison of f_c=%g n=%d with baseline failed: %s", r.f_c, r.n, exc)
            r.error = f"baseline comparison: {exc}"
    axis = np.linspace(-cfg.wigner_extent, cfg.wigner_extent, cfg.wigner_steps)
    grids = {k: wigner(states[k], axis, axis) for k in cfg.wigner_points if k in states}
    return SweepOutcome(results, modes, states, grids, cfg, baseline)


# ---------------------------------------------------------------- calibration

def mode_matching_factor(acq, mode=None, chain=None):
    """Fraction T of the heralded photon carried by the measured mode.

    The projection weights the native-rate trace with ``mode`` (default: the
    expected mode of ``chain`` on the analysis window, baseline chain if
    omitted); the filters make the effective weighting H w, whose overlap with
    u_id gives T.
    """
    u = ideal_mode_on_trace_grid(acq)
    if chain is None:
        chain = chain_for(acq, None, 1)
    if mode is None:
        w0, w1 = acq.window
        size = int(round((w1 - w0) / acq.dt))
        mode = expected_mode(acq, chain, w0, acq.dt, size)
    w = mode.on_grid(u.t_start, acq.dt, len(u)).samples
    hw = filter_samples(w, acq.dt, chain.gain)
    return float((hw @ u.samples) ** 2 / (hw @ hw) / (u.samples @ u.samples))


def surrogate_w00(model, acq, T=1.0, dim=12, iters=1000, rtol=1e-10):
    """W(0,0) the pipeline would reconstruct from infinitely many traces.

    The detected quadrature is the marginal of the heralded state with purity
    xi * T after detection loss, smoothed by the electronic noise. MaxLik with
    the loss-aware likelihood is run on the expected log-likelihood over a
    phase/quadrature grid.
    """
    rho = apply_loss(heralded_density(model.replace(xi=model.xi * T)), acq.eta_hd)
    sig_e = np.sqrt(acq.electronic_variance)
    var = max(quadrature_moments(rho, th)[1] for th in np.linspace(0, np.pi, 7)) + sig_e**2
    x = np.linspace(-6 * np.sqrt(var), 6 * np.sqrt(var), CAL_POINTS)
    dx = x[1] - x[0]
    th = np.linspace(0, 2 * np.pi, CAL_PHASES, endpoint=False)
    p = marginal_pdf(rho, th, x)
    if sig_e > 0:
        kern = np.exp(-((x[:, None] - x[None, :]) ** 2) / (2 * sig_e**2)) / np.sqrt(2 * np.pi * sig_e**2) * dx
        p = p @ kern
    p = np.clip(p, 0, None) * dx
    X, TH = np.meshgrid(x, th)
    ml = run_maxlik(X.ravel(), TH.ravel(), dim, iters, acq.eta_hd, weights=p.ravel(), rtol=rtol,
                    stop_early=True)
    return wigner_origin(ml.rho), ml


def max_squeezing(model, r_hi=2.0, steps=30):
    """Largest r (to ~1e-6) at which ``model`` still fits its Fock cutoff."""
    def ok(r):
        try:
            heralded_density(model.replace(r=r, xi=1.0))
            return True
        except ValueError:
            return False
    if ok(r_hi):
        return r_hi
    lo, hi = 0.0, r_hi
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def _bisect(f, lo, hi, f_lo, target, tol, max_steps=40):
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if abs(f_mid - target) <= tol:
            return mid, f_mid
        if (f_lo - target) * (f_mid - target) <= 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return mid, f_mid


def calibrate_state(target_w00, acq, xi=None, eta_prep=None, r_range=(0.0, 1.2), tol=0.001,
                    accept=0.005, dim=None, iters=1000):
    """Heralded-state parameters whose baseline reconstruction gives ``target_w00``.

    Bisects r at fixed xi; if the target is not bracketed, bisects xi at the
    nearer r end. Returns ``(model, report)``; raises ValueError listing the
    reachable W(0,0) range when the target lies outside it.
    """
    base = acq.state
    model = base.replace(xi=base.xi if xi is None else xi,
                         eta_prep=base.eta_prep if eta_prep is None else eta_prep,
                         dim=base.dim if dim is None else dim)
    T = mode_matching_factor(acq)
    evals = []

    def w_at(**kw):
        m = model.replace(**kw)
        w = surrogate_w00(m, acq, T, m.dim, iters)[0]
        evals.append(dict(r=m.r, xi=m.xi, W00=w))
        return w

    r_lo, r_hi = r_range[0], min(r_range[1], max_squeezing(model))
    w_lo, w_hi = w_at(r=r_lo), w_at(r=r_hi)
    if abs(w_lo - target_w00) <= tol:
        r, w, xi_fit = r_lo, w_lo, model.xi
    elif (w_lo - target_w00) * (w_hi - target_w00) <= 0:
        r, w = _bisect(lambda v: w_at(r=v), r_lo, r_hi, w_lo, target_w00, tol)
        xi_fit = model.xi
    else:
        r = r_lo if abs(w_lo - target_w00) < abs(w_hi - target_w00) else r_hi
        x0, x1 = w_at(r=r, xi=0.0), w_at(r=r, xi=1.0)
        if (x0 - target_w00) * (x1 - target_w00) > 0:
            lo, hi = min(w_lo, w_hi, x0, x1), max(w_lo, w_hi, x0, x1)
            raise ValueError(
                f"target W(0,0) = {target_w00:.4f} unreachable; model family spans about [{lo:.4f}, {hi:.4f}]"
            )
        xi_fit, w = _bisect(lambda v: w_at(r=r, xi=v), 0.0, 1.0, x0, target_w00, tol)
    if abs(w - target_w00) > accept:
        raise ValueError(f"calibration stalled at W(0,0) = {w:.4f} for target {target_w00:.4f}")
    fitted = model.replace(r=float(r), xi=float(xi_fit))
    report = dict(target_W00=target_w00, achieved_W00=w, mode_matching=T, eta_hd=acq.eta_hd,
                  snr_db=acq.snr_db, model=asdict(fitted), evaluations=evals)
    return fitted, report


# ---------------------------------------------------------------- reports

def _label(f_c, n):
    return f"fc{f_c / 1e6:g}MHz_n{n}"


def _num(v):
    return "" if v is None else repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


HEATMAP_COLUMNS = ["fc_hz", "fs_sps", "nyquist_ok", "W00", "fidelity", "mismatch", "converged_at"]


def write_heatmap(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEATMAP_COLUMNS)
        for r in results:
            conv = -1 if r.maxlik_converged_at is None else r.maxlik_converged_at
            w.writerow([_num(r.f_c), _num(r.f_s), str(r.nyquist_ok).lower(), _num(r.W00),
                        _num(r.fidelity_vs_baseline), _num(r.mode_mismatch), conv])


def write_mode_csv(path, mode):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_seconds", "u_value"])
        for t, u in zip(mode.t, mode.samples):
            w.writerow([repr(float(t)), repr(float(u))])


def write_wigner_csv(path, grid):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "p", "W"])
        for i, x in enumerate(grid.x_axis):
            for j, p in enumerate(grid.p_axis):
                w.writerow([repr(float(x)), repr(float(p)), repr(float(grid.values[i, j]))])


def write_density_csv(path, rho):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "n", "re", "im"])
        for m in range(rho.shape[0]):
            for n in range(rho.shape[1]):
                w.writerow([m, n, repr(float(rho[m, n].real)), repr(float(rho[m, n].imag))])


def result_records(results):
    out = []
    for r in results:
        d = asdict(r)
        d["extra"] = {k: (float(v) if isinstance(v, np.floating) else v) for k, v in r.extra.items()}
        out.append(d)
    return out


def emit_reports(outcome, out_dir):
    """Write heatmap, mode, Wigner and density CSVs plus a run manifest; returns the paths."""
    if not outcome.results:
        raise ValueError("no sweep results to report")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"report directory {out_dir} is not writable")
    paths = []
    p = os.path.join(out_dir, "heatmap.csv")
    write_heatmap(p, outcome.results)
    paths.append(p)
    for key in sorted(outcome.modes):
        p = os.path.join(out_dir, f"mode_{_label(*key)}.csv")
        write_mode_csv(p, outcome.modes[key])
        paths.append(p)
        p = os.path.join(out_dir, f"rho_{_label(*key)}.csv")
        write_density_csv(p, outcome.states[key])
        paths.append(p)
    for key in sorted(outcome.wigner_grids):
        p = os.path.join(out_dir, f"wigner_{_label(*key)}.csv")
        write_wigner_csv(p, outcome.wigner_grids[key])
        paths.append(p)
    p = os.path.join(out_dir, "results.json")
    with open(p, "w") as fh:
        json.dump(result_records(outcome.results), fh, indent=2, sort_keys=True)
    paths.append(p)
    manifest = dict(
        config=outcome.config.to_dict(),
        seed=outcome.config.acquisition.seed,
        baseline=list(outcome.baseline),
        calibration=outcome.calibration,
        failures=[dict(f_c=r.f_c, n=r.n, error=r.error) for r in outcome.results if r.error],
        versions=dict(hdtomo=__version__, numpy=np.__version__, scipy=scipy.__version__,
                      python=platform.python_version()),
        files=sorted(os.path.basename(q) for q in paths),
    )
    p = os.path.join(out_dir, "manifest.json")
    with open(p, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
    paths.append(p)
    return paths


def single_point(traces, cfg, f_c, n, out_dir=None):
    """Run one (f_c, n) point; optionally write its tomography input, mode, state and Wigner grid."""
    acq = cfg.acquisition
    chain = chain_for(acq, f_c, n)
    filtered = filter_set(traces, ButterworthSpec(chain.fc)) if chain.fc is not None else traces
    processed = decimate_set(filtered, n, decimation_offsets(acq.seed, n, traces.trace_id))
    res, mode, rho, tomo = analyze_point(processed, cfg, float(f_c), int(n), chain)
    axis = np.linspace(-cfg.wigner_extent, cfg.wigner_extent, cfg.wigner_steps)
    grid = wigner(rho, axis, axis)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        label = _label(f_c, n)
        write_tomo_csv(os.path.join(out_dir, f"tomo_{label}.csv"), tomo)
        write_mode_csv(os.path.join(out_dir, f"mode_{label}.csv"), mode)
        write_density_csv(os.path.join(out_dir, f"rho_{label}.csv"), rho)
        write_wigner_csv(os.path.join(out_dir, f"wigner_{label}.csv"), grid)
        with open(os.path.join(out_dir, f"result_{label}.json"), "w") as fh:
            json.dump(result_records([res])[0], fh, indent=2, sort_keys=True)
    return res, mode, rho, grid


def model_from_report(report):
    return HeraldedStateModel(**report["model"])
