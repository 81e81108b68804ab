"""Quadrature samples from processed traces: mode projection, shot-noise
normalization and LO-phase assignment."""

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .states import squeezed_variance

EFFICIENCY_MODES = ("povm", "rescale")
PHASE_GRID = 720
VARIANCE_TOL = 0.5


@dataclass
class QuadratureSample:
    X: float
    theta: float
    trace_id: int

    def __post_init__(self):
        if not np.isfinite(self.X):
            raise ValueError(f"trace {self.trace_id}: non-finite quadrature")
        if not 0.0 <= self.theta < 2 * np.pi:
            raise ValueError(f"trace {self.trace_id}: phase {self.theta} outside [0, 2pi)")


@dataclass
class TomoSet:
    """Quadrature samples plus the detection efficiency the tomography must model."""

    x: np.ndarray
    theta: np.ndarray
    trace_id: np.ndarray
    eta: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.theta = np.mod(np.asarray(self.theta, dtype=float), 2 * np.pi)
        self.trace_id = np.asarray(self.trace_id, dtype=np.int64)
        if not (self.x.shape == self.theta.shape == self.trace_id.shape):
            raise ValueError("x, theta and trace_id must have the same length")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite quadrature samples")

    def __len__(self):
        return self.x.size

    def samples(self):
        return [QuadratureSample(float(x), float(t), int(i)) for x, t, i in zip(self.x, self.theta, self.trace_id)]


def _check_grid(dt, t_start, size, mode):
    if size != len(mode) or not np.isclose(dt, mode.dt, rtol=1e-9) \
            or np.max(np.abs(np.asarray(t_start) - mode.t_start)) > dt * (1 + 1e-9):
        raise ValueError("trace and mode grids differ; interpolate the mode first")


def project_quadrature(trace, mode):
    """X = sum_k u_k v_k dt."""
    _check_grid(trace.dt, [trace.t_start], len(trace), mode)
    return float(np.dot(mode.samples, trace.samples) * trace.dt)


def project_set(traces, mode):
    _check_grid(traces.dt, traces.t_start, traces.samples.shape[1], mode)
    return traces.samples @ mode.samples * traces.dt


def shot_noise_variance(mode, chain, electronic=0.0):
    """Variance of the projection of white vacuum noise through ``chain`` onto ``mode``.

    Native traces carry vacuum noise of per-sample variance 1/(2 dt); after
    filtering and decimation the projection variance is the quadratic form
    dt'^2 sum_jk u_j u_k c(|j - k|). ``electronic`` adds white noise of that
    variance per unit mode before filtering.
    """
    m = len(mode)
    c = chain.noise_autocovariance((0.5 + electronic) / chain.dt, np.arange(m))
    toeplitz = c[np.abs(np.arange(m)[:, None] - np.arange(m)[None, :])]
    u = mode.samples
    return float(u @ toeplitz @ u * mode.dt**2)


def empirical_shot_noise_variance(reference_traces, mode):
    """Projection variance of vacuum reference traces processed like the signal."""
    x = project_set(reference_traces, mode)
    if x.size < 2:
        raise ValueError("need at least two reference traces")
    return float(np.var(x))


@dataclass
class PhaseScan:
    """Linear LO scan: theta(t) = theta_ref + rate * (t - t_ref)."""

    rate: float
    t_ref: float


def block_variances(samples, dt, t_start, tau, noise_gain, native_dt, electronic=0.0):
    """Mean-square of consecutive blocks of duration ``tau``, in units of quadrature variance.

    ``samples`` is (N, M) side-region data; returns (variances (N, B), block
    centre times (N, B)). Filtered white noise of variance V per unit mode has
    per-sample variance V * noise_gain / native_dt.
    """
    samples = np.atleast_2d(samples)
    per_block = max(int(round(tau / dt)), 1)
    nb = samples.shape[1] // per_block
    if nb < 1:
        raise ValueError("side region shorter than one phase-estimation block")
    blocks = samples[:, :nb * per_block].reshape(samples.shape[0], nb, per_block)
    v = np.mean(blocks**2, axis=2) * native_dt / noise_gain - electronic
    centres = np.asarray(t_start, dtype=float).reshape(-1, 1) + dt * (per_block * np.arange(nb) + 0.5 * (per_block - 1))
    return v, centres


def fit_phases(variances, times, scan, r, eta=1.0, tol=VARIANCE_TOL):
    """Least-squares LO phase at ``scan.t_ref`` for every row of block variances.

    A coarse grid over [0, 2pi) is refined by a bounded scalar search. The
    squeezed variance has period pi, so the result is defined modulo pi and
    returned in [0, pi); the known scan direction separates theta from -theta.
    """
    if r <= 0:
        raise ValueError("phase unidentifiable: background variance is flat for r = 0")
    v_lo = squeezed_variance(r, 0.0, eta)
    v_hi = squeezed_variance(r, np.pi / 2, eta)
    mean = np.mean(variances, axis=1)
    bad = (mean < v_lo * (1 - tol)) | (mean > v_hi * (1 + tol))
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(
            f"side-region variance {mean[i]:.3g} outside [{v_lo:.3g}, {v_hi:.3g}] (tolerance {tol}); "
            "check shot-noise scaling and squeezing"
        )
    grid = np.linspace(0, np.pi, PHASE_GRID, endpoint=False)
    offs = scan.rate * (times - scan.t_ref)  # (N, B)
    out = np.empty(variances.shape[0])
    # residual for each grid phase; rows share block layout only if offsets agree,
    # so evaluate per row in a vectorized block of the grid
    for i in range(variances.shape[0]):
        model = squeezed_variance(r, grid[:, None] + offs[i][None, :], eta)
        cost = np.sum((model - variances[i][None, :]) ** 2, axis=1)
        k = int(np.argmin(cost))
        step = grid[1] - grid[0]

        def f(th, i=i):
            return float(np.sum((squeezed_variance(r, th + offs[i], eta) - variances[i]) ** 2))

        res = minimize_scalar(f, bounds=(grid[k] - step, grid[k] + step), method="bounded",
                              options={"xatol": 1e-6})
        out[i] = np.mod(res.x, np.pi)
    return out


def estimate_phase(pre, post, scan, r, tau, noise_gain, native_dt, eta=1.0, electronic=0.0, tol=VARIANCE_TOL):
    """LO phase at ``scan.t_ref`` of one trace from its side regions.

    ``pre`` and ``post`` are HomodyneTraces before and after the analysis
    window (either may be None). Block variances of duration ``tau`` are fitted
    with the squeezed-vacuum variance along the known linear scan.
    """
    parts = [p for p in (pre, post) if p is not None]
    if not parts:
        raise ValueError("no side region supplied")
    if sum(len(p) for p in parts) < 200:
        raise ValueError("side regions need at least 200 samples")
    vs, ts = [], []
    for p in parts:
        v, c = block_variances(p.samples[None, :], p.dt, [p.t_start], tau, noise_gain, native_dt, electronic)
        vs.append(v)
        ts.append(c)
    return float(fit_phases(np.hstack(vs), np.hstack(ts), scan, r, eta, tol)[0])


def mode_hash(mode):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mode.samples, dtype="<f8").tobytes())
    h.update(np.array([mode.dt, mode.t_start], dtype="<f8").tobytes())
    return h.hexdigest()


def collect_tomo_set(traces, mode, eta_hd, phases=None, vacuum_variance=0.5,
                     efficiency_mode="povm", meta=None):
    """Project every windowed trace onto ``mode`` and attach LO phases.

    Quadratures are scaled so a vacuum input has variance 1/2. ``phases``
    defaults to the generator truth stored on the traces. With
    ``efficiency_mode="povm"`` the samples are left as measured and ``eta_hd``
    travels with them for a loss-aware likelihood; ``"rescale"`` divides by
    sqrt(eta_hd) instead and marks the set accordingly.
    """
    if efficiency_mode not in EFFICIENCY_MODES:
        raise ValueError(f"efficiency_mode must be one of {EFFICIENCY_MODES}")
    if not 0 < eta_hd <= 1:
        raise ValueError(f"eta_hd must lie in (0, 1], got {eta_hd}")
    if not np.any(mode.samples):
        raise ValueError("mode is identically zero")
    if vacuum_variance <= 0:
        raise ValueError("vacuum variance must be positive")
    if phases is None:
        phases = traces.true_phase
        if np.any(np.isnan(phases)):
            raise ValueError("traces carry no ground-truth phases; supply estimated phases")
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (len(traces),):
        raise ValueError("need one phase per trace")
    x = project_set(traces, mode.normalized()) * np.sqrt(0.5 / vacuum_variance)
    info = dict(meta or {})
    info.update(eta_hd=eta_hd, efficiency_mode=efficiency_mode, mode_hash=mode_hash(mode),
                vacuum_variance=vacuum_variance)
    if efficiency_mode == "rescale":
        x = x / np.sqrt(eta_hd)
        info["caveat"] = "samples rescaled by 1/sqrt(eta_hd); noise variance inflated, tomography runs lossless"
        return TomoSet(x, phases, traces.trace_id, 1.0, info)
    return TomoSet(x, phases, traces.trace_id, eta_hd, info)


def write_tomo_csv(path, tomo):
    """CSV ``trace_id,theta,X`` plus a JSON sidecar ``<path>.meta.json``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trace_id", "theta", "X"])
        for i, th, x in zip(tomo.trace_id, tomo.theta, tomo.x):
            w.writerow([int(i), repr(float(th)), repr(float(x))])
    with open(f"{path}.meta.json", "w") as fh:
        json.dump({"eta": tomo.eta, **tomo.meta}, fh, indent=2, sort_keys=True, default=float)


def read_tomo_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    try:
        with open(f"{path}.meta.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        meta = {"eta": 1.0}
    eta = float(meta.pop("eta", 1.0))
    return TomoSet(data["X"], data["theta"], data["trace_id"].astype(np.int64), eta, meta)
