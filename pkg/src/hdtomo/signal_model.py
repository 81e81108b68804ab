"""Detection temporal modes, the homodyne Butterworth response and spectral widths."""

from dataclasses import dataclass, field

import numpy as np

ENERGY_CAPTURE = 0.99


@dataclass
class TemporalMode:
    """Real temporal profile sampled every ``dt`` seconds from ``t_start``."""

    samples: np.ndarray
    dt: float
    t_start: float = 0.0
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.dt <= 0:
            raise ValueError("sample spacing must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("mode samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def t(self):
        return self.t_start + self.dt * np.arange(self.samples.size)

    def energy(self):
        return float(np.sum(self.samples**2) * self.dt)

    def normalized(self):
        """Copy with sum u^2 dt = 1 and a positive largest-magnitude sample."""
        e = self.energy()
        if e <= 0:
            raise ValueError("cannot normalize an all-zero mode")
        u = self.samples / np.sqrt(e)
        if u[np.argmax(np.abs(u))] < 0:
            u = -u
        return TemporalMode(u, self.dt, self.t_start, dict(self.info))

    def on_grid(self, t_start, dt, size):
        """Linear interpolation onto another uniform grid, renormalized."""
        t_new = t_start + dt * np.arange(size)
        vals = np.interp(t_new, self.t, self.samples, left=0.0, right=0.0)
        return TemporalMode(vals, dt, t_start).normalized()


@dataclass(frozen=True)
class ButterworthSpec:
    f_c: float
    g0: float = 1.0

    def __post_init__(self):
        if self.f_c <= 0 or self.g0 <= 0:
            raise ValueError("cutoff and low-frequency gain must be positive")


def butterworth_gain(f, spec):
    """Second-order Butterworth magnitude G0 / sqrt(1 + (f/f_c)^4)."""
    f = np.asarray(f, dtype=float)
    return spec.g0 / np.sqrt(1.0 + (f / spec.f_c) ** 4)


def ideal_mode_values(t, gamma, t0):
    """Unnormalized sqrt(2k) e^{k (t - t0)} for t <= t0, zero afterwards; k = pi*Gamma."""
    kappa = np.pi * gamma
    t = np.asarray(t, dtype=float)
    # tolerate round-off when t0 sits exactly on a grid node
    before = t <= t0 + 1e-9 * abs(t0) + 1e-18
    out = np.zeros(t.shape)
    out[before] = np.sqrt(2 * kappa) * np.exp(kappa * (t[before] - t0))
    return out


def ideal_mode(gamma, t0, dt, span, t_start=None):
    """One-sided exponential detection mode on a grid of duration ``span``.

    The rate kappa = pi*Gamma makes the spectral density |u(f)|^2 a Lorentzian
    of FWHM Gamma. By default the grid starts at t0 - 0.75*span so the
    post-herald region is visible. Raises if the grid misses more than 1% of
    the mode energy.
    """
    if gamma <= 0 or dt <= 0 or span <= 0:
        raise ValueError("gamma, dt and span must be positive")
    if t_start is None:
        t_start = t0 - 0.75 * span
    n = int(round(span / dt))
    if n < 2:
        raise ValueError("span shorter than two samples")
    kappa = np.pi * gamma
    lead = t0 - t_start
    captured = 0.0 if lead <= 0 else 1.0 - np.exp(-2 * kappa * lead)
    if captured < ENERGY_CAPTURE:
        raise ValueError(
            f"grid holds {captured:.3f} of the mode energy before t0; need >= {ENERGY_CAPTURE} "
            f"(at least {np.log(100) / (2 * kappa):.3g} s of lead)"
        )
    t = t_start + dt * np.arange(n)
    return TemporalMode(ideal_mode_values(t, gamma, t0), dt, t_start).normalized()


def gaussian_mode(sigma_t, dt, span, center=0.0):
    """Gaussian profile whose energy density u^2 has RMS duration ``sigma_t``."""
    n = int(round(span / dt))
    t_start = center - 0.5 * n * dt
    t = t_start + dt * np.arange(n)
    return TemporalMode(np.exp(-((t - center) ** 2) / (4 * sigma_t**2)), dt, t_start).normalized()


def filter_samples(samples, dt, gains_fn):
    """Zero-phase magnitude filtering along the last axis via the real DFT."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[-1]
    f = np.fft.rfftfreq(n, dt)
    return np.fft.irfft(np.fft.rfft(samples, axis=-1) * gains_fn(f), n=n, axis=-1)


def filtered_ideal_mode(mode, spec, pad=True):
    """H(f, f_c) applied to ``mode`` in the Fourier domain, renormalized.

    With ``pad`` the mode is zero-padded to twice its length first so the
    smoothed tail does not wrap around the grid.
    """
    u = mode.samples
    n = u.size
    work = np.concatenate([u, np.zeros(n)]) if pad else u
    out = filter_samples(work, mode.dt, lambda f: butterworth_gain(f, spec))[:n]
    return TemporalMode(out, mode.dt, mode.t_start).normalized()


def spectral_density(mode, pad_factor=8, min_resolution=None):
    """Zero-padded |u(f)|^2 on the two-sided DFT grid, sorted by frequency."""
    n = len(mode)
    size = pad_factor * n
    if min_resolution is not None:
        size = max(size, int(np.ceil(1.0 / (min_resolution * mode.dt))))
    spec = np.abs(np.fft.fft(mode.samples, n=size)) ** 2
    f = np.fft.fftfreq(size, mode.dt)
    order = np.argsort(f)
    return f[order], spec[order]


def _crossing(f, s, i, j, level):
    # linear interpolation between neighbouring bins i (above level) and j (below)
    return f[i] + (level - s[i]) * (f[j] - f[i]) / (s[j] - s[i])


def spectral_bandwidth(mode, pad_factor=8):
    """Full width of the band where |u(f)|^2 stays above half its maximum.

    The DFT grid is padded at least ``pad_factor`` times and refined until the
    bin spacing is below 1/200 of the estimated width; crossings are
    interpolated linearly.
    """
    if len(mode) < 2:
        raise ValueError("spectral bandwidth needs at least two samples")
    width = None
    resolution = None
    for _ in range(4):
        f, s = spectral_density(mode, pad_factor, resolution)
        peak = np.argmax(s)
        level = 0.5 * s[peak]
        hi = peak
        while hi + 1 < s.size and s[hi + 1] >= level:
            hi += 1
        lo = peak
        while lo - 1 >= 0 and s[lo - 1] >= level:
            lo -= 1
        upper = _crossing(f, s, hi, hi + 1, level) if hi + 1 < s.size else f[hi]
        lower = _crossing(f, s, lo, lo - 1, level) if lo > 0 else f[lo]
        width = upper - lower
        df = f[1] - f[0]
        if df <= width / 200:
            break
        resolution = width / 200
    return float(width)


def temporal_width(mode):
    """Full width at half maximum of |u(t)|, interpolated between samples."""
    u = np.abs(mode.samples)
    t = mode.t
    peak = np.argmax(u)
    level = 0.5 * u[peak]
    hi = peak
    while hi + 1 < u.size and u[hi + 1] >= level:
        hi += 1
    lo = peak
    while lo - 1 >= 0 and u[lo - 1] >= level:
        lo -= 1
    right = _crossing(t, u, hi, hi + 1, level) if hi + 1 < u.size else t[hi]
    left = _crossing(t, u, lo, lo - 1, level) if lo > 0 else t[lo]
    return float(right - left)


def overlap(u, v):
    """|sum u v dt| for modes on the same grid."""
    if len(u) != len(v) or not np.isclose(u.dt, v.dt) or not np.isclose(u.t_start, v.t_start, atol=0.5 * u.dt):
        raise ValueError("modes are not on the same grid")
    return float(abs(np.sum(u.samples * v.samples) * u.dt))
