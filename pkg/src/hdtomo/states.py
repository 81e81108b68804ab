"""Heralded photon-subtracted squeezed vacuum and its homodyne statistics."""

from dataclasses import dataclass

import numpy as np

from .fock import apply_loss, fock_wavefunctions, quadrature_moments, squeeze_operator

# inverse-CDF sampling grid
CDF_POINTS = 4096
CDF_SIGMAS = 6.0


@dataclass(frozen=True)
class HeraldedStateModel:
    """Mixture xi * S|1><1|S^dag + (1 - xi) * S|0><0|S^dag seen through loss eta_prep."""

    r: float = 0.254
    xi: float = 0.8
    eta_prep: float = 0.9
    dim: int = 12

    def __post_init__(self):
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError(f"xi must lie in [0, 1], got {self.xi}")
        if not 0.0 < self.eta_prep <= 1.0:
            raise ValueError(f"eta_prep must lie in (0, 1], got {self.eta_prep}")
        if self.dim < 4:
            raise ValueError(f"Fock cutoff must be at least 4, got {self.dim}")
        if self.r < 0:
            raise ValueError("squeezing parameter must be non-negative")

    def replace(self, **changes):
        fields = dict(r=self.r, xi=self.xi, eta_prep=self.eta_prep, dim=self.dim)
        fields.update(changes)
        return HeraldedStateModel(**fields)


def heralded_density(model, tail_tol=1e-3):
    """Density matrix of the heralded state, truncated to ``model.dim`` levels."""
    dim = model.dim
    work = max(2 * dim, 24)
    s = squeeze_operator(model.r, work)
    sq0 = s[:, 0]
    sq1 = s[:, 1]
    rho = model.xi * np.outer(sq1, sq1.conj()) + (1 - model.xi) * np.outer(sq0, sq0.conj())
    rho = apply_loss(rho, model.eta_prep)
    tail = np.real(rho[dim - 1, dim - 1])
    if tail >= tail_tol:
        raise ValueError(
            f"Fock population at the cutoff is {tail:.2e} >= {tail_tol:g}; increase dim beyond {dim}"
        )
    rho = rho[:dim, :dim]
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def squeezed_vacuum_density(r, dim, eta=1.0):
    return heralded_density(HeraldedStateModel(r=r, xi=0.0, eta_prep=eta, dim=dim))


def squeezed_variance(r, theta, eta=1.0):
    """Quadrature variance of lossy squeezed vacuum, squeezed along theta = 0."""
    pure = 0.5 * (np.exp(-2 * r) * np.cos(theta) ** 2 + np.exp(2 * r) * np.sin(theta) ** 2)
    return eta * pure + 0.5 * (1 - eta)


def _phase_harmonics(rho, x):
    """c_k(x) = sum_{n-m=k} rho_mn psi_m psi_n for k = -(D-1) .. D-1."""
    dim = rho.shape[0]
    psi = fock_wavefunctions(dim, x)
    ks = np.arange(-(dim - 1), dim)
    coeffs = np.zeros((ks.size, np.size(x)), dtype=complex)
    for m in range(dim):
        for n in range(dim):
            coeffs[n - m + dim - 1] += rho[m, n] * psi[m] * psi[n]
    return ks, coeffs


def marginal_pdf(rho, theta, x_grid):
    """p(x | theta) = sum_mn rho_mn e^{i(n-m) theta} psi_m(x) psi_n(x)."""
    rho = np.asarray(rho)
    x_grid = np.asarray(x_grid, dtype=float)
    ks, coeffs = _phase_harmonics(rho, x_grid.ravel())
    phases = np.exp(1j * np.multiply.outer(np.atleast_1d(theta), ks))
    p = np.real(phases @ coeffs)
    if np.ndim(theta) == 0:
        return p[0].reshape(x_grid.shape)
    return p.reshape(np.shape(theta) + x_grid.shape)


def _sampling_halfwidth(rho):
    var = max(quadrature_moments(rho, th)[1] for th in np.linspace(0, np.pi, 9))
    return CDF_SIGMAS * np.sqrt(var)


def sample_quadratures(rho, thetas, uniforms, points=CDF_POINTS):
    """Inverse-CDF draws of X(theta_i) using the supplied uniforms (one per theta).

    The CDF is tabulated on ``points`` nodes over +-6 standard deviations of the
    widest quadrature and inverted by linear interpolation.
    """
    rho = np.asarray(rho)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    uniforms = np.atleast_1d(np.asarray(uniforms, dtype=float))
    half = _sampling_halfwidth(rho)
    x = np.linspace(-half, half, points)
    ks, coeffs = _phase_harmonics(rho, x)
    if thetas.shape != uniforms.shape:
        raise ValueError("need exactly one uniform per phase")
    unique, inverse = np.unique(thetas, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(unique.size + 1))
    out = np.empty(thetas.size)
    chunk = 1024
    for start in range(0, unique.size, chunk):
        th = unique[start:start + chunk]
        pdf = np.real(np.exp(1j * np.multiply.outer(th, ks)) @ coeffs)
        np.clip(pdf, 0.0, None, out=pdf)
        cdf = np.concatenate(
            [np.zeros((th.size, 1)), np.cumsum(0.5 * (pdf[:, 1:] + pdf[:, :-1]), axis=1)], axis=1
        )
        cdf /= cdf[:, -1:]
        for i, row in enumerate(cdf):
            sel = order[bounds[start + i]:bounds[start + i + 1]]
            out[sel] = np.interp(uniforms[sel], row, x)
    return out


def sample_quadrature(rho, theta, rng):
    """One draw of X(theta) from the marginal of ``rho``."""
    return float(sample_quadratures(rho, [theta], [rng.random()])[0])
