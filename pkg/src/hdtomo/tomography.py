"""Maximum-likelihood reconstruction of a single-mode density matrix from
phase-tagged homodyne quadratures, plus Wigner-function and fidelity metrics.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .fock import fock_wavefunctions, loss_kraus_weights

PROBABILITY_FLOOR = 1e-300
DENSITY_TOL = 1e-10


def check_density(rho, tol=DENSITY_TOL):
    """Raise ``ValueError`` unless ``rho`` is Hermitian, unit-trace and PSD within ``tol``."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > tol:
        raise ValueError(f"density matrix not Hermitian (max deviation {herm:.2e})")
    tr = np.trace(rho)
    if abs(tr - 1) > tol:
        raise ValueError(f"density matrix trace is {tr.real:.12f}, expected 1")
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if lam[0] < -tol:
        raise ValueError(f"density matrix not positive semidefinite (min eigenvalue {lam[0]:.2e})")
    return rho


def povm_elements(x, theta, dim, eta=1.0):
    """Loss-aware quadrature projectors Pi^eta(x_j, theta_j), shape (N, dim, dim).

    Pi^eta = sum_k A_k^dag |x,theta><x,theta| A_k with binomial loss Kraus
    operators A_k; eta = 1 gives the rank-one projector.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"detection efficiency must lie in (0, 1], got {eta}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = np.broadcast_to(np.asarray(theta, dtype=float), x.shape)
    psi = fock_wavefunctions(dim, x)  # (dim, N)
    amp = np.sqrt(loss_kraus_weights(dim, eta))
    kmax = 1 if eta == 1.0 else dim
    g = np.zeros((x.size, dim, dim))
    for k in range(kmax):
        s = np.zeros((dim, x.size))
        s[k:] = amp[k:, k, None] * psi[: dim - k]
        g += np.einsum("mj,nj->jmn", s, s)
    phase = np.exp(1j * np.outer(theta, np.arange(dim)))  # e^{i m theta}
    return g * phase[:, :, None] * phase.conj()[:, None, :]


def loss_povm(x, theta, dim, eta=1.0):
    """Single POVM element Pi^eta(x, theta) as a (dim, dim) Hermitian matrix."""
    return povm_elements([x], [theta], dim, eta)[0]


class QuadratureLikelihood:
    """Precomputed POVM elements for a set of (x, theta) samples.

    ``weights`` lets the same machinery serve binned data or exact expected
    likelihoods; by default every sample counts once.
    """

    def __init__(self, x, theta, dim, eta=1.0, weights=None):
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            raise ValueError("no quadrature samples supplied")
        self.dim = dim
        self.eta = eta
        self.x = x
        self.theta = np.asarray(theta, dtype=float).ravel()
        self.weights = np.ones(x.size) if weights is None else np.asarray(weights, dtype=float).ravel()
        self.total_weight = self.weights.sum()
        self._flat = povm_elements(x, self.theta, dim, eta).reshape(x.size, dim * dim)

    def __len__(self):
        return self.x.size

    def probabilities(self, rho):
        return np.real(self._flat @ np.asarray(rho).T.ravel())

    def _checked_probabilities(self, rho):
        p = self.probabilities(rho)
        bad = np.flatnonzero(p <= PROBABILITY_FLOOR)
        if bad.size:
            j = bad[0]
            raise FloatingPointError(
                f"sample {j} (x={self.x[j]:.4f}, theta={self.theta[j]:.4f}) has probability "
                f"{p[j]:.3e} below the underflow floor"
            )
        return p

    def log_likelihood(self, rho):
        return float(self.weights @ np.log(self._checked_probabilities(rho)))

    def r_operator(self, rho, p=None):
        if p is None:
            p = self._checked_probabilities(rho)
        r = ((self.weights / p) @ self._flat).reshape(self.dim, self.dim) / self.total_weight
        return 0.5 * (r + r.conj().T)


def _rrr(r, rho):
    out = r @ rho @ r
    out = 0.5 * (out + out.conj().T)
    return out / np.trace(out).real


def maxlik_iterate(rho, likelihood, loglik=None):
    """One R rho R step; returns ``(rho_new, loglik_new)``.

    Falls back to the diluted update (I + eps R) rho (I + eps R) when the plain
    step would lower the likelihood, so the trajectory is non-decreasing.
    """
    p = likelihood._checked_probabilities(rho)
    if loglik is None:
        loglik = float(likelihood.weights @ np.log(p))
    r = likelihood.r_operator(rho, p)
    new = _rrr(r, rho)
    new_ll = likelihood.log_likelihood(new)
    eps = 1.0
    eye = np.eye(likelihood.dim)
    while new_ll < loglik and eps > 1e-12:
        eps *= 0.5
        step = (eye + eps * r) / (1 + eps)
        new = _rrr(step, rho)
        new_ll = likelihood.log_likelihood(new)
    if new_ll < loglik:
        return rho, loglik
    return new, new_ll


@dataclass
class MaxLikResult:
    rho: np.ndarray
    loglik: np.ndarray
    converged_at: int | None
    iterations: int
    extra: dict = field(default_factory=dict)


def bin_samples(x, theta, phase_bins, x_step=None):
    """Histogram samples into phase bins (and optionally x bins of width ``x_step``).

    Returns bin-centre (x, theta) and counts for use as likelihood weights.
    Without ``x_step`` only the phases are replaced by bin centres.
    """
    x = np.asarray(x, dtype=float)
    theta = np.mod(np.asarray(theta, dtype=float), 2 * np.pi)
    if phase_bins < 1:
        raise ValueError("need at least one phase bin")
    width = 2 * np.pi / phase_bins
    k = np.minimum((theta // width).astype(np.int64), phase_bins - 1)
    centres = (k + 0.5) * width
    if x_step is None:
        return x, centres, np.ones(x.size)
    if x_step <= 0:
        raise ValueError("x_step must be positive")
    j = np.round(x / x_step).astype(np.int64)
    keys, counts = np.unique(np.stack([k, j]), axis=1, return_counts=True)
    return keys[1] * x_step, (keys[0] + 0.5) * width, counts.astype(float)


def run_maxlik(x, theta, dim=12, iters=1000, eta=1.0, weights=None, rtol=1e-10, rho0=None,
               likelihood=None, stop_early=False):
    """Iterate R rho R from the maximally mixed state for ``iters`` steps.

    ``converged_at`` is the first iteration whose relative log-likelihood
    change falls below ``rtol`` (None if it never does). Iteration runs the
    full budget unless ``stop_early`` is set.
    """
    if iters < 1:
        raise ValueError("need at least one iteration")
    if likelihood is None:
        likelihood = QuadratureLikelihood(x, theta, dim, eta, weights)
    rho = np.eye(dim, dtype=complex) / dim if rho0 is None else np.asarray(rho0, dtype=complex)
    ll = likelihood.log_likelihood(rho)
    trajectory = [ll]
    converged_at = None
    for it in range(1, iters + 1):
        rho, new_ll = maxlik_iterate(rho, likelihood, ll)
        if converged_at is None and abs(new_ll - ll) <= rtol * abs(new_ll):
            converged_at = it
        ll = new_ll
        trajectory.append(ll)
        if stop_early and converged_at is not None:
            break
    return MaxLikResult(rho=rho, loglik=np.array(trajectory), converged_at=converged_at,
                        iterations=len(trajectory) - 1)


@dataclass
class WignerGrid:
    x_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray  # indexed [i_x, i_p]

    def integral(self):
        dx = np.diff(self.x_axis).mean()
        dp = np.diff(self.p_axis).mean()
        return float(self.values.sum() * dx * dp)


def wigner(rho, x_axis, p_axis):
    """Wigner function on a grid, normalized to unit volume (vacuum W(0,0) = 1/pi)."""
    rho = np.asarray(rho)
    dim = rho.shape[0]
    xx, pp = np.meshgrid(np.asarray(x_axis, float), np.asarray(p_axis, float), indexing="ij")
    r2 = xx**2 + pp**2
    z = np.sqrt(2.0) * (xx - 1j * pp)
    acc = np.zeros(xx.shape)
    for n in range(dim):
        lag = eval_genlaguerre(n, 0, 2 * r2)
        acc += (-1) ** n * np.real(rho[n, n]) * lag
        for m in range(n + 1, dim):
            if rho[m, n] == 0:
                continue
            coef = (-1) ** n * np.exp(0.5 * (gammaln(n + 1) - gammaln(m + 1)))
            term = rho[m, n] * coef * z ** (m - n) * eval_genlaguerre(n, m - n, 2 * r2)
            acc += 2 * np.real(term)
    return WignerGrid(np.asarray(x_axis, float), np.asarray(p_axis, float),
                      acc * np.exp(-r2) / np.pi)


def wigner_origin(rho):
    """W(0, 0) = (1/pi) sum_n (-1)^n rho_nn."""
    diag = np.real(np.diag(np.asarray(rho)))
    return float(np.sum((-1.0) ** np.arange(diag.size) * diag) / np.pi)


def _psd_sqrt(rho, tol):
    lam, vec = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if lam[0] < -tol:
        raise ValueError(f"fidelity input not positive semidefinite (min eigenvalue {lam[0]:.2e})")
    return (vec * np.sqrt(np.clip(lam, 0, None))) @ vec.conj().T


def fidelity(rho1, rho2, tol=1e-9):
    """Uhlmann fidelity (Tr sqrt(sqrt(rho1) rho2 sqrt(rho1)))^2."""
    rho1 = np.asarray(rho1)
    rho2 = np.asarray(rho2)
    if rho1.shape != rho2.shape:
        raise ValueError(f"dimension mismatch {rho1.shape} vs {rho2.shape}")
    s1 = _psd_sqrt(rho1, tol)
    _psd_sqrt(rho2, tol)
    inner = s1 @ rho2 @ s1
    lam = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    f = np.sum(np.sqrt(np.clip(lam, 0, None))) ** 2
    return float(min(max(f, 0.0), 1.0))


def wigner_overlap(rho1, rho2):
    """Normalized phase-space overlap Tr(rho1 rho2) / sqrt(Tr rho1^2 Tr rho2^2)."""
    num = np.real(np.trace(rho1 @ rho2))
    den = np.sqrt(np.real(np.trace(rho1 @ rho1)) * np.real(np.trace(rho2 @ rho2)))
    return float(num / den)
