"""Truncated Fock-space primitives shared by state synthesis and tomography.

Quadrature convention: X(theta) = (a e^{-i theta} + a^dag e^{i theta}) / sqrt(2),
vacuum variance 1/2, <n|x,theta> = e^{i n theta} psi_n(x).
"""

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln


def fock_wavefunctions(nmax, x):
    """Harmonic-oscillator eigenfunctions psi_0 .. psi_{nmax-1} evaluated at ``x``.

    Uses the normalized upward recurrence, which stays stable well past n = 50
    where the explicit Hermite-polynomial form overflows.

    Returns an array of shape ``(nmax,) + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    psi = np.zeros((nmax,) + x.shape)
    if nmax == 0:
        return psi
    psi[0] = np.pi ** -0.25 * np.exp(-0.5 * x**2)
    if nmax > 1:
        psi[1] = np.sqrt(2.0) * x * psi[0]
    for n in range(1, nmax - 1):
        psi[n + 1] = np.sqrt(2.0 / (n + 1)) * x * psi[n] - np.sqrt(n / (n + 1)) * psi[n - 1]
    return psi


def fock_wavefunction(n, x):
    """Single eigenfunction psi_n(x); scalar in, scalar out."""
    if n < 0:
        raise ValueError("Fock index must be non-negative")
    out = fock_wavefunctions(n + 1, x)[n]
    return float(out) if np.ndim(out) == 0 else out


def annihilation(dim):
    return np.diag(np.sqrt(np.arange(1, dim)), k=1)


def squeeze_operator(r, dim):
    """S(r) = exp(r/2 (a^2 - a^dag^2)) on a ``dim``-level space.

    Built on a working space twice as large and truncated, so the low-lying
    block is accurate for moderate r.
    """
    work = 2 * dim
    a = annihilation(work)
    gen = 0.5 * r * (a @ a - a.T @ a.T)
    return expm(gen)[:dim, :dim]


def loss_kraus_weights(dim, eta):
    """B[n, k] = C(n, k) eta^(n-k) (1-eta)^k, zero for k > n.

    These are the squared Kraus amplitudes of the pure-loss channel mapping
    |n> -> |n-k>.
    """
    n = np.arange(dim)[:, None]
    k = np.arange(dim)[None, :]
    valid = k <= n
    with np.errstate(divide="ignore", invalid="ignore"):
        logc = gammaln(n + 1) - gammaln(k + 1) - gammaln(np.where(valid, n - k, 0) + 1)
        logw = logc + np.where(valid, n - k, 0) * np.log(eta)
        if eta < 1.0:
            logw = logw + k * np.log1p(-eta)
        else:
            logw = np.where(k == 0, logw, -np.inf)
    return np.where(valid, np.exp(logw), 0.0)


def apply_loss(rho, eta):
    """Pure-loss channel of transmissivity ``eta`` on a Fock-basis density matrix."""
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"loss transmissivity must lie in (0, 1], got {eta}")
    rho = np.asarray(rho)
    if eta == 1.0:
        return rho.copy()
    dim = rho.shape[0]
    amp = np.sqrt(loss_kraus_weights(dim, eta))
    out = np.zeros_like(rho, dtype=complex)
    for k in range(dim):
        # A_k = sum_n amp[n, k] |n-k><n|
        m = dim - k
        a_k = np.zeros((m, dim))
        a_k[np.arange(m), np.arange(k, dim)] = amp[k:, k]
        out[:m, :m] += a_k @ rho @ a_k.T
    return out


def quadrature_moments(rho, theta):
    """Mean and variance of X(theta) for the state ``rho``."""
    rho = np.asarray(rho)
    dim = rho.shape[0]
    a = annihilation(dim)
    a_mean = np.trace(rho @ a)
    a2 = np.trace(rho @ a @ a)
    # keep the number operator exact at the truncation edge
    n_mean = np.real(np.sum(np.arange(dim) * np.diag(rho)))
    mean = np.sqrt(2.0) * np.real(a_mean * np.exp(-1j * theta))
    second = np.real(a2 * np.exp(-2j * theta)) + n_mean + 0.5
    return mean, second - mean**2
