"""Mean-field stochastic peakons.

The momentum ``m = sum_a p_a delta(x - q_a)`` of each member generates the
velocity ``u = K * m``. Positions and momenta obey

    dq_a =  E[u](q_a) dt   + sum_k xi_k(q_a) o dW_k
    dp_a = -p_a E[u_x](q_a) dt - p_a sum_k xi_k'(q_a) o dW_k

where the expectation is taken over the ensemble field and evaluated at the
member's own positions. States are stacked as ``(M, 2, N)`` with ``q`` in
row 0 and ``p`` in row 1.

Kernel: ``K(x) = 1/2 exp(-|x|/alpha)`` on the line, or its periodic image
sum on ``[0, L)``. Either way ``(1 - alpha^2 d_xx) K = alpha delta``, and
``K'(0) = 0`` at the peak.
"""

from dataclasses import dataclass, replace

import numpy as np

from .spectral import diffusive_dt_limit
from .errors import ConfigError, NumericalFailure
from .meanfield import MeanFieldModel, empirical_mean
from .noise import empty_basis

KERNELS = ("line", "periodic")
TWO_PI = 2.0 * np.pi
_CHUNK = 1 << 22


def _check_alpha(alpha):
    if not (np.isfinite(alpha) and alpha > 0):
        raise ConfigError(f"alpha must be positive, got {alpha}", key="peakons.alpha")


def pk_kernel(x, alpha, kernel="line", L=TWO_PI):
    _check_alpha(alpha)
    x = np.asarray(x, dtype=float)
    if kernel == "line":
        return 0.5 * np.exp(-np.abs(x) / alpha)
    if kernel == "periodic":
        d = np.mod(x, L)
        den = 1.0 - np.exp(-L / alpha)
        return 0.5 * (np.exp(-d / alpha) + np.exp((d - L) / alpha)) / den
    raise ConfigError(f"unknown kernel '{kernel}'", key="peakons.kernel")


def pk_kernel_deriv(x, alpha, kernel="line", L=TWO_PI):
    """``K'(x)``, with ``K'(0) = 0`` at the peak."""
    _check_alpha(alpha)
    x = np.asarray(x, dtype=float)
    if kernel == "line":
        out = -np.sign(x) / (2.0 * alpha) * np.exp(-np.abs(x) / alpha)
        return out
    if kernel == "periodic":
        d = np.mod(x, L)
        den = 2.0 * alpha * (1.0 - np.exp(-L / alpha))
        out = (np.exp((d - L) / alpha) - np.exp(-d / alpha)) / den
        return np.where(d == 0.0, 0.0, out)
    raise ConfigError(f"unknown kernel '{kernel}'", key="peakons.kernel")


def _kernel_pair(d, alpha, kernel, L):
    """``(K(d), K'(d))`` sharing one set of exponentials."""
    if kernel == "line":
        e = 0.5 * np.exp(-np.abs(d) / alpha)
        return e, -np.sign(d) / alpha * e
    r = np.mod(d, L)
    den = 2.0 * (1.0 - np.exp(-L / alpha))
    a = np.exp(-r / alpha)
    b = np.exp((r - L) / alpha)
    return (a + b) / den, np.where(r == 0.0, 0.0, (b - a) / (alpha * den))


def kernel_symbol(k, alpha):
    """Fourier symbol of ``K``: ``alpha / (1 + alpha^2 k^2)``."""
    return alpha / (1.0 + (alpha * k) ** 2)


def _field_sum(x, q, p, alpha, kernel, L, deriv):
    """``sum_j p_j K(x - q_j)`` for points ``x`` (any shape) and sources ``q, p`` (flat)."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    fn = pk_kernel_deriv if deriv else pk_kernel
    out = np.empty(flat.shape)
    rows = max(1, _CHUNK // max(q.size, 1))
    for s in range(0, flat.size, rows):
        block = fn(flat[s:s + rows, None] - q[None, :], alpha, kernel, L)
        out[s:s + rows] = np.sum(block * p, axis=1)
    return out.reshape(x.shape)


def pk_velocity(x, q, p, alpha, kernel="line", L=TWO_PI):
    """``u(x) = sum_a p_a K(x - q_a)`` for one member."""
    return _field_sum(x, q, p, alpha, kernel, L, False)


def pk_velocity_deriv(x, q, p, alpha, kernel="line", L=TWO_PI):
    return _field_sum(x, q, p, alpha, kernel, L, True)


def pk_mean_velocity(x, ensemble, alpha, kernel="line", L=TWO_PI, deriv=False):
    """Ensemble-mean velocity (or its derivative) at points ``x``.

    ``ensemble`` is ``(M, 2, N)``; the mean field is ``1/M`` times the sum
    over every peakon of every member.
    """
    ensemble = np.asarray(ensemble, dtype=float)
    M = ensemble.shape[0]
    return _field_sum(x, ensemble[:, 0], ensemble[:, 1], alpha, kernel, L, deriv) / M


def pk_noise(q, xi_funcs, L):
    """Correlate values and two derivatives at ``q``: three arrays ``(K, ...)``."""
    if not xi_funcs:
        z = np.zeros((0,) + np.shape(q))
        return z, z, z
    return tuple(np.stack([c.scalar(q, L, order) for c in xi_funcs]) for order in (0, 1, 2))


def pk_rhs(q, p, mean_u, mean_ux, basis, L=TWO_PI):
    """Drift, per-correlate diffusions and Ito correction for one or more members.

    ``mean_u`` and ``mean_ux`` are the expected velocity and its derivative
    evaluated at ``q``. Returns ``(drift, diffusions, ito)`` with drift and
    ito shaped ``(..., 2, N)`` and diffusions ``(K, ..., 2, N)``.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    xi, dxi, ddxi = pk_noise(q, list(basis) if basis is not None else [], L)
    drift = np.stack([mean_u, -p * mean_ux], axis=-2)
    diff = np.stack([xi, -p * dxi], axis=-2)
    ito_q = 0.5 * np.sum(xi * dxi, axis=0)
    ito_p = 0.5 * np.sum(p * dxi * dxi - p * xi * ddxi, axis=0)
    return drift, diff, np.stack([ito_q, ito_p], axis=-2)


class PeakonMean:
    """Spectral representation of the expected momentum on ``[0, L)``.

    ``coef`` holds rfft-layout coefficients of ``m`` on an ``n``-point grid.
    """

    def __init__(self, n, L, alpha):
        self.n = n
        self.L = L
        self.alpha = alpha
        self.index = np.arange(n // 2 + 1)
        self.k = self.index * (TWO_PI / L)
        self.mask = self.index < n / 3
        self.symbol = kernel_symbol(self.k, alpha)

    def from_members(self, members):
        """Coefficients of ``1/M sum p_a delta(x - q_a)``, truncated to the dealiased band."""
        members = np.asarray(members, dtype=float)
        q = members[:, 0].reshape(-1)
        p = members[:, 1].reshape(-1)
        coef = np.zeros(self.index.size, dtype=complex)
        for s in range(0, q.size, 4096):
            ph = np.exp(-1j * np.outer(q[s:s + 4096], self.k))
            coef += p[s:s + 4096] @ ph
        return self.mask * coef * (self.n / (self.L * members.shape[0]))

    def _eval(self, coef, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        c = coef.copy()
        c[1:] *= 2.0
        if self.n % 2 == 0:
            c[-1] *= 0.5
        out = np.empty(flat.shape)
        for s in range(0, flat.size, 2048):
            ph = np.exp(1j * np.outer(flat[s:s + 2048], self.k))
            out[s:s + 2048] = (ph @ c).real / self.n
        return out.reshape(x.shape)

    def velocity(self, coef, x, deriv=False):
        vh = self.symbol * coef
        if deriv:
            vh = 1j * self.k * vh
        return self._eval(vh, x)

    def to_grid(self, coef):
        return np.fft.irfft(coef, n=self.n)

    def lie(self, xi, m, dxi=None):
        """``xi m_x + 2 m xi_x`` on the grid, dealiased; returns coefficients."""
        mg = np.fft.irfft(m, n=self.n)
        mx = np.fft.irfft(1j * self.k * m, n=self.n)
        if dxi is None:
            xh = np.fft.rfft(xi)
            dxi = np.fft.irfft(1j * self.k * xh, n=self.n)
        return self.mask * np.fft.rfft(xi * mx + 2.0 * mg * dxi)


@dataclass(frozen=True)
class PeakonSnapshot:
    """Frozen coupled-mode mean: the whole ensemble plus the row offset of
    the members currently being advanced."""

    members: np.ndarray
    offset: int = 0

    def own(self, count):
        return self.members[self.offset:self.offset + count]


class PeakonSystem(MeanFieldModel):
    def __init__(self, alpha=1.0, basis=None, kernel="line", L=TWO_PI, grid=128):
        _check_alpha(alpha)
        if kernel not in KERNELS:
            raise ConfigError(f"unknown kernel '{kernel}'", key="peakons.kernel")
        if not (np.isfinite(L) and L > 0):
            raise ConfigError("peakons.L must be positive", key="peakons.L")
        self.alpha = float(alpha)
        self.kernel = kernel
        self.L = float(L)
        self.basis = basis if basis is not None else empty_basis(1, L)
        if self.basis.dim != 1:
            raise ConfigError("peakon noise must be one-dimensional", key="noise")
        self.xi_funcs = list(self.basis)
        self.noise_count = len(self.xi_funcs)
        self.spectral = PeakonMean(int(grid), self.L, self.alpha)

    def _kw(self):
        return dict(alpha=self.alpha, kernel=self.kernel, L=self.L)

    # the frozen "mean" is either the ensemble snapshot (coupled) or spectral m (decoupled)
    def mean(self, states):
        return PeakonSnapshot(np.array(states, copy=True))

    def localize_mean(self, mean, start, stop):
        if isinstance(mean, PeakonSnapshot):
            return replace(mean, offset=start)
        return mean

    def initial_mean(self, states):
        if self.kernel != "periodic":
            raise ConfigError("decoupled peakons need the periodic kernel", key="peakons.kernel")
        if self.basis.kappa <= 0:
            raise ConfigError("decoupled peakons need elliptic noise (kappa > 0)", key="noise")
        return self.spectral.from_members(states)

    def mean_fields(self, states, mean):
        """Expected velocity and its derivative at each member's own positions.

        In coupled mode a member's own share of the ensemble field is taken
        from its current state rather than the frozen copy, so a peakon never
        feels the kink it left behind at the start of the step.
        """
        q = states[:, 0]
        if not isinstance(mean, PeakonSnapshot):
            return (self.spectral.velocity(mean, q),
                    self.spectral.velocity(mean, q, deriv=True))
        args = (self.alpha, self.kernel, self.L)
        M = mean.members.shape[0]
        frozen = mean.own(states.shape[0])
        src_q = mean.members[:, 0].reshape(-1)
        src_p = mean.members[:, 1].reshape(-1)
        flat = q.reshape(-1)
        u = np.empty(flat.shape)
        ux = np.empty(flat.shape)
        rows = max(1, _CHUNK // src_q.size)
        for s in range(0, flat.size, rows):
            k, dk = _kernel_pair(flat[s:s + rows, None] - src_q[None, :], *args)
            # row reductions, not BLAS: results must not depend on the chunking
            u[s:s + rows] = np.sum(k * src_p, axis=1)
            ux[s:s + rows] = np.sum(dk * src_p, axis=1)
        u = u.reshape(q.shape) / M
        ux = ux.reshape(q.shape) / M
        for src, sign in ((states, 1.0), (frozen, -1.0)):
            k, dk = _kernel_pair(q[:, :, None] - src[:, 0, None, :], *args)
            u += sign * np.einsum("mab,mb->ma", k, src[:, 1]) / M
            ux += sign * np.einsum("mab,mb->ma", dk, src[:, 1]) / M
        return u, ux

    def drift(self, states, mean):
        u, ux = self.mean_fields(states, mean)
        return np.stack([u, -states[:, 1] * ux], axis=1)

    def diffusion(self, states, k):
        q, p = states[:, 0], states[:, 1]
        c = self.xi_funcs[k]
        return np.stack([c.scalar(q, self.L, 0), -p * c.scalar(q, self.L, 1)], axis=1)

    def ito_correction(self, states):
        q, p = states[:, 0], states[:, 1]
        zero = np.zeros_like(q)
        return pk_rhs(q, p, zero, zero, self.xi_funcs, self.L)[2]

    def noise_increment(self, states, dW):
        q, p = states[:, 0], states[:, 1]
        xi, dxi, _ = pk_noise(q, self.xi_funcs, self.L)
        w = dW.T[:, :, None]
        return np.stack([np.sum(w * xi, axis=0), -p * np.sum(w * dxi, axis=0)], axis=1)

    def mean_rhs(self, mean):
        sp = self.spectral
        x = np.arange(sp.n) * (self.L / sp.n)
        u = np.fft.irfft(sp.symbol * mean, n=sp.n)
        ux = np.fft.irfft(1j * sp.k * sp.symbol * mean, n=sp.n)
        out = -sp.lie(u, mean, ux)
        for c in self.xi_funcs:
            xi = c.scalar(x, self.L, 0)
            dxi = c.scalar(x, self.L, 1)
            out = out + 0.5 * sp.lie(xi, sp.lie(xi, mean, dxi), dxi)
        return out

    def project_mean(self, mean):
        if isinstance(mean, PeakonSnapshot):
            return mean
        return self.spectral.mask * mean

    def _diffusivity(self):
        x = np.arange(self.spectral.n) * (self.L / self.spectral.n)
        a = sum(0.5 * c.scalar(x, self.L, 0) ** 2 for c in self.xi_funcs)
        return float(np.max(a)) if self.xi_funcs else 0.0

    def check_step(self, states, mean, dt):
        if not isinstance(mean, PeakonSnapshot):
            k_max = float(self.spectral.k[self.spectral.mask].max())
            if dt > diffusive_dt_limit(self._diffusivity(), k_max):
                raise ConfigError("dt exceeds the explicit limit 2/(a k_max^2) of the "
                                  "mean solve; reduce dt or peakons.grid", key="dt")
        if self.kernel == "line" and states.shape[-1] > 1:
            if np.any(np.diff(states[:, 0], axis=-1) <= 0):
                raise NumericalFailure("peakon ordering violated")

    def diagnostics(self):
        kw = self._kw()

        def hook(ensemble, mean):
            s = ensemble.members
            q, p = s[:, 0], s[:, 1]
            u_self = np.einsum("mab,mb->ma", pk_kernel(q[:, :, None] - q[:, None, :], **kw), p)
            energy = 0.5 * np.sum(p * u_self, axis=1)
            out = {
                "momentum": float(empirical_mean(np.sum(p, axis=1))),
                "energy": float(empirical_mean(energy)),
                "q_mean": float(empirical_mean(np.mean(q, axis=1))),
                "q_var": float(empirical_mean(np.mean((q - empirical_mean(q)) ** 2, axis=1))),
                "p_var": float(empirical_mean(np.mean((p - empirical_mean(p)) ** 2, axis=1))),
            }
            if s.shape[-1] > 1 and self.kernel == "line":
                out["min_gap"] = float(np.min(np.diff(q, axis=-1)))
            return out

        return hook


def initial_members(q0, p0, members):
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if q0.ndim != 1 or q0.shape != p0.shape or q0.size < 1:
        raise ConfigError("peakons.q0 and peakons.p0 must be equal-length lists", key="peakons.q0")
    state = np.stack([q0, p0])
    return np.tile(state, (int(members), 1, 1))
