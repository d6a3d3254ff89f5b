"""Mean-field stochastic Burgers equation on a periodic interval.

Members obey pure transport by the expected velocity plus noise,

    du + E[u] u_x dt + sum_k xi_k u_x o dW_k = f dt,

and the expectation ``v = E[u]`` solves the closed viscous-type equation

    v_t + v v_x = 1/2 sum_k xi_k (xi_k v_x)_x + f.

With ``xi = sqrt(2 nu)`` this is viscous Burgers with viscosity ``nu``.
Fields are stored in physical space as arrays ``(..., n)``; every product
is dealiased with the 2/3 rule.
"""

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import map_coordinates

from .errors import ConfigError, NumericalFailure
from .meanfield import MeanFieldModel, empirical_mean
from .noise import combine, empty_basis
from .spectral import Grid1D


def _xi_samples(basis, grid):
    """``(K, n)`` values and ``(K, n)`` derivatives of the correlates on the grid."""
    if basis is None or len(basis) == 0:
        return np.zeros((0, grid.n)), np.zeros((0, grid.n))
    if basis.dim != 1:
        raise ConfigError("Burgers noise must be one-dimensional", key="noise")
    x = grid.x
    xi = np.stack([c.scalar(x, grid.L, 0) for c in basis])
    dxi = np.stack([c.scalar(x, grid.L, 1) for c in basis])
    return xi, dxi


def _coerce_xi(xi, grid):
    xi = np.asarray(xi, dtype=float)
    return np.broadcast_to(xi, (grid.n,)) if xi.ndim == 0 else xi


def bg_drift(u, mean_u, grid, forcing=None):
    """``-P(E[u] u_x) + f``."""
    out = -grid.dealias(mean_u * grid.deriv(u))
    if forcing is not None:
        out = out + forcing
    return out


def bg_diffusion(u, xi_k, grid):
    """``-P(xi_k u_x)``; ``xi_k`` is a scalar or a grid field."""
    return -grid.dealias(_coerce_xi(xi_k, grid) * grid.deriv(u))


def _lie_laplacian(u, xi, grid):
    out = np.zeros_like(u)
    for k in range(xi.shape[0]):
        inner = grid.dealias(xi[k] * grid.deriv(u))
        out = out + grid.dealias(xi[k] * grid.deriv(inner))
    return 0.5 * out


def bg_ito_correction(u, basis, grid):
    """``1/2 sum_k P(xi_k d_x P(xi_k d_x u))``."""
    xi, _ = _xi_samples(basis, grid)
    return _lie_laplacian(u, xi, grid)


def bg_mean_rhs(v, basis, grid, forcing=None):
    """``-P(v v_x) + 1/2 sum_k P(xi_k d_x P(xi_k d_x v)) + f``."""
    xi, _ = _xi_samples(basis, grid)
    return bg_drift(v, v, grid, forcing) + _lie_laplacian(v, xi, grid)


def sine_profile(grid):
    return np.sin(grid.x * (2.0 * np.pi / grid.L))


class BurgersSystem(MeanFieldModel):
    def __init__(self, grid, basis=None, forcing=None):
        self.grid = grid
        self.basis = basis if basis is not None else empty_basis(1, grid.L)
        self.xi, self.dxi = _xi_samples(self.basis, grid)
        self.noise_count = self.xi.shape[0]
        self.forcing = None if forcing is None else np.asarray(forcing, dtype=float)

    def drift(self, states, mean):
        return bg_drift(states, mean, self.grid, self.forcing)

    def diffusion(self, states, k):
        return bg_diffusion(states, self.xi[k], self.grid)

    def ito_correction(self, states):
        return _lie_laplacian(states, self.xi, self.grid)

    def mean_rhs(self, mean):
        return (bg_drift(mean, mean, self.grid, self.forcing)
                + _lie_laplacian(mean, self.xi, self.grid))

    def project_mean(self, mean):
        return self.grid.dealias(mean)

    def stratonovich_increment(self, states, mean, dt, dW):
        # one transport velocity per member: E[u] dt + sum_k xi_k dW_k
        w = mean[None, :] * dt + combine(dW, self.xi)
        out = -self.grid.dealias(w * self.grid.deriv(states))
        if self.forcing is not None:
            out = out + self.forcing * dt
        return out

    def diagnostics(self):
        g = self.grid

        def hook(ensemble, mean):
            u = ensemble.members
            emp = empirical_mean(u)
            dev = u - emp
            return {
                "energy": float(g.integrate(empirical_mean(u * u))),
                "mean_energy": float(g.integrate(emp * emp)),
                "variance": float(g.integrate(empirical_mean(dev * dev))),
                "mean_integral": float(g.integrate(emp)),
                "solved_mean_energy": float(g.integrate(mean * mean)),
                "umax": float(np.max(u)),
                "umin": float(np.min(u)),
            }

        return hook


def periodic_spline(values, L):
    """Periodic cubic spline through samples at ``j L / n``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    x = np.arange(n + 1) * (L / n)
    closed = np.concatenate([values, values[..., :1]], axis=-1)
    return CubicSpline(x, closed, axis=-1, bc_type="periodic")


class _PeriodicSampler:
    """Cubic interpolation of a band-limited field after spectral upsampling."""

    def __init__(self, values, L, refine=4):
        values = np.asarray(values, dtype=float)
        n = values.shape[-1]
        m = n * refine
        self.fine = np.fft.irfft(np.fft.rfft(values), n=m) * refine
        self.h = L / m
        self.L = L

    def __call__(self, y):
        coords = (np.mod(y, self.L) / self.h)[None, :]
        return map_coordinates(self.fine, coords, order=3, mode="grid-wrap")


def bg_characteristics_oracle(u0, mean_path, wiener_path, basis, grid, dt):
    """Member field at the final time from the back-to-labels map.

    ``wiener_path[n, k]`` holds the increments of step ``n``. Characteristics
    ``dY = E[u](Y) dt + sum_k xi_k(Y) o dW_k`` are integrated backward from
    every grid node with Heun along the reversed path, giving labels
    ``A_T(x)``; the result is ``u0(A_T(x))`` with periodic cubic interpolation.

    With one mean field per step, ``mean_path[n]`` is the mean frozen on
    step ``n``, exactly as the members see it. With one more entry than
    steps, ``mean_path[n]`` is the mean at ``t_n`` and the Heun stages use
    the values at both ends of the step (second order in time).
    """
    wiener_path = np.asarray(wiener_path, dtype=float)
    steps = wiener_path.shape[0]
    if len(mean_path) < steps:
        raise ValueError("mean_path must hold one field per step")
    at_nodes = len(mean_path) > steps
    correlates = list(basis) if basis is not None else []
    L = grid.L

    def xi_at(y):
        if not correlates:
            return np.zeros((0, y.size))
        return np.stack([c.scalar(y, L, 0) for c in correlates])

    y = grid.x.copy()
    later = _PeriodicSampler(mean_path[steps], L) if at_nodes else None
    for n in range(steps - 1, -1, -1):
        earlier = _PeriodicSampler(mean_path[n], L)
        end = later if at_nodes else earlier
        dW = wiener_path[n]
        # backward in time: the first stage sits at t_{n+1}, the second at t_n
        w0 = end(y) * dt + dW @ xi_at(y)
        pred = y - w0
        y = y - 0.5 * (w0 + earlier(pred) * dt + dW @ xi_at(pred))
        later = earlier
        if not np.all(np.isfinite(y)):
            raise NumericalFailure(f"non-finite characteristic at step {n}")
    return periodic_spline(u0, L)(np.mod(y, L))


def inviscid_characteristics(u0_func, x, t, tol=1e-13, maxiter=50):
    """Pre-shock inviscid Burgers solution ``u(x, t) = u0(X)`` with ``x = X + t u0(X)``.

    ``u0_func(X)`` must return ``(u0, u0')``. Newton iteration per node.
    """
    x = np.asarray(x, dtype=float)
    X = x.copy()
    for _ in range(maxiter):
        f, fp = u0_func(X)
        step = (X + t * f - x) / (1.0 + t * fp)
        X = X - step
        if np.max(np.abs(step)) < tol:
            break
    return u0_func(X)[0]


def viscous_burgers_sine(x, t, nu, points=4001, width=40.0):
    """Exact viscous Burgers solution from ``u0 = sin x``.

    Cole-Hopf with the heat kernel on the line:

        u(x, t) = int (x - y)/t w(y) dy / int w(y) dy,
        w(y) = exp(-(x - y)^2 / (4 nu t) - (1 - cos y) / (2 nu)),

    evaluated by the trapezoid rule on ``x +- width * sqrt(nu t)``. The
    exponent is shifted by its maximum, so there is no cancellation.
    """
    x = np.asarray(x, dtype=float)
    if t == 0:
        return np.sin(x)
    s = np.linspace(-1.0, 1.0, points) * width * np.sqrt(nu * t)
    y = x.reshape(-1, 1) - s[None, :]
    expo = -s * s / (4.0 * nu * t) - (1.0 - np.cos(y)) / (2.0 * nu)
    w = np.exp(expo - expo.max(axis=1, keepdims=True))
    return ((w @ (s / t)) / w.sum(axis=1)).reshape(x.shape)


def initial_field(spec, grid):
    if spec == "sine":
        return sine_profile(grid)
    raise ConfigError(f"unknown burgers initial condition '{spec}'", key="burgers.u0")


__all__ = [
    "Grid1D", "BurgersSystem", "bg_drift", "bg_diffusion", "bg_ito_correction",
    "bg_mean_rhs", "bg_characteristics_oracle", "inviscid_characteristics",
    "viscous_burgers_sine", "periodic_spline", "sine_profile", "initial_field",
]
