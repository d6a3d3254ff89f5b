"""Mean-field stochastic 2D Euler in vorticity form, the Lie-Laplacian
Navier-Stokes mean solver, and circulation diagnostics.

Member vorticity is transported by the expected velocity plus noise,

    d omega + E[u].grad(omega) dt + sum_k xi_k.grad(omega) o dW_k = 0,

and the expectation solves

    d_t E[omega] + E[u].grad(E[omega]) = 1/2 sum_k xi_k.grad(xi_k.grad(E[omega])).

The torus is ``[0, 2 pi)^2``. Scalar fields are rfft2 coefficients of shape
``(..., n, n // 2 + 1)``; vector fields carry an extra axis of length 2 before
the two grid axes. Physical arrays are indexed ``[ix, iy]``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.interpolate import CubicSpline
from scipy.ndimage import map_coordinates

from .errors import ConfigError, NumericalFailure
from .meanfield import MeanFieldModel, empirical_mean
from .noise import empty_basis
from .spectral import Grid2D, diffusive_dt_limit

CFL_LIMIT = 0.5
RESAMPLE_RATIO = 4.0


# --- spectral plumbing -------------------------------------------------------

def dealiased_product(grid, a, b):
    """Masked coefficients of the pointwise product of physical arrays."""
    return grid.mask * grid.fft(a * b)


def curl(grid, u_hat):
    return grid.dx(u_hat[..., 1, :, :]) - grid.dy(u_hat[..., 0, :, :])


def divergence(grid, u_hat):
    return grid.dx(u_hat[..., 0, :, :]) + grid.dy(u_hat[..., 1, :, :])


def biot_savart(omega_hat, grid):
    """Velocity coefficients ``(..., 2, n, n//2+1)`` from vorticity.

    ``psi = -omega / |k|^2`` and ``u = (-d_y psi, d_x psi)``; the zero mode
    of vorticity is ignored.
    """
    psi = -omega_hat * grid.inv_k2
    return np.stack([-grid.dy(psi), grid.dx(psi)], axis=-3)


def velocity_physical(omega_hat, grid):
    return grid.ifft(biot_savart(omega_hat, grid))


def leray_project(u_hat, grid):
    """Remove the gradient part: ``u - k (k.u) / |k|^2``."""
    kx, ky = grid.kx, grid.ky
    kdotu = kx * u_hat[..., 0, :, :] + ky * u_hat[..., 1, :, :]
    phi = kdotu * grid.inv_k2
    return np.stack([u_hat[..., 0, :, :] - kx * phi, u_hat[..., 1, :, :] - ky * phi], axis=-3)


def directional(grid, w, f_hat):
    """Physical ``w . grad f`` for physical ``w (..., 2, n, n)`` and coefficients ``f``."""
    g = grid.grad(f_hat)
    return w[..., 0, :, :] * g[..., 0, :, :] + w[..., 1, :, :] * g[..., 1, :, :]


def advect_scalar(omega_hat, v, grid):
    """``-P(v . grad omega)`` for a physical velocity ``v``."""
    return -1.0 * grid.mask * grid.fft(directional(grid, v, omega_hat))


def noise_fields(basis, grid):
    """Correlates on the grid ``(K, 2, n, n)`` with jacobians and hessians."""
    if basis is None or len(basis) == 0:
        z = np.zeros((0, 2, grid.n, grid.n))
        return z, np.zeros((0, 2, 2, grid.n, grid.n)), np.zeros((0, 2, 2, 2, grid.n, grid.n))
    if basis.dim != 2:
        raise ConfigError("2D Euler needs a two-dimensional noise basis", key="noise")
    return basis.sample(grid.n), basis.sample_jacobian(grid.n), basis.sample_hessian(grid.n)


def _xi_array(basis, grid):
    if isinstance(basis, np.ndarray):
        return basis
    return noise_fields(basis, grid)[0]


def lie_laplacian_scalar(omega_hat, basis, grid):
    """``1/2 sum_k P(xi_k . grad P(xi_k . grad omega))``."""
    xi = _xi_array(basis, grid)
    out = np.zeros_like(omega_hat)
    for k in range(xi.shape[0]):
        inner = grid.mask * grid.fft(directional(grid, xi[k], omega_hat))
        out = out + grid.mask * grid.fft(directional(grid, xi[k], inner))
    return 0.5 * out


# --- velocity-form operators ---------------------------------------------------

def lie_transpose(v, u_hat, grid, dv=None):
    """``P(v . grad u + (grad v)^T u)`` with physical ``v`` and coefficients ``u``.

    ``dv[i, j] = d_j v^i`` may be supplied; otherwise it is computed spectrally.
    """
    u = grid.ifft(u_hat)
    if dv is None:
        v_hat = grid.fft(v)
        dv = np.stack([grid.grad(v_hat[0]), grid.grad(v_hat[1])])
    out = []
    for a in range(2):
        transport = directional(grid, v, u_hat[a])
        stretch = dv[0, a] * u[0] + dv[1, a] * u[1]
        out.append(grid.mask * grid.fft(transport + stretch))
    return np.stack(out)


def lie_laplacian_vector(u_hat, basis, grid):
    """``1/2 sum_k L_k^T L_k^T u`` assembled from the divergence-form split

        d_i(a^{ij} d_j u^alpha) + b^{i alpha j} d_i u^j + c^{alpha beta} u^beta,
        a = xi xi,  b^{i alpha j} = 2 xi^i d_alpha xi^j,
        c^{alpha beta} = d_alpha xi^i d_i xi^beta + xi^i d_i d_alpha xi^beta.

    Valid for divergence-free correlates.
    """
    xi, jac, hess = noise_fields(basis, grid)
    u = grid.ifft(u_hat)
    du = np.stack([grid.grad(u_hat[0]), grid.grad(u_hat[1])])  # du[a, j] = d_j u^a
    kvec = (grid.kx, grid.ky)
    out = np.zeros_like(u_hat)
    for k in range(xi.shape[0]):
        x, J, H = xi[k], jac[k], hess[k]  # J[i, j] = d_j xi^i, H[i, j, l] = d_j d_l xi^i
        for a in range(2):
            term = np.zeros(u_hat.shape[1:], dtype=complex)
            for i in range(2):
                flux = sum(x[i] * x[j] * du[a, j] for j in range(2))
                term = term + 1j * kvec[i] * (grid.mask * grid.fft(flux))
            phys = np.zeros_like(u[0])
            for i in range(2):
                for j in range(2):
                    phys = phys + 2.0 * x[i] * J[j, a] * du[j, i]
            for b in range(2):
                c = sum(J[i, a] * J[b, i] + x[i] * H[b, i, a] for i in range(2))
                phys = phys + c * u[b]
            out[a] = out[a] + term + grid.mask * grid.fft(phys)
    return 0.5 * out


def lie_laplacian_vector_nested(u_hat, basis, grid):
    """Same operator by applying ``L^T_xi`` twice (independent assembly path)."""
    xi, jac, _ = noise_fields(basis, grid)
    out = np.zeros_like(u_hat)
    for k in range(xi.shape[0]):
        once = lie_transpose(xi[k], u_hat, grid, jac[k])
        out = out + lie_transpose(xi[k], once, grid, jac[k])
    return 0.5 * out


def _llns_raw(v_hat, basis, grid, forcing=None):
    v = grid.ifft(v_hat)
    r = -lie_transpose(v, v_hat, grid) + lie_laplacian_vector(v_hat, basis, grid)
    if forcing is not None:
        r = r + forcing
    return r


def llns_mean_rhs(v_hat, basis, grid, forcing=None, return_pressure=False):
    """``P[-L^T_v v + 1/2 sum_k L^T_xi L^T_xi v + f]``.

    With ``return_pressure`` also returns the zero-mean scalar ``pi`` whose
    gradient is the part removed by the projection, ``pi = lap^-1 div R``.
    This differs from the Bernoulli-type form
    ``(-lap)^-1 div(div(v v) - 1/2 sum L^T L^T v) + 1/2 |v|^2`` only by the
    kinetic term: ``pi = that - |v|^2`` up to a constant.
    """
    r = _llns_raw(v_hat, basis, grid, forcing)
    rhs = leray_project(r, grid)
    if not return_pressure:
        return rhs
    pi = -divergence(grid, r) * grid.inv_k2
    return rhs, pi


def pressure_bernoulli(v_hat, basis, grid):
    """``(-lap)^-1 div(div(v v) - 1/2 sum L^T L^T v) + 1/2 |v|^2`` (zero mean)."""
    v = grid.ifft(v_hat)
    flux = np.zeros_like(v_hat[0])
    for i in range(2):
        for j in range(2):
            vv = grid.mask * grid.fft(v[i] * v[j])
            flux = flux + (1j * (grid.kx, grid.ky)[i]) * (1j * (grid.kx, grid.ky)[j]) * vv
    flux = flux - divergence(grid, lie_laplacian_vector(v_hat, basis, grid))
    pi = flux * grid.inv_k2
    kinetic = grid.mask * grid.fft(0.5 * (v[0] ** 2 + v[1] ** 2))
    kinetic[0, 0] = 0.0
    return pi + kinetic


def solve_llns(v0_hat, basis, grid, dt, T, forcing=None, record_every=None):
    """Heun integration of the LL NS mean equation. Returns ``(times, fields)``."""
    from .meanfield import step_count
    nsteps = step_count(dt, T)
    v = leray_project(grid.mask * v0_hat, grid)
    times, fields = [0.0], [v]
    for n in range(nsteps):
        k1 = llns_mean_rhs(v, basis, grid, forcing)
        k2 = llns_mean_rhs(v + dt * k1, basis, grid, forcing)
        v = v + 0.5 * dt * (k1 + k2)
        if not np.all(np.isfinite(v)):
            raise NumericalFailure(f"non-finite LL NS field after step {n}")
        if record_every and ((n + 1) % record_every == 0 or n + 1 == nsteps):
            times.append((n + 1) * dt)
            fields.append(v)
    if not record_every:
        times.append(nsteps * dt)
        fields.append(v)
    return np.array(times), fields


# --- ensemble model --------------------------------------------------------------

def _max_speed(u):
    return float(np.max(np.sqrt(u[..., 0, :, :] ** 2 + u[..., 1, :, :] ** 2)))


class Euler2DSystem(MeanFieldModel):
    """Members are vorticity coefficients ``(M, n, n//2+1)``."""

    def __init__(self, grid, basis=None):
        self.grid = grid
        self.basis = basis if basis is not None else empty_basis(2)
        self.xi, self.jac, _ = noise_fields(self.basis, grid)
        self.noise_count = self.xi.shape[0]
        self.diffusivity = float(np.max(0.5 * np.sum(self.xi**2, axis=(0, 1)))) \
            if self.noise_count else 0.0

    def drift(self, states, mean):
        return advect_scalar(states, velocity_physical(mean, self.grid), self.grid)

    def diffusion(self, states, k):
        return -1.0 * self.grid.mask * self.grid.fft(directional(self.grid, self.xi[k], states))

    def ito_correction(self, states):
        return lie_laplacian_scalar(states, self.xi, self.grid)

    def mean_rhs(self, mean):
        return (advect_scalar(mean, velocity_physical(mean, self.grid), self.grid)
                + lie_laplacian_scalar(mean, self.xi, self.grid))

    def project_mean(self, mean):
        out = self.grid.mask * mean
        out[..., 0, 0] = 0.0
        return out

    def transport_velocity(self, mean, dt, dW):
        """Per-member physical velocity increment ``E[u] dt + sum_k xi_k dW_k``."""
        w = velocity_physical(mean, self.grid)[None] * dt
        if self.noise_count:
            w = w + np.einsum("mk,kcxy->mcxy", dW, self.xi)
        return w

    def stratonovich_increment(self, states, mean, dt, dW):
        w = self.transport_velocity(mean, dt, dW)
        return -1.0 * self.grid.mask * self.grid.fft(directional(self.grid, w, states))

    def noise_increment(self, states, dW):
        if not self.noise_count:
            return np.zeros_like(states)
        w = np.einsum("mk,kcxy->mcxy", dW, self.xi)
        return -1.0 * self.grid.mask * self.grid.fft(directional(self.grid, w, states))

    def check_step(self, states, mean, dt):
        speed = _max_speed(velocity_physical(mean, self.grid))
        if speed * dt / self.grid.h > CFL_LIMIT:
            raise ConfigError(f"CFL violated: |E u|_max dt / h = {speed * dt / self.grid.h:.3g} "
                              f"> {CFL_LIMIT}", key="dt")
        if dt > diffusive_dt_limit(self.diffusivity, self.grid.k_max):
            raise ConfigError("dt exceeds the explicit Lie-Laplacian limit 2/(a k_max^2)",
                              key="dt")

    def diagnostics(self, track=0):
        return lambda ensemble, mean: enstrophy_budget(
            ensemble.members, mean, self.xi, self.grid, track)


def step_vorticity(members, mean_omega, basis, dW, dt, grid):
    """Ito step: Heun on ``-E[u].grad omega + 1/2 sum L_xi L_xi omega`` and
    Euler-Maruyama on the noise ``-sum_k xi_k.grad(omega) dW_k``.

    ``dW`` is ``(M, K)``.
    """
    xi = _xi_array(basis, grid)
    v = velocity_physical(mean_omega, grid)

    def det(w):
        return advect_scalar(w, v, grid) + lie_laplacian_scalar(w, xi, grid)

    k1 = det(members)
    k2 = det(members + dt * k1)
    out = members + 0.5 * dt * (k1 + k2)
    if xi.shape[0]:
        w = np.einsum("mk,kcxy->mcxy", np.asarray(dW), xi)
        out = out - grid.mask * grid.fft(directional(grid, w, members))
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite vorticity coefficients")
    return out


def enstrophy_budget(members, mean_omega, basis, grid, track=0):
    """Enstrophy split and the dissipation of the expected vorticity.

    ``total = E_M int omega^2``, ``mean_part = int (E_M omega)^2``,
    ``variance = int E_M (omega - E_M omega)^2`` and
    ``dissipation = sum_k int (xi_k . grad E_M omega)^2``;
    ``member_dissipation`` is the same functional averaged over members. The ``solved_*``
    entries use ``mean_omega`` (the deterministic mean in decoupled mode).
    """
    xi = _xi_array(basis, grid)
    w = grid.ifft(members)
    emp_hat = empirical_mean(members)
    emp = grid.ifft(emp_hat)
    dev = w - emp

    def dissipation(f_hat):
        return sum(float(grid.integrate(directional(grid, xi[k], f_hat) ** 2))
                   for k in range(xi.shape[0]))

    # members' own dissipation; the O(1/M) bias of the empirical variance law
    gw = grid.grad(members)
    member_dis = sum(empirical_mean(grid.integrate(
        (xi[k, 0] * gw[:, 0] + xi[k, 1] * gw[:, 1]) ** 2)) for k in range(xi.shape[0]))

    tracked = w[track]
    mean_phys = grid.ifft(mean_omega)
    return {
        "total": float(empirical_mean(grid.integrate(w * w))),
        "mean_part": float(grid.integrate(emp * emp)),
        "variance": float(empirical_mean(grid.integrate(dev * dev))),
        "dissipation": dissipation(emp_hat),
        "member_dissipation": float(member_dis),
        "mean_integral": float(grid.integrate(emp)),
        "solved_mean_part": float(grid.integrate(mean_phys * mean_phys)),
        "solved_dissipation": dissipation(mean_omega),
        "tracked_enstrophy": float(grid.integrate(tracked * tracked)),
        "tracked_cubic": float(grid.integrate(tracked**3)),
        "tracked_l1": float(grid.integrate(np.abs(tracked))),
        "tracked_l4": float(grid.integrate(tracked**4) ** 0.25),
    }


# --- initial conditions ---------------------------------------------------------------

def taylor_green_velocity(grid):
    x, y = grid.xy
    return np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])


def taylor_green_vorticity(grid):
    x, y = grid.xy
    return 2.0 * np.sin(x) * np.sin(y)


def random_shear_vorticity(grid, seed=0, amplitude=0.1, kmax=4):
    """``cos y`` plus a seeded random perturbation in the modes ``|k| <= kmax``."""
    x, y = grid.xy
    rng = np.random.default_rng(seed)
    w = np.cos(y)
    for kx in range(-kmax, kmax + 1):
        for ky in range(0, kmax + 1):
            if (kx, ky) == (0, 0) or kx * kx + ky * ky > kmax * kmax or (ky == 0 and kx < 0):
                continue
            a, b = rng.normal(size=2) / (kx * kx + ky * ky)
            w = w + amplitude * (a * np.cos(kx * x + ky * y) + b * np.sin(kx * x + ky * y))
    return w


def initial_vorticity(spec, grid, seed=0):
    if spec == "taylor-green":
        w = taylor_green_vorticity(grid)
    elif spec == "random-shear":
        w = random_shear_vorticity(grid, seed)
    else:
        raise ConfigError(f"unknown euler2d initial condition '{spec}'", key="euler2d.omega0")
    out = grid.project(w)
    out[0, 0] = 0.0
    return out


# --- material loops ----------------------------------------------------------------------

class VelocitySampler:
    """Cubic interpolation of a physical velocity ``(2, n, n)`` after spectral
    upsampling by ``refine``."""

    def __init__(self, u, grid, refine=4):
        u = np.asarray(u, dtype=float)
        m = grid.n * refine
        hat = grid.fft(u)
        fine = np.zeros(u.shape[:-2] + (m, m // 2 + 1), dtype=complex)
        h = grid.n // 2
        fine[..., :h, :h + 1] = hat[..., :h, :h + 1]
        fine[..., m - h:, :h + 1] = hat[..., h:, :h + 1]
        fine[..., m - h, :] = 0.0  # drop the ambiguous Nyquist row
        fine[..., :, h] = 0.0
        scale = refine * refine
        self.fine = sfft.irfft2(fine, s=(m, m), axes=(-2, -1)) * scale
        self.h = grid.L / m
        self.L = grid.L

    def __call__(self, pts):
        c = (np.mod(pts, self.L) / self.h).T
        return np.stack([map_coordinates(self.fine[a], c, order=3, mode="grid-wrap")
                         for a in range(2)], axis=-1)


@dataclass
class MaterialLoop:
    points: np.ndarray
    resampled: int = 0
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or self.points.shape[0] < 64:
            raise ConfigError("a material loop needs at least 64 points in 2D", key="euler2d.loop")

    @classmethod
    def circle(cls, cx, cy, radius, P):
        th = np.arange(int(P)) * (2 * np.pi / int(P))
        return cls(np.stack([cx + radius * np.cos(th), cy + radius * np.sin(th)], axis=1))

    def spacing(self):
        return np.linalg.norm(np.roll(self.points, -1, axis=0) - self.points, axis=1)


def circulation(points, sampler):
    """Closed trapezoidal line integral ``sum_i u(x_i).(x_{i+1} - x_{i-1}) / 2``."""
    u = sampler(points)
    chord = 0.5 * (np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0))
    return float(np.sum(u * chord))


def advect_loop(points, mean_sampler, basis, dW, dt):
    """Heun step of ``dX = E[u] dt + sum_k xi_k o dW_k`` for markers ``(P, 2)``."""
    correlates = list(basis) if basis is not None else []
    L = basis.L if basis is not None else 2 * np.pi
    dW = np.asarray(dW, dtype=float).reshape(-1)

    def w(p):
        out = mean_sampler(p) * dt
        for k, c in enumerate(correlates):
            out = out + c.field(p, L) * dW[k]
        return out

    w0 = w(points)
    w1 = w(points + w0)
    return points + 0.5 * (w0 + w1)


def resample_loop(points):
    """Redistribute markers uniformly in arclength (periodic cubic spline)."""
    seg = np.linalg.norm(np.roll(points, -1, axis=0) - points, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if not np.all(np.diff(s) > 0):
        raise ValueError("repeated markers")
    closed = np.concatenate([points, points[:1]], axis=0)
    spline = CubicSpline(s, closed, axis=0, bc_type="periodic")
    t = np.arange(points.shape[0]) * (s[-1] / points.shape[0])
    out = spline(t)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite resampled loop")
    return out


def kelvin_circulation(loop, member_u, mean_u, basis, dW, dt, grid):
    """Advance ``loop`` by one step and return ``(loop, circulation)``.

    ``member_u`` and ``mean_u`` are physical velocities ``(2, n, n)`` at the
    end and start of the step respectively; the circulation of ``member_u``
    is measured on the advected loop.
    """
    pts = advect_loop(loop.points, VelocitySampler(mean_u, grid), basis, dW, dt)
    if not np.all(np.isfinite(pts)):
        raise NumericalFailure("non-finite loop markers")
    loop = MaterialLoop(pts, loop.resampled, list(loop.flags))
    sp = loop.spacing()
    if sp.max() > RESAMPLE_RATIO * sp.min():
        try:
            loop.points = resample_loop(loop.points)
            loop.resampled += 1
        except ValueError as exc:
            loop.flags.append(f"resample skipped: {exc}")
    return loop, circulation(loop.points, VelocitySampler(member_u, grid))


def track_circulation(omega_hat, mean_path, loop, basis, wiener, dt, grid):
    """Circulation of one member along a loop, step by step.

    ``omega_hat`` lists the member vorticity at each output step (one more
    entry than steps), ``mean_path[n]`` the mean vorticity frozen on step
    ``n`` and ``wiener[n]`` that member's increments. Returns the series and
    the final loop.
    """
    gamma = [circulation(loop.points, VelocitySampler(velocity_physical(omega_hat[0], grid), grid))]
    for n in range(len(mean_path)):
        loop, c = kelvin_circulation(loop, velocity_physical(omega_hat[n + 1], grid),
                                     velocity_physical(mean_path[n], grid), basis,
                                     wiener[n], dt, grid)
        gamma.append(c)
    return np.array(gamma), loop


__all__ = [
    "Grid2D", "Euler2DSystem", "biot_savart", "advect_scalar", "leray_project",
    "lie_laplacian_scalar", "lie_laplacian_vector", "lie_laplacian_vector_nested",
    "llns_mean_rhs", "pressure_bernoulli", "solve_llns", "step_vorticity",
    "enstrophy_budget", "MaterialLoop", "kelvin_circulation", "circulation",
    "advect_loop", "resample_loop", "track_circulation", "VelocitySampler",
    "initial_vorticity", "taylor_green_velocity", "taylor_green_vorticity",
    "random_shear_vorticity",
]
