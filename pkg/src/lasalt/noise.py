"""Noise correlates and keyed Wiener increments.

A noise basis is a finite list of time-independent vector fields
``xi[k]`` on the periodic box ``[0, L)^d``. Each correlate can be
evaluated at arbitrary points together with its first and second
derivatives, and sampled on uniform grids.

Wiener increments are drawn from a counter-based generator keyed by
``(seed, member, step, correlate)``, so any subset of the increments can be
regenerated independently and the result never depends on evaluation
order.
"""

from dataclasses import dataclass, field

import numpy as np

from ._philox import philox4x64, uniform_open
from .errors import ConfigError

TWO_PI = 2.0 * np.pi
DEFAULT_KAPPA_GRID = 64
DIVERGENCE_TOL = 1e-12


def _mesh(n, d, L):
    x = np.arange(n) * (L / n)
    grids = np.meshgrid(*([x] * d), indexing="ij")
    return np.stack(grids, axis=-1)


class Correlate:
    """Base class for a single noise correlate.

    Subclasses implement ``field``, ``jacobian`` and ``hessian`` at points
    ``x`` of shape ``(..., d)``. ``jacobian(x)[..., i, j]`` is the derivative
    of component ``i`` along axis ``j``; ``hessian(x)[..., i, j, l]`` is the
    mixed second derivative of component ``i``.
    """

    dim: int
    closed_form = True

    def field(self, x, L=TWO_PI):
        raise NotImplementedError

    def jacobian(self, x, L=TWO_PI):
        raise NotImplementedError

    def hessian(self, x, L=TWO_PI):
        raise NotImplementedError

    def sample(self, n, L=TWO_PI):
        """Values on the uniform ``n**d`` grid, shape ``(d, n, ..., n)``."""
        return np.moveaxis(self.field(_mesh(n, self.dim, L), L), -1, 0)

    def sample_jacobian(self, n, L=TWO_PI):
        """Shape ``(d, d, n, ..., n)``."""
        j = self.jacobian(_mesh(n, self.dim, L), L)
        return np.moveaxis(np.moveaxis(j, -1, 0), -1, 0)

    def sample_hessian(self, n, L=TWO_PI):
        """Shape ``(d, d, d, n, ..., n)``."""
        h = self.hessian(_mesh(n, self.dim, L), L)
        for _ in range(3):
            h = np.moveaxis(h, -1, 0)
        return h

    def scalar(self, x, L=TWO_PI, order=0):
        """Convenience for one-dimensional correlates: the ``order``-th
        derivative of the scalar field at points ``x`` (any shape)."""
        if self.dim != 1:
            raise ValueError("scalar() is only defined for 1D correlates")
        pts = np.asarray(x, dtype=float)[..., None]
        if order == 0:
            return self.field(pts, L)[..., 0]
        if order == 1:
            return self.jacobian(pts, L)[..., 0, 0]
        if order == 2:
            return self.hessian(pts, L)[..., 0, 0, 0]
        raise ValueError("order must be 0, 1 or 2")


@dataclass(frozen=True)
class ConstantCorrelate(Correlate):
    vector: tuple

    @property
    def dim(self):
        return len(self.vector)

    def field(self, x, L=TWO_PI):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.vector, dtype=float), x.shape).copy()

    def jacobian(self, x, L=TWO_PI):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.dim,))

    def hessian(self, x, L=TWO_PI):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.dim, self.dim))


@dataclass(frozen=True)
class FourierCorrelate2D(Correlate):
    """``amplitude * k_perp/|k| * cos(2pi/L k.x + phase)`` with
    ``k_perp = (-k2, k1)``; divergence-free by construction."""

    wavevector: tuple
    amplitude: float = 1.0
    phase: float = 0.0
    dim = 2

    def _parts(self, x, L):
        k = np.asarray(self.wavevector, dtype=float)
        kn = np.hypot(k[0], k[1])
        direction = np.array([-k[1], k[0]]) / kn
        kphys = k * (TWO_PI / L)
        theta = np.asarray(x, dtype=float) @ kphys + self.phase
        return direction, kphys, theta

    def field(self, x, L=TWO_PI):
        e, _, theta = self._parts(x, L)
        return self.amplitude * np.cos(theta)[..., None] * e

    def jacobian(self, x, L=TWO_PI):
        e, kp, theta = self._parts(x, L)
        return -self.amplitude * np.sin(theta)[..., None, None] * np.outer(e, kp)

    def hessian(self, x, L=TWO_PI):
        e, kp, theta = self._parts(x, L)
        t = np.einsum("i,j,l->ijl", e, kp, kp)
        return -self.amplitude * np.cos(theta)[..., None, None, None] * t


@dataclass(frozen=True)
class FourierCorrelate1D(Correlate):
    """``offset + amplitude * cos(2pi/L k x + phase)`` on the circle.

    One-dimensional correlates are not required to be divergence-free;
    on the circle only constants are.
    """

    wavenumber: int
    amplitude: float = 1.0
    phase: float = 0.0
    offset: float = 0.0
    dim = 1

    def _theta(self, x, L):
        kp = self.wavenumber * TWO_PI / L
        return kp, np.asarray(x, dtype=float)[..., 0] * kp + self.phase

    def field(self, x, L=TWO_PI):
        _, th = self._theta(x, L)
        return (self.offset + self.amplitude * np.cos(th))[..., None]

    def jacobian(self, x, L=TWO_PI):
        kp, th = self._theta(x, L)
        return (-self.amplitude * kp * np.sin(th))[..., None, None]

    def hessian(self, x, L=TWO_PI):
        kp, th = self._theta(x, L)
        return (-self.amplitude * kp * kp * np.cos(th))[..., None, None, None]


class GridCorrelate(Correlate):
    """A correlate given by samples on a uniform periodic grid.

    ``values`` has shape ``(d, n, ..., n)``. Off-grid evaluation and
    derivatives use the trigonometric interpolant, so the field should be
    band-limited (no energy in the Nyquist mode).
    """

    closed_form = False

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        self.values = values
        self.dim = values.shape[0]
        self.n = values.shape[1]
        if values.ndim != self.dim + 1 or any(s != self.n for s in values.shape[1:]):
            raise ConfigError("grid correlate must have shape (d, n, ..., n)")
        axes = tuple(range(1, self.dim + 1))
        self._coef = np.fft.fftn(values, axes=axes) / self.n**self.dim
        self._freq = np.fft.fftfreq(self.n, 1.0 / self.n)

    def _modes(self, L):
        ks = np.meshgrid(*([self._freq] * self.dim), indexing="ij")
        kvec = np.stack([k.ravel() for k in ks], axis=-1) * (TWO_PI / L)
        coef = self._coef.reshape(self.dim, -1)
        return kvec, coef

    def _series(self, x, L, nderiv):
        x = np.asarray(x, dtype=float)
        kvec, coef = self._modes(L)
        pts = x.reshape(-1, self.dim)
        phase = np.exp(1j * pts @ kvec.T)  # (P, modes)
        d = self.dim
        if nderiv == 0:
            out = (phase @ coef.T).real
            return out.reshape(x.shape[:-1] + (d,))
        if nderiv == 1:
            out = np.einsum("pm,im,mj->pij", phase, coef, 1j * kvec).real
            return out.reshape(x.shape[:-1] + (d, d))
        out = np.einsum("pm,im,mj,ml->pijl", phase, coef, 1j * kvec, 1j * kvec).real
        return out.reshape(x.shape[:-1] + (d, d, d))

    def field(self, x, L=TWO_PI):
        return self._series(x, L, 0)

    def jacobian(self, x, L=TWO_PI):
        return self._series(x, L, 1)

    def hessian(self, x, L=TWO_PI):
        return self._series(x, L, 2)

    def _resampled_coef(self, n):
        """Fourier coefficients (unnormalised for an n-grid) on an n-grid."""
        d = self.dim
        out = np.zeros((d,) + (n,) * d, dtype=complex)
        m = min(n, self.n)
        keep = np.concatenate([np.arange(0, (m + 1) // 2), np.arange(-(m // 2), 0)])
        src = np.ix_(*([keep % self.n] * d))
        dst = np.ix_(*([keep % n] * d))
        for c in range(d):
            out[c][dst] = self._coef[c][src]
        return out * n**d

    def _spectral(self, n, L, orders):
        axes = tuple(range(-self.dim, 0))
        coef = self._resampled_coef(n)
        k = np.fft.fftfreq(n, 1.0 / n) * (TWO_PI / L)
        kk = np.meshgrid(*([k] * self.dim), indexing="ij")
        res = coef
        for axis in orders:
            res = res * (1j * kk[axis])
        return np.fft.ifftn(res, axes=axes).real

    def sample(self, n, L=TWO_PI):
        return self._spectral(n, L, ())

    def sample_jacobian(self, n, L=TWO_PI):
        d = self.dim
        return np.stack([np.stack([self._spectral(n, L, (j,))[i] for j in range(d)])
                         for i in range(d)])

    def sample_hessian(self, n, L=TWO_PI):
        d = self.dim
        return np.stack([np.stack([np.stack([self._spectral(n, L, (j, l))[i]
                                             for l in range(d)]) for j in range(d)])
                         for i in range(d)])


def spectral_divergence(samples, L=TWO_PI):
    """Spectral divergence of a vector field sampled as ``(d, n, ..., n)``."""
    samples = np.asarray(samples, dtype=float)
    d = samples.shape[0]
    n = samples.shape[1]
    k = np.fft.fftfreq(n, 1.0 / n) * (TWO_PI / L)
    axes = tuple(range(1, d + 1))
    hat = np.fft.fftn(samples, axes=axes)
    kk = np.meshgrid(*([k] * d), indexing="ij")
    div = sum(1j * kk[i] * hat[i] for i in range(d))
    return np.fft.ifftn(div).real


@dataclass(frozen=True)
class NoiseBasis:
    correlates: tuple
    dim: int
    kappa: float = 0.0
    divergence_free: bool = True
    L: float = TWO_PI

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigError(f"noise dimension must be 1, 2 or 3, got {self.dim}")
        for c in self.correlates:
            if c.dim != self.dim:
                raise ConfigError("all correlates must share the basis dimension")
        if self.kappa < 0:
            raise ConfigError("kappa must be nonnegative")
        if self.divergence_free:
            for c in self.correlates:
                if isinstance(c, GridCorrelate):
                    div = spectral_divergence(c.values, self.L)
                    if np.max(np.abs(div)) >= DIVERGENCE_TOL:
                        raise ConfigError("sampled correlate is not divergence-free")

    def __len__(self):
        return len(self.correlates)

    def __iter__(self):
        return iter(self.correlates)

    def sample(self, n):
        """All correlates on the ``n**d`` grid: ``(K, d, n, ..., n)``."""
        if not self.correlates:
            return np.zeros((0, self.dim) + (n,) * self.dim)
        return np.stack([c.sample(n, self.L) for c in self.correlates])

    def sample_jacobian(self, n):
        if not self.correlates:
            return np.zeros((0, self.dim, self.dim) + (n,) * self.dim)
        return np.stack([c.sample_jacobian(n, self.L) for c in self.correlates])

    def sample_hessian(self, n):
        if not self.correlates:
            return np.zeros((0,) + (self.dim,) * 3 + (n,) * self.dim)
        return np.stack([c.sample_hessian(n, self.L) for c in self.correlates])

    def vectors(self):
        """Constant correlates as a ``(K, d)`` array."""
        if not all(isinstance(c, ConstantCorrelate) for c in self.correlates):
            raise ConfigError("basis contains non-constant correlates")
        return np.array([c.vector for c in self.correlates], dtype=float).reshape(-1, self.dim)

    @property
    def is_constant(self):
        return all(isinstance(c, ConstantCorrelate) for c in self.correlates)


def estimate_ellipticity(basis, grid=DEFAULT_KAPPA_GRID):
    """Smallest eigenvalue of ``1/2 sum_k xi_k xi_k^T`` over the sampling grid.

    Eigenvalues within rounding of zero (relative to the largest diagonal
    entry) are reported as exactly zero. This is an estimate of the
    ellipticity constant, not a proof of it.
    """
    d = basis.dim
    if len(basis) == 0:
        return 0.0
    n = 1 if basis.is_constant else grid
    xi = basis.sample(n).reshape(len(basis), d, -1)
    a = 0.5 * np.einsum("kip,kjp->pij", xi, xi)
    lam = np.linalg.eigvalsh(a)[:, 0]
    scale = np.max(np.abs(np.diagonal(a, axis1=1, axis2=2)))
    lam = np.where(np.abs(lam) <= 64 * np.finfo(float).eps * max(scale, 1e-300), 0.0, lam)
    return float(max(lam.min(), 0.0))


def build_constant_basis(d, nu):
    """Correlates ``sqrt(2 nu) e_k``, ``k = 1..d``; the Lie-Laplacian is ``nu * Laplacian``."""
    if d not in (1, 2, 3):
        raise ConfigError(f"dimension must be 1, 2 or 3, got {d}", key="noise")
    if not np.isfinite(nu) or nu < 0:
        raise ConfigError(f"viscosity must be nonnegative, got {nu}", key="noise.nu")
    amp = float(np.sqrt(2.0 * nu))
    correlates = tuple(ConstantCorrelate(tuple(amp * float(i == j) for j in range(d)))
                       for i in range(d))
    return NoiseBasis(correlates, d, kappa=float(nu), divergence_free=True)


def build_vector_basis(vectors):
    """Arbitrary constant correlates, e.g. ``[[0, 0, 1]]`` for the rigid body."""
    vecs = [tuple(float(v) for v in vec) for vec in vectors]
    if not vecs:
        raise ConfigError("vector basis needs at least one vector", key="noise.vectors")
    d = len(vecs[0])
    if any(len(v) != d for v in vecs):
        raise ConfigError("vectors must share one dimension", key="noise.vectors")
    basis = NoiseBasis(tuple(ConstantCorrelate(v) for v in vecs), d)
    return NoiseBasis(basis.correlates, d, kappa=estimate_ellipticity(basis))


def build_fourier_divfree_basis(modes, d=2, grid=DEFAULT_KAPPA_GRID):
    """Divergence-free Fourier correlates from ``(wavevector, amplitude, phase)`` triples."""
    if d != 2:
        raise ConfigError("Fourier divergence-free correlates are only provided in 2D")
    modes = list(modes)
    if not modes:
        raise ConfigError("Fourier basis needs at least one mode", key="noise.modes")
    correlates = []
    for kvec, amp, phase in modes:
        kvec = tuple(int(v) for v in kvec)
        if len(kvec) != 2:
            raise ConfigError("wavevectors must be integer pairs", key="noise.modes")
        if kvec == (0, 0):
            raise ConfigError("zero wavevector is not allowed", key="noise.modes")
        correlates.append(FourierCorrelate2D(kvec, float(amp), float(phase)))
    basis = NoiseBasis(tuple(correlates), 2)
    return NoiseBasis(basis.correlates, 2, kappa=estimate_ellipticity(basis, grid))


def build_fourier_1d_basis(modes, L=TWO_PI, grid=DEFAULT_KAPPA_GRID):
    """1D correlates ``offset + amp cos(2pi k x / L + phase)`` from
    ``(k, amp, phase[, offset])`` tuples."""
    modes = list(modes)
    if not modes:
        raise ConfigError("Fourier basis needs at least one mode", key="noise.modes")
    correlates = []
    for mode in modes:
        if len(mode) not in (3, 4):
            raise ConfigError("1D modes are [k, amp, phase] or [k, amp, phase, offset]",
                              key="noise.modes")
        k, amp, phase = int(mode[0]), float(mode[1]), float(mode[2])
        offset = float(mode[3]) if len(mode) == 4 else 0.0
        correlates.append(FourierCorrelate1D(k, amp, phase, offset))
    basis = NoiseBasis(tuple(correlates), 1, divergence_free=False, L=L)
    return NoiseBasis(basis.correlates, 1, kappa=estimate_ellipticity(basis, grid),
                      divergence_free=False, L=L)


def build_grid_basis(fields, divergence_free=True, L=TWO_PI, grid=DEFAULT_KAPPA_GRID):
    correlates = tuple(GridCorrelate(f) for f in fields)
    if not correlates:
        raise ConfigError("grid basis needs at least one field")
    d = correlates[0].dim
    basis = NoiseBasis(correlates, d, divergence_free=divergence_free, L=L)
    return NoiseBasis(correlates, d, kappa=estimate_ellipticity(basis, grid),
                      divergence_free=divergence_free, L=L)


def empty_basis(d, L=TWO_PI):
    return NoiseBasis((), d, 0.0, True, L)


@dataclass(frozen=True)
class WienerBatch:
    dt: float
    increments: np.ndarray = field(repr=False)
    step_index: int = 0

    @property
    def member_count(self):
        return self.increments.shape[0]

    @property
    def correlate_count(self):
        return self.increments.shape[1]

    def subset(self, start, stop):
        return WienerBatch(self.dt, self.increments[start:stop], self.step_index)


def standard_normals(seed, members, step_index, correlates):
    """Standard normals keyed by ``(seed, member, step, correlate)``.

    ``members`` and ``correlates`` are integer arrays; the result has shape
    ``(len(members), len(correlates))``. Uses one Philox block per key and
    the Box-Muller transform on its first two words.
    """
    members = np.asarray(members, dtype=np.uint64)
    correlates = np.asarray(correlates, dtype=np.uint64)
    m, k = np.meshgrid(members, correlates, indexing="ij")
    counter = np.stack([k, np.full_like(k, np.uint64(step_index)), m,
                        np.zeros_like(k)], axis=-1)
    key = np.array([np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF), np.uint64(0)], dtype=np.uint64)
    block = philox4x64(counter, key)
    u1 = uniform_open(block[..., 0])
    u2 = uniform_open(block[..., 1])
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)


def sample_wiener_batch(seed, step_index, member_count, correlate_count, dt, member_offset=0):
    """Increments ``sqrt(dt) * Z(seed, m, step, k)`` for members
    ``member_offset .. member_offset + member_count - 1``."""
    if dt < 0 or not np.isfinite(dt):
        raise ValueError(f"dt must be nonnegative, got {dt}")
    if member_count < 1 or correlate_count < 0:
        raise ValueError("member_count must be >= 1 and correlate_count >= 0")
    if step_index < 0:
        raise ValueError("step_index must be nonnegative")
    members = np.arange(member_offset, member_offset + member_count)
    z = standard_normals(seed, members, step_index, np.arange(correlate_count))
    return WienerBatch(float(dt), np.sqrt(dt) * z, int(step_index))


def wiener_path(seed, member, steps, correlate_count, dt):
    """Increments of one member over ``steps`` consecutive steps: ``(steps, K)``."""
    return np.concatenate([
        sample_wiener_batch(seed, s, 1, correlate_count, dt, member_offset=member).increments
        for s in range(steps)
    ]) if steps else np.zeros((0, correlate_count))


def combine(dW, fields):
    """``sum_k dW[:, k] fields[k]`` summed in a fixed order per member.

    Unlike ``dW @ fields`` the result for a member does not depend on how
    many other members are in the batch, which keeps worker counts bitwise
    interchangeable.
    """
    dW = np.asarray(dW)
    fields = np.asarray(fields)
    out = np.zeros((dW.shape[0],) + fields.shape[1:])
    for k in range(fields.shape[0]):
        out += dW[:, k].reshape((-1,) + (1,) * (fields.ndim - 1)) * fields[k]
    return out


def basis_from_spec(kind, d, nu=None, modes=None, vectors=None, L=TWO_PI):
    """Build a basis from the run-config noise table."""
    if kind == "constant":
        basis = build_constant_basis(d, 0.0 if nu is None else nu)
        return NoiseBasis(basis.correlates, d, basis.kappa, True, L)
    if kind == "fourier":
        if d == 2:
            parsed = []
            for m in modes or []:
                if len(m) != 4:
                    raise ConfigError("2D modes are [kx, ky, amp, phase]", key="noise.modes")
                parsed.append(((m[0], m[1]), m[2], m[3]))
            return build_fourier_divfree_basis(parsed)
        if d == 1:
            return build_fourier_1d_basis(modes or [], L=L)
        raise ConfigError("Fourier noise is only available in 1D and 2D", key="noise.kind")
    if kind == "vectors":
        basis = build_vector_basis(vectors or [])
        if basis.dim != d:
            raise ConfigError(f"noise vectors must have dimension {d}", key="noise.vectors")
        return basis
    if kind == "none":
        return empty_basis(d, L)
    raise ConfigError(f"unknown noise kind '{kind}'", key="noise.kind")
