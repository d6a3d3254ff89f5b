"""Periodic pseudo-spectral grids in one and two dimensions.

Spectral data uses the real-FFT layout: a 1D field of ``n`` samples has
``n // 2 + 1`` coefficients; a 2D ``n x n`` field has ``(n, n // 2 + 1)``
coefficients with the halved axis last. Hermitian symmetry of the full
spectrum is implicit in this layout. Dealiasing uses the 2/3 rule: modes
with integer index ``|m| >= n / 3`` along any axis are zeroed.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi


def diffusive_dt_limit(a_max, k_max):
    """Largest stable explicit step for ``a d_xx`` at wavenumber ``k_max``.

    Heun's real-axis stability interval is ``[-2, 0]``, so ``dt a k^2 <= 2``.
    """
    if a_max <= 0 or k_max <= 0:
        return np.inf
    return 2.0 / (a_max * k_max * k_max)


def _check_pow2(n):
    if n < 4 or n & (n - 1):
        raise ValueError(f"grid size must be a power of two >= 4, got {n}")


@dataclass(frozen=True)
class Grid1D:
    n: int
    L: float = TWO_PI

    def __post_init__(self):
        _check_pow2(self.n)
        if not self.L > 0:
            raise ValueError("domain length must be positive")

    @cached_property
    def x(self):
        return np.arange(self.n) * (self.L / self.n)

    @property
    def h(self):
        return self.L / self.n

    @cached_property
    def index(self):
        return np.arange(self.n // 2 + 1)

    @cached_property
    def k(self):
        return self.index * (TWO_PI / self.L)

    @cached_property
    def mask(self):
        return self.index < self.n / 3

    @property
    def k_max(self):
        return float(self.k[self.mask].max())

    def fft(self, u):
        return sfft.rfft(u, axis=-1)

    def ifft(self, u_hat):
        return sfft.irfft(u_hat, n=self.n, axis=-1)

    def deriv(self, u, order=1):
        """Spectral derivative of physical values ``u`` (last axis)."""
        return self.ifft((1j * self.k) ** order * self.fft(u))

    def dealias(self, u):
        return self.ifft(self.mask * self.fft(u))

    def integrate(self, u):
        return np.sum(u, axis=-1) * self.h

    def evaluate(self, u_hat, x):
        """Trigonometric interpolant of rfft coefficients ``u_hat`` at points ``x``.

        The Nyquist coefficient is ignored (it is always dealiased away).
        """
        x = np.asarray(x, dtype=float)
        m = self.index[1:-1] if self.n % 2 == 0 else self.index[1:]
        c = u_hat[..., m]
        flat = x.reshape(-1)
        out = np.empty(flat.shape)
        chunk = max(1, 2**20 // max(len(m), 1))
        for start in range(0, flat.size, chunk):
            xs = flat[start:start + chunk]
            ph = np.exp(1j * np.outer(xs, self.k[m]))
            out[start:start + chunk] = (u_hat[..., 0].real + 2.0 * (ph @ c).real) / self.n
        return out.reshape(x.shape)


@dataclass(frozen=True)
class Grid2D:
    """``n x n`` grid on ``[0, L)^2``; physical arrays are indexed ``[ix, iy]``."""

    n: int
    L: float = TWO_PI

    def __post_init__(self):
        _check_pow2(self.n)

    @property
    def h(self):
        return self.L / self.n

    @property
    def area_element(self):
        return self.h * self.h

    @cached_property
    def xy(self):
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, indexing="ij")

    @cached_property
    def index(self):
        mx = np.fft.fftfreq(self.n, 1.0 / self.n)[:, None]
        my = np.arange(self.n // 2 + 1)[None, :]
        return mx, my

    @cached_property
    def kx(self):
        return self.index[0] * (TWO_PI / self.L)

    @cached_property
    def ky(self):
        return self.index[1] * (TWO_PI / self.L)

    @cached_property
    def k2(self):
        return self.kx**2 + self.ky**2

    @cached_property
    def inv_k2(self):
        with np.errstate(divide="ignore"):
            inv = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        return inv

    @cached_property
    def mask(self):
        mx, my = self.index
        return (np.abs(mx) < self.n / 3) & (np.abs(my) < self.n / 3)

    @property
    def k_max(self):
        return float(np.sqrt(self.k2[self.mask].max()))

    @property
    def spectral_shape(self):
        return (self.n, self.n // 2 + 1)

    def fft(self, f):
        return sfft.rfft2(f, axes=(-2, -1))

    def ifft(self, f_hat):
        return sfft.irfft2(f_hat, s=(self.n, self.n), axes=(-2, -1))

    def grad(self, f_hat):
        """Physical gradient ``(d/dx, d/dy)`` stacked on a new axis -3."""
        return np.stack([self.ifft(1j * self.kx * f_hat), self.ifft(1j * self.ky * f_hat)],
                        axis=-3)

    def dx(self, f_hat):
        return 1j * self.kx * f_hat

    def dy(self, f_hat):
        return 1j * self.ky * f_hat

    def integrate(self, f):
        return np.sum(f, axis=(-2, -1)) * self.area_element

    def project(self, f):
        """Physical array -> masked spectral coefficients."""
        return self.mask * self.fft(f)
