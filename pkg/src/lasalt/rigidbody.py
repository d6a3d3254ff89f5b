"""Stochastic rigid body with mean-coupled drift.

Member dynamics (Stratonovich)

    dPi = -E[Omega] x Pi dt - sum_k xi_k x Pi o dW_k,   Omega = I^-1 Pi

and the closed mean equation

    dE[Pi]/dt = -E[Omega] x E[Pi] + 1/2 sum_k xi_k x (xi_k x E[Pi]).

All functions are vectorised over leading axes: states have shape ``(..., 3)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .meanfield import MeanFieldModel, empirical_mean
from .noise import build_vector_basis, combine

DEFAULT_INERTIA = (1.0, 2.0, 3.0)
DEFAULT_PI0 = (0.1, 1.0, 0.1)


@dataclass(frozen=True)
class InertiaSpec:
    I1: float = 1.0
    I2: float = 2.0
    I3: float = 3.0

    def __post_init__(self):
        for name in ("I1", "I2", "I3"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"moment of inertia {name} must be positive, got {v}",
                                  key="rigidbody.inertia")

    @classmethod
    def from_sequence(cls, values):
        values = [float(v) for v in values]
        if len(values) != 3:
            raise ConfigError("inertia needs three entries", key="rigidbody.inertia")
        return cls(*values)

    @property
    def diagonal(self):
        return np.array([self.I1, self.I2, self.I3])

    def angular_velocity(self, Pi):
        return np.asarray(Pi) / self.diagonal


def _vectors(basis):
    if basis is None:
        return np.zeros((0, 3))
    if hasattr(basis, "vectors"):
        xi = basis.vectors()
    else:
        xi = np.asarray(basis, dtype=float).reshape(-1, 3)
    if xi.size and xi.shape[1] != 3:
        raise ConfigError("rigid-body noise vectors must be 3D", key="noise")
    return xi.reshape(-1, 3)


def rb_drift(state, mean, inertia):
    """``-I^-1(mean) x state``."""
    return -np.cross(inertia.angular_velocity(mean), state)


def rb_diffusion(state, xi_k):
    """``-xi_k x state``."""
    return -np.cross(np.asarray(xi_k, dtype=float), state)


def rb_ito_correction(state, basis):
    """``1/2 sum_k xi_k x (xi_k x state)``."""
    state = np.asarray(state, dtype=float)
    out = np.zeros_like(state)
    for xi in _vectors(basis):
        out = out + 0.5 * np.cross(xi, np.cross(xi, state))
    return out


def rb_mean_rhs(mean, inertia, basis):
    return rb_drift(mean, mean, inertia) + rb_ito_correction(mean, basis)


def rb_production(mean, basis):
    """``sum_k |xi_k x mean|^2``: loss rate of ``|E Pi|^2`` and gain rate of the variance."""
    total = 0.0
    for xi in _vectors(basis):
        c = np.cross(xi, mean)
        total = total + np.sum(c * c, axis=-1)
    return total


def rb_moments(members):
    """``(casimir_mean, mean_norm2, variance)`` of an ensemble ``(M, 3)``."""
    members = np.asarray(members, dtype=float)
    mean = empirical_mean(members)
    casimir = float(empirical_mean(np.sum(members**2, axis=1)))
    dev = members - mean
    variance = float(empirical_mean(np.sum(dev**2, axis=1)))
    return casimir, float(mean @ mean), variance


class RigidBodySystem(MeanFieldModel):
    def __init__(self, inertia=None, basis=None):
        self.inertia = inertia if inertia is not None else InertiaSpec()
        self.basis = basis if basis is not None else build_vector_basis([[0.0, 0.0, 0.0]])
        self.xi = _vectors(self.basis)
        self.noise_count = len(self.xi)

    def drift(self, states, mean):
        return rb_drift(states, mean, self.inertia)

    def diffusion(self, states, k):
        return rb_diffusion(states, self.xi[k])

    def ito_correction(self, states):
        return rb_ito_correction(states, self.xi)

    def mean_rhs(self, mean):
        return rb_mean_rhs(mean, self.inertia, self.xi)

    def stratonovich_increment(self, states, mean, dt, dW):
        # every term is a cross product with Pi, so fold them into one rotation vector
        w = self.inertia.angular_velocity(mean) * dt + combine(dW, self.xi)
        return -np.cross(w, states)

    def noise_increment(self, states, dW):
        return -np.cross(combine(dW, self.xi), states)

    def diagnostics(self, initial=None):
        """Diagnostics hook for the engine.

        With ``initial`` members given, ``casimir_drift_max`` reports the
        largest per-member relative change of ``|Pi|^2``.
        """
        c0 = None if initial is None else np.sum(np.asarray(initial) ** 2, axis=1)

        def hook(ensemble, mean):
            members = ensemble.members
            casimir, norm2, variance = rb_moments(members)
            emp = empirical_mean(members)
            out = {
                "casimir_mean": casimir,
                "mean_norm2": norm2,
                "variance": variance,
                "production": float(rb_production(emp, self.xi)),
            }
            if c0 is not None and c0.shape[0] == members.shape[0]:
                c = np.sum(members**2, axis=1)
                out["casimir_drift_max"] = float(np.max(np.abs(c - c0) / c0))
            if ensemble.frozen_mean is not None:
                m = np.asarray(mean)
                out["solved_mean_norm2"] = float(m @ m)
                out["solved_production"] = float(rb_production(m, self.xi))
            return out

        return hook


def initial_members(pi0, members):
    pi0 = np.asarray(pi0, dtype=float)
    if pi0.shape != (3,) or not np.all(np.isfinite(pi0)):
        raise ConfigError("pi0 must be three finite numbers", key="rigidbody.pi0")
    return np.tile(pi0, (int(members), 1))
