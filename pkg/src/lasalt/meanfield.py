"""Mean-field ensemble engine.

Members of an ensemble are stored as one stacked array whose leading axis
indexes the member. A model exposes the pieces of its transport SDE

    ds = drift(s, mean) dt + sum_k diffusion(s, k) o dW_k

(Stratonovich), the Ito correction ``1/2 sum_k D[diffusion_k] diffusion_k``,
and the closed equation ``d mean / dt = mean_rhs(mean)`` satisfied by the
expectation. In coupled mode the mean is the empirical ensemble mean; in
decoupled mode it is integrated deterministically and the members only
read it.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from .errors import ConfigError, NumericalFailure
from .noise import WienerBatch, sample_wiener_batch

STEPPERS = ("heun", "em")


def tree_sum(values):
    """Sum along axis 0 by a fixed-order pairwise tree."""
    values = np.asarray(values)
    if values.shape[0] == 0:
        raise ValueError("cannot reduce an empty ensemble")
    while values.shape[0] > 1:
        half = values.shape[0] // 2
        paired = values[0:2 * half:2] + values[1:2 * half:2]
        if values.shape[0] % 2:
            paired = np.concatenate([paired, values[-1:]], axis=0)
        values = paired
    return values[0]


def empirical_mean(members):
    """Componentwise ensemble average (deterministic pairwise reduction)."""
    members = np.asarray(members)
    return tree_sum(members) / members.shape[0]


def _bcast(w, ndim):
    return w.reshape(w.shape + (1,) * (ndim - 1))


class MeanFieldModel:
    """Default plumbing for a mean-field system; models override the physics.

    States are stacked arrays ``(M, ...)``. ``noise_count`` is the number of
    correlates. Methods must be pure.
    """

    noise_count = 0

    def drift(self, states, mean):
        raise NotImplementedError

    def diffusion(self, states, k):
        raise NotImplementedError

    def ito_correction(self, states):
        raise NotImplementedError

    def mean_rhs(self, mean):
        raise NotImplementedError

    def project_mean(self, mean):
        return mean

    def mean(self, states):
        return empirical_mean(states)

    def initial_mean(self, states):
        return self.mean(states)

    def noise_increment(self, states, dW):
        """``sum_k diffusion(states, k) * dW[:, k]``."""
        total = np.zeros_like(states)
        for k in range(self.noise_count):
            total = total + self.diffusion(states, k) * _bcast(dW[:, k], states.ndim)
        return total

    def stratonovich_increment(self, states, mean, dt, dW):
        """``drift * dt + sum_k diffusion_k * dW_k`` (one Heun stage)."""
        return self.drift(states, mean) * dt + self.noise_increment(states, dW)

    def localize_mean(self, mean, start, stop):
        """The frozen mean as seen by members ``start .. stop - 1``."""
        return mean

    def check_step(self, states, mean, dt):
        """Hook for per-step guards (CFL limits, ordering checks).

        Called before every step and once after the last one.
        """


@dataclass
class Ensemble:
    members: np.ndarray
    t: float = 0.0
    step_index: int = 0
    frozen_mean: Any = None

    @property
    def member_count(self):
        return self.members.shape[0]


@dataclass
class DiagnosticsRecord:
    t: float
    values: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.values[name]


@dataclass
class RunResult:
    records: list
    ensemble: Ensemble
    means: Optional[list] = None
    final_mean: Any = None

    def series(self, name):
        t = np.array([r.t for r in self.records])
        return t, np.array([r.values[name] for r in self.records])


def _check_finite(states, where):
    if not np.all(np.isfinite(states)):
        raise NumericalFailure(f"non-finite member state after {where}")


def step_heun_stratonovich(system, ensemble, dW):
    """Stratonovich-Heun step with the mean frozen across both stages."""
    if dW.dt <= 0:
        raise ValueError("dt must be positive")
    s = ensemble.members
    mu = ensemble.frozen_mean
    inc = system.stratonovich_increment(s, mu, dW.dt, dW.increments)
    pred = s + inc
    inc2 = system.stratonovich_increment(pred, mu, dW.dt, dW.increments)
    new = s + 0.5 * (inc + inc2)
    _check_finite(new, f"step {ensemble.step_index}")
    return replace(ensemble, members=new, t=ensemble.t + dW.dt,
                   step_index=ensemble.step_index + 1)


def step_em_ito(system, ensemble, dW):
    """Euler-Maruyama on the Ito form (drift plus analytic correction)."""
    if dW.dt <= 0:
        raise ValueError("dt must be positive")
    s = ensemble.members
    mu = ensemble.frozen_mean
    det = system.drift(s, mu) + system.ito_correction(s)
    new = s + det * dW.dt + system.noise_increment(s, dW.increments)
    _check_finite(new, f"step {ensemble.step_index}")
    return replace(ensemble, members=new, t=ensemble.t + dW.dt,
                   step_index=ensemble.step_index + 1)


_STEPPER_FUNCS = {"heun": step_heun_stratonovich, "em": step_em_ito}


def heun_mean_step(system, mean, dt):
    """Deterministic Heun step of the closed mean equation, then projection."""
    k1 = system.mean_rhs(mean)
    pred = system.project_mean(mean + dt * k1)
    k2 = system.mean_rhs(pred)
    return system.project_mean(mean + 0.5 * dt * (k1 + k2))


def integrate_mean(system, mean0, dt, T, record_every=1):
    """Solve the closed mean equation alone. Returns ``(times, means)``."""
    nsteps = step_count(dt, T)
    mean = system.project_mean(mean0)
    times, means = [0.0], [mean]
    for n in range(nsteps):
        mean = heun_mean_step(system, mean, dt)
        if not np.all(np.isfinite(mean)):
            raise NumericalFailure(f"non-finite mean after step {n}")
        if (n + 1) % record_every == 0 or n + 1 == nsteps:
            times.append((n + 1) * dt)
            means.append(mean)
    return np.array(times), means


def step_count(dt, T):
    if not (dt > 0 and T > 0):
        raise ConfigError("dt and T must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(f"dt={dt} does not divide T={T}", key="dt")
    return n


def _advance(stepper, system, ensemble, dW, workers):
    if workers <= 1 or ensemble.member_count < 2:
        M = ensemble.member_count
        local = replace(ensemble, frozen_mean=system.localize_mean(ensemble.frozen_mean, 0, M))
        return replace(stepper(system, local, dW), frozen_mean=ensemble.frozen_mean)
    M = ensemble.member_count
    bounds = np.linspace(0, M, min(workers, M) + 1).astype(int)

    def chunk(i):
        lo, hi = bounds[i], bounds[i + 1]
        sub = replace(ensemble, members=ensemble.members[lo:hi],
                      frozen_mean=system.localize_mean(ensemble.frozen_mean, lo, hi))
        return stepper(system, sub, dW.subset(lo, hi)).members

    with ThreadPoolExecutor(max_workers=len(bounds) - 1) as pool:
        parts = list(pool.map(chunk, range(len(bounds) - 1)))
    return replace(ensemble, members=np.concatenate(parts, axis=0),
                   t=ensemble.t + dW.dt, step_index=ensemble.step_index + 1)


def _run(system, members0, dt, T, mode, stepper="heun", seed=0, diagnostics=None,
         output_every=1, workers=1, on_record=None, record_means=False):
    if mode not in ("coupled", "decoupled"):
        raise ConfigError(f"unknown mode '{mode}'", key="mode")
    if stepper not in _STEPPER_FUNCS:
        raise ConfigError(f"unknown stepper '{stepper}'", key="stepper")
    if output_every < 1:
        raise ConfigError("output_every must be >= 1", key="output_every")
    step_fn = _STEPPER_FUNCS[stepper]
    nsteps = step_count(dt, T)
    members0 = np.array(members0, copy=True)
    M = members0.shape[0]
    if M < 1:
        raise ConfigError("ensemble needs at least one member", key="members")
    ensemble = Ensemble(members0)
    records = []
    means = [] if record_means else None

    def emit(ens, mean):
        if diagnostics is None:
            return
        rec = DiagnosticsRecord(float(ens.t), dict(diagnostics(ens, mean)))
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    def fail(message, t):
        rec = DiagnosticsRecord(float(t), {"failed": 1.0})
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        raise NumericalFailure(message, records)

    if mode == "decoupled":
        mean = system.project_mean(system.initial_mean(members0))
    else:
        mean = system.project_mean(system.mean(members0))
    ensemble.frozen_mean = mean
    emit(ensemble, mean)

    for n in range(nsteps):
        ensemble.frozen_mean = mean
        if record_means:
            means.append(mean)
        dW = sample_wiener_batch(seed, n, M, system.noise_count, dt)
        try:
            system.check_step(ensemble.members, mean, dt)
            ensemble = _advance(step_fn, system, ensemble, dW, workers)
            if mode == "decoupled":
                mean = heun_mean_step(system, mean, dt)
                if not np.all(np.isfinite(mean)):
                    raise NumericalFailure(f"non-finite mean after step {n}")
        except NumericalFailure as exc:
            fail(str(exc), ensemble.t)
        # exact time stamps avoid accumulated rounding in t
        ensemble.t = (n + 1) * dt
        if mode == "coupled":
            mean = system.project_mean(system.mean(ensemble.members))
        ensemble.frozen_mean = mean
        if n + 1 == nsteps:
            try:
                system.check_step(ensemble.members, mean, dt)
            except NumericalFailure as exc:
                fail(str(exc), ensemble.t)
        if (n + 1) % output_every == 0 or n + 1 == nsteps:
            emit(ensemble, mean)

    if record_means:
        means.append(mean)
    return RunResult(records, ensemble, means, mean)


def run_coupled(system, members0, dt, T, stepper="heun", seed=0, diagnostics=None,
                output_every=1, workers=1, on_record=None, record_means=False):
    """Advance the ensemble with the empirical mean frozen at each step start.

    ``diagnostics(ensemble, mean) -> dict`` is called at t=0, every
    ``output_every`` steps and at the final step.
    """
    return _run(system, members0, dt, T, "coupled", stepper, seed, diagnostics,
                output_every, workers, on_record, record_means)


def run_decoupled(system, members0, dt, T, stepper="heun", seed=0, diagnostics=None,
                  output_every=1, workers=1, on_record=None, record_means=False):
    """Solve the closed mean equation by Heun and transport members with it."""
    return _run(system, members0, dt, T, "decoupled", stepper, seed, diagnostics,
                output_every, workers, on_record, record_means)


def run(system, members0, dt, T, mode="coupled", **kwargs):
    return _run(system, members0, dt, T, mode, **kwargs)


def finite_difference_ito_correction(system, states, h=1e-5):
    """``1/2 sum_k D[diffusion_k](s) . diffusion_k(s)`` by central differences.

    The direction ``diffusion_k(s)`` is normalised per member and the step
    scaled by the member's state norm, so ``h`` is a relative step.
    """
    states = np.asarray(states)
    out = np.zeros_like(states)
    axes = tuple(range(1, states.ndim))
    scale = np.sqrt(np.sum(np.abs(states) ** 2, axis=axes, keepdims=True))
    scale = np.where(scale > 0, scale, 1.0)
    for k in range(system.noise_count):
        v = system.diffusion(states, k)
        vn = np.sqrt(np.sum(np.abs(v) ** 2, axis=axes, keepdims=True))
        safe = np.where(vn > 0, vn, 1.0)
        step = h * scale
        direction = v / safe
        plus = system.diffusion(states + step * direction, k)
        minus = system.diffusion(states - step * direction, k)
        out = out + 0.5 * (plus - minus) / (2 * step) * vn
    return out


def ito_consistency_error(system, states, h=1e-5):
    """Per-member relative gap between analytic and finite-difference Ito corrections."""
    states = np.asarray(states)
    axes = tuple(range(1, states.ndim))
    analytic = system.ito_correction(states)
    numeric = finite_difference_ito_correction(system, states, h)
    num = np.sqrt(np.sum(np.abs(analytic - numeric) ** 2, axis=axes))
    den = np.sqrt(np.sum(np.abs(analytic) ** 2, axis=axes))
    return num / np.where(den > 0, den, 1.0)
