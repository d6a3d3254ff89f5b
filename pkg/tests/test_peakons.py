import mpmath
import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.special import roots_legendre

from lasalt.errors import ConfigError, NumericalFailure
from lasalt.meanfield import ito_consistency_error, run_coupled, run_decoupled
from lasalt.noise import build_constant_basis, build_fourier_1d_basis, empty_basis
from lasalt.peakons import (PeakonSnapshot, PeakonSystem, initial_members, pk_kernel,
                            pk_kernel_deriv, pk_mean_velocity, pk_rhs, pk_velocity,
                            pk_velocity_deriv)

TWO_PI = 2 * np.pi


def test_kernel_values():
    assert pk_kernel(0.0, 1.0) == 0.5
    for a in (0.3, 1.0, 2.5):
        assert np.isclose(pk_kernel(a, a), 0.5 / np.e, rtol=1e-15)
        assert np.isclose(pk_kernel_deriv(a, a), -np.exp(-1) / (2 * a), rtol=1e-15)
        assert pk_kernel_deriv(0.0, a) == 0.0
        assert pk_kernel_deriv(0.0, a, "periodic") == 0.0
    with pytest.raises(ConfigError):
        pk_kernel(0.0, 0.0)


def test_periodic_kernel_matches_image_sum_and_cosh():
    x = np.linspace(-7.0, 7.0, 141)
    for a, L in ((1.0, TWO_PI), (0.4, 3.0), (2.0, 5.0)):
        images = sum(0.5 * np.exp(-np.abs(x + j * L) / a) for j in range(-60, 61))
        assert np.max(np.abs(pk_kernel(x, a, "periodic", L) - images)) < 1e-14
        d = np.mod(np.abs(x), L)
        cosh_form = np.cosh((d - L / 2) / a) / (2 * np.sinh(L / (2 * a)))
        assert np.max(np.abs(pk_kernel(x, a, "periodic", L) - cosh_form)) < 1e-14
        # derivative against the image sum of K'
        xs = x[np.abs(np.mod(x + L / 2, L) - L / 2) > 1e-9]
        dimages = sum(-np.sign(xs + j * L) / (2 * a) * np.exp(-np.abs(xs + j * L) / a)
                      for j in range(-60, 61))
        assert np.max(np.abs(pk_kernel_deriv(xs, a, "periodic", L) - dimages)) < 1e-13


def test_periodic_kernel_helmholtz_fourier_coefficients():
    # K_per is smooth on the open period, so Gauss-Legendre recovers its
    # Fourier coefficients to rounding; (1 + a^2 k^2) L c_k must equal a.
    # Modes stop at a k = 30 so the operator's gain keeps rounding below 1e-10.
    nodes, weights = roots_legendre(400)
    for a, L in ((1.0, TWO_PI), (0.25, TWO_PI), (1.7, 4.0)):
        x = 0.5 * L * (nodes + 1.0)
        w = 0.5 * L * weights
        K = pk_kernel(x, a, "periodic", L)
        for j in range(0, 40):
            k = TWO_PI * j / L
            if a * k > 30:
                break
            Lc = np.sum(w * K * np.exp(-1j * k * x))
            assert abs((1 + a * a * k * k) * Lc - a) < 1e-10


def test_velocity_examples():
    assert np.isclose(pk_velocity(0.7, [0.7], [2.0], 1.3), 1.0, rtol=1e-15)
    x0 = 0.4
    q = [x0 - 0.9, x0 + 0.9]
    for kernel in ("line", "periodic"):
        assert abs(pk_velocity_deriv(x0, q, [1.0, 1.0], 1.0, kernel)) < 1e-15


def test_velocity_extended_precision(rng):
    mpmath.mp.dps = 40
    q = rng.uniform(-2, 2, 3)
    p = rng.normal(size=3)
    x = rng.uniform(-3, 3, 20)
    a = 0.8
    u = pk_velocity(x, q, p, a)
    ux = pk_velocity_deriv(x, q, p, a)
    for xi, ui, uxi in zip(x, u, ux):
        ref = sum(mpmath.mpf(pb) / 2 * mpmath.exp(-abs(mpmath.mpf(xi) - mpmath.mpf(qb)) / a)
                  for qb, pb in zip(q, p))
        dref = sum(-mpmath.sign(mpmath.mpf(xi) - mpmath.mpf(qb)) * mpmath.mpf(pb) / (2 * a)
                   * mpmath.exp(-abs(mpmath.mpf(xi) - mpmath.mpf(qb)) / a)
                   for qb, pb in zip(q, p))
        assert abs(ui - float(ref)) < 1e-14
        assert abs(uxi - float(dref)) < 1e-14


def test_mean_velocity_examples(rng):
    q = rng.uniform(-2, 2, 3)
    p = rng.normal(size=3)
    x = np.linspace(-3, 3, 11)
    ens = np.stack([q, p])[None]
    assert np.allclose(pk_mean_velocity(x, ens, 1.0), pk_velocity(x, q, p, 1.0), atol=1e-15)
    mirror = np.stack([np.stack([q, p]), np.stack([-q, p])])
    want = 0.5 * (pk_velocity(0.0, q, p, 1.0) + pk_velocity(0.0, -q, p, 1.0))
    assert np.isclose(pk_mean_velocity(0.0, mirror, 1.0), want, rtol=1e-14)


def test_rhs_constant_xi(rng):
    q = rng.uniform(0, TWO_PI, (4, 3))
    p = rng.normal(size=(4, 3))
    nu = 0.3
    _, diff, ito = pk_rhs(q, p, 0 * q, 0 * q, build_constant_basis(1, nu))
    assert np.allclose(diff[:, :, 0], np.sqrt(2 * nu))
    assert np.all(diff[:, :, 1] == 0)
    assert np.all(ito == 0)


def test_single_peakon_translates_at_half_momentum():
    system = PeakonSystem(1.0, empty_basis(1), "line")
    p = 1.4
    res = run_coupled(system, initial_members([0.3], [p], 1), 1e-2, 2.0)
    q, pT = res.ensemble.members[0]
    assert np.isclose(q[0], 0.3 + p / 2 * 2.0, rtol=1e-13)
    assert pT[0] == p


def _hamiltonian_rhs(alpha):
    def f(t, y):
        n = y.size // 2
        q, p = y[:n], y[n:]
        d = q[:, None] - q[None, :]
        e = 0.5 * np.exp(-np.abs(d) / alpha)
        de = -np.sign(d) / alpha * e
        return np.concatenate([e @ p, -p * (de @ p)])
    return f


def test_collision_matches_reference():
    alpha = 1.0
    q0, p0 = [-1.0, 1.0], [1.0, -1.0]
    T = 2.5
    ts = np.linspace(0, T, 26)
    ref = solve_ivp(_hamiltonian_rhs(alpha), (0, T), q0 + p0, method="DOP853",
                    rtol=1e-13, atol=1e-14, t_eval=ts)
    # the pair blows up near t = 3.3; by T the gap has shrunk from 2 to about 0.2
    assert ref.y[1, -1] - ref.y[0, -1] < 0.25
    system = PeakonSystem(alpha, empty_basis(1), "line")
    got = []
    res = run_coupled(system, initial_members(q0, p0, 1), 1e-4, T, output_every=1000,
                      diagnostics=lambda ens, mean: {"q0": ens.members[0, 0, 0],
                                                     "q1": ens.members[0, 0, 1],
                                                     "p0": ens.members[0, 1, 0],
                                                     "p1": ens.members[0, 1, 1]})
    for rec in res.records:
        got.append([rec.values[k] for k in ("q0", "q1", "p0", "p1")])
    got = np.array(got).T
    assert got.shape == ref.y.shape
    assert np.max(np.abs(got - ref.y)) < 1e-6


def test_momentum_conserved():
    system = PeakonSystem(0.7, empty_basis(1), "line")
    m0 = initial_members([-2.0, 0.0, 1.5], [1.0, 0.4, 0.7], 1)
    res = run_coupled(system, m0, 1e-3, 10.0)
    assert abs(res.ensemble.members[0, 1].sum() - m0[0, 1].sum()) <= 1e-8


def test_ito_consistency(rng):
    basis = build_fourier_1d_basis([(1, 0.3, 0.2, 0.1), (2, 0.2, 1.1), (3, 0.1, -0.5, 0.05)])
    system = PeakonSystem(1.0, basis, "periodic")
    states = np.stack([rng.uniform(0, TWO_PI, (100, 4)), rng.normal(size=(100, 4))], axis=1)
    assert np.max(ito_consistency_error(system, states)) < 1e-6


def test_ito_correction_single_mode_by_hand():
    # xi = sin q: q gets 1/2 sin q cos q, p gets 1/2 p (cos^2 q + sin^2 q) = p/2
    basis = build_fourier_1d_basis([(1, 1.0, -np.pi / 2)])
    q = np.array([[0.3, 1.9]])
    p = np.array([[0.7, -1.2]])
    _, _, ito = pk_rhs(q, p, 0 * q, 0 * q, basis)
    assert np.allclose(ito[0, 0], 0.5 * np.sin(q[0]) * np.cos(q[0]), atol=1e-15)
    assert np.allclose(ito[0, 1], 0.5 * p[0], atol=1e-15)


def test_ordering_preserved_on_line():
    basis = build_fourier_1d_basis([(1, 0.2, 0.0, 0.3), (2, 0.1, 0.7)])
    system = PeakonSystem(1.0, basis, "line")
    m0 = initial_members([-2.0, 0.0, 2.0], [1.0, 0.6, 0.3], 20)
    res = run_coupled(system, m0, 1e-4, 1.0, seed=4, output_every=1000,
                      diagnostics=system.diagnostics())
    assert all(r.values["min_gap"] > 0 for r in res.records)
    assert np.all(np.diff(res.ensemble.members[:, 0], axis=-1) > 0)


def test_ordering_violation_aborts():
    system = PeakonSystem(1.0, empty_basis(1), "line")
    crossed = initial_members([0.5, 0.0], [1.0, 1.0], 2)
    with pytest.raises(NumericalFailure):
        system.check_step(crossed, PeakonSnapshot(crossed), 1e-3)
    with pytest.raises(NumericalFailure) as info:
        run_coupled(system, crossed, 1e-3, 0.01, diagnostics=system.diagnostics())
    assert info.value.records[-1].values == {"failed": 1.0}


def test_decoupled_requirements():
    m0 = initial_members([1.0, 3.0], [1.0, 0.5], 4)
    elliptic = build_fourier_1d_basis([(1, 0.1, 0.0, 0.3)])
    with pytest.raises(ConfigError):
        run_decoupled(PeakonSystem(1.0, elliptic, "line"), m0, 1e-3, 0.01)
    with pytest.raises(ConfigError):
        run_decoupled(PeakonSystem(1.0, empty_basis(1), "periodic"), m0, 1e-3, 0.01)
    with pytest.raises(ConfigError):
        run_decoupled(PeakonSystem(1.0, elliptic, "periodic", grid=4096), m0, 0.5, 1.0)


def test_spectral_mean_matches_direct_sum(rng):
    system = PeakonSystem(0.5, build_fourier_1d_basis([(1, 0.1, 0.0, 0.3)]), "periodic",
                          grid=4096)
    ens = np.stack([rng.uniform(0, TWO_PI, (6, 2)), rng.normal(size=(6, 2))], axis=1)
    coef = system.spectral.from_members(ens)
    x = np.array([0.1, 2.0, 4.4])
    direct = pk_mean_velocity(x, ens, 0.5, "periodic")
    # truncated Fourier sum of a kink: error decays like 1/k_max
    assert np.max(np.abs(system.spectral.velocity(coef, x) - direct)) < 1e-3


def test_decoupled_mean_field_matches_coupled():
    basis = build_fourier_1d_basis([(1, 0.1, 0.0, 0.3)])
    system = PeakonSystem(1.0, basis, "periodic")
    dt, T = 5e-3, 0.5
    x = np.linspace(0, TWO_PI, 64, endpoint=False)
    h = x[1] - x[0]
    M = 400
    coupled = run_coupled(system, initial_members([1.0, 4.0], [1.0, 0.5], M), dt, T, seed=2)
    per = np.stack([pk_velocity(x, m[0], m[1], 1.0, "periodic")
                    for m in coupled.ensemble.members])
    decoupled = run_decoupled(system, initial_members([1.0, 4.0], [1.0, 0.5], 1), dt, T)
    mean_field = system.spectral.velocity(decoupled.final_mean, x)
    gap = np.sqrt(h * np.sum((per.mean(axis=0) - mean_field) ** 2))
    se = np.sqrt(h * np.sum(per.var(axis=0, ddof=1) / M))
    assert gap <= 3 * se
