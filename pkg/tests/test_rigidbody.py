import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp, trapezoid

from lasalt import ConfigError
from lasalt.meanfield import integrate_mean, ito_consistency_error, run_coupled
from lasalt.noise import build_constant_basis, build_vector_basis
from lasalt.rigidbody import (InertiaSpec, RigidBodySystem, initial_members, rb_diffusion,
                              rb_drift, rb_ito_correction, rb_mean_rhs, rb_moments)

IDENTITY = InertiaSpec(1.0, 1.0, 1.0)
E1, E2, E3 = np.eye(3)
vec3 = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


def test_drift_examples():
    assert np.allclose(rb_drift(E1, E3, IDENTITY), [0, -1, 0])
    assert np.allclose(rb_drift(np.array([1.0, 2, 3]), np.array([2.0, 4, 6]), IDENTITY), 0)
    assert np.allclose(rb_drift(np.array([0, 0, 3.0]), np.array([0, 2.0, 0]), InertiaSpec()),
                       [-3, 0, 0])


@given(vec3, vec3, vec3, st.floats(-3, 3))
def test_drift_is_affine_in_the_mean(s, a, b, c):
    I = InertiaSpec()
    lhs = rb_drift(s, a + c * b, I)
    assert np.allclose(lhs, rb_drift(s, a, I) + c * rb_drift(s, b, I), atol=1e-9)


def test_diffusion_examples():
    assert np.allclose(rb_diffusion(E1, E3), -E2)
    assert np.allclose(rb_diffusion(np.array([1.0, 2, 3]), np.array([2.0, 4, 6])), 0)
    r = rb_diffusion(E3, np.array([1.0, 1, 0]) / np.sqrt(2))
    assert np.allclose(r, -np.array([1, -1, 0]) / np.sqrt(2))


def test_ito_correction_examples():
    assert np.allclose(rb_ito_correction(E1, build_vector_basis([E3])), [-0.5, 0, 0])
    v = np.array([0.3, -1.2, 2.0])
    assert np.allclose(rb_ito_correction(v, build_constant_basis(3, 0.5)), -v)


def test_ito_correction_matches_finite_differences(rng):
    system = RigidBodySystem(basis=build_vector_basis([[0.1, 0.2, 0.3], [0.0, -0.5, 0.2]]))
    states = rng.standard_normal((100, 3))
    assert np.max(ito_consistency_error(system, states)) < 1e-8


def test_mean_rhs_stationary_and_isotropic():
    xi = build_vector_basis([E2 * 0.4])
    assert np.allclose(rb_mean_rhs(2 * E2, InertiaSpec(), xi), 0)
    m = np.array([0.3, 0.4, 1.2])
    assert np.allclose(rb_mean_rhs(m, IDENTITY, build_constant_basis(3, 0.5)), -m)


def test_isotropic_mean_decays_exponentially():
    system = RigidBodySystem(IDENTITY, build_constant_basis(3, 0.5))
    m0 = np.array([0.3, 0.4, 1.2])
    t, means = integrate_mean(system, m0, 1e-3, 1.0, record_every=100)
    norms = np.linalg.norm(means, axis=1)
    assert np.allclose(norms, np.linalg.norm(m0) * np.exp(-t), rtol=1e-6)


def test_mean_solve_matches_high_order_reference():
    system = RigidBodySystem(basis=build_vector_basis([[0.0, 0.0, 0.5]]))
    m0 = np.array([0.1, 1.0, 0.1])
    _, means = integrate_mean(system, m0, 1e-3, 2.0)
    ref = solve_ivp(lambda t, y: system.mean_rhs(y), (0, 2), m0, method="DOP853",
                    rtol=1e-13, atol=1e-14).y[:, -1]
    assert np.max(np.abs(means[-1] - ref)) < 1e-6


def test_mean_dissipation_identity_along_decoupled_solve():
    basis = build_vector_basis([E3])
    system = RigidBodySystem(basis=basis)
    dt = 1e-3
    _, means = integrate_mean(system, np.array([0.1, 1.0, 0.1]), dt, 1.0)
    means = np.array(means)
    n2 = np.sum(means**2, axis=1)
    prod = np.sum(np.cross(E3, means) ** 2, axis=1)
    resid = (n2[2:] - n2[:-2]) / (2 * dt) + prod[1:-1]
    assert np.max(np.abs(resid)) < 1e-6


def test_moment_sum_rule_any_ensemble(rng):
    members = rng.standard_normal((33, 3)) * 5
    c, n2, v = rb_moments(members)
    assert abs(c - n2 - v) <= 1e-12 * c


def test_zero_noise_keeps_variance_zero():
    system = RigidBodySystem(basis=build_vector_basis([[0.0, 0.0, 0.0]]))
    members = initial_members((0.1, 1.0, 0.1), 6)
    r = run_coupled(system, members, 1e-2, 1.0, diagnostics=system.diagnostics(members))
    assert all(rec["variance"] < 1e-28 for rec in r.records)


def test_variance_growth_regression():
    basis = build_vector_basis([E3])
    system = RigidBodySystem(basis=basis)
    M = 2000
    members = initial_members((0.1, 1.0, 0.1), M)
    r = run_coupled(system, members, 1e-3, 0.5, seed=21, diagnostics=system.diagnostics(),
                    output_every=10)
    t, var = r.series("variance")
    _, prod = r.series("production")
    # variance(T) - variance(0) against the integrated production
    assert var[-1] == pytest.approx(trapezoid(prod, t), rel=0.1)


def test_inertia_validation():
    with pytest.raises(ConfigError):
        InertiaSpec(1.0, -1.0, 2.0)
    with pytest.raises(ConfigError):
        InertiaSpec.from_sequence([1.0, 2.0])
    with pytest.raises(ConfigError):
        initial_members((1.0, 2.0), 3)
