import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from lasalt import ConfigError, NumericalFailure
from lasalt.meanfield import (Ensemble, MeanFieldModel, empirical_mean, integrate_mean,
                              run_coupled, run_decoupled, step_em_ito,
                              step_heun_stratonovich, tree_sum)
from lasalt.noise import WienerBatch, build_vector_basis
from lasalt.rigidbody import RigidBodySystem, initial_members

PI0 = (0.1, 1.0, 0.1)


class Linear(MeanFieldModel):
    """``ds = (-a s + b mean) dt + c o dW``: additive noise, affine in the mean."""

    def __init__(self, a=1.0, b=0.0, c=0.0):
        self.a, self.b, self.c = a, b, c
        self.noise_count = 1

    def drift(self, states, mean):
        return -self.a * states + self.b * mean

    def diffusion(self, states, k):
        return np.full_like(states, self.c)

    def ito_correction(self, states):
        return np.zeros_like(states)

    def mean_rhs(self, mean):
        return (self.b - self.a) * mean


def test_empirical_mean_examples(rng):
    a = np.array([1.5, -2.0, 3.0])
    assert np.array_equal(empirical_mean(np.stack([a, -a])), np.zeros(3))
    assert np.array_equal(empirical_mean(a[None]), a)
    z = rng.standard_normal(1000)
    assert abs(empirical_mean(z)) < 3 / np.sqrt(1000)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=64))
def test_tree_sum_close_to_fsum(values):
    import math
    assert tree_sum(np.array(values)) == pytest.approx(math.fsum(values), abs=1e-6)


def test_tree_sum_rejects_empty():
    with pytest.raises(ValueError):
        tree_sum(np.zeros((0, 3)))


def test_heun_on_exponential_decay():
    ens = Ensemble(np.array([[1.0]]), frozen_mean=np.array([1.0]))
    out = step_heun_stratonovich(Linear(1.0), ens, WienerBatch(0.1, np.zeros((1, 1))))
    assert out.members[0, 0] == pytest.approx(0.905, abs=1e-15)
    assert out.t == pytest.approx(0.1) and out.step_index == 1


def test_heun_exact_for_additive_noise(rng):
    dW = rng.standard_normal((5, 1)) * 0.3
    s = rng.standard_normal((5, 2))
    ens = Ensemble(s, frozen_mean=s.mean(0))
    out = step_heun_stratonovich(Linear(0.0, 0.0, 0.7), ens, WienerBatch(0.01, dW))
    assert np.allclose(out.members, s + 0.7 * dW, atol=1e-15)


def test_em_without_noise_is_forward_euler():
    sys = RigidBodySystem(basis=build_vector_basis([[0.0, 0.0, 1.0]]))
    s = np.array([[0.3, 1.0, -0.2]])
    mean = np.array([0.1, 1.0, 0.1])
    out = step_em_ito(sys, Ensemble(s, frozen_mean=mean), WienerBatch(0.01, np.zeros((1, 1))))
    expected = s + 0.01 * (sys.drift(s, mean) + sys.ito_correction(s))
    assert np.array_equal(out.members, expected)


def test_non_finite_step_raises():
    ens = Ensemble(np.array([[np.inf]]), frozen_mean=np.array([0.0]))
    with pytest.raises(NumericalFailure):
        step_heun_stratonovich(Linear(), ens, WienerBatch(0.1, np.zeros((1, 1))))


def _brownian(rng, M, n_fine, dt_fine):
    return rng.standard_normal((n_fine, M, 1)) * np.sqrt(dt_fine)


def _rb_path(system, members, dW_fine, ratio, dt):
    ens = Ensemble(members.copy())
    for n in range(dW_fine.shape[0] // ratio):
        ens.frozen_mean = system.mean(ens.members)
        dW = dW_fine[n * ratio:(n + 1) * ratio].sum(axis=0)
        ens = step_heun_stratonovich(system, ens, WienerBatch(dt, dW))
    return ens.members


def test_heun_strong_order_rigid_body(rng):
    # one correlate: commutative noise, where Heun is strong order one
    system = RigidBodySystem(basis=build_vector_basis([[0.0, 0.3, 0.4]]))
    M, T, dt_fine = 16, 0.1, 1e-6
    n_fine = int(round(T / dt_fine))
    dW = _brownian(rng, M, n_fine, dt_fine)
    members = initial_members(PI0, M) + 0.05 * rng.standard_normal((M, 3))
    ref = _rb_path(system, members, dW, 1, dt_fine)
    dts = [1e-2, 1e-3, 1e-4]
    errors = []
    for dt in dts:
        out = _rb_path(system, members, dW, int(round(dt / dt_fine)), dt)
        errors.append(np.sqrt(np.mean(np.sum((out - ref) ** 2, axis=1))))
    order = np.polyfit(np.log(dts), np.log(errors), 1)[0]
    assert order >= 0.9, (errors, order)


def test_em_and_heun_agree_weakly():
    system = RigidBodySystem(basis=build_vector_basis([[0.0, 0.0, 0.2]]))
    M = 10_000
    members = initial_members(PI0, M)
    heun = run_coupled(system, members, 1e-3, 1.0, stepper="heun", seed=1)
    em = run_coupled(system, members, 1e-3, 1.0, stepper="em", seed=2)
    a = np.sum(heun.ensemble.members ** 2, axis=1)
    b = np.sum(em.ensemble.members ** 2, axis=1)
    se = np.sqrt(a.var(ddof=1) / M + b.var(ddof=1) / M)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_single_member_self_interaction():
    system = RigidBodySystem(basis=build_vector_basis([[0.0, 0.0, 0.2]]))
    r = run_coupled(system, initial_members(PI0, 1), 1e-2, 0.1, seed=3, record_means=True)
    for m in r.means[:-1]:
        assert m.shape == (3,)
    assert np.array_equal(r.final_mean, r.ensemble.members[0])


def test_zero_noise_collapse_coupled_and_decoupled():
    system = RigidBodySystem(basis=build_vector_basis([[0.0, 0.0, 0.0]]))
    members = initial_members(PI0, 5)
    single = run_coupled(system, members[:1], 1e-3, 0.5).ensemble.members[0]
    coupled = run_coupled(system, members, 1e-3, 0.5, seed=9)
    assert np.all(coupled.ensemble.members == coupled.ensemble.members[0])
    assert np.allclose(coupled.ensemble.members[0], single, atol=1e-14)
    ref = solve_ivp(lambda t, y: system.mean_rhs(y), (0, 0.5), members[0], method="DOP853",
                    rtol=1e-13, atol=1e-14).y[:, -1]
    gaps = []
    for dt in (1e-3, 5e-4):
        dec = run_decoupled(system, members, dt, 0.5, seed=9)
        _, means = integrate_mean(system, members[0], dt, 0.5)
        assert np.array_equal(dec.final_mean, means[-1])
        assert np.all(dec.ensemble.members == dec.ensemble.members[0])
        assert np.max(np.abs(dec.final_mean - ref)) < 1e-8
        gaps.append(np.max(np.abs(dec.ensemble.members[0] - ref)))
    # members see the mean frozen over each step: first-order splitting gap
    assert gaps[0] < 1e-5
    assert 1.6 < gaps[0] / gaps[1] < 2.4


def test_decoupled_members_never_read_the_ensemble():
    system = RigidBodySystem(basis=build_vector_basis([[0.0, 0.0, 0.3]]))
    members = initial_members(PI0, 8)
    a = run_decoupled(system, members, 1e-2, 0.5, seed=4, record_means=True)
    b = run_decoupled(system, members[:4], 1e-2, 0.5, seed=4, record_means=True)
    # the mean path is the same whatever the ensemble; members follow it
    assert all(np.array_equal(x, y) for x, y in zip(a.means, b.means))
    assert np.array_equal(a.ensemble.members[:4], b.ensemble.members)


def test_coupled_and_decoupled_statistics_agree():
    system = RigidBodySystem(basis=build_vector_basis([[0.0, 0.0, 0.2], [0.1, 0.0, 0.0]]))
    M = 10_000
    members = initial_members(PI0, M)
    c = run_coupled(system, members, 1e-3, 1.0, seed=11).ensemble.members
    d = run_decoupled(system, members, 1e-3, 1.0, seed=12).ensemble.members
    se = np.sqrt(c.var(axis=0, ddof=1) / M + d.var(axis=0, ddof=1) / M)
    assert np.all(np.abs(c.mean(0) - d.mean(0)) <= 3 * se)


def test_mean_gap_shrinks_like_inverse_sqrt_m():
    system = RigidBodySystem(basis=build_vector_basis([[0.0, 0.0, 0.2], [0.1, 0.0, 0.0]]))
    _, exact = integrate_mean(system, np.array(PI0), 1e-3, 2.0)
    exact = np.array(exact)
    gaps = {}
    for M in (1000, 4000):
        g = []
        for seed in range(4):
            r = run_coupled(system, initial_members(PI0, M), 1e-3, 2.0, seed=seed,
                            record_means=True)
            g.append(np.max(np.abs(np.array(r.means) - exact)))
        gaps[M] = np.mean(g)
    assert 1.0 <= gaps[1000] / gaps[4000] <= 3.0


def test_workers_do_not_change_results():
    system = RigidBodySystem(basis=build_vector_basis([[0.0, 0.0, 0.2], [0.1, 0.0, 0.0]]))
    members = initial_members(PI0, 37)
    hook = system.diagnostics(initial=members)
    a = run_coupled(system, members, 1e-2, 0.5, seed=5, diagnostics=hook, workers=1)
    b = run_coupled(system, members, 1e-2, 0.5, seed=5, diagnostics=hook, workers=4)
    assert np.array_equal(a.ensemble.members, b.ensemble.members)
    assert [r.values for r in a.records] == [r.values for r in b.records]


def test_failure_flushes_records_and_marks_last():
    class Blowup(Linear):
        def drift(self, states, mean):
            return states * 1e200

    seen = []
    with pytest.raises(NumericalFailure) as info:
        run_coupled(Blowup(), np.ones((2, 1)), 0.1, 1.0,
                    diagnostics=lambda e, m: {"x": float(e.members[0, 0])},
                    on_record=seen.append)
    records = info.value.records
    assert records[-1].values == {"failed": 1.0}
    assert seen == records
    assert all(np.isfinite(r.values.get("x", 0.0)) for r in records[:-1])


@pytest.mark.parametrize("kwargs", [dict(dt=0.3, T=1.0), dict(dt=-1.0, T=1.0),
                                    dict(dt=0.1, T=1.0, stepper="rk4"),
                                    dict(dt=0.1, T=1.0, output_every=0)])
def test_run_rejects_bad_settings(kwargs):
    dt, T = kwargs.pop("dt"), kwargs.pop("T")
    with pytest.raises(ConfigError):
        run_coupled(Linear(), np.ones((2, 1)), dt, T, **kwargs)
