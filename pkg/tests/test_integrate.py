import numpy as np
import pytest

from nonholo.constraints import ConstraintSet, OffManifoldError
from nonholo.dalembert import DalembertSystem
from nonholo.integrate import (
    IntegratorConfig,
    ProjectionError,
    Status,
    project_to_manifold,
    simulate,
)
from nonholo.lagrangian import LagrangianModel
from nonholo.state import AugmentedState
from nonholo.vakonomic import VakonomicSystem


def particle(n=2, V=lambda q: 0):
    return LagrangianModel(n, lambda q, v, t: 0.5 * sum(v[i] * v[i] for i in range(n)) - V(q))


speed = ConstraintSet.nonlinear(2, lambda q, v, t: [v[0] ** 2 + v[1] ** 2 - 1])
circle = ConstraintSet.holonomic(2, lambda q, t: [q[0] ** 2 + q[1] ** 2 - 1])


@pytest.mark.parametrize("scheme", ["rk4", "semi_implicit_euler"])
def test_free_particle_exact(scheme):
    res = simulate(DalembertSystem(particle()), AugmentedState([1.0, -1.0], [0.5, 2.0]), IntegratorConfig(0.1, 2.0, scheme))
    assert res.completed
    for s in res.samples:
        np.testing.assert_allclose(s.q, [1.0 + 0.5 * s.t, -1.0 + 2.0 * s.t], atol=1e-12)


def test_constant_force_exact_rk4():
    res = simulate(DalembertSystem(particle(V=lambda q: 3 * q[0])), AugmentedState([0.0, 0.0], [1.0, 0.0]), IntegratorConfig(0.1, 1.0))
    np.testing.assert_allclose(res.final.q[0], 1.0 - 1.5, atol=1e-12)


@pytest.mark.parametrize("cls", [DalembertSystem, VakonomicSystem])
def test_speed_free_keeps_speed(cls):
    res = simulate(cls(particle(), speed), AugmentedState([0.0, 0.0], [0.6, 0.8], [0.0]), IntegratorConfig(1e-3, 10.0, record_every=50))
    assert res.completed
    assert np.max(np.abs(np.linalg.norm(res.v, axis=1) - 1.0)) < 1e-8
    assert len(res.samples) == 201 and res.final.t == pytest.approx(10.0)


def test_off_manifold_start_rejected():
    with pytest.raises(OffManifoldError):
        simulate(DalembertSystem(particle(), speed), AugmentedState([0, 0], [1.0, 0.1]), IntegratorConfig(0.01, 1.0))


def test_samples_increase_and_last_step_truncated():
    res = simulate(DalembertSystem(particle()), AugmentedState([0.0, 0.0], [1.0, 0.0]), IntegratorConfig(0.3, 1.0))
    t = res.t
    assert np.all(np.diff(t) > 0)
    np.testing.assert_allclose(t, [0.0, 0.3, 0.6, 0.9, 1.0])
    np.testing.assert_allclose(res.final.q, [1.0, 0.0], atol=1e-14)


def test_drift_exceeded_status():
    sys = DalembertSystem(particle(V=lambda q: 9.81 * q[1]), circle, alpha=0.0, beta=0.0)
    res = simulate(sys, AugmentedState([1.0, 0.0], [0.0, 0.0]), IntegratorConfig(0.05, 5.0, projection=False))
    assert res.status is Status.DRIFT_EXCEEDED
    assert "drift" in res.message
    assert res.final.residual_max > 1e-8


def test_projection_controls_drift():
    sys = DalembertSystem(particle(V=lambda q: 9.81 * q[1]), circle, alpha=0.0, beta=0.0)
    init = AugmentedState([1.0, 0.0], [0.0, 0.0])
    off = simulate(sys, init, IntegratorConfig(0.01, 1.0, projection=False, drift_tolerance=1.0))
    on = simulate(sys, init, IntegratorConfig(0.01, 1.0, projection=True))
    assert on.completed and on.max_drift < 1e-8
    assert off.max_drift > 100 * on.max_drift


def test_effective_mass_status():
    sys = VakonomicSystem(particle(V=lambda q: q[0] ** 2 + q[1] ** 2), speed)
    res = simulate(sys, AugmentedState([0.6, -0.3], [0.6, 0.8], [-0.5]), IntegratorConfig(0.01, 1.0))
    assert res.status is Status.EFFECTIVE_MASS_SINGULAR
    assert res.message


def test_singular_status():
    cs = ConstraintSet.nonlinear(2, lambda q, v, t: [v[0] ** 2 + v[1] ** 2])
    res = simulate(DalembertSystem(particle(), cs), AugmentedState([0, 0], [0, 0]), IntegratorConfig(0.01, 1.0))
    assert res.status is Status.SINGULAR_SYSTEM and res.message


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(dt=2.0, t_end=1.0)
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="leapfrog")
    with pytest.raises(ValueError):
        IntegratorConfig(drift_tolerance=0.0)
    assert IntegratorConfig(scheme="Semi-Implicit-Euler").scheme == "semi_implicit_euler"


def test_project_fixed_point():
    q, v = project_to_manifold(speed, [0.3, 0.1], [0.6, 0.8])
    np.testing.assert_array_equal(v, [0.6, 0.8])
    np.testing.assert_array_equal(q, [0.3, 0.1])


def test_project_speed_radial():
    w = np.array([0.6, 0.8]) * 1.001
    q, v = project_to_manifold(speed, [0.0, 0.0], w)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(v / np.linalg.norm(v), [0.6, 0.8], atol=1e-14)


def test_project_circle():
    q, v = project_to_manifold(circle, [1.0001, 0.0], [0.01, 1.0])
    assert abs(q @ q - 1) < 1e-9
    assert abs(q @ v) < 1e-9
    np.testing.assert_allclose(q, [1.0, 0.0], atol=1e-12)


def test_project_second_order_refused():
    cs = ConstraintSet.second_order(2, lambda q, v, a, t: [a[0] + q[0]])
    with pytest.raises(ProjectionError):
        project_to_manifold(cs, [1.0, 0.0], [0.0, 0.0])


def test_work_audit_with_drag():
    model = LagrangianModel(2, lambda q, v, t: 0.5 * (v[0] ** 2 + v[1] ** 2), D=lambda q, v, t: -0.1 * v)
    res = simulate(DalembertSystem(model), AugmentedState([0, 0], [1.0, 0.5]), IntegratorConfig(0.01, 5.0))
    assert res.final.work_D < 0
    assert res.energy_drift < 1e-9
