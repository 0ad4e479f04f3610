import numpy as np
import pytest
import scipy.linalg

from sdcbf.dynamics import linear_model, make_segway, step_zoh
from sdcbf.sensitivity import (compose_sensitivities, flow_with_sensitivity,
                               step_jacobian)


def closed_loop_policy(K):
    K = np.atleast_2d(K)
    return lambda x: x @ K.T


def test_step_jacobian_frozen_flow():
    frozen = linear_model(np.zeros((3, 3)), np.zeros((3, 1)), u_max=1.0)
    J = step_jacobian(frozen, np.zeros(3), [0.4], 0.05)
    assert np.allclose(J, np.eye(3), atol=1e-12)


def test_step_jacobian_scalar_linear():
    model = linear_model([[-1.0]], [[0.0]], u_max=1.0)
    J = step_jacobian(model, [0.7], [0.0], 0.1)
    assert J[0, 0] == pytest.approx(np.exp(-0.1), abs=1e-6)


def test_step_jacobian_double_integrator():
    model = linear_model([[0, 1], [0, 0]], [0, 1], u_max=10.0)
    J = step_jacobian(model, [0.0, 1.0], [0.3], 0.5)
    assert np.allclose(J, [[1.0, 0.5], [0.0, 1.0]], atol=1e-9)


def test_step_jacobian_is_input_frozen():
    # the held input must not contribute to the derivative
    model = linear_model([[0.0]], [[1.0]], u_max=10.0)
    J = step_jacobian(model, [0.0], [5.0], 0.2)
    assert J[0, 0] == pytest.approx(1.0, abs=1e-9)


def test_compose_single_and_identity():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(compose_sensitivities([M]), M)
    assert np.allclose(compose_sensitivities([np.eye(2)] * 5), np.eye(2))


def test_compose_order():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[2.0, 0.0], [0.0, 1.0]])
    # earliest step rightmost: composing [A then B] = B @ A
    assert np.array_equal(compose_sensitivities([A, B]), B @ A)


def test_compose_semigroup_scalar():
    model = linear_model([[-0.8]], [[0.0]], u_max=1.0)
    j1 = step_jacobian(model, [1.0], [0.0], 0.1)
    j2 = step_jacobian(model, [np.exp(-0.08)], [0.0], 0.1)
    composed = compose_sensitivities([j1, j2])
    oneshot = step_jacobian(model, [1.0], [0.0], 0.2)
    assert np.allclose(composed, oneshot, atol=1e-9)


def test_compose_validates():
    with pytest.raises(ValueError):
        compose_sensitivities([])
    with pytest.raises(ValueError):
        compose_sensitivities([np.eye(2), np.eye(3)])


def test_flow_zero_steps():
    model = make_segway()
    st = flow_with_sensitivity(model, [0.1, 0, 0, 0], lambda x: np.zeros(1), 0.05, 0)
    assert st.states.shape == (1, 4)
    assert np.array_equal(st.cumulative[0], np.eye(4))


def test_flow_cumulative_recursion():
    model = make_segway()
    st = flow_with_sensitivity(model, [0.1, 0.2, 0.0, 0.0],
                               closed_loop_policy([[-1.0, -2.0, -30.0, -5.0]]),
                               0.05, 10)
    assert np.array_equal(st.cumulative[0], np.eye(4))
    for i in range(10):
        assert np.allclose(st.cumulative[i + 1],
                           st.step_jacobians[i] @ st.cumulative[i], atol=1e-13)


def test_flow_matches_closed_form_exponential():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    K = np.array([[-0.5, -0.8]])
    model = linear_model(A, B, u_max=100.0)
    dt, steps = 5e-4, 2000
    st = flow_with_sensitivity(model, [0.3, -0.2], closed_loop_policy(K), dt, steps)
    exact = scipy.linalg.expm((A + B @ K) * dt * steps)
    assert np.max(np.abs(st.cumulative[-1] - exact)) < 1e-4


def test_flow_chain_rule_matches_oneshot_fd():
    A = np.array([[0.0, 1.0], [-1.5, -0.6]])
    B = np.array([[0.0], [1.0]])
    K = np.array([[-0.4, -0.9]])
    model = linear_model(A, B, u_max=100.0)
    dt, steps = 0.05, 20
    policy = closed_loop_policy(K)
    st = flow_with_sensitivity(model, [0.3, -0.2], policy, dt, steps)

    def flow_map(x0):
        x = np.asarray(x0, dtype=float)
        for _ in range(steps):
            x = step_zoh(model, x, np.atleast_1d(policy(x)), dt)
        return x

    eps = 1e-6
    J = np.zeros((2, 2))
    for j in range(2):
        d = np.zeros(2)
        d[j] = eps
        J[:, j] = (flow_map([0.3, -0.2] + d) - flow_map([0.3, -0.2] - d)) / (2 * eps)
    rel = np.max(np.abs(st.cumulative[-1] - J)) / np.max(np.abs(J))
    assert rel < 1e-3


def test_flow_nonlinear_chain_rule_consistency(runtime):
    dt, steps = 0.05, 20
    x0 = np.array([0.15, 0.2, -0.01, 0.05])
    st = flow_with_sensitivity(runtime.model, x0, runtime.backup, dt, steps)

    def flow_map(x):
        x = np.asarray(x, dtype=float)
        for _ in range(steps):
            u = runtime.model.saturate(runtime.backup(x))
            x = step_zoh(runtime.model, x, u, dt)
        return x

    eps = 1e-6
    J = np.zeros((4, 4))
    for j in range(4):
        d = np.zeros(4)
        d[j] = eps
        J[:, j] = (flow_map(x0 + d) - flow_map(x0 - d)) / (2 * eps)
    rel = np.max(np.abs(st.cumulative[-1] - J)) / max(np.max(np.abs(J)), 1e-12)
    assert rel < 1e-3


def test_perturbation_size_robustness(runtime):
    dt, steps = 0.05, 10
    x0 = np.array([0.1, 0.1, 0.0, 0.0])
    a = flow_with_sensitivity(runtime.model, x0, runtime.backup, dt, steps,
                              eps_base=1e-5)
    b = flow_with_sensitivity(runtime.model, x0, runtime.backup, dt, steps,
                              eps_base=5e-6)
    scale = np.max(np.abs(a.cumulative[-1]))
    assert np.max(np.abs(a.cumulative[-1] - b.cumulative[-1])) / scale < 1e-3


def test_forward_scheme_agrees(runtime):
    dt, steps = 0.05, 10
    x0 = np.array([0.1, 0.1, 0.0, 0.0])
    c = flow_with_sensitivity(runtime.model, x0, runtime.backup, dt, steps,
                              scheme="central")
    f = flow_with_sensitivity(runtime.model, x0, runtime.backup, dt, steps,
                              scheme="forward")
    scale = np.max(np.abs(c.cumulative[-1]))
    assert np.max(np.abs(c.cumulative[-1] - f.cumulative[-1])) / scale < 1e-3


def test_unknown_scheme():
    model = make_segway()
    with pytest.raises(ValueError):
        flow_with_sensitivity(model, np.zeros(4), lambda x: np.zeros(1), 0.05, 1,
                              scheme="sideways")


def test_cumulative_invertible(runtime):
    st = flow_with_sensitivity(runtime.model, [0.2, 0.1, 0.0, 0.0],
                               runtime.backup, 0.05, 40)
    for i in range(0, 41, 10):
        assert abs(np.linalg.det(st.cumulative[i])) > 0.0


def test_near_singular_warning_logged(caplog):
    import logging
    model = make_segway()
    with caplog.at_level(logging.WARNING, logger="sdcbf.sensitivity"):
        flow_with_sensitivity(model, np.zeros(4),
                              lambda x: np.atleast_1d(-50.0 * x[1] - 60.0 * x[2]),
                              0.05, 40, det_floor=1e6)
    assert any("near-singular" in r.message for r in caplog.records)


def test_nonfinite_step_jacobian_raises():
    model = linear_model([[200.0]], [[0.0]], u_max=1.0)
    with pytest.raises(Exception):
        with np.errstate(over="ignore", invalid="ignore"):
            flow_with_sensitivity(model, [1e200], lambda x: np.zeros(1), 1.0, 40)
