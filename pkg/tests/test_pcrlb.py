import csv
import math

import numpy as np
import pytest

from cfdpf.pcrlb import (
    DBlocks,
    ExpectationConfig,
    PcrlbError,
    approx_fim_sum,
    approx_fim_tharmarasa,
    approx_fim_tharmarasa_direct,
    c22,
    centralized_fim_step,
    compute_bounds,
    d_blocks_gaussian,
    distributed_fim_step,
    local_fim_pair,
    local_prediction_fim_step,
    pcrlb_position_bound,
    write_bounds_csv,
)
from cfdpf.ssm import BearingOnlyModel, kalman_filter, linear_gaussian_model, numerical_jacobian

CLOSED = ExpectationConfig(mode="closed_form_gaussian")


def _two_node_2d():
    return linear_gaussian_model(
        [[1.0, 1.0], [0.0, 1.0]], [[0.25, 0.1], [0.1, 0.2]],
        [[[1.0, 0.0]], [[0.0, 1.0]]], [[[1.0]], [[0.5]]], position_indices=(0,))


def _blocks(model):
    return d_blocks_gaussian(model, np.zeros((1, model.F.shape[0])), cfg=CLOSED)


def test_linear_d_blocks_exact():
    m = _two_node_2d()
    b = _blocks(m)
    Qi = np.linalg.inv(m.Q)
    assert np.allclose(b.D11, m.F.T @ Qi @ m.F, atol=1e-12)
    assert np.allclose(b.D12, -m.F.T @ Qi, atol=1e-12)
    assert np.allclose(b.B22, Qi, atol=1e-12)
    Jz = sum(H.T @ np.linalg.inv(R) @ H for H, R in zip(m.H, m.R))
    assert np.allclose(b.D22, Qi + Jz, atol=1e-12)


def test_bot_transition_jacobian_matches_finite_differences():
    m = BearingOnlyModel(np.array([[0.0, 0.0], [3.0, 1.0]]))
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(20, 4)) + [2.0, 2.0, 0.3, 0.3]:
        fd = numerical_jacobian(lambda s: m.transition_mean(s[None])[0], x)
        assert np.allclose(m.transition_jacobian(x[None])[0], fd, atol=1e-6)


def test_scalar_recursion_oracle():
    # F = Q = H = R = 1 gives J(k+1) = 1 + 1 - 1/(J + 1)
    m = linear_gaussian_model([[1.0]], [[1.0]], [[[1.0]]], [[[1.0]]])
    b = _blocks(m)
    for J in (0.5, 1.0, 3.0):
        out = centralized_fim_step(np.array([[J]]), b)
        assert out[0, 0] == pytest.approx(2.0 - 1.0 / (J + 1.0), abs=1e-14)
        assert local_prediction_fim_step(np.array([[J]]), b)[0, 0] == pytest.approx(J / (J + 1.0), abs=1e-14)


def test_zero_information_prior_step():
    # with J = 0 the prior term is D21 D11^-1 D12 = Q^-1 for invertible F
    m = _two_node_2d()
    b = _blocks(m)
    out = local_prediction_fim_step(np.zeros((2, 2)), b)
    assert np.allclose(out, 0.0, atol=1e-10)


def test_central_matches_kalman_information():
    m = _two_node_2d()
    P0 = np.diag([2.0, 1.0])
    res = compute_bounds(m, np.zeros(2), P0, 10, CLOSED, variants=("central", "exact"))
    zs = [[np.zeros(1), np.zeros(1)]] * 10
    _, _, infos = kalman_filter(m, np.zeros(2), P0, zs)
    for J, I in zip(res.J["central"][1:], infos):
        assert np.max(np.abs(J - I)) <= 1e-12 * max(1.0, np.abs(I).max())


def test_local_prediction_equals_central_with_b22():
    m = _two_node_2d()
    b = _blocks(m)
    J = np.array([[2.0, 0.3], [0.3, 1.0]])
    no_obs = DBlocks(b.D11, b.D12, b.D21, b.B22, b.B22, [np.zeros((2, 2))] * 2)
    assert np.allclose(local_prediction_fim_step(J, b), centralized_fim_step(J, no_obs), atol=1e-14)


def test_single_node_distributed_equals_central():
    m = linear_gaussian_model([[1.0, 1.0], [0.0, 1.0]], [[0.25, 0.1], [0.1, 0.2]], [[[1.0, 0.0]]], [[[1.0]]])
    res = compute_bounds(m, np.zeros(2), np.eye(2), 8, CLOSED, tharmarasa_nodes=(0,))
    for a, b in zip(res.J["central"], res.J["exact"]):
        assert np.allclose(a, b, atol=1e-12)
    for a, b in zip(res.J["central"], res.J["tharmarasa[0]"]):
        assert np.allclose(a, b, atol=1e-12)


def test_two_node_distributed_equals_central():
    res = compute_bounds(_two_node_2d(), np.zeros(2), np.diag([2.0, 1.0]), 10, CLOSED)
    diff = max(np.max(np.abs(a - b)) for a, b in zip(res.J["central"], res.J["exact"]))
    assert diff <= 1e-12


def test_c22_is_sum_of_local_information_increments():
    m = _two_node_2d()
    b = _blocks(m)
    Js = [np.eye(2), np.diag([2.0, 0.5])]
    pairs = [local_fim_pair(J, b, l) for l, J in enumerate(Js)]
    C = c22([p[0] for p in pairs], [p[1] for p in pairs], b)
    assert np.allclose(C, b.D22, atol=1e-12)


def test_tharmarasa_direct_form_matches():
    m = _two_node_2d()
    b = _blocks(m)
    Js = [np.eye(2), np.diag([2.0, 0.5])]
    pairs = [local_fim_pair(J, b, l) for l, J in enumerate(Js)]
    f, p = [q[0] for q in pairs], [q[1] for q in pairs]
    for l in range(2):
        assert np.allclose(approx_fim_tharmarasa(Js[l], f, p, b), approx_fim_tharmarasa_direct(l, f, p), atol=1e-12)


def test_tharmarasa_is_node_dependent():
    m = linear_gaussian_model([[1.0, 1.0], [0.0, 1.0]], [[0.25, 0.1], [0.1, 0.2]],
                              [[[1.0, 0.0]], [[1.0, 0.0]]], [[[1.0]], [[10.0]]], position_indices=(0,))
    res = compute_bounds(m, np.zeros(2), np.eye(2), 5, CLOSED, tharmarasa_nodes=(0, 1))
    assert not np.allclose(res.J["tharmarasa[0]"][-1], res.J["tharmarasa[1]"][-1])


def test_tharmarasa_symmetric_nodes_agree():
    m = linear_gaussian_model([[1.0]], [[0.5]], [[[1.0]], [[1.0]]], [[[2.0]], [[2.0]]])
    res = compute_bounds(m, np.zeros(1), np.eye(1), 5, CLOSED, tharmarasa_nodes=(0, 1))
    for a, b in zip(res.J["tharmarasa[0]"], res.J["tharmarasa[1]"]):
        assert np.allclose(a, b, atol=1e-14)


def test_sum_variant_oracles():
    m = _two_node_2d()
    b = _blocks(m)
    Js = [np.eye(2), np.diag([2.0, 0.5])]
    pairs = [local_fim_pair(J, b, l) for l, J in enumerate(Js)]
    f, p = [q[0] for q in pairs], [q[1] for q in pairs]
    assert np.allclose(approx_fim_sum(f, p), c22(f, p, b) - b.B22, atol=1e-12)
    # a single node without measurements contributes nothing
    assert np.allclose(approx_fim_sum([p[0]], [p[0]]), 0.0)


def test_position_bound_values():
    assert pcrlb_position_bound(np.eye(2), (0, 1)) == pytest.approx(math.sqrt(2))
    assert pcrlb_position_bound(np.diag([2.0, 2.0, 7.0]), (0, 1)) == pytest.approx(1.0)
    assert pcrlb_position_bound(np.diag([4.0, 4.0]), (0, 1)) == pytest.approx(1 / math.sqrt(2))


def test_position_bound_singular():
    with pytest.raises(PcrlbError, match="singular information matrix"):
        pcrlb_position_bound(np.zeros((2, 2)), (0, 1))


def test_prior_step_bound():
    res = compute_bounds(_two_node_2d(), np.zeros(2), np.diag([4.0, 1.0]), 2, CLOSED)
    assert res.position["central"][0] == pytest.approx(2.0)


def test_distributed_requires_matching_lists():
    b = _blocks(_two_node_2d())
    with pytest.raises(PcrlbError):
        distributed_fim_step(np.eye(2), [np.eye(2)], [], b)


def test_singular_q_rejected():
    class NoQ:
        process_cov = np.zeros((1, 1))

    with pytest.raises(PcrlbError, match="singular process covariance"):
        d_blocks_gaussian(NoQ(), np.zeros((1, 1)))


def test_expectation_config_validation():
    with pytest.raises(ValueError):
        ExpectationConfig(n_trajectories=0)
    with pytest.raises(ValueError):
        ExpectationConfig(mode="bogus")


def test_bounds_csv(tmp_path):
    res = compute_bounds(_two_node_2d(), np.zeros(2), np.eye(2), 3, CLOSED, tharmarasa_nodes=(1,))
    path = write_bounds_csv(res, tmp_path / "b.csv")
    rows = list(csv.DictReader(path.open()))
    assert {r["variant"] for r in rows} == {"central", "exact", "sum", "tharmarasa[1]"}
    assert len(rows) == 4 * 4
    first = next(r for r in rows if r["variant"] == "central" and r["k"] == "0")
    assert float(first["J_00"]) == 1.0 and float(first["position_bound"]) == pytest.approx(1.0)


def test_bot_bounds_positive_and_decreasing_information():
    m = BearingOnlyModel(np.array([[-4.0, -4.0], [4.0, -4.0], [0.0, 4.0]]), variance_scale=(math.pi / 180) ** 2)
    res = compute_bounds(m, np.array([3.0, 6.0, -0.3, -0.4]), np.diag([1.0, 1.0, 0.1, 0.1]), 5,
                         ExpectationConfig(n_trajectories=50, seed=1))
    b = np.array(res.position["central"])
    assert np.all(np.isfinite(b)) and np.all(b > 0)
    assert b[-1] < b[0]
    ex = np.array(res.position["exact"])
    assert np.allclose(b, ex, rtol=1e-6)
