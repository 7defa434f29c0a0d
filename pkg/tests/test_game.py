import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gnep_inverse.game import (
    CostMode,
    CostParameterization,
    EquilibriumSolution,
    GameInstance,
    eval_F,
    interaction_matrix,
    kkt_residuals,
    potential_gradient,
    potential_value,
)
from gnep_inverse.network import build_grid

from conftest import parallel_instance, shared


def F_loops(c_int, c_base, X):
    """Oracle: block i = C_i (2 x_i + sum_{j != i} x_j) + cbar_i, written out entrywise."""
    N, n = X.shape
    out = np.zeros((N, n))
    for i in range(N):
        for a in range(n):
            s = 2 * X[i, a] + sum(X[j, a] for j in range(N) if j != i)
            out[i, a] = c_int[i, a] * s + c_base[i, a]
    return out


def random_params(rng, mode, N, n):
    if mode == "shared":
        return shared(rng.uniform(1, 5, n), rng.uniform(5, 20, n), N)
    return CostParameterization.per_player(rng.uniform(1, 5, (N, n)), rng.uniform(5, 20, (N, n)))


def test_eval_F_examples():
    p = shared([1.0], [3.0], 1)
    assert eval_F(p, np.array([2.0]), 1).tolist() == [7.0]
    p = shared([1.0, 2.0], [4.0, 5.0], 3)
    assert np.array_equal(eval_F(p, np.zeros(6), 3), np.tile([4.0, 5.0], 3))
    p = CostParameterization(CostMode.SHARED, [[1.0], [1.0]], [[1e-3], [1e-3]])
    assert np.allclose(eval_F(p, np.array([1.0, 1.0]), 2), [3.001, 3.001])


def test_eval_F_dimension_mismatch():
    p = shared([1.0, 1.0], [1.0, 1.0], 2)
    with pytest.raises(ValueError):
        eval_F(p, np.zeros(5), 2)
    with pytest.raises(ValueError):
        eval_F(p, np.zeros(6), 2)


@pytest.mark.parametrize("mode", ["shared", "per-player"])
@pytest.mark.parametrize("N,n", [(1, 3), (2, 4), (5, 8)])
def test_eval_F_matches_loops(mode, N, n):
    rng = np.random.default_rng(N * 10 + n)
    p = random_params(rng, mode, N, n)
    X = rng.uniform(0, 2, (N, n))
    assert np.allclose(eval_F(p, X.ravel(), N).reshape(N, n), F_loops(p.c_int, p.c_base, X), rtol=1e-14)


def test_interaction_matrix_examples():
    assert interaction_matrix(shared([1.0], [1.0], 2), 2).tolist() == [[2, 1], [1, 2]]
    base = np.array([1.0])
    f = np.array([1.0, 500.1, 600.7])
    p = CostParameterization.per_player(np.outer(f, base), np.ones((3, 1)))
    M = interaction_matrix(p, 3)
    expected = np.array([[2, 1, 1], [500.1, 1000.2, 500.1], [600.7, 600.7, 1201.4]])
    assert np.allclose(M, expected)


@pytest.mark.parametrize("mode", ["shared", "per-player"])
def test_interaction_matrix_affine_identity(mode):
    rng = np.random.default_rng(3)
    N, n = 3, 5
    p = random_params(rng, mode, N, n)
    M = interaction_matrix(p, N)
    for _ in range(20):
        x = rng.normal(size=N * n)
        assert np.allclose(M @ x + p.c_base.ravel(), eval_F(p, x, N))


@given(arrays(float, 4, elements=st.floats(-10, 10)), arrays(float, 4, elements=st.floats(-10, 10)))
def test_F_is_affine(x, y):
    rng = np.random.default_rng(0)
    p = random_params(rng, "per-player", 2, 2)
    M = interaction_matrix(p, 2)
    assert np.allclose(eval_F(p, x, 2) - eval_F(p, y, 2), M @ (x - y), atol=1e-9)


def test_shared_matrix_symmetric_with_weyl_bound():
    rng = np.random.default_rng(11)
    for _ in range(100):
        N, n = rng.integers(1, 5), rng.integers(1, 6)
        p = random_params(rng, "shared", N, n)
        M = interaction_matrix(p, N)
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M)[0] >= p.c_int[0].min() - 1e-10


def test_potential_examples():
    p = shared([1.0, 2.0], [3.0, 4.0], 2)
    assert potential_value(p, np.zeros(4), 2) == 0.0
    x = np.array([0.3, 0.7])
    p1 = shared([1.0, 2.0], [3.0, 4.0], 1)
    assert potential_value(p1, x, 1) == pytest.approx(x @ (np.array([1.0, 2.0]) * x) + np.array([3.0, 4.0]) @ x)


def test_potential_rejects_per_player():
    p = CostParameterization.per_player([[1.0], [2.0]], [[1.0], [1.0]])
    with pytest.raises(ValueError):
        potential_value(p, np.zeros(2), 2)
    with pytest.raises(ValueError):
        potential_gradient(p, np.zeros(2), 2)


def test_potential_definition_by_pairs():
    """Direct double sum from the definition."""
    rng = np.random.default_rng(5)
    N, n = 3, 4
    p = random_params(rng, "shared", N, n)
    X = rng.uniform(0, 1, (N, n))
    C = np.diag(p.c_int[0])
    val = sum(X[i] @ C @ X[i] for i in range(N))
    val += 0.5 * sum(X[i] @ C @ X[j] for i in range(N) for j in range(N) if i != j)
    val += p.c_base[0] @ X.sum(axis=0)
    assert potential_value(p, X.ravel(), N) == pytest.approx(val, rel=1e-13)


def test_potential_gradient_central_differences():
    rng = np.random.default_rng(8)
    N, n, h = 3, 5, 1e-5
    p = random_params(rng, "shared", N, n)
    for _ in range(20):
        x = rng.uniform(0, 2, N * n)
        g = np.array([(potential_value(p, x + h * e, N) - potential_value(p, x - h * e, N)) / (2 * h)
                      for e in np.eye(N * n)])
        F = eval_F(p, x, N)
        assert np.max(np.abs(g - F) / np.abs(F)) <= 1e-6


def test_cost_parameterization_validation(tmp_path):
    with pytest.raises(ValueError):
        CostParameterization.per_player([[1.0, -1.0]], [[1.0, 1.0]])
    with pytest.raises(ValueError):
        CostParameterization(CostMode.SHARED, [[1.0], [2.0]], [[1.0], [1.0]])
    p = CostParameterization.per_player([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]])
    path = tmp_path / "c.json"
    p.save(path)
    q = CostParameterization.load(path)
    assert q.mode is CostMode.PER_PLAYER and np.array_equal(q.c_int, p.c_int)
    s = shared([1.0], [2.0], 3)
    assert s.to_dict()["c_int"] == [[1.0], [1.0], [1.0]]


def _hand_point(parallel_net):
    """Parallel arcs, N=1, C=I, cbar=(1,3): x=(1,0), v=(3,0), u=(0,0), ubar=0.

    Base costs must be positive, so the textbook cbar=(0,2) is shifted by one;
    a common shift moves only v. Arc 1: 2*1 + 1 + (v2 - v1) = 0 -> v1 - v2 = 3.
    Arc 2: 0 + 3 + (v2 - v1) - u2 = 0 -> u2 = 0.
    """
    inst = parallel_instance(parallel_net, 1, 2.0)
    p = shared([1.0, 1.0], [1.0, 3.0], 1)
    sol = EquilibriumSolution(x=np.array([[1.0, 0.0]]), v=np.array([[3.0, 0.0]]), u=np.array([[0.0, 0.0]]),
                              ubar=np.zeros(2))
    return inst, p, sol


def test_kkt_residuals_hand_point(parallel_net):
    inst, p, sol = _hand_point(parallel_net)
    rep = kkt_residuals(inst, p, sol)
    assert rep.max <= 1e-12


def test_kkt_residual_perturbation(parallel_net):
    inst, p, sol = _hand_point(parallel_net)
    delta = 0.125
    sol.x = np.array([[1.0 + delta, 0.0]])
    rep = kkt_residuals(inst, p, sol)
    assert rep.primal_equality_inf_norm == pytest.approx(delta)


def test_kkt_stationarity_defect(parallel_net):
    inst, p, sol = _hand_point(parallel_net)
    sol.v = np.array([[3.0 + 0.5, 0.0]])
    rep = kkt_residuals(inst, p, sol)
    assert rep.stationarity_inf_norm == pytest.approx(0.5)
    assert rep.primal_equality_inf_norm == 0.0


def test_kkt_negative_parts_tracked(parallel_net):
    inst, p, sol = _hand_point(parallel_net)
    sol.ubar = np.array([0.0, -0.25])
    assert kkt_residuals(inst, p, sol).primal_bound_violation == pytest.approx(0.25)


def test_game_instance_validation():
    net = build_grid(2)
    with pytest.raises(ValueError):
        GameInstance(net, 0, 1.0, (1, 4))
    with pytest.raises(ValueError):
        GameInstance(net, 1, np.ones(3), (1, 4))
    with pytest.raises(ValueError):
        GameInstance(net, 1, 0.0, (1, 4))
    inst = GameInstance(net, 2, 1.5, (1, 4))
    assert inst.capacity.shape == (8,) and inst.f.sum() == 0
