import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gnep_inverse.analysis import (
    all_c_block_matrix,
    flow_error,
    normalized_flow_error,
    per_arc_symmetric_blocks,
    spectral_check,
    summarize_trials,
    write_summary_csv,
)
from gnep_inverse.game import CostParameterization, interaction_matrix

from conftest import shared

SKEWED_FACTORS = np.array([1.0, 500.1, 600.7, 700.8])


def test_flow_error_examples():
    a = np.zeros((2, 1, 1))
    assert flow_error(a, a) == 0.0
    b = a.copy()
    b[0, 0, 0] = 3.0
    assert flow_error(a, b) == 3.0
    b = np.array([1.0, 2.0]).reshape(2, 1, 1)
    assert flow_error(a, b) == pytest.approx(np.sqrt(5))
    assert normalized_flow_error(a, b) == pytest.approx(np.sqrt(5) / 2)
    z = np.zeros((240, 3, 48))
    assert normalized_flow_error(z, z) == 0.0


def test_normalized_divisor_is_full_tensor_size():
    a = np.zeros((240, 10, 48))
    b = a.copy()
    b[0, 0, 0] = 1.0
    assert normalized_flow_error(a, b) == pytest.approx(1.0 / (240 * 10 * 48))


def test_flow_error_shape_mismatch():
    with pytest.raises(ValueError):
        flow_error(np.zeros((1, 2, 3)), np.zeros((1, 3, 2)))


tensors = arrays(float, (3, 2, 4), elements=st.floats(0, 10))


@given(tensors, tensors, tensors)
def test_flow_error_metric_properties(a, b, c):
    assert flow_error(a, b) == flow_error(b, a)
    assert flow_error(a, c) <= flow_error(a, b) + flow_error(b, c) + 1e-9


def test_spectral_shared_small():
    rep = spectral_check(shared([1.0], [1.0], 2), 2)
    assert rep.min_eig_symmetric_part == pytest.approx(1.0)
    assert rep.is_positive_definite
    assert rep.modulus_lower_bound == 1.0


def test_spectral_weyl_bound_shared():
    rng = np.random.default_rng(0)
    for _ in range(100):
        N, n = int(rng.integers(1, 8)), int(rng.integers(1, 10))
        p = shared(rng.uniform(1, 5, n), rng.uniform(5, 20, n), N)
        rep = spectral_check(p, N)
        assert rep.min_eig_symmetric_part >= p.c_int[0].min() - 1e-10
        assert rep.modulus_lower_bound == p.c_int[0].min()


def skewed_params(rng, n=4):
    base = rng.uniform(0, 1000, n) + 1e-3
    return CostParameterization.per_player(np.outer(SKEWED_FACTORS, base), np.ones((4, n)))


def test_skewed_factor_structure_is_indefinite():
    rng = np.random.default_rng(1)
    for _ in range(10):
        p = skewed_params(rng)
        rep = spectral_check(p, 4)
        assert rep.min_eig_symmetric_part < 0 and not rep.is_positive_definite
        assert rep.modulus_lower_bound is None
        # negative 2x2 principal minor on any arc: (2 c)(1000.2 c) - (250.55 c)^2 < 0
        c = p.c_int[0, 0]
        assert (2 * c) * (1000.2 * c) - (250.55 * c) ** 2 < 0


def test_block_decomposition_matches_dense():
    rng = np.random.default_rng(2)
    for mode in ("shared", "per-player"):
        for N, n in [(2, 3), (4, 5), (6, 2)]:
            if mode == "shared":
                p = shared(rng.uniform(1, 5, n), rng.uniform(5, 20, n), N)
            else:
                p = CostParameterization.per_player(rng.uniform(1, 5, (N, n)), rng.uniform(5, 20, (N, n)))
            M = interaction_matrix(p, N)
            S = 0.5 * (M + M.T)
            dense = np.sort(np.linalg.eigvalsh(S))
            blocks = np.sort(np.linalg.eigvalsh(per_arc_symmetric_blocks(p, N)).ravel())
            assert np.allclose(dense, blocks, atol=1e-10)
            # each block is S restricted to one arc's coordinates
            B = per_arc_symmetric_blocks(p, N)
            for a in range(n):
                idx = a + n * np.arange(N)
                assert np.allclose(B[a], S[np.ix_(idx, idx)])
            assert spectral_check(p, N).min_eig_symmetric_part == pytest.approx(
                spectral_check(p, N, dense=True).min_eig_symmetric_part, abs=1e-10)


def test_b_block_spectrum():
    rng = np.random.default_rng(3)
    for N, n in [(2, 3), (3, 4), (5, 2)]:
        c = rng.uniform(1, 5, n)
        w = np.sort(np.linalg.eigvalsh(all_c_block_matrix(c, N)))
        expected = np.sort(np.concatenate([np.zeros(n * (N - 1)), N * c]))
        assert np.allclose(w, expected, atol=1e-9)


def test_indefinite_fraction_grows_with_players():
    """Per-player U[1,5] draws on 76 arcs: indefinite draws are at least as common at N=15 as at N=2."""
    rng = np.random.default_rng(5)

    def fraction(N):
        hits = 0
        for _ in range(10):
            p = CostParameterization.per_player(rng.uniform(1, 5, (N, 76)), np.ones((N, 76)))
            hits += not spectral_check(p, N).is_positive_definite
        return hits / 10

    assert fraction(15) >= fraction(2)


def test_summarize_examples():
    s = summarize_trials([1, 2, 3, 4, 5])
    assert (s.q1, s.median, s.q3) == (2.0, 3.0, 4.0)
    assert (s.whisker_low, s.whisker_high) == (-1.0, 7.0)
    assert s.outliers == ()
    s = summarize_trials([2.5] * 4)
    assert s.q1 == s.median == s.q3 == s.whisker_low == s.whisker_high == 2.5 and s.outliers == ()
    s = summarize_trials([1, 1, 1, 1, 100])
    assert s.outliers == (100.0,)
    with pytest.raises(ValueError):
        summarize_trials([])


def test_summarize_matches_hand_quartiles():
    """Linear interpolation at positions 0.25 (n-1), 0.5 (n-1), 0.75 (n-1)."""
    vals = [7.0, 1.0, 4.0, 10.0]
    srt = sorted(vals)

    def q(p):
        h = p * (len(srt) - 1)
        lo = int(np.floor(h))
        return srt[lo] + (h - lo) * (srt[min(lo + 1, len(srt) - 1)] - srt[lo])

    s = summarize_trials(vals)
    assert (s.q1, s.median, s.q3) == pytest.approx((q(0.25), q(0.5), q(0.75)))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.randoms())
def test_summarize_permutation_invariant(vals, rnd):
    shuffled = list(vals)
    rnd.shuffle(shuffled)
    a, b = summarize_trials(vals), summarize_trials(shuffled)
    assert a.to_dict() == b.to_dict()


def test_write_summary_csv(tmp_path):
    path = tmp_path / "s.csv"
    write_summary_csv(path, [("flow_error", "4/10/5.0", summarize_trials([1, 1, 1, 1, 100]))])
    lines = path.read_text().splitlines()
    assert lines[0] == "metric,group,q1,median,q3,whisker_low,whisker_high,outliers"
    assert lines[1].startswith("flow_error,4/10/5.0,1.0,1.0,1.0,1.0,1.0,100.0")
