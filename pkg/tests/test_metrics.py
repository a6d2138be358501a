import itertools
import math

import numpy as np
import pytest

from smile import metrics
from smile.errors import ContractError, DimensionError


def brute_rmse(est, truth):
    p = truth.shape[-1]
    e, t = est.reshape(-1, p), truth.reshape(-1, p)
    total = 0.0
    for i in range(len(t)):
        for j in range(p):
            total += (e[i, j] - t[i, j]) ** 2
    return math.sqrt(total / len(t))


def brute_angle(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return math.degrees(math.acos(max(-1.0, min(1.0, dot / (nu * nv)))))


def brute_aad(est, truth):
    p = truth.shape[-1]
    e, t = est.reshape(-1, p), truth.reshape(-1, p)
    return sum(brute_angle(e[i], t[i]) for i in range(len(t))) / len(t)


def brute_alignment(est, truth):
    p = len(truth)
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(p)):
        cost = sum(brute_angle(est[perm[j]], truth[j]) for j in range(p))
        if cost < best - 1e-12:
            best, best_perm = cost, perm
    return np.array(best_perm), best


def test_sad_examples():
    e = np.array([1.0, 0.0])
    assert metrics.sad(3 * e, e) == pytest.approx(0.0, abs=1e-6)
    assert metrics.sad([1.0, 1.0], e) == pytest.approx(45.0, abs=1e-12)
    assert metrics.sad([0.0, 1.0], e) == pytest.approx(90.0, abs=1e-12)
    with pytest.raises(ContractError):
        metrics.sad([0.0, 0.0], e)


def test_alignment_recovers_shuffle(rng):
    truth = rng.random((5, 20))
    shuffle = rng.permutation(5)
    est = truth[shuffle]
    perm = metrics.align_permutation(est, truth)
    np.testing.assert_array_equal(est[perm], truth)
    np.testing.assert_array_equal(metrics.align_permutation(truth, truth), np.arange(5))


@pytest.mark.parametrize("p", [2, 3, 4, 5])
def test_alignment_matches_exhaustive_search(p):
    rng = np.random.default_rng(p)
    for _ in range(20):
        est, truth = rng.random((p, 6)), rng.random((p, 6))
        perm = metrics.align_permutation(est, truth)
        _, best = brute_alignment(est, truth)
        cost = sum(brute_angle(est[perm[j]], truth[j]) for j in range(p))
        assert cost == pytest.approx(best, abs=1e-10)


def test_rmse_examples(rng):
    t = rng.random((3, 3, 4))
    assert metrics.rmse(t, t) == 0.0
    assert metrics.rmse(t + 0.1, t) == pytest.approx(0.2, rel=1e-12)


def test_aad_examples():
    t = np.zeros((2, 2, 2))
    t[..., 0] = 1.0
    e = np.zeros((2, 2, 2))
    e[..., 1] = 1.0
    assert metrics.aad(t, t) == 0.0
    assert metrics.aad(e, t) == pytest.approx(90.0)


def test_aad_excludes_zero_pixels():
    t = np.ones((1, 2, 2))
    e = np.ones((1, 2, 2))
    e[0, 0] = 0.0
    value, excluded = metrics.aad(e, t, return_excluded=True)
    assert value == pytest.approx(0.0, abs=1e-5) and excluded == 1
    with pytest.raises(ContractError):
        metrics.aad(np.zeros_like(t), t)


def test_metrics_match_loop_oracles():
    rng = np.random.default_rng(99)
    for _ in range(10):
        est, truth = rng.random((3, 3, 2)), rng.random((3, 3, 2))
        assert abs(metrics.rmse(est, truth) - brute_rmse(est, truth)) <= 1e-10
        assert abs(metrics.aad(est, truth) - brute_aad(est, truth)) <= 1e-10
        ee, et = rng.random((4, 9)), rng.random((4, 9))
        mean, per = metrics.sad_mean(ee, et)
        oracle = [brute_angle(ee[i], et[i]) for i in range(4)]
        assert max(abs(a - b) for a, b in zip(per, oracle)) <= 1e-10
        assert abs(mean - sum(oracle) / 4) <= 1e-10


def test_snr_realized():
    clean = np.ones((4, 4, 4))
    assert metrics.snr_realized(clean, clean + 0.1) == pytest.approx(20.0)
    assert metrics.snr_realized(clean, clean + 1.0) == pytest.approx(0.0, abs=1e-12)
    assert metrics.snr_realized(clean, clean) == math.inf


def test_shape_mismatch_raises(rng):
    with pytest.raises(DimensionError):
        metrics.rmse(rng.random((2, 2, 3)), rng.random((2, 2, 2)))
    with pytest.raises(DimensionError):
        metrics.align_permutation(rng.random((3, 4)), rng.random((2, 4)))


def test_evaluate_aligns_abundance_with_endmembers(rng):
    te = rng.random((3, 10))
    ta = rng.dirichlet(np.ones(3), size=(4, 4))
    perm = np.array([2, 0, 1])
    rep = metrics.evaluate(ta[..., perm], te[perm], ta, te)
    assert rep.rmse == 0.0 and rep.aad == pytest.approx(0.0, abs=1e-6)
    assert rep.sad_mean == pytest.approx(0.0, abs=1e-6)
    d = rep.to_dict()
    assert set(d) >= {"rmse", "aad", "sad_mean", "sad_per_endmember", "permutation"}
