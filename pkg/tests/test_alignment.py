import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daftir import alignment as al
from daftir.alignment import Decision, EarlyStopState, should_stop


def gaussian_pair(seed, shift_sq, n=2000, m=2000, dim=8):
    rng = np.random.default_rng(seed)
    mu = np.zeros(dim)
    mu[0] = math.sqrt(shift_sq)
    return rng.normal(size=(n, dim)), rng.normal(size=(m, dim)) + mu


def naive_kl(x, xp, k=1):
    n, dim = x.shape
    m = xp.shape[0]
    total = 0.0
    for i in range(n):
        r = np.sort(np.delete(np.linalg.norm(x - x[i], axis=1), i))[k - 1]
        s = np.sort(np.linalg.norm(xp - x[i], axis=1))[k - 1]
        total += math.log(s / r)
    return dim / n * total + math.log(m / (n - 1))


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 3])
def test_estimator_matches_naive_formula(k):
    x, xp = gaussian_pair(0, 1.0, n=60, m=45, dim=3)
    assert abs(al.kl_knn_estimate(x, xp, k) - naive_kl(x, xp, k)) <= 1e-10


def test_same_distribution_near_zero():
    values = [al.kl_knn_estimate(*gaussian_pair(s, 0.0)) for s in range(10)]
    assert abs(np.mean(values)) <= 0.15


def test_unit_shift_converges_to_half_from_below():
    # 1-NN estimates in 8 dimensions approach the analytic 0.5 slowly; at
    # n = 2000 the seed mean is ~0.36 (see the acceptance suite, criterion 3)
    means = [np.mean([al.kl_knn_estimate(*gaussian_pair(s, 1.0, n=n, m=n)) for s in range(4)])
             for n in (500, 2000, 8000)]
    assert means[0] < means[1] < means[2] < 0.5
    assert means[0] > 0.25


def test_monotone_in_shift():
    means = [np.mean([al.kl_knn_estimate(*gaussian_pair(s, d * d)) for s in range(10)]) for d in (0, 1, 3)]
    assert means[0] < means[1] < means[2]


def test_asymmetric_on_shifted_pair():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(400, 4))
    xp = 2.0 * rng.normal(size=(400, 4)) + 1.0
    assert abs(al.kl_knn_estimate(x, xp) - al.kl_knn_estimate(xp, x)) > 0.1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    x, xp = rng.normal(size=(80, 5)), rng.normal(size=(70, 5)) + 0.5
    rot, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    assert abs(al.kl_knn_estimate(x, xp) - al.kl_knn_estimate(x @ rot, xp @ rot)) <= 1e-9


def test_duplicates_clamped_with_warning():
    x = np.vstack([np.zeros((3, 2)), np.ones((3, 2))])
    with pytest.warns(al.DegenerateSampleWarning):
        details = al.kl_knn_details(x, x.copy())
    assert details.degenerate and math.isfinite(details.value)


def test_no_warning_on_clean_sample():
    x, xp = gaussian_pair(1, 0.0, n=50, m=50)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert not al.kl_knn_details(x, xp).degenerate


@pytest.mark.parametrize("n,m,k", [(1, 5, 1), (5, 5, 5), (5, 2, 3), (5, 5, 0)])
def test_precondition_violations(n, m, k):
    with pytest.raises(ValueError):
        al.kl_knn_estimate(np.zeros((n, 2)) + np.arange(n)[:, None], np.zeros((m, 2)), k)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        al.kl_knn_estimate(np.zeros((5, 2)), np.zeros((5, 3)))


# ---------------------------------------------------------------------------
# stopping rule
# ---------------------------------------------------------------------------


def test_threshold_stop_at_published_delta():
    assert should_stop(EarlyStopState(threshold=250.0), 249.0) is Decision.STOP_THRESHOLD


def test_patience_stop_on_fourth_non_improving_value():
    state = EarlyStopState(threshold=250.0, patience=3)
    decisions = [should_stop(state, v) for v in (300, 310, 320, 330)]
    assert decisions == [Decision.CONTINUE] * 3 + [Decision.STOP_PATIENCE]


def test_strictly_decreasing_above_threshold_continues():
    state = EarlyStopState(threshold=250.0)
    assert all(should_stop(state, v) is Decision.CONTINUE for v in range(1000, 300, -50))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=30), st.integers(1, 5))
def test_never_more_than_patience_continues_without_improvement(values, patience):
    state = EarlyStopState(threshold=-1.0, patience=patience)
    best = math.inf
    since = 0
    for v in values:
        decision = should_stop(state, v)
        since = 0 if v < best else since + 1
        best = min(best, v)
        if decision is Decision.CONTINUE:
            assert since < patience
        else:
            assert decision is Decision.STOP_PATIENCE and since == patience
            break


def test_history_and_csv(tmp_path):
    state = EarlyStopState(threshold=1.0)
    should_stop(state, 3.0)
    should_stop(state, 0.5)
    path = tmp_path / "alignment.csv"
    al.write_alignment_csv([(0, 3.0, "continue"), (1, 0.5, "stop_threshold")], path)
    assert state.history == [(1, 3.0, "continue"), (2, 0.5, "stop_threshold")]
    assert path.read_text().splitlines() == ["epoch,kl_estimate,decision", "0,3.0,continue",
                                             "1,0.5,stop_threshold"]


# ---------------------------------------------------------------------------
# calibration and retrieval-based score
# ---------------------------------------------------------------------------


def test_knee_threshold_on_reference_curve():
    curve = [39.81, 42.92, 30.23, 20.96, 23.17, 24.10, 25.09]
    assert al.knee_threshold(curve) == pytest.approx(20.96 * 1.1)


def test_knee_threshold_needs_three_values():
    with pytest.raises(ValueError):
        al.knee_threshold([1.0, 2.0])


def test_ann_validation_score_oracle_encoders():
    docs = {f"d{i}": i for i in range(6)}
    queries = {f"q{i}": i for i in range(4)}
    qrels = {f"q{i}": {f"d{i}": 1} for i in range(4)}
    eye = lambda items: np.eye(6)[list(items)]
    assert al.ann_validation_score(eye, eye, queries, docs, qrels) == 1.0
    shifted = lambda items: np.eye(6)[[(i + 1) % 6 for i in items]]
    assert al.ann_validation_score(shifted, eye, queries, docs, qrels) < 1.0


def test_ann_validation_score_rejects_empty():
    with pytest.raises(ValueError):
        al.ann_validation_score(None, None, {}, {"d": 0}, {"q": {"d": 1}})
