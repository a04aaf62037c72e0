import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daftir import diagnostics as dg

from conftest import unit_rows


def test_constant_set_is_complete_collapse(rng):
    v = unit_rows(rng, 1, 16)[0]
    sample = np.tile(v, (100, 1)) + 1e-9 * rng.normal(size=(100, 16))
    report = dg.collapse_report(sample)
    assert report.complete_collapse and report.dimensional_collapse
    assert report.mean_pairwise_cosine == pytest.approx(1.0, abs=1e-9)
    assert 1.0 <= report.effective_rank <= 16


def test_isotropic_sample_has_no_flags(rng):
    report = dg.collapse_report(unit_rows(rng, 1000, 32))
    assert report.effective_rank > 0.8 * 32
    assert not report.complete_collapse and not report.dimensional_collapse
    assert abs(report.mean_pairwise_cosine) < 0.01


def test_rank_two_sample(rng):
    basis, _ = np.linalg.qr(rng.normal(size=(32, 2)))
    sample = rng.normal(size=(500, 2)) @ basis.T
    report = dg.collapse_report(sample)
    assert abs(report.effective_rank - 2.0) <= 0.2
    assert report.dimensional_collapse and not report.complete_collapse


def test_report_fields_and_thresholds(rng):
    sample = rng.normal(size=(50, 4))
    report = dg.collapse_report(sample)
    assert len(report.per_dim_variance) == 4
    assert report.total_variance == pytest.approx(sum(report.per_dim_variance))
    assert dg.collapse_report(sample, variance_floor=1e9).complete_collapse
    assert set(report.to_dict()) >= {"effective_rank", "complete_collapse", "dimensional_collapse"}


def test_report_needs_two_vectors():
    with pytest.raises(ValueError):
        dg.collapse_report(np.ones((1, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_effective_rank_range_and_implication(n, dim, seed):
    r = np.random.default_rng(seed)
    report = dg.collapse_report(r.normal(size=(n, dim)) * r.random(dim))
    assert 1.0 <= report.effective_rank <= dim
    assert report.dimensional_collapse or not report.complete_collapse


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


def test_planar_points_reconstruct_exactly(rng):
    basis, _ = np.linalg.qr(rng.normal(size=(3, 2)))
    points = rng.normal(size=(40, 2)) @ basis.T + np.array([1.0, -2.0, 0.5])
    coords, degenerate = dg.pca_project(points, 2)
    assert not degenerate.any()
    centered = points - points.mean(axis=0)
    # the projection is an isometry of the plane: Gram matrices agree
    assert np.allclose(coords @ coords.T, centered @ centered.T, atol=1e-10)


def test_pca_beats_random_projections(rng):
    points = rng.normal(size=(80, 6)) * np.array([5.0, 3.0, 1.0, 0.5, 0.2, 0.1])
    centered = points - points.mean(axis=0)
    coords, _ = dg.pca_project(points, 2)

    def distance_error(proj):
        d_full = np.linalg.norm(centered[:, None] - centered[None], axis=-1) ** 2
        d_proj = np.linalg.norm(proj[:, None] - proj[None], axis=-1) ** 2
        return float(np.sum(d_full - d_proj))

    best = distance_error(coords)
    for _ in range(200):
        q, _ = np.linalg.qr(rng.normal(size=(6, 2)))
        assert best <= distance_error(centered @ q) + 1e-9


def test_duplicate_points_degenerate(rng):
    coords, degenerate = dg.pca_project(np.tile(rng.normal(size=4), (10, 1)), 2)
    assert degenerate.all() and not coords.any()


def test_pca_sign_convention_and_determinism(rng):
    points = rng.normal(size=(30, 5))
    a, _ = dg.pca_project(points)
    b, _ = dg.pca_project(points.copy())
    flipped, _ = dg.pca_project(-points)
    assert np.array_equal(a, b)
    assert np.allclose(np.abs(flipped), np.abs(a), atol=1e-12)


def test_pca_needs_enough_points():
    with pytest.raises(ValueError):
        dg.pca_project(np.ones((1, 3)), 2)


# ---------------------------------------------------------------------------
# cluster separation
# ---------------------------------------------------------------------------


def test_identical_sets_zero(rng):
    x = rng.normal(size=(30, 4))
    assert dg.cluster_separation(x, x) == 0.0


def test_blobs_ten_sigma_apart(rng):
    shift = np.zeros(8)
    shift[0] = 10.0
    values = [dg.cluster_separation(rng.normal(size=(400, 8)), rng.normal(size=(400, 8)) + shift)
              for _ in range(10)]
    assert abs(np.mean(values) - 10.0) <= 2.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_separation_symmetric_and_rotation_invariant(seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(20, 5)), r.normal(size=(15, 5)) + 1.0
    rot, _ = np.linalg.qr(r.normal(size=(5, 5)))
    assert dg.cluster_separation(a, b) == pytest.approx(dg.cluster_separation(b, a), rel=1e-12)
    assert dg.cluster_separation(a @ rot, b @ rot) == pytest.approx(dg.cluster_separation(a, b), rel=1e-9)


def test_separation_rejects_empty():
    with pytest.raises(ValueError):
        dg.cluster_separation(np.zeros((0, 3)), np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# CSV dumps
# ---------------------------------------------------------------------------


def test_pca_csv_format(tmp_path, rng):
    path = tmp_path / "pca.csv"
    dg.write_pca_csv(rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["label", "x", "y"]
    assert [r[0] for r in rows[1:]] == ["query"] * 3 + ["document"] * 2
    assert all(len(r) == 3 and float(r[1]) == float(r[1]) for r in rows[1:])


def test_loss_csv_format(tmp_path):
    path = tmp_path / "loss.csv"
    dg.write_loss_csv([{"step": 1, "loss": 4.5}, {"step": 2, "loss": 4.25}], path)
    assert path.read_text().splitlines() == ["step,loss", "1,4.5", "2,4.25"]
