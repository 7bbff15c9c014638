import numpy as np
import pytest

from authrl.analysis import (PcaProjection, confidence_interval, coverage, coverage_study,
                             hull_area, pca2, return_curves, split_users, top_eigenpairs,
                             write_csv)
from authrl.env import EnvConfig
from authrl.errors import DegenerateInputError, OutOfRangeError
from authrl.policy import FixedProb


def as_projection(points):
    pts = np.asarray(points, dtype=float)
    return PcaProjection(np.eye(2), np.ones(2), pts, np.zeros(2))


# -- PCA ------------------------------------------------------------------------------

def test_rank_one_data():
    rng = np.random.default_rng(0)
    direction = rng.standard_normal(6)
    X = rng.standard_normal(300)[:, None] * direction + 3.0
    proj = pca2(X)
    ev = proj.explained_variance
    assert ev[0] / (ev[0] + ev[1]) >= 0.999
    assert abs(abs(proj.components[0] @ direction) / np.linalg.norm(direction) - 1) < 1e-8


def test_isotropic_sample():
    X = np.random.default_rng(1).standard_normal((10_000, 4))
    ev = pca2(X).explained_variance
    assert ev[1] / ev[0] > 0.9


def test_components_orthonormal_and_sorted():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((500, 5)) @ rng.standard_normal((5, 5))
    proj = pca2(X)
    assert np.allclose(proj.components @ proj.components.T, np.eye(2), atol=1e-8)
    assert proj.explained_variance[0] >= proj.explained_variance[1] >= 0
    top = np.linalg.eigvalsh(np.cov(X, rowvar=False))[::-1][:2]
    assert np.allclose(proj.explained_variance, top, rtol=1e-8)


def test_projection_of_components():
    rng = np.random.default_rng(3)
    proj = pca2(rng.standard_normal((200, 4)) * [3.0, 2.0, 1.0, 0.5])
    for k in range(2):
        point = proj.mean + proj.components[k]
        assert np.allclose(proj.transform(point)[0], np.eye(2)[k], atol=1e-10)


def test_eigen_residual_on_random_psd():
    rng = np.random.default_rng(4)
    for _ in range(25):
        d = int(rng.integers(2, 9))
        A = rng.standard_normal((d, d))
        C = A @ A.T
        values, vectors = top_eigenpairs(C, 2)
        for lam, v in zip(values, vectors):
            assert np.linalg.norm(C @ v - lam * v) < 1e-8


def test_pca_degenerate():
    with pytest.raises(DegenerateInputError):
        pca2(np.ones((10, 3)))
    with pytest.raises(DegenerateInputError):
        pca2(np.zeros((2, 3)))


# -- coverage -------------------------------------------------------------------------

def test_unit_square_hull():
    assert hull_area([[0, 0], [1, 0], [1, 1], [0, 1]]) == pytest.approx(1.0)


def test_equal_points_zero_variance():
    stat = coverage(as_projection(np.ones((5, 2))))
    assert stat.generalized_variance == 0.0 and stat.hull_area == 0.0


def test_collinear_hull_zero():
    pts = np.stack([np.linspace(0, 1, 7), 2 * np.linspace(0, 1, 7)], axis=1)
    assert coverage(as_projection(pts)).hull_area == 0.0


def test_scaling_law():
    pts = np.random.default_rng(5).standard_normal((100, 2))
    base = coverage(as_projection(pts))
    for k in (1.5, 3.0):
        scaled = coverage(as_projection(k * pts))
        assert scaled.hull_area == pytest.approx(k ** 2 * base.hull_area, rel=1e-10)
        assert scaled.generalized_variance == pytest.approx(k ** 4 * base.generalized_variance,
                                                            rel=1e-10)


def test_coverage_needs_three_points():
    with pytest.raises(DegenerateInputError):
        coverage(as_projection([[0, 0], [1, 1]]))


def test_coverage_study_rows():
    rows = coverage_study(EnvConfig(), (0.5, 0.9), n_users=40)
    assert [r["policy"] for r in rows] == ["fixed:0.5", "fixed:0.9"]
    assert all(r["n_states"] == 40 * 5 for r in rows)


# -- return curves --------------------------------------------------------------------

def all_ones_env():
    H = 4
    overrides = {f"{t},{a}": 1.0 for t in range(H) for a in "AB"}
    return EnvConfig(horizon=H, reward_var_scale=0.0, reward_mean_overrides=overrides)


def test_length_zero_is_zero():
    out = return_curves(EnvConfig(), {"p": FixedProb(0.5)}, [0], 50)
    assert out == [{"policy": "p", "length": 0, "mean": 0.0, "stderr": 0.0}]


def test_all_ones_rewards_give_length():
    out = return_curves(all_ones_env(), {"a": FixedProb(1.0), "b": FixedProb(0.2)},
                        range(5), 30)
    for rec in out:
        assert rec["mean"] == rec["length"] and rec["stderr"] == 0.0


def test_lengths_out_of_range():
    with pytest.raises(OutOfRangeError):
        return_curves(EnvConfig(), {"p": FixedProb(0.5)}, [6], 10)


def test_return_curves_deterministic(tmp_path):
    args = (EnvConfig(), {"p": FixedProb(0.7)}, range(6), 100)
    a, b = return_curves(*args), return_curves(*args)
    assert a == b
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(a, pa, ["policy", "length", "mean", "stderr"])
    write_csv(b, pb, ["policy", "length", "mean", "stderr"])
    assert pa.read_bytes() == pb.read_bytes()
    assert pa.read_text().splitlines()[0] == "policy,length,mean,stderr"


# -- helpers --------------------------------------------------------------------------

def test_confidence_interval():
    mean, lo, hi = confidence_interval([1.0, 2.0, 3.0])
    # t(0.975, 2) = 4.302653; sd = 1; half width = 4.302653 / sqrt(3)
    assert mean == 2.0
    assert hi - mean == pytest.approx(4.302653 / np.sqrt(3), rel=1e-6)
    assert mean - lo == pytest.approx(hi - mean)


def test_split_users():
    tr, te = split_users(100, 3)
    assert len(tr) == 80 and len(te) == 20
    assert sorted(tr + te) == list(range(100))
    assert split_users(100, 3) == (tr, te) and split_users(100, 4) != (tr, te)
