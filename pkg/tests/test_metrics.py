import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dprdm.metrics import MetricError, SampleSet, coverage, density, nnd_k, report

from conftest import coverage_oracle, density_oracle


def test_collinear_radii():
    pts = [[0.0], [1.0], [3.0]]
    assert nnd_k(pts, 0, 1) == 1.0
    assert nnd_k(pts, 2, 1) == 2.0
    assert nnd_k(pts, 0, 2) == 3.0


def test_fake_equals_real(rng):
    real = rng.standard_normal((60, 4))
    # each point lies in its own ball and in the K balls of which it is a K-NN
    assert density(real, real, 5) == pytest.approx(density_oracle(real, real, 5))
    assert density(real, real, 5) == pytest.approx(6 / 5)
    assert coverage(real, real, 5) == 1.0


def test_far_fakes_score_zero(rng):
    real = rng.standard_normal((30, 3))
    fake = real + 1e3
    assert density(real, fake, 3) == 0.0
    assert coverage(real, fake, 3) == 0.0


def test_density_exceeds_one():
    ang = np.linspace(0, 2 * np.pi, 9, endpoint=False)
    real = np.vstack([[0, 0], np.c_[np.cos(ang), np.sin(ang)]])
    fake = np.zeros((4, 2))
    # the origin sits inside every unit-circle ball (radius >= 1) and its own
    assert density(real, fake, 5) == pytest.approx(10 / 5)
    assert density(real, fake, 5) > 1


def test_k_too_large():
    with pytest.raises(MetricError):
        density(np.eye(3), np.eye(3), 3)
    with pytest.raises(MetricError):
        coverage(np.eye(3), np.eye(3), 0)


def test_dimension_mismatch():
    with pytest.raises(MetricError, match="dimension"):
        density(np.eye(3), np.eye(2), 1)


def test_empty_rejected():
    with pytest.raises(MetricError):
        SampleSet(np.empty((0, 2)))


def test_report_fields(rng):
    real, fake = rng.standard_normal((20, 2)), rng.standard_normal((15, 2))
    out = report(real, fake, 4, fid=12.5)
    assert out["density"] == density(real, fake, 4)
    assert out["coverage"] == coverage(real, fake, 4)
    assert out["fid"] == 12.5 and out["clip_score"] is None
    assert (out["n_real"], out["n_fake"], out["K"]) == (20, 15, 4)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), nr=st.integers(2, 60), nf=st.integers(1, 60),
       d=st.integers(1, 6), data=st.data())
def test_matches_oracle(seed, nr, nf, d, data):
    K = data.draw(st.integers(1, nr - 1))
    rng = np.random.default_rng(seed)
    real, fake = rng.standard_normal((nr, d)), rng.standard_normal((nf, d))
    assert density(real, fake, K) == pytest.approx(density_oracle(real, fake, K), abs=1e-12)
    assert coverage(real, fake, K) == pytest.approx(coverage_oracle(real, fake, K), abs=1e-12)


def test_permutation_invariance(rng):
    real, fake = rng.standard_normal((40, 3)), rng.standard_normal((30, 3))
    pr, pf = rng.permutation(40), rng.permutation(30)
    assert density(real, fake, 5) == density(real[pr], fake[pf], 5)
    assert coverage(real, fake, 5) == coverage(real[pr], fake[pf], 5)


def test_isometry_invariance(rng):
    real, fake = rng.standard_normal((40, 3)), rng.standard_normal((30, 3))
    rot, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    shift = rng.standard_normal(3)
    assert density(real, fake, 5) == density(real @ rot + shift, fake @ rot + shift, 5)
    assert coverage(real, fake, 5) == coverage(real @ rot + shift, fake @ rot + shift, 5)
