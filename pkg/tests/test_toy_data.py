import csv

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from gradfield.diagnostics import fd_gradient
from gradfield.toy_data import (
    GmmSpec,
    benchmark_gmm,
    corrupt,
    make_batch,
    responsibilities,
    sample_gmm,
    smoothed_logpdf,
    smoothed_score,
    write_samples_csv,
)


def std_normal(d):
    return GmmSpec([1.0], np.zeros((1, d)), np.ones((1, d)))


def test_spec_validation():
    with pytest.raises(ValueError, match="sum to one"):
        GmmSpec([0.5, 0.4], np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError, match="positive"):
        GmmSpec([1.0], np.zeros((1, 2)), [[1.0, 0.0]])
    with pytest.raises(ValueError, match="inconsistent"):
        GmmSpec([1.0], np.zeros((1, 2)), np.ones((1, 3)))


def test_isotropic_variance_shorthand():
    spec = GmmSpec([0.5, 0.5], [[0.0, 0.0], [1.0, 1.0]], [2.0, 3.0])
    np.testing.assert_array_equal(spec.variances, [[2.0, 2.0], [3.0, 3.0]])


def test_sample_single_gaussian_mean():
    x = sample_gmm(std_normal(3), 100_000, 0)
    assert np.all(np.abs(x.mean(axis=0)) < 0.02)


def test_sample_degenerate_weights():
    spec = GmmSpec([1.0, 0.0], [[5.0, 5.0], [-5.0, -5.0]], np.full((2, 2), 0.01))
    x = sample_gmm(spec, 1000, 1)
    assert np.all(x > 4)


def test_sample_symmetric_mixture_mean():
    spec = benchmark_gmm()
    x = sample_gmm(spec, 100_000, 2)
    assert np.all(np.abs(x.mean(axis=0)) < 0.02 * 2.0 + 0.02)


def test_sample_deterministic_and_validates():
    np.testing.assert_array_equal(sample_gmm(benchmark_gmm(), 10, 5), sample_gmm(benchmark_gmm(), 10, 5))
    with pytest.raises(ValueError):
        sample_gmm(benchmark_gmm(), 0, 0)


def test_corrupt_examples():
    x = np.random.default_rng(0).standard_normal((1000, 3))
    assert np.max(np.abs(corrupt(x, 1e-12, 1) - x)) < 1e-10
    big = np.zeros((100_000, 2))
    y = corrupt(big, 0.5, 3)
    assert np.sum(y**2) / len(y) == pytest.approx(2 * 0.25, rel=0.05)
    np.testing.assert_array_equal(corrupt(x, 0.3, 7), corrupt(x, 0.3, 7))
    with pytest.raises(ValueError):
        corrupt(x, 0.0, 1)


def test_batch_consistency():
    b = make_batch(benchmark_gmm(), 50, 0.5, 4)
    assert b.x_clean.shape == b.y_noisy.shape == (50, 2) and len(b) == 50
    again = make_batch(benchmark_gmm(), 50, 0.5, 4)
    np.testing.assert_array_equal(b.y_noisy, again.y_noisy)


def test_logpdf_examples():
    assert smoothed_logpdf(std_normal(2), 0.0, np.zeros(2)) == pytest.approx(-np.log(2 * np.pi), abs=1e-14)
    assert smoothed_logpdf(std_normal(1), 1.0, np.zeros(1)) == pytest.approx(-0.5 * np.log(4 * np.pi), abs=1e-14)
    assert round(float(smoothed_logpdf(std_normal(2), 0.0, np.zeros(2))), 4) == -1.8379
    assert round(float(smoothed_logpdf(std_normal(1), 1.0, np.zeros(1))), 4) == -1.2655


def test_logpdf_matches_convolution_quadrature():
    spec = GmmSpec([0.3, 0.7], [[-1.5], [2.0]], [[0.5], [1.2]])
    sigma = 0.6

    def density(y):
        prior = lambda x: sum(w * norm.pdf(x, m[0], np.sqrt(v[0])) for w, m, v in zip(spec.weights, spec.means, spec.variances))  # noqa: E731
        val, _ = quad(lambda x: prior(x) * norm.pdf(y - x, 0.0, sigma), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)
        return val

    for y in np.linspace(-4, 4, 10):
        assert smoothed_logpdf(spec, sigma, np.array([y])) == pytest.approx(np.log(density(y)), abs=1e-6)


def test_logpdf_far_tail_is_finite():
    val = smoothed_logpdf(benchmark_gmm(), 0.1, np.array([1e3, -1e3]))
    assert np.isfinite(val) and val < -1e5


def test_score_single_gaussian():
    ys = np.random.default_rng(1).standard_normal((50, 3))
    np.testing.assert_allclose(smoothed_score(std_normal(3), 0.5, ys), -ys / 1.25, rtol=1e-12, atol=1e-15)


def test_score_zero_at_symmetry_point():
    np.testing.assert_allclose(smoothed_score(benchmark_gmm(), 0.5, np.zeros(2)), 0.0, atol=1e-15)


def test_score_matches_fd_of_logpdf():
    spec = GmmSpec([0.2, 0.5, 0.3], [[1.0, -1.0], [0.0, 2.0], [-2.0, 0.0]], [[0.5, 1.0], [1.0, 1.0], [2.0, 0.3]])
    for y in 2 * np.random.default_rng(2).standard_normal((50, 2)):
        fd = fd_gradient(lambda z: smoothed_logpdf(spec, 0.4, z), y)
        g = smoothed_score(spec, 0.4, y)
        assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-3) < 1e-6


def test_responsibilities_on_simplex():
    r = responsibilities(benchmark_gmm(), 0.5, np.random.default_rng(0).standard_normal((20, 2)) * 3)
    np.testing.assert_allclose(r.sum(axis=1), 1.0, rtol=1e-14)
    assert np.all(r >= 0)


def test_smoothing_composes():
    spec = benchmark_gmm(3)
    ys = 2 * np.random.default_rng(3).standard_normal((20, 3))
    a = smoothed_logpdf(spec.smoothed(0.3), 0.4, ys)
    b = smoothed_logpdf(spec, 0.5, ys)
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_spec_document_round_trip():
    spec = GmmSpec([0.25, 0.75], [[0.1, 0.2], [0.3, 0.4]], [[1.0, 2.0], [3.0, 4.0]])
    back = GmmSpec.from_document(spec.to_document())
    for name in ("weights", "means", "variances"):
        np.testing.assert_array_equal(getattr(back, name), getattr(spec, name))


def test_write_samples_csv(tmp_path):
    b = make_batch(benchmark_gmm(), 5, 0.5, 0)
    write_samples_csv(tmp_path / "s.csv", b)
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["x1", "x2", "y1", "y2"]
    np.testing.assert_array_equal(np.array(rows[1:], dtype=float), np.hstack([b.x_clean, b.y_noisy]))
