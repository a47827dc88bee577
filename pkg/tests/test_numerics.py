import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otafl.errors import InvalidInput, NotPsd
from otafl.numerics import (
    RngStream,
    eig_hermitian,
    hermitian_part,
    psd_project,
    psd_sqrt,
    sample_complex_gaussian,
)


class TestRngStream:
    def test_same_seed_label_reproduces(self):
        a = RngStream(7, "x").standard_normal(100)
        b = RngStream(7, "x").standard_normal(100)
        assert np.array_equal(a, b)

    def test_distinct_labels_differ(self):
        a = RngStream(7, "x").standard_normal(100)
        b = RngStream(7, "y").standard_normal(100)
        assert not np.array_equal(a, b)

    def test_distinct_seeds_differ(self):
        a = RngStream(1, "x").standard_normal(100)
        b = RngStream(2, "x").standard_normal(100)
        assert not np.array_equal(a, b)

    def test_substream_is_hierarchical(self):
        direct = RngStream(3, "a/b").standard_normal(10)
        derived = RngStream(3, "a").substream("b").standard_normal(10)
        assert np.array_equal(direct, derived)

    def test_substream_independent_of_parent_consumption(self):
        parent = RngStream(3, "a")
        parent.standard_normal(1000)
        assert np.array_equal(
            parent.substream("b").standard_normal(5),
            RngStream(3, "a").substream("b").standard_normal(5),
        )


class TestHermitian:
    def test_hermitian_part_rejects_nonsquare(self):
        with pytest.raises(InvalidInput):
            hermitian_part(np.ones((2, 3)))

    def test_eig_sorted_descending_and_reconstructs(self):
        rng = RngStream(0, "eig")
        m = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        m = hermitian_part(m)
        vals, vecs = eig_hermitian(m)
        assert np.all(np.diff(vals) <= 1e-12)
        assert np.allclose((vecs * vals) @ vecs.conj().T, m)

    def test_psd_sqrt_squares_back(self):
        m = np.array([[4.0, -4.0], [-4.0, 4.0]])
        s = psd_sqrt(m)
        assert np.allclose(s @ s, m, atol=1e-12)
        assert np.allclose(s, s.conj().T)
        # rank-1 with eigenvalues {0, 8}: the root is m / sqrt(8)
        assert np.allclose(s, m / np.sqrt(8.0))

    def test_psd_sqrt_rejects_indefinite(self):
        with pytest.raises(NotPsd):
            psd_sqrt(np.diag([1.0, -1.0]))

    def test_psd_sqrt_tolerates_tiny_negative(self):
        m = np.diag([1.0, -1e-14])
        s = psd_sqrt(m)
        assert s[1, 1] == 0.0

    def test_psd_project_clamps(self):
        m = np.diag([2.0, -3.0])
        p = psd_project(m)
        assert np.allclose(p, np.diag([2.0, 0.0]))

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInput):
            psd_sqrt(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    @given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=1000))
    @settings(max_examples=40, deadline=None)
    def test_gram_matrices_pass(self, n, seed):
        rng = RngStream(seed, "gram")
        x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        m = x @ x.conj().T
        s = psd_sqrt(m)
        assert np.allclose(s @ s, m, atol=1e-8 * max(np.linalg.norm(m), 1.0))


class TestComplexGaussian:
    def test_moments(self):
        z = sample_complex_gaussian(RngStream(0, "cg"), 200_000, variance_per_element=3.0)
        var = float(np.mean(np.abs(z) ** 2))
        assert abs(var - 3.0) < 0.05
        # circular symmetry: pseudo-variance E[z^2] vanishes
        assert abs(np.mean(z**2)) < 0.05

    def test_shape_override(self):
        z = sample_complex_gaussian(RngStream(0, "cg"), 0, shape=(3, 5))
        assert z.shape == (3, 5)

    def test_negative_variance_rejected(self):
        with pytest.raises(InvalidInput):
            sample_complex_gaussian(RngStream(0, "cg"), 4, variance_per_element=-1.0)
