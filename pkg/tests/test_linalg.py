from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covkl.linalg import (
    EigenDecompositionError,
    NotSPDError,
    OrthonormalBasis,
    Spectrum,
    SymmetricMatrix,
    eigendecompose,
    frobenius_distance,
    logdet,
    read_basis_csv,
    read_matrix_csv,
    rie_build,
    rie_inverse,
    trace_product,
    trace_quad,
    write_basis_csv,
    write_matrix_csv,
)
from covkl.optimize import oracle_frobenius

from conftest import random_orthogonal, random_spd

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def cofactor_det(a: np.ndarray) -> float:
    """Laplace expansion along the first row; independent of LAPACK."""
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
        total += (-1) ** j * a[0, j] * cofactor_det(minor)
    return total


def explicit_trace(a: np.ndarray, b: np.ndarray) -> float:
    n = a.shape[0]
    return sum(a[i, k] * b[k, i] for i, k in itertools.product(range(n), range(n)))


class TestSymmetricMatrix:
    def test_mirrors_upper_triangle(self):
        a = np.array([[1.0, 2.0], [2.0 + 1e-14, 3.0]])
        s = SymmetricMatrix(a)
        assert np.array_equal(s.entries, s.entries.T)
        assert s.entries[1, 0] == 2.0

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="not symmetric"):
            SymmetricMatrix([[1.0, 2.0], [0.0, 1.0]])

    def test_rejects_non_square_and_nan(self):
        with pytest.raises(ValueError):
            SymmetricMatrix(np.ones((2, 3)))
        with pytest.raises(ValueError):
            SymmetricMatrix([[np.nan, 0.0], [0.0, 1.0]])

    def test_read_only(self):
        s = SymmetricMatrix(np.eye(3))
        with pytest.raises(ValueError):
            s.entries[0, 0] = 5.0


class TestValueTypes:
    def test_spectrum_positive_and_trace(self):
        with pytest.raises(NotSPDError):
            Spectrum(np.array([1.0, 0.0]))
        with pytest.raises(ValueError, match="sums to"):
            Spectrum(np.array([1.0, 2.0]), trace_target=2.0)
        assert Spectrum(np.array([0.5, 1.5]), trace_target=2.0).dim == 2

    def test_basis_orthonormal(self, rng):
        with pytest.raises(ValueError, match="orthonormal"):
            OrthonormalBasis(np.array([[1.0, 0.1], [0.0, 1.0]]))
        q = random_orthogonal(4, rng)
        q[:, 0] *= -1 if np.linalg.det(q) > 0 else 1
        assert np.linalg.det(q) < 0
        assert OrthonormalBasis(q).dim == 4


class TestEigendecompose:
    def test_identity(self):
        L, V = eigendecompose(np.eye(2))
        assert np.allclose(L.values, [1.0, 1.0])
        assert np.allclose(V.columns @ V.columns.T, np.eye(2), atol=1e-12)

    def test_diagonal(self):
        L, V = eigendecompose(np.diag([3.0, 1.0]))
        assert np.allclose(L.values, [3.0, 1.0])
        assert np.allclose(np.abs(V.columns), np.eye(2))

    def test_two_by_two_by_hand(self):
        # characteristic polynomial (2 - l)^2 - 1 = 0 -> l = 3, 1
        L, V = eigendecompose(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert np.allclose(L.values, [3.0, 1.0], atol=1e-14)
        r = 1 / np.sqrt(2)
        assert np.allclose(V.columns, [[r, r], [r, -r]], atol=1e-14)

    def test_sign_convention(self, rng):
        _, V = eigendecompose(random_spd(6, rng))
        for col in V.columns.T:
            first = col[np.abs(col) > 1e-14][0]
            assert first > 0

    def test_rejects_indefinite(self):
        with pytest.raises(NotSPDError):
            eigendecompose(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_solver_failure_is_reported(self, monkeypatch):
        def boom(a):
            raise np.linalg.LinAlgError("no convergence")

        monkeypatch.setattr(np.linalg, "eigh", boom)
        with pytest.raises(EigenDecompositionError, match="cond2"):
            eigendecompose(np.eye(3))

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, n=st.integers(1, 12))
    def test_round_trip(self, seed, n):
        a = random_spd(n, np.random.default_rng(seed))
        L, V = eigendecompose(a)
        assert np.all(np.diff(L.values) <= 0)
        assert np.max(np.abs(rie_build(V, L).entries - a)) <= 1e-10 * np.max(np.abs(a))


class TestRie:
    def test_examples(self, rng):
        I2 = OrthonormalBasis.identity(2)
        assert np.array_equal(rie_build(I2, [2.0, 1.0]).entries, np.diag([2.0, 1.0]))
        q = random_orthogonal(3, rng)
        assert np.allclose(rie_build(OrthonormalBasis(q), np.ones(3)).entries, np.eye(3), atol=1e-14)

    def test_rotated_spectra(self):
        r = 1 / np.sqrt(2)
        V = OrthonormalBasis(np.array([[r, r], [r, -r]]))
        assert np.allclose(rie_build(V, [0.7, 0.7]).entries, 0.7 * np.eye(2), atol=1e-15)
        assert np.allclose(rie_build(V, [3.0, 1.0]).entries, [[2.0, 1.0], [1.0, 2.0]], atol=1e-15)

    def test_inverse(self, rng):
        V = OrthonormalBasis(random_orthogonal(5, rng))
        L = rng.uniform(0.2, 3.0, 5)
        prod = rie_build(V, L).entries @ rie_inverse(V, L).entries
        assert np.allclose(prod, np.eye(5), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            rie_build(OrthonormalBasis.identity(3), [1.0, 1.0])

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, n=st.integers(1, 10))
    def test_spd_output(self, seed, n):
        g = np.random.default_rng(seed)
        xi = rie_build(OrthonormalBasis(random_orthogonal(n, g)), g.uniform(0.01, 5.0, n))
        assert np.array_equal(xi.entries, xi.entries.T)
        assert np.linalg.eigvalsh(xi.entries).min() > 0


class TestScalars:
    def test_logdet_examples(self):
        assert logdet([1.0, 1.0, 1.0]) == 0.0
        assert logdet([2.0, 0.5]) == pytest.approx(0.0, abs=1e-15)
        assert logdet([np.e, np.e]) == pytest.approx(2.0, rel=1e-15)
        assert logdet([3.0, 1.0]) == pytest.approx(1.0986122886681098, rel=1e-15)
        with pytest.raises(NotSPDError):
            logdet([1.0, -1.0])

    @settings(max_examples=40, deadline=None)
    @given(seed=seeds, n=st.integers(1, 5))
    def test_logdet_matches_cofactor_determinant(self, seed, n):
        a = random_spd(n, np.random.default_rng(seed))
        L, _ = eigendecompose(a)
        assert logdet(L) == pytest.approx(np.log(cofactor_det(a)), abs=1e-9)

    def test_trace_product_examples(self):
        assert trace_product(np.eye(4), np.eye(4)) == 4.0
        assert trace_product(np.diag([2.0, 3.0]), np.diag([5.0, 7.0])) == 31.0

    def test_trace_of_inverse_product(self, rng):
        a = random_spd(7, rng)
        assert trace_product(a, np.linalg.inv(a)) == pytest.approx(7.0, abs=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(seed=seeds, n=st.integers(1, 16))
    def test_trace_product_matches_explicit_sum(self, seed, n):
        g = np.random.default_rng(seed)
        a, b = random_spd(n, g), random_spd(n, g)
        assert trace_product(a, b) == pytest.approx(explicit_trace(a, b), rel=1e-12, abs=1e-12)
        ab = a @ b
        assert trace_quad(a, b) == pytest.approx(explicit_trace(ab, ab), rel=1e-11)

    def test_frobenius_distance(self):
        assert frobenius_distance(np.eye(2), np.diag([2.0, 3.0])) == pytest.approx(5.0)


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=st.integers(2, 12))
def test_frobenius_oracle_trace_identities(seed, n):
    g = np.random.default_rng(seed)
    C = random_spd(n, g)
    V = OrthonormalBasis(random_orthogonal(n, g))
    lam = oracle_frobenius(C, V)
    assert lam.values.sum() == pytest.approx(np.trace(C), rel=1e-12)
    assert trace_product(C, rie_inverse(V, lam)) == pytest.approx(n, abs=1e-6)


class TestCsv:
    def test_matrix_round_trip(self, tmp_path, rng):
        a = SymmetricMatrix(random_spd(4, rng))
        p = tmp_path / "c.csv"
        write_matrix_csv(p, a)
        assert p.read_text().splitlines()[0] == "# symmetric n=4"
        assert read_matrix_csv(p) == a

    def test_matrix_rejects_asymmetric_file(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("# symmetric n=2\n1,2\n0,1\n")
        with pytest.raises(ValueError, match="not symmetric"):
            read_matrix_csv(p)

    def test_basis_round_trip(self, tmp_path, rng):
        V = OrthonormalBasis(random_orthogonal(3, rng))
        p = tmp_path / "v.csv"
        write_basis_csv(p, V)
        assert p.read_text().splitlines()[0] == "# basis n=3"
        assert np.array_equal(read_basis_csv(p).columns, V.columns)
