from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covkl.sampling import (
    RngStream,
    SampleBlock,
    SingularCovarianceWarning,
    gen_population,
    geometric_spectrum,
    givens_perturbation,
    sample_covariance,
    sample_mvn,
    sample_mvt,
)


def empirical_cov(block: SampleBlock) -> np.ndarray:
    X = block.data
    return X.T @ X / X.shape[0]


class TestRngStream:
    def test_restartable(self):
        s = RngStream(7, 3)
        assert np.array_equal(s.generator().random(5), s.generator().random(5))

    def test_children_and_indices_differ(self):
        base = RngStream(7)
        draws = [base.generator().random(4), base.child(0).generator().random(4),
                 base.child(1).generator().random(4), RngStream(7, 1).generator().random(4),
                 RngStream(8).generator().random(4)]
        for i in range(len(draws)):
            for j in range(i + 1, len(draws)):
                assert not np.array_equal(draws[i], draws[j])

    def test_seed_range(self):
        with pytest.raises(ValueError):
            RngStream(-1)
        with pytest.raises(ValueError):
            RngStream(2**64)


class TestMvn:
    def test_identity(self):
        m = 100_000
        S = empirical_cov(sample_mvn(np.eye(2), m, RngStream(1)))
        assert np.max(np.abs(S - np.eye(2))) < 3 / math.sqrt(m)

    def test_diagonal(self):
        S = empirical_cov(sample_mvn(np.diag([4.0, 1.0]), 100_000, RngStream(2)))
        assert np.allclose(np.diag(S), [4.0, 1.0], rtol=0.05)

    def test_zero_samples(self):
        with pytest.raises(ValueError, match="positive integer"):
            sample_mvn(np.eye(2), 0, RngStream(0))

    def test_deterministic(self):
        a = sample_mvn(np.eye(3), 50, RngStream(5, 2))
        b = sample_mvn(np.eye(3), 50, RngStream(5, 2))
        assert np.array_equal(a.data, b.data)


class TestMvt:
    def test_variance_nu4(self):
        x = sample_mvt(np.eye(1), 4.0, 1_000_000, RngStream(3)).data[:, 0]
        assert np.mean(x**2) == pytest.approx(2.0, rel=0.05)

    def test_covariance_inflation(self):
        C = np.array([[2.0, 1.0], [1.0, 2.0]])
        S = empirical_cov(sample_mvt(C, 6.0, 1_000_000, RngStream(4)))
        assert np.allclose(S, 1.5 * C, rtol=0.05)

    def test_large_nu_is_gaussian(self):
        m = 200_000
        S = empirical_cov(sample_mvt(np.eye(2), 1e6, m, RngStream(5)))
        assert np.max(np.abs(S - np.eye(2))) < 3 * math.sqrt(2 / m)

    def test_infinite_nu_reuses_normal_block(self):
        a = sample_mvt(np.eye(3), math.inf, 10, RngStream(6))
        b = sample_mvn(np.eye(3), 10, RngStream(6))
        assert np.array_equal(a.data, b.data)

    def test_heavy_tail_kurtosis(self):
        # univariate t with nu=10: excess kurtosis 6 / (nu - 4) = 1
        x = sample_mvt(np.eye(1), 10.0, 2_000_000, RngStream(7)).data[:, 0]
        kurt = np.mean(x**4) / np.mean(x**2) ** 2 - 3
        assert kurt == pytest.approx(1.0, abs=0.15)

    def test_bad_nu(self):
        with pytest.raises(ValueError):
            sample_mvt(np.eye(2), 0.0, 5, RngStream(0))

    def test_csv_round_trip(self, tmp_path):
        block = sample_mvt(np.eye(2), 5.0, 4, RngStream(9))
        p = tmp_path / "x.csv"
        block.to_csv(p)
        assert p.read_text().splitlines()[0] == "# mvt nu=5 n=2 seed=9"
        back = SampleBlock.from_csv(p)
        assert np.array_equal(back.data, block.data)
        assert back.source_nu == 5.0 and back.seed == 9

    def test_gaussian_csv_header(self, tmp_path):
        p = tmp_path / "g.csv"
        sample_mvn(np.eye(3), 2, RngStream(1)).to_csv(p)
        assert p.read_text().startswith("# mvt nu=inf n=3 seed=1\n")


class TestPopulation:
    def test_spectrum_ratio_and_trace(self):
        L = geometric_spectrum(30, 1.8)
        assert L.values.sum() == pytest.approx(30.0, abs=1e-12)
        assert L.values[0] / L.values[1] == pytest.approx(1.8, rel=1e-12)

    def test_two_dimensional(self):
        L = geometric_spectrum(2, 19.0).values
        assert L == pytest.approx([1.9, 0.1], rel=1e-12)

    def test_steep_large_spectrum(self):
        L = geometric_spectrum(1000, 150.0 ** (1 / 999))
        assert L.values[0] / L.values[-1] == pytest.approx(150.0, rel=1e-9)

    def test_no_rotation(self):
        model = gen_population(10, 1.8, 0.0, RngStream(1))
        assert np.array_equal(model.rie_basis.columns, model.c_basis.columns)

    def test_rotation_moves_basis(self):
        model = gen_population(10, 1.8, 0.1, RngStream(1))
        overlap = np.abs(np.sum(model.rie_basis.columns * model.c_basis.columns, axis=0))
        assert 0.8 < overlap.min() < 1.0

    def test_identity_basis(self):
        model = gen_population(4, 2.0, 0.0, RngStream(1), basis="identity")
        assert np.allclose(model.C.entries, np.diag(model.c_spectrum.values))

    def test_givens_is_orthogonal(self):
        Q = givens_perturbation(8, 0.3, np.random.default_rng(0))
        assert np.allclose(Q.T @ Q, np.eye(8), atol=1e-13)
        assert np.linalg.det(Q) == pytest.approx(1.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 25),
           ratio=st.floats(1.01, 5.0), scale=st.floats(0.0, 0.5))
    def test_invariants(self, seed, n, ratio, scale):
        model = gen_population(n, ratio, scale, RngStream(seed))
        assert np.trace(model.C.entries) == pytest.approx(n, rel=1e-12)
        V = model.rie_basis.columns
        assert np.max(np.abs(V.T @ V - np.eye(n))) < 1e-10

    def test_reproducible(self):
        a = gen_population(12, 1.5, 0.2, RngStream(3, 1))
        b = gen_population(12, 1.5, 0.2, RngStream(3, 1))
        assert a.C == b.C and np.array_equal(a.rie_basis.columns, b.rie_basis.columns)


class TestSampleCovariance:
    def test_rank_one_warns(self):
        block = SampleBlock(np.tile([1.0, 2.0, 3.0], (5, 1)))
        with pytest.warns(SingularCovarianceWarning):
            S = sample_covariance(block)
        assert np.linalg.matrix_rank(S.entries) == 1

    def test_too_few_rows_warns(self):
        block = sample_mvn(np.eye(4), 3, RngStream(0))
        with pytest.warns(SingularCovarianceWarning):
            sample_covariance(block)

    def test_converges(self):
        m = 100_000
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            S = sample_covariance(sample_mvn(np.eye(3), m, RngStream(11))).entries
        assert np.max(np.abs(S - np.eye(3))) < 3 / math.sqrt(m)

    def test_standardize(self):
        block = sample_mvn(np.diag([4.0, 9.0, 1.0]), 1000, RngStream(12))
        S = sample_covariance(block, standardize=True).entries
        assert np.array_equal(np.diag(S), np.ones(3))
        assert np.array_equal(S, S.T)

    def test_demean(self):
        data = np.random.default_rng(0).standard_normal((500, 2)) + 10.0
        S = sample_covariance(SampleBlock(data), demean=True).entries
        assert np.max(np.abs(S - np.eye(2))) < 0.3
