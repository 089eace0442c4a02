"""Seeded Gaussian / Student's t draws and synthetic population scenarios."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .linalg import (
    OrthonormalBasis,
    PopulationModel,
    Spectrum,
    SymmetricMatrix,
    eigendecompose,
    rie_build,
    spd_eig,
)

__all__ = [
    "RngStream",
    "SampleBlock",
    "SingularCovarianceWarning",
    "gen_population",
    "geometric_spectrum",
    "givens_perturbation",
    "sample_covariance",
    "sample_mvn",
    "sample_mvt",
]


class SingularCovarianceWarning(RuntimeWarning):
    """The sample covariance is rank deficient (too few or degenerate rows)."""


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream.

    A stream is a pure description: every call to :meth:`generator` starts
    the same sequence again. Independent streams come from distinct
    ``stream_index`` values (or :meth:`child`), via numpy's ``SeedSequence``
    spawn keys.
    """

    master_seed: int
    stream_index: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.stream_index < 0:
            raise ValueError("stream_index must be non-negative")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index, *self.path))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def child(self, k: int) -> RngStream:
        return RngStream(self.master_seed, self.stream_index, (*self.path, int(k)))


def _gen(rng: RngStream | np.random.Generator) -> np.random.Generator:
    return rng.generator() if isinstance(rng, RngStream) else rng


def _seed_of(rng: RngStream | np.random.Generator) -> int | None:
    return rng.master_seed if isinstance(rng, RngStream) else None


@dataclass(frozen=True)
class SampleBlock:
    """``m`` zero-mean draws in ``n`` variables, one per row.

    ``source_nu`` is ``inf`` for Gaussian draws. For finite ``nu`` the rows
    have scale matrix ``C`` and covariance ``nu / (nu - 2) * C``.
    """

    data: NDArray[np.float64]
    source_nu: float = math.inf
    seed: int | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.data, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"sample block must be a non-empty 2-D array, got {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "data", x)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_vars(self) -> int:
        return self.data.shape[1]

    def to_csv(self, path: str | Path) -> None:
        nu = "inf" if math.isinf(self.source_nu) else f"{self.source_nu:.17g}"
        seed = "none" if self.seed is None else str(self.seed)
        lines = [f"# mvt nu={nu} n={self.n_vars} seed={seed}"]
        lines.extend(",".join(f"{v:.17g}" for v in row) for row in self.data)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | Path) -> SampleBlock:
        with Path(path).open("r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            parts = header.lstrip("#").split()
            if not parts or parts[0] != "mvt":
                raise ValueError(f"{path}: expected '# mvt nu=.. n=.. seed=..' header")
            fields = dict(p.split("=", 1) for p in parts[1:])
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        n = int(fields["n"])
        if data.shape[1] != n:
            raise ValueError(f"{path}: header says n={n}, data has {data.shape[1]} columns")
        seed = None if fields.get("seed", "none") == "none" else int(fields["seed"])
        return cls(data, float(fields["nu"]), seed)


def _chol(C: SymmetricMatrix | NDArray[np.float64]) -> NDArray[np.float64]:
    a = np.asarray(C, dtype=np.float64)
    spd_eig(a)  # raises NotSPDError with a readable message
    return np.linalg.cholesky(a)


def _check_count(m: int) -> None:
    if int(m) != m or m < 1:
        raise ValueError(f"sample count must be a positive integer, got {m!r}")


def sample_mvn(
    C: SymmetricMatrix | NDArray[np.float64], m: int, rng: RngStream | np.random.Generator
) -> SampleBlock:
    """Draw ``m`` rows from ``N(0, C)`` through the Cholesky factor of ``C``."""
    _check_count(m)
    L = _chol(C)
    z = _gen(rng).standard_normal((int(m), L.shape[0]))
    return SampleBlock(z @ L.T, math.inf, _seed_of(rng))


def sample_mvt(
    C: SymmetricMatrix | NDArray[np.float64],
    nu: float,
    m: int,
    rng: RngStream | np.random.Generator,
) -> SampleBlock:
    """Draw ``m`` rows from the multivariate t with scale matrix ``C``.

    Each row is ``z * sqrt(nu / u)`` with ``z ~ N(0, C)`` and
    ``u ~ chi2(nu)`` drawn as ``Gamma(nu/2, scale=2)`` so non-integer
    ``nu`` works. The normal block is drawn first, so for a given stream
    the ``z`` part coincides with :func:`sample_mvn`. ``nu = inf`` gives
    Gaussian rows.
    """
    if not nu > 0:
        raise ValueError(f"degrees of freedom must be positive, got {nu}")
    _check_count(m)
    L = _chol(C)
    g = _gen(rng)
    z = g.standard_normal((int(m), L.shape[0])) @ L.T
    if math.isinf(nu):
        return SampleBlock(z, math.inf, _seed_of(rng))
    u = g.gamma(nu / 2.0, 2.0, size=int(m))
    return SampleBlock(z * np.sqrt(nu / u)[:, None], float(nu), _seed_of(rng))


def geometric_spectrum(n: int, ratio: float) -> Spectrum:
    """Eigenvalues proportional to ``ratio**-k``, rescaled to sum to ``n``."""
    if n < 1:
        raise ValueError("n must be positive")
    if not ratio > 1.0:
        raise ValueError(f"ratio must exceed 1, got {ratio}")
    # log-space so large n with steep ratios does not underflow the tail to 0
    logs = -np.arange(1, n + 1) * math.log(ratio)
    w = np.exp(logs - logs.max())
    vals = n * w / w.sum()
    vals[-1] = n - vals[:-1].sum()
    if vals[-1] <= 0.0:
        raise ValueError(f"geometric spectrum with ratio {ratio} underflows at n={n}")
    return Spectrum(vals, trace_target=float(n))


def givens_perturbation(n: int, scale: float, rng: np.random.Generator) -> NDArray[np.float64]:
    """Orthogonal matrix built from one Givens rotation per coordinate plane.

    Planes are visited in a random order; each angle is uniform on
    ``[-scale, scale]``.
    """
    Q = np.eye(n)
    if scale == 0.0 or n < 2:
        return Q
    iu, ju = np.triu_indices(n, 1)
    order = rng.permutation(iu.size)
    angles = rng.uniform(-scale, scale, size=iu.size)
    for k in order:
        i, j = iu[k], ju[k]
        c, s = math.cos(angles[k]), math.sin(angles[k])
        qi, qj = Q[:, i].copy(), Q[:, j]
        Q[:, i] = c * qi - s * qj
        Q[:, j] = s * qi + c * qj
    return Q


def gen_population(
    n: int,
    ratio: float,
    rotation_scale: float,
    rng: RngStream | np.random.Generator,
    *,
    basis: str = "random",
) -> PopulationModel:
    """Synthetic population with a geometric spectrum and a perturbed RIE basis.

    ``basis="random"`` takes the eigenvectors of a seeded Wishart draw as
    the eigenbasis of ``C``; ``basis="identity"`` makes ``C`` diagonal.
    ``rie_basis`` is the eigenbasis rotated by :func:`givens_perturbation`.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if rotation_scale < 0:
        raise ValueError("rotation_scale must be non-negative")
    spectrum = geometric_spectrum(n, ratio)
    g = _gen(rng)
    if basis == "random":
        G = g.standard_normal((n, 2 * n))
        _, c_basis = eigendecompose(G @ G.T / (2 * n))
    elif basis == "identity":
        c_basis = OrthonormalBasis.identity(n)
    else:
        raise ValueError(f"unknown basis mode {basis!r}")
    if rotation_scale == 0.0:
        rie_basis = c_basis
    else:
        R = givens_perturbation(n, rotation_scale, g)
        rie_basis = OrthonormalBasis(c_basis.columns @ R)
    C = rie_build(c_basis, spectrum)
    return PopulationModel(
        C, spectrum, c_basis, rie_basis, meta={"ratio": ratio, "rotation_scale": rotation_scale}
    )


def sample_covariance(
    block: SampleBlock, standardize: bool = False, *, demean: bool = False
) -> SymmetricMatrix:
    """Zero-mean sample covariance ``X'X / m``.

    ``standardize`` rescales to unit diagonal. A
    :class:`SingularCovarianceWarning` is issued when ``m <= n`` or the
    result is numerically rank deficient.
    """
    X = np.asarray(block.data)
    m, n = X.shape
    if demean:
        X = X - X.mean(axis=0, keepdims=True)
    S = X.T @ X / m
    if standardize:
        d = np.sqrt(np.diag(S))
        if np.any(d == 0.0):
            raise ValueError("cannot standardize: a variable has zero variance")
        S = S / np.outer(d, d)
        np.fill_diagonal(S, 1.0)
    vals = np.linalg.eigvalsh(S)
    if m <= n or vals[0] <= 1e-12 * max(vals[-1], 1e-300):
        warnings.warn(
            f"sample covariance is singular (m={m}, n={n}, min eigenvalue {vals[0]:.3e})",
            SingularCovarianceWarning,
            stacklevel=2,
        )
    return SymmetricMatrix(S, check=False)
