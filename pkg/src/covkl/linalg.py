"""Dense symmetric-matrix primitives shared by every KL and oracle formula."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "EigenDecompositionError",
    "NotSPDError",
    "OrthonormalBasis",
    "PopulationModel",
    "Spectrum",
    "SymmetricMatrix",
    "eigendecompose",
    "frobenius_distance",
    "logdet",
    "read_basis_csv",
    "read_matrix_csv",
    "rie_build",
    "rie_inverse",
    "spd_eig",
    "trace_product",
    "trace_quad",
    "write_basis_csv",
    "write_matrix_csv",
]

SYMMETRY_TOL = 1e-10
ORTHONORMAL_TOL = 1e-10
SPD_RATIO = 1e-12


class NotSPDError(ValueError):
    """Raised when a matrix or spectrum is not strictly positive definite."""


class EigenDecompositionError(np.linalg.LinAlgError):
    """Raised when the symmetric eigensolver fails to converge."""


def _readonly(a: NDArray[np.float64]) -> NDArray[np.float64]:
    a.setflags(write=False)
    return a


class SymmetricMatrix:
    """Real symmetric matrix.

    Only the upper triangle of the input is read; the lower triangle is
    mirrored from it, so the stored array is symmetric by construction.
    Construction with ``check=True`` rejects inputs whose two triangles
    disagree by more than ``SYMMETRY_TOL`` relative to the largest entry.
    """

    __slots__ = ("_a",)

    def __init__(self, entries: ArrayLike, *, check: bool = True) -> None:
        a = np.array(entries, dtype=np.float64)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix has non-finite entries")
        if check:
            scale = max(float(np.max(np.abs(a))), 1.0)
            asym = float(np.max(np.abs(a - a.T)))
            if asym > SYMMETRY_TOL * scale:
                raise ValueError(f"matrix is not symmetric (max |A - A'| = {asym:.3e})")
        upper = np.triu(a)
        self._a = _readonly(upper + np.triu(a, 1).T)

    @property
    def dim(self) -> int:
        return self._a.shape[0]

    @property
    def entries(self) -> NDArray[np.float64]:
        return self._a

    def __array__(self, dtype=None, copy=None):
        if dtype is None or np.dtype(dtype) == self._a.dtype:
            return self._a.copy() if copy else self._a
        return self._a.astype(dtype)

    def __repr__(self) -> str:
        return f"SymmetricMatrix(dim={self.dim})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SymmetricMatrix):
            return NotImplemented
        return np.array_equal(self._a, other._a)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Spectrum:
    """Strictly positive eigenvalue vector, optionally pinned to a trace.

    The ordering is whatever the producer chose: ``eigendecompose`` returns
    descending values, while spectra attached to a fixed basis (oracle,
    optimizer output) keep the column order of that basis.
    """

    values: NDArray[np.float64]
    trace_target: float | None = None

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise ValueError("spectrum must be non-empty")
        if not np.all(np.isfinite(v)):
            raise ValueError("spectrum has non-finite values")
        if np.any(v <= 0.0):
            raise NotSPDError(f"spectrum must be strictly positive (min = {v.min():.3e})")
        if self.trace_target is not None:
            gap = abs(float(v.sum()) - self.trace_target)
            if gap > 1e-10 * v.size:
                raise ValueError(
                    f"spectrum sums to {v.sum():.15g}, expected {self.trace_target:.15g}"
                )
        object.__setattr__(self, "values", _readonly(v))

    @property
    def dim(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.array(self.values, dtype=dtype, copy=True)


@dataclass(frozen=True)
class OrthonormalBasis:
    """Square matrix whose columns are orthonormal.

    Determinant -1 is accepted: sample eigenvector matrices are not always
    proper rotations and the RIE does not care.
    """

    columns: NDArray[np.float64]

    def __post_init__(self) -> None:
        q = np.array(self.columns, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError(f"basis must be square, got shape {q.shape}")
        err = float(np.max(np.abs(q.T @ q - np.eye(q.shape[0]))))
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"columns are not orthonormal (max deviation {err:.3e})")
        object.__setattr__(self, "columns", _readonly(q))

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    @classmethod
    def identity(cls, n: int) -> OrthonormalBasis:
        return cls(np.eye(n))

    def __array__(self, dtype=None, copy=None):
        return np.array(self.columns, dtype=dtype, copy=True)


@dataclass(frozen=True)
class PopulationModel:
    """Ground-truth matrix ``C`` and the basis ``V`` an RIE is built on."""

    C: SymmetricMatrix
    c_spectrum: Spectrum
    c_basis: OrthonormalBasis
    rie_basis: OrthonormalBasis
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        n = self.C.dim
        if not (self.c_spectrum.dim == self.c_basis.dim == self.rie_basis.dim == n):
            raise ValueError("population model components have inconsistent dimensions")
        rebuilt = rie_build(self.c_basis, self.c_spectrum).entries
        err = float(np.max(np.abs(rebuilt - self.C.entries)))
        if err > 1e-8 * max(1.0, float(np.max(self.c_spectrum.values))):
            raise ValueError(f"C does not match its eigendecomposition (error {err:.3e})")

    @property
    def n(self) -> int:
        return self.C.dim


def _as_array(m: SymmetricMatrix | ArrayLike) -> NDArray[np.float64]:
    if isinstance(m, SymmetricMatrix):
        return m.entries
    return SymmetricMatrix(m).entries


def _condition_report(a: NDArray[np.float64]) -> str:
    try:
        sv = np.linalg.svd(a, compute_uv=False)
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        return f"n={a.shape[0]}, max|a|={np.max(np.abs(a)):.3e}, cond2={cond:.3e}"
    except np.linalg.LinAlgError:
        return f"n={a.shape[0]}, max|a|={np.max(np.abs(a)):.3e}, cond2=unavailable"


def _fix_signs(vecs: NDArray[np.float64]) -> NDArray[np.float64]:
    # first nonzero component of each column made positive
    nz = np.abs(vecs) > 1e-14 * np.max(np.abs(vecs), axis=0, keepdims=True)
    first = np.argmax(nz, axis=0)
    signs = np.sign(vecs[first, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _eigh_desc(a: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    try:
        vals, vecs = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise EigenDecompositionError(
            f"symmetric eigensolver did not converge ({_condition_report(a)})"
        ) from exc
    return vals[::-1].copy(), _fix_signs(vecs[:, ::-1])


def eigendecompose(S: SymmetricMatrix | ArrayLike) -> tuple[Spectrum, OrthonormalBasis]:
    """Eigendecomposition of an SPD matrix, eigenvalues descending.

    Eigenvector signs are fixed so the first nonzero component of each
    column is positive. Raises ``NotSPDError`` if the smallest eigenvalue
    is not above ``SPD_RATIO`` times the largest.
    """
    a = _as_array(S)
    vals, vecs = _eigh_desc(a)
    _check_spd(vals)
    return Spectrum(vals), OrthonormalBasis(vecs)


def _check_spd(vals: NDArray[np.float64]) -> None:
    top = float(vals.max())
    low = float(vals.min())
    if top <= 0.0 or low <= SPD_RATIO * top:
        raise NotSPDError(
            f"matrix is not positive definite (eigenvalues in [{low:.3e}, {top:.3e}])"
        )


def spd_eig(S: SymmetricMatrix | ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Raw ``(values, vectors)`` of an SPD matrix without the wrapper types."""
    a = _as_array(S)
    vals, vecs = _eigh_desc(a)
    _check_spd(vals)
    return vals, vecs


def _check_dims(V: OrthonormalBasis, L: Spectrum) -> None:
    if V.dim != L.dim:
        raise ValueError(f"dimension mismatch: basis is {V.dim}, spectrum is {L.dim}")


def rie_build(V: OrthonormalBasis, L: Spectrum | ArrayLike) -> SymmetricMatrix:
    """Rotational invariant estimator ``V diag(L) V'``."""
    if not isinstance(L, Spectrum):
        L = Spectrum(np.asarray(L, dtype=np.float64))
    _check_dims(V, L)
    q = V.columns
    return SymmetricMatrix((q * L.values) @ q.T, check=False)


def rie_inverse(V: OrthonormalBasis, L: Spectrum | ArrayLike) -> SymmetricMatrix:
    """Inverse of ``rie_build(V, L)``, formed spectrally."""
    if not isinstance(L, Spectrum):
        L = Spectrum(np.asarray(L, dtype=np.float64))
    _check_dims(V, L)
    q = V.columns
    return SymmetricMatrix((q / L.values) @ q.T, check=False)


def logdet(L: Spectrum | ArrayLike) -> float:
    """Log-determinant as a sum of log-eigenvalues."""
    v = L.values if isinstance(L, Spectrum) else np.asarray(L, dtype=np.float64)
    if np.any(v <= 0.0):
        raise NotSPDError("log-determinant needs strictly positive eigenvalues")
    return float(np.sum(np.log(v)))


def trace_product(A: SymmetricMatrix | ArrayLike, B: SymmetricMatrix | ArrayLike) -> float:
    """``tr(A B)`` for symmetric ``A`` and ``B``, without forming the product."""
    a, b = _as_array(A), _as_array(B)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.einsum("ij,ij->", a, b))


def trace_quad(A: SymmetricMatrix | ArrayLike, B: SymmetricMatrix | ArrayLike) -> float:
    """``tr(A B A B)``."""
    a, b = _as_array(A), _as_array(B)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    ab = a @ b
    return float(np.einsum("ij,ji->", ab, ab))


def frobenius_distance(A: SymmetricMatrix | ArrayLike, B: SymmetricMatrix | ArrayLike) -> float:
    """Squared Frobenius distance ``tr[(A - B)^2]``."""
    d = _as_array(A) - _as_array(B)
    return float(np.einsum("ij,ij->", d, d))


def _read_csv_matrix(path: str | Path, kind: str) -> NDArray[np.float64]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        parts = header.lstrip("#").split()
        if not header.startswith("#") or not parts or parts[0] != kind:
            raise ValueError(f"{path}: expected header '# {kind} n=<n>', got {header!r}")
        fields = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
        n = int(fields["n"])
        data = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=np.float64)
    if data.shape != (n, n):
        raise ValueError(f"{path}: header says n={n} but data has shape {data.shape}")
    return data


def _write_csv_matrix(path: str | Path, kind: str, a: NDArray[np.float64]) -> None:
    path = Path(path)
    n = a.shape[0]
    lines = [f"# {kind} n={n}"]
    lines.extend(",".join(f"{x:.17g}" for x in row) for row in a)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix_csv(path: str | Path) -> SymmetricMatrix:
    """Load a dense symmetric matrix written by :func:`write_matrix_csv`."""
    return SymmetricMatrix(_read_csv_matrix(path, "symmetric"), check=True)


def write_matrix_csv(path: str | Path, S: SymmetricMatrix | ArrayLike) -> None:
    _write_csv_matrix(path, "symmetric", _as_array(S))


def read_basis_csv(path: str | Path) -> OrthonormalBasis:
    return OrthonormalBasis(_read_csv_matrix(path, "basis"))


def write_basis_csv(path: str | Path, V: OrthonormalBasis) -> None:
    _write_csv_matrix(path, "basis", V.columns)
