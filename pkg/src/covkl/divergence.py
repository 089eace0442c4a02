"""KL divergences between zero-mean Gaussian and Student's t populations.

Every function takes the population matrix ``C`` first and the estimator
``Xi`` second and returns KL(P(C) || P(Xi)) in nats. For Student's t both
matrices are *scale* matrices of the same ``nu``.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import special, stats

from .linalg import (
    OrthonormalBasis,
    SymmetricMatrix,
    spd_eig,
)
from .sampling import RngStream, sample_mvt

__all__ = [
    "EstimatorKind",
    "KlEstimate",
    "NuRangeError",
    "QfMoments",
    "kl_gauss_normalized",
    "kl_gaussian",
    "kl_h",
    "kl_oracle_asym",
    "kl_t_asym_gradient",
    "kl_t_asym_normalized",
    "kl_t_largen",
    "kl_t_mc",
    "kl_t_quadrature2",
    "logpdf_t",
    "qf_moments",
    "ratio_variance",
    "ratio_variance_from_traces",
    "ratio_variance_taylor",
]

MC_CHUNK = 1 << 16


class NuRangeError(ValueError):
    """Degrees of freedom outside the range where a formula is finite."""


class EstimatorKind(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    MONTE_CARLO = "monte_carlo"
    QUADRATURE = "quadrature"
    ASYMPTOTIC = "asymptotic"


@dataclass(frozen=True)
class KlEstimate:
    mean: float
    std_error: float = 0.0
    n_samples: int = 1
    estimator_kind: EstimatorKind = EstimatorKind.CLOSED_FORM
    info: dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.std_error < 0:
            raise ValueError("std_error must be non-negative")
        if self.estimator_kind is EstimatorKind.MONTE_CARLO:
            if self.n_samples < 1:
                raise ValueError("Monte Carlo estimate needs at least one sample")
        elif self.std_error != 0.0:
            raise ValueError(f"{self.estimator_kind.value} estimates carry no standard error")

    def __float__(self) -> float:
        return self.mean


@dataclass(frozen=True)
class QfMoments:
    """Moments of ``a = x' Xi^-1 x`` and ``b = x' C^-1 x`` for ``x ~ t(C, nu)``.

    Variance fields are ``nan`` when ``nu <= 4``.
    """

    e_a: float
    e_b: float
    v_a: float
    v_b: float
    cov_ab: float
    nu: float

    @property
    def has_variance(self) -> bool:
        return not math.isnan(self.v_a)


class _Pair:
    """Spectral data shared by the formulas for a ``(C, Xi)`` pair."""

    __slots__ = ("n", "logdet_c", "logdet_xi", "m", "tr", "tr2")

    def __init__(self, C, Xi) -> None:
        c = np.asarray(C, dtype=np.float64)
        xi = np.asarray(Xi, dtype=np.float64)
        if c.shape != xi.shape:
            raise ValueError(f"dimension mismatch: {c.shape} vs {xi.shape}")
        c_vals, _ = spd_eig(c)
        xi_vals, xi_vecs = spd_eig(xi)
        self.n = c.shape[0]
        self.logdet_c = float(np.sum(np.log(c_vals)))
        self.logdet_xi = float(np.sum(np.log(xi_vals)))
        # C Xi^-1 in the eigenbasis of Xi: W' C W diag(1/xi)
        ct = xi_vecs.T @ c @ xi_vecs
        m = ct / xi_vals[None, :]
        self.m = m
        self.tr = float(np.trace(m))
        self.tr2 = float(np.einsum("ij,ji->", m, m))

    @property
    def tr_bar(self) -> float:
        return self.tr / self.n


def _check_nu(nu: float, above: float) -> None:
    if not nu > above:
        raise NuRangeError(f"this formula needs nu > {above:g}, got nu = {nu:g}")


def kl_gaussian(C, Xi) -> KlEstimate:
    """Closed-form KL between ``N(0, C)`` and ``N(0, Xi)``."""
    p = _Pair(C, Xi)
    val = 0.5 * (p.tr - p.n + p.logdet_xi - p.logdet_c)
    return KlEstimate(val, 0.0, 1, EstimatorKind.CLOSED_FORM)


def logpdf_t(x, C, nu: float) -> float | NDArray[np.float64]:
    """Log-density of the zero-mean multivariate t with scale ``C``.

    ``x`` may be a single point (shape ``(n,)``) or a batch ``(m, n)``.
    """
    if not nu > 0:
        raise NuRangeError(f"nu must be positive, got {nu}")
    vals, vecs = spd_eig(C)
    n = vals.size
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != n:
        raise ValueError(f"points have dimension {X.shape[1]}, matrix has {n}")
    q = np.sum((X @ vecs) ** 2 / vals, axis=1)
    half_logdet = 0.5 * float(np.sum(np.log(vals)))
    if math.isinf(nu):
        out = -0.5 * n * math.log(2 * math.pi) - half_logdet - 0.5 * q
    else:
        norm = (
            special.gammaln(0.5 * (nu + n))
            - special.gammaln(0.5 * nu)
            - 0.5 * n * math.log(nu * math.pi)
            - half_logdet
        )
        out = norm - 0.5 * (n + nu) * np.log1p(q / nu)
    return float(out[0]) if single else out


def _whitener(M) -> tuple[NDArray[np.float64], float]:
    vals, vecs = spd_eig(M)
    return vecs / np.sqrt(vals), float(np.sum(np.log(vals)))


def _log_ratio_terms(
    X: NDArray[np.float64], Wc: NDArray[np.float64], Wx: NDArray[np.float64], nu: float
) -> NDArray[np.float64]:
    # log P(x; C) - log P(x; Xi) without the log-det constant
    b = np.sum((X @ Wc) ** 2, axis=1)
    a = np.sum((X @ Wx) ** 2, axis=1)
    if math.isinf(nu):
        return 0.5 * (a - b)
    return 0.5 * (X.shape[1] + nu) * (np.log1p(a / nu) - np.log1p(b / nu))


def _combine(parts: list[tuple[int, float, float]]) -> tuple[int, float, float]:
    # Chan et al. pairwise merge of (count, mean, M2), applied in chunk order
    n_tot, mean, m2 = 0, 0.0, 0.0
    for n_k, mean_k, m2_k in parts:
        if n_k == 0:
            continue
        tot = n_tot + n_k
        delta = mean_k - mean
        mean = mean + delta * n_k / tot
        m2 = m2 + m2_k + delta * delta * n_tot * n_k / tot
        n_tot = tot
    return n_tot, mean, m2


def _default_workers() -> int:
    env = os.environ.get("COVKL_THREADS")
    if env:
        return max(1, int(env))
    return 1


def kl_t_mc(
    C,
    Xi,
    nu: float,
    m: int,
    rng: RngStream,
    *,
    workers: int | None = None,
    chunk_size: int = MC_CHUNK,
) -> KlEstimate:
    """Monte Carlo KL between two multivariate t laws with the same ``nu``.

    Draws are split into fixed chunks, chunk ``k`` using ``rng.child(k)``,
    so the estimate does not depend on ``workers``. The Gamma/pi
    normalisation constants are identical on both sides and never
    evaluated.
    """
    if not nu > 0:
        raise NuRangeError(f"nu must be positive, got {nu}")
    if m < 2:
        raise ValueError("Monte Carlo KL needs m >= 2")
    c = np.asarray(C, dtype=np.float64)
    Wc, logdet_c = _whitener(c)
    Wx, logdet_xi = _whitener(Xi)
    if Wc.shape != Wx.shape:
        raise ValueError("dimension mismatch between C and Xi")
    const = 0.5 * (logdet_xi - logdet_c)
    sizes = [chunk_size] * (m // chunk_size)
    if m % chunk_size:
        sizes.append(m % chunk_size)

    def run(k: int) -> tuple[int, float, float]:
        X = sample_mvt(c, nu, sizes[k], rng.child(k)).data
        t = _log_ratio_terms(X, Wc, Wx, nu)
        mu = float(t.mean())
        return t.size, mu, float(np.sum((t - mu) ** 2))

    workers = workers or _default_workers()
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(k) for k in range(len(sizes))]
    total, mean, m2 = _combine(parts)
    se = math.sqrt(m2 / (total - 1) / total)
    return KlEstimate(const + mean, se, total, EstimatorKind.MONTE_CARLO)


def kl_t_quadrature2(
    C, Xi, nu: float, half_width: float = 100.0, grid_points: int = 2001
) -> KlEstimate:
    """Tensor-product Gauss-Legendre KL for two bivariate t laws.

    Integrates ``P(x; C) log(P(x; C) / P(x; Xi))`` over the square
    ``[-half_width, half_width]^2``. ``info["tail_mass_bound"]`` is an
    upper bound on the probability mass of ``P(x; C)`` outside the square
    (the mass outside the largest inscribed ellipse ``x'C^-1 x <= r^2``).
    """
    c = np.asarray(C, dtype=np.float64)
    if c.shape != (2, 2):
        raise ValueError(f"quadrature KL is only defined for n = 2, got shape {c.shape}")
    if not half_width > 0:
        raise ValueError("half_width must be positive")
    if grid_points < 64:
        raise ValueError("grid_points must be at least 64")
    if not nu > 0:
        raise NuRangeError(f"nu must be positive, got {nu}")
    nodes, weights = special.roots_legendre(grid_points)
    nodes = nodes * half_width
    weights = weights * half_width

    Wc, logdet_c = _whitener(c)
    Wx, logdet_xi = _whitener(Xi)
    const = 0.5 * (logdet_xi - logdet_c)
    if math.isinf(nu):
        log_norm = -math.log(2 * math.pi) - 0.5 * logdet_c
    else:
        log_norm = (
            special.gammaln(0.5 * (nu + 2))
            - special.gammaln(0.5 * nu)
            - math.log(nu * math.pi)
            - 0.5 * logdet_c
        )

    total = 0.0
    rows = max(1, (1 << 20) // grid_points)
    for start in range(0, grid_points, rows):
        x1 = nodes[start : start + rows]
        X = np.stack(np.broadcast_arrays(x1[:, None], nodes[None, :]), axis=-1).reshape(-1, 2)
        b = np.sum((X @ Wc) ** 2, axis=1)
        if math.isinf(nu):
            logp = log_norm - 0.5 * b
        else:
            logp = log_norm - 0.5 * (2 + nu) * np.log1p(b / nu)
        integrand = np.exp(logp) * (const + _log_ratio_terms(X, Wc, Wx, nu))
        w = (weights[start : start + rows, None] * weights[None, :]).reshape(-1)
        total += float(np.dot(w, integrand))

    r2 = half_width**2 / float(np.max(np.diag(c)))
    if math.isinf(nu):
        tail = float(stats.chi2.sf(r2, 2))
    else:
        tail = float(stats.f.sf(r2 / 2.0, 2, nu))
    return KlEstimate(total, 0.0, grid_points**2, EstimatorKind.QUADRATURE, {"tail_mass_bound": tail})


def _mixture_moments(nu: float) -> tuple[float, float]:
    # E[w], E[w^2] for w = nu / chi2(nu)
    e1 = nu / (nu - 2.0)
    e2 = nu * nu / ((nu - 2.0) * (nu - 4.0)) if nu > 4 else math.nan
    return e1, e2


def qf_moments(C, Xi, nu: float) -> QfMoments:
    """Mean, variance and covariance of ``a = x'Xi^-1 x`` and ``b = x'C^-1 x``.

    Uses ``x = sqrt(w) z`` with ``z ~ N(0, C)`` and ``w = nu / chi2(nu)``:
    for symmetric ``A, B``, ``E[z'Az] = tr(AC)`` and
    ``Cov(z'Az, z'Bz) = 2 tr(ACBC)``, and the ``w`` factor contributes its
    first two moments. Requires ``nu > 2``; variances need ``nu > 4``.
    """
    _check_nu(nu, 2.0)
    p = _Pair(C, Xi)
    n, T, Q = p.n, p.tr, p.tr2
    if math.isinf(nu):
        return QfMoments(T, n, 2 * Q, 2 * n, 2 * T, nu)
    e1, e2 = _mixture_moments(nu)
    if nu <= 4:
        return QfMoments(e1 * T, e1 * n, math.nan, math.nan, math.nan, nu)
    v_a = e2 * (T * T + 2 * Q) - e1 * e1 * T * T
    v_b = e2 * (n * n + 2 * n) - e1 * e1 * n * n
    cov = e2 * (n * T + 2 * T) - e1 * e1 * n * T
    return QfMoments(e1 * T, e1 * n, v_a, v_b, cov, nu)


def ratio_variance_taylor(C, Xi, nu: float) -> float:
    """First-order two-variable Taylor variance of ``(1 + a/nu) / (1 + b/nu)``."""
    _check_nu(nu, 4.0)
    mo = qf_moments(C, Xi, nu)
    c = 1.0 / nu
    num = 1.0 + c * mo.e_a
    den = 1.0 + c * mo.e_b
    return c * c * (
        mo.v_a / den**2 - 2.0 * num / den**3 * mo.cov_ab + num**2 / den**4 * mo.v_b
    )


def ratio_variance(C, Xi, nu: float) -> float:
    """Collapsed closed form of :func:`ratio_variance_taylor` in normalised traces."""
    _check_nu(nu, 4.0)
    p = _Pair(C, Xi)
    return ratio_variance_from_traces(p.n, p.tr / p.n, p.tr2 / p.n, nu)


def ratio_variance_from_traces(n: int, t: float, q: float, nu: float) -> float:
    """:func:`ratio_variance` from ``t = tr(C Xi^-1)/n`` and ``q = tr((C Xi^-1)^2)/n``.

    Block-replicating a pair leaves ``t`` and ``q`` unchanged, so this gives
    the variance of a replicated pair without building it.
    """
    _check_nu(nu, 4.0)
    num = 2.0 * (nu - 2.0) * n * (nu - n * t * t + q * (nu + n - 2.0) - 2.0 * (nu - 2.0) * t - 2.0)
    return num / ((nu - 4.0) * (nu + n - 2.0) ** 3)


def kl_t_largen(C, Xi, nu: float) -> KlEstimate:
    """Large-``n`` KL for Student's t: the quadratic forms replaced by their means."""
    _check_nu(nu, 2.0)
    p = _Pair(C, Xi)
    n = p.n
    if math.isinf(nu):
        bracket = p.tr - n
    else:
        bracket = (n + nu) * (math.log1p(p.tr / (nu - 2.0)) - math.log1p(n / (nu - 2.0)))
    val = 0.5 * (p.logdet_xi - p.logdet_c + bracket)
    return KlEstimate(val, 0.0, 1, EstimatorKind.ASYMPTOTIC)


def kl_t_asym_normalized(C, Xi) -> float:
    """Limit of KL / n for Student's t; the same for every ``nu``."""
    p = _Pair(C, Xi)
    return 0.5 * ((p.logdet_xi - p.logdet_c) / p.n + math.log(p.tr_bar))


def kl_t_asym_gradient(C, V: OrthonormalBasis, L) -> NDArray[np.float64]:
    """Derivative of :func:`kl_t_asym_normalized` in the eigenvalues of ``Xi = V L V'``."""
    lam = np.asarray(L, dtype=np.float64)
    q = V.columns
    c = np.asarray(C, dtype=np.float64)
    d = np.einsum("ik,ij,jk->k", q, c, q)
    tr = float(np.sum(d / lam))
    return 0.5 * (1.0 / (lam.size * lam) - d / (lam * lam * tr))


def kl_gauss_normalized(C, Xi) -> float:
    """Gaussian KL / n written in normalised traces."""
    p = _Pair(C, Xi)
    return 0.5 * ((p.logdet_xi - p.logdet_c) / p.n + p.tr_bar - 1.0)


def kl_h(C, Xi, h: float) -> float:
    """Limit of KL / n for Student's t when ``nu = h n`` grows with ``n``."""
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    p = _Pair(C, Xi)
    t = p.tr_bar
    # (1+h) [log(h+t) - log(1+h)] = (1+h) log1p((t-1)/(1+h)), stable for huge h
    tail = (1.0 + h) * math.log1p((t - 1.0) / (1.0 + h))
    return 0.5 * ((p.logdet_xi - p.logdet_c) / p.n + tail)


def kl_oracle_asym(C, V: OrthonormalBasis) -> float:
    """Normalised large-``n`` KL at the Frobenius oracle spectrum ``diag(V'CV)``.

    Non-negative by Hadamard's inequality applied to ``V'CV``.
    """
    c = np.asarray(C, dtype=np.float64)
    c_vals, _ = spd_eig(c)
    q = V.columns
    d = np.einsum("ik,ij,jk->k", q, c, q)
    n = d.size
    return 0.5 * (float(np.sum(np.log(d))) - float(np.sum(np.log(c_vals)))) / n
