"""Oracle spectra and KL-optimal eigenvalues for a fixed RIE basis."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .divergence import EstimatorKind, KlEstimate
from .linalg import OrthonormalBasis, PopulationModel, Spectrum, spd_eig
from .sampling import RngStream, sample_mvt

__all__ = [
    "Constraint",
    "FrozenTObjective",
    "OptimResult",
    "OptimizationError",
    "OptimizerOptions",
    "kl_gaussian_gradient",
    "minimize_kl_gaussian",
    "minimize_kl_t",
    "minimize_spectrum",
    "oracle_frobenius",
]


class OptimizationError(RuntimeError):
    """The objective became undefined (NaN) during the search."""


class Constraint(str, enum.Enum):
    TRACE_EQUALS_N = "trace_equals_n"
    UNCONSTRAINED = "unconstrained"


@dataclass(frozen=True)
class OptimizerOptions:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    constraint: Constraint = Constraint.TRACE_EQUALS_N
    mc_samples: int = 10_000
    finite_diff_step: float = 1e-6
    lambda_floor: float = 1e-6

    def __post_init__(self) -> None:
        object.__setattr__(self, "constraint", Constraint(self.constraint))
        if self.lambda_floor <= 0:
            raise ValueError("lambda_floor must be positive")
        if self.finite_diff_step <= 0:
            raise ValueError("finite_diff_step must be positive")
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    @classmethod
    def for_monte_carlo(cls, **kw) -> OptimizerOptions:
        kw.setdefault("gradient_tolerance", 1e-4)
        opts = cls(**kw)
        if opts.mc_samples < 100:
            raise ValueError("mc_samples must be at least 100 for a Monte Carlo objective")
        return opts


@dataclass(frozen=True)
class OptimResult:
    spectrum: Spectrum
    objective: KlEstimate
    iterations: int
    converged: bool
    kkt_residual: float
    history: tuple[float, ...] = field(default=(), compare=False)


def _diag_quadratic(C, V: OrthonormalBasis) -> NDArray[np.float64]:
    c = np.asarray(C, dtype=np.float64)
    q = V.columns
    if c.shape != q.shape:
        raise ValueError(f"dimension mismatch: C is {c.shape}, basis is {q.shape}")
    return np.einsum("ik,ij,jk->k", q, c, q)


def oracle_frobenius(C, V: OrthonormalBasis) -> Spectrum:
    """Frobenius oracle: ``lambda_k = v_k' C v_k``, in the column order of ``V``."""
    spd_eig(C)
    return Spectrum(_diag_quadratic(C, V))


def kl_gaussian_gradient(C, V: OrthonormalBasis, L) -> NDArray[np.float64]:
    """Gradient of the Gaussian KL in the eigenvalues of ``Xi = V diag(L) V'``."""
    lam = np.asarray(L, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("eigenvalues must be strictly positive")
    d = _diag_quadratic(C, V)
    return 0.5 * (1.0 / lam - d / (lam * lam))


Objective = Callable[[NDArray[np.float64]], float]


def _fd_gradient(f: Objective, x: NDArray[np.float64], h: float) -> NDArray[np.float64]:
    g = np.empty_like(x)
    for k in range(x.size):
        step = h * max(1.0, abs(x[k]))
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def _kkt(
    x: NDArray[np.float64], g: NDArray[np.float64], floor: float, constrained: bool
) -> tuple[float, NDArray[np.bool_], float]:
    at_floor = x <= floor * (1 + 1e-12)
    free = ~at_floor
    mu = float(g[free].mean()) if constrained and free.any() else 0.0
    # a bound is rightly active only if the reduced gradient pushes into it
    active = at_floor & (g - mu > 0)
    free = ~active
    if constrained and free.any():
        mu = float(g[free].mean())
    res = float(np.max(np.abs(g[free] - mu))) if free.any() else 0.0
    if active.any():
        res = max(res, float(np.max(np.maximum(0.0, -(g[active] - mu)))))
    return res, free, mu


def minimize_spectrum(
    fun: Objective,
    x0: NDArray[np.float64],
    opts: OptimizerOptions,
    *,
    grad: Callable[[NDArray[np.float64]], NDArray[np.float64]] | None = None,
    hess: Callable[[NDArray[np.float64]], NDArray[np.float64]] | None = None,
    trace_target: float | None = None,
    callback: Callable[[NDArray[np.float64]], None] | None = None,
) -> tuple[NDArray[np.float64], float, int, bool, float, list[float]]:
    """Sequential quadratic programming over eigenvalues.

    Each iteration solves the equality-constrained quadratic model on the
    free variables (Hessian eigen-shifted to be positive definite on the
    constraint null space), truncates the step at ``lambda_floor`` and
    backtracks until the Armijo condition holds. When the Newton direction
    fails the line search the projected gradient is tried instead.
    Missing ``grad`` falls back to central differences; missing ``hess``
    to a BFGS approximation. ``callback`` sees every accepted iterate,
    the starting point included.

    Returns ``(x, f, iterations, converged, kkt_residual, history)``.
    """
    floor = opts.lambda_floor
    constrained = opts.constraint is Constraint.TRACE_EQUALS_N
    x = np.maximum(np.array(x0, dtype=np.float64), floor)
    n = x.size
    if constrained:
        target = float(n) if trace_target is None else trace_target
        x = _restore_trace(x, target, floor, np.ones(n, dtype=bool))
    gfun = grad or (lambda z: _fd_gradient(fun, z, opts.finite_diff_step))

    f = fun(x)
    if not math.isfinite(f):
        raise OptimizationError(f"objective is not finite at the starting point ({f})")
    g = gfun(x)
    B = np.eye(n) if hess is None else None
    history = [f]
    if callback:
        callback(x.copy())
    res, free, _ = _kkt(x, g, floor, constrained)
    it = 0
    while res > opts.gradient_tolerance and it < opts.max_iterations:
        it += 1
        H = hess(x) if hess is not None else B
        step = None
        for direction in ("newton", "gradient"):
            p = _direction(H, g, free, constrained, direction)
            slope = float(g @ p)
            if slope >= 0:
                continue
            neg = p < 0
            amax = float(np.min((x[neg] - floor) / -p[neg])) if neg.any() else math.inf
            alpha = min(1.0, amax)
            for _ in range(60):
                trial = np.maximum(x + alpha * p, floor)
                if constrained:
                    trial = _restore_trace(trial, target, floor, free)
                ft = fun(trial)
                if math.isnan(ft):
                    raise OptimizationError(f"objective is NaN at iteration {it}")
                if ft <= f + 1e-4 * alpha * slope:
                    step = (trial, ft)
                    break
                alpha *= 0.5
            if step is not None:
                break
        if step is None:
            break
        x_new, f_new = step
        g_new = gfun(x_new)
        if hess is None:
            B = _bfgs(B, x_new - x, g_new - g)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if callback:
            callback(x.copy())
        res, free, _ = _kkt(x, g, floor, constrained)
    return x, f, it, res <= opts.gradient_tolerance, res, history


def _restore_trace(
    x: NDArray[np.float64], target: float, floor: float, free: NDArray[np.bool_]
) -> NDArray[np.float64]:
    x = x.copy()
    for _ in range(50):
        gap = target - float(x.sum())
        if abs(gap) <= 1e-13 * max(1.0, abs(target)):
            break
        idx = free & (x > floor) if gap < 0 else free
        if not idx.any():
            idx = np.ones_like(free)
        x[idx] += gap / idx.sum()
        x = np.maximum(x, floor)
    return x


def _direction(
    H: NDArray[np.float64],
    g: NDArray[np.float64],
    free: NDArray[np.bool_],
    constrained: bool,
    kind: str,
) -> NDArray[np.float64]:
    p = np.zeros_like(g)
    k = int(free.sum())
    if k == 0:
        return p
    gf = g[free]
    P = np.eye(k) - (np.full((k, k), 1.0 / k) if constrained else 0.0)
    pg = P @ gf
    if kind == "gradient":
        p[free] = -pg
        return p
    Hf = H[np.ix_(free, free)]
    Hr = P @ Hf @ P
    w, U = np.linalg.eigh(0.5 * (Hr + Hr.T))
    scale = max(float(np.max(np.abs(w))), 1e-12)
    # keep curvature positive on the null space; the constraint direction
    # (eigenvalue ~0 under P) is harmless since pg has no component there
    w = np.maximum(np.abs(w), 1e-8 * scale)
    p[free] = P @ (-(U @ ((U.T @ pg) / w)))
    return p


def _bfgs(B: NDArray[np.float64], s: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
    sy = float(s @ y)
    if sy <= 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
        return B
    Bs = B @ s
    return B - np.outer(Bs, Bs) / float(s @ Bs) + np.outer(y, y) / sy


def _start(model: PopulationModel, opts: OptimizerOptions, x0) -> NDArray[np.float64]:
    n = model.n
    if x0 is not None:
        x = np.asarray(x0, dtype=np.float64).reshape(-1)
        if x.size != n:
            raise ValueError(f"start has {x.size} entries, expected {n}")
        return x
    return np.ones(n)


def _result(x, f, it, conv, res, hist, kind, se=0.0, m=1, constrained=False) -> OptimResult:
    target = float(x.size) if constrained else None
    return OptimResult(
        Spectrum(x, trace_target=target),
        KlEstimate(f, se, m, kind),
        it,
        conv,
        res,
        tuple(hist),
    )


def minimize_kl_gaussian(
    model: PopulationModel, opts: OptimizerOptions | None = None, *, x0=None, callback=None
) -> OptimResult:
    """Minimise the closed-form Gaussian KL over the eigenvalues on ``model.rie_basis``."""
    opts = opts or OptimizerOptions()
    d = _diag_quadratic(model.C, model.rie_basis)
    logdet_c = float(np.sum(np.log(model.c_spectrum.values)))
    n = d.size

    def fun(lam):
        return 0.5 * (float(np.sum(d / lam + np.log(lam))) - n - logdet_c)

    def grad(lam):
        return 0.5 * (1.0 / lam - d / (lam * lam))

    def hess(lam):
        return np.diag(0.5 * (2.0 * d / lam**3 - 1.0 / lam**2))

    x, f, it, conv, res, hist = minimize_spectrum(
        fun, _start(model, opts, x0), opts, grad=grad, hess=hess, callback=callback
    )
    return _result(
        x, f, it, conv, res, hist, EstimatorKind.CLOSED_FORM,
        constrained=opts.constraint is Constraint.TRACE_EQUALS_N,
    )


class FrozenTObjective:
    """Monte Carlo KL(C || V diag(L) V') on a fixed Student's t sample.

    The sample is drawn once, so the estimate is a smooth deterministic
    function of ``L`` with analytic gradient and Hessian.
    """

    def __init__(self, model: PopulationModel, nu: float, m: int, rng: RngStream) -> None:
        if not nu > 0:
            raise ValueError(f"nu must be positive, got {nu}")
        self.nu = float(nu)
        self.n = model.n
        block = sample_mvt(model.C, nu, m, rng)
        self.m = block.n_samples
        self.y2 = (block.data @ model.rie_basis.columns) ** 2
        c_vals, c_vecs = spd_eig(model.C)
        b = np.sum((block.data @ (c_vecs / np.sqrt(c_vals))) ** 2, axis=1)
        self.logdet_c = float(np.sum(np.log(c_vals)))
        if math.isinf(self.nu):
            self._base = 0.5 * b
        else:
            self._base = 0.5 * (self.n + self.nu) * np.log1p(b / self.nu)

    def terms(self, lam: NDArray[np.float64]) -> NDArray[np.float64]:
        lam = np.asarray(lam, dtype=np.float64)
        a = self.y2 @ (1.0 / lam)
        const = 0.5 * (float(np.sum(np.log(lam))) - self.logdet_c)
        if math.isinf(self.nu):
            return const + 0.5 * a - self._base
        return const + 0.5 * (self.n + self.nu) * np.log1p(a / self.nu) - self._base

    def estimate(self, lam) -> KlEstimate:
        t = self.terms(lam)
        se = float(np.std(t, ddof=1) / math.sqrt(t.size))
        return KlEstimate(float(t.mean()), se, t.size, EstimatorKind.MONTE_CARLO)

    def __call__(self, lam) -> float:
        return float(self.terms(lam).mean())

    def _weights(self, lam):
        a = self.y2 @ (1.0 / lam)
        if math.isinf(self.nu):
            return np.full(a.size, 0.5)
        return 0.5 * (self.n + self.nu) / (self.nu + a)

    def gradient(self, lam) -> NDArray[np.float64]:
        lam = np.asarray(lam, dtype=np.float64)
        r = self._weights(lam)
        s = (r @ self.y2) / self.m
        return 0.5 / lam - s / (lam * lam)

    def hessian(self, lam) -> NDArray[np.float64]:
        lam = np.asarray(lam, dtype=np.float64)
        r = self._weights(lam)
        diag = -0.5 / lam**2 + 2.0 * ((r @ self.y2) / self.m) / lam**3
        H = np.diag(diag)
        if not math.isinf(self.nu):
            # r^2 / ((n+nu)/2) is the derivative weight of r w.r.t. a
            s = self.y2 / (lam * lam)
            w = r * r / (0.5 * (self.n + self.nu))
            H -= (s * w[:, None]).T @ s / self.m
        return H


def minimize_kl_t(
    model: PopulationModel,
    nu: float,
    opts: OptimizerOptions | None = None,
    rng: RngStream | None = None,
    *,
    x0=None,
    objective: FrozenTObjective | None = None,
    analytic: bool = True,
    callback=None,
) -> OptimResult:
    """KL-optimal eigenvalues for a Student's t population on a frozen sample.

    Starts from the Frobenius oracle (rescaled onto the trace constraint when
    needed) unless ``x0`` is given, so the result never scores worse than the
    oracle on the same sample. ``analytic=False`` switches to finite-difference
    gradients and BFGS curvature.
    """
    opts = opts or OptimizerOptions.for_monte_carlo()
    if objective is None:
        if rng is None:
            raise ValueError("an RngStream is required to draw the frozen sample")
        objective = FrozenTObjective(model, nu, opts.mc_samples, rng)
    constrained = opts.constraint is Constraint.TRACE_EQUALS_N
    if x0 is None:
        x0 = oracle_frobenius(model.C, model.rie_basis).values.copy()
        if constrained:
            x0 *= model.n / x0.sum()
    x, _, it, conv, res, hist = minimize_spectrum(
        objective,
        np.asarray(x0, dtype=np.float64),
        opts,
        grad=objective.gradient if analytic else None,
        hess=objective.hessian if analytic else None,
        callback=callback,
    )
    est = objective.estimate(x)
    spectrum = Spectrum(x, trace_target=float(x.size) if constrained else None)
    return OptimResult(spectrum, est, it, conv, res, tuple(hist))
