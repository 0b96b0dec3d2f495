"""Least-squares estimation, regularized solvers and posterior machinery.

The misfit of a parameter vector theta against data y is the weighted
least squares

    Phi(theta) = 1/2 sum_j (y_j - G_j(theta))^2 / Gamma_jj.

For the scalar log-permeability model the predictions are
G_j(u) = exp(-u) l_j(p*), with p* the reference solve at unit
coefficient, and the misfit has the unique minimizer

    exp(-u_bar) = sum_j y_j l_j(p*) / sum_j l_j(p*)^2,

which can fail by sign under large noise; that case is surfaced as a
flag, never hidden.  Two large-data experiments probe this estimator:
one with data from the slow model itself (errors shrink like
N^{-1/2}), and one with data from the oscillatory model, where bounded
functionals recover the effective parameter as eps -> 0 while
microscale difference quotients do not.

Regularized minimization comes in two flavours: a bounded scalar search
(coarse grid plus golden-section refinement) and a quadratic penalty
minimized with a derivative-free simplex and restarts.  The Bayesian
layer exposes the unnormalized posterior log density, Hellinger
distances on quadrature grids, and small-ball probability ratios
estimated by importance sampling from the prior with weights
exp(-Phi).
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import elliptic1d as el
from .elliptic1d import (DIFFERENCE_QUOTIENT, Functional, Grid1D, ObservationSet,
                         SourceTerm, apply_functionals, difference_quotient,
                         grid_for_scale, point_eval, solve_exact)
from .errors import CoverageError, DomainError, PreconditionError
from .fields import CoefficientField, GaussianPrior, prior_log_density
from .homogenization import harmonic_homogenize
from .rng import stream

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# misfit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MisfitSpec:
    """Forward map theta -> predicted observations plus diagonal covariance."""

    forward: Callable
    Gamma: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.Gamma, float)
        object.__setattr__(self, "Gamma", G)
        if np.any(G <= 0):
            raise DomainError("covariance entries must be positive")


def misfit(spec: MisfitSpec, y, theta) -> float:
    """Phi(theta) = 1/2 |y - G(theta)|^2 weighted by the noise covariance."""
    y = np.asarray(y, float)
    pred = np.asarray(spec.forward(theta), float)
    if pred.shape != y.shape:
        raise DomainError("prediction/data dimension mismatch")
    return float(0.5 * np.sum((y - pred) ** 2 / spec.Gamma))


# ---------------------------------------------------------------------------
# scalar estimator and its large-data behaviour
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarEstimate:
    """Closed-form minimizer; sign_failure marks a nonpositive ratio."""

    u_bar: float
    ratio: float
    sign_failure: bool


def scalar_estimate(obs: ObservationSet, lstar) -> ScalarEstimate:
    """Least-squares estimate of the scalar log coefficient.

    lstar holds l_j(p*) for the reference solve; the estimate satisfies
    exp(-u_bar) = <y, lstar> / <lstar, lstar>.  A nonpositive ratio (possible
    under large noise) is returned flagged with u_bar = nan.
    """
    ls = np.asarray(lstar, float)
    denom = float(np.sum(ls**2))
    if denom <= 0:
        raise PreconditionError("sum of squared reference observations vanishes")
    ratio = float(np.dot(obs.y, ls) / denom)
    if ratio <= 0:
        return ScalarEstimate(u_bar=float("nan"), ratio=ratio, sign_failure=True)
    return ScalarEstimate(u_bar=float(-np.log(ratio)), ratio=ratio, sign_failure=False)


def uniform_point_functionals(a, b, n) -> List[Functional]:
    """Point evaluations at n uniformly spaced interior positions."""
    xs = a + (b - a) * np.arange(1, n + 1) / (n + 1)
    return [point_eval(x) for x in xs]


def uniform_dq_functionals(a, b, n, h) -> List[Functional]:
    """Difference quotients (p(x+h) - p(x))/h at uniform interior positions."""
    xs = a + (b - a) * np.arange(1, n + 1) / (n + 1)
    xs = np.minimum(xs, b - h * 1.0000001)
    return [difference_quotient(x, h) for x in xs]


def _check_mean_square(lstar, n):
    ms = float(np.sum(np.asarray(lstar) ** 2)) / n
    if ms < 1e-12:
        raise PreconditionError(
            f"functional family is degenerate: mean square {ms:.3e}")
    return ms


@dataclass(frozen=True)
class ExperimentRow:
    N: int
    eps: float
    mean_err: float
    stderr: float
    flag_rate: float


def write_experiment_csv(path, rows: Sequence[ExperimentRow]):
    with open(path, "w") as fh:
        fh.write("N,eps,mean_err,stderr,flag_rate\n")
        for r in rows:
            fh.write(f"{r.N},{float(r.eps)!r},{float(r.mean_err)!r},"
                     f"{float(r.stderr)!r},{float(r.flag_rate)!r}\n")


def loglog_slope(xs, ys):
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    keep = ys > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)[0])


def consistency_experiment(u0: float, N_list, gamma: float, replicates: int,
                           seed: int, a=0.0, b=1.0,
                           source: Optional[SourceTerm] = None,
                           grid: Optional[Grid1D] = None):
    """Recovery error of the scalar estimator on data from the slow model.

    Data are y_j = l_j(p0) + gamma xi_j with p0 solved at exp(u0); the
    error per replicate is |ratio - exp(-u0)|.  Returns (rows, slope) with
    the fitted log-log slope of the mean error against N.
    """
    source = source or el.constant_source(1.0)
    grid = grid or Grid1D(a, b, 4097)
    pstar = solve_exact(lambda x: np.ones_like(x), source, grid)
    p0 = solve_exact(lambda x: np.exp(u0) * np.ones_like(x), source, grid)

    rows = []
    target = np.exp(-u0)
    for N in N_list:
        fns = uniform_point_functionals(a, b, N)
        lstar = apply_functionals(fns, pstar)
        _check_mean_square(lstar, N)
        data0 = apply_functionals(fns, p0)
        errs = np.empty(replicates)
        flags = 0
        for r in range(replicates):
            noise = gamma * stream(seed, "consistency", N, r).standard_normal(N) if gamma > 0 else 0.0
            obs = ObservationSet(functionals=fns, y=data0 + noise, gamma=gamma)
            est = scalar_estimate(obs, lstar)
            flags += est.sign_failure
            errs[r] = abs(est.ratio - target)
        stderr = float(errs.std(ddof=1) / np.sqrt(replicates)) if replicates > 1 else 0.0
        rows.append(ExperimentRow(N=N, eps=0.0, mean_err=float(errs.mean()),
                                  stderr=stderr, flag_rate=flags / replicates))
    slope = loglog_slope([r.N for r in rows], [r.mean_err for r in rows])
    return rows, slope


def calibrate_field(field: CoefficientField, u0_target: float,
                    n_y: int = 1 << 14) -> CoefficientField:
    """Rescale a field with x-independent microstructure so its harmonic
    average equals exp(u0_target)."""
    k_bar = harmonic_homogenize(field, 0.5 * (field.a + field.b), n_y=n_y)
    s = float(np.exp(u0_target) / k_bar)
    return CoefficientField(u=lambda x, y: field.u(x, y) + np.log(s),
                            alpha=field.alpha * s, beta=field.beta * s,
                            a=field.a, b=field.b)


def multiscale_consistency_experiment(field: CoefficientField, u0_target: float,
                                      N_list, eps_list, gamma: float,
                                      replicates: int, seed: int,
                                      functional_kind: str = "point_eval",
                                      dq_scale: float = 0.5,
                                      source: Optional[SourceTerm] = None,
                                      nodes_per_period: int = 16):
    """Recovery error when the data come from the oscillatory model.

    The field must be calibrated so its harmonic average is exp(u0_target)
    (see calibrate_field).  functional_kind picks the observation family:
    "point_eval" realizes the benign double limit, while
    "scaled_difference_quotient" probes the gradient oscillation with step
    h = dq_scale * eps.  A quotient spanning exactly one microstructure
    period averages the oscillation away, so the rough probe defaults to
    half a period.
    """
    source = source or el.constant_source(1.0)
    a, b = field.a, field.b
    eps_arr = sorted(eps_list, reverse=True)
    grid = grid_for_scale(a, b, min(eps_arr), nodes_per_period)
    pstar = solve_exact(lambda x: np.ones_like(x), source, grid)
    target = np.exp(-u0_target)

    rows = []
    for eps in eps_arr:
        pe = solve_exact(lambda x: field.k(x, x / eps), source, grid, eps=eps)
        for N in N_list:
            if functional_kind == DIFFERENCE_QUOTIENT:
                fns = uniform_dq_functionals(a, b, N, dq_scale * eps)
            else:
                fns = uniform_point_functionals(a, b, N)
            lstar = apply_functionals(fns, pstar)
            _check_mean_square(lstar, N)
            data0 = apply_functionals(fns, pe)
            errs = np.empty(replicates)
            flags = 0
            for r in range(replicates):
                noise = gamma * stream(seed, "multiscale", N, r).standard_normal(N) if gamma > 0 else 0.0
                obs = ObservationSet(functionals=fns, y=data0 + noise, gamma=gamma)
                est = scalar_estimate(obs, lstar)
                flags += est.sign_failure
                errs[r] = abs(est.ratio - target)
            stderr = float(errs.std(ddof=1) / np.sqrt(replicates)) if replicates > 1 else 0.0
            rows.append(ExperimentRow(N=N, eps=eps, mean_err=float(errs.mean()),
                                      stderr=stderr, flag_rate=flags / replicates))
    return rows


# ---------------------------------------------------------------------------
# regularized minimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundedSpec:
    """Admissible interval [-alpha_bound, alpha_bound] for the scalar search."""

    alpha_bound: float

    def __post_init__(self):
        if self.alpha_bound <= 0:
            raise DomainError("alpha_bound must be positive")


def bounded_solve(objective: Callable, spec: BoundedSpec, coarse: int = 64,
                  tol: float = 1e-10) -> float:
    """Global scalar minimization over the admissible interval.

    A coarse scan brackets the minimum and golden-section refinement
    shrinks the bracket below `tol`.  A flat objective returns the
    interval midpoint (documented tie-break).
    """
    alpha = spec.alpha_bound
    us = np.linspace(-alpha, alpha, coarse)
    vals = np.array([objective(u) for u in us])
    if vals.max() - vals.min() <= 1e-14 * (1.0 + abs(vals.max())):
        return 0.0  # flat objective: interval midpoint
    i = int(np.argmin(vals))
    lo = us[max(i - 1, 0)]
    hi = us[min(i + 1, coarse - 1)]
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = objective(x1), objective(x2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = objective(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = objective(x2)
    u = 0.5 * (lo + hi)
    return float(min(max(u, -alpha), alpha))


@dataclass(frozen=True)
class TikhonovSpec:
    """Penalty strength and per-coefficient weights of the quadratic norm."""

    lam: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        object.__setattr__(self, "weights", w)
        if self.lam <= 0:
            raise DomainError("lambda must be positive")
        if np.any(w <= 0):
            raise DomainError("penalty weights must be positive")


@dataclass(frozen=True)
class OptimizeResult:
    theta: np.ndarray
    value: float
    converged: bool
    n_evals: int


def _simplex_restarts(objective, starts, max_evals, tol):
    best = None
    total = 0
    ok = False
    for s in starts:
        res = minimize(objective, np.asarray(s, float), method="Nelder-Mead",
                       options={"maxfev": max_evals, "xatol": tol, "fatol": tol,
                                "disp": False})
        total += res.nfev
        ok = ok or bool(res.success)
        if best is None or res.fun < best.fun:
            best = res
    return OptimizeResult(theta=np.atleast_1d(best.x), value=float(best.fun),
                          converged=ok, n_evals=total)


def tikhonov_solve(misfit_fn: Callable, spec: TikhonovSpec, theta0,
                   max_evals: int = 2000, tol: float = 1e-9) -> OptimizeResult:
    """Minimize (lam/2) sum w_m theta_m^2 + Phi(theta) by simplex restarts.

    Restarts launch from theta0 and from +-1 prior standard deviation
    (1/sqrt(lam w_m)) around it; non-convergence is flagged on the result,
    not raised.
    """
    th0 = np.atleast_1d(np.asarray(theta0, float))
    w = spec.weights

    def objective(theta):
        return 0.5 * spec.lam * float(np.sum(w * theta**2)) + misfit_fn(theta)

    # cap the restart offset: a near-vanishing penalty makes 1/sqrt(lam w)
    # astronomically wide and overflows exponential forward maps
    sd = np.minimum(1.0 / np.sqrt(spec.lam * w), 100.0)
    return _simplex_restarts(objective, [th0, th0 + sd, th0 - sd], max_evals, tol)


# ---------------------------------------------------------------------------
# Bayesian layer
# ---------------------------------------------------------------------------

def posterior_log_density(prior: GaussianPrior, misfit_fn: Callable, theta) -> float:
    """Unnormalized log posterior: -Phi(theta) + log prior density."""
    return -misfit_fn(np.asarray(theta, float)) + prior_log_density(prior, theta)


def tikhonov_functional(prior: GaussianPrior, misfit_fn: Callable, theta) -> float:
    """Phi(theta) plus the squared prior norm: the negated log posterior."""
    return -posterior_log_density(prior, misfit_fn, theta)


def _normalize_on_grid(logdens, axes):
    if isinstance(axes, np.ndarray) and axes.ndim == 1:
        axes = (axes,)
    mesh = np.meshgrid(*axes, indexing="ij")
    ld = np.asarray(logdens(*mesh), float)
    ld = ld - ld.max()
    rho = np.exp(ld)
    Z = rho
    for ax in reversed(range(len(axes))):
        Z = np.trapezoid(Z, axes[ax], axis=ax)
    rho = rho / Z
    # coverage: the normalized density must be negligible on the boundary
    edge = 0.0
    for ax in range(len(axes)):
        sl_lo = [slice(None)] * len(axes)
        sl_hi = [slice(None)] * len(axes)
        sl_lo[ax] = 0
        sl_hi[ax] = -1
        span = axes[ax][-1] - axes[ax][0]
        edge = max(edge, float(np.max(rho[tuple(sl_lo)]) * span),
                   float(np.max(rho[tuple(sl_hi)]) * span))
    if edge > 1e-8:
        raise CoverageError(
            f"quadrature window too small: boundary mass indicator {edge:.3e}")
    return rho, axes


def hellinger_distance(logdens1: Callable, logdens2: Callable, axes) -> float:
    """Hellinger distance of two densities normalized on a quadrature grid.

    axes is a 1D grid (scalar parameter) or a tuple of two grids.  Both
    densities must be negligible on the grid boundary, otherwise a
    coverage error is raised.  The result lies in [0, 1].
    """
    rho1, axes = _normalize_on_grid(logdens1, axes)
    rho2, _ = _normalize_on_grid(logdens2, axes)
    diff2 = (np.sqrt(rho1) - np.sqrt(rho2)) ** 2
    for ax in reversed(range(len(axes))):
        diff2 = np.trapezoid(diff2, axes[ax], axis=ax)
    return float(np.sqrt(0.5 * diff2))


@dataclass(frozen=True)
class SmallBallRow:
    delta: float
    ratio: float
    stderr: float
    hits1: int
    hits2: int
    inconclusive: bool


def small_ball_ratio(prior: GaussianPrior, misfit_fn: Callable, z1, z2,
                     delta_list, samples: int, seed: int,
                     vectorized: bool = False):
    """Monte Carlo ratios of posterior small-ball probabilities.

    Balls are sup-norm balls in coefficient space around z1 and z2.  The
    posterior is sampled by importance weighting prior draws with
    exp(-Phi); the companion value exp(I(z2) - I(z1)) with
    I = Phi - log prior density is returned for comparison (it is the
    delta -> 0 limit of the ratio).  Zero hits in either ball flag the row
    as inconclusive instead of raising.  `vectorized` promises misfit_fn
    accepts a (samples, M) block and returns one value per row.
    """
    z1 = np.atleast_1d(np.asarray(z1, float))
    z2 = np.atleast_1d(np.asarray(z2, float))
    M = prior.truncation
    rng = stream(seed, "smallball")
    theta = prior.mean + prior.weights * rng.standard_normal((samples, M))
    if vectorized:
        logw = -np.asarray(misfit_fn(theta), float)
    else:
        logw = -np.array([misfit_fn(t) for t in theta])
    w = np.exp(logw - logw.max())

    d1 = np.max(np.abs(theta - z1), axis=1)
    d2 = np.max(np.abs(theta - z2), axis=1)
    rows = []
    for delta in delta_list:
        a = w * (d1 < delta)
        bvals = w * (d2 < delta)
        hits1, hits2 = int(np.sum(d1 < delta)), int(np.sum(d2 < delta))
        if hits1 == 0 or hits2 == 0:
            rows.append(SmallBallRow(delta=float(delta), ratio=float("nan"),
                                     stderr=float("nan"), hits1=hits1, hits2=hits2,
                                     inconclusive=True))
            continue
        A, B = a.mean(), bvals.mean()
        ratio = A / B
        va = a.var(ddof=1) / samples
        vb = bvals.var(ddof=1) / samples
        cab = np.cov(a, bvals, ddof=1)[0, 1] / samples
        stderr = abs(ratio) * np.sqrt(max(va / A**2 + vb / B**2 - 2 * cab / (A * B), 0.0))
        rows.append(SmallBallRow(delta=float(delta), ratio=float(ratio),
                                 stderr=float(stderr), hits1=hits1, hits2=hits2,
                                 inconclusive=False))
    I1 = misfit_fn(z1) - prior_log_density(prior, z1)
    I2 = misfit_fn(z2) - prior_log_density(prior, z2)
    return rows, float(np.exp(I2 - I1))


# ---------------------------------------------------------------------------
# ready-made scalar forward model
# ---------------------------------------------------------------------------

def scalar_log_forward(functionals: Sequence[Functional],
                       source: Optional[SourceTerm] = None,
                       a=0.0, b=1.0, n=4097):
    """Forward map u -> exp(-u) l(p*) for the scalar log-coefficient model.

    Returns (forward, lstar); the reference observations are computed once.
    """
    source = source or el.constant_source(1.0)
    grid = Grid1D(a, b, n)
    pstar = solve_exact(lambda x: np.ones_like(x), source, grid)
    lstar = apply_functionals(functionals, pstar)

    def forward(theta):
        u = float(np.atleast_1d(theta)[0])
        return np.exp(-u) * lstar

    return forward, lstar
