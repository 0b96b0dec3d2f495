"""Permeability fields, random microstructure and Gaussian priors.

Three coefficient representations live here:

* deterministic two-scale fields k(x, y) = exp(u(x, y)) with u periodic
  (period 1) in the fast variable y, evaluated along the diagonal
  y = x/eps;
* the random reciprocal model 1/k(x) = 1/k0(x) + sigma * mu(x/eps) with
  mu a stationary, mean-zero, unit-variance Gaussian process whose
  covariance R satisfies R(0) = 1 and integrates to 1;
* truncated Karhunen-Loeve expansions u(x) = sum_m sigma_m eta_m phi_m(x)
  used as Gaussian priors on log-permeabilities.

Everything is pure given its inputs and seed; samplers are safe to call
concurrently.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CoefficientError, DomainError, ResolutionError
from .rng import stream

_BOUND_SLACK = 1e-12


# ---------------------------------------------------------------------------
# deterministic two-scale fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientField:
    """Two-scale log-permeability u(x, y) with uniform bounds on k = exp(u).

    `u` must accept numpy arrays and broadcast; y lives on the unit torus
    (u(x, y) == u(x, y + 1)).  alpha and beta bound exp(u) from below and
    above on the whole domain [a, b] x torus.
    """

    u: Callable
    alpha: float
    beta: float
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.alpha <= self.beta < np.inf):
            raise CoefficientError(
                f"need 0 < alpha <= beta < inf, got ({self.alpha}, {self.beta})")
        if not self.a < self.b:
            raise DomainError(f"empty domain [{self.a}, {self.b}]")

    def k(self, x, y):
        """Permeability exp(u(x, y))."""
        return np.exp(self.u(x, y))


def constant_field(value, a=0.0, b=1.0):
    """k identically equal to `value`."""
    logv = float(np.log(value))
    return CoefficientField(u=lambda x, y: np.full_like(np.asarray(x, float) + np.asarray(y, float), logv),
                            alpha=value, beta=value, a=a, b=b)


def exp_sin_field(amplitude=1.0, a=0.0, b=1.0):
    """k(x, y) = exp(amplitude * sin(2 pi y)), no slow variation."""
    amp = float(amplitude)
    return CoefficientField(u=lambda x, y: amp * np.sin(2.0 * np.pi * np.asarray(y, float)) + 0.0 * np.asarray(x, float),
                            alpha=np.exp(-abs(amp)), beta=np.exp(abs(amp)), a=a, b=b)


def layered_field(values=(1.0, 4.0), breaks=(0.5,), a=0.0, b=1.0):
    """Piecewise-constant-in-y field: values[i] on [breaks[i-1], breaks[i])."""
    vals = np.asarray(values, float)
    brks = np.asarray(breaks, float)
    if np.any(vals <= 0):
        raise CoefficientError("layer values must be positive")
    logv = np.log(vals)

    def u(x, y):
        yy = np.mod(np.asarray(y, float), 1.0)
        idx = np.searchsorted(brks, yy, side="right")
        return logv[idx] + 0.0 * np.asarray(x, float)

    return CoefficientField(u=u, alpha=float(vals.min()), beta=float(vals.max()), a=a, b=b)


def eval_two_scale(field: CoefficientField, x, eps: float):
    """Evaluate k along the diagonal: exp(u(x, x/eps)).

    Raises DomainError for x outside [a, b] and CoefficientError if the
    value escapes the declared [alpha, beta] bounds.
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    xa = np.asarray(x, float)
    if np.any(xa < field.a - _BOUND_SLACK) or np.any(xa > field.b + _BOUND_SLACK):
        raise DomainError(f"position outside [{field.a}, {field.b}]")
    k = field.k(xa, xa / eps)
    lo, hi = field.alpha, field.beta
    if np.any(k < lo * (1 - 1e-9) - _BOUND_SLACK) or np.any(k > hi * (1 + 1e-9) + _BOUND_SLACK):
        raise CoefficientError("coefficient escaped its declared bounds")
    return k


# ---------------------------------------------------------------------------
# random microstructure
# ---------------------------------------------------------------------------

def gaussian_covariance(x):
    """exp(-pi x^2): unit value at zero lag and unit integral."""
    return np.exp(-np.pi * np.asarray(x, float) ** 2)


@dataclass(frozen=True)
class MicrostructureModel:
    """Stationary fluctuation model for the reciprocal permeability.

    sigma is the fluctuation amplitude, epsilon the correlation length in
    the slow variable, and covariance the lag correlation R of the unit
    process; R(0) = 1 and integral(R) = 1 are checked at construction.

    clamp_ceiling caps the composed permeability: the reciprocal
    1/k0 + sigma*mu is floored at 1/clamp_ceiling so k stays in
    (0, clamp_ceiling].  None defers to 20 * sup(k0) at composition time.
    """

    sigma: float
    epsilon: float
    covariance: Callable = gaussian_covariance
    clamp_ceiling: Optional[float] = None
    covariance_name: str = "gaussian"

    def __post_init__(self):
        if self.sigma < 0:
            raise CoefficientError("sigma must be nonnegative")
        if self.epsilon <= 0:
            raise CoefficientError("epsilon must be positive")
        r0 = float(self.covariance(0.0))
        if abs(r0 - 1.0) > 1e-12:
            raise CoefficientError(f"covariance must satisfy R(0) = 1, got {r0}")
        # normalizations checked by quadrature on a wide window
        lag = np.linspace(-16.0, 16.0, 1 << 16)
        rv = self.covariance(lag)
        if np.max(np.abs(rv - self.covariance(-lag))) > 1e-12:
            raise CoefficientError("covariance must be even")
        mass = np.trapezoid(rv, lag)
        if abs(mass - 1.0) > 1e-6:
            raise CoefficientError(f"covariance must integrate to 1, got {mass}")


@dataclass(frozen=True)
class MicrostructureSample:
    """One realization of mu on a uniform slow-variable grid."""

    grid: np.ndarray
    mu_values: np.ndarray
    seed: int
    epsilon: float


def _circulant_eigenvalues(cov_first_row):
    c = np.concatenate([cov_first_row, cov_first_row[-2:0:-1]])
    lam = np.fft.fft(c).real
    floor = -1e-8 * lam.max()
    if lam.min() < floor:
        raise CoefficientError(
            "circulant embedding is not nonnegative definite; "
            "refine the grid or use a smoother covariance")
    return np.maximum(lam, 0.0), len(c)


def sample_microstructure(model: MicrostructureModel, grid, seed: int) -> MicrostructureSample:
    """Draw mu at the grid nodes, stationary with covariance R in x/epsilon.

    The grid must be uniform with spacing at most epsilon/8 so the
    correlation length is resolved.  Sampling uses circulant embedding of
    the covariance on the fast-variable grid; the same (model, grid, seed)
    always reproduces the same values.
    """
    x = np.asarray(grid, float)
    if x.ndim != 1 or len(x) < 2:
        raise ResolutionError("grid must be a 1D array with at least 2 nodes")
    dx = np.diff(x)
    if np.max(np.abs(dx - dx[0])) > 1e-9 * max(abs(dx[0]), 1e-30):
        raise ResolutionError("microstructure grid must be uniform")
    if dx[0] > model.epsilon / 8.0 * (1 + 1e-12):
        raise ResolutionError(
            f"grid spacing {dx[0]:.3g} exceeds epsilon/8 = {model.epsilon / 8:.3g}")

    n = len(x)
    ds = dx[0] / model.epsilon
    lam, m = _circulant_eigenvalues(model.covariance(ds * np.arange(n)))
    rng = stream(seed, "microstructure")
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    mu = np.fft.fft(np.sqrt(lam / m) * z).real[:n]
    return MicrostructureSample(grid=x, mu_values=mu, seed=int(seed), epsilon=model.epsilon)


@dataclass(frozen=True)
class ComposedCoefficient:
    """Evaluator for k(x) = 1 / max(1/k0(x) + sigma*mu(x), 1/clamp_ceiling).

    clamp_fraction records how often the floor was active on the sample
    nodes; warn is set when it exceeds 0.1% (the experiments are expected
    to keep clamping negligible, but the composition never fails).
    """

    k0: Callable
    sample: MicrostructureSample
    sigma: float
    clamp_ceiling: float
    clamp_fraction: float
    warn: bool

    def __call__(self, x):
        xa = np.asarray(x, float)
        mu = np.interp(xa, self.sample.grid, self.mu_values)
        recip = 1.0 / np.asarray(self.k0(xa), float) + self.sigma * mu
        return 1.0 / np.maximum(recip, 1.0 / self.clamp_ceiling)

    @property
    def mu_values(self):
        return self.sample.mu_values


def compose_random_coefficient(k0, sample: MicrostructureSample, sigma: float,
                               clamp_ceiling: Optional[float] = None) -> ComposedCoefficient:
    """Combine a slow coefficient with a fluctuation sample via reciprocals."""
    k0_nodes = np.asarray(k0(sample.grid), float)
    if np.any(k0_nodes <= 0):
        raise CoefficientError("k0 must be positive on the domain")
    if clamp_ceiling is None:
        clamp_ceiling = 20.0 * float(k0_nodes.max())
    recip = 1.0 / k0_nodes + sigma * sample.mu_values
    frac = float(np.mean(recip < 1.0 / clamp_ceiling))
    return ComposedCoefficient(k0=k0, sample=sample, sigma=float(sigma),
                               clamp_ceiling=float(clamp_ceiling),
                               clamp_fraction=frac, warn=frac > 1e-3)


def dump_microstructure_csv(path, composed: ComposedCoefficient):
    """Write (x, mu, k) rows for one composed realization."""
    x = composed.sample.grid
    with open(path, "w") as fh:
        fh.write("x,mu,k\n")
        kv = composed(x)
        for xi, mi, ki in zip(x, composed.mu_values, kv):
            fh.write(f"{float(xi)!r},{float(mi)!r},{float(ki)!r}\n")


# ---------------------------------------------------------------------------
# Gaussian priors (truncated Karhunen-Loeve expansions)
# ---------------------------------------------------------------------------

NEG_INF = float("-inf")


@dataclass(frozen=True)
class GaussianPrior:
    """Truncated expansion u(x) = mean + sum_m sigma_m eta_m phi_m(x).

    weights are the (nonnegative, summable) eigen square roots sigma_m of
    the scaled covariance operator; entries may be exactly zero to drop a
    mode from the retained set.  `scale` records the overall covariance
    scaling folded into the weights by the constructors.  `mean` is an
    optional coefficient-space mean (zeros by default).
    """

    basis: Sequence[Callable]
    weights: np.ndarray
    scale: float = 1.0
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        object.__setattr__(self, "weights", w)
        if len(self.basis) != len(w):
            raise CoefficientError("one weight per basis function required")
        if np.any(w < 0):
            raise CoefficientError("weights must be nonnegative")
        m = np.zeros(len(w)) if self.mean is None else np.asarray(self.mean, float)
        if len(m) != len(w):
            raise CoefficientError("mean must match the truncation")
        object.__setattr__(self, "mean", m)

    @property
    def truncation(self):
        return len(self.weights)


def fourier_basis(a, b, n_modes):
    """Orthonormal L2([a, b]) basis: constant, then alternating cos/sin."""
    width = b - a
    funcs = [lambda x, w=width: np.full_like(np.asarray(x, float), 1.0 / np.sqrt(w))]
    j = 1
    while len(funcs) < n_modes:
        funcs.append(lambda x, j=j, w=width, a=a: np.sqrt(2.0 / w) * np.cos(2 * np.pi * j * (np.asarray(x, float) - a) / w))
        if len(funcs) < n_modes:
            funcs.append(lambda x, j=j, w=width, a=a: np.sqrt(2.0 / w) * np.sin(2 * np.pi * j * (np.asarray(x, float) - a) / w))
        j += 1
    return funcs


def default_prior(a=0.0, b=1.0, n_modes=4, sigma0=1.0, decay=2.0, scale=1.0,
                  mean=None) -> GaussianPrior:
    """Fourier prior with weights sigma0 * m^(-decay) / sqrt(scale)."""
    m = np.arange(1, n_modes + 1, dtype=float)
    w = sigma0 * m ** (-decay) / np.sqrt(scale)
    return GaussianPrior(basis=fourier_basis(a, b, n_modes), weights=w,
                         scale=scale, mean=mean)


def coefficient_prior(weights, mean=None) -> GaussianPrior:
    """Prior directly on a coefficient vector (basis functions unused)."""
    w = np.asarray(weights, float)
    placeholder = [(lambda x: np.asarray(x, float))] * len(w)
    return GaussianPrior(basis=placeholder, weights=w, mean=mean)


def draw_coefficients(prior: GaussianPrior, seed: int) -> np.ndarray:
    """One coefficient vector theta = mean + sigma_m eta_m."""
    rng = stream(seed, "prior")
    return prior.mean + prior.weights * rng.standard_normal(prior.truncation)


def expand(prior: GaussianPrior, theta, grid) -> np.ndarray:
    """Evaluate sum_m theta_m phi_m on the grid."""
    th = np.asarray(theta, float)
    x = np.asarray(grid, float)
    out = np.zeros_like(x)
    for t, phi in zip(th, prior.basis):
        if t != 0.0:
            out += t * phi(x)
    return out


def sample_prior_draw(prior: GaussianPrior, grid, seed: int) -> np.ndarray:
    """Draw u(x) = sum_m sigma_m eta_m phi_m(x) at the grid nodes."""
    if prior.truncation < 1:
        raise CoefficientError("prior truncation must be at least 1")
    return expand(prior, draw_coefficients(prior, seed), grid)


def prior_log_density(prior: GaussianPrior, theta) -> float:
    """Log density of theta up to an additive constant.

    Convention: the normalizing constant is dropped, so the mode scores 0.
    A mode with zero weight and a nonzero (centered) coefficient returns
    -inf rather than raising.
    """
    th = np.asarray(theta, float)
    if th.shape != prior.weights.shape:
        raise CoefficientError(f"theta must have length {prior.truncation}")
    centered = th - prior.mean
    zero = prior.weights == 0.0
    if np.any(zero & (centered != 0.0)):
        return NEG_INF
    active = ~zero
    return float(-0.5 * np.sum((centered[active] / prior.weights[active]) ** 2))
