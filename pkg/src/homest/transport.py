"""Particle transport in oscillatory versus effective Darcy velocities.

On a periodic box of length L the pressure problem closes with
k p' = -F + c where c = int(F/k) / int(1/k), and the physical velocity is
v = -k p' = F - c (so that div v = f holds exactly).  Particles follow

    dX = v_eps(X)/phi dt + sqrt(2 eta0 eps) dW

against the deterministic reference dX0/dt = v0(X0)/phi driven by the
homogenized velocity.  Path discrepancies are measured with the torus
metric, so every reported error is at most L/2.

The step size must satisfy dt <= dt_safety * eps^2: the velocity varies on
scale eps and the noise is O(sqrt(eps)).  Replicates draw from independent
keyed streams and are reduced in index order, so ensembles are
reproducible regardless of execution order.
"""

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .elliptic1d import Grid1D, SourceTerm, grid_for_scale
from .errors import ResolutionError, SolvabilityError
from .fields import CoefficientField
from .homogenization import harmonic_homogenize
from .rng import stream

DT_SAFETY = 0.1
_NOISE_BLOCK = 4096


@dataclass(frozen=True)
class TransportConfig:
    phi: float
    eta0: float
    T: float
    dt: float
    x_init: float
    eps: float
    L: float
    replicates: int
    seed: int
    dt_safety: float = DT_SAFETY

    def __post_init__(self):
        if self.phi <= 0:
            raise SolvabilityError("porosity must be positive")
        if self.replicates < 1:
            raise SolvabilityError("need at least one replicate")

    def check_dt(self):
        if self.dt > self.dt_safety * self.eps**2 * (1 + 1e-12):
            raise ResolutionError(
                f"dt = {self.dt:.3g} exceeds dt_safety*eps^2 = "
                f"{self.dt_safety * self.eps**2:.3g}")


def torus_distance(x, y, L):
    d = np.mod(np.abs(x - y), L)
    return np.minimum(d, L - d)


# ---------------------------------------------------------------------------
# periodic velocity fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VelocityField:
    """Velocity sampled on one period, evaluated by periodic interpolation."""

    nodes: np.ndarray
    values: np.ndarray
    a: float
    L: float

    def __call__(self, x):
        xw = self.a + np.mod(np.asarray(x, float) - self.a, self.L)
        return np.interp(xw, self.nodes, self.values)


def _periodic_velocity_values(k_nodes, source: SourceTerm, grid: Grid1D) -> VelocityField:
    nodes = grid.nodes
    f = source.values(nodes)
    F = source.antiderivative(nodes)
    scale = np.trapezoid(np.abs(f), nodes) + 1e-300
    if abs(F[-1]) > 1e-9 * scale:
        raise SolvabilityError(
            f"source must have zero mean on the period (got integral {F[-1]:.3e})")
    m = 1.0 / np.asarray(k_nodes, float)
    c = np.trapezoid(m * F, nodes) / np.trapezoid(m, nodes)
    v = F - c
    v[-1] = v[0]  # exact periodic closure
    return VelocityField(nodes=nodes, values=v, a=grid.a, L=grid.b - grid.a)


def periodic_velocity(field: CoefficientField, source: SourceTerm, eps: float,
                      grid: Optional[Grid1D] = None, nodes_per_period: int = 16) -> VelocityField:
    """Velocity v = -k p' of the periodic oscillatory problem."""
    if grid is None:
        grid = grid_for_scale(field.a, field.b, eps, nodes_per_period)
    elif grid.spacing > eps / nodes_per_period * (1 + 1e-12):
        raise ResolutionError(f"velocity grid does not resolve eps = {eps}")
    k = field.k(grid.nodes, grid.nodes / eps)
    return _periodic_velocity_values(k, source, grid)


def homogenized_velocity(field: CoefficientField, source: SourceTerm,
                         grid: Optional[Grid1D] = None, n: int = 2049,
                         n_y: int = 4096) -> VelocityField:
    """Velocity of the periodic problem with the harmonic-mean coefficient."""
    if grid is None:
        grid = Grid1D(field.a, field.b, n)
    k0 = harmonic_homogenize(field, grid.nodes, n_y=n_y)
    return _periodic_velocity_values(k0, source, grid)


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------

def _time_grid(T, dt):
    n_steps = max(int(round(T / dt)), 1)
    return n_steps, T / n_steps


def integrate_sde(v_eval: Callable, config: TransportConfig):
    """Euler-Maruyama ensemble; returns (t, paths) with shape (replicates, n+1).

    Each replicate consumes its own keyed noise stream, drawn in blocks to
    bound memory, so ensembles are reproducible replicate by replicate.
    """
    config.check_dt()
    n_steps, dt = _time_grid(config.T, config.dt)
    R = config.replicates
    t = np.linspace(0.0, config.T, n_steps + 1)
    paths = np.empty((R, n_steps + 1))
    paths[:, 0] = config.x_init
    gens = [stream(config.seed, "sde", r) for r in range(R)]
    amp = np.sqrt(2.0 * config.eta0 * config.eps * dt)

    x = np.full(R, float(config.x_init))
    done = 0
    while done < n_steps:
        block = min(_NOISE_BLOCK, n_steps - done)
        noise = np.empty((R, block))
        for r, g in enumerate(gens):
            noise[r] = g.standard_normal(block)
        for j in range(block):
            x = x + v_eval(x) / config.phi * dt + amp * noise[:, j]
            paths[:, done + j + 1] = x
        done += block
    return t, paths


def integrate_ode(v0_eval: Callable, config: TransportConfig, dt: Optional[float] = None):
    """Classical fourth-order one-step integration of dx/dt = v0(x)/phi."""
    h = config.dt if dt is None else dt
    n_steps, h = _time_grid(config.T, h)
    t = np.linspace(0.0, config.T, n_steps + 1)
    x = np.empty(n_steps + 1)
    x[0] = config.x_init
    phi = config.phi
    for i in range(n_steps):
        xi = x[i]
        k1 = v0_eval(xi) / phi
        k2 = v0_eval(xi + 0.5 * h * k1) / phi
        k3 = v0_eval(xi + 0.5 * h * k2) / phi
        k4 = v0_eval(xi + h * k3) / phi
        x[i + 1] = xi + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return t, x


@dataclass(frozen=True)
class PathEnsemble:
    """Per-replicate sup-path discrepancies against the effective path."""

    eps: float
    sup_errors: np.ndarray
    mean: float
    stderr: float
    replicates: int


def _sup_error_ensemble(v_eval, x0_on_grid, config: TransportConfig) -> PathEnsemble:
    """Fused Euler-Maruyama loop tracking only the running sup distance."""
    config.check_dt()
    n_steps, dt = _time_grid(config.T, config.dt)
    R = config.replicates
    gens = [stream(config.seed, "sde", r) for r in range(R)]
    amp = np.sqrt(2.0 * config.eta0 * config.eps * dt)

    x = np.full(R, float(config.x_init))
    sup = torus_distance(x, x0_on_grid[0], config.L)
    done = 0
    while done < n_steps:
        block = min(_NOISE_BLOCK, n_steps - done)
        noise = np.empty((R, block))
        for r, g in enumerate(gens):
            noise[r] = g.standard_normal(block)
        for j in range(block):
            x = x + v_eval(x) / config.phi * dt + amp * noise[:, j]
            sup = np.maximum(sup, torus_distance(x, x0_on_grid[done + j + 1], config.L))
        done += block
    mean = float(sup.mean())
    stderr = float(sup.std(ddof=1) / np.sqrt(R)) if R > 1 else 0.0
    return PathEnsemble(eps=config.eps, sup_errors=sup, mean=mean, stderr=stderr,
                        replicates=R)


def path_error_study(field: CoefficientField, source: SourceTerm,
                     config: TransportConfig, eps_list,
                     nodes_per_period: int = 16, ode_steps: int = 8192):
    """Expected sup-path distance between oscillatory and effective transport.

    For each eps the step size is capped at dt_safety * eps^2 and the
    effective path is integrated once at fourth order, then interpolated
    onto the stochastic time grid.  Only the d = 1 instance is computed.
    """
    v0 = homogenized_velocity(field, source,
                              grid=Grid1D(field.a, field.b, 4097))
    results = []
    for eps in sorted(eps_list, reverse=True):
        dt = min(config.dt, config.dt_safety * eps**2)
        n_steps, dt = _time_grid(config.T, dt)
        cfg = replace(config, eps=eps, dt=dt)
        # keep the oscillatory velocity table at least as fine as the
        # effective one so interpolation error never masks the comparison
        v_grid = grid_for_scale(field.a, field.b, eps, nodes_per_period,
                                min_nodes=4097)
        v_eps = periodic_velocity(field, source, eps, grid=v_grid,
                                  nodes_per_period=nodes_per_period)

        t_ode, x_ode = integrate_ode(v0, cfg, dt=config.T / ode_steps)
        t_sde = np.linspace(0.0, cfg.T, n_steps + 1)
        x0_on_grid = np.interp(t_sde, t_ode, x_ode)
        results.append(_sup_error_ensemble(v_eps, x0_on_grid, cfg))
    return results


def write_transport_csv(path, ensembles):
    # the dimension column records that only the d = 1 statement is verified
    with open(path, "w") as fh:
        fh.write("eps,mean_sup_error,mc_stderr,replicates,dimension\n")
        for e in ensembles:
            fh.write(f"{float(e.eps)!r},{float(e.mean)!r},{float(e.stderr)!r},"
                     f"{e.replicates},1\n")
