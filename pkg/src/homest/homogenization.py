"""Effective coefficients, cell solutions, correctors and convergence studies.

In one dimension the effective permeability at a macroscopic position x is
the harmonic average of k(x, .) over the periodicity cell, and the cell
solution has the closed form

    chi(x, y) = -y + c1(x) int_0^y 1/k(x, s) ds + c2(x),
    c1(x) = <1/k(x, .)>^{-1} = k0(x),

with c2 fixing the zero cell average.  The two-term approximation of the
oscillatory pressure is p0(x) + eps * chi(x, x/eps) * p0'(x).

Cell integrals use the midpoint rule on the unit torus (spectrally
accurate for smooth periodic integrands and exact for layered media with
breaks on panel boundaries).  Error norms in studies are discrete
trapezoid-weighted quantities on the fine solver grid:

    H1   = sqrt(L2(e)^2 + L2(e')^2)
    W1inf = max(sup|e|, sup|e'|)

Gradients of computed solutions come from the exact nodal flux (p' = v/k);
p0' uses second-order differences (p0 is smooth) and the corrected
approximation is differentiated by the chain rule.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .elliptic1d import Grid1D, PressureSolution, SourceTerm, grid_for_scale, solve_exact
from .errors import ResolutionError
from .fields import CoefficientField

_CHUNK = 256


# ---------------------------------------------------------------------------
# effective coefficient and cell problem
# ---------------------------------------------------------------------------

def _cell_midpoints(n_y):
    dy = 1.0 / n_y
    return (np.arange(n_y) + 0.5) * dy, dy


def harmonic_homogenize(field: CoefficientField, x, n_y: int = 4096):
    """Effective coefficient k0(x) = <1/k(x, .)>^{-1} by cell quadrature."""
    y_mid, dy = _cell_midpoints(n_y)
    xa = np.atleast_1d(np.asarray(x, float))
    out = np.empty_like(xa)
    for lo in range(0, len(xa), _CHUNK):
        chunk = xa[lo:lo + _CHUNK]
        m = 1.0 / field.k(chunk[:, None], y_mid[None, :])
        out[lo:lo + _CHUNK] = 1.0 / (m.sum(axis=1) * dy)
    return float(out[0]) if np.isscalar(x) or np.ndim(x) == 0 else out


def arithmetic_cell_mean(field: CoefficientField, x, n_y: int = 4096):
    """Plain cell average of k(x, .), for comparison with the harmonic value."""
    y_mid, dy = _cell_midpoints(n_y)
    xa = np.atleast_1d(np.asarray(x, float))
    out = np.array([np.sum(field.k(xi, y_mid)) * dy for xi in xa])
    return float(out[0]) if np.isscalar(x) or np.ndim(x) == 0 else out


@dataclass(frozen=True)
class CellSolution:
    """Cell solution chi(x, .) at one macroscopic position.

    chi is stored on panel boundaries of the unit cell; c1 equals the
    effective coefficient and c2 enforces the zero cell average.
    """

    x: float
    y: np.ndarray
    chi: np.ndarray
    c1: float
    c2: float
    field: CoefficientField

    def chi_at(self, y):
        return np.interp(np.mod(y, 1.0), self.y, self.chi)

    def dchi_dy(self, y):
        """Closed-form derivative -1 + c1/k(x, y)."""
        return -1.0 + self.c1 / self.field.k(self.x, np.mod(y, 1.0))


def solve_cell(field: CoefficientField, x: float, n_y: int = 4096) -> CellSolution:
    """Closed-form cell solution at macro position x on an n_y-panel cell."""
    y_mid, dy = _cell_midpoints(n_y)
    m = 1.0 / field.k(x, y_mid)
    integral = np.concatenate([[0.0], np.cumsum(m) * dy])  # int_0^y 1/k at boundaries
    y_b = np.linspace(0.0, 1.0, n_y + 1)
    c1 = 1.0 / integral[-1]
    chi0 = -y_b + c1 * integral
    c2 = -np.trapezoid(chi0, y_b)
    return CellSolution(x=float(x), y=y_b, chi=chi0 + c2, c1=float(c1), c2=float(c2),
                        field=field)


def homogenized_solve(k0_eval, source: SourceTerm, grid: Grid1D) -> PressureSolution:
    """Solve the slow problem with a y-independent coefficient."""
    return solve_exact(k0_eval, source, grid)


# ---------------------------------------------------------------------------
# two-scale model with corrector
# ---------------------------------------------------------------------------

def _chi_at_phase(field: CoefficientField, xs, phases, n_y):
    """chi(x_i, y_i) for given macro positions and cell phases y_i in [0, 1)."""
    y_mid, dy = _cell_midpoints(n_y)
    y_b = np.linspace(0.0, 1.0, n_y + 1)
    xs = np.asarray(xs, float)
    ph = np.asarray(phases, float)
    out = np.empty(len(xs))
    for lo in range(0, len(xs), _CHUNK):
        xc = xs[lo:lo + _CHUNK]
        pc = ph[lo:lo + _CHUNK]
        m = 1.0 / field.k(xc[:, None], y_mid[None, :])
        integral = np.concatenate([np.zeros((len(xc), 1)), np.cumsum(m, axis=1) * dy], axis=1)
        c1 = 1.0 / integral[:, -1]
        chi0 = -y_b[None, :] + c1[:, None] * integral
        c2 = -np.trapezoid(chi0, y_b, axis=1)
        idx = np.minimum((pc / dy).astype(int), n_y - 1)
        frac = pc / dy - idx
        rows = np.arange(len(xc))
        I_at = integral[rows, idx] * (1 - frac) + integral[rows, idx + 1] * frac
        out[lo:lo + _CHUNK] = -pc + c1 * I_at + c2
    return out


def _chi_on_diagonal(field: CoefficientField, xs, eps, n_y):
    """chi(x_i, frac(x_i/eps)) evaluated by per-point cell quadrature."""
    xs = np.asarray(xs, float)
    return _chi_at_phase(field, xs, np.mod(xs / eps, 1.0), n_y)


@dataclass(frozen=True)
class HomogenizedModel:
    """Effective coefficient, slow solution and corrector evaluator."""

    field: CoefficientField
    source: SourceTerm
    grid: Grid1D
    k0_nodes: np.ndarray
    p0: PressureSolution
    p0_prime: np.ndarray  # second-order differences of p0 on the grid
    n_y: int

    def k0(self, x):
        return np.interp(x, self.grid.nodes, self.k0_nodes)

    def u0(self, x):
        return np.log(self.k0(x))

    def p0_prime_at(self, x):
        return np.interp(x, self.grid.nodes, self.p0_prime)

    def chi_at(self, x, eps):
        return _chi_on_diagonal(self.field, np.asarray(x, float), eps, self.n_y)

    def p1_eval(self, x, eps):
        """Corrector term eps * chi(x, x/eps) * p0'(x)."""
        xa = np.asarray(x, float)
        return eps * self.chi_at(xa, eps) * self.p0_prime_at(xa)

    def pe_a_prime(self, x, eps, macro_step=1e-4):
        """Chain-rule derivative of the corrected approximation.

        d/dx [p0 + eps chi(x, x/eps) p0'] =
            (1 + chi_y) p0' + eps (chi_x p0' + chi p0''),
        with chi_y = -1 + k0(x)/k(x, x/eps) exact and chi_x by a centered
        macro difference at frozen cell phase.  Differencing the evaluated
        approximation instead cannot resolve its own O(eps) oscillation on
        the solver grid.
        """
        xa = np.asarray(x, float)
        phase = np.mod(xa / eps, 1.0)
        k_diag = self.field.k(xa, phase)
        chi_y = -1.0 + self.k0(xa) / k_diag
        p0p = self.p0_prime_at(xa)
        p0pp = np.interp(xa, self.grid.nodes,
                         np.gradient(self.p0_prime, self.grid.nodes, edge_order=2))
        chi = _chi_at_phase(self.field, xa, phase, self.n_y)
        h = macro_step * (self.grid.b - self.grid.a)
        xp = np.clip(xa + h, self.grid.a, self.grid.b)
        xm = np.clip(xa - h, self.grid.a, self.grid.b)
        chi_x = (_chi_at_phase(self.field, xp, phase, self.n_y)
                 - _chi_at_phase(self.field, xm, phase, self.n_y)) / (xp - xm)
        return (1.0 + chi_y) * p0p + eps * (chi_x * p0p + chi * p0pp)


def homogenize(field: CoefficientField, source: SourceTerm, grid: Grid1D,
               n_y: int = 4096) -> HomogenizedModel:
    """Build the effective model on the given solver grid."""
    k0_nodes = harmonic_homogenize(field, grid.nodes, n_y=n_y)
    p0 = solve_exact(k0_nodes, source, grid)
    p0_prime = np.gradient(p0.p, grid.nodes, edge_order=2)
    return HomogenizedModel(field=field, source=source, grid=grid, k0_nodes=k0_nodes,
                            p0=p0, p0_prime=p0_prime, n_y=n_y)


def first_order_approx(model: HomogenizedModel, eps: float) -> Callable:
    """Evaluator for the two-term expansion p0(x) + eps chi(x, x/eps) p0'(x)."""
    def pe_a(x):
        xa = np.asarray(x, float)
        return model.p0.pressure_at(xa) + model.p1_eval(xa, eps)
    return pe_a


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceReport:
    """Error norms of the oscillatory solution against its approximations.

    err_l2/err_sup compare against the slow solution p0; err_h1/err_w1inf
    compare against the corrected approximation.  rates holds the fitted
    log-log slopes of each column against eps.
    """

    eps_list: np.ndarray
    err_l2: np.ndarray
    err_sup: np.ndarray
    err_h1: np.ndarray
    err_w1inf: np.ndarray
    rates: dict
    grid: Grid1D

    def to_csv(self, path):
        cols = ("eps", "err_L2", "err_sup", "err_H1", "err_W1inf")
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in zip(self.eps_list, self.err_l2, self.err_sup, self.err_h1, self.err_w1inf):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
            fh.write("rate," + ",".join(
                repr(float(self.rates[c])) for c in ("err_L2", "err_sup", "err_H1", "err_W1inf")) + "\n")


def _loglog_slope(eps, err):
    err = np.asarray(err, float)
    if np.any(err <= 0):
        return float("nan")
    return float(np.polyfit(np.log(eps), np.log(err), 1)[0])


def convergence_study(field: CoefficientField, source: SourceTerm, eps_list,
                      nodes_per_period: int = 16, n_y: int = 4096,
                      grid: Optional[Grid1D] = None) -> ConvergenceReport:
    """Solve across the scale ladder and report all four error norms.

    One fine grid resolving the smallest scale is reused for every eps so
    the discrete norms are comparable.
    """
    eps_arr = np.asarray(sorted(eps_list, reverse=True), float)
    if grid is None:
        grid = grid_for_scale(field.a, field.b, eps_arr.min(), nodes_per_period)
    for eps in eps_arr:
        if grid.spacing > eps / nodes_per_period * (1 + 1e-12):
            raise ResolutionError(f"study grid does not resolve eps = {eps}")

    model = homogenize(field, source, grid, n_y=n_y)
    nodes = grid.nodes
    w = np.full(grid.n, grid.spacing)  # trapezoid weights
    w[0] = w[-1] = grid.spacing / 2.0

    e_l2, e_sup, e_h1, e_w1 = [], [], [], []
    for eps in eps_arr:
        pe = solve_exact(lambda x, e=eps: field.k(x, x / e), source, grid, eps=eps)
        ke = field.k(nodes, nodes / eps)
        pe_grad = pe.v / ke  # exact: p' = v/k

        diff0 = pe.p - model.p0.p
        e_l2.append(np.sqrt(np.sum(w * diff0**2)))
        e_sup.append(np.max(np.abs(diff0)))

        pea = first_order_approx(model, eps)(nodes)
        pea_grad = model.pe_a_prime(nodes, eps)
        diff1 = pe.p - pea
        diff1_grad = pe_grad - pea_grad
        l2 = np.sum(w * diff1**2)
        h1 = np.sum(w * diff1_grad**2)
        e_h1.append(np.sqrt(l2 + h1))
        e_w1.append(max(np.max(np.abs(diff1)), np.max(np.abs(diff1_grad))))

    report = ConvergenceReport(
        eps_list=eps_arr,
        err_l2=np.array(e_l2), err_sup=np.array(e_sup),
        err_h1=np.array(e_h1), err_w1inf=np.array(e_w1),
        rates={"err_L2": _loglog_slope(eps_arr, e_l2),
               "err_sup": _loglog_slope(eps_arr, e_sup),
               "err_H1": _loglog_slope(eps_arr, e_h1),
               "err_W1inf": _loglog_slope(eps_arr, e_w1)},
        grid=grid)
    return report


def flux_discrepancy(field: CoefficientField, source: SourceTerm, eps: float,
                     grid: Optional[Grid1D] = None, nodes_per_period: int = 64,
                     n_y: int = 4096):
    """Distance between the oscillatory flux and its effective counterpart.

    Returns (sup_norm, c_gap): the sup over nodes of |v_eps(x) - k0(x) p0'(x)|
    and the difference of the two flux constants.  The two numbers agree to
    rounding; their common size decays linearly in eps.
    """
    if grid is None:
        grid = grid_for_scale(field.a, field.b, eps, nodes_per_period)
    pe = solve_exact(lambda x: field.k(x, x / eps), source, grid, eps=eps)
    k0_nodes = harmonic_homogenize(field, grid.nodes, n_y=n_y)
    p0 = solve_exact(k0_nodes, source, grid)
    sup_norm = float(np.max(np.abs(pe.v - p0.v)))  # p0.v = k0 p0' nodewise
    return sup_norm, abs(pe.c_eps - p0.c_eps)
