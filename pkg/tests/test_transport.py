import numpy as np
import pytest

from homest import elliptic1d as el, fields
from homest import transport as tr
from homest.errors import ResolutionError, SolvabilityError

UNIT = fields.constant_field(1.0)
ZERO_MEAN = el.sin_source(1.0, 1, 0, 1)


def _config(**kw):
    base = dict(phi=1.0, eta0=0.0, T=1.0, dt=1e-3, x_init=0.3, eps=0.5, L=1.0,
                replicates=1, seed=2)
    base.update(kw)
    return tr.TransportConfig(**base)


def test_torus_distance():
    assert tr.torus_distance(0.1, 0.9, 1.0) == pytest.approx(0.2)
    assert tr.torus_distance(0.0, 0.5, 1.0) == pytest.approx(0.5)
    x = np.linspace(0, 3, 31)
    assert np.all(tr.torus_distance(x, 0.0, 1.0) <= 0.5 + 1e-15)


def test_velocity_zero_source():
    v = tr.periodic_velocity(UNIT, el.SourceTerm(f=lambda x: np.zeros_like(x)), 0.1)
    assert np.max(np.abs(v(np.linspace(0, 1, 17)))) < 1e-14


def test_velocity_closed_form():
    # unit coefficient, f = sin(2 pi x): v = -cos(2 pi x)/(2 pi), cell mean of v/k is zero
    v = tr.periodic_velocity(UNIT, ZERO_MEAN, 0.1)
    xs = np.linspace(0, 1, 33)
    expect = -np.cos(2 * np.pi * xs) / (2 * np.pi)
    assert np.max(np.abs(v(xs) - expect)) < 1e-12
    assert abs(np.trapezoid(v.values, v.nodes)) < 1e-12  # closure: mean of v/k vanishes


def test_velocity_divergence_matches_source():
    eps = 1 / 16
    field = fields.exp_sin_field(1.0)
    v = tr.periodic_velocity(field, ZERO_MEAN, eps, nodes_per_period=64)
    dv = np.gradient(v.values, v.nodes, edge_order=2)
    f = ZERO_MEAN.values(v.nodes)
    assert np.max(np.abs(dv - f)) < 1e-3


def test_velocity_periodic_fd_oracle():
    # independent check: dense periodic finite-difference solve for the pressure
    eps = 1 / 8
    field = fields.exp_sin_field(0.8)
    grid = el.grid_for_scale(0, 1, eps, 64)
    v = tr.periodic_velocity(field, ZERO_MEAN, eps, grid=grid)

    n = grid.n - 1  # periodic unknowns, node n identified with node 0
    h = grid.spacing
    k = field.k(grid.nodes, grid.nodes / eps)[:n]
    kf = 2.0 / (1.0 / k + 1.0 / np.roll(k, -1))  # face harmonic averages
    A = np.zeros((n + 1, n + 1))
    rhs = np.zeros(n + 1)
    for i in range(n):
        A[i, i] = (kf[i - 1] + kf[i]) / h**2
        A[i, (i + 1) % n] -= kf[i] / h**2
        A[i, (i - 1) % n] -= kf[i - 1] / h**2
        A[i, n] = 1.0  # mean-zero multiplier fixes the nullspace
        A[n, i] = 1.0
        rhs[i] = ZERO_MEAN.f(grid.nodes[i])
    p = np.linalg.solve(A, rhs)[:n]
    p_ext = np.concatenate([p, p[:1]])
    v_fd = -field.k(grid.nodes, grid.nodes / eps) * np.gradient(
        p_ext, grid.nodes, edge_order=2)
    # endpoints of the one-sided gradient are less accurate; compare the interior
    assert np.max(np.abs(v_fd[2:-2] - v.values[2:-2])) < 5e-3


def test_velocity_periodicity():
    v = tr.periodic_velocity(fields.exp_sin_field(1.0), ZERO_MEAN, 1 / 8)
    xs = np.linspace(0, 1, 13)
    assert np.allclose(v(xs), v(xs + 1.0), atol=1e-14)
    assert np.allclose(v(xs), v(xs - 3.0), atol=1e-14)


def test_velocity_mean_source_rejected():
    with pytest.raises(SolvabilityError):
        tr.periodic_velocity(UNIT, el.constant_source(1.0), 0.1)


def test_sde_frozen_state():
    cfg = _config(eta0=0.0)
    t, paths = tr.integrate_sde(lambda x: np.zeros_like(x), cfg)
    assert np.all(paths == cfg.x_init)


def test_sde_constant_drift():
    cfg = _config(eta0=0.0, replicates=3)
    t, paths = tr.integrate_sde(lambda x: np.ones_like(x), cfg)
    assert paths[:, -1] == pytest.approx(cfg.x_init + cfg.T, abs=1e-12)


def test_sde_dt_rule():
    cfg = _config(eps=0.01, dt=1e-3)
    with pytest.raises(ResolutionError):
        tr.integrate_sde(lambda x: np.zeros_like(x), cfg)


def test_sde_brownian_variance():
    cfg = _config(eta0=0.5, eps=0.5, dt=0.02, T=0.2, replicates=10_000, seed=5)
    t, paths = tr.integrate_sde(lambda x: np.zeros_like(x), cfg)
    var = paths[:, -1].var(ddof=1)
    expect = 2 * cfg.eta0 * cfg.eps * cfg.T
    assert var == pytest.approx(expect, rel=0.05)


def test_sde_deterministic_ensembles():
    cfg = _config(eta0=0.3, replicates=4, dt=0.01, T=0.1)
    _, p1 = tr.integrate_sde(lambda x: np.zeros_like(x), cfg)
    _, p2 = tr.integrate_sde(lambda x: np.zeros_like(x), cfg)
    assert np.array_equal(p1, p2)


def test_ode_constant_path():
    t, x = tr.integrate_ode(lambda x: 0.0, _config())
    assert np.all(x == 0.3)


def test_ode_constant_drift_with_porosity():
    t, x = tr.integrate_ode(lambda x: 1.0, _config(phi=2.0, T=1.0))
    assert x[-1] == pytest.approx(0.8, abs=1e-12)


def test_ode_fourth_order():
    cfg = _config(T=2.0)
    v = lambda x: np.sin(x) + 2.0
    ref = tr.integrate_ode(v, cfg, dt=cfg.T / 2048)[1][-1]
    e1 = abs(tr.integrate_ode(v, cfg, dt=cfg.T / 16)[1][-1] - ref)
    e2 = abs(tr.integrate_ode(v, cfg, dt=cfg.T / 32)[1][-1] - ref)
    assert 10 <= e1 / e2 <= 22


def test_path_error_constant_coefficient():
    # oscillation-free coefficient and no noise: both velocities share one
    # table, so only the first-order stepping error survives
    cfg = _config(eta0=0.0, replicates=2, T=0.5, seed=9)
    out = tr.path_error_study(UNIT, ZERO_MEAN, cfg, [1 / 8])
    dt = cfg.dt_safety * (1 / 8) ** 2
    tol = dt * cfg.T * 1.0  # dt * T * sup|v| * sup|v'| with both sups below 1
    assert out[0].mean < 10 * tol


def test_path_error_decreasing():
    field = fields.exp_sin_field(1.0)
    cfg = _config(eta0=0.25, replicates=120, T=0.5, seed=11)
    out = tr.path_error_study(field, ZERO_MEAN, cfg, [1 / 8, 1 / 16, 1 / 32])
    means = [e.mean for e in out]
    slacks = [2 * np.hypot(out[i].stderr, out[i + 1].stderr) for i in range(len(out) - 1)]
    assert all(means[i + 1] < means[i] + slacks[i] for i in range(len(means) - 1))
    assert all(e.mean <= cfg.L / 2 for e in out)


def test_replicate_scaling_of_stderr():
    field = fields.exp_sin_field(1.0)
    outs = []
    for reps in (100, 400):
        cfg = _config(eta0=0.25, replicates=reps, T=0.25, seed=13)
        outs.append(tr.path_error_study(field, ZERO_MEAN, cfg, [1 / 8])[0])
    # quadrupling replicates halves the MC error, within 30%
    assert outs[1].stderr == pytest.approx(outs[0].stderr / 2, rel=0.3)


def test_transport_csv(tmp_path):
    field = fields.exp_sin_field(1.0)
    cfg = _config(eta0=0.1, replicates=10, T=0.1, seed=17)
    out = tr.path_error_study(field, ZERO_MEAN, cfg, [1 / 8])
    path = tmp_path / "transport.csv"
    tr.write_transport_csv(path, out)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "eps,mean_sup_error,mc_stderr,replicates,dimension"
    assert len(lines) == 2
    assert lines[1].endswith(",1")
