"""Config-driven command line front end.

Every experiment is a subcommand taking a JSON config:

    homest converge --config study.json [--seed N] [--out DIR] [--threads N]

Each run writes its CSV tables, rendered PNG figures and a manifest into
out/<run_id>/, where run_id hashes the effective config and seed, so the
same inputs land in the same directory with byte-identical tables.  A
manifest can itself be passed as --config to reproduce its run.

Physical parameters (sigma, eps, gamma, ...) must be explicit in the
config; only numerical knobs carry defaults, and those are echoed into
the manifest.  Exit codes: 0 success, 2 config error, 3 numerical
failure (diagnostic written into the run directory), 4 study flagged by
its failure-rate guard.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import __version__
from . import elliptic1d as el
from . import fields, fluctuation as fl, homogenization as hg
from . import inference as inf
from . import plots, transport as tr
from .errors import ConfigError, HomestError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_FLAGGED = 4


# ---------------------------------------------------------------------------
# config registries
# ---------------------------------------------------------------------------

def build_coefficient(spec, domain):
    a, b = domain
    kind = spec.get("kind")
    if kind == "constant":
        return fields.constant_field(spec["value"], a, b)
    if kind == "exp_sin":
        return fields.exp_sin_field(spec.get("amplitude", 1.0), a, b)
    if kind == "layered":
        return fields.layered_field(tuple(spec["values"]), tuple(spec["breaks"]), a, b)
    if kind == "fourier_log":
        theta = np.asarray(spec["theta"], float)
        coeff = fl.FourierLogCoefficient(theta, a, b)
        amp = float(np.sum(np.abs(theta)))
        return fields.CoefficientField(
            u=lambda x, y: coeff.log_k(x) + 0.0 * np.asarray(y, float),
            alpha=float(np.exp(-amp)), beta=float(np.exp(amp)), a=a, b=b)
    raise ConfigError(f"unknown coefficient kind {kind!r}")


def build_source(spec, domain):
    a, b = domain
    kind = spec.get("kind")
    if kind == "constant":
        return el.constant_source(spec.get("value", 1.0))
    if kind == "sin":
        return el.sin_source(spec.get("amplitude", 1.0), spec.get("periods", 1), a, b)
    raise ConfigError(f"unknown source kind {kind!r}")


_COEFF_SCHEMA = {"type": "object", "required": ["kind"]}
_SOURCE_SCHEMA = {"type": "object", "required": ["kind"]}
_COMMON_PROPS = {
    "coefficient": _COEFF_SCHEMA,
    "source": _SOURCE_SCHEMA,
    "master_seed": {"type": "integer"},
    "domain": {"type": "array", "minItems": 2, "maxItems": 2},
}

_SCHEMAS = {
    "homogenize": {
        "type": "object",
        "required": ["master_seed", "domain", "coefficient"],
        "properties": _COMMON_PROPS,
    },
    "forward": {
        "type": "object",
        "required": ["master_seed", "domain", "coefficient", "source", "eps"],
        "properties": {**_COMMON_PROPS,
                       "eps": {"type": "number", "exclusiveMinimum": 0}},
    },
    "converge": {
        "type": "object",
        "required": ["master_seed", "domain", "coefficient", "source", "eps_list"],
        "properties": {**_COMMON_PROPS,
                       "eps_list": {"type": "array", "minItems": 2}},
    },
    "transport": {
        "type": "object",
        "required": ["master_seed", "domain", "coefficient", "source", "eps_list",
                     "phi", "eta0", "T", "x_init", "replicates"],
        "properties": _COMMON_PROPS,
    },
    "estimate-scalar": {
        "type": "object",
        "required": ["master_seed", "domain", "source", "u0", "gamma",
                     "N_list", "replicates"],
        "properties": _COMMON_PROPS,
    },
    "clt": {
        "type": "object",
        "required": ["master_seed", "domain", "coefficient", "source", "sigma",
                     "eps", "points", "replicates"],
        "properties": _COMMON_PROPS,
    },
    "map": {
        "type": "object",
        "required": ["master_seed", "domain", "source", "theta_true", "sigma",
                     "eps", "gamma", "n_obs", "use_model_error"],
        "properties": _COMMON_PROPS,
    },
    "study": {
        "type": "object",
        "required": ["master_seed", "domain", "source", "theta_true", "sigma",
                     "eps", "gamma", "n_obs", "replicates"],
        "properties": _COMMON_PROPS,
    },
    "posterior": {
        "type": "object",
        "required": ["master_seed", "domain", "source", "u_true", "gamma", "n_obs",
                     "prior", "hellinger", "smallball"],
        "properties": _COMMON_PROPS,
    },
}

# numerical knobs with defaults; everything physical must be explicit
_NUMERIC_DEFAULTS = {
    "homogenize": {"n_out": 257, "cell_panels": 4096, "x_ref": None},
    "forward": {"nodes_per_period": 64},
    "converge": {"nodes_per_period": 16, "cell_panels": 4096},
    "transport": {"nodes_per_period": 16, "dt_safety": tr.DT_SAFETY, "ode_steps": 8192},
    "estimate-scalar": {"dq_scale": 0.5, "grid_n": 4097, "nodes_per_period": 16},
    "clt": {"nodes_per_eps": 16},
    "map": {"n_quad": 512, "prior_tau": 1.0, "nodes_per_eps": 16, "max_evals": 2000},
    "study": {"n_quad": 512, "prior_tau": 1.0, "nodes_per_eps": 16, "max_evals": 2000,
              "n_out": 65},
    "posterior": {},
}


def load_config(path, subcommand):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if "subcommand" in raw and "config" in raw:  # a manifest: re-run it
        if raw["subcommand"] != subcommand:
            raise ConfigError(
                f"manifest is for {raw['subcommand']!r}, not {subcommand!r}")
        raw = raw["config"]
    if raw.get("experiment", subcommand) != subcommand:
        raise ConfigError(
            f"config is for experiment {raw['experiment']!r}, not {subcommand!r}")
    schema = _SCHEMAS[subcommand]
    if jsonschema is not None:
        try:
            jsonschema.validate(raw, schema)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config failed validation: {exc.message}")
    else:  # minimal fallback
        missing = [k for k in schema["required"] if k not in raw]
        if missing:
            raise ConfigError(f"config missing required keys: {missing}")
    cfg = dict(_NUMERIC_DEFAULTS[subcommand])
    cfg.update(raw)
    return cfg


def config_hash(cfg, seed):
    payload = json.dumps({"config": cfg, "seed": seed}, sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def write_manifest(run_dir, subcommand, cfg, seed, run_id):
    manifest = {
        "subcommand": subcommand,
        "run_id": run_id,
        "seed": seed,
        "config": cfg,
        "config_sha256": config_hash(cfg, seed),
        "version": __version__,
    }
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# experiment runners (each returns an exit code)
# ---------------------------------------------------------------------------

def _csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                              else str(v) for v in row) + "\n")


def run_homogenize(cfg, run_dir, seed, threads, do_plots):
    a, b = cfg["domain"]
    field = build_coefficient(cfg["coefficient"], (a, b))
    x = np.linspace(a, b, cfg["n_out"])
    k0 = np.atleast_1d(hg.harmonic_homogenize(field, x, n_y=cfg["cell_panels"]))
    _csv(run_dir / "k0.csv", ("x", "k0"), zip(x, k0))
    x_ref = cfg["x_ref"] if cfg["x_ref"] is not None else 0.5 * (a + b)
    cell = hg.solve_cell(field, x_ref, n_y=cfg["cell_panels"])
    _csv(run_dir / "cell.csv", ("y", "chi"), zip(cell.y, cell.chi))
    if do_plots:
        plots.plot_homogenize(run_dir / "homogenize.png", x, k0, cell)
    return EXIT_OK


def run_forward(cfg, run_dir, seed, threads, do_plots):
    a, b = cfg["domain"]
    field = build_coefficient(cfg["coefficient"], (a, b))
    source = build_source(cfg["source"], (a, b))
    eps = cfg["eps"]
    grid = el.grid_for_scale(a, b, eps, cfg["nodes_per_period"])
    sol = el.solve_exact(lambda x: field.k(x, x / eps), source, grid, eps=eps)
    el.write_solution_csv(run_dir / "p.csv", sol)
    sup_norm, c_gap = hg.flux_discrepancy(field, source, eps, grid=grid)
    _csv(run_dir / "flux_report.csv", ("sup_norm", "c_gap"), [(sup_norm, c_gap)])
    if do_plots:
        plots.plot_solution(run_dir / "forward.png", sol, title=f"eps = {eps:g}")
    return EXIT_OK


def run_converge(cfg, run_dir, seed, threads, do_plots):
    a, b = cfg["domain"]
    field = build_coefficient(cfg["coefficient"], (a, b))
    source = build_source(cfg["source"], (a, b))
    report = hg.convergence_study(field, source, cfg["eps_list"],
                                  nodes_per_period=cfg["nodes_per_period"],
                                  n_y=cfg["cell_panels"])
    report.to_csv(run_dir / "convergence.csv")
    if do_plots:
        plots.plot_convergence(run_dir / "convergence.png", report)
    return EXIT_OK


def run_transport(cfg, run_dir, seed, threads, do_plots):
    a, b = cfg["domain"]
    field = build_coefficient(cfg["coefficient"], (a, b))
    source = build_source(cfg["source"], (a, b))
    eps_list = cfg["eps_list"]
    config = tr.TransportConfig(phi=cfg["phi"], eta0=cfg["eta0"], T=cfg["T"],
                                dt=cfg["dt_safety"] * min(eps_list) ** 2,
                                x_init=cfg["x_init"], eps=min(eps_list), L=b - a,
                                replicates=cfg["replicates"], seed=seed,
                                dt_safety=cfg["dt_safety"])
    ensembles = tr.path_error_study(field, source, config, eps_list,
                                    nodes_per_period=cfg["nodes_per_period"],
                                    ode_steps=cfg["ode_steps"])
    tr.write_transport_csv(run_dir / "transport.csv", ensembles)
    if do_plots:
        plots.plot_transport(run_dir / "transport.png", ensembles)
    return EXIT_OK


def run_estimate_scalar(cfg, run_dir, seed, threads, do_plots):
    a, b = cfg["domain"]
    source = build_source(cfg["source"], (a, b))
    rows, slope = inf.consistency_experiment(
        cfg["u0"], cfg["N_list"], cfg["gamma"], cfg["replicates"], seed,
        a=a, b=b, source=source, grid=el.Grid1D(a, b, cfg["grid_n"]))
    inf.write_experiment_csv(run_dir / "consistency.csv", rows)
    with open(run_dir / "consistency_slope.csv", "w") as fh:
        fh.write("slope\n" + repr(float(slope)) + "\n")
    if do_plots:
        plots.plot_estimate_rows(run_dir / "consistency.png", rows,
                                 f"large-data recovery (slope {slope:.3f})")

    ms = cfg.get("multiscale")
    if ms:
        field = build_coefficient(cfg["coefficient"], (a, b))
        cal = inf.calibrate_field(field, cfg["u0"])
        for kind, name in ((el.POINT_EVAL, "multiscale_point"),
                           (el.DIFFERENCE_QUOTIENT, "multiscale_dq")):
            rows = inf.multiscale_consistency_experiment(
                cal, cfg["u0"], ms["N_list"], ms["eps_list"], cfg["gamma"],
                cfg["replicates"], seed, functional_kind=kind,
                dq_scale=cfg["dq_scale"], source=source,
                nodes_per_period=cfg["nodes_per_period"])
            inf.write_experiment_csv(run_dir / f"{name}.csv", rows)
            if do_plots:
                plots.plot_estimate_rows(run_dir / f"{name}.png", rows,
                                         f"data from the oscillatory model ({kind})",
                                         xkey="eps")
    return EXIT_OK


def run_clt(cfg, run_dir, seed, threads, do_plots):
    a, b = cfg["domain"]
    field = build_coefficient(cfg["coefficient"], (a, b))
    source = build_source(cfg["source"], (a, b))
    model = fields.MicrostructureModel(sigma=cfg["sigma"], epsilon=cfg["eps"])
    k0_eval = lambda x: field.k(x, 0.0 * np.asarray(x, float))
    report = fl.clt_diagnostic(k0_eval, model, source, cfg["points"],
                               cfg["replicates"], seed, a=a, b=b,
                               nodes_per_eps=cfg["nodes_per_eps"], threads=threads)
    report.to_csv(run_dir / "clt.csv")
    if do_plots:
        plots.plot_clt(run_dir / "clt.png", report)
    return EXIT_OK


def _synthetic_map_problem(cfg, seed):
    a, b = cfg["domain"]
    source = build_source(cfg["source"], (a, b))
    theta_true = np.asarray(cfg["theta_true"], float)
    k_true = fl.FourierLogCoefficient(theta_true, a, b)
    if cfg.get("observations_csv"):
        obs = el.read_observations_csv(cfg["observations_csv"], gamma=cfg["gamma"])
        if any(fn.kind != el.POINT_EVAL for fn in obs.functionals):
            raise ConfigError("posterior-mode fits require point observations")
    else:
        model = fields.MicrostructureModel(sigma=cfg["sigma"], epsilon=cfg["eps"])
        n_fine = int(np.ceil((b - a) / cfg["eps"] * cfg["nodes_per_eps"])) + 1
        fine = el.Grid1D(a, b, n_fine)
        sample = fields.sample_microstructure(model, fine.nodes, seed=seed)
        comp = fields.compose_random_coefficient(k_true, sample, cfg["sigma"])
        pe = el.solve_exact(comp, source, fine)
        pts = a + (b - a) * np.arange(1, cfg["n_obs"] + 1) / (cfg["n_obs"] + 1)
        from .rng import stream
        y = pe.pressure_at(pts) + cfg["gamma"] * stream(seed, "map-noise").standard_normal(len(pts))
        obs = el.ObservationSet(functionals=[el.point_eval(x) for x in pts], y=y,
                                gamma=cfg["gamma"])
    prior = fields.coefficient_prior(np.full(len(theta_true), cfg["prior_tau"]),
                                     mean=np.zeros(len(theta_true)))
    return fl.MapProblem(obs=obs, prior=prior, use_model_error=cfg["use_model_error"],
                         sigma=cfg["sigma"], eps=cfg["eps"], source=source,
                         a=a, b=b, n_quad=cfg["n_quad"]), k_true


def run_map(cfg, run_dir, seed, threads, do_plots):
    problem, k_true = _synthetic_map_problem(cfg, seed)
    res = fl.map_estimate(problem, max_evals=cfg["max_evals"])
    _csv(run_dir / "theta.csv", ("index", "theta_hat"),
         [(i, t) for i, t in enumerate(res.theta)])
    _csv(run_dir / "map.csv", ("x", "k0_true", "k_hat"),
         zip(res.x_out, k_true(res.x_out), res.k_hat))
    _csv(run_dir / "diagnostics.csv", ("objective", "converged", "n_evals"),
         [(res.value, int(res.converged), res.n_evals)])
    if do_plots:
        plots.plot_map_fit(run_dir / "map.png", res.x_out, k_true(res.x_out), res.k_hat)
    return EXIT_OK if res.converged else EXIT_NUMERICAL


def run_study(cfg, run_dir, seed, threads, do_plots):
    a, b = cfg["domain"]
    source = build_source(cfg["source"], (a, b))
    model = fields.MicrostructureModel(sigma=cfg["sigma"], epsilon=cfg["eps"])

    # one representative composed realization (x, mu, k) for inspection
    k_true = fl.FourierLogCoefficient(np.asarray(cfg["theta_true"], float), a, b)
    n_fine = int(np.ceil((b - a) / cfg["eps"] * cfg["nodes_per_eps"])) + 1
    sample = fields.sample_microstructure(model, np.linspace(a, b, n_fine), seed=seed)
    realization = fields.compose_random_coefficient(k_true, sample, cfg["sigma"])
    fields.dump_microstructure_csv(run_dir / "realization.csv", realization)

    study = fl.variance_study(np.asarray(cfg["theta_true"], float), model, source,
                              n_obs=cfg["n_obs"], replicates=cfg["replicates"],
                              seed=seed, gamma=cfg["gamma"],
                              prior_tau=cfg["prior_tau"], a=a, b=b,
                              n_quad=cfg["n_quad"],
                              x_out=np.linspace(a, b, cfg["n_out"]),
                              nodes_per_eps=cfg["nodes_per_eps"],
                              max_evals=cfg["max_evals"], threads=threads)
    study.to_csv(run_dir / "study.csv")
    study.replicates_to_csv(run_dir / "replicates.csv")
    if do_plots:
        plots.plot_realization(run_dir / "realization.png", sample.grid,
                               realization(sample.grid), k_true(sample.grid))
        plots.plot_study(run_dir / "study_fits.png", run_dir / "study_variance.png",
                         study)
    return EXIT_FLAGGED if study.flagged else EXIT_OK


def run_posterior(cfg, run_dir, seed, threads, do_plots):
    a, b = cfg["domain"]
    source = build_source(cfg["source"], (a, b))
    pr_cfg = cfg["prior"]
    fns = inf.uniform_point_functionals(a, b, cfg["n_obs"])
    forward, lstar = inf.scalar_log_forward(fns, source, a, b)
    prior = fields.default_prior(a, b, n_modes=pr_cfg.get("truncation", 1),
                                 sigma0=pr_cfg.get("sigma0", 1.0),
                                 decay=pr_cfg.get("decay", 2.0))
    gamma = cfg["gamma"]
    from .rng import stream
    y0 = np.exp(-cfg["u_true"]) * lstar + gamma * stream(seed, "posterior-noise").standard_normal(len(lstar))
    spec = inf.MisfitSpec(forward=forward, Gamma=np.full(len(lstar), gamma**2))

    def misfit_for(y):
        return lambda th: inf.misfit(spec, y, th)

    hl = cfg["hellinger"]
    halfwidth = hl.get("grid_halfwidth", 6.0)
    grid = np.linspace(-halfwidth, halfwidth, hl.get("grid_n", 4097))
    dens = np.array([inf.posterior_log_density(prior, misfit_for(y0), np.array([t]))
                     for t in grid])
    _csv(run_dir / "density.csv", ("theta", "logdens"), zip(grid, dens))

    C_fit, sweep = _hellinger_sweep(prior, spec, y0, hl["dy_max"],
                                    hl.get("steps", 8), grid)
    _csv(run_dir / "hellinger.csv", ("dy", "distance"), sweep)
    with open(run_dir / "hellinger_constant.csv", "w") as fh:
        fh.write("C_fit\n" + repr(float(C_fit)) + "\n")

    sb = cfg["smallball"]
    misfit_fn = misfit_for(y0)
    rows, companion = inf.small_ball_ratio(prior, misfit_fn, sb["z1"], sb["z2"],
                                           sb["delta_list"], sb["samples"], seed)
    _csv(run_dir / "smallball.csv",
         ("delta", "ratio", "stderr", "hits1", "hits2", "companion"),
         [(r.delta, r.ratio, r.stderr, r.hits1, r.hits2, companion) for r in rows])
    if do_plots:
        plots.plot_posterior(run_dir / "posterior.png", grid, dens)
    return EXIT_OK


def _hellinger_sweep(prior, spec, y0, dy_max, steps, grid):
    def logdens_for(y):
        m = lambda th: inf.misfit(spec, y, th)
        return lambda t: np.array([inf.posterior_log_density(prior, m, np.array([tv]))
                                   for tv in np.atleast_1d(t)])

    base = logdens_for(y0)
    rows = []
    for dy in np.linspace(dy_max / steps, dy_max, steps):
        y = y0.copy()
        y[0] += dy
        d = inf.hellinger_distance(base, logdens_for(y), grid)
        rows.append((float(dy), d))
    return max(d / dy for dy, d in rows), rows


_RUNNERS = {
    "homogenize": run_homogenize,
    "forward": run_forward,
    "converge": run_converge,
    "transport": run_transport,
    "estimate-scalar": run_estimate_scalar,
    "clt": run_clt,
    "map": run_map,
    "study": run_study,
    "posterior": run_posterior,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="homest",
        description="Oscillatory Darcy flow: effective models and estimation")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config (or manifest)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config master_seed")
        p.add_argument("--out", default="runs", help="output root directory")
        p.add_argument("--threads", type=int, default=1,
                       help="cap on worker threads for replicate loops")
        p.add_argument("--no-plots", action="store_true",
                       help="skip PNG rendering, keep CSV output only")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.subcommand)
        seed = args.seed if args.seed is not None else cfg["master_seed"]
        seed = int(seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    run_id = f"{args.subcommand}-{config_hash(cfg, seed)[:12]}"
    run_dir = Path(args.out) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(run_dir, args.subcommand, cfg, seed, run_id)

    try:
        code = _RUNNERS[args.subcommand](cfg, run_dir, seed, max(args.threads, 1),
                                         not args.no_plots)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HomestError as exc:
        (run_dir / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{args.subcommand}: wrote {run_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
