"""Figure rendering for experiment reports.

Each helper draws one figure from in-memory results and saves it as a PNG
next to the delimited output of its experiment.  The CSV tables remain the
machine-readable contract; figures are a convenience layer and never feed
back into computations.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_solution(path, sol, title="pressure and flux"):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax1.plot(sol.grid.nodes, sol.p, lw=1.0)
    ax1.set_ylabel("p(x)")
    ax1.set_title(title)
    ax2.plot(sol.grid.nodes, sol.v, lw=1.0, color="tab:orange")
    ax2.set_ylabel("v(x) = k p'")
    ax2.set_xlabel("x")
    _save(fig, path)


def plot_homogenize(path, x, k0, cell):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(x, k0, lw=1.2)
    ax1.set_xlabel("x")
    ax1.set_ylabel("k0(x)")
    ax1.set_title("effective coefficient")
    ax2.plot(cell.y, cell.chi, lw=1.2)
    ax2.set_xlabel("y")
    ax2.set_ylabel("chi(y)")
    ax2.set_title(f"cell solution at x = {cell.x:g}")
    _save(fig, path)


def plot_convergence(path, report):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    eps = report.eps_list
    for err, label in ((report.err_sup, "sup |pe - p0|"),
                       (report.err_l2, "L2(pe - p0)"),
                       (report.err_h1, "H1(pe - pe_a)"),
                       (report.err_w1inf, "W1inf(pe - pe_a)")):
        ax.loglog(eps, err, "o-", ms=4, label=label)
    ax.loglog(eps, eps * (report.err_sup[0] / eps[0]), "k--", lw=0.8, label="slope 1")
    ax.set_xlabel("eps")
    ax.set_ylabel("error")
    ax.legend(fontsize=8)
    ax.set_title("convergence of the oscillatory solution")
    _save(fig, path)


def plot_transport(path, ensembles):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    eps = [e.eps for e in ensembles]
    means = [e.mean for e in ensembles]
    errs = [2 * e.stderr for e in ensembles]
    ax.errorbar(eps, means, yerr=errs, fmt="o-", capsize=3)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("E sup_t |x_eps - x_0|")
    ax.set_title("path discrepancy vs scale (2 MC stderr bars)")
    _save(fig, path)


def plot_estimate_rows(path, rows, title, xkey="N"):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    xs = np.array([getattr(r, xkey) for r in rows], float)
    ys = np.array([r.mean_err for r in rows])
    es = np.array([2 * r.stderr for r in rows])
    ax.errorbar(xs, ys, yerr=es, fmt="o-", capsize=3)
    ax.set_xscale("log")
    if np.all(ys > 0):
        ax.set_yscale("log")
    ax.set_xlabel(xkey)
    ax.set_ylabel("mean |estimate - truth|")
    ax.set_title(title)
    _save(fig, path)


def plot_clt(path, report, samples_hist=None):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    idx = np.arange(len(report.points))
    width = 0.35
    ax.bar(idx - width / 2, report.empirical_var, width, label="empirical")
    ax.bar(idx + width / 2, report.predicted_var_flux, width, label="predicted (flux)")
    ax.plot(idx, report.predicted_var_literal, "kx", label="predicted (literal)")
    ax.set_xticks(idx)
    ax.set_xticklabels([f"{x:g}" for x in report.points])
    ax.set_xlabel("observation point")
    ax.set_ylabel("var of scaled fluctuation")
    ax.legend(fontsize=8)
    ax.set_title(f"fluctuation variance, {report.replicates} replicates")
    _save(fig, path)


def plot_map_fit(path, x, k_true, k_hat):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(x, k_true, "k-", lw=1.8, label="true k0")
    ax.plot(x, k_hat, "--", lw=1.2, label="posterior mode")
    ax.set_xlabel("x")
    ax.set_ylabel("k(x)")
    ax.legend()
    _save(fig, path)


def plot_realization(path, x, k_eps, k0):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, k_eps, lw=0.5, color="tab:gray", label="one realization")
    ax.plot(x, k0, "k-", lw=2.0, label="slow component k0")
    ax.set_xlabel("x")
    ax.set_ylabel("k(x)")
    ax.legend()
    _save(fig, path)


def plot_study(path_spaghetti, path_variance, study):
    fig, ax = plt.subplots(figsize=(6, 4))
    for curve in study.k1_curves[:100]:
        ax.plot(study.x_out, curve, color="tab:blue", alpha=0.15, lw=0.6)
    ax.plot(study.x_out, study.k0_true, "k-", lw=2.0, label="true k0")
    ax.set_xlabel("x")
    ax.set_ylabel("k(x)")
    ax.set_title("covariance-aware estimates across replicates")
    ax.legend()
    _save(fig, path_spaghetti)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(study.x_out, study.var_k2, "o", ms=3, label="var, noise-only weighting")
    ax.plot(study.x_out, study.var_k1, "-", lw=1.4, label="var, fluctuation-aware")
    ax.set_yscale("log")
    ax.set_xlabel("x")
    ax.set_ylabel("pointwise variance")
    ax.legend()
    ax.set_title(f"estimator variances ({len(study.k1_curves)} replicates)")
    _save(fig, path_variance)


def plot_posterior(path, grid, logdens_vals):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ld = np.asarray(logdens_vals, float)
    rho = np.exp(ld - ld.max())
    rho /= np.trapezoid(rho, grid)
    ax.plot(grid, rho, lw=1.4)
    ax.set_xlabel("theta")
    ax.set_ylabel("posterior density")
    _save(fig, path)
