import numpy as np
import pytest

from homest import fields
from homest.errors import CoefficientError, DomainError, ResolutionError


def test_eval_two_scale_identity_coefficient():
    f = fields.constant_field(1.0)
    assert fields.eval_two_scale(f, 0.3, 0.1) == pytest.approx(1.0)


def test_eval_two_scale_zero_phase():
    f = fields.exp_sin_field(1.0)
    assert fields.eval_two_scale(f, 0.0, 0.5) == pytest.approx(1.0)


def test_eval_two_scale_half_phase():
    # y = x/eps = 0.5, sin(pi) = 0
    f = fields.exp_sin_field(1.0)
    assert fields.eval_two_scale(f, 0.125, 0.25) == pytest.approx(1.0, abs=1e-12)


def test_eval_two_scale_domain_error():
    f = fields.exp_sin_field(1.0)
    with pytest.raises(DomainError):
        fields.eval_two_scale(f, 1.5, 0.1)


def test_covariance_normalizations():
    r = fields.gaussian_covariance
    assert r(0.0) == pytest.approx(1.0)
    lag = np.linspace(-12, 12, 1 << 15)
    assert np.trapezoid(r(lag), lag) == pytest.approx(1.0, abs=1e-8)
    assert np.allclose(r(lag), r(-lag))


def test_bad_covariance_rejected():
    with pytest.raises(CoefficientError):
        fields.MicrostructureModel(sigma=0.5, epsilon=0.1,
                                   covariance=lambda x: 2.0 * fields.gaussian_covariance(x))


def test_microstructure_resolution_rule():
    model = fields.MicrostructureModel(sigma=0.5, epsilon=0.01)
    with pytest.raises(ResolutionError):
        fields.sample_microstructure(model, np.linspace(0, 1, 101), seed=1)


def test_microstructure_deterministic():
    model = fields.MicrostructureModel(sigma=0.5, epsilon=2**-5)
    grid = np.linspace(0, 1, 513)
    s1 = fields.sample_microstructure(model, grid, seed=42)
    s2 = fields.sample_microstructure(model, grid, seed=42)
    assert np.array_equal(s1.mu_values, s2.mu_values)
    s3 = fields.sample_microstructure(model, grid, seed=43)
    assert not np.array_equal(s1.mu_values, s3.mu_values)


def test_microstructure_lag0_variance():
    model = fields.MicrostructureModel(sigma=0.5, epsilon=2**-6)
    grid = np.linspace(0, 100, 100_001)  # spacing 1e-3, below eps/8
    s = fields.sample_microstructure(model, grid, seed=7)
    assert s.mu_values.var() == pytest.approx(1.0, abs=0.05)


def test_microstructure_mean_and_covariance_oracle():
    # lags of 0, 1/2, 1 and 2 correlation lengths over 200 replicates
    model = fields.MicrostructureModel(sigma=0.5, epsilon=2**-5)
    grid = np.linspace(0, 40, 10_241)  # fast spacing 1/8 of the correlation length
    ds = (grid[1] - grid[0]) / model.epsilon
    lags = [0, 4, 8, 16]
    acc = {l: [] for l in lags}
    means = []
    for r in range(200):
        mu = fields.sample_microstructure(model, grid, seed=1000 + r).mu_values
        means.append(mu.mean())
        for l in lags:
            acc[l].append(np.mean(mu[: len(mu) - l] * mu[l:]) if l else np.mean(mu * mu))
    means = np.array(means)
    assert abs(means.mean()) <= 3 * means.std(ddof=1) / np.sqrt(200)
    for l in lags:
        vals = np.array(acc[l])
        se = vals.std(ddof=1) / np.sqrt(200)
        assert abs(vals.mean() - fields.gaussian_covariance(l * ds)) <= 3 * se


def _unit_k0(x):
    return np.ones_like(np.asarray(x, float))


def test_compose_sigma_zero_exact():
    model = fields.MicrostructureModel(sigma=0.0, epsilon=2**-4)
    grid = np.linspace(0, 1, 257)
    s = fields.sample_microstructure(model, grid, seed=3)
    comp = fields.compose_random_coefficient(_unit_k0, s, 0.0)
    assert np.array_equal(comp(grid), _unit_k0(grid))
    assert comp.clamp_fraction == 0.0


def test_compose_reciprocal_arithmetic_and_clamp():
    grid = np.linspace(0, 1, 257)
    s = fields.MicrostructureSample(grid=grid, mu_values=np.ones_like(grid),
                                    seed=0, epsilon=2**-4)
    comp = fields.compose_random_coefficient(_unit_k0, s, 0.5)
    assert comp(np.array([0.5]))[0] == pytest.approx(1 / 1.5)

    # mu = -1.9 puts the reciprocal exactly on the floor 1/20
    s2 = fields.MicrostructureSample(grid=grid, mu_values=-1.9 * np.ones_like(grid),
                                     seed=0, epsilon=2**-4)
    comp2 = fields.compose_random_coefficient(_unit_k0, s2, 0.5, clamp_ceiling=20.0)
    assert comp2(np.array([0.5]))[0] == pytest.approx(20.0)

    # below the floor the value clamps and the frequency flag trips
    s3 = fields.MicrostructureSample(grid=grid, mu_values=-1.95 * np.ones_like(grid),
                                     seed=0, epsilon=2**-4)
    comp3 = fields.compose_random_coefficient(_unit_k0, s3, 0.5, clamp_ceiling=20.0)
    assert comp3(np.array([0.5]))[0] == pytest.approx(20.0)
    assert comp3.clamp_fraction == 1.0 and comp3.warn


def test_composed_coefficient_positive():
    model = fields.MicrostructureModel(sigma=2.0, epsilon=2**-4)
    grid = np.linspace(0, 4, 1025)
    for seed in range(5):
        s = fields.sample_microstructure(model, grid, seed=seed)
        comp = fields.compose_random_coefficient(_unit_k0, s, model.sigma)
        k = comp(grid)
        assert np.all(k > 0)
        assert np.all(k <= comp.clamp_ceiling * (1 + 1e-12))


def test_prior_zero_weight_draw():
    prior = fields.GaussianPrior(basis=fields.fourier_basis(0, 1, 1), weights=[0.0])
    u = fields.sample_prior_draw(prior, np.linspace(0, 1, 33), seed=5)
    assert np.all(u == 0.0)


def test_prior_draw_deterministic():
    prior = fields.default_prior(n_modes=4)
    grid = np.linspace(0, 1, 65)
    assert np.array_equal(fields.sample_prior_draw(prior, grid, seed=9),
                          fields.sample_prior_draw(prior, grid, seed=9))


def test_prior_pointwise_variance():
    prior = fields.default_prior(n_modes=4, sigma0=1.0, decay=2.0)
    grid = np.linspace(0.05, 0.95, 19)
    draws = np.array([fields.sample_prior_draw(prior, grid, seed=10_000 + r)
                      for r in range(10_000)])
    target = sum(w**2 * phi(grid) ** 2 for w, phi in zip(prior.weights, prior.basis))
    assert np.max(np.abs(draws.var(axis=0) / target - 1.0)) < 0.05


def test_prior_coefficient_covariance_frobenius():
    prior = fields.default_prior(n_modes=4, sigma0=1.0, decay=2.0)
    thetas = np.array([fields.draw_coefficients(prior, seed=50_000 + r)
                       for r in range(10_000)])
    emp = np.cov(thetas.T)
    target = np.diag(prior.weights**2)
    rel = np.linalg.norm(emp - target) / np.linalg.norm(target)
    assert rel < 0.05


def test_prior_log_density_values():
    prior = fields.coefficient_prior([2.0])
    assert fields.prior_log_density(prior, [0.0]) == 0.0
    assert fields.prior_log_density(prior, [2.0]) == pytest.approx(-0.5)
    prior2 = fields.coefficient_prior([1.0, 1.0])
    assert fields.prior_log_density(prior2, [3.0, 4.0]) == pytest.approx(-12.5)


def test_prior_log_density_zero_weight_sentinel():
    prior = fields.coefficient_prior([1.0, 0.0])
    assert fields.prior_log_density(prior, [1.0, 0.0]) == pytest.approx(-0.5)
    assert fields.prior_log_density(prior, [1.0, 0.1]) == float("-inf")


def test_dump_microstructure_csv(tmp_path):
    model = fields.MicrostructureModel(sigma=0.3, epsilon=2**-4)
    grid = np.linspace(0, 1, 257)
    s = fields.sample_microstructure(model, grid, seed=1)
    comp = fields.compose_random_coefficient(_unit_k0, s, 0.3)
    path = tmp_path / "micro.csv"
    fields.dump_microstructure_csv(path, comp)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "x,mu,k"
    assert len(rows) == 258
    x, mu, k = map(float, rows[1].split(","))
    assert k == pytest.approx(1.0 / (1.0 + 0.3 * mu))
