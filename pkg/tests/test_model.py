import math

import numpy as np
import pytest
from scipy import stats

from stcos.basis import DesignRow
from stcos.covariance import solve_K0
from stcos.errors import ConfigurationError, DomainError
from stcos.model import (ChainConfig, ModelConfig, ProcessParams, SurveyDatum,
                         assemble, collapsed_loglik, invgamma_logpdf, log_joint)

from conftest import rng


def identity_K0(r):
    return solve_K0(np.eye(r), np.eye(r))


def design_row(d, h, psi):
    return DesignRow(d.unit_id, d.year, d.period, np.asarray(psi, float),
                     np.asarray(h, float))


def small_inputs(seed=0, N=3, n_B=2, r=2):
    g = rng(seed)
    data, rows = [], []
    for i in range(N):
        d = SurveyDatum(f"u{i % n_B}", 2000 + i, 1, float(g.standard_normal()),
                        float(g.uniform(0.5, 1.5)))
        h = g.dirichlet(np.ones(n_B))
        psi = g.uniform(0, 1, r)
        data.append(d)
        rows.append(design_row(d, h, psi))
    return assemble(data, rows, identity_K0(r))


# ---------------------------------------------------------------- datum

def test_survey_datum_validation():
    with pytest.raises(DomainError):
        SurveyDatum("a", 2000, 0, 1.0, 1.0)
    with pytest.raises(DomainError):
        SurveyDatum("a", 2000, 1, 1.0, 0.0)
    with pytest.raises(DomainError):
        SurveyDatum("a", 2000, 1, float("nan"), 1.0)


# ---------------------------------------------------------------- assemble

def test_assemble_singleton_passthrough():
    d = SurveyDatum("u", 2000, 1, 3.5, 2.0)
    row = design_row(d, [1.0], [0.25])
    inputs = assemble([d], [row], identity_K0(1))
    assert inputs.z[0] == 3.5 and inputs.v[0] == 4.0
    assert inputs.H_mat.shape == (1, 1) and inputs.Psi_data[0, 0] == 0.25


def test_assemble_rejects_duplicates():
    d = SurveyDatum("u", 2000, 1, 1.0, 1.0)
    rows = [design_row(d, [1.0], [0.5]), design_row(d, [1.0], [0.5])]
    with pytest.raises(ConfigurationError):
        assemble([d, d], rows, identity_K0(1))


def test_assemble_rejects_misaligned_rows():
    d = SurveyDatum("u", 2000, 1, 1.0, 1.0)
    wrong = DesignRow("other", 2000, 1, np.array([0.5]), np.array([1.0]))
    with pytest.raises(ConfigurationError):
        assemble([d], [wrong], identity_K0(1))


def test_assemble_empty_needs_n_B():
    with pytest.raises(ConfigurationError):
        assemble([], [], identity_K0(2))
    inputs = assemble([], [], identity_K0(2), n_B=3)
    assert inputs.n_data == 0 and inputs.n_B == 3 and inputs.r == 2


def test_collapsed_density_matches_scipy_oracle():
    inputs = small_inputs(seed=1)
    g = rng(2)
    mu = g.standard_normal(inputs.n_B)
    eta = g.standard_normal(inputs.r)
    s2 = 0.7
    ours = collapsed_loglik(inputs, mu, eta, s2)
    mean = inputs.H_mat @ mu + inputs.Psi_data @ eta
    oracle = stats.multivariate_normal(mean, np.diag(inputs.v + s2)).logpdf(inputs.z)
    assert abs(ours - oracle) < 1e-10


def test_collapsed_density_small_xi_limit():
    inputs = small_inputs(seed=3)
    mu = np.zeros(inputs.n_B)
    eta = np.zeros(inputs.r)
    at_tiny = collapsed_loglik(inputs, mu, eta, 1e-12)
    no_xi = stats.multivariate_normal(
        inputs.H_mat @ mu + inputs.Psi_data @ eta,
        np.diag(inputs.v)).logpdf(inputs.z)
    assert abs(at_tiny - no_xi) < 1e-6


# ---------------------------------------------------------------- log joint

def zero_params(inputs):
    return ProcessParams(mu=np.zeros(inputs.n_B), eta=np.zeros(inputs.r),
                         xi=np.zeros(inputs.n_data), sigma2_xi=1.0,
                         sigma2_K=1.0, sigma2_mu=1.0)


def test_log_joint_closed_form_zero_case():
    # Z = 0, V = I, all params zero, all variances 1, K_0 = I.
    N, n_B, r = 3, 2, 2
    data = [SurveyDatum(f"u{i}", 2000, 1, 0.0, 1.0) for i in range(N)]
    rows = [design_row(d, np.ones(n_B) / n_B, np.zeros(r)) for d in data]
    inputs = assemble(data, rows, identity_K0(r))
    got = log_joint(zero_params(inputs), inputs)
    expected = (-0.5 * math.log(2 * math.pi) * (N + N + r + n_B)  # 4 N(0,1) blocks
                - 3.0)  # three IG(1,1) log densities at 1: each -1
    assert abs(got - expected) < 1e-12


def test_log_joint_sigma_xi_delta_is_analytic():
    inputs = small_inputs(seed=4)
    p1 = zero_params(inputs)
    p2 = zero_params(inputs)
    p2.sigma2_xi = 2.0
    delta = log_joint(p2, inputs) - log_joint(p1, inputs)
    # xi = 0: only the Gaussian normalizer and the IG prior move.
    n = inputs.n_data
    expected = (-0.5 * n * math.log(2.0)
                + invgamma_logpdf(2.0, 1, 1) - invgamma_logpdf(1.0, 1, 1))
    assert abs(delta - expected) < 1e-12


def test_log_joint_matches_external_density_oracle():
    inputs = small_inputs(seed=5, N=4, n_B=3, r=2)
    g = rng(6)
    params = ProcessParams(
        mu=g.standard_normal(inputs.n_B), eta=g.standard_normal(inputs.r),
        xi=g.standard_normal(inputs.n_data), sigma2_xi=0.8, sigma2_K=1.7,
        sigma2_mu=2.5)
    cfg = ModelConfig()
    got = log_joint(params, inputs, cfg)

    mean = inputs.H_mat @ params.mu + inputs.Psi_data @ params.eta + params.xi
    lam = np.maximum(inputs.K0.eigenvalues, 1e-8 * inputs.K0.eigenvalues[0])
    K = (inputs.K0.eigenvectors * lam) @ inputs.K0.eigenvectors.T
    oracle = (
        stats.norm.logpdf(inputs.z, mean, np.sqrt(inputs.v)).sum()
        + stats.norm.logpdf(params.xi, 0, math.sqrt(params.sigma2_xi)).sum()
        + stats.multivariate_normal(np.zeros(inputs.r),
                                    params.sigma2_K * K).logpdf(params.eta)
        + stats.norm.logpdf(params.mu, 0, math.sqrt(params.sigma2_mu)).sum()
        + stats.invgamma.logpdf(params.sigma2_xi, 1, scale=1)
        + stats.invgamma.logpdf(params.sigma2_K, 1, scale=1)
        + stats.invgamma.logpdf(params.sigma2_mu, 1, scale=1))
    assert abs(got - oracle) < 1e-8


def test_log_joint_permutation_invariance():
    g = rng(7)
    N, n_B, r = 5, 2, 2
    data, rows = [], []
    for i in range(N):
        d = SurveyDatum(f"u{i}", 2001, 1, float(g.standard_normal()), 1.2)
        data.append(d)
        rows.append(design_row(d, g.dirichlet(np.ones(n_B)), g.uniform(0, 1, r)))
    K0 = identity_K0(r)
    inputs = assemble(data, rows, K0)
    params = ProcessParams(mu=g.standard_normal(n_B), eta=g.standard_normal(r),
                           xi=g.standard_normal(N), sigma2_xi=1.0,
                           sigma2_K=1.0, sigma2_mu=1.0)
    perm = g.permutation(N)
    inputs_p = assemble([data[i] for i in perm], [rows[i] for i in perm], K0)
    params_p = ProcessParams(mu=params.mu, eta=params.eta, xi=params.xi[perm],
                             sigma2_xi=1.0, sigma2_K=1.0, sigma2_mu=1.0)
    assert abs(log_joint(params, inputs) - log_joint(params_p, inputs_p)) < 1e-10


def test_log_joint_rejects_bad_variance():
    inputs = small_inputs(seed=8)
    p = zero_params(inputs)
    p.sigma2_K = 0.0
    with pytest.raises(DomainError):
        log_joint(p, inputs)


# ---------------------------------------------------------------- configs

def test_model_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(prior_xi=(0.0, 1.0))
    with pytest.raises(ConfigurationError):
        ModelConfig(rho=1.0)
    with pytest.raises(ConfigurationError):
        ChainConfig(iterations=100, burn_in=200)
    assert ChainConfig(iterations=1000, burn_in=200, thin=4).n_stored == 200
