"""Data and parameter containers, priors, and the joint Gaussian model.

Observed estimate = latent process + known-variance survey noise; the
latent process on a support is trend (overlap-weighted fine means) plus
basis random effects plus a fine-scale error unique to each datum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import RandomEffectsCov
from .errors import ConfigurationError, DomainError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SurveyDatum:
    """One published estimate: unit id, final year t, period length ell,
    the estimate Z, and its known sampling standard deviation."""

    unit_id: str
    year: int
    period: int
    estimate: float
    sd: float

    def __post_init__(self):
        if self.period < 1:
            raise DomainError(f"{self.key()}: period must be >= 1")
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise DomainError(f"{self.key()}: sd must be positive and finite")
        if not math.isfinite(self.estimate):
            raise DomainError(f"{self.key()}: estimate must be finite")

    def key(self) -> tuple[str, int, int]:
        return (self.unit_id, self.year, self.period)


@dataclass
class ProcessParams:
    """Sampler state: fine-scale trend, basis random effects, per-datum
    fine-scale errors, and the three variance parameters."""

    mu: np.ndarray       # n_B
    eta: np.ndarray      # r
    xi: np.ndarray       # N
    sigma2_xi: float
    sigma2_K: float
    sigma2_mu: float

    def validate(self):
        for name in ("sigma2_xi", "sigma2_K", "sigma2_mu"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"{name} must be strictly positive, got {v}")

    def copy(self) -> "ProcessParams":
        return ProcessParams(self.mu.copy(), self.eta.copy(), self.xi.copy(),
                             self.sigma2_xi, self.sigma2_K, self.sigma2_mu)


@dataclass
class ChainConfig:
    iterations: int = 10_000
    burn_in: int = 2_000
    thin: int = 4
    seed: int = 0

    def __post_init__(self):
        if not (self.iterations >= self.burn_in >= 0):
            raise ConfigurationError("need iterations >= burn_in >= 0")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be nonnegative")

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ModelConfig:
    """Priors and pipeline settings.

    The three variance parameters carry inverse-gamma (shape, scale)
    priors, (1, 1) by default.
    """

    prior_xi: tuple[float, float] = (1.0, 1.0)
    prior_K: tuple[float, float] = (1.0, 1.0)
    prior_mu: tuple[float, float] = (1.0, 1.0)
    rho: float = 0.9
    propagator_scale: float = 0.8
    mi_rank: int | None = None
    mc_points: int = 500
    moe_level: float = 0.90
    chain: ChainConfig = field(default_factory=ChainConfig)

    def __post_init__(self):
        for name in ("prior_xi", "prior_K", "prior_mu"):
            a, b = getattr(self, name)
            if not (a > 0 and b > 0):
                raise ConfigurationError(f"{name} shape/scale must be positive")
        if not -1.0 < self.rho < 1.0:
            raise ConfigurationError("rho must lie in (-1, 1)")
        if not 0.0 < self.propagator_scale < 1.0:
            raise ConfigurationError("propagator_scale must lie in (0, 1)")
        if self.mc_points < 1:
            raise ConfigurationError("mc_points must be >= 1")
        if not 0.0 < self.moe_level < 1.0:
            raise ConfigurationError("moe_level must lie in (0, 1)")


@dataclass
class FittedModelInputs:
    """Stacked, validated model inputs: estimates z with variance diagonal v,
    trend design H_mat (overlap rows), basis design Psi_data, and K_0."""

    z: np.ndarray         # N
    v: np.ndarray         # N, survey variances
    H_mat: np.ndarray     # N x n_B
    Psi_data: np.ndarray  # N x r
    K0: RandomEffectsCov
    keys: list[tuple[str, int, int]]

    @property
    def n_data(self) -> int:
        return self.z.shape[0]

    @property
    def n_B(self) -> int:
        return self.H_mat.shape[1]

    @property
    def r(self) -> int:
        return self.Psi_data.shape[1]


def assemble(data, designs, K0: RandomEffectsCov,
             n_B: int | None = None) -> FittedModelInputs:
    """Stack data and design rows into model inputs.

    Rows must align one-to-one with the data by (unit, year, period);
    duplicate keys are rejected. ``n_B`` is required only when data is empty.
    """
    data = list(data)
    designs = list(designs)
    if len(data) != len(designs):
        raise ConfigurationError(f"{len(data)} data vs {len(designs)} design rows")
    if not data:
        if n_B is None:
            raise ConfigurationError("n_B required for an empty dataset")
        return FittedModelInputs(
            z=np.zeros(0), v=np.zeros(0), H_mat=np.zeros((0, n_B)),
            Psi_data=np.zeros((0, K0.dim)), K0=K0, keys=[])
    seen = set()
    for d, row in zip(data, designs):
        if d.key() != (row.unit_id, row.year, row.period):
            raise ConfigurationError(
                f"design row {(row.unit_id, row.year, row.period)} does not match "
                f"datum {d.key()}")
        if d.key() in seen:
            raise ConfigurationError(f"duplicate datum {d.key()}")
        seen.add(d.key())
    z = np.array([d.estimate for d in data])
    sd = np.array([d.sd for d in data])
    if np.any(sd <= 0):
        raise DomainError("all survey sds must be positive")
    H_mat = np.vstack([row.h for row in designs])
    Psi_data = np.vstack([row.psi for row in designs])
    if n_B is not None and H_mat.shape[1] != n_B:
        raise ConfigurationError(f"h rows have length {H_mat.shape[1]}, expected {n_B}")
    if Psi_data.shape[1] != K0.dim:
        raise ConfigurationError(
            f"basis rows have length {Psi_data.shape[1]}, K_0 is {K0.dim}-dimensional")
    if not np.isfinite(H_mat).all() or not np.isfinite(Psi_data).all():
        raise DomainError("design contains non-finite entries")
    return FittedModelInputs(z=z, v=sd ** 2, H_mat=H_mat, Psi_data=Psi_data,
                             K0=K0, keys=[d.key() for d in data])


def _gauss_logpdf_diag(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> float:
    resid = x - mean
    return float(-0.5 * (x.size * LOG_2PI + np.log(var).sum() + (resid ** 2 / var).sum()))


def invgamma_logpdf(x: float, shape: float, scale: float) -> float:
    if x <= 0:
        raise DomainError("inverse-gamma support is x > 0")
    return shape * math.log(scale) - math.lgamma(shape) \
        - (shape + 1.0) * math.log(x) - scale / x


def log_joint(params: ProcessParams, inputs: FittedModelInputs,
              config: ModelConfig | None = None) -> float:
    """Unnormalized-model log density: Gaussian data term, Gaussian priors
    on xi / eta / mu (with K = sigma2_K * K_0, eigenvalue-floored), and the
    three inverse-gamma variance priors.

    Serves as the sampler's test instrument; the Gibbs updates must leave
    this density invariant.
    """
    config = config or ModelConfig()
    params.validate()
    if params.mu.shape[0] != inputs.n_B or params.eta.shape[0] != inputs.r \
            or params.xi.shape[0] != inputs.n_data:
        raise ConfigurationError("parameter dimensions do not match inputs")
    total = 0.0
    if inputs.n_data:
        mean = inputs.H_mat @ params.mu + inputs.Psi_data @ params.eta + params.xi
        total += _gauss_logpdf_diag(inputs.z, mean, inputs.v)
        total += _gauss_logpdf_diag(params.xi, np.zeros_like(params.xi),
                                    np.full(inputs.n_data, params.sigma2_xi))
    # eta ~ N(0, sigma2_K * K0) with the same floored inverse the sampler uses.
    K0 = inputs.K0
    quad = params.eta @ (K0.floored_inverse() @ params.eta) / params.sigma2_K
    logdet = K0.logdet_floored() + K0.dim * math.log(params.sigma2_K)
    total += -0.5 * (K0.dim * LOG_2PI + logdet + quad)
    total += _gauss_logpdf_diag(params.mu, np.zeros_like(params.mu),
                                np.full(inputs.n_B, params.sigma2_mu))
    total += invgamma_logpdf(params.sigma2_xi, *config.prior_xi)
    total += invgamma_logpdf(params.sigma2_K, *config.prior_K)
    total += invgamma_logpdf(params.sigma2_mu, *config.prior_mu)
    return total


def collapsed_loglik(inputs: FittedModelInputs, mu: np.ndarray, eta: np.ndarray,
                     sigma2_xi: float) -> float:
    """Log density of the data with the fine-scale errors integrated out:
    z ~ N(H mu + Psi eta, V + sigma2_xi I)."""
    if inputs.n_data == 0:
        return 0.0
    mean = inputs.H_mat @ mu + inputs.Psi_data @ eta
    return _gauss_logpdf_diag(inputs.z, mean, inputs.v + sigma2_xi)
