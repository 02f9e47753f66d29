"""Gibbs sampler with fully conjugate updates, chain management, and
convergence summaries.

Update order is fixed (eta, mu, xi, then the three variances) for
reproducibility; conjugacy makes the order immaterial for correctness.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import LinearAlgebraError
from .model import ChainConfig, FittedModelInputs, ModelConfig, ProcessParams


@dataclass
class PosteriorDraws:
    """Stored Gibbs samples (post burn-in, thinned) plus chain metadata."""

    mu: np.ndarray          # S x n_B
    eta: np.ndarray         # S x r
    xi: np.ndarray          # S x N
    sigma2_xi: np.ndarray   # S
    sigma2_K: np.ndarray    # S
    sigma2_mu: np.ndarray   # S
    keys: list[tuple[str, int, int]]
    meta: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.sigma2_xi.shape[0]

    def param(self, name: str) -> np.ndarray:
        return getattr(self, name)


class _Workspace:
    """Precomputed sufficient statistics for one fitted dataset."""

    def __init__(self, inputs: FittedModelInputs):
        vinv = 1.0 / inputs.v if inputs.n_data else np.zeros(0)
        self.vinv = vinv
        self.Ht_Vi = inputs.H_mat.T * vinv            # n_B x N
        self.Ht_Vi_H = self.Ht_Vi @ inputs.H_mat      # n_B x n_B
        self.Pt_Vi = inputs.Psi_data.T * vinv         # r x N
        self.Pt_Vi_P = self.Pt_Vi @ inputs.Psi_data   # r x r
        self.K0_prec = inputs.K0.floored_inverse()    # r x r


def _workspace(inputs: FittedModelInputs) -> _Workspace:
    ws = getattr(inputs, "_workspace", None)
    if ws is None:
        ws = _Workspace(inputs)
        inputs._workspace = ws
    return ws


def _draw_mvn_from_precision(Q: np.ndarray, b: np.ndarray,
                             rng: np.random.Generator) -> np.ndarray:
    # N(Q^-1 b, Q^-1) via the Cholesky factor of the precision.
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        eig = np.linalg.eigvalsh(0.5 * (Q + Q.T))
        raise LinearAlgebraError(
            f"conditional precision not PD; eigenvalue range "
            f"[{eig.min():.3e}, {eig.max():.3e}]") from exc
    mean = sla.cho_solve((L, True), b)
    z = rng.standard_normal(b.shape[0])
    return mean + sla.solve_triangular(L.T, z, lower=False)


def _draw_invgamma(rng: np.random.Generator, shape: float, scale: float) -> float:
    return float(1.0 / rng.gamma(shape, 1.0 / scale))


def gibbs_step(state: ProcessParams, inputs: FittedModelInputs,
               config: ModelConfig, rng: np.random.Generator) -> ProcessParams:
    """One full sweep of conjugate updates; returns a new state.

    eta | .   ~ N with precision Psi'V^-1 Psi + (sigma2_K K_0)^-1 (floored)
    mu | .    ~ N with precision H'V^-1 H + I / sigma2_mu
    xi_i | .  ~ N, componentwise
    sigma2_xi ~ IG(a + N/2,   b + xi'xi / 2)
    sigma2_mu ~ IG(a + n_B/2, b + mu'mu / 2)
    sigma2_K  ~ IG(a + r+/2,  b + eta' K_0^+ eta / 2), r+ = rank(K_0)
    """
    ws = _workspace(inputs)
    K0 = inputs.K0
    n, r, n_B = inputs.n_data, inputs.r, inputs.n_B
    mu, xi = state.mu, state.xi

    Q = ws.Pt_Vi_P + ws.K0_prec / state.sigma2_K
    b = ws.Pt_Vi @ (inputs.z - inputs.H_mat @ mu - xi) if n else np.zeros(r)
    eta = _draw_mvn_from_precision(Q, b, rng)

    Q = ws.Ht_Vi_H + np.eye(n_B) / state.sigma2_mu
    b = ws.Ht_Vi @ (inputs.z - inputs.Psi_data @ eta - xi) if n else np.zeros(n_B)
    mu = _draw_mvn_from_precision(Q, b, rng)

    if n:
        prec = ws.vinv + 1.0 / state.sigma2_xi
        resid = inputs.z - inputs.H_mat @ mu - inputs.Psi_data @ eta
        xi = resid * ws.vinv / prec + rng.standard_normal(n) / np.sqrt(prec)
    else:
        xi = np.zeros(0)

    a, bp = config.prior_xi
    sigma2_xi = _draw_invgamma(rng, a + 0.5 * n, bp + 0.5 * float(xi @ xi))
    a, bp = config.prior_mu
    sigma2_mu = _draw_invgamma(rng, a + 0.5 * n_B, bp + 0.5 * float(mu @ mu))
    a, bp = config.prior_K
    sigma2_K = _draw_invgamma(rng, a + 0.5 * K0.rank,
                              bp + 0.5 * K0.pinv_quadform(eta))

    out = ProcessParams(mu=mu, eta=eta, xi=xi, sigma2_xi=sigma2_xi,
                        sigma2_K=sigma2_K, sigma2_mu=sigma2_mu)
    out.validate()
    return out


def initial_state(inputs: FittedModelInputs, rng: np.random.Generator) -> ProcessParams:
    return ProcessParams(
        mu=np.zeros(inputs.n_B), eta=np.zeros(inputs.r),
        xi=np.zeros(inputs.n_data),
        sigma2_xi=1.0, sigma2_K=1.0, sigma2_mu=1.0)


def run_chain(inputs: FittedModelInputs, config: ModelConfig,
              chain: ChainConfig | None = None) -> PosteriorDraws:
    """Run the Gibbs chain, discard burn-in, thin, and attach effective
    sample sizes and split potential-scale-reduction factors."""
    chain = chain or config.chain
    rng = np.random.default_rng(np.random.SeedSequence([chain.seed, 0xC4A1]))
    state = initial_state(inputs, rng)
    n_store = chain.n_stored
    if n_store == 0:
        warnings.warn("iterations == burn_in after thinning: no draws stored")
    S = n_store
    mu = np.empty((S, inputs.n_B))
    eta = np.empty((S, inputs.r))
    xi = np.empty((S, inputs.n_data))
    s2_xi = np.empty(S)
    s2_K = np.empty(S)
    s2_mu = np.empty(S)
    stored = 0
    for it in range(chain.iterations):
        state = gibbs_step(state, inputs, config, rng)
        bad = [v for v in (state.sigma2_xi, state.sigma2_K, state.sigma2_mu)
               if not np.isfinite(v)]
        if bad or not (np.isfinite(state.mu).all() and np.isfinite(state.eta).all()):
            raise LinearAlgebraError(f"non-finite state at iteration {it}")
        k = it - chain.burn_in
        if k >= 0 and k % chain.thin == 0 and stored < S:
            mu[stored] = state.mu
            eta[stored] = state.eta
            xi[stored] = state.xi
            s2_xi[stored] = state.sigma2_xi
            s2_K[stored] = state.sigma2_K
            s2_mu[stored] = state.sigma2_mu
            stored += 1
    draws = PosteriorDraws(
        mu=mu[:stored], eta=eta[:stored], xi=xi[:stored],
        sigma2_xi=s2_xi[:stored], sigma2_K=s2_K[:stored], sigma2_mu=s2_mu[:stored],
        keys=list(inputs.keys),
        meta={"seed": chain.seed, "iterations": chain.iterations,
              "burn_in": chain.burn_in, "thin": chain.thin, "stored": stored})
    if stored >= 4:
        draws.diagnostics = chain_diagnostics(draws)
    return draws


def effective_sample_size(x: np.ndarray) -> float:
    """ESS from the initial positive sequence of paired autocovariances."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = float(x @ x) / n
    if var <= 0:
        return float(n)
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / var
    # Geyer: accumulate while the sum of adjacent autocorrelation pairs stays positive.
    tau = 1.0
    for k in range(1, n // 2):
        pair = rho[2 * k - 1] + rho[2 * k]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(min(n, n / tau))


def split_rhat(x: np.ndarray) -> float:
    """Potential scale reduction from the two halves of a single chain."""
    x = np.asarray(x, dtype=float)
    n = x.size // 2
    if n < 2:
        return float("nan")
    halves = np.stack([x[:n], x[n:2 * n]])
    within = halves.var(axis=1, ddof=1).mean()
    between = n * halves.mean(axis=1).var(ddof=1)
    if within <= 1e-300:
        return 1.0
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def chain_diagnostics(draws: PosteriorDraws) -> dict:
    """Per-scalar ESS and split R-hat, plus chain-level extremes."""
    per_param: dict[str, dict[str, float]] = {}

    def add(name, series):
        per_param[name] = {"ess": effective_sample_size(series),
                           "rhat": split_rhat(series)}

    for j in range(draws.mu.shape[1]):
        add(f"mu[{j}]", draws.mu[:, j])
    for j in range(draws.eta.shape[1]):
        add(f"eta[{j}]", draws.eta[:, j])
    for j in range(draws.xi.shape[1]):
        add(f"xi[{j}]", draws.xi[:, j])
    add("sigma2_xi", draws.sigma2_xi)
    add("sigma2_K", draws.sigma2_K)
    add("sigma2_mu", draws.sigma2_mu)
    ess = [v["ess"] for v in per_param.values()]
    rhat = [v["rhat"] for v in per_param.values() if np.isfinite(v["rhat"])]
    return {"per_param": per_param,
            "min_ess": float(min(ess)) if ess else float("nan"),
            "max_rhat": float(max(rhat)) if rhat else float("nan")}
