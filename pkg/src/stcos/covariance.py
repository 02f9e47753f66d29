"""Random-effects covariance construction.

Pipeline: an adjacency-driven propagator built on the orthogonal complement
of the fixed-effect design (so random and fixed effects cannot confound),
the stationary covariance of the implied first-order autoregression, the
joint covariance over all years, and the Frobenius-nearest positive
semidefinite base matrix K_0 relating that covariance to the basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, DomainError, LinearAlgebraError, StabilityError

# Eigenvalue floor (relative to the largest eigenvalue) below which K_0
# directions are treated as null when inverting.
K0_EIG_RTOL = 1e-8


@dataclass(frozen=True)
class MIPropagator:
    """Orthonormal eigenvector block spanning directions orthogonal to the
    fixed-effect design, with the associated eigenvalues."""

    vectors: np.ndarray      # n_B x rank, orthonormal columns
    eigenvalues: np.ndarray  # rank, sorted descending
    rank: int


def mi_propagator(H: np.ndarray, W: np.ndarray | None = None,
                  rank: int | None = None) -> MIPropagator:
    """Eigenvectors of P W P restricted to the orthogonal complement of
    col(H), where P = I - H (H'H)^-1 H'.

    Eigenvalues are sorted descending and the first ``rank`` eigenvectors
    are retained; every retained column satisfies H'm = 0 to machine
    precision. Nonsymmetric W is symmetrized before decomposition.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n, p = H.shape
    if np.linalg.matrix_rank(H) < p:
        raise LinearAlgebraError("H is rank deficient")
    if rank is None:
        rank = n - p
    if not 1 <= rank <= n - p:
        raise ConfigurationError(f"rank must be in [1, {n - p}], got {rank}")
    W = np.eye(n) if W is None else 0.5 * (np.asarray(W, dtype=float)
                                           + np.asarray(W, dtype=float).T)
    # Complete QR: trailing columns span the orthogonal complement of col(H).
    Q, _ = np.linalg.qr(H, mode="complete")
    N = Q[:, p:]
    lam, V = np.linalg.eigh(N.T @ W @ N)
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    vectors = N @ V[:, :rank]
    # Deterministic sign: largest-magnitude component positive.
    for k in range(rank):
        lead = np.argmax(np.abs(vectors[:, k]))
        if vectors[lead, k] < 0:
            vectors[:, k] = -vectors[:, k]
    return MIPropagator(vectors=vectors, eigenvalues=lam[:rank], rank=rank)


def var_propagator(mip: MIPropagator, scale: float = 0.8,
                   W: np.ndarray | None = None) -> np.ndarray:
    """n_B x n_B propagator for the target autoregression.

    Projects the weight map onto the retained eigenspace and rescales to
    the requested spectral radius (the raw projector has radius 1, which
    would violate stationarity).
    """
    if not 0 < scale < 1:
        raise ConfigurationError("propagator scale must lie in (0, 1)")
    Phi = mip.vectors
    G = Phi @ Phi.T if W is None else Phi @ (Phi.T @ np.asarray(W, dtype=float))
    rho = spectral_radius(G)
    if rho <= 0:
        raise LinearAlgebraError("projected weight map is zero; cannot scale")
    return (scale / rho) * G


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(M, dtype=float)))))


def innovation_cov(adjacency: np.ndarray, rho: float = 0.9) -> np.ndarray:
    """Innovation covariance with unit scale: inverse of (I - rho * A_n),
    A_n the symmetrically degree-normalized adjacency.

    Positive definite for |rho| < 1 (verified by Cholesky). The unknown
    scale sigma_K^2 multiplies this at sampling time.
    """
    A = np.asarray(adjacency, dtype=float)
    if A.shape[0] != A.shape[1] or not np.array_equal(A, A.T):
        raise ConfigurationError("adjacency must be square and symmetric")
    if np.any(np.diag(A) != 0):
        raise ConfigurationError("adjacency must have a zero diagonal")
    deg = A.sum(axis=1)
    d = 1.0 / np.sqrt(np.maximum(deg, 1.0))
    Q = np.eye(A.shape[0]) - rho * (d[:, None] * A * d[None, :])
    try:
        c = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise LinearAlgebraError(f"I - rho*A_n is not positive definite (rho={rho})") from exc
    Qinv = sla.cho_solve((c, True), np.eye(A.shape[0]))
    return 0.5 * (Qinv + Qinv.T)


def stationary_cov(M: np.ndarray, Sigma_b: np.ndarray, kron_limit: int = 200,
                   tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Stationary covariance of x_t = M x_{t-1} + b_t: solves
    Sigma = M Sigma M' + Sigma_b.

    Direct Kronecker solve of vec(Sigma) = (I - M (x) M)^-1 vec(Sigma_b) up
    to ``kron_limit`` dimensions, fixed-point iteration beyond.
    """
    M = np.asarray(M, dtype=float)
    S = np.asarray(Sigma_b, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n) or S.shape != (n, n):
        raise ConfigurationError("M and Sigma_b must be square with equal dims")
    if not np.allclose(S, S.T, atol=1e-10 * max(1.0, np.abs(S).max())):
        raise DomainError("Sigma_b must be symmetric")
    if np.linalg.eigvalsh(0.5 * (S + S.T)).min() < -1e-10 * max(np.abs(S).max(), 1e-300):
        raise DomainError("Sigma_b must be positive semidefinite")
    rho = spectral_radius(M)
    if rho >= 1.0:
        raise StabilityError(f"spectral radius {rho:.6f} >= 1; autoregression not stationary")
    if n <= kron_limit:
        lhs = np.eye(n * n) - np.kron(M, M)
        sigma = np.linalg.solve(lhs, S.reshape(-1)).reshape(n, n)
    else:
        sigma = S.copy()
        for _ in range(max_iter):
            nxt = M @ sigma @ M.T + S
            delta = np.linalg.norm(nxt - sigma, "fro")
            sigma = nxt
            if delta <= tol * max(np.linalg.norm(sigma, "fro"), 1e-300):
                break
    return 0.5 * (sigma + sigma.T)


def assemble_joint(M: np.ndarray, Sigma0: np.ndarray, T: int) -> np.ndarray:
    """Joint covariance of T stacked years of the stationary autoregression.

    Block (s, t) with s >= t is M^(s-t) Sigma0; the upper triangle is its
    transpose. Block row/col index = year offset, matching the target
    basis-matrix row layout.
    """
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    M = np.asarray(M, dtype=float)
    Sigma0 = np.asarray(Sigma0, dtype=float)
    n = Sigma0.shape[0]
    joint = np.empty((n * T, n * T))
    lag = [Sigma0]
    for tau in range(1, T):
        lag.append(M @ lag[-1])
    for s in range(T):
        for t in range(T):
            block = lag[s - t] if s >= t else lag[t - s].T
            joint[s * n:(s + 1) * n, t * n:(t + 1) * n] = block
    return joint


@dataclass(frozen=True)
class RandomEffectsCov:
    """Base covariance K_0 with its eigendecomposition; the sampler applies
    the scalar multiplier sigma_K^2 so that K = sigma_K^2 * K_0."""

    K0: np.ndarray
    eigenvalues: np.ndarray   # floored at zero, descending
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.K0.shape[0]

    @property
    def rank(self) -> int:
        lam = self.eigenvalues
        if lam.size == 0 or lam[0] <= 0:
            return 0
        return int((lam > K0_EIG_RTOL * lam[0]).sum())

    def floored_inverse(self) -> np.ndarray:
        """Inverse with eigenvalues floored at K0_EIG_RTOL * lambda_max;
        positive definite even when K_0 is rank deficient."""
        lam = self.eigenvalues
        if lam.size == 0 or lam[0] <= 0:
            raise LinearAlgebraError("K_0 is identically zero")
        floored = np.maximum(lam, K0_EIG_RTOL * lam[0])
        return (self.eigenvectors / floored) @ self.eigenvectors.T

    def pinv_quadform(self, x: np.ndarray) -> float:
        """x' K_0^+ x using the true pseudo-inverse (sub-floor directions dropped)."""
        lam = self.eigenvalues
        if lam.size == 0 or lam[0] <= 0:
            return 0.0
        keep = lam > K0_EIG_RTOL * lam[0]
        proj = self.eigenvectors[:, keep].T @ x
        return float((proj ** 2 / lam[keep]).sum())

    def draw(self, rng: np.random.Generator, sigma2: float) -> np.ndarray:
        """One draw from N(0, sigma2 * K_0)."""
        z = rng.standard_normal(self.dim)
        return self.eigenvectors @ (np.sqrt(sigma2 * self.eigenvalues) * z)

    def logdet_floored(self) -> float:
        lam = self.eigenvalues
        if lam.size == 0 or lam[0] <= 0:
            raise LinearAlgebraError("K_0 is identically zero")
        return float(np.log(np.maximum(lam, K0_EIG_RTOL * lam[0])).sum())


def solve_K0(Sigma_joint: np.ndarray, Psi: np.ndarray) -> RandomEffectsCov:
    """Frobenius-nearest PSD base matrix: minimizes |Sigma - Psi C Psi'|_F
    over positive semidefinite C.

    The unconstrained minimizer Psi^+ Sigma (Psi^+)' is symmetrized and its
    negative eigenvalues floored at zero (nearest-PSD projection).
    """
    Psi = np.asarray(Psi, dtype=float)
    Sigma_joint = np.asarray(Sigma_joint, dtype=float)
    if Psi.ndim != 2 or Sigma_joint.shape != (Psi.shape[0], Psi.shape[0]):
        raise ConfigurationError("Psi rows must match Sigma dimension")
    if not np.any(Psi):
        raise ConfigurationError("Psi has no nonzero column")
    pinv = np.linalg.pinv(Psi)
    C = pinv @ Sigma_joint @ pinv.T
    C = 0.5 * (C + C.T)
    lam, V = np.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam, V = np.maximum(lam[order], 0.0), V[:, order]
    K0 = (V * lam) @ V.T
    K0 = 0.5 * (K0 + K0.T)
    return RandomEffectsCov(K0=K0, eigenvalues=lam, eigenvectors=V)
