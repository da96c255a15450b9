"""Adaptive estimators of graph-filter coefficients.

All per-node arrays put the node axis second to last: estimates ``h`` and
regressors ``z`` are ``(..., N, M)``, outputs ``y`` are ``(..., N)``. Any
leading axes are treated as independent replicas (Monte-Carlo runs), which is
how the harness vectorizes over runs.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError

log = logging.getLogger(__name__)

ALGORITHMS = ("lms", "plms", "lmsn", "nlms")


class RankDeficiencyError(PreconditionError):
    pass


@dataclass
class FilterModel:
    """Graph-filter coefficients, node-invariant ``(M,)`` or node-varying ``(N, M)``.

    A node-varying bank has ``coefficients[k, m] == [h^(m)]_k``.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.ndim not in (1, 2):
            raise PreconditionError("coefficients must be (M,) or (N, M)")
        if not np.all(np.isfinite(self.coefficients)):
            raise PreconditionError("coefficients must be finite")

    @property
    def order(self) -> int:
        return self.coefficients.shape[-1]

    @property
    def node_varying(self) -> bool:
        return self.coefficients.ndim == 2

    def bank(self, n: int) -> np.ndarray:
        """The ``(N, M)`` coefficient bank, broadcasting the node-invariant case."""
        if self.node_varying:
            if self.coefficients.shape[0] != n:
                raise PreconditionError(f"bank has {self.coefficients.shape[0]} rows, need {n}")
            return self.coefficients
        return np.broadcast_to(self.coefficients, (n, self.order)).copy()

    def graph_filter(self, s) -> np.ndarray:
        """The ``N x N`` operator ``sum_m diag(h^(m)) S^m``."""
        s = np.asarray(s, dtype=float)
        bank = self.bank(s.shape[0])
        out = np.zeros_like(s)
        power = np.eye(s.shape[0])
        for m in range(self.order):
            out += bank[:, m][:, None] * power
            power = power @ s
        return out


# -- second-order moments ------------------------------------------------------


def shift_power_rows(s, order: int) -> np.ndarray:
    """``rows[m]`` is ``S^m`` built by repeated right-multiplication, m < order."""
    s = np.asarray(s, dtype=float)
    rows = np.empty((order,) + s.shape)
    rows[0] = np.eye(s.shape[0])
    for m in range(1, order):
        rows[m] = rows[m - 1] @ s
    return rows


def _lagged(stats, tau: int) -> np.ndarray:
    # R_x(-tau) = R_x(tau)^T
    return stats.autocorr(tau) if tau >= 0 else stats.autocorr(-tau).T


def local_covariances(s, stats, order: int) -> np.ndarray:
    """All ``R_{z,k}`` stacked as ``(N, M, M)``.

    ``[R_{z,k}]_{m,n} = [S^m]_{k,.} R_x(n - m) [S^n]_{k,.}^T`` (0-based m, n).
    """
    rows = shift_power_rows(s, order)
    n_nodes = rows.shape[1]
    out = np.empty((n_nodes, order, order))
    for m in range(order):
        for n in range(m, order):
            val = np.einsum("ki,ij,kj->k", rows[m], _lagged(stats, n - m), rows[n])
            out[:, m, n] = val
            out[:, n, m] = val
    return out


def local_covariance(s, stats, k: int, order: int) -> np.ndarray:
    return local_covariances(s, stats, order)[k]


def cross_correlation(s, stats, filt: FilterModel, lag: int) -> np.ndarray:
    """``R_xy(lag) = E{y(i) x(i - lag)^T}`` implied by the time-vertex model."""
    if getattr(stats, "rxy", None) is not None:
        return stats.rxy(lag)
    s = np.asarray(s, dtype=float)
    bank = filt.bank(s.shape[0])
    out = np.zeros_like(s)
    power = np.eye(s.shape[0])
    for j in range(filt.order):
        out += bank[:, j][:, None] * (power @ _lagged(stats, lag - j))
        power = power @ s
    return out


def compute_global_moments(s, stats, filt: FilterModel):
    """Exact ``R_Z`` (M x M) and ``r_Zy`` (M,) of the centralized problem."""
    order = filt.order
    r_z = local_covariances(s, stats, order).sum(axis=0)
    rows = shift_power_rows(s, order)
    r_zy = np.array(
        [np.trace(rows[m].T @ cross_correlation(s, stats, filt, m)) for m in range(order)]
    )
    lam_min = np.linalg.eigvalsh(r_z)[0]
    if lam_min < -1e-10:
        warnings.warn(f"R_Z is numerically indefinite (min eigenvalue {lam_min:.3e})")
    return r_z, r_zy


def centralized_solution(r_z, r_zy, mode: str = "exact", mu: float | None = None, iters: int = 0):
    """Wiener solution by direct solve or by deterministic gradient descent."""
    r_z = np.asarray(r_z, dtype=float)
    r_zy = np.asarray(r_zy, dtype=float)
    if mode == "exact":
        if np.linalg.matrix_rank(r_z) < r_z.shape[0]:
            raise RankDeficiencyError(
                "R_Z is singular; use a ridge fallback such as solve(R_Z + delta*I, r_Zy)"
            )
        return np.linalg.solve(r_z, r_zy)
    if mode == "gradient-descent":
        lam_max = np.linalg.eigvalsh(r_z)[-1]
        if mu is None or not 0 < mu < 2.0 / lam_max:
            raise PreconditionError(f"gradient mode needs 0 < mu < {2.0 / lam_max:.6g}")
        h = np.zeros_like(r_zy)
        for _ in range(iters):
            h = h + mu * (r_zy - r_z @ h)
        return h
    raise PreconditionError(f"unknown mode {mode!r}")


def centralized_lms_step(h, z_mat, y, mu: float) -> np.ndarray:
    """``h + mu Z^T (y - Z h)``; stable in the mean for ``0 < mu < 2/lambda_max(R_Z)``."""
    z_mat = np.asarray(z_mat, dtype=float)
    return h + mu * z_mat.T @ (y - z_mat @ h)


# -- preconditioning -------------------------------------------------------


@dataclass
class Preconditioner:
    """Squared row norms of shift powers: ``p[k, m] = ||[S^m]_{k,.}||^2``."""

    p: np.ndarray

    def matrix(self, k: int) -> np.ndarray:
        return np.diag(self.p[k])

    def d(self, epsilon: float) -> np.ndarray:
        """Diagonals of every ``D_k = (eps I + P_k)^-1``, shape (N, M)."""
        return 1.0 / (epsilon + self.p)


def compute_preconditioner(s, order: int) -> Preconditioner:
    s = np.asarray(s, dtype=float)
    p = np.empty((s.shape[0], order))
    row = np.eye(s.shape[0])
    for m in range(order):
        p[:, m] = (row**2).sum(axis=1)
        row = row @ s
    return Preconditioner(p)


def d_matrix(p_k, epsilon: float) -> np.ndarray:
    return np.diag(1.0 / (epsilon + np.asarray(p_k, dtype=float)))


def step_size_bounds(r_z_blocks, d=None) -> np.ndarray:
    """Per-node ``2 / lambda_max(D_k R_{z,k})`` (the i.i.d. sufficient bound)."""
    r = np.asarray(r_z_blocks, dtype=float)
    if d is not None:
        r = np.asarray(d)[..., :, None] * r
    lam = np.max(np.real(np.linalg.eigvals(r)), axis=-1)
    return 2.0 / lam


def check_step_sizes(mu, r_z_blocks, d=None) -> bool:
    """Warn (never raise) when a step-size exceeds its per-node bound."""
    bounds = step_size_bounds(r_z_blocks, d)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), bounds.shape)
    bad = np.flatnonzero(mu >= bounds)
    if bad.size:
        warnings.warn(
            f"step-sizes exceed 2/lambda_max(D_k R_zk) at nodes {bad.tolist()[:10]}"
            f" (bound min {bounds.min():.4g})"
        )
        return False
    return True


# -- combination -----------------------------------------------------------


def build_combination_matrix(support) -> np.ndarray:
    """Uniform left-stochastic weights over each active set.

    ``support[..., l, k]`` is True when ``l`` belongs to the active set of
    ``k``. Columns that come in empty fall back to the self-loop.
    """
    sup = np.array(support, dtype=bool)
    n = sup.shape[-1]
    empty = ~sup.any(axis=-2)
    if empty.any():
        log.warning("empty active set for %d node(s); using self-loop only", int(empty.sum()))
        idx = np.nonzero(empty)
        sup[idx[:-1] + (idx[-1], idx[-1])] = True
    if not np.all(np.diagonal(sup, axis1=-2, axis2=-1)):
        raise PreconditionError("every active set must contain its own node")
    a = sup.astype(float)
    a /= a.sum(axis=-2, keepdims=True)
    assert a.shape[-2:] == (n, n)
    return a


def combine(psi, a) -> np.ndarray:
    """``h_k = sum_l a_lk psi_l`` for every node (and replica)."""
    return np.swapaxes(a, -1, -2) @ psi


# -- adaptation rules ------------------------------------------------------


def _error(h, z, y):
    return y - np.einsum("...km,...km->...k", z, h)


def adapt_lms(h, z, y, mu):
    e = _error(h, z, y)
    return h + (mu[:, None] * z) * e[..., None]


def adapt_plms(h, z, y, mu, d):
    e = _error(h, z, y)
    return h + (mu[:, None] * d * z) * e[..., None]


def adapt_nlms(h, z, y, mu, epsilon):
    e = _error(h, z, y)
    scale = mu / (np.einsum("...km,...km->...k", z, z) + epsilon)
    return h + (scale[..., None] * z) * e[..., None]


def adapt_lmsn(h, z, y, mu, r_hat, mu_bar, epsilon):
    """Newton-type adaptation with a running Hessian estimate.

    Returns ``(psi, r_hat_new)``. The regularized matrix is symmetric positive
    definite for ``epsilon > 0`` because ``r_hat`` is a positive mix of outer
    products, so a plain linear solve is used.
    """
    r_hat = (1.0 - mu_bar) * r_hat + mu_bar * (z[..., :, None] * z[..., None, :])
    e = _error(h, z, y)
    reg = r_hat + epsilon * np.eye(z.shape[-1])
    step = np.linalg.solve(reg, (z * e[..., None])[..., None])[..., 0]
    return h + mu[:, None] * step, r_hat


@dataclass
class NetworkState:
    """Per-node estimates and algorithm parameters of a diffusion network.

    ``h`` has shape ``(..., N, M)``; ``combination`` is ``(N, N)`` or carries
    the same leading axes as ``h`` when it varies per replica (clustering).
    """

    algorithm: str
    h: np.ndarray
    mu: np.ndarray
    combination: np.ndarray
    d: np.ndarray | None = None
    r_hat: np.ndarray | None = None
    epsilon: float = 0.0
    mu_bar: float = 0.05
    psi: np.ndarray | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise PreconditionError(f"unknown algorithm {self.algorithm!r}")
        n = self.h.shape[-2]
        self.mu = np.broadcast_to(np.asarray(self.mu, dtype=float), (n,)).copy()
        if self.algorithm == "plms" and self.d is None:
            raise PreconditionError("PLMS needs the preconditioner diagonals d")
        if self.algorithm in ("lmsn", "nlms") and self.epsilon <= 0:
            raise PreconditionError(f"{self.algorithm} needs epsilon > 0")
        if self.algorithm == "lmsn":
            if not 0 < self.mu_bar <= 1:
                raise PreconditionError("mu_bar must lie in (0, 1]")
            if self.r_hat is None:
                self.r_hat = np.zeros(self.h.shape + (self.h.shape[-1],))

    @property
    def n_nodes(self) -> int:
        return self.h.shape[-2]

    def adapt(self, z, y) -> np.ndarray:
        if self.algorithm == "lms":
            self.psi = adapt_lms(self.h, z, y, self.mu)
        elif self.algorithm == "plms":
            self.psi = adapt_plms(self.h, z, y, self.mu, self.d)
        elif self.algorithm == "nlms":
            self.psi = adapt_nlms(self.h, z, y, self.mu, self.epsilon)
        else:
            self.psi, self.r_hat = adapt_lmsn(
                self.h, z, y, self.mu, self.r_hat, self.mu_bar, self.epsilon
            )
        return self.psi

    def combine(self, a=None) -> np.ndarray:
        if a is not None:
            self.combination = a
        self.h = combine(self.psi, self.combination)
        return self.h

    def step(self, z, y) -> "NetworkState":
        self.adapt(z, y)
        self.combine()
        return self


def make_state(
    algorithm: str,
    n_nodes: int,
    order: int,
    mu,
    combination,
    s=None,
    epsilon: float = 0.0,
    mu_bar: float = 0.05,
    batch_shape=(),
) -> NetworkState:
    """Zero-initialized network state; PLMS diagonals are derived from ``s``."""
    h = np.zeros(tuple(batch_shape) + (n_nodes, order))
    d = None
    if algorithm == "plms":
        if s is None:
            raise PreconditionError("PLMS needs the shift matrix to build D_k")
        d = compute_preconditioner(s, order).d(epsilon)
    return NetworkState(
        algorithm, h, mu, np.asarray(combination, dtype=float), d=d, epsilon=epsilon, mu_bar=mu_bar
    )


def _step_as(algorithm, state: NetworkState, z, y) -> NetworkState:
    if state.algorithm != algorithm:
        raise PreconditionError(f"state runs {state.algorithm!r}, not {algorithm!r}")
    return state.step(z, y)


def diffusion_lms_step(state: NetworkState, z, y) -> NetworkState:
    """Adapt-then-combine diffusion LMS, one iteration."""
    return _step_as("lms", state, z, y)


def plms_step(state: NetworkState, z, y) -> NetworkState:
    return _step_as("plms", state, z, y)


def lmsn_step(state: NetworkState, z, y) -> NetworkState:
    return _step_as("lmsn", state, z, y)


def eps_nlms_step(state: NetworkState, z, y) -> NetworkState:
    return _step_as("nlms", state, z, y)
