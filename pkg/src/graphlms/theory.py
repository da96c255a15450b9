"""Mean and mean-square performance models of preconditioned diffusion LMS.

Block matrices are ``NM x NM`` with node-major ordering, matching
``col{h_1, ..., h_N}``. Plain diffusion LMS is the special case ``D_k = I``.
The mean-square model uses the small step-size approximation
``F = B^T kron B^T``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .adapt import local_covariances
from .errors import ConvergenceError, PreconditionError, UnstableError
from .graph import spectral_radius

# F is (NM)^2 x (NM)^2; beyond this it no longer fits comfortably in memory.
F_FORM_MAX_NM = 40
SERIES_RTOL = 1e-12
# 2**60 terms; far beyond any stable B met in practice
SERIES_MAX_DOUBLINGS = 60


@dataclass
class TheoryModel:
    calA: np.ndarray
    calM: np.ndarray
    calD: np.ndarray
    calRz: np.ndarray
    calB: np.ndarray
    calG: np.ndarray
    h_tilde0: np.ndarray
    n_nodes: int
    order: int
    rz_blocks: np.ndarray
    d_blocks: np.ndarray

    @property
    def size(self) -> int:
        return self.n_nodes * self.order


def build_theory_model(a, mu, rz_blocks, noise_var, h_tilde0, d=None) -> TheoryModel:
    """Assemble B, G and friends from per-node quantities.

    Parameters
    ----------
    a : ndarray (N, N)
        Left-stochastic combination matrix.
    mu : float or ndarray (N,)
    rz_blocks : ndarray (N, M, M)
        Local regressor covariances ``R_{z,k}``.
    noise_var : ndarray (N,)
    h_tilde0 : ndarray (N*M,) or (N, M) or (M,)
        Initial error ``h_o - h(0)``; an ``(M,)`` vector is repeated per node.
    d : ndarray (N, M) or (N, M, M), optional
        Preconditioners ``D_k``; identity when omitted.
    """
    rz = np.asarray(rz_blocks, dtype=float)
    n, m = rz.shape[0], rz.shape[1]
    a = np.asarray(a, dtype=float)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,))
    noise_var = np.broadcast_to(np.asarray(noise_var, dtype=float), (n,))
    if d is None:
        d_blocks = np.broadcast_to(np.eye(m), (n, m, m)).copy()
    else:
        d = np.asarray(d, dtype=float)
        d_blocks = np.stack([np.diag(row) for row in d]) if d.ndim == 2 else d
    h0 = np.asarray(h_tilde0, dtype=float)
    if h0.shape == (m,):
        h0 = np.tile(h0, n)
    h0 = h0.reshape(n * m)

    eye_nm = np.eye(n * m)
    cal_a = np.kron(a, np.eye(m))
    cal_m = np.kron(np.diag(mu), np.eye(m))
    cal_d = block_diag(*d_blocks)
    cal_rz = block_diag(*rz)
    cal_s = block_diag(*(noise_var[:, None, None] * rz))
    cal_b = cal_a.T @ (eye_nm - cal_m @ cal_d @ cal_rz)
    left = cal_a.T @ cal_m @ cal_d
    cal_g = left @ cal_s @ left.T
    cal_g = 0.5 * (cal_g + cal_g.T)
    return TheoryModel(cal_a, cal_m, cal_d, cal_rz, cal_b, cal_g, h0, n, m, rz, d_blocks)


def model_from_signal(s, a, mu, stats, noise_var, h_tilde0, order, d=None) -> TheoryModel:
    """Convenience: derive every ``R_{z,k}`` from the signal statistics first."""
    return build_theory_model(a, mu, local_covariances(s, stats, order), noise_var, h_tilde0, d)


def mean_error_trajectory(tm: TheoryModel, iters: int) -> np.ndarray:
    """``E h~(i) = B^i h~(0)`` for ``i = 0..iters``, shape (iters + 1, NM)."""
    out = np.empty((iters + 1, tm.size))
    out[0] = tm.h_tilde0
    for i in range(iters):
        out[i + 1] = tm.calB @ out[i]
    return out


@dataclass
class MeanStability:
    spectral_radius: float
    is_stable: bool
    marginal: bool
    sufficient_bounds: np.ndarray


def mean_stability(tm: TheoryModel) -> MeanStability:
    rho = spectral_radius(tm.calB)
    prod = tm.d_blocks @ tm.rz_blocks
    lam = np.max(np.real(np.linalg.eigvals(prod)), axis=-1)
    with np.errstate(divide="ignore"):
        bounds = np.where(lam > 0, 2.0 / lam, np.inf)
    marginal = abs(rho - 1.0) < 1e-9
    return MeanStability(rho, bool(rho < 1.0 and not marginal), bool(marginal), bounds)


def _vec(x):
    return x.ravel(order="F")


def _f_matrix(tm: TheoryModel) -> np.ndarray:
    if tm.size > F_FORM_MAX_NM:
        raise PreconditionError(
            f"F-form needs NM <= {F_FORM_MAX_NM} (got {tm.size}); use transient_msd_B "
            "or steady_state_msd(form='series')"
        )
    bt = tm.calB.T
    return np.kron(bt, bt)


def transient_msd_F(tm: TheoryModel, iters: int) -> np.ndarray:
    """Network MSD ``zeta(0..iters)`` via the ``(NM)^2`` recursion."""
    f = _f_matrix(tm)
    n = tm.n_nodes
    h0 = tm.h_tilde0
    row = _vec(np.outer(h0, h0)) @ f - _vec(np.outer(h0, h0)) + _vec(tm.calG.T)
    w = _vec(np.eye(tm.size))
    zeta = np.empty(iters + 1)
    zeta[0] = h0 @ h0 / n
    for i in range(iters):
        zeta[i + 1] = zeta[i] + row @ w / n
        w = f @ w
    return zeta


def transient_msd_B(tm: TheoryModel, iters: int) -> np.ndarray:
    """Network MSD ``zeta(0..iters)`` using running powers of B only.

    ``Tr(h h^T C)`` with ``C = (B^i)^T B^i`` is evaluated as ``||B^i h||^2``.
    """
    n = tm.n_nodes
    b, g = tm.calB, tm.calG
    bi = np.eye(tm.size)
    bh = tm.h_tilde0.copy()
    zeta = np.empty(iters + 1)
    zeta[0] = bh @ bh / n
    for i in range(iters):
        noise_term = np.sum(bi * (bi @ g))
        bh_next = b @ bh
        zeta[i + 1] = zeta[i] + (noise_term + bh_next @ bh_next - bh @ bh) / n
        bh = bh_next
        bi = b @ bi
    return zeta


def steady_state_msd(tm: TheoryModel, form: str = "series") -> float:
    """Steady-state network MSD by the ``(I - F)^-1`` solve or the B series."""
    if spectral_radius(tm.calB) >= 1.0:
        raise UnstableError("B is not stable; the steady-state MSD diverges")
    n = tm.n_nodes
    if form == "F":
        f = _f_matrix(tm)
        x = np.linalg.solve(np.eye(f.shape[0]) - f, _vec(np.eye(tm.size)))
        return float(_vec(tm.calG.T) @ x / n)
    if form != "series":
        raise PreconditionError(f"unknown form {form!r}")
    # X = sum_i B^i G B^iT summed by doubling: X <- X + P X P^T, P <- P^2
    x = tm.calG.copy()
    p = tm.calB.copy()
    for _ in range(SERIES_MAX_DOUBLINGS):
        inc = p @ x @ p.T
        x = x + inc
        if abs(np.trace(inc)) <= SERIES_RTOL * abs(np.trace(x)):
            break
        p = p @ p
    else:
        raise ConvergenceError("steady-state series did not converge")
    return float(np.trace(x) / n)


def time_constants(mu, eigenvalues, d=None) -> np.ndarray:
    """Mode time constants, columns ``(plain, preconditioned)``.

    ``1 / (2 mu lambda_m)`` and ``1 / (2 mu d_m lambda_m)``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if np.any(lam <= 0):
        raise PreconditionError("eigenvalues must be positive")
    d = np.ones_like(lam) if d is None else np.asarray(d, dtype=float)
    plain = 1.0 / (2.0 * mu * lam)
    precond = 1.0 / (2.0 * mu * d * lam)
    return np.column_stack([plain, precond])


def to_db(x):
    return 10.0 * np.log10(x)
