"""Shifted-signal regressors, centralized and per-node.

Row k of ``Z(i) = [x(i), S x(i-1), ..., S^{M-1} x(i-M+1)]`` is the regressor
``z_k(i)`` of node k. The distributed recursion rebuilds it every step with a
single shift, reading only one-hop neighbours' stored entries.
"""
from __future__ import annotations

import numpy as np

from .errors import PreconditionError


def centralized_regressor(s, x_history) -> np.ndarray:
    """Stack the shifted signals into the N x M regressor matrix.

    Parameters
    ----------
    s : ndarray, shape (N, N)
        Shift matrix.
    x_history : array_like, shape (M, N)
        ``x_history[m]`` is ``x(i - m)``.

    Returns
    -------
    ndarray, shape (N, M)
        Column ``m`` is ``S^m x(i - m)``, built by ``m`` successive shifts.
    """
    s = np.asarray(s, dtype=float)
    hist = np.atleast_2d(np.asarray(x_history, dtype=float))
    if hist.shape[1] != s.shape[0]:
        raise PreconditionError(f"history has {hist.shape[1]} nodes, shift has {s.shape[0]}")
    m_order = hist.shape[0]
    z = np.empty((s.shape[0], m_order))
    for m in range(m_order):
        col = hist[m]
        for _ in range(m):
            col = s @ col
        z[:, m] = col
    return z


def distributed_regressor_step(z_prev, s, x_new) -> np.ndarray:
    """One synchronous update of every node's regressor.

    Entry 0 of ``z_k`` becomes ``x_k(i)``; entry ``m`` becomes
    ``sum_l s_kl [z_l(i-1)]_{m-1}``. All reads target ``z_prev``. Leading
    batch axes on ``z_prev`` / ``x_new`` are carried through.

    Parameters
    ----------
    z_prev : ndarray, shape (..., N, M)
    s : ndarray, shape (N, N)
    x_new : ndarray, shape (..., N)
    """
    z_prev = np.asarray(z_prev, dtype=float)
    z = np.empty_like(z_prev)
    z[..., 0] = x_new
    if z_prev.shape[-1] > 1:
        # s_kl == 0 for non-neighbours, so the product only touches one-hop data
        z[..., 1:] = s @ z_prev[..., :-1]
    return z


def neighbor_step(z_prev, s, x_new) -> np.ndarray:
    """Reference per-node loop of :func:`distributed_regressor_step`.

    Each node explicitly gathers the stored entries of the neighbours ``l``
    with ``s_kl != 0``; used to check the vectorized path.
    """
    z_prev = np.asarray(z_prev, dtype=float)
    n, m_order = z_prev.shape
    z = np.zeros_like(z_prev)
    for k in range(n):
        z[k, 0] = x_new[k]
        nbrs = np.flatnonzero(s[k])
        for m in range(1, m_order):
            z[k, m] = sum(s[k, l] * z_prev[l, m - 1] for l in nbrs)
    return z


class RegressorState:
    """Per-node delay lines, zero primed.

    >>> import numpy as np
    >>> st = RegressorState(np.eye(2), order=2)
    >>> st.step(np.array([1.0, 2.0])).tolist()
    [[1.0, 0.0], [2.0, 0.0]]
    """

    def __init__(self, s, order: int, batch_shape=()):
        self.s = np.asarray(s, dtype=float)
        self.order = int(order)
        if self.order < 1:
            raise PreconditionError("filter order must be >= 1")
        self.z = np.zeros(tuple(batch_shape) + (self.s.shape[0], self.order))

    def step(self, x_new) -> np.ndarray:
        self.z = distributed_regressor_step(self.z, self.s, x_new)
        return self.z

    def reset(self):
        self.z[...] = 0.0
