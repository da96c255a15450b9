"""Online unsupervised clustering that gates the combination step.

Node k compares each neighbour's intermediate estimate ``psi_l(i+1)`` with
its own pre-adaptation estimate ``h_k(i)`` on a few dominant coordinates,
smooths the outcome into a trust level, and only combines with neighbours it
trusts. Matrices indexed ``[l, k]`` hold node k's view of neighbour l.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapt import build_combination_matrix
from .errors import PreconditionError

# below this squared norm the normalized distance is not evaluated
ZERO_NORM_GUARD = 1e-12


@dataclass(frozen=True)
class ClusterParams:
    tau: float = 0.9
    beta: float = 0.01
    theta: float = 0.5
    nu: float = 0.98
    normalized: bool = True

    def __post_init__(self):
        if not 0 < self.nu < 1:
            raise PreconditionError("nu must lie in (0, 1)")
        if self.beta <= 0:
            raise PreconditionError("beta must be positive")
        if not 0 < self.tau <= 1:
            raise PreconditionError("tau must lie in (0, 1]")


def select_mk(p_k, tau: float):
    """Smallest number of dominant coordinates explaining a fraction ``tau``.

    Returns ``(M_k, indices)`` with indices in decreasing order of ``p_k``
    (ties broken by original position). An all-zero ``p_k`` keeps every
    coordinate.
    """
    p = np.asarray(p_k, dtype=float)
    if np.any(p < 0):
        raise PreconditionError("p_k entries must be nonnegative")
    order = np.argsort(-p, kind="stable")
    total = p.sum()
    if total <= 0:
        return len(p), order
    cum = np.cumsum(p[order]) / total
    mk = int(np.argmax(cum >= tau - 1e-12)) + 1
    return mk, order[:mk]


def selection_mask(p, tau: float) -> np.ndarray:
    """Boolean (N, M) mask of the coordinates each node keeps."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    mask = np.zeros(p.shape, dtype=bool)
    for k, row in enumerate(p):
        _, idx = select_mk(row, tau)
        mask[k, idx] = True
    return mask


def similarity_bit(psi_l, h_k, indices, beta: float) -> int:
    """1 when ``||psi' - h'||^2 / ||h'||^2 <= beta`` on the selected coordinates."""
    a = np.asarray(psi_l, dtype=float)[indices]
    b = np.asarray(h_k, dtype=float)[indices]
    denom = b @ b
    if denom < ZERO_NORM_GUARD:
        return int((a @ a) <= beta * ZERO_NORM_GUARD)
    return int(((a - b) @ (a - b)) <= beta * denom)


def similarity_bit_raw(psi_l, h_k, beta: float) -> int:
    """Unnormalized variant on every coordinate: ``||psi - h||^2 <= beta``."""
    diff = np.asarray(psi_l, dtype=float) - np.asarray(h_k, dtype=float)
    return int(diff @ diff <= beta)


def update_trust(t_prev, b, nu: float):
    return nu * t_prev + (1.0 - nu) * b


def update_cluster_matrix(trust, theta: float, support=None):
    """Threshold trust into ``E_i`` and rebuild the combination matrix.

    Returns ``(E, A)``; ``E[..., l, k]`` is 1 when ``t_lk >= theta`` and ``l`` is
    a neighbour of ``k``. The diagonal is always 1.
    """
    trust = np.asarray(trust, dtype=float)
    n = trust.shape[-1]
    e = trust >= theta
    if support is not None:
        e &= np.asarray(support, dtype=bool)
    e |= np.eye(n, dtype=bool)
    return e.astype(int), build_combination_matrix(e)


class ClusterState:
    """Trust levels and cluster matrices for a network (optionally batched).

    Only neighbour pairs carry state; ``trust`` and ``e`` expose the dense
    ``(..., N, N)`` views.

    Parameters
    ----------
    support : ndarray (N, N) bool
        Closed neighbourhoods, ``support[l, k]`` True for ``l`` in ``N_k``.
    p : ndarray (N, M)
        Preconditioner diagonals used to select each node's coordinates.
    params : ClusterParams
    batch_shape : tuple
        Leading replica axes.
    """

    def __init__(self, support, p, params: ClusterParams, batch_shape=()):
        n, m = np.shape(p)
        self.support = np.asarray(support, dtype=bool) | np.eye(n, dtype=bool)
        self.params = params
        self.n_nodes = n
        if params.normalized:
            self.mask = selection_mask(p, params.tau).astype(float)
        else:
            self.mask = np.ones((n, m))
        self.mk = self.mask.sum(axis=1).astype(int)
        self.batch_shape = tuple(batch_shape)
        self.l_idx, self.k_idx = np.nonzero(self.support)
        self.self_pair = self.l_idx == self.k_idx
        shape = self.batch_shape + (len(self.l_idx),)
        # nodes start non-cooperative and trust only themselves
        self._trust = np.broadcast_to(self.self_pair.astype(float), shape).copy()
        self._b = np.broadcast_to(self.self_pair, shape).copy()
        self._active = self._b.copy()
        self.combination = self._combination()

    def _dense(self, values, dtype):
        out = np.zeros(self.batch_shape + (self.n_nodes, self.n_nodes), dtype=dtype)
        out[..., self.l_idx, self.k_idx] = values
        return out

    @property
    def trust(self) -> np.ndarray:
        return self._dense(self._trust, float)

    @property
    def e(self) -> np.ndarray:
        return self._dense(self._active, int)

    def _combination(self) -> np.ndarray:
        # uniform weights over each active set; same result as build_combination_matrix
        if not hasattr(self, "_onehot"):
            self._onehot = np.zeros((len(self.k_idx), self.n_nodes))
            self._onehot[np.arange(len(self.k_idx)), self.k_idx] = 1.0
        counts = self._active.astype(float) @ self._onehot
        return self._dense(self._active / counts[..., self.k_idx], float)

    def update(self, psi, h):
        """Compare ``psi(i+1)`` against ``h(i)``, refresh trust, return ``A``."""
        p = self.params
        mask = self.mask[self.k_idx]
        hk = np.take(h, self.k_idx, axis=-2)
        diff = np.take(psi, self.l_idx, axis=-2) - hk
        dist = np.einsum("...pm,pm->...p", diff * diff, mask)
        if p.normalized:
            ref = np.einsum("...pm,pm->...p", hk * hk, mask)
            b = np.where(ref >= ZERO_NORM_GUARD, dist <= p.beta * ref, self._b)
        else:
            b = dist <= p.beta
        b[..., self.self_pair] = True
        self._b = b
        self._trust *= p.nu
        self._trust += (1.0 - p.nu) * b
        self._active = (self._trust >= p.theta) | self.self_pair
        self.combination = self._combination()
        return self.combination


def oracle_support(support, labels) -> np.ndarray:
    """Neighbourhoods restricted to same-cluster pairs."""
    labels = np.asarray(labels)
    return np.asarray(support, dtype=bool) & (labels[:, None] == labels[None, :])
