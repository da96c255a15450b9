"""Graphs, shift operators and the two random-graph generators.

Everything is dense: networks here have at most a few hundred nodes.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateDegreeError,
    DisconnectedGraphError,
    PreconditionError,
)

log = logging.getLogger(__name__)

SHIFT_KINDS = (
    "adjacency",
    "normalized-adjacency",
    "laplacian",
    "normalized-laplacian",
    "custom",
)

# Normalized adjacency is W / (NORMALIZATION * lambda_max(W)).
NORMALIZATION = 1.1

MAX_REGENERATIONS = 100


@dataclass
class Graph:
    """Undirected weighted graph.

    Parameters
    ----------
    adjacency : ndarray, shape (N, N)
        Symmetric nonnegative weight matrix with zero diagonal.
    coordinates : ndarray, shape (N, 2), optional
        Node positions, used by k-NN graphs and cluster snapshots.
    """

    adjacency: np.ndarray
    coordinates: np.ndarray | None = None
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        w = np.asarray(self.adjacency, dtype=float)
        self.adjacency = w
        if self.coordinates is not None:
            self.coordinates = np.asarray(self.coordinates, dtype=float)
        if not self.check:
            return
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise PreconditionError(f"adjacency must be square, got {w.shape}")
        if not np.allclose(w, w.T, rtol=0, atol=1e-12):
            raise PreconditionError("adjacency must be symmetric")
        if np.any(w < 0):
            raise PreconditionError("adjacency weights must be nonnegative")
        if np.any(np.diag(w) != 0):
            raise PreconditionError("adjacency diagonal must be zero")
        if self.coordinates is not None and self.coordinates.shape != (w.shape[0], 2):
            raise PreconditionError(
                f"coordinates shape {self.coordinates.shape} does not match {w.shape[0]} nodes"
            )
        if not is_connected(w):
            raise DisconnectedGraphError("graph is not connected")

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def laplacian(self) -> np.ndarray:
        return np.diag(self.degrees) - self.adjacency

    def neighborhoods(self) -> np.ndarray:
        """Boolean (N, N) support of the closed neighborhoods, self included."""
        return (self.adjacency != 0) | np.eye(self.n_nodes, dtype=bool)

    def neighbors(self, k: int) -> np.ndarray:
        """Indices of the closed neighborhood of node ``k``."""
        return np.flatnonzero(self.neighborhoods()[k])


@dataclass
class ShiftMatrix:
    s: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        if self.kind not in SHIFT_KINDS:
            raise PreconditionError(f"unknown shift kind {self.kind!r}")

    @property
    def n_nodes(self) -> int:
        return self.s.shape[0]

    def respects(self, graph: Graph) -> bool:
        """True if every off-diagonal nonzero of S is an edge of ``graph``."""
        off = (self.s != 0) & ~np.eye(self.n_nodes, dtype=bool)
        return bool(np.all(graph.adjacency[off] != 0))


def is_connected(adjacency: np.ndarray) -> bool:
    """Breadth-first search from node 0 over the nonzero pattern."""
    a = np.asarray(adjacency) != 0
    n = a.shape[0]
    if n == 0:
        return False
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        k = queue.popleft()
        for nb in np.flatnonzero(a[k]):
            if not seen[nb]:
                seen[nb] = True
                queue.append(nb)
    return bool(seen.all())


def spectral_radius(m, method: str = "dense", tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Largest eigenvalue modulus of a square matrix.

    ``method="power"`` runs power iteration on ``m @ m`` for symmetric input,
    which sidesteps the +/- rho tie that stalls plain power iteration on
    bipartite graphs. Non-symmetric input always falls back to a dense solve.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise PreconditionError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise PreconditionError("matrix has non-finite entries")
    if m.size == 0:
        return 0.0
    if method == "dense" or not np.allclose(m, m.T, rtol=0, atol=1e-14):
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    if method != "power":
        raise PreconditionError(f"unknown method {method!r}")

    sq = m @ m
    rng = np.random.default_rng(0)
    v = rng.standard_normal(m.shape[0])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = sq @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new_estimate = float(v @ w)
        v = w / norm
        if abs(new_estimate - estimate) <= tol * max(abs(new_estimate), 1e-300):
            return float(np.sqrt(max(new_estimate, 0.0)))
        estimate = new_estimate
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations "
        f"(last estimate {np.sqrt(max(estimate, 0.0))!r})"
    )


def build_shift(graph: Graph, kind: str = "normalized-adjacency") -> ShiftMatrix:
    """Derive the shift operator of ``kind`` from the graph weights."""
    w = graph.adjacency
    if kind in ("normalized-adjacency", "normalized-laplacian") and np.any(graph.degrees <= 0):
        bad = np.flatnonzero(graph.degrees <= 0)
        raise DegenerateDegreeError(f"zero-degree nodes {bad.tolist()} with kind {kind!r}")
    if kind == "adjacency":
        s = w.copy()
    elif kind == "normalized-adjacency":
        lam = np.linalg.eigvalsh(w)[-1]
        s = w / (NORMALIZATION * lam)
    elif kind == "laplacian":
        s = graph.laplacian()
    elif kind == "normalized-laplacian":
        d = 1.0 / np.sqrt(graph.degrees)
        s = d[:, None] * graph.laplacian() * d[None, :]
    else:
        raise PreconditionError(f"cannot build shift of kind {kind!r} from a graph")
    return ShiftMatrix(s, kind)


def gen_erdos_renyi_thresholded(n: int, seed: int) -> tuple[Graph, ShiftMatrix]:
    """Random signed shift built by magnitude thresholding of a Gaussian matrix.

    Entries with magnitude in [1.2, 1.8] survive and are shrunk by 1.1 towards
    zero (so they land in [0.1, 0.7]); the result is scaled by 1.1 times its
    spectral radius. Disconnected draws are rejected and redrawn with
    ``seed + 1``.
    """
    if n < 2:
        raise PreconditionError("need at least two nodes")
    for attempt in range(MAX_REGENERATIONS):
        rng = np.random.default_rng(seed + attempt)
        g = rng.standard_normal((n, n))
        g = np.triu(g, 1)
        g = g + g.T
        keep = (np.abs(g) >= 1.2) & (np.abs(g) <= 1.8)
        raw = np.where(keep, np.sign(g) * (np.abs(g) - 1.1), 0.0)
        if not is_connected(raw):
            log.info("Erdos-Renyi draw with seed %d is disconnected; regenerating", seed + attempt)
            continue
        rho = spectral_radius(raw)
        graph = Graph(np.abs(raw))
        return graph, ShiftMatrix(raw / (NORMALIZATION * rho), "custom")
    raise DisconnectedGraphError(
        f"no connected Erdos-Renyi graph with n={n} after {MAX_REGENERATIONS} attempts"
    )


def knn_graph(coordinates, k: int) -> Graph:
    """Symmetrized k-nearest-neighbour graph with Gaussian edge weights.

    Weights are ``exp(-d**2 / (2 sigma**2))`` where ``sigma`` is the mean
    distance from a node to its k nearest neighbours.
    """
    xy = np.asarray(coordinates, dtype=float)
    n = xy.shape[0]
    if not n > k >= 1:
        raise PreconditionError(f"need n > k >= 1, got n={n}, k={k}")
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    # stable sort: ties resolved by lower index
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = nn.ravel()
    sigma = d[rows, cols].mean()
    mask = np.zeros((n, n), dtype=bool)
    mask[rows, cols] = True
    mask |= mask.T
    w = np.where(mask, np.exp(-(np.where(mask, d, 0.0) ** 2) / (2.0 * sigma**2)), 0.0)
    return Graph(w, coordinates=xy, check=False)


def gen_knn_sensor(n: int, k: int, seed: int) -> Graph:
    """Sensor-network graph: ``n`` uniform points in the unit square, k-NN edges."""
    if not n > k >= 1:
        raise PreconditionError(f"need n > k >= 1, got n={n}, k={k}")
    for attempt in range(MAX_REGENERATIONS):
        rng = np.random.default_rng(seed + attempt)
        xy = rng.uniform(0.0, 1.0, size=(n, 2))
        while len(np.unique(xy, axis=0)) < n:
            xy += 1e-9 * rng.standard_normal(xy.shape)
        graph = knn_graph(xy, k)
        if is_connected(graph.adjacency):
            return Graph(graph.adjacency, coordinates=xy)
        log.info("k-NN draw with seed %d is disconnected; regenerating", seed + attempt)
    raise DisconnectedGraphError(
        f"no connected k-NN graph with n={n}, k={k} after {MAX_REGENERATIONS} attempts"
    )


def path_graph(n: int) -> Graph:
    w = np.zeros((n, n))
    idx = np.arange(n - 1)
    w[idx, idx + 1] = w[idx + 1, idx] = 1.0
    return Graph(w)


def complete_graph(n: int) -> Graph:
    return Graph(np.ones((n, n)) - np.eye(n))


# -- edge-list text format ---------------------------------------------------
# line 1: N; then "k l weight" with 1-based indices, one line per undirected edge.


def save_edge_list(graph: Graph, path, coords_path=None) -> None:
    w = graph.adjacency
    rows, cols = np.nonzero(np.triu(w, 1))
    lines = [str(graph.n_nodes)]
    lines += [f"{k + 1} {l + 1} {float(w[k, l])!r}" for k, l in zip(rows, cols)]
    Path(path).write_text("\n".join(lines) + "\n")
    if coords_path is not None:
        if graph.coordinates is None:
            raise PreconditionError("graph has no coordinates to save")
        Path(coords_path).write_text(
            "".join(f"{k + 1} {float(x)!r} {float(y)!r}\n" for k, (x, y) in enumerate(graph.coordinates))
        )


def load_edge_list(path, coords_path=None) -> Graph:
    text = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not text:
        raise PreconditionError(f"{path}: empty edge list")
    n = int(text[0][0])
    w = np.zeros((n, n))
    for lineno, parts in enumerate(text[1:], start=2):
        if len(parts) != 3:
            raise PreconditionError(f"{path}:{lineno}: expected 'k l weight'")
        k, l, weight = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
        if not (0 <= k < n and 0 <= l < n):
            raise PreconditionError(f"{path}:{lineno}: node index out of range 1..{n}")
        w[k, l] = w[l, k] = weight
    coords = None
    if coords_path is not None:
        coords = np.zeros((n, 2))
        rows = [ln.split() for ln in Path(coords_path).read_text().splitlines() if ln.strip()]
        if len(rows) != n:
            raise PreconditionError(f"{coords_path}: {len(rows)} coordinate rows for {n} nodes")
        for parts in rows:
            coords[int(parts[0]) - 1] = float(parts[1]), float(parts[2])
    return Graph(w, coordinates=coords)
