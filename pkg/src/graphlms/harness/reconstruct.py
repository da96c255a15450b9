"""Graph-signal reconstruction from partial observations.

Nodes in the sampling set see their own reading; the others must be inferred
from shifted neighbour data. During training every node knows its true value
and adapts a node-varying filter; at test time the filters are frozen and
``y_hat(i) = sum_m h_{k,m} [S^m x(i-m)]_k`` is scored on the unobserved nodes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..adapt import compute_preconditioner, make_state
from ..clustering import ClusterParams, ClusterState
from ..errors import DatasetError, DivergenceError
from ..graph import Graph, build_shift, knn_graph
from ..regressor import distributed_regressor_step
from ..signal import make_rng
from .config import ExperimentConfig, Variant

CANONICAL_NODES = 109
CANONICAL_HOURS = 8759
KNN_K = 7
READINGS_FILE = "readings.csv"
COORDS_FILE = "coordinates.csv"


class UndefinedNMSEError(DatasetError):
    """The NMSE has an empty window or a zero denominator."""


@dataclass
class TemperatureDataset:
    """Readings ``(T, N)``, station coordinates ``(N, 2)`` and the k-NN graph."""

    readings: np.ndarray
    coordinates: np.ndarray
    graph: Graph | None = None
    masks: list = field(default_factory=list)

    def __post_init__(self):
        self.readings = np.asarray(self.readings, dtype=float)
        self.coordinates = np.asarray(self.coordinates, dtype=float)
        if self.readings.ndim != 2:
            raise DatasetError("readings must be a T x N matrix")
        if self.coordinates.shape != (self.readings.shape[1], 2):
            raise DatasetError(
                f"readings have {self.readings.shape[1]} stations but coordinates have "
                f"{self.coordinates.shape[0]} rows"
            )
        if self.graph is None:
            # small test files have fewer than k + 1 stations
            self.graph = knn_graph(self.coordinates, min(KNN_K, self.n_nodes - 1))

    @property
    def n_nodes(self) -> int:
        return self.readings.shape[1]

    @property
    def n_hours(self) -> int:
        return self.readings.shape[0]

    @property
    def is_canonical(self) -> bool:
        return self.readings.shape == (CANONICAL_HOURS, CANONICAL_NODES)


def _read_numeric_csv(path, what: str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise DatasetError(f"{what} file {path} is empty")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]  # header
    width = len(rows[0]) if rows else 0
    out = np.empty((len(rows), width))
    missing = []
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DatasetError(f"{what} row {r + 1} has {len(row)} columns, expected {width}")
        for c, cell in enumerate(row):
            try:
                val = float(cell)
            except ValueError:
                val = np.nan
            if not np.isfinite(val):
                missing.append((r + 1, c + 1))
            out[r, c] = val
    if missing:
        shown = ", ".join(f"(row {r}, col {c})" for r, c in missing[:10])
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        raise DatasetError(f"{what} has missing values at {shown}{more}; no imputation is done")
    return out


def ingest_temperature_csv(path_readings, path_coords) -> TemperatureDataset:
    """Load ``T x N`` readings and ``N x 2`` coordinates (headers optional)."""
    readings = _read_numeric_csv(path_readings, "readings")
    coords = _read_numeric_csv(path_coords, "coordinates")
    if coords.shape[1] != 2:
        raise DatasetError(f"coordinates must have 2 columns, got {coords.shape[1]}")
    if coords.shape[0] != readings.shape[1]:
        raise DatasetError(
            f"coordinate file has {coords.shape[0]} rows but readings have {readings.shape[1]} stations"
        )
    return TemperatureDataset(readings, coords)


def canonical_dataset(directory) -> TemperatureDataset | None:
    """The dataset in ``directory`` if both canonical files are present."""
    d = Path(directory)
    if (d / READINGS_FILE).exists() and (d / COORDS_FILE).exists():
        return ingest_temperature_csv(d / READINGS_FILE, d / COORDS_FILE)
    return None


def write_dataset(ds: TemperatureDataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savetxt(d / READINGS_FILE, ds.readings, delimiter=",", fmt="%.6f")
    np.savetxt(d / COORDS_FILE, ds.coordinates, delimiter=",", fmt="%.6f")


def synthetic_temperature(n: int = CANONICAL_NODES, hours: int = CANONICAL_HOURS,
                          seed: int = 0) -> TemperatureDataset:
    """Hourly temperature-like field (deg F) over ``n`` random stations.

    Sum of a latitude-dependent climate mean, a seasonal swing, a daily cycle
    whose phase follows longitude, a spatially smooth AR(1) weather term and
    small sensor noise. Coordinates are (longitude, latitude) in degrees.
    """
    rng = make_rng([seed, 0x7E3F])
    lon = rng.uniform(-124.0, -68.0, n)
    lat = rng.uniform(25.0, 49.0, n)
    coords = np.column_stack([lon, lat])
    t = np.arange(hours)[:, None]
    mean = 72.0 - 1.1 * (lat - 25.0) + rng.normal(0.0, 2.0, n)
    season = -(12.0 + 0.6 * (lat - 25.0)) * np.cos(2 * np.pi * (t - 400.0) / 8760.0)
    daily_amp = rng.uniform(6.0, 12.0, n)
    daily = daily_amp * np.cos(2 * np.pi * (t - 15.0 - (lon + 95.0) / 15.0) / 24.0)

    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    kernel = np.exp(-d2 / (2.0 * 8.0**2)) + 1e-8 * np.eye(n)
    chol = np.linalg.cholesky(kernel)
    rho, sd = 0.97, 6.0
    w = rng.standard_normal((hours, n)) @ chol.T * sd * np.sqrt(1 - rho**2)
    weather = np.empty((hours, n))
    weather[0] = sd * chol @ rng.standard_normal(n)
    for i in range(1, hours):
        weather[i] = rho * weather[i - 1] + w[i]
    readings = mean + season + daily + weather + rng.normal(0.0, 0.3, (hours, n))
    return TemperatureDataset(readings, coords)


def nmse(truth, estimates, mask, window=None) -> float:
    """Masked error energy over masked signal energy.

    Parameters
    ----------
    truth, estimates : ndarray (T, N)
    mask : ndarray (N,) or (T, N) of bool
        Entries to score (the unobserved nodes).
    window : slice or (start, stop), optional
        Rows to score; all rows by default.
    """
    truth = np.asarray(truth, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if truth.shape != estimates.shape:
        raise DatasetError(f"shape mismatch {truth.shape} vs {estimates.shape}")
    if window is not None:
        sl = window if isinstance(window, slice) else slice(*window)
        truth, estimates = truth[sl], estimates[sl]
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 2:
            mask = mask[sl]
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), truth.shape)
    if truth.size == 0 or not mask.any():
        raise UndefinedNMSEError("NMSE window is empty (no rows or no unobserved nodes)")
    den = np.sum(truth[mask] ** 2)
    if den == 0:
        raise UndefinedNMSEError("NMSE denominator is zero")
    return float(np.sum((truth[mask] - estimates[mask]) ** 2) / den)


def sampling_mask(n: int, count: int, seed: int, key: int = 0) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[make_rng([seed, 0x5A3, key]).permutation(n)[:count]] = True
    return mask


@dataclass
class ReconstructionResult:
    estimates: dict
    nmse: dict
    clusters: dict
    masks: dict
    switch: dict = field(default_factory=dict)


def run_filter(ds: TemperatureDataset, s, variant: Variant, order: int, mask_at, adapt_until: int,
               cluster: ClusterParams, freeze_at: int | None = None, freeze_len: int = 0):
    """Stream the dataset once; return a-priori estimates, frozen ones and final E.

    ``mask_at(i)`` gives the sampling mask of hour ``i``; adaptation stops at
    ``adapt_until``. With ``freeze_at``, a copy of the filters taken at that
    hour produces estimates over the following ``freeze_len`` hours.
    """
    y = ds.readings
    hours, n = y.shape
    state = make_state(variant.algorithm, n, order, variant.mu, np.eye(n), s=s,
                       epsilon=variant.epsilon, mu_bar=variant.mu_bar)
    cstate = None
    if variant.combination in ("clustered", "clustered-raw"):
        params = ClusterParams(cluster.tau, cluster.beta, cluster.theta, cluster.nu,
                               normalized=variant.combination == "clustered")
        cstate = ClusterState(ds.graph.neighborhoods(), compute_preconditioner(s, order).p, params)
    elif variant.combination == "uniform":
        from ..adapt import build_combination_matrix
        state.combination = build_combination_matrix(ds.graph.neighborhoods())
    z = np.zeros((n, order))
    est = np.empty_like(y)
    frozen = np.empty((freeze_len, n))
    h_frozen = None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(hours):
            z = distributed_regressor_step(z, s, mask_at(i) * y[i])
            if freeze_at is not None and i == freeze_at:
                h_frozen = state.h.copy()
            if h_frozen is not None and i - freeze_at < freeze_len:
                frozen[i - freeze_at] = np.einsum("km,km->k", z, h_frozen)
            est[i] = np.einsum("km,km->k", z, state.h)
            if i < adapt_until:
                h_prev = state.h
                psi = state.adapt(z, y[i])
                if cstate is not None:
                    state.combine(cstate.update(psi, h_prev))
                else:
                    state.combine()
    e = None if cstate is None else cstate.e.copy()
    return est, frozen, e


def reconstruct_experiment(ds: TemperatureDataset, cfg: ExperimentConfig) -> ReconstructionResult:
    """Train on the first ``cfg.train`` hours, score NMSE on the rest.

    With ``cfg.switch_time`` set, adaptation runs over the whole record, the
    sampling set changes at that hour, and ``switch`` reports the NMSE of
    filters frozen at the switch against the NMSE after re-adaptation (the
    last ``cfg.window`` hours).
    """
    s = build_shift(ds.graph, cfg.shift_kind).s
    n, hours = ds.n_nodes, ds.n_hours
    mask1 = sampling_mask(n, cfg.sampled, cfg.seed, 1)
    masks = {"initial": mask1}
    if cfg.switch_time is None:
        if not 0 < cfg.train < hours:
            raise DatasetError(f"training length {cfg.train} must lie in (0, {hours})")
        mask_at = lambda i: mask1  # noqa: E731
        adapt_until = cfg.train
    else:
        if not 0 < cfg.switch_time < hours - cfg.window:
            raise DatasetError(f"switch time {cfg.switch_time} leaves no room for a {cfg.window}-hour window")
        mask2 = sampling_mask(n, cfg.switch_sampled, cfg.seed, 2)
        masks["switched"] = mask2
        mask_at = lambda i: mask1 if i < cfg.switch_time else mask2  # noqa: E731
        adapt_until = hours
    estimates, scores, clusters, switch = {}, {}, {}, {}
    for v in cfg.variants:
        est, frozen, e = run_filter(ds, s, v, cfg.order, mask_at, adapt_until, cfg.clustering,
                                    cfg.switch_time, cfg.window if cfg.switch_time else 0)
        if not np.all(np.isfinite(est)):
            raise DivergenceError(f"{v.label}: estimates diverged (mu={v.mu!r} is too large for this data)")
        estimates[v.label] = est
        clusters[v.label] = e
        if cfg.switch_time is None:
            scores[v.label] = nmse(ds.readings, est, ~mask1, (cfg.train, hours))
        else:
            t0 = cfg.switch_time
            before = nmse(ds.readings[t0:t0 + cfg.window], frozen, ~masks["switched"])
            after = nmse(ds.readings, est, ~masks["switched"], (hours - cfg.window, hours))
            scores[v.label] = after
            switch[v.label] = {"frozen": before, "adapted": after}
    return ReconstructionResult(estimates, scores, clusters, masks, switch)


def write_reconstruction(res: ReconstructionResult, ds: TemperatureDataset, out_dir,
                         trace_nodes=None) -> list:
    """``nmse.txt``, ``trace_node<k>.csv`` (1-based k) and cluster matrices."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{label} {val!r}" for label, val in res.nmse.items()]
    for label, sw in res.switch.items():
        lines.append(f"{label} frozen_after_switch {sw['frozen']!r}")
    (out / "nmse.txt").write_text("\n".join(lines) + "\n")
    written = [out / "nmse.txt"]
    if trace_nodes is None:
        trace_nodes = np.flatnonzero(~res.masks["initial"])[:1]
    labels = list(res.estimates)
    for k in trace_nodes:
        path = out / f"trace_node{k + 1}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "truth"] + labels)
            for i in range(ds.n_hours):
                w.writerow([i, repr(float(ds.readings[i, k]))]
                           + [repr(float(res.estimates[lb][i, k])) for lb in labels])
        written.append(path)
    for label, e in res.clusters.items():
        if e is not None:
            path = out / f"clusters_{label}.csv"
            np.savetxt(path, e, fmt="%d", delimiter=",")
            written.append(path)
    return written
