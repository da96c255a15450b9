"""Batched Monte-Carlo simulation of diffusion estimators.

Runs are vectorized: a batch of ``B`` runs is advanced together with arrays
of shape ``(B, N, M)``. Run ``r`` draws its input and noise from generators
seeded with ``SeedSequence([seed, r])``, so results do not depend on the
batch size and every variant of an experiment sees the same realizations.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..adapt import (
    FilterModel,
    build_combination_matrix,
    compute_preconditioner,
    local_covariances,
    make_state,
)
from ..clustering import ClusterParams, ClusterState, oracle_support
from ..errors import ConfigError, ConvergenceError, DivergenceError, PreconditionError, UnstableError
from ..graph import Graph, build_shift, gen_erdos_renyi_thresholded, gen_knn_sensor, load_edge_list
from ..graph import complete_graph, path_graph
from ..regressor import distributed_regressor_step
from ..signal import ar_statistics, make_rng, white_statistics
from ..theory import build_theory_model, steady_state_msd, to_db, transient_msd_B
from .config import ExperimentConfig, Stage, Variant, parse_floats

log = logging.getLogger(__name__)

DIVERGENCE_LEVEL = 1e12
# key mixed into the master seed for scenario-level draws (graph, h_o, variances)
SCENARIO_KEY = 0x5CE7A110
CHUNK = 256


@dataclass
class Scenario:
    graph: Graph
    s: np.ndarray
    order: int
    signal: str
    sigma2: np.ndarray
    noise_var: np.ndarray
    stages: list
    gft: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.s.shape[0]

    def stage_index(self, i: int) -> int:
        starts = [st.start for st in self.stages]
        return int(np.searchsorted(starts, i, side="right")) - 1

    def bank_at(self, i: int) -> np.ndarray:
        return self.stages[self.stage_index(i)].bank(self.n_nodes)

    def labels_at(self, i: int) -> np.ndarray:
        return self.stages[self.stage_index(i)].labels(self.n_nodes)

    def statistics(self):
        if self.signal == "ar":
            return ar_statistics(self.s)
        if self.signal == "vertex":
            return white_statistics(self.gft @ np.diag(self.sigma2) @ self.gft.T, gft=self.gft)
        return white_statistics(np.diag(self.sigma2))

    def rz_blocks(self) -> np.ndarray:
        return local_covariances(self.s, self.statistics(), self.order)

    def filter_model(self, i: int = 0) -> FilterModel:
        return FilterModel(self.bank_at(i))


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    """Draw the graph, ground truth and variances from the master seed."""
    rng = make_rng([cfg.seed, SCENARIO_KEY])
    graph_seed = int(rng.integers(2**31))
    n = cfg.n_nodes
    shift = None
    if cfg.generator == "erdos-renyi":
        graph, shift = gen_erdos_renyi_thresholded(n, graph_seed)
    elif cfg.generator == "knn":
        graph = gen_knn_sensor(n, cfg.knn_k, graph_seed)
    elif cfg.generator == "file":
        graph = load_edge_list(cfg.graph_file, cfg.coords_file)
    elif cfg.generator == "path":
        graph = path_graph(n)
    else:
        graph = complete_graph(n)
    n = graph.n_nodes
    if cfg.shift_kind == "custom":
        if shift is None:
            raise ConfigError("shift kind 'custom' is only produced by the erdos-renyi generator")
        s = shift.s
    else:
        s = build_shift(graph, cfg.shift_kind).s

    if cfg.stages:
        stages = cfg.stages
    else:
        if cfg.coefficients == "uniform":
            h = rng.uniform(0.0, 1.0, cfg.order)
        else:
            h = np.array(parse_floats(cfg.coefficients))
        stages = [Stage(0, [(0, n - 1)], h[None, :])]
    sigma2 = rng.uniform(*cfg.signal_variance, size=n)
    noise_var = rng.uniform(*cfg.noise_variance, size=n)
    gft = None
    if cfg.signal == "vertex":
        if not np.allclose(s, s.T):
            raise ConfigError("vertex-correlated input needs a symmetric shift")
        _, gft = np.linalg.eigh(s)
    return Scenario(graph, s, cfg.order, cfg.signal, sigma2, noise_var, stages, gft)


# -- simulation ------------------------------------------------------------------


@dataclass
class VariantResult:
    label: str
    msd_runs: np.ndarray
    diverged: np.ndarray
    theory: np.ndarray | None = None
    theory_steady: float | None = None
    final_e: np.ndarray | None = None
    snapshots: dict = field(default_factory=dict)

    @property
    def msd(self) -> np.ndarray:
        """Average over non-diverged runs."""
        ok = ~self.diverged
        if not ok.any():
            raise DivergenceError(f"{self.label}: every run diverged")
        return self.msd_runs[ok].mean(axis=0)

    @property
    def msd_db(self) -> np.ndarray:
        return to_db(self.msd)

    def steady_db(self, window: int) -> float:
        return float(to_db(self.msd[-window:].mean()))


class _InputStream:
    """Per-run input and noise generators, drawn in chunks."""

    def __init__(self, sc: Scenario, seed: int, run_ids):
        self.sc = sc
        self.gens = []
        for r in run_ids:
            gx, gv = np.random.SeedSequence([seed, int(r)]).spawn(2)
            self.gens.append((make_rng(gx), make_rng(gv)))
        self.sigma = np.sqrt(sc.sigma2)
        self.noise_sd = np.sqrt(sc.noise_var)
        self.x_prev = None
        if sc.signal == "ar":
            stats = sc.statistics()
            self.chol = np.linalg.cholesky(stats.rx0)

    def chunk(self, steps: int):
        n = self.sc.n_nodes
        w = np.stack([gx.standard_normal((steps, n)) for gx, _ in self.gens])
        v = np.stack([gv.standard_normal((steps, n)) for _, gv in self.gens]) * self.noise_sd
        if self.sc.signal == "white":
            x = w * self.sigma
        elif self.sc.signal == "vertex":
            x = (w * self.sigma) @ self.sc.gft.T
        else:
            x = np.empty_like(w)
            prev = self.x_prev
            st = self.sc.s.T
            for t in range(steps):
                prev = w[:, t] @ self.chol.T if prev is None else prev @ st + w[:, t]
                x[:, t] = prev
            self.x_prev = prev
        return x, v


def node_step_sizes(sc: Scenario, variant: Variant) -> np.ndarray:
    if variant.mu_rule == "lambda-max":
        lam = np.linalg.eigvalsh(sc.rz_blocks())[:, -1]
        return variant.mu * 2.0 / lam
    return np.full(sc.n_nodes, variant.mu)


def simulate_variant(sc: Scenario, variant: Variant, runs: int, iters: int, seed: int,
                     batch: int = 100, cluster: ClusterParams | None = None,
                     snapshots=(), run_offset: int = 0, h0=None) -> VariantResult:
    """Simulate ``runs`` independent runs of one algorithm variant."""
    cluster = cluster or ClusterParams()
    msd = np.empty((runs, iters + 1))
    diverged = np.zeros(runs, dtype=bool)
    final_e = None
    snaps = {}
    clustered = variant.combination in ("clustered", "clustered-raw")
    if clustered:
        final_e = np.empty((runs, sc.n_nodes, sc.n_nodes), dtype=np.int8)
    for lo in range(0, runs, batch):
        ids = np.arange(lo, min(lo + batch, runs))
        out = _simulate_batch(sc, variant, ids + run_offset, iters, seed, cluster, snapshots, h0)
        msd[ids] = out["msd"]
        diverged[ids] = out["diverged"]
        if clustered:
            final_e[ids] = out["e"]
        if lo == 0:
            snaps = out["snapshots"]
    if diverged.any():
        log.warning("%s: %d of %d runs diverged (MSD > %.0e) and are excluded",
                    variant.label, int(diverged.sum()), runs, DIVERGENCE_LEVEL)
    return VariantResult(variant.label, msd, diverged, final_e=final_e, snapshots=snaps)


def _static_combination(sc: Scenario, variant: Variant, i: int) -> np.ndarray:
    support = sc.graph.neighborhoods()
    if variant.combination == "none":
        return np.eye(sc.n_nodes)
    if variant.combination == "oracle":
        return build_combination_matrix(oracle_support(support, sc.labels_at(i)))
    return build_combination_matrix(support)


def _simulate_batch(sc, variant, run_ids, iters, seed, cluster, snapshots, h0):
    b = len(run_ids)
    n, m = sc.n_nodes, sc.order
    mu = node_step_sizes(sc, variant)
    clustered = variant.combination in ("clustered", "clustered-raw")
    state = make_state(variant.algorithm, n, m, mu, np.eye(n), s=sc.s,
                       epsilon=variant.epsilon, mu_bar=variant.mu_bar, batch_shape=(b,))
    if h0 is not None:
        state.h[...] = h0
    cstate = None
    if clustered:
        params = ClusterParams(cluster.tau, cluster.beta, cluster.theta, cluster.nu,
                               normalized=variant.combination == "clustered")
        cstate = ClusterState(sc.graph.neighborhoods(), compute_preconditioner(sc.s, m).p,
                              params, batch_shape=(b,))
    else:
        state.combination = _static_combination(sc, variant, 0)
    stream = _InputStream(sc, seed, run_ids)
    z = np.zeros((b, n, m))
    msd = np.empty((b, iters + 1))
    diverged = np.zeros(b, dtype=bool)
    stage = sc.stage_index(0)
    bank = sc.bank_at(0)
    msd[:, 0] = ((bank - state.h) ** 2).sum(axis=(-1, -2)) / n
    snaps = {}
    wanted = set(snapshots)
    x = v = None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(iters):
            if i % CHUNK == 0:
                x, v = stream.chunk(min(CHUNK, iters - i))
            t = i % CHUNK
            if sc.stage_index(i) != stage:
                stage = sc.stage_index(i)
                bank = sc.bank_at(i)
                if variant.combination == "oracle":
                    state.combination = _static_combination(sc, variant, i)
            z = distributed_regressor_step(z, sc.s, x[:, t])
            y = np.einsum("bkm,km->bk", z, bank) + v[:, t]
            h_prev = state.h
            psi = state.adapt(z, y)
            if cstate is not None:
                state.combine(cstate.update(psi, h_prev))
                if i in wanted:
                    snaps[i] = cstate.e[0].copy()
            else:
                state.combine()
            nxt = bank if i + 1 >= iters else sc.bank_at(i + 1)
            err = ((nxt - state.h) ** 2).sum(axis=(-1, -2)) / n
            bad = ~(err <= DIVERGENCE_LEVEL)
            if bad.any():
                diverged |= bad
                state.h[bad] = 0.0
                if state.r_hat is not None:
                    state.r_hat[bad] = 0.0
            msd[:, i + 1] = err
    return {
        "msd": msd,
        "diverged": diverged,
        "e": None if cstate is None else cstate.e.astype(np.int8),
        "snapshots": snaps,
    }


# -- theory overlay ------------------------------------------------------------


def theory_applicable(sc: Scenario, variant: Variant) -> bool:
    return (variant.algorithm in ("lms", "plms")
            and variant.combination in ("uniform", "none", "oracle")
            and len(sc.stages) == 1)


def theory_model(sc: Scenario, variant: Variant, h0=None, rz=None):
    """Mean-square model of ``variant`` on ``sc`` (LMS and PLMS only)."""
    if not theory_applicable(sc, variant):
        raise PreconditionError(f"{variant.label}: no theory model for this variant")
    a = _static_combination(sc, variant, 0)
    rz = sc.rz_blocks() if rz is None else rz
    d = compute_preconditioner(sc.s, sc.order).d(variant.epsilon) if variant.algorithm == "plms" else None
    h_start = np.zeros((sc.n_nodes, sc.order)) if h0 is None else h0
    h_tilde0 = (sc.bank_at(0) - h_start).ravel()
    return build_theory_model(a, node_step_sizes(sc, variant), rz, sc.noise_var, h_tilde0, d)


def effective_model(sc: Scenario, variant: Variant, rz=None):
    """Theory model with a fixed surrogate preconditioner for any algorithm.

    LMSN uses ``(eps I + R_zk)^-1`` (the limit of its running estimate) and
    eps-NLMS uses ``I / (Tr R_zk + eps)``. Only approximate for those two;
    exact model otherwise.
    """
    rz = sc.rz_blocks() if rz is None else rz
    if variant.algorithm in ("lms", "plms"):
        plain = Variant(variant.label, variant.algorithm, variant.mu, variant.epsilon,
                        combination=variant.combination, mu_rule=variant.mu_rule)
        return theory_model(sc, plain, rz=rz)
    m = sc.order
    if variant.algorithm == "lmsn":
        d = np.linalg.inv(rz + variant.epsilon * np.eye(m))
    else:
        tr = np.trace(rz, axis1=-2, axis2=-1)
        d = np.eye(m) / (tr + variant.epsilon)[:, None, None]
    a = _static_combination(sc, variant, 0)
    return build_theory_model(a, node_step_sizes(sc, variant), rz, sc.noise_var,
                              sc.bank_at(0).ravel(), d)


def match_step_size(sc: Scenario, variant: Variant, target_msd: float, rz=None,
                    lo: float = 1e-6, hi: float = 10.0, rtol: float = 1e-4) -> float:
    """Step-size whose (effective) theory steady-state MSD equals ``target_msd``.

    Bisection in log-step; the steady-state MSD increases with mu inside the
    stability region.
    """
    rz = sc.rz_blocks() if rz is None else rz

    def msd_at(mu):
        v = Variant(variant.label, variant.algorithm, mu, variant.epsilon, variant.mu_bar,
                    variant.combination, variant.mu_rule)
        try:
            return steady_state_msd(effective_model(sc, v, rz))
        except Exception:  # unstable: treat as too large
            return np.inf

    a, b = np.log(lo), np.log(hi)
    for _ in range(200):
        mid = 0.5 * (a + b)
        if msd_at(np.exp(mid)) > target_msd:
            b = mid
        else:
            a = mid
        if b - a < rtol:
            break
    return float(np.exp(0.5 * (a + b)))


def measure_steady_db(sc: Scenario, variant: Variant, runs: int, iters: int, seed: int,
                      window: int | None = None, batch: int = 100) -> float:
    """Simulated steady-state MSD in dB, with runs started at the true coefficients."""
    window = window or iters // 2
    res = simulate_variant(sc, variant, runs, iters, seed, batch, h0=sc.bank_at(0))
    return res.steady_db(window)


def tune_step_size(sc: Scenario, variant: Variant, target_db: float, runs: int = 50,
                   iters: int = 2000, seed: int = 0, tol_db: float = 0.15,
                   max_rounds: int = 6, rz=None) -> tuple[float, float]:
    """Step-size giving a simulated steady-state MSD of ``target_db``.

    Starts from the (effective) theory match, then rescales ``mu`` by the
    measured dB gap, using MSD roughly proportional to ``mu``. Returns
    ``(mu, measured_db)``.
    """
    mu = match_step_size(sc, variant, 10 ** (target_db / 10), rz)
    measured = np.nan
    for _ in range(max_rounds):
        trial = Variant(variant.label, variant.algorithm, mu, variant.epsilon, variant.mu_bar,
                        variant.combination, variant.mu_rule)
        measured = measure_steady_db(sc, trial, runs, iters, seed)
        if abs(measured - target_db) <= tol_db:
            return float(mu), float(measured)
        mu *= 10 ** ((target_db - measured) / 10)
    raise ConvergenceError(
        f"{variant.label}: step-size tuning stalled at {measured:.2f} dB (target {target_db:.2f} dB)"
    )


# -- experiment driver ---------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    scenario: Scenario
    variants: dict

    @property
    def any_diverged(self) -> bool:
        return any(r.diverged.any() for r in self.variants.values())


def run_monte_carlo(cfg: ExperimentConfig, scenario: Scenario | None = None,
                    with_theory: bool | None = None) -> ExperimentResult:
    cfg.validate()
    sc = build_scenario(cfg) if scenario is None else scenario
    with_theory = cfg.theory if with_theory is None else with_theory
    results = {}
    for variant in cfg.variants:
        res = simulate_variant(sc, variant, cfg.runs, cfg.iters, cfg.seed, cfg.batch,
                               cfg.clustering, cfg.snapshots)
        if with_theory and theory_applicable(sc, variant):
            tm = theory_model(sc, variant)
            try:
                res.theory_steady = steady_state_msd(tm)
                res.theory = transient_msd_B(tm, cfg.iters)
            except UnstableError as exc:
                log.warning("%s: no theory overlay: %s", variant.label, exc)
        results[variant.label] = res
    return ExperimentResult(cfg, sc, results)


def theory_only(cfg: ExperimentConfig) -> dict:
    """Theory curves for every variant that admits one."""
    sc = build_scenario(cfg)
    out = {}
    for variant in cfg.variants:
        if theory_applicable(sc, variant):
            tm = theory_model(sc, variant)
            out[variant.label] = (transient_msd_B(tm, cfg.iters), steady_state_msd(tm))
    return out


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_theory_csv(path, zeta) -> None:
    _write_rows(Path(path), ["i", "zeta", "zeta_db"],
                ([i, repr(float(z)), repr(float(to_db(z)))] for i, z in enumerate(zeta)))


def write_cluster_csv(path, e) -> None:
    np.savetxt(path, np.asarray(e, dtype=int), fmt="%d", delimiter=",")


def write_outputs(result: ExperimentResult, out_dir) -> list:
    """Write one subdirectory per variant; returns the paths written."""
    out_dir = Path(out_dir)
    written = []
    summary = []
    for label, res in result.variants.items():
        d = out_dir / label
        d.mkdir(parents=True, exist_ok=True)
        msd = res.msd
        cols = ["i", "msd", "msd_db"]
        if res.theory is not None:
            cols += ["theory", "theory_db"]
        rows = []
        for i, val in enumerate(msd):
            row = [i, repr(float(val)), repr(float(to_db(val)))]
            if res.theory is not None:
                row += [repr(float(res.theory[i])), repr(float(to_db(res.theory[i])))]
            rows.append(row)
        _write_rows(d / "msd.csv", cols, rows)
        written.append(d / "msd.csv")
        if res.theory is not None:
            write_theory_csv(d / "theory.csv", res.theory)
            written.append(d / "theory.csv")
        for i, e in sorted(res.snapshots.items()):
            write_cluster_csv(d / f"clusters_{i}.csv", e)
            written.append(d / f"clusters_{i}.csv")
        line = f"{label}: runs={len(res.diverged)} diverged={int(res.diverged.sum())}"
        if res.theory_steady is not None:
            line += f" theory_steady_db={float(to_db(res.theory_steady))!r}"
        summary.append(line)
    (out_dir / "summary.txt").write_text("\n".join(summary) + "\n")
    written.append(out_dir / "summary.txt")
    return written
