"""Experiment configuration as a sectioned key-value text file.

Example::

    [graph]
    generator = knn
    nodes = 60
    k = 5

    [shift]
    kind = normalized-adjacency

    [filter]
    order = 3
    coefficients = uniform

    [stage:0]
    clusters = 1-20, 21-40, 41-60
    coefficients = 0.5 0.4 0.9; 0.3 0.1 0.4; 0.9 0.3 0.7

    [algorithm:plms]
    name = plms
    mu = 0.01
    epsilon = 0.01
    combination = clustered

    [run]
    runs = 100
    iters = 2000
    seed = 1

Unset keys take the defaults of the dataclasses below.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..adapt import ALGORITHMS
from ..clustering import ClusterParams
from ..errors import ConfigError, PreconditionError
from ..graph import SHIFT_KINDS

GENERATORS = ("erdos-renyi", "knn", "file", "path", "complete")
SIGNALS = ("white", "vertex", "ar")
COMBINATIONS = ("uniform", "none", "oracle", "clustered", "clustered-raw")


@dataclass
class Stage:
    """Node-varying ground truth active from iteration ``start`` on.

    ``clusters`` are 0-based inclusive ranges; ``coefficients[q]`` is the
    filter of cluster ``q``.
    """

    start: int
    clusters: list
    coefficients: np.ndarray

    def labels(self, n: int) -> np.ndarray:
        lab = np.full(n, -1)
        for q, (lo, hi) in enumerate(self.clusters):
            lab[lo:hi + 1] = q
        if np.any(lab < 0):
            raise ConfigError(f"stage at i={self.start} leaves nodes {np.flatnonzero(lab < 0).tolist()} unassigned")
        return lab

    def bank(self, n: int) -> np.ndarray:
        return self.coefficients[self.labels(n)]


@dataclass
class Variant:
    label: str
    algorithm: str = "plms"
    mu: float = 0.01
    epsilon: float = 0.01
    mu_bar: float = 0.05
    combination: str = "uniform"
    mu_rule: str = "uniform"


@dataclass
class ExperimentConfig:
    generator: str = "knn"
    n_nodes: int = 60
    knn_k: int = 5
    graph_file: str | None = None
    coords_file: str | None = None
    shift_kind: str = "normalized-adjacency"
    order: int = 3
    coefficients: str = "uniform"
    stages: list = field(default_factory=list)
    signal: str = "white"
    signal_variance: tuple = (1.0, 1.5)
    noise_variance: tuple = (0.1, 0.15)
    variants: list = field(default_factory=list)
    clustering: ClusterParams = field(default_factory=ClusterParams)
    snapshots: tuple = ()
    runs: int = 100
    iters: int = 1000
    seed: int = 0
    batch: int = 100
    theory: bool = True
    out: str = "out"
    # reconstruction experiment
    dataset_dir: str | None = None
    train: int = 6570
    sampled: int = 37
    switch_time: int | None = None
    switch_sampled: int = 54
    window: int = 500

    def validate(self) -> "ExperimentConfig":
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown graph generator {self.generator!r}; choose from {GENERATORS}")
        if self.generator == "file":
            if not self.graph_file or not Path(self.graph_file).exists():
                raise ConfigError(f"graph file {self.graph_file!r} does not exist")
            if self.coords_file and not Path(self.coords_file).exists():
                raise ConfigError(f"coordinates file {self.coords_file!r} does not exist")
        if self.dataset_dir and not Path(self.dataset_dir).is_dir():
            raise ConfigError(f"dataset directory {self.dataset_dir!r} does not exist")
        if self.shift_kind not in SHIFT_KINDS:
            raise ConfigError(f"unknown shift kind {self.shift_kind!r}")
        if self.signal not in SIGNALS:
            raise ConfigError(f"unknown signal kind {self.signal!r}; choose from {SIGNALS}")
        if self.runs < 1 or self.iters < 1 or self.batch < 1:
            raise ConfigError("runs, iters and batch must be >= 1")
        if self.order < 1:
            raise ConfigError("filter order must be >= 1")
        if not self.variants:
            raise ConfigError("no [algorithm:<label>] section")
        for v in self.variants:
            if v.algorithm not in ALGORITHMS:
                raise ConfigError(f"[algorithm:{v.label}]: unknown name {v.algorithm!r}")
            if v.combination not in COMBINATIONS:
                raise ConfigError(f"[algorithm:{v.label}]: unknown combination {v.combination!r}")
            if v.combination == "oracle" and not self.stages:
                raise ConfigError(f"[algorithm:{v.label}]: oracle combination needs cluster stages")
            if v.mu_rule not in ("uniform", "lambda-max"):
                raise ConfigError(f"[algorithm:{v.label}]: unknown mu_rule {v.mu_rule!r}")
        for st in self.stages:
            if st.coefficients.shape != (len(st.clusters), self.order):
                raise ConfigError(
                    f"stage at i={st.start}: need {len(st.clusters)} coefficient vectors of length {self.order}"
                )
            st.labels(self.n_nodes)
        if self.stages and self.stages[0].start != 0:
            raise ConfigError("the first stage must start at i=0")
        if self.coefficients != "uniform" and not self.stages:
            if len(parse_floats(self.coefficients)) != self.order:
                raise ConfigError(f"filter coefficients must have {self.order} entries")
        return self

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw).validate()


# -- parsing helpers -----------------------------------------------------------


def parse_floats(text: str) -> list:
    return [float(t) for t in text.replace(",", " ").split()]


def _parse_ranges(text: str) -> list:
    out = []
    for part in text.split(","):
        lo, _, hi = part.strip().partition("-")
        out.append((int(lo) - 1, int(hi or lo) - 1))
    return out


def _fmt_ranges(ranges) -> str:
    return ", ".join(f"{lo + 1}-{hi + 1}" for lo, hi in ranges)


def _bool(text: str) -> bool:
    return text.strip().lower() in ("1", "yes", "true", "on")


def _pair(text: str) -> tuple:
    vals = parse_floats(text)
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2:
        raise ConfigError(f"expected 'low, high', got {text!r}")
    return tuple(vals)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return loads_config(path.read_text())


def loads_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
        return _from_parser(cp).validate()
    except (configparser.Error, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _from_parser(cp: configparser.ConfigParser) -> ExperimentConfig:
    cfg = ExperimentConfig()
    g = cp["graph"] if cp.has_section("graph") else {}
    cfg.generator = g.get("generator", cfg.generator)
    cfg.n_nodes = int(g.get("nodes", cfg.n_nodes))
    cfg.knn_k = int(g.get("k", cfg.knn_k))
    cfg.graph_file = g.get("file", None)
    cfg.coords_file = g.get("coordinates", None)
    if cp.has_section("shift"):
        cfg.shift_kind = cp["shift"].get("kind", cfg.shift_kind)
    if cp.has_section("filter"):
        cfg.order = int(cp["filter"].get("order", cfg.order))
        cfg.coefficients = cp["filter"].get("coefficients", cfg.coefficients)
    stages = []
    for name in cp.sections():
        if name.startswith("stage:"):
            sec = cp[name]
            coeffs = np.array([parse_floats(row) for row in sec["coefficients"].split(";")])
            stages.append(Stage(int(sec.get("start", name.split(":", 1)[1])),
                                _parse_ranges(sec["clusters"]), coeffs))
    cfg.stages = sorted(stages, key=lambda s: s.start)
    if cp.has_section("signal"):
        cfg.signal = cp["signal"].get("kind", cfg.signal)
        if "variance" in cp["signal"]:
            cfg.signal_variance = _pair(cp["signal"]["variance"])
    if cp.has_section("noise") and "variance" in cp["noise"]:
        cfg.noise_variance = _pair(cp["noise"]["variance"])
    variants = []
    for name in cp.sections():
        if name.startswith("algorithm:"):
            sec = cp[name]
            variants.append(Variant(
                label=name.split(":", 1)[1],
                algorithm=sec.get("name", "plms"),
                mu=float(sec.get("mu", 0.01)),
                epsilon=float(sec.get("epsilon", 0.01)),
                mu_bar=float(sec.get("mu_bar", 0.05)),
                combination=sec.get("combination", "uniform"),
                mu_rule=sec.get("mu_rule", "uniform"),
            ))
    cfg.variants = variants
    if cp.has_section("clustering"):
        sec = cp["clustering"]
        try:
            cfg.clustering = ClusterParams(
                tau=float(sec.get("tau", 0.9)),
                beta=float(sec.get("beta", 0.01)),
                theta=float(sec.get("theta", 0.5)),
                nu=float(sec.get("nu", 0.98)),
            )
        except PreconditionError as exc:
            raise ConfigError(f"[clustering]: {exc}") from exc
        if "snapshots" in sec:
            cfg.snapshots = tuple(int(v) for v in parse_floats(sec["snapshots"]))
    if cp.has_section("run"):
        sec = cp["run"]
        cfg.runs = int(sec.get("runs", cfg.runs))
        cfg.iters = int(sec.get("iters", cfg.iters))
        cfg.seed = int(sec.get("seed", cfg.seed))
        cfg.batch = int(sec.get("batch", cfg.batch))
        cfg.theory = _bool(sec.get("theory", "yes"))
        cfg.out = sec.get("out", cfg.out)
    if cp.has_section("reconstruct"):
        sec = cp["reconstruct"]
        cfg.dataset_dir = sec.get("dataset", None)
        cfg.train = int(sec.get("train", cfg.train))
        cfg.sampled = int(sec.get("sampled", cfg.sampled))
        if "switch_time" in sec:
            cfg.switch_time = int(sec["switch_time"])
        cfg.switch_sampled = int(sec.get("switch_sampled", cfg.switch_sampled))
        cfg.window = int(sec.get("window", cfg.window))
    return cfg


def dumps_config(cfg: ExperimentConfig) -> str:
    """Render a config back to text; ``loads_config(dumps_config(c))`` round-trips."""
    lines = ["[graph]", f"generator = {cfg.generator}", f"nodes = {cfg.n_nodes}", f"k = {cfg.knn_k}"]
    if cfg.graph_file:
        lines.append(f"file = {cfg.graph_file}")
    if cfg.coords_file:
        lines.append(f"coordinates = {cfg.coords_file}")
    lines += ["", "[shift]", f"kind = {cfg.shift_kind}"]
    lines += ["", "[filter]", f"order = {cfg.order}", f"coefficients = {cfg.coefficients}"]
    for st in cfg.stages:
        rows = "; ".join(" ".join(repr(float(c)) for c in row) for row in st.coefficients)
        lines += ["", f"[stage:{st.start}]", f"clusters = {_fmt_ranges(st.clusters)}", f"coefficients = {rows}"]
    lines += ["", "[signal]", f"kind = {cfg.signal}",
              f"variance = {float(cfg.signal_variance[0])!r}, {float(cfg.signal_variance[1])!r}"]
    lines += ["", "[noise]", f"variance = {float(cfg.noise_variance[0])!r}, {float(cfg.noise_variance[1])!r}"]
    for v in cfg.variants:
        lines += ["", f"[algorithm:{v.label}]", f"name = {v.algorithm}", f"mu = {float(v.mu)!r}",
                  f"epsilon = {float(v.epsilon)!r}", f"mu_bar = {float(v.mu_bar)!r}",
                  f"combination = {v.combination}", f"mu_rule = {v.mu_rule}"]
    c = cfg.clustering
    lines += ["", "[clustering]", f"tau = {float(c.tau)!r}", f"beta = {float(c.beta)!r}",
              f"theta = {float(c.theta)!r}", f"nu = {float(c.nu)!r}"]
    if cfg.snapshots:
        lines.append("snapshots = " + ", ".join(str(s) for s in cfg.snapshots))
    lines += ["", "[run]", f"runs = {cfg.runs}", f"iters = {cfg.iters}", f"seed = {cfg.seed}",
              f"batch = {cfg.batch}", f"theory = {'yes' if cfg.theory else 'no'}", f"out = {cfg.out}"]
    lines += ["", "[reconstruct]", f"train = {cfg.train}", f"sampled = {cfg.sampled}",
              f"switch_sampled = {cfg.switch_sampled}", f"window = {cfg.window}"]
    if cfg.dataset_dir:
        lines.append(f"dataset = {cfg.dataset_dir}")
    if cfg.switch_time is not None:
        lines.append(f"switch_time = {cfg.switch_time}")
    return "\n".join(lines) + "\n"


def config_fields() -> list:
    return [f.name for f in fields(ExperimentConfig)]
