"""Command-line entry point: ``graphlms <command> ...``.

Exit status is 0 on success, 2 on a configuration or input error and 3 when
any Monte-Carlo run diverged.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, DatasetError, DivergenceError
from ..theory import to_db
from .config import ExperimentConfig, dumps_config, load_config
from .montecarlo import run_monte_carlo, theory_only, write_outputs, write_theory_csv
from .presets import get_preset, preset_names
from .reconstruct import (
    canonical_dataset,
    reconstruct_experiment,
    synthetic_temperature,
    write_reconstruction,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

log = logging.getLogger("graphlms")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--runs", type=int, help="Monte-Carlo runs")
    p.add_argument("--iters", type=int, help="iterations per run")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphlms", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("simulate", "Monte-Carlo MSD curves (with theory where available)"),
        ("theory", "theoretical transient and steady-state MSD only"),
        ("cluster", "clustered variants with cluster-matrix snapshots"),
        ("reconstruct", "temperature reconstruction and NMSE"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="experiment config file")
        _common(p)
    p = sub.add_parser("preset", help="run a named preset or print its config")
    p.add_argument("name", choices=preset_names())
    p.add_argument("--emit-config", action="store_true", help="print the config and exit")
    _common(p)
    return parser


def _overrides(args, cfg: ExperimentConfig) -> ExperimentConfig:
    return cfg.with_overrides(seed=args.seed, runs=args.runs, iters=args.iters, out=args.out)


def cmd_simulate(cfg: ExperimentConfig, clustered_only: bool = False) -> int:
    if clustered_only:
        cfg.variants = [v for v in cfg.variants if v.combination.startswith("clustered")]
        if not cfg.variants:
            raise ConfigError("no variant with a clustered combination")
    result = run_monte_carlo(cfg)
    for path in write_outputs(result, cfg.out):
        log.info("wrote %s", path)
    for label, res in result.variants.items():
        window = max(1, cfg.iters // 5)
        ok = ~res.diverged
        line = f"{label}: "
        line += f"steady {res.steady_db(window):.2f} dB" if ok.any() else "all runs diverged"
        if res.theory_steady is not None:
            line += f", theory {to_db(res.theory_steady):.2f} dB"
        print(line)
    if result.any_diverged:
        for label, res in result.variants.items():
            if res.diverged.any():
                print(f"DIVERGED: {label}: {int(res.diverged.sum())} of {len(res.diverged)} runs "
                      "excluded from the average", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_theory(cfg: ExperimentConfig) -> int:
    curves = theory_only(cfg)
    if not curves:
        raise ConfigError("no variant admits a theory model (needs LMS/PLMS with a fixed combination)")
    for label, (zeta, steady) in curves.items():
        d = Path(cfg.out) / label
        d.mkdir(parents=True, exist_ok=True)
        write_theory_csv(d / "theory.csv", zeta)
        print(f"{label}: steady {to_db(steady):.2f} dB")
    return EXIT_OK


def cmd_reconstruct(cfg: ExperimentConfig) -> int:
    ds = canonical_dataset(cfg.dataset_dir) if cfg.dataset_dir else None
    if ds is None:
        if cfg.dataset_dir:
            raise DatasetError(f"{cfg.dataset_dir} lacks readings.csv / coordinates.csv")
        log.warning("no dataset configured; using the synthetic temperature field")
        ds = synthetic_temperature(seed=cfg.seed)
    res = reconstruct_experiment(ds, cfg)
    write_reconstruction(res, ds, cfg.out)
    for label, val in res.nmse.items():
        print(f"{label}: NMSE {val:.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "preset":
            cfg = _overrides(args, get_preset(args.name))
            if args.emit_config:
                sys.stdout.write(dumps_config(cfg))
                return EXIT_OK
            if args.name == "table1":
                return cmd_reconstruct(cfg)
            return cmd_simulate(cfg)
        cfg = _overrides(args, load_config(args.config))
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "cluster":
            return cmd_simulate(cfg, clustered_only=True)
        if args.command == "theory":
            return cmd_theory(cfg)
        return cmd_reconstruct(cfg)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"DIVERGED: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
