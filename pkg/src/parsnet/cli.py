"""Command-line entry point: data loading, synthetic streams, experiments.

Runs one scenario over a list of seeds, writes one CSV of per-batch results
per seed plus an aggregate JSON summary, and prints the headline numbers.
Exit codes: 0 on success, 1 on a configuration problem, 2 on a runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .stream import (Batch, RunConfig, as_batches, make_infinite_delay,
                     make_sporadic, prequential_run)

SEA_THRESHOLDS = (8.0, 9.0, 7.0, 9.5)  # concept per quartile of the stream
GENERATOR_SIZES = {"sea": 120_000, "hyperplane": 25_000}


class ConfigError(ValueError):
    """A problem with flags, the config file, or the supplied dataset."""


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; every field has a flag."""

    data: str | None = None
    gen: str | None = None
    gen_size: int | None = None
    gen_seed: int = 99
    label_noise: float = 0.0     # sea generator only
    drift: float = 2e-5          # hyperplane weight drift per sample
    scenario: str = "sporadic"
    label_frac: float = 0.5
    batch: int = 1000
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    ablate: list[str] = field(default_factory=list)
    out: str = "runs"
    agmm_conf: float = 0.55
    net_conf: float = 0.6
    init_spread: float = 0.1
    lr_gen: float = 0.01
    lr_disc: float = 0.001
    loss: str = "cross_entropy"
    mask_frac: float = 0.1
    prune_grace: int = 40
    prune_holdoff: int = 1000
    hedge_eps: float = 1e-8
    init_nodes: int = 1
    max_hidden: int = 1024
    augment_mode: str = "tabular"
    trace: bool = False
    audit: bool = False


# -- data sources ------------------------------------------------------------

def load_csv(path: str, batch_size: int) -> list[Batch]:
    """Read a headered CSV (feature columns plus a ``label`` column) into
    fully labelled batches, preserving file order."""
    if not os.path.exists(path):
        raise ConfigError(f"dataset not found: {path}")
    features, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: file is empty")
        names = [name.strip() for name in header]
        if "label" not in names:
            raise ConfigError(f"{path}: no 'label' column in header {names}")
        label_at = names.index("label")
        feature_at = [i for i in range(len(names)) if i != label_at]
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                features.append([float(row[i]) for i in feature_at])
                label = int(float(row[label_at]))
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{path}: malformed row at line {line}: {exc}") from exc
            if label < 0:
                raise ConfigError(f"{path}: negative label at line {line}")
            labels.append(label)
    if not features:
        raise ConfigError(f"{path}: no data rows")
    return as_batches(np.asarray(features), np.asarray(labels, dtype=np.int64), batch_size)


def gen_sea(n: int, seed: int, batch_size: int = 1000,
            label_noise: float = 0.0) -> list[Batch]:
    """Three uniform features on [0, 10]; the class is decided by whether the
    first two sum under a threshold that jumps at each quartile of the stream
    (abrupt drift).  Optional label noise flips the class uniformly."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    features = rng.uniform(0.0, 10.0, (n, 3))
    concept = (4 * np.arange(n)) // n
    cut = np.asarray(SEA_THRESHOLDS)[concept]
    labels = (features[:, 0] + features[:, 1] <= cut).astype(np.int64)
    if label_noise > 0.0:
        labels ^= (rng.random(n) < label_noise).astype(np.int64)
    return as_batches(features, labels, batch_size)


def gen_hyperplane(n: int, seed: int, batch_size: int = 1000,
                   drift: float = 2e-5) -> list[Batch]:
    """Four uniform features on [0, 1]; the class is the side of a weighted
    hyperplane through the feature-space centre, with the weights drifting
    linearly per sample (gradual drift).  Class prior stays at one half."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    features = rng.uniform(0.0, 1.0, (n, 4))
    direction = rng.choice([-1.0, 1.0], size=4)
    weights = 1.0 + direction * drift * np.arange(n)[:, None]
    margins = (features * weights).sum(axis=1) - weights.sum(axis=1) / 2.0
    labels = (margins >= 0.0).astype(np.int64)
    return as_batches(features, labels, batch_size)


def _build_batches(cfg: ExperimentConfig) -> tuple[list[Batch], str]:
    if (cfg.data is None) == (cfg.gen is None):
        raise ConfigError("exactly one of --data and --gen is required")
    if cfg.data is not None:
        return load_csv(cfg.data, cfg.batch), cfg.data
    if cfg.gen not in GENERATOR_SIZES:
        raise ConfigError(f"unknown generator {cfg.gen!r} (choose sea or hyperplane)")
    size = cfg.gen_size if cfg.gen_size is not None else GENERATOR_SIZES[cfg.gen]
    if cfg.gen == "sea":
        return gen_sea(size, cfg.gen_seed, cfg.batch, cfg.label_noise), "sea"
    return gen_hyperplane(size, cfg.gen_seed, cfg.batch, cfg.drift), "hyperplane"


def _scenario_for_seed(cfg: ExperimentConfig, batches: list[Batch], seed: int):
    if cfg.scenario == "sporadic":
        return make_sporadic(batches, cfg.label_frac, np.random.default_rng(seed))
    if cfg.scenario == "delay":
        return make_infinite_delay(batches)
    raise ConfigError(f"unknown scenario {cfg.scenario!r} (choose sporadic or delay)")


def _run_config(cfg: ExperimentConfig, seed: int) -> RunConfig:
    out = cfg.out
    return RunConfig(
        seed=seed,
        agmm_conf=cfg.agmm_conf,
        net_conf=cfg.net_conf,
        init_spread=cfg.init_spread,
        lr_gen=cfg.lr_gen,
        lr_disc=cfg.lr_disc,
        loss=cfg.loss,
        mask_fraction=cfg.mask_frac,
        prune_grace=cfg.prune_grace,
        prune_holdoff=cfg.prune_holdoff,
        hedge_eps=cfg.hedge_eps,
        init_nodes=cfg.init_nodes,
        max_hidden=cfg.max_hidden,
        augment_mode=cfg.augment_mode,
        agmm_off="agmm" in cfg.ablate,
        evolve_off="evolve" in cfg.ablate,
        slash_off="slash" in cfg.ablate,
        trace_path=os.path.join(out, f"trace_seed{seed}.csv") if cfg.trace else None,
        audit_path=os.path.join(out, f"audit_seed{seed}.csv") if cfg.audit else None,
    )


def _mean_ignoring_none(rows: list[list[float | None]]) -> list[float | None]:
    out = []
    for column in zip(*rows):
        known = [v for v in column if v is not None]
        out.append(float(np.mean(known)) if known else None)
    return out


def run_experiment(cfg: ExperimentConfig) -> tuple[int, dict]:
    """Execute the configured runs, write reports, print the headline."""
    for name in cfg.ablate:
        if name not in ("agmm", "evolve", "slash"):
            raise ConfigError(f"unknown ablation {name!r} (choose agmm, evolve, slash)")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    if cfg.scenario == "sporadic" and not 0.0 < cfg.label_frac < 1.0:
        raise ConfigError("label fraction must lie strictly between 0 and 1")
    batches, dataset = _build_batches(cfg)
    os.makedirs(cfg.out, exist_ok=True)

    cr, final_hidden, final_mixture, pseudo, precisions, recalls = [], [], [], [], [], []
    label_fraction = None
    for seed in cfg.seeds:
        scenario = _scenario_for_seed(cfg, batches, seed)
        label_fraction = scenario.label_fraction
        metrics = prequential_run(_run_config(cfg, seed), scenario)
        cr.append(metrics.classification_rate)
        final_hidden.append(metrics.hidden_nodes[-1])
        final_mixture.append(metrics.mixture_sizes[-1])
        pseudo.append(metrics.pseudo_labels)
        precisions.append(metrics.precision)
        recalls.append(metrics.recall)
        with open(os.path.join(cfg.out, f"seed_{seed}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["batch", "accuracy", "hidden_nodes", "mixture_size",
                             "pseudo_labels", "cumulative_seconds"])
            for row in zip(range(1, len(metrics.batch_accuracy) + 1),
                           metrics.batch_accuracy, metrics.hidden_nodes,
                           metrics.mixture_sizes, metrics.pseudo_trajectory,
                           metrics.cumulative_seconds):
                writer.writerow([row[0], repr(row[1]), row[2], row[3], row[4],
                                 f"{row[5]:.3f}"])

    summary = {
        "dataset": dataset,
        "scenario": cfg.scenario,
        "label_fraction": label_fraction,
        "seeds": list(cfg.seeds),
        "ablate": sorted(cfg.ablate),
        "cr_per_seed": cr,
        "cr_mean": float(np.mean(cr)),
        "cr_std": float(np.std(cr)),
        "precision": _mean_ignoring_none(precisions),
        "recall": _mean_ignoring_none(recalls),
        "final_hidden_nodes": final_hidden,
        "final_mixture_sizes": final_mixture,
        "pseudo_labels": pseudo,
    }
    with open(os.path.join(cfg.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"CR {100 * summary['cr_mean']:.2f} ± {100 * summary['cr_std']:.2f} | "
          f"HN {float(np.mean(final_hidden)):.1f} | PS {float(np.mean(pseudo)):.1f}")
    return 0, summary


# -- flag handling -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # Flag mistakes are configuration errors (exit 1), not runtime failures.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parsnet", description=__doc__)
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--data", help="CSV dataset (feature columns + 'label')")
    parser.add_argument("--gen", choices=("sea", "hyperplane"), help="synthetic stream")
    parser.add_argument("--gen-size", type=int, help="samples to generate")
    parser.add_argument("--gen-seed", type=int, help="generator seed (dataset identity)")
    parser.add_argument("--label-noise", type=float, help="sea label flip probability")
    parser.add_argument("--drift", type=float, help="hyperplane weight drift per sample")
    parser.add_argument("--scenario", choices=("sporadic", "delay"))
    parser.add_argument("--label-frac", type=float, help="labelled fraction per batch")
    parser.add_argument("--batch", type=int, help="batch size")
    parser.add_argument("--seeds", help="comma-separated run seeds")
    parser.add_argument("--ablate", action="append", choices=("agmm", "evolve", "slash"))
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--agmm-conf", type=float, help="mixture confidence gate")
    parser.add_argument("--net-conf", type=float, help="network confidence gate")
    parser.add_argument("--init-spread", type=float, help="new mixture component spread")
    parser.add_argument("--lr-gen", type=float, help="generative learning rate")
    parser.add_argument("--lr-disc", type=float, help="discriminative learning rate")
    parser.add_argument("--loss", choices=("cross_entropy", "squared"),
                        help="classifier training loss")
    parser.add_argument("--mask-frac", type=float, help="masked fraction of input features")
    parser.add_argument("--prune-grace", type=int, help="mixture pruning grace period")
    parser.add_argument("--prune-holdoff", type=int,
                        help="samples after hidden growth before pruning may act")
    parser.add_argument("--hedge-eps", type=float, help="importance division guard")
    parser.add_argument("--init-nodes", type=int, help="initial hidden units")
    parser.add_argument("--max-hidden", type=int, help="hidden growth cap")
    parser.add_argument("--augment-mode", choices=("tabular", "image"))
    parser.add_argument("--trace", action="store_true", default=None,
                        help="write per-sample bias/variance traces")
    parser.add_argument("--audit", action="store_true", default=None,
                        help="write per-sample self-labelling decisions")
    return parser


_BOOL_FIELDS = {"trace", "audit"}
_LIST_FIELDS = {"seeds", "ablate"}


def parse_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _coerce(name: str, value):
    """Turn a config-file string into the field's type."""
    if not isinstance(value, str):
        return value
    if name in _LIST_FIELDS:
        parts = [p for p in value.replace(",", " ").split() if p]
        return [int(p) for p in parts] if name == "seeds" else parts
    if name in _BOOL_FIELDS:
        return value.lower() in ("1", "true", "yes", "on")
    for entry in fields(ExperimentConfig):
        if entry.name == name:
            kind = {"data": str, "gen": str, "gen_size": int, "scenario": str,
                    "out": str, "augment_mode": str}.get(name)
            if kind is None:
                kind = type(entry.default) if entry.default is not None else str
            return kind(value)
    raise ConfigError(f"unknown config key {name!r}")


def merge_config(file_values: dict, cli_values: dict) -> ExperimentConfig:
    """Defaults, overridden by config-file values, overridden by flags."""
    cfg = ExperimentConfig()
    known = {entry.name for entry in fields(ExperimentConfig)}
    for name, value in file_values.items():
        if name not in known:
            raise ConfigError(f"unknown config key {name!r}")
        cfg = replace(cfg, **{name: _coerce(name, value)})
    for name, value in cli_values.items():
        if value is None:
            continue
        if name == "seeds" and isinstance(value, str):
            value = _coerce("seeds", value)
        cfg = replace(cfg, **{name: value})
    if not cli_values.get("seeds") and "seeds" not in file_values:
        env_seed = os.environ.get("PARSNET_SEED")
        if env_seed:
            cfg = replace(cfg, seeds=[int(env_seed)])
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        cli_values = {name: getattr(args, name.replace("-", "_"), None)
                      for name in (entry.name for entry in fields(ExperimentConfig))}
        if args.ablate:
            cli_values["ablate"] = list(args.ablate)
        cfg = merge_config(file_values, cli_values)
        status, _ = run_experiment(cfg)
        return status
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
