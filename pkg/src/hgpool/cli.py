"""Command-line entry point: fetch, stats, train, gradcheck, pool-export.

Runs are described by a flat key=value config file; any key can be
overridden on the command line with ``--set key=value``.  The dataset cache
directory comes from the config, the HGPOOL_CACHE environment variable, or
~/.cache/hgpool, in that order.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as gdata
from . import layers
from .export import export_levels
from .model import (ModelConfig, cross_entropy_loss, forward, init_params,
                    load_checkpoint)
from .training import AdamSettings, run_experiment

CACHE_ENV = "HGPOOL_CACHE"
DEFAULT_CACHE = "~/.cache/hgpool"

GRADCHECK_TOLERANCE = 1e-4


class ConfigError(ValueError):
    """The run configuration is missing, malformed, or inconsistent."""


def _parse_hop(text: str):
    if text.lower() in ("unlimited", "none"):
        return None
    return int(text)


def _parse_int_list(text: str):
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


_BOOLISH = {"1": True, "true": True, "yes": True, "0": False, "false": False,
            "no": False}


@dataclass
class RunConfig:
    """Typed view of the key=value run file."""

    dataset: str = ""
    cache_dir: str = ""
    feature_scheme: str = "auto"
    feature_dim: int = 0            # 0 = derive from the dataset
    num_classes: int = 0            # 0 = derive from the dataset
    num_levels: int = 3
    hidden_dim: int = 128
    pooling_ratio: float = 0.8
    lam: float = 1.0
    hop_limit: int | None = 2
    normalization: str = "sparsemax"
    variant: str = "full"
    mlp_dims: tuple = (256, 128, 64)
    activation: str = "relu"
    learning_rate: float = 0.001
    weight_decay: float = 0.001
    batch_size: int = 64
    patience: int = 100
    max_epochs: int = 1000
    repeats: int = 10
    seeds: tuple = ()
    workers: int = 1
    output_dir: str = "runs"
    synth_count: int = 200
    synth_min_size: int = 8
    synth_max_size: int = 20
    synth_seed: int = 0
    gradcheck_nodes: int = 6
    gradcheck_edge_prob: float = 0.5

    def resolved_cache(self) -> Path:
        root = self.cache_dir or os.environ.get(CACHE_ENV, "") or DEFAULT_CACHE
        return Path(root).expanduser()

    def model_config(self, feature_dim: int, num_classes: int) -> ModelConfig:
        try:
            return ModelConfig(
                feature_dim=feature_dim, num_classes=num_classes,
                num_levels=self.num_levels, hidden_dim=self.hidden_dim,
                pooling_ratio=self.pooling_ratio, lam=self.lam,
                hop_limit=self.hop_limit, normalization=self.normalization,
                variant=self.variant.lower(), mlp_dims=self.mlp_dims,
                activation=self.activation)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def adam_settings(self) -> AdamSettings:
        return AdamSettings(learning_rate=self.learning_rate,
                            weight_decay=self.weight_decay)

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds else list(range(self.repeats))


_PARSERS = {
    "hop_limit": _parse_hop,
    "mlp_dims": _parse_int_list,
    "seeds": _parse_int_list,
}
_KEY_ALIASES = {"lambda": "lam"}


def _coerce(key: str, raw: str):
    attr = _KEY_ALIASES.get(key, key)
    spec = {f.name: f for f in fields(RunConfig)}.get(attr)
    if spec is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if attr in _PARSERS:
            return attr, _PARSERS[attr](raw)
        if spec.type in ("int", int):
            return attr, int(raw)
        if spec.type in ("float", float):
            return attr, float(raw)
        return attr, raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def load_run_config(path, overrides=()) -> RunConfig:
    """Parse the key=value file, then apply --set overrides in order."""
    cfg = RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path.name}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        attr, value = _coerce(key, raw)
        setattr(cfg, attr, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        attr, value = _coerce(key, raw)
        setattr(cfg, attr, value)
    return cfg


def resolve_dataset(cfg: RunConfig) -> gdata.Dataset:
    name = cfg.dataset
    if not name:
        raise ConfigError("config must set a dataset")
    if name in gdata.SYNTH_KINDS:
        return gdata.synth_dataset(name, cfg.synth_count,
                                   (cfg.synth_min_size, cfg.synth_max_size),
                                   cfg.synth_seed)
    direct = Path(name).expanduser()
    if direct.is_dir():
        return gdata.parse_tu_dataset(direct, cfg.feature_scheme)
    cached = cfg.resolved_cache() / name
    if cached.is_dir():
        return gdata.parse_tu_dataset(cached, cfg.feature_scheme)
    if name in gdata.KNOWN_DATASETS:
        raise ConfigError(f"dataset {name} is not cached under "
                          f"{cfg.resolved_cache()}; run `hgpool fetch {name}` first")
    raise gdata.DatasetLookupError(f"unknown dataset {name!r}")


# -- commands ---------------------------------------------------------------------

def cmd_fetch(args) -> int:
    cache = Path(args.cache_dir or os.environ.get(CACHE_ENV, "") or
                 DEFAULT_CACHE).expanduser()
    hit = (cache / args.name / f"{args.name}_A.txt").is_file()
    path = gdata.fetch_dataset(args.name, base_url=args.base_url, cache_dir=cache)
    print(f"{'cache hit' if hit else 'fetched'}: {path}")
    return 0


def cmd_stats(args) -> int:
    cfg = RunConfig(dataset=args.dataset, cache_dir=args.cache_dir or "",
                    feature_scheme=args.feature_scheme)
    ds = resolve_dataset(cfg)
    st = gdata.dataset_stats(ds)
    print(f"dataset          {ds.name}")
    print(f"graphs           {st.num_graphs}")
    print(f"nodes            {st.total_nodes}")
    print(f"avg nodes        {st.avg_nodes:.2f}")
    print(f"avg edges        {st.avg_edges_undirected:.2f} undirected "
          f"({st.avg_edges_directed:.2f} directed entries)")
    print(f"classes          {st.num_classes}")
    print(f"feature dim      {ds.feature_dim}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set or ())
    ds = resolve_dataset(cfg)
    mc = cfg.model_config(ds.feature_dim, ds.num_classes)
    run_name = f"{Path(ds.name).name}_{mc.variant}"
    summary = run_experiment(
        ds, mc, optim=cfg.adam_settings(), seeds=cfg.seed_list(),
        patience=cfg.patience, max_epochs=cfg.max_epochs,
        batch_size=cfg.batch_size, out_dir=cfg.output_dir, run_name=run_name,
        workers=cfg.workers)
    print(f"{run_name}: test accuracy {summary} over {len(summary.results)} seeds")
    print(f"outputs in {Path(cfg.output_dir).resolve()}")
    return 0


def find_smooth_instance(mc: ModelConfig, cfg: RunConfig, margin: float = 1e-3,
                         tries: int = 200):
    """A random graph + parameter draw whose forward stays clear of kinks."""
    for attempt in range(tries):
        rng = np.random.default_rng(np.random.SeedSequence([1234, attempt]))
        graph = gdata.random_graph_instance(
            cfg.gradcheck_nodes, cfg.gradcheck_edge_prob, mc.feature_dim, rng,
            label=int(rng.integers(mc.num_classes)))
        params = init_params(mc, seed=attempt)
        probe = layers.SmoothnessProbe()
        forward(graph, params, mc, probe=probe)
        if probe.min_margin() > margin:
            return graph, params
    raise RuntimeError(f"no smooth sample found in {tries} tries")


def cmd_gradcheck(args) -> int:
    cfg = load_run_config(args.config, args.set or ())
    mc = cfg.model_config(cfg.feature_dim or 4, cfg.num_classes or 2)
    graph, params = find_smooth_instance(mc, cfg)

    def loss_fn(_):
        logits, _levels = forward(graph, params, mc)
        return cross_entropy_loss([logits], [graph.label])

    err = ad.grad_check(loss_fn, params.parameters())
    ok = err < GRADCHECK_TOLERANCE
    print(f"max relative gradient error: {err:.3e} "
          f"({'OK' if ok else 'EXCEEDS'} tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


def cmd_pool_export(args) -> int:
    cfg = load_run_config(args.config, args.set or ())
    ds = resolve_dataset(cfg)
    if not 0 <= args.graph_index < len(ds):
        raise IndexError(f"graph index {args.graph_index} outside 0..{len(ds) - 1}")
    mc = cfg.model_config(ds.feature_dim, ds.num_classes)
    params = init_params(mc, seed=0)
    try:
        params.load_values(load_checkpoint(args.checkpoint))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint does not match the config: {exc}") from exc
    graph = ds.graphs[args.graph_index]
    _, levels = forward(graph, params, mc)
    out = Path(args.out or Path(cfg.output_dir) / "pool_export")
    paths = export_levels(graph, levels, out, fmt=args.format)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hgpool",
        description="hierarchical graph pooling with learned sparse structure")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download a benchmark dataset into the cache")
    p.add_argument("name")
    p.add_argument("--cache-dir", default="")
    p.add_argument("--base-url", default=gdata.DEFAULT_BASE_URL)
    p.set_defaults(fn=cmd_fetch)

    p = sub.add_parser("stats", help="print dataset statistics")
    p.add_argument("dataset", help="dataset name, synthetic kind, or directory")
    p.add_argument("--cache-dir", default="")
    p.add_argument("--feature-scheme", default="auto")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("train", help="run the repeated-split training protocol")
    p.add_argument("config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the full loss gradient")
    p.add_argument("config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("pool-export",
                       help="export pooled graphs with learned structures")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("--graph-index", type=int, default=0)
    p.add_argument("--format", choices=("dot", "json"), default="dot")
    p.add_argument("--out", default="")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_pool_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, gdata.DatasetLookupError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
