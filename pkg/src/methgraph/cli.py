"""Command-line pipeline: synth, features, annotate, graph, train, eval,
explain, and the end-to-end pipeline command that chains them.

Configuration comes from an optional key=value file (dotted keys, ``#``
comments) plus flag overrides; every stochastic component draws from a
named substream of the single master seed.  Stages are restartable:
each writes a stamp of its effective config and input digests, and a
rerun with an unchanged stamp is a no-op unless --force is given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .annotation import normalize_per_chromosome, parse_manifest, load_sequences
from .comethgraph import BetaMatrix, EdgeRules, build_graph
from .explain import (ExplainerConfig, attribute_importance_matrix,
                      node_importance_matrix, site_slope_ranking,
                      temporal_feature_trends)
from .io import (config_hash, fmt17, read_beta_matrix, read_edges, read_matrix,
                 write_beta_matrix, write_csv, write_edges, write_matrix,
                 write_meta)
from .model import (AgeModel, GraphData, ModelConfig, init_params,
                    load_checkpoint, save_checkpoint)
from .rng import substream
from .seqfeat import FEATURE_NAMES, extract_seq_features, standardise_sequence
from .synthdata import SynthSpec, generate
from .trainer import (SchedulerConfig, SplitPlan, TrainingConfig, evaluate,
                      split, train)

STAGES = ("synth", "features", "annotate", "graph", "train", "eval", "explain")


class ConfigError(ValueError):
    """Bad configuration file or override."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    """Effective configuration for every stage."""

    seed: int = 0
    out_dir: Path = Path("out")
    threads: int = 0  # 0 -> available cores
    force: bool = False
    allow_short: bool = False
    # synthetic cohort
    synth_n_sites: int = 200
    synth_n_samples: int = 500
    synth_n_signal_sites: int = 20
    synth_noise_sd: float = 0.05
    synth_age_min: float = 0.0
    synth_age_max: float = 93.0
    synth_seq_coupling: bool = True
    # graph rules
    r_global: float = 0.70
    r_chrom: float = 0.68
    r_local: float = 0.66
    local_dist: float = 1e5
    # split
    test_fraction: float = 0.2
    k_folds: int = 5
    active_fold: int = 0
    # training
    lr: float = 5e-4
    weight_decay: float = 5e-3
    epochs: int = 140
    dropout_p: float = 0.2
    patience: int = 4
    factor: float = 0.4
    min_lr: float = 1e-8
    scheduler_metric: str = "mse"
    # model
    msg_width: int = 16
    mlp_dims: tuple = (1024, 656, 256, 124, 64, 32, 8, 1)
    sequence_mode: str = "gated"
    # explainer
    explain_steps: int = 100
    explain_lr: float = 0.01
    lambda_size: float = 0.005
    lambda_entropy: float = 0.1
    node_topk: int = 0
    explain_span: float = 0.5
    # manifest header remapping, "logical:actual" pairs joined by commas
    manifest_columns: str = ""

    # -- derived paths ------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def edge_rules(self) -> EdgeRules:
        return EdgeRules(self.r_global, self.r_chrom, self.r_local, self.local_dist)

    def split_plan(self) -> SplitPlan:
        return SplitPlan(self.test_fraction, self.k_folds, self.active_fold)

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            lr=self.lr, weight_decay=self.weight_decay, epochs=self.epochs,
            scheduler=SchedulerConfig(self.patience, self.factor, self.min_lr),
            dropout_p=self.dropout_p, seed=self.seed,
            scheduler_metric=self.scheduler_metric)

    def model_config(self, n_sites: int) -> ModelConfig:
        return ModelConfig(n_sites=n_sites, msg_width=self.msg_width,
                           mlp_dims=tuple(self.mlp_dims),
                           dropout_p=self.dropout_p,
                           sequence_mode=self.sequence_mode)

    def explainer_config(self) -> ExplainerConfig:
        return ExplainerConfig(steps=self.explain_steps, lr=self.explain_lr,
                               lambda_size=self.lambda_size,
                               lambda_entropy=self.lambda_entropy)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            n_sites=self.synth_n_sites, n_samples=self.synth_n_samples,
            age_range=(self.synth_age_min, self.synth_age_max),
            n_signal_sites=self.synth_n_signal_sites,
            noise_sd=self.synth_noise_sd, seq_coupling=self.synth_seq_coupling)

    # run-mode knobs that do not influence computed values
    _NON_SEMANTIC = ("force", "out_dir", "threads")

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name in self._NON_SEMANTIC:
                continue
            v = getattr(self, f.name)
            out[f.name] = str(v) if isinstance(v, Path) else v
        return out

    def hash(self) -> str:
        return config_hash(self.as_dict())

    def n_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


# configuration file keys -> dataclass fields
_KEY_MAP = {
    "seed": "seed",
    "out_dir": "out_dir",
    "threads": "threads",
    "allow_short": "allow_short",
    "synth.n_sites": "synth_n_sites",
    "synth.n_samples": "synth_n_samples",
    "synth.n_signal_sites": "synth_n_signal_sites",
    "synth.noise_sd": "synth_noise_sd",
    "synth.age_min": "synth_age_min",
    "synth.age_max": "synth_age_max",
    "synth.seq_coupling": "synth_seq_coupling",
    "graph.r_global": "r_global",
    "graph.r_chrom": "r_chrom",
    "graph.r_local": "r_local",
    "graph.local_dist": "local_dist",
    "split.test_fraction": "test_fraction",
    "split.k_folds": "k_folds",
    "split.active_fold": "active_fold",
    "train.lr": "lr",
    "train.weight_decay": "weight_decay",
    "train.epochs": "epochs",
    "train.dropout_p": "dropout_p",
    "train.patience": "patience",
    "train.factor": "factor",
    "train.min_lr": "min_lr",
    "train.scheduler_metric": "scheduler_metric",
    "model.msg_width": "msg_width",
    "model.mlp_dims": "mlp_dims",
    "model.sequence_mode": "sequence_mode",
    "explain.steps": "explain_steps",
    "explain.lr": "explain_lr",
    "explain.lambda_size": "lambda_size",
    "explain.lambda_entropy": "lambda_entropy",
    "explain.node_topk": "node_topk",
    "explain.span": "explain_span",
    "manifest.columns": "manifest_columns",
}

_BOOL_STRINGS = {"true": True, "1": True, "yes": True,
                 "false": False, "0": False, "no": False}


def _coerce(field_name: str, raw: str, current):
    raw = raw.strip()
    try:
        if field_name == "mlp_dims":
            return tuple(int(x) for x in raw.split(","))
        if isinstance(current, bool):
            if raw.lower() not in _BOOL_STRINGS:
                raise ValueError(f"expected boolean, got {raw!r}")
            return _BOOL_STRINGS[raw.lower()]
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, Path):
            return Path(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {field_name}: {exc}") from exc


def apply_setting(cfg: PipelineConfig, key: str, raw: str) -> PipelineConfig:
    if key not in _KEY_MAP:
        raise ConfigError(f"unknown configuration key {key!r}")
    name = _KEY_MAP[key]
    return replace(cfg, **{name: _coerce(name, raw, getattr(cfg, name))})


def load_config_file(cfg: PipelineConfig, path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{line_no}: expected key = value, got {line!r}")
        cfg = apply_setting(cfg, key.strip(), value.strip())
    return cfg


# -- restart stamps --------------------------------------------------------------


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stamp_path(cfg: PipelineConfig, stage: str) -> Path:
    return cfg.path(f"{stage}.stamp.json")


def _stage_fresh(cfg: PipelineConfig, stage: str, inputs: list[Path],
                 outputs: list[Path]) -> bool:
    """True when the previous run of this stage is still valid."""
    if cfg.force:
        return False
    stamp = _stamp_path(cfg, stage)
    if not stamp.exists() or not all(p.exists() for p in outputs):
        return False
    try:
        recorded = json.loads(stamp.read_text())
    except (OSError, json.JSONDecodeError):
        return False
    if recorded.get("config") != cfg.hash():
        return False
    return recorded.get("inputs") == {str(p): _digest(p) for p in inputs}


def _write_stamp(cfg: PipelineConfig, stage: str, inputs: list[Path]) -> None:
    stamp = {
        "config": cfg.hash(),
        "inputs": {str(p): _digest(p) for p in inputs},
    }
    _stamp_path(cfg, stage).write_text(json.dumps(stamp, sort_keys=True) + "\n")


# -- shared loading helpers --------------------------------------------------------


def _column_map(cfg: PipelineConfig) -> dict[str, str] | None:
    if not cfg.manifest_columns:
        return None
    out = {}
    for pair in cfg.manifest_columns.split(","):
        logical, sep, actual = pair.partition(":")
        if not sep:
            raise ConfigError(f"manifest.columns entry {pair!r} is not logical:actual")
        out[logical.strip()] = actual.strip()
    return out


def _load_sites(cfg: PipelineConfig):
    return parse_manifest(cfg.path("manifest.csv"), columns=_column_map(cfg))


def _derive_split(cfg: PipelineConfig, betas: BetaMatrix):
    sources = [sid.split(":", 1)[0] if ":" in sid else "default"
               for sid in betas.sample_ids]
    return split(betas.sample_ids, sources, cfg.split_plan(),
                 substream(cfg.seed, "split"))


def _assemble_model(cfg: PipelineConfig, n_sites: int):
    seq_features, _ = read_matrix(cfg.path("seq_features.mgm"))
    positional, _ = read_matrix(cfg.path("positional.mgm"))
    graph = GraphData(read_edges(cfg.path("edges.tsv")), num_nodes=n_sites)
    return seq_features, positional, graph


# -- stages -------------------------------------------------------------------------


def run_synth(cfg: PipelineConfig) -> None:
    outputs = [cfg.path("manifest.csv"), cfg.path("betas.mgb")]
    if _stage_fresh(cfg, "synth", [], outputs):
        print("synth: up to date, skipping")
        return
    data = generate(cfg.synth_spec(), cfg.seed)
    rows = []
    for site, seq in zip(data.sites, data.sequences):
        off = seq.cpg_offset
        bracketed = seq.bases[:off] + "[CG]" + seq.bases[off + 2:]
        island = (f"{site.island_start}-{site.island_end}"
                  if site.island_member else "")
        dist = "" if site.distance_to_tss is None else site.distance_to_tss
        rows.append([site.site_id, site.chromosome, site.position, site.tss,
                     dist, island, site.strand, site.next_base,
                     site.source_strand, site.gene_symbol, bracketed])
    write_csv(cfg.path("manifest.csv"),
              ["site_id", "chromosome", "position", "tss", "dist_tss",
               "island_range", "strand", "next_base", "source_strand",
               "gene_symbol", "sequence"],
              rows, cfg.hash(), cfg.seed)
    write_beta_matrix(cfg.path("betas.mgb"), data.betas)
    write_meta(cfg.path("betas.mgb"), cfg.hash(), cfg.seed,
               {"samples": data.betas.n_samples, "sites": data.betas.n_sites})
    _write_stamp(cfg, "synth", [])
    print(f"synth: {data.betas.n_samples} samples x {data.betas.n_sites} sites")


def run_features(cfg: PipelineConfig) -> None:
    manifest = cfg.path("manifest.csv")
    outputs = [cfg.path("seq_features.csv"), cfg.path("seq_features.mgm")]
    if _stage_fresh(cfg, "features", [manifest], outputs):
        print("features: up to date, skipping")
        return
    raw = load_sequences(manifest, columns=_column_map(cfg))
    site_ids = [s.site_id for s in _load_sites(cfg)]
    rows = []
    matrix = np.empty((len(site_ids), 8))
    for k, sid in enumerate(site_ids):
        seq = standardise_sequence(raw[sid], allow_short=cfg.allow_short)
        matrix[k] = extract_seq_features(seq)
        rows.append([sid, *matrix[k].tolist()])
    write_csv(cfg.path("seq_features.csv"),
              ["site_id", *[f"f{k + 1}" for k in range(8)]],
              rows, cfg.hash(), cfg.seed)
    write_matrix(cfg.path("seq_features.mgm"), matrix, site_ids)
    write_meta(cfg.path("seq_features.mgm"), cfg.hash(), cfg.seed)
    _write_stamp(cfg, "features", [manifest])
    print(f"features: {len(site_ids)} sites")


def run_annotate(cfg: PipelineConfig) -> None:
    manifest = cfg.path("manifest.csv")
    outputs = [cfg.path("positional.csv"), cfg.path("positional.mgm")]
    if _stage_fresh(cfg, "annotate", [manifest], outputs):
        print("annotate: up to date, skipping")
        return
    sites = _load_sites(cfg)
    feats = normalize_per_chromosome(sites)
    write_csv(cfg.path("positional.csv"),
              ["site_id", *[f"p{k + 1}" for k in range(feats.shape[1])]],
              [[s.site_id, *feats[k].tolist()] for k, s in enumerate(sites)],
              cfg.hash(), cfg.seed)
    write_matrix(cfg.path("positional.mgm"), feats, [s.site_id for s in sites])
    write_meta(cfg.path("positional.mgm"), cfg.hash(), cfg.seed)
    _write_stamp(cfg, "annotate", [manifest])
    print(f"annotate: {len(sites)} sites")


def run_graph(cfg: PipelineConfig) -> None:
    inputs = [cfg.path("manifest.csv"), cfg.path("betas.mgb")]
    outputs = [cfg.path("edges.tsv"), cfg.path("split.csv")]
    if _stage_fresh(cfg, "graph", inputs, outputs):
        print("graph: up to date, skipping")
        return
    betas = read_beta_matrix(cfg.path("betas.mgb"))
    sites = _load_sites(cfg)
    sp = _derive_split(cfg, betas)
    role = np.full(betas.n_samples, "train", dtype=object)
    role[sp.val_idx] = "val"
    role[sp.test_idx] = "test"
    write_csv(cfg.path("split.csv"), ["sample_id", "role"],
              [[sid, role[k]] for k, sid in enumerate(betas.sample_ids)],
              cfg.hash(), cfg.seed)
    graph = build_graph(betas.subset(sp.train_idx), sites, cfg.edge_rules(),
                        n_threads=cfg.n_threads())
    write_edges(cfg.path("edges.tsv"), graph, cfg.edge_rules(), cfg.hash(), cfg.seed)
    _write_stamp(cfg, "graph", inputs)
    print(f"graph: {graph.num_edges} edges over {graph.num_nodes} sites "
          f"(train fold of {sp.train_idx.size} samples)")


def run_train(cfg: PipelineConfig) -> None:
    inputs = [cfg.path("manifest.csv"), cfg.path("betas.mgb"),
              cfg.path("seq_features.mgm"), cfg.path("positional.mgm"),
              cfg.path("edges.tsv")]
    outputs = [cfg.path("checkpoint.mgc"), cfg.path("train_log.csv")]
    if _stage_fresh(cfg, "train", inputs, outputs):
        print("train: up to date, skipping")
        return
    betas = read_beta_matrix(cfg.path("betas.mgb"))
    sp = _derive_split(cfg, betas)
    seq_features, positional, graph = _assemble_model(cfg, betas.n_sites)
    model_cfg = cfg.model_config(betas.n_sites)
    params = init_params(model_cfg, substream(cfg.seed, "init"))
    model = AgeModel(model_cfg, params, graph, seq_features, positional)
    result = train(model, betas.values, betas.ages, sp.train_idx, sp.val_idx,
                   cfg.training_config(),
                   substream(cfg.seed, "shuffle"), substream(cfg.seed, "dropout"))
    model.params.load_values(result.best_params)
    save_checkpoint(cfg.path("checkpoint.mgc"), model, seed=cfg.seed,
                    extra={"config_hash": cfg.hash(),
                           "best_epoch": result.best_epoch,
                           "best_val_mse": fmt17(result.best_val_mse)})
    write_meta(cfg.path("checkpoint.mgc"), cfg.hash(), cfg.seed)
    write_csv(cfg.path("train_log.csv"),
              ["epoch", "train_mse", "val_mse", "val_mae", "lr"],
              [[r.epoch, r.train_mse, r.val_mse, r.val_mae, r.lr]
               for r in result.log],
              cfg.hash(), cfg.seed)
    _write_stamp(cfg, "train", inputs)
    print(f"train: best val MSE {result.best_val_mse:.4f} at epoch {result.best_epoch}")


def _load_model(cfg: PipelineConfig) -> tuple[AgeModel, BetaMatrix]:
    betas = read_beta_matrix(cfg.path("betas.mgb"))
    model_cfg, params, _header = load_checkpoint(cfg.path("checkpoint.mgc"))
    seq_features, positional, graph = _assemble_model(cfg, model_cfg.n_sites)
    return AgeModel(model_cfg, params, graph, seq_features, positional), betas


def run_eval(cfg: PipelineConfig) -> None:
    inputs = [cfg.path("betas.mgb"), cfg.path("checkpoint.mgc")]
    outputs = [cfg.path("eval_metrics.csv")]
    if _stage_fresh(cfg, "eval", inputs, outputs):
        print("eval: up to date, skipping")
        return
    model, betas = _load_model(cfg)
    sp = _derive_split(cfg, betas)
    metrics = evaluate(model, betas.values[sp.test_idx], betas.ages[sp.test_idx])
    rows = [["mae", metrics.mae], ["mse", metrics.mse], ["r2", metrics.r2],
            ["slope", metrics.slope]]
    rows += [[f"mae_age_{bucket}", value]
             for bucket, value in metrics.per_age_group_mae.items()]
    write_csv(cfg.path("eval_metrics.csv"), ["metric", "value"], rows,
              cfg.hash(), cfg.seed)
    _write_stamp(cfg, "eval", inputs)
    print(f"eval: test MAE {metrics.mae:.4f}, MSE {metrics.mse:.4f}, "
          f"R2 {metrics.r2:.4f}, slope {metrics.slope:.4f}")


def run_explain(cfg: PipelineConfig) -> None:
    inputs = [cfg.path("betas.mgb"), cfg.path("checkpoint.mgc")]
    outputs = [cfg.path("feature_importance.csv"), cfg.path("node_importance.mgm"),
               cfg.path("trends.csv")]
    if _stage_fresh(cfg, "explain", inputs, outputs):
        print("explain: up to date, skipping")
        return
    model, betas = _load_model(cfg)
    sp = _derive_split(cfg, betas)
    test_betas = betas.values[sp.test_idx]
    test_ages = betas.ages[sp.test_idx]
    test_ids = [betas.sample_ids[k] for k in sp.test_idx]
    ecfg = cfg.explainer_config()

    attr = attribute_importance_matrix(model, test_betas, test_ages, test_ids, ecfg)
    write_csv(cfg.path("feature_importance.csv"),
              ["sample_id", "age", *[f"f{k + 1}" for k in range(8)]],
              [[sid, float(age), *vals.tolist()]
               for sid, age, vals in zip(attr.sample_ids, attr.ages, attr.values)],
              cfg.hash(), cfg.seed)

    node = node_importance_matrix(model, test_betas, test_ages, test_ids, ecfg)
    write_matrix(cfg.path("node_importance.mgm"), node.values, node.sample_ids)
    write_meta(cfg.path("node_importance.mgm"), cfg.hash(), cfg.seed)

    trends = temporal_feature_trends(attr, span=cfg.explain_span)
    write_csv(cfg.path("trends.csv"), ["feature", "r", "p", "slope"],
              [[t.feature, t.r, t.p, t.slope] for t in trends],
              cfg.hash(), cfg.seed)
    for t in trends:
        if t.lowess_grid is None:
            continue
        write_csv(cfg.path(f"lowess_{t.feature}.csv"), ["age", "fit"],
                  [[float(a), float(v)] for a, v in zip(t.lowess_grid, t.lowess_fit)],
                  cfg.hash(), cfg.seed)

    ranking = site_slope_ranking(node, k=max(cfg.node_topk, 10))
    site_ids = read_matrix(cfg.path("seq_features.mgm"))[1]
    write_csv(cfg.path("site_slopes.csv"), ["rank", "direction", "site_id", "slope"],
              [[k + 1, "increasing", site_ids[j], float(ranking.slopes[j])]
               for k, j in enumerate(ranking.increasing)]
              + [[k + 1, "decreasing", site_ids[j], float(ranking.slopes[j])]
                 for k, j in enumerate(ranking.decreasing)],
              cfg.hash(), cfg.seed)

    if cfg.node_topk > 0:
        rows = []
        for sid, age, vals in zip(node.sample_ids, node.ages, node.values):
            top = np.argsort(-vals, kind="stable")[:cfg.node_topk]
            for j in top:
                rows.append([sid, float(age), site_ids[j], float(vals[j])])
        write_csv(cfg.path("node_importance_top.csv"),
                  ["sample_id", "age", "site_id", "importance"],
                  rows, cfg.hash(), cfg.seed)

    _write_stamp(cfg, "explain", inputs)
    print(f"explain: masks learned for {len(test_ids)} test samples")


def run_pipeline(cfg: PipelineConfig) -> None:
    for stage_name, stage in (("synth", run_synth), ("features", run_features),
                              ("annotate", run_annotate), ("graph", run_graph),
                              ("train", run_train), ("eval", run_eval),
                              ("explain", run_explain)):
        try:
            stage(cfg)
        except Exception as exc:  # noqa: BLE001 - rewrapped with stage context
            raise StageError(stage_name, exc) from exc


# -- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="methgraph",
        description="sequence-aware co-methylation graph age model pipeline")
    parser.add_argument("--version", action="version", version=f"methgraph {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="key=value configuration file")
        p.add_argument("--out-dir", type=Path, help="working directory for stage files")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--threads", type=int,
                       help="worker threads (default: available cores, "
                            "or METHGRAPH_THREADS)")
        p.add_argument("--force", action="store_true",
                       help="re-run the stage even if outputs are up to date")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")

    for name in ("synth", "annotate", "eval", "pipeline"):
        common(sub.add_parser(name))

    p = sub.add_parser("features")
    common(p)
    p.add_argument("--allow-short", action="store_true",
                   help="accept sequences shorter than 122 bases")

    p = sub.add_parser("graph")
    common(p)
    p.add_argument("--r-global", type=float, help="cross-chromosome |r| threshold")
    p.add_argument("--r-chrom", type=float, help="same-chromosome |r| threshold")
    p.add_argument("--r-local", type=float, help="near-pair |r| threshold")
    p.add_argument("--local-dist", type=float, help="near-pair distance bound (bp)")

    p = sub.add_parser("train")
    common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--sequence-mode", choices=("gated", "agnostic"))

    p = sub.add_parser("explain")
    common(p)
    p.add_argument("--node-topk", type=int,
                   help="also write the top-k node importances per sample")
    return parser


def config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        cfg = load_config_file(cfg, args.config)
    if os.environ.get("METHGRAPH_THREADS"):
        try:
            cfg = replace(cfg, threads=int(os.environ["METHGRAPH_THREADS"]))
        except ValueError as exc:
            raise ConfigError(f"bad METHGRAPH_THREADS: {exc}") from exc
    direct = {
        "out_dir": "out_dir", "seed": "seed", "threads": "threads",
        "allow_short": "allow_short", "r_global": "r_global",
        "r_chrom": "r_chrom", "r_local": "r_local", "local_dist": "local_dist",
        "epochs": "epochs", "lr": "lr", "sequence_mode": "sequence_mode",
        "node_topk": "node_topk",
    }
    updates = {}
    for arg_name, field_name in direct.items():
        value = getattr(args, arg_name, None)
        if value is not None and value is not False:
            updates[field_name] = value
    if updates:
        cfg = replace(cfg, **updates)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg = apply_setting(cfg, key.strip(), value.strip())
    if args.force:
        cfg = replace(cfg, force=True)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"methgraph-error stage=config type={type(exc).__name__} "
              f"detail={exc}", file=sys.stderr)
        return 1
    runners = {
        "synth": run_synth, "features": run_features, "annotate": run_annotate,
        "graph": run_graph, "train": run_train, "eval": run_eval,
        "explain": run_explain, "pipeline": run_pipeline,
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        runners[args.command](cfg)
    except StageError as exc:
        print(f"methgraph-error stage={exc.stage} type={type(exc.cause).__name__} "
              f"detail={exc.cause}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"methgraph-error stage={args.command} type={type(exc).__name__} "
              f"detail={exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
