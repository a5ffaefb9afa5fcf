"""Experiment orchestration: configuration, per-replica runs, grid search,
ablation, and CSV persistence.

Configuration lives in a plain key=value text file ('#' starts a comment);
command-line flags override file values. Seeds: replica i runs with
master_seed + i, and everything inside a replica (init, K-means restarts)
consumes that replica's RNG stream, so reruns are reproducible byte for byte
apart from wall-time fields.
"""
from __future__ import annotations

import csv
import hashlib
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError, ParseError, TrainingError
from .graph import AttributedNetwork, build_knn_graph, load_network, save_network
from .lfr import LfrSpec, generate
from .metrics import evaluate_all
from .model import (AeConfig, GaeConfig, LossWeights, TrainConfig, TERMS,
                    init_model, save_checkpoint, total_loss)
from .training import extract_outputs, pretrain, train

VARIANTS = ("Qg", "Qa", "Zg_clu", "Za_clu")

RESULTS_HEADER = ["config_hash", "seed", "variant", "status", "acc", "nmi", "ari",
                  "f1", "wall_time_s", "max_iter", "l_are", "kl_a", "l_gre",
                  "kl_g", "kl_con", "total_loss"]
HISTORY_HEADER = ["seed", "epoch", "l_are", "kl_a", "l_gre", "kl_g", "kl_con",
                  "total", "acc_qg", "nmi_qg"]
GRID_HEADER = ["alpha", "beta", "gamma", "seed", "status", "acc", "nmi", "ari", "f1"]
ABLATION_HEADER = ["arm", "seed", "status", "acc", "nmi", "ari", "f1"]


@dataclass
class ExperimentConfig:
    """One experiment: a dataset source, model dimensions, training settings."""

    source: str = "lfr"                     # lfr | files | features
    lfr: LfrSpec = field(default_factory=LfrSpec)
    edges_path: str = ""
    attrs_path: str = ""
    labels_path: str = ""
    features_path: str = ""
    knn_k: int = 5
    knn_metric: str = "euclidean"
    num_clusters: int = 0                   # 0 = derive from labels
    ae_dims: tuple[int, ...] = ()           # hidden dims then d; () = per-source default
    ae_final_activation: str = "auto"       # auto | sigmoid | identity
    gae_hidden: int = 256
    gae_dim: int = 0                        # 0 = match the AE embedding dim
    pretrain_epochs: int = 50
    kmeans_restarts: int = 20
    max_iter: int = 200
    lr: float = 1e-3
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 1.0
    seed: int = 0
    replicas: int = 1
    out_dir: str = "runs"
    pairwise_f1: bool = False

    def validate(self) -> None:
        if self.source not in ("lfr", "files", "features"):
            raise ParameterError(f"unknown dataset source {self.source!r}")
        if self.replicas < 1:
            raise ParameterError("replicas must be >= 1")
        self.train_config(0).validate()

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.pretrain_epochs, self.kmeans_restarts, self.max_iter,
                           self.lr, LossWeights(self.alpha, self.beta, self.gamma), seed)

    def resolved_ae_dims(self) -> tuple[int, ...]:
        if self.ae_dims:
            return self.ae_dims
        if self.source == "lfr":
            # deeper stack once attribute clusters get noisy
            return (256, 64) if self.lfr.noise_ratio <= 0.1 else (512, 256, 64)
        if self.source == "features":
            return (1024, 512, 512, 256, 64)
        return (512, 256, 64)

    def config_hash(self) -> str:
        skip = {"out_dir", "seed"}
        text = ";".join(f"{k}={v}" for k, v in sorted(self.__dict__.items())
                        if k not in skip)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


_BOOL_VALUES = {"true": True, "1": True, "yes": True,
                "false": False, "0": False, "no": False}


def _parse_value(key: str, raw: str, kind):
    try:
        if kind is bool:
            return _BOOL_VALUES[raw.strip().lower()]
        if kind is tuple:
            return tuple(int(p) for p in raw.replace(",", " ").split())
        return kind(raw)
    except (ValueError, KeyError):
        raise ParameterError(f"bad value for {key}: {raw!r}") from None


_CONFIG_KEYS = {
    "source": ("source", str),
    "lfr.n": ("lfr.n", int),
    "lfr.mu": ("lfr.mu", float),
    "lfr.avg_degree": ("lfr.avg_degree", float),
    "lfr.max_degree": ("lfr.max_degree", int),
    "lfr.c_min": ("lfr.c_min", int),
    "lfr.c_max": ("lfr.c_max", int),
    "lfr.degree_exponent": ("lfr.degree_exponent", float),
    "lfr.size_exponent": ("lfr.size_exponent", float),
    "lfr.attr_dim": ("lfr.attr_dim", int),
    "lfr.attrs_per_cluster": ("lfr.attrs_per_cluster", int),
    "lfr.noise_ratio": ("lfr.noise_ratio", float),
    "files.edges": ("edges_path", str),
    "files.attrs": ("attrs_path", str),
    "files.labels": ("labels_path", str),
    "features.path": ("features_path", str),
    "features.labels": ("labels_path", str),
    "knn.k": ("knn_k", int),
    "knn.metric": ("knn_metric", str),
    "clusters": ("num_clusters", int),
    "ae.dims": ("ae_dims", tuple),
    "ae.final_activation": ("ae_final_activation", str),
    "gae.hidden": ("gae_hidden", int),
    "gae.dim": ("gae_dim", int),
    "train.pretrain_epochs": ("pretrain_epochs", int),
    "train.kmeans_restarts": ("kmeans_restarts", int),
    "train.max_iter": ("max_iter", int),
    "train.lr": ("lr", float),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "gamma": ("gamma", float),
    "seed": ("seed", int),
    "replicas": ("replicas", int),
    "out": ("out_dir", str),
    "pairwise_f1": ("pairwise_f1", bool),
}


def parse_config_file(path) -> ExperimentConfig:
    """key=value config; unknown keys are an error so typos fail fast."""
    values: dict[str, object] = {}
    lfr_values: dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ParseError(path, line_no, f"expected key=value, got {text!r}")
            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ParseError(path, line_no, f"unknown config key {key!r}")
            attr, kind = _CONFIG_KEYS[key]
            try:
                value = _parse_value(key, raw, kind)
            except ParameterError as exc:
                raise ParseError(path, line_no, str(exc)) from None
            if attr.startswith("lfr."):
                lfr_values[attr[4:]] = value
            else:
                values[attr] = value
    cfg = ExperimentConfig(**values)
    if lfr_values:
        cfg.lfr = replace(cfg.lfr, **lfr_values)
    return cfg


# ---------------------------------------------------------------------------
# dataset resolution


def _load_features_matrix(path) -> np.ndarray:
    from .graph import _parse_attr_file

    return _parse_attr_file(path)


def replica_network(cfg: ExperimentConfig, replica: int) -> AttributedNetwork:
    """The dataset a given replica trains on. LFR sources generate a fresh
    network per replica (seed + replica); file sources keep one dataset and
    vary only the training seed."""
    if cfg.source == "lfr":
        return generate(replace(cfg.lfr, seed=cfg.seed + replica))
    if cfg.source == "files":
        return load_network(cfg.edges_path, cfg.attrs_path, cfg.labels_path or None)
    feats = _load_features_matrix(cfg.features_path)
    adjacency = build_knn_graph(feats, cfg.knn_k, cfg.knn_metric)
    labels = None
    if cfg.labels_path:
        from .graph import _parse_label_file

        labels = _parse_label_file(cfg.labels_path, feats.shape[0])
    return AttributedNetwork(adjacency, feats, labels)


def model_configs(cfg: ExperimentConfig, net: AttributedNetwork):
    dims = cfg.resolved_ae_dims()
    if cfg.ae_final_activation == "auto":
        ae = AeConfig.for_attributes(net.attributes, dims[:-1], dims[-1])
    else:
        ae = AeConfig([net.m, *dims], cfg.ae_final_activation)
    gae = GaeConfig(net.m, cfg.gae_hidden, cfg.gae_dim or dims[-1])
    return ae, gae


def _resolve_k(cfg: ExperimentConfig, net: AttributedNetwork) -> int:
    if cfg.num_clusters:
        return cfg.num_clusters
    if net.labels is None:
        raise ParameterError("clusters not set and the dataset has no labels")
    return net.num_clusters


# ---------------------------------------------------------------------------
# running


@dataclass
class ReplicaResult:
    seed: int
    status: str = "ok"
    outputs: dict = field(default_factory=dict)     # variant -> metrics dict
    history: list = field(default_factory=list)
    final_terms: dict = field(default_factory=dict)
    final_total: float = float("nan")
    wall_time_s: float = 0.0
    state: object = None
    ae_cfg: AeConfig | None = None
    gae_cfg: GaeConfig | None = None


def run_replica(cfg: ExperimentConfig, replica: int,
                net: AttributedNetwork | None = None) -> ReplicaResult:
    """Full pipeline for one replica: init, pretrain, train, extract, score.

    Training failures are captured in the result status instead of raised, so
    sibling replicas keep running.
    """
    seed = cfg.seed + replica
    result = ReplicaResult(seed=seed)
    start = time.perf_counter()
    try:
        if net is None:
            net = replica_network(cfg, replica)
        k = _resolve_k(cfg, net)
        ae_cfg, gae_cfg = model_configs(cfg, net)
        train_cfg = cfg.train_config(seed)
        rng = np.random.default_rng(seed)
        state = init_model(ae_cfg, gae_cfg, k, rng)
        pretrain(state, net, train_cfg, rng)
        state, history = train(state, net, train_cfg)
        outputs = extract_outputs(state, net, train_cfg.kmeans_restarts, rng)
        result.history = history
        result.final_total, result.final_terms = total_loss(state, net, train_cfg.weights)
        result.state = state
        result.ae_cfg, result.gae_cfg = ae_cfg, gae_cfg
        if net.labels is not None:
            for variant, labels in outputs.items():
                result.outputs[variant] = evaluate_all(labels, net.labels,
                                                       pairwise_f1=cfg.pairwise_f1)
        else:
            result.outputs = {variant: {} for variant in outputs}
    except TrainingError as exc:
        result.status = f"failed: {exc}"
    result.wall_time_s = time.perf_counter() - start
    return result


def result_rows(cfg: ExperimentConfig, result: ReplicaResult) -> list[dict]:
    rows = []
    base = {"config_hash": cfg.config_hash(), "seed": result.seed,
            "status": result.status, "wall_time_s": f"{result.wall_time_s:.3f}",
            "max_iter": cfg.max_iter}
    if result.status == "ok":
        base.update({t: repr(result.final_terms[t]) for t in TERMS})
        base["total_loss"] = repr(result.final_total)
    for variant in VARIANTS:
        row = {**base, "variant": variant}
        metrics = result.outputs.get(variant, {})
        for name in ("acc", "nmi", "ari", "f1"):
            row[name] = repr(metrics[name]) if name in metrics else ""
        rows.append(row)
    return rows


def write_csv(path, header: list[str], rows: list[dict]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def history_rows(result: ReplicaResult) -> list[dict]:
    rows = []
    for record in result.history:
        row = {"seed": result.seed, "epoch": record["epoch"],
               "total": repr(record["total"])}
        row.update({t: repr(record[t]) for t in TERMS})
        row["acc_qg"] = repr(record["acc_qg"]) if "acc_qg" in record else ""
        row["nmi_qg"] = repr(record["nmi_qg"]) if "nmi_qg" in record else ""
        rows.append(row)
    return rows


def cmd_generate(cfg: ExperimentConfig) -> int:
    """Write cfg.replicas generated networks plus a manifest."""
    if cfg.source != "lfr":
        raise ParameterError("generate requires an lfr dataset source")
    os.makedirs(cfg.out_dir, exist_ok=True)
    names = []
    for replica in range(cfg.replicas):
        spec = replace(cfg.lfr, seed=cfg.seed + replica)
        net = generate(spec)
        name = f"replica_{replica:03d}"
        path = os.path.join(cfg.out_dir, name)
        save_network(net, path)
        with open(os.path.join(path, "spec.txt"), "w", encoding="utf-8",
                  newline="\n") as fh:
            for key, value in sorted(spec.__dict__.items()):
                fh.write(f"{key}={value}\n")
            assignment = ("disjoint" if net.num_clusters * spec.attrs_per_cluster
                          <= spec.attr_dim else "random-subsets")
            fh.write(f"attr_index_sets={assignment}\n")
        names.append(name)
    with open(os.path.join(cfg.out_dir, "manifest.txt"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.writelines(name + "\n" for name in names)
    return 0


def cmd_train(cfg: ExperimentConfig) -> int:
    """Train every replica, then write results.csv / history.csv / checkpoints."""
    cfg.validate()
    all_rows: list[dict] = []
    hist_rows: list[dict] = []
    for replica in range(cfg.replicas):
        result = run_replica(cfg, replica)
        all_rows.extend(result_rows(cfg, result))
        hist_rows.extend(history_rows(result))
        if result.status == "ok":
            ckpt = os.path.join(cfg.out_dir, f"ckpt_seed{result.seed}.bin")
            os.makedirs(cfg.out_dir, exist_ok=True)
            save_checkpoint(ckpt, result.state, result.ae_cfg, result.gae_cfg,
                            extra={"seed": result.seed,
                                   "config_hash": cfg.config_hash()})
    write_csv(os.path.join(cfg.out_dir, "results.csv"), RESULTS_HEADER, all_rows)
    write_csv(os.path.join(cfg.out_dir, "history.csv"), HISTORY_HEADER, hist_rows)
    return 0


def cmd_grid_search(cfg: ExperimentConfig, alphas, betas, gammas) -> int:
    """Train every coefficient combination; rank cells by mean Qg accuracy."""
    cfg.validate()
    for values in (alphas, betas, gammas):
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ParameterError("grid values must lie in [0, 1]")
    networks = [replica_network(cfg, r) for r in range(cfg.replicas)]
    rows: list[dict] = []
    best = None
    for alpha in alphas:
        for beta in betas:
            for gamma in gammas:
                cell = replace(cfg, alpha=alpha, beta=beta, gamma=gamma)
                accs = []
                for replica in range(cfg.replicas):
                    result = run_replica(cell, replica, net=networks[replica])
                    row = {"alpha": alpha, "beta": beta, "gamma": gamma,
                           "seed": result.seed, "status": result.status}
                    metrics = result.outputs.get("Qg", {})
                    for name in ("acc", "nmi", "ari", "f1"):
                        row[name] = repr(metrics[name]) if name in metrics else ""
                    rows.append(row)
                    if "acc" in metrics:
                        accs.append(metrics["acc"])
                if accs:
                    mean_acc = float(np.mean(accs))
                    if best is None or mean_acc > best[0]:
                        best = (mean_acc, alpha, beta, gamma)
    write_csv(os.path.join(cfg.out_dir, "grid.csv"), GRID_HEADER, rows)
    if best is not None:
        print(f"best alpha={best[1]} beta={best[2]} gamma={best[3]} "
              f"mean_qg_acc={best[0]:.4f}")
    return 0


def cmd_ablate(cfg: ExperimentConfig) -> int:
    """Full model vs. the gamma=0 variant on the same seeds.

    Three arms per seed: the full model's graph-side output, and the
    consistency-free model's graph-side and attribute-side outputs.
    """
    cfg.validate()
    rows: list[dict] = []
    gamma0 = replace(cfg, gamma=0.0)
    for replica in range(cfg.replicas):
        net = replica_network(cfg, replica)
        full = run_replica(cfg, replica, net=net)
        bare = run_replica(gamma0, replica, net=net)
        for arm, result, variant in (("full", full, "Qg"),
                                     ("gamma0_graph", bare, "Qg"),
                                     ("gamma0_attr", bare, "Qa")):
            row = {"arm": arm, "seed": result.seed, "status": result.status}
            metrics = result.outputs.get(variant, {})
            for name in ("acc", "nmi", "ari", "f1"):
                row[name] = repr(metrics[name]) if name in metrics else ""
            rows.append(row)
    write_csv(os.path.join(cfg.out_dir, "ablation.csv"), ABLATION_HEADER, rows)
    return 0


def cmd_eval(labels_path, pred_path, pairwise_f1: bool = False) -> int:
    """Print acc,nmi,ari,f1 for two label files."""
    from .graph import _parse_label_file

    def load(path):
        if not os.path.exists(path):
            raise ParameterError(f"no such file: {path}")
        with open(path, encoding="utf-8") as fh:
            count = sum(1 for line in fh if line.strip())
        return _parse_label_file(path, count)

    truth = load(labels_path)
    pred = load(pred_path)
    if len(truth) != len(pred):
        raise ParameterError(
            f"{labels_path} has {len(truth)} labels but {pred_path} has {len(pred)}")
    scores = evaluate_all(pred, truth, pairwise_f1=pairwise_f1)
    print("acc,nmi,ari,f1")
    print(",".join(f"{scores[name]:.6g}" for name in ("acc", "nmi", "ari", "f1")))
    return 0
