"""Episodic training, evaluation, ablations and embedding export."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .adversarial import (ALIGN_MODES, ConditionalDomainHead,
                          domain_confusion_loss, domain_discriminative_loss,
                          grl_lambda)
from .data import (ClassSplit, ConfigError, Domain, Pool, SamplingError,
                   augment_fewshot, make_splits, sample_source_episode,
                   sample_target_episode)
from .embedding import (BackboneConfig, FeatureNet, load_checkpoint,
                        restore_module, save_checkpoint)
from .proto import (DIST_MODES, class_distribution, compute_prototypes,
                    distances, proto_loss)
from .weighting import UncertaintyWeights, combine_losses

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "lps", "lpd", "ldc", "lds",
                  "w1", "w2", "w3", "w4", "lr", "lambda")

# variant -> (use L_dc, use L_ds, adaptive weights)
VARIANTS = {
    "fsl": (False, False, False),
    "fsl+dc": (True, False, False),
    "fsl+dc+ds": (True, True, False),
    "full": (True, True, True),
}
VARIANT_LABELS = {"fsl": "FSL", "fsl+dc": "FSL+DC", "fsl+dc+ds": "FSL+DC+DS",
                  "full": "Full"}


def normalize_variant(name: str) -> str:
    key = name.strip().lower()
    if key not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from "
                          f"{list(VARIANT_LABELS.values())}")
    return key


@dataclass
class TrainConfig:
    # optimisation
    lr: float = 0.001
    alpha: float = 10.0
    beta: float = 0.75
    momentum: float = 0.9
    weight_decay: float = 0.01
    weights_lr_scale: float = 1.0
    total_steps: int = 10000
    # episodes
    n_sc: int = 20
    n_meta: int = 5
    k: int = 5
    q_source: int = 15
    q_target: int = 5
    augment_pad: int = 8
    # model
    architecture: str = "small_conv4"
    input_size: int = 84
    output_dim: int = 512
    embedding_dim: int = 512
    bottleneck_dim: int = 256
    conv_widths: Tuple[int, ...] = (64, 128, 256, 512)
    disc_hidden: int = 256
    d_feat: int = 1024
    d_random: int = 1024
    g_align: str = "pad"
    dist: str = "sq_euclidean"
    # adversarial schedule
    lambda_schedule: str = "ramp"
    lambda_value: float = 1.0
    variant: str = "full"
    pretrain_steps: int = 0
    pretrain_batch: int = 64
    checkpoint_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.conv_widths, str):
            self.conv_widths = tuple(int(t) for t in
                                     self.conv_widths.replace(",", " ").split())
        self.conv_widths = tuple(int(w) for w in self.conv_widths)
        self.variant = normalize_variant(self.variant)
        for name in ("lr", "momentum", "alpha", "weights_lr_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.beta < 0 or self.weight_decay < 0:
            raise ConfigError("beta and weight_decay must be non-negative")
        if self.n_sc <= self.n_meta:
            raise ConfigError(f"n_sc ({self.n_sc}) must exceed n_meta "
                              f"({self.n_meta})")
        if self.total_steps <= 0:
            raise ConfigError("total_steps must be positive")
        if self.dist not in DIST_MODES:
            raise ConfigError(f"unknown dist {self.dist!r}")
        if self.g_align not in ALIGN_MODES:
            raise ConfigError(f"unknown g_align {self.g_align!r}")
        if self.lambda_schedule not in ("ramp", "constant"):
            raise ConfigError(f"unknown lambda_schedule "
                              f"{self.lambda_schedule!r}")

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(self.architecture, self.input_size, 3,
                              self.output_dim, self.embedding_dim,
                              self.bottleneck_dim, self.conv_widths)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def _coerce(fld: dataclasses.Field, raw: str):
    kind = fld.type if isinstance(fld.type, str) else fld.type.__name__
    raw = raw.strip()
    if kind.startswith("Tuple"):
        return tuple(int(t) for t in raw.replace(",", " ").split())
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> Dict[str, object]:
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(fields[key], value)
        except ValueError:
            raise ConfigError(f"config line {lineno}: bad value for "
                              f"{key}: {value!r}") from None
    return values


def load_config(path: Optional[os.PathLike] = None, **overrides) -> TrainConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def lr_schedule(progress: float, cfg: TrainConfig = None, lr0: float = None,
                alpha: float = None, beta: float = None) -> float:
    """``lr0 * (1 + alpha p) ** -beta`` for progress ``p`` in [0, 1]."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    cfg = cfg or TrainConfig()
    lr0 = cfg.lr if lr0 is None else lr0
    alpha = cfg.alpha if alpha is None else alpha
    beta = cfg.beta if beta is None else beta
    return lr0 * (1.0 + alpha * progress) ** (-beta)


def lambda_at(progress: float, cfg: TrainConfig) -> float:
    if cfg.lambda_schedule == "constant":
        return cfg.lambda_value
    return cfg.lambda_value * grl_lambda(progress)


# --------------------------------------------------------------------------
# model


class DAPN(nn.Module):
    """Feature network, both domain heads and the loss weights."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        bcfg = cfg.backbone_config()
        n_classes = max(cfg.n_sc, cfg.n_meta)
        self.features = FeatureNet(bcfg)
        self.dc_head = ConditionalDomainHead(
            bcfg.embedding_dim, n_classes, cfg.d_feat, cfg.d_random,
            cfg.disc_hidden, seed=cfg.seed * 2 + 1, align=cfg.g_align)
        self.ds_head = ConditionalDomainHead(
            bcfg.output_dim, n_classes, cfg.d_feat, cfg.d_random,
            cfg.disc_hidden, seed=cfg.seed * 2 + 2, align=cfg.g_align)
        _, _, adaptive = VARIANTS[cfg.variant]
        self.weights = UncertaintyWeights(4, learnable=adaptive)

    def embed(self, images, stage: str = "gated", batch_size: int = 256):
        """Inference-mode features of a numpy/tensor image batch."""
        was_training = self.training
        self.eval()
        out = []
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
            for i in range(0, max(len(x), 1), batch_size):
                out.append(getattr(self.features(x[i:i + batch_size]), stage))
        self.train(was_training)
        return torch.cat(out)


def _stack(samples) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.image for s in samples]))


@dataclass
class StepResult:
    losses: Dict[str, Optional[torch.Tensor]]
    total: torch.Tensor
    # detached class predictions (source f, target f, source pre, target pre)
    g: Tuple[torch.Tensor, ...] = ()


def episode_losses(model: DAPN, es, ed, cfg: TrainConfig, lam: float,
                   use_dc: bool, use_ds: bool,
                   g: Optional[Sequence[torch.Tensor]] = None) -> StepResult:
    """Losses for one source and one target episode.

    Disabled domain losses are still evaluated (without gradient) for
    logging but are left out of the total.  Passing ``g`` reuses earlier
    class predictions instead of recomputing them from the current features.
    """
    groups = [es.support, es.query, ed.support, ed.query]
    sizes = [len(grp) for grp in groups]
    dtype = next(model.parameters()).dtype
    images = _stack([s for grp in groups for s in grp]).to(dtype)
    feats = model.features(images)
    ys_s, ys_q = es.local_labels(es.support), es.local_labels(es.query)
    yd_s, yd_q = ed.local_labels(ed.support), ed.local_labels(ed.query)

    fs_s, fs_q, fd_s, fd_q = torch.split(feats.gated, sizes)
    lps = proto_loss(fs_s, ys_s, fs_q, ys_q, cfg.dist)
    lpd = proto_loss(fd_s, yd_s, fd_q, yd_q, cfg.dist)

    ns = sizes[0] + sizes[1]
    f_src, f_tgt = feats.gated[:ns], feats.gated[ns:]
    p_src, p_tgt = feats.pre[:ns], feats.pre[ns:]
    if g is None:
        def episode_g(all_f, n_sup, labels, way):
            sup = all_f[:n_sup].detach()
            protos = compute_prototypes(sup, labels, way).prototypes
            return class_distribution(all_f.detach(), protos, cfg.dist)

        g = (episode_g(f_src, sizes[0], ys_s, es.way),
             episode_g(f_tgt, sizes[2], yd_s, ed.way),
             episode_g(p_src, sizes[0], ys_s, es.way),
             episode_g(p_tgt, sizes[2], yd_s, ed.way))
    g_src, g_tgt, gp_src, gp_tgt = (t.detach() for t in g)

    with torch.set_grad_enabled(use_dc and torch.is_grad_enabled()):
        ldc = domain_confusion_loss(f_src, g_src, f_tgt, g_tgt,
                                    model.dc_head, lam)
    with torch.set_grad_enabled(use_ds and torch.is_grad_enabled()):
        lds = domain_discriminative_loss(p_src, gp_src, p_tgt, gp_tgt,
                                         model.ds_head)
    losses = {"lps": lps, "lpd": lpd, "ldc": ldc, "lds": lds}
    active = [lps, lpd, ldc if use_dc else None, lds if use_ds else None]
    return StepResult(losses, combine_losses(active, model.weights.w),
                      (g_src, g_tgt, gp_src, gp_tgt))


def _param_groups(model: DAPN, cfg: TrainConfig):
    net = [p for n, p in model.named_parameters()
           if not n.startswith("weights.") and p.requires_grad]
    groups = [{"params": net, "weight_decay": cfg.weight_decay, "scale": 1.0}]
    if model.weights.w.requires_grad:
        groups.append({"params": [model.weights.w], "weight_decay": 0.0,
                       "scale": cfg.weights_lr_scale})
    return groups


def _streams(seed: int):
    """Independent generators for init, augmentation and episode sampling."""
    ss = np.random.SeedSequence(seed)
    init, aug, episodes = ss.spawn(3)
    return (int(init.generate_state(1)[0]), np.random.default_rng(aug),
            np.random.default_rng(episodes))


def pretrain_backbone(model: DAPN, source_pool: Pool, cfg: TrainConfig,
                      rng: np.random.Generator) -> None:
    """Cross-entropy warm-up over the source classes with a throwaway head."""
    classes = sorted(source_pool)
    index = {c: i for i, c in enumerate(classes)}
    samples = [s for c in classes for s in source_pool[c]]
    head = nn.Linear(cfg.output_dim, len(classes))
    params = list(model.features.backbone.parameters()) + list(head.parameters())
    opt = torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum,
                          weight_decay=cfg.weight_decay)
    model.train()
    for _ in range(cfg.pretrain_steps):
        idx = rng.choice(len(samples), size=min(cfg.pretrain_batch,
                                                len(samples)), replace=False)
        batch = [samples[i] for i in idx]
        y = torch.tensor([index[s.class_id] for s in batch])
        logits = head(model.features.extract_features(_stack(batch)))
        loss = F.cross_entropy(logits, y)
        opt.zero_grad()
        loss.backward()
        opt.step()


@dataclass
class TrainResult:
    model: DAPN
    metrics: List[Dict[str, float]]
    checkpoints: List[Path] = field(default_factory=list)


def _fmt(x: float) -> str:
    return repr(float(x))


def train(cfg: TrainConfig, dataset_root: os.PathLike = None,
          out_dir: os.PathLike = None, split: ClassSplit = None,
          progress_every: int = 0) -> TrainResult:
    """Train from scratch.  Writes ``metrics.csv`` and checkpoints to
    ``out_dir`` when given."""
    if split is None:
        split = make_splits(dataset_root, k=cfg.k, image_size=cfg.input_size)
    init_seed, aug_rng, ep_rng = _streams(cfg.seed)
    torch.manual_seed(init_seed)
    model = DAPN(cfg)
    augmented = augment_fewshot(split.fewshot_pool, cfg.k, cfg.augment_pad,
                                aug_rng)
    if cfg.pretrain_steps:
        pretrain_backbone(model, split.source_pool, cfg, ep_rng)

    use_dc, use_ds, _ = VARIANTS[cfg.variant]
    groups = _param_groups(model, cfg)
    opt = torch.optim.SGD(groups, lr=cfg.lr, momentum=cfg.momentum)
    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(dump_config(cfg))
        fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
    result = TrainResult(model, [])
    try:
        model.train()
        for step in range(cfg.total_steps):
            p = step / cfg.total_steps
            lr = lr_schedule(p, cfg)
            lam = lambda_at(p, cfg)
            for g in opt.param_groups:
                g["lr"] = lr * g["scale"]
            es = sample_source_episode(split.source_pool, cfg.n_sc, cfg.k,
                                       cfg.q_source, ep_rng, cfg.n_meta)
            ed = sample_target_episode(augmented, cfg.n_meta, cfg.k,
                                       cfg.q_target, ep_rng)
            try:
                res = episode_losses(model, es, ed, cfg, lam, use_dc, use_ds)
            except FloatingPointError as exc:
                raise FloatingPointError(
                    f"training diverged at step {step}: {exc}") from exc
            opt.zero_grad()
            res.total.backward()
            opt.step()
            w = model.weights.w.detach()
            row = {"step": step,
                   **{k: float(v.detach()) for k, v in res.losses.items()},
                   **{f"w{j + 1}": float(w[j]) for j in range(4)},
                   "lr": lr, "lambda": lam}
            result.metrics.append(row)
            if writer is not None:
                writer.writerow([step] + [_fmt(row[k])
                                          for k in METRICS_HEADER[1:]])
            if progress_every and step % progress_every == 0:
                log.info("step %d lps=%.4f lpd=%.4f ldc=%.4f lds=%.4f", step,
                         row["lps"], row["lpd"], row["ldc"], row["lds"])
            is_last = step == cfg.total_steps - 1
            if out is not None and (is_last or (
                    cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0)):
                path = out / ("model.pt" if is_last
                              else f"checkpoint_{step + 1:06d}.pt")
                save_model(model, cfg, path)
                result.checkpoints.append(path)
    finally:
        if fh is not None:
            fh.close()
    model.eval()
    return result


def save_model(model: DAPN, cfg: TrainConfig, path: os.PathLike) -> None:
    save_checkpoint(path, {"features": model.features,
                           "dc_head": model.dc_head,
                           "ds_head": model.ds_head,
                           "weights": model.weights},
                    cfg.backbone_config(),
                    {"train_config": dump_config(cfg)})


def load_model(path: os.PathLike) -> Tuple[DAPN, TrainConfig]:
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    cfg = TrainConfig(**parse_config_text(ckpt["extra"]["train_config"]))
    model = DAPN(cfg)
    for name in ("features", "dc_head", "ds_head", "weights"):
        restore_module(getattr(model, name), ckpt["state"], name)
    model.eval()
    return model, cfg


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    mean_top1: float
    ci95: float
    n_episodes: int
    accuracies: np.ndarray
    way: int = 5
    shot: int = 1

    def to_json(self) -> str:
        return json.dumps({"top1": self.mean_top1, "ci95": self.ci95,
                           "episodes": self.n_episodes, "way": self.way,
                           "shot": self.shot})


def confidence_interval(accuracies: np.ndarray) -> float:
    """Normal-approximation 95% half-width, ``1.96 std / sqrt(n)`` (ddof 0);
    zero for a single episode."""
    acc = np.asarray(accuracies, dtype=np.float64)
    return float(1.96 * acc.std() / math.sqrt(len(acc)))


def evaluate_features(features, labels, n_episodes: int = 2000, way: int = 5,
                      shot: int = 1, queries: int = 15, seed: int = 0,
                      dist: str = "sq_euclidean") -> EvalReport:
    """Episodic nearest-prototype accuracy over precomputed embeddings."""
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    feats = torch.as_tensor(np.asarray(features), dtype=torch.float64)
    labels = np.asarray(labels)
    by_class = {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}
    pool = {c: list(idx) for c, idx in by_class.items()}
    rng = np.random.default_rng(seed)
    acc = np.empty(n_episodes)
    s_lab = np.repeat(np.arange(way), shot)
    q_lab = np.repeat(np.arange(way), queries)
    for e in range(n_episodes):
        s_idx, q_idx = _sample_indices(pool, way, shot, queries, rng)
        protos = compute_prototypes(feats[s_idx], s_lab, way).prototypes
        d = distances(feats[q_idx], protos, dist)
        pred = torch.argmin(d, dim=1).numpy()
        acc[e] = np.mean(pred == q_lab)
    return EvalReport(float(acc.mean()), confidence_interval(acc), n_episodes,
                      acc, way, shot)


def _sample_indices(pool: Dict[int, list], way, shot, queries, rng):
    classes = sorted(pool)
    if len(classes) < way:
        raise SamplingError(f"pool has {len(classes)} classes, need {way}")
    chosen = rng.choice(len(classes), size=way, replace=False)
    s_idx, q_idx = [], []
    for ci in chosen:
        cls = classes[int(ci)]
        members = pool[cls]
        if len(members) < shot + queries:
            raise SamplingError(
                f"class {cls} has {len(members)} samples, need "
                f"{shot + queries} (shot={shot}, queries={queries})")
        perm = rng.permutation(len(members))
        s_idx.extend(members[i] for i in perm[:shot])
        q_idx.extend(members[i] for i in perm[shot:shot + queries])
    return np.array(s_idx), np.array(q_idx)


def pool_arrays(pool: Pool) -> Tuple[np.ndarray, np.ndarray]:
    samples = [s for c in sorted(pool) for s in pool[c]]
    return (np.stack([s.image for s in samples]),
            np.array([s.class_id for s in samples]))


def evaluate(model: DAPN, test_pool: Pool, n_episodes: int = 2000,
             way: int = 5, shot: int = 1, queries: int = 15, seed: int = 0,
             dist: str = "sq_euclidean") -> EvalReport:
    """Evaluate frozen ``model`` on episodes drawn from ``test_pool``.

    Every image is embedded once; episodes then index into the embeddings,
    which matches per-episode embedding because inference is deterministic.
    """
    images, labels = pool_arrays(test_pool)
    feats = model.embed(images, "gated")
    return evaluate_features(feats, labels, n_episodes, way, shot, queries,
                             seed, dist)


# --------------------------------------------------------------------------
# ablation


@dataclass
class AblationRow:
    variant: str
    mean_top1: float
    ci95: float
    per_seed: List[float]
    reports: List[EvalReport] = field(repr=False, default_factory=list)
    models: List[DAPN] = field(repr=False, default_factory=list)


def run_ablation(cfg: TrainConfig, dataset_root: os.PathLike = None,
                 variants: Sequence[str] = ("fsl", "fsl+dc", "fsl+dc+ds",
                                            "full"),
                 seeds: Sequence[int] = (0,), out_dir: os.PathLike = None,
                 n_episodes: int = 2000, way: int = None, shot: int = None,
                 queries: int = 15, eval_seed: int = 12345,
                 split: ClassSplit = None,
                 keep_models: bool = False) -> List[AblationRow]:
    """Train and evaluate every variant on the same data and seeds."""
    keys = [normalize_variant(v) for v in variants]
    if split is None:
        split = make_splits(dataset_root, k=cfg.k, image_size=cfg.input_size)
    way = way or cfg.n_meta
    shot = shot or cfg.k
    rows = []
    for key in keys:
        reports, models = [], []
        for seed in seeds:
            run_cfg = cfg.replace(variant=key, seed=seed)
            res = train(run_cfg, split=split)
            if keep_models:
                models.append(res.model)
            reports.append(evaluate(res.model, split.test_pool, n_episodes,
                                    way, shot, queries, eval_seed, cfg.dist))
            log.info("%s seed %d: top1=%.4f", VARIANT_LABELS[key], seed,
                     reports[-1].mean_top1)
        pooled = np.concatenate([r.accuracies for r in reports])
        rows.append(AblationRow(VARIANT_LABELS[key],
                                float(np.mean([r.mean_top1 for r in reports])),
                                confidence_interval(pooled),
                                [r.mean_top1 for r in reports], reports,
                                models))
    if out_dir is not None:
        write_ablation(rows, out_dir)
    return rows


def write_ablation(rows: Sequence[AblationRow], out_dir: os.PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "top1", "ci95", "per_seed"])
        for r in rows:
            w.writerow([r.variant, _fmt(r.mean_top1), _fmt(r.ci95),
                        " ".join(_fmt(a) for a in r.per_seed)])
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar([r.variant for r in rows], [100 * r.mean_top1 for r in rows],
           yerr=[100 * r.ci95 for r in rows], capsize=4, color="#6a8cbb")
    ax.set_ylabel("top-1 accuracy (%)")
    fig.tight_layout()
    fig.savefig(out / "ablation.png", dpi=120)
    plt.close(fig)


# --------------------------------------------------------------------------
# embedding export and domain probe


def domain_features(model: DAPN, split: ClassSplit, stage: str,
                    max_per_domain: Optional[int] = None, seed: int = 0):
    """Features of source-pool and target-pool images with domain labels."""
    rng = np.random.default_rng(seed)
    target_pool = {**split.fewshot_pool, **split.test_pool}
    arrays = []
    for domain, pool in ((Domain.SOURCE, split.source_pool),
                         (Domain.TARGET, target_pool)):
        images, _ = pool_arrays(pool)
        if max_per_domain is not None and len(images) > max_per_domain:
            images = images[np.sort(rng.choice(len(images), max_per_domain,
                                               replace=False))]
        arrays.append((domain, images))
    feats, doms = [], []
    for domain, images in arrays:
        feats.append(model.embed(images, stage).numpy())
        doms.append(np.full(len(images), int(domain)))
    return np.concatenate(feats), np.concatenate(doms)


def export_embeddings(model: DAPN, split: ClassSplit, path: os.PathLike,
                      max_per_domain: Optional[int] = None,
                      seed: int = 0) -> int:
    """Write ``domain<TAB>stage<TAB>v0..`` rows for the pre- and post-embedding
    features.  Returns the number of rows."""
    stages = [(label, *domain_features(model, split, stage, max_per_domain,
                                       seed))
              for stage, label in (("pre", "pre"), ("gated", "post"))]
    # pre and post widths differ when output_dim != embedding_dim; the
    # narrower stage leaves its trailing columns empty
    dim = max(feats.shape[1] for _, feats, _ in stages)
    n = 0
    with open(path, "w") as fh:
        fh.write("domain\tstage\t" + "\t".join(f"v{i}" for i in range(dim))
                 + "\n")
        for label, feats, doms in stages:
            pad = "\t" * (dim - feats.shape[1])
            for vec, dom in zip(feats, doms):
                fh.write(f"{Domain(int(dom)).dirname}\t{label}\t"
                         + "\t".join(f"{v:.6g}" for v in vec) + pad + "\n")
                n += 1
    return n


def domain_probe_accuracy(features: np.ndarray, domains: np.ndarray,
                          seed: int = 0, test_fraction: float = 0.3) -> float:
    """Held-out accuracy of a logistic-regression domain classifier."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import train_test_split
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    x_tr, x_te, y_tr, y_te = train_test_split(
        features, domains, test_size=test_fraction, random_state=seed,
        stratify=domains)
    probe = make_pipeline(StandardScaler(),
                          LogisticRegression(max_iter=2000))
    probe.fit(x_tr, y_tr)
    return float(probe.score(x_te, y_te))
