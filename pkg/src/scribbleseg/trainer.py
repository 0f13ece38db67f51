"""Two-stage training, mIoU evaluation and the analysis protocols."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import scribbledata as sd
from .boundaries import cached_pseudo_boundaries, reduce_mask
from .config import ConfigError, TrainConfig
from .gridtransform import (TransformSpec, apply_spatial, apply_transform_to_transition,
                            build_computing_matrices, sample_transform)
from .losses import (FULL, WARMUP, combine_terms, entropy_full, entropy_soft, feature_ss,
                     partial_cross_entropy, pixel_entropy, soft_eigenspace_ss)
from .segnet import SegNet, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "checkpoint.pt"
STATE_FILE = "last.pt"


class TrainingDiverged(RuntimeError):
    def __init__(self, snapshot: dict):
        super().__init__(f"non-finite loss at epoch {snapshot['epoch']}: {snapshot['terms']}")
        self.snapshot = snapshot


# ---------------------------------------------------------------- data

@dataclass
class SplitData:
    ids: list[str]
    images: np.ndarray  # (N, H, W, 3) float32
    labels: np.ndarray  # (N, H, W) uint8
    scribbles: np.ndarray  # (N, H, W) uint8
    boundaries: np.ndarray | None = None  # (N, H, W) bool

    def __len__(self):
        return len(self.ids)


def load_split(corpus, split: str) -> SplitData:
    manifest = sd.read_manifest(corpus)
    if split not in manifest["splits"]:
        raise ValueError(f"corpus {corpus} has no split {split!r}")
    ids = manifest["splits"][split]
    if not ids:
        raise ValueError(f"split {split!r} of {corpus} is empty")
    images = np.stack([sd.load_image(corpus, i) for i in ids]).astype(np.float32)
    labels = np.stack([sd.load_labels(corpus, i) for i in ids])
    scribbles = np.stack([sd.load_scribbles(corpus, i).labels for i in ids])
    return SplitData(ids, images, labels, scribbles)


def attach_boundaries(data: SplitData, cfg: TrainConfig, cache_dir=None) -> SplitData:
    b = cfg.boundary
    params = dict(n_segments=b.n_segments, compactness=b.compactness, max_iters=b.max_iters, dilation=b.dilation)
    data.boundaries = np.stack([
        cached_pseudo_boundaries(img.astype(np.float64), cache_dir, **params) for img in data.images
    ])
    return data


def _gaussian_kernel(sigma: float) -> torch.Tensor:
    radius = max(1, int(math.ceil(2 * sigma)))
    x = torch.arange(-radius, radius + 1, dtype=torch.float32)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def augment_batch(images, scribbles, boundaries, cfg: TrainConfig, rng: np.random.Generator):
    """Random scale, rotation, flip and blur, then a ``crop_size`` crop.

    Images are resampled bilinearly, scribbles and masks by nearest
    neighbour. Pixels brought in from outside the source become ignore in
    the scribbles and boundary in the mask.
    """
    a = cfg.augment
    b = images.shape[0]
    crop = cfg.crop_size
    if not a.enabled and images.shape[-2:] == (crop, crop):
        return images.clone(), scribbles.clone(), boundaries.clone()
    thetas = []
    for _ in range(b):
        s = rng.uniform(*a.scale) if a.enabled else 1.0
        ang = np.deg2rad(rng.uniform(-a.rotation, a.rotation)) if a.enabled else 0.0
        flip = -1.0 if (a.enabled and a.flip and rng.random() < 0.5) else 1.0
        slack = max(0.0, 1.0 - 1.0 / s)
        tx, ty = rng.uniform(-slack, slack, size=2) if slack else (0.0, 0.0)
        c, si = math.cos(ang) / s, math.sin(ang) / s
        thetas.append([[c * flip, -si, tx], [si * flip, c, ty]])
    theta = torch.tensor(thetas, dtype=torch.float32)
    grid = F.affine_grid(theta, (b, 1, crop, crop), align_corners=False)

    img = F.grid_sample(images, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    inside = F.grid_sample(torch.ones_like(images[:, :1]), grid, mode="nearest", align_corners=False) > 0.5
    scr = F.grid_sample(scribbles[:, None].float(), grid, mode="nearest", align_corners=False)[:, 0].long()
    scr = torch.where(inside[:, 0], scr, torch.full_like(scr, sd.IGNORE))
    bnd = F.grid_sample(boundaries[:, None].float(), grid, mode="nearest", align_corners=False)[:, 0] > 0.5
    bnd = bnd | ~inside[:, 0]

    if a.enabled and a.blur_prob > 0:
        for i in range(b):
            if rng.random() < a.blur_prob:
                k = _gaussian_kernel(rng.uniform(*a.blur_sigma))
                r = len(k) // 2
                x = F.pad(img[i:i + 1], (r, r, r, r), mode="replicate")
                x = F.conv2d(x, k.view(1, 1, 1, -1).expand(3, 1, 1, -1).contiguous(), groups=3)
                x = F.conv2d(x, k.view(1, 1, -1, 1).expand(3, 1, -1, 1).contiguous(), groups=3)
                img[i] = x[0]
    return img, scr, bnd


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    per_class_iou: list
    miou: float
    n_images: int
    present: list = field(default_factory=list)
    confusion: list = field(default_factory=list)

    def to_dict(self) -> dict:
        clean = [None if (v is None or np.isnan(v)) else float(v) for v in self.per_class_iou]
        return {"per_class_iou": clean, "miou": None if np.isnan(self.miou) else float(self.miou),
                "n_images": self.n_images, "present": self.present, "confusion": self.confusion}

    def to_csv(self) -> str:
        rows = ["class,iou,present"]
        for c, (v, p) in enumerate(zip(self.per_class_iou, self.present)):
            rows.append(f"{c},{'' if np.isnan(v) else f'{v:.6f}'},{int(p)}")
        rows.append(f"mean,{'' if np.isnan(self.miou) else f'{self.miou:.6f}'},")
        return "\n".join(rows) + "\n"


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """Rows are ground truth, columns prediction; ignore-labelled pixels are skipped."""
    valid = gt != sd.IGNORE
    if np.any(gt[valid] >= num_classes):
        raise ValueError("ground-truth class outside the model's range")
    idx = num_classes * gt[valid].astype(np.int64) + pred[valid].astype(np.int64)
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def report_from_confusion(conf: np.ndarray, n_images: int) -> EvalReport:
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(0) + conf.sum(1) - tp
    present = union > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(present, tp / np.where(present, union, 1), np.nan)
    miou = float(iou[present].mean()) if present.any() else float("nan")
    return EvalReport(iou.tolist(), miou, n_images, present.tolist(), conf.tolist())


def _to_input(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).float()


def predict_labels(model: SegNet, images: np.ndarray, batch_size: int = 50) -> np.ndarray:
    out = []
    for i in range(0, len(images), batch_size):
        probs = model.predict(_to_input(images[i:i + batch_size]))
        out.append(torch.argmax(probs, dim=-1).numpy())
    return np.concatenate(out)


def evaluate_model(model: SegNet, data: SplitData) -> EvalReport:
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty split")
    pred = predict_labels(model, data.images)
    conf = confusion_matrix(pred, data.labels, model.num_classes)
    return report_from_confusion(conf, len(data))


def evaluate(checkpoint, corpus, split: str = "val") -> EvalReport:
    model, payload = load_checkpoint(checkpoint)
    manifest = sd.read_manifest(corpus)
    if manifest["num_classes"] != model.num_classes:
        raise ConfigError(f"checkpoint has {model.num_classes} classes, corpus has {manifest['num_classes']}")
    return evaluate_model(model, load_split(corpus, split))


# ---------------------------------------------------------------- analysis

def entropy_map(model: SegNet, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel prediction entropy and its min-max scaled uint8 rendering."""
    probs = model.predict(_to_input(image[None]))[0]
    ent = pixel_entropy(probs.double()).numpy()
    lo, hi = ent.min(), ent.max()
    scaled = np.zeros_like(ent) if hi - lo <= 1e-12 else (ent - lo) / (hi - lo)
    return ent, np.round(scaled * 255).astype(np.uint8)


def relative_variation(moved, target) -> float:
    return float(torch.linalg.norm((moved - target).reshape(-1)) / torch.linalg.norm(target.reshape(-1)))


@torch.no_grad()
def variation_report(model: SegNet, data: SplitData, phi: TransformSpec, batch_size: int = 50) -> dict:
    """Mean relative variation (percent) of ``f_pre``, ``f_post`` and ``P`` under ``phi``.

    ``phi`` is given at image resolution and must be stride aligned.
    """
    model.eval()
    grid_phi = phi.scaled_down(model.stride)
    sums = {"f_pre": 0.0, "f_post": 0.0, "p": 0.0}
    cm = None
    for i in range(0, len(data), batch_size):
        x = _to_input(data.images[i:i + batch_size])
        tr_x, tr_tx = model.forward_pair(x, phi)
        if cm is None:
            m, n = tr_x.f_pre.shape[1:3]
            cm = build_computing_matrices(grid_phi, m, n)
        moved_p = apply_transform_to_transition(tr_x.p, cm)
        for j in range(x.shape[0]):
            for key, a, b in (("f_pre", tr_x.f_pre[j], tr_tx.f_pre[j]), ("f_post", tr_x.f_post[j], tr_tx.f_post[j])):
                sums[key] += relative_variation(apply_spatial(a, grid_phi), b)
            sums["p"] += relative_variation(moved_p[j], tr_tx.p[j])
    return {k: 100.0 * v / len(data) for k, v in sums.items()}


# ---------------------------------------------------------------- training

def build_model(cfg: TrainConfig, num_classes: int) -> SegNet:
    torch.manual_seed(cfg.seed)
    return SegNet(num_classes, cfg.backbone, random_walk=cfg.use_random_walk, smm_scale=cfg.smm_scale)


def warmup_epochs(cfg: TrainConfig) -> int:
    return int(math.ceil(cfg.weights.warmup_fraction * cfg.epochs))


def stage_of(cfg: TrainConfig, epoch: int) -> str:
    return WARMUP if epoch < warmup_epochs(cfg) else FULL


def _ss_term(cfg: TrainConfig, model: SegNet, x, phi_img: TransformSpec):
    tr_x, tr_tx = model.forward_pair(x, phi_img)
    phi = phi_img.scaled_down(model.stride)
    if cfg.ss_location == "eigenspace":
        m, n = tr_x.f_pre.shape[1:3]
        ss = soft_eigenspace_ss(tr_x.p, tr_tx.p, build_computing_matrices(phi, m, n), cfg.weights.gamma,
                                tr_x.log_p, tr_tx.log_p)
    elif cfg.ss_location == "f_pre":
        ss = feature_ss(tr_x.f_pre, tr_tx.f_pre, phi)
    else:
        ss = feature_ss(tr_x.f_post, tr_tx.f_post, phi)
    return tr_x, ss


def _batch_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def _read_metrics(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def train(cfg: TrainConfig, out_dir, train_data: SplitData | None = None, val_data: SplitData | None = None,
          resume: bool = False, stop_after: int | None = None) -> tuple[SegNet, list[dict]]:
    """Run the two-stage schedule and write ``checkpoint.pt`` and ``metrics.jsonl``.

    Warmup epochs optimise partial cross-entropy plus the weighted soft
    entropy; the remaining epochs add the weighted self-supervision term.
    Randomness is derived from ``(seed, epoch, batch)`` so a resumed run
    reproduces an uninterrupted one. ``stop_after`` ends the run early after
    that many epochs (used to simulate an interrupted run).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    cache = out / "cache" / "boundaries"
    if train_data is None:
        train_data = load_split(cfg.corpus, cfg.train_split)
    if val_data is None:
        val_data = load_split(cfg.corpus, cfg.val_split)
    if train_data.boundaries is None:
        attach_boundaries(train_data, cfg, cache)
    num_classes = sd.read_manifest(cfg.corpus)["num_classes"] if cfg.corpus else int(train_data.labels.max()) + 1

    model = build_model(cfg, num_classes)
    opt = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    n = len(train_data)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    metrics_path = out / METRICS_FILE
    start_epoch = 0
    if resume and (out / STATE_FILE).exists():
        state = torch.load(out / STATE_FILE, map_location="cpu", weights_only=False)
        model.load_state_dict(state["state_dict"])
        opt.load_state_dict(state["optimizer"])
        start_epoch = state["epoch"] + 1
        kept = [r for r in _read_metrics(metrics_path) if r["epoch"] < start_epoch]
        metrics_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in kept))
    else:
        metrics_path.write_text("")

    images = torch.from_numpy(train_data.images.transpose(0, 3, 1, 2).copy())
    scribbles = torch.from_numpy(train_data.scribbles.astype(np.int64))
    boundaries = torch.from_numpy(train_data.boundaries)
    h, w = train_data.images.shape[1:3]

    for epoch in range(start_epoch, cfg.epochs):
        if stop_after is not None and epoch >= start_epoch + stop_after:
            break
        t0 = time.perf_counter()
        stage = stage_of(cfg, epoch)
        use_ss = stage == FULL and cfg.ss_active
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sums = {"loss": 0.0, "partial_ce": 0.0, "soft_entropy": 0.0}
        if use_ss:
            sums["self_supervision"] = 0.0
        model.train()
        for b in range(steps_per_epoch):
            step = epoch * steps_per_epoch + b
            for group in opt.param_groups:
                group["lr"] = cfg.lr * (1 - step / total_steps) ** cfg.lr_power
            idx = np.sort(order[b * cfg.batch_size:(b + 1) * cfg.batch_size])
            rng = np.random.default_rng([cfg.seed, epoch, b])
            x, scr, bnd = augment_batch(images[idx], scribbles[idx], boundaries[idx], cfg, rng)
            if use_ss:
                m, nn_ = cfg.crop_size // model.stride, cfg.crop_size // model.stride
                phi = sample_transform(rng, cfg.transform_mode, m, nn_).scaled_up(model.stride)
                trace_x, ss = _ss_term(cfg, model, x, phi)
            else:
                trace_x, ss = model(x), None
            probs = trace_x.pred
            pce = partial_cross_entropy(probs, scr)
            if cfg.use_entropy:
                mask = bnd if cfg.use_boundary else torch.zeros_like(bnd)
                if mask.shape[-2:] != probs.shape[1:3]:
                    mask = torch.from_numpy(np.stack([
                        reduce_mask(mk, probs.shape[1], probs.shape[2], cfg.boundary.reduce_threshold)
                        for mk in mask.numpy()]))
                ent = entropy_soft(probs, mask)
            else:
                ent = torch.zeros((), dtype=probs.dtype)
            loss = combine_terms(pce, ent, ss, cfg.weights, stage)
            terms = {"partial_ce": float(pce.detach()), "soft_entropy": float(ent.detach())}
            if ss is not None:
                terms["self_supervision"] = float(ss.detach())
            if not math.isfinite(float(loss.detach())):
                snapshot = {"epoch": epoch, "batch": b, "terms": terms,
                            "inputs_hash": _batch_hash(idx, x.numpy(), scr.numpy())}
                (out / "diverged.json").write_text(json.dumps(snapshot, indent=2))
                raise TrainingDiverged(snapshot)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["loss"] += float(loss.detach()) * len(idx)
            for k, v in terms.items():
                sums[k] += v * len(idx)

        record = {"epoch": epoch, "stage": stage, "alpha": float(model.alpha.detach())}
        record.update({k: v / n for k, v in sums.items()})
        record["val_miou"] = evaluate_model(model, val_data).miou
        record["wall_time"] = time.perf_counter() - t0
        with metrics_path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
        torch.save({"epoch": epoch, "state_dict": model.state_dict(), "optimizer": opt.state_dict()},
                   out / STATE_FILE)
        log.info("epoch %d [%s] loss %.4f val mIoU %.4f", epoch, stage, record["loss"], record["val_miou"])

    save_checkpoint(out / CHECKPOINT_FILE, model, cfg.to_dict())
    return model, _read_metrics(metrics_path)
