"""Desk-scale segmentation network: encoder -> similarity -> random walk -> classifier."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .gridtransform import TransformSpec, apply_spatial
from .transition import log_transition, random_walk_embedded

CHECKPOINT_FORMAT = 1


@dataclass
class BackboneSpec:
    kind: str = "tiny_cnn"
    stride: int = 8
    channels: int = 64
    depth: int = 3

    def __post_init__(self):
        if self.kind not in ("tiny_cnn", "external"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.kind == "tiny_cnn" and 2 ** self.depth != self.stride:
            raise ValueError(f"tiny_cnn with depth {self.depth} has stride {2 ** self.depth}, not {self.stride}")


@dataclass
class ForwardTrace:
    f_pre: torch.Tensor  # (B, M, N, K)
    p: torch.Tensor  # (B, MN, MN)
    f_post: torch.Tensor  # (B, M, N, K)
    pred: torch.Tensor  # (B, H, W, C)
    alpha: torch.Tensor
    log_p: torch.Tensor | None = None  # elementwise log of p


def tiny_cnn(spec: BackboneSpec, in_channels: int = 3) -> nn.Sequential:
    """``depth`` stride-2 blocks of 3x3 conv, group norm and ReLU."""
    widths = [spec.channels // 2 ** (spec.depth - 1 - i) for i in range(spec.depth)]
    layers, prev = [], in_channels
    for width in widths:
        layers += [
            nn.Conv2d(prev, width, 3, stride=2, padding=1),
            nn.GroupNorm(min(8, width // 2) or 1, width),
            nn.ReLU(inplace=True),
        ]
        prev = width
    return nn.Sequential(*layers)


class SegNet(nn.Module):
    def __init__(self, num_classes: int, backbone: BackboneSpec | None = None,
                 encoder: nn.Module | None = None, random_walk: bool = True,
                 smm_scale: float | None = None, smm_dtype: torch.dtype = torch.float64):
        super().__init__()
        self.backbone = backbone or BackboneSpec()
        if encoder is None:
            if self.backbone.kind == "external":
                raise ValueError("an external backbone needs an encoder module")
            encoder = tiny_cnn(self.backbone)
        self.encoder = encoder
        self.classifier = nn.Conv2d(self.backbone.channels, num_classes, 1)
        self.alpha = nn.Parameter(torch.zeros(()))
        self.num_classes = num_classes
        self.use_random_walk = random_walk
        self.smm_scale = smm_scale
        self.smm_dtype = smm_dtype

    @property
    def stride(self) -> int:
        return self.backbone.stride

    def forward(self, x: torch.Tensor) -> ForwardTrace:
        """``x`` is ``(B, 3, H, W)`` (or a single ``(3, H, W)`` image)."""
        if x.ndim == 3:
            x = x.unsqueeze(0)
        h, w = x.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ValueError(f"input {h}x{w} is not divisible by stride {self.stride}")
        feats = self.encoder(x)  # (B, K, M, N)
        f_pre = feats.permute(0, 2, 3, 1)
        # the similarity matrix is built in double precision to keep softmax tails positive
        log_p = log_transition(f_pre.to(self.smm_dtype), self.smm_scale)
        p = log_p.exp()
        if self.use_random_walk:
            f_post = random_walk_embedded(f_pre, p.to(f_pre.dtype), self.alpha)
        else:
            f_post = f_pre
        logits = self.classifier(f_post.permute(0, 3, 1, 2))
        probs = torch.softmax(logits, dim=1)
        probs = F.interpolate(probs, size=(h, w), mode="bilinear", align_corners=False)
        return ForwardTrace(f_pre, p, f_post, probs.permute(0, 2, 3, 1), self.alpha, log_p)

    def forward_pair(self, x: torch.Tensor, phi: TransformSpec) -> tuple[ForwardTrace, ForwardTrace]:
        """Traces for ``x`` and its transform under the same parameters.

        ``phi`` is expressed at image resolution; translations must be
        multiples of the stride.
        """
        if x.ndim == 3:
            x = x.unsqueeze(0)
        phi.scaled_down(self.stride)
        tx = apply_spatial(x, phi, axes=(-2, -1))
        both = self(torch.cat([x, tx]))
        b = x.shape[0]
        split = [ForwardTrace(both.f_pre[sl], both.p[sl], both.f_post[sl], both.pred[sl], both.alpha,
                              both.log_p[sl])
                 for sl in (slice(0, b), slice(b, None))]
        return split[0], split[1]

    @torch.no_grad()
    def predict(self, x: torch.Tensor) -> torch.Tensor:
        was_training = self.training
        self.eval()
        try:
            return self(x).pred
        finally:
            self.train(was_training)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, model: SegNet, config: dict | None = None, extra: dict | None = None) -> None:
    config = config or {}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "state_dict": model.state_dict(),
        "alpha": float(model.alpha.detach()),
        "backbone": asdict(model.backbone),
        "num_classes": model.num_classes,
        "random_walk": model.use_random_walk,
        "smm_scale": model.smm_scale,
        "config": config,
        "config_hash": config_hash(config),
    }
    if extra:
        payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[SegNet, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r} in {path}")
    model = SegNet(payload["num_classes"], BackboneSpec(**payload["backbone"]),
                   random_walk=payload["random_walk"], smm_scale=payload["smm_scale"])
    model.load_state_dict(payload["state_dict"])
    return model, payload
