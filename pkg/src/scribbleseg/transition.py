"""Similarity measurement and the random walk on neural representations.

Feature maps are channel-last, ``(..., M, N, K)``. Transition matrices are
``(..., MN, MN)`` with rows indexed by the row-major flattened grid.
"""
from __future__ import annotations

import torch


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def flatten_features(f: torch.Tensor) -> torch.Tensor:
    if f.ndim < 3:
        raise ValueError(f"feature map must be (..., M, N, K), got shape {tuple(f.shape)}")
    *lead, m, n, k = f.shape
    if m < 1 or n < 1 or k < 1:
        raise ValueError(f"empty feature map of shape {tuple(f.shape)}")
    return f.reshape(*lead, m * n, k)


def gram(f, scale=None) -> torch.Tensor:
    flat = flatten_features(_as_tensor(f))
    g = flat @ flat.transpose(-1, -2)
    if scale is not None:
        g = g * scale
    return g


def compute_transition(f, scale=None) -> torch.Tensor:
    """Row-wise softmax of the Gram matrix of the flattened features.

    ``scale`` optionally multiplies the Gram matrix before the softmax
    (e.g. ``1 / sqrt(K)``); it is off by default.
    """
    f = _as_tensor(f)
    if not torch.isfinite(f).all():
        raise ValueError("feature map contains non-finite values")
    # torch.softmax subtracts the row max before exponentiating
    return torch.softmax(gram(f, scale), dim=-1)


def log_transition(f, scale=None) -> torch.Tensor:
    """Elementwise log of :func:`compute_transition`, computed stably."""
    f = _as_tensor(f)
    if not torch.isfinite(f).all():
        raise ValueError("feature map contains non-finite values")
    return torch.log_softmax(gram(f, scale), dim=-1)


def _check_pair(f: torch.Tensor, p: torch.Tensor) -> None:
    mn = f.shape[-3] * f.shape[-2]
    if p.shape[-2:] != (mn, mn):
        raise ValueError(
            f"transition matrix {tuple(p.shape)} does not match a "
            f"{f.shape[-3]}x{f.shape[-2]} grid"
        )


def random_walk_embedded(f, p, alpha) -> torch.Tensor:
    """One embedded random-walk step: ``alpha * P @ F + F``.

    Note there is no ``(1 - alpha)`` factor on the residual path.
    """
    f, p = _as_tensor(f), _as_tensor(p)
    _check_pair(f, p)
    flat = flatten_features(f)
    out = alpha * (p @ flat) + flat
    return out.reshape(f.shape)


def random_walk_classic(y, p, alpha: float) -> torch.Tensor:
    """Classic random-walk update ``alpha * P @ y + (1 - alpha) * y``.

    Reference only; the network uses :func:`random_walk_embedded`.
    """
    if not 0.0 <= float(alpha) <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    y, p = _as_tensor(y), _as_tensor(p)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    if p.shape[-1] != y.shape[-2]:
        raise ValueError(f"state of length {y.shape[-2]} does not match P {tuple(p.shape)}")
    z = alpha * (p @ y) + (1.0 - alpha) * y
    return z[:, 0] if squeeze else z
