"""Dual-head network: shared trunk, one softmax head per task.

Pipeline: backbone -> nearest-neighbor upscale -> 3x3 conv + relu -> 1x1 conv
-> global average pool -> {class head, threat head}. Everything runs in
float64 numpy so forward/backward are exactly reproducible and gradients can
be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core_types import ValidationError

CE_EPS = 1e-12


class NumericError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# layer primitives (forward + backward pairs)

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 convolution. x: (B,H,W,C), w: (kh,kw,C,F)."""
    B, H, W, C = x.shape
    kh, kw, _, F = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    y = np.zeros((B, H, W, F))
    for i in range(kh):
        for j in range(kw):
            y += xp[:, i : i + H, j : j + W, :] @ w[i, j]
    return y + b


def conv2d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    B, H, W, C = x.shape
    kh, kw, _, F = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + H, j : j + W, :]
            dw[i, j] = np.tensordot(patch, dy, axes=([0, 1, 2], [0, 1, 2]))
            dxp[:, i : i + H, j : j + W, :] += dy @ w[i, j].T
    db = dy.sum(axis=(0, 1, 2))
    dx = dxp[:, ph : ph + H, pw : pw + W, :]
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dy):
    return dy * (x > 0.0)


def avgpool2_forward(x):
    B, H, W, C = x.shape
    return x.reshape(B, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))


def avgpool2_backward(x_shape, dy):
    B, H, W, C = x_shape
    return np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) / 4.0


def upsample_nearest_forward(x, factor: int):
    return np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)


def upsample_nearest_backward(x_shape, factor: int, dy):
    B, H, W, C = x_shape
    return dy.reshape(B, H, factor, W, factor, C).sum(axis=(2, 4))


def global_average_pool(x):
    return x.mean(axis=(1, 2))


def global_average_pool_backward(x_shape, dy):
    B, H, W, C = x_shape
    return np.broadcast_to(dy[:, None, None, :], x_shape) / (H * W)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax; works on (n,) or (B, n)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits passed to softmax")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def categorical_cross_entropy(probs: np.ndarray, target: np.ndarray) -> float:
    """-log p at the one-hot target index, probability floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape:
        raise ValidationError(f"shape mismatch: probs {probs.shape} vs target {target.shape}")
    p = float(probs[np.argmax(target)]) if probs.ndim == 1 else None
    if probs.ndim == 1:
        return -float(np.log(max(p, CE_EPS)))
    picked = probs[np.arange(probs.shape[0]), np.argmax(target, axis=1)]
    return float(-np.log(np.maximum(picked, CE_EPS)).mean())


def mean_cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    picked = probs[np.arange(probs.shape[0]), np.argmax(onehot, axis=1)]
    return float(-np.log(np.maximum(picked, CE_EPS)).mean())


# ---------------------------------------------------------------------------
# network

@dataclass(frozen=True)
class BackboneSpec:
    kind: str = "small_conv_standin"  # or "pretrained_efficientnet_b4"
    output_channels: int = 16
    frozen: bool = False

    def __post_init__(self):
        if self.kind not in ("small_conv_standin", "pretrained_efficientnet_b4"):
            raise ValidationError(f"unknown backbone kind {self.kind!r}")


@dataclass(frozen=True)
class NetworkConfig:
    n_classes: int
    n_threats: int = 3
    input_hw: tuple[int, int] = (32, 32)
    in_channels: int = 3
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    standin_channels: tuple[int, int] = (8, 16)
    upscale_factor: int = 2
    conv3x3_filters: int = 32
    conv1x1_filters: int = 64
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_threats": self.n_threats,
            "input_hw": list(self.input_hw),
            "in_channels": self.in_channels,
            "backbone": {
                "kind": self.backbone.kind,
                "output_channels": self.backbone.output_channels,
                "frozen": self.backbone.frozen,
            },
            "standin_channels": list(self.standin_channels),
            "upscale_factor": self.upscale_factor,
            "conv3x3_filters": self.conv3x3_filters,
            "conv1x1_filters": self.conv1x1_filters,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NetworkConfig":
        return cls(
            n_classes=obj["n_classes"],
            n_threats=obj["n_threats"],
            input_hw=tuple(obj["input_hw"]),
            in_channels=obj["in_channels"],
            backbone=BackboneSpec(**obj["backbone"]),
            standin_channels=tuple(obj["standin_channels"]),
            upscale_factor=obj["upscale_factor"],
            conv3x3_filters=obj["conv3x3_filters"],
            conv1x1_filters=obj["conv1x1_filters"],
            seed=obj["seed"],
        )


@dataclass
class ForwardResult:
    class_probs: np.ndarray  # (B, n_classes)
    threat_probs: np.ndarray  # (B, n_threats)
    cache: dict


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class DualHeadNetwork:
    """Trainable dual-output classifier over (B, H, W, C) image batches."""

    def __init__(self, config: NetworkConfig, params: Optional[dict] = None):
        self.config = config
        if config.backbone.kind == "small_conv_standin":
            trunk_in = config.standin_channels[1]
        else:
            trunk_in = config.backbone.output_channels
        self._trunk_in = trunk_in
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> dict:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        p: dict[str, np.ndarray] = {}
        if cfg.backbone.kind == "small_conv_standin":
            c0, (c1, c2) = cfg.in_channels, cfg.standin_channels
            p["b1_w"] = _glorot(rng, (3, 3, c0, c1), 9 * c0, 9 * c1)
            p["b1_b"] = np.zeros(c1)
            p["b2_w"] = _glorot(rng, (3, 3, c1, c2), 9 * c1, 9 * c2)
            p["b2_b"] = np.zeros(c2)
        f1, f2 = cfg.conv3x3_filters, cfg.conv1x1_filters
        p["trunk3_w"] = _glorot(rng, (3, 3, self._trunk_in, f1), 9 * self._trunk_in, 9 * f1)
        p["trunk3_b"] = np.zeros(f1)
        p["trunk1_w"] = _glorot(rng, (1, 1, f1, f2), f1, f2)
        p["trunk1_b"] = np.zeros(f2)
        p["class_w"] = _glorot(rng, (f2, cfg.n_classes), f2, cfg.n_classes)
        p["class_b"] = np.zeros(cfg.n_classes)
        p["threat_w"] = _glorot(rng, (f2, cfg.n_threats), f2, cfg.n_threats)
        p["threat_b"] = np.zeros(cfg.n_threats)
        return p

    # -- backbone -----------------------------------------------------------

    def _backbone_forward(self, batch: np.ndarray, cache: dict) -> np.ndarray:
        if self.config.backbone.kind == "small_conv_standin":
            p = self.params
            z1 = conv2d_forward(batch, p["b1_w"], p["b1_b"])
            a1 = relu_forward(z1)
            p1 = avgpool2_forward(a1)
            z2 = conv2d_forward(p1, p["b2_w"], p["b2_b"])
            a2 = relu_forward(z2)
            p2 = avgpool2_forward(a2)
            cache.update(bb_in=batch, z1=z1, a1=a1, p1=p1, z2=z2, a2=a2)
            return p2
        return self._efficientnet_features(batch)

    def _backbone_backward(self, cache: dict, dfeat: np.ndarray, grads: dict) -> None:
        if self.config.backbone.kind != "small_conv_standin":
            return  # pretrained backbone is frozen; gradient stops here
        p = self.params
        if self.config.backbone.frozen:
            grads["b1_w"] = np.zeros_like(p["b1_w"])
            grads["b1_b"] = np.zeros_like(p["b1_b"])
            grads["b2_w"] = np.zeros_like(p["b2_w"])
            grads["b2_b"] = np.zeros_like(p["b2_b"])
            return
        da2 = avgpool2_backward(cache["a2"].shape, dfeat)
        dz2 = relu_backward(cache["z2"], da2)
        dp1, grads["b2_w"], grads["b2_b"] = conv2d_backward(cache["p1"], p["b2_w"], dz2)
        da1 = avgpool2_backward(cache["a1"].shape, dp1)
        dz1 = relu_backward(cache["z1"], da1)
        _, grads["b1_w"], grads["b1_b"] = conv2d_backward(cache["bb_in"], p["b1_w"], dz1)

    def _efficientnet_features(self, batch: np.ndarray) -> np.ndarray:
        if not self.config.backbone.frozen:
            raise ValidationError("pretrained_efficientnet_b4 backbone must be frozen")
        try:
            from tensorflow import keras  # deferred: heavyweight optional dependency
        except ImportError as exc:
            raise ValidationError(
                "pretrained_efficientnet_b4 backbone requires tensorflow; "
                "install it or use the small_conv_standin backbone"
            ) from exc
        if not hasattr(self, "_keras_backbone"):
            h, w = self.config.input_hw
            self._keras_backbone = keras.applications.EfficientNetB4(
                include_top=False, weights="imagenet", input_shape=(h, w, self.config.in_channels)
            )
        feats = self._keras_backbone.predict(batch * 255.0, verbose=0)
        return np.asarray(feats, dtype=np.float64)

    # -- forward / backward -------------------------------------------------

    def forward(self, batch: np.ndarray) -> ForwardResult:
        batch = np.asarray(batch, dtype=np.float64)
        h, w = self.config.input_hw
        if batch.ndim != 4 or batch.shape[1:] != (h, w, self.config.in_channels):
            raise ValidationError(
                f"expected batch shape (B, {h}, {w}, {self.config.in_channels}), got {batch.shape}"
            )
        p = self.params
        cache: dict = {}
        feat = self._backbone_forward(batch, cache)
        up = upsample_nearest_forward(feat, self.config.upscale_factor)
        z3 = conv2d_forward(up, p["trunk3_w"], p["trunk3_b"])
        a3 = relu_forward(z3)
        z4 = conv2d_forward(a3, p["trunk1_w"], p["trunk1_b"])
        pooled = global_average_pool(z4)
        class_logits = pooled @ p["class_w"] + p["class_b"]
        threat_logits = pooled @ p["threat_w"] + p["threat_b"]
        cache.update(feat=feat, up=up, z3=z3, a3=a3, z4=z4, pooled=pooled)
        return ForwardResult(
            class_probs=softmax(class_logits),
            threat_probs=softmax(threat_logits),
            cache=cache,
        )

    def backward(
        self,
        result: ForwardResult,
        class_onehot: np.ndarray,
        threat_onehot: np.ndarray,
        weights: tuple[float, float] = (1.0, 1.0),
    ) -> dict:
        """Gradient of total_loss w.r.t. every parameter."""
        cache = result.cache
        if "pooled" not in cache:
            raise RuntimeError("backward called without a cached forward pass")
        p = self.params
        B = class_onehot.shape[0]
        w_c, w_t = weights
        dlc = w_c * (result.class_probs - class_onehot) / B
        dlt = w_t * (result.threat_probs - threat_onehot) / B
        grads: dict[str, np.ndarray] = {
            "class_w": cache["pooled"].T @ dlc,
            "class_b": dlc.sum(axis=0),
            "threat_w": cache["pooled"].T @ dlt,
            "threat_b": dlt.sum(axis=0),
        }
        dpooled = dlc @ p["class_w"].T + dlt @ p["threat_w"].T
        dz4 = global_average_pool_backward(cache["z4"].shape, dpooled)
        da3, grads["trunk1_w"], grads["trunk1_b"] = conv2d_backward(
            cache["a3"], p["trunk1_w"], dz4
        )
        dz3 = relu_backward(cache["z3"], da3)
        dup, grads["trunk3_w"], grads["trunk3_b"] = conv2d_backward(
            cache["up"], p["trunk3_w"], dz3
        )
        dfeat = upsample_nearest_backward(
            cache["feat"].shape, self.config.upscale_factor, dup
        )
        self._backbone_backward(cache, dfeat, grads)
        return grads

    def predict(self, batch: np.ndarray) -> ForwardResult:
        return self.forward(batch)


def total_loss(
    result: ForwardResult,
    class_onehot: np.ndarray,
    threat_onehot: np.ndarray,
    weights: tuple[float, float] = (1.0, 1.0),
) -> float:
    """Weighted sum of the two heads' mean categorical cross-entropies."""
    if result.class_probs.shape != class_onehot.shape:
        raise ValidationError("class target shape mismatch")
    if result.threat_probs.shape != threat_onehot.shape:
        raise ValidationError("threat target shape mismatch")
    w_c, w_t = weights
    return w_c * mean_cross_entropy(result.class_probs, class_onehot) + w_t * mean_cross_entropy(
        result.threat_probs, threat_onehot
    )


def one_hot(indices: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(indices), width))
    out[np.arange(len(indices)), indices] = 1.0
    return out


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(net: DualHeadNetwork, path: str | Path) -> None:
    """Self-describing checkpoint: parameter arrays + JSON network config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, __config__=json.dumps(net.config.to_json()), **net.params)


def load_checkpoint(path: str | Path) -> DualHeadNetwork:
    with np.load(path) as data:
        config = NetworkConfig.from_json(json.loads(str(data["__config__"])))
        params = {k: np.array(data[k]) for k in data.files if k != "__config__"}
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"checkpoint parameter {name} contains non-finite values")
    return DualHeadNetwork(config, params=params)
