"""Small residual binary classifier without batch statistics.

Convolutions are weight-standardized at forward time and followed by group
normalization, so single-sample and large-batch evaluation produce the same
numbers. Model-side noise (head dropout, stochastic depth on residual
branches) is active only in ``train_noised`` mode. The backward pass is
written by hand against the same kernels, which keeps the whole package free
of autograd frameworks and makes training runs bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError
from .params import ROLE_FEATURE, ROLE_HEAD, ParameterSet

MODE_TRAIN = "train_noised"
MODE_EVAL = "eval_clean"


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, int, int] = (3, 64, 64)
    stage_widths: tuple[int, ...] = (16, 32, 48, 64)
    blocks_per_stage: tuple[int, ...] = (1, 1, 1, 1)
    gn_groups: int = 8
    ws_epsilon: float = 1e-5
    gn_epsilon: float = 1e-5
    dropout_rate: float = 0.2
    stochastic_depth_rate: float = 0.2

    def __post_init__(self):
        if len(self.input_shape) != 3:
            raise ConfigError(f"input_shape must be (c, h, w), got {self.input_shape}")
        if len(self.stage_widths) != len(self.blocks_per_stage):
            raise ConfigError("stage_widths and blocks_per_stage lengths differ")
        if not self.stage_widths:
            raise ConfigError("need at least one stage")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError("every stage needs at least one block")
        for w in self.stage_widths:
            if w % self.gn_groups != 0:
                raise ConfigError(
                    f"gn_groups={self.gn_groups} does not divide stage width {w}"
                )
        for rate in (self.dropout_rate, self.stochastic_depth_rate):
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"noise rate {rate} outside [0, 1)")
        down = 2 ** (len(self.stage_widths) + 1)
        _, h, w = self.input_shape
        if h % down or w % down:
            raise ConfigError(
                f"input {h}x{w} not divisible by total downsampling factor {down}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["stage_widths"] = list(self.stage_widths)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for key in ("input_shape", "stage_widths", "blocks_per_stage"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def spec_digest(spec: ModelSpec) -> str:
    blob = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _block_layout(spec: ModelSpec):
    """Yield (stage, block, c_in, c_out, stride, has_skip) in forward order."""
    c_in = spec.stage_widths[0]
    for si, (width, blocks) in enumerate(zip(spec.stage_widths, spec.blocks_per_stage)):
        for bi in range(blocks):
            stride = 2 if bi == 0 else 1
            has_skip = stride != 1 or c_in != width
            yield si, bi, c_in, width, stride, has_skip
            c_in = width


def param_template(spec: ModelSpec) -> list[tuple[str, tuple[int, ...], str]]:
    """Names, shapes, and roles of every parameter, in construction order."""
    stem = spec.stage_widths[0]
    c_img = spec.input_shape[0]
    out: list[tuple[str, tuple[int, ...], str]] = [
        ("stem.conv", (stem, c_img, 3, 3), ROLE_FEATURE),
        ("stem.gn.scale", (stem,), ROLE_FEATURE),
        ("stem.gn.shift", (stem,), ROLE_FEATURE),
    ]
    for si, bi, c_in, c_out, _, has_skip in _block_layout(spec):
        base = f"stage{si}.block{bi}"
        out.append((f"{base}.conv1", (c_out, c_in, 3, 3), ROLE_FEATURE))
        out.append((f"{base}.gn1.scale", (c_out,), ROLE_FEATURE))
        out.append((f"{base}.gn1.shift", (c_out,), ROLE_FEATURE))
        out.append((f"{base}.conv2", (c_out, c_out, 3, 3), ROLE_FEATURE))
        out.append((f"{base}.gn2.scale", (c_out,), ROLE_FEATURE))
        out.append((f"{base}.gn2.shift", (c_out,), ROLE_FEATURE))
        if has_skip:
            out.append((f"{base}.skip.conv", (c_out, c_in, 1, 1), ROLE_FEATURE))
            out.append((f"{base}.skip.gn.scale", (c_out,), ROLE_FEATURE))
            out.append((f"{base}.skip.gn.shift", (c_out,), ROLE_FEATURE))
    width = spec.stage_widths[-1]
    out.append(("head.weight", (1, width), ROLE_HEAD))
    out.append(("head.bias", (1,), ROLE_HEAD))
    return out


def partition_params(names) -> dict[str, str]:
    """Assign roles by name: the final classifier is the head, the rest features."""
    return {
        name: ROLE_HEAD if name.startswith("head.") else ROLE_FEATURE
        for name in names
    }


def init_params(spec: ModelSpec, seed_seq) -> ParameterSet:
    rng = np.random.default_rng(seed_seq)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, _role in param_template(spec):
        if name.endswith(".scale"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith("shift") or name == "head.bias":
            tensors[name] = np.zeros(shape, dtype=np.float32)
        elif name == "head.weight":
            std = 1.0 / np.sqrt(shape[1])
            tensors[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            tensors[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
    return ParameterSet(tensors, partition_params(tensors))


def weight_standardize(kernel: np.ndarray, epsilon: float) -> np.ndarray:
    """Zero-mean, unit-std reparameterization per output channel."""
    w_hat, _ = _standardize(np.asarray(kernel), epsilon)
    return w_hat


def _standardize(w: np.ndarray, epsilon: float):
    axes = tuple(range(1, w.ndim))
    mu = w.mean(axis=axes, keepdims=True)
    centered = w - mu
    sigma = np.sqrt(np.mean(centered * centered, axis=axes, keepdims=True))
    denom = sigma + np.asarray(epsilon, dtype=w.dtype)
    w_hat = centered / denom
    return w_hat, (w_hat, sigma, denom)


def _standardize_backward(g: np.ndarray, cache):
    w_hat, sigma, denom = cache
    axes = tuple(range(1, g.ndim))
    n = int(np.prod(g.shape[1:]))
    gbar = g.mean(axis=axes, keepdims=True)
    m2 = np.mean(g * w_hat, axis=axes, keepdims=True)
    sigma_safe = np.maximum(sigma, np.finfo(g.dtype).tiny)
    return (g - gbar) / denom - w_hat * (m2 / sigma_safe)


def group_normalize(activations, groups, epsilon, scale, shift):
    """Per-sample, per-group normalization with a per-channel affine."""
    y, _ = _group_norm(np.asarray(activations), groups, epsilon, scale, shift)
    return y


def _group_norm(x: np.ndarray, groups: int, epsilon: float, scale, shift):
    m, c, h, w = x.shape
    if c % groups != 0:
        raise ConfigError(f"{groups} groups do not divide {c} channels")
    gs = c // groups
    xg = x.reshape(m, groups, gs, h, w)
    mu = xg.mean(axis=(2, 3, 4), keepdims=True)
    var = xg.var(axis=(2, 3, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(epsilon, dtype=x.dtype))
    xhat = ((xg - mu) * inv).reshape(m, c, h, w)
    y = xhat * scale[None, :, None, None] + shift[None, :, None, None]
    return y, (xhat, inv, scale, groups)


def _group_norm_backward(dy: np.ndarray, cache):
    xhat, inv, scale, groups = cache
    m, c, h, w = dy.shape
    gs = c // groups
    dscale = np.sum(dy * xhat, axis=(0, 2, 3))
    dshift = np.sum(dy, axis=(0, 2, 3))
    dxhat = (dy * scale[None, :, None, None]).reshape(m, groups, gs, h, w)
    xhat_g = xhat.reshape(m, groups, gs, h, w)
    mean_d = dxhat.mean(axis=(2, 3, 4), keepdims=True)
    mean_dx = (dxhat * xhat_g).mean(axis=(2, 3, 4), keepdims=True)
    dx = inv * (dxhat - mean_d - xhat_g * mean_dx)
    return dx.reshape(m, c, h, w), dscale, dshift


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_ws(x, w, stride, pad, eps):
    w_hat, ws_cache = _standardize(w, eps)
    xp = _pad(x, pad)
    y = kernels.conv2d_forward(xp, w_hat, stride)
    cache = (xp, w_hat, ws_cache, stride, pad)
    return y, cache


def _conv_ws_backward(dy, cache):
    xp, w_hat, ws_cache, stride, pad = cache
    hp, wp = xp.shape[2], xp.shape[3]
    kh, kw = w_hat.shape[2], w_hat.shape[3]
    dxp = kernels.conv2d_backward_input(dy, w_hat, stride, hp, wp)
    dw_hat = kernels.conv2d_backward_kernel(dy, xp, kh, kw, stride)
    dw = _standardize_backward(dw_hat, ws_cache)
    if pad:
        dx = dxp[:, :, pad:-pad, pad:-pad]
    else:
        dx = dxp
    return dx, dw


def sd_factor(dropped: bool, rate: float) -> float:
    """Branch multiplier for stochastic depth with survivor rescaling."""
    if dropped:
        return 0.0
    return 1.0 / (1.0 - rate)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_input(spec: ModelSpec, images: np.ndarray) -> None:
    if images.ndim != 4 or tuple(images.shape[1:]) != tuple(spec.input_shape):
        raise ConfigError(
            f"input shape {images.shape} does not match model input {spec.input_shape}"
        )


def forward_with_cache(
    params: ParameterSet,
    spec: ModelSpec,
    images: np.ndarray,
    mode: str = MODE_EVAL,
    rng: np.random.Generator | None = None,
):
    """Run the network; returns (logits, predictions, cache) for backward."""
    if mode not in (MODE_TRAIN, MODE_EVAL):
        raise ConfigError(f"unknown mode {mode!r}")
    noisy = mode == MODE_TRAIN
    if noisy and rng is None and (spec.dropout_rate > 0 or spec.stochastic_depth_rate > 0):
        raise ConfigError("train_noised mode with nonzero noise rates needs an rng")
    dt = params["stem.conv"].dtype
    x = np.ascontiguousarray(images, dtype=dt)
    _check_input(spec, x)
    t = params.tensors
    cache: dict = {"mode": mode, "blocks": []}
    # Distance from the nearest ReLU kink, for finite-difference validity checks.
    kink_margin = np.inf

    y, c_conv = _conv_ws(x, t["stem.conv"], 2, 1, spec.ws_epsilon)
    y, c_gn = _group_norm(
        y, spec.gn_groups, spec.gn_epsilon, t["stem.gn.scale"], t["stem.gn.shift"]
    )
    kink_margin = min(kink_margin, float(np.abs(y).min()))
    a = np.maximum(y, 0)
    cache["stem"] = (c_conv, c_gn, a > 0)
    x = a

    sd_rate = spec.stochastic_depth_rate if noisy else 0.0
    for si, bi, c_in, c_out, stride, has_skip in _block_layout(spec):
        base = f"stage{si}.block{bi}"
        h1, c1 = _conv_ws(x, t[f"{base}.conv1"], stride, 1, spec.ws_epsilon)
        h1, c1g = _group_norm(
            h1, spec.gn_groups, spec.gn_epsilon,
            t[f"{base}.gn1.scale"], t[f"{base}.gn1.shift"],
        )
        kink_margin = min(kink_margin, float(np.abs(h1).min()))
        a1 = np.maximum(h1, 0)
        h2, c2 = _conv_ws(a1, t[f"{base}.conv2"], 1, 1, spec.ws_epsilon)
        h2, c2g = _group_norm(
            h2, spec.gn_groups, spec.gn_epsilon,
            t[f"{base}.gn2.scale"], t[f"{base}.gn2.shift"],
        )
        if has_skip:
            sk, cs = _conv_ws(x, t[f"{base}.skip.conv"], stride, 0, spec.ws_epsilon)
            sk, csg = _group_norm(
                sk, spec.gn_groups, spec.gn_epsilon,
                t[f"{base}.skip.gn.scale"], t[f"{base}.skip.gn.shift"],
            )
        else:
            sk, cs, csg = x, None, None
        if sd_rate > 0:
            dropped = bool(rng.uniform() < sd_rate)
        else:
            dropped = False
        factor = sd_factor(dropped, sd_rate)
        out = sk + np.asarray(factor, dtype=dt) * h2
        kink_margin = min(kink_margin, float(np.abs(out).min()))
        a_out = np.maximum(out, 0)
        cache["blocks"].append(
            {
                "base": base,
                "conv1": c1, "gn1": c1g, "relu1": a1 > 0,
                "conv2": c2, "gn2": c2g,
                "skip_conv": cs, "skip_gn": csg, "has_skip": has_skip,
                "dropped": dropped, "factor": factor, "relu_out": a_out > 0,
            }
        )
        x = a_out

    m, c_last, hh, ww = x.shape
    pooled = x.mean(axis=(2, 3))
    if noisy and spec.dropout_rate > 0:
        keep = (rng.uniform(size=pooled.shape) >= spec.dropout_rate).astype(dt)
        drop_mask = keep / np.asarray(1.0 - spec.dropout_rate, dtype=dt)
    else:
        drop_mask = None
    z = pooled if drop_mask is None else pooled * drop_mask
    logits = z @ t["head.weight"].T[:, 0] + t["head.bias"][0]
    cache["head"] = (z, drop_mask, (hh, ww), x.shape)
    cache["kink_margin"] = kink_margin
    preds = _sigmoid(logits)
    return logits, preds, cache


def forward(
    params: ParameterSet,
    spec: ModelSpec,
    images: np.ndarray,
    mode: str = MODE_EVAL,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Predictions in (0, 1), one per image."""
    _, preds, _ = forward_with_cache(params, spec, images, mode, rng)
    return preds


def backward(params: ParameterSet, spec: ModelSpec, cache: dict, dlogits: np.ndarray):
    """Gradients of a scalar loss given d(loss)/d(logit) per sample."""
    t = params.tensors
    dt = t["stem.conv"].dtype
    grads: dict[str, np.ndarray] = {}
    z, drop_mask, (hh, ww), feat_shape = cache["head"]
    dlogits = np.ascontiguousarray(dlogits, dtype=dt)
    grads["head.weight"] = (dlogits[None, :] @ z).astype(dt)
    grads["head.bias"] = np.array([dlogits.sum()], dtype=dt)
    dz = dlogits[:, None] * t["head.weight"][0][None, :]
    if drop_mask is not None:
        dz = dz * drop_mask
    dx = np.broadcast_to(
        dz[:, :, None, None] / np.asarray(hh * ww, dtype=dt), feat_shape
    ).astype(dt)

    for blk in reversed(cache["blocks"]):
        base = blk["base"]
        d_out = dx * blk["relu_out"]
        d_branch = d_out * np.asarray(blk["factor"], dtype=dt)
        d_skip = d_out
        dgn2, dsc2, dsh2 = _group_norm_backward(d_branch, blk["gn2"])
        grads[f"{base}.gn2.scale"] = dsc2.astype(dt)
        grads[f"{base}.gn2.shift"] = dsh2.astype(dt)
        da1, dw2 = _conv_ws_backward(dgn2, blk["conv2"])
        grads[f"{base}.conv2"] = dw2
        dh1 = da1 * blk["relu1"]
        dgn1, dsc1, dsh1 = _group_norm_backward(dh1, blk["gn1"])
        grads[f"{base}.gn1.scale"] = dsc1.astype(dt)
        grads[f"{base}.gn1.shift"] = dsh1.astype(dt)
        dx_main, dw1 = _conv_ws_backward(dgn1, blk["conv1"])
        grads[f"{base}.conv1"] = dw1
        if blk["has_skip"]:
            dgns, dscs, dshs = _group_norm_backward(d_skip, blk["skip_gn"])
            grads[f"{base}.skip.gn.scale"] = dscs.astype(dt)
            grads[f"{base}.skip.gn.shift"] = dshs.astype(dt)
            dx_skip, dws = _conv_ws_backward(dgns, blk["skip_conv"])
            grads[f"{base}.skip.conv"] = dws
            dx = dx_main + dx_skip
        else:
            dx = dx_main + d_skip

    c_conv, c_gn, relu_mask = cache["stem"]
    d0 = dx * relu_mask
    dgn0, dsc0, dsh0 = _group_norm_backward(d0, c_gn)
    grads["stem.gn.scale"] = dsc0.astype(dt)
    grads["stem.gn.shift"] = dsh0.astype(dt)
    _, dw0 = _conv_ws_backward(dgn0, c_conv)
    grads["stem.conv"] = dw0
    return grads
