"""Student/teacher segmentation networks over a plain-numpy compute core.

The network is a small fully-convolutional encoder/classifier pair:

    encoder   : 4 conv3x3 layers (leaky ReLU), the first log2(stride) of
                them with stride 2, widths [D/2, D, D, D]
    classifier: conv3x3 (leaky ReLU) + conv1x1 to class logits, followed
                by a bilinear upsample back to the input resolution

Parameters are flat lists of float64 arrays [W1, b1, ..., W6, b6].
Forward passes cache im2col buffers so reverse-mode gradients are exact;
the teacher is only ever written by `ema_update`, never by gradients.

Checkpoints: magic "DIGA1", one JSON descriptor line, then little-endian
float32 parameter payloads for student and teacher (and optionally the
centroid bank); save/load round-trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import TrainConfig

CHECKPOINT_MAGIC = b"DIGA1"

# leaky slope keeps every unit trainable; plain ReLU dies too easily in
# a net this small
LEAK = 0.1


class ModelError(Exception):
    pass


class LayerDef(NamedTuple):
    name: str
    cin: int
    cout: int
    k: int
    stride: int
    pad: int
    relu: bool


def layer_plan(num_classes: int, feature_dim: int, feature_stride: int) -> tuple[LayerDef, ...]:
    """Layer shapes as a function of (C, D, stride); total parameter count
    is sum(cout*cin*k^2 + cout) over these layers."""
    n_down = {2: 1, 4: 2, 8: 3}[feature_stride]
    widths = [max(feature_dim // 2, 2), feature_dim, feature_dim, feature_dim]
    strides = [2] * n_down + [1] * (4 - n_down)
    layers = []
    cin = 3
    for i, (w, s) in enumerate(zip(widths, strides)):
        layers.append(LayerDef(f"enc{i + 1}", cin, w, 3, s, 1, True))
        cin = w
    layers.append(LayerDef("cls1", feature_dim, feature_dim, 3, 1, 1, True))
    layers.append(LayerDef("cls2", feature_dim, num_classes, 1, 1, 0, False))
    return tuple(layers)


FEATURE_LAYER = 3  # features = ReLU output of the 4th encoder layer


@dataclass
class ModelPair:
    """Student and teacher parameters of identical layout.

    The teacher carries no gradient path by construction: backward passes
    only ever produce student gradients, and the teacher is written solely
    by `ema_update`.
    """

    student: list[np.ndarray]
    teacher: list[np.ndarray]
    layers: tuple[LayerDef, ...]

    # structural contract, not a switch: nothing in this package can
    # route gradients into the teacher
    teacher_gradients_disabled: bool = True


def count_params(layers) -> int:
    return sum(l.cout * l.cin * l.k * l.k + l.cout for l in layers)


def init_pair(cfg: TrainConfig, seed: int) -> ModelPair:
    """Deterministic init; the teacher starts as an exact copy of the student.

    Hidden layers are He-normal; the final classifier layer starts at zero
    so initial logits are uniform and early training follows the class
    prior instead of random logit noise.
    """
    layers = layer_plan(cfg.num_classes, cfg.feature_dim, cfg.feature_stride)
    seqs = np.random.SeedSequence(seed).spawn(len(layers))
    student: list[np.ndarray] = []
    for i, (layer, seq) in enumerate(zip(layers, seqs)):
        rng = np.random.default_rng(seq)
        std = np.sqrt(2.0 / (layer.cin * layer.k * layer.k))
        weight = rng.standard_normal((layer.cout, layer.cin, layer.k, layer.k)) * std
        if i == len(layers) - 1:
            weight = np.zeros_like(weight)
        student.append(weight)
        student.append(np.zeros(layer.cout))
    teacher = [p.copy() for p in student]
    return ModelPair(student, teacher, layers)


# ---------------------------------------------------------------------------
# convolution primitives


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    # edge-replication padding keeps constant inputs constant at every
    # resolution (no zero-padding border artifacts)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge") if pad else x
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        (n, c, ho, wo, k, k),
        (s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
        writeable=False,
    )
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * k * k)
    return cols, ho, wo


def _conv_forward(x, weight, bias, layer: LayerDef):
    cols, ho, wo = _im2col(x, layer.k, layer.stride, layer.pad)
    out = cols @ weight.reshape(layer.cout, -1).T + bias
    return out.reshape(x.shape[0], ho, wo, layer.cout).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, weight, layer: LayerDef):
    n, cin, h, w = x_shape
    _, _, ho, wo = dout.shape
    dflat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(n, ho * wo, layer.cout)
    dweight = np.tensordot(dflat, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
    dbias = dflat.sum(axis=(0, 1))
    dcols = (dflat @ weight.reshape(layer.cout, -1)).reshape(n, ho, wo, cin, layer.k, layer.k)
    k, stride, pad = layer.k, layer.stride, layer.pad
    dxp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    if pad:
        # transpose of edge replication: fold padded borders onto the edges
        dxp[:, :, pad, :] += dxp[:, :, :pad, :].sum(axis=2)
        dxp[:, :, -pad - 1, :] += dxp[:, :, -pad:, :].sum(axis=2)
        dxp[:, :, :, pad] += dxp[:, :, :, :pad].sum(axis=3)
        dxp[:, :, :, -pad - 1] += dxp[:, :, :, -pad:].sum(axis=3)
        dx = dxp[:, :, pad : pad + h, pad : pad + w]
    else:
        dx = dxp
    return dx, dweight, dbias


# ---------------------------------------------------------------------------
# bilinear resampling as explicit (small) interpolation matrices


@lru_cache(maxsize=128)
def resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """1-D bilinear interpolation matrix; exact identity when sizes match."""
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * ratio - 0.5, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        f = src - i0
        i1 = min(i0 + 1, n_in - 1)
        m[i, i0] += 1.0 - f
        m[i, i1] += f
    return m


def resize_bilinear(arr: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    """Bilinear resize of (..., H, W) along the trailing two axes."""
    h_in, w_in = arr.shape[-2:]
    mh = resize_matrix(h_out, h_in)
    mw = resize_matrix(w_out, w_in)
    return np.matmul(np.matmul(mh, arr), mw.T)


def _resize_backward(darr: np.ndarray, h_in: int, w_in: int) -> np.ndarray:
    h_out, w_out = darr.shape[-2:]
    mh = resize_matrix(h_out, h_in)
    mw = resize_matrix(w_out, w_in)
    return np.matmul(np.matmul(mh.T, darr), mw)


def upsample_nearest(labels: np.ndarray, factor: int) -> np.ndarray:
    """Integer-factor nearest upsampling of (..., h, w) hard labels."""
    return np.repeat(np.repeat(labels, factor, axis=-2), factor, axis=-1)


def downsample_nearest(labels: np.ndarray, factor: int) -> np.ndarray:
    """Center-sample every factor-th pixel: the nearest-neighbor reduction."""
    off = factor // 2
    return labels[..., off::factor, off::factor]


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# forward / backward


class ForwardOut(NamedTuple):
    features: np.ndarray  # (B, D, h, w)
    logits: np.ndarray  # (B, C, H, W)
    probs: np.ndarray  # (B, C, H, W), channel-normalized


def _check_input(layers, x) -> None:
    stride = int(np.prod([l.stride for l in layers]))
    if x.ndim != 4 or x.shape[1] != layers[0].cin:
        raise ModelError(f"expected (B, {layers[0].cin}, H, W) input, got {x.shape}")
    if x.shape[2] % stride or x.shape[3] % stride:
        raise ModelError(f"input size {x.shape[2:]} not a multiple of stride {stride}")


INPUT_SHIFT = 0.5
INPUT_SCALE = 2.0


def forward(layers, params, x: np.ndarray, want_cache: bool = False):
    """Full forward pass; returns (ForwardOut, cache or None).

    Inputs in [0, 1] are centered to [-1, 1] before the first layer; the
    fixed affine keeps early training well conditioned.
    """
    _check_input(layers, x)
    h = (x - INPUT_SHIFT) * INPUT_SCALE
    cache = [] if want_cache else None
    features = None
    for idx, layer in enumerate(layers):
        weight, bias = params[2 * idx], params[2 * idx + 1]
        out, cols = _conv_forward(h, weight, bias, layer)
        if want_cache:
            cache.append((h.shape, cols, out))
        h = np.where(out > 0.0, out, LEAK * out) if layer.relu else out
        if idx == FEATURE_LAYER:
            features = h
    coarse = h
    logits = resize_bilinear(coarse, x.shape[2], x.shape[3])
    return ForwardOut(features, logits, softmax(logits)), cache


def forward_features(layers, params, x: np.ndarray) -> np.ndarray:
    """Encoder-only forward: the (B, D, h, w) feature map."""
    _check_input(layers, x)
    h = (x - INPUT_SHIFT) * INPUT_SCALE
    for idx, layer in enumerate(layers[: FEATURE_LAYER + 1]):
        weight, bias = params[2 * idx], params[2 * idx + 1]
        out, _ = _conv_forward(h, weight, bias, layer)
        h = np.where(out > 0.0, out, LEAK * out) if layer.relu else out
    return h


def backward(layers, params, cache, dlogits: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients for a cached forward pass given dLoss/dlogits."""
    coarse_h, coarse_w = cache[-1][2].shape[-2:]
    d = _resize_backward(dlogits, coarse_h, coarse_w)
    grads: list[np.ndarray] = [None] * len(params)
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        x_shape, cols, pre = cache[idx]
        if layer.relu:
            d = d * np.where(pre > 0.0, 1.0, LEAK)
        d, dw, db = _conv_backward(d, cols, x_shape, params[2 * idx], layer)
        grads[2 * idx] = dw
        grads[2 * idx + 1] = db
    return grads


def zero_grads(params) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params]


def add_grads(acc, grads) -> None:
    for a, g in zip(acc, grads):
        a += g


def sgd_step(params, grads, lr: float, momentum: float = 0.0, velocity=None,
             weight_decay: float = 0.0):
    """SGD with constant learning rate; momentum and weight decay opt-in.

    Returns (new_params, new_velocity); velocity is None while momentum
    is 0, so plain SGD stays stateless.  Weight decay enters the gradient
    before momentum, the standard L2 coupling.
    """
    if weight_decay > 0.0:
        grads = [g + weight_decay * p for g, p in zip(grads, params)]
    if momentum > 0.0:
        if velocity is None:
            velocity = [np.zeros_like(p) for p in params]
        velocity = [momentum * v + g for v, g in zip(velocity, grads)]
        step = velocity
    else:
        velocity = None
        step = grads
    return [p - lr * g for p, g in zip(params, step)], velocity


def ema_update(pair: ModelPair, momentum: float) -> ModelPair:
    """teacher' = momentum * teacher + (1 - momentum) * student; student untouched."""
    if not 0.0 <= momentum <= 1.0:
        raise ModelError(f"ema momentum must be in [0, 1], got {momentum}")
    teacher = [momentum * t + (1.0 - momentum) * s for t, s in zip(pair.teacher, pair.student)]
    return ModelPair(pair.student, teacher, pair.layers)


def flatten_params(params) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params])


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, pair: ModelPair, bank=None) -> None:
    """Write magic, JSON layout descriptor, then float32-LE parameters."""
    descriptor = {
        "layers": [list(l) for l in pair.layers],
        "bank": bank is not None,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(b"\n")
        fh.write(json.dumps(descriptor, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for params in (pair.student, pair.teacher):
            for p in params:
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
        if bank is not None:
            fh.write(np.ascontiguousarray(bank.rho, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(bank.present, dtype=np.uint8).tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (ModelPair, bank or None)."""
    from .centroids import CentroidBank

    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ModelError(f"cannot read checkpoint {path}: {exc}") from exc
    if not blob.startswith(CHECKPOINT_MAGIC + b"\n"):
        raise ModelError(f"{path}: bad magic, not a checkpoint file")
    header_end = blob.index(b"\n", len(CHECKPOINT_MAGIC) + 1)
    descriptor = json.loads(blob[len(CHECKPOINT_MAGIC) + 1 : header_end].decode("utf-8"))
    layers = tuple(LayerDef(*l) for l in descriptor["layers"])
    offset = header_end + 1

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        return arr.astype(np.float64).reshape(shape)

    student, teacher = [], []
    for params in (student, teacher):
        for layer in layers:
            params.append(take((layer.cout, layer.cin, layer.k, layer.k)))
            params.append(take((layer.cout,)))
    bank = None
    if descriptor.get("bank"):
        c = layers[-1].cout
        d = layers[FEATURE_LAYER].cout
        rho = take((c, d))
        present = np.frombuffer(blob, dtype=np.uint8, count=c, offset=offset).astype(bool)
        offset += c
        bank = CentroidBank(rho, present)
    if offset != len(blob):
        raise ModelError(f"{path}: trailing bytes, file corrupt")
    return ModelPair(student, teacher, layers), bank
