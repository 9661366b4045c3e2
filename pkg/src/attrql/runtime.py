"""Small neural-network runtime: forward evaluation, per-input gradients,
stage truncation, and linear-head retraining.

Everything is float64 and deterministic. Models are plain layer lists; the
only trainable step anywhere is the linear head fitted by `train_linear_head`.

Stage convention: a model's `stage_boundaries` lists, in increasing order,
the index of the last layer of each stage. Stages end after activation
layers (relu / maxpool2), and the final stage consists of the output dense
layer, so the last boundary is always the final layer index. For a model
with n stages, truncation is meaningful at stages 1..n-1; stage n is the
classification head itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

LAYER_KINDS = ("dense", "relu", "flatten", "conv2d", "maxpool2")


class ShapeError(ValueError):
    """Raised when tensor or parameter shapes do not chain."""


class StageError(ValueError):
    """Raised for out-of-range stage indices."""


@dataclass(frozen=True, eq=False)
class Tensor:
    """Shape-tagged flat array of finite float64 values, row-major."""

    shape: tuple[int, ...]
    data: np.ndarray

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.shape == other.shape
            and np.array_equal(self.data, other.data)
        )

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64).reshape(-1)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if any(s <= 0 for s in self.shape):
            raise ShapeError(f"non-positive dimension in shape {self.shape}")
        if arr.size != math.prod(self.shape):
            raise ShapeError(
                f"data length {arr.size} != product of shape {self.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")

    @property
    def size(self) -> int:
        return self.data.size

    def as_array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    @staticmethod
    def from_array(arr) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float64)
        return Tensor(tuple(arr.shape), arr.ravel())

    @staticmethod
    def zeros(shape: Sequence[int]) -> "Tensor":
        shape = tuple(int(s) for s in shape)
        return Tensor(shape, np.zeros(math.prod(shape)))

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "data": self.data.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Tensor":
        return Tensor(tuple(d["shape"]), np.asarray(d["data"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One layer. dense carries w (out,in) and b (out); conv2d carries
    w (out_ch,in_ch,kh,kw) and b (out_ch); the rest are parameter-free."""

    kind: str
    w: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LayerSpec)
            and self.kind == other.kind
            and (self.w is None) == (other.w is None)
            and (self.w is None or np.array_equal(self.w, other.w))
            and (self.b is None or np.array_equal(self.b, other.b))
        )

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("dense", "conv2d"):
            if self.w is None or self.b is None:
                raise ValueError(f"{self.kind} layer requires w and b")
            w = np.array(self.w, dtype=np.float64)
            b = np.array(self.b, dtype=np.float64)
            ndim = 2 if self.kind == "dense" else 4
            if w.ndim != ndim or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"bad parameter shapes for {self.kind}: {w.shape}, {b.shape}")
            w.flags.writeable = False
            b.flags.writeable = False
            object.__setattr__(self, "w", w)
            object.__setattr__(self, "b", b)
        elif self.w is not None or self.b is not None:
            raise ValueError(f"{self.kind} layer takes no parameters")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.w is not None:
            d["w"] = self.w.tolist()
            d["b"] = self.b.tolist()
        return d

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        return LayerSpec(d["kind"], d.get("w"), d.get("b"))


def _out_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape transfer of one layer; raises ShapeError on mismatch."""
    kind = layer.kind
    if kind == "dense":
        if len(shape) != 1 or shape[0] != layer.w.shape[1]:
            raise ShapeError(f"dense expects ({layer.w.shape[1]},), got {shape}")
        return (layer.w.shape[0],)
    if kind == "relu":
        return shape
    if kind == "flatten":
        return (math.prod(shape),)
    if kind == "conv2d":
        oc, ic, kh, kw = layer.w.shape
        if len(shape) != 3 or shape[0] != ic:
            raise ShapeError(f"conv2d expects ({ic},H,W), got {shape}")
        c, h, wd = shape
        if h < kh or wd < kw:
            raise ShapeError(f"conv2d kernel {kh}x{kw} larger than input {h}x{wd}")
        return (oc, h - kh + 1, wd - kw + 1)
    if kind == "maxpool2":
        if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
            raise ShapeError(f"maxpool2 expects (C,H,W) with H,W >= 2, got {shape}")
        return (shape[0], shape[1] // 2, shape[2] // 2)
    raise ValueError(kind)


@dataclass(frozen=True)
class ModelSpec:
    """Layer list plus metadata. Immutable; safe to share across threads."""

    name: str
    input_shape: tuple[int, ...]
    class_labels: tuple[str, ...]
    layers: tuple[LayerSpec, ...]
    stage_boundaries: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "stage_boundaries", tuple(int(i) for i in self.stage_boundaries))
        if not self.layers:
            raise ValueError("model needs at least one layer")
        shape = self.input_shape
        for layer in self.layers:
            shape = _out_shape(layer, shape)  # chains or raises
        last = self.layers[-1]
        if last.kind != "dense" or shape != (len(self.class_labels),):
            raise ValueError("final layer must be dense with one output per class label")
        bs = self.stage_boundaries
        if not bs or any(b2 <= b1 for b1, b2 in zip(bs, bs[1:])):
            raise ValueError("stage_boundaries must be nonempty and strictly increasing")
        if bs[0] < 0 or bs[-1] != len(self.layers) - 1:
            raise ValueError("stage_boundaries must end at the final layer")

    @property
    def num_stages(self) -> int:
        return len(self.stage_boundaries)

    @property
    def num_classes(self) -> int:
        return len(self.class_labels)

    @property
    def input_dim(self) -> int:
        return math.prod(self.input_shape)

    def shape_after_layer(self, layer_index: int) -> tuple[int, ...]:
        shape = self.input_shape
        for layer in self.layers[: layer_index + 1]:
            shape = _out_shape(layer, shape)
        return shape

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "class_labels": list(self.class_labels),
            "layers": [l.to_dict() for l in self.layers],
            "stage_boundaries": list(self.stage_boundaries),
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(
            name=d["name"],
            input_shape=tuple(d["input_shape"]),
            class_labels=tuple(d["class_labels"]),
            layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]),
            stage_boundaries=tuple(d["stage_boundaries"]),
        )


@dataclass(frozen=True)
class Dataset:
    inputs: tuple[Tensor, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "labels", tuple(int(c) for c in self.labels))
        if len(self.inputs) != len(self.labels):
            raise ValueError(
                f"{len(self.inputs)} inputs vs {len(self.labels)} labels"
            )
        if self.inputs:
            shape = self.inputs[0].shape
            for t in self.inputs:
                if t.shape != shape:
                    raise ShapeError("dataset inputs must share one shape")

    def __len__(self) -> int:
        return len(self.inputs)

    def stacked(self) -> np.ndarray:
        return np.stack([t.as_array() for t in self.inputs])

    def to_dict(self) -> dict:
        return {"inputs": [t.to_dict() for t in self.inputs], "labels": list(self.labels)}

    @staticmethod
    def from_dict(d: dict) -> "Dataset":
        return Dataset(
            tuple(Tensor.from_dict(t) for t in d["inputs"]), tuple(d["labels"])
        )


@dataclass
class HeadTrainingConfig:
    """Hyperparameters for linear-head retraining. Full-batch gradient
    descent on softmax cross-entropy; weights drawn uniform from the seed."""

    epochs: int = 200
    learning_rate: float = 0.05
    seed: int = 0

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "learning_rate": self.learning_rate, "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "HeadTrainingConfig":
        cfg = HeadTrainingConfig()
        return HeadTrainingConfig(
            epochs=int(d.get("epochs", cfg.epochs)),
            learning_rate=float(d.get("learning_rate", cfg.learning_rate)),
            seed=int(d.get("seed", cfg.seed)),
        )


# ---------------------------------------------------------------------------
# Forward / backward kernels. All take a batch axis up front.


def _layer_forward(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    kind = layer.kind
    if kind == "dense":
        return x @ layer.w.T + layer.b
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "flatten":
        return x.reshape(x.shape[0], -1)
    if kind == "conv2d":
        oc, ic, kh, kw = layer.w.shape
        n, c, h, wd = x.shape
        oh, ow = h - kh + 1, wd - kw + 1
        out = np.zeros((n, oc, oh, ow))
        for u in range(kh):
            for v in range(kw):
                patch = x[:, :, u : u + oh, v : v + ow]
                out += np.einsum("nchw,oc->nohw", patch, layer.w[:, :, u, v])
        return out + layer.b[None, :, None, None]
    if kind == "maxpool2":
        n, c, h, wd = x.shape
        oh, ow = h // 2, wd // 2
        win = x[:, :, : 2 * oh, : 2 * ow].reshape(n, c, oh, 2, ow, 2)
        return win.max(axis=(3, 5))
    raise ValueError(kind)


def _layer_backward(layer: LayerSpec, x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Gradient of a scalar objective wrt the layer input, given the
    gradient `delta` wrt its output and the input `x` seen at forward time."""
    kind = layer.kind
    if kind == "dense":
        return delta @ layer.w
    if kind == "relu":
        # subgradient 0 at the kink
        return delta * (x > 0.0)
    if kind == "flatten":
        return delta.reshape(x.shape)
    if kind == "conv2d":
        oc, ic, kh, kw = layer.w.shape
        n, c, h, wd = x.shape
        oh, ow = h - kh + 1, wd - kw + 1
        dx = np.zeros_like(x)
        for u in range(kh):
            for v in range(kw):
                dx[:, :, u : u + oh, v : v + ow] += np.einsum(
                    "nohw,oc->nchw", delta, layer.w[:, :, u, v]
                )
        return dx
    if kind == "maxpool2":
        n, c, h, wd = x.shape
        oh, ow = h // 2, wd // 2
        win = (
            x[:, :, : 2 * oh, : 2 * ow]
            .reshape(n, c, oh, 2, ow, 2)
            .transpose(0, 1, 2, 4, 3, 5)  # (n, c, oh, ow, 2, 2)
        )
        flat = win.reshape(n, c, oh, ow, 4)
        # first max wins ties, deterministically
        idx = flat.argmax(axis=-1)
        mask = np.zeros_like(flat)
        np.put_along_axis(mask, idx[..., None], 1.0, axis=-1)
        dwin = mask * delta[:, :, :, :, None]
        dx = np.zeros_like(x)
        dx[:, :, : 2 * oh, : 2 * ow] = (
            dwin.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
        )
        return dx
    raise ValueError(kind)


def _check_input(model: ModelSpec, x: Tensor) -> None:
    if x.shape != model.input_shape:
        raise ShapeError(
            f"model {model.name!r} expects input shape {model.input_shape}, got {x.shape}"
        )


def forward_batch(model: ModelSpec, xs: np.ndarray, upto_layer: int | None = None) -> np.ndarray:
    """Evaluate a batch (N, *input_shape) through layers [0, upto_layer]."""
    out = xs
    stop = len(model.layers) - 1 if upto_layer is None else upto_layer
    for layer in model.layers[: stop + 1]:
        out = _layer_forward(layer, out)
    return out


def forward(model: ModelSpec, x: Tensor) -> Tensor:
    """Logits of a single input."""
    _check_input(model, x)
    out = forward_batch(model, x.as_array()[None])
    return Tensor.from_array(out[0])


def forward_to_stage(model: ModelSpec, x: Tensor, l: int) -> Tensor:
    """Activation at the end of stage l (1-based)."""
    _check_input(model, x)
    if not 1 <= l <= model.num_stages:
        raise StageError(f"stage {l} out of range 1..{model.num_stages}")
    out = forward_batch(model, x.as_array()[None], upto_layer=model.stage_boundaries[l - 1])
    return Tensor.from_array(out[0])


def gradient_batch(model: ModelSpec, xs: np.ndarray, c: int) -> np.ndarray:
    """d logit_c / d input for each row of the batch, by reverse accumulation."""
    if not 0 <= c < model.num_classes:
        raise IndexError(f"class index {c} out of range 0..{model.num_classes - 1}")
    acts = [xs]
    for layer in model.layers:
        acts.append(_layer_forward(layer, acts[-1]))
    delta = np.zeros_like(acts[-1])
    delta[:, c] = 1.0
    for layer, x_in in zip(reversed(model.layers), reversed(acts[:-1])):
        delta = _layer_backward(layer, x_in, delta)
    return delta


def gradient(model: ModelSpec, x: Tensor, c: int) -> Tensor:
    _check_input(model, x)
    return Tensor.from_array(gradient_batch(model, x.as_array()[None], c)[0])


# ---------------------------------------------------------------------------
# Linear-head training and stage truncation.


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_linear_head(
    features: Sequence[Tensor],
    labels: Sequence[int],
    hyper: HeadTrainingConfig | None = None,
) -> LayerSpec:
    """Fit a dense layer (flattened features -> classes) by full-batch
    gradient descent on softmax cross-entropy. Bit-reproducible per seed."""
    hyper = hyper or HeadTrainingConfig()
    if not features:
        raise ValueError("empty dataset")
    if len(features) != len(labels):
        raise ValueError(f"{len(features)} features vs {len(labels)} labels")
    xs = np.stack([f.data for f in features])
    ys = np.asarray(labels, dtype=np.int64)
    n_classes = int(ys.max()) + 1
    if (ys < 0).any():
        raise ValueError("negative class label")
    n, dim = xs.shape
    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    w = rng.uniform(-0.05, 0.05, size=(n_classes, dim))
    b = rng.uniform(-0.05, 0.05, size=n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys] = 1.0
    for _ in range(hyper.epochs):
        probs = _softmax(xs @ w.T + b)
        err = (probs - onehot) / n
        w -= hyper.learning_rate * (err.T @ xs)
        b -= hyper.learning_rate * err.sum(axis=0)
    return LayerSpec("dense", w, b)


def head_accuracy(head: LayerSpec, features: Sequence[Tensor], labels: Sequence[int]) -> float:
    xs = np.stack([f.data for f in features])
    preds = (xs @ head.w.T + head.b).argmax(axis=1)
    return float((preds == np.asarray(labels)).mean())


def truncate(
    model: ModelSpec,
    l: int,
    data: Dataset,
    hyper: HeadTrainingConfig | None = None,
) -> ModelSpec:
    """Stages 1..l of `model` plus a flatten and a freshly trained dense head.

    Rejects l == num_stages: the last stage is the output head itself, so
    truncating there reproduces the original architecture; use the model.
    """
    if not 1 <= l < model.num_stages:
        raise StageError(
            f"truncation stage {l} out of range 1..{model.num_stages - 1}"
        )
    if not data.inputs:
        raise ValueError("empty dataset")
    if data.inputs[0].shape != model.input_shape:
        raise ShapeError(
            f"dataset inputs {data.inputs[0].shape} do not match model input {model.input_shape}"
        )
    if any(c >= model.num_classes for c in data.labels):
        raise ValueError("dataset label out of range for model classes")
    boundary = model.stage_boundaries[l - 1]
    feats_arr = forward_batch(model, data.stacked(), upto_layer=boundary)
    feats = [Tensor.from_array(f) for f in feats_arr]
    head = train_linear_head(feats, data.labels, hyper)
    if head.w.shape[0] != model.num_classes:
        # labels may not cover every class; pad rows so the head stays |C|-wide
        w = np.zeros((model.num_classes, head.w.shape[1]))
        b = np.zeros(model.num_classes)
        w[: head.w.shape[0]] = head.w
        b[: head.b.shape[0]] = head.b
        head = LayerSpec("dense", w, b)
    layers = model.layers[: boundary + 1] + (LayerSpec("flatten"), head)
    boundaries = model.stage_boundaries[:l] + (len(layers) - 1,)
    return ModelSpec(
        name=f"{model.name}~stage{l}",
        input_shape=model.input_shape,
        class_labels=model.class_labels,
        layers=layers,
        stage_boundaries=boundaries,
    )
