"""Seed-generated desk-scale models and datasets: MLP fixtures for the test
suite, an image-shaped conv net for heatmap demos, and separable blob data
for head retraining.
"""

from __future__ import annotations

import math

import numpy as np

from .runtime import Dataset, LayerSpec, ModelSpec, Tensor


def random_mlp(
    seed: int,
    in_dim: int = 6,
    hidden: tuple[int, ...] = (8, 8),
    classes: int = 3,
    scale: float = 1.0,
) -> ModelSpec:
    """Dense/relu stack with one stage per hidden layer plus the output
    stage. Weights ~ N(0, scale/sqrt(fan_in))."""
    rng = np.random.Generator(np.random.PCG64(seed))
    dims = (in_dim, *hidden, classes)
    layers: list[LayerSpec] = []
    boundaries: list[int] = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = rng.normal(0.0, scale / math.sqrt(fan_in), size=(fan_out, fan_in))
        b = rng.normal(0.0, 0.1 * scale, size=fan_out)
        layers.append(LayerSpec("dense", w, b))
        if i < len(dims) - 2:
            layers.append(LayerSpec("relu"))
        boundaries.append(len(layers) - 1)
    return ModelSpec(
        name=f"mlp-seed{seed}",
        input_shape=(in_dim,),
        class_labels=tuple(f"c{j}" for j in range(classes)),
        layers=tuple(layers),
        stage_boundaries=tuple(boundaries),
    )


def acceptance_mlp(seed: int) -> ModelSpec:
    """The d=6, two-hidden-stage fixture family the acceptance suite runs on.
    Weight scale 0.6 keeps path-integral discretization error well under the
    suite's tolerance."""
    return random_mlp(seed, in_dim=6, hidden=(8, 8), classes=3, scale=0.6)


def acceptance_input(seed: int) -> Tensor:
    return random_input(100 + seed, (6,))


def linear_model(w: np.ndarray, b: np.ndarray | None = None, name: str = "linear") -> ModelSpec:
    w = np.asarray(w, dtype=np.float64)
    if b is None:
        b = np.zeros(w.shape[0])
    return ModelSpec(
        name=name,
        input_shape=(w.shape[1],),
        class_labels=tuple(f"c{j}" for j in range(w.shape[0])),
        layers=(LayerSpec("dense", w, b),),
        stage_boundaries=(0,),
    )


def random_input(seed: int, shape: tuple[int, ...], scale: float = 1.0) -> Tensor:
    rng = np.random.Generator(np.random.PCG64(seed))
    return Tensor.from_array(rng.normal(0.0, scale, size=shape))


def blobs_dataset(
    seed: int,
    n_per_class: int = 100,
    centers: tuple[tuple[float, ...], ...] = ((3.0, 3.0), (-3.0, -3.0)),
    sigma: float = 0.7,
) -> Dataset:
    """Well-separated Gaussian blobs, one per class."""
    rng = np.random.Generator(np.random.PCG64(seed))
    inputs: list[Tensor] = []
    labels: list[int] = []
    for label, center in enumerate(centers):
        pts = rng.normal(0.0, sigma, size=(n_per_class, len(center))) + np.asarray(center)
        inputs.extend(Tensor.from_array(p) for p in pts)
        labels.extend([label] * n_per_class)
    return Dataset(tuple(inputs), tuple(labels))


def image_demo_model(seed: int = 0, side: int = 8) -> ModelSpec:
    """Conv + pool + dense net on a 1-channel square image; three stages."""
    rng = np.random.Generator(np.random.PCG64(seed))
    kernels = rng.normal(0.0, 0.5, size=(4, 1, 3, 3))
    kb = rng.normal(0.0, 0.1, size=4)
    conv_out = side - 2
    pooled = conv_out // 2
    flat = 4 * pooled * pooled
    w1 = rng.normal(0.0, 1.0 / math.sqrt(flat), size=(16, flat))
    b1 = rng.normal(0.0, 0.1, size=16)
    w2 = rng.normal(0.0, 1.0 / 4.0, size=(3, 16))
    b2 = rng.normal(0.0, 0.1, size=3)
    layers = (
        LayerSpec("conv2d", kernels, kb),
        LayerSpec("relu"),
        LayerSpec("maxpool2"),
        LayerSpec("flatten"),
        LayerSpec("dense", w1, b1),
        LayerSpec("relu"),
        LayerSpec("dense", w2, b2),
    )
    return ModelSpec(
        name=f"conv-demo-seed{seed}",
        input_shape=(1, side, side),
        class_labels=("a", "b", "c"),
        layers=layers,
        stage_boundaries=(2, 5, 6),
    )


def spiky_image(seed: int = 0, side: int = 8) -> Tensor:
    rng = np.random.Generator(np.random.PCG64(seed))
    img = rng.uniform(0.0, 0.3, size=(1, side, side))
    img[0, 1:4, 1:4] += 1.0
    return Tensor.from_array(img)


def planted_outlier_matrix(
    seed: int = 0,
    inliers: int = 95,
    outliers: int = 5,
    dim: int = 8,
    shift: float = 5.0,
) -> tuple[np.ndarray, list[int]]:
    """Gaussian rows with variance 0.1 plus `outliers` rows displaced along
    the first axis; returns (matrix, planted row indices)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    mat = rng.normal(0.0, math.sqrt(0.1), size=(inliers + outliers, dim))
    planted = list(range(inliers, inliers + outliers))
    for i in planted:
        mat[i, 0] += shift
    return mat, planted
