"""What-if input editing and spectral outlier scoring of deep representations.

Edits are pure and shape-preserving: nullify blanks a window to the baseline,
substitute copies a window from another input, transform applies a global
scale / quarter-turn / translation. Spectral scoring projects each example's
penultimate-stage representation onto the top right singular vector of the
class's centered representation matrix and flags scores beyond
mean + k * std (k = 1.5 by default).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attribution import Window, masked_input
from .runtime import Dataset, ModelSpec, ShapeError, Tensor, forward_batch


class TransformError(ValueError):
    """Raised when a spatial transform is applied to a non-spatial input."""


class PowerIterationError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"power iteration did not converge after {iterations} iterations "
            f"(last residual {residual:.3e})"
        )


@dataclass(frozen=True)
class Edit:
    kind: str  # nullify | substitute | transform
    window: Optional[Window] = None
    source_ref: Optional[str] = None
    transform_op: Optional[str] = None  # scale | rotate90 | shift
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("nullify", "substitute", "transform"):
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if self.kind == "substitute" and self.source_ref is None:
            raise ValueError("substitute edit requires a source input")
        if self.kind == "transform" and self.transform_op not in ("scale", "rotate90", "shift"):
            raise ValueError("transform edit requires op scale, rotate90, or shift")
        if self.kind in ("nullify", "substitute") and self.window is None:
            raise ValueError(f"{self.kind} edit requires a window")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.window is not None:
            d["window"] = self.window.to_dict()
        if self.source_ref is not None:
            d["source_ref"] = self.source_ref
        if self.transform_op is not None:
            d["transform_op"] = self.transform_op
            d["params"] = list(self.params)
        return d

    @staticmethod
    def from_dict(d: dict) -> "Edit":
        w = d.get("window")
        return Edit(
            kind=d["kind"],
            window=None if w is None else Window(tuple(w["indices"]),
                                                 tuple(w["rect"]) if w.get("rect") else None),
            source_ref=d.get("source_ref"),
            transform_op=d.get("transform_op"),
            params=tuple(d.get("params", ())),
        )


def nullify(x: Tensor, w: Window, xbar: Tensor) -> Tensor:
    """Replace the window's features with the baseline's."""
    return masked_input(x, xbar, w.complement(x.size).indices)


def substitute(x: Tensor, w: Window, src: Tensor) -> Tensor:
    """Copy the window's features from another input of the same shape."""
    if x.shape != src.shape:
        raise ShapeError(f"substitute source {src.shape} does not match input {x.shape}")
    w.check_dim(x.size)
    out = np.array(x.data)
    idx = np.asarray(w.indices, dtype=np.int64)
    if idx.size:
        out[idx] = src.data[idx]
    return Tensor(x.shape, out)


def _spatial_view(x: Tensor) -> np.ndarray:
    if len(x.shape) == 2:
        return x.as_array()[None, :, :]
    if len(x.shape) == 3:
        return x.as_array()
    raise TransformError(f"input shape {x.shape} has no 2-D spatial interpretation")


def transform(x: Tensor, op: str, params: tuple[float, ...]) -> Tensor:
    """scale(factor) multiplies all features; rotate90(k) quarter-turns the
    spatial grid; shift(dr, dc) translates, filling vacated cells with 0."""
    if op == "scale":
        (factor,) = params or (1.0,)
        return Tensor(x.shape, x.data * float(factor))
    if op == "rotate90":
        k = int(params[0]) if params else 1
        if k % 4 not in (0, 1, 2, 3):
            raise ValueError("rotate90 needs k in 0..3")
        grid = _spatial_view(x)
        if grid.shape[1] != grid.shape[2] and k % 2 == 1:
            raise TransformError("odd quarter-turns require a square grid")
        rotated = np.rot90(grid, k=k % 4, axes=(1, 2))
        return Tensor(x.shape, np.ascontiguousarray(rotated).reshape(-1))
    if op == "shift":
        dr, dc = (int(params[0]), int(params[1])) if len(params) >= 2 else (0, 0)
        grid = _spatial_view(x)
        out = np.zeros_like(grid)
        c, h, w = grid.shape
        src_r = slice(max(0, -dr), min(h, h - dr))
        dst_r = slice(max(0, dr), min(h, h + dr))
        src_c = slice(max(0, -dc), min(w, w - dc))
        dst_c = slice(max(0, dc), min(w, w + dc))
        out[:, dst_r, dst_c] = grid[:, src_r, src_c]
        return Tensor(x.shape, out.reshape(-1))
    raise ValueError(f"unknown transform op {op!r}")


def apply_edit(x: Tensor, edit: Edit, baseline: Tensor | None = None,
               source: Tensor | None = None) -> Tensor:
    if edit.kind == "nullify":
        return nullify(x, edit.window, baseline if baseline is not None else Tensor.zeros(x.shape))
    if edit.kind == "substitute":
        if source is None:
            raise ValueError("substitute edit needs the source tensor resolved")
        return substitute(x, edit.window, source)
    return transform(x, edit.transform_op, edit.params)


# ---------------------------------------------------------------------------
# Spectral signature.


@dataclass(frozen=True)
class SpectralReport:
    scores: tuple[float, ...]
    mean: float
    std: float
    threshold_k: float
    flagged: tuple[int, ...]

    @property
    def cutoff(self) -> float:
        return self.mean + self.threshold_k * self.std

    def to_dict(self) -> dict:
        return {
            "scores": list(self.scores),
            "mean": self.mean,
            "std": self.std,
            "threshold_k": self.threshold_k,
            "cutoff": self.cutoff,
            "flagged": list(self.flagged),
        }


def deep_representation(model: ModelSpec, data: Dataset, c: int) -> np.ndarray:
    """Rows: flattened activations at the stage feeding the classification
    head (stage n-1) for every class-c example, in dataset order."""
    rows = [i for i, label in enumerate(data.labels) if label == c]
    if not rows:
        raise ValueError(f"no examples of class {c} in the dataset")
    boundary = model.stage_boundaries[model.num_stages - 2] if model.num_stages >= 2 \
        else model.stage_boundaries[-1]
    # one example per forward call: row i is bit-identical to the stage
    # activation of input i on its own
    acts = [
        forward_batch(model, data.inputs[i].as_array()[None], upto_layer=boundary)[0]
        for i in rows
    ]
    return np.stack([a.reshape(-1) for a in acts])


def top_right_singular_vector(
    mat: np.ndarray, tol: float = 1e-10, max_iters: int = 1000
) -> tuple[np.ndarray, float]:
    """Dominant right singular vector of mat by power iteration on mat^T mat,
    deterministic all-ones start. Returns (vector, rayleigh residual)."""
    dim = mat.shape[1]
    v = np.ones(dim) / np.sqrt(dim)
    converged = False
    for _ in range(max_iters):
        nxt = mat.T @ (mat @ v)
        norm = np.linalg.norm(nxt)
        if norm == 0.0:
            return v, 0.0  # zero matrix: any unit vector is singular
        nxt = nxt / norm
        delta = min(np.linalg.norm(nxt - v), np.linalg.norm(nxt + v))
        v = nxt
        if delta < tol:
            converged = True
            break
    av = mat.T @ (mat @ v)
    lam = float(v @ av)
    residual = float(np.linalg.norm(av - lam * v) / (abs(lam) if lam else 1.0))
    if not converged:
        raise PowerIterationError(residual, max_iters)
    return v, residual


def spectral_signature(
    representations: np.ndarray, k: float = 1.5, squared: bool = False
) -> SpectralReport:
    """Score each row by |<row - mean, top right singular vector>| of the
    centered matrix; flag rows with score > mean(scores) + k * std(scores)."""
    mat = np.asarray(representations, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 2:
        raise ValueError("spectral signature needs a matrix with at least 2 rows")
    centered = mat - mat.mean(axis=0, keepdims=True)
    v, _residual = top_right_singular_vector(centered)
    scores = np.abs(centered @ v)
    if squared:
        scores = scores**2
    mean = float(scores.mean())
    std = float(scores.std())
    cutoff = mean + k * std
    flagged = tuple(int(i) for i in np.nonzero(scores > cutoff)[0])
    return SpectralReport(tuple(float(s) for s in scores), mean, std, float(k), flagged)
