"""Attribution kernels: Shapley values (exact and permutation-sampled),
integrated gradients, and smoothed gradients, each supporting window
restriction, plus the map-level combinators (weighted join, anti-join,
cross-model anti-join).

All sampled kernels are pure functions of (inputs, config, seed). Exact
Shapley enumerates coalitions, so windows are capped at 15 features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .runtime import ModelSpec, ShapeError, Tensor, forward, forward_batch, gradient_batch

BACKENDS = ("shapley-exact", "shapley-sampled", "integrated-gradients", "smoothgrad")

EXACT_WINDOW_LIMIT = 15
_EVAL_CHUNK = 8192

SeedLike = Union[int, np.random.SeedSequence]


class WindowError(ValueError):
    """Raised for out-of-range or oversized windows."""


@dataclass(frozen=True)
class Window:
    """Subset of flattened-input feature indices, optionally remembering the
    image rectangle it came from."""

    indices: tuple[int, ...]
    rect: Optional[tuple[int, int, int, int]] = None

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx):
            raise WindowError("duplicate window indices")
        if idx and idx[0] < 0:
            raise WindowError("negative window index")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def check_dim(self, d: int) -> None:
        if self.indices and self.indices[-1] >= d:
            raise WindowError(f"window index {self.indices[-1]} >= input dimension {d}")

    def complement(self, d: int) -> "Window":
        self.check_dim(d)
        inside = set(self.indices)
        return Window(tuple(i for i in range(d) if i not in inside))

    def intersect(self, other: "Window") -> "Window":
        return Window(tuple(set(self.indices) & set(other.indices)))

    @staticmethod
    def full(d: int) -> "Window":
        return Window(tuple(range(d)))

    @staticmethod
    def from_rect(shape: Sequence[int], r0: int, c0: int, r1: int, c1: int) -> "Window":
        """Window over an inclusive row/col rectangle of a (H,W) or (C,H,W)
        grid, covering all channels; indices are row-major into the input."""
        shape = tuple(shape)
        if len(shape) == 2:
            channels, (h, w) = 1, shape
        elif len(shape) == 3:
            channels, (h, w) = shape[0], shape[1:]
        else:
            raise WindowError(f"rect windows need a 2-D grid, input shape is {shape}")
        if not (0 <= r0 <= r1 < h and 0 <= c0 <= c1 < w):
            raise WindowError(f"rect({r0},{c0},{r1},{c1}) outside {h}x{w} grid")
        idx = []
        for ch in range(channels):
            base = ch * h * w
            for r in range(r0, r1 + 1):
                idx.extend(base + r * w + c for c in range(c0, c1 + 1))
        return Window(tuple(idx), rect=(r0, c0, r1, c1))

    def to_dict(self) -> dict:
        d: dict = {"indices": list(self.indices)}
        if self.rect is not None:
            d["rect"] = list(self.rect)
        return d


@dataclass(frozen=True, eq=False)
class AttributionMap:
    """Per-feature importance scores, one per flattened input feature."""

    shape: tuple[int, ...]
    values: np.ndarray

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AttributionMap)
            and self.shape == other.shape
            and np.array_equal(self.values, other.values)
        )

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if vals.size != math.prod(self.shape):
            raise ShapeError(f"{vals.size} values for shape {self.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("attribution map contains non-finite values")

    def total(self) -> float:
        return float(self.values.sum())

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.shape)


@dataclass(frozen=True)
class AttributionResult:
    """One map, an ordered (left, right) pair, or an n-way tuple of maps."""

    maps: tuple[AttributionMap, ...]
    roles: tuple[str, ...]

    def __post_init__(self):
        if len(self.maps) != len(self.roles) or not self.maps:
            raise ValueError("maps and roles must align and be nonempty")
        shape = self.maps[0].shape
        if any(m.shape != shape for m in self.maps):
            raise ShapeError("result maps must share one shape")

    @property
    def kind(self) -> str:
        return {1: "single", 2: "pair"}.get(len(self.maps), "tuple")

    @property
    def single(self) -> AttributionMap:
        if len(self.maps) != 1:
            raise ValueError(f"{self.kind} result has no unique map")
        return self.maps[0]

    @property
    def left(self) -> AttributionMap:
        return self.maps[0]

    @property
    def right(self) -> AttributionMap:
        if len(self.maps) < 2:
            raise ValueError("single result has no right map")
        return self.maps[-1]

    @staticmethod
    def of(m: AttributionMap) -> "AttributionResult":
        return AttributionResult((m,), ("map",))

    @staticmethod
    def pair(left: AttributionMap, right: AttributionMap) -> "AttributionResult":
        return AttributionResult((left, right), ("left", "right"))


@dataclass(frozen=True)
class BackendConfig:
    """Attribution backend selection plus every sampling knob.

    target_class None means: attribute the argmax logit of the full model's
    prediction on the input being explained.
    """

    backend: str = "shapley-sampled"
    samples: int = 2000
    steps: int = 50
    noise_sigma: float = 0.1
    noise_count: int = 50
    seed: int = 0
    epsilon: float = 0.5
    target_class: Optional[int] = None
    antijoin_shared_baseline: bool = False

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if min(self.samples, self.steps, self.noise_count) < 1:
            raise ValueError("samples, steps and noise_count must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon {self.epsilon} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "samples": self.samples,
            "steps": self.steps,
            "noise_sigma": self.noise_sigma,
            "noise_count": self.noise_count,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "target_class": self.target_class,
            "antijoin_shared_baseline": self.antijoin_shared_baseline,
        }

    @staticmethod
    def from_dict(d: dict) -> "BackendConfig":
        base = BackendConfig()
        kwargs = {k: d[k] for k in base.to_dict() if k in d}
        return replace(base, **kwargs)


# ---------------------------------------------------------------------------
# Masked inputs and coalition games.


def masked_input(x: Tensor, xbar: Tensor, coalition: Sequence[int]) -> Tensor:
    """Baseline xbar with x substituted at the coalition's indices."""
    if x.shape != xbar.shape:
        raise ShapeError(f"input {x.shape} vs baseline {xbar.shape}")
    out = np.array(xbar.data)
    idx = np.fromiter((int(i) for i in coalition), dtype=np.int64, count=len(coalition))
    if idx.size:
        if idx.min() < 0 or idx.max() >= out.size:
            raise IndexError(f"coalition index out of range 0..{out.size - 1}")
        out[idx] = x.data[idx]
    return Tensor(x.shape, out)


def _check_pair(x: Tensor, xbar: Tensor, w: Window) -> None:
    if x.shape != xbar.shape:
        raise ShapeError(f"input {x.shape} vs baseline {xbar.shape}")
    w.check_dim(x.size)


def _batched_target_logits(model: ModelSpec, flat: np.ndarray, c: int) -> np.ndarray:
    """logit_c for each row of flat (N, d), evaluated in bounded chunks."""
    out = np.empty(flat.shape[0])
    for s in range(0, flat.shape[0], _EVAL_CHUNK):
        chunk = flat[s : s + _EVAL_CHUNK].reshape(-1, *model.input_shape)
        out[s : s + _EVAL_CHUNK] = forward_batch(model, chunk)[:, c]
    return out


def _subset_bits(m: int) -> np.ndarray:
    """(2^m, m) 0/1 matrix; row k is the binary expansion of k."""
    masks = np.arange(1 << m, dtype=np.int64)
    return (masks[:, None] >> np.arange(m)) & 1


def _coalition_inputs(x: Tensor, xbar: Tensor, players: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Masked inputs for every coalition row of `bits` over `players`."""
    flat = np.tile(xbar.data, (bits.shape[0], 1))
    flat[:, players] = np.where(bits.astype(bool), x.data[players], xbar.data[players])
    return flat


def _shapley_weights(m: int) -> np.ndarray:
    """weight[k] = k! (m-k-1)! / m! for coalition size k."""
    fact = [math.factorial(i) for i in range(m + 1)]
    return np.array([fact[k] * fact[m - k - 1] / fact[m] for k in range(m)])


def shapley_exact(
    model: ModelSpec, x: Tensor, xbar: Tensor, c: int, w: Window
) -> AttributionMap:
    """Exact Shapley values of the window's features for the game
    v(S) = logit_c(masked_input(x, xbar, S)), S ranging over subsets of w.
    Features outside w stay at the baseline and score 0."""
    _check_pair(x, xbar, w)
    m = len(w)
    if m > EXACT_WINDOW_LIMIT:
        raise WindowError(f"window of {m} features exceeds exact-enumeration limit {EXACT_WINDOW_LIMIT}")
    values = np.zeros(x.size)
    if m > 0:
        players = np.asarray(w.indices, dtype=np.int64)
        bits = _subset_bits(m)
        v = _batched_target_logits(model, _coalition_inputs(x, xbar, players, bits), c)
        values[players] = _exact_from_game_values(v, m)
    return AttributionMap(x.shape, values)


def _exact_from_game_values(v: np.ndarray, m: int) -> np.ndarray:
    """Shapley values from the 2^m game-value table (index = coalition bitmask)."""
    masks = np.arange(1 << m, dtype=np.int64)
    sizes = np.zeros(1 << m, dtype=np.int64)
    for i in range(m):
        sizes += (masks >> i) & 1
    weights = _shapley_weights(m)
    phi = np.empty(m)
    for i in range(m):
        without = masks[((masks >> i) & 1) == 0]
        marginal = v[without + (1 << i)] - v[without]
        phi[i] = float(weights[sizes[without]] @ marginal)
    return phi


def _permutations(rng: np.random.Generator, players: np.ndarray, count: int) -> np.ndarray:
    perms = np.tile(players, (count, 1))
    return rng.permuted(perms, axis=1)


def _prefix_inputs(x: Tensor, xbar: Tensor, perms: np.ndarray) -> np.ndarray:
    """(count, m+1, d) masked inputs: row t of each permutation carries that
    permutation's first t features from x, the rest from xbar."""
    count, m = perms.shape
    rows = np.arange(count)
    flat = np.empty((count, m + 1, x.size))
    flat[:, 0, :] = xbar.data
    for t in range(m):
        flat[:, t + 1, :] = flat[:, t, :]
        flat[rows, t + 1, perms[:, t]] = x.data[perms[:, t]]
    return flat


def shapley_sampled(
    model: ModelSpec,
    x: Tensor,
    xbar: Tensor,
    c: int,
    w: Window,
    samples: int,
    seed: SeedLike,
) -> AttributionMap:
    """Monte-Carlo Shapley estimate: each sampled permutation of the window
    contributes one marginal per feature. Deterministic given seed."""
    _check_pair(x, xbar, w)
    if samples < 1:
        raise ValueError("need at least one permutation")
    m = len(w)
    values = np.zeros(x.size)
    if m == 0:
        return AttributionMap(x.shape, values)
    rng = np.random.Generator(np.random.PCG64(seed))
    players = np.asarray(w.indices, dtype=np.int64)
    # keep each chunk's masked-input matrix around 8M floats
    chunk = max(1, int(8_000_000 / ((m + 1) * max(x.size, 1))))
    done = 0
    while done < samples:
        take = min(chunk, samples - done)
        perms = _permutations(rng, players, take)
        v = _batched_target_logits(
            model, _prefix_inputs(x, xbar, perms).reshape(-1, x.size), c
        ).reshape(take, m + 1)
        diffs = v[:, 1:] - v[:, :-1]
        np.add.at(values, perms.ravel(), diffs.ravel())
        done += take
    values /= samples
    return AttributionMap(x.shape, values)


def integrated_gradients(
    model: ModelSpec, x: Tensor, xbar: Tensor, c: int, steps: int, w: Window
) -> AttributionMap:
    """K-step path integral of the target-class gradient from the baseline to
    the window-masked input, evaluated at the right endpoints k/K."""
    _check_pair(x, xbar, w)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    xw = masked_input(x, xbar, w.indices)
    diff = xw.data - xbar.data
    alphas = np.arange(1, steps + 1) / steps
    pts = xbar.data[None, :] + alphas[:, None] * diff[None, :]
    grads = gradient_batch(model, pts.reshape(steps, *x.shape), c).reshape(steps, -1)
    values = diff * grads.mean(axis=0)
    return AttributionMap(x.shape, _restrict(values, w, x.size))


def smoothgrad(
    model: ModelSpec,
    x: Tensor,
    c: int,
    noise_count: int,
    noise_sigma: float,
    seed: SeedLike,
    w: Window,
    xbar: Tensor,
) -> AttributionMap:
    """Average target-class gradient over Gaussian perturbations of the
    window-masked input. sigma = 0 collapses to the plain gradient."""
    _check_pair(x, xbar, w)
    if noise_count < 1:
        raise ValueError("noise_count must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    base = masked_input(x, xbar, w.indices).data
    if noise_sigma == 0.0:
        # degenerate noise: every sample is the same point, so the average
        # is exactly one gradient evaluation
        values = gradient_batch(model, base.reshape(1, *x.shape), c).reshape(-1)
        return AttributionMap(x.shape, _restrict(values, w, x.size))
    rng = np.random.Generator(np.random.PCG64(seed))
    pts = base[None, :] + rng.normal(0.0, noise_sigma, size=(noise_count, x.size))
    grads = gradient_batch(model, pts.reshape(noise_count, *x.shape), c).reshape(noise_count, -1)
    values = grads.mean(axis=0)
    return AttributionMap(x.shape, _restrict(values, w, x.size))


def _restrict(values: np.ndarray, w: Window, d: int) -> np.ndarray:
    out = np.zeros(d)
    idx = np.asarray(w.indices, dtype=np.int64)
    if idx.size:
        out[idx] = values[idx]
    return out


# ---------------------------------------------------------------------------
# Dispatch and combinators.


def resolve_target(cfg: BackendConfig, model: ModelSpec, x: Tensor) -> int:
    if cfg.target_class is not None:
        if not 0 <= cfg.target_class < model.num_classes:
            raise IndexError(f"target class {cfg.target_class} out of range")
        return cfg.target_class
    return int(np.argmax(forward(model, x).data))


def attribute(
    cfg: BackendConfig,
    model: ModelSpec,
    x: Tensor,
    xbar: Tensor | None = None,
    w: Window | None = None,
    seed: SeedLike | None = None,
    target: int | None = None,
) -> AttributionMap:
    """Run the configured backend for one (model, input, baseline, window)."""
    if xbar is None:
        xbar = Tensor.zeros(x.shape)
    if w is None:
        w = Window.full(x.size)
    if seed is None:
        seed = cfg.seed
    c = target if target is not None else resolve_target(cfg, model, x)
    if cfg.backend == "shapley-exact":
        return shapley_exact(model, x, xbar, c, w)
    if cfg.backend == "shapley-sampled":
        return shapley_sampled(model, x, xbar, c, w, cfg.samples, seed)
    if cfg.backend == "integrated-gradients":
        return integrated_gradients(model, x, xbar, c, cfg.steps, w)
    if cfg.backend == "smoothgrad":
        return smoothgrad(model, x, c, cfg.noise_count, cfg.noise_sigma, seed, w, xbar)
    raise ValueError(cfg.backend)


def identity_attr(
    cfg: BackendConfig, model: ModelSpec, x: Tensor, xbar: Tensor | None = None
) -> AttributionMap:
    """Full-window attribution of x against the baseline."""
    return attribute(cfg, model, x, xbar)


def select_attr(
    cfg: BackendConfig, truncated_model: ModelSpec, x: Tensor, xbar: Tensor | None = None
) -> AttributionMap:
    """Attribution against a stage-truncated model with a retrained head."""
    return attribute(cfg, truncated_model, x, xbar)


def join_maps(m: AttributionMap, m2: AttributionMap, epsilon: float) -> AttributionMap:
    """Weighted combination epsilon*m + (1-epsilon)*m2."""
    if m.shape != m2.shape:
        raise ShapeError(f"joining maps of shapes {m.shape} and {m2.shape}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    return AttributionMap(m.shape, epsilon * m.values + (1.0 - epsilon) * m2.values)


def _antijoin_baseline(cfg: BackendConfig, others: Sequence[Tensor], shape) -> Tensor:
    if cfg.antijoin_shared_baseline:
        return Tensor.zeros(shape)
    stack = np.stack([t.data for t in others])
    return Tensor(shape, stack.mean(axis=0))


def antijoin_many(
    cfg: BackendConfig,
    models: Sequence[ModelSpec],
    xs: Sequence[Tensor],
    w: Window | None = None,
    seeds: Sequence[SeedLike] | None = None,
) -> AttributionResult:
    """Each input attributed against the mean of the others (for two inputs,
    exactly: each against the other). Returns one map per input, in order."""
    if len(models) != len(xs) or len(xs) < 2:
        raise ValueError("anti-join needs one model per input and at least two inputs")
    shape = xs[0].shape
    for t in xs:
        if t.shape != shape:
            raise ShapeError("anti-join inputs must share one shape")
    maps = []
    for j, (model, x) in enumerate(zip(models, xs)):
        baseline = _antijoin_baseline(cfg, [t for k, t in enumerate(xs) if k != j], shape)
        seed = seeds[j] if seeds is not None else cfg.seed
        maps.append(attribute(cfg, model, x, baseline, w, seed=seed))
    if len(maps) == 2:
        return AttributionResult.pair(maps[0], maps[1])
    return AttributionResult(tuple(maps), tuple(f"input{j}" for j in range(len(maps))))


def antijoin(
    cfg: BackendConfig, model: ModelSpec, x: Tensor, x2: Tensor, w: Window | None = None
) -> AttributionResult:
    """Ordered pair: x attributed against baseline x2, and x2 against x."""
    return antijoin_many(cfg, [model, model], [x, x2], w)


def antijoin_cross_model(
    cfg: BackendConfig,
    model: ModelSpec,
    model2: ModelSpec,
    x: Tensor,
    xbar: Tensor | None = None,
    w: Window | None = None,
    seed: SeedLike | None = None,
) -> AttributionMap:
    """Discriminative attribution of one input under two models: the marginal
    term uses the first model for the grown coalition and the second for the
    base coalition. Shapley backends only."""
    if cfg.backend not in ("shapley-exact", "shapley-sampled"):
        raise ValueError(f"cross-model anti-join requires a Shapley backend, got {cfg.backend!r}")
    if model.input_shape != model2.input_shape or model.num_classes != model2.num_classes:
        raise ShapeError("cross-model anti-join needs models with matching input shape and class count")
    if xbar is None:
        xbar = Tensor.zeros(x.shape)
    if w is None:
        w = Window.full(x.size)
    if seed is None:
        seed = cfg.seed
    _check_pair(x, xbar, w)
    c = resolve_target(cfg, model, x)
    m = len(w)
    values = np.zeros(x.size)
    if m == 0:
        return AttributionMap(x.shape, values)
    players = np.asarray(w.indices, dtype=np.int64)
    if cfg.backend == "shapley-exact":
        if m > EXACT_WINDOW_LIMIT:
            raise WindowError(f"window of {m} features exceeds exact-enumeration limit {EXACT_WINDOW_LIMIT}")
        bits = _subset_bits(m)
        flat = _coalition_inputs(x, xbar, players, bits)
        va = _batched_target_logits(model, flat, c)
        vb = _batched_target_logits(model2, flat, c)
        masks = np.arange(1 << m, dtype=np.int64)
        sizes = bits.sum(axis=1)
        weights = _shapley_weights(m)
        for i in range(m):
            without = masks[((masks >> i) & 1) == 0]
            marginal = va[without + (1 << i)] - vb[without]
            values[players[i]] = float(weights[sizes[without]] @ marginal)
        return AttributionMap(x.shape, values)
    rng = np.random.Generator(np.random.PCG64(seed))
    samples = cfg.samples
    chunk = max(1, int(8_000_000 / ((m + 1) * max(x.size, 1))))
    done = 0
    while done < samples:
        take = min(chunk, samples - done)
        perms = _permutations(rng, players, take)
        flat = _prefix_inputs(x, xbar, perms).reshape(-1, x.size)
        va = _batched_target_logits(model, flat, c).reshape(take, m + 1)
        vb = _batched_target_logits(model2, flat, c).reshape(take, m + 1)
        diffs = va[:, 1:] - vb[:, :-1]
        np.add.at(values, perms.ravel(), diffs.ravel())
        done += take
    values /= samples
    return AttributionMap(x.shape, values)
