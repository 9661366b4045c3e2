"""Operator-composition layer: expression trees over the five attribution
operators, validation of the conditional composition rules, normalization to
a canonical leaf-plan form, and evaluation by dispatch to the kernels.

Composition rules enforced here:
  - stacked window projections intersect;
  - projection commutes with stage selection (both push to the leaf);
  - nested stage selections require outer index <= inner index and collapse
    to the outer (smaller) one;
  - join/anti-join operands must carry equal windows after pushdown;
  - join chains and anti-join chains right-associate;
  - mixing join and anti-join in one expression is undefined and rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .attribution import (
    AttributionMap,
    AttributionResult,
    BackendConfig,
    SeedLike,
    Window,
    antijoin_cross_model,
    antijoin_many,
    attribute,
    join_maps,
)
from .runtime import ModelSpec, Tensor

FULL = None  # layer marker: attribute against the original model

_SEED_MASK = (1 << 63) - 1


def leaf_seed(seed: int, ordinal: int) -> np.random.SeedSequence:
    """Per-leaf RNG substream: leaf k of a normalized expression draws from
    SeedSequence((seed, k)). Standalone operator calls use ordinal 0, 1, ...
    in argument order, so they match single-operator expressions bit-for-bit."""
    return np.random.SeedSequence((seed & _SEED_MASK, ordinal))


# ---------------------------------------------------------------------------
# Expression nodes.


@dataclass(frozen=True)
class Identity:
    model_ref: str
    input_ref: str


@dataclass(frozen=True)
class Project:
    child: "AlgebraExpr"
    window: Window


@dataclass(frozen=True)
class Select:
    child: "AlgebraExpr"
    stage: int


@dataclass(frozen=True)
class Join:
    left: "AlgebraExpr"
    right: "AlgebraExpr"
    epsilon: Optional[float] = None


@dataclass(frozen=True)
class AntiJoin:
    left: "AlgebraExpr"
    right: "AlgebraExpr"


@dataclass(frozen=True)
class LeafPlan:
    """Evaluation form of a fully pushed-down branch: which model (possibly
    stage-truncated), which input, and which window."""

    model_ref: str
    input_ref: str
    stage: Optional[int] = FULL
    window: Optional[Window] = None


@dataclass(frozen=True)
class Leaf:
    plan: LeafPlan


AlgebraExpr = Union[Identity, Project, Select, Join, AntiJoin, Leaf]

VALIDATION_KINDS = (
    "window-mismatch",
    "layer-order",
    "mixed-join-antijoin",
    "undefined-composition",
    "unknown-ref",
    "shape-mismatch",
)

_REMEDIATION = {
    "window-mismatch": "apply the same window to both joined operands",
    "layer-order": "nest stage selections with the outer index <= the inner index",
    "mixed-join-antijoin": "do not compose join with anti-join; issue separate queries",
    "undefined-composition": "keep stage indices within the model's truncatable range",
    "unknown-ref": "bind the name to a registered model, input, or window first",
    "shape-mismatch": "use operands whose model and input shapes agree",
}


@dataclass(frozen=True)
class ValidationError:
    kind: str
    location: str
    message: str

    def __post_init__(self):
        if self.kind not in VALIDATION_KINDS:
            raise ValueError(f"unknown validation kind {self.kind!r}")

    @property
    def remediation(self) -> str:
        return _REMEDIATION[self.kind]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "location": self.location,
            "message": self.message,
            "remediation": self.remediation,
        }


class InvalidExpression(ValueError):
    """Raised by evaluate() when validation fails."""

    def __init__(self, errors: list[ValidationError]):
        self.errors = errors
        super().__init__("; ".join(f"{e.kind} at {e.location}: {e.message}" for e in errors))


class MissingTruncation(LookupError):
    """A stage-l leaf was requested but no truncated model is registered."""

    def __init__(self, model_ref: str, stage: int):
        self.model_ref = model_ref
        self.stage = stage
        super().__init__(
            f"no truncated model for {model_ref!r} at stage {stage}; "
            f"run truncate for this stage first"
        )


# ---------------------------------------------------------------------------
# Registry of named objects an expression may reference.


@dataclass
class Registry:
    models: dict[str, ModelSpec] = field(default_factory=dict)
    inputs: dict[str, Tensor] = field(default_factory=dict)
    truncated: dict[tuple[str, int], ModelSpec] = field(default_factory=dict)

    def add_model(self, ref: str, model: ModelSpec) -> None:
        self.models[ref] = model

    def add_input(self, ref: str, tensor: Tensor) -> None:
        self.inputs[ref] = tensor

    def add_truncated(self, ref: str, stage: int, model: ModelSpec) -> None:
        self.truncated[(ref, stage)] = model

    def resolve_model(self, plan: LeafPlan) -> ModelSpec:
        if plan.stage is FULL:
            return self.models[plan.model_ref]
        try:
            return self.truncated[(plan.model_ref, plan.stage)]
        except KeyError:
            raise MissingTruncation(plan.model_ref, plan.stage) from None


# ---------------------------------------------------------------------------
# Validation.


def validate(expr: AlgebraExpr, registry: Registry) -> list[ValidationError]:
    """All composition-rule violations in the tree; empty list means valid."""
    errors: list[ValidationError] = []
    _validate(expr, registry, "root", errors, outer_stage=None, in_join=False, in_anti=False)
    return errors


def _leaf_refs(expr: AlgebraExpr) -> tuple[Identity, ...] | tuple[Leaf, ...]:
    if isinstance(expr, (Identity, Leaf)):
        return (expr,)
    if isinstance(expr, (Project, Select)):
        return _leaf_refs(expr.child)
    return _leaf_refs(expr.left) + _leaf_refs(expr.right)


def _effective_window(expr: AlgebraExpr) -> Optional[frozenset[int]]:
    """Window a subtree's leaves end up with after pushdown; None = full."""
    if isinstance(expr, (Identity,)):
        return None
    if isinstance(expr, Leaf):
        return None if expr.plan.window is None else frozenset(expr.plan.window.indices)
    if isinstance(expr, Select):
        return _effective_window(expr.child)
    if isinstance(expr, Project):
        inner = _effective_window(expr.child)
        mine = frozenset(expr.window.indices)
        return mine if inner is None else inner & mine
    # join/anti-join: operands are checked for equality elsewhere
    return _effective_window(expr.left)


def _input_dim(expr: AlgebraExpr, registry: Registry) -> Optional[int]:
    for leaf in _leaf_refs(expr):
        ref = leaf.input_ref if isinstance(leaf, Identity) else leaf.plan.input_ref
        t = registry.inputs.get(ref)
        if t is not None:
            return t.size
    return None


def _materialize(win: Optional[frozenset[int]], dim: Optional[int]) -> Optional[frozenset[int]]:
    if win is None and dim is not None:
        return frozenset(range(dim))
    return win


def _validate(
    expr: AlgebraExpr,
    registry: Registry,
    path: str,
    errors: list[ValidationError],
    outer_stage: Optional[int],
    in_join: bool,
    in_anti: bool,
) -> None:
    if isinstance(expr, (Identity, Leaf)):
        model_ref = expr.model_ref if isinstance(expr, Identity) else expr.plan.model_ref
        input_ref = expr.input_ref if isinstance(expr, Identity) else expr.plan.input_ref
        model = registry.models.get(model_ref)
        tensor = registry.inputs.get(input_ref)
        if model is None:
            errors.append(ValidationError("unknown-ref", path, f"model {model_ref!r} is not registered"))
        if tensor is None:
            errors.append(ValidationError("unknown-ref", path, f"input {input_ref!r} is not registered"))
        if model is not None and tensor is not None and tensor.shape != model.input_shape:
            errors.append(
                ValidationError(
                    "shape-mismatch",
                    path,
                    f"input shape {tensor.shape} does not match model input {model.input_shape}",
                )
            )
        stage = outer_stage if not isinstance(expr, Leaf) else (
            expr.plan.stage if expr.plan.stage is not FULL else outer_stage
        )
        if model is not None and stage is not None and not 1 <= stage < model.num_stages:
            errors.append(
                ValidationError(
                    "undefined-composition",
                    path,
                    f"stage {stage} is outside the truncatable range 1..{model.num_stages - 1} "
                    f"of model {model_ref!r}",
                )
            )
        if tensor is not None:
            win = expr.plan.window if isinstance(expr, Leaf) else None
            if win is not None and win.indices and win.indices[-1] >= tensor.size:
                errors.append(
                    ValidationError(
                        "shape-mismatch",
                        path,
                        f"window index {win.indices[-1]} exceeds input dimension {tensor.size}",
                    )
                )
        return
    if isinstance(expr, Project):
        dim = _input_dim(expr, registry)
        if dim is not None and expr.window.indices and expr.window.indices[-1] >= dim:
            errors.append(
                ValidationError(
                    "shape-mismatch",
                    path,
                    f"window index {expr.window.indices[-1]} exceeds input dimension {dim}",
                )
            )
        _validate(expr.child, registry, path + ".child", errors, outer_stage, in_join, in_anti)
        return
    if isinstance(expr, Select):
        if outer_stage is not None and outer_stage > expr.stage:
            errors.append(
                ValidationError(
                    "layer-order",
                    path,
                    f"outer stage {outer_stage} > inner stage {expr.stage}: "
                    f"nested selection requires outer <= inner",
                )
            )
        effective = expr.stage if outer_stage is None else min(expr.stage, outer_stage)
        _validate(expr.child, registry, path + ".child", errors, effective, in_join, in_anti)
        return
    if isinstance(expr, (Join, AntiJoin)):
        is_join = isinstance(expr, Join)
        if (is_join and in_anti) or (not is_join and in_join):
            errors.append(
                ValidationError(
                    "mixed-join-antijoin",
                    path,
                    "compositions of join and anti-join are undefined",
                )
            )
        if is_join and expr.epsilon is not None and not 0.0 <= expr.epsilon <= 1.0:
            errors.append(
                ValidationError(
                    "undefined-composition", path, f"join weight {expr.epsilon} outside [0, 1]"
                )
            )
        lw = _materialize(_effective_window(expr.left), _input_dim(expr.left, registry))
        rw = _materialize(_effective_window(expr.right), _input_dim(expr.right, registry))
        if lw is not None and rw is not None and lw != rw:
            errors.append(
                ValidationError(
                    "window-mismatch",
                    path,
                    "join/anti-join operands carry different windows after pushdown",
                )
            )
        ldim = _input_dim(expr.left, registry)
        rdim = _input_dim(expr.right, registry)
        if ldim is not None and rdim is not None and ldim != rdim:
            errors.append(
                ValidationError(
                    "shape-mismatch",
                    path,
                    f"operand input dimensions differ: {ldim} vs {rdim}",
                )
            )
        _validate(expr.left, registry, path + ".left", errors, outer_stage,
                  in_join or is_join, in_anti or not is_join)
        _validate(expr.right, registry, path + ".right", errors, outer_stage,
                  in_join or is_join, in_anti or not is_join)
        return
    raise TypeError(f"not an algebra expression: {expr!r}")


# ---------------------------------------------------------------------------
# Normalization to canonical form.


def normalize(expr: AlgebraExpr) -> AlgebraExpr:
    """Push projections and selections to the leaves, intersect stacked
    windows, collapse stacked selections to the outer index, and
    right-associate join / anti-join chains. Idempotent."""
    return _right_associate(_pushdown(expr, window=None, stage=None))


def _pushdown(expr: AlgebraExpr, window: Optional[Window], stage: Optional[int]) -> AlgebraExpr:
    if isinstance(expr, Identity):
        return Leaf(LeafPlan(expr.model_ref, expr.input_ref, stage, window))
    if isinstance(expr, Leaf):
        win = expr.plan.window
        if window is not None:
            win = window if win is None else win.intersect(window)
        st = expr.plan.stage
        if stage is not None:
            st = stage if st is None else min(st, stage)
        return Leaf(LeafPlan(expr.plan.model_ref, expr.plan.input_ref, st, win))
    if isinstance(expr, Project):
        merged = expr.window if window is None else window.intersect(expr.window)
        return _pushdown(expr.child, merged, stage)
    if isinstance(expr, Select):
        merged = expr.stage if stage is None else min(stage, expr.stage)
        return _pushdown(expr.child, window, merged)
    if isinstance(expr, Join):
        return Join(
            _pushdown(expr.left, window, stage),
            _pushdown(expr.right, window, stage),
            expr.epsilon,
        )
    if isinstance(expr, AntiJoin):
        return AntiJoin(_pushdown(expr.left, window, stage), _pushdown(expr.right, window, stage))
    raise TypeError(f"not an algebra expression: {expr!r}")


def _right_associate(expr: AlgebraExpr) -> AlgebraExpr:
    if isinstance(expr, Leaf):
        return expr
    if isinstance(expr, Join):
        operands, epsilons = _flatten_join(expr)
        operands = [_right_associate(o) for o in operands]
        out = operands[-1]
        for o, e in zip(reversed(operands[:-1]), reversed(epsilons)):
            out = Join(o, out, e)
        return out
    if isinstance(expr, AntiJoin):
        operands = _flatten_anti(expr)
        operands = [_right_associate(o) for o in operands]
        out = operands[-1]
        for o in reversed(operands[:-1]):
            out = AntiJoin(o, out)
        return out
    raise TypeError(f"unnormalized node {expr!r} after pushdown")


def _flatten_join(expr: AlgebraExpr) -> tuple[list[AlgebraExpr], list[Optional[float]]]:
    """In-order operand and weight lists of a join chain."""
    if isinstance(expr, Join):
        lops, leps = _flatten_join(expr.left)
        rops, reps = _flatten_join(expr.right)
        return lops + rops, leps + [expr.epsilon] + reps
    return [expr], []


def _flatten_anti(expr: AlgebraExpr) -> list[AlgebraExpr]:
    if isinstance(expr, AntiJoin):
        return _flatten_anti(expr.left) + _flatten_anti(expr.right)
    return [expr]


# ---------------------------------------------------------------------------
# Evaluation.


def evaluate(
    expr: AlgebraExpr,
    cfg: BackendConfig,
    registry: Registry,
    baseline: Tensor | None = None,
) -> AttributionResult:
    """Validate, normalize, and compute. Deterministic given cfg.seed: leaf k
    of the normalized tree uses the (seed, k) substream."""
    errors = validate(expr, registry)
    if errors:
        raise InvalidExpression(errors)
    norm = normalize(expr)
    if isinstance(norm, Leaf):
        return AttributionResult.of(_eval_leaf(norm.plan, cfg, registry, baseline, ordinal=0))
    if isinstance(norm, Join):
        operands, epsilons = _flatten_join(norm)
        plans = [op.plan for op in operands]  # type: ignore[union-attr]
        maps = [
            _eval_leaf(plan, cfg, registry, baseline, ordinal=k) for k, plan in enumerate(plans)
        ]
        out = maps[-1]
        for m, eps in zip(reversed(maps[:-1]), reversed(epsilons)):
            out = join_maps(m, out, cfg.epsilon if eps is None else eps)
        return AttributionResult.of(out)
    if isinstance(norm, AntiJoin):
        plans = [op.plan for op in _flatten_anti(norm)]  # type: ignore[union-attr]
        return _eval_antijoin(plans, cfg, registry)
    raise TypeError(f"unexpected normalized node {norm!r}")


def _eval_leaf(
    plan: LeafPlan,
    cfg: BackendConfig,
    registry: Registry,
    baseline: Tensor | None,
    ordinal: int,
) -> AttributionMap:
    model = registry.resolve_model(plan)
    x = registry.inputs[plan.input_ref]
    return attribute(cfg, model, x, baseline, plan.window, seed=leaf_seed(cfg.seed, ordinal))


def _eval_antijoin(
    plans: list[LeafPlan], cfg: BackendConfig, registry: Registry
) -> AttributionResult:
    window = plans[0].window
    if len(plans) == 2 and _is_cross_model(plans):
        left, right = plans
        m = antijoin_cross_model(
            cfg,
            registry.resolve_model(left),
            registry.resolve_model(right),
            registry.inputs[left.input_ref],
            w=window,
            seed=leaf_seed(cfg.seed, 0),
        )
        return AttributionResult.of(m)
    models = [registry.resolve_model(p) for p in plans]
    xs = [registry.inputs[p.input_ref] for p in plans]
    seeds: list[SeedLike] = [leaf_seed(cfg.seed, k) for k in range(len(plans))]
    return antijoin_many(cfg, models, xs, window, seeds=seeds)


def _is_cross_model(plans: list[LeafPlan]) -> bool:
    a, b = plans
    same_input = a.input_ref == b.input_ref
    same_model = (a.model_ref, a.stage) == (b.model_ref, b.stage)
    return same_input and not same_model


# ---------------------------------------------------------------------------
# Serialization of expression trees (result metadata, session history).


def expr_to_dict(expr: AlgebraExpr) -> dict:
    if isinstance(expr, Identity):
        return {"op": "identity", "model": expr.model_ref, "input": expr.input_ref}
    if isinstance(expr, Leaf):
        d: dict = {"op": "leaf", "model": expr.plan.model_ref, "input": expr.plan.input_ref}
        if expr.plan.stage is not FULL:
            d["stage"] = expr.plan.stage
        if expr.plan.window is not None:
            d["window"] = expr.plan.window.to_dict()
        return d
    if isinstance(expr, Project):
        return {"op": "project", "window": expr.window.to_dict(), "child": expr_to_dict(expr.child)}
    if isinstance(expr, Select):
        return {"op": "select", "stage": expr.stage, "child": expr_to_dict(expr.child)}
    if isinstance(expr, Join):
        d = {"op": "join", "left": expr_to_dict(expr.left), "right": expr_to_dict(expr.right)}
        if expr.epsilon is not None:
            d["epsilon"] = expr.epsilon
        return d
    if isinstance(expr, AntiJoin):
        return {"op": "antijoin", "left": expr_to_dict(expr.left), "right": expr_to_dict(expr.right)}
    raise TypeError(f"not an algebra expression: {expr!r}")


def expr_from_dict(d: dict) -> AlgebraExpr:
    op = d["op"]
    if op == "identity":
        return Identity(d["model"], d["input"])
    if op == "leaf":
        window = d.get("window")
        return Leaf(
            LeafPlan(
                d["model"],
                d["input"],
                d.get("stage", FULL),
                None if window is None else Window(tuple(window["indices"]),
                                                   tuple(window["rect"]) if window.get("rect") else None),
            )
        )
    if op == "project":
        w = d["window"]
        return Project(
            expr_from_dict(d["child"]),
            Window(tuple(w["indices"]), tuple(w["rect"]) if w.get("rect") else None),
        )
    if op == "select":
        return Select(expr_from_dict(d["child"]), d["stage"])
    if op == "join":
        return Join(expr_from_dict(d["left"]), expr_from_dict(d["right"]), d.get("epsilon"))
    if op == "antijoin":
        return AntiJoin(expr_from_dict(d["left"]), expr_from_dict(d["right"]))
    raise ValueError(f"unknown expression op {op!r}")
