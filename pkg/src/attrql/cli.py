"""Command-line shell: batch queries, stage truncation, spectral reports,
exact-Shapley oracle dumps, heatmap rendering, and the HTTP service.

Exit codes: 0 success, 1 I/O or file-format failure, 2 validation failure
(bad query, composition-rule violation, out-of-range stage, bad window).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import analysis, oracles, qlang, render
from .algebra import InvalidExpression, Registry, evaluate, expr_to_dict, normalize, validate
from .attribution import BackendConfig, Window, WindowError, resolve_target
from .qlang import BindingError, Bindings, LexError, ParseError
from .runtime import (
    Dataset,
    HeadTrainingConfig,
    ModelSpec,
    ShapeError,
    StageError,
    Tensor,
    forward_batch,
    head_accuracy,
    truncate,
)
from .store import result_to_dict

DEFAULT_STORE = os.environ.get("ATTRQL_STORE", os.path.join(os.path.expanduser("~"), ".attrql-store"))

VALIDATION_ERRORS = (
    InvalidExpression,
    ParseError,
    LexError,
    BindingError,
    WindowError,
    StageError,
    analysis.TransformError,
)


class CliIOError(Exception):
    pass


def _load_json(path: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise CliIOError(f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CliIOError(f"malformed JSON in {path}: {e}") from None


def _load_model(path: str) -> ModelSpec:
    try:
        return ModelSpec.from_dict(_load_json(path))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CliIOError):
            raise
        raise CliIOError(f"bad model file {path}: {e}") from None


def _load_tensor(path: str) -> Tensor:
    try:
        return Tensor.from_dict(_load_json(path))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CliIOError):
            raise
        raise CliIOError(f"bad tensor file {path}: {e}") from None


def _load_dataset(path: str) -> Dataset:
    try:
        return Dataset.from_dict(_load_json(path))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CliIOError):
            raise
        raise CliIOError(f"bad dataset file {path}: {e}") from None


def _write_json(path: str, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def _parse_named(values: list[str], default_name: str, what: str) -> list[tuple[str, str]]:
    """ [NAME=]PATH flags; the first unnamed one gets the default name."""
    out = []
    used_default = False
    for v in values:
        if "=" in v:
            name, path = v.split("=", 1)
        else:
            if used_default:
                raise CliIOError(f"only one unnamed --{what} allowed; use NAME=PATH")
            name, path = default_name, v
            used_default = True
        out.append((name, path))
    return out


def _parse_window_flag(spec: str, shape: tuple[int, ...]) -> tuple[str, Window]:
    """NAME=rect:r0,c0,r1,c1 or NAME=idx:i,j,k (flat indices)."""
    if "=" not in spec:
        raise CliIOError(f"window flag needs NAME=...: {spec!r}")
    name, body = spec.split("=", 1)
    if body.startswith("rect:"):
        try:
            r0, c0, r1, c1 = (int(t) for t in body[len("rect:"):].split(","))
        except ValueError:
            raise CliIOError(f"bad rect window {body!r}") from None
        return name, Window.from_rect(shape, r0, c0, r1, c1)
    if body.startswith("idx:"):
        try:
            idx = tuple(int(t) for t in body[len("idx:"):].split(","))
        except ValueError:
            raise CliIOError(f"bad index window {body!r}") from None
        return name, Window(idx)
    raise CliIOError(f"window {spec!r} must use rect: or idx:")


def _backend_config(args: argparse.Namespace) -> BackendConfig:
    return BackendConfig(
        backend=args.backend,
        samples=args.samples,
        steps=args.steps,
        noise_sigma=args.noise_sigma,
        noise_count=args.noise_count,
        seed=args.seed,
        epsilon=args.epsilon,
        target_class=args.target_class,
    )


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", default="shapley-sampled",
                   choices=["shapley-exact", "shapley-sampled", "integrated-gradients", "smoothgrad"])
    p.add_argument("--samples", type=int, default=2000, help="permutations for shapley-sampled")
    p.add_argument("--steps", type=int, default=50, help="path steps for integrated-gradients")
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--noise-count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.5, help="join weight")
    p.add_argument("--target-class", type=int, default=None)


def cmd_query(args: argparse.Namespace) -> int:
    registry = Registry()
    bindings = Bindings()
    first_shape: tuple[int, ...] | None = None
    for name, path in _parse_named(args.model, "f", "model"):
        registry.add_model(name, _load_model(path))
        bindings.bind_model(name, name)
    for name, path in _parse_named(args.input, "x", "input"):
        t = _load_tensor(path)
        registry.add_input(name, t)
        bindings.bind_input(name, name)
        if first_shape is None:
            first_shape = t.shape
    for spec in args.window or []:
        if first_shape is None:
            raise CliIOError("--window needs at least one --input")
        name, window = _parse_window_flag(spec, first_shape)
        bindings.bind_window(name, window)
    for spec in args.truncated or []:
        # NAME:STAGE=PATH registers a pre-truncated model for stage queries
        try:
            head, path = spec.split("=", 1)
            name, stage = head.rsplit(":", 1)
            registry.add_truncated(name, int(stage), _load_model(path))
        except ValueError:
            raise CliIOError(f"bad --truncated flag {spec!r}; use NAME:STAGE=PATH") from None
    baseline = _load_tensor(args.baseline) if args.baseline else None
    cfg = _backend_config(args)

    ast = qlang.parse_text(args.query)
    expr = qlang.lower(ast, bindings, registry)
    errors = validate(expr, registry)
    if errors:
        raise InvalidExpression(errors)
    start = time.perf_counter()
    result = evaluate(expr, cfg, registry, baseline)
    elapsed_ms = 1000.0 * (time.perf_counter() - start)
    meta = {
        "query": qlang.print_query(ast),
        "expr": expr_to_dict(normalize(expr)),
        "backend": cfg.to_dict(),
        "seed": cfg.seed,
    }
    payload = result_to_dict(result, meta)
    _write_json(args.out, payload)
    if args.heatmap:
        render.render_result(result, args.heatmap)
    print(f"wrote {args.out} ({result.kind}, {elapsed_ms:.1f} ms)")
    return 0


def cmd_truncate(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    data = _load_dataset(args.dataset)
    hyper = HeadTrainingConfig(epochs=args.epochs, learning_rate=args.learning_rate,
                               seed=args.train_seed)
    truncated = truncate(model, args.stage, data, hyper)
    feats = forward_batch(truncated, data.stacked(), upto_layer=len(truncated.layers) - 2)
    head = truncated.layers[-1]
    acc = head_accuracy(head, [Tensor.from_array(f) for f in feats], list(data.labels))
    _write_json(args.out, truncated.to_dict())
    print(f"truncated {model.name} at stage {args.stage}; head training accuracy: {acc:.4f}")
    return 0


def cmd_spectral(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    data = _load_dataset(args.dataset)
    reps = analysis.deep_representation(model, data, args.class_index)
    report = analysis.spectral_signature(reps, k=args.threshold, squared=args.squared)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as f:
        json.dump(report.to_dict(), f, sort_keys=True)
        f.write("\n")
    print(f"scored {len(report.scores)} examples; flagged {len(report.flagged)}: "
          f"{list(report.flagged)}")
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    x = _load_tensor(args.input)
    xbar = _load_tensor(args.baseline) if args.baseline else Tensor.zeros(x.shape)
    if args.window:
        _, window = _parse_window_flag(f"w={args.window}", x.shape)
    else:
        window = Window.full(x.size)
    cfg = BackendConfig(backend="shapley-exact", target_class=args.target_class)
    c = resolve_target(cfg, model, x)
    m = oracles.shapley_permutation_bruteforce(model, x, xbar, c, window)
    _write_json(args.out, {
        "shape": list(m.shape),
        "kind": "single",
        "values": m.values.tolist(),
        "meta": {"backend": "permutation-oracle", "target_class": c,
                 "window": window.to_dict()},
    })
    print(f"wrote {args.out} (target class {c}, {len(window)} features)")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    from .store import result_from_dict

    payload = _load_json(args.result)
    try:
        result = result_from_dict(payload)
    except (KeyError, TypeError, ValueError) as e:
        raise CliIOError(f"bad result file {args.result}: {e}") from None
    render.render_result(result, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.store)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attrql",
                                description="attribution queries over small neural nets")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("query", help="run one declarative query")
    q.add_argument("--model", action="append", required=True, metavar="[NAME=]PATH",
                   help="model file; default name f")
    q.add_argument("--input", action="append", required=True, metavar="[NAME=]PATH",
                   help="input tensor file; default name x")
    q.add_argument("--window", action="append", metavar="NAME=rect:R0,C0,R1,C1|idx:I,J,...",
                   help="bind a window name")
    q.add_argument("--truncated", action="append", metavar="NAME:STAGE=PATH",
                   help="register a pre-truncated model for stage queries")
    q.add_argument("--baseline", help="baseline tensor file (default all-zero)")
    q.add_argument("--query", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--heatmap", help="also render a PGM heatmap here")
    _add_backend_flags(q)
    q.set_defaults(func=cmd_query)

    t = sub.add_parser("truncate", help="truncate a model at a stage and retrain the head")
    t.add_argument("--model", required=True)
    t.add_argument("--dataset", required=True)
    t.add_argument("--stage", type=int, required=True)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--learning-rate", type=float, default=0.05)
    t.add_argument("--train-seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_truncate)

    s = sub.add_parser("spectral", help="spectral outlier report for one class")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--class-index", type=int, required=True)
    s.add_argument("--threshold", type=float, default=1.5, help="std-dev multiplier k")
    s.add_argument("--squared", action="store_true", help="square projection scores")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectral)

    o = sub.add_parser("oracle", help="brute-force exact-Shapley dump for fixtures")
    o.add_argument("--model", required=True)
    o.add_argument("--input", required=True)
    o.add_argument("--baseline")
    o.add_argument("--target-class", type=int, default=None)
    o.add_argument("--window", metavar="rect:R0,C0,R1,C1|idx:I,J,...")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_oracle)

    r = sub.add_parser("render", help="render a stored result file to PGM")
    r.add_argument("--result", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    v = sub.add_parser("serve", help="run the HTTP workbench service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8321)
    v.add_argument("--store", default=DEFAULT_STORE)
    v.set_defaults(func=cmd_serve)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 2
    except (ValueError, IndexError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 2
    except CliIOError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
