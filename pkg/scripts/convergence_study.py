#!/usr/bin/env python3
"""Numerical study on the d=6 fixtures: sampled-Shapley error against the
exact values as the permutation budget grows, and path-integral completeness
error as the step count grows."""

import argparse

import numpy as np

from attrql.attribution import (
    BackendConfig,
    Window,
    integrated_gradients,
    resolve_target,
    shapley_exact,
    shapley_sampled,
)
from attrql.demo import acceptance_input, acceptance_mlp
from attrql.runtime import Tensor, forward


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fixtures", type=int, default=5)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    cfg = BackendConfig(backend="shapley-exact")
    zero = Tensor.zeros((6,))
    w = Window.full(6)

    print("sampled-Shapley max-abs error relative to max|exact|")
    print(f"{'M':>8} " + " ".join(f"fix{i:>6}" for i in range(args.fixtures)))
    for m_budget in (100, 400, 1600, 6400, 25600):
        row = []
        for seed in range(args.fixtures):
            model, x = acceptance_mlp(seed), acceptance_input(seed)
            c = resolve_target(cfg, model, x)
            exact = shapley_exact(model, x, zero, c, w)
            sampled = shapley_sampled(model, x, zero, c, w, m_budget, seed=args.seed)
            scale = np.max(np.abs(exact.values)) + 1e-12
            row.append(np.max(np.abs(sampled.values - exact.values)) / scale)
        print(f"{m_budget:>8} " + " ".join(f"{v:9.2e}" for v in row))

    print("\npath-integral completeness error |sum(map) - delta_logit|")
    print(f"{'K':>8} " + " ".join(f"fix{i:>6}" for i in range(args.fixtures)))
    for k in (10, 40, 160, 640):
        row = []
        for seed in range(args.fixtures):
            model, x = acceptance_mlp(seed), acceptance_input(seed)
            c = resolve_target(cfg, model, x)
            ig = integrated_gradients(model, x, zero, c, k, w)
            delta = forward(model, x).data[c] - forward(model, zero).data[c]
            row.append(abs(ig.values.sum() - delta))
        print(f"{k:>8} " + " ".join(f"{v:9.2e}" for v in row))


if __name__ == "__main__":
    main()
