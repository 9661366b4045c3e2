"""Brute-force reference implementations, kept deliberately independent of
the production kernels. Tests compare the fast paths against these; the CLI
`oracle` subcommand dumps them for fixture generation.

Everything here is exponential or factorial in the window size, so callers
are capped at very small windows.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .attribution import AttributionMap, Window, masked_input
from .runtime import ModelSpec, Tensor, forward

PERMUTATION_ORACLE_LIMIT = 8


def game_value(model: ModelSpec, x: Tensor, xbar: Tensor, c: int, coalition) -> float:
    """v(S) = logit_c of the baseline with x substituted on S."""
    return float(forward(model, masked_input(x, xbar, tuple(coalition))).data[c])


def shapley_permutation_bruteforce(
    model: ModelSpec, x: Tensor, xbar: Tensor, c: int, w: Window
) -> AttributionMap:
    """Average marginal contribution over every permutation of the window."""
    players = w.indices
    m = len(players)
    if m > PERMUTATION_ORACLE_LIMIT:
        raise ValueError(f"permutation oracle capped at {PERMUTATION_ORACLE_LIMIT} features, got {m}")
    totals = {i: 0.0 for i in players}
    for perm in itertools.permutations(players):
        coalition: list[int] = []
        prev = game_value(model, x, xbar, c, coalition)
        for i in perm:
            coalition.append(i)
            cur = game_value(model, x, xbar, c, coalition)
            totals[i] += cur - prev
            prev = cur
    n_perms = math.factorial(m)
    values = np.zeros(x.size)
    for i in players:
        values[i] = totals[i] / n_perms
    return AttributionMap(x.shape, values)


def cross_model_coalition_bruteforce(
    model: ModelSpec,
    model2: ModelSpec,
    x: Tensor,
    xbar: Tensor,
    c: int,
    w: Window,
) -> AttributionMap:
    """Direct size-averaged coalition enumeration of the two-model marginal:
    for each feature, average over coalition sizes k of the mean over all
    k-subsets of the remaining window of f_c(S + i) - f2_c(S)."""
    players = w.indices
    m = len(players)
    if m > PERMUTATION_ORACLE_LIMIT:
        raise ValueError(f"coalition oracle capped at {PERMUTATION_ORACLE_LIMIT} features, got {m}")
    values = np.zeros(x.size)
    for i in players:
        rest = [p for p in players if p != i]
        size_means = []
        for k in range(m):
            terms = [
                game_value(model, x, xbar, c, subset + (i,))
                - game_value(model2, x, xbar, c, subset)
                for subset in itertools.combinations(rest, k)
            ]
            size_means.append(sum(terms) / len(terms))
        values[i] = sum(size_means) / m
    return AttributionMap(x.shape, values)


def mlp_reference_logits(
    weights: list[np.ndarray], biases: list[np.ndarray], x: np.ndarray
) -> np.ndarray:
    """Straight-line evaluation of a relu MLP with explicit python loops,
    for checking the vectorized forward pass."""
    h = [float(v) for v in x]
    for li, (wmat, bvec) in enumerate(zip(weights, biases)):
        out = []
        for r in range(wmat.shape[0]):
            acc = float(bvec[r])
            for col in range(wmat.shape[1]):
                acc += float(wmat[r, col]) * h[col]
            out.append(acc)
        if li < len(weights) - 1:
            out = [v if v > 0.0 else 0.0 for v in out]
        h = out
    return np.array(h)
