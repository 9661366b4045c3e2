import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attrql.attribution import (
    BackendConfig,
    Window,
    WindowError,
    antijoin,
    antijoin_cross_model,
    antijoin_many,
    attribute,
    identity_attr,
    integrated_gradients,
    join_maps,
    masked_input,
    resolve_target,
    select_attr,
    shapley_exact,
    shapley_sampled,
    smoothgrad,
)
from attrql.demo import (
    acceptance_input,
    acceptance_mlp,
    blobs_dataset,
    linear_model,
    random_input,
    random_mlp,
)
from attrql.oracles import (
    cross_model_coalition_bruteforce,
    game_value,
    shapley_permutation_bruteforce,
)
from attrql.runtime import Tensor, forward, gradient, truncate

ZERO6 = Tensor.zeros((6,))
W6 = Window.full(6)
EXACT = BackendConfig(backend="shapley-exact")


class TestMaskedInput:
    def test_empty_coalition_is_baseline(self):
        x, xbar = random_input(0, (4,)), random_input(1, (4,))
        assert masked_input(x, xbar, ()) == xbar

    def test_full_coalition_is_input(self):
        x, xbar = random_input(0, (4,)), random_input(1, (4,))
        assert masked_input(x, xbar, range(4)) == x

    def test_partial(self):
        x = Tensor((3,), np.array([1.0, 2.0, 3.0]))
        out = masked_input(x, Tensor.zeros((3,)), {0, 2})
        assert out.data.tolist() == [1.0, 0.0, 3.0]

    def test_index_out_of_range(self):
        x = Tensor((3,), np.ones(3))
        with pytest.raises(IndexError):
            masked_input(x, Tensor.zeros((3,)), {5})


class TestShapleyExact:
    def test_linear_closed_form(self):
        rng = np.random.Generator(np.random.PCG64(5))
        w = rng.normal(size=(3, 6))
        model = linear_model(w)
        x, xbar = random_input(2, (6,)), random_input(3, (6,))
        m = shapley_exact(model, x, xbar, 1, W6)
        assert np.allclose(m.values, w[1] * (x.data - xbar.data), atol=1e-12)

    def test_equal_input_and_baseline_gives_zero(self, fixture_mlps):
        x = acceptance_input(0)
        m = shapley_exact(fixture_mlps[0], x, x, 0, W6)
        assert np.all(m.values == 0.0)

    def test_matches_permutation_oracle(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[0], fixture_inputs[0]
        c = resolve_target(EXACT, model, x)
        fast = shapley_exact(model, x, ZERO6, c, W6)
        oracle = shapley_permutation_bruteforce(model, x, ZERO6, c, W6)
        assert np.allclose(fast.values, oracle.values, atol=1e-10)

    def test_window_restriction_matches_restricted_oracle(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[1], fixture_inputs[1]
        w = Window((0, 2, 5))
        c = resolve_target(EXACT, model, x)
        fast = shapley_exact(model, x, ZERO6, c, w)
        oracle = shapley_permutation_bruteforce(model, x, ZERO6, c, w)
        assert np.allclose(fast.values, oracle.values, atol=1e-10)
        outside = [i for i in range(6) if i not in w.indices]
        assert np.all(fast.values[outside] == 0.0)

    def test_efficiency(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[2], fixture_inputs[2]
        c = resolve_target(EXACT, model, x)
        for w in (W6, Window((1, 3, 4))):
            m = shapley_exact(model, x, ZERO6, c, w)
            expected = game_value(model, x, ZERO6, c, w.indices) - game_value(model, x, ZERO6, c, ())
            assert abs(m.values.sum() - expected) <= 1e-9

    def test_dummy_feature_gets_exact_zero(self):
        w = np.array([[1.0, 0.0, 2.0], [0.5, 0.0, -1.0]])
        model = linear_model(w)
        m = shapley_exact(model, random_input(0, (3,)), Tensor.zeros((3,)), 0, Window.full(3))
        assert m.values[1] == 0.0

    def test_window_size_guard(self):
        model = linear_model(np.ones((2, 16)))
        x = random_input(0, (16,))
        with pytest.raises(WindowError):
            shapley_exact(model, x, Tensor.zeros((16,)), 0, Window.full(16))


class TestShapleySampled:
    def test_close_to_exact_at_large_m(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[0], fixture_inputs[0]
        c = resolve_target(EXACT, model, x)
        exact = shapley_exact(model, x, ZERO6, c, W6)
        sampled = shapley_sampled(model, x, ZERO6, c, W6, 20000, seed=7)
        tol = 0.02 * (np.max(np.abs(exact.values)) + 1e-12)
        assert np.max(np.abs(sampled.values - exact.values)) <= tol

    def test_equal_input_and_baseline_gives_zero(self, fixture_mlps):
        x = acceptance_input(1)
        m = shapley_sampled(fixture_mlps[1], x, x, 0, W6, 5, seed=0)
        assert np.all(m.values == 0.0)

    def test_same_seed_bit_identical(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[3], fixture_inputs[3]
        a = shapley_sampled(model, x, ZERO6, 0, W6, 50, seed=123)
        b = shapley_sampled(model, x, ZERO6, 0, W6, 50, seed=123)
        assert a.values.tobytes() == b.values.tobytes()

    def test_unbiased_across_seeds(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[4], fixture_inputs[4]
        c = resolve_target(EXACT, model, x)
        exact = shapley_exact(model, x, ZERO6, c, W6)
        runs = np.stack([
            shapley_sampled(model, x, ZERO6, c, W6, 200, seed=s).values for s in range(50)
        ])
        mean = runs.mean(axis=0)
        se = runs.std(axis=0, ddof=1) / np.sqrt(runs.shape[0])
        assert np.all(np.abs(mean - exact.values) <= 3 * se + 1e-12)


class TestIntegratedGradients:
    def test_linear_closed_form_any_k(self):
        rng = np.random.Generator(np.random.PCG64(8))
        w = rng.normal(size=(2, 6))
        model = linear_model(w)
        x, xbar = random_input(4, (6,)), random_input(5, (6,))
        for k in (1, 3, 17):
            m = integrated_gradients(model, x, xbar, 0, k, W6)
            assert np.allclose(m.values, w[0] * (x.data - xbar.data), atol=1e-12)

    def test_zero_path(self, fixture_mlps):
        x = acceptance_input(2)
        m = integrated_gradients(fixture_mlps[2], x, x, 0, 10, W6)
        assert np.all(m.values == 0.0)

    def test_completeness(self, fixture_mlps, fixture_inputs):
        for model, x in zip(fixture_mlps, fixture_inputs):
            c = resolve_target(EXACT, model, x)
            m = integrated_gradients(model, x, ZERO6, c, 300, W6)
            delta = forward(model, x).data[c] - forward(model, ZERO6).data[c]
            assert abs(m.values.sum() - delta) <= 1e-3 * (abs(delta) + 1)

    def test_completeness_error_shrinks_with_k(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[0], fixture_inputs[0]
        c = resolve_target(EXACT, model, x)
        delta = forward(model, x).data[c] - forward(model, ZERO6).data[c]
        errs = {}
        for k in (10, 40, 160, 640):
            m = integrated_gradients(model, x, ZERO6, c, k, W6)
            errs[k] = abs(m.values.sum() - delta)
        for k in (40, 160, 640):
            assert errs[k] <= errs[k // 4] + 1e-12


class TestSmoothGrad:
    def test_sigma_zero_equals_gradient(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[0], fixture_inputs[0]
        for n in (1, 7):
            m = smoothgrad(model, x, 1, n, 0.0, seed=0, w=W6, xbar=ZERO6)
            assert np.array_equal(m.values, gradient(model, x, 1).data)

    def test_linear_model_gives_weight_row(self):
        rng = np.random.Generator(np.random.PCG64(9))
        w = rng.normal(size=(2, 6))
        model = linear_model(w)
        x = random_input(6, (6,))
        m = smoothgrad(model, x, 1, 25, 0.5, seed=3, w=W6, xbar=ZERO6)
        assert np.allclose(m.values, w[1], atol=1e-12)

    def test_two_seeds_agree_within_sampling_error(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[1], fixture_inputs[1]
        n, sigma = 2000, 0.1
        a = smoothgrad(model, x, 0, n, sigma, seed=11, w=W6, xbar=ZERO6)
        b = smoothgrad(model, x, 0, n, sigma, seed=12, w=W6, xbar=ZERO6)
        # empirical per-coordinate std error from a third, larger run
        rng = np.random.Generator(np.random.PCG64(99))
        from attrql.runtime import gradient_batch

        pts = x.data[None, :] + rng.normal(0, sigma, size=(4000, 6))
        grads = gradient_batch(model, pts.reshape(-1, 6), 0).reshape(4000, -1)
        se = grads.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(a.values - b.values) <= 3 * np.sqrt(2) * se + 1e-12)


class TestDispatchAndCombinators:
    def test_identity_uses_argmax_target(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[0], fixture_inputs[0]
        assert resolve_target(EXACT, model, x) == int(np.argmax(forward(model, x).data))
        fixed = BackendConfig(backend="shapley-exact", target_class=2)
        assert resolve_target(fixed, model, x) == 2

    def test_identity_zero_at_baseline_for_baseline_backends(self, fixture_mlps):
        x = acceptance_input(3)
        for backend in ("shapley-exact", "shapley-sampled", "integrated-gradients"):
            cfg = BackendConfig(backend=backend, samples=20, steps=5)
            m = attribute(cfg, fixture_mlps[3], x, x)
            assert np.all(m.values == 0.0), backend

    def test_select_attr_efficiency_against_truncated_model(self):
        model = random_mlp(4, in_dim=6, hidden=(8, 8), classes=2, scale=0.8)
        data = blobs_dataset(seed=3, n_per_class=60, centers=((2.0,) * 6, (-2.0,) * 6), sigma=0.8)
        f1 = truncate(model, 1, data)
        x = data.inputs[0]
        c = resolve_target(EXACT, f1, x)
        m = select_attr(BackendConfig(backend="shapley-exact", target_class=c), f1, x)
        expected = forward(f1, x).data[c] - forward(f1, ZERO6).data[c]
        assert abs(m.values.sum() - expected) <= 1e-9

    def test_join_maps(self):
        from attrql.attribution import AttributionMap

        m = AttributionMap((2,), [2.0, 0.0])
        m2 = AttributionMap((2,), [0.0, 2.0])
        assert join_maps(m, m2, 1.0) == m
        assert join_maps(m, m2, 0.0) == m2
        assert join_maps(m, m2, 0.5).values.tolist() == [1.0, 1.0]
        # bit-exact at dyadic weights, where 1 - (1 - eps) == eps in floats
        assert join_maps(m, m2, 0.25) == join_maps(m2, m, 0.75)
        assert join_maps(m, m2, 0.5) == join_maps(m2, m, 0.5)
        assert np.allclose(join_maps(m, m2, 0.3).values, join_maps(m2, m, 0.7).values, atol=1e-15)
        with pytest.raises(ValueError):
            join_maps(m, m2, 1.5)
        with pytest.raises(Exception):
            join_maps(m, AttributionMap((3,), [0.0, 0.0, 1.0]), 0.5)

    def test_antijoin_same_input_zero(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[0], fixture_inputs[0]
        res = antijoin(EXACT, model, x, x)
        assert np.all(res.left.values == 0.0)
        assert np.all(res.right.values == 0.0)

    def test_antijoin_left_is_identity_with_other_baseline(self, fixture_mlps, fixture_inputs):
        model = fixture_mlps[1]
        x, x2 = fixture_inputs[1], fixture_inputs[2]
        res = antijoin(EXACT, model, x, x2)
        direct = identity_attr(EXACT, model, x, x2)
        assert res.left == direct

    def test_antijoin_swap_symmetry(self, fixture_mlps, fixture_inputs):
        model = fixture_mlps[2]
        x, x2 = fixture_inputs[2], fixture_inputs[3]
        fwd = antijoin(EXACT, model, x, x2)
        rev = antijoin(EXACT, model, x2, x)
        assert fwd.left == rev.right and fwd.right == rev.left

    def test_antijoin_efficiency_left_map(self, fixture_mlps, fixture_inputs):
        model = fixture_mlps[3]
        x, x2 = fixture_inputs[3], fixture_inputs[4]
        res = antijoin(EXACT, model, x, x2)
        c = resolve_target(EXACT, model, x)
        expected = forward(model, x).data[c] - forward(model, x2).data[c]
        assert abs(res.left.values.sum() - expected) <= 1e-9

    def test_three_way_antijoin_reduces_pairwise(self, fixture_mlps, fixture_inputs):
        model = fixture_mlps[0]
        xs = fixture_inputs[:3]
        res = antijoin_many(EXACT, [model] * 3, xs)
        assert res.kind == "tuple" and len(res.maps) == 3
        # each map is the identity attribution against the mean of the others
        mean12 = Tensor((6,), (xs[1].data + xs[2].data) / 2.0)
        assert res.maps[0] == identity_attr(EXACT, model, xs[0], mean12)


class TestCrossModelAntiJoin:
    def test_same_model_reduces_to_plain_shapley(self, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[0], fixture_inputs[0]
        c = resolve_target(EXACT, model, x)
        cross = antijoin_cross_model(EXACT, model, model, x)
        plain = shapley_exact(model, x, ZERO6, c, W6)
        assert cross == plain

    def test_two_linear_models_match_coalition_oracle(self):
        rng = np.random.Generator(np.random.PCG64(21))
        f = linear_model(rng.normal(size=(2, 5)), name="f")
        f2 = linear_model(rng.normal(size=(2, 5)), name="f2")
        x = random_input(22, (5,))
        xbar = Tensor.zeros((5,))
        cross = antijoin_cross_model(EXACT, f, f2, x)
        c = resolve_target(EXACT, f, x)
        oracle = cross_model_coalition_bruteforce(f, f2, x, xbar, c, Window.full(5))
        assert np.allclose(cross.values, oracle.values, atol=1e-10)

    def test_sampled_variant_deterministic(self, fixture_mlps, fixture_inputs):
        cfg = BackendConfig(backend="shapley-sampled", samples=40, seed=5)
        a = antijoin_cross_model(cfg, fixture_mlps[0], fixture_mlps[1], fixture_inputs[0])
        b = antijoin_cross_model(cfg, fixture_mlps[0], fixture_mlps[1], fixture_inputs[0])
        assert a.values.tobytes() == b.values.tobytes()

    def test_sampled_variant_close_to_exact(self, fixture_mlps, fixture_inputs):
        exact = antijoin_cross_model(EXACT, fixture_mlps[0], fixture_mlps[1], fixture_inputs[0])
        cfg = BackendConfig(backend="shapley-sampled", samples=20000, seed=7)
        sampled = antijoin_cross_model(cfg, fixture_mlps[0], fixture_mlps[1], fixture_inputs[0])
        tol = 0.02 * (np.max(np.abs(exact.values)) + 1e-12)
        assert np.max(np.abs(sampled.values - exact.values)) <= tol

    def test_rejects_gradient_backends(self, fixture_mlps, fixture_inputs):
        cfg = BackendConfig(backend="integrated-gradients")
        with pytest.raises(ValueError, match="Shapley"):
            antijoin_cross_model(cfg, fixture_mlps[0], fixture_mlps[1], fixture_inputs[0])

    def test_rejects_incompatible_models(self, fixture_mlps):
        other = random_mlp(9, in_dim=4, hidden=(5,), classes=3)
        with pytest.raises(Exception):
            antijoin_cross_model(EXACT, fixture_mlps[0], other, acceptance_input(0))


BACKEND_CONFIGS = [
    BackendConfig(backend="shapley-exact"),
    BackendConfig(backend="shapley-sampled", samples=60, seed=4),
    BackendConfig(backend="integrated-gradients", steps=20),
    BackendConfig(backend="smoothgrad", noise_count=40, noise_sigma=0.2, seed=4),
]


@pytest.mark.parametrize("cfg", BACKEND_CONFIGS, ids=lambda c: c.backend)
class TestWindowProperties:
    def test_support_zero_outside_window(self, cfg, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[0], fixture_inputs[0]
        w = Window((1, 4))
        m = attribute(cfg, model, x, None, w)
        outside = [i for i in range(6) if i not in w.indices]
        assert np.all(m.values[outside] == 0.0)

    def test_locality_outside_window_is_irrelevant(self, cfg, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[1], fixture_inputs[1]
        w = Window((0, 2, 3))
        target = 1  # fixed so the argmax cannot change with the mutation
        cfg = BackendConfig(**{**cfg.to_dict(), "target_class": target})
        mutated = np.array(x.data)
        mutated[[1, 4, 5]] += 7.5
        m1 = attribute(cfg, model, x, None, w)
        m2 = attribute(cfg, model, Tensor(x.shape, mutated), None, w)
        assert m1.values.tobytes() == m2.values.tobytes()

    def test_determinism(self, cfg, fixture_mlps, fixture_inputs):
        model, x = fixture_mlps[2], fixture_inputs[2]
        a = attribute(cfg, model, x, None, Window((0, 1, 5)))
        b = attribute(cfg, model, x, None, Window((0, 1, 5)))
        assert a.values.tobytes() == b.values.tobytes()


@settings(max_examples=20, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=1000),
    size=st.integers(min_value=1, max_value=5),
)
def test_efficiency_property_random_models_and_windows(seed, size):
    rng = np.random.Generator(np.random.PCG64(seed))
    model = random_mlp(seed, in_dim=6, hidden=(7,), classes=2, scale=0.8)
    x = random_input(seed + 1, (6,))
    xbar = random_input(seed + 2, (6,))
    players = tuple(sorted(rng.choice(6, size=size, replace=False).tolist()))
    w = Window(players)
    c = int(rng.integers(0, 2))
    m = shapley_exact(model, x, xbar, c, w)
    expected = game_value(model, x, xbar, c, players) - game_value(model, x, xbar, c, ())
    assert abs(m.values.sum() - expected) <= 1e-9
