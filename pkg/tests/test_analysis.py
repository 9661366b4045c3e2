import numpy as np
import pytest

from attrql.analysis import (
    Edit,
    PowerIterationError,
    TransformError,
    apply_edit,
    deep_representation,
    nullify,
    spectral_signature,
    substitute,
    top_right_singular_vector,
    transform,
)
from attrql.attribution import Window, masked_input
from attrql.demo import blobs_dataset, planted_outlier_matrix, random_input, random_mlp
from attrql.runtime import Dataset, ShapeError, Tensor


class TestNullify:
    def test_full_window_gives_baseline(self):
        x, xbar = random_input(0, (4,)), random_input(1, (4,))
        assert nullify(x, Window.full(4), xbar) == xbar

    def test_empty_window_keeps_input(self):
        x, xbar = random_input(0, (4,)), random_input(1, (4,))
        assert nullify(x, Window(()), xbar) == x

    def test_partial(self):
        x = Tensor((3,), np.array([1.0, 2.0, 3.0]))
        out = nullify(x, Window((1,)), Tensor.zeros((3,)))
        assert out.data.tolist() == [1.0, 0.0, 3.0]

    def test_agrees_with_masked_input_complement(self):
        x, xbar = random_input(2, (6,)), random_input(3, (6,))
        w = Window((0, 2, 5))
        assert nullify(x, w, xbar) == masked_input(x, xbar, w.complement(6).indices)


class TestSubstitute:
    def test_empty_window(self):
        x, src = random_input(0, (4,)), random_input(1, (4,))
        assert substitute(x, Window(()), src) == x

    def test_full_window(self):
        x, src = random_input(0, (4,)), random_input(1, (4,))
        assert substitute(x, Window.full(4), src) == src

    def test_partial(self):
        x = Tensor((2,), np.array([1.0, 2.0]))
        src = Tensor((2,), np.array([9.0, 9.0]))
        assert substitute(x, Window((0,)), src).data.tolist() == [9.0, 2.0]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            substitute(random_input(0, (4,)), Window((0,)), random_input(1, (5,)))


class TestTransform:
    def test_scale_identity(self):
        x = random_input(0, (2, 3))
        assert transform(x, "scale", (1.0,)) == x

    def test_rotate_four_times_is_identity(self):
        x = random_input(1, (1, 4, 4))
        out = x
        for _ in range(4):
            out = transform(out, "rotate90", (1,))
        assert out == x

    def test_shift_zero_is_identity(self):
        x = random_input(2, (4, 4))
        assert transform(x, "shift", (0, 0)) == x

    def test_shift_fills_with_zero(self):
        x = Tensor((2, 2), np.array([1.0, 2.0, 3.0, 4.0]))
        out = transform(x, "shift", (1, 0)).as_array()
        assert out[0].tolist() == [0.0, 0.0]
        assert out[1].tolist() == [1.0, 2.0]

    def test_spatial_op_on_flat_input_rejected(self):
        with pytest.raises(TransformError):
            transform(random_input(0, (6,)), "rotate90", (1,))

    def test_edit_dataclass_invariants(self):
        with pytest.raises(ValueError):
            Edit(kind="substitute", window=Window((0,)))  # missing source
        with pytest.raises(ValueError):
            Edit(kind="transform", window=None)  # missing op
        edit = Edit(kind="nullify", window=Window((0, 1)))
        assert Edit.from_dict(edit.to_dict()) == edit

    def test_apply_edit_nullify_defaults_to_zero_baseline(self):
        x = Tensor((2,), np.array([5.0, 6.0]))
        out = apply_edit(x, Edit(kind="nullify", window=Window((0,))))
        assert out.data.tolist() == [0.0, 6.0]


class TestDeepRepresentation:
    def test_single_example_single_row(self):
        model = random_mlp(0, in_dim=4, hidden=(5, 6), classes=2)
        data = Dataset((random_input(0, (4,)),), (1,))
        mat = deep_representation(model, data, 1)
        assert mat.shape == (1, 6)

    def test_rows_match_stage_forward(self):
        from attrql.runtime import forward_to_stage

        model = random_mlp(1, in_dim=4, hidden=(5, 6), classes=2)
        data = Dataset(tuple(random_input(s, (4,)) for s in range(4)), (0, 1, 0, 1))
        mat = deep_representation(model, data, 0)
        rows = [i for i, y in enumerate(data.labels) if y == 0]
        for r, i in enumerate(rows):
            expected = forward_to_stage(model, data.inputs[i], model.num_stages - 1)
            assert np.array_equal(mat[r], expected.data)

    def test_empty_class_rejected(self):
        model = random_mlp(0, in_dim=4, hidden=(5,), classes=2)
        data = Dataset((random_input(0, (4,)),), (0,))
        with pytest.raises(ValueError):
            deep_representation(model, data, 1)


class TestSpectralSignature:
    def test_identical_rows_score_zero(self):
        mat = np.tile(np.arange(5.0), (10, 1))
        report = spectral_signature(mat)
        assert all(s == 0.0 for s in report.scores)
        assert report.flagged == ()

    def test_infinite_threshold_flags_nothing(self):
        mat, _ = planted_outlier_matrix(seed=0)
        report = spectral_signature(mat, k=float("inf"))
        assert report.flagged == ()

    def test_planted_outliers_flagged_exactly(self):
        mat, planted = planted_outlier_matrix(seed=0)
        report = spectral_signature(mat, k=1.5)
        assert list(report.flagged) == planted
        # direct verification: projections along the planted axis
        centered = mat - mat.mean(axis=0)
        direct = np.abs(centered[:, 0])
        m, s = direct.mean(), direct.std()
        assert set(np.nonzero(direct > m + 1.5 * s)[0].tolist()) == set(planted)

    def test_scores_invariant_under_sign_flip(self):
        mat, _ = planted_outlier_matrix(seed=1)
        centered = mat - mat.mean(axis=0)
        v, _ = top_right_singular_vector(centered)
        flipped = np.abs(centered @ -v)
        straight = np.abs(centered @ v)
        assert np.allclose(sorted(flipped), sorted(straight), atol=1e-9)

    def test_rayleigh_residual_small(self):
        mat, _ = planted_outlier_matrix(seed=2)
        centered = mat - mat.mean(axis=0)
        v, residual = top_right_singular_vector(centered)
        assert residual <= 1e-8
        av = centered.T @ (centered @ v)
        lam = v @ av
        assert np.linalg.norm(av - lam * v) / abs(lam) <= 1e-8

    def test_squared_scores_option(self):
        mat, planted = planted_outlier_matrix(seed=3)
        plain = spectral_signature(mat, squared=False)
        squared = spectral_signature(mat, squared=True)
        assert np.allclose(np.asarray(squared.scores), np.asarray(plain.scores) ** 2)

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            spectral_signature(np.ones((1, 3)))

    def test_flag_rule_matches_invariant(self):
        mat, _ = planted_outlier_matrix(seed=4)
        report = spectral_signature(mat, k=0.5)
        scores = np.asarray(report.scores)
        expected = {int(i) for i in np.nonzero(scores > report.mean + 0.5 * report.std)[0]}
        assert set(report.flagged) == expected
