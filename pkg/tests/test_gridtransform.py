import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from scribbleseg.gridtransform import (FLIP, TRANSLATION, TransformSpec, apply_spatial,
                                       apply_transform_to_transition, build_computing_matrices,
                                       flat_permutation, sample_transform, translation_radius)
from scribbleseg.transition import compute_transition


def grids():
    return st.tuples(st.integers(1, 6), st.integers(1, 6))


def transforms(m, n):
    return st.one_of(
        st.just(TransformSpec.flip()),
        st.builds(TransformSpec.translation, st.integers(-(n - 1), n - 1), st.integers(-(m - 1), m - 1)),
    )


class TestTransformSpec:
    def test_flip_has_no_parameters(self):
        with pytest.raises(ValueError):
            TransformSpec(FLIP, dx=1)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            TransformSpec("rotate")

    def test_translation_must_fit_grid(self):
        phi = TransformSpec.translation(3, 0)
        phi.check_grid(2, 4)
        with pytest.raises(ValueError):
            phi.check_grid(2, 3)
        with pytest.raises(ValueError):
            build_computing_matrices(TransformSpec.translation(0, 2), 2, 5)

    def test_inverse(self):
        assert TransformSpec.translation(2, -1).inverse() == TransformSpec.translation(-2, 1)
        assert TransformSpec.flip().inverse() == TransformSpec.flip()

    def test_stride_scaling(self):
        assert TransformSpec.translation(16, -8).scaled_down(8) == TransformSpec.translation(2, -1)
        assert TransformSpec.translation(2, -1).scaled_up(8) == TransformSpec.translation(16, -8)
        with pytest.raises(ValueError):
            TransformSpec.translation(4, 0).scaled_down(8)


class TestApplySpatial:
    def test_translation_example(self):
        x = np.array([["a", "b", "c"]])[..., None]
        out = apply_spatial(x, TransformSpec.translation(1, 0))
        assert out[0, :, 0].tolist() == ["c", "a", "b"]

    def test_flip_involution(self, rng):
        x = rng.normal(size=(4, 5, 3))
        flip = TransformSpec.flip()
        assert np.array_equal(apply_spatial(apply_spatial(x, flip), flip), x)

    def test_zero_translation(self, rng):
        x = rng.normal(size=(4, 5, 3))
        assert np.array_equal(apply_spatial(x, TransformSpec.translation(0, 0)), x)

    def test_torch_matches_numpy(self, rng):
        x = rng.normal(size=(2, 3, 4, 5))
        for phi in (TransformSpec.flip(), TransformSpec.translation(-2, 1)):
            want = apply_spatial(x, phi, axes=(-2, -1))
            got = apply_spatial(torch.from_numpy(x), phi, axes=(-2, -1)).numpy()
            assert np.array_equal(got, want)


class TestComputingMatrices:
    def test_flip_1x2(self):
        cm = build_computing_matrices(TransformSpec.flip(), 1, 2)
        assert cm.t_r.tolist() == [[0, 1], [1, 0]]

    def test_flip_2x2_mapping(self):
        # (i, j) -> (i, n - 1 - j), enumerated by hand
        assert flat_permutation(TransformSpec.flip(), 2, 2).tolist() == [1, 0, 3, 2]

    def test_identity_translation(self):
        cm = build_computing_matrices(TransformSpec.translation(0, 0), 3, 4)
        assert np.array_equal(cm.t_r, np.eye(12))

    @given(grids().flatmap(lambda g: st.tuples(st.just(g), transforms(*g))))
    @settings(max_examples=60, deadline=None)
    def test_permutation_structure(self, case):
        (m, n), phi = case
        cm = build_computing_matrices(phi, m, n)
        assert set(np.unique(cm.t_r)) <= {0.0, 1.0}
        assert np.all(cm.t_r.sum(0) == 1) and np.all(cm.t_r.sum(1) == 1)
        assert np.array_equal(cm.t_c, cm.t_r.T)

    def test_flip_squares_to_identity(self):
        t = build_computing_matrices(TransformSpec.flip(), 3, 4).t_r
        assert np.array_equal(t @ t, np.eye(12))

    def test_opposite_translations_are_inverse(self):
        a = build_computing_matrices(TransformSpec.translation(2, -1), 3, 4).t_r
        b = build_computing_matrices(TransformSpec.translation(-2, 1), 3, 4).t_r
        assert np.array_equal(a @ b, np.eye(12))


class TestConjugation:
    def test_identity_leaves_p(self, rng):
        p = compute_transition(rng.normal(size=(3, 3, 2))).numpy()
        cm = build_computing_matrices(TransformSpec.translation(0, 0), 3, 3)
        assert np.array_equal(apply_transform_to_transition(p, cm), p)

    @given(grids().flatmap(lambda g: st.tuples(st.just(g), transforms(*g), st.integers(0, 2**31))))
    @settings(max_examples=80, deadline=None)
    def test_identity_holds(self, case):
        (m, n), phi, seed = case
        f = np.random.default_rng(seed).normal(size=(m, n, 4))
        cm = build_computing_matrices(phi, m, n)
        p = compute_transition(f).numpy()
        moved = apply_transform_to_transition(p, cm)
        direct = compute_transition(apply_spatial(f, phi)).numpy()
        assert np.abs(moved - direct).max() < 1e-6
        assert np.trace(moved) == pytest.approx(np.trace(p), abs=1e-12)
        assert np.abs(moved.sum(1) - 1).max() < 1e-9
        ev_a = np.sort(np.linalg.eigvals(p).real)
        ev_b = np.sort(np.linalg.eigvals(moved).real)
        assert np.abs(ev_a - ev_b).max() < 1e-8

    def test_batched_torch(self, rng):
        f = torch.from_numpy(rng.normal(size=(2, 3, 4, 5)))
        p = compute_transition(f)
        cm = build_computing_matrices(TransformSpec.flip(), 3, 4)
        moved = apply_transform_to_transition(p, cm)
        assert moved.shape == p.shape
        for b in range(2):
            assert torch.equal(moved[b], apply_transform_to_transition(p[b], cm))

    def test_shape_mismatch(self, rng):
        cm = build_computing_matrices(TransformSpec.flip(), 2, 2)
        with pytest.raises(ValueError):
            apply_transform_to_transition(np.eye(9), cm)


class TestSampling:
    def test_radius(self):
        assert translation_radius(8, 8) == 2
        assert translation_radius(5, 9) == 2

    def test_modes(self):
        rng = np.random.default_rng(0)
        kinds = {sample_transform(rng, "random", 8, 8).kind for _ in range(50)}
        assert kinds == {FLIP, TRANSLATION}
        for _ in range(50):
            phi = sample_transform(rng, "translation", 8, 8)
            assert abs(phi.dx) <= 2 and abs(phi.dy) <= 2
        assert sample_transform(rng, "flip", 8, 8).kind == FLIP
