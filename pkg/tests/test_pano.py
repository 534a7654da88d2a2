import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pagnet.pano import (
    column_offset,
    compare_canonical_choices,
    false_color,
    globals_to_locals,
    locals_to_globals,
    rotation_for_column,
    rotation_matrix,
)


def _random_normals(rng, h, w, void_fraction=0.1):
    n = rng.normal(size=(3, h, w))
    n /= np.linalg.norm(n, axis=0, keepdims=True)
    n[:, rng.random((h, w)) < void_fraction] = 0.0
    return n


def _column(n, x, v):
    out = np.zeros((3, 1, n))
    out[:, 0, x] = v
    return out


class TestAngles:
    def test_canonical_column_has_no_rotation(self):
        assert rotation_for_column(5, 5, 16) == 0.0

    def test_quarter_width_is_right_angle(self):
        assert rotation_for_column(4, 0, 16) == pytest.approx(math.pi / 2)

    def test_full_wrap(self):
        assert rotation_for_column(16, 0, 16) == 0.0

    def test_offsets_wrap_into_half_open_range(self):
        off = column_offset(np.arange(16), 3, 16)
        assert off.min() == -8 and off.max() == 7

    def test_width_must_be_positive(self):
        with pytest.raises(ValueError):
            column_offset(0, 0, 0)


class TestTransform:
    def test_round_trip(self, rng):
        n = _random_normals(rng, 5, 24)
        back = locals_to_globals(globals_to_locals(n, 7), 7)
        assert np.abs(back - n).max() < 1e-12

    def test_norm_and_vertical_preserved(self, rng):
        n = _random_normals(rng, 4, 20)
        out = globals_to_locals(n, 3)
        np.testing.assert_array_equal(out[2], n[2])
        assert np.abs(np.linalg.norm(out, axis=0) - np.linalg.norm(n, axis=0)).max() < 1e-15

    def test_vertical_normal_unchanged(self):
        n = np.zeros((3, 2, 12))
        n[2] = 1.0
        np.testing.assert_array_equal(globals_to_locals(n, 5), n)

    def test_void_passes_through(self, rng):
        n = _random_normals(rng, 3, 8, void_fraction=0.5)
        void = np.all(n == 0, axis=0)
        assert void.any()
        assert (globals_to_locals(n, 2)[:, void] == 0).all()

    def test_quarter_turn_matches_matrix(self):
        w, x0 = 16, 2
        x = x0 + w // 4
        out = globals_to_locals(_column(w, x, [1.0, 0.0, 0.0]), x0)[:, 0, x]
        want = rotation_matrix(math.pi / 2) @ np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(out, want, rtol=0, atol=1e-15)
        # counterclockwise turns x into +y
        np.testing.assert_allclose(out, [0.0, 1.0, 0.0], rtol=0, atol=1e-15)

    def test_non_unit_input_raises(self):
        with pytest.raises(ValueError):
            globals_to_locals(np.full((3, 1, 4), 0.5), 0)

    def test_canonical_column_out_of_range(self, rng):
        with pytest.raises(ValueError):
            globals_to_locals(_random_normals(rng, 1, 4), 4)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 64), st.integers(0, 63), st.integers(0, 2**31 - 1))
    def test_round_trip_property(self, w, x0, seed):
        x0 %= w
        n = _random_normals(np.random.default_rng(seed), 2, w)
        assert np.abs(locals_to_globals(globals_to_locals(n, x0), x0) - n).max() < 1e-12


class TestCanonicalChoice:
    def test_same_column(self, rng):
        assert compare_canonical_choices(_random_normals(rng, 3, 12), 4, 4) == 0.0

    def test_one_degree(self):
        n = np.zeros((3, 1, 360))
        n[0] = 1.0
        assert compare_canonical_choices(n, 0, 1) == pytest.approx(1.0, abs=1e-9)

    def test_vertical_components_shrink_the_gap(self, rng):
        w = 40
        n = rng.normal(size=(3, 3, w))
        n[2] = np.abs(n[2]) + 0.2
        n /= np.linalg.norm(n, axis=0, keepdims=True)
        bound = math.degrees(2 * math.pi * 3 / w)
        assert compare_canonical_choices(n, 0, 3) < bound


def test_false_color_endpoints():
    n = np.zeros((3, 1, 3))
    n[:, 0, 0] = [1, 0, 0]
    n[:, 0, 1] = [-1, 0, 0]
    img = false_color(n)
    assert img.shape == (1, 3, 3) and img.dtype == np.uint8
    assert img[0, 0, 0] == 255 and img[0, 1, 0] == 0 and img[0, 2, 0] == 128
