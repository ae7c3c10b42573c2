"""
Tests for the elementwise vector-logic connectives
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modules.autodiff import Tape
from modules.errors import LogicRangeError, ShapeError
from modules.vector_logic import (
    MatrixLogic, apply_connective, as_truth, vand, vimpl, vmax, vmin, vnot, vor, vxor,
)

GRID = np.linspace(0.0, 1.0, 11)

truth = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


def test_boolean_truth_tables():
    a = [1.0, 1.0, 0.0, 0.0]
    b = [1.0, 0.0, 1.0, 0.0]
    assert np.array_equal(vand([a, b]), [1, 0, 0, 0])
    assert np.array_equal(vor([a, b]), [1, 1, 1, 0])
    assert np.array_equal(vimpl(a, b), [1, 0, 1, 1])
    assert np.array_equal(vxor(a, b), [0, 1, 1, 0])
    assert np.array_equal(vnot(a), [0, 0, 1, 1])


def test_half_truth():
    half = [0.5]
    assert vand([half, half])[0] == pytest.approx(0.25)
    assert vor([half, half])[0] == pytest.approx(0.75)
    assert vimpl(half, half)[0] == pytest.approx(0.75)
    assert vxor(half, half)[0] == pytest.approx(0.5)
    assert vnot(half)[0] == pytest.approx(0.5)


def test_nary_or_matches_inclusion_exclusion():
    a, b, c = [0.2], [0.5], [0.7]
    expected = 0.2 + 0.5 + 0.7 - 0.2 * 0.5 - 0.2 * 0.7 - 0.5 * 0.7 + 0.2 * 0.5 * 0.7
    assert vor([a, b, c])[0] == pytest.approx(expected)
    assert vand([a, b, c])[0] == pytest.approx(0.07)


@pytest.mark.parametrize("name,fn", [
    ("and", lambda a, b: vand([[a], [b]])[0]),
    ("or", lambda a, b: vor([[a], [b]])[0]),
    ("impl", lambda a, b: vimpl([a], [b])[0]),
    ("xor", lambda a, b: vxor([a], [b])[0]),
])
def test_matches_matrix_form_on_grid(name, fn):
    oracle = MatrixLogic()
    for a in GRID:
        for b in GRID:
            assert abs(fn(a, b) - oracle.truth(name, a, b)) < 1e-12, (name, a, b)


def test_not_matches_matrix_form():
    oracle = MatrixLogic(dim=3)
    for a in GRID:
        assert abs(vnot([a])[0] - oracle.truth("not", a)) < 1e-12
        assert oracle.truth("identity", a) == pytest.approx(a)


def test_out_of_range_inputs_are_rejected():
    with pytest.raises(LogicRangeError):
        as_truth([0.5, 1.2])
    with pytest.raises(LogicRangeError):
        vand([[-0.1], [0.5]])
    with pytest.raises(LogicRangeError):
        vnot([float("nan")])


def test_shape_mismatch_between_literals():
    with pytest.raises(ShapeError):
        vor([[0.1, 0.2], [0.3]])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(truth, truth), min_size=1, max_size=8))
def test_connectives_stay_in_unit_interval(pairs):
    a = [p[0] for p in pairs]
    b = [p[1] for p in pairs]
    for out in (vand([a, b]), vor([a, b]), vimpl(a, b), vxor(a, b), vnot(a), vmin([a, b]), vmax([a, b])):
        assert np.all(out >= 0.0) and np.all(out <= 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(truth, min_size=2, max_size=5))
def test_de_morgan(values):
    xs = [[v] for v in values]
    left = vnot(vand(xs))
    right = vor([vnot(x) for x in xs])
    assert left[0] == pytest.approx(right[0], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(truth, min_size=3, max_size=3), min_size=2, max_size=5), st.data())
def test_nary_connectives_ignore_input_order(vectors, data):
    order = data.draw(st.permutations(range(len(vectors))))
    shuffled = [vectors[i] for i in order]
    for fn in (vand, vor):
        assert np.allclose(fn(shuffled), fn(vectors), rtol=0.0, atol=1e-12)
    for fn in (vmin, vmax):
        assert np.array_equal(fn(shuffled), fn(vectors))


def test_node_path_matches_numpy_path():
    rng = np.random.default_rng(4)
    a, b = rng.random((3, 5)), rng.random((3, 5))
    tape = Tape()
    na, nb = tape.constant(a), tape.constant(b)
    assert np.allclose(vand([na, nb]).value, vand([a, b]))
    assert np.allclose(vor([na, nb]).value, vor([a, b]))
    assert np.allclose(vimpl(na, nb).value, vimpl(a, b))
    assert np.allclose(vxor(na, nb).value, vxor(a, b))
    assert np.allclose(vnot(na).value, vnot(a))
    assert np.allclose(vmin([na, nb]).value, vmin([a, b]))
    assert np.allclose(vmax([na, nb]).value, vmax([a, b]))


def test_apply_connective_checks_arity():
    assert apply_connective("and", [[1.0], [0.5], [0.5]])[0] == pytest.approx(0.25)
    assert apply_connective("not", [[0.25]])[0] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        apply_connective("not", [[0.1], [0.2]])
    with pytest.raises(ValueError):
        apply_connective("impl", [[0.1]])
    with pytest.raises(ValueError):
        apply_connective("and", [[0.1]])
    with pytest.raises(ValueError):
        apply_connective("nand", [[0.1], [0.2]])


def test_matrix_logic_needs_two_dimensions():
    with pytest.raises(ValueError):
        MatrixLogic(dim=1)
