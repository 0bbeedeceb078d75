import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jagged_flash.core import (
    Jagged2Tensor,
    JaggedTensor,
    LengthDistribution,
    ShapeError,
    dense_to_jagged,
    dense_to_jagged2,
    elementwise,
    gen_lengths,
    jagged2_to_dense,
    jagged_to_dense,
    make_jagged,
    negate,
)


def test_make_jagged_offsets():
    x = make_jagged([2, 1], [1, 2, 3, 4, 5, 6], dim=2)
    assert x.offsets.tolist() == [0, 2, 3]
    assert x.values.tolist() == [[1, 2], [3, 4], [5, 6]]
    assert x.segment(1).tolist() == [[5, 6]]


def test_make_jagged_empty():
    x = make_jagged([0, 0], [], dim=4)
    assert x.offsets.tolist() == [0, 0, 0]
    assert x.values.shape == (0, 4)
    assert x.dim == 4


def test_make_jagged_size_mismatch():
    with pytest.raises(ShapeError, match="expected 3"):
        make_jagged([3], [1.0, 2.0], dim=1)


@pytest.mark.parametrize(
    "offsets",
    [[1, 2], [0, 2, 1], [0, 5]],
)
def test_invalid_offsets(offsets):
    with pytest.raises(ShapeError):
        JaggedTensor(np.zeros((2, 1)), offsets)


def test_values_are_read_only():
    x = make_jagged([2], [1.0, 2.0], dim=1)
    with pytest.raises(ValueError):
        x.values[0, 0] = 5.0


def test_jagged_to_dense_pads():
    x = make_jagged([2, 1], [1, 2, 3], dim=1)
    d = jagged_to_dense(x, 2, 0.0)
    assert d[..., 0].tolist() == [[1, 2], [3, 0]]


def test_jagged_to_dense_truncates():
    x = make_jagged([3], [1, 2, 3], dim=1)
    assert jagged_to_dense(x, 2)[..., 0].tolist() == [[1, 2]]


def test_jagged_to_dense_zero_len():
    x = make_jagged([2, 1], np.arange(9.0), dim=3)
    assert jagged_to_dense(x, 0).shape == (2, 0, 3)


def test_dense_to_jagged_inverse_example():
    d = np.array([[1, 2], [3, 0]], dtype=float)[..., None]
    x = dense_to_jagged(d, [2, 1])
    assert x.offsets.tolist() == [0, 2, 3]
    assert x.values.ravel().tolist() == [1, 2, 3]


def test_dense_to_jagged_bounds():
    with pytest.raises(ShapeError, match="sample 0"):
        dense_to_jagged(np.zeros((1, 2, 1)), [3])


def test_jagged2_dense_examples():
    s = Jagged2Tensor([1], [7.0])
    assert jagged2_to_dense(s, 2).tolist() == [[[7, 0], [0, 0]]]
    s = Jagged2Tensor([0, 2], [1.0, 2.0, 3.0, 4.0])
    d = jagged2_to_dense(s, 2, pad_value=-1.0)
    assert (d[0] == -1.0).all()
    assert d[1].tolist() == [[1, 2], [3, 4]]
    back = dense_to_jagged2(d, [0, 2])
    assert back.values.tolist() == [1, 2, 3, 4]
    with pytest.raises(ShapeError, match="sample 1"):
        dense_to_jagged2(d, [0, 3])


def test_jagged2_size_check():
    with pytest.raises(ShapeError):
        Jagged2Tensor([2], [1.0, 2.0, 3.0])


def test_elementwise_examples():
    rng = np.random.default_rng(0)
    x = make_jagged([2, 0, 3], rng.standard_normal(10), dim=2)
    z = elementwise("add", x, negate(x))
    assert (z.values == 0).all()
    assert z.offsets.tolist() == x.offsets.tolist()
    assert np.array_equal(elementwise("scale", x, 1.0).values, x.values)
    assert np.array_equal(elementwise("mul", x, 2.0).values, 2 * x.values)
    assert np.array_equal(elementwise("map_unary", x, fn=np.abs).values, np.abs(x.values))


def test_elementwise_layout_mismatch():
    a = make_jagged([2], [1.0, 2.0], dim=1)
    b = make_jagged([1, 1], [1.0, 2.0], dim=1)
    with pytest.raises(ShapeError, match="first differing sample index 0"):
        elementwise("add", a, b)
    c = make_jagged([1, 2], [1.0, 2.0, 3.0], dim=1)
    d = make_jagged([1, 1], [1.0, 2.0], dim=1)
    with pytest.raises(ShapeError, match="index 1"):
        elementwise("sub", c, d)


def test_gen_lengths_fixed_and_deterministic():
    assert gen_lengths(LengthDistribution("fixed", 8, 0), 3).tolist() == [8, 8, 8]
    for kind in ("uniform", "half-mean"):
        d = LengthDistribution(kind, 50, 123)
        assert np.array_equal(gen_lengths(d, 64), gen_lengths(d, 64))


def test_gen_lengths_half_mean_mean():
    # direct sampling check of the law of large numbers: mean near max_len / 2
    lengths = gen_lengths(LengthDistribution("half-mean", 1000, 0), 4096)
    assert 475 <= lengths.mean() <= 525


@pytest.mark.parametrize("seed", range(20))
def test_half_mean_within_5pct_at_256(seed):
    lengths = gen_lengths(LengthDistribution("half-mean", 777, seed), 256)
    assert abs(lengths.mean() - 777 / 2) <= 0.05 * 777 / 2


@pytest.mark.parametrize("kind,lo", [("uniform", 1), ("half-mean", 0)])
def test_gen_lengths_range(kind, lo):
    lengths = gen_lengths(LengthDistribution(kind, 9, 4), 5000)
    assert lengths.min() == lo and lengths.max() == 9
    # every value in range shows up: marginals cover the full support
    assert set(lengths.tolist()) == set(range(lo, 10))


def test_length_distribution_validation():
    with pytest.raises(ValueError):
        LengthDistribution("gaussian", 4, 0)
    with pytest.raises(ValueError):
        gen_lengths(LengthDistribution("fixed", 4, 0), 0)


jagged_inputs = st.lists(st.integers(0, 6), min_size=1, max_size=6).flatmap(
    lambda lengths: st.tuples(
        st.just(lengths),
        st.integers(1, 3),
        st.integers(0, 2**32 - 1),
    )
)


def _make(lengths, dim, seed):
    rng = np.random.default_rng(seed)
    return make_jagged(lengths, rng.standard_normal(sum(lengths) * dim), dim)


@settings(max_examples=60, deadline=None)
@given(jagged_inputs, st.integers(0, 3), st.floats(-5, 5))
def test_roundtrip_bit_exact(args, extra, pad):
    lengths, dim, seed = args
    x = _make(lengths, dim, seed)
    L = max(lengths) + extra
    d = jagged_to_dense(x, L, pad)
    for i, n in enumerate(lengths):
        assert (d[i, n:] == pad).all()
    y = dense_to_jagged(d, x.lengths)
    assert np.array_equal(y.offsets, x.offsets)
    assert np.array_equal(y.values, x.values)


@settings(max_examples=40, deadline=None)
@given(jagged_inputs)
def test_elementwise_commutes_with_padding(args):
    lengths, dim, seed = args
    a = _make(lengths, dim, seed)
    b = _make(lengths, dim, seed + 1)
    L = max(lengths)
    lhs = jagged_to_dense(elementwise("add", a, b), L)
    rhs = jagged_to_dense(a, L) + jagged_to_dense(b, L)
    assert np.array_equal(lhs, rhs)


@settings(max_examples=40, deadline=None)
@given(jagged_inputs)
def test_segments_recover_input_rows(args):
    lengths, dim, seed = args
    rows = np.random.default_rng(seed).standard_normal((sum(lengths), dim))
    x = make_jagged(lengths, rows, dim)
    start = 0
    for i, n in enumerate(lengths):
        assert np.array_equal(x.segment(i), rows[start : start + n])
        start += n
