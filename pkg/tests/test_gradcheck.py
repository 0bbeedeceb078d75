import json

import numpy as np
import pytest

from jagged_flash.core import make_jagged
from jagged_flash.gradcheck import (
    CHECKED_OPS,
    GradCheckError,
    ShapeSpec,
    backward_fn,
    check_op,
    check_suite,
    leaves,
    numerical_grad,
    rebuild,
)
from jagged_flash.linalg import jagged_softmax


def test_numerical_grad_of_sum_is_ones():
    x = np.random.default_rng(0).standard_normal((3, 2))
    assert np.abs(numerical_grad(np.sum, x) - 1).max() < 1e-9


def test_numerical_grad_of_half_square_norm():
    x = np.random.default_rng(1).standard_normal(7) * 5
    g = numerical_grad(lambda z: 0.5 * float(z @ z), x)
    assert np.abs(g - x).max() < 1e-8


def test_numerical_grad_of_softmax_sum_vanishes():
    # each column sums to one whatever the input, so the gradient is zero
    x = np.random.default_rng(2).standard_normal((5, 2))

    def f(v):
        return float(jagged_softmax(make_jagged([2, 3], v, dim=2)).values.sum())

    assert np.abs(numerical_grad(f, x)).max() < 1e-9


def test_numerical_grad_rejects_non_finite():
    with pytest.raises(GradCheckError), np.errstate(invalid="ignore", divide="ignore"):
        numerical_grad(lambda z: float(np.log(z).sum()), np.array([0.0]))


def test_leaves_rebuild_roundtrip():
    x = make_jagged([1, 2], np.arange(6.0), dim=2)
    obj = (x, np.ones((2, 2)))
    arrays = [a * 2 for a in leaves(obj)]
    back = rebuild(obj, arrays)
    assert np.array_equal(back[0].values, x.values * 2)
    assert np.array_equal(back[1], np.full((2, 2), 2.0))


@pytest.mark.parametrize("op_id", CHECKED_OPS)
def test_single_check_passes(op_id):
    report = check_op(op_id, ShapeSpec((0, 1, 3), 3, 2), seed=4)
    assert report.passed, report.to_dict()
    assert report.worst_coordinate is not None


def test_attention_suite_passes_few_cases():
    reports = check_suite("jagged_flash_attention", cases=3, seed=1)
    assert len(reports) == 3 and all(reports)


def _sign_flipped(op_id):
    bwd = backward_fn(op_id)

    def broken(inputs, grad_out):
        grads = bwd(inputs, grad_out)
        return rebuild(grads, [-g for g in leaves(grads)])

    return broken


@pytest.mark.parametrize("op_id", ["jagged_dense_bmm", "jagged_softmax", "jagged_flash_attention"])
def test_negative_control_fails(op_id):
    report = check_op(op_id, ShapeSpec((2, 3), 2, 2), seed=0, backward=_sign_flipped(op_id))
    assert not report.passed
    assert report.max_relative_error > 0.5
    assert report.worst_coordinate is not None


def test_report_json():
    report = check_op("jagged_softmax", ShapeSpec((2,), 2, 1), seed=0)
    d = json.loads(report.to_json())
    assert set(d) == {"op_id", "max_relative_error", "max_absolute_error", "worst_coordinate", "tolerance", "pass"}
    assert d["pass"] is True and d["tolerance"] == 1e-5


def test_unknown_op():
    with pytest.raises(KeyError):
        check_op("nope")
