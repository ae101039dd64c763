"""Randomized channel and pixel subsampling of the weight gradient."""

import itertools

import numpy as np
import pytest

from conv_tn.crs import (
    CRS_AXES,
    CrsConfig,
    InvalidProbability,
    axis_size,
    crs_weight_vjp,
    masked_weight_vjp,
    normalized_error,
)
from conv_tn.ops import ConvSpec, input_shapes, weight_vjp
from conv_tn.pattern import DimSpec
from conv_tn.tensor import ShapeMismatch, Unsupported


@pytest.fixture
def conv():
    return ConvSpec(2, 1, 2, 3, (DimSpec(4, 2), DimSpec(4, 2)))


def data(conv, seed=0):
    rng = np.random.default_rng(seed)
    shapes = input_shapes(conv, "weight_vjp")
    return rng.standard_normal(shapes["x"]), rng.standard_normal(shapes["v_y"])


def test_config_validation():
    CrsConfig({"c_in": 0.5, "i1": 1.0}, seed=0)
    with pytest.raises(InvalidProbability):
        CrsConfig({"c_in": 0.0}, seed=0)
    with pytest.raises(InvalidProbability):
        CrsConfig({"i1": 1.5}, seed=0)
    with pytest.raises(InvalidProbability):
        CrsConfig({"pixels": 0.5}, seed=0)


def test_axis_size(conv):
    assert axis_size(conv, "c_in") == 2
    assert axis_size(conv, "i1") == 4
    assert axis_size(conv, "i2") == 4
    grouped = ConvSpec(1, 2, 4, 2, (DimSpec(3, 2),))
    assert axis_size(grouped, "c_in") == 2
    with pytest.raises(Unsupported):
        axis_size(grouped, "i2")
    with pytest.raises(Unsupported):
        axis_size(conv, "bogus")


def test_keep_everything_is_exact(conv):
    x, v_y = data(conv)
    exact = weight_vjp(conv, x, v_y).weight
    est = crs_weight_vjp(conv, x, v_y, CrsConfig({a: 1.0 for a in CRS_AXES}, seed=3))
    assert est.kept_fraction == {a: 1.0 for a in CRS_AXES}
    assert np.allclose(est.weight, exact, atol=1e-12)


def test_same_seed_same_estimate(conv):
    x, v_y = data(conv)
    cfg = CrsConfig({"c_in": 0.5, "i1": 0.7}, seed=11)
    a = crs_weight_vjp(conv, x, v_y, cfg)
    b = crs_weight_vjp(conv, x, v_y, cfg)
    assert np.array_equal(a.weight, b.weight)
    assert a.kept_fraction == b.kept_fraction


def test_explicit_mask_zeroes_dropped_rows(conv):
    x, v_y = data(conv)
    masks = {"c_in": np.array([True, False])}
    est = masked_weight_vjp(conv, x, v_y, masks, {"c_in": 0.5})
    exact = weight_vjp(conv, x, v_y).weight
    assert np.allclose(est[:, 0], 2.0 * exact[:, 0], atol=1e-12)
    assert np.allclose(est[:, 1], 0.0)


def test_channel_enumeration_is_unbiased(conv):
    x, v_y = data(conv, seed=5)
    exact = weight_vjp(conv, x, v_y).weight
    p = 0.5
    mean = np.zeros_like(exact)
    for bits in itertools.product([False, True], repeat=2):
        mask = np.array(bits)
        prob = (p ** mask.sum()) * ((1 - p) ** (~mask).sum())
        est = masked_weight_vjp(conv, x, v_y, {"c_in": mask}, {"c_in": p})
        mean += prob * est
    assert np.allclose(mean, exact, atol=1e-12)


def test_pixel_enumeration_is_unbiased():
    conv = ConvSpec(1, 1, 1, 2, (DimSpec(3, 2),))
    x, v_y = data(conv, seed=6)
    exact = weight_vjp(conv, x, v_y).weight
    p = 0.4
    mean = np.zeros_like(exact)
    for bits in itertools.product([False, True], repeat=3):
        mask = np.array(bits)
        prob = (p ** mask.sum()) * ((1 - p) ** (~mask).sum())
        est = masked_weight_vjp(conv, x, v_y, {"i1": mask}, {"i1": p})
        mean += prob * est
    assert np.allclose(mean, exact, atol=1e-12)


def test_empty_mask_gives_zero(conv):
    x, v_y = data(conv)
    masks = {"i1": np.zeros(4, dtype=bool)}
    est = masked_weight_vjp(conv, x, v_y, masks, {"i1": 0.5})
    assert np.array_equal(est, np.zeros_like(est))


def test_grouped_channel_masking():
    conv = ConvSpec(2, 2, 4, 4, (DimSpec(4, 2),))
    x, v_y = data(conv, seed=9)
    exact = weight_vjp(conv, x, v_y).weight
    # keep every per-group channel: must reproduce the exact gradient
    est = masked_weight_vjp(conv, x, v_y, {"c_in": np.ones(2, bool)}, {"c_in": 1.0})
    assert np.allclose(est, exact, atol=1e-12)


def test_mask_error_paths(conv):
    x, v_y = data(conv)
    with pytest.raises(ShapeMismatch):
        masked_weight_vjp(conv, x, v_y, {"c_in": np.ones(3, bool)}, {"c_in": 0.5})
    with pytest.raises(InvalidProbability):
        masked_weight_vjp(conv, x, v_y, {"c_in": np.ones(2, bool)}, {"c_in": 0.0})
    with pytest.raises(InvalidProbability):
        masked_weight_vjp(conv, x, v_y, {"c_in": np.ones(2, bool)}, {})
    with pytest.raises(Unsupported):
        masked_weight_vjp(conv, x, v_y, {"bogus": np.ones(2, bool)}, {"bogus": 0.5})
    with pytest.raises(ShapeMismatch):
        masked_weight_vjp(conv, x[:, :, :2], v_y, {}, {})


def test_normalized_error():
    exact = np.array([3.0, 4.0])
    assert normalized_error(exact, exact) == 0.0
    assert normalized_error(exact, np.zeros(2)) == pytest.approx(1.0)
    with pytest.raises(ZeroDivisionError):
        normalized_error(np.zeros(2), exact)
    with pytest.raises(ShapeMismatch):
        normalized_error(exact, np.zeros(3))


def test_kept_fraction_reports_mask_mean(conv):
    x, v_y = data(conv)
    cfg = CrsConfig({"i1": 0.5}, seed=21)
    est = crs_weight_vjp(conv, x, v_y, cfg)
    frac = est.kept_fraction["i1"]
    assert frac in {0.0, 0.25, 0.5, 0.75, 1.0}
