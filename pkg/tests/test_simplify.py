"""Structural rewrites that shrink pattern contractions."""

import numpy as np
import pytest

from conv_tn import einsum
from conv_tn.ops import ConvSpec, build_network, input_shapes, op_cost, run_op
from conv_tn.pattern import BoundaryPixels, DimSpec, pattern
from conv_tn.simplify import (
    RewriteKind,
    simplify,
    simplify_structure,
    swap_weight_vjp_to_conv,
)

DENSE = ConvSpec(2, 1, 2, 3, (DimSpec(8, 2, 2),))
DOWN = ConvSpec(2, 1, 2, 3, (DimSpec(8, 1, 2),))
MIXED = ConvSpec(2, 1, 2, 3, (DimSpec(8, 2, 2), DimSpec(5, 2)))
GENERAL = ConvSpec(2, 1, 2, 3, (DimSpec(5, 2),))


def dense_pattern_spec():
    dim = DimSpec(4, 2, 2)
    spec = einsum.parse("i o k, i -> o k", [(4, 2, 2), (4,)])
    rng = np.random.default_rng(0)
    operands = [pattern(dim).table, rng.standard_normal(4)]
    return spec, operands, {0: dim}


def test_dense_rewrite_preserves_values():
    spec, operands, roles = dense_pattern_spec()
    before = einsum.contract(spec, operands)
    new_spec, new_operands, steps = simplify(spec, operands, roles)
    assert steps and steps[0].kind is RewriteKind.DENSE_RESHAPE
    assert len(new_operands) < len(operands)
    after = einsum.contract(new_spec, new_operands)
    assert np.allclose(before, after, atol=1e-12)


def test_downsample_rewrite_chains_to_dense():
    dim = DimSpec(8, 1, 2)
    spec = einsum.parse("i o k, i -> o k", [(8, 4, 1), (8,)])
    rng = np.random.default_rng(1)
    operands = [pattern(dim).table, rng.standard_normal(8)]
    before = einsum.contract(spec, operands)
    new_spec, new_operands, steps = simplify(spec, operands, {0: dim})
    kinds = {s.kind for s in steps}
    assert RewriteKind.DOWNSAMPLE_NARROW in kinds
    assert RewriteKind.DENSE_RESHAPE in kinds
    assert np.allclose(before, einsum.contract(new_spec, new_operands), atol=1e-12)


def test_general_pattern_left_alone():
    dim = DimSpec(5, 2)
    spec = einsum.parse("i o k, i -> o k", [(5, 4, 2), (5,)])
    operands = [pattern(dim).table, np.arange(5.0)]
    new_spec, new_operands, steps = simplify(spec, operands, {0: dim})
    assert steps == ()
    assert new_spec.operand_terms == spec.operand_terms
    assert np.array_equal(new_operands[0], operands[0])


def test_simplify_structure_reusable():
    spec, operands, roles = dense_pattern_spec()
    result = simplify_structure(spec, roles)
    first = einsum.contract(result.spec, result.apply(operands))
    other = [operands[0], np.arange(4.0)]
    second = einsum.contract(result.spec, result.apply(other))
    assert np.allclose(first, einsum.contract(spec, operands), atol=1e-12)
    assert np.allclose(second, einsum.contract(spec, other), atol=1e-12)


@pytest.mark.parametrize("conv", [DENSE, DOWN, MIXED, GENERAL])
@pytest.mark.parametrize(
    "op", ["conv_forward", "weight_vjp", "input_vjp", "kfac_expand_factor", "unfold_input"]
)
def test_rewrites_preserve_op_values(conv, op):
    rng = np.random.default_rng(42)
    arrays = {k: rng.standard_normal(v) for k, v in input_shapes(conv, op).items()}
    plain = run_op(conv, op, arrays, simplify=False)
    fancy = run_op(conv, op, arrays, simplify=True)
    assert np.allclose(plain, fancy, atol=1e-12)


def test_dense_strictly_cheaper():
    costs = op_cost(DENSE, "conv_forward")
    assert costs.rewrites
    assert costs.simplified.flops < costs.base.flops


def test_downsample_strictly_cheaper():
    costs = op_cost(DOWN, "conv_forward")
    assert costs.simplified.flops < costs.base.flops


def test_general_costs_unchanged():
    costs = op_cost(GENERAL, "conv_forward")
    assert costs.rewrites == ()
    assert costs.simplified.flops == costs.base.flops


def test_swap_weight_vjp_matches():
    conv = ConvSpec(2, 1, 2, 3, (DimSpec(4, 2, 1, 1), DimSpec(3, 2)))
    rng = np.random.default_rng(7)
    arrays = {
        k: rng.standard_normal(v) for k, v in input_shapes(conv, "weight_vjp").items()
    }
    net = build_network(conv, "weight_vjp", arrays)
    spec = einsum.parse(net.equation, [a.shape for a in net.operands], net.seeds)
    before = einsum.contract(spec, net.operands)
    new_spec, new_operands, steps = swap_weight_vjp_to_conv(spec, net.operands, net.roles)
    assert len(steps) == len(net.roles)
    after = einsum.contract(new_spec, new_operands)
    assert np.allclose(before, after, atol=1e-12)


def test_swap_requires_boundary_free():
    conv = ConvSpec(1, 1, 1, 1, (DimSpec(5, 2, 2),))
    rng = np.random.default_rng(8)
    arrays = {
        k: rng.standard_normal(v) for k, v in input_shapes(conv, "weight_vjp").items()
    }
    net = build_network(conv, "weight_vjp", arrays)
    spec = einsum.parse(net.equation, [a.shape for a in net.operands], net.seeds)
    with pytest.raises(BoundaryPixels):
        swap_weight_vjp_to_conv(spec, net.operands, net.roles)
