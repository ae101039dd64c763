"""Cross-checking harness used by the CLI and the test suite.

Every operation is run twice: once through the tensor-network engine and
once through a plain loop-based reference, then compared at a pinned
tolerance.  The references here are deliberately naive compositions of the
primitives in ``oracle`` (unfold, Toeplitz matrix, explicit Jacobian); the
only shared machinery is the index-pattern builder itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .oracle import (
    direct_conv,
    direct_transpose_unfold,
    direct_unfold,
    ggn_explicit,
    toeplitz,
)
from .ops import ConvSpec, WeightVjp
from .pattern import DimSpec, averaged_pattern, pattern
from .tensor import Tensor, max_rel_err


def _triple_products(conv: ConvSpec):
    """Joint nonzero entries of the per-dimension patterns."""
    per_dim = [pattern(d).triples() for d in conv.dims]
    if conv.nd == 1:
        return [(t,) for t in per_dim[0]]
    return [(t1, t2) for t1 in per_dim[0] for t2 in per_dim[1]]


def _unpack(ts):
    i = tuple(t[0] for t in ts)
    o = tuple(t[1] for t in ts)
    k = tuple(t[2] for t in ts)
    return i, o, k


def oracle_fold_output(conv: ConvSpec, y_like: Tensor) -> Tensor:
    out = np.zeros((conv.batch, conv.c_in, *conv.input_sizes))
    for ts in _triple_products(conv):
        i, o, _ = _unpack(ts)
        out[(slice(None), slice(None), *i)] += y_like[(slice(None), slice(None), *o)]
    return out


def oracle_weight_vjp(conv: ConvSpec, x: Tensor, v_y: Tensor) -> WeightVjp:
    cig = conv.c_in // conv.groups
    cog = conv.c_out // conv.groups
    vw = np.zeros((conv.c_out, cig, *conv.kernel_sizes))
    for ts in _triple_products(conv):
        i, o, k = _unpack(ts)
        for g in range(conv.groups):
            xs = x[(slice(None), slice(g * cig, (g + 1) * cig), *i)]
            vs = v_y[(slice(None), slice(g * cog, (g + 1) * cog), *o)]
            vw[(slice(g * cog, (g + 1) * cog), slice(None), *k)] += vs.T @ xs
    bias = v_y.sum(axis=(0, *range(2, 2 + conv.nd))) if conv.has_bias else None
    return WeightVjp(vw, bias)


def oracle_per_sample_weight_vjp(conv: ConvSpec, x: Tensor, v_y: Tensor) -> Tensor:
    cig = conv.c_in // conv.groups
    cog = conv.c_out // conv.groups
    out = np.zeros((conv.batch, conv.c_out, cig, *conv.kernel_sizes))
    for ts in _triple_products(conv):
        i, o, k = _unpack(ts)
        for g in range(conv.groups):
            xs = x[(slice(None), slice(g * cig, (g + 1) * cig), *i)]
            vs = v_y[(slice(None), slice(g * cog, (g + 1) * cog), *o)]
            out[(slice(None), slice(g * cog, (g + 1) * cog), slice(None), *k)] += (
                vs[:, :, None] * xs[:, None, :]
            )
    return out


def oracle_input_vjp(conv: ConvSpec, w: Tensor, v_y: Tensor) -> Tensor:
    cig = conv.c_in // conv.groups
    cog = conv.c_out // conv.groups
    out = np.zeros((conv.batch, conv.c_in, *conv.input_sizes))
    for ts in _triple_products(conv):
        i, o, k = _unpack(ts)
        for g in range(conv.groups):
            vs = v_y[(slice(None), slice(g * cog, (g + 1) * cog), *o)]
            ws = w[(slice(g * cog, (g + 1) * cog), slice(None), *k)]
            out[(slice(None), slice(g * cig, (g + 1) * cig), *i)] += vs @ ws
    return out


def oracle_im2col_vjp(conv: ConvSpec, v_u: Tensor) -> Tensor:
    ks = conv.kernel_sizes
    outs = conv.out_sizes
    kp = math.prod(ks)
    out = np.zeros((conv.batch, conv.c_in, *conv.input_sizes))
    for ts in _triple_products(conv):
        i, o, k = _unpack(ts)
        kflat = k[0] * ks[1] + k[1] if conv.nd == 2 else k[0]
        oflat = o[0] * outs[1] + o[1] if conv.nd == 2 else o[0]
        out[(slice(None), slice(None), *i)] += v_u[:, kflat::kp, oflat]
    return out


def _averaged_unfold(conv: ConvSpec, x: Tensor) -> Tensor:
    m = x
    for d in conv.dims:
        m = np.tensordot(m, averaged_pattern(d), axes=([2], [0]))
    return m.reshape(conv.batch, conv.c_in * math.prod(conv.kernel_sizes))


def _gram_per_group(rows: Tensor, groups: int, batch: int) -> Tensor:
    """Average of per-sample self-products, one block per group of rows."""
    per_group = rows.shape[1] // groups
    out = np.zeros((groups, per_group, per_group))
    for g in range(groups):
        block = rows[:, g * per_group : (g + 1) * per_group]
        for n in range(batch):
            sample = block[n]
            if sample.ndim == 1:
                out[g] += np.outer(sample, sample)
            else:
                out[g] += sample @ sample.T
    return out / batch


def oracle_kfac_expand(conv: ConvSpec, x: Tensor) -> Tensor:
    return _gram_per_group(direct_unfold(conv, x), conv.groups, conv.batch)


def oracle_kfac_reduce(conv: ConvSpec, x: Tensor) -> Tensor:
    return _gram_per_group(_averaged_unfold(conv, x), conv.groups, conv.batch)


def oracle_kfac_expand_transpose(conv: ConvSpec, y: Tensor) -> Tensor:
    return _gram_per_group(direct_transpose_unfold(conv, y), conv.groups, conv.batch)


def oracle_kfac_reduce_transpose(conv: ConvSpec, y: Tensor) -> Tensor:
    m = y
    for d in conv.dims:
        m = np.tensordot(m, pattern(d).table.mean(axis=0), axes=([2], [0]))
    m = m.reshape(conv.batch, conv.c_out * math.prod(conv.kernel_sizes))
    return _gram_per_group(m, conv.groups, conv.batch)


def oracle_hesscale_weight(
    conv: ConvSpec, x: Tensor, d_y: Tensor, per_sample: bool = False
) -> Tensor:
    cig = conv.c_in // conv.groups
    cog = conv.c_out // conv.groups
    kp = math.prod(conv.kernel_sizes)
    op = math.prod(conv.out_sizes)
    u2 = direct_unfold(conv, x) ** 2
    d = d_y.reshape(conv.batch, conv.c_out, op)
    lead = (conv.batch,) if per_sample else ()
    out = np.zeros((*lead, conv.c_out, cig, *conv.kernel_sizes))
    for g in range(conv.groups):
        dg = d[:, g * cog : (g + 1) * cog]
        ug = u2[:, g * cig * kp : (g + 1) * cig * kp]
        if per_sample:
            block = np.einsum("nco,nro->ncr", dg, ug)
            out[:, g * cog : (g + 1) * cog] = block.reshape(
                conv.batch, cog, cig, *conv.kernel_sizes
            )
        else:
            block = np.einsum("nco,nro->cr", dg, ug)
            out[g * cog : (g + 1) * cog] = block.reshape(cog, cig, *conv.kernel_sizes)
    return out


def oracle_hesscale_input(conv: ConvSpec, w: Tensor, d_y: Tensor) -> Tensor:
    cig = conv.c_in // conv.groups
    cog = conv.c_out // conv.groups
    op = math.prod(conv.out_sizes)
    out = np.zeros((conv.batch, conv.c_in, *conv.input_sizes))
    sub = ConvSpec(conv.batch, 1, cig, cog, conv.dims)
    for g in range(conv.groups):
        a2 = toeplitz(sub, w[g * cog : (g + 1) * cog]) ** 2
        dg = d_y[:, g * cog : (g + 1) * cog].reshape(conv.batch, cog * op)
        out[:, g * cig : (g + 1) * cig] = (dg @ a2).reshape(
            conv.batch, cig, *conv.input_sizes
        )
    return out


def oracle_run(conv: ConvSpec, op: str, arrays: dict):
    """Loop-based reference value for ``op`` on ``arrays``."""
    if op == "conv_forward":
        return direct_conv(conv, arrays["x"], arrays["w"], arrays.get("b"))
    if op == "unfold_input":
        return direct_unfold(conv, arrays["x"])
    if op == "unfold_kernel":
        return toeplitz(conv, arrays["w"])
    if op == "fold_output":
        return oracle_fold_output(conv, arrays["y_like"])
    if op == "transpose_unfold":
        return direct_transpose_unfold(conv, arrays["y"])
    if op == "weight_vjp":
        return oracle_weight_vjp(conv, arrays["x"], arrays["v_y"])
    if op == "per_sample_weight_vjp":
        return oracle_per_sample_weight_vjp(conv, arrays["x"], arrays["v_y"])
    if op == "input_vjp":
        return oracle_input_vjp(conv, arrays["w"], arrays["v_y"])
    if op == "weight_jvp":
        return direct_conv(conv, arrays["x"], arrays["v_w"])
    if op == "input_jvp":
        return direct_conv(conv, arrays["v_x"], arrays["w"])
    if op == "im2col_jvp":
        return direct_unfold(conv, arrays["v_x"])
    if op == "im2col_vjp":
        return oracle_im2col_vjp(conv, arrays["v_u"])
    if op == "kfac_expand_factor":
        return oracle_kfac_expand(conv, arrays["x"])
    if op == "kfac_reduce_factor":
        return oracle_kfac_reduce(conv, arrays["x"])
    if op == "kfac_expand_transpose":
        return oracle_kfac_expand_transpose(conv, arrays["y"])
    if op == "kfac_reduce_transpose":
        return oracle_kfac_reduce_transpose(conv, arrays["y"])
    if op == "ggn_gram":
        return ggn_explicit(conv, arrays["x"], arrays["s"]).gram
    if op == "ggn_diagonal":
        return ggn_explicit(conv, arrays["x"], arrays["s"]).diagonal
    if op == "per_sample_ggn_diagonal":
        return ggn_explicit(conv, arrays["x"], arrays["s"]).per_sample_diagonal
    if op == "hesscale_weight_diag":
        return oracle_hesscale_weight(conv, arrays["x"], arrays["d_y"])
    if op == "per_sample_hesscale_weight_diag":
        return oracle_hesscale_weight(conv, arrays["x"], arrays["d_y"], per_sample=True)
    if op == "hesscale_input_diag":
        return oracle_hesscale_input(conv, arrays["w"], arrays["d_y"])
    raise ValueError(f"no reference for operation {op!r}")


def tn_run(conv: ConvSpec, op: str, arrays: dict, *, simplify: bool = False):
    """Tensor-network value for ``op`` on ``arrays``."""
    if op == "conv_forward":
        return ops.conv_forward(conv, arrays["x"], arrays["w"], arrays.get("b"), simplify=simplify)
    if op == "weight_vjp":
        return ops.weight_vjp(conv, arrays["x"], arrays["v_y"], simplify=simplify)
    return ops.run_op(conv, op, arrays, simplify=simplify)


def make_inputs(
    conv: ConvSpec, op: str, rng: np.random.Generator, columns: int = 2
) -> dict:
    arrays = {
        name: rng.standard_normal(shape)
        for name, shape in ops.input_shapes(conv, op, columns=columns).items()
    }
    if op == "conv_forward" and conv.has_bias:
        arrays["b"] = rng.standard_normal(conv.c_out)
    return arrays


def compare(result, reference) -> float:
    """Worst relative error between a result and its reference."""
    if isinstance(reference, WeightVjp):
        err = max_rel_err(result.weight, reference.weight)
        if reference.bias is not None:
            err = max(err, max_rel_err(result.bias, reference.bias))
        return err
    return max_rel_err(result, reference)


@dataclass
class OpReport:
    op: str
    cases: int
    failures: int
    worst_rel_err: float


@dataclass
class VerifyReport:
    reports: list[OpReport]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(r.failures == 0 for r in self.reports)

    @property
    def total_cases(self) -> int:
        return sum(r.cases for r in self.reports)

    def lines(self) -> list[str]:
        out = []
        for r in self.reports:
            status = "ok" if r.failures == 0 else f"FAIL ({r.failures})"
            out.append(
                f"{r.op:32s} cases={r.cases:4d} worst_rel_err={r.worst_rel_err:.3e} {status}"
            )
        return out


def run_verification(
    specs,
    op_names=None,
    *,
    simplify: bool = False,
    tol: float = 1e-12,
    seed: int = 0,
    tamper=None,
) -> VerifyReport:
    """Compare engine and reference on every (layer, operation) pair.

    ``tamper``, if given, is applied to each engine result before the
    comparison; it exists so tests can prove the harness actually rejects
    wrong numbers.
    """
    rng = np.random.default_rng(seed)
    names = tuple(op_names) if op_names else ops.OP_NAMES
    stats = {name: [0, 0, 0.0] for name in names}
    for conv in specs:
        for name in names:
            if name == "unfold_kernel" and conv.groups != 1:
                continue
            arrays = make_inputs(conv, name, rng)
            got = tn_run(conv, name, arrays, simplify=simplify)
            if tamper is not None:
                got = tamper(got)
            err = compare(got, oracle_run(conv, name, arrays))
            entry = stats[name]
            entry[0] += 1
            if not np.isfinite(err) or err > tol:
                entry[1] += 1
            entry[2] = max(entry[2], err)
    reports = [OpReport(n, c, f, w) for n, (c, f, w) in stats.items()]
    return VerifyReport(reports, tol)


def default_grid(count: int = 200, seed: int = 20240613) -> list[ConvSpec]:
    """Random layer sample spanning strides, padding, dilation, and groups."""
    rng = np.random.default_rng(seed)
    specs: list[ConvSpec] = []
    while len(specs) < count:
        nd = int(rng.integers(1, 3))
        dims = []
        for _ in range(nd):
            i = int(rng.integers(1, 10))
            k = int(rng.integers(1, 5))
            s = int(rng.integers(1, 4))
            p = int(rng.integers(0, 3))
            dil = int(rng.integers(1, 3))
            if k + (k - 1) * (dil - 1) > i + 2 * p:
                break
            dims.append(DimSpec(i, k, s, p, dil))
        if len(dims) != nd:
            continue
        g = int(rng.integers(1, 3))
        c_in = int(rng.choice([2, 4]))
        c_out = int(rng.choice([2, 4]))
        n = int(rng.choice([1, 3]))
        bias = bool(rng.integers(2))
        specs.append(ConvSpec(n, g, c_in, c_out, tuple(dims), bias))
    return specs
