"""Independent reference implementations used to arbitrate correctness.

Everything here is deliberately naive: explicit loops, explicit bounds
checks for zero padding, and dense matrices.  This module never calls the
einsum engine or the operation builders, so agreement between the two
routes is evidence, not tautology.  Keep it that way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .pattern import output_size, pattern
from .tensor import ShapeMismatch, Tensor, Unsupported

if TYPE_CHECKING:
    from .ops import ConvSpec


def _spatial(spec: "ConvSpec") -> tuple[tuple[int, ...], tuple[int, ...]]:
    ins = tuple(d.input_size for d in spec.dims)
    outs = tuple(output_size(d) for d in spec.dims)
    return ins, outs


def direct_conv(spec: "ConvSpec", x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Convolution by definition: loops over every output entry.

    Padding is implicit: kernel positions whose input coordinate falls
    outside the input contribute nothing.
    """
    ins, outs = _spatial(spec)
    g = spec.groups
    cig, cog = spec.c_in // g, spec.c_out // g
    if x.shape != (spec.batch, spec.c_in, *ins):
        raise ShapeMismatch(f"input {x.shape}, expected {(spec.batch, spec.c_in, *ins)}")
    if w.shape != (spec.c_out, cig, *tuple(d.kernel_size for d in spec.dims)):
        raise ShapeMismatch(f"kernel {w.shape} does not match {spec}")

    y = np.zeros((spec.batch, spec.c_out, *outs), dtype=np.float64)
    if len(spec.dims) == 1:
        (d1,) = spec.dims
        for n in range(spec.batch):
            for gg in range(g):
                xs = x[n, gg * cig : (gg + 1) * cig]
                for co in range(cog):
                    wk = w[gg * cog + co]
                    for o1 in range(outs[0]):
                        acc = 0.0
                        for k1 in range(d1.kernel_size):
                            i1 = k1 * d1.dilation + o1 * d1.stride - d1.padding
                            if 0 <= i1 < d1.input_size:
                                acc += float(np.dot(xs[:, i1], wk[:, k1]))
                        y[n, gg * cog + co, o1] = acc
    else:
        d1, d2 = spec.dims
        for n in range(spec.batch):
            for gg in range(g):
                xs = x[n, gg * cig : (gg + 1) * cig]
                for co in range(cog):
                    wk = w[gg * cog + co]
                    for o1 in range(outs[0]):
                        for o2 in range(outs[1]):
                            acc = 0.0
                            for k1 in range(d1.kernel_size):
                                i1 = k1 * d1.dilation + o1 * d1.stride - d1.padding
                                if not 0 <= i1 < d1.input_size:
                                    continue
                                for k2 in range(d2.kernel_size):
                                    i2 = k2 * d2.dilation + o2 * d2.stride - d2.padding
                                    if 0 <= i2 < d2.input_size:
                                        acc += float(np.dot(xs[:, i1, i2], wk[:, k1, k2]))
                            y[n, gg * cog + co, o1, o2] = acc
    if b is not None:
        if b.shape != (spec.c_out,):
            raise ShapeMismatch(f"bias {b.shape}, expected {(spec.c_out,)}")
        y += b.reshape((1, spec.c_out) + (1,) * len(spec.dims))
    return y


def direct_unfold(spec: "ConvSpec", x: Tensor) -> Tensor:
    """im2col by definition: gather every kernel window into a column."""
    ins, outs = _spatial(spec)
    if x.shape != (spec.batch, spec.c_in, *ins):
        raise ShapeMismatch(f"input {x.shape}, expected {(spec.batch, spec.c_in, *ins)}")
    ks = tuple(d.kernel_size for d in spec.dims)
    u = np.zeros((spec.batch, spec.c_in * int(np.prod(ks)), int(np.prod(outs))))
    if len(spec.dims) == 1:
        (d1,) = spec.dims
        for n in range(spec.batch):
            for ci in range(spec.c_in):
                for k1 in range(ks[0]):
                    for o1 in range(outs[0]):
                        i1 = k1 * d1.dilation + o1 * d1.stride - d1.padding
                        if 0 <= i1 < d1.input_size:
                            u[n, ci * ks[0] + k1, o1] = x[n, ci, i1]
    else:
        d1, d2 = spec.dims
        for n in range(spec.batch):
            for ci in range(spec.c_in):
                for k1 in range(ks[0]):
                    i1s = [
                        (o1, k1 * d1.dilation + o1 * d1.stride - d1.padding)
                        for o1 in range(outs[0])
                    ]
                    for k2 in range(ks[1]):
                        row = ci * ks[0] * ks[1] + k1 * ks[1] + k2
                        for o1, i1 in i1s:
                            if not 0 <= i1 < d1.input_size:
                                continue
                            for o2 in range(outs[1]):
                                i2 = k2 * d2.dilation + o2 * d2.stride - d2.padding
                                if 0 <= i2 < d2.input_size:
                                    u[n, row, o1 * outs[1] + o2] = x[n, ci, i1, i2]
    return u


def direct_transpose_unfold(spec: "ConvSpec", y: Tensor) -> Tensor:
    """Unfolded input of the transpose convolution, accumulated entrywise.

    Row layout is (channel, kernel...) and the column runs over the input
    locations of the associated convolution.
    """
    ins, outs = _spatial(spec)
    if y.shape != (spec.batch, spec.c_out, *outs):
        raise ShapeMismatch(f"output {y.shape}, expected {(spec.batch, spec.c_out, *outs)}")
    ks = tuple(d.kernel_size for d in spec.dims)
    t = np.zeros((spec.batch, spec.c_out * int(np.prod(ks)), int(np.prod(ins))))
    if len(spec.dims) == 1:
        (d1,) = spec.dims
        for n in range(spec.batch):
            for co in range(spec.c_out):
                for k1 in range(ks[0]):
                    for o1 in range(outs[0]):
                        i1 = k1 * d1.dilation + o1 * d1.stride - d1.padding
                        if 0 <= i1 < d1.input_size:
                            t[n, co * ks[0] + k1, i1] += y[n, co, o1]
    else:
        d1, d2 = spec.dims
        for n in range(spec.batch):
            for co in range(spec.c_out):
                for k1 in range(ks[0]):
                    for k2 in range(ks[1]):
                        row = co * ks[0] * ks[1] + k1 * ks[1] + k2
                        for o1 in range(outs[0]):
                            i1 = k1 * d1.dilation + o1 * d1.stride - d1.padding
                            if not 0 <= i1 < d1.input_size:
                                continue
                            for o2 in range(outs[1]):
                                i2 = k2 * d2.dilation + o2 * d2.stride - d2.padding
                                if 0 <= i2 < d2.input_size:
                                    t[n, row, i1 * ins[1] + i2] += y[n, co, o1, o2]
    return t


def toeplitz(spec: "ConvSpec", w: Tensor) -> Tensor:
    """The convolution as one dense matrix mapping flat input to flat output.

    Assembled from the nonzero pattern triples; ungrouped convolutions only.
    """
    if spec.groups != 1:
        raise Unsupported("toeplitz matrix is only assembled for groups == 1")
    ins, outs = _spatial(spec)
    if len(spec.dims) == 1:
        (p1,) = (pattern(spec.dims[0]),)
        a = np.zeros((spec.c_out, outs[0], spec.c_in, ins[0]))
        for i1, o1, k1 in p1.triples():
            a[:, o1, :, i1] += w[:, :, k1]
        return a.reshape(spec.c_out * outs[0], spec.c_in * ins[0])
    p1, p2 = pattern(spec.dims[0]), pattern(spec.dims[1])
    a = np.zeros((spec.c_out, outs[0] * outs[1], spec.c_in, ins[0] * ins[1]))
    for i1, o1, k1 in p1.triples():
        for i2, o2, k2 in p2.triples():
            a[:, o1 * outs[1] + o2, :, i1 * ins[1] + i2] += w[:, :, k1, k2]
    return a.reshape(spec.c_out * int(np.prod(outs)), spec.c_in * int(np.prod(ins)))


def finite_difference_vjp(f: Callable[[Tensor], float], t: Tensor, h: float = 1e-6) -> Tensor:
    """Central-difference gradient of a scalar function, entry by entry."""
    grad = np.zeros_like(t, dtype=np.float64)
    flat = grad.reshape(-1)
    base = np.array(t, dtype=np.float64)
    for j in range(base.size):
        probe = base.reshape(-1)
        old = probe[j]
        probe[j] = old + h
        up = f(base)
        probe[j] = old - h
        down = f(base)
        probe[j] = old
        flat[j] = (up - down) / (2.0 * h)
    return grad


@dataclass
class GgnOracle:
    full: Tensor
    diagonal: Tensor
    gram: Tensor
    per_sample_diagonal: Tensor


def ggn_explicit(spec: "ConvSpec", x: Tensor, s_y: Tensor) -> GgnOracle:
    """Generalized Gauss-Newton pieces from an explicitly assembled Jacobian.

    The output-to-weight Jacobian is built column by column (each column is
    the convolution's response to a one-hot kernel), so this stays honest
    but only scales to a few hundred weights.
    """
    ins, outs = _spatial(spec)
    g = spec.groups
    cig, cog = spec.c_in // g, spec.c_out // g
    ks = tuple(d.kernel_size for d in spec.dims)
    w_dim = spec.c_out * cig * int(np.prod(ks))
    if w_dim > 512:
        raise Unsupported(f"explicit jacobian with {w_dim} weight columns is off-scale")
    n_out = spec.c_out * int(np.prod(outs))
    if s_y.shape[1:] != (spec.batch, spec.c_out, *outs):
        raise ShapeMismatch(
            f"curvature stack {s_y.shape}, expected (c, {spec.batch}, {spec.c_out}, ...)"
        )
    n_cols = s_y.shape[0]

    jac = np.zeros((spec.batch, n_out, w_dim))
    if len(spec.dims) == 1:
        (d1,) = spec.dims
        for co in range(spec.c_out):
            gg = co // cog
            for ci in range(cig):
                for k1 in range(ks[0]):
                    col = (co * cig + ci) * ks[0] + k1
                    for o1 in range(outs[0]):
                        i1 = k1 * d1.dilation + o1 * d1.stride - d1.padding
                        if 0 <= i1 < d1.input_size:
                            row = co * outs[0] + o1
                            jac[:, row, col] = x[:, gg * cig + ci, i1]
    else:
        d1, d2 = spec.dims
        for co in range(spec.c_out):
            gg = co // cog
            for ci in range(cig):
                for k1 in range(ks[0]):
                    for k2 in range(ks[1]):
                        col = ((co * cig + ci) * ks[0] + k1) * ks[1] + k2
                        for o1 in range(outs[0]):
                            i1 = k1 * d1.dilation + o1 * d1.stride - d1.padding
                            if not 0 <= i1 < d1.input_size:
                                continue
                            for o2 in range(outs[1]):
                                i2 = k2 * d2.dilation + o2 * d2.stride - d2.padding
                                if 0 <= i2 < d2.input_size:
                                    row = (co * outs[0] + o1) * outs[1] + o2
                                    jac[:, row, col] = x[:, gg * cig + ci, i1, i2]

    # columns of the weight-space curvature stack, laid out (c, n) row-major
    s_w = np.zeros((w_dim, n_cols * spec.batch))
    for n in range(spec.batch):
        s_n = s_y[:, n].reshape(n_cols, n_out)
        m_n = jac[n].T @ s_n.T
        for c in range(n_cols):
            s_w[:, c * spec.batch + n] = m_n[:, c]

    full = s_w @ s_w.T
    gram = s_w.T @ s_w
    diag = np.diag(full).reshape(spec.c_out, cig, *ks)
    per_sample = np.zeros((spec.batch, spec.c_out, cig, *ks))
    for n in range(spec.batch):
        cols = s_w[:, [c * spec.batch + n for c in range(n_cols)]]
        per_sample[n] = (cols**2).sum(axis=1).reshape(spec.c_out, cig, *ks)
    return GgnOracle(full, diag, gram, per_sample)


def sym_eig_min(m: Tensor) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got {m.shape}")
    return float(np.linalg.eigvalsh(m)[0])
