"""Binary index patterns: convolution's index structure as a dense tensor.

For one spatial dimension with input size ``I``, kernel size ``K``, stride
``S``, padding ``P``, and dilation ``D``, the pattern is the ``I x O x K``
zero/one tensor with ``table[i, o, k] == 1`` iff ``i == k*D + o*S - P`` lands
inside the input.  Contracting it against inputs and kernels reproduces
convolution and everything adjoint to it; its shape for special
hyper-parameters (dense, down-sampling) is what the rewrites in
:mod:`conv_tn.simplify` exploit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import Tensor


class InvalidHyperParams(ValueError):
    """Hyper-parameters describe no valid convolution."""


class BoundaryPixels(ValueError):
    """The stride leaves dangling input pixels, so the identity cannot hold."""


class PatternKind(enum.Enum):
    DENSE = "dense"
    DOWN_SAMPLING = "down_sampling"
    GENERAL = "general"


@dataclass(frozen=True)
class DimSpec:
    """Hyper-parameters of one spatial dimension."""

    input_size: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        for name in ("input_size", "kernel_size", "stride", "dilation"):
            if int(getattr(self, name)) < 1:
                raise InvalidHyperParams(f"{name} must be >= 1, got {getattr(self, name)}")
        if int(self.padding) < 0:
            raise InvalidHyperParams(f"padding must be >= 0, got {self.padding}")
        if self.input_size + 2 * self.padding - self.span < 0:
            raise InvalidHyperParams(
                f"kernel span {self.span} exceeds padded input "
                f"{self.input_size + 2 * self.padding}"
            )

    @property
    def span(self) -> int:
        """Extent of the dilated kernel: K + (K-1)(D-1)."""
        return self.kernel_size + (self.kernel_size - 1) * (self.dilation - 1)


def output_size(dim: DimSpec) -> int:
    return 1 + (dim.input_size + 2 * dim.padding - dim.span) // dim.stride


def boundary_pixel_free(dim: DimSpec) -> bool:
    """True when the stride divides the padded input exactly (no dangling pixels)."""
    return (dim.input_size + 2 * dim.padding - dim.span) % dim.stride == 0


def classify(dim: DimSpec) -> PatternKind:
    if (
        dim.kernel_size == dim.stride
        and dim.padding == 0
        and dim.dilation == 1
        and dim.input_size % dim.kernel_size == 0
    ):
        return PatternKind.DENSE
    if (
        dim.stride > dim.kernel_size
        and dim.padding == 0
        and dim.dilation == 1
        and dim.input_size % dim.stride == 0
    ):
        return PatternKind.DOWN_SAMPLING
    return PatternKind.GENERAL


@dataclass(frozen=True, eq=False)
class IndexPattern:
    dim: DimSpec
    output_size: int
    kind: PatternKind
    table: Tensor

    @property
    def nnz(self) -> int:
        return int(self.table.sum())

    def triples(self) -> list[tuple[int, int, int]]:
        """Nonzero coordinates as (input, output, kernel) triples, row-major order."""
        return [tuple(int(v) for v in iok) for iok in np.argwhere(self.table)]


@lru_cache(maxsize=None)
def pattern(dim: DimSpec) -> IndexPattern:
    """The dense pattern tensor for ``dim``, cached per hyper-parameter tuple.

    The cached table is marked read-only since callers share it.
    """
    o_size = output_size(dim)
    table = np.zeros((dim.input_size, o_size, dim.kernel_size), dtype=np.float64)
    for o in range(o_size):
        for k in range(dim.kernel_size):
            i = k * dim.dilation + o * dim.stride - dim.padding
            if 0 <= i < dim.input_size:
                table[i, o, k] = 1.0
    table.flags.writeable = False
    return IndexPattern(dim, o_size, classify(dim), table)


def averaged_pattern(dim: DimSpec) -> Tensor:
    """Mean of the pattern over the output index: an ``I x K`` tensor.

    Contracting with it instead of the full pattern turns 'sum over all
    output locations, then average' into a single cheap step.
    """
    return pattern(dim).table.mean(axis=1)


def input_size_from_output(
    out_size: int,
    kernel_size: int,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    output_padding: int = 0,
) -> int:
    """Invert the output-size formula, disambiguated by ``output_padding``.

    ``output_padding`` counts the dangling input pixels and must stay below
    the stride, mirroring how transpose-convolution APIs pin the input size.
    """
    if out_size < 1:
        raise InvalidHyperParams(f"output size must be >= 1, got {out_size}")
    if not 0 <= output_padding < stride:
        raise InvalidHyperParams(
            f"output_padding must lie in [0, stride), got {output_padding} with stride {stride}"
        )
    span = kernel_size + (kernel_size - 1) * (dilation - 1)
    in_size = (out_size - 1) * stride - 2 * padding + span + output_padding
    if in_size < 1:
        raise InvalidHyperParams(
            f"reconstructed input size {in_size} is not a valid convolution input"
        )
    return in_size


def kernel_output_swap(p: IndexPattern) -> IndexPattern:
    """Exchange the kernel and output legs of a boundary-pixel-free pattern.

    The swapped pattern belongs to the hyper-parameters (I, O, D, P, S):
    kernel size and output size trade places, and so do stride and
    dilation.  Its table is the (i, k, o) transposition of the original.
    """
    if not boundary_pixel_free(p.dim):
        raise BoundaryPixels(
            f"{p.dim} has dangling pixels; kernel/output legs are not exchangeable"
        )
    swapped = DimSpec(
        input_size=p.dim.input_size,
        kernel_size=p.output_size,
        stride=p.dim.dilation,
        padding=p.dim.padding,
        dilation=p.dim.stride,
    )
    return pattern(swapped)


def stride_subsample_check(dim: DimSpec) -> bool:
    """Strided pattern == unit-stride pattern sub-sampled along the output leg."""
    base = pattern(DimSpec(dim.input_size, dim.kernel_size, 1, dim.padding, dim.dilation))
    sub = base.table[:, :: dim.stride, :]
    mine = pattern(dim).table
    return sub.shape == mine.shape and bool(np.array_equal(sub, mine))


def dilation_subsample_check(dim: DimSpec) -> bool:
    """Dilated pattern == undilated span-kernel pattern sub-sampled along the kernel leg."""
    base = pattern(DimSpec(dim.input_size, dim.span, dim.stride, dim.padding, 1))
    sub = base.table[:, :, :: dim.dilation]
    mine = pattern(dim).table
    return sub.shape == mine.shape and bool(np.array_equal(sub, mine))
