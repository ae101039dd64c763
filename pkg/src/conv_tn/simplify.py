"""Structural rewrites that remove index-pattern operands before planning.

A dense pattern (kernel size == stride, no padding, no dilation, input a
whole number of tiles) acts as a reshape: its input leg is the row-major
pair (output, kernel).  A down-sampling pattern (stride > kernel, no
padding, no dilation, input a whole number of strides) acts as a reshape
followed by dropping the trailing part of every stride block.  Both can be
applied to the neighbouring tensor directly, which deletes the pattern
operand from the contraction.  General patterns are left alone.

Rewrites are conservative: one fires only when the pattern's input leg has
exactly one other occurrence and the replacement keeps the contraction
well-formed.  Anything else is skipped, so rewriting never changes values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import einsum
from .pattern import (
    BoundaryPixels,
    DimSpec,
    PatternKind,
    boundary_pixel_free,
    classify,
    kernel_output_swap,
    pattern,
)
from .tensor import Tensor


class RewriteKind(enum.Enum):
    DENSE_RESHAPE = "dense_reshape"
    DOWNSAMPLE_NARROW = "downsample_narrow"
    KERNEL_OUTPUT_SWAP = "kernel_output_swap"


@dataclass(frozen=True)
class RewriteStep:
    kind: RewriteKind
    operand: int
    detail: str


@dataclass(frozen=True)
class _SplitAxis:
    """Reshape one axis into (blocks, period) and keep the leading slice."""

    axis: int
    period: int
    keep: int

    def apply(self, arr: Tensor) -> Tensor:
        shape = arr.shape
        blocks = shape[self.axis] // self.period
        split = arr.reshape(
            shape[: self.axis] + (blocks, self.period) + shape[self.axis + 1 :]
        )
        index = [slice(None)] * split.ndim
        index[self.axis + 1] = slice(0, self.keep)
        narrowed = np.ascontiguousarray(split[tuple(index)])
        return narrowed.reshape(
            shape[: self.axis] + (blocks * self.keep,) + shape[self.axis + 1 :]
        )


@dataclass
class SimplifyResult:
    """Outcome of the structural pass, applicable to any matching operands."""

    spec: einsum.EinsumSpec
    steps: tuple[RewriteStep, ...]
    kept: tuple[int, ...]
    replaced: dict[int, Tensor]
    transforms: dict[int, tuple[_SplitAxis, ...]]

    def apply(self, operands) -> list[Tensor]:
        out: list[Tensor] = []
        for pos in self.kept:
            arr = self.replaced.get(pos)
            if arr is None:
                arr = np.asarray(operands[pos], dtype=np.float64)
            for t in self.transforms.get(pos, ()):
                arr = t.apply(arr)
            out.append(arr)
        return out


def _occurrences(terms, output_term, name):
    """Every place an index name appears: ('op'|'out', term position, atom position)."""
    spots = []
    for t_pos, term in enumerate(terms):
        for a_pos, atom in enumerate(term):
            members = (atom,) if isinstance(atom, str) else atom
            if name in members:
                spots.append(("op", t_pos, a_pos))
    for a_pos, atom in enumerate(output_term):
        members = (atom,) if isinstance(atom, str) else atom
        if name in members:
            spots.append(("out", -1, a_pos))
    return spots


def _splice_atom(atom, name, replacement: tuple[str, ...]):
    """Replace ``name`` inside an atom by one or more indices."""
    if isinstance(atom, str):
        return replacement[0] if len(replacement) == 1 else tuple(replacement)
    members: list[str] = []
    for m in atom:
        if m == name:
            members.extend(replacement)
        else:
            members.append(m)
    return tuple(members)


def simplify_structure(
    spec: einsum.EinsumSpec, pattern_roles: dict[int, DimSpec]
) -> SimplifyResult:
    """Plan the rewrites for ``spec`` without touching any data.

    ``pattern_roles`` maps operand positions (in ``spec``) to the
    hyper-parameters whose pattern tensor sits there; the pattern terms are
    expected to read (input, output, kernel).
    """
    terms = [list(t) for t in spec.operand_terms]
    output_term = list(spec.output_term)
    sizes = dict(spec.sizes)
    alive = list(range(len(terms)))
    roles = dict(pattern_roles)
    replaced: dict[int, Tensor] = {}
    transforms: dict[int, list[_SplitAxis]] = {}
    steps: list[RewriteStep] = []

    def term_of(orig_pos):
        return terms[orig_pos]

    changed = True
    while changed:
        changed = False
        for pos in sorted(roles):
            dim = roles[pos]
            kind = classify(dim)
            if kind is PatternKind.GENERAL:
                continue
            term = term_of(pos)
            if len(term) != 3 or not all(isinstance(a, str) for a in term):
                continue
            i_name, o_name, k_name = term

            other = [
                s
                for s in _occurrences(
                    [terms[p] for p in alive], output_term, i_name
                )
                if not (s[0] == "op" and alive[s[1]] == pos)
            ]
            if len(other) != 1:
                continue
            where, t_pos, a_pos = other[0]
            target = alive[t_pos] if where == "op" else None

            if kind is PatternKind.DENSE:
                if target is not None and target in roles:
                    continue
                if where == "out":
                    # the freed legs must still contract against something
                    remaining = [terms[p] for p in alive if p != pos]
                    names_left = {
                        m
                        for t in remaining
                        for atom in t
                        for m in ((atom,) if isinstance(atom, str) else atom)
                    }
                    if o_name not in names_left or k_name not in names_left:
                        continue
                    output_term[a_pos] = _splice_atom(
                        output_term[a_pos], i_name, (o_name, k_name)
                    )
                else:
                    atom = terms[target][a_pos]
                    members = (atom,) if isinstance(atom, str) else atom
                    if o_name in members or k_name in members:
                        continue
                    terms[target][a_pos] = _splice_atom(atom, i_name, (o_name, k_name))
                alive.remove(pos)
                del roles[pos]
                steps.append(
                    RewriteStep(
                        RewriteKind.DENSE_RESHAPE,
                        pos,
                        f"dense pattern {dim} removed; leg {i_name} becomes"
                        f" ({o_name} {k_name})",
                    )
                )
                changed = True
                continue

            # down-sampling: narrow the neighbour, then re-express densely
            if where != "op" or target in roles:
                continue
            atom = terms[target][a_pos]
            if not isinstance(atom, str):
                continue
            stride, kernel = dim.stride, dim.kernel_size
            axis = a_pos
            transforms.setdefault(target, []).append(
                _SplitAxis(axis=axis, period=stride, keep=kernel)
            )
            new_input = kernel * (dim.input_size // stride)
            dense_dim = DimSpec(new_input, kernel, kernel, 0, 1)
            sizes[i_name] = new_input
            replaced[pos] = pattern(dense_dim).table
            roles[pos] = dense_dim
            steps.append(
                RewriteStep(
                    RewriteKind.DOWNSAMPLE_NARROW,
                    pos,
                    f"down-sampling pattern {dim}: axis {axis} of operand {target}"
                    f" keeps the leading {kernel} of every {stride} entries;"
                    f" pattern re-expressed as dense {dense_dim}",
                )
            )
            changed = True

    new_terms = tuple(tuple(terms[p]) for p in alive)
    new_spec = einsum.make_spec(new_terms, tuple(output_term), sizes)
    return SimplifyResult(
        spec=new_spec,
        steps=tuple(steps),
        kept=tuple(alive),
        replaced=replaced,
        transforms={k: tuple(v) for k, v in transforms.items()},
    )


def simplify(spec: einsum.EinsumSpec, operands, pattern_roles: dict[int, DimSpec]):
    """Rewrite ``spec`` and ``operands`` together; values are preserved.

    Returns ``(new_spec, new_operands, steps)``.  Idempotent: a second pass
    finds nothing left to rewrite.
    """
    result = simplify_structure(spec, pattern_roles)
    return result.spec, result.apply(operands), result.steps


def swap_weight_vjp_to_conv(
    spec: einsum.EinsumSpec, operands, pattern_roles: dict[int, DimSpec]
):
    """Exchange kernel and output legs of every pattern operand.

    This re-expresses a weight-gradient contraction in the shape of a
    forward convolution (the incoming gradient takes the kernel slot).
    Requires every pattern to be boundary-pixel free; value-preserving.
    Returns ``(new_spec, new_operands, steps)``.
    """
    terms = [list(t) for t in spec.operand_terms]
    new_operands = [np.asarray(a, dtype=np.float64) for a in operands]
    steps: list[RewriteStep] = []
    for pos, dim in sorted(pattern_roles.items()):
        if not boundary_pixel_free(dim):
            raise BoundaryPixels(f"pattern operand {pos}: {dim} has dangling pixels")
        term = terms[pos]
        if len(term) != 3 or not all(isinstance(a, str) for a in term):
            raise einsum.ParseError(f"operand {pos} does not look like a pattern term")
        i_name, o_name, k_name = term
        swapped = kernel_output_swap(pattern(dim))
        terms[pos] = [i_name, k_name, o_name]
        new_operands[pos] = swapped.table
        steps.append(
            RewriteStep(
                RewriteKind.KERNEL_OUTPUT_SWAP,
                pos,
                f"pattern {dim} swapped to {swapped.dim}; legs now"
                f" ({i_name} {k_name} {o_name})",
            )
        )
    new_spec = einsum.make_spec(
        tuple(tuple(t) for t in terms), spec.output_term, spec.sizes
    )
    return new_spec, new_operands, tuple(steps)
