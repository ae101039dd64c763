"""Convolutions as tensor networks over binary index patterns.

The package splits into a generic contraction engine (``einsum``), the
index-pattern algebra (``pattern``), the operation layer that wires
convolution workloads into contractions (``ops``), structural rewrites
(``simplify``), loop-based references (``oracle``, ``verify``), randomized
gradient estimation (``crs``), and a small CLI (``cli``).
"""

from .crs import (
    CRS_AXES,
    CrsConfig,
    CrsEstimate,
    InvalidProbability,
    axis_size,
    crs_weight_vjp,
    masked_weight_vjp,
    normalized_error,
)
from .einsum import (
    ContractionPlan,
    CostReport,
    EinsumSpec,
    ParseError,
    PlanStep,
    SizeConflict,
    UnderdeterminedGroup,
    contract,
    cost_report,
    make_spec,
    parse,
    plan,
    render_equation,
)
from .oracle import (
    GgnOracle,
    direct_conv,
    direct_transpose_unfold,
    direct_unfold,
    finite_difference_vjp,
    ggn_explicit,
    sym_eig_min,
    toeplitz,
)
from .ops import (
    OP_NAMES,
    ConvSpec,
    Network,
    OpCosts,
    WeightVjp,
    build_network,
    conv_forward,
    fold_output,
    ggn_diagonal,
    ggn_gram,
    hesscale_input_diag,
    hesscale_weight_diag,
    im2col_jvp,
    im2col_vjp,
    input_jvp,
    input_shapes,
    input_vjp,
    kfac_expand_factor,
    kfac_expand_transpose,
    kfac_reduce_factor,
    kfac_reduce_transpose,
    op_cost,
    per_sample_weight_vjp,
    run_op,
    transpose_unfold,
    unfold_input,
    unfold_kernel,
    weight_jvp,
    weight_vjp,
)
from .pattern import (
    BoundaryPixels,
    DimSpec,
    IndexPattern,
    InvalidHyperParams,
    PatternKind,
    averaged_pattern,
    boundary_pixel_free,
    classify,
    dilation_subsample_check,
    input_size_from_output,
    kernel_output_swap,
    output_size,
    pattern,
    stride_subsample_check,
)
from .simplify import (
    RewriteKind,
    RewriteStep,
    SimplifyResult,
    simplify,
    simplify_structure,
    swap_weight_vjp_to_conv,
)
from .tensor import (
    OutOfBounds,
    ShapeMismatch,
    Tensor,
    Unsupported,
    add,
    allclose,
    max_rel_err,
    multiply,
    narrow,
    permute,
    reshape,
    tensor,
    zeros,
)
from .verify import (
    OpReport,
    VerifyReport,
    compare,
    default_grid,
    make_inputs,
    oracle_run,
    run_verification,
    tn_run,
)

__version__ = "0.1.0"
