"""Composable attribution operators over small neural networks, plus the
query language, analysis utilities, and serving shell built on them."""

from .algebra import (
    AntiJoin,
    Identity,
    InvalidExpression,
    Join,
    Leaf,
    LeafPlan,
    MissingTruncation,
    Project,
    Registry,
    Select,
    ValidationError,
    evaluate,
    expr_from_dict,
    expr_to_dict,
    normalize,
    validate,
)
from .analysis import (
    Edit,
    SpectralReport,
    deep_representation,
    nullify,
    spectral_signature,
    substitute,
    transform,
)
from .attribution import (
    AttributionMap,
    AttributionResult,
    BackendConfig,
    Window,
    WindowError,
    antijoin,
    antijoin_cross_model,
    antijoin_many,
    attribute,
    identity_attr,
    integrated_gradients,
    join_maps,
    masked_input,
    select_attr,
    shapley_exact,
    shapley_sampled,
    smoothgrad,
)
from .qlang import Bindings, QueryAst, lower, parse, parse_text, print_query, tokenize
from .runtime import (
    Dataset,
    HeadTrainingConfig,
    LayerSpec,
    ModelSpec,
    ShapeError,
    StageError,
    Tensor,
    forward,
    forward_to_stage,
    gradient,
    train_linear_head,
    truncate,
)

__version__ = "0.1.0"
