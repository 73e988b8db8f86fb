"""Secure aggregation of real-valued model updates on the torus R/Z, with a finite-field baseline."""

from .errors import (
    ConfigurationError,
    DataError,
    DataFormatError,
    DivergenceError,
    DomainError,
    ProtocolAbort,
    ShapeError,
    UndefinedMetricError,
)
from .finite_field import FIELD_15_4, FIELD_31_7, FieldParams, ff_masked_aggregate, fp_decode, fp_encode
from .masking import MaskSeed, encrypt_update, generate_pairwise_masks, net_mask
from .models import MLP, ModelParams, SoftmaxRegression
from .protocol import AggregationConfig, AggregationMode, ClientState, ServerState, run_round
from .torus import ScalingConfig, TorusVector, choose_scaling_factor, recover_real, scale_to_torus, wrap

__version__ = "0.1.0"
