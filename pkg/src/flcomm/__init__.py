"""Communication-efficient federated learning simulator.

Implements adaptive feature elimination, gradient-innovation quantization
with error-sensitivity-driven level adaptation, and communication-frequency
gating, alongside FedAvg / fixed-level QSGD / FedProx baselines. Transport
is simulated: uplink bits are accounted exactly, not sent.
"""

__version__ = "0.1.0"

from flcomm.feature_dropout import (
    DropoutConfig,
    DropoutMask,
    apply_dropout,
    column_stats,
    dropout_probs,
    expected_retained,
    importance,
    sample_mask,
)
from flcomm.innovation_codec import (
    QuantizedInnovation,
    advance_reference,
    compute_innovation,
    dequantize,
    encoded_bits,
    pack_message,
    quantization_error,
    quantize,
    unpack_message,
)
from flcomm.sensitivity_controller import (
    ClientGradientReport,
    SensitivityState,
    error_sensitivity,
    global_gradient,
    level_to_bits,
    rebaseline,
    update_level,
)
from flcomm.comm_gate import GateState, filter_active, innovation_norm, should_send

__all__ = [
    "DropoutConfig",
    "DropoutMask",
    "apply_dropout",
    "column_stats",
    "dropout_probs",
    "expected_retained",
    "importance",
    "sample_mask",
    "QuantizedInnovation",
    "advance_reference",
    "compute_innovation",
    "dequantize",
    "encoded_bits",
    "pack_message",
    "quantization_error",
    "quantize",
    "unpack_message",
    "ClientGradientReport",
    "SensitivityState",
    "error_sensitivity",
    "global_gradient",
    "level_to_bits",
    "rebaseline",
    "update_level",
    "GateState",
    "filter_active",
    "innovation_norm",
    "should_send",
]
