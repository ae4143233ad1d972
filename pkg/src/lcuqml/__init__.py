"""Statevector simulation of LCU (non-unitary) and IQP quantum layers inside hybrid models."""

__version__ = "0.1.0"

from .circuits import (  # noqa: E402
    CircuitProgram,
    LcuDecomposition,
    QuantumLayerSpec,
    Variant,
    build_angle_embedding,
    build_iqp_block,
    build_iqp_embedding_model,
    build_lcu_wrapped,
    build_variational_ansatz,
    forward_nonunitary,
    forward_unitary,
    lcu_apply_general,
)
from .statevec import Gate, StateVector, apply_gate, expectation_z, new_zero_state, postselect, probabilities  # noqa: E402
