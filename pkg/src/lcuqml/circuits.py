"""Circuit builders and forward evaluation for the quantum layer variants.

Slot layout of every :class:`CircuitProgram`: slots ``[0, n_params)`` are
trainable angles, slots ``[n_params, n_params + n_inputs)`` are data features.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DegeneratePostselectionError, ParameterError, UnsupportedVariantError
from .statevec import (
    POSTSELECT_FLOOR,
    AnyGate,
    ControlledSub,
    Gate,
    StateVector,
    flatten,
    run_gates,
    z_sign_table,
    zero_batch,
)


@dataclass(frozen=True)
class CircuitProgram:
    n_qubits: int
    gates: tuple[AnyGate, ...]
    n_params: int = 0
    n_inputs: int = 0
    # leading gates that load data; the LCU wrapper leaves them uncontrolled
    n_encoding: int = 0
    # post-selected ancilla (accepted outcome 0), None for plain unitary circuits
    ancilla: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        n_slots = self.n_params + self.n_inputs
        for g in self.primitive_gates:
            if max(g.wires) >= self.n_qubits:
                raise ValueError(f"{g} exceeds {self.n_qubits} qubits")
            if g.param_slot is not None and not 0 <= g.param_slot < n_slots:
                raise ParameterError(f"slot {g.param_slot} outside [0, {n_slots})")

    @cached_property
    def primitive_gates(self) -> list[Gate]:
        return flatten(self.gates)

    @property
    def gate_count(self) -> int:
        return len(self.primitive_gates)

    @property
    def n_slots(self) -> int:
        return self.n_params + self.n_inputs

    @property
    def main_qubits(self) -> list[int]:
        return [q for q in range(self.n_qubits) if q != self.ancilla]

    @property
    def is_unitary(self) -> bool:
        return self.ancilla is None

    def slots(self, params, inputs) -> np.ndarray:
        """Stack ``params`` (P,) and ``inputs`` (M,) or (B, M) into slot values."""
        params = np.asarray(params, dtype=np.float64).reshape(-1)
        inputs = np.asarray(inputs, dtype=np.float64)
        if params.shape[0] != self.n_params:
            raise ParameterError(f"expected {self.n_params} parameters, got {params.shape[0]}")
        if inputs.shape[-1:] != (self.n_inputs,) and not (self.n_inputs == 0 and inputs.size == 0):
            raise ParameterError(f"expected {self.n_inputs} inputs, got shape {inputs.shape}")
        if inputs.ndim <= 1:
            return np.concatenate([params, inputs.reshape(-1)])
        batch = inputs.shape[0]
        return np.concatenate([np.broadcast_to(params, (batch, self.n_params)), inputs], axis=1)


class Variant(str, Enum):
    NOLCU = "NoLCU"
    LCU = "LCU"
    IQP_LAYER = "IqpLayer"
    IQP_EMBEDDING = "IqpEmbedding"


@dataclass(frozen=True)
class QuantumLayerSpec:
    variant: Variant
    n_qubits: int
    n_blocks: int = 4

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.n_qubits < 1 or self.n_blocks < 1:
            raise ValueError("n_qubits and n_blocks must be positive")
        if self.variant is Variant.IQP_EMBEDDING and self.n_qubits < 2:
            raise ValueError("IQP embedding needs at least 2 qubits")

    @cached_property
    def unitary_program(self) -> CircuitProgram:
        """The circuit without the ancilla wrapper (encoding followed by W)."""
        n = self.n_qubits
        if self.variant in (Variant.NOLCU, Variant.LCU):
            return compose(build_angle_embedding(n), build_variational_ansatz(n, self.n_blocks))
        if self.variant is Variant.IQP_LAYER:
            return compose(build_angle_embedding(n), build_iqp_block(n))
        return compose(build_iqp_block(n, wrap=False, as_inputs=True), build_iqp_block(n))

    @cached_property
    def program(self) -> CircuitProgram:
        if self.variant is Variant.NOLCU:
            return self.unitary_program
        return build_lcu_wrapped(self.unitary_program)

    @property
    def n_params(self) -> int:
        return self.program.n_params

    @property
    def n_inputs(self) -> int:
        return self.program.n_inputs

    @property
    def is_unitary(self) -> bool:
        return self.variant is Variant.NOLCU

    def to_dict(self) -> dict:
        return {"variant": self.variant.value, "n_qubits": self.n_qubits, "n_blocks": self.n_blocks}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantumLayerSpec":
        return cls(Variant(d["variant"]), int(d["n_qubits"]), int(d.get("n_blocks", 4)))


# ---------------------------------------------------------------------------
# builders


def build_angle_embedding(n_qubits: int) -> CircuitProgram:
    gates = [Gate("RY", (i,), i) for i in range(n_qubits)]
    return CircuitProgram(n_qubits, gates, n_params=0, n_inputs=n_qubits, n_encoding=n_qubits)


def build_variational_ansatz(n_qubits: int, n_blocks: int = 4) -> CircuitProgram:
    """``n_blocks`` x (RX on every qubit, then CNOT i -> i+1)."""
    if n_blocks < 1:
        raise ValueError("need at least one block")
    gates: list[Gate] = []
    for j in range(n_blocks):
        gates += [Gate("RX", (i,), j * n_qubits + i) for i in range(n_qubits)]
        gates += [Gate("CNOT", (i, i + 1)) for i in range(n_qubits - 1)]
    return CircuitProgram(n_qubits, gates, n_params=n_blocks * n_qubits)


def iqp_ring(n_qubits: int, wrap: bool | None = None) -> list[tuple[int, int]]:
    """Controlled-phase pairs: (i, i+1) chain, plus (N-1, 0) closing the ring when N > 2."""
    pairs = [(i, i + 1) for i in range(n_qubits - 1)]
    if wrap is None:
        wrap = n_qubits > 2
    if wrap:
        pairs.append((n_qubits - 1, 0))
    return pairs


def iqp_param_count(n_qubits: int, wrap: bool | None = None) -> int:
    return n_qubits + len(iqp_ring(n_qubits, wrap))


def build_iqp_block(n_qubits: int, slot_base: int = 0, *, wrap: bool | None = None, as_inputs: bool = False) -> CircuitProgram:
    """H^N . RZ layer . CZ(phase) ring . H^N.

    With ``as_inputs`` the angles are data slots rather than trainable ones.
    """
    gates: list[Gate] = [Gate("H", (i,)) for i in range(n_qubits)]
    slot = slot_base
    for i in range(n_qubits):
        gates.append(Gate("RZ", (i,), slot))
        slot += 1
    for a, b in iqp_ring(n_qubits, wrap):
        gates.append(Gate("CZ", (a, b), slot))
        slot += 1
    gates += [Gate("H", (i,)) for i in range(n_qubits)]
    count = slot
    if as_inputs:
        return CircuitProgram(n_qubits, gates, n_params=0, n_inputs=count, n_encoding=len(gates))
    return CircuitProgram(n_qubits, gates, n_params=count)


def compose(encoding: CircuitProgram, trainable: CircuitProgram) -> CircuitProgram:
    """Data-encoding program followed by a trainable one on the same register."""
    if encoding.n_qubits != trainable.n_qubits:
        raise ValueError("register sizes differ")
    if encoding.n_params or trainable.n_inputs:
        raise ValueError("encoding must be data-only and trainable must be parameter-only")
    p = trainable.n_params
    enc = [g.reslotted(lambda s: s + p) for g in encoding.gates]
    return CircuitProgram(
        trainable.n_qubits,
        enc + list(trainable.gates),
        n_params=p,
        n_inputs=encoding.n_inputs,
        n_encoding=len(enc),
    )


def build_lcu_wrapped(program: CircuitProgram) -> CircuitProgram:
    """H(anc) . [encoding] . CTRL-W(anc = 1) . H(anc) with the ancilla as qubit 0.

    Post-selecting the ancilla on 0 leaves (I + W)|psi_enc>/2 on the main register.
    """
    if not program.is_unitary:
        raise ValueError("program is already wrapped")
    enc = [g.shifted(1) for g in program.gates[: program.n_encoding]]
    body = [g.shifted(1) for g in program.gates[program.n_encoding :]]
    gates = [Gate("H", (0,))] + enc + [ControlledSub(0, body), Gate("H", (0,))]
    return CircuitProgram(
        program.n_qubits + 1,
        gates,
        n_params=program.n_params,
        n_inputs=program.n_inputs,
        n_encoding=0,
        ancilla=0,
    )


def build_iqp_embedding_model(n_qubits: int) -> CircuitProgram:
    return QuantumLayerSpec(Variant.IQP_EMBEDDING, n_qubits).program


def gate_tally(n_qubits: int, n_blocks: int = 4) -> dict:
    """Itemised gate bookkeeping for the unitary and LCU-wrapped ansatz.

    ``lcu_itemised`` reproduces the itemisation 2 + (9N-4) + (N + N-1); the
    quoted closed form ``lcu_quoted`` (11N-2) differs from it by one.
    """
    n = n_qubits
    base = n + n_blocks * (2 * n - 1)
    return {
        "unitary": base,
        "lcu_program": base + 2,
        "lcu_itemised": 2 + base + (n + n - 1),
        "lcu_quoted": 11 * n - 2,
    }


# ---------------------------------------------------------------------------
# forward evaluation


def _program_of(layer) -> CircuitProgram:
    return layer.program if isinstance(layer, QuantumLayerSpec) else layer


def simulate(program: CircuitProgram, params, inputs) -> np.ndarray:
    """Final (unprojected) state(s) of ``program``; shape ``(B, 2**n)``."""
    slots = program.slots(params, inputs)
    batch = slots.shape[0] if slots.ndim == 2 else 1
    psi = zero_batch(program.n_qubits, batch)
    return run_gates(psi, program.n_qubits, program.primitive_gates, slots)


def accepted_branch(program: CircuitProgram, psi: np.ndarray) -> np.ndarray:
    """Unnormalised main-register amplitudes of the accepted (ancilla = 0) branch."""
    if program.ancilla is None:
        return psi
    n = program.n_qubits
    tensor = psi.reshape((psi.shape[0],) + (2,) * n)
    return np.take(tensor, 0, axis=program.ancilla + 1).reshape(psi.shape[0], -1)


def evaluate_batch(layer, params, inputs, *, strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Post-selected <Z_i> for a batch of inputs.

    Returns ``(expectations (B, N), success_prob (B,))``.  With ``strict`` a
    degenerate sample raises; otherwise its expectations are zeros and its
    success probability is reported as computed.
    """
    program = _program_of(layer)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if program.n_inputs == 0:
        inputs = inputs.reshape(inputs.shape[0], 0)
    psi = simulate(program, params, inputs)
    phi = accepted_branch(program, psi)
    probs = np.abs(phi) ** 2
    success = probs.sum(axis=1)
    n_main = len(program.main_qubits)
    signs = z_sign_table(n_main, range(n_main))
    bad = success < POSTSELECT_FLOOR
    if bad.any() and strict:
        raise DegeneratePostselectionError(float(success[bad][0]))
    safe = np.where(bad, 1.0, success)
    expectations = (probs @ signs.T) / safe[:, None]
    expectations[bad] = 0.0
    # report a probability: no post-selection means exactly 1, otherwise cap rounding above 1
    reported = np.ones_like(success) if program.ancilla is None else np.minimum(success, 1.0)
    return expectations, reported


def sample_expectations(layer, params, inputs, shots: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shot-noise version of :func:`evaluate_batch`.

    Draws ``shots`` full-register outcomes per sample, keeps the accepted ones,
    and estimates <Z_i> and the acceptance rate from the counts.  Samples with
    no accepted shot get zero expectations.
    """
    program = _program_of(layer)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    psi = simulate(program, params, inputs)
    full = np.abs(psi) ** 2
    full /= full.sum(axis=1, keepdims=True)
    counts = np.stack([rng.multinomial(shots, p) for p in full]).astype(np.float64)
    kept = accepted_branch(program, counts.astype(np.complex128)).real
    accepted = kept.sum(axis=1)
    n_main = len(program.main_qubits)
    signs = z_sign_table(n_main, range(n_main))
    exp = (kept @ signs.T) / np.where(accepted > 0, accepted, 1.0)[:, None]
    return exp, accepted / shots


def forward_nonunitary(layer, params, inputs) -> tuple[np.ndarray, float]:
    program = _program_of(layer)
    if program.ancilla is None:
        raise UnsupportedVariantError("forward_nonunitary needs an ancilla-wrapped layer")
    exp, success = evaluate_batch(program, params, np.asarray(inputs, dtype=np.float64)[None, :])
    return exp[0], float(success[0])


def forward_unitary(layer, params, inputs) -> np.ndarray:
    """<Z_i> of the circuit run directly, without the ancilla wrapper."""
    if isinstance(layer, QuantumLayerSpec):
        program = layer.unitary_program
    else:
        program = layer
        if not program.is_unitary:
            raise UnsupportedVariantError("program carries an ancilla; pass the unwrapped circuit")
    exp, _ = evaluate_batch(program, params, np.asarray(inputs, dtype=np.float64)[None, :])
    return exp[0]


def postselected_state(layer, params, inputs) -> tuple[StateVector, float]:
    """Renormalised main-register state and its acceptance probability."""
    program = _program_of(layer)
    psi = simulate(program, params, np.asarray(inputs, dtype=np.float64))
    phi = accepted_branch(program, psi)[0]
    p = float(np.vdot(phi, phi).real)
    if p < POSTSELECT_FLOOR:
        raise DegeneratePostselectionError(p)
    return StateVector(len(program.main_qubits), phi / math.sqrt(p)), p


def dense_unitary(program: CircuitProgram, params=(), inputs=()) -> np.ndarray:
    """Explicit 2^n x 2^n matrix of ``program`` built column by column."""
    if not program.is_unitary:
        raise UnsupportedVariantError("dense_unitary is for unwrapped programs")
    dim = 2**program.n_qubits
    slots = program.slots(params, inputs)
    cols = np.eye(dim, dtype=np.complex128)
    run_gates(cols, program.n_qubits, program.primitive_gates, slots)
    return cols.T


# ---------------------------------------------------------------------------
# general LCU


@dataclass
class LcuDecomposition:
    coefficients: np.ndarray
    unitaries: list = field(default_factory=list)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        self.unitaries = [np.asarray(u, dtype=np.complex128) for u in self.unitaries]
        if len(self.coefficients) == 0 or len(self.coefficients) != len(self.unitaries):
            raise ValueError("need one positive coefficient per unitary")
        if np.any(self.coefficients <= 0):
            raise ValueError("LCU coefficients must be positive")
        dim = self.unitaries[0].shape[0]
        if dim & (dim - 1):
            raise ValueError("operand dimension must be a power of two")
        for u in self.unitaries:
            if u.shape != (dim, dim) or not np.allclose(u.conj().T @ u, np.eye(dim), atol=1e-9):
                raise ValueError("every operand must be a unitary of equal size")

    @property
    def n_qubits(self) -> int:
        return int(self.unitaries[0].shape[0]).bit_length() - 1

    @property
    def n_ancillas(self) -> int:
        return math.ceil(math.log2(len(self.coefficients))) if len(self.coefficients) > 1 else 0

    def operator(self) -> np.ndarray:
        return sum(a * u for a, u in zip(self.coefficients, self.unitaries))


def preparation_unitary(coefficients: Sequence[float], n_ancillas: int) -> np.ndarray:
    """Real orthogonal matrix whose first column is sqrt(alpha_k / sum alpha)."""
    dim = 2**n_ancillas
    v = np.zeros(dim)
    alpha = np.asarray(coefficients, dtype=np.float64)
    v[: len(alpha)] = np.sqrt(alpha / alpha.sum())
    e0 = np.zeros(dim)
    e0[0] = 1.0
    u = v - e0
    norm2 = u @ u
    if norm2 < 1e-30:
        return np.eye(dim)
    # Householder reflection swaps e0 and v
    return np.eye(dim) - 2.0 * np.outer(u, u) / norm2


def lcu_apply_general(decomp: LcuDecomposition, input_state: StateVector) -> tuple[StateVector, float]:
    """Prepare -> select -> unprepare, then accept ancilla |0...0>."""
    n, m = decomp.n_qubits, decomp.n_ancillas
    if input_state.n_qubits != n:
        raise ValueError("input state and operands act on different registers")
    prep = preparation_unitary(decomp.coefficients, m)
    # register layout: ancilla block index (rows) x main amplitudes (cols)
    reg = np.zeros((2**m, 2**n), dtype=np.complex128)
    reg[0] = input_state.amplitudes
    reg = prep @ reg
    for k, u in enumerate(decomp.unitaries):
        reg[k] = u @ reg[k]
    reg = prep.conj().T @ reg
    out = reg[0]
    p = float(np.vdot(out, out).real)
    if p < POSTSELECT_FLOOR:
        raise DegeneratePostselectionError(p)
    return StateVector(n, out / math.sqrt(p)), p


# ---------------------------------------------------------------------------
# JSON


def _gate_to_dict(g: AnyGate) -> dict:
    if isinstance(g, ControlledSub):
        return {"kind": "ControlledSub", "control": g.control, "body": [_gate_to_dict(b) for b in g.body]}
    d = {"kind": g.kind, "targets": list(g.targets)}
    if g.param_slot is not None:
        d["slot"] = g.param_slot
    if g.controls:
        d["controls"] = list(g.controls)
    return d


def _gate_from_dict(d: dict) -> AnyGate:
    if d["kind"] == "ControlledSub":
        return ControlledSub(d["control"], [_gate_from_dict(b) for b in d["body"]])
    return Gate(d["kind"], tuple(d["targets"]), d.get("slot"), tuple(d.get("controls", ())))


def program_to_dict(program: CircuitProgram) -> dict:
    return {
        "n_qubits": program.n_qubits,
        "n_params": program.n_params,
        "n_inputs": program.n_inputs,
        "n_encoding": program.n_encoding,
        "ancilla": program.ancilla,
        "gate_count": program.gate_count,
        "gates": [_gate_to_dict(g) for g in program.gates],
    }


def program_from_dict(d: dict) -> CircuitProgram:
    return CircuitProgram(
        d["n_qubits"],
        [_gate_from_dict(g) for g in d["gates"]],
        n_params=d["n_params"],
        n_inputs=d["n_inputs"],
        n_encoding=d.get("n_encoding", 0),
        ancilla=d.get("ancilla"),
    )


def program_to_json(program: CircuitProgram, **kwargs) -> str:
    return json.dumps(program_to_dict(program), **kwargs)


def program_from_json(text: str) -> CircuitProgram:
    return program_from_dict(json.loads(text))
