"""Dense statevector simulator.

Qubit 0 is the most significant bit of the amplitude index.  All kernels work
on a *batch* of states stored as a ``(B, 2**n)`` complex128 array so that a
minibatch of samples (each with its own data-encoding angles) can be pushed
through a circuit in one sweep.  The single-state API (:class:`StateVector`,
:func:`apply_gate`, ...) is a thin layer over the same kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import (
    CapacityError,
    DegeneratePostselectionError,
    ParameterError,
    QubitIndexError,
)

MAX_QUBITS = 24
POSTSELECT_FLOOR = 1e-12

PARAMETRIC_KINDS = frozenset({"RX", "RY", "RZ", "CZ"})
FIXED_KINDS = frozenset({"H", "X", "Y", "Z", "CNOT"})
_ARITY = {"H": 1, "X": 1, "Y": 1, "Z": 1, "RX": 1, "RY": 1, "RZ": 1, "CNOT": 2, "CZ": 2}

_FIXED = {
    "H": np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128) / np.sqrt(2.0),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128),
    "Y": np.array([[0.0, -1j], [1j, 0.0]], dtype=np.complex128),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128),
}
_FIXED["CNOT"] = _FIXED["X"]


@dataclass(frozen=True)
class Gate:
    """One primitive gate.

    ``targets`` holds (control, target) for CNOT and the two qubits for CZ.
    ``controls`` lists extra control qubits added when a gate is placed inside
    a controlled sub-circuit.
    """

    kind: str
    targets: tuple[int, ...]
    param_slot: int | None = None
    controls: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        object.__setattr__(self, "controls", tuple(int(c) for c in self.controls))
        if len(self.targets) != _ARITY[self.kind]:
            raise ValueError(f"{self.kind} acts on {_ARITY[self.kind]} qubit(s), got {self.targets}")
        wires = self.targets + self.controls
        if len(set(wires)) != len(wires):
            raise ValueError(f"gate wires must be distinct, got {wires}")
        if min(wires) < 0:
            raise QubitIndexError(f"negative qubit index in {wires}")
        if self.kind in PARAMETRIC_KINDS and self.param_slot is None:
            raise ValueError(f"{self.kind} needs a parameter slot")
        if self.kind in FIXED_KINDS and self.param_slot is not None:
            raise ValueError(f"{self.kind} takes no parameter")

    @property
    def wires(self) -> tuple[int, ...]:
        return self.targets + self.controls

    def shifted(self, offset: int) -> "Gate":
        return Gate(
            self.kind,
            tuple(t + offset for t in self.targets),
            self.param_slot,
            tuple(c + offset for c in self.controls),
        )

    def reslotted(self, mapping) -> "Gate":
        if self.param_slot is None:
            return self
        return Gate(self.kind, self.targets, mapping(self.param_slot), self.controls)


@dataclass(frozen=True)
class ControlledSub:
    """A sub-circuit executed only on the amplitude half where ``control`` is 1."""

    control: int
    body: tuple = field(default_factory=tuple)
    kind = "ControlledSub"

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))
        for g in self.body:
            if self.control in g.wires:
                raise ValueError(f"control qubit {self.control} also used inside the body")

    @property
    def wires(self) -> tuple[int, ...]:
        ws = {self.control}
        for g in self.body:
            ws.update(g.wires)
        return tuple(sorted(ws))

    @property
    def param_slot(self):
        return None


AnyGate = Union[Gate, ControlledSub]


def flatten(gates: Iterable[AnyGate], extra_controls: tuple[int, ...] = ()) -> list[Gate]:
    """Expand controlled sub-circuits into primitive gates carrying controls."""
    out: list[Gate] = []
    for g in gates:
        if isinstance(g, ControlledSub):
            out.extend(flatten(g.body, extra_controls + (g.control,)))
        elif extra_controls:
            out.append(Gate(g.kind, g.targets, g.param_slot, g.controls + extra_controls))
        else:
            out.append(g)
    return out


# ---------------------------------------------------------------------------
# gate matrices (vectorised over a batch of angles)


def gate_matrix(kind: str, theta=None) -> np.ndarray:
    """2x2 matrix acting on the (last) target qubit; shape ``(..., 2, 2)``."""
    if kind in _FIXED:
        return _FIXED[kind]
    theta = np.asarray(theta, dtype=np.float64)
    out = np.zeros(theta.shape + (2, 2), dtype=np.complex128)
    if kind == "RX":
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
    elif kind == "RY":
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
    elif kind == "RZ":
        out[..., 0, 0] = np.exp(-0.5j * theta)
        out[..., 1, 1] = np.exp(0.5j * theta)
    elif kind == "CZ":
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = np.exp(1j * theta)
    else:
        raise ValueError(kind)
    return out


def gate_matrix_derivative(kind: str, theta) -> np.ndarray:
    """d/dtheta of :func:`gate_matrix` for parametric kinds."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.zeros(theta.shape + (2, 2), dtype=np.complex128)
    if kind == "RX":
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        out[..., 0, 0] = -0.5 * s
        out[..., 1, 1] = -0.5 * s
        out[..., 0, 1] = -0.5j * c
        out[..., 1, 0] = -0.5j * c
    elif kind == "RY":
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        out[..., 0, 0] = -0.5 * s
        out[..., 1, 1] = -0.5 * s
        out[..., 0, 1] = -0.5 * c
        out[..., 1, 0] = 0.5 * c
    elif kind == "RZ":
        out[..., 0, 0] = -0.5j * np.exp(-0.5j * theta)
        out[..., 1, 1] = 0.5j * np.exp(0.5j * theta)
    elif kind == "CZ":
        out[..., 1, 1] = 1j * np.exp(1j * theta)
    else:
        raise ValueError(f"{kind} is not parametric")
    return out


def _split(gate: Gate) -> tuple[int, tuple[int, ...]]:
    """(target, controls) in the single-target-with-controls normal form."""
    if gate.kind in ("CNOT", "CZ"):
        return gate.targets[1], (gate.targets[0],) + gate.controls
    return gate.targets[0], gate.controls


# ---------------------------------------------------------------------------
# batched kernels


def _views(psi: np.ndarray, n: int, target: int, controls: Sequence[int]):
    tensor = psi.reshape((psi.shape[0],) + (2,) * n)
    index = [slice(None)] * (n + 1)
    for c in controls:
        index[c + 1] = 1
    sub = tensor[tuple(index)]
    axis = 1 + target - sum(1 for c in controls if c < target)
    return np.moveaxis(sub, axis, -1)


def _contract(sub: np.ndarray, mat: np.ndarray) -> np.ndarray:
    if mat.ndim == 2:
        return sub @ mat.T
    # per-sample matrices: sub (B, ..., 2), mat (B, 2, 2)
    flat = sub.reshape(sub.shape[0], -1, 2)
    return np.einsum("bkj,bij->bki", flat, mat).reshape(sub.shape)


def apply_matrix(psi: np.ndarray, n: int, mat: np.ndarray, target: int, controls: Sequence[int] = ()) -> None:
    """In-place ``psi <- (|1..1><1..1|_controls (x) mat_target + rest) psi``."""
    sub = _views(psi, n, target, controls)
    sub[...] = _contract(sub, mat)


def apply_matrix_projected(psi: np.ndarray, n: int, mat: np.ndarray, target: int, controls: Sequence[int] = ()) -> np.ndarray:
    """Return ``(|1..1><1..1|_controls (x) mat_target) psi``; zero off the control block."""
    out = np.zeros_like(psi)
    src = _views(psi, n, target, controls)
    _views(out, n, target, controls)[...] = _contract(src, mat)
    return out


def _angles(slots: np.ndarray, slot: int) -> np.ndarray:
    return slots[..., slot]


def run_gates(psi: np.ndarray, n: int, gates: Sequence[Gate], slots: np.ndarray) -> np.ndarray:
    """Apply flattened ``gates`` in order to the batch ``psi`` (in place).

    ``slots`` has shape ``(S,)`` (shared) or ``(B, S)`` (per sample).
    """
    for g in gates:
        target, controls = _split(g)
        mat = gate_matrix(g.kind, None if g.param_slot is None else _angles(slots, g.param_slot))
        apply_matrix(psi, n, mat, target, controls)
    return psi


def zero_batch(n: int, batch: int) -> np.ndarray:
    psi = np.zeros((batch, 2**n), dtype=np.complex128)
    psi[:, 0] = 1.0
    return psi


def z_signs(n: int, qubit: int) -> np.ndarray:
    """+1/-1 eigenvalue of Z_qubit for every basis index."""
    idx = np.arange(2**n)
    return 1.0 - 2.0 * ((idx >> (n - 1 - qubit)) & 1)


def z_sign_table(n: int, qubits: Sequence[int]) -> np.ndarray:
    return np.stack([z_signs(n, q) for q in qubits])


def bit_mask(n: int, qubit: int, outcome: int) -> np.ndarray:
    idx = np.arange(2**n)
    return ((idx >> (n - 1 - qubit)) & 1) == outcome


# ---------------------------------------------------------------------------
# single-state API


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128).reshape(-1)
        if self.amplitudes.shape[0] != 2**self.n_qubits:
            raise ValueError(
                f"{self.n_qubits} qubits need {2**self.n_qubits} amplitudes, got {self.amplitudes.shape[0]}"
            )

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amplitudes.copy())


def _check_qubits(n: int) -> None:
    if not 1 <= n <= MAX_QUBITS:
        raise CapacityError(f"qubit count must be in [1, {MAX_QUBITS}], got {n}")


def new_zero_state(n_qubits: int) -> StateVector:
    _check_qubits(n_qubits)
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def validate_gate(gate: AnyGate, n_qubits: int, n_slots: int | None = None) -> None:
    for g in flatten([gate]):
        bad = [w for w in g.wires if w >= n_qubits]
        if bad:
            raise QubitIndexError(f"{g.kind} uses qubit(s) {bad} on a {n_qubits}-qubit state")
        if g.param_slot is not None and n_slots is not None and not 0 <= g.param_slot < n_slots:
            raise ParameterError(f"parameter slot {g.param_slot} unresolved ({n_slots} values given)")


def apply_gate(state: StateVector, gate: AnyGate, params=()) -> StateVector:
    """Return a new state with ``gate`` applied; ``params`` is the slot vector."""
    values = np.asarray(params, dtype=np.float64).reshape(-1)
    validate_gate(gate, state.n_qubits, values.shape[0])
    psi = state.amplitudes.copy()[None, :]
    run_gates(psi, state.n_qubits, flatten([gate]), values)
    return StateVector(state.n_qubits, psi[0])


def probabilities(state: StateVector) -> np.ndarray:
    return np.abs(state.amplitudes) ** 2


def expectation_z(state: StateVector, qubit: int) -> float:
    if not 0 <= qubit < state.n_qubits:
        raise QubitIndexError(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    return float(z_signs(state.n_qubits, qubit) @ probabilities(state))


def postselect(state: StateVector, qubit: int, outcome: int) -> tuple[StateVector, float]:
    """Project ``qubit`` onto ``outcome``, drop it, and renormalise.

    Returns the reduced state on the remaining qubits and the probability mass
    of the accepted branch.
    """
    n = state.n_qubits
    if not 0 <= qubit < n:
        raise QubitIndexError(f"qubit {qubit} out of range for {n} qubits")
    if outcome not in (0, 1):
        raise ValueError("outcome must be 0 or 1")
    if n == 1:
        raise CapacityError("cannot post-select away the only qubit")
    branch = np.take(state.amplitudes.reshape((2,) * n), outcome, axis=qubit).reshape(-1)
    p = float(np.vdot(branch, branch).real)
    if p < POSTSELECT_FLOOR:
        raise DegeneratePostselectionError(p)
    return StateVector(n - 1, branch / np.sqrt(p)), p
