"""Quantum Fisher information and Fisher-efficiency metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .circuits import CircuitProgram, _program_of, accepted_branch, simulate
from .errors import DegeneratePostselectionError
from .grad import adjoint_overlaps
from .statevec import POSTSELECT_FLOOR, bit_mask


@dataclass
class QfiResult:
    matrix: np.ndarray
    trace: float

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if not np.allclose(self.matrix, self.matrix.T, atol=1e-9):
            raise ValueError("QFI matrix is not symmetric")

    @property
    def min_eigenvalue(self) -> float:
        if self.matrix.size == 0:
            return 0.0
        return float(np.linalg.eigvalsh(self.matrix).min())


def state_and_jacobian(layer, params, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Normalised (post-selected) state and d|psi>/d theta for trainable slots.

    Returns ``psi`` of shape (D,) and ``J`` of shape (D, P).
    """
    program = _program_of(layer)
    inputs = np.asarray(inputs, dtype=np.float64)[None, :]
    slots = program.slots(params, inputs)
    full = simulate(program, params, inputs)
    phi = accepted_branch(program, full)[0]
    norm2 = float(np.vdot(phi, phi).real)
    if norm2 < POSTSELECT_FLOOR:
        raise DegeneratePostselectionError(norm2)
    # one adjoint cotangent per accepted basis vector gives every amplitude derivative
    n = program.n_qubits
    if program.ancilla is None:
        accepted = np.arange(2**n)
    else:
        accepted = np.flatnonzero(bit_mask(n, program.ancilla, 0))
    basis = np.zeros((accepted.size, 1, 2**n), dtype=np.complex128)
    basis[np.arange(accepted.size), 0, accepted] = 1.0
    jac_full = adjoint_overlaps(program, slots, full.copy(), basis)[:, 0, : program.n_params]
    r = math.sqrt(norm2)
    psi = phi / r
    # derivative of phi / |phi|
    radial = np.real(phi.conj() @ jac_full) / norm2
    jac = jac_full / r - np.outer(psi, radial)
    return psi, jac


def qfi_from_jacobian(psi: np.ndarray, jac: np.ndarray) -> QfiResult:
    """F_ij = 4 Re[<d_i psi|d_j psi> - <d_i psi|psi><psi|d_j psi>]."""
    gram = jac.conj().T @ jac
    berry = jac.conj().T @ psi
    f = 4.0 * np.real(gram - np.outer(berry, berry.conj()))
    f = 0.5 * (f + f.T)
    return QfiResult(f, float(np.trace(f)))


def qfi_matrix(layer, params, inputs) -> QfiResult:
    psi, jac = state_and_jacobian(layer, params, inputs)
    return qfi_from_jacobian(psi, jac)


def effective_dimension(qfi: QfiResult) -> float:
    return float(np.trace(qfi.matrix))


def fidelity_qfi(layer, params, inputs, step: float = 1e-3) -> np.ndarray:
    """Finite-difference QFI from the fidelity's Hessian.

    F_ij = -2 d^2/de_i de_j |<psi(t)|psi(t+e)>|^2 at e = 0, using the
    four-point mixed difference.  Independent of the amplitude-derivative path.
    """
    program = _program_of(layer)
    params = np.asarray(params, dtype=np.float64)
    ref = _normalised_state(program, params, inputs)
    p = params.shape[0]

    def fid(delta):
        psi = _normalised_state(program, params + delta, inputs)
        return abs(np.vdot(ref, psi)) ** 2

    out = np.zeros((p, p))
    eye = np.eye(p) * step
    for i in range(p):
        for j in range(i, p):
            val = (fid(eye[i] + eye[j]) - fid(eye[i] - eye[j]) - fid(-eye[i] + eye[j]) + fid(-eye[i] - eye[j])) / (4 * step**2)
            out[i, j] = out[j, i] = -2.0 * val
    return out


def _normalised_state(program: CircuitProgram, params, inputs) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)[None, :]
    phi = accepted_branch(program, simulate(program, params, inputs))[0]
    return phi / np.linalg.norm(phi)


# ---------------------------------------------------------------------------
# efficiency metrics


def fisher_efficiency(n_classical: int, n_quantum: int) -> float:
    """Relative parameter saving in percent: (Nc - Nq) / Nc * 100."""
    if n_classical == 0:
        raise ZeroDivisionError("classical parameter count is zero")
    return (n_classical - n_quantum) / n_classical * 100.0


def fisher_efficiency_perf(acc_lcu: float, acc_nolcu: float, acc_classical: float) -> float:
    """Performance-ratio form: (acc_lcu - acc_nolcu) / acc_classical * 100."""
    if acc_classical == 0:
        raise ZeroDivisionError("classical baseline performance is zero")
    return (acc_lcu - acc_nolcu) / acc_classical * 100.0


@dataclass
class EfficiencyReport:
    eta_param: float
    eta_perf: float | None
    n_classical: int
    n_quantum: int
    acc_lcu: float | None = None
    acc_nolcu: float | None = None
    acc_classical: float | None = None

    @classmethod
    def build(cls, n_classical, n_quantum, acc_lcu=None, acc_nolcu=None, acc_classical=None):
        perf = None
        if None not in (acc_lcu, acc_nolcu, acc_classical):
            perf = fisher_efficiency_perf(acc_lcu, acc_nolcu, acc_classical)
        return cls(fisher_efficiency(n_classical, n_quantum), perf, int(n_classical), int(n_quantum), acc_lcu, acc_nolcu, acc_classical)

    def to_dict(self) -> dict:
        return asdict(self)
