"""Derivatives of post-selected expectation values.

For a wrapped layer the measured quantity is a Rayleigh quotient

    <Z_i> = <psi|P0 Z_i P0|psi> / <psi|P0|psi>

over the unnormalised full-register state, so both numerator and the
acceptance probability are differentiated with one adjoint sweep and combined
with the quotient rule.  Unitary layers are the special case P0 = I.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuits import CircuitProgram, QuantumLayerSpec, _program_of, simulate
from .errors import DegeneratePostselectionError, ParameterError, UnsupportedVariantError
from .statevec import (
    POSTSELECT_FLOOR,
    Gate,
    _split,
    apply_matrix,
    apply_matrix_projected,
    bit_mask,
    gate_matrix,
    gate_matrix_derivative,
    run_gates,
    z_signs,
    zero_batch,
)

SHIFT = np.pi / 2


@dataclass
class GradientRecord:
    expectations: np.ndarray  # (N,)
    d_expectations_d_params: np.ndarray  # (N, P)
    d_expectations_d_inputs: np.ndarray  # (N, M)
    success_prob: float
    d_success_d_params: np.ndarray  # (P,)
    d_success_d_inputs: np.ndarray  # (M,)

    def __post_init__(self):
        for name in ("d_expectations_d_params", "d_expectations_d_inputs", "d_success_d_params", "d_success_d_inputs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite entries in {name}")


def adjoint_overlaps(program: CircuitProgram, slots: np.ndarray, psi: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    """Sweep backwards through ``program`` accumulating slot derivatives.

    ``psi`` is the final state batch ``(B, D)`` (consumed), ``lambdas`` has shape
    ``(K, B, D)``.  Returns ``G`` of shape ``(K, B, S)`` with

        G[k, b, s] = <lambda_kb| d psi_b / d slot_s>

    i.e. the complex directional overlaps; for a Hermitian observable M with
    ``lambda = M psi`` the gradient of <psi|M|psi> is ``2 * G.real``.
    """
    n = program.n_qubits
    k_count, batch, dim = lambdas.shape
    n_slots = slots.shape[-1]
    lam = lambdas.reshape(k_count * batch, dim).copy()
    out = np.zeros((k_count, batch, n_slots), dtype=np.complex128)
    for g in reversed(program.primitive_gates):
        target, controls = _split(g)
        theta = None if g.param_slot is None else slots[..., g.param_slot]
        mat = gate_matrix(g.kind, theta)
        dag = np.conj(np.swapaxes(mat, -1, -2))
        apply_matrix(psi, n, dag, target, controls)
        if g.param_slot is not None:
            dmat = gate_matrix_derivative(g.kind, theta)
            mu = apply_matrix_projected(psi, n, dmat, target, controls)
            out[:, :, g.param_slot] += np.einsum("kbd,bd->kb", lam.reshape(k_count, batch, dim).conj(), mu)
        lam_dag = np.tile(dag, (k_count, 1, 1)) if dag.ndim == 3 else dag
        apply_matrix(lam, n, lam_dag, target, controls)
    return out


def _observables(program: CircuitProgram):
    """Sign table (N, D) of Z on each main qubit and the acceptance mask (D,)."""
    n = program.n_qubits
    if program.ancilla is None:
        mask = np.ones(2**n, dtype=bool)
    else:
        mask = bit_mask(n, program.ancilla, 0)
    signs = np.stack([z_signs(n, q) for q in program.main_qubits])
    return signs, mask


def jacobian_batch(layer, params, inputs):
    """Per-sample derivatives of the post-selected expectations.

    Returns ``(exp (B,N), dexp (B,N,S), success (B,), dsuccess (B,S))`` where
    slot axis S covers parameters then inputs.
    """
    program = _program_of(layer)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    slots = program.slots(params, inputs)
    psi = simulate(program, params, inputs)
    signs, mask = _observables(program)
    projected = psi * mask
    success = np.sum(np.abs(projected) ** 2, axis=1)
    if np.any(success < POSTSELECT_FLOOR):
        raise DegeneratePostselectionError(float(success.min()))
    numer = (np.abs(projected) ** 2) @ signs.T  # (B, N)
    lambdas = np.concatenate([signs[:, None, :] * projected[None], projected[None]], axis=0)
    overlaps = 2.0 * adjoint_overlaps(program, slots, psi, lambdas).real
    d_numer, d_success = overlaps[:-1].transpose(1, 0, 2), overlaps[-1]
    exp = numer / success[:, None]
    dexp = (d_numer - exp[:, :, None] * d_success[:, None, :]) / success[:, None, None]
    return exp, dexp, success, d_success


def vjp_batch(layer, params, inputs, upstream, *, strict: bool = False):
    """Vector-Jacobian product for a minibatch in a single adjoint sweep.

    ``upstream`` is dL/d<Z> with shape (B, N).  Returns
    ``(exp, success, grad_params (P,), grad_inputs (B, M), degenerate (B,) bool)``.
    Degenerate samples contribute zero expectations and zero gradient unless
    ``strict`` is set.
    """
    program = _program_of(layer)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    upstream = np.asarray(upstream, dtype=np.float64)
    slots = program.slots(params, inputs)
    psi = simulate(program, params, inputs)
    signs, mask = _observables(program)
    projected = psi * mask
    prob = np.abs(projected) ** 2
    success = prob.sum(axis=1)
    bad = success < POSTSELECT_FLOOR
    if bad.any() and strict:
        raise DegeneratePostselectionError(float(success[bad][0]))
    safe = np.where(bad, 1.0, success)
    exp = (prob @ signs.T) / safe[:, None]
    exp[bad] = 0.0
    g = np.where(bad[:, None], 0.0, upstream)
    # d(sum_i g_i a_i / s) = sum_i (g_i / s) da_i - (sum_i g_i a_i / s^2) ds
    weights = (g / safe[:, None]) @ signs  # (B, D)
    coeff = np.sum(g * exp, axis=1) / safe
    lam = (weights - coeff[:, None]) * projected
    overlaps = 2.0 * adjoint_overlaps(program, slots, psi, lam[None]).real[0]
    p = program.n_params
    return exp, success, overlaps[:, :p].sum(axis=0), overlaps[:, p:], bad


def _record(program: CircuitProgram, exp, dexp, success, dsuccess) -> GradientRecord:
    p = program.n_params
    return GradientRecord(
        expectations=exp,
        d_expectations_d_params=dexp[:, :p],
        d_expectations_d_inputs=dexp[:, p:],
        success_prob=float(success),
        d_success_d_params=dsuccess[:p],
        d_success_d_inputs=dsuccess[p:],
    )


def grad_reverse(layer, params, inputs) -> GradientRecord:
    program = _program_of(layer)
    exp, dexp, success, dsuccess = jacobian_batch(program, params, np.asarray(inputs, dtype=np.float64)[None, :])
    return _record(program, exp[0], dexp[0], success[0], dsuccess[0])


def grad_finite_difference(layer, params, inputs, step: float = 1e-5) -> GradientRecord:
    """Central differences over every parameter and input slot."""
    if not 1e-7 <= step <= 1e-3:
        raise ParameterError(f"finite-difference step {step} outside [1e-7, 1e-3]")
    program = _program_of(layer)
    params = np.asarray(params, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    base = program.slots(params, inputs)
    p = program.n_params
    # evaluate all +/- perturbations as one batch of slot vectors
    eye = np.eye(base.shape[0]) * step
    stacked = np.concatenate([base + eye, base - eye, base[None]], axis=0)
    exp, success = _eval_slots(program, stacked)
    s = base.shape[0]
    dexp = ((exp[:s] - exp[s : 2 * s]) / (2 * step)).T
    dsucc = (success[:s] - success[s : 2 * s]) / (2 * step)
    return _record(program, exp[-1], dexp, success[-1], dsucc)


def _eval_slots(program: CircuitProgram, slot_batch: np.ndarray):
    """Expectations and acceptance for per-row slot vectors (params may vary per row)."""
    psi = zero_batch(program.n_qubits, slot_batch.shape[0])
    run_gates(psi, program.n_qubits, program.primitive_gates, slot_batch)
    signs, mask = _observables(program)
    prob = np.abs(psi * mask) ** 2
    success = prob.sum(axis=1)
    if np.any(success < POSTSELECT_FLOOR):
        raise DegeneratePostselectionError(float(success.min()))
    return (prob @ signs.T) / success[:, None], success


def grad_unitary_parameter_shift(layer, params, inputs, param_index: int) -> np.ndarray:
    """Two-term shift rule, summed over every gate that reads the slot."""
    if isinstance(layer, QuantumLayerSpec) and not layer.is_unitary:
        raise UnsupportedVariantError(f"parameter shift needs a unitary variant, got {layer.variant.value}")
    program = _program_of(layer)
    if not program.is_unitary:
        raise UnsupportedVariantError("parameter shift needs a unitary circuit")
    base = program.slots(params, inputs)
    if not 0 <= param_index < base.shape[0]:
        raise ParameterError(f"slot {param_index} out of range")
    gates = program.primitive_gates
    hits = [i for i, g in enumerate(gates) if g.param_slot == param_index]
    extra = base.shape[0]
    total = np.zeros(len(program.main_qubits))
    for i in hits:
        g = gates[i]
        if g.controls:
            raise UnsupportedVariantError("shift rule does not cover controlled rotations")
        # route this single occurrence through a fresh slot so it shifts alone
        local = list(gates)
        local[i] = Gate(g.kind, g.targets, extra, g.controls)
        shifted = np.stack([np.append(base, base[param_index] + SHIFT), np.append(base, base[param_index] - SHIFT)])
        psi = zero_batch(program.n_qubits, 2)
        run_gates(psi, program.n_qubits, local, shifted)
        signs = np.stack([z_signs(program.n_qubits, q) for q in program.main_qubits])
        exp = (np.abs(psi) ** 2) @ signs.T
        total += 0.5 * (exp[0] - exp[1])
    return total
