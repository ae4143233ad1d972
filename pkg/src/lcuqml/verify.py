"""Quick self-checks of the simulator against dense-matrix and finite-difference oracles.

Used by ``lcuqml verify``; the full property suites live in the test tree.
"""

from __future__ import annotations

import math

import numpy as np

from .circuits import (
    LcuDecomposition,
    QuantumLayerSpec,
    Variant,
    gate_tally,
    build_angle_embedding,
    build_variational_ansatz,
    dense_unitary,
    iqp_param_count,
    lcu_apply_general,
    postselected_state,
)
from .fisher import fidelity_qfi, qfi_matrix
from .grad import grad_finite_difference, grad_reverse, grad_unitary_parameter_shift
from .statevec import StateVector
from .stats import welch_t_test


def _random_unitary(rng, dim):
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def check_lcu_identity(rng) -> float:
    worst = 0.0
    for n in (1, 2, 3):
        spec = QuantumLayerSpec(Variant.LCU, n)
        encoding, ansatz = build_angle_embedding(n), build_variational_ansatz(n, spec.n_blocks)
        for _ in range(10):
            p = rng.uniform(0, 2 * np.pi, spec.n_params)
            x = rng.uniform(0, np.pi, spec.n_inputs)
            psi = dense_unitary(encoding, [], x)[:, 0]
            target = psi + dense_unitary(ansatz, p, []) @ psi
            state, prob = postselected_state(spec, p, x)
            fid = abs(np.vdot(target / np.linalg.norm(target), state.amplitudes)) ** 2
            worst = max(worst, 1 - fid, abs(prob - np.vdot(target, target).real / 4))
    return worst


def check_general_lcu(rng) -> float:
    worst = 0.0
    for k in (1, 2, 4):
        for n in (1, 2):
            alphas = rng.uniform(0.1, 2.0, k)
            us = [_random_unitary(rng, 2**n) for _ in range(k)]
            v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
            v /= np.linalg.norm(v)
            out, p = lcu_apply_general(LcuDecomposition(alphas, us), StateVector(n, v))
            target = sum(a * u for a, u in zip(alphas, us)) @ v
            target /= np.linalg.norm(target)
            worst = max(worst, 1 - abs(np.vdot(target, out.amplitudes)) ** 2)
    return worst


def check_counts() -> bool:
    ok = True
    for n in range(2, 13):
        tally = gate_tally(n)
        ok &= QuantumLayerSpec(Variant.NOLCU, n).n_params == 4 * n
        ok &= QuantumLayerSpec(Variant.NOLCU, n).program.gate_count == 9 * n - 4
        ok &= QuantumLayerSpec(Variant.LCU, n).program.gate_count == tally["lcu_program"]
        ok &= iqp_param_count(n) == (2 * n if n > 2 else 2 * n - 1)
        ok &= QuantumLayerSpec(Variant.IQP_EMBEDDING, n).n_inputs == 2 * n - 1
    return bool(ok)


def check_gradients(rng) -> float:
    worst = 0.0
    for v in Variant:
        spec = QuantumLayerSpec(v, 3)
        p = rng.uniform(0, 2 * np.pi, spec.n_params)
        x = rng.uniform(0, np.pi, spec.n_inputs)
        a, b = grad_reverse(spec, p, x), grad_finite_difference(spec, p, x, 1e-5)
        worst = max(worst, np.abs(a.d_expectations_d_params - b.d_expectations_d_params).max())
        worst = max(worst, np.abs(a.d_expectations_d_inputs - b.d_expectations_d_inputs).max())
        if spec.is_unitary:
            for k in range(spec.n_params):
                shift = grad_unitary_parameter_shift(spec, p, x, k)
                worst = max(worst, np.abs(shift - a.d_expectations_d_params[:, k]).max())
    return worst


def check_qfi(rng) -> float:
    spec = QuantumLayerSpec(Variant.LCU, 2, n_blocks=2)
    p = rng.uniform(0, 2 * np.pi, spec.n_params)
    x = rng.uniform(0, np.pi, spec.n_inputs)
    f = qfi_matrix(spec, p, x).matrix
    g = fidelity_qfi(spec, p, x)
    return float(np.abs(f - g).max() / max(np.abs(f).max(), 1e-12))


def check_welch() -> float:
    r = welch_t_test([1, 2, 3], [11, 12, 13])
    return abs(r.t + 10 / math.sqrt(2 / 3))


CHECKS = [
    ("LCU post-selected state equals normalize((I+W)|psi>)", lambda rng: check_lcu_identity(rng), 1e-9),
    ("general LCU equals normalize(sum a_k U_k |psi>)", lambda rng: check_general_lcu(rng), 1e-9),
    ("parameter and gate counts", lambda rng: 0.0 if check_counts() else 1.0, 0.5),
    ("reverse-mode vs finite differences / parameter shift", lambda rng: check_gradients(rng), 1e-5),
    ("QFI vs fidelity Hessian (relative)", lambda rng: check_qfi(rng), 1e-4),
    ("Welch statistic closed form", lambda rng: check_welch(), 1e-12),
]


def run_checks(seed: int = 0, echo=print) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn, tol in CHECKS:
        err = fn(rng)
        ok = err < tol
        all_ok &= ok
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {err:.3e} (tol {tol:g})")
    return all_ok
