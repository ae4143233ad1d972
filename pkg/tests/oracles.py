"""Independent dense-matrix oracles built from Kronecker products.

Nothing here touches the simulator kernels; gates are written out as 2x2
matrices and lifted to the full register with ``np.kron``.  The Welch
oracle integrates the t density in mpmath instead of using a beta function.
"""

import mpmath as mp
import numpy as np

I2 = np.eye(2, dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)
P0 = np.diag([1.0, 0.0]).astype(complex)
P1 = np.diag([0.0, 1.0]).astype(complex)


def rx(t):
    return np.cos(t / 2) * I2 - 1j * np.sin(t / 2) * X


def ry(t):
    return np.cos(t / 2) * I2 - 1j * np.sin(t / 2) * Y


def rz(t):
    return np.cos(t / 2) * I2 - 1j * np.sin(t / 2) * Z


def phase(t):
    return np.diag([1.0, np.exp(1j * t)])


def lift(ops: dict, n: int) -> np.ndarray:
    """Tensor product with ``ops[q]`` on qubit q (qubit 0 leftmost / most significant)."""
    out = np.array([[1.0 + 0j]])
    for q in range(n):
        out = np.kron(out, ops.get(q, I2))
    return out


def controlled(u: np.ndarray, controls, target, n) -> np.ndarray:
    """|1..1><1..1|_controls (x) u_target + (everything else) (x) I."""
    on = lift({**{c: P1 for c in controls}, target: u}, n)
    all_on = lift({c: P1 for c in controls}, n)
    return np.eye(2**n) - all_on + on


def gate_dense(gate, slots, n, extra_controls=()):
    t = None if gate.param_slot is None else slots[gate.param_slot]
    mats = {"H": H, "X": X, "Y": Y, "Z": Z}
    controls = tuple(gate.controls) + tuple(extra_controls)
    if gate.kind in mats:
        u, target = mats[gate.kind], gate.targets[0]
    elif gate.kind == "RX":
        u, target = rx(t), gate.targets[0]
    elif gate.kind == "RY":
        u, target = ry(t), gate.targets[0]
    elif gate.kind == "RZ":
        u, target = rz(t), gate.targets[0]
    elif gate.kind == "CNOT":
        u, target = X, gate.targets[1]
        controls = (gate.targets[0],) + controls
    elif gate.kind == "CZ":
        u, target = phase(t), gate.targets[1]
        controls = (gate.targets[0],) + controls
    else:
        raise ValueError(gate.kind)
    return controlled(u, controls, target, n) if controls else lift({target: u}, n)


def program_dense(gates, slots, n, extra_controls=()):
    """Dense matrix of a gate list (ControlledSub handled recursively)."""
    total = np.eye(2**n, dtype=complex)
    for g in gates:
        if g.kind == "ControlledSub":
            m = program_dense(g.body, slots, n, tuple(extra_controls) + (g.control,))
        else:
            m = gate_dense(g, slots, n, extra_controls)
        total = m @ total
    return total


def z_on(q, n):
    return lift({q: Z}, n)


def random_state(rng, n):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


def random_unitary(rng, dim):
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def fidelity(a, b):
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return abs(np.vdot(a, b)) ** 2


def oracle_welch(a, b):
    """High-precision Welch test; p from quadrature of the t density."""
    mp.mp.dps = 40
    a = [mp.mpf(float(v)) for v in a]
    b = [mp.mpf(float(v)) for v in b]
    ma, mb = mp.fsum(a) / len(a), mp.fsum(b) / len(b)
    va = mp.fsum((v - ma) ** 2 for v in a) / (len(a) - 1) / len(a)
    vb = mp.fsum((v - mb) ** 2 for v in b) / (len(b) - 1) / len(b)
    t = (ma - mb) / mp.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    c = mp.gamma((df + 1) / 2) / (mp.sqrt(df * mp.pi) * mp.gamma(df / 2))

    def pdf(x):
        return c * (1 + x * x / df) ** (-(df + 1) / 2)

    p = 2 * mp.quad(pdf, [abs(t), abs(t) + 10, mp.inf])
    return float(t), float(df), float(p)
