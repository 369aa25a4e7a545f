"""Dense statevector simulator for H, RY and CNOT on a handful of qubits.

Qubits are numbered 1..n at this interface, qubit 1 being the most
significant bit of the basis index, so ``|q1 q2 ... qn>`` reads left to right.
Gate application mutates the state in place and returns it for chaining.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from . import kernels

MAX_QUBITS = 20


@dataclass(frozen=True)
class SingleQubitGate:
    """A 2x2 unitary. Non-unitary matrices are rejected at construction."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.shape != (2, 2):
            raise ValueError(f"gate must be 2x2, got shape {m.shape}")
        if not np.allclose(m.conj().T @ m, np.eye(2), rtol=0.0, atol=1e-12):
            raise ValueError("gate matrix is not unitary")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)


def hadamard() -> SingleQubitGate:
    return SingleQubitGate(np.array([[1, 1], [1, -1]]) / np.sqrt(2.0))


def ry(theta: float) -> SingleQubitGate:
    """RY(theta) = exp(-i theta Y / 2)."""
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return SingleQubitGate(np.array([[c, -s], [s, c]]))


class StateVector:
    __slots__ = ("n_q", "amplitudes")

    def __init__(self, n_q: int, amplitudes):
        amps = np.ascontiguousarray(amplitudes, dtype=np.complex128)
        if amps.shape != (1 << n_q,):
            raise ValueError(f"expected {1 << n_q} amplitudes for {n_q} qubits, got {amps.shape}")
        self.n_q = n_q
        self.amplitudes = amps

    def copy(self) -> "StateVector":
        return StateVector(self.n_q, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def __repr__(self):
        return f"StateVector(n_q={self.n_q}, norm={self.norm():.12f})"


def _check_qubit(n_q: int, q: int) -> int:
    if not 1 <= q <= n_q:
        raise IndexError(f"qubit index {q} out of range 1..{n_q}")
    return q - 1


def init_zero(n_q: int) -> StateVector:
    if not 1 <= n_q <= MAX_QUBITS:
        raise ValueError(f"n_q must be in 1..{MAX_QUBITS}, got {n_q}")
    amps = np.zeros(1 << n_q, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_q, amps)


def apply_single(state: StateVector, gate: SingleQubitGate, q: int) -> StateVector:
    q0 = _check_qubit(state.n_q, q)
    kernels.active.apply_gate(state.amplitudes[None, :], gate.matrix, q0, state.n_q)
    return state


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    if control == target:
        raise ValueError(f"control and target are both qubit {control}")
    c0 = _check_qubit(state.n_q, control)
    t0 = _check_qubit(state.n_q, target)
    kernels.active.apply_cnot(state.amplitudes[None, :], c0, t0, state.n_q)
    return state


def expectation_z(state: StateVector, q: int) -> float:
    """<Z_q> = P(bit q is 0) - P(bit q is 1)."""
    q0 = _check_qubit(state.n_q, q)
    return float(kernels.active.expect_z(state.amplitudes[None, :], state.n_q)[0, q0])


def expectation_z_all(state: StateVector) -> np.ndarray:
    return kernels.active.expect_z(state.amplitudes[None, :], state.n_q)[0]


# Gate sequences are lists of tuples: ("H", q), ("RY", q, angle), ("CNOT", c, t).


def run_sequence(ops: Sequence[tuple], n_q: int, state: StateVector | None = None) -> StateVector:
    """Apply a gate sequence with the in-place kernels, starting from |0...0> by default."""
    state = init_zero(n_q) if state is None else state
    for op in ops:
        name = op[0].upper()
        if name == "H":
            apply_single(state, hadamard(), op[1])
        elif name == "RY":
            apply_single(state, ry(op[2]), op[1])
        elif name == "CNOT":
            apply_cnot(state, op[1], op[2])
        else:
            raise ValueError(f"unknown gate {op[0]!r}")
    return state


def _embed(gate: np.ndarray, q0: int, n_q: int) -> np.ndarray:
    factors = [gate if k == q0 else np.eye(2) for k in range(n_q)]
    return reduce(np.kron, factors)


def _cnot_matrix(c0: int, t0: int, n_q: int) -> np.ndarray:
    p0 = np.array([[1, 0], [0, 0]], dtype=np.complex128)
    p1 = np.array([[0, 0], [0, 1]], dtype=np.complex128)
    x = np.array([[0, 1], [1, 0]], dtype=np.complex128)
    keep = reduce(np.kron, [p0 if k == c0 else np.eye(2) for k in range(n_q)])
    flip = reduce(np.kron, [p1 if k == c0 else x if k == t0 else np.eye(2) for k in range(n_q)])
    return keep + flip


def dense_oracle(ops: Sequence[tuple], n_q: int) -> np.ndarray:
    """Full unitary of a gate sequence by explicit Kronecker products.

    Test oracle only; limited to three qubits.
    """
    if not 1 <= n_q <= 3:
        raise ValueError(f"dense_oracle supports 1..3 qubits, got {n_q}")
    u = np.eye(1 << n_q, dtype=np.complex128)
    for op in ops:
        name = op[0].upper()
        if name == "H":
            g = _embed(hadamard().matrix, _check_qubit(n_q, op[1]), n_q)
        elif name == "RY":
            g = _embed(ry(op[2]).matrix, _check_qubit(n_q, op[1]), n_q)
        elif name == "CNOT":
            if op[1] == op[2]:
                raise ValueError("CNOT control equals target")
            g = _cnot_matrix(_check_qubit(n_q, op[1]), _check_qubit(n_q, op[2]), n_q)
        else:
            raise ValueError(f"unknown gate {op[0]!r}")
        u = g @ u
    return u
