"""Single-layer variational circuit with a configurable CNOT block.

Circuit, per qubit q = 1..n:  H, RY(f_q);  then every CNOT of beta in
row-major order (ascending control, then ascending target);  then RY(theta_q);
finally <Z_q> on every qubit.

Gradients use the two-term parameter-shift rule, which is exact for RY:

    dz_j/dx_i = (z_j(x_i + pi/2) - z_j(x_i - pi/2)) / 2
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .entanglement import EntanglementMatrix

SHIFT = np.pi / 2


@dataclass(frozen=True)
class CircuitSpec:
    beta: EntanglementMatrix

    @property
    def n_q(self) -> int:
        return self.beta.n_q

    def cnot_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """0-based (controls, targets) in canonical application order."""
        rows, cols = np.nonzero(self.beta.bits)
        return rows.astype(np.int64), cols.astype(np.int64)


@dataclass(frozen=True)
class QuantumGradients:
    d_theta: np.ndarray  # [..., i, j] = dz_j / dtheta_i
    d_f: np.ndarray  # [..., i, j] = dz_j / df_i


def _as_batch(spec, f, theta):
    n = spec.n_q
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    theta = np.asarray(theta, dtype=np.float64)
    if f.shape[1] != n or theta.shape != (n,):
        raise ValueError(f"angle arrays must have length n_q={n}; got f{f.shape[1:]}, theta{theta.shape}")
    return f, theta


def forward_batch(spec: CircuitSpec, f, theta, backend=None) -> np.ndarray:
    """Z expectations for each row of ``f`` (shape (B, n_q)) with shared ``theta``."""
    f, theta = _as_batch(spec, f, theta)
    backend = backend or kernels.active
    ctrl, tgt = spec.cnot_arrays()
    thetas = np.ascontiguousarray(np.broadcast_to(theta, f.shape))
    return backend.circuit_z(np.ascontiguousarray(f), thetas, ctrl, tgt, spec.n_q)


def forward(spec: CircuitSpec, f, theta, backend=None) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1:
        raise ValueError("forward takes a single angle vector; use forward_batch")
    return forward_batch(spec, f[None, :], theta, backend)[0]


def gradients_batch(spec: CircuitSpec, f, theta, backend=None):
    """Outputs and parameter-shift partials for a batch of encoding vectors.

    Returns ``(z, grads)`` with ``z`` of shape (B, n) and ``grads.d_f`` /
    ``grads.d_theta`` of shape (B, n, n). Every shifted circuit of the whole
    batch goes to the kernel in one call.
    """
    f, theta = _as_batch(spec, f, theta)
    backend = backend or kernels.active
    b, n = f.shape
    k = 1 + 4 * n
    # row layout per sample: base, f_i+, f_i-, ..., theta_i+, theta_i-, ...
    fa = np.repeat(f[:, None, :], k, axis=1)
    ta = np.repeat(np.broadcast_to(theta, (b, n))[:, None, :], k, axis=1)
    idx = np.arange(n)
    fa[:, 1 + 2 * idx, idx] += SHIFT
    fa[:, 2 + 2 * idx, idx] -= SHIFT
    ta[:, 1 + 2 * n + 2 * idx, idx] += SHIFT
    ta[:, 2 + 2 * n + 2 * idx, idx] -= SHIFT
    ctrl, tgt = spec.cnot_arrays()
    z = backend.circuit_z(fa.reshape(b * k, n), ta.reshape(b * k, n), ctrl, tgt, n).reshape(b, k, n)
    d_f = 0.5 * (z[:, 1:1 + 2 * n:2, :] - z[:, 2:2 + 2 * n:2, :])
    d_theta = 0.5 * (z[:, 1 + 2 * n::2, :] - z[:, 2 + 2 * n::2, :])
    return z[:, 0, :], QuantumGradients(d_theta=d_theta, d_f=d_f)


def gradients(spec: CircuitSpec, f, theta, backend=None) -> QuantumGradients:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1:
        raise ValueError("gradients takes a single angle vector; use gradients_batch")
    _, g = gradients_batch(spec, f[None, :], theta, backend)
    return QuantumGradients(d_theta=g.d_theta[0], d_f=g.d_f[0])
