"""Statevector kernels, in a numba flavour and a pure-numpy flavour.

All kernels work on a batch of states stored row-wise in a complex128 array
of shape ``(M, 2**n)`` and mutate it in place. Qubits are 0-based here; qubit
0 is the most significant bit of the basis index. The public modules convert
from the 1-based indices used everywhere else.

``numba_backend`` and ``numpy_backend`` expose the same five callables;
``active`` is the one selected at import time (see ``_accel``).
"""
from types import SimpleNamespace

import numpy as np

from ._accel import USE_NUMBA, njit

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


# ---------------------------------------------------------------- numba path


@njit(cache=True)
def _nb_apply_gate(amps, gate, q, n):
    stride = 1 << (n - 1 - q)
    dim = amps.shape[1]
    g00, g01, g10, g11 = gate[0, 0], gate[0, 1], gate[1, 0], gate[1, 1]
    for m in range(amps.shape[0]):
        for hi in range(0, dim, 2 * stride):
            for lo in range(stride):
                i = hi + lo
                j = i + stride
                a0 = amps[m, i]
                a1 = amps[m, j]
                amps[m, i] = g00 * a0 + g01 * a1
                amps[m, j] = g10 * a0 + g11 * a1


@njit(cache=True)
def _nb_apply_cnot(amps, c, t, n):
    cmask = 1 << (n - 1 - c)
    tmask = 1 << (n - 1 - t)
    dim = amps.shape[1]
    for m in range(amps.shape[0]):
        for i in range(dim):
            # visit each swapped pair once, from its target-bit-0 member
            if (i & cmask) and not (i & tmask):
                j = i | tmask
                tmp = amps[m, i]
                amps[m, i] = amps[m, j]
                amps[m, j] = tmp


@njit(cache=True)
def _nb_expect_z(amps, n):
    out = np.zeros((amps.shape[0], n))
    dim = amps.shape[1]
    for m in range(amps.shape[0]):
        for i in range(dim):
            a = amps[m, i]
            p = a.real * a.real + a.imag * a.imag
            for q in range(n):
                if (i >> (n - 1 - q)) & 1:
                    out[m, q] -= p
                else:
                    out[m, q] += p
    return out


@njit(cache=True)
def _nb_ry_inplace(state, theta, q, n):
    stride = 1 << (n - 1 - q)
    c = np.cos(0.5 * theta)
    s = np.sin(0.5 * theta)
    for hi in range(0, state.shape[0], 2 * stride):
        for lo in range(stride):
            i = hi + lo
            j = i + stride
            a0 = state[i]
            a1 = state[j]
            state[i] = c * a0 - s * a1
            state[j] = s * a0 + c * a1


@njit(cache=True)
def _nb_h_inplace(state, q, n):
    stride = 1 << (n - 1 - q)
    for hi in range(0, state.shape[0], 2 * stride):
        for lo in range(stride):
            i = hi + lo
            j = i + stride
            a0 = state[i]
            a1 = state[j]
            state[i] = _INV_SQRT2 * (a0 + a1)
            state[j] = _INV_SQRT2 * (a0 - a1)


@njit(cache=True)
def _nb_circuit_z(f, theta, ctrl, tgt, n):
    rows = f.shape[0]
    dim = 1 << n
    out = np.empty((rows, n))
    state = np.empty(dim, dtype=np.complex128)
    for m in range(rows):
        state[:] = 0.0
        state[0] = 1.0
        for q in range(n):
            _nb_h_inplace(state, q, n)
            _nb_ry_inplace(state, f[m, q], q, n)
        for e in range(ctrl.shape[0]):
            cmask = 1 << (n - 1 - ctrl[e])
            tmask = 1 << (n - 1 - tgt[e])
            for i in range(dim):
                if (i & cmask) and not (i & tmask):
                    j = i | tmask
                    tmp = state[i]
                    state[i] = state[j]
                    state[j] = tmp
        for q in range(n):
            _nb_ry_inplace(state, theta[m, q], q, n)
        for q in range(n):
            out[m, q] = 0.0
        for i in range(dim):
            a = state[i]
            p = a.real * a.real + a.imag * a.imag
            for q in range(n):
                if (i >> (n - 1 - q)) & 1:
                    out[m, q] -= p
                else:
                    out[m, q] += p
    return out


# ---------------------------------------------------------------- numpy path


def _split(amps, q, n):
    # (M, left, bit, right) view: axis 2 indexes qubit q's bit
    return amps.reshape(amps.shape[0], 1 << q, 2, 1 << (n - 1 - q))


def _np_apply_gate(amps, gate, q, n):
    v = _split(amps, q, n)
    a0 = v[:, :, 0, :].copy()
    a1 = v[:, :, 1, :]
    v[:, :, 0, :] = gate[0, 0] * a0 + gate[0, 1] * a1
    v[:, :, 1, :] = gate[1, 0] * a0 + gate[1, 1] * a1


def _np_apply_cnot(amps, c, t, n):
    v = amps.reshape((amps.shape[0],) + (2,) * n)
    lo = [slice(None)] * (n + 1)
    hi = [slice(None)] * (n + 1)
    lo[c + 1] = hi[c + 1] = 1
    lo[t + 1], hi[t + 1] = 0, 1
    lo, hi = tuple(lo), tuple(hi)
    tmp = v[lo].copy()
    v[lo] = v[hi]
    v[hi] = tmp


def _np_expect_z(amps, n):
    probs = (amps.real ** 2 + amps.imag ** 2).reshape((amps.shape[0],) + (2,) * n)
    out = np.empty((amps.shape[0], n))
    for q in range(n):
        axes = tuple(a + 1 for a in range(n) if a != q)
        marg = probs.sum(axis=axes)
        out[:, q] = marg[:, 0] - marg[:, 1]
    return out


def _np_ry_rows(amps, angles, q, n):
    v = _split(amps, q, n)
    c = np.cos(0.5 * angles)[:, None, None]
    s = np.sin(0.5 * angles)[:, None, None]
    a0 = v[:, :, 0, :].copy()
    a1 = v[:, :, 1, :]
    v[:, :, 0, :] = c * a0 - s * a1
    v[:, :, 1, :] = s * a0 + c * a1


_H = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128) * _INV_SQRT2


def _np_circuit_z(f, theta, ctrl, tgt, n):
    rows = f.shape[0]
    amps = np.zeros((rows, 1 << n), dtype=np.complex128)
    amps[:, 0] = 1.0
    for q in range(n):
        _np_apply_gate(amps, _H, q, n)
        _np_ry_rows(amps, f[:, q], q, n)
    for c, t in zip(ctrl, tgt):
        _np_apply_cnot(amps, int(c), int(t), n)
    for q in range(n):
        _np_ry_rows(amps, theta[:, q], q, n)
    return _np_expect_z(amps, n)


numba_backend = SimpleNamespace(
    name="numba",
    apply_gate=_nb_apply_gate,
    apply_cnot=_nb_apply_cnot,
    expect_z=_nb_expect_z,
    circuit_z=_nb_circuit_z,
)

numpy_backend = SimpleNamespace(
    name="numpy",
    apply_gate=_np_apply_gate,
    apply_cnot=_np_apply_cnot,
    expect_z=_np_expect_z,
    circuit_z=_np_circuit_z,
)

active = numba_backend if USE_NUMBA else numpy_backend
