"""Binary entanglement matrices: sampling, metrics, conventional topologies, I/O.

``bits[i, j] == 1`` places a CNOT with control qubit i and target qubit j.
Public functions take 1-based qubit indices; the underlying numpy array is
0-based as usual.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Union

import numpy as np


class EntanglementMatrix:
    """Immutable n_q x n_q zero-diagonal 0/1 matrix."""

    __slots__ = ("_bits",)

    def __init__(self, bits):
        arr = np.array(bits)
        problems = validate(arr)
        if problems:
            raise ValueError("invalid entanglement matrix: " + "; ".join(problems))
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        self._bits = arr

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def n_q(self) -> int:
        return self._bits.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        """(control, target) pairs, 1-based, in circuit application order."""
        rows, cols = np.nonzero(self._bits)
        return [(int(i) + 1, int(j) + 1) for i, j in zip(rows, cols)]

    def __reduce__(self):
        return (EntanglementMatrix, (self._bits.copy(),))

    def __deepcopy__(self, memo):
        return self

    def __eq__(self, other):
        if not isinstance(other, EntanglementMatrix):
            return NotImplemented
        return np.array_equal(self._bits, other._bits)

    def __hash__(self):
        return hash((self.n_q, self._bits.tobytes()))

    def __repr__(self):
        return f"EntanglementMatrix(n_q={self.n_q}, E={total_entanglements(self)})"


@dataclass(frozen=True)
class Unconstrained:
    n_q: int
    E: int
    mode = "unconstrained"

    def __post_init__(self):
        _check_nq(self.n_q)
        hi = self.n_q * (self.n_q - 1)
        if not 0 <= self.E <= hi:
            raise ValueError(f"E must be in 0..{hi} for n_q={self.n_q}, got {self.E}")

    @property
    def value(self) -> int:
        return self.E


@dataclass(frozen=True)
class Constrained:
    n_q: int
    k: int
    mode = "constrained"

    def __post_init__(self):
        _check_nq(self.n_q)
        if not 1 <= self.k <= self.n_q - 1:
            raise ValueError(f"k exceeds allowed range 1..{self.n_q - 1} (n_q-1), got {self.k}")

    @property
    def value(self) -> int:
        return self.k


@dataclass(frozen=True)
class SemiConstrained:
    n_q: int
    k_max: int
    mode = "semi"

    def __post_init__(self):
        _check_nq(self.n_q)
        if not 0 <= self.k_max <= self.n_q - 1:
            raise ValueError(f"k_max must be in 0..{self.n_q - 1}, got {self.k_max}")

    @property
    def value(self) -> int:
        return self.k_max


SamplingSpec = Union[Unconstrained, Constrained, SemiConstrained]


class TopologyKind(enum.Enum):
    RING = "ring"
    NEAREST_NEIGHBOR = "nearest"
    NO_ENTANGLEMENT = "none"
    FULLY_ENTANGLED = "full"


def _check_nq(n_q):
    if int(n_q) != n_q or n_q < 1:
        raise ValueError(f"n_q must be a positive integer, got {n_q}")


def validate(bits) -> list[str]:
    """List every invariant violation; an empty list means the matrix is valid."""
    arr = np.asarray(bits)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        return [f"matrix must be square and non-empty, got shape {arr.shape}"]
    out = []
    bad = ~np.isin(arr, (0, 1))
    for i, j in zip(*np.nonzero(bad)):
        out.append(f"non-binary entry {arr[i, j]!r} at ({i + 1},{j + 1})")
    diag = np.diagonal(arr)
    for i in np.nonzero(diag != 0)[0]:
        out.append(f"self-entanglement at qubit {i + 1}")
    return out


def per_qubit_count(beta: EntanglementMatrix, i: int) -> int:
    """Number of CNOTs with qubit ``i`` (1-based) as control."""
    if not 1 <= i <= beta.n_q:
        raise IndexError(f"qubit index {i} out of range 1..{beta.n_q}")
    return int(beta.bits[i - 1].sum())


def total_entanglements(beta: EntanglementMatrix) -> int:
    return int(beta.bits.sum())


def density(beta: EntanglementMatrix) -> float:
    """Entanglement density in percent of the n_q(n_q-1) directed pairs."""
    n = beta.n_q
    if n < 2:
        raise ValueError("density needs at least 2 qubits")
    return 100.0 * total_entanglements(beta) / (n * (n - 1))


def constrained_density(n_q: int, k: int) -> float:
    if n_q < 2:
        raise ValueError("density needs at least 2 qubits")
    if not 0 <= k <= n_q - 1:
        raise ValueError(f"k must be in 0..{n_q - 1}, got {k}")
    # n_q * k / (n_q (n_q - 1)) kept in the unreduced form so it agrees
    # bit-for-bit with density() on a constrained matrix
    return 100.0 * (n_q * k) / (n_q * (n_q - 1))


def count_configurations(n_q: int, symmetric: bool = False) -> int:
    pairs = n_q * (n_q - 1)
    return 2 ** (pairs // 2 if symmetric else pairs)


def sample(spec: SamplingSpec, rng: np.random.Generator) -> EntanglementMatrix:
    n = spec.n_q
    bits = np.zeros((n, n), dtype=np.uint8)
    if isinstance(spec, Unconstrained):
        off = np.array([(i, j) for i in range(n) for j in range(n) if i != j], dtype=np.int64).reshape(-1, 2)
        picks = rng.choice(len(off), size=spec.E, replace=False)
        bits[off[picks, 0], off[picks, 1]] = 1
    elif isinstance(spec, (Constrained, SemiConstrained)):
        for i in range(n):
            others = np.array([j for j in range(n) if j != i], dtype=np.int64)
            count = spec.k if isinstance(spec, Constrained) else int(rng.integers(0, spec.k_max + 1))
            bits[i, rng.choice(others, size=count, replace=False)] = 1
    else:
        raise TypeError(f"unsupported sampling spec {spec!r}")
    return EntanglementMatrix(bits)


def conventional(kind: TopologyKind | str, n_q: int) -> EntanglementMatrix:
    kind = TopologyKind(kind)
    if n_q < 2:
        raise ValueError("conventional topologies need at least 2 qubits")
    bits = np.zeros((n_q, n_q), dtype=np.uint8)
    if kind in (TopologyKind.RING, TopologyKind.NEAREST_NEIGHBOR):
        for i in range(n_q - 1):
            bits[i, i + 1] = 1
        if kind is TopologyKind.RING:
            bits[n_q - 1, 0] = 1
    elif kind is TopologyKind.FULLY_ENTANGLED:
        bits[:] = 1
        np.fill_diagonal(bits, 0)
    return EntanglementMatrix(bits)


def serialize(beta: EntanglementMatrix) -> str:
    return "".join(",".join(str(int(v)) for v in row) + "\n" for row in beta.bits)


def parse(text: str) -> EntanglementMatrix:
    rows = []
    for lineno, line in enumerate(text.strip().splitlines(), start=1):
        tokens = [t.strip() for t in line.split(",")]
        if any(t not in ("0", "1") for t in tokens):
            raise ValueError(f"line {lineno}: non-binary token in {line!r}")
        rows.append([int(t) for t in tokens])
    if not rows:
        raise ValueError("empty matrix")
    n = len(rows)
    for lineno, row in enumerate(rows, start=1):
        if len(row) != n:
            raise ValueError(f"line {lineno}: ragged row, expected {n} values, got {len(row)}")
    arr = np.array(rows)
    diag = np.nonzero(np.diagonal(arr))[0]
    if diag.size:
        raise ValueError(f"nonzero diagonal at qubit {int(diag[0]) + 1}")
    return EntanglementMatrix(arr)


def to_descriptor(beta: EntanglementMatrix, mode: str | None = None,
                  value: int | None = None, seed: int | None = None) -> dict:
    """JSON-ready descriptor ``{n_q, mode, k|E|k_max, seed, matrix_csv}``."""
    d = {"n_q": beta.n_q, "mode": mode}
    key = {"constrained": "k", "unconstrained": "E", "semi": "k_max"}.get(mode)
    if key is not None:
        d[key] = value
    elif mode is not None and value is not None:
        d["value"] = value
    d["seed"] = seed
    d["matrix_csv"] = serialize(beta)
    return d


def from_descriptor(d: dict) -> EntanglementMatrix:
    beta = parse(d["matrix_csv"])
    if "n_q" in d and d["n_q"] != beta.n_q:
        raise ValueError(f"descriptor n_q={d['n_q']} disagrees with matrix size {beta.n_q}")
    return beta


def load(path) -> EntanglementMatrix:
    """Read a matrix from a CSV file or a JSON descriptor file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return from_descriptor(json.loads(text))
    return parse(text)


def describe_spec(spec: SamplingSpec) -> str:
    key = {"constrained": "k", "unconstrained": "E", "semi": "k_max"}[spec.mode]
    return f"{spec.mode} {key}={spec.value}"
