import itertools
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entsearch import entanglement as ent
from entsearch.entanglement import (Constrained, EntanglementMatrix, SemiConstrained, TopologyKind,
                                    Unconstrained)


def ring(n):
    return ent.conventional(TopologyKind.RING, n)


def test_per_qubit_count():
    zero = EntanglementMatrix(np.zeros((8, 8), dtype=int))
    full = ent.conventional("full", 8)
    for i in range(1, 9):
        assert ent.per_qubit_count(zero, i) == 0
        assert ent.per_qubit_count(full, i) == 7
        assert ent.per_qubit_count(ring(8), i) == 1
    with pytest.raises(IndexError):
        ent.per_qubit_count(zero, 0)
    with pytest.raises(IndexError):
        ent.per_qubit_count(zero, 9)


def test_totals_and_density():
    assert ent.total_entanglements(ring(8)) == 8
    assert ent.total_entanglements(ent.conventional("nearest", 8)) == 7
    assert ent.total_entanglements(ent.conventional("none", 8)) == 0
    assert ent.density(ring(8)) == 100 * 8 / 56
    assert ent.density(ent.conventional("none", 8)) == 0
    assert ent.density(ent.conventional("full", 8)) == 100
    assert ent.density(ent.conventional("nearest", 8)) == 12.5


def test_constrained_density():
    assert ent.constrained_density(8, 2) == pytest.approx(28.571428571, abs=1e-8)
    assert ent.constrained_density(8, 3) == pytest.approx(42.857142857, abs=1e-8)
    assert ent.constrained_density(5, 0) == 0
    with pytest.raises(ValueError):
        ent.constrained_density(8, 8)


def test_count_configurations():
    assert ent.count_configurations(3) == 64
    assert ent.count_configurations(3, symmetric=True) == 8
    assert ent.count_configurations(8) == 72057594037927936
    assert ent.count_configurations(16) == 2 ** 240


def test_count_matches_enumeration():
    n = 3
    off = [(i, j) for i in range(n) for j in range(n) if i != j]
    seen = set()
    for bits in itertools.product((0, 1), repeat=len(off)):
        m = np.zeros((n, n), dtype=int)
        for (i, j), b in zip(off, bits):
            m[i, j] = b
        if not ent.validate(m):
            seen.add(EntanglementMatrix(m))
    assert len(seen) == ent.count_configurations(3)
    sym = {m for m in seen if np.array_equal(m.bits, m.bits.T)}
    assert len(sym) == ent.count_configurations(3, symmetric=True)


def test_sample_constrained_examples(rng):
    for _ in range(20):
        b = ent.sample(Constrained(8, 1), rng)
        assert (b.bits.sum(axis=1) == 1).all()
        assert not np.diagonal(b.bits).any()
    forced = ent.sample(Constrained(3, 2), rng)
    assert forced.bits.sum() == 6
    assert ent.total_entanglements(ent.sample(Unconstrained(8, 16), rng)) == 16


def test_sample_semi_rows_bounded(rng):
    for _ in range(50):
        b = ent.sample(SemiConstrained(8, 3), rng)
        assert b.bits.sum(axis=1).max() <= 3


def test_sample_is_seeded():
    a = ent.sample(Unconstrained(8, 16), np.random.default_rng(4))
    b = ent.sample(Unconstrained(8, 16), np.random.default_rng(4))
    assert a == b


def test_unconstrained_covers_every_configuration():
    # C(6, 2) = 15 distinct matrices with E=2 on 3 qubits
    rng = np.random.default_rng(0)
    seen = {ent.sample(Unconstrained(3, 2), rng) for _ in range(2000)}
    assert len(seen) == 15


def test_spec_ranges():
    with pytest.raises(ValueError, match="k exceeds allowed range 1..7"):
        Constrained(8, 9)
    with pytest.raises(ValueError):
        Unconstrained(3, 7)
    with pytest.raises(ValueError):
        SemiConstrained(4, 4)


def test_conventional_shapes():
    r4 = ring(4)
    assert r4.edges() == [(1, 2), (2, 3), (3, 4), (4, 1)]
    assert ent.conventional("none", 8).bits.sum() == 0


def test_validate_messages():
    assert ent.validate(ring(8).bits) == []
    m = np.zeros((3, 3), dtype=int)
    m[1, 1] = 1
    assert ent.validate(m) == ["self-entanglement at qubit 2"]
    m = np.zeros((3, 3), dtype=int)
    m[0, 2] = 2
    assert "non-binary" in ent.validate(m)[0]
    with pytest.raises(ValueError):
        EntanglementMatrix(m)


def test_serialize_parse():
    assert ent.serialize(ring(3)) == "0,1,0\n0,0,1\n1,0,0\n"
    assert ent.parse("0,1,0\n0,0,1\n1,0,0\n") == ring(3)
    with pytest.raises(ValueError, match="nonzero diagonal"):
        ent.parse("0,1\n1,1\n")
    with pytest.raises(ValueError, match="ragged"):
        ent.parse("0,1,0\n0,0\n1,0,0\n")
    with pytest.raises(ValueError, match="non-binary"):
        ent.parse("0,2\n1,0\n")


def test_descriptor_roundtrip(tmp_path):
    b = ent.sample(Constrained(8, 2), np.random.default_rng(1))
    d = ent.to_descriptor(b, "constrained", 2, 1)
    assert d["k"] == 2 and d["n_q"] == 8
    assert ent.from_descriptor(d) == b
    p = tmp_path / "b.csv"
    p.write_text(ent.serialize(b))
    assert ent.load(p) == b


def test_matrix_is_immutable_and_picklable():
    b = ring(5)
    with pytest.raises(ValueError):
        b.bits[0, 0] = 1
    assert pickle.loads(pickle.dumps(b)) == b


@st.composite
def specs(draw):
    n = draw(st.integers(2, 8))
    kind = draw(st.sampled_from(["u", "c", "s"]))
    if kind == "u":
        return Unconstrained(n, draw(st.integers(0, n * (n - 1))))
    if kind == "c":
        return Constrained(n, draw(st.integers(1, n - 1)))
    return SemiConstrained(n, draw(st.integers(0, n - 1)))


@settings(max_examples=200, deadline=None)
@given(specs(), st.integers(0, 2 ** 32))
def test_sample_properties(spec, seed):
    b = ent.sample(spec, np.random.default_rng(seed))
    assert ent.validate(b.bits) == []
    rows = b.bits.sum(axis=1)
    if isinstance(spec, Constrained):
        assert (rows == spec.k).all()
        assert ent.density(b) == ent.constrained_density(spec.n_q, spec.k)
    elif isinstance(spec, Unconstrained):
        assert ent.total_entanglements(b) == spec.E
    else:
        assert rows.max() <= spec.k_max
    assert ent.parse(ent.serialize(b)) == b
    assert 0 <= ent.density(b) <= 100
