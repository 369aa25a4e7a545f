"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest, or directly with ``python3 tests/test_acceptance.py``.
"""
import contextlib
import io
import itertools
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from entsearch import cli, kernels, nnet, vqc
from entsearch import entanglement as ent
from entsearch import experiment as exp
from entsearch import features as ft
from entsearch import statevector as sv

# gradients are compared relative to max(|analytic|, |numeric|, GRAD_FLOOR)
GRAD_FLOOR = 1e-5


def _random_ops(n, rng):
    ops = []
    for _ in range(int(rng.integers(1, 11))):
        kind = int(rng.integers(0, 3 if n > 1 else 2))
        q = int(rng.integers(1, n + 1))
        if kind == 0:
            ops.append(("H", q))
        elif kind == 1:
            ops.append(("RY", q, float(rng.uniform(-4 * np.pi, 4 * np.pi))))
        else:
            c, t = rng.choice(np.arange(1, n + 1), size=2, replace=False)
            ops.append(("CNOT", int(c), int(t)))
    return ops


def statevector_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for n in (1, 2, 3):
        for _ in range(200):
            ops = _random_ops(n, rng)
            want = sv.dense_oracle(ops, n)[:, 0]
            for be in (kernels.numpy_backend, kernels.numba_backend):
                kernels.active, saved = be, kernels.active
                try:
                    got = sv.run_sequence(ops, n).amplitudes
                finally:
                    kernels.active = saved
                worst = max(worst, float(np.max(np.abs(got - want))))
    return worst < 1e-10, f"max amplitude deviation {worst:.2e} over 600 circuits x 2 backends"


def _loss_only(model, x, y):
    p = nnet.predict_proba(model, x)
    return float(np.mean(-np.log(np.maximum(p[np.arange(len(y)), y], nnet.PROB_FLOOR))))


def gradient_exactness():
    rng = np.random.default_rng(2)
    h = 1e-5
    worst_rel = worst_q = 0.0
    for _ in range(100):
        beta = ent.sample(ent.Constrained(4, int(rng.integers(1, 4))), rng)
        model = nnet.init_dressed(5, beta, seed=int(rng.integers(1 << 30)))
        model.theta[:] = rng.uniform(-np.pi, np.pi, 4)
        for layer in (model.l_in, model.l_out):
            layer.b[:] = rng.normal(scale=0.5, size=layer.b.shape)
        x = rng.normal(size=(4, 5))
        y = rng.integers(0, 2, size=4)
        _, grads = model.loss_and_grads(x, y)
        for name, p in model.parameters().items():
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                lp = _loss_only(model, x, y)
                p[idx] = old - h
                lm = _loss_only(model, x, y)
                p[idx] = old
                fd = (lp - lm) / (2 * h)
                g = grads[name][idx]
                worst_rel = max(worst_rel, abs(g - fd) / max(abs(g), abs(fd), GRAD_FLOOR))
        spec = model.spec
        f = rng.uniform(-np.pi, np.pi, 4)
        qg = vqc.gradients(spec, f, model.theta)
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            fd_t = (vqc.forward(spec, f, model.theta + e) - vqc.forward(spec, f, model.theta - e)) / (2 * h)
            fd_f = (vqc.forward(spec, f + e, model.theta) - vqc.forward(spec, f - e, model.theta)) / (2 * h)
            worst_q = max(worst_q, np.max(np.abs(qg.d_theta[i] - fd_t)), np.max(np.abs(qg.d_f[i] - fd_f)))
    ok = worst_rel < 1e-4 and worst_q < 1e-5
    return ok, f"loss grads max rel err {worst_rel:.2e}; quantum partials max abs err {worst_q:.2e}"


def single_qubit_identity():
    spec = vqc.CircuitSpec(ent.EntanglementMatrix([[0]]))
    worst = max(abs(vqc.forward(spec, [0.0], [t])[0] + math.sin(t))
                for t in (-math.pi, -math.pi / 2, 0.0, 0.3, math.pi / 2, math.pi))
    return worst < 1e-12, f"max |z + sin(theta)| = {worst:.2e}"


def sampler_invariants():
    specs = [ent.Constrained(8, k) for k in (1, 2, 3)] + [ent.Unconstrained(8, e) for e in (8, 16, 24)]
    specs.append(ent.SemiConstrained(8, 3))
    want_mu = {1: 100 / 7, 2: 200 / 7, 3: 300 / 7}
    bad = 0
    for i in range(10_000):
        spec = specs[i % len(specs)]
        b = ent.sample(spec, np.random.default_rng(i))
        bad += bool(ent.validate(b.bits))
        if isinstance(spec, ent.Constrained):
            bad += not (b.bits.sum(axis=1) == spec.k).all()
            mu = ent.density(b)
            bad += mu != ent.constrained_density(8, spec.k) or abs(mu - want_mu[spec.k]) > 1e-12
        elif isinstance(spec, ent.Unconstrained):
            bad += ent.total_entanglements(b) != spec.E
            bad += abs(ent.density(b) - want_mu[spec.E // 8]) > 1e-12
        else:
            bad += b.bits.sum(axis=1).max() > 3
    return bad == 0, f"{bad} violations in 10000 samples"


def configuration_counting():
    n = 3
    off = [(i, j) for i in range(n) for j in range(n) if i != j]
    valid = 0
    for bits in itertools.product((0, 1), repeat=len(off)):
        m = np.zeros((n, n), dtype=int)
        for (i, j), v in zip(off, bits):
            m[i, j] = v
        valid += not ent.validate(m)
    asym, sym = ent.count_configurations(3), ent.count_configurations(3, symmetric=True)
    return asym == 64 == valid and sym == 8, f"asymmetric {asym}, enumerated {valid}, symmetric {sym}"


def conventional_topologies():
    got = {k: ent.density(ent.conventional(k, 8)) for k in ("ring", "nearest", "none", "full")}
    ok = got == {"ring": 100 / 7, "nearest": 12.5, "none": 0.0, "full": 100.0}
    return ok, ", ".join(f"{k} {v:.4f}%" for k, v in got.items())


def pca_oracle():
    rng = np.random.default_rng(7)
    worst_c = worst_off = 0.0
    for _ in range(20):
        x = rng.normal(size=(50, 30)) * rng.uniform(0.5, 3.0, 30)
        m = ft.pca_fit(x, 20)
        w, v = np.linalg.eigh(np.cov(x, rowvar=False))
        v = v[:, np.argsort(w)[::-1][:20]]
        signs = np.sign(np.sum(v * m.components, axis=0))
        worst_c = max(worst_c, float(np.max(np.abs(m.components - v * signs))))
        c = np.cov(ft.pca_transform(m, x), rowvar=False)
        worst_off = max(worst_off, float(np.max(np.abs(c - np.diag(np.diag(c))))))
    ok = worst_c < 1e-8 and worst_off < 1e-8
    return ok, f"component deviation {worst_c:.2e}, off-diagonal covariance {worst_off:.2e}"


def split_leakage():
    violations = 0
    for seed in range(100):
        spec = ft.SyntheticSpec(n_per_class=40, patients_per_class=int(3 + seed % 20), seed=seed)
        t = ft.patient_split(ft.synthesize_dataset(spec), seed=seed)
        sets = [{p for p, s in zip(t.patient_ids, t.splits) if s == name} for name in ft.SPLITS]
        violations += sum(len(a & b) for a, b in itertools.combinations(sets, 2))
        violations += not t.has_splits()
    return violations == 0, f"{violations} leakage violations over 100 splits"


def top_r_anchors():
    rng = np.random.default_rng(9)
    recs = [exp.RunRecord(run_id=f"c00r{i:03d}", mode="constrained", seed=i,
                          val_accuracy=float(rng.uniform()), test_accuracy=0.5) for i in range(50)]
    n5, n1 = len(exp.top_r_select(recs, 5)), len(exp.top_r_select(recs, 1))
    return (n5, n1) == (2, 1), f"r=5 -> {n5} of 50, r=1 -> {n1} of 50"


class _Stub:
    def __init__(self, logits):
        self._logits = logits

    def logits(self, x):
        return self._logits


def _brute_vote(member_probs):
    preds = []
    for s in range(len(member_probs[0])):
        totals = [0.0] * len(member_probs[0][s])
        for probs in member_probs:
            for c, p in enumerate(probs[s]):
                totals[c] += float(p)
        best = 0
        for c in range(1, len(totals)):
            if totals[c] > totals[best]:
                best = c
        preds.append(best)
    return preds


def ensemble_oracle():
    rng = np.random.default_rng(10)
    mismatches = 0
    for trial in range(50):
        n_members, n_samples, n_classes = int(rng.integers(1, 8)), int(rng.integers(1, 30)), int(rng.integers(2, 5))
        ids = tuple(f"p{i}" for i in range(n_samples))
        labels = rng.integers(0, n_classes, size=n_samples)
        table = ft.FeatureTable(np.zeros((n_samples, 1)), labels, ids, ("test",) * n_samples)
        if trial % 2:
            # coarse logits make exact ties between classes common
            members = [_Stub(rng.integers(0, 2, size=(n_samples, n_classes)).astype(float)) for _ in range(n_members)]
        else:
            members = [_Stub(rng.normal(size=(n_samples, n_classes))) for _ in range(n_members)]
        res = exp.ensemble_vote(members, table)
        want = _brute_vote([nnet.predict_proba(m, None).tolist() for m in members])
        acc = sum(int(p == y) for p, y in zip(want, labels)) / n_samples
        mismatches += list(res.predictions) != want or res.accuracy != acc
    return mismatches == 0, f"{mismatches} mismatching sets out of 50"


ACCEPTANCE_CONFIG = {
    "version": 1,
    "synthetic": {"n_per_class": 90, "D": 20, "separation": 3.0, "patients_per_class": 30, "seed": 1},
    "split": {"fractions": [0.5, 0.25, 0.25], "seed": 1},
    "pca_dim": 20, "n_q": 8, "master_seed": 1,
    "train": {"epochs": 70, "learning_rate": 0.01},
    "cells": [{"mode": "constrained", "k": 2, "n_runs": 5}, {"mode": "unconstrained", "E": 16, "n_runs": 5}],
    "top_r": [50], "output_dir": "out",
}


def _run_protocol(root):
    root.mkdir(parents=True)
    cfg = root / "config.json"
    cfg.write_text(json.dumps(ACCEPTANCE_CONFIG))
    with contextlib.redirect_stdout(io.StringIO()):
        codes = [cli.main(["search", "--config", str(cfg), "--jobs", "1"]),
                 cli.main(["ensemble", "--config", str(cfg)]),
                 cli.main(["report", "--config", str(cfg)])]
    out = root / "out"
    records = exp.read_records(out / "runs.jsonl")
    baseline = exp.RunRecord.from_json(json.loads((out / "baseline.json").read_text()))
    constructive = exp.constructive_subspace(records, baseline)
    return codes, out, records, baseline, constructive


def _record_lines(path):
    text = path.read_text()
    docs = [json.loads(text)] if path.suffix == ".json" else [json.loads(line) for line in text.splitlines()]
    for d in docs:
        d.pop("wall_time", None)
    return [json.dumps(d, sort_keys=True) for d in docs]


def end_to_end_protocol():
    saved = os.environ.pop(cli.SEED_ENV, None)
    try:
        with tempfile.TemporaryDirectory() as tmp:
            t0 = time.perf_counter()
            codes, out_a, records, baseline, constructive = _run_protocol(Path(tmp) / "a")
            codes_b, out_b, *_ = _run_protocol(Path(tmp) / "b")
            elapsed = time.perf_counter() - t0
            same = (_record_lines(out_a / "runs.jsonl") == _record_lines(out_b / "runs.jsonl")
                    and _record_lines(out_a / "baseline.json") == _record_lines(out_b / "baseline.json"))
            same = same and all((out_a / n).read_bytes() == (out_b / n).read_bytes()
                                for n in ("ensembles.json", "report.json", "scatter.csv", "topr.csv", "theta.csv"))
            ens = json.loads((out_a / "ensembles.json").read_text())
            half = [e for e in ens if e["r"] == 50]
            report = json.loads((out_a / "report.json").read_text())
    finally:
        if saved is not None:
            os.environ[cli.SEED_ENV] = saved
    base = baseline.test_accuracy
    ok = (codes == codes_b == [0, 0, 0] and len(records) == 10 and all(r.ok for r in records)
          and 0.85 <= base <= 0.95 and same and len(half) == 2
          and all(e["n_members"] == 2 for e in half)
          and report["constructive"]["count"] == len(constructive) and elapsed < 20 * 60)
    best = max(r.test_accuracy for r in records)
    return ok, (f"baseline test {base:.4f}, best run {best:.4f}, constructive {len(constructive)}/10, "
                f"top-50% ensembles {[round(e['test_accuracy'], 4) for e in half]}, "
                f"rerun identical: {same}, two passes in {elapsed:.0f}s")


def no_entanglement_factorization():
    rng = np.random.default_rng(12)
    spec = vqc.CircuitSpec(ent.conventional("none", 8))
    off = ~np.eye(8, dtype=bool)
    worst = 0.0
    for _ in range(50):
        g = vqc.gradients(spec, rng.uniform(-np.pi, np.pi, 8), rng.uniform(-np.pi, np.pi, 8))
        worst = max(worst, float(np.max(np.abs(g.d_theta[off]))), float(np.max(np.abs(g.d_f[off]))))
    return worst < 1e-12, f"max cross-qubit partial {worst:.2e}"


# (number, name, check, runtime limit in seconds or None)
CRITERIA = [
    (1, "statevector oracle equivalence", statevector_oracle, 10),
    (2, "gradient exactness", gradient_exactness, 120),
    (3, "single-qubit analytic identity", single_qubit_identity, None),
    (4, "sampler invariants", sampler_invariants, 5),
    (5, "configuration counting", configuration_counting, None),
    (6, "conventional topologies", conventional_topologies, None),
    (7, "PCA oracle", pca_oracle, None),
    (8, "split leakage", split_leakage, None),
    (9, "top-r anchors", top_r_anchors, None),
    (10, "ensemble oracle", ensemble_oracle, None),
    (11, "end-to-end desk-scale protocol", end_to_end_protocol, 20 * 60),
    (12, "no-entanglement factorization", no_entanglement_factorization, None),
]


def run_criterion(number, name, check, limit):
    t0 = time.perf_counter()
    ok, detail = check()
    elapsed = time.perf_counter() - t0
    if limit is not None and elapsed >= limit:
        ok = False
        detail += f"; runtime {elapsed:.1f}s exceeds {limit}s"
    line = f"[{'PASS' if ok else 'FAIL'}] {number:2d} {name}: {detail} ({elapsed:.2f}s)"
    return ok, line


@pytest.mark.parametrize("number,name,check,limit", CRITERIA, ids=[f"{c[0]:02d}" for c in CRITERIA])
def test_criterion(number, name, check, limit, capsys):
    # warm numba's cache outside the timed region
    vqc.forward(vqc.CircuitSpec(ent.conventional("ring", 2)), [0.1, 0.2], [0.3, 0.4])
    ok, line = run_criterion(number, name, check, limit)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [run_criterion(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    print(f"{sum(ok for ok, _ in results)}/{len(results)} criteria passed")
    sys.exit(0 if all(ok for ok, _ in results) else 1)
