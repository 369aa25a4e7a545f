"""Search orchestration: seeded runs, baseline, constructive subspace, ensembles, reports.

Run seeds come from ``derive_seed(master_seed, cell_index, run_index)``: the
first 8 bytes (big-endian, top bit cleared) of
``sha256(b"entsearch:<master>:<cell>:<run>")``. One run's seed never depends on
any other run. Inside a run, seed ``s`` drives three independent streams:
``default_rng((s, 0))`` samples beta, ``default_rng((s, 1))`` initialises the
model and ``TrainConfig.seed = s`` shuffles minibatches.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import entanglement as ent
from . import nnet
from .features import FeatureTable

MODES = ("constrained", "unconstrained", "semi", "topology")

# results-table row labels for the conventional topologies
_TOPOLOGY_LABELS = {
    "ring": "Ring topology μ = {mu}%, k = 1",
    "nearest": "nearest neighbor topology μ = {mu}%",
    "none": "no entanglement μ = 0",
    "full": "fully entangled μ = {mu}%",
}

SECTION_ENSEMBLE = "Test Accuracy using Ensemble Configuration Majority Voting"
SECTION_TOP_R = "Test Accuracies by Top-r% Ensemble Configuration Majority Voting"
SECTION_CONVENTIONAL = "Test Accuracies using Conventional Entanglement Configurations"
SECTION_BASELINE = "Classical Baseline"


def derive_seed(master_seed: int, cell_index: int, run_index: int) -> int:
    digest = hashlib.sha256(f"entsearch:{master_seed}:{cell_index}:{run_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def _pct(mu: float) -> str:
    return f"{mu:.0f}"


@dataclass(frozen=True)
class Cell:
    """One sampling cell: a mode, its parameter and how many runs to draw."""

    mode: str
    value: int | str
    n_runs: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.mode == "topology":
            ent.TopologyKind(self.value)
        elif int(self.value) != self.value:
            raise ValueError(f"{self.mode} cell needs an integer parameter, got {self.value!r}")

    def sampling_spec(self, n_q: int) -> ent.SamplingSpec | None:
        if self.mode == "constrained":
            return ent.Constrained(n_q, int(self.value))
        if self.mode == "unconstrained":
            return ent.Unconstrained(n_q, int(self.value))
        if self.mode == "semi":
            return ent.SemiConstrained(n_q, int(self.value))
        return None

    def beta(self, n_q: int, rng: np.random.Generator) -> ent.EntanglementMatrix:
        spec = self.sampling_spec(n_q)
        if spec is None:
            return ent.conventional(self.value, n_q)
        return ent.sample(spec, rng)

    @property
    def label(self) -> str:
        key = {"constrained": "k", "unconstrained": "E", "semi": "k_max", "topology": "kind"}[self.mode]
        return f"{self.mode} {key}={self.value}"

    def table_label(self, n_q: int) -> str:
        """Row label for the results table."""
        n = n_q
        if self.mode == "constrained":
            return f"Constrained μ = {_pct(ent.constrained_density(n, int(self.value)))}%, k = {self.value}"
        if self.mode == "unconstrained":
            return f"Unconstrained μ = {_pct(100.0 * int(self.value) / (n * (n - 1)))}%"
        if self.mode == "semi":
            hi = 100.0 * int(self.value) / (n - 1)
            return f"Semi-constrained μ ∈ [0,{_pct(hi)}%], k_max = {self.value}"
        mu = ent.density(ent.conventional(self.value, n))
        return _TOPOLOGY_LABELS[ent.TopologyKind(self.value).value].format(mu=_pct(mu))

    def to_json(self) -> dict:
        key = {"constrained": "k", "unconstrained": "E", "semi": "k_max", "topology": "kind"}[self.mode]
        return {"mode": self.mode, key: self.value, "n_runs": self.n_runs}

    @classmethod
    def from_json(cls, doc: dict) -> "Cell":
        doc = dict(doc)
        mode = doc.pop("mode", None)
        key = {"constrained": "k", "unconstrained": "E", "semi": "k_max", "topology": "kind"}.get(mode)
        if key is None:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if key not in doc:
            raise ValueError(f"{mode} cell requires {key!r}")
        value = doc.pop(key)
        n_runs = doc.pop("n_runs", 1)
        if doc:
            raise ValueError(f"unknown cell field(s): {sorted(doc)}")
        return cls(mode, value, n_runs)


@dataclass(frozen=True)
class SearchConfig:
    cells: tuple[Cell, ...]
    n_q: int = 8
    master_seed: int = 0
    train: nnet.TrainConfig = nnet.TrainConfig()

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))


def full_protocol_cells(n_runs: int = 50, semi_runs: int = 100) -> tuple[Cell, ...]:
    """Three densities in both modes plus the bounded variable cell (400 runs by default)."""
    cells = []
    for k, e in ((1, 8), (2, 16), (3, 24)):
        cells.append(Cell("constrained", k, n_runs))
        cells.append(Cell("unconstrained", e, n_runs))
    cells.append(Cell("semi", 3, semi_runs))
    return tuple(cells)


def conventional_cells() -> tuple[Cell, ...]:
    return tuple(Cell("topology", k.value, 1) for k in ent.TopologyKind)


# ---------------------------------------------------------------- records


@dataclass
class RunRecord:
    run_id: str
    mode: str
    seed: int
    cell: str = ""
    cell_index: int = -1
    run_index: int = -1
    param: int | str | None = None
    mu: float | None = None
    beta: dict | None = None
    status: str = "ok"
    val_accuracy: float | None = None
    test_accuracy: float | None = None
    best_epoch: int | None = None
    theta_history: list | None = None
    error: str | None = None
    checkpoint: str | None = None
    wall_time: float = 0.0
    model: object = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}

    @classmethod
    def from_json(cls, doc: dict) -> "RunRecord":
        names = {f.name for f in fields(cls)} - {"model"}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown run-record field(s): {sorted(unknown)}")
        rec = cls(**doc)
        if rec.beta is not None and rec.mu is not None:
            mu = ent.density(ent.from_descriptor(rec.beta))
            if abs(mu - rec.mu) > 1e-9:
                raise ValueError(f"record {rec.run_id}: mu={rec.mu} disagrees with its matrix ({mu})")
        return rec


def write_records(path, records: Iterable[RunRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def read_records(path) -> list[RunRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(RunRecord.from_json(json.loads(line)))
    return out


def _n_classes(data: FeatureTable) -> int:
    return max(2, int(data.labels.max()) + 1)


def run_single(beta: ent.EntanglementMatrix, seed: int, data: FeatureTable,
               cfg: nnet.TrainConfig = nnet.TrainConfig(), *, run_id: str = "run",
               cell: Cell | None = None, cell_index: int = -1, run_index: int = -1,
               keep_theta: bool = True) -> RunRecord:
    """Train one dressed net with ``beta`` and score it on validation and test."""
    t0 = time.perf_counter()
    model = nnet.init_dressed(data.n_features, beta, _n_classes(data), seed=(seed, 1))
    best, hist = nnet.train(model, data, replace(cfg, seed=seed))
    mode = cell.mode if cell is not None else "fixed"
    param = cell.value if cell is not None else None
    return RunRecord(
        run_id=run_id, mode=mode, seed=seed, cell=cell.label if cell else "", cell_index=cell_index,
        run_index=run_index, param=param, mu=ent.density(beta),
        beta=ent.to_descriptor(beta, mode, param, seed),
        val_accuracy=hist.val_acc[hist.best_epoch], test_accuracy=nnet.evaluate(best, data, "test"),
        best_epoch=hist.best_epoch, theta_history=hist.theta if keep_theta else None,
        wall_time=time.perf_counter() - t0, model=best)


def run_baseline(data: FeatureTable, cfg: nnet.TrainConfig = nnet.TrainConfig(), seed: int = 0,
                 n_hidden: int = 8) -> RunRecord:
    """Same pipeline with the circuit removed: two dense layers."""
    t0 = time.perf_counter()
    model = nnet.init_baseline(data.n_features, n_hidden, _n_classes(data), seed=(seed, 1))
    best, hist = nnet.train(model, data, replace(cfg, seed=seed))
    return RunRecord(
        run_id="baseline", mode="baseline", seed=seed, cell="baseline",
        val_accuracy=hist.val_acc[hist.best_epoch], test_accuracy=nnet.evaluate(best, data, "test"),
        best_epoch=hist.best_epoch, wall_time=time.perf_counter() - t0, model=best)


def _execute(task):
    cell, cell_index, run_index, seed, n_q, data, cfg = task
    run_id = f"c{cell_index:02d}r{run_index:03d}"
    try:
        beta = cell.beta(n_q, np.random.default_rng((seed, 0)))
        return run_single(beta, seed, data, cfg, run_id=run_id, cell=cell,
                          cell_index=cell_index, run_index=run_index)
    except Exception as exc:  # a failed run is kept so cell counts stay auditable
        return RunRecord(run_id=run_id, mode=cell.mode, seed=seed, cell=cell.label, cell_index=cell_index,
                         run_index=run_index, param=cell.value, status="failed",
                         error=f"{type(exc).__name__}: {exc}")


def search_tasks(cfg: SearchConfig, data: FeatureTable):
    for ci, cell in enumerate(cfg.cells):
        for ri in range(cell.n_runs):
            yield cell, ci, ri, derive_seed(cfg.master_seed, ci, ri), cfg.n_q, data, cfg.train


def run_search(cfg: SearchConfig, data: FeatureTable, jobs: int = 1,
               on_record: Callable[[RunRecord], None] | None = None) -> list[RunRecord]:
    """Run every (cell, run) of the search; records come back in cell-then-run order.

    With ``jobs > 1`` runs execute in worker processes. ``on_record`` sees each
    record in canonical order as soon as it and all its predecessors are done.
    """
    tasks = list(search_tasks(cfg, data))
    out = []
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = pool.map(_execute, tasks)
            for rec in results:
                out.append(rec)
                if on_record:
                    on_record(rec)
    else:
        for task in tasks:
            rec = _execute(task)
            out.append(rec)
            if on_record:
                on_record(rec)
    return out


# ----------------------------------------------------- selection, voting


def constructive_subspace(records: Sequence[RunRecord], baseline: RunRecord, on: str = "test") -> list[RunRecord]:
    """Records whose accuracy strictly beats the baseline's.

    ``on="test"`` compares test accuracies; ``on="validation"`` compares
    validation accuracies instead.
    """
    attr = {"test": "test_accuracy", "validation": "val_accuracy"}[on]
    ref = getattr(baseline, attr)
    if ref is None:
        raise ValueError(f"baseline has no {attr}")
    return [r for r in records if r.ok and getattr(r, attr) is not None and getattr(r, attr) > ref]


def top_r_count(n: int, r: float) -> int:
    return max(1, int(np.floor(r * n / 100.0 + 1e-9)))


def top_r_select(records: Sequence[RunRecord], r: float) -> list[RunRecord]:
    """Best ``max(1, floor(r N / 100))`` records by validation accuracy (ties: lower run_id)."""
    pool = [rec for rec in records if rec.ok]
    if not pool:
        raise ValueError("no successful records to select from")
    if not 0 < r <= 100:
        raise ValueError(f"r must be in (0, 100], got {r}")
    ranked = sorted(pool, key=lambda rec: (-rec.val_accuracy, rec.run_id))
    return ranked[:top_r_count(len(pool), r)]


@dataclass
class EnsembleResult:
    member_ids: list[str]
    accuracy: float
    probs: np.ndarray  # (S, n_classes) summed member probabilities
    predictions: np.ndarray
    cell: str = ""
    r: float | None = None

    def to_json(self) -> dict:
        return {"cell": self.cell, "r": self.r, "member_ids": list(self.member_ids),
                "n_members": len(self.member_ids), "test_accuracy": self.accuracy}


def vote(member_probs: Sequence[np.ndarray], labels) -> tuple[np.ndarray, np.ndarray, float]:
    """Sum probability vectors over members; predict the argmax (ties: lower class)."""
    if len(member_probs) == 0:
        raise ValueError("ensemble needs at least one member")
    shapes = {np.shape(p) for p in member_probs}
    if len(shapes) != 1:
        raise ValueError(f"members disagree on output shape: {sorted(shapes)}")
    total = np.sum(np.stack(member_probs), axis=0)
    pred = np.argmax(total, axis=1)
    return total, pred, float(np.mean(pred == np.asarray(labels)))


def ensemble_vote(members: Sequence, data: FeatureTable, split: str = "test",
                  member_ids: Sequence[str] | None = None) -> EnsembleResult:
    x, y = data.split(split)
    if len(y) == 0:
        raise ValueError(f"split {split!r} is empty")
    total, pred, acc = vote([nnet.predict_proba(m, x) for m in members], y)
    ids = list(member_ids) if member_ids is not None else [str(i) for i in range(len(members))]
    return EnsembleResult(ids, acc, total, pred)


def record_model(rec: RunRecord):
    if rec.model is None:
        if rec.checkpoint is None:
            raise ValueError(f"record {rec.run_id} carries neither a model nor a checkpoint")
        rec.model = nnet.load_checkpoint(rec.checkpoint)
    return rec.model


def cell_ensembles(records: Sequence[RunRecord], data: FeatureTable, r_values=(100,),
                   split: str = "test") -> list[EnsembleResult]:
    """Top-r% ensembles within each cell (records grouped by cell label)."""
    by_cell: dict[str, list[RunRecord]] = {}
    for rec in records:
        if rec.mode != "topology":
            by_cell.setdefault(rec.cell, []).append(rec)
    out = []
    for cell, recs in by_cell.items():
        if not any(r.ok for r in recs):
            continue
        for r in r_values:
            chosen = top_r_select(recs, r)
            res = ensemble_vote([record_model(c) for c in chosen], data, split, [c.run_id for c in chosen])
            res.cell, res.r = cell, r
            out.append(res)
    return out


# ----------------------------------------------------------------- report


def _cells_from_records(records):
    cells = {}
    for rec in records:
        if rec.cell_index >= 0:
            cells.setdefault(rec.cell_index, Cell(rec.mode, rec.param, 1))
    return cells


def report(records: Sequence[RunRecord], baseline: RunRecord | None,
           ensembles: Sequence[EnsembleResult] | Sequence[dict] = (), n_q: int = 8) -> dict:
    """Summary document: per-cell statistics, constructive subspace, ensembles,
    conventional topologies and a results table grouped by section."""
    ens = [e.to_json() if isinstance(e, EnsembleResult) else dict(e) for e in ensembles]
    cells = _cells_from_records(records)
    doc: dict = {"n_q": n_q}
    doc["baseline"] = None if baseline is None else {
        "test_accuracy": baseline.test_accuracy, "val_accuracy": baseline.val_accuracy}

    constructive = set()
    if baseline is not None:
        constructive = {r.run_id for r in constructive_subspace(records, baseline)}

    cell_rows = []
    for ci in sorted(cells):
        cell = cells[ci]
        if cell.mode == "topology":
            continue
        recs = [r for r in records if r.cell_index == ci]
        ok = [r for r in recs if r.ok]
        accs = [r.test_accuracy for r in ok]
        n_con = sum(r.run_id in constructive for r in ok)
        cell_rows.append({
            "cell": cell.label, "label": cell.table_label(n_q), "mode": cell.mode, "param": cell.value,
            "n_runs": len(recs), "n_failed": len(recs) - len(ok),
            "best_test_accuracy": max(accs) if accs else None,
            "median_test_accuracy": statistics.median(accs) if accs else None,
            "best_val_accuracy": max(r.val_accuracy for r in ok) if ok else None,
            "n_constructive": n_con if baseline is not None else None,
            "constructive_fraction": (n_con / len(ok)) if (ok and baseline is not None) else None,
        })
    doc["cells"] = cell_rows

    searched = [r for r in records if r.ok and r.mode != "topology"]
    if baseline is not None:
        doc["constructive"] = {
            "count": len([r for r in searched if r.run_id in constructive]),
            "total": len(searched),
            "fraction": (len([r for r in searched if r.run_id in constructive]) / len(searched)) if searched else 0.0,
            "run_ids": [r.run_id for r in searched if r.run_id in constructive],
        }

    conv = []
    for ci in sorted(cells):
        cell = cells[ci]
        if cell.mode != "topology":
            continue
        for r in records:
            if r.cell_index == ci and r.ok:
                kind = ent.TopologyKind(cell.value)
                beta = ent.conventional(kind, n_q)
                ks = {ent.per_qubit_count(beta, i) for i in range(1, n_q + 1)}
                conv.append({"label": cell.table_label(n_q), "topology": kind.value, "run_id": r.run_id,
                             "mu": r.mu, "k": ks.pop() if len(ks) == 1 else None,
                             "test_accuracy": r.test_accuracy})
    doc["conventional"] = conv
    if ens:
        doc["ensembles"] = ens

    labels = {c.label: c.table_label(n_q) for c in cells.values()}
    table = []
    for e in ens:
        if e["r"] == 100:
            table.append({"section": SECTION_ENSEMBLE, "label": labels.get(e["cell"], e["cell"]),
                          "test_accuracy": e["test_accuracy"], "n_configurations": e["n_members"]})
    partial = [e for e in ens if e["r"] is not None and e["r"] < 100]
    if partial:
        best = max(partial, key=lambda e: e["test_accuracy"])  # first maximum wins ties
        table.append({"section": SECTION_TOP_R, "label": labels.get(best["cell"], best["cell"]),
                      "test_accuracy": best["test_accuracy"],
                      "n_configurations": f"Top - {best['r']:g} % of runs"})
    for c in conv:
        table.append({"section": SECTION_CONVENTIONAL, "label": c["label"],
                      "test_accuracy": c["test_accuracy"], "n_configurations": 1})
    if baseline is not None:
        table.append({"section": SECTION_BASELINE, "label": "Classical baseline (dense layers only)",
                      "test_accuracy": baseline.test_accuracy, "n_configurations": 1})
    doc["table"] = table
    return doc


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def scatter_csv(records: Sequence[RunRecord]) -> str:
    rows = [[r.cell, r.mode, repr(r.mu), r.param, repr(r.test_accuracy)]
            for r in records if r.ok and r.mode != "baseline"]
    return _csv_text(["cell", "mode", "mu", "k", "test_acc"], rows)


def topr_csv(ensembles: Sequence[EnsembleResult] | Sequence[dict]) -> str:
    ens = [e.to_json() if isinstance(e, EnsembleResult) else e for e in ensembles]
    return _csv_text(["cell", "r", "ensemble_acc"], [[e["cell"], f"{e['r']:g}", repr(e["test_accuracy"])] for e in ens])


def theta_csv(records: Sequence[RunRecord]) -> str:
    rows = []
    for r in records:
        for epoch, thetas in enumerate(r.theta_history or ()):
            for q, t in enumerate(thetas, start=1):
                rows.append([r.run_id, epoch + 1, q, repr(t)])
    return _csv_text(["run_id", "epoch", "qubit", "theta"], rows)


def write_report(outdir, records, baseline, ensembles=(), n_q: int = 8) -> dict:
    """Write report.json, scatter.csv, topr.csv and theta.csv under ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    doc = report(records, baseline, ensembles, n_q)
    (out / "report.json").write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    (out / "scatter.csv").write_text(scatter_csv(records), encoding="utf-8")
    (out / "topr.csv").write_text(topr_csv(ensembles), encoding="utf-8")
    (out / "theta.csv").write_text(theta_csv(records), encoding="utf-8")
    return doc
