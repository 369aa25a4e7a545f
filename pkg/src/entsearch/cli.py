"""Command-line entry point.

Exit codes: 0 success, 1 unexpected error, 2 bad flags or unreadable config,
3 training failure (records written so far are kept), 4 empty selection.
Progress goes to stderr; machine output goes to stdout or files.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import entanglement as ent
from . import experiment as exp
from . import features as ft
from . import nnet

log = logging.getLogger("entsearch")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_TRAIN, EXIT_EMPTY = 0, 1, 2, 3, 4
CONFIG_VERSION = 1
SEED_ENV = "ENTANGLE_SEED"


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------- config


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: Path
    dataset_path: Path | None = None
    synthetic: ft.SyntheticSpec | None = None
    split_fractions: tuple = (0.5, 0.25, 0.25)
    split_seed: int = 0
    pca_dim: int = 20
    n_q: int = 8
    train: nnet.TrainConfig = nnet.TrainConfig()
    cells: tuple = ()
    top_r: tuple = (1, 5, 10, 20, 30)
    master_seed: int = 0
    version: int = CONFIG_VERSION


_TOP_KEYS = {"version", "dataset", "synthetic", "split", "pca_dim", "n_q", "train", "cells",
             "top_r", "output_dir", "master_seed"}
_TRAIN_KEYS = {"epochs", "learning_rate", "decay_gamma", "decay_every", "batch_size"}
_SYNTH_KEYS = {"n_per_class", "D", "separation", "patients_per_class", "seed"}


def _reject_unknown(doc, allowed, where):
    unknown = set(doc) - allowed
    if unknown:
        raise CliError(f"{where}: unknown field(s) {sorted(unknown)}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError(f"{path}: config must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, str(path))
    if doc.get("version") != CONFIG_VERSION:
        raise CliError(f"{path}: expected \"version\": {CONFIG_VERSION}, got {doc.get('version')!r}")
    base = path.resolve().parent
    if ("dataset" in doc) == ("synthetic" in doc):
        raise CliError(f"{path}: give exactly one of \"dataset\" and \"synthetic\"")
    try:
        kw = {}
        if "dataset" in doc:
            ds = doc["dataset"]
            _reject_unknown(ds, {"path"}, "dataset")
            p = base / ds["path"]
            if not p.is_file():
                raise CliError(f"dataset file not found: {p}")
            kw["dataset_path"] = p
        else:
            _reject_unknown(doc["synthetic"], _SYNTH_KEYS, "synthetic")
            kw["synthetic"] = ft.SyntheticSpec(**doc["synthetic"])
        split = doc.get("split", {})
        _reject_unknown(split, {"fractions", "seed"}, "split")
        kw["split_fractions"] = tuple(split.get("fractions", (0.5, 0.25, 0.25)))
        kw["split_seed"] = int(split.get("seed", 0))
        train = doc.get("train", {})
        _reject_unknown(train, _TRAIN_KEYS, "train")
        kw["train"] = nnet.TrainConfig(**train)
        kw["cells"] = tuple(exp.Cell.from_json(c) for c in doc.get("cells", ()))
        kw["top_r"] = tuple(float(r) for r in doc.get("top_r", (1, 5, 10, 20, 30)))
        for key in ("pca_dim", "n_q", "master_seed"):
            if key in doc:
                kw[key] = int(doc[key])
        cfg = ExperimentConfig(output_dir=base / doc.get("output_dir", "out"), **kw)
    except CliError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise CliError(f"{path}: invalid config: {exc}") from None
    for c in cfg.cells:
        try:
            if c.mode != "topology":
                c.sampling_spec(cfg.n_q)
        except ValueError as exc:
            raise CliError(f"{path}: cell {c.label}: {exc}") from None
    return cfg


def resolve_seed(cfg: ExperimentConfig, flag: int | None) -> int:
    """Seed precedence: --seed flag, then $ENTANGLE_SEED, then the config."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise CliError(f"{SEED_ENV}={env!r} is not an integer") from None
    return cfg.master_seed


def prepare_dataset(cfg: ExperimentConfig):
    """Load or synthesise the table, split by patient if needed, project with PCA."""
    if cfg.dataset_path is not None:
        try:
            table = ft.load_features(cfg.dataset_path)
        except (OSError, ValueError) as exc:
            raise CliError(str(exc)) from None
    else:
        table = ft.synthesize_dataset(cfg.synthetic)
    if not table.has_splits():
        table = ft.patient_split(table, cfg.split_fractions, cfg.split_seed)
    try:
        return ft.project_table(table, cfg.pca_dim)
    except ValueError as exc:
        raise CliError(f"PCA failed: {exc}") from None


# ------------------------------------------------------------------ helpers


def _fmt_mu(mu: float) -> str:
    return f"{mu:.4f}".rstrip("0").rstrip(".")


def _print_matrix_summary(beta: ent.EntanglementMatrix, out=None):
    out = out or sys.stdout
    counts = [ent.per_qubit_count(beta, i) for i in range(1, beta.n_q + 1)]
    print(f"mu: {_fmt_mu(ent.density(beta))}", file=out)
    print(f"E: {ent.total_entanglements(beta)}", file=out)
    print("per_qubit: " + ",".join(str(c) for c in counts), file=out)


def _write_matrix(beta, out, mode, value, seed):
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out if out.suffix == ".csv" else out.with_suffix(".csv")
    csv_path.write_text(ent.serialize(beta), encoding="utf-8")
    desc = ent.to_descriptor(beta, mode, value, seed)
    csv_path.with_suffix(".json").write_text(json.dumps(desc, indent=2) + "\n", encoding="utf-8")
    log.info("wrote %s and %s", csv_path, csv_path.with_suffix(".json"))


def _dump(path: Path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _save_model(outdir: Path, rel: str, model, cfg) -> str:
    path = outdir / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    nnet.save_checkpoint(path, model, cfg)
    return rel


def _load_run_records(outdir: Path, missing_code=EXIT_CONFIG):
    path = outdir / "runs.jsonl"
    if not path.is_file():
        raise CliError(f"no run records at {path}; run `entsearch search` first", missing_code)
    records = exp.read_records(path)
    for r in records:
        if r.checkpoint:
            r.checkpoint = str(outdir / r.checkpoint)
    return records


def _load_baseline(outdir: Path):
    path = outdir / "baseline.json"
    if not path.is_file():
        return None
    rec = exp.RunRecord.from_json(json.loads(path.read_text(encoding="utf-8")))
    if rec.checkpoint:
        rec.checkpoint = str(outdir / rec.checkpoint)
    return rec


# ----------------------------------------------------------------- commands


def cmd_sample(args) -> int:
    given = {"k": args.k, "e": args.e, "k_max": args.k_max}
    wanted = {"constrained": "k", "unconstrained": "e", "semi": "k_max"}[args.mode]
    extra = sorted(f"--{k.replace('_', '-')}" for k, v in given.items() if v is not None and k != wanted)
    if extra:
        raise CliError(f"mode {args.mode} conflicts with {', '.join(extra)}")
    value = given[wanted]
    if value is None:
        raise CliError(f"mode {args.mode} requires --{wanted.replace('_', '-')}")
    try:
        spec = {"constrained": ent.Constrained, "unconstrained": ent.Unconstrained,
                "semi": ent.SemiConstrained}[args.mode](args.n_q, value)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    beta = ent.sample(spec, np.random.default_rng(args.seed))
    _print_matrix_summary(beta)
    if args.out:
        _write_matrix(beta, args.out, args.mode, value, args.seed)
    else:
        sys.stdout.write(ent.serialize(beta))
    return EXIT_OK


_KIND_ALIASES = {"ring": "ring", "nearest": "nearest", "nearest-neighbor": "nearest", "nn": "nearest",
                 "none": "none", "no-entanglement": "none", "full": "full", "fully-entangled": "full"}


def cmd_topology(args) -> int:
    try:
        beta = ent.conventional(_KIND_ALIASES[args.kind], args.n_q)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _print_matrix_summary(beta)
    if args.out:
        _write_matrix(beta, args.out, "topology", None, None)
    else:
        sys.stdout.write(ent.serialize(beta))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    try:
        beta = ent.load(args.beta)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read beta file {args.beta}: {exc}") from None
    if beta.n_q != cfg.n_q:
        raise CliError(f"beta has {beta.n_q} qubits but the config says n_q={cfg.n_q}")
    data, _ = prepare_dataset(cfg)
    name = Path(args.beta).stem
    try:
        rec = exp.run_single(beta, seed, data, cfg.train, run_id=name)
    except Exception as exc:
        log.error("training failed: %s", exc)
        return EXIT_TRAIN
    rec.checkpoint = _save_model(cfg.output_dir, f"train/{name}.checkpoint.json", rec.model, cfg.train)
    _dump(cfg.output_dir / "train" / f"{name}.record.json", rec.to_json())
    print(json.dumps(rec.to_json(), ensure_ascii=False))
    return EXIT_OK


def _baseline(cfg, data, seed):
    rec = exp.run_baseline(data, cfg.train, seed, n_hidden=cfg.n_q)
    rec.checkpoint = _save_model(cfg.output_dir, "checkpoints/baseline.json", rec.model, cfg.train)
    _dump(cfg.output_dir / "baseline.json", rec.to_json())
    log.info("baseline: val=%.4f test=%.4f", rec.val_accuracy, rec.test_accuracy)
    return rec


def cmd_baseline(args) -> int:
    cfg = load_config(args.config)
    data, _ = prepare_dataset(cfg)
    try:
        rec = _baseline(cfg, data, resolve_seed(cfg, args.seed))
    except Exception as exc:
        log.error("baseline training failed: %s", exc)
        return EXIT_TRAIN
    print(json.dumps(rec.to_json(), ensure_ascii=False))
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = load_config(args.config)
    if not cfg.cells:
        raise CliError("config has no search cells")
    seed = resolve_seed(cfg, args.seed)
    data, pca = prepare_dataset(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    ft.save_pca(pca, out / "pca.json")
    search = exp.SearchConfig(cells=cfg.cells, n_q=cfg.n_q, master_seed=seed, train=cfg.train)
    jobs = args.jobs or os.cpu_count() or 1
    total = sum(c.n_runs for c in cfg.cells)
    log.info("search: %d cells, %d runs, %d job(s)", len(cfg.cells), total, jobs)
    failed = 0
    with open(out / "runs.jsonl", "w", encoding="utf-8") as fh:
        def persist(rec):
            nonlocal failed
            if rec.ok:
                rec.checkpoint = _save_model(out, f"checkpoints/{rec.run_id}.json", rec.model, cfg.train)
                log.info("%s %s val=%.4f test=%.4f", rec.run_id, rec.cell, rec.val_accuracy, rec.test_accuracy)
            else:
                failed += 1
                log.error("%s %s failed: %s", rec.run_id, rec.cell, rec.error)
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
            fh.flush()

        exp.run_search(search, data, jobs=jobs, on_record=persist)
    try:
        _baseline(cfg, data, seed)
    except Exception as exc:
        log.error("baseline training failed: %s", exc)
        return EXIT_TRAIN
    return EXIT_TRAIN if failed else EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = load_config(args.config)
    out = cfg.output_dir
    records = _load_run_records(out, EXIT_EMPTY)
    if not any(r.ok and r.mode != "topology" for r in records):
        log.error("no successful search records to ensemble")
        return EXIT_EMPTY
    data, _ = prepare_dataset(cfg)
    r_values = tuple(args.top_r) if args.top_r else cfg.top_r
    r_values = (100.0,) + tuple(r for r in r_values if r != 100)
    try:
        results = exp.cell_ensembles(records, data, r_values)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_EMPTY
    if not results:
        return EXIT_EMPTY
    docs = [r.to_json() for r in results]
    _dump(out / "ensembles.json", docs)
    for d in docs:
        log.info("%s top-%g%%: %d member(s), test=%.4f", d["cell"], d["r"], d["n_members"], d["test_accuracy"])
    print(json.dumps(docs, ensure_ascii=False))
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = load_config(args.config)
    out = cfg.output_dir
    records = _load_run_records(out)
    baseline = _load_baseline(out)
    ens_path = out / "ensembles.json"
    ensembles = json.loads(ens_path.read_text(encoding="utf-8")) if ens_path.is_file() else []
    doc = exp.write_report(out, records, baseline, ensembles, cfg.n_q)
    log.info("wrote report.json, scatter.csv, topr.csv, theta.csv under %s", out)
    print(json.dumps(doc, ensure_ascii=False))
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entsearch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="sample a stochastic entanglement matrix")
    s.add_argument("--n-q", type=int, default=8)
    s.add_argument("--mode", choices=("constrained", "unconstrained", "semi"), default="constrained")
    s.add_argument("--k", type=int)
    s.add_argument("--e", type=int)
    s.add_argument("--k-max", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="CSV path; a JSON descriptor is written next to it")
    s.set_defaults(func=cmd_sample)

    t = sub.add_parser("topology", help="emit a conventional topology")
    t.add_argument("--kind", required=True, choices=sorted(_KIND_ALIASES))
    t.add_argument("--n-q", type=int, default=8)
    t.add_argument("--out")
    t.set_defaults(func=cmd_topology)

    for name, func, text in (("train", cmd_train, "train one dressed net for a given matrix"),
                             ("baseline", cmd_baseline, "train the classical baseline"),
                             ("search", cmd_search, "run every search cell plus the baseline"),
                             ("ensemble", cmd_ensemble, "top-r%% majority-vote ensembles per cell"),
                             ("report", cmd_report, "summary JSON and plot-ready CSVs")):
        c = sub.add_parser(name, help=text)
        c.add_argument("--config", required=True)
        if name in ("train", "baseline", "search"):
            c.add_argument("--seed", type=int, help=f"overrides ${SEED_ENV} and the config seed")
        if name == "train":
            c.add_argument("--beta", required=True, help="matrix CSV or JSON descriptor")
        if name == "search":
            c.add_argument("--jobs", type=int, default=None, help="parallel runs (default: CPU count)")
        if name == "ensemble":
            c.add_argument("--top-r", type=float, nargs="+")
        c.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
