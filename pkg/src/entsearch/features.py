"""Feature tables, PCA, patient-wise splitting and a synthetic stand-in dataset."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

SPLITS = ("train", "validation", "test")
UNASSIGNED = "unassigned"


@dataclass(frozen=True, eq=False)
class FeatureTable:
    rows: np.ndarray  # (S, D)
    labels: np.ndarray  # (S,) int
    patient_ids: tuple[str, ...]
    splits: tuple[str, ...] = field(default=())

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64, ndmin=2)
        labels = np.asarray(self.labels)
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be integer class indices")
        labels = labels.astype(np.int64)
        ids = tuple(str(p) for p in self.patient_ids)
        splits = tuple(self.splits) or (UNASSIGNED,) * len(ids)
        s = rows.shape[0]
        if not (labels.shape == (s,) and len(ids) == s and len(splits) == s):
            raise ValueError(
                f"inconsistent row counts: rows={s}, labels={labels.shape[0]}, "
                f"patient_ids={len(ids)}, splits={len(splits)}")
        bad = set(splits) - set(SPLITS) - {UNASSIGNED}
        if bad:
            raise ValueError(f"unknown split tag(s): {sorted(bad)}")
        owner = {}
        for pid, tag in zip(ids, splits):
            if tag != UNASSIGNED and owner.setdefault(pid, tag) != tag:
                raise ValueError(f"patient {pid!r} appears in splits {owner[pid]!r} and {tag!r}")
        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "patient_ids", ids)
        object.__setattr__(self, "splits", splits)

    def __len__(self):
        return self.rows.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (np.array_equal(self.rows, other.rows) and np.array_equal(self.labels, other.labels)
                and self.patient_ids == other.patient_ids and self.splits == other.splits)

    __hash__ = None

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def mask(self, split: str) -> np.ndarray:
        return np.array([s == split for s in self.splits], dtype=bool)

    def split(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """(rows, labels) of one split."""
        m = self.mask(split)
        return self.rows[m], self.labels[m]

    def has_splits(self) -> bool:
        return UNASSIGNED not in self.splits

    def with_rows(self, rows) -> "FeatureTable":
        return replace(self, rows=rows)


# ------------------------------------------------------------------- PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (D, d), orthonormal columns
    explained_variance: np.ndarray  # (d,), non-increasing
    scaled: bool = False

    @property
    def d(self) -> int:
        return self.components.shape[1]

    @property
    def D(self) -> int:
        return self.components.shape[0]

    def to_json(self) -> dict:
        return {
            "D": self.D,
            "d": self.d,
            "mean": self.mean.tolist(),
            # column-major: one list per principal direction
            "components": self.components.T.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "scaled": self.scaled,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PcaModel":
        comps = np.array(doc["components"], dtype=np.float64).T
        model = cls(np.array(doc["mean"], dtype=np.float64), comps,
                    np.array(doc["explained_variance"], dtype=np.float64), bool(doc.get("scaled", False)))
        if model.D != doc["D"] or model.d != doc["d"]:
            raise ValueError("PCA JSON dimensions disagree with array shapes")
        return model


def pca_fit(rows, d: int = 20) -> PcaModel:
    """Fit PCA on training rows through an SVD of the centred matrix.

    Each component is sign-fixed so its largest-magnitude entry is positive.
    """
    x = np.asarray(rows, dtype=np.float64)
    s, dim = x.shape
    if s < 2:
        raise ValueError("PCA needs at least 2 rows")
    if not 1 <= d <= min(s - 1, dim):
        raise ValueError(f"d must be in 1..{min(s - 1, dim)}, got {d}")
    mean = x.mean(axis=0)
    xc = x - mean
    _, sing, vt = np.linalg.svd(xc, full_matrices=False)
    if sing[0] <= np.finfo(float).eps * max(1.0, np.abs(x).max()) * s:
        raise ValueError("training rows have zero variance; PCA is undefined")
    comps = vt[:d].T.copy()
    pivot = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivot, np.arange(d)])
    comps *= signs
    var = sing[:d] ** 2 / (s - 1)
    for a in (mean, comps, var):
        a.setflags(write=False)
    return PcaModel(mean, comps, var)


def pca_transform(model: PcaModel, rows) -> np.ndarray:
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.D:
        raise ValueError(f"expected rows with {model.D} features, got shape {x.shape}")
    return (x - model.mean) @ model.components


def project_table(table: FeatureTable, d: int) -> tuple[FeatureTable, PcaModel]:
    """Fit PCA on the train split only and project every row with that model."""
    train_rows, _ = table.split("train")
    model = pca_fit(train_rows, d)
    return table.with_rows(pca_transform(model, table.rows)), model


# ------------------------------------------------------------- splitting


def _apportion(n: int, fractions) -> list[int]:
    quotas = [f * n for f in fractions]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    # every split gets at least one patient
    for i in range(len(counts)):
        while counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def patient_split(table: FeatureTable, fractions=(0.5, 0.25, 0.25), seed: int = 0) -> FeatureTable:
    """Assign train/validation/test by patient so no patient spans two splits.

    The result depends only on the set of patient ids and the seed.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    patients = sorted(set(table.patient_ids))
    if len(patients) < 3:
        raise ValueError(f"need at least 3 patients to split, got {len(patients)}")
    order = np.random.default_rng(seed).permutation(len(patients))
    counts = _apportion(len(patients), fractions)
    tag = {}
    start = 0
    for name, c in zip(SPLITS, counts):
        for idx in order[start:start + c]:
            tag[patients[idx]] = name
        start += c
    return replace(table, splits=tuple(tag[p] for p in table.patient_ids))


# ------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    n_per_class: int = 90
    D: int = 20
    separation: float = 2.5
    patients_per_class: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1 or self.D < 1 or self.patients_per_class < 1:
            raise ValueError("n_per_class, D and patients_per_class must be positive")
        if self.patients_per_class > self.n_per_class:
            raise ValueError("more patients than samples per class")
        if self.separation < 0:
            raise ValueError("separation must be non-negative")


def synthesize_dataset(spec: SyntheticSpec) -> FeatureTable:
    """Two unit-variance Gaussian classes whose means differ by ``separation``
    along a random unit direction. Consecutive samples of a class are grouped
    into patients."""
    rng = np.random.default_rng(spec.seed)
    u = rng.normal(size=spec.D)
    u /= np.linalg.norm(u)
    rows, labels, pids = [], [], []
    for c, sign in enumerate((-1.0, 1.0)):
        x = rng.normal(size=(spec.n_per_class, spec.D)) + sign * 0.5 * spec.separation * u
        block = np.array_split(np.arange(spec.n_per_class), spec.patients_per_class)
        for p, idx in enumerate(block):
            pids.extend([f"c{c}p{p:03d}"] * len(idx))
        rows.append(x)
        labels.extend([c] * spec.n_per_class)
    return FeatureTable(np.vstack(rows), np.array(labels), tuple(pids))


# ------------------------------------------------------------------- CSV


def save_features(table: FeatureTable, path, include_split: bool | None = None) -> None:
    if include_split is None:
        include_split = table.has_splits()
    header = ["patient_id", "label"] + (["split"] if include_split else [])
    header += [f"f{i + 1}" for i in range(table.n_features)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in range(len(table)):
            row = [table.patient_ids[r], int(table.labels[r])]
            if include_split:
                row.append(table.splits[r])
            row += [repr(float(v)) for v in table.rows[r]]
            w.writerow(row)


def load_features(path) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["patient_id", "label"]:
            raise ValueError(f"{path}: header must start with patient_id,label")
        has_split = len(header) > 2 and header[2] == "split"
        first = 3 if has_split else 2
        feat_cols = header[first:]
        if not feat_cols or feat_cols != [f"f{i + 1}" for i in range(len(feat_cols))]:
            raise ValueError(f"{path}: feature columns must be f1..fD")
        rows, labels, pids, splits = [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(rec)}")
            try:
                labels.append(int(rec[1]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: label {rec[1]!r} is not an integer class index") from None
            if has_split:
                if rec[2] not in SPLITS:
                    raise ValueError(f"{path}:{lineno}: unknown split tag {rec[2]!r}")
                splits.append(rec[2])
            try:
                rows.append([float(v) for v in rec[first:]])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric feature cell") from None
            pids.append(rec[0])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return FeatureTable(np.array(rows), np.array(labels, dtype=np.int64), tuple(pids), tuple(splits))


def save_pca(model: PcaModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh, indent=2)
        fh.write("\n")
