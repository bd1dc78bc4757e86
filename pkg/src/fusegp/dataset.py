"""Ingestion, validation, normalization, feature engineering, and folds.

The canonical CSV schema is
``sample_id,p_w,v_mm_s,l_um,h_um,sr_deg,material,phi_pct,hv`` with one
process-parameter combination per row. Hatch spacing and layer thickness
are carried in micrometers at the boundary and converted to millimeters
inside the energy-density computation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

CSV_COLUMNS = ("sample_id", "p_w", "v_mm_s", "l_um", "h_um", "sr_deg",
               "material", "phi_pct", "hv")
FEATURE_NAMES = ("p", "v", "l", "h", "sr")
RESPONSE_NAMES = ("phi", "hv")

# Default validation ranges for the continuous process parameters.
DEFAULT_RANGES = {"p": (80.0, 400.0), "v": (150.0, 1500.0),
                  "l": (20.0, 75.0), "h": (70.0, 120.0)}
SR_LEVELS = (67.0, 90.0)


@dataclass(frozen=True)
class ProcessPoint:
    """One LPBF parameter combination plus its material-source label."""

    p: float   # laser power, W
    v: float   # scan speed, mm/s
    l: float   # layer thickness, um
    h: float   # hatch spacing, um
    sr: float  # scan rotation, degrees (categorical: 67 or 90)
    s: str     # material source label

    def features(self) -> np.ndarray:
        return np.array([self.p, self.v, self.l, self.h, self.sr], dtype=float)


@dataclass
class Dataset:
    """Immutable-by-convention collection of points and their responses."""

    ids: list
    points: list
    responses: dict           # property name -> (n,) float array
    sources: tuple            # ordered source labels, first appearance

    @property
    def n(self) -> int:
        return len(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def feature_matrix(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, len(FEATURE_NAMES)))
        return np.vstack([pt.features() for pt in self.points])

    def source_labels(self) -> list:
        return [pt.s for pt in self.points]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        points = [self.points[i] for i in indices]
        seen = []
        for pt in points:
            if pt.s not in seen:
                seen.append(pt.s)
        return Dataset(
            ids=[self.ids[i] for i in indices],
            points=points,
            responses={k: v[indices].copy() for k, v in self.responses.items()},
            sources=tuple(seen),
        )


def merge_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Concatenate two datasets, keeping first-appearance source order."""
    if set(a.responses) != set(b.responses):
        raise DataError("datasets declare different property sets")
    dup = set(a.ids) & set(b.ids)
    ids = a.ids + [(f"{i}#b" if i in dup else i) for i in b.ids]
    points = a.points + b.points
    seen = []
    for pt in points:
        if pt.s not in seen:
            seen.append(pt.s)
    responses = {k: np.concatenate([a.responses[k], b.responses[k]])
                 for k in a.responses}
    return Dataset(ids=ids, points=points, responses=responses, sources=tuple(seen))


def _parse_number(raw, column, line_no):
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise DataError(f"line {line_no}: unparseable number {raw!r} in column {column}") from None
    if not np.isfinite(value):
        raise DataError(f"line {line_no}: non-finite value in column {column}")
    return value


def load_csv(path, validate: bool = True) -> Dataset:
    """Load the canonical process-property CSV.

    With ``validate`` enabled (the default), the continuous parameters must
    lie inside the design ranges and the scan rotation must be one of the
    two declared levels. Porosity must be a percentage in [0, 100] and
    hardness strictly positive regardless of the flag.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing column {', '.join(missing)}")

        ids, points = [], []
        phi, hv = [], []
        seen_ids = set()
        for line_no, row in enumerate(reader, start=2):
            sid = (row["sample_id"] or "").strip()
            if not sid:
                raise DataError(f"line {line_no}: empty sample_id")
            if sid in seen_ids:
                raise DataError(f"line {line_no}: duplicate sample id {sid!r}")
            seen_ids.add(sid)

            p = _parse_number(row["p_w"], "p_w", line_no)
            v = _parse_number(row["v_mm_s"], "v_mm_s", line_no)
            l = _parse_number(row["l_um"], "l_um", line_no)
            h = _parse_number(row["h_um"], "h_um", line_no)
            sr = _parse_number(row["sr_deg"], "sr_deg", line_no)
            material = (row["material"] or "").strip()
            if not material:
                raise DataError(f"line {line_no}: empty material label")
            phi_val = _parse_number(row["phi_pct"], "phi_pct", line_no)
            hv_val = _parse_number(row["hv"], "hv", line_no)

            if validate:
                for name, value in zip(("p", "v", "l", "h"), (p, v, l, h)):
                    lo, hi = DEFAULT_RANGES[name]
                    if not lo <= value <= hi:
                        raise DataError(
                            f"line {line_no}: {name}={value} outside [{lo}, {hi}]")
                if sr not in SR_LEVELS:
                    raise DataError(f"line {line_no}: sr outside {{67,90}}: {sr}")
            if not 0.0 <= phi_val <= 100.0:
                raise DataError(f"line {line_no}: phi={phi_val} outside [0, 100]")
            if not hv_val > 0.0:
                raise DataError(f"line {line_no}: hv={hv_val} must be positive")

            ids.append(sid)
            points.append(ProcessPoint(p=p, v=v, l=l, h=h, sr=sr, s=material))
            phi.append(phi_val)
            hv.append(hv_val)

    seen = []
    for pt in points:
        if pt.s not in seen:
            seen.append(pt.s)
    return Dataset(
        ids=ids,
        points=points,
        responses={"phi": np.array(phi), "hv": np.array(hv)},
        sources=tuple(seen),
    )


@dataclass
class NormalizationSpec:
    """Affine transforms taking raw features to [0,1] and responses to z-scores."""

    feature_names: tuple
    offset: np.ndarray          # per feature
    scale: np.ndarray           # per feature, > 0
    response_mean: dict
    response_std: dict

    def transform_inputs(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.offset) / self.scale

    def inverse_inputs(self, X01) -> np.ndarray:
        X01 = np.atleast_2d(np.asarray(X01, dtype=float))
        return X01 * self.scale + self.offset

    def transform_response(self, name, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.response_mean[name]) / self.response_std[name]

    def inverse_response(self, name, y) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.response_std[name] + self.response_mean[name]

    def inverse_response_var(self, name, var) -> np.ndarray:
        return np.asarray(var, dtype=float) * self.response_std[name] ** 2

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "offset": self.offset.tolist(),
            "scale": self.scale.tolist(),
            "response_mean": {k: float(v) for k, v in self.response_mean.items()},
            "response_std": {k: float(v) for k, v in self.response_std.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "NormalizationSpec":
        return cls(
            feature_names=tuple(d["feature_names"]),
            offset=np.asarray(d["offset"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
            response_mean=dict(d["response_mean"]),
            response_std=dict(d["response_std"]),
        )


def normalize(data: Dataset) -> tuple:
    """Min-max scale continuous inputs, map sr to {0,1}, standardize responses.

    Returns the transformed dataset and the spec needed to invert it.
    Responses are standardized with the sample standard deviation (ddof=1).
    """
    if data.n == 0:
        raise DataError("cannot normalize an empty dataset")
    X = data.feature_matrix()
    offset = np.zeros(len(FEATURE_NAMES))
    scale = np.ones(len(FEATURE_NAMES))
    for j, name in enumerate(FEATURE_NAMES):
        col = X[:, j]
        if name == "sr":
            levels = sorted(set(col.tolist()))
            if len(levels) > 2:
                raise DataError(f"sr has {len(levels)} levels; at most 2 supported")
            offset[j] = levels[0]
            scale[j] = (levels[1] - levels[0]) if len(levels) == 2 else 1.0
        else:
            lo, hi = col.min(), col.max()
            if hi <= lo:
                raise DataError(f"constant feature column {name!r}")
            offset[j] = lo
            scale[j] = hi - lo

    response_mean, response_std = {}, {}
    responses_std = {}
    for name, y in data.responses.items():
        std = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
        if std <= 0.0:
            raise DataError(f"constant response column {name!r}")
        mean = float(np.mean(y))
        response_mean[name] = mean
        response_std[name] = std
        responses_std[name] = (y - mean) / std

    spec = NormalizationSpec(
        feature_names=FEATURE_NAMES,
        offset=offset,
        scale=scale,
        response_mean=response_mean,
        response_std=response_std,
    )
    X01 = spec.transform_inputs(X)
    points = [
        ProcessPoint(p=row[0], v=row[1], l=row[2], h=row[3], sr=row[4], s=pt.s)
        for row, pt in zip(X01, data.points)
    ]
    scaled = Dataset(ids=list(data.ids), points=points,
                     responses=responses_std, sources=data.sources)
    return scaled, spec


def compute_ved(p, v, h, l) -> float:
    """Volumetric energy density p / (v * h * l) in J/mm^3.

    h and l arrive in micrometers and are converted to millimeters.
    """
    for name, val in (("p", p), ("v", v), ("h", h), ("l", l)):
        if not np.isfinite(val):
            raise ValueError(f"{name} must be finite")
    if v <= 0 or h <= 0 or l <= 0:
        raise ValueError("v, h, and l must be positive")
    return float(p) / (float(v) * (float(h) / 1000.0) * (float(l) / 1000.0))


@dataclass
class FoldAssignment:
    """Disjoint, exhaustive mapping of rows to k folds."""

    k: int
    assignment: np.ndarray
    seed: int

    def fold_indices(self, fold) -> np.ndarray:
        return np.nonzero(self.assignment == fold)[0]

    def train_indices(self, fold) -> np.ndarray:
        return np.nonzero(self.assignment != fold)[0]

    def to_dict(self):
        return {"k": self.k, "seed": self.seed,
                "assignment": self.assignment.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def kfold(n, k, seed) -> FoldAssignment:
    """Seeded balanced partition of ``n`` rows into ``k`` folds."""
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"fold count {k} exceeds row count {n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=int)
    assignment[perm] = np.arange(n) % k
    return FoldAssignment(k=k, assignment=assignment, seed=seed)


def stratified_kfold(groups, k, seed) -> FoldAssignment:
    """Per-group balanced folds, merged; preserves group ratios per fold.

    Used for fused cross-validation so that no fold loses a material
    entirely. Every group must have at least k rows.
    """
    groups = list(groups)
    n = len(groups)
    order = []
    for g in groups:
        if g not in order:
            order.append(g)
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=int)
    for g in order:
        rows = np.array([i for i, gi in enumerate(groups) if gi == g])
        if k > rows.size:
            raise ValueError(f"fold count {k} exceeds rows of group {g!r}")
        perm = rng.permutation(rows.size)
        assignment[rows[perm]] = np.arange(rows.size) % k
    return FoldAssignment(k=k, assignment=assignment, seed=seed)


def median_hardness(grid) -> float:
    """Median of a 6x6 hardness map (even-count median = mean of central pair)."""
    values = np.asarray(grid, dtype=float).ravel()
    if values.size != 36:
        raise DataError(f"hardness grid must hold 36 values, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise DataError("hardness grid contains non-finite values")
    return float(np.median(values))


def load_hardness_grid(path) -> np.ndarray:
    """Read a 6-line, 6-values-per-line comma-separated hardness map."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise DataError(f"line {line_no}: expected 6 values, got {len(parts)}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise DataError(f"line {line_no}: unparseable hardness value") from None
    if len(rows) != 6:
        raise DataError(f"hardness grid must have 6 rows, got {len(rows)}")
    return np.array(rows)
