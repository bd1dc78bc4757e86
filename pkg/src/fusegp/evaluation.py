"""Cross-validation, error metrics, correlation tables, and marginal sweeps.

Fold RMSEs are averaged into the reported mean; the pooled-residual RMSE is
also recorded in the JSON form of the report. Fused cross-validation draws
folds per material and merges them so every fold keeps both materials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from . import mtgp, sogp
from .dataset import Dataset, FoldAssignment, kfold, normalize, stratified_kfold
from .errors import DataError
from .hyperopt import OptimizerConfig

PROPERTIES = ("phi", "hv")


def rmse(y, yhat) -> float:
    """Root mean squared error between actual and predicted vectors."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("rmse of empty vectors is undefined")
    if y.size != yhat.size:
        raise ValueError(f"length mismatch: {y.size} vs {yhat.size}")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def pearson(a, b) -> float:
    """Sample Pearson correlation coefficient."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError("length mismatch")
    if a.size < 2:
        raise ValueError("need at least 2 observations")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        raise ValueError("correlation undefined for constant input")
    return float(da @ db) / denom


def average_ranks(a) -> np.ndarray:
    """Fractional ranks (1-based); tied values share the mean of their ranks."""
    a = np.asarray(a, dtype=float).ravel()
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    return pearson(average_ranks(a), average_ranks(b))


@dataclass
class CvRow:
    test_material: str        # material label, or "all" for single-source runs
    property_name: str
    fold_rmses: list
    mean_rmse: float
    pooled_rmse: float


@dataclass
class CvReport:
    model_kind: str           # "sogp" | "mtgp"
    train_spec: str           # material label or "fused"
    k: int
    seed: int
    rows: list = field(default_factory=list)

    def row(self, material, prop) -> CvRow:
        for r in self.rows:
            if r.test_material == material and r.property_name == prop:
                return r
        raise KeyError((material, prop))

    def mean_rmse(self, prop=None) -> float:
        rows = [r for r in self.rows if prop is None or r.property_name == prop]
        return float(np.mean([r.mean_rmse for r in rows]))

    def to_dict(self):
        return {
            "model": self.model_kind,
            "train": self.train_spec,
            "k": self.k,
            "seed": self.seed,
            "rows": [
                {
                    "test": r.test_material,
                    "property": r.property_name,
                    "fold_rmses": [float(v) for v in r.fold_rmses],
                    "mean_rmse": float(r.mean_rmse),
                    "pooled_rmse": float(r.pooled_rmse),
                }
                for r in self.rows
            ],
        }


def _fit_fold_models(train: Dataset, kind, fused, properties, cfg):
    """Fit per-fold model(s) on the (raw-unit) training split."""
    scaled, spec = normalize(train)
    X = scaled.feature_matrix()
    sources = scaled.source_labels() if fused else None
    source_set = scaled.sources if fused else None
    models = {}
    if kind == "sogp":
        for prop in properties:
            models[prop] = sogp.fit(
                X, scaled.responses[prop], sources=sources, cfg=cfg,
                source_set=source_set, norm=spec,
                feature_names=ds.FEATURE_NAMES, response_name=prop)
    elif kind == "mtgp":
        Y = np.column_stack([scaled.responses[p] for p in properties])
        models["__joint__"] = mtgp.fit_mt(
            X, Y, sources=sources, cfg=cfg, source_set=source_set, norm=spec,
            feature_names=ds.FEATURE_NAMES, task_names=tuple(properties))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return models, spec


def _predict_fold(models, kind, properties, spec, test: Dataset, fused):
    Xte = spec.transform_inputs(test.feature_matrix())
    sources = test.source_labels() if fused else None
    preds = {}
    if kind == "sogp":
        for prop in properties:
            preds[prop] = sogp.predict_batch(models[prop], Xte, sources=sources)[0]
    else:
        means, _ = mtgp.predict_mt_batch(models["__joint__"], Xte, sources=sources)
        for g, prop in enumerate(properties):
            preds[prop] = means[:, g]
    return preds


def run_cv(data: Dataset, model_kind, fused, k, seed,
           cfg: OptimizerConfig | None = None, properties=PROPERTIES) -> CvReport:
    """K-fold cross-validated RMSE for one model configuration.

    In fused mode the report carries one row per (material, property) with
    RMSE computed on the held-out rows of that material; otherwise one row
    per property over all held-out rows.
    """
    properties = tuple(properties)
    if model_kind == "mtgp" and len(properties) != 2:
        raise ValueError("mtgp cross-validation requires both properties")
    if fused and len(data.sources) < 2:
        raise DataError("fused cross-validation needs at least 2 materials")
    cfg = cfg or OptimizerConfig()

    if fused:
        folds = stratified_kfold(data.source_labels(), k, seed)
        test_groups = list(data.sources)
    else:
        folds = kfold(data.n, k, seed)
        test_groups = ["all"]

    residuals = {(g, p): [] for g in test_groups for p in properties}
    fold_rmses = {(g, p): [] for g in test_groups for p in properties}
    for fold in range(k):
        train_idx = folds.train_indices(fold)
        test_idx = folds.fold_indices(fold)
        assert np.intersect1d(train_idx, test_idx).size == 0
        if train_idx.size < 2:
            raise ValueError(f"fold {fold} leaves fewer than 2 training rows")
        train = data.subset(train_idx)
        test = data.subset(test_idx)
        models, spec = _fit_fold_models(train, model_kind, fused, properties, cfg)
        preds = _predict_fold(models, model_kind, properties, spec, test, fused)
        test_sources = np.array(test.source_labels())
        for g in test_groups:
            mask = np.ones(test.n, dtype=bool) if g == "all" else test_sources == g
            for p in properties:
                err = test.responses[p][mask] - preds[p][mask]
                residuals[(g, p)].append(err)
                fold_rmses[(g, p)].append(rmse(test.responses[p][mask], preds[p][mask]))

    train_spec = "fused" if fused else "+".join(data.sources)
    report = CvReport(model_kind=model_kind, train_spec=train_spec, k=k, seed=seed)
    for g in test_groups:
        for p in properties:
            pooled = np.concatenate(residuals[(g, p)])
            report.rows.append(CvRow(
                test_material=g,
                property_name=p,
                fold_rmses=fold_rmses[(g, p)],
                mean_rmse=float(np.mean(fold_rmses[(g, p)])),
                pooled_rmse=float(np.sqrt(np.mean(pooled ** 2))),
            ))
    return report


# A feature counts as influential when its correlation decay across the
# normalized unit box is non-negligible (10**omega >= 1e-3).
INFLUENTIAL_OMEGA = -3.0


@dataclass
class LengthscaleEntry:
    name: str
    exponent: float
    influential: bool


@dataclass
class LengthscaleReport:
    entries: list                      # continuous/sr features, input order
    source_exponent: float | None      # log10(z^2) for fused models
    model_kind: str

    def ranking(self) -> list:
        """Feature names by descending exponent (faster decay first)."""
        items = [(e.name, e.exponent) for e in self.entries]
        if self.source_exponent is not None:
            items.append(("s", self.source_exponent))
        return [name for name, _ in sorted(items, key=lambda t: -t[1])]

    @property
    def most_influential(self) -> str:
        return self.ranking()[0]

    @property
    def least_influential(self) -> str:
        return self.ranking()[-1]

    def exponent(self, name) -> float:
        if name == "s" and self.source_exponent is not None:
            return self.source_exponent
        for e in self.entries:
            if e.name == name:
                return e.exponent
        raise KeyError(name)

    def to_dict(self):
        d = {e.name: float(e.exponent) for e in self.entries}
        if self.source_exponent is not None:
            d["s"] = float(self.source_exponent)
        return d


def lengthscale_report(model) -> LengthscaleReport:
    """Named lengthscale exponents of a fitted model, plus the source term.

    The categorical source column reports log10(z^2): the decay exponent
    that reproduces exp(-z^2) over the unit latent distance, directly
    comparable to the continuous exponents.
    """
    hp = model.hp
    names = model.feature_names or tuple(f"x{i}" for i in range(hp.omega.size))
    entries = [LengthscaleEntry(name=n, exponent=float(w),
                                influential=bool(w > INFLUENTIAL_OMEGA))
               for n, w in zip(names, hp.omega)]
    source_exp = None
    if hp.z is not None:
        source_exp = 2.0 * math.log10(max(abs(hp.z), 1e-8))
    kind = "mtgp" if isinstance(model, mtgp.MtgpModel) else "sogp"
    return LengthscaleReport(entries=entries, source_exponent=source_exp, model_kind=kind)


@dataclass
class SweepCurve:
    material: str | None
    property_name: str
    mean: np.ndarray
    lower: np.ndarray      # mean - 2 sigma
    upper: np.ndarray      # mean + 2 sigma


@dataclass
class MarginalSweep:
    feature: str
    grid: np.ndarray       # raw feature units, strictly increasing
    curves: list


def _grid_for(model, j, grid_size):
    if model.norm is not None:
        lo = float(model.norm.offset[j])
        hi = lo + float(model.norm.scale[j])
    else:
        lo = float(model.X[:, j].min())
        hi = float(model.X[:, j].max())
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    if grid_size == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, grid_size)


def marginal_sweep(model, feature, grid_size=50) -> MarginalSweep:
    """Posterior mean and 2-sigma band along one feature.

    All other continuous features sit at their training medians, the scan
    rotation at its mode, and fused models are swept once per material.
    """
    names = model.feature_names or tuple(f"x{i}" for i in range(model.hp.omega.size))
    if feature not in names:
        raise ValueError(f"unknown feature {feature!r}; model has {names}")
    if feature == "sr":
        raise ValueError("cannot sweep the categorical feature 'sr'")
    j = names.index(feature)

    base = np.empty(len(names))
    for i, name in enumerate(names):
        col = model.X[:, i]
        if name == "sr":
            ones = float(np.count_nonzero(col >= 0.5))
            base[i] = 1.0 if ones > col.size - ones else 0.0
        else:
            base[i] = float(np.median(col))

    grid_raw = _grid_for(model, j, grid_size)
    if model.norm is not None:
        grid01 = (grid_raw - model.norm.offset[j]) / model.norm.scale[j]
    else:
        grid01 = grid_raw
    Xq = np.tile(base, (grid_raw.size, 1))
    Xq[:, j] = grid01

    is_mt = isinstance(model, mtgp.MtgpModel)
    materials = list(model.source_set) if getattr(model, "fused", False) else [None]
    curves = []
    for mat in materials:
        sources = None if mat is None else [mat] * grid_raw.size
        if is_mt:
            means, vars_ = mtgp.predict_mt_batch(model, Xq, sources=sources)
            tasks = model.task_names or tuple(f"y{g}" for g in range(model.n_tasks))
            for g, task in enumerate(tasks):
                band = 2.0 * np.sqrt(vars_[:, g])
                curves.append(SweepCurve(mat, task, means[:, g],
                                         means[:, g] - band, means[:, g] + band))
        else:
            mean, var = sogp.predict_batch(model, Xq, sources=sources)
            band = 2.0 * np.sqrt(var)
            prop = model.response_name or "y"
            curves.append(SweepCurve(mat, prop, mean, mean - band, mean + band))
    return MarginalSweep(feature=feature, grid=grid_raw, curves=curves)


@dataclass
class CorrelationTable:
    """Pearson and Spearman matrices over (material, property) pairs."""

    labels: list
    pearson: np.ndarray
    spearman: np.ndarray

    def __post_init__(self):
        for M in (self.pearson, self.spearman):
            assert np.allclose(M, M.T), "correlation table must be symmetric"
            assert np.allclose(np.diag(M), 1.0), "diagonal must be 1"
            assert np.all(np.abs(M) <= 1.0 + 1e-12)

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "pearson": self.pearson.tolist(),
            "spearman": self.spearman.tolist(),
        }


def paired_series(data_a: Dataset, data_b: Dataset):
    """Align two single-material datasets row-by-row on sample_id."""
    if len(data_a.sources) != 1 or len(data_b.sources) != 1:
        raise DataError("correlation analysis expects single-material datasets")
    index_b = {sid: i for i, sid in enumerate(data_b.ids)}
    missing = [sid for sid in data_a.ids if sid not in index_b]
    extra = [sid for sid in data_b.ids if sid not in set(data_a.ids)]
    if missing or extra:
        raise DataError(
            "sample ids do not match: "
            f"missing from second dataset: {missing[:10]}; "
            f"missing from first dataset: {extra[:10]}")
    order_b = [index_b[sid] for sid in data_a.ids]
    Xa = data_a.feature_matrix()
    Xb = data_b.feature_matrix()[order_b]
    if not np.allclose(Xa, Xb):
        raise DataError("matched sample ids carry different process parameters")
    series = {}
    mat_a, mat_b = data_a.sources[0], data_b.sources[0]
    if mat_a == mat_b:
        mat_a, mat_b = f"{mat_a}(a)", f"{mat_b}(b)"
    for prop in PROPERTIES:
        series[(mat_a, prop)] = data_a.responses[prop]
        series[(mat_b, prop)] = data_b.responses[prop][order_b]
    labels = [f"{m}:{p}" for m in (mat_a, mat_b) for p in PROPERTIES]
    keys = [(m, p) for m in (mat_a, mat_b) for p in PROPERTIES]
    return labels, keys, series


def build_correlation_table(data_a: Dataset, data_b: Dataset) -> CorrelationTable:
    """4x4 Pearson/Spearman tables over {material} x {phi, hv}."""
    labels, keys, series = paired_series(data_a, data_b)
    m = len(keys)
    P = np.eye(m)
    S = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            P[i, j] = P[j, i] = pearson(series[keys[i]], series[keys[j]])
            S[i, j] = S[j, i] = spearman(series[keys[i]], series[keys[j]])
    return CorrelationTable(labels=labels, pearson=P, spearman=S)


def ved_scatter_rows(data: Dataset):
    """Long-format (sample, material, VED, log10 VED, property, value) rows."""
    rows = []
    for i, pt in enumerate(data.points):
        ved = ds.compute_ved(pt.p, pt.v, pt.h, pt.l)
        for prop in PROPERTIES:
            rows.append({
                "sample_id": data.ids[i],
                "material": pt.s,
                "ved": ved,
                "log10_ved": math.log10(ved),
                "property": prop,
                "value": float(data.responses[prop][i]),
            })
    return rows
