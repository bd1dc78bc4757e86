"""Single-output Gaussian process: marginal likelihood, gradient, fit, predict.

The training objective is the negative log marginal likelihood
0.5*log|C| + 0.5*(y-m)' C^-1 (y-m) with a constant mean m = beta. The
variance-like hyperparameters (process variance and nugget) are optimized
in log10 space; the latent source coordinate z, present only for fused
two-source models, is optimized on a linear scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .dataset import NormalizationSpec
from .errors import CholeskyError, FitError, FusegpError
from .hyperopt import OptimizerConfig, OptResult, minimize
from .kernels import Hyperparams

LN10 = math.log(10.0)

# Optimizer boxes (log10 space for the variance-like parameters).
OMEGA_BOUNDS = (-4.0, 3.0)
LOG_SIGMA2_BOUNDS = (-4.0, 4.0)
BETA_BOUNDS = (-10.0, 10.0)
LOG_NUGGET_BOUNDS = (-8.0, 2.0)
Z_BOUNDS = (0.0, 10.0)

NUGGET_FLOOR = 1e-8
# Negative predictive variances beyond round-off indicate a bug upstream.
VARIANCE_ROUNDOFF = -1e-8

FORMAT_VERSION = 1


@dataclass
class PredictiveDistribution:
    """Posterior mean and (nonnegative) variance in response units."""

    mean: float
    variance: float


class _Workspace:
    """Cached pairwise quantities reused across objective evaluations."""

    def __init__(self, X, y, sources=None, source_set=None):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError("X and y row counts disagree")
        self.n, self.d = self.X.shape
        # (n, n, d) squared coordinate differences
        self.sq_diffs = (self.X[:, None, :] - self.X[None, :, :]) ** 2
        self.fused = sources is not None
        if self.fused:
            labels = list(sources)
            if len(labels) != self.n:
                raise ValueError("one source label per row required")
            self.source_set = tuple(source_set) if source_set else kernels.infer_source_set(labels)
            if len(self.source_set) > 2:
                raise ValueError("at most 2 sources supported")
            second = {s: float(i > 0) for i, s in enumerate(self.source_set)}
            try:
                ind = np.array([second[s] for s in labels])
            except KeyError as err:
                raise ValueError(f"unknown source label {err.args[0]!r}") from None
            # 1 where the pair crosses sources, else 0
            self.cross = (ind[:, None] - ind[None, :]) ** 2
        else:
            self.source_set = None
            self.cross = None

    def corr(self, hp: Hyperparams) -> np.ndarray:
        w = 10.0 ** np.asarray(hp.omega, dtype=float)
        if w.size != self.d:
            raise ValueError("omega length does not match input dimension")
        R = np.exp(-(self.sq_diffs * w).sum(axis=2))
        if self.fused:
            if hp.z is None:
                raise ValueError("fused data but hyperparameters carry no z")
            R = R * np.exp(-(hp.z ** 2) * self.cross)
        return R


def _chol(C, hp):
    try:
        return scipy.linalg.cholesky(C, lower=True)
    except scipy.linalg.LinAlgError:
        raise CholeskyError("covariance factorization failed", hyperparams=hp) from None


def _nll_terms(ws: _Workspace, hp: Hyperparams):
    K = hp.sigma2 * ws.corr(hp)
    C = K + hp.nugget * np.eye(ws.n)
    L = _chol(C, hp)
    resid = ws.y - float(np.ravel(hp.beta)[0])
    alpha = scipy.linalg.cho_solve((L, True), resid)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    value = 0.5 * logdet + 0.5 * float(resid @ alpha)
    return value, K, L, alpha


def nll(hp: Hyperparams, X, y, sources=None, source_set=None) -> float:
    """Negative log marginal likelihood via Cholesky factorization."""
    ws = _Workspace(X, y, sources, source_set)
    return _nll_terms(ws, hp)[0]


def n_params(d, fused) -> int:
    return d + 3 + (1 if fused else 0)


def pack(hp: Hyperparams, fused) -> np.ndarray:
    parts = [np.asarray(hp.omega, dtype=float),
             [math.log10(hp.sigma2), float(np.ravel(hp.beta)[0]),
              math.log10(max(hp.nugget, NUGGET_FLOOR))]]
    if fused:
        parts.append([float(hp.z)])
    return np.concatenate(parts)

def unpack(vec, d, fused) -> Hyperparams:
    vec = np.asarray(vec, dtype=float)
    if vec.size != n_params(d, fused):
        raise ValueError("parameter vector has wrong length")
    return Hyperparams(
        omega=vec[:d].copy(),
        sigma2=10.0 ** vec[d],
        beta=float(vec[d + 1]),
        nugget=10.0 ** vec[d + 2],
        z=float(vec[d + 3]) if fused else None,
    )


def param_bounds(d, fused) -> list:
    bounds = [OMEGA_BOUNDS] * d
    bounds += [LOG_SIGMA2_BOUNDS, BETA_BOUNDS, LOG_NUGGET_BOUNDS]
    if fused:
        bounds.append(Z_BOUNDS)
    return bounds


def canonical_init(d, fused) -> np.ndarray:
    init = np.zeros(n_params(d, fused))
    init[d + 2] = -4.0  # log10 nugget
    if fused:
        init[d + 3] = 1.0
    return init


def _grad_packed(ws: _Workspace, hp: Hyperparams):
    """NLL and its gradient over (omega, log10 sigma2, beta, log10 nugget[, z])."""
    value, K, L, alpha = _nll_terms(ws, hp)
    Cinv = scipy.linalg.cho_solve((L, True), np.eye(ws.n))
    A = Cinv - np.outer(alpha, alpha)  # trace pairing: dNLL = 0.5 tr(A dC)

    w = 10.0 ** np.asarray(hp.omega, dtype=float)
    grad = np.empty(n_params(ws.d, ws.fused))
    for i in range(ws.d):
        dC = K * (-LN10 * w[i] * ws.sq_diffs[:, :, i])
        grad[i] = 0.5 * np.sum(A * dC)
    grad[ws.d] = 0.5 * LN10 * np.sum(A * K)            # log10 sigma2
    grad[ws.d + 1] = -float(np.sum(alpha))             # beta
    grad[ws.d + 2] = 0.5 * LN10 * hp.nugget * np.trace(A)
    if ws.fused:
        dC = K * (-2.0 * hp.z * ws.cross)
        grad[ws.d + 3] = 0.5 * np.sum(A * dC)
    return value, grad


def nll_grad(hp: Hyperparams, X, y, sources=None, source_set=None) -> np.ndarray:
    """Gradient of the NLL over (omega, log10 sigma2, beta, log10 nugget[, z])."""
    ws = _Workspace(X, y, sources, source_set)
    return _grad_packed(ws, hp)[1]


@dataclass
class SogpModel:
    """Immutable fitted single-output GP.

    Holds the (already normalized) training data, the fitted
    hyperparameters, the cached Cholesky factor of the training covariance
    and alpha = C^-1 (y - m). ``norm``/``response_name`` are carried so
    predictions can be mapped back to raw response units; both may be None
    for models trained on pre-standardized data.
    """

    X: np.ndarray
    y: np.ndarray
    sources: list | None
    source_set: tuple | None
    hp: Hyperparams
    chol: np.ndarray
    alpha: np.ndarray
    norm: NormalizationSpec | None = None
    feature_names: tuple | None = None
    response_name: str | None = None
    opt_result: OptResult | None = None

    @property
    def fused(self) -> bool:
        return self.sources is not None

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "sogp",
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "sources": None if self.sources is None else list(self.sources),
            "source_set": None if self.source_set is None else list(self.source_set),
            "hyperparams": {
                "omega": np.asarray(self.hp.omega).tolist(),
                "sigma2": float(self.hp.sigma2),
                "beta": float(np.ravel(self.hp.beta)[0]),
                "nugget": float(self.hp.nugget),
                "z": None if self.hp.z is None else float(self.hp.z),
            },
            "norm": None if self.norm is None else self.norm.to_dict(),
            "feature_names": None if self.feature_names is None else list(self.feature_names),
            "response_name": self.response_name,
        }

    @classmethod
    def from_dict(cls, d) -> "SogpModel":
        if d.get("kind") != "sogp":
            raise FusegpError(f"not a sogp model document: kind={d.get('kind')!r}")
        hp = Hyperparams(
            omega=np.asarray(d["hyperparams"]["omega"], dtype=float),
            sigma2=d["hyperparams"]["sigma2"],
            beta=d["hyperparams"]["beta"],
            nugget=d["hyperparams"]["nugget"],
            z=d["hyperparams"]["z"],
        )
        return build_model(
            np.asarray(d["X"], dtype=float),
            np.asarray(d["y"], dtype=float),
            hp,
            sources=d["sources"],
            source_set=None if d["source_set"] is None else tuple(d["source_set"]),
            norm=None if d["norm"] is None else NormalizationSpec.from_dict(d["norm"]),
            feature_names=None if d["feature_names"] is None else tuple(d["feature_names"]),
            response_name=d["response_name"],
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SogpModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def build_model(X, y, hp: Hyperparams, sources=None, source_set=None, norm=None,
                feature_names=None, response_name=None, opt_result=None) -> SogpModel:
    """Assemble a model from fixed hyperparameters (no optimization).

    On a factorization failure the nugget is retried once at 10x before
    the error surfaces; the stored hyperparameters reflect the value used.
    """
    ws = _Workspace(X, y, sources, source_set)
    hp.validate()
    K = hp.sigma2 * ws.corr(hp)
    try:
        L = _chol(K + hp.nugget * np.eye(ws.n), hp)
    except CholeskyError:
        hp = hp.copy(nugget=max(hp.nugget, NUGGET_FLOOR) * 10.0)
        L = _chol(K + hp.nugget * np.eye(ws.n), hp)
    resid = ws.y - float(np.ravel(hp.beta)[0])
    alpha = scipy.linalg.cho_solve((L, True), resid)
    return SogpModel(
        X=ws.X, y=ws.y,
        sources=None if sources is None else list(sources),
        source_set=ws.source_set,
        hp=hp, chol=L, alpha=alpha,
        norm=norm, feature_names=feature_names, response_name=response_name,
        opt_result=opt_result,
    )


def fit(X, y, sources=None, cfg: OptimizerConfig | None = None, source_set=None,
        norm=None, feature_names=None, response_name=None) -> SogpModel:
    """Maximum-likelihood fit via multi-start bounded L-BFGS."""
    ws = _Workspace(X, y, sources, source_set)
    if ws.n < 2:
        raise ValueError("need at least 2 training rows")
    cfg = cfg or OptimizerConfig()
    if cfg.bounds is None:
        cfg = OptimizerConfig(n_restarts=cfg.n_restarts, max_iters=cfg.max_iters,
                              grad_tol=cfg.grad_tol,
                              bounds=param_bounds(ws.d, ws.fused), seed=cfg.seed)

    def objective(vec):
        return _grad_packed(ws, unpack(vec, ws.d, ws.fused))

    result = minimize(objective, canonical_init(ws.d, ws.fused), cfg)
    hp = unpack(result.best_params, ws.d, ws.fused)
    return build_model(X, y, hp, sources=sources, source_set=ws.source_set,
                       norm=norm, feature_names=feature_names,
                       response_name=response_name, opt_result=result)


def _clamp_variance(var):
    var = np.asarray(var, dtype=float)
    bad = var < VARIANCE_ROUNDOFF
    if np.any(bad):
        raise FitError(f"predictive variance {var[bad].min():.3e} below round-off tolerance")
    return np.maximum(var, 0.0)


def predict_batch(model: SogpModel, Xstar, sources=None):
    """Posterior means and variances for query rows, in response units."""
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    if model.fused:
        if sources is None:
            raise ValueError("fused model requires query source labels")
        cs = kernels.latent_coords(sources, model.source_set, model.hp.z)
        ct = kernels.latent_coords(model.sources, model.source_set, model.hp.z)
        S = kernels.source_corr_matrix(cs, ct)
    else:
        S = 1.0
    Kstar = model.hp.sigma2 * kernels.corr_matrix(Xstar, model.X, model.hp.omega) * S
    beta = float(np.ravel(model.hp.beta)[0])
    mean = beta + Kstar @ model.alpha
    V = scipy.linalg.solve_triangular(model.chol, Kstar.T, lower=True)
    prior = model.hp.sigma2 + model.hp.nugget
    var = _clamp_variance(prior - np.sum(V * V, axis=0))
    if model.norm is not None and model.response_name is not None:
        mean = model.norm.inverse_response(model.response_name, mean)
        var = model.norm.inverse_response_var(model.response_name, var)
    return mean, var


def predict(model: SogpModel, xstar, source=None) -> PredictiveDistribution:
    """Posterior predictive distribution at one (normalized) query point."""
    sources = None if source is None else [source]
    mean, var = predict_batch(model, np.atleast_2d(xstar), sources)
    return PredictiveDistribution(mean=float(mean[0]), variance=float(var[0]))
