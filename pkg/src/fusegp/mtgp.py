"""Multi-task GP over a separable Kronecker covariance.

The joint training covariance couples observation pairs (i, g), (j, g') as
K[i, j] * C_T[g, g'], where K is the continuous/source kernel without its
nugget and C_T = L @ L.T is the task covariance. Responses are stacked
task-major (all observations of task 1, then task 2), so the assembled
matrix is kron(C_T, K) + nugget*I and vec(Y) = Y.T.reshape(-1) for an
(n, G) response array. The ordering is recorded in the serialized format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels, sogp
from .dataset import NormalizationSpec
from .errors import CholeskyError, FusegpError
from .hyperopt import OptimizerConfig, OptResult, minimize
from .kernels import Hyperparams
from .sogp import LN10, NUGGET_FLOOR, PredictiveDistribution, _Workspace, _chol, _clamp_variance

VEC_ORDERING = "task-major"

TASK_DIAG_BOUNDS = (-2.0, 2.0)   # log10 of the diagonal factor entries
TASK_OFFDIAG_BOUNDS = (-5.0, 5.0)

FORMAT_VERSION = 1


def assemble_cmt(X, sources, hp: Hyperparams, source_set=None) -> np.ndarray:
    """Joint (n*G) x (n*G) covariance kron(C_T, K) + nugget * I (task-major)."""
    ws = _Workspace(X, np.zeros(np.atleast_2d(X).shape[0]), sources, source_set)
    return _assemble(ws, hp)[0]


def _assemble(ws: _Workspace, hp: Hyperparams):
    if hp.task_factor is None:
        raise ValueError("multi-task covariance requires a task factor")
    K = hp.sigma2 * ws.corr(hp)
    CT = hp.task_factor @ hp.task_factor.T
    C = np.kron(CT, K)
    C[np.diag_indices_from(C)] += hp.nugget
    return C, K, CT


def _vec(Y) -> np.ndarray:
    return np.asarray(Y).T.reshape(-1)


def _mean_vector(beta, n) -> np.ndarray:
    return np.repeat(np.ravel(np.asarray(beta, dtype=float)), n)


def _nll_terms(ws: _Workspace, Y, hp: Hyperparams):
    C, K, CT = _assemble(ws, hp)
    L = _chol(C, hp)
    resid = _vec(Y) - _mean_vector(hp.beta, ws.n)
    alpha = scipy.linalg.cho_solve((L, True), resid)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    value = 0.5 * logdet + 0.5 * float(resid @ alpha)
    return value, K, CT, L, alpha


def _check_responses(X, Y):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError("Y must be an (n, G) array")
    if not np.all(np.isfinite(Y)):
        raise ValueError("all task columns must be fully observed")
    return Y


def nll_mt(hp: Hyperparams, X, Y, sources=None, source_set=None) -> float:
    """Joint negative log marginal likelihood of all tasks."""
    Y = _check_responses(X, Y)
    ws = _Workspace(X, np.zeros(Y.shape[0]), sources, source_set)
    return _nll_terms(ws, Y, hp)[0]


def _n_task_params(G) -> int:
    return G * (G + 1) // 2


def n_params(d, G, fused) -> int:
    return d + 2 + G + (1 if fused else 0) + _n_task_params(G)


def _tril_indices(G):
    return [(i, j) for i in range(G) for j in range(i + 1)]


def pack(hp: Hyperparams, fused) -> np.ndarray:
    G = hp.task_factor.shape[0]
    parts = [np.asarray(hp.omega, dtype=float),
             [math.log10(hp.sigma2)],
             np.ravel(hp.beta),
             [math.log10(max(hp.nugget, NUGGET_FLOOR))]]
    if fused:
        parts.append([float(hp.z)])
    tril = []
    for i, j in _tril_indices(G):
        v = hp.task_factor[i, j]
        tril.append(math.log10(v) if i == j else v)
    parts.append(tril)
    return np.concatenate(parts)


def unpack(vec, d, G, fused) -> Hyperparams:
    vec = np.asarray(vec, dtype=float)
    if vec.size != n_params(d, G, fused):
        raise ValueError("parameter vector has wrong length")
    pos = d
    sigma2 = 10.0 ** vec[pos]; pos += 1
    beta = vec[pos:pos + G].copy(); pos += G
    nugget = 10.0 ** vec[pos]; pos += 1
    z = None
    if fused:
        z = float(vec[pos]); pos += 1
    Lf = np.zeros((G, G))
    for (i, j), v in zip(_tril_indices(G), vec[pos:]):
        Lf[i, j] = 10.0 ** v if i == j else v
    return Hyperparams(omega=vec[:d].copy(), sigma2=sigma2, beta=beta,
                       nugget=nugget, z=z, task_factor=Lf)


def param_bounds(d, G, fused) -> list:
    bounds = [sogp.OMEGA_BOUNDS] * d + [sogp.LOG_SIGMA2_BOUNDS]
    bounds += [sogp.BETA_BOUNDS] * G + [sogp.LOG_NUGGET_BOUNDS]
    if fused:
        bounds.append(sogp.Z_BOUNDS)
    for i, j in _tril_indices(G):
        bounds.append(TASK_DIAG_BOUNDS if i == j else TASK_OFFDIAG_BOUNDS)
    return bounds


def canonical_init(d, G, fused) -> np.ndarray:
    init = np.zeros(n_params(d, G, fused))
    init[d + 1 + G] = -4.0  # log10 nugget
    if fused:
        init[d + 2 + G] = 1.0
    # task factor block stays at zero: log10 diag = 0 and off-diag = 0 is L = I
    return init


def _grad_packed(ws: _Workspace, Y, hp: Hyperparams):
    G = hp.task_factor.shape[0]
    value, K, CT, L, alpha = _nll_terms(ws, Y, hp)
    nG = ws.n * G
    Cinv = scipy.linalg.cho_solve((L, True), np.eye(nG))
    A = Cinv - np.outer(alpha, alpha)
    A4 = A.reshape(G, ws.n, G, ws.n)
    # Pairings that avoid forming each Kronecker derivative explicitly:
    # tr(A kron(CT, dK)) = sum_ij dK_ij * W_ij, tr(A kron(dCT, K)) = sum_gh V_gh dCT_gh.
    W = np.einsum("gihj,gh->ij", A4, CT)
    V = np.einsum("gihj,ij->gh", A4, K)

    w = 10.0 ** np.asarray(hp.omega, dtype=float)
    grad = np.empty(n_params(ws.d, G, ws.fused))
    for i in range(ws.d):
        dK = K * (-LN10 * w[i] * ws.sq_diffs[:, :, i])
        grad[i] = 0.5 * np.sum(W * dK)
    pos = ws.d
    grad[pos] = 0.5 * LN10 * np.sum(W * K); pos += 1
    alpha_tasks = alpha.reshape(G, ws.n)
    for g in range(G):
        grad[pos + g] = -float(np.sum(alpha_tasks[g]))
    pos += G
    grad[pos] = 0.5 * LN10 * hp.nugget * np.trace(A); pos += 1
    if ws.fused:
        dK = K * (-2.0 * hp.z * ws.cross)
        grad[pos] = 0.5 * np.sum(W * dK); pos += 1
    Lf = hp.task_factor
    for k, (i, j) in enumerate(_tril_indices(G)):
        E = np.zeros((G, G))
        E[i, j] = 1.0
        dCT = E @ Lf.T + Lf @ E.T
        if i == j:
            dCT = dCT * (LN10 * Lf[i, i])  # chain rule through log10 diagonal
        grad[pos + k] = 0.5 * np.sum(V * dCT)
    return value, grad


def nll_grad_mt(hp: Hyperparams, X, Y, sources=None, source_set=None) -> np.ndarray:
    """Gradient over (omega, log10 sigma2, beta_g, log10 nugget[, z], task factor)."""
    Y = _check_responses(X, Y)
    ws = _Workspace(X, np.zeros(Y.shape[0]), sources, source_set)
    return _grad_packed(ws, Y, hp)[1]


@dataclass
class MtPrediction:
    """Joint posterior over tasks at one query point, in response units."""

    mean: np.ndarray       # (G,)
    cov: np.ndarray        # (G, G)

    @property
    def marginals(self) -> list:
        return [PredictiveDistribution(mean=float(m), variance=float(v))
                for m, v in zip(self.mean, _clamp_variance(np.diag(self.cov)))]


@dataclass
class MtgpModel:
    """Immutable fitted multi-task GP (see module docstring for layout)."""

    X: np.ndarray
    Y: np.ndarray                 # (n, G) standardized responses
    sources: list | None
    source_set: tuple | None
    hp: Hyperparams
    chol: np.ndarray
    alpha: np.ndarray
    norm: NormalizationSpec | None = None
    feature_names: tuple | None = None
    task_names: tuple | None = None
    opt_result: OptResult | None = None

    @property
    def fused(self) -> bool:
        return self.sources is not None

    @property
    def n_tasks(self) -> int:
        return self.Y.shape[1]

    def task_covariance(self) -> np.ndarray:
        return self.hp.task_factor @ self.hp.task_factor.T

    def task_correlation(self) -> float:
        """Normalized off-diagonal of C_T (defined for G = 2)."""
        CT = self.task_covariance()
        return float(CT[0, 1] / math.sqrt(CT[0, 0] * CT[1, 1]))

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "mtgp",
            "vec_ordering": VEC_ORDERING,
            "X": self.X.tolist(),
            "Y": self.Y.tolist(),
            "sources": None if self.sources is None else list(self.sources),
            "source_set": None if self.source_set is None else list(self.source_set),
            "hyperparams": {
                "omega": np.asarray(self.hp.omega).tolist(),
                "sigma2": float(self.hp.sigma2),
                "beta": np.ravel(self.hp.beta).tolist(),
                "nugget": float(self.hp.nugget),
                "z": None if self.hp.z is None else float(self.hp.z),
                "task_factor": np.asarray(self.hp.task_factor).tolist(),
            },
            "norm": None if self.norm is None else self.norm.to_dict(),
            "feature_names": None if self.feature_names is None else list(self.feature_names),
            "task_names": None if self.task_names is None else list(self.task_names),
        }

    @classmethod
    def from_dict(cls, d) -> "MtgpModel":
        if d.get("kind") != "mtgp":
            raise FusegpError(f"not an mtgp model document: kind={d.get('kind')!r}")
        if d.get("vec_ordering") != VEC_ORDERING:
            raise FusegpError(f"unsupported vec ordering {d.get('vec_ordering')!r}")
        hp = Hyperparams(
            omega=np.asarray(d["hyperparams"]["omega"], dtype=float),
            sigma2=d["hyperparams"]["sigma2"],
            beta=np.asarray(d["hyperparams"]["beta"], dtype=float),
            nugget=d["hyperparams"]["nugget"],
            z=d["hyperparams"]["z"],
            task_factor=np.asarray(d["hyperparams"]["task_factor"], dtype=float),
        )
        return build_model(
            np.asarray(d["X"], dtype=float),
            np.asarray(d["Y"], dtype=float),
            hp,
            sources=d["sources"],
            source_set=None if d["source_set"] is None else tuple(d["source_set"]),
            norm=None if d["norm"] is None else NormalizationSpec.from_dict(d["norm"]),
            feature_names=None if d["feature_names"] is None else tuple(d["feature_names"]),
            task_names=None if d["task_names"] is None else tuple(d["task_names"]),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MtgpModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def build_model(X, Y, hp: Hyperparams, sources=None, source_set=None, norm=None,
                feature_names=None, task_names=None, opt_result=None) -> MtgpModel:
    """Assemble a multi-task model from fixed hyperparameters."""
    Y = _check_responses(X, Y)
    ws = _Workspace(X, np.zeros(Y.shape[0]), sources, source_set)
    hp.validate()
    try:
        C, _, _ = _assemble(ws, hp)
        L = _chol(C, hp)
    except CholeskyError:
        hp = hp.copy(nugget=max(hp.nugget, NUGGET_FLOOR) * 10.0)
        C, _, _ = _assemble(ws, hp)
        L = _chol(C, hp)
    resid = _vec(Y) - _mean_vector(hp.beta, ws.n)
    alpha = scipy.linalg.cho_solve((L, True), resid)
    return MtgpModel(
        X=ws.X, Y=Y,
        sources=None if sources is None else list(sources),
        source_set=ws.source_set,
        hp=hp, chol=L, alpha=alpha,
        norm=norm, feature_names=feature_names, task_names=task_names,
        opt_result=opt_result,
    )


def fit_mt(X, Y, sources=None, cfg: OptimizerConfig | None = None, source_set=None,
           norm=None, feature_names=None, task_names=None) -> MtgpModel:
    """Joint maximum-likelihood fit of the two-task model."""
    Y = _check_responses(X, Y)
    if Y.shape[1] != 2:
        raise ValueError("fit_mt supports exactly G = 2 tasks")
    ws = _Workspace(X, np.zeros(Y.shape[0]), sources, source_set)
    if ws.n < 2:
        raise ValueError("need at least 2 training rows")
    G = Y.shape[1]
    cfg = cfg or OptimizerConfig()
    if cfg.bounds is None:
        cfg = OptimizerConfig(n_restarts=cfg.n_restarts, max_iters=cfg.max_iters,
                              grad_tol=cfg.grad_tol,
                              bounds=param_bounds(ws.d, G, ws.fused), seed=cfg.seed)

    def objective(vec):
        return _grad_packed(ws, Y, unpack(vec, ws.d, G, ws.fused))

    result = minimize(objective, canonical_init(ws.d, G, ws.fused), cfg)
    hp = unpack(result.best_params, ws.d, G, ws.fused)
    return build_model(X, Y, hp, sources=sources, source_set=ws.source_set,
                       norm=norm, feature_names=feature_names,
                       task_names=task_names, opt_result=result)


def _cross_block(model: MtgpModel, Xstar, sources):
    """kron(C_T, c(x*, X)) rows for each query point, as an (m, G, n*G) array."""
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
    CT = model.task_covariance()
    # row (g) x col (g', j) = CT[g, g'] * Kstar[m, j] under task-major layout
    return np.einsum("gh,mj->mghj", CT, Kstar).reshape(Xstar.shape[0], CT.shape[0], -1)


def predict_mt(model: MtgpModel, xstar, source=None) -> MtPrediction:
    """Joint mean vector and G x G covariance at one (normalized) point."""
    G = model.n_tasks
    Cx = _cross_block(model, np.atleast_2d(xstar),
                      None if source is None else [source])[0]
    beta = np.ravel(model.hp.beta)
    mean = beta + Cx @ model.alpha
    prior = model.hp.sigma2 * model.task_covariance() + model.hp.nugget * np.eye(G)
    cov = prior - Cx @ scipy.linalg.cho_solve((model.chol, True), Cx.T)
    cov = 0.5 * (cov + cov.T)
    if model.norm is not None and model.task_names is not None:
        stds = np.array([model.norm.response_std[t] for t in model.task_names])
        mean = np.array([model.norm.inverse_response(t, m)
                         for t, m in zip(model.task_names, mean)])
        cov = cov * np.outer(stds, stds)
    return MtPrediction(mean=mean, cov=cov)


def predict_mt_batch(model: MtgpModel, Xstar, sources=None):
    """Per-task posterior means and variances for query rows."""
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    G = model.n_tasks
    Cx = _cross_block(model, Xstar, sources)          # (m, G, nG)
    beta = np.ravel(model.hp.beta)
    means = beta[None, :] + Cx @ model.alpha          # (m, G)
    flat = Cx.reshape(-1, Cx.shape[-1])
    V = scipy.linalg.cho_solve((model.chol, True), flat.T)
    quad = np.sum(flat.T * V, axis=0).reshape(Xstar.shape[0], G)
    prior = model.hp.sigma2 * np.diag(model.task_covariance()) + model.hp.nugget
    vars_ = _clamp_variance(prior[None, :] - quad)
    if model.norm is not None and model.task_names is not None:
        for g, t in enumerate(model.task_names):
            means[:, g] = model.norm.inverse_response(t, means[:, g])
            vars_[:, g] = model.norm.inverse_response_var(t, vars_[:, g])
    return means, vars_
