"""Covariance building blocks.

Gaussian correlation over continuous inputs, a one-parameter latent
embedding for a two-level categorical source, task-covariance factors,
and Kronecker assembly. Lengthscales are parameterized as base-10
exponents: the squared distance along input i is weighted by 10**omega[i],
so larger exponents mean faster correlation decay along that input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class Hyperparams:
    """Kernel and mean hyperparameters for a single- or multi-task GP.

    omega       : per-input lengthscale exponents (log10 scale).
    sigma2      : process variance.
    beta        : constant mean; a scalar for single-output models, one
                  value per task for multi-task models.
    nugget      : diagonal noise variance (>= 0).
    z           : latent coordinate of the second source in a fused model
                  (first source is pinned at 0); None when not fused.
    task_factor : lower-triangular factor L of the task covariance
                  C_T = L @ L.T; None for single-output models.
    """

    omega: np.ndarray
    sigma2: float
    beta: float | np.ndarray = 0.0
    nugget: float = 0.0
    z: float | None = None
    task_factor: np.ndarray | None = None

    def __post_init__(self):
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if self.task_factor is not None:
            self.task_factor = np.asarray(self.task_factor, dtype=float)
            self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))

    def validate(self):
        if not np.all(np.isfinite(self.omega)):
            raise ValueError("omega must be finite")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError("sigma2 must be positive and finite")
        if not (np.isfinite(self.nugget) and self.nugget >= 0):
            raise ValueError("nugget must be nonnegative and finite")
        if self.z is not None and not np.isfinite(self.z):
            raise ValueError("latent source coordinate z must be finite")
        if self.task_factor is not None:
            L = self.task_factor
            if L.ndim != 2 or L.shape[0] != L.shape[1]:
                raise ValueError("task_factor must be square")
            if not np.allclose(L, np.tril(L)):
                raise ValueError("task_factor must be lower-triangular")
            if np.any(np.diag(L) <= 0):
                raise ValueError("task_factor diagonal must be strictly positive")
            if np.size(self.beta) != L.shape[0]:
                raise ValueError("need one beta per task")
        return self

    def copy(self, **changes) -> "Hyperparams":
        out = replace(self, **changes)
        out.omega = np.array(out.omega, dtype=float, copy=True)
        if out.task_factor is not None:
            out.task_factor = np.array(out.task_factor, dtype=float, copy=True)
        return out


def rbf_corr(x, x2, omega) -> float:
    """Gaussian correlation exp(-sum_i 10**omega_i * (x_i - x2_i)**2)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if x.shape != x2.shape or x.shape != omega.shape:
        raise ValueError(
            f"dimension mismatch: x {x.shape}, x2 {x2.shape}, omega {omega.shape}"
        )
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x2))):
        raise ValueError("inputs must be finite")
    return float(np.exp(-np.sum(10.0 ** omega * (x - x2) ** 2)))


def latent_coords(labels, source_set, z) -> np.ndarray:
    """Map source labels onto the 1-D latent line {0, z}.

    The first label of ``source_set`` is pinned at the origin; the second
    sits at z. At most two sources are supported.
    """
    source_set = tuple(source_set)
    if len(source_set) > 2:
        raise ValueError(f"at most 2 sources supported, got {len(source_set)}")
    if len(set(source_set)) != len(source_set):
        raise ValueError("source set contains duplicate labels")
    positions = {s: (0.0 if i == 0 else float(z)) for i, s in enumerate(source_set)}
    try:
        return np.array([positions[s] for s in labels], dtype=float)
    except KeyError as err:
        raise ValueError(f"unknown source label {err.args[0]!r}") from None


def source_corr(s, s2, z, source_set) -> float:
    """Correlation between two categorical sources via the latent embedding.

    Equals 1 iff the sources coincide or the embedding collapses (z = 0).
    """
    c = latent_coords([s, s2], source_set, z)
    return float(np.exp(-(c[0] - c[1]) ** 2))


def corr_matrix(X1, X2, omega) -> np.ndarray:
    """Gaussian correlation matrix between two sets of row vectors."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if X1.shape[1] != X2.shape[1] or X1.shape[1] != omega.size:
        raise ValueError("dimension mismatch between inputs and omega")
    w = 10.0 ** omega
    d2 = ((X1[:, None, :] - X2[None, :, :]) ** 2 * w).sum(axis=2)
    return np.exp(-d2)


def source_corr_matrix(coords1, coords2) -> np.ndarray:
    """exp(-(z_i - z_j)^2) between two vectors of latent coordinates."""
    c1 = np.asarray(coords1, dtype=float)
    c2 = np.asarray(coords2, dtype=float)
    return np.exp(-(c1[:, None] - c2[None, :]) ** 2)


def infer_source_set(labels) -> tuple:
    """Ordered source set in first-appearance order."""
    seen = []
    for s in labels:
        if s not in seen:
            seen.append(s)
    return tuple(seen)


def cov_matrix(X, sources, hp: Hyperparams, source_set=None) -> np.ndarray:
    """Training covariance sigma2 * r(x,x') [* source corr] + nugget * I."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    R = corr_matrix(X, X, hp.omega)
    if sources is not None:
        if hp.z is None:
            raise ValueError("sources given but hyperparameters carry no z")
        if source_set is None:
            source_set = infer_source_set(sources)
        zc = latent_coords(sources, source_set, hp.z)
        R = R * source_corr_matrix(zc, zc)
    C = hp.sigma2 * R
    C[np.diag_indices_from(C)] += hp.nugget
    if not np.all(np.isfinite(C)):
        raise ValueError("covariance matrix has non-finite entries")
    return C


def cross_cov(Xstar, X, hp: Hyperparams, sources_star=None, sources=None,
              source_set=None) -> np.ndarray:
    """Covariance between query rows and training rows (no nugget)."""
    K = hp.sigma2 * corr_matrix(Xstar, X, hp.omega)
    if sources is not None:
        if sources_star is None:
            raise ValueError("training rows have sources but query rows do not")
        if source_set is None:
            source_set = infer_source_set(sources)
        cs = latent_coords(sources_star, source_set, hp.z)
        ct = latent_coords(sources, source_set, hp.z)
        K = K * source_corr_matrix(cs, ct)
    return K


def task_cov(L) -> np.ndarray:
    """Task covariance C_T = L @ L.T from a lower-triangular factor."""
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError("task factor must be square")
    if not np.allclose(L, np.tril(L)):
        raise ValueError("task factor must be lower-triangular")
    if np.any(np.diag(L) <= 0):
        raise ValueError("task factor diagonal must be strictly positive")
    return L @ L.T


def kron(A, B) -> np.ndarray:
    """Kronecker product with block (i, j) equal to A[i, j] * B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("kron operands must be finite")
    return np.kron(A, B)
