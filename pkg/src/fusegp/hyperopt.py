"""Multi-start bounded quasi-Newton minimization for the NLL objectives.

The objective is a callable returning (value, gradient). Restart 0 starts
from the caller-supplied canonical point; the remaining restarts draw
uniform starts inside the bounds from a seeded generator. Factorization
failures inside the objective (CholeskyError) are treated as +inf with a
zero gradient, and the affected restart is skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import CholeskyError, FitError


@dataclass
class OptimizerConfig:
    n_restarts: int = 8
    max_iters: int = 500
    grad_tol: float = 1e-6
    bounds: list | None = None  # per-parameter (lower, upper)
    seed: int = 0

    def validate(self):
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.bounds is not None:
            for i, (lo, hi) in enumerate(self.bounds):
                if not lo < hi:
                    raise ValueError(f"bound {i} has lower >= upper: ({lo}, {hi})")
        return self


@dataclass
class RestartTrace:
    index: int
    start: np.ndarray
    end: np.ndarray | None
    objective_values: list  # objective at each accepted iterate
    status: str             # converged | maxiter | stalled | failed
    value: float

    def to_dict(self):
        return {
            "index": self.index,
            "start": np.asarray(self.start).tolist(),
            "end": None if self.end is None else np.asarray(self.end).tolist(),
            "objective_values": [float(v) for v in self.objective_values],
            "status": self.status,
            "value": float(self.value),
        }


@dataclass
class OptResult:
    best_params: np.ndarray
    best_nll: float
    best_index: int
    restarts: list = field(default_factory=list)

    def to_dict(self):
        return {
            "best_params": np.asarray(self.best_params).tolist(),
            "best_nll": float(self.best_nll),
            "best_index": self.best_index,
            "restarts": [r.to_dict() for r in self.restarts],
        }


def _guarded(objective, n_params):
    """Wrap the objective so factorization failures become +inf."""

    def wrapped(x):
        try:
            f, g = objective(np.asarray(x, dtype=float))
        except CholeskyError:
            return np.inf, np.zeros(n_params)
        if not np.isfinite(f):
            return np.inf, np.zeros(n_params)
        return float(f), np.asarray(g, dtype=float)

    return wrapped


_STATUS_BY_FLAG = {0: "converged", 1: "maxiter", 2: "stalled"}


def minimize(objective, x0, cfg: OptimizerConfig) -> OptResult:
    """Best local minimum of ``objective`` over ``cfg.n_restarts`` starts.

    objective : callable x -> (value, gradient)
    x0        : canonical start for restart 0, inside the bounds
    cfg       : must carry per-parameter bounds

    Ties on the final value are broken by the lowest restart index. Raises
    FitError if every restart fails.
    """
    cfg.validate()
    if cfg.bounds is None:
        raise ValueError("OptimizerConfig.bounds is required")
    bounds = [(float(lo), float(hi)) for lo, hi in cfg.bounds]
    x0 = np.asarray(x0, dtype=float)
    if x0.size != len(bounds):
        raise ValueError("x0 length does not match bounds")
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    # All starts drawn up front so optimizer internals cannot perturb the
    # random stream.
    rng = np.random.default_rng(cfg.seed)
    starts = [np.clip(x0, lo, hi)]
    for _ in range(cfg.n_restarts - 1):
        starts.append(rng.uniform(lo, hi))

    fun = _guarded(objective, len(bounds))
    traces = []
    best = None  # (value, index, params)
    for idx, start in enumerate(starts):
        f0, _ = fun(start)
        if not np.isfinite(f0):
            traces.append(RestartTrace(idx, start, None, [], "failed", np.inf))
            continue

        accepted = [f0]

        def track(xk):
            accepted.append(fun(xk)[0])

        res = scipy.optimize.minimize(
            fun,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=track,
            options={"maxiter": cfg.max_iters, "gtol": cfg.grad_tol, "ftol": 0.0},
        )
        if not np.isfinite(res.fun):
            traces.append(RestartTrace(idx, start, None, accepted, "failed", np.inf))
            continue
        xk = np.clip(res.x, lo, hi)
        status = _STATUS_BY_FLAG.get(res.status, "failed")
        traces.append(RestartTrace(idx, start, xk, accepted, status, float(res.fun)))
        if best is None or res.fun < best[0]:
            best = (float(res.fun), idx, xk)

    if best is None:
        raise FitError("every optimizer restart failed")
    value, idx, params = best
    return OptResult(best_params=params, best_nll=value, best_index=idx, restarts=traces)
