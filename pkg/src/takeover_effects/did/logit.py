"""Maximum-likelihood logistic regression by Newton iterations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from ..errors import ConvergenceError, SeparationError


@dataclass
class LogitFit:
    coef: np.ndarray
    names: list[str]
    fitted: np.ndarray
    iterations: int
    trace: list[float] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return {n: float(c) for n, c in zip(self.names, self.coef)}

    def predict(self, X: np.ndarray) -> np.ndarray:
        return expit(X @ self.coef)


def _loglik(d, eta):
    return float(np.sum(d * eta - np.logaddexp(0.0, eta)))


def _check_separation(X, d, names):
    treated, control = d == 1, d == 0
    for j in range(X.shape[1]):
        col = X[:, j]
        if np.ptp(col) == 0:
            continue
        if col[treated].max() < col[control].min() or col[treated].min() > col[control].max():
            raise SeparationError(f"perfect separation on covariate {names[j]!r}", covariate=names[j])


def fit_logit(X: np.ndarray, d: np.ndarray, names: Optional[Sequence[str]] = None,
              tol: float = 1e-10, max_iter: int = 50) -> LogitFit:
    """Newton-Raphson for a logit with design ``X`` (include a constant column).

    Converges when the largest Newton step falls below ``tol``. Raises
    ``SeparationError`` naming the offending covariate when the likelihood has
    no finite maximizer, and ``ConvergenceError`` with the log-likelihood
    trace otherwise.
    """
    X = np.asarray(X, dtype=float)
    d = np.asarray(d, dtype=float)
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if d.min() == d.max():
        raise SeparationError("outcome has a single class", covariate=None)
    _check_separation(X, d, names)

    b = np.zeros(X.shape[1])
    const = np.nonzero(np.all(X == 1.0, axis=0))[0]
    if len(const):
        share = d.mean()
        b[const[0]] = np.log(share / (1 - share))
    trace = []
    for it in range(1, max_iter + 1):
        eta = X @ b
        p = expit(eta)
        trace.append(_loglik(d, eta))
        w = p * (1 - p)
        H = X.T @ (X * w[:, None])
        grad = X.T @ (d - p)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        b = b + step
        if np.max(np.abs(step)) < tol:
            eta = X @ b
            trace.append(_loglik(d, eta))
            return LogitFit(b, names, expit(eta), it, trace)
    eta = X @ b
    p = expit(eta)
    if np.min(p * (1 - p)) < 1e-12:
        sd = X.std(axis=0)
        scale = np.abs(b) * np.where(sd > 0, sd, 0.0)
        worst = names[int(np.argmax(scale))]
        raise SeparationError(f"quasi-complete separation; coefficient on {worst!r} diverges", covariate=worst)
    raise ConvergenceError(f"logit did not converge in {max_iter} Newton iterations", trace=trace)
