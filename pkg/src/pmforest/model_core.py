"""Parametric base models: log-likelihood, scores and weighted fitting.

All three families share the design ``(1, x_A)``; the parameter vector
is ``(alpha, beta)`` for the Gaussian families and
``(alpha_1, beta, gamma)`` with ``gamma = log(alpha_2)`` for the
Weibull accelerated failure time model.  The treatment effect always
sits in column 1 of ``theta`` and of the score matrix.

Log-likelihood contributions follow the "larger is better" convention.
For the Gaussian families the contribution is the negated squared
residual ``-(y - mu)**2``; the score matrix drops constant factors
(the ``2`` and ``1/sigma**2``), which the standardised split statistics
are invariant to.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BadQuantileError,
    DegenerateError,
    NoConvergenceError,
    SchemaMismatchError,
    SingularDesignError,
)

MAX_ITER = 100
SCORE_TOL = 1e-8
STEP_TOL = 1e-10
SIGMA_FLOOR = 1e-12
# objective changes below this relative size are rounding noise
ROUNDING = 8 * np.finfo(float).eps


class Family(str, enum.Enum):
    LINEAR_NORMAL = "linear_normal"
    GAUSSIAN_LOG_OFFSET = "gaussian_log_offset"
    WEIBULL_AFT = "weibull_aft"

    @property
    def n_params(self) -> int:
        return 3 if self is Family.WEIBULL_AFT else 2

    @property
    def param_names(self) -> tuple[str, ...]:
        if self is Family.WEIBULL_AFT:
            return ("alpha1", "beta", "log_alpha2")
        return ("alpha", "beta")

    @property
    def beta_index(self) -> int:
        return 1

    @property
    def is_gaussian(self) -> bool:
        return self is not Family.WEIBULL_AFT


@dataclass(frozen=True)
class DataView:
    """Model-relevant columns of a set of rows.

    ``row_ids`` index into the dataset the view was taken from.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    event: np.ndarray | None = None
    offset: np.ndarray | None = None
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        y = np.asarray(self.outcome, dtype=float)
        x = np.asarray(self.treatment, dtype=float)
        n = len(y)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "treatment", x)
        if len(x) != n:
            raise SchemaMismatchError("treatment length differs from outcome length")
        if not np.all((x == 0) | (x == 1)):
            raise SchemaMismatchError("treatment must contain only 0/1")
        for name in ("event", "offset"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if len(v) != n:
                    raise SchemaMismatchError(f"{name} length differs from outcome length")
                object.__setattr__(self, name, v)
        if self.event is not None and not np.all((self.event == 0) | (self.event == 1)):
            raise SchemaMismatchError("event indicator must contain only 0/1")
        ids = np.arange(n) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.intp)
        if len(ids) != n:
            raise SchemaMismatchError("row_ids length differs from outcome length")
        object.__setattr__(self, "row_ids", ids)

    def __len__(self):
        return len(self.outcome)

    def take(self, idx) -> "DataView":
        idx = np.asarray(idx)
        return DataView(
            outcome=self.outcome[idx],
            treatment=self.treatment[idx],
            event=None if self.event is None else self.event[idx],
            offset=None if self.offset is None else self.offset[idx],
            row_ids=self.row_ids[idx],
        )

    def with_outcome(self, outcome, event=None) -> "DataView":
        return replace(self, outcome=outcome, event=self.event if event is None else event)


@dataclass(frozen=True)
class FittedParams:
    family: Family
    theta: np.ndarray
    sigma_hat: float | None = None
    n_used: int = 0
    converged: bool = True

    @property
    def alpha(self) -> float:
        return float(self.theta[0])

    @property
    def beta(self) -> float:
        return float(self.theta[1])

    @property
    def scale(self) -> float:
        """Weibull scale ``alpha_2 = exp(gamma)``."""
        return float(np.exp(self.theta[2]))


def check_schema(family: Family, data: DataView) -> None:
    if family is Family.WEIBULL_AFT:
        if data.event is None:
            raise SchemaMismatchError("Weibull model requires an event indicator")
        if np.any(data.outcome <= 0) or not np.all(np.isfinite(data.outcome)):
            raise SchemaMismatchError("survival times must be positive and finite")
    elif family is Family.GAUSSIAN_LOG_OFFSET:
        if data.offset is None:
            raise SchemaMismatchError("log-link model requires an offset column")
        if np.any(data.offset <= 0):
            raise SchemaMismatchError("offset must be positive")


def mean_response(params: FittedParams, data: DataView) -> np.ndarray:
    """Model mean for the Gaussian families."""
    a, b = params.theta[0], params.theta[1]
    if params.family is Family.LINEAR_NORMAL:
        return a + b * data.treatment
    if params.family is Family.GAUSSIAN_LOG_OFFSET:
        return np.exp(a + b * data.treatment) * data.offset
    raise SchemaMismatchError("mean_response is defined for Gaussian families only")


def _weibull_w(theta, data: DataView) -> np.ndarray:
    return (np.log(data.outcome) - theta[0] - theta[1] * data.treatment) / np.exp(theta[2])


def loglik_contributions(params: FittedParams, data: DataView) -> np.ndarray:
    check_schema(params.family, data)
    if params.family.is_gaussian:
        return -((data.outcome - mean_response(params, data)) ** 2)
    w = _weibull_w(params.theta, data)
    return data.event * (w - params.theta[2]) - np.exp(w)


def loglik_rowwise(family: Family, theta: np.ndarray, data: DataView) -> np.ndarray:
    """Contributions where row i is evaluated at its own parameters ``theta[i]``."""
    theta = np.asarray(theta, dtype=float)
    # parameters broadcast elementwise against the data columns
    return loglik_contributions(FittedParams(Family(family), theta.T), data)


def score_matrix(params: FittedParams, data: DataView) -> np.ndarray:
    """Per-observation score contributions, shape ``(n, P)``."""
    check_schema(params.family, data)
    x = data.treatment
    if params.family.is_gaussian:
        mu = mean_response(params, data)
        r = data.outcome - mu
        if params.family is Family.GAUSSIAN_LOG_OFFSET:
            r = r * mu
        return np.column_stack([r, r * x])
    w = _weibull_w(params.theta, data)
    a = (np.exp(w) - data.event) / np.exp(params.theta[2])
    return np.column_stack([a, a * x, w * (np.exp(w) - data.event) - data.event])


# --------------------------------------------------------------------- #
# weighted fitting
# --------------------------------------------------------------------- #


def _check_weights(family: Family, data: DataView, weights) -> np.ndarray:
    n = len(data)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights have shape {w.shape}, expected ({n},)")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    pos = w > 0
    if pos.sum() < family.n_params:
        raise DegenerateError(
            f"{int(pos.sum())} positively weighted rows, need {family.n_params}"
        )
    x = data.treatment[pos]
    if not (np.any(x == 0) and np.any(x == 1)):
        raise SingularDesignError("one treatment arm is absent among weighted rows")
    return w


def fit_weighted(family: Family, data: DataView, weights=None) -> FittedParams:
    """Solve the weighted score equation ``sum_k w_k s_k(theta) = 0``.

    Weights act as replication counts; they are not normalised.
    """
    family = Family(family)
    check_schema(family, data)
    w = _check_weights(family, data, weights)
    n_used = int(np.count_nonzero(w))
    if family is Family.LINEAR_NORMAL:
        theta = _fit_linear(data, w)
        converged = True
    elif family is Family.GAUSSIAN_LOG_OFFSET:
        theta, converged = _fit_log_offset(data, w)
    else:
        theta, converged = _fit_weibull(data, w)
    params = FittedParams(family, theta, None, n_used, converged)
    if family.is_gaussian:
        r = data.outcome - mean_response(params, data)
        sigma = np.sqrt(np.sum(w * r**2) / np.sum(w))
        params = replace(params, sigma_hat=float(max(sigma, SIGMA_FLOOR)))
    return params


def _fit_linear(data: DataView, w: np.ndarray) -> np.ndarray:
    x, y = data.treatment, data.outcome
    w0 = w * (1 - x)
    w1 = w * x
    a = np.sum(w0 * y) / np.sum(w0)
    b = np.sum(w1 * y) / np.sum(w1) - a
    return np.array([a, b])


def _fit_log_offset(data: DataView, w: np.ndarray):
    """Gauss-Newton on the weighted residual sum of squares."""
    x, y, off = data.treatment, data.outcome, data.offset
    sw = np.sum(w)
    ratio = np.sum(w * y / off) / sw
    if ratio <= 0:
        raise NoConvergenceError("weighted mean of outcome/offset is not positive")
    theta = np.array([np.log(ratio), 0.0])
    design = np.column_stack([np.ones_like(x), x])

    def rss(th):
        mu = np.exp(design @ th) * off
        return np.sum(w * (y - mu) ** 2)

    current = rss(theta)
    for _ in range(MAX_ITER):
        mu = np.exp(design @ theta) * off
        r = y - mu
        jac = design * mu[:, None]
        grad = jac.T @ (w * r)
        jtj = jac.T @ (jac * w[:, None])
        try:
            step = np.linalg.solve(jtj, grad)
        except np.linalg.LinAlgError as exc:
            raise NoConvergenceError("singular Gauss-Newton system") from exc
        if np.max(np.abs(grad)) < SCORE_TOL * sw and np.linalg.norm(step) < STEP_TOL:
            return theta, True
        t = 1.0
        while True:
            cand = theta + t * step
            val = rss(cand)
            if np.isfinite(val) and val <= current + ROUNDING * abs(current):
                break
            t *= 0.5
            if t < 1e-12:
                # no decrease possible along the step; accept a converged point only
                if np.max(np.abs(grad)) < SCORE_TOL * sw:
                    return theta, True
                raise NoConvergenceError("Gauss-Newton line search failed")
        theta, current = cand, val
    raise NoConvergenceError(f"Gauss-Newton did not converge in {MAX_ITER} iterations")


def _weibull_loglik(theta, data: DataView, w: np.ndarray) -> float:
    z = _weibull_w(theta, data)
    return float(np.sum(w * (data.event * (z - theta[2]) - np.exp(z))))


def _weibull_grad_hess(theta, data: DataView, w: np.ndarray):
    x, d = data.treatment, data.event
    sigma = np.exp(theta[2])
    z = _weibull_w(theta, data)
    ez = np.exp(z)
    a = ez - d
    grad = np.array([
        np.sum(w * a) / sigma,
        np.sum(w * a * x) / sigma,
        np.sum(w * (z * a - d)),
    ])
    h_aa = -np.sum(w * ez) / sigma**2
    h_ab = -np.sum(w * ez * x) / sigma**2
    h_bb = -np.sum(w * ez * x * x) / sigma**2
    cross = -(z * ez + a) / sigma
    h_ag = np.sum(w * cross)
    h_bg = np.sum(w * cross * x)
    h_gg = np.sum(w * (-z * a - z * z * ez))
    hess = np.array([[h_aa, h_ab, h_ag], [h_ab, h_bb, h_bg], [h_ag, h_bg, h_gg]])
    return grad, hess


def _weibull_start(data: DataView, w: np.ndarray) -> np.ndarray:
    logt = np.log(data.outcome)
    ab = _fit_linear(data.with_outcome(logt), w)
    r = logt - ab[0] - ab[1] * data.treatment
    spread = np.sqrt(np.sum(w * r**2) / np.sum(w))
    # sd of the standard minimum extreme-value law is pi / sqrt(6)
    sigma = spread * np.sqrt(6.0) / np.pi
    gamma = np.log(sigma) if sigma > 1e-8 else 0.0
    return np.array([ab[0], ab[1], gamma])


def _fit_weibull(data: DataView, w: np.ndarray):
    """Damped Newton ascent on the weighted censored log-likelihood."""
    sw = np.sum(w)
    theta = _weibull_start(data, w)
    current = _weibull_loglik(theta, data, w)
    for _ in range(MAX_ITER):
        grad, hess = _weibull_grad_hess(theta, data, w)
        step = None
        try:
            step = np.linalg.solve(-hess, grad)
            if not np.all(np.isfinite(step)) or grad @ step <= 0:
                step = None
        except np.linalg.LinAlgError:
            pass
        if step is None:
            # Hessian not negative definite here; use a Levenberg-damped step
            lam = np.max(np.abs(np.diag(hess))) + 1.0
            step = np.linalg.solve(-hess + lam * np.eye(3), grad)
        if np.max(np.abs(grad)) < SCORE_TOL * sw and np.linalg.norm(step) < STEP_TOL:
            return theta, True
        t = 1.0
        while True:
            cand = theta + t * step
            val = _weibull_loglik(cand, data, w)
            if np.isfinite(val) and val >= current - ROUNDING * abs(current):
                break
            t *= 0.5
            if t < 1e-12:
                if np.max(np.abs(grad)) < SCORE_TOL * sw:
                    return theta, True
                raise NoConvergenceError("Newton line search failed")
        theta, current = cand, val
    raise NoConvergenceError(f"Newton iterations did not converge in {MAX_ITER} steps")


def weighted_loglik(params: FittedParams, data: DataView, weights=None) -> float:
    contrib = loglik_contributions(params, data)
    if weights is None:
        return float(np.sum(contrib))
    return float(np.sum(np.asarray(weights, dtype=float) * contrib))


# --------------------------------------------------------------------- #
# survival summaries
# --------------------------------------------------------------------- #


def _require_weibull(params: FittedParams):
    if params.family is not Family.WEIBULL_AFT:
        raise SchemaMismatchError("defined for the Weibull model only")


def weibull_cdf(params: FittedParams, arm: int, t) -> np.ndarray:
    """``P(T <= t)`` under the minimum extreme-value error law."""
    _require_weibull(params)
    a1, b, g = params.theta
    z = (np.log(t) - a1 - b * arm) / np.exp(g)
    return -np.expm1(-np.exp(z))


def weibull_quantile(params: FittedParams, arm: int, q: float) -> float:
    _require_weibull(params)
    if not 0.0 < q < 1.0:
        raise BadQuantileError(f"quantile level {q} outside (0, 1)")
    a1, b, g = params.theta
    return float(np.exp(a1 + b * arm + np.exp(g) * np.log(-np.log1p(-q))))


def delta_median(params: FittedParams) -> float:
    """Treated-minus-control difference in median survival."""
    _require_weibull(params)
    a1, b, g = params.theta
    return float(np.exp(a1 + np.exp(g) * np.log(np.log(2.0))) * np.expm1(b))

