"""Score-based independence tests and split-point search.

The association between a partitioning variable ``Z_j`` and the score
matrix is measured by the linear statistic ``t = sum_i g(z_i) h_i``,
standardised with its permutation mean and variance (Strasser & Weber,
1999).  Only the diagonal of the permutation covariance is needed
because the test statistic is the maximum over standardised
components.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from .errors import (
    AllDegenerateError,
    AllMissingError,
    DegenerateError,
    NoAdmissibleSplitError,
)

VAR_EPS = 1e-12
MAX_EXHAUSTIVE_LEVELS = 10


class SplitMode(str, enum.Enum):
    BOTH = "both"
    ALPHA = "alpha"
    BETA = "beta"

    def columns(self, n_params: int, beta_index: int = 1) -> list[int]:
        """Score columns driving the tests in this mode."""
        if self is SplitMode.BOTH:
            return list(range(n_params))
        if self is SplitMode.BETA:
            return [beta_index]
        return [k for k in range(n_params) if k != beta_index]


@dataclass(frozen=True)
class PartitionColumn:
    """A partitioning variable.

    Numeric columns hold their values, categorical columns hold integer
    level codes ``0..K-1`` (``levels`` gives the labels).  Missing
    entries are NaN in both cases.
    """

    name: str
    kind: str
    values: np.ndarray
    levels: tuple = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"unknown column kind {self.kind!r}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.kind == "categorical":
            object.__setattr__(self, "levels", tuple(self.levels))
            if len(self.levels) < 2:
                raise ValueError(f"categorical column {self.name!r} needs at least 2 levels")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def take(self, idx) -> "PartitionColumn":
        return PartitionColumn(self.name, self.kind, self.values[idx], self.levels)

    def with_values(self, values) -> "PartitionColumn":
        return PartitionColumn(self.name, self.kind, values, self.levels)


@dataclass(frozen=True)
class LinearStatistic:
    t: np.ndarray
    mu: np.ndarray
    var_diag: np.ndarray
    n_complete: int

    @property
    def degenerate(self) -> np.ndarray:
        return self.var_diag < VAR_EPS


@dataclass(frozen=True)
class TestResult:
    variable: int
    statistic_c: float
    p_value: float
    degenerate: bool = False
    n_components: int = 0

    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class SplitSpec:
    variable: int
    name: str
    kind: str
    threshold: float | None = None
    left_levels: tuple | None = None
    missing_route: str = "left"
    statistic_c: float = float("nan")

    def goes_left(self, values: np.ndarray) -> np.ndarray:
        """Boolean routing of raw column values, missing included."""
        values = np.asarray(values, dtype=float)
        miss = np.isnan(values)
        if self.kind == "numeric":
            left = values <= self.threshold
        else:
            left = np.isin(values, np.asarray(self.left_levels, dtype=float))
        return np.where(miss, self.missing_route == "left", left)


def transform_regressor(col: PartitionColumn) -> np.ndarray:
    """Regressor matrix ``g(z)`` over the complete rows of ``col``."""
    z = col.values[~col.missing]
    if len(z) == 0:
        raise AllMissingError(f"column {col.name!r} has no complete rows")
    if col.kind == "numeric":
        return z[:, None]
    g = np.zeros((len(z), col.n_levels))
    g[np.arange(len(z)), z.astype(int)] = 1.0
    return g


def linear_statistic(g: np.ndarray, scores: np.ndarray) -> LinearStatistic:
    """Linear statistic with its conditional permutation moments.

    ``g`` is ``(n, q)`` and ``scores`` is ``(n, P)``; every returned
    array is ``(q, P)``.
    """
    g = np.asarray(g, dtype=float)
    h = np.asarray(scores, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if h.ndim == 1:
        h = h[:, None]
    n = h.shape[0]
    if g.shape[0] != n:
        raise ValueError("regressor and score row counts differ")
    if n < 2:
        raise DegenerateError("linear statistic needs at least 2 complete rows")
    hbar = h.mean(axis=0)
    v = np.mean((h - hbar) ** 2, axis=0)
    gsum = g.sum(axis=0)
    gsq = (g * g).sum(axis=0)
    t = g.T @ h
    mu = np.outer(gsum, hbar)
    var = n / (n - 1) * np.outer(gsq, v) - 1 / (n - 1) * np.outer(gsum**2, v)
    return LinearStatistic(t, mu, np.maximum(var, 0.0), n)


def standardized_max(ls: LinearStatistic) -> tuple[float, int]:
    ok = ~ls.degenerate
    n_comp = int(ok.sum())
    if n_comp == 0:
        raise AllDegenerateError("every component of the linear statistic is degenerate")
    z = np.abs(ls.t - ls.mu)[ok] / np.sqrt(ls.var_diag[ok])
    return float(z.max()), n_comp


def _bonferroni_normal_p(c: float, n_comp: int) -> float:
    return float(min(1.0, n_comp * 2.0 * ndtr(-c)))


def variable_test(
    col: PartitionColumn,
    scores: np.ndarray,
    mode: SplitMode | str = SplitMode.BOTH,
    variable: int = 0,
    mc_permutations: int | None = None,
    rng: np.random.Generator | None = None,
    beta_index: int = 1,
) -> TestResult:
    """Test independence of ``col`` and the mode-selected score columns.

    The default p-value bounds the max-type statistic with a Bonferroni
    correction over its standardised components.  With
    ``mc_permutations=B`` the p-value is ``(1 + #{c_b >= c}) / (B + 1)``
    over ``B`` random permutations of the regressor.
    """
    mode = SplitMode(mode)
    scores = np.asarray(scores, dtype=float)
    h = scores[:, mode.columns(scores.shape[1], beta_index)]
    complete = ~col.missing
    try:
        g = transform_regressor(col)
        ls = linear_statistic(g, h[complete])
        c, n_comp = standardized_max(ls)
    except (AllMissingError, AllDegenerateError, DegenerateError):
        return TestResult(variable, 0.0, 1.0, degenerate=True)
    if mc_permutations:
        if rng is None:
            raise ValueError("Monte-Carlo p-values need a random generator")
        hc = h[complete]
        ok = ~ls.degenerate
        sd = np.sqrt(ls.var_diag[ok])
        exceed = 0
        for _ in range(mc_permutations):
            tb = g[rng.permutation(len(g))].T @ hc
            cb = np.max(np.abs(tb - ls.mu)[ok] / sd)
            exceed += cb >= c * (1 - 1e-12)
        p = (1 + exceed) / (mc_permutations + 1)
    else:
        p = _bonferroni_normal_p(c, n_comp)
    return TestResult(variable, c, p, degenerate=False, n_components=n_comp)


def maxstat_tail(b: float, eps: float) -> float:
    """Approximate ``P(sup |B(t)| / sqrt(t(1-t)) > b)`` over ``t in [eps, 1-eps]``.

    Miller & Siegmund (1982) approximation for a standardised Brownian
    bridge, the limit of the maximally selected two-sample statistic.
    """
    if b <= 1.0:
        return 1.0
    eps = min(max(eps, 1e-6), 0.5)
    phi = norm.pdf(b)
    width = np.log((1 - eps) ** 2 / eps**2)
    return float(min(1.0, 4 * phi / b + phi * (b - 1 / b) * width))


def maxstat_test(
    col: PartitionColumn,
    scores: np.ndarray,
    mode: SplitMode | str = SplitMode.BOTH,
    variable: int = 0,
    min_leaf: int = 1,
    mc_permutations: int | None = None,
    rng: np.random.Generator | None = None,
    beta_index: int = 1,
) -> TestResult:
    """Maximally selected two-sample test over admissible cut points.

    The statistic is the best standardised split statistic of
    :func:`best_split_point`, so it reacts to non-monotone association
    (for instance a U-shaped score pattern), which the linear statistic
    with ``g(z) = z`` cannot see.  Categorical columns are handled by
    :func:`variable_test`.
    """
    mode = SplitMode(mode)
    if col.kind == "categorical":
        return variable_test(col, scores, mode, variable, mc_permutations, rng, beta_index)
    scores = np.asarray(scores, dtype=float)
    h = scores[:, mode.columns(scores.shape[1], beta_index)]
    try:
        split = best_split_point(col, h, min_leaf, variable)
    except NoAdmissibleSplitError:
        return TestResult(variable, 0.0, 1.0, degenerate=True)
    c = split.statistic_c
    complete = ~col.missing
    n = int(complete.sum())
    n_comp = int(np.sum(np.var(h[complete], axis=0) >= VAR_EPS))
    if mc_permutations:
        if rng is None:
            raise ValueError("Monte-Carlo p-values need a random generator")
        exceed = 0
        for _ in range(mc_permutations):
            vals = col.values.copy()
            vals[complete] = rng.permutation(vals[complete])
            cb = best_split_point(col.with_values(vals), h, min_leaf, variable).statistic_c
            exceed += cb >= c * (1 - 1e-12)
        p = (1 + exceed) / (mc_permutations + 1)
    else:
        p = min(1.0, n_comp * maxstat_tail(c, max(min_leaf, 1) / n))
    return TestResult(variable, c, p, degenerate=False, n_components=n_comp)


def select_variable(results, alpha: float, J_tested: int | None = None) -> int | None:
    """Bonferroni-adjusted selection; ties go to the smallest variable index."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    results = list(results)
    if not results:
        return None
    if J_tested is None:
        J_tested = len(results)
    best = min(results, key=lambda r: (min(1.0, r.p_value * J_tested), r.variable))
    if min(1.0, best.p_value * J_tested) < alpha:
        return best.variable
    return None


def _candidate_stats(left_sums, n_left, hbar, v, n):
    """Standardised max for many left-indicator regressors at once."""
    ok = v >= VAR_EPS
    if not np.any(ok):
        raise AllDegenerateError("score columns have zero variance")
    nl = n_left[:, None].astype(float)
    mu = nl * hbar[ok]
    var = v[ok] * nl * (n - nl) / (n - 1)
    return np.max(np.abs(left_sums[:, ok] - mu) / np.sqrt(var), axis=1)


def best_split_point(
    col: PartitionColumn,
    scores: np.ndarray,
    min_leaf: int,
    variable: int = 0,
    order_by: int = 0,
) -> SplitSpec:
    """Split point maximising the standardised two-sample statistic.

    ``scores`` must already be restricted to the columns that drive the
    split.  For categorical columns with more than ten observed levels
    the levels are ordered by the mean of score column ``order_by`` and
    split like an ordinal variable.
    """
    h = np.asarray(scores, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    complete = ~col.missing
    z = col.values[complete]
    hc = h[complete]
    n = len(z)
    if n < 2 * min_leaf or n < 2:
        raise NoAdmissibleSplitError(f"{n} complete rows cannot form two leaves of {min_leaf}")
    hbar = hc.mean(axis=0)
    v = np.mean((hc - hbar) ** 2, axis=0)

    if col.kind == "numeric":
        order = np.argsort(z, kind="mergesort")
        zs = z[order]
        csum = np.cumsum(hc[order], axis=0)
        pos = np.nonzero(zs[:-1] < zs[1:])[0]
        n_left = pos + 1
        keep = (n_left >= min_leaf) & (n - n_left >= min_leaf)
        pos, n_left = pos[keep], n_left[keep]
        if len(pos) == 0:
            raise NoAdmissibleSplitError(f"no admissible split point in {col.name!r}")
        try:
            stats = _candidate_stats(csum[pos], n_left, hbar, v, n)
        except AllDegenerateError as exc:
            raise NoAdmissibleSplitError(str(exc)) from exc
        k = int(np.argmax(stats))
        threshold = 0.5 * (zs[pos[k]] + zs[pos[k] + 1])
        nl = int(n_left[k])
        route = "left" if nl >= n - nl else "right"
        return SplitSpec(variable, col.name, "numeric", threshold=float(threshold),
                         missing_route=route, statistic_c=float(stats[k]))

    codes = z.astype(int)
    present = np.unique(codes)
    if len(present) < 2:
        raise NoAdmissibleSplitError(f"column {col.name!r} has a single observed level")
    index = np.searchsorted(present, codes)
    counts = np.bincount(index, minlength=len(present))
    sums = np.zeros((len(present), hc.shape[1]))
    np.add.at(sums, index, hc)
    if len(present) <= MAX_EXHAUSTIVE_LEVELS:
        rest = len(present) - 1
        members = [
            (1,) + bits for bits in itertools.product((0, 1), repeat=rest)
            if not all(bits)
        ]
        member = np.array(members, dtype=float)
    else:
        means = sums[:, order_by] / counts
        ranked = np.argsort(means, kind="mergesort")
        member = np.zeros((len(present) - 1, len(present)))
        for k in range(len(present) - 1):
            member[k, ranked[: k + 1]] = 1.0
    n_left = (member @ counts).astype(int)
    keep = (n_left >= min_leaf) & (n - n_left >= min_leaf)
    member, n_left = member[keep], n_left[keep]
    if len(member) == 0:
        raise NoAdmissibleSplitError(f"no admissible level partition in {col.name!r}")
    try:
        stats = _candidate_stats(member @ sums, n_left, hbar, v, n)
    except AllDegenerateError as exc:
        raise NoAdmissibleSplitError(str(exc)) from exc
    k = int(np.argmax(stats))
    left_levels = tuple(int(c) for c in present[member[k] > 0])
    nl = int(n_left[k])
    route = "left" if nl >= n - nl else "right"
    return SplitSpec(variable, col.name, "categorical", left_levels=left_levels,
                     missing_route=route, statistic_c=float(stats[k]))
