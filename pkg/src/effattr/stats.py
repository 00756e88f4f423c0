"""Inference core: paired effect estimation, t tests and intervals, the
average treatment effect for randomized plans, and balanced n-way ANOVA
with all interaction orders.

Zero-variance samples are legal inputs (exact synthetic measurements
produce them constantly): the t statistic is undefined there, so the
verdict is ruled by exact equality and the interval degenerates to a
point.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .design import ARM_A, ARM_REF, DesignPlan, GROUP_CONTROL, GROUP_TREATMENT
from .runner import RunLog, collapse
from .special import betainc_inv

VERDICT_REJECT = "reject"
VERDICT_FAIL_TO_REJECT = "fail_to_reject"

AVERAGE_KINDS = ("arithmetic", "weighted", "geometric")

_ANOVA_MAX_FACTORS = 6


class StatsError(ValueError):
    """Raised for domain violations in statistical operations."""


# -- scalar statistics -----------------------------------------------------


def sample_mean(xs: Sequence[float]) -> float:
    if len(xs) == 0:
        raise StatsError("sample_mean: empty sample")
    return math.fsum(xs) / len(xs)


def sample_std(xs: Sequence[float]) -> float:
    """Unbiased (n - 1 denominator) sample standard deviation."""
    n = len(xs)
    if n < 2:
        raise StatsError("sample_std: needs at least 2 observations")
    m = sample_mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (n - 1))


def t_statistic(mean: float, mu0: float, s: float, n: int) -> float:
    if n < 2:
        raise StatsError("t_statistic: needs n >= 2")
    if s <= 0:
        raise StatsError("t_statistic: degenerate sample (s = 0); rule by exact equality instead")
    return (mean - mu0) / (s / math.sqrt(n))


@lru_cache(maxsize=4096)
def t_quantile(alpha_tail: float, df: float) -> float:
    """Upper-tail Student-t quantile: P(T > t) = alpha_tail."""
    if not 0.0 < alpha_tail < 0.5:
        raise StatsError(f"t_quantile: tail probability must be in (0, 0.5), got {alpha_tail}")
    if df < 1:
        raise StatsError(f"t_quantile: df must be >= 1, got {df}")
    # u = t^2 / (df + t^2) satisfies I_u(1/2, df/2) = 1 - 2*tail; inverting on
    # the u side keeps full precision for large df.
    u = betainc_inv(0.5, df / 2.0, 1.0 - 2.0 * alpha_tail)
    return math.sqrt(df * u / (1.0 - u))


@lru_cache(maxsize=4096)
def f_quantile(alpha: float, df1: float, df2: float) -> float:
    """Upper-tail F quantile: P(F > f) = alpha."""
    if not 0.0 < alpha < 1.0:
        raise StatsError(f"f_quantile: alpha must be in (0, 1), got {alpha}")
    if df1 < 1 or df2 < 1:
        raise StatsError(f"f_quantile: degrees of freedom must be >= 1, got ({df1}, {df2})")
    w = betainc_inv(df1 / 2.0, df2 / 2.0, 1.0 - alpha)
    return df2 * w / (df1 * (1.0 - w))


# -- effect estimates --------------------------------------------------------


@dataclass(frozen=True)
class DiffSample:
    """Per-pair differences between a CUI level and the reference level."""

    diffs: tuple[float, ...]
    unit: str = "units"
    cui_a: str = "a"
    cui_ref: str = "ref"


@dataclass(frozen=True)
class EffectEstimate:
    """An effect difference with its test and interval.

    ``s`` is scaled so that ``s / sqrt(n)`` is the standard error of the
    estimate, which keeps ``ci = delta_e -/+ t_critical * s / sqrt(n)``
    exact for both the one-sample and the two-sample (Welch) cases.
    """

    delta_e: float
    n: int
    s: float
    alpha: float
    mu0: float
    t_value: float
    t_critical: float
    df: float
    ci: tuple[float, float]
    verdict: str
    average_kind: str = "arithmetic"
    unit: str = "units"

    def covers(self, mu: float) -> bool:
        """Interval membership matching the test duality exactly.

        Open interval in the regular case; a degenerate point interval
        covers only its own point.
        """
        lo, hi = self.ci
        if lo == hi:
            return mu == lo
        return lo < mu < hi

    @property
    def width(self) -> float:
        return self.ci[1] - self.ci[0]


def _ttest_values(
    xs: Sequence[float], mu0: float, alpha: float, unit: str, average_kind: str = "arithmetic"
) -> EffectEstimate:
    n = len(xs)
    if n < 2:
        raise StatsError("t test: needs at least 2 observations")
    if not 0.0 < alpha < 1.0:
        raise StatsError(f"t test: alpha must be in (0, 1), got {alpha}")
    mean = sample_mean(xs)
    s = sample_std(xs)
    df = n - 1
    t_crit = t_quantile(alpha / 2.0, df)
    if s == 0.0:
        t_val = 0.0 if mean == mu0 else math.copysign(math.inf, mean - mu0)
        ci = (mean, mean)
    else:
        t_val = t_statistic(mean, mu0, s, n)
        half = t_crit * s / math.sqrt(n)
        ci = (mean - half, mean + half)
    verdict = VERDICT_REJECT if abs(t_val) >= t_crit else VERDICT_FAIL_TO_REJECT
    return EffectEstimate(
        delta_e=mean,
        n=n,
        s=s,
        alpha=alpha,
        mu0=mu0,
        t_value=t_val,
        t_critical=t_crit,
        df=df,
        ci=ci,
        verdict=verdict,
        average_kind=average_kind,
        unit=unit,
    )


def one_sample_ttest(diffs: DiffSample, mu0: float = 0.0, alpha: float = 0.01) -> EffectEstimate:
    """Two-sided one-sample t test of the mean difference against mu0."""
    return _ttest_values(diffs.diffs, mu0, alpha, unit=diffs.unit)


def confidence_interval(diffs: DiffSample, alpha: float = 0.01) -> tuple[float, float]:
    """1 - alpha confidence interval for the mean difference."""
    return one_sample_ttest(diffs, mu0=0.0, alpha=alpha).ci


# -- paired effect -----------------------------------------------------------


def paired_diffs(log: RunLog, plan: DesignPlan, aggregate: str = "median") -> DiffSample:
    """Collapse replicates and take per-pair differences in plan order."""
    if plan.method != "paired":
        raise StatsError(f"paired analysis requires a paired plan, got {plan.method!r}")
    collapsed = collapse(log, aggregate)
    pairs: dict[str, dict[str, str]] = {}
    order: list[str] = []
    for trial in plan.trials:
        if trial.pair_id is None or trial.arm is None:
            raise StatsError("paired plan contains a trial without pair metadata")
        if trial.pair_id not in pairs:
            pairs[trial.pair_id] = {}
            order.append(trial.pair_id)
        pairs[trial.pair_id][trial.arm] = trial.config.id
    missing = [
        cid
        for arms in pairs.values()
        for cid in arms.values()
        if cid not in collapsed.values
    ]
    if missing:
        raise StatsError(f"incomplete log: no ok measurements for configurations {sorted(set(missing))[:5]}")
    diffs = tuple(
        collapsed.values[pairs[pid][ARM_A]] - collapsed.values[pairs[pid][ARM_REF]] for pid in order
    )
    return DiffSample(
        diffs=diffs,
        unit=log.header.unit,
        cui_a=str(plan.metadata.get("cui_a", ARM_A)),
        cui_ref=str(plan.metadata.get("cui_ref", ARM_REF)),
    )


def _average(diffs: Sequence[float], kind: str, weights: Sequence[float] | None) -> float:
    if kind == "arithmetic":
        return sample_mean(diffs)
    if kind == "weighted":
        if weights is None:
            raise StatsError("weighted average requires explicit weights")
        if len(weights) != len(diffs):
            raise StatsError(f"weights length {len(weights)} != diffs length {len(diffs)}")
        if any(w < 0 for w in weights):
            raise StatsError("weights must be nonnegative")
        total = math.fsum(weights)
        if total <= 0:
            raise StatsError("weights must not all be zero")
        return math.fsum(w * d for w, d in zip(weights, diffs)) / total
    if kind == "geometric":
        if any(d <= 0 for d in diffs):
            raise StatsError("geometric average requires all diffs > 0")
        return math.exp(sample_mean([math.log(d) for d in diffs]))
    raise StatsError(f"unknown average kind {kind!r}")


def paired_effect(
    log: RunLog,
    plan: DesignPlan,
    average_kind: str = "arithmetic",
    weights: Sequence[float] | None = None,
    mu0: float = 0.0,
    alpha: float = 0.01,
    aggregate: str = "median",
) -> EffectEstimate:
    """Effect difference from a paired plan: average of per-pair diffs.

    The test and interval always come from the one-sample t test on the
    raw diffs; ``average_kind`` only selects how ``delta_e`` is averaged.
    """
    sample = paired_diffs(log, plan, aggregate)
    estimate = one_sample_ttest(sample, mu0=mu0, alpha=alpha)
    if average_kind != "arithmetic":
        estimate = dataclasses.replace(
            estimate,
            delta_e=_average(sample.diffs, average_kind, weights),
            average_kind=average_kind,
        )
    return estimate


# -- average treatment effect -------------------------------------------------


def ate(
    log: RunLog,
    plan: DesignPlan,
    alpha: float = 0.01,
    mu0: float = 0.0,
    aggregate: str = "median",
) -> EffectEstimate:
    """mean(treatment) - mean(control) with a Welch two-sample interval."""
    if plan.method != "rct":
        raise StatsError(f"ate requires an rct plan, got {plan.method!r}")
    if not 0.0 < alpha < 1.0:
        raise StatsError(f"ate: alpha must be in (0, 1), got {alpha}")
    collapsed = collapse(log, aggregate)
    arms: dict[str, list[str]] = {GROUP_CONTROL: [], GROUP_TREATMENT: []}
    seen: set[str] = set()
    for trial in plan.trials:
        if trial.group not in arms or trial.config.id in seen:
            continue
        seen.add(trial.config.id)
        arms[trial.group].append(trial.config.id)
    values: dict[str, list[float]] = {}
    for group, ids in arms.items():
        if len(ids) < 2:
            raise StatsError(f"ate: {group} arm needs at least 2 configurations, has {len(ids)}")
        missing = [cid for cid in ids if cid not in collapsed.values]
        if missing:
            raise StatsError(f"incomplete log: no ok measurements for configurations {missing[:5]}")
        values[group] = [collapsed.values[cid] for cid in ids]
    xc, xt = values[GROUP_CONTROL], values[GROUP_TREATMENT]
    n1, n2 = len(xc), len(xt)
    delta = sample_mean(xt) - sample_mean(xc)
    v1 = sample_std(xc) ** 2 / n1
    v2 = sample_std(xt) ** 2 / n2
    se = math.sqrt(v1 + v2)
    n = n1 + n2
    if se == 0.0:
        df = float(n - 2)
        t_crit = t_quantile(alpha / 2.0, df)
        t_val = 0.0 if delta == mu0 else math.copysign(math.inf, delta - mu0)
        ci = (delta, delta)
        s = 0.0
    else:
        df = (v1 + v2) ** 2 / (v1**2 / (n1 - 1) + v2**2 / (n2 - 1))
        t_crit = t_quantile(alpha / 2.0, df)
        t_val = (delta - mu0) / se
        ci = (delta - t_crit * se, delta + t_crit * se)
        s = se * math.sqrt(n)
    verdict = VERDICT_REJECT if abs(t_val) >= t_crit else VERDICT_FAIL_TO_REJECT
    return EffectEstimate(
        delta_e=delta,
        n=n,
        s=s,
        alpha=alpha,
        mu0=mu0,
        t_value=t_val,
        t_critical=t_crit,
        df=df,
        ci=ci,
        verdict=verdict,
        unit=log.header.unit,
    )


# -- n-way ANOVA ---------------------------------------------------------------


@dataclass(frozen=True)
class AnovaRow:
    component: tuple[str, ...]
    ss: float
    df: int
    pct: float
    f_computed: float
    f_critical: float
    significant: bool

    @property
    def label(self) -> str:
        return "*".join(self.component)


@dataclass(frozen=True)
class ErrorRow:
    ss: float
    df: int
    pct: float


@dataclass(frozen=True)
class AnovaTable:
    rows: tuple[AnovaRow, ...]
    error_row: ErrorRow
    total_ss: float
    alpha: float


def anova(log: RunLog, plan: DesignPlan, alpha: float = 0.01) -> AnovaTable:
    """Balanced complete-factorial decomposition with every interaction order.

    Requires the full-factorial plan's replication (r >= 2) so the error
    term exists; any missing or failed measurement makes the design
    unbalanced and is rejected.
    """
    if plan.method != "full_factorial":
        raise StatsError(f"anova requires a full_factorial plan, got {plan.method!r}")
    if not 0.0 < alpha < 1.0:
        raise StatsError(f"anova: alpha must be in (0, 1), got {alpha}")
    r = plan.r
    if r < 2:
        raise StatsError("anova: r = 1 leaves no error term; use r >= 2")
    factors = plan.metadata.get("factors")
    if not factors:
        raise StatsError("anova: plan carries no factor structure")
    names = [f["name"] for f in factors]
    labels = [list(f["labels"]) for f in factors]
    k = len(names)
    if k > _ANOVA_MAX_FACTORS:
        raise StatsError(f"anova: at most {_ANOVA_MAX_FACTORS} factors supported, got {k}")
    index = [{lab: i for i, lab in enumerate(labs)} for labs in labels]
    shape = tuple(len(labs) for labs in labels) + (r,)
    y = np.full(shape, np.nan)
    ok: dict[tuple[str, int], float] = {
        (m.config_id, m.replicate): m.value
        for m in log.records
        if m.status == "ok" and m.value is not None
    }
    for trial in plan.trials:
        value = ok.get((trial.config.id, trial.replicate))
        if value is None:
            raise StatsError(
                f"anova: unbalanced design; missing ok measurement for "
                f"{trial.config.id}/{trial.replicate}"
            )
        coord = tuple(index[i][trial.config.assignment[name]] for i, name in enumerate(names))
        y[coord + (trial.replicate,)] = value
    if np.isnan(y).any():
        raise StatsError("anova: unbalanced design; some cells have no measurement")

    grand = y.mean()
    cell_means = y.mean(axis=-1)
    total_ss = float(((y - grand) ** 2).sum())
    error_ss = float(((y - cell_means[..., None]) ** 2).sum())
    n_cells = int(np.prod(shape[:-1]))
    error_df = n_cells * (r - 1)

    # Rounding floor: sums of squares at or below accumulated float noise
    # are treated as exactly zero (constant-response designs).
    max_abs = float(np.abs(y).max()) if y.size else 0.0
    floor = y.size * (16 * np.finfo(float).eps * max(1.0, max_abs)) ** 2

    # Marginal cell means over every factor subset, grand mean included.
    marginals: dict[frozenset[int], np.ndarray] = {}
    for order in range(0, k + 1):
        for subset in itertools.combinations(range(k), order):
            axes = tuple(i for i in range(k) if i not in subset)
            marginals[frozenset(subset)] = (
                cell_means.mean(axis=axes, keepdims=True) if axes else cell_means
            )

    error_ms = error_ss / error_df
    rows = []
    for order in range(1, k + 1):
        for subset in itertools.combinations(range(k), order):
            effect = np.zeros_like(marginals[frozenset(subset)])
            for t_order in range(0, order + 1):
                sign = (-1) ** (order - t_order)
                for t_subset in itertools.combinations(subset, t_order):
                    effect = effect + sign * marginals[frozenset(t_subset)]
            outside = 1
            for i in range(k):
                if i not in subset:
                    outside *= shape[i]
            ss = float(r * outside * (effect**2).sum())
            df = 1
            for i in subset:
                df *= shape[i] - 1
            f_crit = f_quantile(alpha, df, error_df)
            if ss <= floor:
                ss = 0.0
                f_comp = 0.0
                significant = False
            elif error_ms <= floor / max(error_df, 1):
                f_comp = math.inf
                significant = True
            else:
                f_comp = (ss / df) / error_ms
                significant = f_comp > f_crit
            rows.append(
                AnovaRow(
                    component=tuple(names[i] for i in subset),
                    ss=ss,
                    df=df,
                    pct=0.0,  # filled below once total is known
                    f_computed=f_comp,
                    f_critical=f_crit,
                    significant=significant,
                )
            )

    if total_ss <= floor:
        total_ss = 0.0
        error_ss = 0.0

    def pct_of(ss: float) -> float:
        return 100.0 * ss / total_ss if total_ss > 0 else 0.0

    rows = [dataclasses.replace(row, pct=pct_of(row.ss)) for row in rows]
    return AnovaTable(
        rows=tuple(rows),
        error_row=ErrorRow(ss=error_ss, df=error_df, pct=pct_of(error_ss)),
        total_ss=total_ss,
        alpha=alpha,
    )
