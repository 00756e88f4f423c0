"""Meta-evaluation: how well does each methodology recover a known effect?

A scenario bundles a space, a synthetic model with a computable true
effect, and a list of method rows. For each row the sampling, planning,
running, and inference pipeline is repeated over seeded iterations; the
fraction of confidence intervals that contain the true effect is the
accuracy, and the configuration count is the cost.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from ._util import derive_seed
from .design import (
    DesignPlan,
    PlanError,
    factorial_2kr,
    paired_plan,
    rct_plan,
    simple_random_sample,
    stratified_sample,
)
from .model import ModelError, SyntheticModel, load_model
from .runner import RunLog, SyntheticBackend, collapse, new_log, run
from .space import ConfigSpace, Configuration, ROLE_DC, SpaceError, load_space
from .stats import (
    EffectEstimate,
    StatsError,
    VERDICT_FAIL_TO_REJECT,
    VERDICT_REJECT,
    ate,
    paired_effect,
    sample_mean,
    t_quantile,
)

METHOD_KINDS = ("paired", "rct", "factorial_2kr")


class ScenarioError(ValueError):
    """Raised for malformed or infeasible scenario documents."""


@dataclass(frozen=True)
class MethodSpec:
    kind: str
    n: int = 0
    r: int = 1
    stratify: str | None = None
    split: Mapping[str, Any] | None = None
    label: str | None = None

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return f"{self.kind}-{self.n}" if self.n else self.kind


@dataclass(frozen=True)
class Scenario:
    space: ConfigSpace
    model: SyntheticModel
    cui_a: str
    cui_ref: str
    alpha: float = 0.01
    iterations: int = 10_000
    master_seed: int = 0
    methods: tuple[MethodSpec, ...] = ()
    direction: str = "min"
    aggregate: str = "median"

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ScenarioError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 < self.alpha < 1.0:
            raise ScenarioError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.direction not in ("min", "max"):
            raise ScenarioError(f"direction must be 'min' or 'max', got {self.direction!r}")
        cui = self.space.cui_factor
        try:
            for lab in (self.cui_a, self.cui_ref):
                cui.level(lab)
        except SpaceError as exc:
            raise ScenarioError(str(exc)) from exc
        for m in self.methods:
            if m.kind not in METHOD_KINDS:
                raise ScenarioError(f"unknown method kind {m.kind!r}")


@dataclass(frozen=True)
class AccuracyRow:
    method: str
    cost: int
    accuracy: float
    mean_ci_width: float
    iterations: int


@dataclass(frozen=True)
class PitfallReport:
    """Single fixed-configuration estimate vs. the population effect."""

    fixed_estimate: float
    ground_truth: float
    sign_flip: bool
    cui_a: str
    cui_ref: str


@dataclass(frozen=True)
class SelectionResult:
    level: str
    tied: bool
    means: Mapping[str, float]
    direction: str


@dataclass(frozen=True)
class VariabilityReport:
    """Spread of a set of overall-effect readings under two conventions.

    Both normalizations are reported because neither is canonical: range
    over the minimum and range over the mean.
    """

    minimum: float
    maximum: float
    mean: float
    range_over_min: float
    range_over_mean: float


# -- scenario loading --------------------------------------------------------


def load_scenario(document: str | Mapping[str, Any]) -> Scenario:
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario document is not valid JSON: {exc}") from exc
    if not isinstance(document, Mapping):
        raise ScenarioError("scenario document: top level must be an object")
    try:
        space = load_space(document["space"])
        model = load_model(document["model"])
    except KeyError as exc:
        raise ScenarioError(f"scenario document: missing key {exc}") from exc
    except (SpaceError, ModelError) as exc:
        raise ScenarioError(str(exc)) from exc
    methods = []
    for i, rec in enumerate(document.get("methods", [])):
        if not isinstance(rec, Mapping) or "kind" not in rec:
            raise ScenarioError(f"methods[{i}]: must be an object with a 'kind'")
        methods.append(
            MethodSpec(
                kind=rec["kind"],
                n=int(rec.get("n", 0)),
                r=int(rec.get("r", 1)),
                stratify=rec.get("stratify"),
                split=rec.get("split"),
                label=rec.get("label"),
            )
        )
    try:
        return Scenario(
            space=space,
            model=model,
            cui_a=document["cui_a"],
            cui_ref=document["cui_ref"],
            alpha=float(document.get("alpha", 0.01)),
            iterations=int(document.get("iterations", 10_000)),
            master_seed=int(document.get("master_seed", 0)),
            methods=tuple(methods),
            direction=document.get("direction", "min"),
            aggregate=document.get("aggregate", "median"),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario document: missing key {exc}") from exc


def load_scenario_file(path: str | Path) -> Scenario:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


# -- ground truth --------------------------------------------------------------


def ground_truth(scenario: Scenario) -> float:
    """Noise-free true effect difference under the declared DC weights."""
    return scenario.model.closed_form_delta(scenario.space, scenario.cui_a, scenario.cui_ref)


# -- accuracy vs cost ----------------------------------------------------------


def _default_split(scenario: Scenario, method: MethodSpec) -> dict[str, Any]:
    """Derive a split when the scenario does not carry one.

    The CUI factor goes reference-low / investigated-high; every other
    multi-level factor splits by declared level order. Only usable when the
    CUI has exactly the two levels under study.
    """
    split: dict[str, Any] = {}
    cui = scenario.space.cui_factor
    for factor in scenario.space.factors:
        if factor.name == method.stratify or len(factor.levels) == 1:
            continue
        labels = list(factor.labels())
        if factor.name == cui.name:
            if set(labels) != {scenario.cui_a, scenario.cui_ref}:
                raise ScenarioError(
                    "factorial_2kr needs an explicit split when the CUI factor has "
                    "levels beyond the two under study"
                )
            split[factor.name] = {"low": [scenario.cui_ref], "high": [scenario.cui_a]}
        else:
            half = len(labels) // 2
            split[factor.name] = {"low": labels[:half], "high": labels[half:]}
    return split


def _factorial_estimate(
    scenario: Scenario, plan: DesignPlan, log: RunLog
) -> EffectEstimate:
    """CUI contrast of a 2^k r design with its replication-based error.

    delta = mean(high cells) - mean(low cells); the standard error comes
    from the pooled within-cell replicate variance.
    """
    r = plan.r
    if r < 2:
        raise ScenarioError("factorial_2kr accuracy requires r >= 2 for a replication error term")
    cui = scenario.space.cui_factor.name
    high = set(plan.metadata["split"][cui]["high"])
    by_config: dict[str, list[float]] = {}
    arm_of: dict[str, str] = {}
    for trial in plan.trials:
        arm_of[trial.config.id] = "high" if trial.config.assignment[cui] in high else "low"
    for m in log.records:
        if m.status != "ok":
            raise ScenarioError("factorial_2kr accuracy: log contains failed measurements")
        by_config.setdefault(m.config_id, []).append(m.value)  # type: ignore[arg-type]
    cells: dict[str, list[list[float]]] = {"high": [], "low": []}
    for cid, values in by_config.items():
        cells[arm_of[cid]].append(values)
    n_high = len(cells["high"])
    n_low = len(cells["low"])
    if n_high == 0 or n_low == 0:
        raise ScenarioError("factorial_2kr accuracy: a contrast side has no cells")
    mean_high = sample_mean([v for cell in cells["high"] for v in cell])
    mean_low = sample_mean([v for cell in cells["low"] for v in cell])
    delta = mean_high - mean_low
    within = math.fsum(
        (v - sample_mean(cell)) ** 2
        for side in cells.values()
        for cell in side
        for v in cell
    )
    df = (n_high + n_low) * (r - 1)
    s2 = within / df
    se = math.sqrt(s2 * (1.0 / (n_high * r) + 1.0 / (n_low * r)))
    alpha = scenario.alpha
    t_crit = t_quantile(alpha / 2.0, df)
    if se == 0.0:
        t_val = 0.0 if delta == 0.0 else math.copysign(math.inf, delta)
        ci = (delta, delta)
    else:
        t_val = delta / se
        ci = (delta - t_crit * se, delta + t_crit * se)
    verdict = VERDICT_REJECT if abs(t_val) >= t_crit else VERDICT_FAIL_TO_REJECT
    n = (n_high + n_low) * r
    return EffectEstimate(
        delta_e=delta,
        n=n,
        s=se * math.sqrt(n),
        alpha=alpha,
        mu0=0.0,
        t_value=t_val,
        t_critical=t_crit,
        df=df,
        ci=ci,
        verdict=verdict,
        unit=log.header.unit,
    )


def _one_iteration(
    scenario: Scenario, method: MethodSpec, seed: int
) -> tuple[EffectEstimate, int]:
    space, model = scenario.space, scenario.model
    backend = SyntheticBackend(model)
    if method.kind == "paired":
        if method.stratify:
            dc = stratified_sample(space, method.stratify, method.n, seed)
        else:
            dc = simple_random_sample(space, (ROLE_DC,), method.n, seed)
        plan = paired_plan(
            space, scenario.cui_a, scenario.cui_ref, dc, method.r, seed=seed,
            stratum=method.stratify,
        )
        log = new_log(plan, backend)
        run(plan, backend, log)
        return paired_effect(log, plan, alpha=scenario.alpha, aggregate=scenario.aggregate), plan.cost
    if method.kind == "rct":
        plan = rct_plan(space, scenario.cui_ref, scenario.cui_a, method.n, method.r, seed)
        log = new_log(plan, backend)
        run(plan, backend, log)
        return ate(log, plan, alpha=scenario.alpha, aggregate=scenario.aggregate), plan.cost
    if method.kind == "factorial_2kr":
        split = dict(method.split) if method.split else _default_split(scenario, method)
        plan = factorial_2kr(space, split, method.r, seed, stratify=method.stratify)
        log = new_log(plan, backend)
        run(plan, backend, log)
        return _factorial_estimate(scenario, plan, log), plan.cost
    raise ScenarioError(f"unknown method kind {method.kind!r}")


def accuracy_cost(scenario: Scenario) -> list[AccuracyRow]:
    """Coverage frequency of the true effect per method row.

    Iteration j of every method row shares the seed derived from
    (master seed, j), so rows are comparable across methods and runs.
    """
    truth = ground_truth(scenario)
    rows = []
    for method in scenario.methods:
        covered = 0
        widths = 0.0
        cost = 0
        for j in range(scenario.iterations):
            seed = derive_seed(scenario.master_seed, "iter", j)
            try:
                estimate, cost = _one_iteration(scenario, method, seed)
            except (PlanError, StatsError) as exc:
                raise ScenarioError(f"method {method.name}: {exc}") from exc
            if estimate.covers(truth):
                covered += 1
            widths += estimate.width
        rows.append(
            AccuracyRow(
                method=method.name,
                cost=cost,
                accuracy=covered / scenario.iterations,
                mean_ci_width=widths / scenario.iterations,
                iterations=scenario.iterations,
            )
        )
    return rows


# -- best CUI selection ---------------------------------------------------------


def select_best_cui(
    space: ConfigSpace,
    dc_sample: Sequence[Configuration],
    direction: str = "min",
    model: SyntheticModel | None = None,
    log: RunLog | None = None,
    aggregate: str = "median",
) -> SelectionResult:
    """Pick the CUI level whose average overall effect is best over the sample.

    Exactly one of ``model`` (noise-free responses) or ``log`` (measured
    values) supplies the effects. Ties go to the earliest declared level
    and are flagged.
    """
    if direction not in ("min", "max"):
        raise ScenarioError(f"direction must be 'min' or 'max', got {direction!r}")
    if (model is None) == (log is None):
        raise ScenarioError("provide exactly one of model or log")
    if not dc_sample:
        raise ScenarioError("dc_sample must be nonempty")
    cui = space.cui_factor
    collapsed = collapse(log, aggregate).values if log is not None else None
    means: dict[str, float] = {}
    for level in cui.labels():
        values = []
        for dc in dc_sample:
            cfg = dc.extended({cui.name: level})
            if not space.is_valid(cfg.assignment):
                raise ScenarioError(f"completion {cui.name}={level!r} is excluded for dc {dc.id}")
            if model is not None:
                values.append(model.response(cfg))
            else:
                assert collapsed is not None
                if cfg.id not in collapsed:
                    raise ScenarioError(
                        f"incomplete coverage: CUI level {level!r} has no measurement for dc {dc.id}"
                    )
                values.append(collapsed[cfg.id])
        means[level] = sample_mean(values)
    better = min if direction == "min" else max
    best_value = better(means.values())
    winners = [lab for lab in cui.labels() if means[lab] == best_value]
    return SelectionResult(
        level=winners[0], tied=len(winners) > 1, means=means, direction=direction
    )


# -- fixed-configuration pitfall -------------------------------------------------


def pitfall_demo(scenario: Scenario, fixed_dc: Configuration) -> PitfallReport:
    """Compare the single-configuration estimate against the true effect.

    Flags a sign disagreement: the failure mode of benchmarking a component
    under one fixed context when interactions are present.
    """
    side_a, side_ref = scenario.space.pair_with(fixed_dc, scenario.cui_a, scenario.cui_ref)
    fixed = scenario.model.response(side_a) - scenario.model.response(side_ref)
    truth = ground_truth(scenario)
    return PitfallReport(
        fixed_estimate=fixed,
        ground_truth=truth,
        sign_flip=fixed * truth < 0,
        cui_a=scenario.cui_a,
        cui_ref=scenario.cui_ref,
    )


# -- variability -----------------------------------------------------------------


def variability(values: Sequence[float]) -> VariabilityReport:
    """Range-based spread of repeated overall-effect readings."""
    if not values:
        raise ScenarioError("variability: empty input")
    lo, hi = min(values), max(values)
    mean = sample_mean(values)
    if lo <= 0:
        raise ScenarioError("variability: range_over_min needs strictly positive values")
    if mean == 0:
        raise ScenarioError("variability: range_over_mean undefined for zero mean")
    return VariabilityReport(
        minimum=lo,
        maximum=hi,
        mean=mean,
        range_over_min=(hi - lo) / lo,
        range_over_mean=(hi - lo) / mean,
    )
