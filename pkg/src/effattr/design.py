"""Design plans: which configurations to run, replicates, pairing and grouping.

Four strategies are provided: full factorial, 2^k r factorial (with an
optional per-stratum variant), randomized control/treatment assignment,
and paired plans that apply each design-context configuration to both
levels of the factor under investigation.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from ._util import derive_seed, digest
from .space import ConfigSpace, Configuration, ROLE_DC, SpaceError

GROUP_SINGLE = "single"
GROUP_CONTROL = "control"
GROUP_TREATMENT = "treatment"
GROUP_PAIR = "pair"

ARM_A = "a"
ARM_REF = "ref"

_2KR_MAX_REDRAWS = 32
DEFAULT_TRIAL_BUDGET = 1_000_000


class PlanError(ValueError):
    """Raised when a design plan cannot be constructed as requested."""


@dataclass(frozen=True)
class Trial:
    """One scheduled measurement: a configuration at a replicate index."""

    config: Configuration
    replicate: int
    group: str = GROUP_SINGLE
    pair_id: str | None = None
    arm: str | None = None
    seed: int = 0


@dataclass(frozen=True)
class DesignPlan:
    """Immutable, reproducible plan: identical inputs give identical plans."""

    method: str
    trials: tuple[Trial, ...]
    r: int
    master_seed: int
    space_digest: str
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @property
    def n_configs(self) -> int:
        """Configuration slots in the plan (arm configs counted per use)."""
        return len(self.trials) // self.r if self.r else 0

    @property
    def cost(self) -> int:
        """The methodology's cost metric: configuration count as reported."""
        return int(self.metadata.get("cost", self.n_configs))

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "r": self.r,
            "master_seed": self.master_seed,
            "space_digest": self.space_digest,
            "metadata": dict(self.metadata),
            "trials": [
                {
                    "assignment": dict(t.config.assignment),
                    "replicate": t.replicate,
                    "group": t.group,
                    "pair_id": t.pair_id,
                    "arm": t.arm,
                    "seed": t.seed,
                }
                for t in self.trials
            ],
        }


def plan_digest(plan: DesignPlan) -> str:
    return digest(plan.to_dict())


def plan_to_json(plan: DesignPlan) -> str:
    return json.dumps(plan.to_dict(), sort_keys=True, indent=1)


def plan_from_dict(doc: Mapping[str, Any]) -> DesignPlan:
    try:
        trials = tuple(
            Trial(
                config=Configuration(t["assignment"]),
                replicate=int(t["replicate"]),
                group=t["group"],
                pair_id=t.get("pair_id"),
                arm=t.get("arm"),
                seed=int(t["seed"]),
            )
            for t in doc["trials"]
        )
        return DesignPlan(
            method=doc["method"],
            trials=trials,
            r=int(doc["r"]),
            master_seed=int(doc["master_seed"]),
            space_digest=doc["space_digest"],
            metadata=dict(doc.get("metadata", {})),
        )
    except (KeyError, TypeError) as exc:
        raise PlanError(f"malformed plan document: {exc}") from exc


def plan_from_json(text: str) -> DesignPlan:
    try:
        return plan_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise PlanError(f"plan document is not valid JSON: {exc}") from exc


def save_plan(plan: DesignPlan, path: str | Path) -> None:
    Path(path).write_text(plan_to_json(plan), encoding="utf-8")


def load_plan(path: str | Path) -> DesignPlan:
    return plan_from_json(Path(path).read_text(encoding="utf-8"))


def _trial_seed(master_seed: int, config: Configuration, replicate: int) -> int:
    # Keyed by configuration id so reproducibility is schedule-independent.
    return derive_seed(master_seed, config.id, replicate)


# -- full factorial -------------------------------------------------------


def full_factorial(
    space: ConfigSpace,
    r: int,
    seed: int = 0,
    budget: int = DEFAULT_TRIAL_BUDGET,
) -> DesignPlan:
    """One trial per (valid configuration, replicate) over all factors."""
    if r < 1:
        raise PlanError("replicate count r must be >= 1")
    n_configs = space.cartesian_size()
    if n_configs * r > budget:
        raise PlanError(f"budget exceeded: {n_configs * r} trials > budget {budget}")
    trials = []
    for cfg in space.enumerate_configs(budget=budget):
        for rep in range(r):
            trials.append(Trial(config=cfg, replicate=rep, seed=_trial_seed(seed, cfg, rep)))
    metadata = {
        "cost": n_configs,
        "factors": [{"name": f.name, "labels": list(f.labels())} for f in space.factors],
    }
    return DesignPlan(
        method="full_factorial",
        trials=tuple(trials),
        r=r,
        master_seed=seed,
        space_digest=space.space_digest,
        metadata=metadata,
    )


# -- 2^k r factorial ------------------------------------------------------


def _validate_split(space: ConfigSpace, split: Mapping[str, Any], stratify: str | None) -> dict[str, tuple[tuple[str, ...], tuple[str, ...]]]:
    normalized: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {}
    for fname, blocks in split.items():
        factor = space.factor(fname)
        if fname == stratify:
            raise PlanError(f"factor {fname!r} cannot be both split and stratified")
        if isinstance(blocks, Mapping):
            low, high = blocks.get("low"), blocks.get("high")
        else:
            low, high = blocks
        if low is None or high is None:
            raise PlanError(f"split for {fname!r}: needs 'low' and 'high' blocks")
        low_t, high_t = tuple(low), tuple(high)
        labels = set(factor.labels())
        if not low_t or not high_t:
            raise PlanError(f"split for {fname!r}: both blocks must be nonempty")
        if set(low_t) & set(high_t):
            raise PlanError(f"split for {fname!r}: blocks overlap")
        if set(low_t) | set(high_t) != labels:
            raise PlanError(f"split for {fname!r}: blocks must cover all levels")
        normalized[fname] = (low_t, high_t)
    for factor in space.factors:
        if factor.name in normalized or factor.name == stratify:
            continue
        if len(factor.levels) > 1:
            raise PlanError(
                f"factor {factor.name!r} has {len(factor.levels)} levels but no split; "
                "only single-level factors may be omitted"
            )
    return normalized


def factorial_2kr(
    space: ConfigSpace,
    split: Mapping[str, Any],
    r: int,
    seed: int,
    stratify: str | None = None,
) -> DesignPlan:
    """2^k cells with one level drawn per factor interval, r replicates each.

    With ``stratify`` set, a full 2^k sub-design is built for every level of
    that factor (the per-stratum variant), giving levels x 2^k cells.
    """
    if r < 1:
        raise PlanError("replicate count r must be >= 1")
    blocks = _validate_split(space, split, stratify)
    split_factors = [f for f in space.factors if f.name in blocks]
    pinned = {
        f.name: f.labels()[0]
        for f in space.factors
        if f.name not in blocks and f.name != stratify and len(f.levels) == 1
    }
    k = len(split_factors)
    strata: list[tuple[str | None, dict[str, str]]]
    if stratify is None:
        strata = [(None, {})]
    else:
        sfactor = space.factor(stratify)
        strata = [(lab, {stratify: lab}) for lab in sfactor.labels()]

    trials = []
    cells = 0
    for stratum_label, stratum_assignment in strata:
        for cell_index in range(2**k):
            chosen: Configuration | None = None
            for attempt in range(_2KR_MAX_REDRAWS):
                rng = random.Random(derive_seed(seed, "2kr", stratum_label, cell_index, attempt))
                assignment = dict(pinned)
                assignment.update(stratum_assignment)
                for bit, factor in enumerate(split_factors):
                    interval = blocks[factor.name][(cell_index >> bit) & 1]
                    assignment[factor.name] = rng.choice(interval)
                if space.is_valid(assignment):
                    chosen = Configuration(assignment)
                    break
            if chosen is None:
                where = f" (stratum {stratum_label!r})" if stratum_label else ""
                raise PlanError(
                    f"2^k cell {cell_index}{where}: no valid draw after {_2KR_MAX_REDRAWS} retries"
                )
            cells += 1
            for rep in range(r):
                trials.append(
                    Trial(config=chosen, replicate=rep, seed=_trial_seed(seed, chosen, rep))
                )
    metadata = {
        "cost": cells,
        "k": k,
        "cells": cells,
        "stratify": stratify,
        "split": {fname: {"low": list(lo), "high": list(hi)} for fname, (lo, hi) in blocks.items()},
    }
    return DesignPlan(
        method="factorial_2kr",
        trials=tuple(trials),
        r=r,
        master_seed=seed,
        space_digest=space.space_digest,
        metadata=metadata,
    )


# -- sampling -------------------------------------------------------------


def _sampling_pool(
    space: ConfigSpace, roles: Iterable[str], budget: int
) -> tuple[tuple[Configuration, ...], tuple[float, ...]]:
    """Enumerated configurations and their product weights, cached per space.

    Sampling is called once per iteration in meta-evaluation loops, so the
    enumeration must not be redone each time. The cache lives on the space
    object itself (spaces are immutable after load).
    """
    key = tuple(sorted(set(roles)))
    cache = getattr(space, "_pool_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(space, "_pool_cache", cache)
    if key not in cache:
        factor_weights = {f.name: f.normalized_weights() for f in space.factors}
        configs = tuple(space.enumerate_configs(key, budget=budget))
        weights = []
        for cfg in configs:
            w = 1.0
            for fname, label in cfg.assignment.items():
                w *= factor_weights[fname][label]
            weights.append(w)
        cache[key] = (configs, tuple(weights))
    return cache[key]


def _weighted_sample(
    configs: Sequence[Configuration],
    weights: Sequence[float],
    n: int,
    rng: random.Random,
) -> list[Configuration]:
    # Exponential-keys (log u / w) selection: distribution-identical to
    # sequential weighted draws without replacement; uniform weights reduce
    # to an equiprobable subset.
    if n == 0:
        return []
    keyed = []
    positive = 0
    for idx, w in enumerate(weights):
        u = rng.random()
        while u == 0.0:
            u = rng.random()
        if w > 0:
            keyed.append((math.log(u) / w, idx))
            positive += 1
        else:
            keyed.append((-math.inf, idx))
    if n > positive:
        raise PlanError(
            f"cannot sample {n} configurations: only {positive} have positive weight"
        )
    keyed.sort(key=lambda t: (-t[0], t[1]))
    return [configs[idx] for _, idx in keyed[:n]]


def simple_random_sample(
    space: ConfigSpace,
    roles: Iterable[str],
    n: int,
    seed: int,
    budget: int = DEFAULT_TRIAL_BUDGET,
) -> list[Configuration]:
    """n distinct valid configurations drawn without replacement.

    Level weights (normalized per factor) act as sequential draw weights;
    uniform weights make every size-n subset equiprobable.
    """
    if n < 0:
        raise PlanError("sample size must be >= 0")
    configs, weights = _sampling_pool(space, roles, budget)
    if n > len(configs):
        raise PlanError(f"sample size {n} exceeds space size {len(configs)}")
    rng = random.Random(derive_seed(seed, "srs"))
    return _weighted_sample(configs, weights, n, rng)


def stratified_sample(
    space: ConfigSpace,
    stratum_factor: str,
    n: int,
    seed: int,
    budget: int = DEFAULT_TRIAL_BUDGET,
) -> list[Configuration]:
    """DC-role sample with near-equal allocation across the stratum's levels.

    Allocations differ by at most one; remainder strata are chosen by a
    seeded draw. Within a stratum, draws are simple random without
    replacement.
    """
    factor = space.factor(stratum_factor)
    if not factor.stratum:
        raise PlanError(f"factor {stratum_factor!r} is not marked as a stratum")
    if factor.role != ROLE_DC:
        raise PlanError(f"stratum factor {stratum_factor!r} must have role DC")
    labels = factor.labels()
    if n < len(labels):
        raise PlanError(f"sample size {n} is below the number of strata {len(labels)}")
    base, rem = divmod(n, len(labels))
    rng = random.Random(derive_seed(seed, "strata"))
    extra = set(rng.sample(range(len(labels)), rem))
    configs, weights = _sampling_pool(space, (ROLE_DC,), budget)
    by_stratum: dict[str, tuple[list[Configuration], list[float]]] = {
        lab: ([], []) for lab in labels
    }
    for cfg, w in zip(configs, weights):
        members, member_weights = by_stratum[cfg.assignment[stratum_factor]]
        members.append(cfg)
        member_weights.append(w)
    out: list[Configuration] = []
    for i, lab in enumerate(labels):
        alloc = base + (1 if i in extra else 0)
        members, member_weights = by_stratum[lab]
        if alloc > len(members):
            raise PlanError(
                f"stratum {lab!r}: allocation {alloc} exceeds its {len(members)} valid configurations"
            )
        stratum_rng = random.Random(derive_seed(seed, "stratum", lab))
        out.extend(_weighted_sample(members, member_weights, alloc, stratum_rng))
    return out


# -- randomized control/treatment -----------------------------------------


def rct_plan(
    space: ConfigSpace,
    cui_control: str,
    cui_treatment: str,
    n: int,
    r: int,
    seed: int,
    budget: int = DEFAULT_TRIAL_BUDGET,
) -> DesignPlan:
    """Split n sampled DC configurations 1:1 into control and treatment arms."""
    if r < 1:
        raise PlanError("replicate count r must be >= 1")
    if n % 2 != 0:
        raise PlanError(f"rct sample size must be even, got {n}")
    cui = space.cui_factor
    for lab in (cui_control, cui_treatment):
        cui.level(lab)
    sample = simple_random_sample(space, (ROLE_DC,), n, seed=derive_seed(seed, "rct-sample"), budget=budget)
    rng = random.Random(derive_seed(seed, "rct-shuffle"))
    rng.shuffle(sample)
    half = n // 2
    trials = []
    for group, cui_label, dcs in (
        (GROUP_CONTROL, cui_control, sample[:half]),
        (GROUP_TREATMENT, cui_treatment, sample[half:]),
    ):
        for dc in dcs:
            cfg = dc.extended({cui.name: cui_label})
            if not space.is_valid(cfg.assignment):
                raise PlanError(
                    f"{group} completion with {cui.name}={cui_label!r} is excluded for dc {dc.id}"
                )
            for rep in range(r):
                trials.append(
                    Trial(config=cfg, replicate=rep, group=group, seed=_trial_seed(seed, cfg, rep))
                )
    metadata = {"cost": n, "n": n, "cui_control": cui_control, "cui_treatment": cui_treatment}
    return DesignPlan(
        method="rct",
        trials=tuple(trials),
        r=r,
        master_seed=seed,
        space_digest=space.space_digest,
        metadata=metadata,
    )


# -- paired ---------------------------------------------------------------


def paired_plan(
    space: ConfigSpace,
    cui_a: str,
    cui_ref: str,
    dc_sample: Sequence[Configuration],
    r: int,
    seed: int = 0,
    stratum: str | None = None,
) -> DesignPlan:
    """Apply every DC configuration to both CUI levels, arms adjacent in order.

    ``stratum`` records how the sample was stratified; it is audit metadata
    only (the sample itself is taken by the caller).
    """
    if r < 1:
        raise PlanError("replicate count r must be >= 1")
    if len({dc.id for dc in dc_sample}) != len(dc_sample):
        raise PlanError("dc_sample contains duplicate configurations; pair ids must be unique")
    trials = []
    for dc in dc_sample:
        try:
            side_a, side_ref = space.pair_with(dc, cui_a, cui_ref)
        except SpaceError as exc:
            raise PlanError(str(exc)) from exc
        for rep in range(r):
            trials.append(
                Trial(
                    config=side_a,
                    replicate=rep,
                    group=GROUP_PAIR,
                    pair_id=dc.id,
                    arm=ARM_A,
                    seed=_trial_seed(seed, side_a, rep),
                )
            )
            trials.append(
                Trial(
                    config=side_ref,
                    replicate=rep,
                    group=GROUP_PAIR,
                    pair_id=dc.id,
                    arm=ARM_REF,
                    seed=_trial_seed(seed, side_ref, rep),
                )
            )
    metadata = {
        "cost": len(dc_sample),
        "n_pairs": len(dc_sample),
        "cui_a": cui_a,
        "cui_ref": cui_ref,
        "stratum": stratum,
    }
    return DesignPlan(
        method="paired",
        trials=tuple(trials),
        r=r,
        master_seed=seed,
        space_digest=space.space_digest,
        metadata=metadata,
    )
