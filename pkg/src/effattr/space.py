"""Configuration space model: factors, levels, validity exclusions, enumeration.

A space declares one factor under investigation (role ``CUI``) plus the
design-context factors (role ``DC``). Exclusions are partial assignments;
a configuration is invalid if it extends any of them.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from ._util import assignment_id, digest

ROLE_CUI = "CUI"
ROLE_DC = "DC"
ALL_ROLES = (ROLE_CUI, ROLE_DC)

DEFAULT_ENUMERATION_BUDGET = 1_000_000


class SpaceError(ValueError):
    """Raised for schema violations and invalid space definitions."""


@dataclass(frozen=True)
class Level:
    """One discrete setting of a factor.

    ``value`` is an opaque payload handed to runners (flag text, a path,
    a thread count rendered as text); the space model never interprets it.
    """

    label: str
    value: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.label:
            raise SpaceError("level label must be nonempty")
        if self.weight < 0:
            raise SpaceError(f"level {self.label!r}: weight must be >= 0")


@dataclass(frozen=True)
class Factor:
    """A named factor with ordered levels and a CUI/DC role."""

    name: str
    role: str
    levels: tuple[Level, ...]
    stratum: bool = False

    def __post_init__(self) -> None:
        if self.role not in ALL_ROLES:
            raise SpaceError(f"factor {self.name!r}: role must be CUI or DC, got {self.role!r}")
        if not self.levels:
            raise SpaceError(f"factor {self.name!r}: needs at least one level")
        seen: set[str] = set()
        for lv in self.levels:
            if lv.label in seen:
                raise SpaceError(f"factor {self.name!r}: duplicate level label {lv.label!r}")
            seen.add(lv.label)
        total = sum(lv.weight for lv in self.levels)
        if total <= 0:
            raise SpaceError(f"factor {self.name!r}: at least one level must have weight > 0")

    def labels(self) -> tuple[str, ...]:
        return tuple(lv.label for lv in self.levels)

    def level(self, label: str) -> Level:
        for lv in self.levels:
            if lv.label == label:
                return lv
        raise SpaceError(f"factor {self.name!r}: no level {label!r}")

    def normalized_weights(self) -> dict[str, float]:
        """Level weights rescaled to sum to 1."""
        total = sum(lv.weight for lv in self.levels)
        return {lv.label: lv.weight / total for lv in self.levels}


@dataclass(frozen=True)
class Configuration:
    """A total assignment over some set of factors, with a canonical id."""

    assignment: Mapping[str, str]
    id: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "assignment", dict(self.assignment))
        object.__setattr__(self, "id", assignment_id(dict(self.assignment)))

    def extended(self, more: Mapping[str, str]) -> "Configuration":
        merged = dict(self.assignment)
        merged.update(more)
        return Configuration(merged)


def _matches_exclusion(assignment: Mapping[str, str], exclusion: Mapping[str, str]) -> bool:
    # A config extends an exclusion iff every excluded factor is assigned
    # exactly the excluded label. Factors absent from the assignment never match.
    return all(assignment.get(f) == lab for f, lab in exclusion.items())


@dataclass(frozen=True)
class ConfigSpace:
    """Validated, immutable configuration space."""

    factors: tuple[Factor, ...]
    exclusions: tuple[Mapping[str, str], ...] = ()

    def __post_init__(self) -> None:
        names = [f.name for f in self.factors]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SpaceError(f"duplicate factor names: {dupes}")
        cui = [f for f in self.factors if f.role == ROLE_CUI]
        if len(cui) != 1:
            raise SpaceError(f"exactly one factor must have role CUI, found {len(cui)}")
        by_name = {f.name: f for f in self.factors}
        for i, excl in enumerate(self.exclusions):
            if not excl:
                raise SpaceError(f"exclusions[{i}]: empty exclusion would void the space")
            for fname, label in excl.items():
                if fname not in by_name:
                    raise SpaceError(f"exclusions[{i}]: unknown factor {fname!r}")
                if label not in by_name[fname].labels():
                    raise SpaceError(f"exclusions[{i}].{fname}: unknown level {label!r}")
        if self.cartesian_size() < 1:
            raise SpaceError("empty space: exclusions cover every configuration")

    # -- lookup ---------------------------------------------------------

    def factor(self, name: str) -> Factor:
        for f in self.factors:
            if f.name == name:
                return f
        raise SpaceError(f"no factor named {name!r}")

    @property
    def cui_factor(self) -> Factor:
        return next(f for f in self.factors if f.role == ROLE_CUI)

    def factors_for(self, roles: Iterable[str]) -> tuple[Factor, ...]:
        roleset = set(roles)
        bad = roleset - set(ALL_ROLES)
        if bad:
            raise SpaceError(f"unknown roles: {sorted(bad)}")
        if not roleset:
            raise SpaceError("roles must be nonempty")
        return tuple(f for f in self.factors if f.role in roleset)

    def is_valid(self, assignment: Mapping[str, str]) -> bool:
        return not any(_matches_exclusion(assignment, e) for e in self.exclusions)

    # -- counting -------------------------------------------------------

    def cartesian_size(self, roles: Iterable[str] = ALL_ROLES) -> int:
        """Number of valid configurations over the selected roles."""
        factors = self.factors_for(roles)
        fnames = {f.name for f in factors}
        counts = {f.name: len(f.levels) for f in factors}
        total = 1
        for f in factors:
            total *= len(f.levels)
        # Only exclusions entirely within the selected roles can match a
        # configuration restricted to those roles.
        relevant = [dict(e) for e in self.exclusions if set(e) <= fnames]
        return total - _excluded_count(relevant, counts)

    # -- enumeration ----------------------------------------------------

    def enumerate_configs(
        self,
        roles: Iterable[str] = ALL_ROLES,
        budget: int = DEFAULT_ENUMERATION_BUDGET,
    ) -> Iterator[Configuration]:
        """Valid configurations in lexicographic (factor order, level order) order."""
        factors = self.factors_for(roles)
        size = self.cartesian_size(roles)
        if size > budget:
            raise SpaceError(f"enumeration budget exceeded: {size} configurations > budget {budget}")
        names = [f.name for f in factors]
        for combo in itertools.product(*(f.labels() for f in factors)):
            assignment = dict(zip(names, combo))
            if self.is_valid(assignment):
                yield Configuration(assignment)

    # -- pairing --------------------------------------------------------

    def pair_with(
        self, dc_config: Configuration, cui_level_a: str, cui_level_b: str
    ) -> tuple[Configuration, Configuration]:
        """Complete a DC configuration with two CUI levels, checking validity."""
        cui = self.cui_factor
        for lab in (cui_level_a, cui_level_b):
            cui.level(lab)  # raises on unknown label
        dc_names = {f.name for f in self.factors if f.role == ROLE_DC}
        missing = dc_names - set(dc_config.assignment)
        if missing:
            raise SpaceError(f"dc configuration missing factors: {sorted(missing)}")
        side_a = dc_config.extended({cui.name: cui_level_a})
        side_b = dc_config.extended({cui.name: cui_level_b})
        for side, cfg, lab in (("a", side_a, cui_level_a), ("b", side_b, cui_level_b)):
            if not self.is_valid(cfg.assignment):
                raise SpaceError(
                    f"pairing error on side {side}: completion with {cui.name}={lab!r} is excluded"
                )
        return side_a, side_b

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "factors": [
                {
                    "name": f.name,
                    "role": f.role,
                    "stratum": f.stratum,
                    "levels": [
                        {"label": lv.label, "value": lv.value, "weight": lv.weight}
                        for lv in f.levels
                    ],
                }
                for f in self.factors
            ],
            "exclusions": [dict(e) for e in self.exclusions],
        }

    @property
    def space_digest(self) -> str:
        return digest(self.to_dict())


def _excluded_count(exclusions: list[dict[str, str]], level_counts: dict[str, int]) -> int:
    """Size of the union of exclusion extensions, by inclusion-exclusion.

    Branches over exclusions; incompatible partial assignments prune the
    whole subtree (their intersection is empty).
    """

    def extension_size(partial: dict[str, str]) -> int:
        size = 1
        for name, count in level_counts.items():
            if name not in partial:
                size *= count
        return size

    def recurse(idx: int, partial: dict[str, str]) -> int:
        total = 0
        for i in range(idx, len(exclusions)):
            merged = dict(partial)
            compatible = True
            for f, lab in exclusions[i].items():
                if merged.get(f, lab) != lab:
                    compatible = False
                    break
                merged[f] = lab
            if not compatible:
                continue
            total += extension_size(merged) - recurse(i + 1, merged)
        return total

    return recurse(0, {})


# -- loading -------------------------------------------------------------


def load_space(document: str | Mapping[str, Any]) -> ConfigSpace:
    """Parse and validate a space document (JSON text or an already-parsed dict)."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SpaceError(f"space document is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise SpaceError("space document: top level must be an object")
    unknown = set(doc) - {"factors", "exclusions"}
    if unknown:
        raise SpaceError(f"space document: unknown keys {sorted(unknown)}")
    raw_factors = doc.get("factors")
    if not isinstance(raw_factors, Sequence) or not raw_factors:
        raise SpaceError("factors: must be a nonempty array")
    factors = []
    for i, rf in enumerate(raw_factors):
        path = f"factors[{i}]"
        if not isinstance(rf, Mapping):
            raise SpaceError(f"{path}: must be an object")
        name = rf.get("name")
        if not isinstance(name, str) or not name:
            raise SpaceError(f"{path}.name: must be a nonempty string")
        role = rf.get("role")
        if role not in ALL_ROLES:
            raise SpaceError(f"{path}.role: must be 'CUI' or 'DC', got {role!r}")
        raw_levels = rf.get("levels")
        if not isinstance(raw_levels, Sequence) or not raw_levels:
            raise SpaceError(f"{path}.levels: must be a nonempty array")
        levels = []
        for j, rl in enumerate(raw_levels):
            lpath = f"{path}.levels[{j}]"
            if not isinstance(rl, Mapping):
                raise SpaceError(f"{lpath}: must be an object")
            label = rl.get("label")
            if not isinstance(label, str) or not label:
                raise SpaceError(f"{lpath}.label: must be a nonempty string")
            value = rl.get("value", label)
            if not isinstance(value, str):
                raise SpaceError(f"{lpath}.value: must be a string")
            weight = rl.get("weight", 1.0)
            if not isinstance(weight, (int, float)) or isinstance(weight, bool):
                raise SpaceError(f"{lpath}.weight: must be a number")
            if weight < 0:
                raise SpaceError(f"{lpath}.weight: must be >= 0")
            levels.append(Level(label=label, value=value, weight=float(weight)))
        try:
            factors.append(
                Factor(name=name, role=role, levels=tuple(levels), stratum=bool(rf.get("stratum", False)))
            )
        except SpaceError as exc:
            raise SpaceError(f"{path}: {exc}") from exc
    raw_exclusions = doc.get("exclusions", [])
    if not isinstance(raw_exclusions, Sequence):
        raise SpaceError("exclusions: must be an array")
    exclusions = []
    for i, re_ in enumerate(raw_exclusions):
        if not isinstance(re_, Mapping) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in re_.items()
        ):
            raise SpaceError(f"exclusions[{i}]: must be an object mapping factor name to level label")
        exclusions.append(dict(re_))
    return ConfigSpace(factors=tuple(factors), exclusions=tuple(exclusions))


def load_space_file(path: str | Path) -> ConfigSpace:
    return load_space(Path(path).read_text(encoding="utf-8"))
