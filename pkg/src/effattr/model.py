"""Synthetic response model: additive main effects, interactions, Gaussian noise.

Serves as the measurement backend for studies where the true effect must be
known: the noise-free effect difference between two CUI levels under the
declared DC level weights is available in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .space import ConfigSpace, Configuration, ROLE_DC, SpaceError


class ModelError(ValueError):
    """Raised for malformed model documents."""


@dataclass
class SyntheticModel:
    """response = baseline + sum(main effects) + sum(interaction effects) + noise.

    Effects for unnamed (factor, level) pairs default to 0. An interaction
    applies when every one of its terms is present in the configuration.
    Instances are immutable by convention; the response cache is the only
    mutable state and is safe under the GIL.
    """

    baseline: float = 0.0
    main_effects: Mapping[tuple[str, str], float] = field(default_factory=dict)
    interactions: tuple[tuple[tuple[tuple[str, str], ...], float], ...] = ()
    noise_sd: float = 0.0
    unit: str = "units"
    _cache: dict[str, float] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.noise_sd < 0:
            raise ModelError("noise_sd must be >= 0")
        self.main_effects = dict(self.main_effects)

    def response(self, config: Configuration) -> float:
        """Exact noise-free response for a total configuration."""
        cached = self._cache.get(config.id)
        if cached is not None:
            return cached
        assignment = config.assignment
        value = self.baseline
        for fname, label in assignment.items():
            value += self.main_effects.get((fname, label), 0.0)
        for terms, effect in self.interactions:
            if all(assignment.get(f) == lab for f, lab in terms):
                value += effect
        self._cache[config.id] = value
        return value

    def closed_form_delta(self, space: ConfigSpace, cui_a: str, cui_ref: str) -> float:
        """Noise-free effect difference a - ref averaged over the DC weights.

        Without exclusions this is a direct coefficient sum: the main-effect
        difference plus each CUI-involving interaction weighted by the
        product of its DC levels' normalized weights. With exclusions the
        product distribution no longer factorizes, so the DC space is
        enumerated and weight-averaged instead; both paths stay independent
        of the plan/run/collapse pipeline.
        """
        cui = space.cui_factor
        for lab in (cui_a, cui_ref):
            cui.level(lab)
        if not space.exclusions:
            weights = {f.name: f.normalized_weights() for f in space.factors if f.role == ROLE_DC}
            delta = self.main_effects.get((cui.name, cui_a), 0.0) - self.main_effects.get(
                (cui.name, cui_ref), 0.0
            )
            for terms, effect in self.interactions:
                terms_map = dict(terms)
                if len(terms_map) != len(terms):
                    continue  # repeated factor: can never match a configuration
                cui_label = terms_map.pop(cui.name, None)
                if cui_label not in (cui_a, cui_ref):
                    continue  # absent or a third level: cancels or never differs
                prob = 1.0
                for fname, label in terms_map.items():
                    prob *= weights[fname].get(label, 0.0)
                delta += effect * prob if cui_label == cui_a else -effect * prob
            return delta
        total_w = 0.0
        acc = 0.0
        for dc in space.enumerate_configs(roles=(ROLE_DC,)):
            w = 1.0
            for fname, label in dc.assignment.items():
                w *= space.factor(fname).normalized_weights()[label]
            side_a, side_ref = space.pair_with(dc, cui_a, cui_ref)
            acc += w * (self.response(side_a) - self.response(side_ref))
            total_w += w
        if total_w <= 0:
            raise SpaceError("DC space carries no weight")
        return acc / total_w

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "baseline": self.baseline,
            "noise_sd": self.noise_sd,
            "unit": self.unit,
            "main_effects": [
                {"factor": f, "level": lab, "effect": e}
                for (f, lab), e in self.main_effects.items()
            ],
            "interactions": [
                {"terms": dict(terms), "effect": e} for terms, e in self.interactions
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "SyntheticModel":
        if not isinstance(doc, Mapping):
            raise ModelError("model document: top level must be an object")
        mains: dict[tuple[str, str], float] = {}
        for i, rec in enumerate(doc.get("main_effects", [])):
            try:
                key = (rec["factor"], rec["level"])
                effect = float(rec["effect"])
            except (KeyError, TypeError) as exc:
                raise ModelError(f"main_effects[{i}]: needs factor, level, effect") from exc
            if key in mains:
                raise ModelError(f"main_effects[{i}]: duplicate entry for {key}")
            mains[key] = effect
        interactions = []
        for i, rec in enumerate(doc.get("interactions", [])):
            try:
                terms = rec["terms"]
                effect = float(rec["effect"])
            except (KeyError, TypeError) as exc:
                raise ModelError(f"interactions[{i}]: needs terms, effect") from exc
            if not isinstance(terms, Mapping) or not terms:
                raise ModelError(f"interactions[{i}].terms: must be a nonempty object")
            interactions.append((tuple(sorted(terms.items())), effect))
        return cls(
            baseline=float(doc.get("baseline", 0.0)),
            main_effects=mains,
            interactions=tuple(interactions),
            noise_sd=float(doc.get("noise_sd", 0.0)),
            unit=str(doc.get("unit", "units")),
        )


def load_model(document: str | Mapping[str, Any]) -> SyntheticModel:
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelError(f"model document is not valid JSON: {exc}") from exc
    return SyntheticModel.from_dict(document)


def load_model_file(path: str | Path) -> SyntheticModel:
    return load_model(Path(path).read_text(encoding="utf-8"))
