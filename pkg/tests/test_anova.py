"""Balanced n-way ANOVA: hand cases, structure, and oracle equivalence."""

from __future__ import annotations

import json
import math
import random

import numpy as np
import pytest

from effattr import (
    Measurement,
    StatsError,
    SyntheticBackend,
    SyntheticModel,
    anova,
    full_factorial,
    load_space,
    new_log,
    run,
)
from effattr.runner import Backend
from conftest import space_doc


class TableBackend(Backend):
    """Deterministic lookup backend for hand-constructed response tables."""

    name = "table"
    unit = "units"

    def __init__(self, fn):
        self.fn = fn

    def measure(self, trial):
        return Measurement(
            config_id=trial.config.id,
            replicate=trial.replicate,
            value=float(self.fn(trial.config.assignment, trial.replicate)),
            backend=self.name,
            wall_time=0.0,
        )


def run_anova(space, fn, r, alpha=0.01):
    plan = full_factorial(space, r=r, seed=0)
    backend = TableBackend(fn)
    log = new_log(plan, backend)
    run(plan, backend, log)
    return anova(log, plan, alpha=alpha)


def one_factor_space(levels):
    doc = {
        "factors": [
            {
                "name": "g",
                "role": "CUI",
                "levels": [{"label": lab, "value": lab} for lab in levels],
            }
        ]
    }
    return load_space(json.dumps(doc))


def two_factor_space(la, lb):
    doc = space_doc(cui_levels=tuple(f"a{i}" for i in range(la)), dc_counts=(lb,))
    return load_space(json.dumps(doc))


class TestHandCases:
    def test_one_factor_two_levels(self):
        # cells {A: (1, 1), B: (3, 3)}: grand mean 2, factor ss 4, error ss 0
        space = one_factor_space(["A", "B"])
        table = run_anova(space, lambda a, rep: 1.0 if a["g"] == "A" else 3.0, r=2)
        row = table.rows[0]
        assert row.ss == pytest.approx(4.0)
        assert row.df == 1
        assert table.error_row.ss == 0.0
        assert table.error_row.df == 2
        assert row.pct == pytest.approx(100.0)
        assert row.f_computed == math.inf and row.significant

    def test_constant_responses(self):
        space = two_factor_space(2, 3)
        table = run_anova(space, lambda a, rep: 0.1, r=2)
        assert table.total_ss == 0.0
        for row in table.rows:
            assert row.ss == 0.0
            assert row.pct == 0.0
            assert row.f_computed == 0.0
            assert not row.significant
        assert table.error_row.pct == 0.0

    def test_textbook_two_factor(self):
        # responses depend additively on both factors plus a replicate offset
        space = two_factor_space(2, 2)
        effects = {"a0": 0.0, "a1": 6.0, "w0": 0.0, "w1": 2.0}

        def fn(a, rep):
            return effects[a["cpu"]] + effects[a["w"]] + (0.5 if rep else -0.5)

        table = run_anova(space, fn, r=2, alpha=0.05)
        by_label = {row.label: row for row in table.rows}
        assert by_label["cpu"].ss == pytest.approx(72.0)  # r*L_w*2*(3^2)
        assert by_label["w"].ss == pytest.approx(8.0)
        assert by_label["cpu*w"].ss == pytest.approx(0.0)
        assert table.error_row.ss == pytest.approx(8 * 0.25)


class TestStructure:
    def test_five_factor_row_count(self):
        space = load_space(json.dumps(space_doc(dc_counts=(2, 2, 2, 2))))
        rng = random.Random(0)
        table = run_anova(space, lambda a, rep: rng.random(), r=2)
        assert len(table.rows) == 31
        orders = [len(row.component) for row in table.rows]
        assert orders == [1] * 5 + [2] * 10 + [3] * 10 + [4] * 5 + [5]

    def test_component_plus_error_equals_total(self):
        space = load_space(json.dumps(space_doc(dc_counts=(3, 4))))
        rng = random.Random(7)
        table = run_anova(space, lambda a, rep: rng.gauss(10, 3), r=3)
        total = sum(row.ss for row in table.rows) + table.error_row.ss
        assert total == pytest.approx(table.total_ss, rel=1e-9)
        pct = sum(row.pct for row in table.rows) + table.error_row.pct
        assert pct == pytest.approx(100.0, abs=1e-6)

    def test_degrees_of_freedom(self):
        space = load_space(json.dumps(space_doc(dc_counts=(3,))))
        table = run_anova(space, lambda a, rep: random.random(), r=2)
        by_label = {row.label: row for row in table.rows}
        assert by_label["cpu"].df == 1
        assert by_label["w"].df == 2
        assert by_label["cpu*w"].df == 2
        assert table.error_row.df == 6 * 1

    def test_r1_rejected(self, small_space, plain_model):
        plan = full_factorial(small_space, r=1, seed=0)
        backend = SyntheticBackend(plain_model)
        log = new_log(plan, backend)
        run(plan, backend, log)
        with pytest.raises(StatsError, match="error term"):
            anova(log, plan)

    def test_unbalanced_rejected(self, small_space, plain_model):
        plan = full_factorial(small_space, r=2, seed=0)
        backend = SyntheticBackend(plain_model)
        log = new_log(plan, backend)
        run(plan, backend, log)
        log._records.pop(next(iter(log._records)))
        with pytest.raises(StatsError, match="unbalanced"):
            anova(log, plan)

    def test_wrong_plan_method_rejected(self, small_space, plain_model):
        from effattr import paired_plan, simple_random_sample

        dc = simple_random_sample(small_space, ("DC",), 2, seed=0)
        plan = paired_plan(small_space, "ht_on", "ht_off", dc, r=2)
        backend = SyntheticBackend(plain_model)
        log = new_log(plan, backend)
        run(plan, backend, log)
        with pytest.raises(StatsError, match="full_factorial"):
            anova(log, plan)


def oracle_two_factor(y):
    """Brute-force two-way decomposition from marginal means (independent path)."""
    la, lb, r = y.shape
    grand = y.mean()
    ya = y.mean(axis=(1, 2))
    yb = y.mean(axis=(0, 2))
    yab = y.mean(axis=2)
    ss_a = r * lb * ((ya - grand) ** 2).sum()
    ss_b = r * la * ((yb - grand) ** 2).sum()
    ss_ab = r * ((yab - ya[:, None] - yb[None, :] + grand) ** 2).sum()
    ss_err = ((y - yab[..., None]) ** 2).sum()
    return ss_a, ss_b, ss_ab, ss_err


class TestOracleEquivalence:
    def test_random_two_factor_designs(self):
        rng = random.Random(99)
        for trial in range(50):
            la = rng.randint(2, 4)
            lb = rng.randint(2, 4)
            r = rng.randint(2, 3)
            space = two_factor_space(la, lb)
            y = np.array(
                [[[rng.gauss(0, 5) for _ in range(r)] for _ in range(lb)] for _ in range(la)]
            )
            idx = {f"a{i}": i for i in range(la)}
            idx.update({f"w{j}": j for j in range(lb)})

            def fn(a, rep, y=y, idx=idx):
                return y[idx[a["cpu"]], idx[a["w"]], rep]

            table = run_anova(space, fn, r=r)
            ss_a, ss_b, ss_ab, ss_err = oracle_two_factor(y)
            by_label = {row.label: row for row in table.rows}
            assert by_label["cpu"].ss == pytest.approx(ss_a, rel=1e-9, abs=1e-9)
            assert by_label["w"].ss == pytest.approx(ss_b, rel=1e-9, abs=1e-9)
            assert by_label["cpu*w"].ss == pytest.approx(ss_ab, rel=1e-9, abs=1e-9)
            assert table.error_row.ss == pytest.approx(ss_err, rel=1e-9, abs=1e-9)


class TestPlantedEffects:
    def test_recovers_main_effect_shares(self):
        # zero-interaction model with known per-factor variance contributions
        space = load_space(json.dumps(space_doc(cui_levels=("c0", "c1", "c2"), dc_counts=(4, 5))))
        rng = random.Random(11)
        mains = {}
        for factor in space.factors:
            for lab in factor.labels():
                mains[(factor.name, lab)] = rng.uniform(-6, 6)
        model = SyntheticModel(baseline=50.0, main_effects=mains, noise_sd=0.05)
        plan = full_factorial(space, r=3, seed=5)
        backend = SyntheticBackend(model)
        log = new_log(plan, backend)
        run(plan, backend, log)
        table = anova(log, plan, alpha=0.01)

        def analytic_var(factor):
            effects = [mains[(factor.name, lab)] for lab in factor.labels()]
            mean = sum(effects) / len(effects)
            return sum((e - mean) ** 2 for e in effects) / len(effects)

        variances = {f.name: analytic_var(f) for f in space.factors}
        total = sum(variances.values())
        by_label = {row.label: row for row in table.rows}
        for name, var in variances.items():
            assert by_label[name].pct == pytest.approx(100 * var / total, abs=2.0)
            assert by_label[name].significant
