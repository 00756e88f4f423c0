"""Runner: backends, log durability, idempotent resume, aggregation."""

from __future__ import annotations

import json

import pytest

from effattr import (
    Configuration,
    ExternalBackend,
    RunError,
    RunLog,
    SyntheticBackend,
    SyntheticModel,
    aggregate,
    collapse,
    full_factorial,
    load_space,
    new_log,
    paired_plan,
    run,
    simple_random_sample,
)
from effattr.design import Trial
from conftest import space_doc


def make_trial(assignment, replicate=0, seed=123):
    return Trial(config=Configuration(assignment), replicate=replicate, seed=seed)


class TestSyntheticBackend:
    def test_exact_model_evaluation(self, plain_model):
        backend = SyntheticBackend(plain_model)
        m = backend.measure(make_trial({"cpu": "ht_off", "w": "w0", "t": "t0"}))
        assert m.value == 12.0
        m = backend.measure(make_trial({"cpu": "ht_on", "w": "w0", "t": "t0"}))
        assert m.value == 10.0

    def test_interaction_hand_sum(self, interaction_model):
        backend = SyntheticBackend(interaction_model)
        m = backend.measure(make_trial({"cpu": "ht_off", "w": "w1", "t": "t0"}))
        assert m.value == 17.0

    def test_noise_is_seeded_per_trial(self):
        model = SyntheticModel(baseline=1.0, noise_sd=0.5)
        backend = SyntheticBackend(model)
        t1 = make_trial({"w": "w0"}, replicate=0, seed=1)
        t2 = make_trial({"w": "w0"}, replicate=1, seed=2)
        assert backend.measure(t1).value == backend.measure(t1).value
        assert backend.measure(t1).value != backend.measure(t2).value


class TestRun:
    def test_idempotent_resume(self, small_space, plain_model, tmp_path):
        dc = simple_random_sample(small_space, ("DC",), 4, seed=1)
        plan = paired_plan(small_space, "ht_off", "ht_on", dc, r=2, seed=1)
        backend = SyntheticBackend(plain_model)
        log = new_log(plan, backend, path=tmp_path / "run.jsonl")
        first = run(plan, backend, log)
        assert first.executed == 16 and first.skipped == 0
        again = run(plan, backend, log)
        assert again.executed == 0 and again.skipped == 16
        log.close()

    def test_byte_identical_logs_across_parallelism(self, small_space, tmp_path):
        model = SyntheticModel(baseline=3.0, main_effects={("cpu", "ht_off"): 1.0}, noise_sd=0.7)
        plan = full_factorial(small_space, r=3, seed=9)
        backend = SyntheticBackend(model)
        paths = []
        for i, workers in enumerate((1, 4)):
            path = tmp_path / f"log{i}.jsonl"
            log = new_log(plan, backend, path=path)
            run(plan, backend, log, parallelism=workers)
            log.close()
            paths.append(path.read_bytes())
        assert paths[0] == paths[1]

    def test_plan_digest_mismatch_rejected(self, small_space, plain_model):
        backend = SyntheticBackend(plain_model)
        plan_a = full_factorial(small_space, r=1, seed=1)
        plan_b = full_factorial(small_space, r=2, seed=1)
        log = new_log(plan_a, backend)
        with pytest.raises(RunError, match="log/plan mismatch"):
            run(plan_b, backend, log)

    def test_resume_from_file(self, small_space, plain_model, tmp_path):
        dc = simple_random_sample(small_space, ("DC",), 3, seed=2)
        plan = paired_plan(small_space, "ht_off", "ht_on", dc, r=1, seed=2)
        backend = SyntheticBackend(plain_model)
        path = tmp_path / "resume.jsonl"
        log = new_log(plan, backend, path=path)
        run(plan, backend, log)
        log.close()
        reloaded = RunLog.load(path)
        report = run(plan, backend, reloaded)
        reloaded.close()
        assert report.executed == 0


class TestAggregate:
    def test_median_order_statistic(self):
        assert aggregate([1, 2, 100], "median") == 2

    def test_mean(self):
        assert aggregate([1, 2, 100], "mean") == pytest.approx(34.333333333333336)

    def test_even_median(self):
        assert aggregate([1, 2, 3, 100], "median") == 2.5

    def test_empty_rejected(self):
        with pytest.raises(RunError, match="empty"):
            aggregate([], "median")

    def test_unknown_method_rejected(self):
        with pytest.raises(RunError, match="unknown aggregation"):
            aggregate([1.0], "mode")


class TestCollapse:
    def test_full_replicates(self, small_space, plain_model):
        plan = full_factorial(small_space, r=3, seed=0)
        backend = SyntheticBackend(plain_model)
        log = new_log(plan, backend)
        run(plan, backend, log)
        collapsed = collapse(log, "median")
        assert len(collapsed.values) == small_space.cartesian_size()
        assert collapsed.failed == 0

    def test_zero_noise_matches_model_for_any_method(self, small_space, interaction_model):
        plan = full_factorial(small_space, r=3, seed=0)
        backend = SyntheticBackend(interaction_model)
        log = new_log(plan, backend)
        run(plan, backend, log)
        by_id = {c.id: c for c in small_space.enumerate_configs()}
        for method in ("mean", "median"):
            collapsed = collapse(log, method)
            for cid, value in collapsed.values.items():
                assert value == interaction_model.response(by_id[cid])

    def test_failed_replicate_excluded_and_counted(self, small_space, plain_model):
        plan = full_factorial(small_space, r=3, seed=0)
        backend = SyntheticBackend(plain_model)
        log = new_log(plan, backend)
        run(plan, backend, log)
        target = plan.trials[0]
        log._records[(target.config.id, 0)] = type(log.records[0])(
            config_id=target.config.id,
            replicate=0,
            value=None,
            backend="synthetic",
            wall_time=0.0,
            status="failed",
            reason="injected",
        )
        collapsed = collapse(log, "mean")
        assert collapsed.failed == 1
        assert collapsed.values[target.config.id] == plain_model.response(target.config)

    def test_config_with_no_ok_measurement_rejected(self, small_space, plain_model):
        plan = full_factorial(small_space, r=1, seed=0)
        backend = SyntheticBackend(plain_model)
        log = new_log(plan, backend)
        run(plan, backend, log)
        cid = plan.trials[0].config.id
        log._records[(cid, 0)] = type(log.records[0])(
            config_id=cid,
            replicate=0,
            value=None,
            backend="synthetic",
            wall_time=0.0,
            status="failed",
            reason="injected",
        )
        with pytest.raises(RunError, match="zero ok measurements"):
            collapse(log, "mean")


class TestExternalBackend:
    def make_space(self):
        return load_space(json.dumps(space_doc(dc_counts=(2, 2))))

    def test_command_renders_level_values_and_parses_last_line(self, tmp_path):
        space = self.make_space()
        backend = ExternalBackend("echo 'starting'; echo '3.25'", space, unit="seconds")
        plan = full_factorial(space, r=1, seed=0)
        log = new_log(plan, backend, path=tmp_path / "x.jsonl")
        report = run(plan, backend, log)
        log.close()
        assert report.failed == 0
        assert all(m.value == 3.25 for m in log.records)
        assert log.header.unit == "seconds"

    def test_placeholder_substitution(self):
        space = self.make_space()
        backend = ExternalBackend("echo {w}", space)
        trial = make_trial({"cpu": "ht_on", "w": "w1", "t": "t0"})
        assert backend.render(trial) == "echo w1"

    def test_nonzero_exit_records_failed(self):
        space = self.make_space()
        backend = ExternalBackend("exit 7", space)
        m = backend.measure(make_trial({"cpu": "ht_on", "w": "w0", "t": "t0"}))
        assert m.status == "failed" and "exit 7" in m.reason

    def test_unparseable_output_records_failed(self):
        space = self.make_space()
        backend = ExternalBackend("echo not-a-number", space)
        m = backend.measure(make_trial({"cpu": "ht_on", "w": "w0", "t": "t0"}))
        assert m.status == "failed" and "unparseable" in m.reason

    def test_retry_recovers_flaky_command(self, tmp_path):
        space = self.make_space()
        flag = tmp_path / "flag"
        # fails on the first attempt, succeeds once the flag file exists
        cmd = f"if [ -f {flag} ]; then echo 1.0; else touch {flag}; exit 1; fi"
        backend = ExternalBackend(cmd, space)
        trial = make_trial({"cpu": "ht_on", "w": "w0", "t": "t0"})
        plan = full_factorial(self.make_space(), r=1, seed=0)
        assert backend.measure(trial).status == "failed"
        assert backend.measure(trial).status == "ok"

    def test_unknown_placeholder_rejected(self):
        space = self.make_space()
        backend = ExternalBackend("echo {missing}", space)
        with pytest.raises(RunError, match="unknown factor"):
            backend.render(make_trial({"cpu": "ht_on", "w": "w0", "t": "t0"}))


class TestRunLogFile:
    def test_load_round_trip(self, small_space, plain_model, tmp_path):
        plan = full_factorial(small_space, r=2, seed=4)
        backend = SyntheticBackend(plain_model)
        path = tmp_path / "log.jsonl"
        log = new_log(plan, backend, path=path)
        run(plan, backend, log)
        log.close()
        loaded = RunLog.load(path)
        loaded.close()
        assert loaded.header == log.header
        assert {(m.config_id, m.replicate): m.value for m in loaded.records} == {
            (m.config_id, m.replicate): m.value for m in log.records
        }

    def test_duplicate_key_rejected(self, small_space, plain_model):
        plan = full_factorial(small_space, r=1, seed=0)
        backend = SyntheticBackend(plain_model)
        log = new_log(plan, backend)
        m = backend.measure(plan.trials[0])
        log.append(m)
        with pytest.raises(RunError, match="duplicate measurement"):
            log.append(m)

    def test_malformed_file_rejected(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n")
        with pytest.raises(RunError, match="bad header"):
            RunLog.load(bad)
