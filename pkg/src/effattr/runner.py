"""Plan execution against synthetic or external backends, with durable run logs.

Logs are append-only JSON lines keyed by (configuration id, replicate);
re-running a completed plan appends nothing, so interrupted runs resume
for free. Synthetic measurements are seeded per trial, making logs
independent of execution order and parallelism.
"""

from __future__ import annotations

import json
import os
import random
import shlex
import statistics
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, Iterable, Mapping

from .design import DesignPlan, Trial, plan_digest
from .model import SyntheticModel
from .space import ConfigSpace


class RunError(ValueError):
    """Raised for log/plan mismatches and malformed run logs."""


@dataclass(frozen=True)
class Measurement:
    config_id: str
    replicate: int
    value: float | None
    backend: str
    wall_time: float
    status: str = "ok"
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.status == "ok":
            if self.value is None or not (self.value == self.value and abs(self.value) != float("inf")):
                raise RunError(f"measurement {self.config_id}/{self.replicate}: value must be finite")
        elif self.status != "failed":
            raise RunError(f"measurement status must be ok or failed, got {self.status!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_id": self.config_id,
            "replicate": self.replicate,
            "value": self.value,
            "backend": self.backend,
            "wall_time": self.wall_time,
            "status": self.status,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class LogHeader:
    space_digest: str
    plan_digest: str
    backend: str
    unit: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "runlog",
            "space_digest": self.space_digest,
            "plan_digest": self.plan_digest,
            "backend": self.backend,
            "unit": self.unit,
        }


class RunLog:
    """Header plus append-only measurements, optionally bound to a JSONL file."""

    def __init__(self, header: LogHeader, path: str | Path | None = None, _existing: bool = False):
        self.header = header
        self.path = Path(path) if path is not None else None
        self._records: dict[tuple[str, int], Measurement] = {}
        self._fh: IO[str] | None = None
        if self.path is not None and not _existing:
            self._fh = open(self.path, "w", encoding="utf-8")
            self._fh.write(json.dumps(self.header.to_dict(), sort_keys=True) + "\n")
            self.flush()

    @classmethod
    def load(cls, path: str | Path) -> "RunLog":
        path = Path(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines:
            raise RunError(f"run log {path} is empty")
        try:
            head = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise RunError(f"run log {path}: bad header line: {exc}") from exc
        if head.get("kind") != "runlog":
            raise RunError(f"run log {path}: first line is not a runlog header")
        log = cls(
            LogHeader(
                space_digest=head["space_digest"],
                plan_digest=head["plan_digest"],
                backend=head["backend"],
                unit=head["unit"],
            ),
            path=path,
            _existing=True,
        )
        for i, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                m = Measurement(
                    config_id=rec["config_id"],
                    replicate=int(rec["replicate"]),
                    value=rec["value"],
                    backend=rec["backend"],
                    wall_time=float(rec["wall_time"]),
                    status=rec["status"],
                    reason=rec.get("reason"),
                )
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise RunError(f"run log {path}:{i}: malformed record: {exc}") from exc
            log._add(m, write=False)
        log._fh = open(path, "a", encoding="utf-8")
        return log

    def _add(self, m: Measurement, write: bool) -> None:
        key = (m.config_id, m.replicate)
        if key in self._records:
            raise RunError(f"duplicate measurement for {key}")
        self._records[key] = m
        if write and self._fh is not None:
            self._fh.write(json.dumps(m.to_dict(), sort_keys=True) + "\n")

    def append(self, m: Measurement) -> None:
        self._add(m, write=True)

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self.flush()
            self._fh.close()
            self._fh = None

    def __contains__(self, key: tuple[str, int]) -> bool:
        return key in self._records

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list[Measurement]:
        return list(self._records.values())

    def ok_values(self) -> dict[str, list[float]]:
        out: dict[str, list[float]] = {}
        for m in self._records.values():
            if m.status == "ok":
                out.setdefault(m.config_id, []).append(m.value)  # type: ignore[arg-type]
        return out

    def failed_count(self) -> int:
        return sum(1 for m in self._records.values() if m.status == "failed")


def new_log(plan: DesignPlan, backend: "Backend", path: str | Path | None = None) -> RunLog:
    header = LogHeader(
        space_digest=plan.space_digest,
        plan_digest=plan_digest(plan),
        backend=backend.name,
        unit=backend.unit,
    )
    return RunLog(header, path=path)


# -- backends --------------------------------------------------------------


class Backend:
    name: str
    unit: str

    def measure(self, trial: Trial) -> Measurement:  # pragma: no cover - interface
        raise NotImplementedError


class SyntheticBackend(Backend):
    """Pure model evaluation plus per-trial seeded Gaussian noise.

    Wall time is recorded as 0.0: there is no meaningful clock for a pure
    function, and a constant keeps equally-seeded logs byte-identical.
    """

    name = "synthetic"

    def __init__(self, model: SyntheticModel):
        self.model = model
        self.unit = model.unit

    def measure(self, trial: Trial) -> Measurement:
        value = self.model.response(trial.config)
        if self.model.noise_sd > 0:
            value += random.Random(trial.seed).gauss(0.0, self.model.noise_sd)
        return Measurement(
            config_id=trial.config.id,
            replicate=trial.replicate,
            value=value,
            backend=self.name,
            wall_time=0.0,
        )


class ExternalBackend(Backend):
    """Run a shell command template; the measurement is the last stdout line.

    Placeholders ``{factor}`` are substituted with the level's opaque value
    payload. Nonzero exit or unparseable output yields a failed measurement.
    """

    name = "external"

    def __init__(self, template: str, space: ConfigSpace, unit: str = "seconds", timeout: float | None = None):
        self.template = template
        self.space = space
        self.unit = unit
        self.timeout = timeout

    def render(self, trial: Trial) -> str:
        values = {
            fname: self.space.factor(fname).level(label).value
            for fname, label in trial.config.assignment.items()
        }
        try:
            return self.template.format(**values)
        except (KeyError, IndexError) as exc:
            raise RunError(f"command template references unknown factor: {exc}") from exc

    def measure(self, trial: Trial) -> Measurement:
        cmd = self.render(trial)
        wall = time.time()
        try:
            proc = subprocess.run(
                cmd, shell=True, capture_output=True, text=True, timeout=self.timeout
            )
        except subprocess.TimeoutExpired:
            return self._failed(trial, wall, f"timeout after {self.timeout}s: {shlex.quote(cmd)}")
        if proc.returncode != 0:
            return self._failed(trial, wall, f"exit {proc.returncode}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            return self._failed(trial, wall, "no output")
        try:
            value = float(lines[-1].strip())
        except ValueError:
            return self._failed(trial, wall, f"unparseable output {lines[-1].strip()!r}")
        return Measurement(
            config_id=trial.config.id,
            replicate=trial.replicate,
            value=value,
            backend=self.name,
            wall_time=wall,
        )

    def _failed(self, trial: Trial, wall: float, reason: str) -> Measurement:
        return Measurement(
            config_id=trial.config.id,
            replicate=trial.replicate,
            value=None,
            backend=self.name,
            wall_time=wall,
            status="failed",
            reason=reason,
        )


# -- execution ---------------------------------------------------------------


@dataclass(frozen=True)
class RunReport:
    log: RunLog
    executed: int
    skipped: int
    failed: int


def run(
    plan: DesignPlan,
    backend: Backend,
    log: RunLog,
    parallelism: int = 1,
    retry: int = 0,
) -> RunReport:
    """Execute every trial not already in the log; append in plan order.

    ``retry`` re-attempts failed measurements within this invocation before
    recording; failures already recorded in the log are never retried.
    """
    expected = plan_digest(plan)
    if log.header.plan_digest != expected:
        raise RunError(
            f"log/plan mismatch: log was created for plan {log.header.plan_digest[:12]}, "
            f"got plan {expected[:12]}"
        )
    todo: list[Trial] = []
    seen: set[tuple[str, int]] = set()
    for trial in plan.trials:
        key = (trial.config.id, trial.replicate)
        if key in seen or key in log:
            continue
        seen.add(key)
        todo.append(trial)
    skipped = len(plan.trials) - len(todo)

    def attempt(trial: Trial) -> Measurement:
        m = backend.measure(trial)
        for _ in range(retry):
            if m.status == "ok":
                break
            m = backend.measure(trial)
        return m

    failed = 0
    if parallelism > 1 and todo:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for m in pool.map(attempt, todo):
                if m.status == "failed":
                    failed += 1
                log.append(m)
    else:
        for trial in todo:
            m = attempt(trial)
            if m.status == "failed":
                failed += 1
            log.append(m)
    log.flush()
    return RunReport(log=log, executed=len(todo), skipped=skipped, failed=failed)


# -- aggregation -------------------------------------------------------------

AGGREGATE_METHODS = ("mean", "median")


def aggregate(values: Iterable[float], method: str = "median") -> float:
    """Collapse replicate measurements to one number."""
    vals = list(values)
    if not vals:
        raise RunError("aggregate: empty input")
    if method == "mean":
        return statistics.fmean(vals)
    if method == "median":
        return statistics.median(vals)
    raise RunError(f"unknown aggregation method {method!r}")


@dataclass(frozen=True)
class Collapsed:
    """Per-configuration aggregates; failed replicates excluded and counted."""

    values: Mapping[str, float]
    failed: int


def collapse(log: RunLog, method: str = "median") -> Collapsed:
    by_config = log.ok_values()
    failed_ids = {m.config_id for m in log.records if m.status == "failed"}
    dead = sorted(failed_ids - set(by_config))
    if dead:
        raise RunError(f"configurations with zero ok measurements: {dead}")
    return Collapsed(
        values={cid: aggregate(vals, method) for cid, vals in by_config.items()},
        failed=log.failed_count(),
    )
