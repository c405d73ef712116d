"""Run report (JSON) and per-instance optimization traces (CSV)."""

import csv
import json
import logging
import os
import time
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

import jsonschema
import pytz

from geometry.errors import InvalidInput
from layout.optimizer import EpochRecord, OptimTrace

SCHEMA_PATH = Path(__file__).with_name("run_report.schema.json")


class RunReport:
    """Accumulates everything a run did; written once at the end as run_report.json."""

    def __init__(self, command: str, arguments: Dict[str, Any], seed: int,
                 logger: Optional[logging.Logger] = None):
        self.logger = logger or logging.getLogger(__name__)
        self.output_dir: Optional[Path] = None
        self.log_dir: Optional[str] = None
        self.data: Dict[str, Any] = {
            "command": command,
            "arguments": {k: _jsonable(v) for k, v in arguments.items()},
            "seed": seed,
            "started_at": datetime.now(pytz.UTC).isoformat(),
            "finished_at": None,
            "status": "running",
            "exit_code": None,
            "error": None,
            "timings": {},
            "instances": [],
            "skipped": [],
            "metrics": {},
            "outputs": [],
        }

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.data["timings"][name] = self.data["timings"].get(name, 0.0) + elapsed
            self.logger.info(f"[{self.data['command']}] stage {name} took {elapsed:.2f}s")

    def add_instance(self, instance: str, trace: OptimTrace, extra: Optional[Dict[str, Any]] = None) -> None:
        best = trace.best
        entry = {"instance": instance, "initial_loss": trace.initial_loss, "best_epoch": best.epoch,
                 "best_loss": best.loss, "pose": best.pose.to_dict()}
        entry.update(extra or {})
        self.data["instances"].append(entry)

    def skip(self, instance: str, reason: str) -> None:
        self.logger.warning(f"[{self.data['command']}] [{instance}] skipped: {reason}")
        self.data["skipped"].append({"instance": instance, "reason": reason})

    def add_metrics(self, metrics: Dict[str, Any]) -> None:
        self.data["metrics"].update({k: _jsonable(v) for k, v in metrics.items()})

    def add_output(self, path) -> None:
        self.data["outputs"].append(str(path))

    def finish(self, exit_code: int, error: Optional[str] = None) -> None:
        self.data["finished_at"] = datetime.now(pytz.UTC).isoformat()
        self.data["exit_code"] = exit_code
        self.data["status"] = "ok" if exit_code == 0 else "failed"
        self.data["error"] = error

    def write(self, directory) -> Path:
        os.makedirs(directory, exist_ok=True)
        path = Path(directory) / "run_report.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.data, f, indent=2)
        return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


def validate_report(data: Dict[str, Any], schema_path: Path = SCHEMA_PATH) -> None:
    """Check a report against the shipped JSON schema."""
    with open(schema_path, "r", encoding="utf-8") as f:
        schema = json.load(f)
    try:
        jsonschema.validate(data, schema=schema)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "report"
        raise InvalidInput(f"run report does not match its schema at {where}: {e.message}") from e


class TraceWriter:
    """Buffered CSV of end-of-epoch losses and poses for one instance."""

    HEADER = ['timestamp', 'epoch', 'loss', 'tx', 'ty', 'tz', 'rx', 'ry', 'rz', 'log_s']

    def __init__(self, instance: str, directory: Optional[str] = None, flush_interval: int = 10):
        directory = directory or os.getenv('SCENEKIT_LOG_DIR', 'logs')
        os.makedirs(directory, exist_ok=True)
        safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in instance)
        self.filename = os.path.join(directory, f"optimize_{safe}_trace.csv")
        file_exists = os.path.exists(self.filename)
        self.file = open(self.filename, 'a', newline='', buffering=8192)
        self.writer = csv.writer(self.file)
        self.write_counter = 0
        self.flush_interval = flush_interval
        if not file_exists:
            self.writer.writerow(self.HEADER)
            self.file.flush()

    def __call__(self, record: EpochRecord) -> None:
        pose = record.pose
        self.writer.writerow([datetime.now(pytz.UTC).isoformat(), record.epoch, repr(record.loss),
                              *[repr(float(x)) for x in pose.T], *[repr(float(x)) for x in pose.r],
                              repr(pose.log_s)])
        self.write_counter += 1
        if self.write_counter >= self.flush_interval:
            self.file.flush()
            self.write_counter = 0

    def close(self) -> None:
        if self.file:
            self.file.flush()
            self.file.close()
            self.file = None
