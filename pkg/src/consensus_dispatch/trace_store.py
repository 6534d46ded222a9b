"""Result files. Every file is written atomically; a crash never leaves a partial trace behind."""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable

from atomicwrites import atomic_write

from .caseio import serialize_native_case
from .engine import TRACE_COLUMNS, SimTrace
from .models import CaseData, DispatchSolution, MessageRecord

logger = logging.getLogger(__name__)

MESSAGE_LOG_COLUMNS = ("round", "sender_id", "p_gd_bar", "w")


def _writer(path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return atomic_write(path, mode="w", encoding="utf-8", newline="", overwrite=True)


def _write_json(path: Path, data: Dict[str, Any]) -> None:
    with _writer(path) as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def write_trace_csv(path: Path, trace: SimTrace) -> None:
    """One row per round, row 0 being the initial state."""
    columns = [trace.columns[name] for name in TRACE_COLUMNS]
    with _writer(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in range(len(trace)):
            writer.writerow([int(columns[0][row])] + [repr(float(c[row])) for c in columns[1:]])
    logger.info("Wrote %d trace rows to %s", len(trace), path)


def write_snapshots_json(path: Path, trace: SimTrace) -> None:
    """Periodic and final per-agent state plus the settling summary of every demand plateau."""
    _write_json(
        path,
        {
            "snapshots": [
                {"iteration": iteration, "agents": [agent.to_dict() for agent in agents]}
                for iteration, agents in trace.snapshots
            ],
            "final": {"iteration": trace.iterations, "agents": [agent.to_dict() for agent in trace.final_snapshot]},
            "plateaus": [plateau.model_dump() for plateau in trace.plateaus],
        },
    )
    logger.info("Wrote %d snapshots to %s", len(trace.snapshots) + 1, path)


class MessageLogWriter:
    """Streams message log rows to disk while a run is going on.

    The file only appears under its final name once the context exits without an error.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self.count = 0
        self._context = None
        self._writer = None

    def __enter__(self) -> "MessageLogWriter":
        self._context = _writer(self.path)
        f = self._context.__enter__()
        self._writer = csv.writer(f, lineterminator="\n")
        self._writer.writerow(MESSAGE_LOG_COLUMNS)
        return self

    def __exit__(self, *exc_info) -> None:
        self._context.__exit__(*exc_info)
        self._writer = None
        if exc_info[0] is None:
            logger.info("Wrote %d messages to %s", self.count, self.path)

    def write(self, record: MessageRecord) -> None:
        if self._writer is None:
            raise RuntimeError("message log is not open")
        self._writer.writerow([record.round, record.sender_id, repr(record.p_gd_bar), repr(record.w)])
        self.count += 1


def write_message_log_csv(path: Path, records: Iterable[MessageRecord]) -> None:
    """Exactly the transmitted fields, one row per round and sender."""
    with MessageLogWriter(path) as log:
        for record in records:
            log.write(record)


def write_solution_json(path: Path, solution: DispatchSolution) -> None:
    _write_json(path, solution.to_dict())


def write_native_case(path: Path, case: CaseData) -> None:
    with _writer(path) as f:
        f.write(serialize_native_case(case))
    logger.info("Wrote case %s to %s", case.name, path)
