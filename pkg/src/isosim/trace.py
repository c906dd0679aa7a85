"""Trace events: the substrate every isolation check runs over.

One event per line when serialized; line format is JSON with sorted keys so
identical runs produce byte-identical files. Schema version lives in the
header event. See docs/trace-schema.md for the field catalogue.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

SCHEMA_VERSION = 1


@dataclass(slots=True)
class TraceEvent:
    step: int
    kind: str
    core: int | None = None
    domain: int | None = None
    payload: dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> dict[str, Any]:
        rec = {"step": self.step, "kind": self.kind, "core": self.core, "domain": self.domain}
        rec.update(self.payload)
        return rec

    def to_line(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))


def header_event(scenario_name: str, seed: int) -> TraceEvent:
    return TraceEvent(
        0,
        "trace_header",
        payload={"schema": "isosim-trace", "version": SCHEMA_VERSION,
                 "scenario": scenario_name, "seed": seed},
    )


def dump_trace(events: Iterable[TraceEvent]) -> str:
    return "".join(ev.to_line() + "\n" for ev in events)


def write_trace(path: str, events: Iterable[TraceEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_trace(events))


def event_from_record(rec: dict[str, Any]) -> TraceEvent:
    payload = {k: v for k, v in rec.items() if k not in ("step", "kind", "core", "domain")}
    return TraceEvent(rec["step"], rec["kind"], rec.get("core"), rec.get("domain"), payload)


def load_trace(path: str) -> list[TraceEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(event_from_record(json.loads(line)))
    return events


def iter_kind(events: Iterable[TraceEvent], kind: str) -> Iterator[TraceEvent]:
    return (ev for ev in events if ev.kind == kind)
