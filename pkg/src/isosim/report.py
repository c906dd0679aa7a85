"""Per-run counters derived from the trace.

Counter definitions (per domain):
  context_switches  times the domain was switched or launched in
  monitor_calls     monitor calls it issued
  gic_reads/writes  register accesses by any path: direct, call, or shim
  denials           bus transactions the access control rejected
  deliveries        interrupts delivered to it
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .trace import TraceEvent

COUNTER_NAMES = (
    "context_switches", "monitor_calls", "gic_reads", "gic_writes",
    "denials", "deliveries",
)


@dataclass
class RunReport:
    scenario: str = ""
    seed: int = 0
    steps: int = 0
    counters: dict[int, dict[str, int]] = field(default_factory=dict)
    violations: int = 0
    trace_path: str | None = None

    def domain(self, dom: int) -> dict[str, int]:
        return self.counters.setdefault(dom, {name: 0 for name in COUNTER_NAMES})

    @classmethod
    def from_trace(cls, trace: list[TraceEvent]) -> "RunReport":
        rep = cls()
        for ev in trace:
            p = ev.payload
            if ev.kind == "trace_header":
                rep.scenario = p.get("scenario", "")
                rep.seed = p.get("seed", 0)
            elif ev.kind == "run_end":
                rep.steps = p.get("steps", ev.step)
            elif ev.kind == "context_switch":
                if p["to"] is not None:
                    rep.domain(p["to"])["context_switches"] += 1
            elif ev.kind == "spatial_launch":
                rep.domain(ev.domain)["context_switches"] += 1
            elif ev.kind == "monitor_call":
                rep.domain(ev.domain)["monitor_calls"] += 1
                if p.get("fn") == "gic_read":
                    rep.domain(ev.domain)["gic_reads"] += 1
                elif p.get("fn") == "gic_write":
                    rep.domain(ev.domain)["gic_writes"] += 1
            elif ev.kind == "bus_access":
                if p.get("target") == "gic" and ev.domain is not None:
                    key = "gic_reads" if p["access"] == "read" else "gic_writes"
                    rep.domain(ev.domain)[key] += 1
            elif ev.kind == "bus_denied":
                if ev.domain is not None:
                    rep.domain(ev.domain)["denials"] += 1
            elif ev.kind == "interrupt_delivered":
                rep.domain(ev.domain)["deliveries"] += 1
        return rep

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "steps": self.steps,
            "violations": self.violations,
            "trace": self.trace_path,
            "domains": {
                str(d): dict(sorted(c.items())) for d, c in sorted(self.counters.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        head = f"scenario {self.scenario}  seed {self.seed}  steps {self.steps}  " \
               f"violations {self.violations}"
        cols = ["domain"] + [n for n in COUNTER_NAMES]
        rows = [cols]
        for dom in sorted(self.counters):
            c = self.counters[dom]
            rows.append([str(dom)] + [str(c[n]) for n in COUNTER_NAMES])
        widths = [max(len(r[i]) for r in rows) for i in range(len(cols))]
        lines = [head, ""]
        for r in rows:
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
        return "\n".join(lines)
