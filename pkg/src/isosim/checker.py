"""Post-hoc trace checker for the isolation guarantees.

Runs over a finished trace with the scenario it came from and reports
violations:

  G1        configuration changes to an interrupt were issued by its owner
            (the monitor is exempt: switches, launches, teardowns)
  G2        activation-state changes were issued by the owner; fires come
            from the assigned source
  G3        every delivery landed in the domain owning the interrupt
  G4        a pending, owner-enabled interrupt is delivered within the
            liveness bound while its owner runs with a receptive core
  MEM       every allowed bus transaction was admissible under the
            address-space configuration active at that step
  PARTITION ownership of peripherals and interrupts stays single-owner
  HYGIENE   memory freed at teardown reads as zero for the next assignee

The checker deliberately lives outside the monitor: it rebuilds shadow
state purely from trace records, so a monitor that lies to the trace is
caught by the replay, not trusted.
"""

from __future__ import annotations

from dataclasses import dataclass

from .asc import Asc, AscRegion, PERM_RW, Permissions
from .bus import AccessKind, BusTransaction, Security
from .gic import SPI_FIRST, SPI_LAST, TIMER_PPI
from .monitor import DIGEST_BYTES
from .scenario import Scenario
from .trace import TraceEvent

GUARANTEES = ("G1", "G2", "G3", "G4", "MEM", "PARTITION", "HYGIENE")


class CheckerError(Exception):
    """Trace and scenario do not belong together."""


@dataclass(frozen=True)
class Violation:
    guarantee: str
    step: int
    event: dict
    explanation: str

    def __str__(self) -> str:
        return f"[{self.guarantee}] step {self.step}: {self.explanation}"


@dataclass
class _IntState:
    group: str = "nonsecure"
    enabled: bool = False
    affinity: int | None = None
    activation: str = "inactive"
    latched: bool = False


class _Shadow:
    """State reconstructed from the trace alone."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.core_domain: dict[int, int | None] = {c: None for c in range(sc.cores)}
        self.core_active: dict[int, int | None] = {c: None for c in range(sc.cores)}
        self.core_presented: dict[int, int | None] = {c: None for c in range(sc.cores)}
        self.ints: dict[int, _IntState] = {
            i: _IntState() for i in range(SPI_FIRST, SPI_LAST + 1)
        }
        self.intid_owner: dict[int, int] = {}
        self.periph_owner: dict[str, int] = {}
        self.asc = Asc(sc.granule)
        self.zero_watch: set[int] = set()  # addresses that must read as zero
        self.domain_cores: dict[int, set[int]] = {}
        self.exec_cores: dict[int, set[int]] = {}  # cores that can run handlers
        self.source_of = {
            intid: p.name for p in sc.peripherals for intid in p.intids
        }


def check_guarantees(trace: list[TraceEvent], scenario: Scenario) -> list[Violation]:
    if not trace or trace[0].kind != "trace_header":
        raise CheckerError("trace has no header record")
    if trace[0].payload.get("scenario") != scenario.name:
        raise CheckerError(
            f"trace was recorded for scenario {trace[0].payload.get('scenario')!r}, "
            f"not {scenario.name!r}")

    sh = _Shadow(scenario)
    bound = scenario.checks.liveness_bound
    violations: list[Violation] = []
    windows: dict[int, tuple[int, dict]] = {}  # intid -> (start step, opening event)
    current_step = 0

    def advance_to(step: int) -> None:
        nonlocal current_step
        if step == current_step:
            return
        for intid, (start, opener) in list(windows.items()):
            if start + bound <= step:
                violations.append(Violation(
                    "G4", start + bound, opener,
                    f"INTID {intid} pending and deliverable since step {start} "
                    f"but not delivered within {bound} steps"))
                del windows[intid]
        current_step = step

    def refresh_window(intid: int, ev: TraceEvent) -> None:
        """Open, keep, or close the liveness window for one interrupt."""
        st = sh.ints.get(intid)
        if st is None:
            return
        owner = sh.intid_owner.get(intid)
        open_now = (
            st.activation == "pending"
            and not st.latched
            and st.enabled
            and st.group == "nonsecure"
            and owner is not None
            and _receptive_core(sh, owner, st.affinity)
        )
        if open_now and intid not in windows:
            windows[intid] = (current_step, ev.to_record())
        elif not open_now and intid in windows:
            del windows[intid]

    def refresh_all(ev: TraceEvent) -> None:
        for intid in list(sh.ints):
            if sh.ints[intid].activation == "pending" or intid in windows:
                refresh_window(intid, ev)

    for ev in trace:
        advance_to(ev.step)
        p = ev.payload
        kind = ev.kind

        if kind == "gic_config_change":
            intid = p["intid"]
            issuer = p["issuer"]
            if isinstance(issuer, int):
                if sh.intid_owner.get(intid) != issuer:
                    violations.append(Violation(
                        "G1", ev.step, ev.to_record(),
                        f"domain {issuer} configured INTID {intid} owned by "
                        f"{sh.intid_owner.get(intid)}"))
            st = sh.ints.get(intid)
            if st is not None:
                if p["field"] in ("group", "enabled", "affinity"):
                    setattr(st, p["field"], p["new"])
                refresh_window(intid, ev)

        elif kind == "gic_config_bulk":
            fields = p["set"]
            for intid in _expand_ranges(p["intids"]):
                st = sh.ints.get(intid)
                if st is None:
                    continue
                if "group" in fields:
                    st.group = fields["group"]
                if "enabled" in fields:
                    st.enabled = fields["enabled"]
            refresh_all(ev)

        elif kind == "gic_state_change":
            intid = p["intid"]
            issuer = p["issuer"]
            cause = p["cause"]
            if cause == "fire":
                src = p.get("source")
                expected = sh.source_of.get(intid)
                if intid == TIMER_PPI:
                    expected = "secure_timer"
                if src != expected:
                    violations.append(Violation(
                        "G2", ev.step, ev.to_record(),
                        f"INTID {intid} fired by {src!r}, assigned source is "
                        f"{expected!r}"))
            elif isinstance(issuer, int):
                if sh.intid_owner.get(intid) != issuer:
                    violations.append(Violation(
                        "G2", ev.step, ev.to_record(),
                        f"domain {issuer} changed activation of INTID {intid} "
                        f"owned by {sh.intid_owner.get(intid)}"))
            st = sh.ints.get(intid)
            if st is not None:
                st.activation = p["to"]
                if cause == "retire":
                    st.latched = False
                    for c, a in sh.core_active.items():
                        if a == intid:
                            sh.core_active[c] = None
                refresh_window(intid, ev)

        elif kind == "interrupt_ack":
            st = sh.ints.get(p["intid"])
            if st is not None:
                st.latched = False
            sh.core_active[ev.core] = p["intid"]
            sh.core_presented[ev.core] = None
            refresh_all(ev)

        elif kind == "interrupt_eoi":
            for c, a in sh.core_active.items():
                if a == p["intid"]:
                    sh.core_active[c] = None
            refresh_all(ev)

        elif kind == "interrupt_delivered":
            intid = p["intid"]
            running = sh.core_domain.get(ev.core)
            owner = sh.intid_owner.get(intid)
            if running != owner:
                violations.append(Violation(
                    "G3", ev.step, ev.to_record(),
                    f"INTID {intid} owned by {owner} delivered to core {ev.core} "
                    f"running domain {running}"))
            st = sh.ints.get(intid)
            if st is not None:
                st.latched = True
            sh.core_presented[ev.core] = intid
            refresh_all(ev)

        elif kind == "ownership":
            table = {int(k): v for k, v in p["table"].items()}
            _check_partition(table, sh, violations, ev)
            sh.intid_owner = {
                intid: dom for dom, entry in table.items() for intid in entry["intids"]
            }
            sh.periph_owner = {
                name: dom for dom, entry in table.items()
                for name in entry["peripherals"]
            }
            refresh_all(ev)

        elif kind == "asc_configured":
            regions = []
            for r in p["regions"]:
                perms = Permissions(r["ns_read"], r["ns_write"])
                cores = frozenset(r["cores"]) if r["cores"] is not None else None
                regions.append(AscRegion(
                    r["base"], r["length"],
                    {Security.SECURE: PERM_RW, Security.NONSECURE: perms},
                    cores, r["name"]))
            sh.asc.configure(regions, Security.SECURE)

        elif kind == "context_switch":
            to = p["to"]
            for c in p["cores"]:
                sh.core_domain[c] = to
                sh.core_presented[c] = None
            sh.domain_cores[to] = set(p["cores"])
            sh.exec_cores[to] = set(p["exec"])
            refresh_all(ev)

        elif kind == "spatial_launch":
            for c in p["cores"]:
                sh.core_domain[c] = ev.domain
                sh.core_presented[c] = None
            sh.domain_cores[ev.domain] = set(p["cores"])
            sh.exec_cores[ev.domain] = set(p["exec"])
            refresh_all(ev)

        elif kind == "domain_suspended":
            for c in p["cores"]:
                if sh.core_domain.get(c) == ev.domain:
                    sh.core_domain[c] = None
                sh.core_presented[c] = None
            sh.exec_cores[ev.domain] = set()
            refresh_all(ev)

        elif kind == "domain_teardown":
            for c, d in sh.core_domain.items():
                if d == ev.domain:
                    sh.core_domain[c] = None
                    sh.core_presented[c] = None
            sh.exec_cores[ev.domain] = set()
            refresh_all(ev)

        elif kind == "region_freed":
            base, length = p["base"], p["length"]
            sh.zero_watch.update(range(base, base + length))

        elif kind in ("key_derived", "attested"):
            # the monitor wrote 32 bytes into the caller's memory
            sh.zero_watch.difference_update(range(p["dest"], p["dest"] + DIGEST_BYTES))

        elif kind == "bus_access":
            _check_mem(sh, ev, violations)
            addr, width = p["address"], p["width"]
            if p["access"] == "write":
                sh.zero_watch.difference_update(range(addr, addr + width))
            elif sh.zero_watch and p["value"] != 0:
                touched = [a for a in range(addr, addr + width) if a in sh.zero_watch]
                if touched:
                    little = p["value"].to_bytes(width, "little")
                    if any(little[a - addr] for a in touched):
                        violations.append(Violation(
                            "HYGIENE", ev.step, ev.to_record(),
                            f"read of freed memory at {addr:#x} returned "
                            f"{p['value']:#x}, expected zero"))

    return violations


def _receptive_core(sh: _Shadow, owner: int, affinity: int | None) -> bool:
    for c in sorted(sh.exec_cores.get(owner, ())):
        if sh.core_domain.get(c) != owner:
            continue
        if sh.core_active.get(c) is not None or sh.core_presented.get(c) is not None:
            continue
        if affinity is None or affinity == c:
            return True
    return False


def _check_partition(table: dict, sh: _Shadow, violations: list, ev: TraceEvent) -> None:
    seen_p: dict[str, int] = {}
    seen_i: dict[int, int] = {}
    for dom in sorted(table):
        entry = table[dom]
        for pname in entry["peripherals"]:
            if pname in seen_p:
                violations.append(Violation(
                    "PARTITION", ev.step, ev.to_record(),
                    f"peripheral {pname} owned by both domain {seen_p[pname]} "
                    f"and domain {dom}"))
            seen_p[pname] = dom
        for intid in entry["intids"]:
            if intid in seen_i:
                violations.append(Violation(
                    "PARTITION", ev.step, ev.to_record(),
                    f"INTID {intid} owned by both domain {seen_i[intid]} "
                    f"and domain {dom}"))
            seen_i[intid] = dom
        expected = set()
        for pname in entry["peripherals"]:
            try:
                expected.update(sh.sc.peripheral_by_name(pname).intids)
            except KeyError as exc:
                raise CheckerError(f"trace names unknown peripheral {pname!r}") from exc
        if set(entry["intids"]) != expected:
            violations.append(Violation(
                "PARTITION", ev.step, ev.to_record(),
                f"domain {dom} INTID ownership {sorted(entry['intids'])} does not "
                f"follow its peripherals ({sorted(expected)})"))


def _check_mem(sh: _Shadow, ev: TraceEvent, violations: list) -> None:
    p = ev.payload
    if p.get("security") != "nonsecure":
        return
    txn = BusTransaction(
        ev.core, p["address"], p["width"],
        AccessKind.READ if p["access"] == "read" else AccessKind.WRITE,
        None, Security.NONSECURE)
    decision = sh.asc.check(txn)
    if not decision.allowed:
        violations.append(Violation(
            "MEM", ev.step, ev.to_record(),
            f"domain {ev.domain} {p['access']} at {p['address']:#x} was allowed "
            f"but the active configuration denies it ({decision.reason.value})"))


def _expand_ranges(spec: str) -> list[int]:
    out: list[int] = []
    if not spec:
        return out
    for span in spec.split(","):
        if "-" in span:
            a, b = span.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(span))
    return out
