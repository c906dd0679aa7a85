"""Seeded adversarial fuzzing: random scenarios, hostile scripts, full checks.

Domains may attempt anything a script can express (raw register pokes,
foreign memory probes, foreign routing requests, out-of-order acknowledge
sequences, teardown races) but cannot forge their core id, the bus security
bit, or the monitor's identity. With an unmodified monitor every generated
scenario must check clean; denials and protocol errors are expected and
harmless.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .checker import check_guarantees
from .platform import run_scenario
from .scenario import (
    Action,
    CheckParams,
    DomainDecl,
    Injection,
    PeripheralDecl,
    RegionDecl,
    Scenario,
    SharingMode,
)

PROFILES = ("gic", "handover", "memory", "spatial")

_DRAM_BASE = 0x8000_0000
_GIC_BASE = 0x2F00_0000


@dataclass
class FuzzSummary:
    seed: int
    count: int
    profile: str
    runs: int = 0
    violations: dict[str, int] = field(default_factory=dict)
    denials: int = 0
    deliveries: int = 0
    protocol_errors: int = 0
    failures: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())

    def merge(self, other: "FuzzSummary") -> None:
        self.runs += other.runs
        self.denials += other.denials
        self.deliveries += other.deliveries
        self.protocol_errors += other.protocol_errors
        for k, v in other.violations.items():
            self.violations[k] = self.violations.get(k, 0) + v
        self.failures.extend(other.failures)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "count": self.count,
            "profile": self.profile,
            "runs": self.runs,
            "violations": dict(sorted(self.violations.items())),
            "total_violations": self.total_violations,
            "denials": self.denials,
            "deliveries": self.deliveries,
            "protocol_errors": self.protocol_errors,
            "failures": self.failures[:20],
        }


def fuzz(seed: int, count: int, profile: str) -> FuzzSummary:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}, pick one of {PROFILES}")
    summary = FuzzSummary(seed=seed, count=count, profile=profile)
    for index in range(count):
        rng = random.Random(seed * 1_000_003 + index)
        scenario = generate_scenario(rng, profile, index)
        trace = run_scenario(scenario, seed=seed)
        violations = check_guarantees(trace, scenario)
        summary.runs += 1
        for v in violations:
            summary.violations[v.guarantee] = summary.violations.get(v.guarantee, 0) + 1
            if len(summary.failures) < 20:
                summary.failures.append((index, v.guarantee, v.explanation))
        for ev in trace:
            if ev.kind == "bus_denied":
                summary.denials += 1
            elif ev.kind == "interrupt_delivered":
                summary.deliveries += 1
            elif ev.kind == "protocol_error":
                summary.protocol_errors += 1
    return summary


# ---------------------------------------------------------------------------
# scenario generation
# ---------------------------------------------------------------------------


def _base_peripherals(rng: random.Random) -> list[PeripheralDecl]:
    fires = lambda intid: tuple(
        sorted((rng.randrange(4, 90), intid) for _ in range(rng.randrange(0, 4)))
    )
    return [
        PeripheralDecl("uart0", "uart", 0x1C09_0000, 0x1000, (33,),
                       ("exclusive", "multiplexing"), False, fires(33)),
        PeripheralDecl("disk0", "storage", 0x1C0A_0000, 0x1000, (34,),
                       ("exclusive", "proxy"), False, fires(34)),
        PeripheralDecl("net0", "network", 0x1C0B_0000, 0x1000, (35,),
                       ("exclusive", "proxy"), False, fires(35)),
        PeripheralDecl("disp0", "display", 0x1C0C_0000, 0x1000, (36,),
                       ("exclusive", "handover"), True, fires(36)),
        PeripheralDecl("sens0", "sensor", 0x1C0D_0000, 0x2000, (37,),
                       ("exclusive", "readonly"), False, fires(37),
                       data=b"\x11\x22\x33\x44"),
    ]


def _enable_word(intids: tuple[int, ...]) -> int:
    word = 0
    for i in intids:
        if 32 <= i < 64:
            word |= 1 << (i - 32)
    return word


def _gic_poke(rng: random.Random, own: tuple[int, ...], spatial: bool) -> Action:
    cls = rng.choice(("ISENABLER", "ICENABLER", "ISPENDR", "ICPENDR", "ISACTIVER",
                      "ICACTIVER", "IPRIORITYR", "ICFGR", "GROUPR", "IROUTER"))
    if cls == "IROUTER":
        intid = rng.choice([33, 34, 35, 36, 37] + list(own or (33,)))
        value = rng.choice((0, 1, 2, 1 << 31, (1 << 31) | 1))
        op = "smc_gic_write" if spatial else "gic_write"
        return Action(op, (cls, intid, value))
    if cls == "IPRIORITYR":
        index = rng.randrange(8, 10)
        value = rng.getrandbits(32)
    elif cls == "ICFGR":
        index = 2
        value = rng.getrandbits(32)
    else:
        index = 1
        value = rng.choice((_enable_word(own), 1 << rng.randrange(0, 8),
                            rng.getrandbits(32)))
    op = rng.choice(("smc_gic_write", "gic_write")) if spatial else "gic_write"
    if rng.random() < 0.3:
        op = op.replace("write", "read")
        return Action(op, (cls, index))
    return Action(op, (cls, index, value))


def _memory_probe(rng: random.Random) -> Action:
    addr = rng.choice((
        _DRAM_BASE + rng.randrange(0, 0x40000, 8),        # someone's memory
        _GIC_BASE + rng.randrange(0, 0x800, 4),           # controller space
        0x1C09_0000 + rng.randrange(0, 0x5000, 4),        # peripheral windows
        0xF000_0000 + rng.randrange(0, 0x1000, 4),        # unmapped
    ))
    if rng.random() < 0.5:
        return Action("read_addr", (addr, 4))
    return Action("write_addr", (addr, rng.getrandbits(32), 4))


def _app_script(rng: random.Random, profile: str, own: tuple[int, ...],
                own_periph: str | None, spatial: bool) -> tuple[Action, ...]:
    acts: list[Action] = []
    if own and rng.random() < 0.9:
        # enable own interrupts through whatever path the mode allows
        op = "smc_gic_write" if spatial else "gic_write"
        acts.append(Action(op, ("ISENABLER", 1, _enable_word(own))))
    n = rng.randrange(6, 16)
    for _ in range(n):
        r = rng.random()
        if profile == "gic" or (profile == "spatial" and r < 0.5):
            acts.append(_gic_poke(rng, own, spatial))
        elif profile == "memory" and r < 0.7:
            acts.append(_memory_probe(rng))
        elif profile == "handover" and r < 0.4 and own_periph:
            acts.append(rng.choice((
                Action("clear", (own_periph,)),
                Action("cede", (own_periph,)),
                Action("mmio_write", (own_periph, 8, rng.getrandbits(16), 4)),
            )))
        elif r < 0.55:
            acts.append(_memory_probe(rng))
        elif r < 0.7 and own_periph:
            acts.append(Action("mmio_read", (own_periph, 0, 4)))
        elif r < 0.8:
            acts.append(Action("mem_write", (rng.randrange(0, 0x800, 8),
                                             rng.getrandbits(32))))
        elif r < 0.9:
            acts.append(Action("sleep", (rng.randrange(1, 5),)))
        else:
            acts.append(rng.choice((
                Action("ack", ()), Action("eoi", ()),
                Action("teardown", ("legacy",)),
                Action("setup", ("legacy",)),
            )))
    if own and rng.random() < 0.5:
        acts.append(Action("wfi", ()))
    if rng.random() < 0.3:
        acts.append(Action("yield", ()))
    acts.append(Action("halt", ()))
    return tuple(acts)


def _handler(rng: random.Random) -> tuple[Action, ...]:
    r = rng.random()
    if r < 0.70:
        return (Action("ack", ()), Action("eoi", ()), Action("ret", ()))
    if r < 0.80:
        return (Action("ack", ()), Action("ret", ()))
    if r < 0.90:
        return (Action("eoi", ()), Action("ret", ()))
    if r < 0.95:
        return (Action("ret", ()),)
    return ()


def generate_scenario(rng: random.Random, profile: str, index: int) -> Scenario:
    spatial = profile in ("handover", "spatial") or (profile != "gic" and rng.random() < 0.4)
    if profile == "gic":
        spatial = rng.random() < 0.5
    mode = SharingMode.SPATIAL if spatial else SharingMode.TEMPORAL

    periphs = _base_peripherals(rng)
    app_periph, app_mode = rng.choice(
        (("uart0", "exclusive"), ("net0", "exclusive"), ("disp0", "handover"),
         ("sens0", "exclusive"))
    )
    if profile == "handover":
        app_periph, app_mode = "disp0", "handover"
    app_intids = next(p.intids for p in periphs if p.name == app_periph)
    legacy_periphs = [("disk0", "exclusive")]
    if app_periph != "uart0":
        legacy_periphs.append(("uart0", "exclusive"))
    if profile == "handover":
        legacy_periphs.append(("disp0", "handover"))

    budget = rng.randrange(20, 50)
    sched: list[Action] = []
    sched.append(Action("setup", ("app1",)))
    if spatial:
        sched.append(Action("run", ("app1", "spatial")))
        for _ in range(rng.randrange(2, 6)):
            sched.append(rng.choice((
                Action("sleep", (rng.randrange(2, 8),)),
                _memory_probe(rng),
                Action("mmio_read", ("disk0", 0, 4)),
            )))
    else:
        sched.append(Action("run", ("app1", "temporal", budget)))
        if rng.random() < 0.6:
            sched.append(Action("run", ("app1", "temporal", rng.randrange(10, 30))))
    if rng.random() < 0.25:
        sched.append(Action("teardown", ("app1",)))
    sched.append(Action("halt", ()))

    legacy = DomainDecl(
        name="legacy",
        scheduler=True,
        memory=0x4000,
        cores=(0,),
        peripherals=tuple(legacy_periphs),
        handler=(Action("ack", ()), Action("eoi", ()), Action("ret", ())),
        script=tuple(sched),
    )
    app = DomainDecl(
        name="app1",
        memory=0x3000,
        cores=(1,) if spatial else (),
        shim=spatial and rng.random() < 0.5,
        peripherals=((app_periph, app_mode),),
        handler=_handler(rng),
        script=_app_script(rng, profile, app_intids, app_periph, spatial),
    )

    injections = []
    if profile == "handover":
        steps = sorted(rng.sample(range(10, 90), rng.randrange(1, 3)))
        target = "app1"
        for s in steps:
            injections.append(Injection(s, "handover", ("disp0", target)))
            target = "legacy" if target == "app1" else "app1"

    return Scenario(
        name=f"fuzz-{profile}-{index}",
        mode=mode,
        cores=2,
        dram_size=0x0008_0000,
        peripherals=tuple(periphs),
        regions=(RegionDecl("shm0", 0x1000),),
        domains=(legacy, app),
        injections=tuple(injections),
        checks=CheckParams(liveness_bound=32, max_steps=160),
    )
