"""Execution-substrate tests: the bus pipeline, the compatibility shim,
scripted peripherals, waiting-for-interrupt, mailboxes, and determinism."""

import random

import pytest

from conftest import ACK_HANDLER, A, booted, dom, make_scenario, std_peripherals
from isosim.asc import Asc
from isosim.bus import AccessKind, BusTransaction, Security
from isosim.gic import Activation, RegisterClass, RegisterId
from isosim.platform import Platform, run_scenario
from isosim.trace import dump_trace

NS = Security.NONSECURE


def two_domain_spatial(app_script, app_handler=ACK_HANDLER, fires=(), shim=True,
                       legacy_script=None, injections=(), max_steps=300):
    legacy_script = legacy_script or (
        A("setup", ("app",)), A("run", ("app", "spatial")), A("sleep", (50,)),
        A("halt", ()),
    )
    sc = make_scenario(
        mode="spatial",
        peripherals=std_peripherals(fires),
        domains=(
            dom("legacy", scheduler=True, cores=(0,),
                peripherals=(("disk0", "exclusive"),), script=legacy_script),
            dom("app", cores=(1,), shim=shim,
                peripherals=(("uart0", "exclusive"),),
                handler=app_handler, script=tuple(app_script)),
        ),
        injections=injections,
        max_steps=max_steps,
    )
    return sc


def kinds(trace):
    return [ev.kind for ev in trace]


# ---------------------------------------------------------------------------
# bus pipeline
# ---------------------------------------------------------------------------


def test_domain_reads_its_own_memory():
    sc = two_domain_spatial([
        A("mem_write", (0x10, 0xABCD)),
        A("mem_read", (0x10,)),
        A("halt", ()),
    ])
    trace = run_scenario(sc)
    reads = [ev for ev in trace
             if ev.kind == "bus_access" and ev.payload["access"] == "read"
             and ev.domain == 1]
    assert reads and reads[-1].payload["value"] == 0xABCD


def test_gic_write_with_shim_becomes_filtered_access():
    sc = two_domain_spatial([A("gic_write", ("ISENABLER", 1, 0x2)), A("halt", ())])
    trace = run_scenario(sc)
    ks = kinds(trace)
    assert "shim_trap" in ks and "shim_forwarded" in ks
    changes = [ev for ev in trace if ev.kind == "gic_config_change"
               and ev.payload["intid"] == 33 and ev.payload["field"] == "enabled"]
    assert changes and changes[-1].payload["issuer"] == 1


def test_gic_write_without_shim_denied_and_inert():
    sc = two_domain_spatial([A("gic_write", ("ISENABLER", 1, 0x2)), A("halt", ())],
                            shim=False)
    trace = run_scenario(sc)
    assert "shim_trap" not in kinds(trace)
    denied = [ev for ev in trace if ev.kind == "bus_denied" and ev.domain == 1]
    assert denied
    enables = [ev for ev in trace if ev.kind == "gic_config_change"
               and ev.payload["intid"] == 33 and ev.payload["issuer"] == 1]
    assert not enables


def test_foreign_mmio_denied_and_state_unchanged():
    disk_base = 0x1C0A_0000
    sc = two_domain_spatial([A("write_addr", (disk_base + 8, 0x77, 4)), A("halt", ())])
    trace = run_scenario(sc)
    denied = [ev for ev in trace if ev.kind == "bus_denied" and ev.domain == 1]
    assert denied and denied[0].payload["address"] == disk_base + 8
    # replay every traced transaction against a freshly rebuilt table: no
    # allowed event may target the disk window from core 1
    for ev in trace:
        if ev.kind == "bus_access" and ev.core == 1:
            assert not disk_base <= ev.payload["address"] < disk_base + 0x1000


def test_bus_soundness_replay_against_oracle():
    """No allowed transaction contradicts the configuration at its step."""
    sc = two_domain_spatial([
        A("mem_write", (0x0, 1)),
        A("read_addr", (0x1C0A_0000, 4)),       # foreign peripheral
        A("read_addr", (0xF000_0000, 4)),       # unmapped
        A("gic_read", ("ISENABLER", 1)),
        A("halt", ()),
    ])
    trace = run_scenario(sc)
    shadow = Asc(sc.granule)
    from isosim.asc import AscRegion, Permissions, PERM_RW
    for ev in trace:
        if ev.kind == "asc_configured":
            regions = [
                AscRegion(r["base"], r["length"],
                          {Security.SECURE: PERM_RW,
                           Security.NONSECURE: Permissions(r["ns_read"], r["ns_write"])},
                          frozenset(r["cores"]) if r["cores"] is not None else None,
                          r["name"])
                for r in ev.payload["regions"]
            ]
            shadow.configure(regions, Security.SECURE)
        elif ev.kind == "bus_access" and ev.payload["security"] == "nonsecure":
            t = BusTransaction(ev.core, ev.payload["address"], ev.payload["width"],
                               AccessKind.READ if ev.payload["access"] == "read"
                               else AccessKind.WRITE)
            assert shadow.check(t).allowed, ev.to_record()
        elif ev.kind == "bus_denied":
            t = BusTransaction(ev.core, ev.payload["address"], ev.payload["width"],
                               AccessKind.READ if ev.payload["access"] == "read"
                               else AccessKind.WRITE)
            assert not shadow.check(t).allowed, ev.to_record()


# ---------------------------------------------------------------------------
# shim equivalence
# ---------------------------------------------------------------------------


def shim_pair():
    """Two identical platforms with a launched app; one will use the shim
    path, the other explicit calls."""
    platforms = []
    for _ in range(2):
        sc = two_domain_spatial([A("halt", ())])
        p = booted(sc)
        app = p.monitor.setup_domain(p.monitor.domains[0], sc.domain_by_name("app"))
        p.monitor.spatial_launch(app)
        platforms.append(p)
    return platforms


def test_shim_path_equals_monitor_call_path():
    rng = random.Random(7)
    p_shim, p_call = shim_pair()
    for _ in range(100):
        cls = rng.choice(list(RegisterClass))
        if cls is RegisterClass.IROUTER:
            reg = RegisterId(cls, rng.randrange(32, 256))
        elif cls is RegisterClass.IPRIORITYR:
            reg = RegisterId(cls, rng.randrange(64))
        elif cls is RegisterClass.ICFGR:
            reg = RegisterId(cls, rng.randrange(16))
        else:
            reg = RegisterId(cls, rng.randrange(8))
        addr = p_shim.sc.gic_base + reg.offset()
        if rng.random() < 0.5:
            value = rng.getrandbits(reg.width * 8)
            r1, ok1 = p_shim.transact(1, addr, AccessKind.WRITE, value, width=reg.width)
            r2 = p_call.monitor.gic_access(1, addr, AccessKind.WRITE, value, via="smc")
        else:
            r1, ok1 = p_shim.transact(1, addr, AccessKind.READ, width=reg.width)
            r2 = p_call.monitor.gic_access(1, addr, AccessKind.READ, via="smc")
        assert ok1   # the shim swallowed the denial and forwarded
        assert r1 == r2, reg
        assert p_shim.gic.snapshot() == p_call.gic.snapshot(), reg


# ---------------------------------------------------------------------------
# peripherals and interrupts
# ---------------------------------------------------------------------------


def test_fire_while_owner_suspended_stays_pending():
    sc = make_scenario(
        mode="temporal", cores=1,
        peripherals=std_peripherals(fires=[("uart0", 6, 33)]),
        domains=(
            dom("legacy", scheduler=True, script=(
                A("setup", ("app",)),
                A("run", ("app", "temporal", 4)),   # expires before the fire
                A("sleep", (8,)),
                A("run", ("app", "temporal", 20)),
                A("halt", ()),
            )),
            dom("app", peripherals=(("uart0", "exclusive"),),
                handler=ACK_HANDLER, script=(
                    A("gic_write", ("ISENABLER", 1, 0x2)),
                    A("sleep", (30,)),
                    A("yield", ()),
                )),
        ),
    )
    trace = run_scenario(sc)
    fired = next(ev for ev in trace if ev.kind == "interrupt_fired")
    delivered = [ev for ev in trace if ev.kind == "interrupt_delivered"]
    resumed = [ev for ev in trace if ev.kind == "context_switch"
               and ev.payload["to"] == 1][-1]
    assert delivered, "the pending interrupt must eventually arrive"
    assert delivered[0].step > fired.step
    assert delivered[0].step >= resumed.step
    # nothing arrived while the owner was off the platform
    assert not any(fired.step <= ev.step < resumed.step for ev in delivered)


def test_double_fire_keeps_single_pending():
    sc = two_domain_spatial([A("sleep", (30,)), A("halt", ())],
                            fires=[("uart0", 5, 33), ("uart0", 6, 33)])
    p = Platform(sc, seed=0)
    trace = p.run()
    # never enabled: both fires collapse into one pending descriptor
    assert p.gic.descriptor(33).activation is Activation.PENDING
    state_changes = [ev for ev in trace if ev.kind == "gic_state_change"
                     and ev.payload["intid"] == 33]
    assert len(state_changes) == 1


def test_wfi_resumes_exactly_on_first_selectable_step():
    sc = two_domain_spatial(
        [A("gic_write", ("ISENABLER", 1, 0x2)), A("wfi", ()), A("halt", ())],
        fires=[("uart0", 25, 33)],
    )
    trace = run_scenario(sc)
    delivered = next(ev for ev in trace if ev.kind == "interrupt_delivered")
    assert delivered.step == 25   # fire and wake at the same boundary
    halt = next(ev for ev in trace if ev.kind == "halt" and ev.domain == 1)
    assert halt.step == delivered.step + len(ACK_HANDLER)


def test_timer_expiry_is_exact():
    sc = make_scenario(
        mode="temporal", cores=1,
        domains=(
            dom("legacy", scheduler=True, script=(
                A("setup", ("app",)),
                A("run", ("app", "temporal", 17)),
                A("halt", ()),
            )),
            dom("app", script=(A("sleep", (50,)), A("halt", ()))),
        ),
    )
    trace = run_scenario(sc)
    armed = next(ev for ev in trace if ev.kind == "timer_armed")
    expiry = next(ev for ev in trace if ev.kind == "timer_expiry")
    assert armed.payload["expiry_step"] == armed.step + 17
    assert expiry.step == armed.payload["expiry_step"]


def test_round_robin_interleaving_is_core_order():
    sc = two_domain_spatial(
        [A("mem_write", (0x0, 1)), A("mem_write", (0x8, 2)), A("halt", ())],
        legacy_script=(
            A("setup", ("app",)), A("run", ("app", "spatial")),
            A("mem_write", (0x0, 3)), A("mem_write", (0x8, 4)), A("halt", ()),
        ),
    )
    trace = run_scenario(sc)
    per_step = {}
    for ev in trace:
        if ev.kind == "bus_access" and ev.payload["target"] == "dram":
            per_step.setdefault(ev.step, []).append(ev.core)
    for cores_at_step in per_step.values():
        assert cores_at_step == sorted(cores_at_step)


# ---------------------------------------------------------------------------
# mailboxes
# ---------------------------------------------------------------------------


def proxy_scenario(payload=b"ping", extra_domain=None, oversize=False):
    shares = (("shm0", ("app",)),)
    app_shares = (("shm0", ("legacy",)),)
    body = b"x" * 0x2000 if oversize else payload
    domains = [
        dom("legacy", scheduler=True, cores=(0,), shares=shares,
            peripherals=(("disk0", "exclusive"),),
            script=(
                A("setup", ("app",)),
                A("run", ("app", "spatial")),
                A("proxy_recv", ("shm0",)),
                A("halt", ()),
            )),
        dom("app", cores=(1,), shares=app_shares,
            script=(A("proxy_send", ("shm0", body)), A("halt", ()))),
    ]
    if extra_domain:
        domains.append(extra_domain)
    from isosim.scenario import RegionDecl
    return make_scenario(mode="spatial", domains=domains,
                         regions=(RegionDecl("shm0", 0x1000),))


def test_proxy_round_trip():
    trace = run_scenario(proxy_scenario(b"read:block7"))
    sent = next(ev for ev in trace if ev.kind == "proxy_send")
    recv = next(ev for ev in trace if ev.kind == "proxy_recv")
    assert sent.payload["data"] == recv.payload["data"] == b"read:block7".hex()
    assert recv.domain == 0 and sent.domain == 1


def test_proxy_send_exceeding_region_fails_without_partial_write():
    sc = proxy_scenario(oversize=True)
    p = Platform(sc, seed=0)
    trace = p.run()
    assert any(ev.kind == "proxy_error" for ev in trace)
    assert not any(ev.kind == "proxy_send" for ev in trace)
    base, _ = p.shm_map["shm0"]
    assert p.memory.read_bytes(base, 32) == b"\x00" * 32


def test_outsider_on_channel_is_denied():
    intruder = dom("intruder", cores=(), script=(
        A("shm_read", ("shm0", 0)), A("halt", ()),
    ), shares=(("shm0", ()),))
    # undeclared share would fail validation; build the scenario object
    # directly and have the intruder probe by raw address instead
    sc = proxy_scenario()
    p = Platform(sc, seed=0)
    p.run()
    base, _ = p.shm_map["shm0"]
    sc2 = two_domain_spatial([A("read_addr", (base, 8)), A("halt", ())])
    trace2 = run_scenario(sc2)
    denied = [ev for ev in trace2 if ev.kind == "bus_denied" and ev.domain == 1]
    assert any(ev.payload["address"] == base for ev in denied)


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------


def test_identical_runs_produce_identical_traces():
    sc = two_domain_spatial(
        [A("gic_write", ("ISENABLER", 1, 0x2)), A("wfi", ()), A("halt", ())],
        fires=[("uart0", 12, 33)],
    )
    assert dump_trace(run_scenario(sc, seed=3)) == dump_trace(run_scenario(sc, seed=3))


def test_script_exhaustion_halts_core():
    sc = two_domain_spatial([A("nop", ())])  # no explicit halt
    trace = run_scenario(sc)
    assert any(ev.kind == "halt" and ev.domain == 1 for ev in trace)
    assert next(ev for ev in trace if ev.kind == "run_end").payload["reason"] == "all_halted"
