"""Shared builders for platform-level tests."""

import pytest

from isosim.platform import Platform
from isosim.scenario import (
    Action,
    CheckParams,
    DomainDecl,
    PeripheralDecl,
    RegionDecl,
    Scenario,
    SharingMode,
)

A = Action


def std_peripherals(fires=()):
    fire_map = {}
    for name, step, intid in fires:
        fire_map.setdefault(name, []).append((step, intid))
    def f(name):
        return tuple(sorted(fire_map.get(name, [])))
    return (
        PeripheralDecl("uart0", "uart", 0x1C09_0000, 0x1000, (33,),
                       ("exclusive", "multiplexing"), False, f("uart0")),
        PeripheralDecl("disk0", "storage", 0x1C0A_0000, 0x1000, (34,),
                       ("exclusive", "proxy"), False, f("disk0")),
        PeripheralDecl("net0", "network", 0x1C0B_0000, 0x1000, (35,),
                       ("exclusive", "proxy"), False, f("net0")),
        PeripheralDecl("disp0", "display", 0x1C0C_0000, 0x1000, (36,),
                       ("exclusive", "handover"), True, f("disp0")),
        PeripheralDecl("sens0", "sensor", 0x1C0D_0000, 0x2000, (37,),
                       ("exclusive", "readonly"), False, f("sens0"),
                       data=b"\xaa\xbb\xcc\xdd"),
    )


def make_scenario(mode="spatial", domains=(), peripherals=None, regions=(),
                  injections=(), cores=2, max_steps=300, name="test"):
    return Scenario(
        name=name,
        mode=SharingMode(mode),
        cores=cores,
        peripherals=peripherals if peripherals is not None else std_peripherals(),
        regions=tuple(regions),
        domains=tuple(domains),
        injections=tuple(injections),
        checks=CheckParams(liveness_bound=32, max_steps=max_steps),
    )


def dom(name, scheduler=False, memory=0x4000, cores=(), shim=False,
        peripherals=(), shares=(), handler=(), script=(Action("halt", ()),)):
    return DomainDecl(
        name=name, scheduler=scheduler, memory=memory, cores=tuple(cores),
        shim=shim, peripherals=tuple(peripherals), shares=tuple(shares),
        handler=tuple(handler), script=tuple(script),
    )


ACK_HANDLER = (A("ack", ()), A("eoi", ()), A("ret", ()))


def booted(scenario, fault_injection=None):
    platform = Platform(scenario, seed=0, fault_injection=fault_injection)
    platform.monitor.boot()
    return platform


@pytest.fixture
def spatial_platform():
    """Scheduler on core 0 owning the disk; one peer domain declared."""
    sc = make_scenario(
        mode="spatial",
        domains=(
            dom("legacy", scheduler=True, cores=(0,),
                peripherals=(("disk0", "exclusive"),)),
            dom("app", cores=(1,), peripherals=(("uart0", "exclusive"),),
                handler=ACK_HANDLER),
        ),
    )
    return booted(sc)
