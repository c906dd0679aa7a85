"""The reference monitor: the only trusted software in the model.

Owns domain lifecycle (setup, measurement, run, switch, teardown),
peripheral and INTID ownership, the mode-specific interrupt isolation
mechanics (group reclassification and masking for whole-platform time
slicing; affinity pinning plus a filtered register interface for core
partitioning), key derivation, and attestation.

Everything here executes in secure state; domains reach it only through
monitor calls (or the compatibility shim, which forwards to the same
filtered interface).
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

from . import gic as gic_mod
from .asc import PERM_NONE, PERM_RO, PERM_RW, AscRegion, region
from .bus import AccessKind, Security
from .gic import (
    CONFIG_CLASSES,
    GIC_REGION_SIZE,
    IROUTER_ANY_CORE,
    SPI_FIRST,
    SPI_LAST,
    TIMER_PPI,
    RegisterClass,
    RegisterId,
    register_at,
)

if TYPE_CHECKING:
    from .platform import Platform
    from .scenario import DomainDecl

DIGEST_BYTES = 32

# Monitor-call function numbering (word 0 of the call; see docs/trace-schema.md)
SMC_FNS = {
    "yield": 1,
    "setup": 2,
    "run": 3,
    "teardown": 4,
    "gic_read": 5,
    "gic_write": 6,
    "cede": 7,
    "readonly": 8,
    "derive_key": 9,
    "attest": 10,
}

SMC_OK = 0
SMC_ERR = 0xFFFFFFFF


class DomainState(Enum):
    READY = "ready"
    RUNNING = "running"
    SUSPENDED = "suspended"
    TORN_DOWN = "torn_down"


@dataclass
class SavedIntConfig:
    enabled: bool = False
    priority: int = gic_mod.DEFAULT_PRIORITY
    affinity: int | None = None
    pending: bool = False


@dataclass
class Domain:
    id: int
    name: str
    measurement: bytes
    decl: "DomainDecl"
    state: DomainState = DomainState.READY
    memory_regions: list[tuple[int, int]] = field(default_factory=list)
    cores: tuple[int, ...] = ()
    owned_peripherals: set[str] = field(default_factory=set)
    owned_intids: set[int] = field(default_factory=set)
    shared_regions: tuple[str, ...] = ()
    saved_int_config: dict[int, SavedIntConfig] = field(default_factory=dict)
    saved_frames: dict = field(default_factory=dict)  # core id -> Frame
    saved_active: dict[int, int | None] = field(default_factory=dict)
    is_scheduler: bool = False
    shim: bool = False

    def live(self) -> bool:
        return self.state is not DomainState.TORN_DOWN


@dataclass
class FaultInjection:
    """Test-only switches that break exactly one enforcement point each,
    so the trace checker can be validated against known-bad monitors."""

    g1_unmasked_config: bool = False
    g2_unmasked_state: bool = False
    g3_misdeliver: bool = False
    g4_suppress_intid: int | None = None
    mem_bypass: bool = False
    partition_leak: bool = False
    hygiene_skip_zero: bool = False


class MonitorFault(Exception):
    """A refused monitor call; surfaces to the caller as an error return."""


def canonical_encode(obj) -> bytes:
    """Deterministic length-prefixed encoding used for measurements."""
    if obj is None:
        return b"n"
    if isinstance(obj, bool):
        return b"t" if obj else b"f"
    if isinstance(obj, int):
        raw = str(obj).encode("ascii")
        return b"i" + len(raw).to_bytes(4, "big") + raw
    if isinstance(obj, str):
        raw = obj.encode("utf-8")
        return b"s" + len(raw).to_bytes(4, "big") + raw
    if isinstance(obj, bytes):
        return b"b" + len(obj).to_bytes(4, "big") + obj
    if isinstance(obj, (list, tuple)):
        items = [canonical_encode(x) for x in obj]
        return b"l" + len(items).to_bytes(4, "big") + b"".join(items)
    if isinstance(obj, dict):
        keys = sorted(obj)
        out = b"d" + len(keys).to_bytes(4, "big")
        for k in keys:
            out += canonical_encode(k) + canonical_encode(obj[k])
        return out
    raise TypeError(f"cannot canonically encode {type(obj)!r}")


def manifest_canonical(decl: "DomainDecl") -> bytes:
    return canonical_encode(
        {
            "name": decl.name,
            "memory_demand": decl.memory,
            "peripherals": [list(p) for p in decl.peripherals],
            "shared_regions": [[name, list(peers)] for name, peers in decl.shares],
        }
    )


def measure(bundle: bytes, decl: "DomainDecl") -> bytes:
    return hashlib.sha256(bundle + manifest_canonical(decl)).digest()


def derive_key(device_key: bytes, measurement: bytes) -> bytes:
    return hmac.new(device_key, measurement, hashlib.sha256).digest()


class Monitor:
    def __init__(self, platform: "Platform"):
        self.p = platform
        self.sc = platform.scenario
        self.fi = platform.fault_injection
        self.domains: dict[int, Domain] = {}
        self.periph_owner: dict[str, int | None] = {}
        self.periph_mode: dict[str, str] = {}
        self.readonly_readers: dict[str, set[int]] = {}
        self.free_regions: list[tuple[int, int]] = []
        self.current_temporal: int = 0  # domain occupying the platform (temporal)
        self.timer_armed: tuple[int, int] | None = None  # (core, expiry step)
        self.device_key = self.sc.device_key

    # ------------------------------------------------------------------
    # boot
    # ------------------------------------------------------------------

    def boot(self) -> None:
        sc = self.sc
        gic = self.p.gic
        granule = sc.granule

        # carve the DRAM: shared mailbox regions first, domains after
        cursor = sc.dram_base
        for r in sc.regions:
            size = _round_up(r.size, granule)
            self.p.shm_map[r.name] = (cursor, size)
            cursor += size
        self.free_regions = [(cursor, sc.dram_base + sc.dram_size - cursor)]

        # PPIs and unassigned SPIs are held secure and masked until owned
        bulk = []
        for c in range(sc.cores):
            for i in range(gic_mod.PPI_FIRST, gic_mod.PPI_LAST + 1):
                gic.set_config(i, core=c, group=Security.SECURE, enabled=False)
                bulk.append(i)
        for i in range(SPI_FIRST, SPI_LAST + 1):
            gic.set_config(i, group=Security.SECURE, enabled=False)
            bulk.append(i)
        self.p.emit(
            "gic_config_bulk",
            payload={
                "intids": _ranges(sorted(set(bulk))),
                "set": {"group": "secure", "enabled": False},
                "issuer": "monitor",
            },
        )
        for c in range(sc.cores):
            for ch in gic.set_config(TIMER_PPI, core=c, enabled=True):
                self.p.emit_gic_change(ch, issuer="monitor", via="boot")
        self.p.emit("boot", payload={"mode": sc.mode.value})

        sched = next(d for d in sc.domains if d.scheduler)
        dom = self._create_domain(sched)
        dom.is_scheduler = True
        dom.state = DomainState.RUNNING
        dom.cores = sched.cores or (0,)
        if sc.mode.value == "temporal":
            dom.cores = tuple(range(sc.cores))
        for c in dom.cores:
            self.p.cores[c].current_domain = dom.id
            self.p.cores[c].shim = dom.shim
        self.p.install_frame(dom.cores[0], dom)
        self._apply_gic_policy(dom, running=True)
        self._rebuild_asc()
        self._emit_ownership()
        self.p.emit(
            "context_switch", domain=dom.id,
            payload={"from": None, "to": dom.id, "cores": sorted(dom.cores),
                     "exec": [dom.cores[0]]},
        )

    # ------------------------------------------------------------------
    # domain lifecycle
    # ------------------------------------------------------------------

    def _create_domain(self, decl: "DomainDecl") -> Domain:
        bundle = decl.binary if decl.binary is not None else self._bundle_bytes(decl)
        if decl.expect_digest is not None:
            if hashlib.sha256(bundle).digest() != decl.expect_digest:
                raise MonitorFault("binary digest mismatch")
        for pname, mode in decl.peripherals:
            periph = self.p.peripherals[pname]
            if mode not in periph.decl.modes:
                raise MonitorFault(f"peripheral {pname} does not support mode {mode}")
            owner = self.periph_owner.get(pname)
            if mode in ("exclusive", "multiplexing", "handover") and owner is not None:
                if mode == "handover":
                    continue  # becomes an eligible transferee, owner keeps it
                raise MonitorFault("peripheral busy")
        base_len = self._allocate(decl.memory)
        if base_len is None:
            raise MonitorFault("memory unavailable")

        dom_id = len(self.domains)
        dom = Domain(
            id=dom_id,
            name=decl.name,
            measurement=measure(bundle, decl),
            decl=decl,
            memory_regions=[base_len],
            cores=decl.cores,
            shared_regions=tuple(name for name, _ in decl.shares),
            shim=decl.shim,
        )
        for pname, mode in decl.peripherals:
            if mode in ("exclusive", "multiplexing"):
                self._assign_peripheral(dom, pname, mode)
            elif mode == "handover" and self.periph_owner.get(pname) is None:
                self._assign_peripheral(dom, pname, mode)
            elif mode == "readonly":
                owner = self.periph_owner.get(pname)
                if owner is None:
                    self._assign_peripheral(dom, pname, mode)
                else:
                    self.readonly_readers.setdefault(pname, set()).add(dom_id)
            # proxy: nothing to enforce, the owner mediates
        for intid in sorted(dom.owned_intids):
            dom.saved_int_config[intid] = SavedIntConfig()
        self.domains[dom_id] = dom
        if self.sc.mode.value != "temporal":
            for intid in sorted(dom.owned_intids):
                self._set_config(intid, "setup", group=Security.NONSECURE)
        self.p.emit(
            "domain_setup",
            domain=dom_id,
            payload={
                "name": dom.name,
                "measurement": dom.measurement.hex(),
                "regions": [{"base": b, "length": ln} for b, ln in dom.memory_regions],
            },
        )
        return dom

    def _bundle_bytes(self, decl: "DomainDecl") -> bytes:
        acts = [[a.op, *[_enc_arg(x) for x in a.args]] for a in decl.script]
        hacts = [[a.op, *[_enc_arg(x) for x in a.args]] for a in decl.handler]
        return canonical_encode([acts, hacts])

    def _assign_peripheral(self, dom: Domain, pname: str, mode: str) -> None:
        self.periph_owner[pname] = dom.id
        self.periph_mode[pname] = mode
        dom.owned_peripherals.add(pname)
        for intid in self.p.peripherals[pname].decl.intids:
            dom.owned_intids.add(intid)
            if intid not in dom.saved_int_config:
                dom.saved_int_config[intid] = SavedIntConfig()

    def setup_domain(self, caller: Domain, decl: "DomainDecl") -> int:
        if not caller.is_scheduler:
            raise MonitorFault("only the scheduler may set up domains")
        try:
            dom = self._create_domain(decl)
        except MonitorFault as exc:
            self.p.emit("setup_refused", payload={"name": decl.name, "cause": str(exc)})
            raise
        self._emit_ownership()
        self._rebuild_asc()
        return dom.id

    def run_domain(self, caller: Domain, dom_id: int, mode: str, budget: int = 0) -> None:
        if not caller.is_scheduler:
            raise MonitorFault("only the scheduler may run domains")
        dom = self._live_domain(dom_id)
        if dom.state not in (DomainState.READY, DomainState.SUSPENDED):
            raise MonitorFault(f"domain {dom_id} is {dom.state.value}")
        if mode == "temporal":
            if self.sc.mode.value == "spatial":
                raise MonitorFault("temporal run in a core-partitioned scenario")
            if budget <= 0:
                raise MonitorFault("budget must be positive")
            expiry = self.p.step + budget
            core = caller.cores[0]
            self.timer_armed = (core, expiry)
            self.p.emit(
                "timer_armed", core=core, payload={"expiry_step": expiry, "budget": budget}
            )
            self.temporal_switch(dom_id)
        elif mode == "spatial":
            if self.sc.mode.value == "temporal":
                raise MonitorFault("spatial run in a whole-platform scenario")
            self.spatial_launch(dom_id)
        else:
            raise MonitorFault(f"unknown run mode {mode}")

    # -- temporal (whole-platform) switching ---------------------------------

    def temporal_switch(self, next_id: int) -> None:
        prev = self.domains[self.current_temporal]
        nxt = self._live_domain(next_id)
        self._save_context(prev)
        if prev.live() and prev.state is DomainState.RUNNING:
            prev.state = DomainState.SUSPENDED
        if self.sc.mode.value == "temporal":
            nxt.cores = tuple(range(self.sc.cores))
        else:
            nxt.cores = nxt.cores or prev.cores
        self._apply_gic_policy(prev, running=False)
        self._apply_gic_policy(nxt, running=True)
        nxt.state = DomainState.RUNNING
        self.current_temporal = next_id
        for c in self.p.cores:
            if c.id in nxt.cores:
                c.presented = None
        self._restore_context(nxt)
        self._rebuild_asc()
        self.p.emit(
            "context_switch", domain=next_id,
            payload={"from": prev.id, "to": next_id, "cores": sorted(nxt.cores),
                     "exec": [nxt.cores[0]]},
        )

    def _save_context(self, dom: Domain) -> None:
        dom.saved_frames = {}
        dom.saved_active = {}
        for c in dom.cores:
            core = self.p.cores[c]
            if core.current_domain == dom.id:
                dom.saved_frames[c] = core.frame
                dom.saved_active[c] = self.p.gic.core_active[c]
                core.frame = None
                core.presented = None
                self.p.gic.core_active[c] = None
                core.current_domain = None
        for intid in sorted(dom.owned_intids):
            desc = self.p.gic.descriptor(intid)
            dom.saved_int_config[intid] = SavedIntConfig(
                enabled=desc.enabled,
                priority=desc.priority,
                affinity=desc.affinity,
                pending=desc.is_pending(),
            )

    def _restore_context(self, dom: Domain) -> None:
        exec_core = dom.cores[0]
        for c in dom.cores:
            core = self.p.cores[c]
            core.current_domain = dom.id
            core.shim = dom.shim
            core.presented = None
            if c in dom.saved_frames:
                core.frame = dom.saved_frames[c]
                self.p.gic.core_active[c] = dom.saved_active.get(c)
            elif c == exec_core and core.frame is None:
                self.p.install_frame(c, dom)
        dom.saved_frames = {}
        dom.saved_active = {}

    def _apply_gic_policy(self, dom: Domain, running: bool) -> None:
        """Reclassify and mask/unmask a domain's interrupts for a context
        change. Pending state is never touched: an interrupt that fired while
        its owner was off the platform stays pending until the owner is back.
        """
        temporal = self.sc.mode.value == "temporal"
        for intid in sorted(dom.owned_intids):
            saved = dom.saved_int_config.get(intid, SavedIntConfig())
            if running:
                fields = {
                    "group": Security.NONSECURE,
                    "enabled": saved.enabled,
                    "priority": saved.priority,
                    "affinity": saved.affinity,
                }
                if not temporal:
                    fields["affinity"] = dom.cores[0] if dom.cores else None
                self._set_config(intid, "restore", **fields)
            else:
                fields = {"enabled": False}
                if temporal:
                    fields["group"] = Security.SECURE
                self._set_config(intid, "mask", **fields)

    def _set_config(self, intid: int, reason: str, **fields) -> None:
        for ch in self.p.gic.set_config(intid, **fields):
            self.p.emit_gic_change(ch, issuer="monitor", via=reason)

    # -- spatial (core-partitioned) launching --------------------------------

    def spatial_launch(self, dom_id: int) -> None:
        dom = self._live_domain(dom_id)
        if not self.sc.core_filtering:
            raise MonitorFault("platform cannot filter accesses by core")
        cores = dom.cores or dom.decl.cores
        if not cores:
            raise MonitorFault(f"domain {dom_id} has no core placement")
        for c in cores:
            if c >= self.sc.cores:
                raise MonitorFault(f"core {c} not present")
            if self.p.cores[c].current_domain is not None:
                raise MonitorFault(f"core {c} occupied")
        dom.cores = tuple(cores)
        dom.state = DomainState.RUNNING
        self._restore_context(dom)
        self._apply_gic_policy(dom, running=True)
        self._rebuild_asc()
        self.p.emit("spatial_launch", domain=dom_id,
                    payload={"cores": sorted(cores), "exec": [dom.cores[0]]})

    def suspend_spatial(self, dom: Domain) -> None:
        self._save_context(dom)
        dom.state = DomainState.SUSPENDED
        self._apply_gic_policy(dom, running=False)
        self._rebuild_asc()
        self.p.emit("domain_suspended", domain=dom.id, payload={"cores": sorted(dom.cores)})

    def do_yield(self, core: int) -> None:
        dom = self._domain_on(core)
        if dom.is_scheduler:
            return
        if self.sc.mode.value != "spatial" and dom.id == self.current_temporal:
            if self.timer_armed is not None:
                self.p.emit("timer_cancelled", core=self.timer_armed[0])
                self.timer_armed = None
            self.temporal_switch(self._scheduler().id)
        else:
            self.suspend_spatial(dom)

    def on_timer_expiry(self) -> None:
        assert self.timer_armed is not None
        core, _ = self.timer_armed
        self.timer_armed = None
        gic = self.p.gic
        for ch in gic.fire(TIMER_PPI, core=core):
            self.p.emit_gic_change(ch, issuer="monitor", source="secure_timer")
        self.p.emit("timer_expiry", core=core)
        # The secure timer signals the monitor as a fast interrupt, which
        # preempts whatever the core was doing; model that by stashing the
        # non-secure running-interrupt record around the secure handling.
        stash = gic.core_active[core]
        gic.core_active[core] = None
        if gic.select(core, Security.SECURE) == TIMER_PPI:
            for ch in gic.acknowledge(core, TIMER_PPI):
                self.p.emit_gic_change(ch, issuer="monitor")
            for ch in gic.end_of_interrupt(core, TIMER_PPI):
                self.p.emit_gic_change(ch, issuer="monitor")
        gic.core_active[core] = stash
        self.temporal_switch(self._scheduler().id)

    # ------------------------------------------------------------------
    # filtered interrupt-controller interface (monitor call or shim)
    # ------------------------------------------------------------------

    def compute_access_mask(self, dom_id: int, reg: RegisterId) -> int:
        dom = self.domains[dom_id]
        if reg.register_class is RegisterClass.IROUTER:
            return (1 << 64) - 1 if reg.index in dom.owned_intids else 0
        mask = 0
        fmask = (1 << reg.bits_per_field) - 1
        for intid in reg.covered_intids:
            if intid in dom.owned_intids:
                mask |= fmask << reg.field_shift(intid)
        return mask

    def gic_access(
        self, core: int, address: int, kind: AccessKind, value: int | None = None,
        via: str = "smc",
    ) -> int:
        dom = self._domain_on(core)
        offset = address - self.sc.gic_base
        if not 0 <= offset < GIC_REGION_SIZE:
            raise MonitorFault("address outside the interrupt controller")
        reg = register_at(offset, 4) or register_at(offset, 8)
        if reg is None:
            self.p.emit(
                "monitor_call", core=core, domain=dom.id,
                payload={"fn": f"gic_{kind.value}", "args": [address, value or 0],
                         "ret": 0, "via": via, "unmodeled": True},
            )
            return 0
        mask = self.compute_access_mask(dom.id, reg)
        if self.fi.g1_unmasked_config and reg.register_class in CONFIG_CLASSES:
            mask = (1 << (reg.width * 8)) - 1
        if self.fi.g2_unmasked_state and reg.register_class in gic_mod.STATE_CLASSES:
            mask = (1 << (reg.width * 8)) - 1

        gic = self.p.gic
        if kind is AccessKind.READ:
            word, _ = gic.register_access(reg, AccessKind.READ, security=Security.SECURE, core=core)
            ret = word & mask
            self.p.emit(
                "monitor_call", core=core, domain=dom.id,
                payload={"fn": "gic_read", "args": [address], "ret": ret, "via": via},
            )
            return ret

        assert value is not None
        ret = SMC_OK
        changes = []
        self.p.emit("lock_acquire", core=core)
        if reg.register_class is RegisterClass.IROUTER:
            intid = reg.index
            if intid not in dom.owned_intids:
                pass  # fully masked: silently ignored
            elif value & IROUTER_ANY_CORE or (value & 0xFF) not in dom.cores:
                self.p.emit(
                    "irouter_rejected", core=core, domain=dom.id,
                    payload={"intid": intid, "requested": value},
                )
                ret = SMC_ERR
            else:
                changes = gic.register_access(
                    reg, AccessKind.WRITE, value, Security.SECURE, core
                )[1]
        elif reg.register_class in gic_mod.STATE_CLASSES or reg.register_class in (
            RegisterClass.ISENABLER,
            RegisterClass.ICENABLER,
        ):
            # Set/clear registers: forwarding the unowned half of the merged
            # word would set or clear other domains' fields, so only the
            # masked request goes through.
            changes = gic.register_access(
                reg, AccessKind.WRITE, value & mask, Security.SECURE, core
            )[1]
        else:
            old, _ = gic.register_access(
                reg, AccessKind.READ, security=Security.SECURE, core=core
            )
            merged = (old & ~mask) | (value & mask)
            changes = gic.register_access(
                reg, AccessKind.WRITE, merged, Security.SECURE, core
            )[1]
        for ch in changes:
            self.p.emit_gic_change(ch, issuer=dom.id, via=via)
        self.p.emit("lock_release", core=core)
        self.p.emit(
            "monitor_call", core=core, domain=dom.id,
            payload={"fn": "gic_write", "args": [address, value], "ret": ret, "via": via},
        )
        return ret

    # ------------------------------------------------------------------
    # peripheral transfer, sharing, teardown
    # ------------------------------------------------------------------

    def handover(self, pname: str, to_name: str | None, trigger: str, core: int | None = None) -> None:
        periph = self.p.peripherals[pname]
        owner_id = self.periph_owner.get(pname)
        if trigger == "owner_cede":
            caller = self._domain_on(core)
            if owner_id != caller.id:
                raise MonitorFault(f"{caller.name} does not own {pname}")
        if owner_id is None:
            raise MonitorFault(f"{pname} is unowned")
        if not periph.decl.hot_plug:
            raise MonitorFault(f"{pname} is not hot-plug capable")
        if self.periph_mode.get(pname) != "handover":
            raise MonitorFault(f"{pname} is not assigned in handover mode")
        frm = self.domains[owner_id]

        target = self._handover_target(pname, frm, to_name)
        if periph.dirty:
            self.p.emit(
                "residual_state_warning", payload={"peripheral": pname, "from": frm.id}
            )
        periph.reset()

        frm.owned_peripherals.discard(pname)
        for intid in periph.decl.intids:
            frm.owned_intids.discard(intid)
            frm.saved_int_config.pop(intid, None)
            for ch in self.p.gic.retire(intid):
                self.p.emit_gic_change(ch, issuer="monitor")
            self.p.drop_presented(intid)
        if target is None:
            self.periph_owner[pname] = None
            for intid in periph.decl.intids:
                self._set_config(intid, "handover", group=Security.SECURE, enabled=False)
        else:
            if not self.fi.partition_leak:
                self.periph_owner[pname] = target.id
            else:
                self.periph_owner[pname] = target.id
                frm.owned_peripherals.add(pname)  # injected partition break
                for intid in periph.decl.intids:
                    frm.owned_intids.add(intid)
            target.owned_peripherals.add(pname)
            for intid in periph.decl.intids:
                target.owned_intids.add(intid)
                target.saved_int_config[intid] = SavedIntConfig()
                running = target.state is DomainState.RUNNING
                temporal = self.sc.mode.value == "temporal"
                if running and (not temporal or target.id == self.current_temporal):
                    aff = None if temporal else (target.cores[0] if target.cores else None)
                    self._set_config(
                        intid, "handover",
                        group=Security.NONSECURE, enabled=False, affinity=aff,
                    )
                else:
                    grp = Security.SECURE if temporal else Security.NONSECURE
                    self._set_config(intid, "handover", group=grp, enabled=False)
        self._rebuild_asc()
        self._emit_ownership()
        new_owner = target.id if target is not None else None
        self.p.emit(
            "handover",
            payload={
                "peripheral": pname,
                "from": frm.id,
                "to": new_owner,
                "trigger": trigger,
                "dirty": periph.dirty,
            },
        )
        self.p.emit("led_indicator", payload={"peripheral": pname, "owner": new_owner})

    def _handover_target(self, pname: str, frm: Domain, to_name: str | None) -> Domain | None:
        if to_name is not None:
            target = self._domain_by_name(to_name)
            if not target.live():
                raise MonitorFault(f"domain {to_name} is torn down")
            wants = dict(target.decl.peripherals).get(pname)
            if wants != "handover":
                raise MonitorFault(f"{to_name} did not request {pname} for handover")
            return target
        for dom in sorted(self.domains.values(), key=lambda d: d.id):
            if dom.id == frm.id or not dom.live():
                continue
            if dict(dom.decl.peripherals).get(pname) == "handover":
                return dom
        return None

    def configure_readonly(self, core: int, pname: str, reader_name: str) -> None:
        caller = self._domain_on(core)
        if self.periph_owner.get(pname) != caller.id:
            raise MonitorFault(f"{caller.name} does not own {pname}")
        periph = self.p.peripherals[pname]
        if "readonly" not in periph.decl.modes:
            raise MonitorFault(f"{pname} does not support read-only sharing")
        reader = self._domain_by_name(reader_name)
        if not reader.live():
            raise MonitorFault(f"{reader_name} is torn down")
        self.readonly_readers.setdefault(pname, set()).add(reader.id)
        self._rebuild_asc()
        self.p.emit(
            "readonly_configured",
            payload={
                "peripheral": pname,
                "owner": caller.id,
                "readers": sorted(self.readonly_readers[pname]),
            },
        )

    def teardown(self, dom_id: int, requester: str, core: int | None = None) -> None:
        dom = self._live_domain(dom_id)
        if dom.is_scheduler:
            raise MonitorFault("the scheduler domain cannot be torn down")
        if requester == "domain":
            caller = self._domain_on(core)
            if caller.id != dom_id and not caller.is_scheduler:
                raise MonitorFault("teardown is owner- or user-initiated only")
        was_temporal_runner = (
            self.sc.mode.value != "spatial" and dom_id == self.current_temporal
        )
        for b, ln in dom.memory_regions:
            if not self.fi.hygiene_skip_zero:
                self.p.memory.zero_range(b, ln)
                self.p.emit("region_zeroed", payload={"base": b, "length": ln})
            self._free(b, ln)
            self.p.emit("region_freed", domain=dom_id, payload={"base": b, "length": ln})
        dom.memory_regions = []
        for pname in sorted(dom.owned_peripherals):
            self.periph_owner[pname] = None
            for intid in self.p.peripherals[pname].decl.intids:
                self._set_config(intid, "teardown", group=Security.SECURE, enabled=False)
                for ch in self.p.gic.retire(intid):
                    self.p.emit_gic_change(ch, issuer="monitor")
                self.p.drop_presented(intid)
        dom.owned_peripherals = set()
        dom.owned_intids = set()
        for readers in self.readonly_readers.values():
            readers.discard(dom_id)
        for c in self.p.cores:
            if c.current_domain == dom_id:
                c.current_domain = None
                c.frame = None
                c.presented = None
                self.p.gic.core_active[c.id] = None
        dom.state = DomainState.TORN_DOWN
        dom.saved_frames = {}
        self._emit_ownership()
        self._rebuild_asc()
        self.p.emit("domain_teardown", domain=dom_id, payload={"requester": requester})
        if was_temporal_runner:
            if self.timer_armed is not None:
                self.p.emit("timer_cancelled", core=self.timer_armed[0])
                self.timer_armed = None
            self.temporal_switch(self._scheduler().id)

    # ------------------------------------------------------------------
    # attestation and key derivation
    # ------------------------------------------------------------------

    def do_derive_key(self, core: int, dest_offset: int) -> int:
        dom = self._domain_on(core)
        key = derive_key(self.device_key, dom.measurement)
        base = dom.memory_regions[0][0]
        self.p.memory.write_bytes(base + dest_offset, key)
        self.p.emit("key_derived", domain=dom.id,
                    payload={"key": key.hex(), "dest": base + dest_offset})
        return SMC_OK

    def attest(self, core: int, subject_name: str, dest_offset: int) -> int:
        querier = self._domain_on(core)
        subject = self._domain_by_name(subject_name)
        if not subject.live():
            raise MonitorFault(f"{subject_name} is torn down")
        base = querier.memory_regions[0][0]
        self.p.memory.write_bytes(base + dest_offset, subject.measurement)
        owned = sorted(subject.owned_peripherals)
        mask = 0
        for i, p in enumerate(self.sc.peripherals):
            if p.name in subject.owned_peripherals:
                mask |= 1 << i
        self.p.emit(
            "attested",
            domain=querier.id,
            payload={
                "subject": subject.id,
                "measurement": subject.measurement.hex(),
                "peripherals": owned,
                "dest": base + dest_offset,
            },
        )
        return mask

    # ------------------------------------------------------------------
    # plumbing
    # ------------------------------------------------------------------

    def _scheduler(self) -> Domain:
        return self.domains[0]

    def _domain_on(self, core: int) -> Domain:
        dom_id = self.p.cores[core].current_domain
        if dom_id is None:
            raise MonitorFault(f"no domain on core {core}")
        return self.domains[dom_id]

    def _live_domain(self, dom_id: int) -> Domain:
        dom = self.domains.get(dom_id)
        if dom is None:
            raise MonitorFault(f"unknown domain {dom_id}")
        if not dom.live():
            raise MonitorFault(f"domain {dom_id} is torn down")
        return dom

    def _domain_by_name(self, name: str) -> Domain:
        for dom in self.domains.values():
            if dom.name == name:
                return dom
        raise MonitorFault(f"unknown domain {name}")

    def domain_id_by_name(self, name: str) -> int | None:
        for dom in self.domains.values():
            if dom.name == name:
                return dom.id
        return None

    def _allocate(self, size: int) -> tuple[int, int] | None:
        size = _round_up(size, self.sc.granule)
        for i, (b, ln) in enumerate(self.free_regions):
            if ln >= size:
                if ln == size:
                    self.free_regions.pop(i)
                else:
                    self.free_regions[i] = (b + size, ln - size)
                return (b, size)
        return None

    def _free(self, base: int, length: int) -> None:
        regions = sorted(self.free_regions + [(base, length)])
        merged: list[tuple[int, int]] = []
        for b, ln in regions:
            if merged and merged[-1][0] + merged[-1][1] == b:
                merged[-1] = (merged[-1][0], merged[-1][1] + ln)
            else:
                merged.append((b, ln))
        self.free_regions = merged

    def _emit_ownership(self) -> None:
        table = {}
        for dom in sorted(self.domains.values(), key=lambda d: d.id):
            if dom.live():
                table[str(dom.id)] = {
                    "peripherals": sorted(dom.owned_peripherals),
                    "intids": sorted(dom.owned_intids),
                }
        self.p.emit("ownership", payload={"table": table})
        self._check_consistency()

    def _check_consistency(self) -> None:
        seen_p: set[str] = set()
        seen_i: set[int] = set()
        for dom in self.domains.values():
            if not dom.live():
                continue
            expected = set()
            for pname in dom.owned_peripherals:
                expected.update(self.p.peripherals[pname].decl.intids)
            if not self.fi.partition_leak:
                assert dom.owned_intids == expected, "intid/peripheral ownership drift"
                assert not (dom.owned_peripherals & seen_p), "double peripheral ownership"
                assert not (dom.owned_intids & seen_i), "double INTID ownership"
            seen_p |= dom.owned_peripherals
            seen_i |= dom.owned_intids

    # -- address-space table ------------------------------------------------

    def _rebuild_asc(self) -> None:
        sc = self.sc
        regions: list[AscRegion] = []
        temporal = sc.mode.value == "temporal"
        if temporal:
            cur = self.domains[self.current_temporal]
            members = [(cur, None)]
        else:
            members = [
                (d, sorted(d.cores))
                for d in sorted(self.domains.values(), key=lambda x: x.id)
                if d.state is DomainState.RUNNING
            ]

        for dom, cores in members:
            for i, (b, ln) in enumerate(dom.memory_regions):
                regions.append(
                    region(b, ln, PERM_RW, cores, name=f"{dom.name}.mem{i}")
                )
        # shared mailbox regions: visible to every running declarer
        for rname, (b, ln) in sorted(self.p.shm_map.items()):
            sharers = [d for d, _ in members if rname in d.shared_regions]
            if not sharers:
                continue
            cores = None
            if not temporal:
                cores = sorted({c for d in sharers for c in d.cores})
            regions.append(region(b, ln, PERM_RW, cores, name=f"shm.{rname}"))
        # peripheral windows
        for p in sc.peripherals:
            owner_id = self.periph_owner.get(p.name)
            owner = self.domains.get(owner_id) if owner_id is not None else None
            owner_in = owner is not None and any(d.id == owner.id for d, _ in members)
            readers = [
                d for d, _ in members
                if owner is not None and d.id in self.readonly_readers.get(p.name, set())
            ]
            rt = self.p.peripherals[p.name]
            if rt.data_granule_base is not None and (readers or owner_in):
                cfg_len = rt.data_granule_base - p.base
                if owner_in and cfg_len:
                    cores = None if temporal else sorted(owner.cores)
                    regions.append(region(p.base, cfg_len, PERM_RW, cores, name=f"{p.name}.cfg"))
                allowed = ([owner] if owner_in else []) + readers
                cores = None if temporal else sorted({c for d in allowed for c in d.cores})
                regions.append(
                    region(rt.data_granule_base, p.base + p.size - rt.data_granule_base,
                           PERM_RO, cores, name=f"{p.name}.data")
                )
            elif owner_in:
                cores = None if temporal else sorted(owner.cores)
                regions.append(region(p.base, p.size, PERM_RW, cores, name=p.name))
        # the interrupt-controller window: open under whole-platform slicing
        # (per-INTID views do the filtering), closed otherwise (monitor calls
        # or the shim are the only way in)
        gic_ns = PERM_RW if temporal else PERM_NONE
        regions.append(region(sc.gic_base, GIC_REGION_SIZE, gic_ns, None, name="gic"))
        self.p.asc.configure(regions, Security.SECURE)
        self.p.emit("asc_configured", payload={"regions": self.p.asc.snapshot()})


def _round_up(v: int, granule: int) -> int:
    return (v + granule - 1) // granule * granule


def _ranges(values: list[int]) -> str:
    """Compact "16-31,33,40-41" rendering for bulk trace records."""
    if not values:
        return ""
    spans = []
    start = prev = values[0]
    for v in values[1:]:
        if v == prev + 1:
            prev = v
            continue
        spans.append((start, prev))
        start = prev = v
    spans.append((start, prev))
    return ",".join(f"{a}-{b}" if a != b else f"{a}" for a, b in spans)


def _enc_arg(x):
    return x.hex() if isinstance(x, bytes) else x
