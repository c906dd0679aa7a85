"""Deterministic execution substrate.

Cores step scripted domain programs in round-robin order, one action per
core per global step. Every memory access goes through the bus pipeline
(access-control check, then dispatch to DRAM, peripheral windows, or the
interrupt-controller register file). Peripherals fire interrupts on their
scripted schedules; deliveries, the secure timer, and user-action
injections all happen at step boundaries. Every effect appends trace
events, which are the sole input to the isolation checker.
"""

from __future__ import annotations

from dataclasses import dataclass

from .asc import AccessDecision, Asc
from .bus import AccessKind, BusTransaction, Security, width_mask
from .gic import (
    GIC_REGION_SIZE,
    Gic,
    ConfigChange,
    ProtocolError,
    RegisterClass,
    RegisterId,
    register_at,
)
from .monitor import SMC_ERR, SMC_FNS, SMC_OK, FaultInjection, Monitor, MonitorFault
from .scenario import Action, Scenario
from .trace import TraceEvent, header_event

DATA_WINDOW_BYTES = 64
MAILBOX_HEADER = 24  # ready flag, consumed flag, length: one u64 each


class Memory:
    """Sparse byte-addressed DRAM; unwritten bytes read as zero."""

    def __init__(self):
        self.cells: dict[int, int] = {}

    def read(self, addr: int, width: int) -> int:
        cells = self.cells
        return int.from_bytes(
            bytes(cells.get(addr + i, 0) for i in range(width)), "little"
        )

    def write(self, addr: int, value: int, width: int) -> None:
        for i, b in enumerate((value & width_mask(width)).to_bytes(width, "little")):
            if b:
                self.cells[addr + i] = b
            else:
                self.cells.pop(addr + i, None)

    def read_bytes(self, addr: int, n: int) -> bytes:
        return bytes(self.cells.get(addr + i, 0) for i in range(n))

    def write_bytes(self, addr: int, data: bytes) -> None:
        for i, b in enumerate(data):
            if b:
                self.cells[addr + i] = b
            else:
                self.cells.pop(addr + i, None)

    def zero_range(self, base: int, length: int) -> None:
        for k in [k for k in self.cells if base <= k < base + length]:
            del self.cells[k]


class PeripheralRuntime:
    """Backing store and liveness for one memory-mapped peripheral."""

    def __init__(self, decl, granule: int):
        self.decl = decl
        self.store: dict[int, int] = {}
        self.dirty = False
        # Read-only-capable peripherals keep their data window in a separate
        # granule so the address-space controller can grant it independently.
        if "readonly" in decl.modes:
            self.data_granule_base: int | None = decl.base + decl.size - granule
        else:
            self.data_granule_base = None
        self.data_base = self.data_granule_base or decl.base
        for i, b in enumerate(decl.data):
            self.store[self.data_base - decl.base + i] = b

    def read(self, offset: int, width: int) -> int:
        return int.from_bytes(
            bytes(self.store.get(offset + i, 0) for i in range(width)), "little"
        )

    def write(self, offset: int, value: int, width: int) -> None:
        for i, b in enumerate((value & width_mask(width)).to_bytes(width, "little")):
            if b:
                self.store[offset + i] = b
            else:
                self.store.pop(offset + i, None)
        self.dirty = True

    def reset(self) -> None:
        """Software-based reset on ownership transfer: configuration state is
        cleared, the data window is the owner's cleanup problem."""
        data_off = self.data_base - self.decl.base
        for k in [k for k in self.store if k < data_off]:
            del self.store[k]


class Frame:
    """Execution state of one scripted core: the register snapshot of the
    abstract machine."""

    __slots__ = ("script", "handler", "pc", "hpc", "in_handler", "handling",
                 "sleep", "waiting", "done", "halt_reported")

    def __init__(self, script: tuple[Action, ...], handler: tuple[Action, ...]):
        self.script = script
        self.handler = handler
        self.pc = 0
        self.hpc = 0
        self.in_handler = False
        self.handling: int | None = None
        self.sleep = 0
        self.waiting = False
        self.done = False
        self.halt_reported = False

    def fetch(self) -> Action | None:
        if self.in_handler:
            if self.hpc < len(self.handler):
                act = self.handler[self.hpc]
                self.hpc += 1
                return act
            self.done = True
            return None
        if self.pc < len(self.script):
            act = self.script[self.pc]
            self.pc += 1
            return act
        self.done = True
        return None

    def retreat(self) -> None:
        if self.in_handler:
            self.hpc -= 1
        else:
            self.pc -= 1

    def enter_handler(self, intid: int) -> None:
        self.in_handler = True
        self.hpc = 0
        self.handling = intid
        self.waiting = False

    def exit_handler(self) -> None:
        self.in_handler = False
        self.handling = None


@dataclass
class Core:
    id: int
    current_domain: int | None = None
    shim: bool = False
    frame: Frame | None = None
    presented: int | None = None


class Platform:
    def __init__(self, scenario: Scenario, seed: int = 0,
                 fault_injection: FaultInjection | None = None):
        self.scenario = scenario
        self.sc = scenario
        self.seed = seed
        self.fault_injection = fault_injection or FaultInjection()
        self.step = 0
        self.events: list[TraceEvent] = []
        self.memory = Memory()
        self.asc = Asc(scenario.granule)
        assignments = [
            (intid, p.name) for p in scenario.peripherals for intid in p.intids
        ]
        self.gic = Gic(scenario.cores, assignments, base_address=scenario.gic_base)
        self.peripherals = {
            p.name: PeripheralRuntime(p, scenario.granule) for p in scenario.peripherals
        }
        self.cores = [Core(i) for i in range(scenario.cores)]
        self.shm_map: dict[str, tuple[int, int]] = {}
        self._fires: dict[int, list[tuple[str, int]]] = {}
        for p in scenario.peripherals:
            for step, intid in p.fires:
                self._fires.setdefault(step, []).append((p.name, intid))
        self._fire_steps = sorted(self._fires)
        self.monitor = Monitor(self)

    # ------------------------------------------------------------------
    # tracing
    # ------------------------------------------------------------------

    def emit(self, kind: str, core: int | None = None, domain: int | None = None,
             payload: dict | None = None) -> None:
        self.events.append(TraceEvent(self.step, kind, core, domain, payload or {}))

    def emit_gic_change(self, change, issuer, via: str | None = None,
                        source: str | None = None) -> None:
        if isinstance(change, ConfigChange):
            payload = {
                "intid": change.intid,
                "field": change.field,
                "old": _plain(change.old),
                "new": _plain(change.new),
                "issuer": issuer,
            }
            if change.core is not None:
                payload["bank"] = change.core
            if via:
                payload["via"] = via
            self.emit("gic_config_change", payload=payload)
        else:
            payload = {
                "intid": change.intid,
                "from": change.old.value,
                "to": change.new.value,
                "cause": change.cause,
                "issuer": issuer,
            }
            if source:
                payload["source"] = source
            if change.core is not None:
                payload["bank"] = change.core
            self.emit("gic_state_change", payload=payload)

    def drop_presented(self, intid: int) -> None:
        for core in self.cores:
            if core.presented == intid:
                core.presented = None

    def install_frame(self, core_id: int, dom) -> None:
        self.cores[core_id].frame = Frame(dom.decl.script, dom.decl.handler)

    # ------------------------------------------------------------------
    # bus pipeline
    # ------------------------------------------------------------------

    def transact(self, core_id: int, address: int, kind: AccessKind,
                 value: int | None = None, width: int = 4,
                 security: Security = Security.NONSECURE) -> tuple[int, bool]:
        """Issue one transaction; returns (read value or 0, allowed)."""
        txn = BusTransaction(core_id, address, width, kind, value, security)
        core = self.cores[core_id]
        decision = self.asc.check(txn)
        if not decision.allowed and self.fault_injection.mem_bypass \
                and security is Security.NONSECURE:
            decision = AccessDecision(True, None, "mem_bypass")
        if not decision.allowed:
            in_gic = self.sc.gic_base <= address < self.sc.gic_base + GIC_REGION_SIZE
            if in_gic and core.shim and security is Security.NONSECURE:
                self.emit("shim_trap", core=core_id, domain=core.current_domain,
                          payload={"address": address, "access": kind.value})
                try:
                    ret = self.monitor.gic_access(core_id, address, kind, value, via="shim")
                except MonitorFault as exc:
                    self.emit("monitor_fault", core=core_id, domain=core.current_domain,
                              payload={"fn": f"gic_{kind.value}", "detail": str(exc)})
                    ret = 0
                self.emit("shim_forwarded", core=core_id, domain=core.current_domain,
                          payload={"address": address, "access": kind.value,
                                   "value": value, "ret": ret})
                return ret, True
            self.emit("bus_denied", core=core_id, domain=core.current_domain,
                      payload={"address": address, "width": width, "access": kind.value,
                               "reason": decision.reason.value})
            return 0, False

        target, result = self._dispatch(core, txn)
        self.emit("bus_access", core=core_id, domain=core.current_domain,
                  payload={"address": address, "width": width, "access": kind.value,
                           "value": result if kind is AccessKind.READ else (value or 0),
                           "security": security.value, "target": target})
        return result, True

    def _dispatch(self, core: Core, txn: BusTransaction) -> tuple[str, int]:
        addr = txn.address
        sc = self.sc
        if sc.gic_base <= addr < sc.gic_base + GIC_REGION_SIZE:
            reg = register_at(addr - sc.gic_base, txn.width)
            if reg is None:
                return "gic", 0
            val, changes = self.gic.register_access(
                reg, txn.kind, txn.value, txn.security, core.id
            )
            issuer = core.current_domain if core.current_domain is not None else "monitor"
            for ch in changes:
                self.emit_gic_change(ch, issuer=issuer, via="mmio")
            return "gic", val
        for name, rt in self.peripherals.items():
            d = rt.decl
            if d.base <= addr < d.base + d.size:
                if txn.kind is AccessKind.READ:
                    return f"mmio:{name}", rt.read(addr - d.base, txn.width)
                rt.write(addr - d.base, txn.value or 0, txn.width)
                return f"mmio:{name}", 0
        if sc.dram_base <= addr < sc.dram_base + sc.dram_size:
            if txn.kind is AccessKind.READ:
                return "dram", self.memory.read(addr, txn.width)
            self.memory.write(addr, txn.value or 0, txn.width)
            return "dram", 0
        return "void", 0

    # ------------------------------------------------------------------
    # stepping
    # ------------------------------------------------------------------

    def run(self, max_steps: int | None = None) -> list[TraceEvent]:
        limit = max_steps if max_steps is not None else self.sc.checks.max_steps
        self.events.append(header_event(self.sc.name, self.seed))
        self.monitor.boot()
        reason = "max_steps"
        while self.step < limit:
            self.step += 1
            self._boundary()
            self._execute()
            if self._finished():
                reason = "all_halted"
                break
        self.emit("run_end", payload={"reason": reason, "steps": self.step})
        return self.events

    def _boundary(self) -> None:
        for pname, intid in self._fires.get(self.step, ()):
            self.peripheral_fire(pname, intid)
        mon = self.monitor
        if mon.timer_armed is not None and self.step >= mon.timer_armed[1]:
            mon.on_timer_expiry()
        for inj in self.sc.injections:
            if inj.step == self.step:
                self._inject(inj)
        self._deliver()

    def peripheral_fire(self, pname: str, intid: int) -> None:
        rt = self.peripherals[pname]
        if intid not in rt.decl.intids:
            raise ValueError(f"INTID {intid} does not belong to {pname}")
        self.emit("interrupt_fired", payload={"intid": intid, "source": pname})
        for ch in self.gic.fire(intid):
            self.emit_gic_change(ch, issuer="peripheral", source=pname)

    def _inject(self, inj) -> None:
        try:
            if inj.op == "handover":
                self.monitor.handover(inj.args[0], inj.args[1], trigger="user_action")
            elif inj.op == "teardown":
                dom_id = self.monitor.domain_id_by_name(inj.args[0])
                if dom_id is None:
                    raise MonitorFault(f"unknown domain {inj.args[0]}")
                self.monitor.teardown(dom_id, requester="user")
        except MonitorFault as exc:
            self.emit("monitor_fault", payload={"fn": f"user_{inj.op}", "detail": str(exc)})

    def _deliver(self) -> None:
        latched = {c.presented for c in self.cores if c.presented is not None}
        fi = self.fault_injection
        if fi.g4_suppress_intid is not None:
            latched = latched | {fi.g4_suppress_intid}
        for core in self.cores:
            if not self._receptive(core):
                continue
            sel = self.gic.select(core.id, Security.NONSECURE, exclude=latched)
            if sel is None and fi.g3_misdeliver:
                sel = self._misdeliver_candidate(core, latched)
            if sel is not None:
                latched.add(sel)
                self._present(core, sel)

    def _receptive(self, core: Core) -> bool:
        # A halted or sleeping core still takes interrupts (idle loop with
        # interrupts enabled); only a core mid-handler or mid-handshake is
        # deaf.
        f = core.frame
        return (
            f is not None
            and not f.in_handler
            and core.presented is None
            and core.current_domain is not None
            and self.gic.core_active[core.id] is None
        )

    def _misdeliver_candidate(self, core: Core, latched: set[int]) -> int | None:
        for desc in self.gic.spi_descriptors():
            if desc.is_pending() and desc.intid not in latched:
                owner = self._intid_owner(desc.intid)
                if owner is not None and owner != core.current_domain:
                    return desc.intid
        return None

    def _intid_owner(self, intid: int) -> int | None:
        for dom in self.monitor.domains.values():
            if dom.live() and intid in dom.owned_intids:
                return dom.id
        return None

    def _present(self, core: Core, intid: int) -> None:
        core.presented = intid
        self.emit("interrupt_delivered", core=core.id, domain=core.current_domain,
                  payload={"intid": intid})
        frame = core.frame
        frame.waiting = False
        if frame.handler:
            frame.enter_handler(intid)
        else:
            self.emit("protocol_error", core=core.id, domain=core.current_domain,
                      payload={"detail": "delivery without handler", "intid": intid})

    def _execute(self) -> None:
        for core in self.cores:
            frame = core.frame
            if frame is None:
                continue
            if not frame.in_handler:
                if frame.done:
                    continue
                if frame.sleep > 0:
                    frame.sleep -= 1
                    continue
                if frame.waiting:
                    continue
            act = frame.fetch()
            if act is None:
                if not frame.halt_reported:
                    self.emit("halt", core=core.id, domain=core.current_domain)
                    frame.halt_reported = True
                continue
            self._dispatch_action(core, act)

    def _finished(self) -> bool:
        if self.monitor.timer_armed is not None:
            return False
        if self._fire_steps and self._fire_steps[-1] > self.step:
            return False
        if any(inj.step > self.step for inj in self.sc.injections):
            return False
        latched = {c.presented for c in self.cores if c.presented is not None}
        for core in self.cores:
            f = core.frame
            if f is None:
                continue
            if f.in_handler:
                return False
            if f.done or f.waiting:
                # halted and waiting cores wake up only for a delivery
                if self._receptive(core) and self.gic.select(
                        core.id, Security.NONSECURE, exclude=latched) is not None:
                    return False
                continue
            return False
        return True

    # ------------------------------------------------------------------
    # action execution
    # ------------------------------------------------------------------

    def _dispatch_action(self, core: Core, act: Action) -> None:
        handler = getattr(self, f"_op_{act.op}", None)
        if handler is None:
            raise ValueError(f"unknown action {act.op!r}")
        completed = handler(core, *act.args)
        if completed is False:
            core.frame.retreat()

    # -- trivial control flow

    def _op_nop(self, core: Core):
        pass

    def _op_halt(self, core: Core):
        core.frame.done = True
        self.emit("halt", core=core.id, domain=core.current_domain)

    def _op_wfi(self, core: Core):
        core.frame.waiting = True
        self.emit("wfi", core=core.id, domain=core.current_domain)

    def _op_sleep(self, core: Core, n: int):
        core.frame.sleep = n

    def _op_ret(self, core: Core):
        if core.frame.in_handler:
            core.frame.exit_handler()
        else:
            self.emit("protocol_error", core=core.id, domain=core.current_domain,
                      payload={"detail": "ret outside handler"})

    def _op_ack(self, core: Core):
        frame = core.frame
        intid = frame.handling if frame.in_handler else core.presented
        if intid is None:
            self.emit("protocol_error", core=core.id, domain=core.current_domain,
                      payload={"detail": "acknowledge with nothing delivered"})
            return
        try:
            for ch in self.gic.acknowledge(core.id, intid):
                self.emit_gic_change(ch, issuer=core.current_domain)
            self.emit("interrupt_ack", core=core.id, domain=core.current_domain,
                      payload={"intid": intid})
        except ProtocolError as exc:
            self.emit("protocol_error", core=core.id, domain=core.current_domain,
                      payload={"detail": str(exc), "intid": intid})
        core.presented = None

    def _op_eoi(self, core: Core):
        frame = core.frame
        intid = frame.handling if frame.in_handler else self.gic.core_active[core.id]
        if intid is None:
            self.emit("protocol_error", core=core.id, domain=core.current_domain,
                      payload={"detail": "end-of-interrupt with nothing active"})
            return
        try:
            for ch in self.gic.end_of_interrupt(core.id, intid):
                self.emit_gic_change(ch, issuer=core.current_domain)
            self.emit("interrupt_eoi", core=core.id, domain=core.current_domain,
                      payload={"intid": intid})
        except ProtocolError as exc:
            self.emit("protocol_error", core=core.id, domain=core.current_domain,
                      payload={"detail": str(exc), "intid": intid})

    # -- memory and MMIO

    def _op_mmio_read(self, core: Core, pname: str, off: int, width: int = 4):
        self.transact(core.id, self.peripherals[pname].decl.base + off,
                      AccessKind.READ, width=width)

    def _op_mmio_write(self, core: Core, pname: str, off: int, value: int, width: int = 4):
        self.transact(core.id, self.peripherals[pname].decl.base + off,
                      AccessKind.WRITE, value, width=width)

    def _op_mem_read(self, core: Core, off: int, width: int = 8):
        base = self._own_base(core)
        if base is not None:
            self.transact(core.id, base + off, AccessKind.READ, width=width)

    def _op_mem_write(self, core: Core, off: int, value: int, width: int = 8):
        base = self._own_base(core)
        if base is not None:
            self.transact(core.id, base + off, AccessKind.WRITE, value, width=width)

    def _own_base(self, core: Core) -> int | None:
        dom = self.monitor.domains.get(core.current_domain)
        if dom is None or not dom.memory_regions:
            return None
        return dom.memory_regions[0][0]

    def _op_shm_read(self, core: Core, region: str, off: int, width: int = 8):
        self.transact(core.id, self.shm_map[region][0] + off, AccessKind.READ, width=width)

    def _op_shm_write(self, core: Core, region: str, off: int, value: int, width: int = 8):
        self.transact(core.id, self.shm_map[region][0] + off, AccessKind.WRITE, value,
                      width=width)

    def _op_read_addr(self, core: Core, addr: int, width: int = 4):
        self.transact(core.id, addr, AccessKind.READ, width=width)

    def _op_write_addr(self, core: Core, addr: int, value: int, width: int = 4):
        self.transact(core.id, addr, AccessKind.WRITE, value, width=width)

    def _op_clear(self, core: Core, pname: str):
        rt = self.peripherals[pname]
        ok = True
        for off in range(0, DATA_WINDOW_BYTES, 8):
            _, allowed = self.transact(core.id, rt.data_base + off, AccessKind.WRITE,
                                       0, width=8)
            ok = ok and allowed
        if ok:
            rt.dirty = False
            self.emit("peripheral_cleared", core=core.id, domain=core.current_domain,
                      payload={"peripheral": pname})

    # -- raw interrupt-controller pokes (shim path or direct, per mode)

    def _gic_reg_addr(self, cls_name: str, index: int) -> tuple[int, int]:
        reg = RegisterId(RegisterClass[cls_name], index)
        return self.sc.gic_base + reg.offset(), reg.width

    def _op_gic_read(self, core: Core, cls_name: str, index: int):
        addr, width = self._gic_reg_addr(cls_name, index)
        self.transact(core.id, addr, AccessKind.READ, width=width)

    def _op_gic_write(self, core: Core, cls_name: str, index: int, value: int):
        addr, width = self._gic_reg_addr(cls_name, index)
        self.transact(core.id, addr, AccessKind.WRITE, value, width=width)

    # -- monitor calls

    def _smc(self, core: Core, fn: str, args: list, thunk) -> int:
        caller = core.current_domain  # the call may switch who is on the core
        try:
            ret = thunk()
            if ret is None:
                ret = SMC_OK
        except MonitorFault as exc:
            self.emit("monitor_fault", core=core.id, domain=caller,
                      payload={"fn": fn, "detail": str(exc)})
            ret = SMC_ERR
        self.emit("monitor_call", core=core.id, domain=caller,
                  payload={"fn": fn, "fn_id": SMC_FNS[fn], "args": args, "ret": ret})
        return ret

    def _caller(self, core: Core):
        return self.monitor.domains[core.current_domain]

    def _op_yield(self, core: Core):
        self._smc(core, "yield", [], lambda: self.monitor.do_yield(core.id))

    def _op_setup(self, core: Core, name: str):
        decl = self.sc.domain_by_name(name)
        self._smc(core, "setup", [name],
                  lambda: self.monitor.setup_domain(self._caller(core), decl))

    def _op_run(self, core: Core, name: str, mode: str, budget: int = 0):
        def thunk():
            dom_id = self.monitor.domain_id_by_name(name)
            if dom_id is None:
                raise MonitorFault(f"domain {name} not set up")
            self.monitor.run_domain(self._caller(core), dom_id, mode, budget)
        self._smc(core, "run", [name, mode, budget], thunk)

    def _op_teardown(self, core: Core, name: str):
        def thunk():
            dom_id = self.monitor.domain_id_by_name(name)
            if dom_id is None:
                raise MonitorFault(f"domain {name} not set up")
            self.monitor.teardown(dom_id, requester="domain", core=core.id)
        self._smc(core, "teardown", [name], thunk)

    def _op_cede(self, core: Core, pname: str, to: str | None = None):
        self._smc(core, "cede", [pname, to or ""],
                  lambda: self.monitor.handover(pname, to, "owner_cede", core=core.id))

    def _op_readonly(self, core: Core, pname: str, reader: str):
        self._smc(core, "readonly", [pname, reader],
                  lambda: self.monitor.configure_readonly(core.id, pname, reader))

    def _op_derive_key(self, core: Core, off: int = 0):
        self._smc(core, "derive_key", [off],
                  lambda: self.monitor.do_derive_key(core.id, off))

    def _op_attest(self, core: Core, name: str, off: int = 0):
        self._smc(core, "attest", [name, off],
                  lambda: self.monitor.attest(core.id, name, off))

    def _op_smc_gic_read(self, core: Core, cls_name: str, index: int):
        addr, _ = self._gic_reg_addr(cls_name, index)
        try:
            self.monitor.gic_access(core.id, addr, AccessKind.READ, via="smc")
        except MonitorFault as exc:
            self.emit("monitor_fault", core=core.id, domain=core.current_domain,
                      payload={"fn": "gic_read", "detail": str(exc)})

    def _op_smc_gic_write(self, core: Core, cls_name: str, index: int, value: int):
        addr, _ = self._gic_reg_addr(cls_name, index)
        try:
            self.monitor.gic_access(core.id, addr, AccessKind.WRITE, value, via="smc")
        except MonitorFault as exc:
            self.emit("monitor_fault", core=core.id, domain=core.current_domain,
                      payload={"fn": "gic_write", "detail": str(exc)})

    # -- shared-memory mailboxes (proxy mode)

    def _op_proxy_send(self, core: Core, region: str, payload: bytes):
        base, size = self.shm_map[region]
        if len(payload) + MAILBOX_HEADER > size:
            self.emit("proxy_error", core=core.id, domain=core.current_domain,
                      payload={"channel": region, "detail": "payload exceeds region"})
            return True
        ready, ok = self.transact(core.id, base, AccessKind.READ, width=8)
        if not ok:
            return True  # denied: the denial event is the outcome
        if ready == 1:
            return False  # mailbox still unconsumed, retry next step
        self.transact(core.id, base + 16, AccessKind.WRITE, len(payload), width=8)
        for i in range(0, len(payload), 8):
            chunk = payload[i:i + 8].ljust(8, b"\x00")
            self.transact(core.id, base + MAILBOX_HEADER + i, AccessKind.WRITE,
                          int.from_bytes(chunk, "little"), width=8)
        self.transact(core.id, base + 8, AccessKind.WRITE, 0, width=8)
        _, ok = self.transact(core.id, base, AccessKind.WRITE, 1, width=8)
        if ok:
            self.emit("proxy_send", core=core.id, domain=core.current_domain,
                      payload={"channel": region, "length": len(payload),
                               "data": payload.hex()})
        return True

    def _op_proxy_recv(self, core: Core, region: str):
        base, size = self.shm_map[region]
        ready, ok = self.transact(core.id, base, AccessKind.READ, width=8)
        if not ok:
            return True
        if ready != 1:
            return False
        length, _ = self.transact(core.id, base + 16, AccessKind.READ, width=8)
        length = min(length, size - MAILBOX_HEADER)
        data = b""
        for i in range(0, length, 8):
            word, _ = self.transact(core.id, base + MAILBOX_HEADER + i,
                                    AccessKind.READ, width=8)
            data += word.to_bytes(8, "little")
        data = data[:length]
        self.transact(core.id, base + 8, AccessKind.WRITE, 1, width=8)
        _, ok = self.transact(core.id, base, AccessKind.WRITE, 0, width=8)
        if ok:
            self.emit("proxy_recv", core=core.id, domain=core.current_domain,
                      payload={"channel": region, "length": length, "data": data.hex()})
        return True


def _plain(value):
    return value.value if hasattr(value, "value") else value


def run_scenario(scenario: Scenario, seed: int = 0,
                 fault_injection: FaultInjection | None = None,
                 max_steps: int | None = None) -> list[TraceEvent]:
    """Boot the monitor, hand control to the scheduler domain, and replay
    every script to completion (or the step cap). Faults and denials are
    trace content, never simulator failures."""
    return Platform(scenario, seed, fault_injection).run(max_steps)
