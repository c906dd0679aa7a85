"""GICv3-style interrupt routing model.

Models the distributor/redistributor state that matters for isolation:
per-INTID descriptors with group, enable, priority, affinity and an
activation state machine, exposed through packed 32/64-bit registers with
distinct secure and non-secure views.

Modeled INTIDs: PPIs 16-31 (banked per core) and SPIs 32-255 (shared).
SGIs 0-15, LPIs and the virtual interface are out of scope; their register
fields read as zero and ignore writes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .bus import AccessKind, Security

PPI_FIRST, PPI_LAST = 16, 31
SPI_FIRST, SPI_LAST = 32, 255

DEFAULT_PRIORITY = 0xA0

# Routing-mode bit in the 64-bit router register: when set, the interrupt
# is not pinned to one core and may be delivered to any ready core.
IROUTER_ANY_CORE = 1 << 31

# Secure timer PPI, permanently secure and monitor-owned.
TIMER_PPI = 29


class GicError(Exception):
    """Configuration or usage error at the interrupt-controller layer."""


class ProtocolError(GicError):
    """Out-of-order acknowledge / end-of-interrupt; recorded, not fatal."""


class Activation(enum.Enum):
    INACTIVE = "inactive"
    PENDING = "pending"
    ACTIVE = "active"
    ACTIVE_AND_PENDING = "active_and_pending"


class PendingSource(enum.Enum):
    NONE = "none"
    PERIPHERAL = "peripheral"
    SOFTWARE = "software"


@dataclass(slots=True)
class InterruptDescriptor:
    intid: int
    group: Security = Security.NONSECURE
    enabled: bool = False
    priority: int = DEFAULT_PRIORITY
    affinity: int | None = None
    activation: Activation = Activation.INACTIVE
    pending_source: PendingSource = PendingSource.NONE
    trigger_config: int = 0  # raw 2-bit edge/level field, semantically inert

    def is_pending(self) -> bool:
        return self.activation in (Activation.PENDING, Activation.ACTIVE_AND_PENDING)

    def is_active(self) -> bool:
        return self.activation in (Activation.ACTIVE, Activation.ACTIVE_AND_PENDING)

    def key(self) -> tuple:
        return (
            self.intid,
            self.group.value,
            self.enabled,
            self.priority,
            self.affinity,
            self.activation.value,
            self.pending_source.value,
            self.trigger_config,
        )


class RegisterClass(enum.Enum):
    GROUPR = "GROUPR"
    ISENABLER = "ISENABLER"
    ICENABLER = "ICENABLER"
    ISPENDR = "ISPENDR"
    ICPENDR = "ICPENDR"
    ISACTIVER = "ISACTIVER"
    ICACTIVER = "ICACTIVER"
    IPRIORITYR = "IPRIORITYR"
    ICFGR = "ICFGR"
    IROUTER = "IROUTER"


# (base offset, stride, fields per register, register width in bytes)
_REG_LAYOUT: dict[RegisterClass, tuple[int, int, int, int]] = {
    RegisterClass.GROUPR: (0x0080, 4, 32, 4),
    RegisterClass.ISENABLER: (0x0100, 4, 32, 4),
    RegisterClass.ICENABLER: (0x0180, 4, 32, 4),
    RegisterClass.ISPENDR: (0x0200, 4, 32, 4),
    RegisterClass.ICPENDR: (0x0280, 4, 32, 4),
    RegisterClass.ISACTIVER: (0x0300, 4, 32, 4),
    RegisterClass.ICACTIVER: (0x0380, 4, 32, 4),
    RegisterClass.IPRIORITYR: (0x0400, 4, 4, 4),
    RegisterClass.ICFGR: (0x0C00, 4, 16, 4),
    RegisterClass.IROUTER: (0x6000, 8, 1, 8),
}

GIC_REGION_SIZE = 0x10000

CONFIG_CLASSES = frozenset(
    {
        RegisterClass.GROUPR,
        RegisterClass.ISENABLER,
        RegisterClass.ICENABLER,
        RegisterClass.IPRIORITYR,
        RegisterClass.ICFGR,
        RegisterClass.IROUTER,
    }
)
STATE_CLASSES = frozenset(
    {
        RegisterClass.ISPENDR,
        RegisterClass.ICPENDR,
        RegisterClass.ISACTIVER,
        RegisterClass.ICACTIVER,
    }
)


@dataclass(frozen=True, slots=True)
class RegisterId:
    register_class: RegisterClass
    index: int

    @property
    def covered_intids(self) -> range:
        per = _REG_LAYOUT[self.register_class][2]
        if self.register_class is RegisterClass.IROUTER:
            return range(self.index, self.index + 1)
        return range(self.index * per, (self.index + 1) * per)

    @property
    def bits_per_field(self) -> int:
        _, _, per, width = _REG_LAYOUT[self.register_class]
        return width * 8 // per

    @property
    def width(self) -> int:
        return _REG_LAYOUT[self.register_class][3]

    def offset(self) -> int:
        base, stride, _, _ = _REG_LAYOUT[self.register_class]
        return base + stride * self.index

    def field_shift(self, intid: int) -> int:
        if self.register_class is RegisterClass.IROUTER:
            return 0
        return (intid - self.covered_intids.start) * self.bits_per_field


def register_at(offset: int, width: int) -> RegisterId | None:
    """Resolve a byte offset inside the controller region to a modeled
    register, or None for unmodeled space (read-as-zero, write-ignored)."""
    for cls, (base, stride, per, reg_width) in _REG_LAYOUT.items():
        count = 256 // per if cls is not RegisterClass.IROUTER else 0
        if cls is RegisterClass.IROUTER:
            if base + 8 * SPI_FIRST <= offset <= base + 8 * SPI_LAST:
                if (offset - base) % 8 == 0 and width == 8:
                    return RegisterId(cls, (offset - base) // 8)
            continue
        if base <= offset < base + stride * count:
            if (offset - base) % stride == 0 and width == 4:
                return RegisterId(cls, (offset - base) // stride)
    return None


@dataclass(frozen=True, slots=True)
class ConfigChange:
    """One applied change to a descriptor configuration field."""

    intid: int
    field: str
    old: object
    new: object
    core: int | None = None  # bank for PPIs


@dataclass(frozen=True, slots=True)
class StateChange:
    """One applied activation-state transition."""

    intid: int
    old: Activation
    new: Activation
    cause: str
    core: int | None = None


Change = ConfigChange | StateChange


def _is_modeled(intid: int) -> bool:
    return PPI_FIRST <= intid <= SPI_LAST


class Gic:
    """Interrupt-controller state plus the operations the bus and monitor use.

    Pure state transformer: no internal locking; the platform loop
    serializes every call.
    """

    def __init__(
        self,
        num_cores: int,
        assignments: dict[int, str] | list[tuple[int, str]] | None = None,
        base_address: int = 0,
    ):
        if num_cores < 1:
            raise GicError("at least one core required")
        self.num_cores = num_cores
        self.base_address = base_address
        self.source_of: dict[int, str] = {}
        pairs = assignments.items() if isinstance(assignments, dict) else (assignments or [])
        for intid, source in pairs:
            if not SPI_FIRST <= intid <= SPI_LAST:
                raise GicError(f"INTID {intid} outside the assignable SPI range")
            if intid in self.source_of:
                raise GicError(
                    f"INTID {intid} assigned to both {self.source_of[intid]} and {source}"
                )
            self.source_of[intid] = source
        self._spi = {i: InterruptDescriptor(i) for i in range(SPI_FIRST, SPI_LAST + 1)}
        self._ppi = {
            (c, i): InterruptDescriptor(i)
            for c in range(num_cores)
            for i in range(PPI_FIRST, PPI_LAST + 1)
        }
        # Acknowledged interrupt per core; while set, that core takes no
        # further deliveries (simplified running-priority mask).
        self.core_active: dict[int, int | None] = {c: None for c in range(num_cores)}

    # -- descriptor access ------------------------------------------------

    def descriptor(self, intid: int, core: int = 0) -> InterruptDescriptor:
        if SPI_FIRST <= intid <= SPI_LAST:
            return self._spi[intid]
        if PPI_FIRST <= intid <= PPI_LAST:
            return self._ppi[(core, intid)]
        raise GicError(f"INTID {intid} not modeled")

    def spi_descriptors(self) -> list[InterruptDescriptor]:
        return [self._spi[i] for i in range(SPI_FIRST, SPI_LAST + 1)]

    def snapshot(self) -> tuple:
        spis = tuple(self._spi[i].key() for i in range(SPI_FIRST, SPI_LAST + 1))
        ppis = tuple(
            self._ppi[(c, i)].key()
            for c in range(self.num_cores)
            for i in range(PPI_FIRST, PPI_LAST + 1)
        )
        active = tuple(self.core_active[c] for c in range(self.num_cores))
        return (spis, ppis, active)

    # -- configuration helpers (monitor-side, attributed by the caller) ---

    def set_config(self, intid: int, core: int = 0, **fields) -> list[ConfigChange]:
        """Directly set configuration fields; returns the applied diffs."""
        desc = self.descriptor(intid, core)
        bank = core if intid <= PPI_LAST else None
        changes = []
        for name, new in fields.items():
            old = getattr(desc, name)
            if old != new:
                setattr(desc, name, new)
                changes.append(ConfigChange(intid, name, old, new, bank))
        return changes

    # -- register file ----------------------------------------------------

    def register_access(
        self,
        reg: RegisterId,
        kind: AccessKind,
        value: int | None = None,
        security: Security = Security.SECURE,
        core: int = 0,
    ) -> tuple[int, list[Change]]:
        """Read or write one packed register.

        Secure accesses see and modify every field. Non-secure accesses see
        secure-group fields as zero and their writes to those fields are
        ignored. Returns (read value or 0, applied changes).
        """
        if kind is AccessKind.READ:
            return self._read(reg, security, core), []
        assert value is not None
        return 0, self._write(reg, value, security, core)

    def _visible(self, desc: InterruptDescriptor, security: Security) -> bool:
        return security is Security.SECURE or desc.group is Security.NONSECURE

    def _read(self, reg: RegisterId, security: Security, core: int) -> int:
        cls = reg.register_class
        word = 0
        for intid in reg.covered_intids:
            if not _is_modeled(intid):
                continue
            if cls is RegisterClass.IROUTER and intid < SPI_FIRST:
                continue
            desc = self.descriptor(intid, core)
            if not self._visible(desc, security):
                continue
            shift = reg.field_shift(intid)
            if cls is RegisterClass.GROUPR:
                bit = 1 if desc.group is Security.NONSECURE else 0
                word |= bit << shift
            elif cls in (RegisterClass.ISENABLER, RegisterClass.ICENABLER):
                word |= (1 if desc.enabled else 0) << shift
            elif cls in (RegisterClass.ISPENDR, RegisterClass.ICPENDR):
                word |= (1 if desc.is_pending() else 0) << shift
            elif cls in (RegisterClass.ISACTIVER, RegisterClass.ICACTIVER):
                word |= (1 if desc.is_active() else 0) << shift
            elif cls is RegisterClass.IPRIORITYR:
                word |= desc.priority << shift
            elif cls is RegisterClass.ICFGR:
                word |= desc.trigger_config << shift
            elif cls is RegisterClass.IROUTER:
                if desc.affinity is None:
                    word = IROUTER_ANY_CORE
                else:
                    word = desc.affinity
        return word

    def _write(self, reg: RegisterId, value: int, security: Security, core: int) -> list[Change]:
        cls = reg.register_class
        value &= (1 << (reg.width * 8)) - 1
        changes: list[Change] = []
        for intid in reg.covered_intids:
            if not _is_modeled(intid):
                continue
            if cls is RegisterClass.IROUTER and intid < SPI_FIRST:
                continue
            desc = self.descriptor(intid, core)
            if not self._visible(desc, security):
                continue
            bank = core if intid <= PPI_LAST else None
            shift = reg.field_shift(intid)
            fbits = (value >> shift) & ((1 << reg.bits_per_field) - 1)
            if cls is RegisterClass.GROUPR:
                new_group = Security.NONSECURE if fbits else Security.SECURE
                if desc.group is not new_group:
                    changes.append(ConfigChange(intid, "group", desc.group, new_group, bank))
                    desc.group = new_group
            elif cls is RegisterClass.ISENABLER:
                if fbits and not desc.enabled:
                    changes.append(ConfigChange(intid, "enabled", False, True, bank))
                    desc.enabled = True
            elif cls is RegisterClass.ICENABLER:
                if fbits and desc.enabled:
                    changes.append(ConfigChange(intid, "enabled", True, False, bank))
                    desc.enabled = False
            elif cls is RegisterClass.ISPENDR:
                if fbits:
                    changes.extend(self._set_pending(desc, PendingSource.SOFTWARE, "sw_pend", bank))
            elif cls is RegisterClass.ICPENDR:
                # Clearing a pending bit is not one of the admitted activation
                # transitions; the write is rejected (read side still works).
                pass
            elif cls is RegisterClass.ISACTIVER:
                if fbits and desc.activation is Activation.PENDING:
                    changes.append(
                        StateChange(intid, Activation.PENDING, Activation.ACTIVE, "sw_activate", bank)
                    )
                    desc.activation = Activation.ACTIVE
            elif cls is RegisterClass.ICACTIVER:
                if fbits:
                    changes.extend(self._deactivate(desc, "sw_deactivate", bank))
            elif cls is RegisterClass.IPRIORITYR:
                if desc.priority != fbits:
                    changes.append(ConfigChange(intid, "priority", desc.priority, fbits, bank))
                    desc.priority = fbits
            elif cls is RegisterClass.ICFGR:
                if desc.trigger_config != fbits:
                    changes.append(
                        ConfigChange(intid, "trigger_config", desc.trigger_config, fbits, bank)
                    )
                    desc.trigger_config = fbits
            elif cls is RegisterClass.IROUTER:
                new_aff = None if value & IROUTER_ANY_CORE else value & 0xFF
                if desc.affinity != new_aff:
                    changes.append(ConfigChange(intid, "affinity", desc.affinity, new_aff, bank))
                    desc.affinity = new_aff
        return changes

    def _set_pending(
        self, desc: InterruptDescriptor, source: PendingSource, cause: str, bank: int | None
    ) -> list[Change]:
        if desc.activation is Activation.INACTIVE:
            desc.activation = Activation.PENDING
            desc.pending_source = source
            return [StateChange(desc.intid, Activation.INACTIVE, Activation.PENDING, cause, bank)]
        if desc.activation is Activation.ACTIVE:
            desc.activation = Activation.ACTIVE_AND_PENDING
            desc.pending_source = source
            return [
                StateChange(
                    desc.intid, Activation.ACTIVE, Activation.ACTIVE_AND_PENDING, cause, bank
                )
            ]
        return []  # already pending: idempotent

    def _deactivate(self, desc: InterruptDescriptor, cause: str, bank: int | None) -> list[Change]:
        if desc.activation is Activation.ACTIVE:
            desc.activation = Activation.INACTIVE
            return [StateChange(desc.intid, Activation.ACTIVE, Activation.INACTIVE, cause, bank)]
        if desc.activation is Activation.ACTIVE_AND_PENDING:
            desc.activation = Activation.PENDING
            return [
                StateChange(
                    desc.intid, Activation.ACTIVE_AND_PENDING, Activation.PENDING, cause, bank
                )
            ]
        return []

    # -- interrupt life cycle ----------------------------------------------

    def fire(
        self,
        intid: int,
        core: int = 0,
        source: PendingSource = PendingSource.PERIPHERAL,
    ) -> list[Change]:
        """Peripheral (or software with configuration authority) raises an
        interrupt: Inactive->Pending or Active->ActiveAndPending. Re-firing a
        pending interrupt is idempotent."""
        desc = self.descriptor(intid, core)
        bank = core if intid <= PPI_LAST else None
        return self._set_pending(desc, source, "fire", bank)

    def retire(self, intid: int, core: int = 0) -> list[Change]:
        """Force an interrupt back to rest; used by the monitor when the
        owning domain is torn down or the source peripheral changes hands."""
        desc = self.descriptor(intid, core)
        bank = core if intid <= PPI_LAST else None
        old = desc.activation
        if old is Activation.INACTIVE:
            return []
        desc.activation = Activation.INACTIVE
        desc.pending_source = PendingSource.NONE
        for c, active in self.core_active.items():
            if active == intid:
                self.core_active[c] = None
        return [StateChange(intid, old, Activation.INACTIVE, "retire", bank)]

    def select(
        self,
        core: int,
        core_security: Security = Security.NONSECURE,
        exclude: frozenset[int] | set[int] = frozenset(),
    ) -> int | None:
        """Pick the interrupt to deliver to a core, or None.

        Candidates are pending, enabled, group-compatible with the core's
        security state, and routed to this core (affinity absent or equal).
        Lowest priority value wins; ties break on the lowest INTID. A core
        with an unfinished acknowledged interrupt receives nothing.
        """
        if core not in self.core_active:
            raise GicError(f"core {core} not modeled")
        if self.core_active[core] is not None:
            return None
        best: tuple[int, int] | None = None
        for desc in self._candidates(core):
            if desc.intid in exclude:
                continue
            if desc.activation is not Activation.PENDING or not desc.enabled:
                continue
            if desc.group is not core_security:
                continue
            if desc.affinity is not None and desc.affinity != core:
                continue
            key = (desc.priority, desc.intid)
            if best is None or key < best:
                best = key
        return None if best is None else best[1]

    def _candidates(self, core: int):
        for i in range(PPI_FIRST, PPI_LAST + 1):
            yield self._ppi[(core, i)]
        for i in range(SPI_FIRST, SPI_LAST + 1):
            yield self._spi[i]

    def acknowledge(self, core: int, intid: int) -> list[Change]:
        """Pending->Active; records the interrupt as running on the core."""
        desc = self.descriptor(intid, core)
        bank = core if intid <= PPI_LAST else None
        if desc.activation is not Activation.PENDING:
            raise ProtocolError(
                f"acknowledge of INTID {intid} in state {desc.activation.value}"
            )
        if self.core_active[core] is not None:
            raise ProtocolError(f"core {core} already handling INTID {self.core_active[core]}")
        desc.activation = Activation.ACTIVE
        desc.pending_source = PendingSource.NONE
        self.core_active[core] = intid
        return [StateChange(intid, Activation.PENDING, Activation.ACTIVE, "ack", bank)]

    def end_of_interrupt(self, core: int, intid: int) -> list[Change]:
        """Active->Inactive or ActiveAndPending->Pending; frees the core."""
        desc = self.descriptor(intid, core)
        bank = core if intid <= PPI_LAST else None
        if self.core_active[core] == intid:
            self.core_active[core] = None
        if desc.activation is Activation.ACTIVE:
            desc.activation = Activation.INACTIVE
            return [StateChange(intid, Activation.ACTIVE, Activation.INACTIVE, "eoi", bank)]
        if desc.activation is Activation.ACTIVE_AND_PENDING:
            desc.activation = Activation.PENDING
            return [
                StateChange(intid, Activation.ACTIVE_AND_PENDING, Activation.PENDING, "eoi", bank)
            ]
        raise ProtocolError(f"end-of-interrupt for INTID {intid} in state {desc.activation.value}")
