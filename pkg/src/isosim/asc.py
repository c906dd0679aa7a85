"""Address space controller: region-based access policy on the bus path.

A TZC-style filter: an ordered table of non-overlapping, granule-aligned
regions, each carrying per-security-state read/write permissions and an
optional core filter for the non-secure side. Secure accesses always pass;
non-secure accesses to space no region covers are denied (fail-safe
default). Reconfiguration is atomic and only legal from secure state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .bus import AccessKind, BusTransaction, Security

DEFAULT_GRANULE = 0x1000


class AscError(Exception):
    """Rejected reconfiguration (overlap, misalignment)."""


class PermissionFault(AscError):
    """Reconfiguration attempted from non-secure state."""


class DenyReason(enum.Enum):
    UNMAPPED = "unmapped"
    POLICY = "policy"
    CORE_FILTER = "core_filter"


@dataclass(frozen=True, slots=True)
class Permissions:
    read: bool = False
    write: bool = False

    def allows(self, kind: AccessKind) -> bool:
        return self.read if kind is AccessKind.READ else self.write


PERM_NONE = Permissions(False, False)
PERM_RO = Permissions(True, False)
PERM_RW = Permissions(True, True)


@dataclass(frozen=True, slots=True)
class AscRegion:
    """One address range with its access policy.

    The secure-side permissions are representable for completeness but the
    check path never consults them: secure accesses are always allowed.
    """

    base: int
    length: int
    policy: dict[Security, Permissions] = field(
        default_factory=lambda: {Security.SECURE: PERM_RW, Security.NONSECURE: PERM_NONE}
    )
    core_filter: frozenset[int] | None = None
    name: str = ""

    @property
    def end(self) -> int:
        return self.base + self.length

    def contains(self, address: int, width: int = 1) -> bool:
        return self.base <= address and address + width <= self.end

    def nonsecure(self) -> Permissions:
        return self.policy.get(Security.NONSECURE, PERM_NONE)


def region(
    base: int,
    length: int,
    ns: Permissions = PERM_NONE,
    core_filter=None,
    name: str = "",
) -> AscRegion:
    """Convenience constructor used by the monitor when rebuilding tables."""
    return AscRegion(
        base,
        length,
        {Security.SECURE: PERM_RW, Security.NONSECURE: ns},
        frozenset(core_filter) if core_filter is not None else None,
        name,
    )


@dataclass(frozen=True, slots=True)
class AccessDecision:
    allowed: bool
    reason: DenyReason | None = None
    region_name: str = ""


ALLOW = AccessDecision(True)


class Asc:
    def __init__(self, granule: int = DEFAULT_GRANULE):
        self.granule = granule
        self.regions: list[AscRegion] = []

    def configure(self, regions: list[AscRegion], caller_security: Security) -> None:
        """Atomically replace the region table; rejects the whole batch on
        any misalignment or overlap."""
        if caller_security is not Security.SECURE:
            raise PermissionFault("region table is configurable from secure state only")
        ordered = sorted(regions, key=lambda r: r.base)
        for r in ordered:
            if r.length <= 0:
                raise AscError(f"region {r.name or hex(r.base)} has non-positive length")
            if r.base % self.granule or r.length % self.granule:
                raise AscError(
                    f"region {r.name or hex(r.base)} not aligned to the "
                    f"{self.granule:#x} granule"
                )
        for a, b in zip(ordered, ordered[1:]):
            if a.end > b.base:
                raise AscError(
                    f"regions {a.name or hex(a.base)} and {b.name or hex(b.base)} overlap"
                )
        self.regions = ordered

    def check(self, txn: BusTransaction) -> AccessDecision:
        """Decide one transaction. Secure passes everywhere; non-secure needs
        a covering region whose policy and core filter both admit it.
        Accesses straddling a region boundary are conservatively unmapped."""
        if not txn.is_well_formed():
            return AccessDecision(False, DenyReason.UNMAPPED)
        if txn.security is Security.SECURE:
            return ALLOW
        for r in self.regions:
            if not r.contains(txn.address):
                continue
            if not r.contains(txn.address, txn.width):
                return AccessDecision(False, DenyReason.UNMAPPED, r.name)
            if r.core_filter is not None and txn.core not in r.core_filter:
                return AccessDecision(False, DenyReason.CORE_FILTER, r.name)
            if not r.nonsecure().allows(txn.kind):
                return AccessDecision(False, DenyReason.POLICY, r.name)
            return AccessDecision(True, None, r.name)
        return AccessDecision(False, DenyReason.UNMAPPED)

    def snapshot(self) -> list[dict]:
        """Region table as plain data, for trace records."""
        out = []
        for r in self.regions:
            ns = r.nonsecure()
            out.append(
                {
                    "name": r.name,
                    "base": r.base,
                    "length": r.length,
                    "ns_read": ns.read,
                    "ns_write": ns.write,
                    "cores": sorted(r.core_filter) if r.core_filter is not None else None,
                }
            )
        return out
