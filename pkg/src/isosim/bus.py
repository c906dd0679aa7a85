"""Bus-level primitives shared by the controller models and the platform."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Security(enum.Enum):
    """Security state carried on every bus transaction (the NS bit) and used
    as the interrupt group classification."""

    SECURE = "secure"
    NONSECURE = "nonsecure"


class AccessKind(enum.Enum):
    READ = "read"
    WRITE = "write"


VALID_WIDTHS = (1, 2, 4, 8)


@dataclass(frozen=True, slots=True)
class BusTransaction:
    """One memory access as seen by the interconnect.

    Domain-issued transactions are always NONSECURE; only monitor-context
    accesses carry SECURE.
    """

    core: int
    address: int
    width: int
    kind: AccessKind
    value: int | None = None
    security: Security = Security.NONSECURE

    def is_well_formed(self) -> bool:
        return self.width in VALID_WIDTHS and self.address >= 0


def width_mask(width: int) -> int:
    return (1 << (8 * width)) - 1
