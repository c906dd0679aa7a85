"""Address-space controller tests, fuzzed against a per-byte oracle."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isosim.asc import (
    Asc,
    AscError,
    DenyReason,
    PERM_NONE,
    PERM_RO,
    PERM_RW,
    PermissionFault,
    Permissions,
    region,
)
from isosim.bus import AccessKind, BusTransaction, Security

NS = Security.NONSECURE
S = Security.SECURE
G = 0x1000


def txn(addr, kind=AccessKind.READ, core=0, width=4, security=NS, value=None):
    return BusTransaction(core, addr, width, kind, value, security)


def test_configure_accepts_well_formed_regions():
    asc = Asc()
    asc.configure([region(0x8000_0000, 16 * 2 ** 20, PERM_RW)], S)
    assert asc.check(txn(0x8000_1000, AccessKind.WRITE, value=1)).allowed


def test_configure_refused_for_nonsecure_caller():
    asc = Asc()
    with pytest.raises(PermissionFault):
        asc.configure([region(0x8000_0000, G, PERM_RW)], NS)


def test_configure_rejects_overlap_atomically():
    asc = Asc()
    asc.configure([region(0x8000_0000, G, PERM_RW)], S)
    with pytest.raises(AscError):
        asc.configure([
            region(0x9000_0000, 2 * G, PERM_RW),
            region(0x9000_1000, G, PERM_RO),   # shares a granule with the first
        ], S)
    # the old table survives a rejected batch
    assert asc.check(txn(0x8000_0000)).allowed
    assert not asc.check(txn(0x9000_0000)).allowed


def test_configure_rejects_misaligned():
    asc = Asc()
    with pytest.raises(AscError):
        asc.configure([region(0x8000_0800, G, PERM_RW)], S)
    with pytest.raises(AscError):
        asc.configure([region(0x8000_0000, G + 8, PERM_RW)], S)


def test_check_core_filter():
    asc = Asc()
    asc.configure([region(0x8000_0000, 16 * 2 ** 20, PERM_RW, core_filter={1})], S)
    assert asc.check(txn(0x8000_1000, AccessKind.WRITE, core=1, value=7)).allowed
    d = asc.check(txn(0x8000_1000, AccessKind.WRITE, core=0, value=7))
    assert not d.allowed and d.reason is DenyReason.CORE_FILTER


def test_check_unmapped_denied():
    asc = Asc()
    asc.configure([region(0x8000_0000, G, PERM_RW)], S)
    d = asc.check(txn(0xF000_0000))
    assert not d.allowed and d.reason is DenyReason.UNMAPPED


def test_check_policy_denied():
    asc = Asc()
    asc.configure([region(0x8000_0000, G, PERM_RO)], S)
    assert asc.check(txn(0x8000_0000)).allowed
    d = asc.check(txn(0x8000_0000, AccessKind.WRITE, value=1))
    assert not d.allowed and d.reason is DenyReason.POLICY


def test_straddling_access_conservatively_unmapped():
    asc = Asc()
    asc.configure([region(0x8000_0000, G, PERM_RW)], S)
    d = asc.check(txn(0x8000_0FFC, width=8))
    assert not d.allowed and d.reason is DenyReason.UNMAPPED


def test_secure_allowed_everywhere():
    asc = Asc()
    asc.configure([region(0x8000_0000, G, PERM_NONE)], S)
    for addr in (0x0, 0x8000_0000, 0xFFFF_0000):
        for kind in AccessKind:
            assert asc.check(txn(addr, kind, security=S, value=0)).allowed


# ---------------------------------------------------------------------------
# fuzz vs per-byte oracle
# ---------------------------------------------------------------------------

# a tiny 8-granule address space keeps the byte oracle exhaustive
BASE = 0x10000
SPACE = 8 * G


def byte_allowed(regions, addr, kind, core):
    """Oracle: scan regions byte-wise, apply policy and filter."""
    for r in regions:
        if r.base <= addr < r.base + r.length:
            if r.core_filter is not None and core not in r.core_filter:
                return False
            perms = r.policy[NS]
            return perms.read if kind is AccessKind.READ else perms.write
    return False


region_strategy = st.builds(
    lambda slot, span, rd, wr, filt: region(
        BASE + slot * G, span * G,
        Permissions(rd, wr),
        core_filter=filt,
    ),
    slot=st.integers(0, 7),
    span=st.integers(1, 3),
    rd=st.booleans(),
    wr=st.booleans(),
    filt=st.one_of(st.none(), st.sets(st.integers(0, 1), max_size=2)),
)


def disjoint(regions):
    spans = sorted((r.base, r.end) for r in regions)
    return all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))


@settings(max_examples=200, deadline=None)
@given(
    regions=st.lists(region_strategy, max_size=4).filter(disjoint),
    addr_off=st.integers(0, SPACE - 1),
    width=st.sampled_from([1, 2, 4, 8]),
    kind=st.sampled_from(list(AccessKind)),
    core=st.integers(0, 1),
)
def test_check_matches_byte_oracle(regions, addr_off, width, kind, core):
    asc = Asc()
    asc.configure(regions, S)
    addr = BASE + addr_off
    t = txn(addr, kind, core=core, width=width, value=0)
    got = asc.check(t)
    expected = all(byte_allowed(regions, a, kind, core) for a in range(addr, addr + width))
    assert got.allowed == expected


def test_disjointness_exhaustive_at_granule_resolution():
    asc = Asc()
    regions = [
        region(BASE, 2 * G, PERM_RW),
        region(BASE + 2 * G, G, PERM_RO),
        region(BASE + 5 * G, 3 * G, PERM_RW, core_filter={0}),
    ]
    asc.configure(regions, S)
    for granule_start in range(BASE, BASE + SPACE, G):
        covering = [r for r in asc.regions
                    if r.base <= granule_start < r.base + r.length]
        assert len(covering) <= 1


def test_check_is_total_and_deterministic():
    asc = Asc()
    asc.configure([region(BASE, G, PERM_RW, core_filter={0})], S)
    probes = [txn(BASE + off, k, core=c, width=w, value=0)
              for off in (0, G - 8, G, 2 * G)
              for k in AccessKind
              for c in (0, 1)
              for w in (1, 8)]
    first = [asc.check(t) for t in probes]
    second = [asc.check(t) for t in probes]
    assert first == second
