"""Interrupt-controller model tests.

The oracles here are deliberately independent of the implementation: the
view oracle re-derives register words per-bit from descriptors, selection
is re-checked by brute-force scan, and the activation machine is compared
against the transition table written out in full.
"""

import random

import pytest

from isosim.bus import AccessKind, Security
from isosim.gic import (
    Activation,
    Gic,
    GicError,
    PendingSource,
    ProtocolError,
    RegisterClass,
    RegisterId,
    register_at,
)

NS = Security.NONSECURE
S = Security.SECURE


def make_gic(num_cores=2, assignments=None):
    return Gic(num_cores, assignments or {33: "uart0", 34: "disk0", 40: "net0"})


# ---------------------------------------------------------------------------
# reset
# ---------------------------------------------------------------------------


def test_reset_state_is_inactive_disabled_nonsecure():
    gic = make_gic(assignments={33: "uart0"})
    desc = gic.descriptor(33)
    assert desc.activation is Activation.INACTIVE
    assert not desc.enabled
    assert desc.group is NS
    assert desc.priority == 0xA0
    assert desc.affinity is None


def test_reset_rejects_duplicate_assignment():
    with pytest.raises(GicError):
        Gic(1, [(33, "uart0"), (33, "uart1")])


def test_reset_with_empty_map_still_addressable():
    gic = Gic(1, {})
    assert gic.source_of == {}
    # unassigned SPIs exist and can be configured
    assert gic.descriptor(200).activation is Activation.INACTIVE


def test_reset_rejects_non_spi_assignment():
    with pytest.raises(GicError):
        Gic(1, {16: "timer"})


# ---------------------------------------------------------------------------
# activation state machine: exhaustive closure
# ---------------------------------------------------------------------------

# (state, event) -> new state; absent entry means rejected (no-op for
# register writes and fires, ProtocolError for ack/eoi)
TRANSITIONS = {
    (Activation.INACTIVE, "fire"): Activation.PENDING,
    (Activation.INACTIVE, "sw_pend"): Activation.PENDING,
    (Activation.PENDING, "ack"): Activation.ACTIVE,
    (Activation.PENDING, "sw_activate"): Activation.ACTIVE,
    (Activation.PENDING, "fire"): Activation.PENDING,          # idempotent re-fire
    (Activation.PENDING, "sw_pend"): Activation.PENDING,
    (Activation.ACTIVE, "fire"): Activation.ACTIVE_AND_PENDING,
    (Activation.ACTIVE, "sw_pend"): Activation.ACTIVE_AND_PENDING,
    (Activation.ACTIVE, "eoi"): Activation.INACTIVE,
    (Activation.ACTIVE, "sw_deactivate"): Activation.INACTIVE,
    (Activation.ACTIVE_AND_PENDING, "eoi"): Activation.PENDING,
    (Activation.ACTIVE_AND_PENDING, "sw_deactivate"): Activation.PENDING,
    (Activation.ACTIVE_AND_PENDING, "fire"): Activation.ACTIVE_AND_PENDING,
    (Activation.ACTIVE_AND_PENDING, "sw_pend"): Activation.ACTIVE_AND_PENDING,
}

EVENTS = ("fire", "sw_pend", "sw_clear", "sw_activate", "sw_deactivate", "ack", "eoi")


def put_in_state(gic, intid, state):
    desc = gic.descriptor(intid)
    desc.activation = state
    if state in (Activation.PENDING, Activation.ACTIVE_AND_PENDING):
        desc.pending_source = PendingSource.PERIPHERAL
    return desc


def apply_event(gic, intid, event):
    """Drives one event through the public surface; returns the new state."""
    bit_reg = RegisterId(RegisterClass.ISPENDR, 1)
    bit = 1 << (intid - 32)
    if event == "fire":
        gic.fire(intid)
    elif event == "sw_pend":
        gic.register_access(RegisterId(RegisterClass.ISPENDR, 1), AccessKind.WRITE, bit, S)
    elif event == "sw_clear":
        gic.register_access(RegisterId(RegisterClass.ICPENDR, 1), AccessKind.WRITE, bit, S)
    elif event == "sw_activate":
        gic.register_access(RegisterId(RegisterClass.ISACTIVER, 1), AccessKind.WRITE, bit, S)
    elif event == "sw_deactivate":
        gic.register_access(RegisterId(RegisterClass.ICACTIVER, 1), AccessKind.WRITE, bit, S)
    elif event == "ack":
        gic.acknowledge(0, intid)
    elif event == "eoi":
        gic.end_of_interrupt(0, intid)
    return gic.descriptor(intid).activation


@pytest.mark.parametrize("state", list(Activation))
@pytest.mark.parametrize("event", EVENTS)
def test_state_machine_closure(state, event):
    gic = make_gic()
    put_in_state(gic, 33, state)
    if event == "ack" and state is Activation.ACTIVE:
        gic.core_active[0] = 33  # a second ack would also be out of order
    expected = TRANSITIONS.get((state, event))
    if expected is None:
        if event in ("ack", "eoi"):
            with pytest.raises(ProtocolError):
                apply_event(gic, 33, event)
        else:
            assert apply_event(gic, 33, event) is state  # rejected, unchanged
    else:
        assert apply_event(gic, 33, event) is expected


def test_fire_examples():
    gic = make_gic()
    gic.fire(33)
    assert gic.descriptor(33).activation is Activation.PENDING
    put_in_state(gic, 34, Activation.ACTIVE)
    gic.fire(34)
    assert gic.descriptor(34).activation is Activation.ACTIVE_AND_PENDING
    changes = gic.fire(33)  # re-fire while pending: idempotent, no change
    assert changes == []
    assert gic.descriptor(33).activation is Activation.PENDING


def test_fire_unmodeled_intid_errors():
    gic = make_gic()
    with pytest.raises(GicError):
        gic.fire(300)


def test_ack_then_eoi_cycle():
    gic = make_gic()
    gic.fire(33)
    gic.acknowledge(0, 33)
    assert gic.descriptor(33).activation is Activation.ACTIVE
    assert gic.core_active[0] == 33
    gic.end_of_interrupt(0, 33)
    assert gic.descriptor(33).activation is Activation.INACTIVE
    assert gic.core_active[0] is None


def test_eoi_from_active_and_pending_returns_to_pending():
    gic = make_gic()
    gic.fire(33)
    gic.acknowledge(0, 33)
    gic.fire(33)
    assert gic.descriptor(33).activation is Activation.ACTIVE_AND_PENDING
    gic.end_of_interrupt(0, 33)
    assert gic.descriptor(33).activation is Activation.PENDING


# ---------------------------------------------------------------------------
# register views
# ---------------------------------------------------------------------------


def reg(cls, index):
    return RegisterId(cls, index)


def test_isenabler_nonsecure_identity_view():
    # INTIDs 32-63 all non-secure, 32 and 36 enabled -> mask 0x11
    gic = make_gic()
    gic.set_config(32, enabled=True)
    gic.set_config(36, enabled=True)
    word, _ = gic.register_access(reg(RegisterClass.ISENABLER, 1), AccessKind.READ, security=NS)
    assert word == 0x11


def test_secure_group_fields_hidden_from_nonsecure():
    gic = make_gic()
    gic.set_config(36, group=S, enabled=True)
    ns_word, _ = gic.register_access(reg(RegisterClass.ISENABLER, 1), AccessKind.READ, security=NS)
    s_word, _ = gic.register_access(reg(RegisterClass.ISENABLER, 1), AccessKind.READ, security=S)
    assert ns_word == 0x0
    assert s_word == 0x10


def test_nonsecure_write_to_secure_field_ignored():
    gic = make_gic()
    gic.set_config(36, group=S)
    gic.register_access(reg(RegisterClass.ISENABLER, 1), AccessKind.WRITE, 0x10, NS)
    assert gic.descriptor(36).enabled is False
    gic.register_access(reg(RegisterClass.ISENABLER, 1), AccessKind.WRITE, 0x10, S)
    assert gic.descriptor(36).enabled is True


def test_set_clear_pair_semantics():
    gic = make_gic()
    r_set = reg(RegisterClass.ISENABLER, 1)
    r_clr = reg(RegisterClass.ICENABLER, 1)
    gic.register_access(r_set, AccessKind.WRITE, 0x0F, S)
    assert [gic.descriptor(i).enabled for i in (32, 33, 34, 35)] == [True] * 4
    gic.register_access(r_clr, AccessKind.WRITE, 0x05, S)
    assert [gic.descriptor(i).enabled for i in (32, 33, 34, 35)] == [False, True, False, True]
    # writing zero changes nothing on either side of the pair
    gic.register_access(r_set, AccessKind.WRITE, 0x0, S)
    gic.register_access(r_clr, AccessKind.WRITE, 0x0, S)
    assert [gic.descriptor(i).enabled for i in (32, 33, 34, 35)] == [False, True, False, True]


def test_ipriorityr_packing():
    gic = make_gic()
    gic.register_access(reg(RegisterClass.IPRIORITYR, 8), AccessKind.WRITE, 0x3000_A060, S)
    assert gic.descriptor(32).priority == 0x60
    assert gic.descriptor(33).priority == 0xA0
    assert gic.descriptor(34).priority == 0x00  # full-word write sets every field
    assert gic.descriptor(35).priority == 0x30
    word, _ = gic.register_access(reg(RegisterClass.IPRIORITYR, 8), AccessKind.READ, security=S)
    assert word == 0x3000_A060


def test_irouter_encoding_roundtrip():
    gic = make_gic()
    r = reg(RegisterClass.IROUTER, 40)
    gic.register_access(r, AccessKind.WRITE, 1, S)
    assert gic.descriptor(40).affinity == 1
    word, _ = gic.register_access(r, AccessKind.READ, security=S)
    assert word == 1
    gic.register_access(r, AccessKind.WRITE, 1 << 31, S)
    assert gic.descriptor(40).affinity is None


def test_ppis_are_banked_per_core():
    gic = make_gic()
    gic.set_config(17, core=0, enabled=True, group=NS)
    gic.set_config(17, core=1, group=NS)
    w0, _ = gic.register_access(reg(RegisterClass.ISENABLER, 0), AccessKind.READ,
                                security=S, core=0)
    w1, _ = gic.register_access(reg(RegisterClass.ISENABLER, 0), AccessKind.READ,
                                security=S, core=1)
    assert w0 == 1 << 17
    assert w1 == 0


def test_register_at_mapping():
    assert register_at(0x0100 + 4, 4) == RegisterId(RegisterClass.ISENABLER, 1)
    assert register_at(0x6000 + 8 * 40, 8) == RegisterId(RegisterClass.IROUTER, 40)
    assert register_at(0x6000 + 8 * 40, 4) is None       # wrong width
    assert register_at(0x0102, 4) is None                # unaligned
    assert register_at(0xF000, 4) is None                # unmodeled space
    assert RegisterId(RegisterClass.IPRIORITYR, 8).covered_intids == range(32, 36)
    assert RegisterId(RegisterClass.ICFGR, 2).covered_intids == range(32, 48)


# ---------------------------------------------------------------------------
# view soundness: NS-read == S-read AND NOT secure_field_mask
# ---------------------------------------------------------------------------


def randomize(gic, rng):
    for intid in range(32, 256):
        desc = gic.descriptor(intid)
        desc.group = rng.choice((NS, S))
        desc.enabled = rng.random() < 0.5
        desc.priority = rng.randrange(256)
        desc.affinity = rng.choice((None, 0, 1))
        desc.activation = rng.choice(list(Activation))
        desc.trigger_config = rng.randrange(4)
    for core in (0, 1):
        for intid in range(16, 32):
            desc = gic.descriptor(intid, core)
            desc.group = rng.choice((NS, S))
            desc.enabled = rng.random() < 0.5
            desc.activation = rng.choice(list(Activation))


def secure_field_mask(gic, r, core):
    """Oracle: bits that belong to secure-group interrupts."""
    mask = 0
    for intid in r.covered_intids:
        if not 16 <= intid <= 255:
            continue
        if r.register_class is RegisterClass.IROUTER and intid < 32:
            continue
        if gic.descriptor(intid, core).group is S:
            mask |= ((1 << r.bits_per_field) - 1) << r.field_shift(intid)
    return mask


def all_registers():
    for cls in RegisterClass:
        if cls is RegisterClass.IROUTER:
            for spi in range(32, 256):
                yield RegisterId(cls, spi)
        elif cls is RegisterClass.IPRIORITYR:
            for i in range(64):
                yield RegisterId(cls, i)
        elif cls is RegisterClass.ICFGR:
            for i in range(16):
                yield RegisterId(cls, i)
        else:
            for i in range(8):
                yield RegisterId(cls, i)


def test_view_soundness_randomized():
    rng = random.Random(1234)
    for _ in range(25):
        gic = make_gic()
        randomize(gic, rng)
        for r in all_registers():
            for core in (0, 1):
                s_word, _ = gic.register_access(r, AccessKind.READ, security=S, core=core)
                ns_word, _ = gic.register_access(r, AccessKind.READ, security=NS, core=core)
                assert ns_word == s_word & ~secure_field_mask(gic, r, core), (r, core)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------


def test_select_prefers_lower_priority_value():
    gic = make_gic()
    for intid, prio in ((34, 0xA0), (40, 0x60)):
        gic.set_config(intid, enabled=True, priority=prio, affinity=0)
        gic.fire(intid)
    assert gic.select(0, NS) == 40


def test_select_skips_disabled():
    gic = make_gic()
    gic.fire(34)  # pending but masked
    assert gic.select(0, NS) is None


def test_select_tie_breaks_on_lowest_intid():
    gic = make_gic()
    for intid in (35, 34):
        gic.set_config(intid, enabled=True, priority=0x60)
        gic.fire(intid)
    assert gic.select(0, NS) == 34


def test_select_blocked_while_core_has_active_interrupt():
    gic = make_gic()
    gic.set_config(34, enabled=True)
    gic.fire(34)
    gic.acknowledge(0, 34)
    gic.set_config(40, enabled=True)
    gic.fire(40)
    assert gic.select(0, NS) is None   # running interrupt masks the core
    assert gic.select(1, NS) == 40


def select_oracle(gic, core, security, exclude=frozenset()):
    """Brute-force re-scan over every descriptor."""
    if gic.core_active[core] is not None:
        return None
    best = None
    for intid in list(range(16, 32)) + list(range(32, 256)):
        desc = gic.descriptor(intid, core)
        if intid in exclude or desc.activation is not Activation.PENDING:
            continue
        if not desc.enabled or desc.group is not security:
            continue
        if desc.affinity is not None and desc.affinity != core:
            continue
        if best is None or (desc.priority, intid) < best:
            best = (desc.priority, intid)
    return best if best is None else best[1]


def test_selection_soundness_randomized():
    rng = random.Random(77)
    for _ in range(200):
        gic = make_gic()
        randomize(gic, rng)
        gic.core_active[0] = rng.choice((None, 33))
        exclude = frozenset(rng.sample(range(32, 256), rng.randrange(0, 4)))
        for core in (0, 1):
            for sec in (NS, S):
                got = gic.select(core, sec, exclude=exclude)
                assert got == select_oracle(gic, core, sec, exclude)
                if got is not None:
                    desc = gic.descriptor(got, core)
                    assert desc.enabled
                    assert desc.activation is Activation.PENDING
                    assert desc.group is sec
                    assert desc.affinity in (None, core)


def test_determinism_same_state_same_result():
    rng = random.Random(5)
    gic = make_gic()
    randomize(gic, rng)
    snap = gic.snapshot()
    first = [gic.select(c, NS) for c in (0, 1)]
    assert gic.snapshot() == snap
    assert [gic.select(c, NS) for c in (0, 1)] == first
    r = reg(RegisterClass.GROUPR, 1)
    a, _ = gic.register_access(r, AccessKind.READ, security=NS)
    b, _ = gic.register_access(r, AccessKind.READ, security=NS)
    assert a == b
