"""Scenario files: platform map, domain manifests, scripts, and checker knobs.

The format is a line-oriented block syntax (see docs/scenario-format.md).
Parsing produces a fully cross-checked Scenario or raises ScenarioError
carrying diagnostics with line and column positions. emit() renders the
canonical form; parse(emit(parse(text))) is structurally equal to
parse(text).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

PERIPHERAL_KINDS = (
    "uart", "button", "led", "display", "network", "storage", "sensor", "timer",
)
ACCESS_MODES = ("exclusive", "multiplexing", "handover", "readonly", "proxy")

GIC_CLASSES = (
    "GROUPR", "ISENABLER", "ICENABLER", "ISPENDR", "ICPENDR",
    "ISACTIVER", "ICACTIVER", "IPRIORITYR", "ICFGR", "IROUTER",
)

# Argument spec per op, one code per argument: i=int, s=symbol, g=register
# class, m=run mode, x=hex-or-string payload. Uppercase marks optional args.
ACTION_SIGNATURES = {
    "nop": "",
    "halt": "",
    "wfi": "",
    "sleep": "i",
    "yield": "",
    "ack": "",
    "eoi": "",
    "ret": "",
    "clear": "s",
    "mmio_read": "siI",
    "mmio_write": "siiI",
    "mem_read": "iI",
    "mem_write": "iiI",
    "shm_read": "siI",
    "shm_write": "siiI",
    "read_addr": "iI",
    "write_addr": "iiI",
    "gic_read": "gi",
    "gic_write": "gii",
    "smc_gic_read": "gi",
    "smc_gic_write": "gii",
    "setup": "s",
    "run": "smI",
    "teardown": "s",
    "cede": "sS",
    "readonly": "ss",
    "derive_key": "I",
    "attest": "sI",
    "proxy_send": "sx",
    "proxy_recv": "s",
}


class SharingMode(enum.Enum):
    TEMPORAL = "temporal"
    SPATIAL = "spatial"
    MIXED = "mixed"


@dataclass(frozen=True)
class Action:
    op: str
    args: tuple = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class PeripheralDecl:
    name: str
    kind: str
    base: int
    size: int
    intids: tuple[int, ...] = ()
    modes: tuple[str, ...] = ("exclusive",)
    hot_plug: bool = False
    fires: tuple[tuple[int, int], ...] = ()  # (step, intid)
    data: bytes = b""
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RegionDecl:
    name: str
    size: int
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class DomainDecl:
    name: str
    scheduler: bool = False
    memory: int = 0x1000
    cores: tuple[int, ...] = ()
    shim: bool = False
    binary: bytes | None = None
    expect_digest: bytes | None = None
    peripherals: tuple[tuple[str, str], ...] = ()
    shares: tuple[tuple[str, tuple[str, ...]], ...] = ()
    handler: tuple[Action, ...] = ()
    script: tuple[Action, ...] = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Injection:
    step: int
    op: str
    args: tuple[str, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class CheckParams:
    liveness_bound: int = 32
    max_steps: int = 2000


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    mode: SharingMode = SharingMode.TEMPORAL
    cores: int = 1
    granule: int = 0x1000
    dram_base: int = 0x8000_0000
    dram_size: int = 0x0010_0000
    gic_base: int = 0x2F00_0000
    device_key: bytes = b"\x00" * 32
    core_filtering: bool = True
    peripherals: tuple[PeripheralDecl, ...] = ()
    regions: tuple[RegionDecl, ...] = ()
    domains: tuple[DomainDecl, ...] = ()
    injections: tuple[Injection, ...] = ()
    checks: CheckParams = CheckParams()

    def domain_by_name(self, name: str) -> DomainDecl:
        for d in self.domains:
            if d.name == name:
                return d
        raise KeyError(name)

    def peripheral_by_name(self, name: str) -> PeripheralDecl:
        for p in self.peripherals:
            if p.name == name:
                return p
        raise KeyError(name)


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


class ScenarioError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    col: int
    is_string: bool = False


def _tokenize_line(raw: str, line_no: int) -> list[Token]:
    tokens = []
    i, n = 0, len(raw)
    while i < n:
        ch = raw[i]
        if ch in " \t":
            i += 1
            continue
        if ch == "#":
            break
        if ch == '"':
            j = raw.find('"', i + 1)
            if j < 0:
                raise ScenarioError([Diagnostic(line_no, i + 1, "unterminated string")])
            tokens.append(Token(raw[i + 1:j], line_no, i + 1, is_string=True))
            i = j + 1
            continue
        if ch in "{}@":
            tokens.append(Token(ch, line_no, i + 1))
            i += 1
            continue
        j = i
        while j < n and raw[j] not in ' \t#{}@"':
            j += 1
        tokens.append(Token(raw[i:j], line_no, i + 1))
        i = j
    return tokens


def _int_token(tok: Token) -> int:
    return int(tok.text, 0)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.lines = [_tokenize_line(raw, i + 1) for i, raw in enumerate(text.splitlines())]
        self.pos = 0
        self.diags: list[Diagnostic] = []

    def error(self, tok: Token | None, message: str) -> None:
        if tok is None:
            self.diags.append(Diagnostic(len(self.lines), 1, message))
        else:
            self.diags.append(Diagnostic(tok.line, tok.col, message))

    def next_line(self) -> list[Token] | None:
        while self.pos < len(self.lines):
            toks = self.lines[self.pos]
            self.pos += 1
            if toks:
                return toks
        return None

    def parse(self) -> Scenario:
        fields: dict = {
            "peripherals": [], "regions": [], "domains": [], "injections": [],
        }
        while (toks := self.next_line()) is not None:
            head = toks[0].text
            if head == "scenario":
                fields["name"] = self._one_symbol(toks)
            elif head == "mode":
                mode = self._one_symbol(toks)
                try:
                    fields["mode"] = SharingMode(mode)
                except ValueError:
                    self.error(toks[1] if len(toks) > 1 else toks[0],
                               f"unknown sharing mode {mode!r}")
            elif head == "platform":
                self._parse_platform(toks, fields)
            elif head == "peripheral":
                decl = self._parse_peripheral(toks)
                if decl:
                    fields["peripherals"].append(decl)
            elif head == "region":
                if len(toks) != 3:
                    self.error(toks[0], "expected: region <name> <size>")
                else:
                    try:
                        fields["regions"].append(
                            RegionDecl(toks[1].text, _int_token(toks[2]), line=toks[0].line)
                        )
                    except ValueError:
                        self.error(toks[2], f"bad size {toks[2].text!r}")
            elif head == "domain":
                decl = self._parse_domain(toks)
                if decl:
                    fields["domains"].append(decl)
            elif head == "inject":
                inj = self._parse_inject(toks)
                if inj:
                    fields["injections"].append(inj)
            elif head == "check":
                self._parse_check(toks, fields)
            else:
                self.error(toks[0], f"unknown declaration {head!r}")
        if self.diags:
            raise ScenarioError(self.diags)
        for key in ("peripherals", "regions", "domains", "injections"):
            fields[key] = tuple(fields[key])
        scenario = Scenario(**fields)
        validate(scenario, self.diags)
        if self.diags:
            raise ScenarioError(self.diags)
        return scenario

    def _one_symbol(self, toks: list[Token]) -> str:
        if len(toks) != 2:
            self.error(toks[0], f"expected one value after {toks[0].text!r}")
            return ""
        return toks[1].text

    def _expect_block_open(self, toks: list[Token]) -> bool:
        if toks[-1].text != "{":
            self.error(toks[-1], "expected '{'")
            return False
        return True

    def _block_lines(self):
        while (toks := self.next_line()) is not None:
            if toks[0].text == "}":
                return
            yield toks
        self.error(None, "unexpected end of file inside block")

    def _parse_platform(self, toks, fields) -> None:
        if not self._expect_block_open(toks):
            return
        for line in self._block_lines():
            key = line[0].text
            try:
                if key == "cores":
                    fields["cores"] = _int_token(line[1])
                elif key == "granule":
                    fields["granule"] = _int_token(line[1])
                elif key == "dram":
                    fields["dram_base"] = _int_token(line[1])
                    fields["dram_size"] = _int_token(line[2])
                elif key == "gic":
                    fields["gic_base"] = _int_token(line[1])
                elif key == "device_key":
                    fields["device_key"] = bytes.fromhex(line[1].text)
                elif key == "no_core_filter":
                    fields["core_filtering"] = False
                else:
                    self.error(line[0], f"unknown platform field {key!r}")
            except (IndexError, ValueError):
                self.error(line[0], f"malformed platform field {key!r}")

    def _parse_peripheral(self, toks) -> PeripheralDecl | None:
        if len(toks) < 3 or not self._expect_block_open(toks):
            self.error(toks[0], "expected: peripheral <name> {")
            return None
        name = toks[1].text
        kw: dict = {"name": name, "kind": "uart", "base": 0, "size": 0x1000,
                    "line": toks[0].line}
        fires: list[tuple[int, int]] = []
        for line in self._block_lines():
            key = line[0].text
            try:
                if key == "kind":
                    if line[1].text not in PERIPHERAL_KINDS:
                        self.error(line[1], f"unknown peripheral kind {line[1].text!r}")
                    kw["kind"] = line[1].text
                elif key == "mmio":
                    kw["base"] = _int_token(line[1])
                    kw["size"] = _int_token(line[2])
                elif key == "intids":
                    kw["intids"] = tuple(_int_token(t) for t in line[1:])
                elif key == "modes":
                    modes = tuple(t.text for t in line[1:])
                    for t in line[1:]:
                        if t.text not in ACCESS_MODES:
                            self.error(t, f"unknown access mode {t.text!r}")
                    kw["modes"] = modes
                elif key == "hotplug":
                    kw["hot_plug"] = True
                elif key == "fire":
                    # fire <intid> @ <step> [<step> ...]
                    intid = _int_token(line[1])
                    if line[2].text != "@":
                        self.error(line[2], "expected '@' in fire schedule")
                        continue
                    for t in line[3:]:
                        fires.append((_int_token(t), intid))
                elif key == "data":
                    kw["data"] = (line[1].text.encode() if line[1].is_string
                                  else bytes.fromhex(line[1].text))
                else:
                    self.error(line[0], f"unknown peripheral field {key!r}")
            except (IndexError, ValueError):
                self.error(line[0], f"malformed peripheral field {key!r}")
        kw["fires"] = tuple(sorted(fires))
        return PeripheralDecl(**kw)

    def _parse_domain(self, toks) -> DomainDecl | None:
        if len(toks) < 3 or not self._expect_block_open(toks):
            self.error(toks[0], "expected: domain <name> {")
            return None
        kw: dict = {"name": toks[1].text, "line": toks[0].line}
        periphs: list[tuple[str, str]] = []
        shares: list[tuple[str, tuple[str, ...]]] = []
        for line in self._block_lines():
            key = line[0].text
            try:
                if key == "scheduler":
                    kw["scheduler"] = True
                elif key == "memory":
                    kw["memory"] = _int_token(line[1])
                elif key == "cores":
                    kw["cores"] = tuple(_int_token(t) for t in line[1:])
                elif key == "shim":
                    kw["shim"] = True
                elif key == "binary":
                    kw["binary"] = (line[1].text.encode() if line[1].is_string
                                    else bytes.fromhex(line[1].text))
                elif key == "expect_digest":
                    kw["expect_digest"] = bytes.fromhex(line[1].text)
                elif key == "peripheral":
                    mode = line[2].text
                    if mode not in ACCESS_MODES:
                        self.error(line[2], f"unknown access mode {mode!r}")
                    periphs.append((line[1].text, mode))
                elif key == "share":
                    shares.append((line[1].text, tuple(t.text for t in line[2:])))
                elif key == "handler":
                    kw["handler"] = self._parse_script(line)
                elif key == "script":
                    kw["script"] = self._parse_script(line)
                else:
                    self.error(line[0], f"unknown domain field {key!r}")
            except (IndexError, ValueError):
                self.error(line[0], f"malformed domain field {key!r}")
        kw["peripherals"] = tuple(periphs)
        kw["shares"] = tuple(shares)
        return DomainDecl(**kw)

    def _parse_script(self, toks) -> tuple[Action, ...]:
        if not self._expect_block_open(toks):
            return ()
        actions = []
        for line in self._block_lines():
            act = self._parse_action(line)
            if act is not None:
                actions.append(act)
        return tuple(actions)

    def _parse_action(self, line: list[Token]) -> Action | None:
        op = line[0].text
        sig = ACTION_SIGNATURES.get(op)
        if sig is None:
            self.error(line[0], f"unknown action {op!r}")
            return None
        args: list = []
        toks = line[1:]
        for pos, code in enumerate(sig):
            if pos >= len(toks):
                if code.isupper():
                    break
                self.error(line[0], f"action {op!r}: missing argument {pos + 1}")
                return None
            tok = toks[pos]
            kind = code.lower()
            if kind == "i":
                try:
                    args.append(_int_token(tok))
                except ValueError:
                    self.error(tok, f"expected a number, got {tok.text!r}")
                    return None
            elif kind == "s":
                args.append(tok.text)
            elif kind == "g":
                if tok.text not in GIC_CLASSES:
                    self.error(tok, f"unknown register class {tok.text!r}")
                    return None
                args.append(tok.text)
            elif kind == "m":
                if tok.text not in ("temporal", "spatial"):
                    self.error(tok, f"unknown run mode {tok.text!r}")
                    return None
                args.append(tok.text)
            elif kind == "x":
                args.append(tok.text.encode() if tok.is_string
                            else bytes.fromhex(tok.text))
        if len(toks) > len(sig):
            self.error(toks[len(sig)], f"too many arguments for {op!r}")
            return None
        return Action(op, tuple(args), line=line[0].line)

    def _parse_inject(self, toks) -> Injection | None:
        if len(toks) < 3:
            self.error(toks[0], "expected: inject <step> <op> <args...>")
            return None
        try:
            step = _int_token(toks[1])
        except ValueError:
            self.error(toks[1], f"bad step {toks[1].text!r}")
            return None
        op = toks[2].text
        if op not in ("handover", "teardown"):
            self.error(toks[2], f"unknown injection {op!r}")
            return None
        return Injection(step, op, tuple(t.text for t in toks[3:]), line=toks[0].line)

    def _parse_check(self, toks, fields) -> None:
        if not self._expect_block_open(toks):
            return
        kw = {}
        for line in self._block_lines():
            key = line[0].text
            try:
                if key == "liveness_bound":
                    kw["liveness_bound"] = _int_token(line[1])
                elif key == "max_steps":
                    kw["max_steps"] = _int_token(line[1])
                else:
                    self.error(line[0], f"unknown check parameter {key!r}")
            except (IndexError, ValueError):
                self.error(line[0], f"malformed check parameter {key!r}")
        fields["checks"] = CheckParams(**kw)


# ---------------------------------------------------------------------------
# cross-reference validation
# ---------------------------------------------------------------------------


def validate(sc: Scenario, diags: list[Diagnostic]) -> None:
    periph_names = {p.name for p in sc.peripherals}
    region_names = {r.name for r in sc.regions}
    domain_names = {d.name for d in sc.domains}

    schedulers = [d for d in sc.domains if d.scheduler]
    if len(schedulers) != 1:
        where = schedulers[1].line if len(schedulers) > 1 else 1
        diags.append(Diagnostic(where, 1, f"exactly one scheduler required, "
                                          f"found {len(schedulers)}"))

    seen_intids: dict[int, PeripheralDecl] = {}
    for p in sc.peripherals:
        for intid in p.intids:
            if not 32 <= intid <= 255:
                diags.append(Diagnostic(p.line, 1,
                                        f"INTID {intid} outside the shared range 32-255"))
            if intid in seen_intids:
                other = seen_intids[intid]
                diags.append(Diagnostic(
                    p.line, 1,
                    f"INTID {intid} assigned to both {other.name} "
                    f"(line {other.line}) and {p.name}"))
            seen_intids[intid] = p
        for _, intid in p.fires:
            if intid not in p.intids:
                diags.append(Diagnostic(p.line, 1,
                                        f"{p.name} fires INTID {intid} it does not have"))
        if "readonly" in p.modes and p.size < 2 * sc.granule:
            diags.append(Diagnostic(
                p.line, 1,
                f"{p.name}: read-only sharing needs a separate data granule "
                f"(size >= {2 * sc.granule:#x})"))
        if p.base % sc.granule or p.size % sc.granule:
            diags.append(Diagnostic(p.line, 1, f"{p.name}: window not granule-aligned"))

    for d in sc.domains:
        for pname, mode in d.peripherals:
            if pname not in periph_names:
                diags.append(Diagnostic(d.line, 1,
                                        f"{d.name} requests unknown peripheral {pname!r}"))
            else:
                p = sc.peripheral_by_name(pname)
                if mode not in p.modes:
                    diags.append(Diagnostic(
                        d.line, 1, f"{pname} does not support mode {mode!r}"))
        for rname, peers in d.shares:
            if rname not in region_names:
                diags.append(Diagnostic(d.line, 1,
                                        f"{d.name} shares undeclared region {rname!r}"))
            for peer in peers:
                if peer not in domain_names:
                    diags.append(Diagnostic(d.line, 1,
                                            f"{d.name} shares {rname} with unknown "
                                            f"domain {peer!r}"))
        for c in d.cores:
            if not 0 <= c < sc.cores:
                diags.append(Diagnostic(d.line, 1, f"{d.name} placed on missing core {c}"))
        _validate_script(sc, d, d.script, diags)
        _validate_script(sc, d, d.handler, diags)

    for inj in sc.injections:
        names = inj.args
        if inj.op == "handover":
            if len(names) != 2:
                diags.append(Diagnostic(inj.line, 1,
                                        "inject handover needs <peripheral> <domain>"))
                continue
            if names[0] not in periph_names:
                diags.append(Diagnostic(inj.line, 1, f"unknown peripheral {names[0]!r}"))
            if names[1] not in domain_names:
                diags.append(Diagnostic(inj.line, 1, f"unknown domain {names[1]!r}"))
        elif inj.op == "teardown":
            if len(names) != 1 or names[0] not in domain_names:
                diags.append(Diagnostic(inj.line, 1, "inject teardown needs a known domain"))


def _validate_script(sc: Scenario, d: DomainDecl, actions, diags) -> None:
    periph_names = {p.name for p in sc.peripherals}
    region_names = {r.name for r in sc.regions}
    domain_names = {dd.name for dd in sc.domains}
    shared_here = {name for name, _ in d.shares}
    for act in actions:
        op, args = act.op, act.args
        if op in ("mmio_read", "mmio_write", "clear") and args[0] not in periph_names:
            diags.append(Diagnostic(act.line, 1, f"unknown peripheral {args[0]!r}"))
        elif op in ("shm_read", "shm_write", "proxy_send", "proxy_recv"):
            if args[0] not in region_names:
                diags.append(Diagnostic(act.line, 1, f"unknown region {args[0]!r}"))
            elif args[0] not in shared_here:
                diags.append(Diagnostic(act.line, 1,
                                        f"{d.name} uses region {args[0]!r} it does not share"))
            elif op == "proxy_send":
                size = next(r.size for r in sc.regions if r.name == args[0])
                if len(args[1]) + 24 > size:
                    diags.append(Diagnostic(act.line, 1,
                                            f"payload does not fit region {args[0]!r}"))
        elif op in ("setup", "run", "teardown", "attest") and args[0] not in domain_names:
            diags.append(Diagnostic(act.line, 1, f"unknown domain {args[0]!r}"))
        elif op == "cede":
            if args[0] not in periph_names:
                diags.append(Diagnostic(act.line, 1, f"unknown peripheral {args[0]!r}"))
            if len(args) > 1 and args[1] not in domain_names:
                diags.append(Diagnostic(act.line, 1, f"unknown domain {args[1]!r}"))
        elif op == "readonly":
            if args[0] not in periph_names:
                diags.append(Diagnostic(act.line, 1, f"unknown peripheral {args[0]!r}"))
            if args[1] not in domain_names:
                diags.append(Diagnostic(act.line, 1, f"unknown domain {args[1]!r}"))


def parse_scenario(text: str) -> Scenario:
    return _Parser(text).parse()


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# ---------------------------------------------------------------------------
# canonical emitter
# ---------------------------------------------------------------------------


def emit_scenario(sc: Scenario) -> str:
    out: list[str] = [f"scenario {sc.name}", f"mode {sc.mode.value}", "platform {"]
    out.append(f"  cores {sc.cores}")
    out.append(f"  granule {sc.granule:#x}")
    out.append(f"  dram {sc.dram_base:#x} {sc.dram_size:#x}")
    out.append(f"  gic {sc.gic_base:#x}")
    out.append(f"  device_key {sc.device_key.hex()}")
    if not sc.core_filtering:
        out.append("  no_core_filter")
    out.append("}")
    for p in sc.peripherals:
        out.append(f"peripheral {p.name} {{")
        out.append(f"  kind {p.kind}")
        out.append(f"  mmio {p.base:#x} {p.size:#x}")
        if p.intids:
            out.append("  intids " + " ".join(str(i) for i in p.intids))
        out.append("  modes " + " ".join(p.modes))
        if p.hot_plug:
            out.append("  hotplug")
        by_intid: dict[int, list[int]] = {}
        for step, intid in p.fires:
            by_intid.setdefault(intid, []).append(step)
        for intid in sorted(by_intid):
            steps = " ".join(str(s) for s in sorted(by_intid[intid]))
            out.append(f"  fire {intid} @ {steps}")
        if p.data:
            out.append(f"  data {p.data.hex()}")
        out.append("}")
    for r in sc.regions:
        out.append(f"region {r.name} {r.size:#x}")
    for d in sc.domains:
        out.append(f"domain {d.name} {{")
        if d.scheduler:
            out.append("  scheduler")
        out.append(f"  memory {d.memory:#x}")
        if d.cores:
            out.append("  cores " + " ".join(str(c) for c in d.cores))
        if d.shim:
            out.append("  shim")
        if d.binary is not None:
            out.append(f"  binary {d.binary.hex()}")
        if d.expect_digest is not None:
            out.append(f"  expect_digest {d.expect_digest.hex()}")
        for pname, mode in d.peripherals:
            out.append(f"  peripheral {pname} {mode}")
        for rname, peers in d.shares:
            out.append(f"  share {rname} " + " ".join(peers))
        if d.handler:
            out.append("  handler {")
            out.extend("    " + _emit_action(a) for a in d.handler)
            out.append("  }")
        out.append("  script {")
        out.extend("    " + _emit_action(a) for a in d.script)
        out.append("  }")
        out.append("}")
    for inj in sc.injections:
        out.append(f"inject {inj.step} {inj.op} " + " ".join(inj.args))
    out.append("check {")
    out.append(f"  liveness_bound {sc.checks.liveness_bound}")
    out.append(f"  max_steps {sc.checks.max_steps}")
    out.append("}")
    return "\n".join(out) + "\n"


def _emit_action(act: Action) -> str:
    parts = [act.op]
    for arg in act.args:
        if isinstance(arg, bytes):
            parts.append(arg.hex())
        elif isinstance(arg, int):
            parts.append(hex(arg) if arg > 255 else str(arg))
        else:
            parts.append(str(arg))
    return " ".join(parts)
