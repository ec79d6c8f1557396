"""User-mode RV64IMC interpreter for running chains against an image.

Straight-line runs of instructions are translated to Python functions and
cached by start address.  This is sound because image text is never
writable and data is never executable.  Single stepping uses the same
translator with one-instruction blocks, so there is one semantic source.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

from . import isa
from .chain import ChainBinary, deserialize
from .image import MemoryImage

M = (1 << 64) - 1
SIGN = 1 << 63
DEFAULT_MAX_STEPS = 500_000_000
MAX_BLOCK = 64
HOST_FUNCTIONS = ("putchar", "getchar", "exit")
TRACE_REGS = ("ra", "a0", "a5", "s0")
_TRACE_IDX = tuple(isa.reg_index(r) for r in TRACE_REGS)
_FAST = sys.byteorder == "little"


class Trap(Exception):
    """A fault the chain cannot continue from."""

    KINDS = ("illegal-instruction", "unmapped-access", "misaligned-sp", "write-protect",
             "breakpoint", "environment-call")

    def __init__(self, kind: str, pc: int, sp: int, addr: int | None = None, detail: str = ""):
        self.kind, self.pc, self.sp, self.addr, self.detail = kind, pc, sp, addr, detail
        where = f" addr={addr:#x}" if addr is not None else ""
        super().__init__(f"{kind} at pc={pc:#x} sp={sp:#x}{where}{' ' + detail if detail else ''}")


class StepLimitExceeded(Exception):
    pass


@dataclass(frozen=True)
class TraceEvent:
    entry: int
    sp: int
    regs: tuple[int, ...]  # values of TRACE_REGS

    def __str__(self) -> str:
        vals = " ".join(f"{n}={v:#x}" for n, v in zip(TRACE_REGS, self.regs))
        return f"{self.entry:#x} sp={self.sp:#x} {vals}"


@dataclass
class RunResult:
    output: bytes
    exit_status: int | None
    steps: int
    trap: Trap | None = None
    step_limit: bool = False
    trace: list[TraceEvent] | None = None
    trace_digest: str = ""
    landings: int = 0

    @property
    def ok(self) -> bool:
        return self.trap is None and not self.step_limit and self.exit_status is not None


# --------------------------------------------------------------------------
# memory


class Memory:
    """Image segments plus one contiguous read/write RAM region."""

    def __init__(self, img: MemoryImage, ram_base: int = 0, ram_size: int = 0):
        self.img = img
        self.segments = [(s.base, s.end, s.data, s.perms) for s in img.segments]
        if ram_size:
            for s in img.segments:
                if s.base < ram_base + ram_size and ram_base < s.end:
                    raise ValueError("RAM region overlaps an image segment")
        self.ram_base = ram_base
        self.ram = bytearray(ram_size + (-ram_size % 8))
        self.ram_size = ram_size
        self.q = memoryview(self.ram).cast("Q") if _FAST else None

    def _find(self, addr: int, n: int):
        for base, end, data, perms in self.segments:
            if base <= addr and addr + n <= end:
                return base, data, perms
        return None

    def load(self, addr: int, n: int, signed: bool = False) -> int:
        o = addr - self.ram_base
        if 0 <= o and o + n <= self.ram_size:
            v = int.from_bytes(self.ram[o:o + n], "little")
        else:
            hit = self._find(addr, n)
            if hit is None or "r" not in hit[2]:
                raise Trap("unmapped-access", 0, 0, addr, f"load of {n} bytes")
            base, data, _ = hit
            v = int.from_bytes(data[addr - base:addr - base + n], "little")
        if signed and v >> (8 * n - 1):
            v -= 1 << (8 * n)
        return v & M

    def store(self, addr: int, n: int, value: int) -> None:
        o = addr - self.ram_base
        if 0 <= o and o + n <= self.ram_size:
            self.ram[o:o + n] = (value & ((1 << (8 * n)) - 1)).to_bytes(n, "little")
            return
        if self._find(addr, n) is not None:
            raise Trap("write-protect", 0, 0, addr, f"store of {n} bytes")
        raise Trap("unmapped-access", 0, 0, addr, f"store of {n} bytes")

    def read(self, addr: int, n: int) -> bytes:
        return bytes(self.load(addr + i, 1) for i in range(n)) if n else b""

    def write(self, addr: int, data: bytes) -> None:
        o = addr - self.ram_base
        if not (0 <= o and o + len(data) <= self.ram_size):
            raise Trap("unmapped-access", 0, 0, addr, "bulk write")
        self.ram[o:o + len(data)] = data

    def fetch_segment(self, pc: int):
        hit = self._find(pc, 2)
        if hit is None or "x" not in hit[2]:
            return None
        return hit


# --------------------------------------------------------------------------
# arithmetic helpers referenced by generated code


def _s(v):
    return (v ^ SIGN) - SIGN


def _w(v):
    return (((v & 0xFFFFFFFF) ^ 0x80000000) - 0x80000000) & M


def _s32(v):
    return ((v & 0xFFFFFFFF) ^ 0x80000000) - 0x80000000


def _tdiv(a, b):
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _div(a, b):
    if b == 0:
        return M
    a, b = _s(a), _s(b)
    if a == -SIGN and b == -1:
        return SIGN
    return _tdiv(a, b) & M


def _rem(a, b):
    if b == 0:
        return a
    a, b = _s(a), _s(b)
    if a == -SIGN and b == -1:
        return 0
    return (a - b * _tdiv(a, b)) & M


def _divw(a, b):
    a, b = _s32(a), _s32(b)
    if b == 0:
        return M
    if a == -(1 << 31) and b == -1:
        return _w(a)
    return _w(_tdiv(a, b))


def _remw(a, b):
    a, b = _s32(a), _s32(b)
    if b == 0:
        return _w(a)
    if a == -(1 << 31) and b == -1:
        return 0
    return _w(a - b * _tdiv(a, b))


def _divuw(a, b):
    a, b = a & 0xFFFFFFFF, b & 0xFFFFFFFF
    return M if b == 0 else _w(a // b)


def _remuw(a, b):
    a, b = a & 0xFFFFFFFF, b & 0xFFFFFFFF
    return _w(a) if b == 0 else _w(a % b)


_BIN = {
    "add": "({a} + {b}) & M", "sub": "({a} - {b}) & M",
    "sll": "({a} << ({b} & 63)) & M", "srl": "{a} >> ({b} & 63)",
    "sra": "(_s({a}) >> ({b} & 63)) & M",
    "slt": "int(({a} ^ SIGN) < ({b} ^ SIGN))", "sltu": "int({a} < {b})",
    "xor": "{a} ^ {b}", "or": "{a} | {b}", "and": "{a} & {b}",
    "mul": "({a} * {b}) & M",
    "mulh": "((_s({a}) * _s({b})) >> 64) & M",
    "mulhsu": "((_s({a}) * {b}) >> 64) & M",
    "mulhu": "({a} * {b}) >> 64",
    "div": "_div({a}, {b})", "divu": "({a} // {b} if {b} else M)",
    "rem": "_rem({a}, {b})", "remu": "({a} % {b} if {b} else {a})",
    "addw": "_w({a} + {b})", "subw": "_w({a} - {b})",
    "sllw": "_w({a} << ({b} & 31))", "srlw": "_w(({a} & 0xFFFFFFFF) >> ({b} & 31))",
    "sraw": "_w(_s32({a}) >> ({b} & 31))", "mulw": "_w({a} * {b})",
    "divw": "_divw({a}, {b})", "divuw": "_divuw({a}, {b})",
    "remw": "_remw({a}, {b})", "remuw": "_remuw({a}, {b})",
}
_IMM = {"addi": "add", "slti": "slt", "sltiu": "sltu", "xori": "xor", "ori": "or",
        "andi": "and", "slli": "sll", "srli": "srl", "srai": "sra", "addiw": "addw",
        "slliw": "sllw", "srliw": "srlw", "sraiw": "sraw"}
_LOADS = {"lb": (1, True), "lh": (2, True), "lw": (4, True), "ld": (8, False),
          "lbu": (1, False), "lhu": (2, False), "lwu": (4, False)}
_STORES = {"sb": 1, "sh": 2, "sw": 4, "sd": 8}
_BRANCHES = {"beq": "{a} == {b}", "bne": "{a} != {b}",
             "blt": "({a} ^ SIGN) < ({b} ^ SIGN)", "bge": "({a} ^ SIGN) >= ({b} ^ SIGN)",
             "bltu": "{a} < {b}", "bgeu": "{a} >= {b}"}


def _reg(i: int) -> str:
    return f"x[{i}]" if i else "0"


class _Halt(Exception):
    """Raised by the exit builtin."""


# --------------------------------------------------------------------------
# machine


@dataclass
class MachineState:
    regs: list[int]
    pc: int
    steps: int = 0


class Machine:
    """Registers, memory, host calls and a translated-block cache."""

    def __init__(self, img: MemoryImage, ram_base: int = 0, ram_size: int = 0,
                 stdin: bytes = b"", host: dict[int, str] | None = None,
                 strict: bool = True, hostile_bytes: int = 0):
        self.img = img
        self.mem = Memory(img, ram_base, ram_size)
        self.state = MachineState([0] * 32, 0)
        self.stdin = bytes(stdin)
        self.stdin_pos = 0
        self.output = bytearray()
        self.exit_status: int | None = None
        if host is None:
            host = {img.symbols[n]: n for n in HOST_FUNCTIONS if n in img.symbols}
        self.host = dict(host)
        self.strict = strict
        self.hostile_bytes = hostile_bytes
        self._blocks: dict[int, tuple] = {}
        self._singles: dict[int, tuple] = {}
        m = self.mem
        self._env = {
            "M": M, "SIGN": SIGN, "_s": _s, "_w": _w, "_s32": _s32, "_div": _div,
            "_rem": _rem, "_divw": _divw, "_remw": _remw, "_divuw": _divuw, "_remuw": _remuw,
            "Q": m.q, "LO": m.ram_base, "RAMN": m.ram_size - 7 if _FAST else -1,
            "ld": self._load, "st": self._store, "trap": self._trap,
        }

    # register access -------------------------------------------------------

    @property
    def regs(self) -> list[int]:
        return self.state.regs

    def reg(self, name: str | int) -> int:
        return self.state.regs[isa.reg_index(name)]

    def set_reg(self, name: str | int, value: int) -> None:
        i = isa.reg_index(name)
        if i:
            self.state.regs[i] = value & M

    # slow paths called from generated code -------------------------------

    def _load(self, addr, n, signed, pc):
        try:
            return self.mem.load(addr, n, signed)
        except Trap as t:
            raise Trap(t.kind, pc, self.state.regs[2], t.addr, t.detail) from None

    def _store(self, addr, n, value, pc):
        try:
            self.mem.store(addr, n, value)
        except Trap as t:
            raise Trap(t.kind, pc, self.state.regs[2], t.addr, t.detail) from None

    def _trap(self, kind, pc, detail=""):
        raise Trap(kind, pc, self.state.regs[2], None, detail)

    # translation -----------------------------------------------------------

    def _translate(self, pc: int, limit: int) -> tuple:
        """Return ``(fn, steps, ends_in_return, source)`` for the block at ``pc``."""
        name = self.host.get(pc)
        if name is not None:
            def host_call(x, name=name):
                if not self._host_call(name):
                    raise _Halt
                return x[1]
            return host_call, 1, False, f"# host {name}"
        hit = self.mem.fetch_segment(pc)
        if hit is None or pc % 2:
            raise Trap("unmapped-access", pc, self.state.regs[2], pc, "instruction fetch")
        base, data, _ = hit
        body: list[str] = []
        n = 0
        cur = pc
        ret = False
        end = None
        while n < limit:
            if cur - base + 2 > len(data):
                break
            try:
                ins = isa.decode(data, cur - base)
            except isa.DecodeError:
                body.append(f"trap('illegal-instruction', {cur})")
                n += 1
                end = "stop"
                break
            n += 1
            end = self._emit(body, ins, cur)
            if end is not None:
                ret = isa.is_return(ins)
                break
            cur += ins.width
        if end is None:
            body.append(f"return {cur}")
        src = "def _blk(x):\n" + "\n".join("    " + ln for ln in body) + "\n"
        ns: dict = {}
        exec(compile(src, f"<block {pc:#x}>", "exec"), self._env, ns)
        return ns["_blk"], n, ret, src

    def _emit(self, out: list[str], ins: isa.Instruction, pc: int) -> str | None:
        """Append code for one instruction; return a tag when it ends the block."""
        kind = ins.kind
        if kind == "illegal":
            out.append(f"trap('illegal-instruction', {pc})")
            return "stop"
        if kind == "unsupported-decodable":
            out.append(f"trap('illegal-instruction', {pc}, 'unmodeled {ins.mnemonic}')")
            return "stop"
        op, rd, r1, r2, imm = isa.expand(ins)
        a, b = _reg(r1), _reg(r2)
        nxt = pc + ins.width
        dst = f"x[{rd}]" if rd else "_"
        if op in _BIN:
            out.append(f"{dst} = {_BIN[op].format(a=a, b=b)}")
        elif op in _IMM:
            out.append(f"{dst} = {_BIN[_IMM[op]].format(a=a, b=str(imm & M))}")
        elif op == "lui":
            out.append(f"{dst} = {imm & M}")
        elif op == "auipc":
            out.append(f"{dst} = {(pc + imm) & M}")
        elif op in _LOADS:
            n, signed = _LOADS[op]
            out.append(f"_a = ({a} + {imm}) & M")
            if n == 8:
                out.append("_o = _a - LO")
                out.append("if 0 <= _o < RAMN and not _o & 7:")
                out.append(f"    {dst} = Q[_o >> 3]")
                out.append("else:")
                out.append(f"    {dst} = ld(_a, 8, False, {pc})")
            else:
                out.append(f"{dst} = ld(_a, {n}, {signed}, {pc})")
        elif op in _STORES:
            n = _STORES[op]
            out.append(f"_a = ({a} + {imm}) & M")
            if n == 8:
                out.append("_o = _a - LO")
                out.append("if 0 <= _o < RAMN and not _o & 7:")
                out.append(f"    Q[_o >> 3] = {b}")
                out.append("else:")
                out.append(f"    st(_a, 8, {b}, {pc})")
            else:
                out.append(f"st(_a, {n}, {b}, {pc})")
        elif op in _BRANCHES:
            out.append(f"if {_BRANCHES[op].format(a=a, b=b)}:")
            out.append(f"    return {(pc + imm) & M}")
            out.append(f"return {nxt}")
            return "branch"
        elif op == "jal":
            if rd:
                out.append(f"x[{rd}] = {nxt}")
            out.append(f"return {(pc + imm) & M}")
            return "jump"
        elif op == "jalr":
            out.append(f"_t = ({a} + {imm}) & {M - 1}")
            if rd:
                out.append(f"x[{rd}] = {nxt}")
            if self.strict and isa.is_return(ins):
                out.append("if x[2] & 15:")
                out.append("    trap('misaligned-sp', _t, 'at gadget landing')")
            out.append("return _t")
            return "jump"
        elif op in ("fence", "fence.i"):
            pass
        elif op == "ebreak":
            out.append(f"trap('breakpoint', {pc})")
            return "stop"
        elif op == "ecall":
            out.append(f"trap('environment-call', {pc})")
            return "stop"
        else:
            out.append(f"trap('illegal-instruction', {pc}, 'unmodeled {ins.mnemonic}')")
            return "stop"
        return None

    def block_source(self, pc: int) -> str:
        return self._translate(pc, MAX_BLOCK)[3]

    # execution ---------------------------------------------------------------

    def _host_call(self, name: str) -> bool:
        """Run a host builtin; False when the program exits."""
        x = self.state.regs
        if self.hostile_bytes:
            sp = x[2]
            lo = max(sp - self.hostile_bytes, self.mem.ram_base)
            o_lo, o_hi = lo - self.mem.ram_base, sp - self.mem.ram_base
            if o_hi > o_lo >= 0 and o_hi <= self.mem.ram_size:
                self.mem.ram[o_lo:o_hi] = b"\xa5" * (o_hi - o_lo)
        if name == "putchar":
            c = x[10] & 0xFF
            self.output.append(c)
            x[10] = c
        elif name == "getchar":
            if self.stdin_pos < len(self.stdin):
                x[10] = self.stdin[self.stdin_pos]
                self.stdin_pos += 1
            else:
                x[10] = M  # EOF (-1)
        elif name == "exit":
            self.exit_status = x[10] & 0xFF
            return False
        return True

    def step(self) -> MachineState:
        """Execute exactly one instruction (or one host builtin).

        Raises Trap on a fault.  After ``exit`` the state's ``halted`` is set.
        """
        st = self.state
        if self.exit_status is not None:
            return st
        blk = self._singles.get(st.pc)
        if blk is None:
            blk = self._singles[st.pc] = self._translate(st.pc, 1)
        st.steps += 1
        try:
            st.pc = blk[0](st.regs)
        except _Halt:
            pass
        return st

    def run(self, max_steps: int = DEFAULT_MAX_STEPS, trace: str = "off") -> RunResult:
        """Run until exit, trap or step limit.

        ``trace`` is ``"off"``, ``"digest"`` (a rolling hash of every
        return landing) or ``"full"`` (the events themselves).
        """
        st = self.state
        x = st.regs
        get = self._blocks.get
        full = trace == "full"
        digest = trace != "off"
        events: list[TraceEvent] | None = [] if full else None
        h = 0
        landings = 0
        pc = st.pc
        steps = st.steps
        trap = None
        limit = stepping = False
        try:
            if not digest:
                while True:
                    blk = get(pc)
                    if blk is None:
                        st.pc = pc
                        blk = self._blocks[pc] = self._translate(pc, MAX_BLOCK)
                    steps += blk[1]
                    if steps > max_steps:
                        steps -= blk[1]
                        break
                    pc = blk[0](x)
            else:
                while True:
                    blk = get(pc)
                    if blk is None:
                        st.pc = pc
                        blk = self._blocks[pc] = self._translate(pc, MAX_BLOCK)
                    steps += blk[1]
                    if steps > max_steps:
                        steps -= blk[1]
                        break
                    pc = blk[0](x)
                    if blk[2]:
                        landings += 1
                        h = (h * 0x100000001B3 ^ pc ^ (x[2] << 1) ^ (x[10] << 3)) & M
                        if full:
                            events.append(TraceEvent(pc, x[2], tuple(x[i] for i in _TRACE_IDX)))
            # the next block would pass the limit: finish one instruction at a time
            st.pc, st.steps = pc, steps
            stepping = True
            while st.steps < max_steps and self.exit_status is None:
                self.step()
            limit = self.exit_status is None
        except _Halt:
            pass
        except Trap as t:
            trap = t
        if stepping:
            steps = st.steps
        else:
            st.pc, st.steps = pc, steps
        return RunResult(bytes(self.output), self.exit_status, steps, trap, limit, events,
                         f"{h:016x}" if digest else "", landings)


def step(machine: Machine) -> MachineState:
    return machine.step()


# --------------------------------------------------------------------------
# boot protocol


@dataclass(frozen=True)
class BootConfig:
    max_steps: int = DEFAULT_MAX_STEPS
    strict: bool = True
    trace: str = "off"  # off | digest | full
    hostile_bytes: int = 0


def chain_ram(chain: ChainBinary) -> tuple[int, int]:
    """The single RAM span covering the chain words and its scratch regions."""
    lo = chain.base_sp
    hi = chain.base_sp + 8 * len(chain.words)
    for addr, size in chain.regions:
        lo, hi = min(lo, addr), max(hi, addr + size)
    return lo, hi - lo


def boot(img: MemoryImage, chain: bytes | ChainBinary, stdin: bytes = b"",
         config: BootConfig = BootConfig(), host: dict[int, str] | None = None) -> RunResult:
    """Map the chain at its base_sp, simulate the frame-0 NOP and run."""
    from .scanner import gadget_at

    if not isinstance(chain, ChainBinary):
        chain = deserialize(chain)
    lo, size = chain_ram(chain)
    m = Machine(img, lo, size, stdin, host, config.strict, config.hostile_bytes)
    m.mem.write(chain.base_sp, b"".join(w.to_bytes(8, "little") for w in chain.words))
    sp = chain.base_sp
    g = gadget_at(img, chain.entry_gadget)
    if g is None:
        t = Trap("illegal-instruction", chain.entry_gadget, sp, None,
                 "entry gadget is not chainable")
        return RunResult(b"", None, 0, t, trace=[] if config.trace == "full" else None)
    m.set_reg("sp", sp)
    ra = m.mem.load(sp + g.a, 8)
    m.set_reg("ra", ra)
    m.set_reg("sp", sp + g.b)
    m.state.pc = ra
    res = m.run(config.max_steps, config.trace)
    first = TraceEvent(chain.entry_gadget, sp, (chain.entry_gadget, 0, 0, 0))
    if res.trace is not None:
        res.trace.insert(0, first)
    if config.trace != "off":
        res.trace_digest = f"{chain.entry_gadget:x}:{sp:x}:{res.trace_digest}"
    res.landings += 1
    return res
