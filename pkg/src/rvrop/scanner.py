"""Chainable gadget discovery, effect summaries, role classification, census.

A chainable gadget loads ``ra`` from ``a(sp)`` (``a > 0``, ``a % 8 == 0``),
moves ``sp`` up by an immediate total ``b`` (``b > a``, ``b % 16 == 0``) and
ends in a return.  Every 2-byte aligned address of every executable segment
is tried as an entry, so suffixes of a gadget are reported on their own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import isa
from .image import MemoryImage, Segment
from .isa import Instruction
from .symbolic import (NEGATE, CallResult, Const, Expr, Load, Op, Sym, binop, const,
                       split_offset)
from .symbolic import OPS as _ARITH

DEFAULT_WINDOW = 16
CALLER_SAVED = ("ra", "t0", "t1", "t2", "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7",
                "t3", "t4", "t5", "t6")
ROLE_KINDS = ("NOP", "POP", "READMEM", "WRITEMEM", "ADD1", "SUB1", "MOV_SP",
              "CALL_JALR_A5", "BRANCH_UNCOND", "COND_BRANCH")

_LOAD_W = {"lb": (1, True), "lh": (2, True), "lw": (4, True), "ld": (8, True),
           "lbu": (1, False), "lhu": (2, False), "lwu": (4, False)}
_STORE_W = {"sb": 1, "sh": 2, "sw": 4, "sd": 8}
_IMM_OPS = {"addi": "add", "slti": "slt", "sltiu": "sltu", "xori": "xor", "ori": "or",
            "andi": "and", "slli": "sll", "srli": "srl", "srai": "sra", "addiw": "addw",
            "slliw": "sllw", "srliw": "srlw", "sraiw": "sraw"}
_BRANCH_COND = {"beq": "eq", "bne": "ne", "blt": "lt", "bge": "ge", "bltu": "ltu",
                "bgeu": "geu"}


class UnsupportedInstruction(Exception):
    pass


@dataclass(frozen=True)
class Guard:
    """A branch condition.  ``cond`` must hold for the fall-through path.

    ``alternate`` is set when the taken path reaches its own chainable
    epilogue inside the window.
    """

    cond: str
    lhs: Expr
    rhs: Expr
    alternate: "PathSummary | None" = None

    def __str__(self) -> str:
        return f"{self.lhs} {self.cond} {self.rhs}"


@dataclass(frozen=True)
class CallSite:
    target: Expr
    before: tuple[Expr, ...]  # register file at the call


@dataclass(frozen=True)
class PathSummary:
    regs: tuple[Expr, ...]  # final value of every register
    mem_reads: tuple[tuple[Expr, int], ...]
    mem_writes: tuple[tuple[Expr, Expr, int], ...]
    guards: tuple[Guard, ...]
    calls: tuple[CallSite, ...]
    opaque: bool = False
    instrs: tuple[Instruction, ...] = ()

    def reg(self, name: str | int) -> Expr:
        return self.regs[isa.reg_index(name)]

    @property
    def ra_offset(self) -> int | None:
        e = self.regs[isa.RA]
        if isinstance(e, Load) and e.width == 8:
            base, k = split_offset(e.addr)
            if base == Sym("sp"):
                return k
        return None

    @property
    def sp_delta(self) -> int | None:
        base, k = split_offset(self.regs[isa.SP])
        return k if base == Sym("sp") else None

    @property
    def pops(self) -> dict[str, int]:
        out = {}
        for i, e in enumerate(self.regs):
            if i in (isa.ZERO, isa.SP):
                continue
            if isinstance(e, Load) and e.width == 8:
                base, k = split_offset(e.addr)
                if base == Sym("sp"):
                    out[isa.reg_name(i)] = k
        return out

    @property
    def reg_writes(self) -> dict[str, Expr]:
        return {isa.reg_name(i): e for i, e in enumerate(self.regs)
                if i and e != Sym(isa.reg_name(i))}

    def chainable(self) -> bool:
        a, b = self.ra_offset, self.sp_delta
        return (a is not None and b is not None and a > 0 and a % 8 == 0
                and b > a and b % 16 == 0)


@dataclass(frozen=True)
class EffectSummary:
    path: PathSummary

    @property
    def pops(self) -> dict[str, int]:
        return self.path.pops

    @property
    def reg_writes(self) -> dict[str, Expr]:
        return self.path.reg_writes

    @property
    def mem_reads(self):
        return self.path.mem_reads

    @property
    def mem_writes(self):
        return self.path.mem_writes

    @property
    def guards(self) -> tuple[Guard, ...]:
        return self.path.guards

    @property
    def calls(self):
        return self.path.calls

    @property
    def opaque(self) -> bool:
        return self.path.opaque

    @property
    def alternates(self) -> list[Guard]:
        return [g for g in self.guards if g.alternate is not None]

    def digest(self) -> str:
        parts = [f"{r}<-{e}" for r, e in self.reg_writes.items() if r not in ("ra", "sp")]
        parts += [f"mem{w * 8}[{a}]<-{v}" for a, v, w in self.mem_writes]
        parts += [f"guard({g})" for g in self.guards]
        parts += [f"call({c.target})" for c in self.calls]
        if self.opaque:
            parts.append("OPAQUE")
        return "; ".join(parts) or "-"


@dataclass(frozen=True)
class Gadget:
    entry: int
    instrs: tuple[Instruction, ...]
    ra_offset_a: int
    sp_delta_b: int
    summary: EffectSummary
    unintended_entry: bool = False
    window: bytes = b""

    @property
    def a(self) -> int:
        return self.ra_offset_a

    @property
    def b(self) -> int:
        return self.sp_delta_b

    def listing(self) -> list[str]:
        return [str(i) for i in self.instrs]


@dataclass(frozen=True)
class PivotGadget:
    """A return whose ``ra`` and ``sp`` both come from memory (longjmp shape)."""

    entry: int
    instrs: tuple[Instruction, ...]
    summary: EffectSummary
    window: bytes = b""
    unintended_entry: bool = False


# --------------------------------------------------------------------------
# path tracing


def _decode_at(seg: Segment, addr: int) -> Instruction | None:
    off = addr - seg.base
    if off < 0 or off + 2 > len(seg.data):
        return None
    try:
        return isa.decode(seg.data, off)
    except isa.DecodeError:
        return None


def _linear(seg: Segment, start: int, budget: int) -> list[tuple[int, Instruction]] | None:
    """Instructions from ``start`` up to and including a return, or None."""
    out = []
    pc = start
    while len(out) < budget:
        ins = _decode_at(seg, pc)
        if ins is None:
            return None
        out.append((pc, ins))
        if isa.is_return(ins):
            return out
        kind = ins.kind
        e = isa.expand(ins)
        if kind == "illegal" or (kind == "system" and e.op not in ("fence", "fence.i")):
            return None
        if kind in ("jal", "jalr") and e.rd != isa.RA:
            return None  # non-linking jump leaves the window
        pc += ins.width
    return None


class _State:
    def __init__(self):
        self.regs: list[Expr] = [Const(0)] + [Sym(isa.reg_name(i)) for i in range(1, 32)]
        self.reads: list[tuple[Expr, int]] = []
        self.writes: list[tuple[Expr, Expr, int]] = []
        self.guards: list[Guard] = []
        self.calls: list[CallSite] = []
        self.opaque = False
        self.instrs: list[Instruction] = []

    def copy(self) -> "_State":
        s = _State()
        s.regs = list(self.regs)
        s.reads = list(self.reads)
        s.writes = list(self.writes)
        s.guards = list(self.guards)
        s.calls = list(self.calls)
        s.opaque = self.opaque
        s.instrs = list(self.instrs)
        return s

    def set(self, rd: int, e: Expr) -> None:
        if rd:
            self.regs[rd] = e

    def freeze(self) -> PathSummary:
        return PathSummary(tuple(self.regs), tuple(self.reads), tuple(self.writes),
                           tuple(self.guards), tuple(self.calls), self.opaque,
                           tuple(self.instrs))


def _forwarded(st: _State, addr: Expr, width: int, signed: bool) -> Expr | None:
    """Value of an earlier store to the same address, if the window made one.

    Stores through a different base register are assumed not to alias.  A
    partial overlap with the same base cannot be expressed and makes the
    path opaque.
    """
    base, k = split_offset(addr)
    for waddr, val, ww in reversed(st.writes):
        wb, wk = split_offset(waddr)
        if wb != base or wk + ww <= k or k + width <= wk:
            continue
        if wk == k and ww >= width:
            if width == 8:
                return val
            shift = const(64 - 8 * width)
            return binop("sra" if signed else "srl", binop("sll", val, shift), shift)
        st.opaque = True
        return None
    return None


def _exec_symbolic(st: _State, pc: int, ins: Instruction) -> None:
    """Apply one non-control-flow instruction to the symbolic state."""
    st.instrs.append(ins)
    if ins.kind == "unsupported-decodable":
        st.opaque = True
        return
    e = isa.expand(ins)
    op, rd, r1, r2, imm = e
    x = st.regs
    if op in _LOAD_W:
        w, signed = _LOAD_W[op]
        addr = binop("add", x[r1], const(imm))
        value = _forwarded(st, addr, w, signed)
        if value is None:
            base, _ = split_offset(addr)
            if base != Sym("sp"):
                st.reads.append((addr, w))
            value = Load(addr, w, signed)
        st.set(rd, value)
    elif op in _STORE_W:
        st.writes.append((binop("add", x[r1], const(imm)), x[r2], _STORE_W[op]))
    elif op in _IMM_OPS:
        st.set(rd, binop(_IMM_OPS[op], x[r1], const(imm)))
    elif op == "lui":
        st.set(rd, const(imm))
    elif op == "auipc":
        st.set(rd, const(pc + imm))
    elif op in ("fence", "fence.i"):
        pass
    elif op in _ARITH:
        st.set(rd, binop(op, x[r1], x[r2]))
    else:
        st.opaque = True


def _run(seg: Segment, start: int, budget: int, window: tuple[int, int],
         st: _State, depth: int = 0) -> PathSummary | None:
    path = _linear(seg, start, budget)
    if path is None:
        return None
    for n, (pc, ins) in enumerate(path):
        e = isa.expand(ins)
        if isa.is_return(ins):
            st.instrs.append(ins)
            return st.freeze()
        if e.op in _BRANCH_COND:
            cond = _BRANCH_COND[e.op]
            lhs, rhs = st.regs[e.rs1], st.regs[e.rs2]
            target = pc + e.imm
            alt = None
            if window[0] <= target < window[1] and target > pc and depth < 2:
                fork = st.copy()
                fork.instrs.append(ins)
                fork.guards.append(Guard(cond, lhs, rhs))
                alt = _run(seg, target, budget - n - 1, window, fork, depth + 1)
                if alt is not None and not alt.chainable():
                    alt = None
            st.instrs.append(ins)
            st.guards.append(Guard(NEGATE[cond], lhs, rhs, alt))
            continue
        if e.op in ("jal", "jalr"):  # linking call; _linear rejects the rest
            target = const(pc + e.imm) if e.op == "jal" else binop("add", st.regs[e.rs1],
                                                                   const(e.imm))
            st.instrs.append(ins)
            k = len(st.calls)
            st.calls.append(CallSite(target, tuple(st.regs)))
            for name in CALLER_SAVED:
                st.set(isa.reg_index(name), CallResult(k, name))
            continue
        _exec_symbolic(st, pc, ins)
    return None


def _path_at(seg: Segment, entry: int, max_window: int) -> tuple[PathSummary, bytes] | None:
    path = _linear(seg, entry, max_window)
    if path is None:
        return None
    end = path[-1][0] + path[-1][1].width
    # taken branches may land anywhere up to the furthest byte a window could span
    limit = min(seg.end, entry + 4 * max_window)
    summ = _run(seg, entry, max_window, (entry, limit), _State())
    if summ is None:
        return None
    raw = seg.data[entry - seg.base:max(end, limit) - seg.base]
    return summ, raw


def _writes_sp_only_by_immediates(p: PathSummary) -> bool:
    for ins in p.instrs:
        e = isa.expand(ins)
        if e.rd != isa.SP or ins.kind in ("branch", "store"):
            continue
        if e.op != "addi" or e.rs1 != isa.SP:
            return False
    return True


def _ra_loads(p: PathSummary) -> int:
    return sum(1 for i in p.instrs if i.kind == "load" and isa.expand(i).rd == isa.RA)


def gadget_at(img: MemoryImage, entry: int, max_window: int = DEFAULT_WINDOW) -> Gadget | None:
    """The chainable gadget starting at ``entry``, if there is one."""
    seg = img.segment_at(entry, 2)
    if seg is None or not seg.executable or entry % 2:
        return None
    got = _path_at(seg, entry, max_window)
    if got is None:
        return None
    p, raw = got
    if not p.chainable() or not _writes_sp_only_by_immediates(p) or _ra_loads(p) != 1:
        return None
    return Gadget(entry, p.instrs, p.ra_offset, p.sp_delta, EffectSummary(p), window=raw)


def scan(img: MemoryImage, max_window: int = DEFAULT_WINDOW, sweep: str = "linear") -> list[Gadget]:
    """All chainable gadgets, in ascending entry order.

    ``sweep`` selects how intended instruction boundaries are computed for
    the ``unintended_entry`` flag: ``"linear"`` or ``"symbols"``.
    """
    if max_window < 2:
        raise ValueError("max_window must be at least 2")
    if not img.executable_segments:
        raise ValueError("image has no executable segment")
    bounds = intended_boundaries(img, sweep)
    out = []
    for seg in img.executable_segments:
        for entry in range(seg.base, seg.end - 1, 2):
            g = gadget_at(img, entry, max_window)
            if g is not None:
                out.append(_with_flag(g, entry not in bounds))
    return out


def scan_pivots(img: MemoryImage, max_window: int = DEFAULT_WINDOW) -> list[PivotGadget]:
    """Returns whose ``ra`` and ``sp`` are both loaded through one register."""
    out = []
    bounds = intended_boundaries(img)
    for seg in img.executable_segments:
        for entry in range(seg.base, seg.end - 1, 2):
            got = _path_at(seg, entry, max_window)
            if got is None:
                continue
            p, raw = got
            ra, sp = p.regs[isa.RA], p.regs[isa.SP]
            if not (isinstance(ra, Load) and isinstance(sp, Load)):
                continue
            rb, _ = split_offset(ra.addr)
            sb, _ = split_offset(sp.addr)
            if rb == sb and isinstance(rb, Sym) and rb.name != "sp" and not p.guards:
                out.append(PivotGadget(entry, p.instrs, EffectSummary(p), raw,
                                       entry not in bounds))
    return out


def _with_flag(g: Gadget, unintended: bool) -> Gadget:
    if g.unintended_entry == unintended:
        return g
    return Gadget(g.entry, g.instrs, g.ra_offset_a, g.sp_delta_b, g.summary, unintended,
                  g.window)


def summarize(g: Gadget | PivotGadget, max_window: int = DEFAULT_WINDOW) -> EffectSummary:
    """Recompute the effect summary from the gadget's own bytes."""
    seg = Segment(g.entry, g.window, "rx")
    got = _path_at(seg, g.entry, max_window)
    if got is None:
        raise ValueError(f"no gadget at {g.entry:#x}")
    summ = EffectSummary(got[0])
    if summ.opaque:
        raise UnsupportedInstruction(f"gadget at {g.entry:#x} has unmodeled instructions")
    return summ


# --------------------------------------------------------------------------
# census


def intended_boundaries(img: MemoryImage, sweep: str = "linear") -> set[int]:
    """Instruction start addresses of the intended disassembly."""
    out: set[int] = set()
    for seg in img.executable_segments:
        starts = [seg.base]
        if sweep == "symbols":
            starts += sorted(a for a in img.symbols.values() if seg.contains(a) and a % 2 == 0)
        elif sweep != "linear":
            raise ValueError(f"unknown sweep {sweep!r}")
        stops = sorted(set(starts)) + [seg.end]
        for lo, hi in zip(stops, stops[1:]):
            pc = lo
            while pc + 2 <= hi:
                out.add(pc)
                try:
                    pc += isa.decode(seg.data, pc - seg.base).width
                except isa.DecodeError:
                    break
    return out


@dataclass(frozen=True)
class Census:
    total: int
    unintended: int
    unintended_entries: tuple[int, ...] = ()


def census(img: MemoryImage, gadgets: list[Gadget], sweep: str = "linear") -> Census:
    bounds = intended_boundaries(img, sweep)
    odd = tuple(g.entry for g in gadgets if g.entry not in bounds)
    return Census(len(gadgets), len(odd), odd)


# --------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class GadgetRole:
    kind: str
    binding: dict = field(default_factory=dict)


def _pop_only(p: PathSummary, allow: set[str] = frozenset()) -> dict[str, int] | None:
    """Pops if every changed register other than ``allow`` is a pop."""
    pops = p.pops
    for r in p.reg_writes:
        if r in ("ra", "sp") or r in allow:
            continue
        if r not in pops:
            return None
    return {r: k for r, k in pops.items() if r != "ra" and r not in allow}


def _clean(p: PathSummary) -> bool:
    return not (p.guards or p.calls or p.mem_writes or p.mem_reads or p.opaque)


def _exit(p: PathSummary) -> dict:
    return {"a": p.ra_offset, "b": p.sp_delta,
            "pops": {r: k for r, k in p.pops.items() if r != "ra"}}


def _read_form(e: Expr) -> tuple[str, int, list[str]] | None:
    """Match ``mem64[r+d]`` or ``mem64[r+d] + x + ...`` -> (r, d, addends)."""
    addends: list[str] = []
    while isinstance(e, Op) and e.op == "add" and isinstance(e.args[1], Sym):
        addends.append(e.args[1].name)
        e = e.args[0]
    if isinstance(e, Op) and e.op == "add" and isinstance(e.args[0], Sym) \
            and isinstance(e.args[1], Load):
        addends.append(e.args[0].name)
        e = e.args[1]
    if isinstance(e, Load) and e.width == 8:
        base, d = split_offset(e.addr)
        if isinstance(base, Sym) and base.name != "sp":
            return base.name, d, addends
    return None


def _guard_precondition(g: Guard, pops: dict[str, int]) -> dict | None:
    """``pop X == mem[Y+k]`` guards can be met by choosing both values."""
    if g.cond != "eq" or g.alternate is not None:
        return None
    for lhs, rhs in ((g.lhs, g.rhs), (g.rhs, g.lhs)):
        if isinstance(lhs, Load) and isinstance(rhs, Load):
            pb, pk = split_offset(lhs.addr)
            mb, mk = split_offset(rhs.addr)
            if pb == Sym("sp") and isinstance(mb, Sym) and mb.name != "sp":
                popped = [r for r, k in pops.items() if k == pk]
                if popped:
                    return {"pop": popped[0], "pop_off": pk, "mem_reg": mb.name,
                            "mem_disp": mk}
    return None


def classify(g: Gadget | PivotGadget, img: MemoryImage | None = None) -> list[GadgetRole]:
    """Every role whose contract the gadget's summary meets."""
    p = g.summary.path
    if p.opaque:
        return []
    if isinstance(g, PivotGadget):
        ra, sp = p.regs[isa.RA], p.regs[isa.SP]
        rb, rk = split_offset(ra.addr)
        sb, sk = split_offset(sp.addr)
        return [GadgetRole("BRANCH_UNCOND", {"base": rb.name, "ra_off": rk, "sp_off": sk,
                                             "clobbers": sorted(set(p.reg_writes) - {"ra", "sp"})})]
    roles: list[GadgetRole] = []
    changed = {r: e for r, e in p.reg_writes.items() if r not in ("ra", "sp")}
    pops = {r: k for r, k in p.pops.items() if r != "ra"}

    if _clean(p):
        if not changed:
            roles.append(GadgetRole("NOP", {}))
        elif _pop_only(p) is not None:
            roles.append(GadgetRole("POP", {"pops": pops}))
        for r, e in changed.items():
            base, k = split_offset(e)
            if base == Sym(r) and k in (1, -1) and _pop_only(p, {r}) is not None:
                roles.append(GadgetRole("ADD1" if k == 1 else "SUB1",
                                        {"reg": r, "pops": _pop_only(p, {r})}))
            if base == Sym("sp") and _pop_only(p, {r}) is not None:
                roles.append(GadgetRole("MOV_SP", {"reg": r, "offset": k,
                                                   "pops": _pop_only(p, {r})}))

    if not p.calls and not p.mem_writes and not g.summary.alternates:
        for dst, e in changed.items():
            form = _read_form(e)
            if form is None:
                continue
            addr, disp, addends = form
            pre = [_guard_precondition(gd, pops) for gd in p.guards]
            if any(x is None for x in pre):
                continue
            extra = {r for r in changed if r != dst and r not in pops}
            preconds = [f"{r}=0" for r in addends]
            for gp in pre:
                cell = f"mem[{gp['mem_reg']}]" if not gp["mem_disp"] else \
                    f"mem[{gp['mem_reg']}+{gp['mem_disp']:#x}]"
                preconds += [f"{cell}=C", f"pop {gp['pop']}=C"]
            roles.append(GadgetRole("READMEM", {
                "dst": dst, "addr": addr, "disp": disp, "addends": addends,
                "guards": pre, "preconds": preconds, "pops": pops,
                "clobbers": sorted(set(changed) - {dst}),
                "derived": sorted(extra)}))

    if not p.guards and not p.calls and len(p.mem_writes) == 1 and not p.mem_reads:
        addr, val, width = p.mem_writes[0]
        base, d = split_offset(addr)
        if width == 8 and isinstance(base, Sym) and isinstance(val, Sym) \
                and base.name != "sp" and _pop_only(p) is not None:
            roles.append(GadgetRole("WRITEMEM", {"addr": base.name, "disp": d,
                                                 "value": val.name, "pops": pops}))

    if len(p.calls) == 1 and not p.guards and not p.mem_writes:
        call = p.calls[0]
        jumps = [i for i in p.instrs if i.kind == "jalr" and not isa.is_return(i)]
        if call.target == Sym("a5") and jumps:
            roles.append(GadgetRole("CALL_JALR_A5", {
                "target": "a5", "pops": pops,
                "keeps_a0": p.reg("a0") == CallResult(0, "a0")}))

    alts = g.summary.alternates
    if len(p.guards) == 1 and len(alts) == 1 and not p.calls and not p.mem_writes:
        gd = alts[0]
        tested, zero = gd.lhs, gd.rhs
        if zero != Const(0):
            tested, zero = zero, tested
        if zero == Const(0) and gd.cond in ("eq", "ne"):
            form = _read_form(tested)
            if form is not None and not form[2]:
                fall, taken = _exit(p), _exit(gd.alternate)
                # cond is what must hold to fall through
                nz, z = (fall, taken) if gd.cond == "ne" else (taken, fall)
                roles.append(GadgetRole("COND_BRANCH", {
                    "reg": form[0], "disp": form[1], "zero": z, "nonzero": nz}))
    return roles
