"""Logical units built from catalog gadgets.

Each unit is a run of frames plus the self-modifying writes it performs.
Register moves that no gadget offers are made by storing a register into
the popped-value slot of a frame that runs later.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .catalog import CatalogEntry, GadgetCatalog, IncompleteCatalog
from .chain import (NEXT, ChainFrame, ChainProgram, EntryOf, GadgetRef, Hole, Label, Region,
                    SelfModFixup, SlotValue)

ALL_REGS = frozenset(["ra", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3",
                      "a4", "a5", "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9",
                      "s10", "s11", "t3", "t4", "t5", "t6"])
CHAIN_MANAGED = frozenset(["zero", "ra", "sp", "x0", "x1", "x2"])
CALLER_SAVED = frozenset(["ra", "t0", "t1", "t2", "t3", "t4", "t5", "t6",
                          "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7"])
MIN_BUFFER = 512
DEFAULT_BUFFER = 1024
MAX_ARGS = 4


class UnknownFunction(KeyError):
    pass


class TooManyArgs(ValueError):
    pass


class _RuntimeA0:
    def __repr__(self) -> str:
        return "RUNTIME_A0"


RUNTIME_A0 = _RuntimeA0()  # call argument taken from a0 when the call starts


@dataclass
class LogicalUnit:
    frames: list[ChainFrame] = field(default_factory=list)
    fixups: list[SelfModFixup] = field(default_factory=list)
    clobbers: frozenset = frozenset()
    tail: list[ChainFrame] = field(default_factory=list)  # data placed after the program
    writes: frozenset = frozenset()  # registers the unit sets on purpose

    @property
    def preserves(self) -> frozenset:
        return ALL_REGS - self.clobbers - self.writes - {"ra"}

    def __add__(self, other: "LogicalUnit") -> "LogicalUnit":
        return LogicalUnit(self.frames + other.frames, self.fixups + other.fixups,
                           self.clobbers | other.clobbers, self.tail + other.tail,
                           self.writes | other.writes)


def seq(*units: LogicalUnit) -> LogicalUnit:
    out = LogicalUnit()
    for u in units:
        out = out + u
    return out


class Builder:
    """Emits logical units against one catalog.  Labels are unique per builder."""

    def __init__(self, cat: GadgetCatalog, buffer_bytes: int = DEFAULT_BUFFER):
        if buffer_bytes < MIN_BUFFER or buffer_bytes % 16:
            raise ValueError(f"buffer_bytes must be >= {MIN_BUFFER} and 16-aligned")
        self.cat = cat
        self.buffer_bytes = buffer_bytes
        self._n = 0

    def label(self, stem: str) -> str:
        self._n += 1
        return f"{stem}{self._n}"

    # catalog lookups ------------------------------------------------------

    @property
    def nop(self) -> CatalogEntry:
        return self.cat.first("NOP")

    @property
    def readmem(self) -> CatalogEntry:
        return self.cat.first("READMEM", dst="a0", addr="a0")

    @property
    def writemem(self) -> CatalogEntry:
        for e in self.cat.find("WRITEMEM", value="a0"):
            if e.params["addr"] != "a0":
                return e
        raise IncompleteCatalog("WRITEMEM", "value=a0 through another register")

    @property
    def add1(self) -> CatalogEntry:
        return self.cat.first("ADD1", reg="a0")

    @property
    def sub1(self) -> CatalogEntry:
        return self.cat.first("SUB1", reg="a0")

    @property
    def call_gadget(self) -> CatalogEntry:
        return self.cat.first("CALL_JALR_A5")

    @property
    def pivot(self) -> CatalogEntry:
        return self.cat.first("BRANCH_UNCOND", base="a0")

    @property
    def cond(self) -> CatalogEntry:
        return self.cat.first("COND_BRANCH", reg="a0")

    def pop_only(self, reg: str) -> CatalogEntry:
        """Cheapest POP gadget for ``reg`` (fewest words, then fewest side pops)."""
        got = self.cat.pops_for(reg)
        if not got:
            raise IncompleteCatalog("POP", f"pops {reg}")
        return min(got, key=lambda e: (len(e.pops), e.b, e.entry))

    @property
    def bias(self) -> int:
        """Displacement the read gadget adds to a0."""
        return self.readmem.int_param("disp")

    def check(self) -> None:
        """Raise IncompleteCatalog naming the first missing role."""
        for role in self.cat.missing():
            raise IncompleteCatalog(role)
        for getter in ("nop", "readmem", "writemem", "add1", "sub1", "call_gadget", "pivot",
                       "cond"):
            getattr(self, getter)
        for reg in ("a0", "a5", "s0", self.writemem.params["addr"]):
            self.pop_only(reg)
        if not self.cat.constants:
            raise IncompleteCatalog("CONST")

    # frames ------------------------------------------------------------------

    def frame(self, e: CatalogEntry, values: dict[str, SlotValue] | None = None,
              label: str | None = None, comment: str = "",
              slots: dict[int, SlotValue] | None = None) -> ChainFrame:
        ref = GadgetRef(e.entry, e.a, e.b, e.role, e.pops)
        words: list[SlotValue] = [0] * (e.b // 8)
        words[e.a // 8] = NEXT
        pops = e.pops
        for reg, v in (values or {}).items():
            words[pops[reg] // 8] = v
        for off, v in (slots or {}).items():
            words[off // 8] = v
        return ChainFrame(ref, words, label, "gadget", comment or e.role)

    def _data(self, words: list[SlotValue], label: str | None, comment: str) -> ChainFrame:
        words = list(words) + [0] * (-len(words) % 2)
        return ChainFrame(None, words, label, "data", comment)

    def _descriptor(self, target: str) -> tuple[str, ChainFrame]:
        p = self.pivot
        ra_off, sp_off = p.int_param("ra_off"), p.int_param("sp_off")
        words: list[SlotValue] = [0] * (max(ra_off, sp_off) // 8 + 1)
        words[ra_off // 8] = EntryOf(target)
        words[sp_off // 8] = Label(target)
        d = self.label("desc")
        return d, self._data(words, d, f"branch descriptor -> {target}")

    # units -------------------------------------------------------------------

    def unit_set_regs(self, values: dict[str, SlotValue], keep=frozenset(),
                      comment: str = "") -> LogicalUnit:
        """Pop every register in ``values``; never pops a register in ``keep``."""
        for r in values:
            if r in CHAIN_MANAGED:
                raise ValueError(f"{r} is managed by the chain itself")
        remaining = set(values)
        frames, clobbers = [], set()
        pops = [e for e in self.cat.entries if e.role == "POP"]
        while remaining:
            best = None
            for e in pops:
                regs = set(e.pops)
                if regs & set(keep) or not regs & remaining:
                    continue
                score = (-len(regs & remaining), e.b, len(regs), e.entry)
                if best is None or score < best[0]:
                    best = (score, e)
            if best is None:
                raise IncompleteCatalog("POP", "pops " + ",".join(sorted(remaining)))
            e = best[1]
            # registers set by an earlier frame are popped again with the same value
            mine = {r: values[r] for r in e.pops if r in values}
            frames.append(self.frame(e, mine, comment=comment or
                                     "set " + ",".join(sorted(mine))))
            clobbers |= set(e.pops) - set(mine)
            remaining -= set(mine)
        return LogicalUnit(frames, [], frozenset(clobbers), writes=frozenset(values))

    def unit_set_reg(self, reg: str, value: SlotValue) -> LogicalUnit:
        return self.unit_set_regs({reg: value})

    def unit_nop(self) -> LogicalUnit:
        return LogicalUnit([self.frame(self.nop)])

    def unit_add(self, n: int) -> LogicalUnit:
        """a0 += n using ADD1 or SUB1 frames."""
        e = self.add1 if n >= 0 else self.sub1
        return LogicalUnit([self.frame(e) for _ in range(abs(n))], writes=frozenset({"a0"}))

    def unit_read_mem(self, preconditions: bool = True) -> LogicalUnit:
        """a0 <- mem[a0 + disp].

        Without ``preconditions`` the addend registers are left as they are,
        so their values are added to the result.
        """
        rm = self.readmem
        if not self.cat.constants:
            raise IncompleteCatalog("CONST")
        c_addr, c_val = self.cat.constants[0]
        setup: dict[str, SlotValue] = {}
        if preconditions:
            for r in rm.params["addends"].split(","):
                if r != "-":
                    setup[r] = 0
        own: dict[str, SlotValue] = {}
        for g in rm.params["guards"].split("/"):
            if g == "-":
                continue
            pop, _off, mem_reg, mem_disp = g.split(":")
            setup[mem_reg] = c_addr - int(mem_disp, 0)
            own[pop] = c_val
        pre = self.unit_set_regs(setup, keep={"a0"}, comment="readmem preconditions")
        clob = set(rm.params["clobbers"].split(",")) - {"-"} | set(rm.pops)
        return pre + LogicalUnit([self.frame(rm, own)], [], frozenset(clob),
                                 writes=frozenset({"a0"}))

    def unit_write_a0(self, target: Label) -> LogicalUnit:
        """mem[target] <- a0 (target is usually a slot of a later frame)."""
        wm = self.writemem
        reg, disp = wm.params["addr"], wm.int_param("disp")
        u = self.unit_set_regs({reg: Label(target.name, target.off - disp)}, keep={"a0"},
                               comment=f"address of {target}")
        w = self.label("w")
        u = u + LogicalUnit([self.frame(wm, label=w, comment=f"store a0 -> {target}")],
                            [SelfModFixup(w, target)], frozenset(wm.pops) | {reg})
        return u

    def unit_write_const(self, target: Label, value: SlotValue) -> LogicalUnit:
        """mem[target] <- value; clobbers a0."""
        wm = self.writemem
        reg, disp = wm.params["addr"], wm.int_param("disp")
        u = self.unit_set_regs({"a0": value, reg: Label(target.name, target.off - disp)},
                               comment=f"const for {target}")
        w = self.label("w")
        return u + LogicalUnit([self.frame(wm, label=w, comment=f"store const -> {target}")],
                               [SelfModFixup(w, target)], frozenset(wm.pops) | {reg, "a0"})

    def restore_frame(self, label: str, reg: str = "a0", comment: str = "") -> ChainFrame:
        e = self.pop_only(reg)
        return self.frame(e, {reg: Hole(f"saved {reg}")}, label=label,
                          comment=comment or f"restore {reg}")

    def unit_save_restore_a0(self, body: LogicalUnit) -> LogicalUnit:
        r = self.label("restore")
        e = self.pop_only("a0")
        save = self.unit_write_a0(Label(r, e.pops["a0"]))
        tail = LogicalUnit([self.restore_frame(r)], [], frozenset(e.pops) - {"a0"})
        u = save + body + tail
        u.clobbers = u.clobbers - {"a0"}
        u.writes = u.writes - {"a0"}
        return u

    def _mov_parts(self, reg: str = "s0") -> tuple[LogicalUnit, ChainFrame]:
        s = self.label("mov")
        e = self.pop_only(reg)
        write = self.unit_write_a0(Label(s, e.pops[reg]))
        return write, self.frame(e, {reg: Hole(f"a0 moved to {reg}")}, label=s,
                                 comment=f"pop {reg} (written earlier)")

    def unit_mov_a0_to_s0(self) -> LogicalUnit:
        """s0 <- a0 through a future s0-POP frame."""
        if self.writemem.params["addr"] == "a0":
            raise IncompleteCatalog("WRITEMEM", "address register must not be a0")
        write, pop = self._mov_parts("s0")
        return write + LogicalUnit([pop], [], frozenset(pop.gadget.pops))

    def unit_store_to_a0(self, value: LogicalUnit, offset: int = 0) -> LogicalUnit:
        """mem[a0 + offset] <- (a0 after ``value`` runs); a0 is left holding the value."""
        wm = self.writemem
        reg, disp = wm.params["addr"], wm.int_param("disp")
        comp = offset - disp
        write, pop = self._mov_parts(reg)
        u = self.unit_add(comp) + write + self.unit_add(-comp) + value
        u = u + LogicalUnit([pop, self.frame(wm, comment="store value")], [],
                            frozenset(wm.pops) | set(pop.gadget.pops) | {reg, "a0"})
        return u

    def unit_call(self, fn: str, args: list | tuple = (), want_ret: bool = False,
                  buffer_bytes: int | None = None) -> LogicalUnit:
        """Call a library function through the jalr-a5 gadget.

        ``args`` are constants, labels or RUNTIME_A0 (only as the first
        argument).  The frame the pivot lands on sits in the callee's stack
        area, so every one of its words is written before each call.
        """
        if fn not in self.cat.functions:
            raise UnknownFunction(fn)
        if len(args) > MAX_ARGS:
            raise TooManyArgs(f"{len(args)} arguments (at most {MAX_ARGS})")
        if any(a is RUNTIME_A0 for a in args[1:]):
            raise ValueError("only the first argument can come from a0")
        buf = self.buffer_bytes if buffer_bytes is None else buffer_bytes
        if buf < MIN_BUFFER or buf % 16:
            raise ValueError(f"buffer_bytes must be >= {MIN_BUFFER} and 16-aligned")
        dyn_e, call_e, piv = self.pop_only("a0"), self.call_gadget, self.pivot
        dyn, call = self.label("dyn"), self.label("call")
        argv = {f"a{i}": v for i, v in enumerate(args)}
        contents: list[SlotValue] = [0] * (dyn_e.b // 8)
        contents[dyn_e.a // 8] = EntryOf(call)
        for r, off in dyn_e.pops.items():
            contents[off // 8] = argv.get(r, 0)
        units = []
        if args and args[0] is RUNTIME_A0:
            units.append(self.unit_write_a0(Label(dyn, dyn_e.pops["a0"])))
        for k, v in enumerate(contents):
            if v is not RUNTIME_A0:
                units.append(self.unit_write_const(Label(dyn, 8 * k), v))
        regs: dict[str, SlotValue] = {"a5": self.cat.functions[fn]}
        regs.update({r: v for r, v in argv.items() if r != "a0" and r not in dyn_e.pops})
        d, desc = self._descriptor(dyn)
        regs["a0"] = Label(d)
        units.append(self.unit_set_regs(regs, comment=f"args for {fn}"))
        pivot = ChainFrame(GadgetRef(piv.entry, 0, 0, "BRANCH_UNCOND"), [], self.label("pivot"),
                           "pivot", f"jump over safety buffer to {dyn}", (dyn,), False)
        frames = [pivot,
                  self._data([0] * (buf // 8), self.label("buffer"), "safety buffer"),
                  self.frame(dyn_e, label=dyn, comment=f"built at run time for {fn}",
                             slots={8 * k: Hole("call frame") for k in range(dyn_e.b // 8)}),
                  self.frame(call_e, label=call, comment=f"call {fn}")]
        # a0 is always written: the return value, or garbage when unwanted
        clob = set(CALLER_SAVED) | set(call_e.pops) | set(dyn_e.pops)
        clob |= set(piv.params.get("clobbers", "-").split(",")) - {"-"}
        return seq(*units) + LogicalUnit(frames, [], frozenset(clob), [desc])

    def unit_branch(self, target: str) -> LogicalUnit:
        d, desc = self._descriptor(target)
        piv = self.pivot
        u = self.unit_set_regs({"a0": Label(d)}, comment=f"descriptor for {target}")
        pivot = ChainFrame(GadgetRef(piv.entry, 0, 0, "BRANCH_UNCOND"), [], self.label("br"),
                           "pivot", f"branch to {target}", (target,), False)
        return u + LogicalUnit([pivot], [], frozenset({"a0"}), [desc])

    def unit_cond_branch(self, on_zero: str, on_nonzero: str | None = None) -> LogicalUnit:
        """Branch on mem[a0 + disp] == 0; nonzero falls through unless ``on_nonzero``."""
        c = self.cond
        d, desc = self._descriptor(on_zero)
        slots: dict[int, SlotValue] = {c.int_param("z_a"): self.pivot.entry}
        for r, off in c.regmap("z_pops").items():
            slots[off] = Label(d) if r == "a0" else 0
        if "a0" not in c.regmap("z_pops"):
            raise IncompleteCatalog("COND_BRANCH", "zero arm must pop a0")
        slots[c.int_param("nz_a")] = NEXT
        f = self.frame(c, slots=slots, comment=f"if zero -> {on_zero}")
        f.targets = (on_zero,)
        clob = set(c.regmap("z_pops")) | set(c.regmap("nz_pops")) | {"a0", "a5"}
        u = LogicalUnit([f], [], frozenset(clob), [desc])
        if on_nonzero is not None:
            u = u + self.unit_branch(on_nonzero)
        return u


def link(units: list[LogicalUnit] | LogicalUnit, base_sp: int = 0x40000000,
         regions: list[Region] | None = None) -> ChainProgram:
    """Concatenate units, then their tails, into one program."""
    u = units if isinstance(units, LogicalUnit) else seq(*units)
    frames = list(u.frames)
    # the final gadget frame has nothing to return into
    for f in reversed(frames):
        if f.kind == "gadget":
            if f.gadget is not None and f.slots and f.slots[f.gadget.a // 8] is NEXT:
                f.slots[f.gadget.a // 8] = Hole("end of chain")
            break
    return ChainProgram(frames + list(u.tail), base_sp, list(regions or []), list(u.fixups))
