"""Shared test helpers: concrete gadget runs and small chain runners."""

from __future__ import annotations

import random
from dataclasses import dataclass

from rvrop import emulator, isa, symbolic
from rvrop.scanner import Guard, PathSummary
from rvrop.symbolic import Env, Load, Sym, evaluate

M64 = (1 << 64) - 1
RAM = 0x40000000
RAM_SIZE = 0x100000
STACK = RAM + 0x80000
STOP = 0x7777_0000  # unmapped; the run ends when pc reaches it
PAGE = 0x1000


def _addr_exprs(p: PathSummary):
    out = [a for a, _w in p.mem_reads] + [a for a, _v, _w in p.mem_writes]
    for e in p.regs:
        if isinstance(e, Load):
            out.append(e.addr)
    for g in p.guards:
        for side in (g.lhs, g.rhs):
            if isinstance(side, Load):
                out.append(side.addr)
    return out


def _base_regs(p: PathSummary) -> set[str]:
    regs: set[str] = set()
    for a in _addr_exprs(p):
        regs |= symbolic.free_regs(a)
    return regs - {"sp", "zero"}


@dataclass
class ConcreteRun:
    regs: list[int]
    initial: dict[str, int]
    memory: dict[int, int]  # initial 8-byte words written before the run
    machine: emulator.Machine
    steps: int


def random_state(rng: random.Random, p: PathSummary) -> tuple[dict[str, int], dict[int, int]]:
    """Registers and memory words for one concrete run of ``p``.

    Address registers get disjoint pages so that distinct bases never alias,
    which the summaries assume.
    """
    regs = {isa.reg_name(i): rng.getrandbits(64) for i in range(32)}
    regs["zero"] = 0
    regs["sp"] = STACK + 16 * rng.randrange(0, 64)
    for k, r in enumerate(sorted(_base_regs(p))):
        regs[r] = RAM + PAGE * (k + 1) + 8 * rng.randrange(32, PAGE // 8 - 32)
    mem: dict[int, int] = {}
    for base in [regs["sp"]] + [regs[r] for r in _base_regs(p)]:
        for off in range(-0x100, 0x100, 8):
            mem[base + off] = rng.getrandbits(64)
    return regs, mem


def _env(regs: dict[str, int], mem: dict[int, int]) -> Env:
    def load(addr, width, signed):
        word = mem.get(addr & ~7, 0)
        v = (word >> (8 * (addr & 7))) & ((1 << (8 * width)) - 1)
        if signed and v >> (8 * width - 1):
            v -= 1 << (8 * width)
        return v & M64
    return Env(regs, load)


def _steer(g: Guard, regs, mem, take: bool, rng: random.Random) -> None:
    """Adjust the state so that the branch behind ``g`` goes the asked way."""
    env = _env(regs, mem)
    want_equal = (g.cond == "eq") != take  # fall-through keeps cond; taken negates
    if g.cond not in ("eq", "ne"):
        return
    if want_equal:
        value = evaluate(g.rhs, env)
        if isinstance(g.lhs, Load):
            mem[evaluate(g.lhs.addr, env)] = value
        elif isinstance(g.lhs, Sym):
            regs[g.lhs.name] = value
    else:
        value = (evaluate(g.rhs, env) + 1 + rng.getrandbits(8)) & M64
        if isinstance(g.lhs, Load):
            mem[evaluate(g.lhs.addr, env)] = value
        elif isinstance(g.lhs, Sym):
            regs[g.lhs.name] = value


def guards_hold(p: PathSummary, regs, mem) -> bool:
    env = _env(regs, mem)
    return all(symbolic.CONDS[g.cond](evaluate(g.lhs, env), evaluate(g.rhs, env))
               for g in p.guards)


def run_concrete(img, entry: int, p: PathSummary, regs: dict[str, int],
                 mem: dict[int, int], max_steps: int = 64) -> ConcreteRun:
    """Execute from ``entry`` until the return lands; ra's slot holds STOP."""
    env = _env(regs, mem)
    ra = p.regs[isa.RA]
    if isinstance(ra, Load):
        mem[evaluate(ra.addr, env)] = STOP
    m = emulator.Machine(img, RAM, RAM_SIZE, host={}, strict=False)
    for addr, word in mem.items():
        m.mem.store(addr, 8, word)
    for name, v in regs.items():
        m.set_reg(name, v)
    m.state.pc = entry
    steps = 0
    while m.state.pc != STOP:
        emulator.step(m)
        steps += 1
        if steps > max_steps:
            raise AssertionError(f"gadget at {entry:#x} did not return")
    return ConcreteRun(list(m.regs), dict(regs), dict(mem), m, steps)


def predicted(p: PathSummary, run: ConcreteRun) -> list[int]:
    env = _env(run.initial, run.memory)
    if p.calls:
        env.call_results = [{isa.reg_name(i): evaluate(e, env) for i, e in enumerate(c.before)}
                            for c in p.calls]
    return [evaluate(e, env) for e in p.regs]


def check_fidelity(img, entry: int, p: PathSummary, n: int, seed: int,
                   take_alternate: Guard | None = None) -> int:
    """Run ``n`` guard-satisfying random states; return how many matched.

    With ``take_alternate`` the state is steered down that guard's taken
    branch and compared with its alternate summary instead.
    """
    rng = random.Random(seed)
    path = take_alternate.alternate if take_alternate is not None else p
    stub = img.symbols.get("putchar")
    matched = 0
    tries = 0
    while matched < n:
        tries += 1
        if tries > 3 * n:
            raise AssertionError(f"could not satisfy the guards at {entry:#x}")
        regs, mem = random_state(rng, path)
        if p.calls or path.calls:
            regs["a5"] = stub  # the callee returns without touching registers
        for g in p.guards:
            _steer(g, regs, mem, g is take_alternate, rng)
        if not guards_hold(path, regs, mem):
            continue
        run = run_concrete(img, entry, path, regs, mem)
        want = predicted(path, run)
        assert run.regs == want, _diff(entry, run.regs, want)
        for addr_e, val_e, width in path.mem_writes:
            env = _env(run.initial, run.memory)
            addr = evaluate(addr_e, env)
            got = run.machine.mem.load(addr, width)
            assert got == evaluate(val_e, env) & ((1 << (8 * width)) - 1)
        matched += 1
    return matched


def _diff(entry: int, got: list[int], want: list[int]) -> str:
    bad = [f"{isa.reg_name(i)}: got {g:#x} want {w:#x}"
           for i, (g, w) in enumerate(zip(got, want)) if g != w]
    return f"gadget {entry:#x}: " + "; ".join(bad)


# --------------------------------------------------------------------------
# running built units


@dataclass
class UnitRun:
    machine: emulator.Machine
    resolved: object
    before: dict[str, int]
    ended: bool  # reached the end-of-chain sentinel
    trap: emulator.Trap | None
    trace: list
    ram_before: bytes
    scratch: int = 0

    def reg(self, name: str) -> int:
        return self.machine.reg(name)

    def load(self, addr: int) -> int:
        return self.machine.mem.load(addr, 8)


def run_units(img, units, regs: dict[str, int] | None = None,
              words: dict[str, int] | None = None, stdin: bytes = b"",
              hostile_bytes: int = 0, scratch: int = 4096, trace: bool = False,
              max_steps: int = 200_000) -> UnitRun:
    """Link ``units`` and run them from the given register state.

    ``words`` maps ``"scratch+off"`` style keys (``"scratch+8"``) to values
    placed in a scratch region before the run.  The chain ends when control
    reaches the sentinel left in the last frame's ra slot.
    """
    from rvrop import builder, chain

    prog = builder.link(units, regions=[chain.Region("scratch", scratch)])
    r = chain.resolve(prog)
    lo, size = emulator.chain_ram(chain.to_binary(r))
    m = emulator.Machine(img, lo, size, stdin, strict=True, hostile_bytes=hostile_bytes)
    m.mem.write(r.base_sp, b"".join(w.to_bytes(8, "little") for w in r.words))
    base = r.labels["scratch"]
    for key, v in (words or {}).items():
        off = int(key.split("+")[1], 0) if "+" in key else 0
        m.mem.store(base + off, 8, v)
    for name, v in (regs or {}).items():
        if isinstance(v, tuple):  # (label, offset)
            v = r.labels[v[0]] + v[1]
        m.set_reg(name, v)
    before = {isa.reg_name(i): m.regs[i] for i in range(32)}
    m.set_reg("sp", r.base_sp)
    m.state.pc = r.entry_gadget
    ram_before = bytes(m.mem.ram)
    res = m.run(max_steps, "full" if trace else "off")
    ended = res.trap is not None and res.trap.pc == 0xDEADDEADDEADDEAD & ~1  # jalr clears bit 0
    trap = None if ended else res.trap
    if res.step_limit:
        raise AssertionError("unit did not finish")
    return UnitRun(m, r, before, ended, trap, res.trace or [], ram_before, base)


def run_bf(img, cat, src: str, stdin: bytes = b"", trace: str = "off",
           tape=None, max_steps: int = 200_000_000):
    """Compile, serialize and boot a Brainfuck program; returns (compiled, bytes, result)."""
    from rvrop import bf, chain

    cc = bf.compile_program(src, cat, tape or bf.TapeConfig())
    data = chain.serialize(cc.resolved)
    res = emulator.boot(img, data, stdin, emulator.BootConfig(max_steps=max_steps, trace=trace))
    return cc, data, res


def random_bf(rng: random.Random, size: int = 30, depth: int = 2) -> str:
    """A small random program; loops always decrement their own cell."""
    out = []
    while len(out) < size:
        r = rng.random()
        if r < 0.12 and depth:
            out.append("[" + random_bf(rng, rng.randrange(2, 8), depth - 1) + "-]")
        else:
            out.append(rng.choice("+++--><.,"))
    return "".join(out)
