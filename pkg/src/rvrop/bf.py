"""Brainfuck front end: parser, reference interpreter and chain compiler.

Cells are 64 bits wide and wrap modulo 2**64.  ``,`` stores 0 at end of
input.  The compiled chain keeps the cursor in a0, offset by the read
gadget's displacement so that ``mem[a0 + disp]`` is the current cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

from .builder import RUNTIME_A0, Builder, LogicalUnit, link, seq
from .catalog import GadgetCatalog
from .chain import ChainProgram, Label, Region, ResolvedChain, resolve

COMMANDS = "><+-.,[]"
KINDS = {">": "right", "<": "left", "+": "inc", "-": "dec", ".": "out", ",": "in",
         "[": "loop-open", "]": "loop-close"}
M64 = (1 << 64) - 1
EXAMPLES = ("hello", "sierpinski", "squares", "sort")


class UnbalancedBracket(ValueError):
    def __init__(self, position: int, char: str):
        super().__init__(f"unbalanced '{char}' at position {position}")
        self.position = position


class ChainTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class BfOp:
    kind: str
    match: int | None = None  # index of the partner bracket
    pos: int = 0  # offset in the source text


@dataclass(frozen=True)
class BfProgram:
    ops: tuple[BfOp, ...]

    def __len__(self) -> int:
        return len(self.ops)


def parse(src: str) -> BfProgram:
    ops: list[BfOp] = []
    stack: list[int] = []
    match: dict[int, int] = {}
    for pos, ch in enumerate(src):
        if ch not in COMMANDS:
            continue
        i = len(ops)
        if ch == "[":
            stack.append(i)
        elif ch == "]":
            if not stack:
                raise UnbalancedBracket(pos, ch)
            j = stack.pop()
            match[i], match[j] = j, i
        ops.append(BfOp(KINDS[ch], None, pos))
    if stack:
        raise UnbalancedBracket(ops[stack[-1]].pos, "[")
    return BfProgram(tuple(BfOp(o.kind, match.get(i), o.pos) for i, o in enumerate(ops)))


def example_source(name: str) -> str:
    """Text of one of the bundled example programs."""
    if name not in EXAMPLES:
        raise KeyError(f"no example named {name!r}; have {', '.join(EXAMPLES)}")
    return (resources.files("rvrop") / "programs" / f"{name}.b").read_text()


# --------------------------------------------------------------------------
# reference interpreter


class StepLimit(RuntimeError):
    pass


@dataclass
class InterpResult:
    output: bytes
    steps: int
    cursor_trace: list[int] = field(default_factory=list)  # cursor before each op, if asked


def interpret(prog: BfProgram | str, stdin: bytes = b"", max_steps: int = 50_000_000,
              record_cursor: bool = False) -> InterpResult:
    if isinstance(prog, str):
        prog = parse(prog)
    ops = [o.kind for o in prog.ops]
    match = [o.match for o in prog.ops]
    tape: dict[int, int] = {}
    p = pc = steps = inp = 0
    out = bytearray()
    trace: list[int] = []
    n = len(ops)
    while pc < n:
        if steps >= max_steps:
            raise StepLimit(f"more than {max_steps} steps")
        steps += 1
        if record_cursor:
            trace.append(p)
        k = ops[pc]
        if k == "inc":
            tape[p] = (tape.get(p, 0) + 1) & M64
        elif k == "dec":
            tape[p] = (tape.get(p, 0) - 1) & M64
        elif k == "right":
            p += 1
        elif k == "left":
            p -= 1
        elif k == "out":
            out.append(tape.get(p, 0) & 0xFF)
        elif k == "in":
            tape[p] = stdin[inp] if inp < len(stdin) else 0
            inp += 1
        elif k == "loop-open":
            if not tape.get(p, 0):
                pc = match[pc]
        elif not (k != "loop-close" or not tape.get(p, 0)):
            pc = match[pc]
        pc += 1
    return InterpResult(bytes(out), steps, trace)


# --------------------------------------------------------------------------
# compiler


@dataclass(frozen=True)
class TapeConfig:
    cell_count: int = 4096
    start_index: int | None = None  # defaults to the middle cell
    cell_width: int = 8

    def __post_init__(self):
        if self.cell_width != 8:
            raise ValueError("cells are 64 bits wide")
        if self.cell_count < 1:
            raise ValueError("tape needs at least one cell")

    @property
    def start(self) -> int:
        return self.cell_count // 2 if self.start_index is None else self.start_index


@dataclass(frozen=True)
class CompileConfig:
    base_sp: int = 0x40000000
    buffer_bytes: int = 1024
    max_chain_bytes: int = 256 << 20


@dataclass
class CompiledChain:
    program: ChainProgram
    resolved: ResolvedChain
    op_frames: list[int]  # index of the first frame of each op
    tape_addr: int
    bias: int
    cond_branches: int = 0
    restore_after_cond: list[tuple[int, int]] = field(default_factory=list)

    def cell_addr(self, index: int, tape: TapeConfig) -> int:
        return self.tape_addr + 8 * index


def compile_program(prog: BfProgram | str, cat: GadgetCatalog, tape: TapeConfig = TapeConfig(),
                    config: CompileConfig = CompileConfig()) -> CompiledChain:
    if isinstance(prog, str):
        prog = parse(prog)
    b = Builder(cat, config.buffer_bytes)
    b.check()
    bias = b.bias
    cond_adj = bias - b.cond.int_param("disp")

    def cell_update(step: int) -> LogicalUnit:
        return b.unit_save_restore_a0(
            b.unit_store_to_a0(b.unit_read_mem() + b.unit_add(step), offset=bias))

    pieces: list[LogicalUnit] = []
    op_starts: list[int] = []
    nframes = 0

    def emit(u: LogicalUnit) -> None:
        nonlocal nframes
        pieces.append(u)
        nframes += len(u.frames)

    emit(b.unit_nop())  # frame 0: the boot code only simulates this one
    emit(b.unit_set_reg("a0", Label("tape", 8 * tape.start - bias)))
    loops: dict[int, tuple[str, str]] = {}
    conds = 0
    after_cond: list[tuple[str, str]] = []
    for i, op in enumerate(prog.ops):
        op_starts.append(nframes)
        k = op.kind
        if k == "right":
            emit(b.unit_add(8))
        elif k == "left":
            emit(b.unit_add(-8))
        elif k == "inc":
            emit(cell_update(1))
        elif k == "dec":
            emit(cell_update(-1))
        elif k == "out":
            emit(b.unit_save_restore_a0(
                b.unit_read_mem() + b.unit_call("putchar", [RUNTIME_A0])))
        elif k == "in":
            emit(_read_input(b, bias, cond_adj, cell_update))
            conds += 1
        elif k == "loop-open":
            ro, rz, rn = b.label("loop"), b.label("zero"), b.label("nonzero")
            loops[i] = (ro, rz)
            a0 = b.pop_only("a0").pops["a0"]
            emit(seq(b.unit_write_a0(Label(ro, a0)),
                     LogicalUnit([b.restore_frame(ro, comment=f"loop head, op {i}")]),
                     b.unit_write_a0(Label(rz, a0)),
                     b.unit_write_a0(Label(rn, a0)),
                     b.unit_add(cond_adj),
                     b.unit_cond_branch(rz),
                     LogicalUnit([b.restore_frame(rn, comment="cell nonzero")])))
            conds += 1
            after_cond.append((rz, rn))
        elif k == "loop-close":
            ro, rz = loops[op.match]
            a0 = b.pop_only("a0").pops["a0"]
            emit(seq(b.unit_write_a0(Label(ro, a0)),
                     b.unit_branch(ro),
                     LogicalUnit([b.restore_frame(rz, comment=f"after loop, op {i}")])))
    op_starts.append(nframes)
    emit(b.unit_call("exit", [0]))

    regions = [Region("tape", 8 * tape.cell_count)]
    program = link(seq(*pieces), config.base_sp, regions)
    size = sum(f.size for f in program.frames)
    if size > config.max_chain_bytes:
        raise ChainTooLarge(f"chain needs {size} bytes (limit {config.max_chain_bytes})")
    resolved = resolve(program)
    index = {f.label: n for n, f in enumerate(program.frames) if f.label}
    return CompiledChain(program, resolved, op_starts, resolved.labels["tape"], bias, conds,
                         [(index[z], index[n]) for z, n in after_cond])


def _read_input(b: Builder, bias: int, cond_adj: int, cell_update) -> LogicalUnit:
    """Cell <- getchar(), or 0 at end of input.

    getchar gives -1 at EOF, so the cell first receives the result plus one
    and is zero exactly at EOF.  Otherwise one is taken off again.
    """
    wm = b.writemem
    reg, disp = wm.params["addr"], wm.int_param("disp")
    comp = bias - disp
    a0 = b.pop_only("a0").pops["a0"]
    r1, rz, rn = b.label("in"), b.label("eof"), b.label("byte")
    write_addr, pop_addr = b._mov_parts(reg)
    return seq(
        b.unit_add(comp), write_addr, b.unit_add(-comp),
        b.unit_write_a0(Label(r1, a0)),
        b.unit_write_a0(Label(rz, a0)),
        b.unit_write_a0(Label(rn, a0)),
        b.unit_call("getchar", [], want_ret=True),
        b.unit_add(1),
        LogicalUnit([pop_addr, b.frame(wm, comment="store getchar()+1")]),
        LogicalUnit([b.restore_frame(r1)]),
        b.unit_add(cond_adj),
        b.unit_cond_branch(rz),
        LogicalUnit([b.restore_frame(rn, comment="got a byte")]),
        cell_update(-1),
        LogicalUnit([b.restore_frame(rz, comment="input done")]),
    )
