"""Chain programs: gadget frames with labeled slots, resolution, binary format.

A frame is the block of stack words one gadget consumes.  Slots hold
constants, label references, the entry of whichever gadget runs next, or
holes that an earlier gadget fills in at run time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Union

MAGIC = b"RVROP1\0\0"
VERSION = 1
SENTINEL = 0xDEADDEADDEADDEAD
_HEADER = struct.Struct("<8sIQQQ")
_REGION = struct.Struct("<QQ")
M64 = (1 << 64) - 1


class ChainError(ValueError):
    pass


class UnresolvedLabel(ChainError):
    pass


class MisalignedBase(ChainError):
    pass


class RegionOverlap(ChainError):
    pass


class UnresolvedProgram(ChainError):
    pass


class BadChainFile(ChainError):
    pass


@dataclass(frozen=True)
class Label:
    """Address of a frame or region label plus a byte offset."""

    name: str
    off: int = 0

    def __str__(self) -> str:
        return self.name if not self.off else f"{self.name}{self.off:+#x}"


@dataclass(frozen=True)
class EntryOf:
    """Gadget entry of the frame carrying ``name``."""

    name: str

    def __str__(self) -> str:
        return f"entry({self.name})"


@dataclass(frozen=True)
class _Next:
    def __str__(self) -> str:
        return "NEXT"


NEXT = _Next()


@dataclass(frozen=True)
class Hole:
    """A word written by the chain itself before it is consumed."""

    note: str = ""

    def __str__(self) -> str:
        return "HOLE"


SlotValue = Union[int, Label, EntryOf, _Next, Hole]


@dataclass(frozen=True)
class GadgetRef:
    entry: int
    a: int
    b: int
    role: str
    pops: dict = field(default_factory=dict, hash=False, compare=False)  # reg -> offset


@dataclass
class ChainFrame:
    """``kind`` is "gadget", "pivot" (a gadget that consumes no slots) or "data"."""

    gadget: GadgetRef | None
    slots: list[SlotValue]
    label: str | None = None
    kind: str = "gadget"
    comment: str = ""
    targets: tuple[str, ...] = ()  # labels this frame may transfer control to
    falls_through: bool = True

    @property
    def size(self) -> int:
        return 8 * len(self.slots)


@dataclass(frozen=True)
class SelfModFixup:
    source: str  # label of the frame whose gadget performs the write
    target: Label
    width: int = 8


@dataclass(frozen=True)
class Region:
    label: str
    size: int
    addr: int | None = None  # placed after the frames when None


@dataclass
class ChainProgram:
    frames: list[ChainFrame] = field(default_factory=list)
    base_sp: int = 0x40000000
    regions: list[Region] = field(default_factory=list)
    fixups: list[SelfModFixup] = field(default_factory=list)


@dataclass(frozen=True)
class ResolvedChain:
    program: ChainProgram
    bases: tuple[int, ...]
    labels: dict
    words: tuple[int, ...]
    regions: tuple[tuple[int, int], ...]
    entry_gadget: int

    @property
    def base_sp(self) -> int:
        return self.program.base_sp

    def frame_at(self, addr: int) -> int | None:
        for i, (f, base) in enumerate(zip(self.program.frames, self.bases)):
            if base <= addr < base + f.size:
                return i
        return None


@dataclass(frozen=True)
class ChainBinary:
    base_sp: int
    entry_gadget: int
    words: tuple[int, ...]
    regions: tuple[tuple[int, int], ...]


def _next_entry(frames: list[ChainFrame], i: int) -> int:
    for f in frames[i + 1:]:
        if f.kind == "data":
            break
        if f.gadget is not None:
            return f.gadget.entry
    raise UnresolvedLabel(f"frame {i} uses NEXT but no gadget frame follows it")


def resolve(prog: ChainProgram) -> ResolvedChain:
    if prog.base_sp % 16:
        raise MisalignedBase(f"base_sp {prog.base_sp:#x} is not 16-aligned")
    labels: dict[str, int] = {}
    entries: dict[str, int] = {}
    bases = []
    addr = prog.base_sp
    for i, f in enumerate(prog.frames):
        if f.size % 16:
            raise MisalignedBase(f"frame {i} ({f.comment}) has size {f.size:#x}")
        if f.gadget is not None and f.kind == "gadget" and f.size != f.gadget.b:
            raise ChainError(f"frame {i} has {len(f.slots)} slots for b={f.gadget.b:#x}")
        bases.append(addr)
        if f.label is not None:
            if f.label in labels:
                raise ChainError(f"duplicate label {f.label!r}")
            labels[f.label] = addr
            if f.gadget is not None:
                entries[f.label] = f.gadget.entry
        addr += f.size
    end = addr
    placed = []
    cursor = end
    for r in prog.regions:
        if r.label in labels:
            raise ChainError(f"duplicate label {r.label!r}")
        at = r.addr
        if at is None:
            at = cursor
            cursor = (cursor + r.size + 15) & ~15
        placed.append((at, r.size))
        labels[r.label] = at
    spans = [(prog.base_sp, end)] + [(a, a + s) for a, s in placed]
    spans = sorted(s for s in spans if s[1] > s[0])
    for (a0, a1), (b0, _b1) in zip(spans, spans[1:]):
        if b0 < a1:
            raise RegionOverlap(f"regions overlap at {b0:#x}")

    def value(v: SlotValue, i: int) -> int:
        if isinstance(v, int):
            return v & M64
        if isinstance(v, Hole):
            return SENTINEL
        if isinstance(v, _Next):
            return _next_entry(prog.frames, i)
        if isinstance(v, Label):
            if v.name not in labels:
                raise UnresolvedLabel(f"undefined label {v.name!r}")
            return (labels[v.name] + v.off) & M64
        if isinstance(v, EntryOf):
            if v.name not in entries:
                raise UnresolvedLabel(f"no gadget frame labeled {v.name!r}")
            return entries[v.name]
        raise ChainError(f"bad slot value {v!r}")

    words = tuple(value(v, i) for i, f in enumerate(prog.frames) for v in f.slots)
    for fx in prog.fixups:
        if fx.target.name not in labels:
            raise UnresolvedLabel(f"fixup target {fx.target.name!r} undefined")
        t = labels[fx.target.name] + fx.target.off
        if not prog.base_sp <= t < end:
            raise ChainError(f"fixup target {fx.target} is outside the frames")
    first = next((f.gadget.entry for f in prog.frames if f.gadget is not None), 0)
    return ResolvedChain(prog, tuple(bases), labels, words, tuple(placed), first)


def serialize(chain: ResolvedChain | ChainProgram) -> bytes:
    if isinstance(chain, ChainProgram):
        raise UnresolvedProgram("resolve the program before serializing it")
    out = bytearray(_HEADER.pack(MAGIC, VERSION, chain.base_sp, len(chain.words),
                                 chain.entry_gadget))
    out += struct.pack(f"<{len(chain.words)}Q", *chain.words)
    out += struct.pack("<I", len(chain.regions))
    for addr, size in chain.regions:
        out += _REGION.pack(addr, size)
    return bytes(out)


def to_binary(chain: ResolvedChain) -> ChainBinary:
    return ChainBinary(chain.base_sp, chain.entry_gadget, chain.words, chain.regions)


def deserialize(data: bytes) -> ChainBinary:
    if len(data) < _HEADER.size:
        raise BadChainFile("truncated header")
    magic, version, base_sp, count, entry = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadChainFile("bad magic")
    if version != VERSION:
        raise BadChainFile(f"unsupported version {version}")
    off = _HEADER.size
    if len(data) < off + 8 * count + 4:
        raise BadChainFile("truncated word list")
    words = struct.unpack_from(f"<{count}Q", data, off)
    off += 8 * count
    (nreg,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) != off + _REGION.size * nreg:
        raise BadChainFile("bad region table length")
    regions = tuple(_REGION.unpack_from(data, off + i * _REGION.size) for i in range(nreg))
    return ChainBinary(base_sp, entry, tuple(words), regions)


# --------------------------------------------------------------------------
# listing


def listing(chain: ChainProgram | ResolvedChain) -> str:
    resolved = chain if isinstance(chain, ResolvedChain) else None
    prog = chain.program if resolved else chain
    targets: set[tuple[str, int]] = {(fx.target.name, fx.target.off) for fx in prog.fixups}
    lines = []
    for i, f in enumerate(prog.frames):
        name = f.label or f"frame{i}"
        if f.gadget is not None:
            head = f"{f.gadget.role} @{f.gadget.entry:#x} a={f.gadget.a:#x} b={f.gadget.b:#x}"
        else:
            head = f.kind.upper()
        where = f" at {resolved.bases[i]:#x}" if resolved else ""
        lines.append(f"# frame {i} {name}{where}: {head}"
                     + (f" ; {f.comment}" if f.comment else ""))
        by_off = {off: r for r, off in (f.gadget.pops.items() if f.gadget else [])}
        for k, v in enumerate(f.slots):
            off = 8 * k
            if resolved:
                base = resolved.bases[i]
                words_before = sum(len(g.slots) for g in prog.frames[:i])
                addr = f"{base + off:#x}"
                shown = f"{resolved.words[words_before + k]:#x}"
                if isinstance(v, Hole):
                    shown = "HOLE"
            else:
                addr = f"{name}+{off:#x}"
                shown = f"{v:#x}" if isinstance(v, int) else str(v)
            notes = []
            if f.gadget is not None and f.kind == "gadget" and off == f.gadget.a:
                notes.append("ra")
            elif off in by_off:
                notes.append(f"pop {by_off[off]}")
            if f.label is not None and (f.label, off) in targets:
                notes.append("self-mod target")
            if isinstance(v, Hole) and v.note:
                notes.append(v.note)
            lines.append(f"{addr}: {shown}" + (f" ; {', '.join(notes)}" if notes else ""))
    if isinstance(chain, ResolvedChain):
        for r, (addr, size) in zip(prog.regions, resolved.regions):
            lines.append(f"# region {r.label} at {addr:#x} size {size:#x}")
    else:
        for r in prog.regions:
            lines.append(f"# region {r.label} size {r.size:#x}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# static checks


def successors(prog: ChainProgram) -> list[list[int]]:
    """Control-flow successors of each executable frame, by frame index."""
    index = {f.label: i for i, f in enumerate(prog.frames) if f.label is not None}
    out: list[list[int]] = []
    for i, f in enumerate(prog.frames):
        nxt: list[int] = []
        if f.kind != "data":
            if f.falls_through and i + 1 < len(prog.frames) and \
                    prog.frames[i + 1].kind != "data":
                nxt.append(i + 1)
            for t in f.targets:
                if t not in index:
                    raise UnresolvedLabel(f"branch target {t!r} undefined")
                nxt.append(index[t])
        out.append(nxt)
    return out


def _reachable(succ: list[list[int]], starts: list[int], removed: set[int]) -> set[int]:
    seen: set[int] = set()
    todo = [s for s in starts if s not in removed]
    while todo:
        n = todo.pop()
        if n in seen:
            continue
        seen.add(n)
        todo.extend(m for m in succ[n] if m not in removed and m not in seen)
    return seen


def check_selfmod_order(prog: ChainProgram) -> list[str]:
    """Problems with self-modifying writes; empty when every write lands first.

    With all writers of a target frame removed from the control-flow graph,
    the target must be unreachable both from the chain entry and from its
    own successors.  So every path into the target, including each trip
    round a loop, passes through a writer.
    """
    succ = successors(prog)
    index = {f.label: i for i, f in enumerate(prog.frames) if f.label is not None}
    writers: dict[int, set[int]] = {}
    for fx in prog.fixups:
        if fx.source not in index or fx.target.name not in index:
            return [f"fixup {fx} refers to an unknown label"]
        t = index[fx.target.name]
        off = fx.target.off
        while off >= prog.frames[t].size and t + 1 < len(prog.frames):
            off -= prog.frames[t].size
            t += 1
        writers.setdefault(t, set()).add(index[fx.source])
    problems = []
    for t, ws in sorted(writers.items()):
        if t in ws:
            problems.append(f"frame {t} writes into itself")
            continue
        if t in _reachable(succ, [0], ws):
            problems.append(f"frame {t} reachable from entry without a write")
        if t in _reachable(succ, succ[t], ws):
            problems.append(f"frame {t} re-entered without a fresh write")
    return problems
