"""Synthetic gadget image: a small RV64GC text segment with planted gadgets.

The manifest produced alongside the image lists every chainable entry the
planted code contains (suffixes included) with hand-derived ``a``/``b``
values and roles.  It is the ground truth the scanner is tested against.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import isa
from .image import MemoryImage, Segment

DEFAULT_TEXT_BASE = 0x10000
DEFAULT_RODATA_BASE = 0x20000
DEFAULT_CONST = 0x5A5AC0DE5A5AC0DE


@dataclass(frozen=True)
class PlantedEntry:
    label: str
    entry: int
    a: int | None  # None for non-chainable entries (the pivot)
    b: int | None
    roles: tuple[str, ...]
    unintended: bool = False
    listing: tuple[str, ...] = ()


@dataclass(frozen=True)
class ImageManifest:
    planted: tuple[PlantedEntry, ...]
    constants: tuple[tuple[int, int], ...]
    stubs: tuple[tuple[str, int], ...]

    def by_label(self, label: str) -> PlantedEntry:
        for p in self.planted:
            if p.label == label:
                return p
        raise KeyError(label)

    @property
    def chainable(self) -> list[PlantedEntry]:
        return [p for p in self.planted if p.a is not None]

    def to_text(self) -> str:
        lines = ["# label entry a b role unintended"]
        for p in self.planted:
            a = "-" if p.a is None else f"{p.a:#x}"
            b = "-" if p.b is None else f"{p.b:#x}"
            lines.append(f"{p.label} {p.entry:#x} {a} {b} {','.join(p.roles) or '-'} "
                         f"{int(p.unintended)}")
        for addr, value in self.constants:
            lines.append(f"@const {addr:#x} {value:#x}")
        for name, addr in self.stubs:
            lines.append(f"@stub {name} {addr:#x}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ImageManifest":
        planted, consts, stubs = [], [], []
        for line in text.splitlines():
            line = line.split("#")[0].strip()
            if not line:
                continue
            f = line.split()
            if f[0] == "@const":
                consts.append((int(f[1], 0), int(f[2], 0)))
            elif f[0] == "@stub":
                stubs.append((f[1], int(f[2], 0)))
            else:
                a = None if f[2] == "-" else int(f[2], 0)
                b = None if f[3] == "-" else int(f[3], 0)
                roles = () if f[4] == "-" else tuple(f[4].split(","))
                planted.append(PlantedEntry(f[0], int(f[1], 0), a, b, roles, f[5] == "1"))
        return cls(tuple(planted), tuple(consts), tuple(stubs))


@dataclass(frozen=True)
class SynthConfig:
    text_base: int = DEFAULT_TEXT_BASE
    rodata_base: int = DEFAULT_RODATA_BASE
    const_value: int = DEFAULT_CONST
    gap: int = 8  # zero bytes (illegal halfwords) between planted pieces
    shuffle_seed: int | None = None  # permute piece order when set


@dataclass(frozen=True)
class _Piece:
    name: str
    lines: tuple[str, ...]
    # (offset, suffix label, a, b, roles, unintended); a is None for pivots
    entries: tuple[tuple, ...] = ()


# Offsets, frame parameters and roles below are worked out by hand from the
# listings; they are the oracle, not scanner output.
_PIECES = (
    _Piece("nop", ("c.ldsp ra, 8(sp)", "c.addi sp, 0x10", "c.jr ra"),
           ((0, "", 8, 0x10, ("NOP",), False),)),
    _Piece("pop6", ("c.ldsp ra, 0x28(sp)", "c.ldsp s0, 0x20(sp)", "c.ldsp a0, 0(sp)",
                    "c.ldsp a1, 8(sp)", "c.ldsp s1, 0x18(sp)", "c.ldsp s2, 0x10(sp)",
                    "c.addi16sp sp, 0x30", "c.jr ra"),
           ((0, "", 0x28, 0x30, ("POP",), False),)),
    # the taken side of the bne lands on an ebreak 0x1e bytes on
    _Piece("readmem", ("c.ld a0, 8(a0)", "c.add a0, a5", "c.ldsp a4, 0x28(sp)",
                       "c.ld a5, 0(s0)", "bne a4, a5, 0x1e", "c.ldsp ra, 0x38(sp)",
                       "c.ldsp s0, 0x30(sp)", "c.addi16sp sp, 0x40", "c.jr ra",
                       ".zero 18", "c.ebreak"),
           ((0, "", 0x38, 0x40, ("READMEM",), False),
            (2, ".add", 0x38, 0x40, ("READMEM",), False),  # a5 <- mem[s0]
            (4, ".a4", 0x38, 0x40, ("READMEM",), False),  # a5 <- mem[s0]
            (6, ".a5", 0x38, 0x40, (), False),
            (8, ".bne", 0x38, 0x40, (), False),
            (12, ".tail", 0x38, 0x40, ("POP",), False))),
    _Piece("pop_a", ("c.ldsp ra, 0x28(sp)", "c.ldsp a5, 0x20(sp)", "c.ldsp a4, 0x18(sp)",
                     "c.ldsp a3, 0x10(sp)", "c.ldsp a2, 8(sp)", "c.ldsp a1, 0(sp)",
                     "c.addi16sp sp, 0x30", "c.jr ra"),
           ((0, "", 0x28, 0x30, ("POP",), False),)),
    _Piece("writemem", ("c.sd a0, 8(s0)", "c.ldsp ra, 8(sp)", "c.ldsp s0, 0(sp)",
                        "c.addi sp, 0x10", "c.jr ra"),
           ((0, "", 8, 0x10, ("WRITEMEM",), False),
            (2, ".pop_s0", 8, 0x10, ("POP",), False))),
    _Piece("add1", ("c.addi a0, 1", "c.ldsp ra, 8(sp)", "c.addi sp, 0x10", "c.jr ra"),
           ((0, "", 8, 0x10, ("ADD1",), False), (2, ".nop", 8, 0x10, ("NOP",), False))),
    _Piece("sub1", ("c.addi a0, -1", "c.ldsp ra, 8(sp)", "c.addi sp, 0x10", "c.jr ra"),
           ((0, "", 8, 0x10, ("SUB1",), False), (2, ".nop", 8, 0x10, ("NOP",), False))),
    _Piece("call_a5", ("c.jalr a5", "c.ldsp ra, 0x18(sp)", "c.ldsp s0, 0x10(sp)",
                       "c.addi16sp sp, 0x20", "c.jr ra"),
           ((0, "", 0x18, 0x20, ("CALL_JALR_A5",), False),
            (2, ".tail", 0x18, 0x20, ("POP",), False))),
    # nonzero falls through (ra slot 3); zero jumps to the second epilogue,
    # which takes ra from slot 1 and a0 from slot 2
    _Piece("cond", ("c.ld a5, 8(a0)", "c.beqz a5, 8", "c.ldsp ra, 0x18(sp)",
                    "c.addi16sp sp, 0x20", "c.jr ra", "c.ldsp ra, 8(sp)",
                    "c.ldsp a0, 0x10(sp)", "c.addi16sp sp, 0x20", "c.jr ra"),
           ((0, "", 0x18, 0x20, ("COND_BRANCH",), False),
            (2, ".beqz", 0x18, 0x20, (), False),
            (4, ".nz", 0x18, 0x20, ("NOP",), False),
            (10, ".z", 8, 0x20, ("POP",), False))),
    _Piece("branch", ("ld ra, 0(a0)", "ld sp, 0x68(a0)", "c.jr ra"),
           ((0, "", None, None, ("BRANCH_UNCOND",), False),)),
    # lui t0, 0x850a0: its upper halfword 0x850a is c.mv a0, sp
    _Piece("mov_sp", ("lui t0, 0x850a0", "c.ldsp ra, 8(sp)", "c.addi sp, 0x10", "c.jr ra"),
           ((0, "", 8, 0x10, (), False),
            (2, ".mv", 8, 0x10, ("MOV_SP",), True),
            (4, ".nop", 8, 0x10, ("NOP",), False))),
    # an uncompressed epilogue ending in the 4-byte return
    _Piece("pop_w", ("ld ra, 24(sp)", "ld s0, 16(sp)", "addi sp, sp, 32", "jalr zero, 0(ra)"),
           ((0, "", 24, 32, ("POP",), False),)),
)

_STUBS = (
    ("putchar", ("c.jr ra",)),
    ("getchar", ("c.li a0, -1", "c.jr ra")),
    ("exit", ("c.ebreak",)),
)


def _assemble(lines: tuple[str, ...]) -> bytes:
    out = bytearray()
    for ln in lines:
        if ln.startswith(".zero"):
            out += bytes(int(ln.split()[1], 0))
        else:
            out += isa.encode(isa.assemble(ln))
    return bytes(out)


def build_image(config: SynthConfig = SynthConfig()) -> tuple[MemoryImage, ImageManifest]:
    pieces = list(_PIECES)
    if config.shuffle_seed is not None:
        random.Random(config.shuffle_seed).shuffle(pieces)
    text = bytearray(bytes(config.gap))
    symbols: dict[str, int] = {}
    planted: list[PlantedEntry] = []
    for piece in pieces:
        base = config.text_base + len(text)
        code = _assemble(piece.lines)
        symbols[f"gadget_{piece.name}"] = base
        for off, suffix, a, b, roles, odd in piece.entries:
            listing = _listing(code[off:]) if a is not None else tuple(piece.lines)
            planted.append(PlantedEntry(piece.name + suffix, base + off, a, b, roles, odd,
                                        listing))
        text += code + bytes(config.gap)
        text += bytes(-len(text) % 4)
    stubs = []
    for name, lines in _STUBS:
        addr = config.text_base + len(text)
        symbols[name] = addr
        stubs.append((name, addr))
        text += _assemble(lines) + bytes(config.gap)
    rodata = config.const_value.to_bytes(8, "little") + bytes(8)
    symbols["known_const"] = config.rodata_base
    img = MemoryImage((Segment(config.text_base, bytes(text), "rx"),
                       Segment(config.rodata_base, rodata, "r")),
                      symbols, config.text_base)
    man = ImageManifest(tuple(sorted(planted, key=lambda p: p.entry)),
                        ((config.rodata_base, config.const_value),), tuple(stubs))
    return img, man


def _listing(code: bytes) -> tuple[str, ...]:
    """Instructions from the start of ``code`` through the first return."""
    out = []
    off = 0
    while off + 2 <= len(code):
        ins = isa.decode(code, off)
        out.append(str(ins))
        if isa.is_return(ins):
            break
        off += ins.width
    return tuple(out)
