"""RV64IMC instruction decoding, encoding and a small assembler.

Compressed instructions keep their own ``c.*`` mnemonics; :func:`expand`
maps them onto the base operation they stand for, which is what the
emulator and the symbolic summarizer consume.  F/D/A encodings are decoded
only far enough to know their width and class.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple

ABI_NAMES = (
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2",
    "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5",
    "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7",
    "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6",
)
REG_INDEX = {name: i for i, name in enumerate(ABI_NAMES)}
REG_INDEX["fp"] = 8
REG_INDEX.update({f"x{i}": i for i in range(32)})

ZERO, RA, SP = 0, 1, 2
S0, S1, A0, A1, A2, A3, A4, A5 = 8, 9, 10, 11, 12, 13, 14, 15

MASK64 = (1 << 64) - 1


def reg_name(index: int) -> str:
    return ABI_NAMES[index]


def reg_index(name: str | int) -> int:
    if isinstance(name, int):
        if not 0 <= name < 32:
            raise ValueError(f"register index out of range: {name}")
        return name
    try:
        return REG_INDEX[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown register {name!r}") from None


def sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


class DecodeError(ValueError):
    pass


class TruncatedInput(DecodeError):
    pass


class EncodeError(ValueError):
    pass


class ImmediateOutOfRange(EncodeError):
    pass


@dataclass(frozen=True)
class Instruction:
    width: int
    mnemonic: str
    rd: int | None = None
    rs1: int | None = None
    rs2: int | None = None
    imm: int | None = None
    raw: int = 0

    @property
    def compressed(self) -> bool:
        return self.width == 2

    @property
    def kind(self) -> str:
        return instruction_class(self)

    def __str__(self) -> str:
        return disassemble(self)


# --------------------------------------------------------------------------
# immediate bit layouts


def _bit_list(spec: str) -> list[int]:
    out: list[int] = []
    for part in spec.split("|"):
        if ":" in part:
            hi, lo = (int(p) for p in part.split(":"))
            out.extend(range(hi, lo - 1, -1))
        else:
            out.append(int(part))
    return out


class Layout:
    """Mapping between instruction bits and immediate bits.

    ``Layout((12, "5"), (6, "4:3|8:6"))`` says instruction bit 12 holds
    imm[5] and instruction bits 6..2 hold imm[4], imm[3], imm[8], imm[7],
    imm[6] in that order.
    """

    def __init__(self, *fields: tuple[int, str], signed: bool = False, nonzero: bool = False):
        self.pairs: list[tuple[int, int]] = []
        for hi, spec in fields:
            for k, b in enumerate(_bit_list(spec)):
                self.pairs.append((hi - k, b))
        self.signed = signed
        self.nonzero = nonzero
        self.top = max(b for _, b in self.pairs)

    def gather(self, raw: int) -> int:
        v = 0
        for i, b in self.pairs:
            v |= ((raw >> i) & 1) << b
        return sext(v, self.top + 1) if self.signed else v

    def scatter(self, imm: int) -> int:
        v = imm & ((1 << (self.top + 1)) - 1)
        raw = 0
        for i, b in self.pairs:
            raw |= ((v >> b) & 1) << i
        if self.gather(raw) != imm:
            raise ImmediateOutOfRange(f"immediate {imm:#x} does not fit")
        if self.nonzero and imm == 0:
            raise ImmediateOutOfRange("immediate must be nonzero")
        return raw


_I = Layout((31, "11:0"), signed=True)
_S = Layout((31, "11:5"), (11, "4:0"), signed=True)
_B = Layout((31, "12|10:5"), (11, "4:1|11"), signed=True)
_U = Layout((31, "31:12"), signed=True)
_J = Layout((31, "20|10:1|11|19:12"), signed=True)
_SH6 = Layout((25, "5:0"))
_SH5 = Layout((24, "4:0"))

# --------------------------------------------------------------------------
# 32-bit base table: mnemonic -> (format, opcode, funct3, funct7)

_BASE: dict[str, tuple[str, int, int | None, int | None]] = {
    "lui": ("U", 0x37, None, None),
    "auipc": ("U", 0x17, None, None),
    "jal": ("J", 0x6F, None, None),
    "jalr": ("I", 0x67, 0, None),
    "beq": ("B", 0x63, 0, None), "bne": ("B", 0x63, 1, None),
    "blt": ("B", 0x63, 4, None), "bge": ("B", 0x63, 5, None),
    "bltu": ("B", 0x63, 6, None), "bgeu": ("B", 0x63, 7, None),
    "lb": ("I", 0x03, 0, None), "lh": ("I", 0x03, 1, None),
    "lw": ("I", 0x03, 2, None), "ld": ("I", 0x03, 3, None),
    "lbu": ("I", 0x03, 4, None), "lhu": ("I", 0x03, 5, None),
    "lwu": ("I", 0x03, 6, None),
    "sb": ("S", 0x23, 0, None), "sh": ("S", 0x23, 1, None),
    "sw": ("S", 0x23, 2, None), "sd": ("S", 0x23, 3, None),
    "addi": ("I", 0x13, 0, None), "slti": ("I", 0x13, 2, None),
    "sltiu": ("I", 0x13, 3, None), "xori": ("I", 0x13, 4, None),
    "ori": ("I", 0x13, 6, None), "andi": ("I", 0x13, 7, None),
    "slli": ("SH6", 0x13, 1, 0x00), "srli": ("SH6", 0x13, 5, 0x00),
    "srai": ("SH6", 0x13, 5, 0x10),
    "addiw": ("I", 0x1B, 0, None),
    "slliw": ("SH5", 0x1B, 1, 0x00), "srliw": ("SH5", 0x1B, 5, 0x00),
    "sraiw": ("SH5", 0x1B, 5, 0x20),
    "fence": ("I", 0x0F, 0, None), "fence.i": ("I", 0x0F, 1, None),
    "ecall": ("SYS", 0x73, None, None), "ebreak": ("SYS", 0x73, None, None),
}
_R_OPS = {
    0x33: [("add", 0, 0), ("sub", 0, 0x20), ("sll", 1, 0), ("slt", 2, 0),
           ("sltu", 3, 0), ("xor", 4, 0), ("srl", 5, 0), ("sra", 5, 0x20),
           ("or", 6, 0), ("and", 7, 0),
           ("mul", 0, 1), ("mulh", 1, 1), ("mulhsu", 2, 1), ("mulhu", 3, 1),
           ("div", 4, 1), ("divu", 5, 1), ("rem", 6, 1), ("remu", 7, 1)],
    0x3B: [("addw", 0, 0), ("subw", 0, 0x20), ("sllw", 1, 0), ("srlw", 5, 0),
           ("sraw", 5, 0x20), ("mulw", 0, 1), ("divw", 4, 1), ("divuw", 5, 1),
           ("remw", 6, 1), ("remuw", 7, 1)],
}
for _op, _rows in _R_OPS.items():
    for _mn, _f3, _f7 in _rows:
        _BASE[_mn] = ("R", _op, _f3, _f7)

_SYS_RAW = {"ecall": 0x00000073, "ebreak": 0x00100073}
_FP_OPCODES = {0x07: "fp-load", 0x27: "fp-store", 0x2F: "amo", 0x43: "fp-fma",
               0x47: "fp-fma", 0x4B: "fp-fma", 0x4F: "fp-fma", 0x53: "fp-op"}

_BASE_LOOKUP: dict[tuple, str] = {}
for _mn, (_fmt, _op, _f3, _f7) in _BASE.items():
    if _fmt in ("U", "J"):
        _BASE_LOOKUP[(_op,)] = _mn
    elif _fmt in ("R", "SH5"):
        _BASE_LOOKUP[(_op, _f3, _f7)] = _mn
    elif _fmt in ("I", "S", "B"):
        _BASE_LOOKUP[(_op, _f3)] = _mn


def _decode32(raw: int) -> Instruction:
    op = raw & 0x7F
    rd = (raw >> 7) & 0x1F
    f3 = (raw >> 12) & 7
    rs1 = (raw >> 15) & 0x1F
    rs2 = (raw >> 20) & 0x1F
    f7 = raw >> 25
    if op in _FP_OPCODES:
        return Instruction(4, _FP_OPCODES[op], raw=raw)
    if op in (0x37, 0x17):
        return Instruction(4, _BASE_LOOKUP[(op,)], rd=rd, imm=_U.gather(raw), raw=raw)
    if op == 0x6F:
        return Instruction(4, "jal", rd=rd, imm=_J.gather(raw), raw=raw)
    if op == 0x73:
        for mn, r in _SYS_RAW.items():
            if raw == r:
                return Instruction(4, mn, raw=raw)
        if f3 in (1, 2, 3, 5, 6, 7):
            return Instruction(4, "csr", raw=raw)
        return Instruction(4, "system", raw=raw)
    if op in (0x33, 0x3B):
        mn = _BASE_LOOKUP.get((op, f3, f7))
        if mn is None:
            return Instruction(4, "illegal", raw=raw)
        return Instruction(4, mn, rd=rd, rs1=rs1, rs2=rs2, raw=raw)
    if op == 0x13 and f3 in (1, 5):
        f6 = raw >> 26
        mn = {(1, 0): "slli", (5, 0): "srli", (5, 0x10): "srai"}.get((f3, f6))
        if mn is None:
            return Instruction(4, "illegal", raw=raw)
        return Instruction(4, mn, rd=rd, rs1=rs1, imm=_SH6.gather(raw), raw=raw)
    if op == 0x1B and f3 in (1, 5):
        mn = _BASE_LOOKUP.get((op, f3, f7))
        if mn is None:
            return Instruction(4, "illegal", raw=raw)
        return Instruction(4, mn, rd=rd, rs1=rs1, imm=_SH5.gather(raw), raw=raw)
    mn = _BASE_LOOKUP.get((op, f3))
    if mn is None:
        return Instruction(4, "illegal", raw=raw)
    fmt = _BASE[mn][0]
    if fmt == "I":
        return Instruction(4, mn, rd=rd, rs1=rs1, imm=_I.gather(raw), raw=raw)
    if fmt == "S":
        return Instruction(4, mn, rs1=rs1, rs2=rs2, imm=_S.gather(raw), raw=raw)
    return Instruction(4, mn, rs1=rs1, rs2=rs2, imm=_B.gather(raw), raw=raw)


def _encode32(ins: Instruction) -> int:
    mn = ins.mnemonic
    if mn not in _BASE:
        raise EncodeError(f"cannot encode {mn!r}")
    fmt, op, f3, f7 = _BASE[mn]
    rd = _r(ins.rd)
    rs1 = _r(ins.rs1)
    rs2 = _r(ins.rs2)
    imm = ins.imm or 0
    if fmt == "SYS":
        return _SYS_RAW[mn]
    if fmt == "U":
        return op | rd << 7 | _U.scatter(imm)
    if fmt == "J":
        return op | rd << 7 | _J.scatter(imm)
    if fmt == "R":
        return op | rd << 7 | f3 << 12 | rs1 << 15 | rs2 << 20 | f7 << 25
    if fmt == "SH6":
        return op | rd << 7 | f3 << 12 | rs1 << 15 | _SH6.scatter(imm) | f7 << 26
    if fmt == "SH5":
        return op | rd << 7 | f3 << 12 | rs1 << 15 | _SH5.scatter(imm) | f7 << 25
    if fmt == "I":
        return op | rd << 7 | f3 << 12 | rs1 << 15 | _I.scatter(imm)
    if fmt == "S":
        return op | f3 << 12 | rs1 << 15 | rs2 << 20 | _S.scatter(imm)
    return op | f3 << 12 | rs1 << 15 | rs2 << 20 | _B.scatter(imm)


def _r(value: int | None) -> int:
    return 0 if value is None else value


# --------------------------------------------------------------------------
# compressed table
#
# Register locations: "r7" = bits 11:7, "r2" = bits 6:2, "p7" = bits 9:7 (x8+),
# "p2" = bits 4:2 (x8+); an int is an implied register.


class _C(NamedTuple):
    name: str
    mask: int
    match: int
    rd: object = None
    rs1: object = None
    rs2: object = None
    layout: Layout | None = None
    check: str = ""  # "rd" = rd must be nonzero, "rs1" = rs1 nonzero


_CI6 = Layout((12, "5"), (6, "4:0"), signed=True)
_CU6 = Layout((12, "5"), (6, "4:0"))
_CLD = Layout((12, "5:3"), (6, "7:6"))
_CLW = Layout((12, "5:3"), (6, "2|6"))

_CTABLE: list[_C] = [
    _C("c.addi4spn", 0xE003, 0x0000, rd="p2", rs1=SP,
       layout=Layout((12, "5:4|9:6|2|3"), nonzero=True)),
    _C("c.fld", 0xE003, 0x2000),
    _C("c.lw", 0xE003, 0x4000, rd="p2", rs1="p7", layout=_CLW),
    _C("c.ld", 0xE003, 0x6000, rd="p2", rs1="p7", layout=_CLD),
    _C("c.fsd", 0xE003, 0xA000),
    _C("c.sw", 0xE003, 0xC000, rs1="p7", rs2="p2", layout=_CLW),
    _C("c.sd", 0xE003, 0xE000, rs1="p7", rs2="p2", layout=_CLD),
    _C("c.nop", 0xEF83, 0x0001, layout=_CI6),
    _C("c.addi", 0xE003, 0x0001, rd="r7", rs1="r7", layout=_CI6),
    _C("c.addiw", 0xE003, 0x2001, rd="r7", rs1="r7", layout=_CI6, check="rd"),
    _C("c.li", 0xE003, 0x4001, rd="r7", layout=_CI6),
    _C("c.addi16sp", 0xEF83, 0x6101, rd=SP, rs1=SP,
       layout=Layout((12, "9"), (6, "4|6|8:7|5"), signed=True, nonzero=True)),
    _C("c.lui", 0xE003, 0x6001, rd="r7",
       layout=Layout((12, "17"), (6, "16:12"), signed=True, nonzero=True)),
    _C("c.srli", 0xEC03, 0x8001, rd="p7", rs1="p7", layout=_CU6),
    _C("c.srai", 0xEC03, 0x8401, rd="p7", rs1="p7", layout=_CU6),
    _C("c.andi", 0xEC03, 0x8801, rd="p7", rs1="p7", layout=_CI6),
    _C("c.sub", 0xFC63, 0x8C01, rd="p7", rs1="p7", rs2="p2"),
    _C("c.xor", 0xFC63, 0x8C21, rd="p7", rs1="p7", rs2="p2"),
    _C("c.or", 0xFC63, 0x8C41, rd="p7", rs1="p7", rs2="p2"),
    _C("c.and", 0xFC63, 0x8C61, rd="p7", rs1="p7", rs2="p2"),
    _C("c.subw", 0xFC63, 0x9C01, rd="p7", rs1="p7", rs2="p2"),
    _C("c.addw", 0xFC63, 0x9C21, rd="p7", rs1="p7", rs2="p2"),
    _C("c.j", 0xE003, 0xA001, layout=Layout((12, "11|4|9:8|10|6|7|3:1|5"), signed=True)),
    _C("c.beqz", 0xE003, 0xC001, rs1="p7",
       layout=Layout((12, "8|4:3"), (6, "7:6|2:1|5"), signed=True)),
    _C("c.bnez", 0xE003, 0xE001, rs1="p7",
       layout=Layout((12, "8|4:3"), (6, "7:6|2:1|5"), signed=True)),
    _C("c.slli", 0xE003, 0x0002, rd="r7", rs1="r7", layout=_CU6),
    _C("c.fldsp", 0xE003, 0x2002),
    _C("c.lwsp", 0xE003, 0x4002, rd="r7", rs1=SP,
       layout=Layout((12, "5"), (6, "4:2|7:6")), check="rd"),
    _C("c.ldsp", 0xE003, 0x6002, rd="r7", rs1=SP,
       layout=Layout((12, "5"), (6, "4:3|8:6")), check="rd"),
    _C("c.jr", 0xF07F, 0x8002, rs1="r7", check="rs1"),
    _C("c.mv", 0xF003, 0x8002, rd="r7", rs2="r2"),
    _C("c.ebreak", 0xFFFF, 0x9002),
    _C("c.jalr", 0xF07F, 0x9002, rd=RA, rs1="r7"),
    _C("c.add", 0xF003, 0x9002, rd="r7", rs1="r7", rs2="r2"),
    _C("c.fsdsp", 0xE003, 0xA002),
    _C("c.swsp", 0xE003, 0xC002, rs1=SP, rs2="r2", layout=Layout((12, "5:2|7:6"))),
    _C("c.sdsp", 0xE003, 0xE002, rs1=SP, rs2="r2", layout=Layout((12, "5:3|8:6"))),
]
_CBYNAME = {c.name: c for c in _CTABLE}
_C_FP = {"c.fld", "c.fsd", "c.fldsp", "c.fsdsp"}
_LOC_SHIFT = {"r7": (7, 0x1F, 0), "r2": (2, 0x1F, 0), "p7": (7, 7, 8), "p2": (2, 7, 8)}


def _get_reg(raw: int, loc) -> int | None:
    if loc is None or isinstance(loc, int):
        return loc
    shift, mask, base = _LOC_SHIFT[loc]
    return ((raw >> shift) & mask) + base


def _put_reg(value: int | None, loc) -> int:
    if loc is None or isinstance(loc, int):
        if isinstance(loc, int) and value != loc:
            raise EncodeError(f"register must be {reg_name(loc)}")
        return 0
    shift, mask, base = _LOC_SHIFT[loc]
    v = _r(value) - base
    if not 0 <= v <= mask:
        raise EncodeError(f"register {reg_name(_r(value))} not encodable here")
    return v << shift


def _decode16(raw: int) -> Instruction:
    if raw == 0:
        return Instruction(2, "illegal", raw=raw)
    for c in _CTABLE:
        if raw & c.mask != c.match:
            continue
        if c.name in _C_FP:
            return Instruction(2, c.name, raw=raw)
        rd = _get_reg(raw, c.rd)
        rs1 = _get_reg(raw, c.rs1)
        rs2 = _get_reg(raw, c.rs2)
        if (c.check == "rd" and rd == 0) or (c.check == "rs1" and rs1 == 0):
            return Instruction(2, "illegal", raw=raw)
        imm = None
        if c.layout is not None:
            imm = c.layout.gather(raw)
            if c.layout.nonzero and imm == 0:
                return Instruction(2, "illegal", raw=raw)
        return Instruction(2, c.name, rd=rd, rs1=rs1, rs2=rs2, imm=imm, raw=raw)
    return Instruction(2, "illegal", raw=raw)


def _encode16(ins: Instruction) -> int:
    c = _CBYNAME.get(ins.mnemonic)
    if c is None or c.name in _C_FP:
        raise EncodeError(f"cannot encode {ins.mnemonic!r}")
    raw = c.match
    # tied operands (rd == rs1) are encoded once
    if c.rd is not None:
        raw |= _put_reg(ins.rd, c.rd)
    if c.rs1 is not None:
        if c.rs1 == c.rd and not isinstance(c.rs1, int):
            if ins.rs1 != ins.rd:
                raise EncodeError(f"{c.name} needs rd == rs1")
        else:
            raw |= _put_reg(ins.rs1, c.rs1)
    if c.rs2 is not None:
        raw |= _put_reg(ins.rs2, c.rs2)
    if c.layout is not None:
        raw |= c.layout.scatter(ins.imm or 0)
    if raw & c.mask != c.match:
        raise EncodeError(f"operands of {c.name} collide with the opcode")
    back = _decode16(raw)
    if back.mnemonic != c.name:
        raise EncodeError(f"{c.name} operands produce a reserved encoding")
    return raw


# --------------------------------------------------------------------------
# public decode / encode


def decode(data: bytes, offset: int = 0) -> Instruction:
    """Decode the instruction at ``data[offset:]``.

    Raises :class:`TruncatedInput` when fewer than 2 bytes remain, or when a
    4-byte encoding starts within 2 bytes of the end.
    """
    if offset < 0 or offset + 2 > len(data):
        raise TruncatedInput(f"no instruction at offset {offset}")
    lo = data[offset] | data[offset + 1] << 8
    if lo & 3 != 3:
        return _decode16(lo)
    if offset + 4 > len(data):
        raise TruncatedInput(f"4-byte instruction truncated at offset {offset}")
    return _decode32(lo | data[offset + 2] << 16 | data[offset + 3] << 24)


def decode_word(raw: int, width: int | None = None) -> Instruction:
    if width is None:
        width = 2 if raw & 3 != 3 else 4
    return decode(raw.to_bytes(width, "little"))


UNSUPPORTED = frozenset(_FP_OPCODES.values()) | _C_FP
_OPAQUE = UNSUPPORTED | {"illegal", "csr", "system"}


def encode_word(ins: Instruction) -> int:
    if ins.mnemonic in _OPAQUE:
        return ins.raw
    if ins.mnemonic.startswith("c."):
        return _encode16(ins)
    return _encode32(ins)


def encode(ins: Instruction) -> bytes:
    """Encode to little-endian bytes; opaque encodings reproduce ``raw``."""
    if ins.mnemonic in _OPAQUE:
        return ins.raw.to_bytes(ins.width, "little")
    width = 2 if ins.mnemonic.startswith("c.") else 4
    return encode_word(ins).to_bytes(width, "little")


def make(mnemonic: str, rd=None, rs1=None, rs2=None, imm=None) -> Instruction:
    """Build an instruction from fields, filling width and raw by encoding."""
    fields = {k: (None if v is None else reg_index(v)) for k, v in
              (("rd", rd), ("rs1", rs1), ("rs2", rs2))}
    proto = Instruction(2 if mnemonic.startswith("c.") else 4, mnemonic, imm=imm, **fields)
    raw = encode_word(proto)
    return decode_word(raw, proto.width)


# --------------------------------------------------------------------------
# classification and expansion


class Expanded(NamedTuple):
    op: str
    rd: int
    rs1: int
    rs2: int
    imm: int


_EXPAND = {
    "c.addi4spn": "addi", "c.lw": "lw", "c.ld": "ld", "c.sw": "sw", "c.sd": "sd",
    "c.nop": "addi", "c.addi": "addi", "c.addiw": "addiw", "c.li": "addi",
    "c.addi16sp": "addi", "c.lui": "lui", "c.srli": "srli", "c.srai": "srai",
    "c.andi": "andi", "c.sub": "sub", "c.xor": "xor", "c.or": "or", "c.and": "and",
    "c.subw": "subw", "c.addw": "addw", "c.j": "jal", "c.beqz": "beq",
    "c.bnez": "bne", "c.slli": "slli", "c.lwsp": "lw", "c.ldsp": "ld",
    "c.jr": "jalr", "c.mv": "add", "c.ebreak": "ebreak", "c.jalr": "jalr",
    "c.add": "add", "c.swsp": "sw", "c.sdsp": "sd",
}


def expand(ins: Instruction) -> Expanded:
    """Return the base-ISA operation an instruction performs."""
    mn = ins.mnemonic
    rd, rs1, rs2, imm = _r(ins.rd), _r(ins.rs1), _r(ins.rs2), ins.imm or 0
    if not mn.startswith("c."):
        return Expanded(mn, rd, rs1, rs2, imm)
    op = _EXPAND.get(mn, mn)
    if mn == "c.nop":
        rd = rs1 = 0
    elif mn in ("c.li", "c.mv"):
        rs1 = 0
    elif mn in ("c.sub", "c.xor", "c.or", "c.and", "c.subw", "c.addw", "c.add"):
        rs1 = rd
    elif mn == "c.beqz" or mn == "c.bnez":
        rs2 = 0
    elif mn == "c.jr":
        rd = 0
    return Expanded(op, rd, rs1, rs2, imm)


_LOADS = {"lb", "lh", "lw", "ld", "lbu", "lhu", "lwu"}
_STORES = {"sb", "sh", "sw", "sd"}
_BRANCHES = {"beq", "bne", "blt", "bge", "bltu", "bgeu"}
_OPIMM = {"addi", "slti", "sltiu", "xori", "ori", "andi", "slli", "srli", "srai",
          "addiw", "slliw", "srliw", "sraiw", "lui", "auipc"}
INSTRUCTION_CLASSES = ("load", "store", "op-imm", "op", "branch", "jal", "jalr",
                       "system", "illegal", "unsupported-decodable")


def instruction_class(ins: Instruction) -> str:
    mn = ins.mnemonic
    if mn == "illegal":
        return "illegal"
    if mn in UNSUPPORTED:
        return "unsupported-decodable"
    op = expand(ins).op
    if op in _LOADS:
        return "load"
    if op in _STORES:
        return "store"
    if op in _BRANCHES:
        return "branch"
    if op in _OPIMM:
        return "op-imm"
    if op in ("jal", "jalr"):
        return op
    if op in ("ecall", "ebreak", "fence", "fence.i", "csr", "system"):
        return "system"
    return "op"


def is_return(ins: Instruction) -> bool:
    """True for ``c.jr ra`` and ``jalr zero, 0(ra)``."""
    if ins.mnemonic not in ("c.jr", "jalr"):
        return False
    e = expand(ins)
    return e.rd == ZERO and e.rs1 == RA and e.imm == 0


# --------------------------------------------------------------------------
# text form


def _fmt_imm(v: int) -> str:
    if -10 < v < 10:
        return str(v)
    return f"-{-v:#x}" if v < 0 else f"{v:#x}"


_OPERANDS: dict[str, str] = {}
for _mn, (_fmt, *_rest) in _BASE.items():
    _OPERANDS[_mn] = {
        "R": "rd,rs1,rs2", "I": "rd,rs1,imm", "SH6": "rd,rs1,imm", "SH5": "rd,rs1,imm",
        "S": "rs2,imm(rs1)", "B": "rs1,rs2,imm", "U": "rd,upper", "J": "rd,imm", "SYS": "",
    }[_fmt]
for _mn in _LOADS | {"jalr"}:
    _OPERANDS[_mn] = "rd,imm(rs1)"
_OPERANDS.update({
    "c.addi4spn": "rd,rs1,imm", "c.lw": "rd,imm(rs1)", "c.ld": "rd,imm(rs1)",
    "c.sw": "rs2,imm(rs1)", "c.sd": "rs2,imm(rs1)", "c.nop": "imm?",
    "c.addi": "rd,imm", "c.addiw": "rd,imm", "c.li": "rd,imm", "c.addi16sp": "rd,imm",
    "c.lui": "rd,upper", "c.srli": "rd,imm", "c.srai": "rd,imm", "c.andi": "rd,imm",
    "c.sub": "rd,rs2", "c.xor": "rd,rs2", "c.or": "rd,rs2", "c.and": "rd,rs2",
    "c.subw": "rd,rs2", "c.addw": "rd,rs2", "c.j": "imm", "c.beqz": "rs1,imm",
    "c.bnez": "rs1,imm", "c.slli": "rd,imm", "c.lwsp": "rd,imm(rs1)",
    "c.ldsp": "rd,imm(rs1)", "c.jr": "rs1", "c.mv": "rd,rs2", "c.ebreak": "",
    "c.jalr": "rs1", "c.add": "rd,rs2", "c.swsp": "rs2,imm(rs1)", "c.sdsp": "rs2,imm(rs1)",
})


def disassemble(ins: Instruction) -> str:
    mn = ins.mnemonic
    spec = _OPERANDS.get(mn)
    if spec is None:
        return f"{mn} {ins.raw:#0{ins.width * 2 + 2}x}"
    parts = []
    for tok in spec.split(","):
        if not tok:
            continue
        if tok == "imm?":
            if ins.imm:
                parts.append(_fmt_imm(ins.imm))
        elif tok == "imm":
            parts.append(_fmt_imm(ins.imm or 0))
        elif tok == "upper":
            parts.append(f"{((ins.imm or 0) >> 12) & 0xFFFFF:#x}")
        elif tok == "imm(rs1)":
            parts.append(f"{_fmt_imm(ins.imm or 0)}({reg_name(_r(ins.rs1))})")
        else:
            parts.append(reg_name(_r(getattr(ins, tok))))
    return f"{mn} {', '.join(parts)}" if parts else mn


_MEM_RE = re.compile(r"^(-?\w+)\((\w+)\)$")


def assemble(text: str) -> Instruction:
    """Assemble one line such as ``c.ldsp ra, 0x28(sp)`` or ``bne a4, a5, 0x1e``."""
    text = text.split("#")[0].strip()
    mn, _, rest = text.partition(" ")
    mn = mn.lower()
    ops = [o.strip() for o in rest.split(",")] if rest.strip() else []
    spec = _OPERANDS.get(mn)
    if spec is None:
        raise EncodeError(f"unsupported mnemonic {mn!r}")
    if mn == "jalr" and len(ops) == 3:  # jalr rd, rs1, imm
        ops = [ops[0], f"{ops[2]}({ops[1]})"]
    toks = [t for t in spec.split(",") if t]
    if toks == ["imm?"]:
        toks = ["imm"] if ops else []
    if len(ops) != len(toks):
        raise EncodeError(f"{mn} expects {len(toks)} operands, got {len(ops)}: {text!r}")
    fields: dict[str, int] = {}
    c = _CBYNAME.get(mn)
    for tok, op in zip(toks, ops):
        if tok in ("imm", "imm?"):
            fields["imm"] = int(op, 0)
        elif tok == "upper":
            v = int(op, 0)
            fields["imm"] = sext(v, 20) << 12
        elif tok == "imm(rs1)":
            m = _MEM_RE.match(op.replace(" ", ""))
            if not m:
                raise EncodeError(f"bad memory operand {op!r}")
            fields["imm"] = int(m.group(1), 0)
            fields["rs1"] = reg_index(m.group(2))
        else:
            fields[tok] = reg_index(op)
    if c is not None:
        # fill implied and tied registers
        for name in ("rd", "rs1", "rs2"):
            loc = getattr(c, name)
            if isinstance(loc, int) and name not in fields:
                fields[name] = loc
        if c.rs1 == c.rd and c.rd is not None and not isinstance(c.rd, int):
            fields.setdefault("rs1", fields.get("rd"))
    return make(mn, **fields)


def assemble_block(lines: list[str] | str) -> bytes:
    if isinstance(lines, str):
        lines = [ln for ln in lines.splitlines() if ln.split("#")[0].strip()]
    return b"".join(encode(assemble(ln)) for ln in lines)
