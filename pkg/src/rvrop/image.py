"""Executable images: ELF64 (little-endian, RISC-V) and raw flat binaries."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

EM_RISCV = 243
PT_LOAD = 1
PF_X, PF_W, PF_R = 1, 2, 4
SHT_SYMTAB, SHT_STRTAB, SHT_DYNSYM, SHT_PROGBITS = 2, 3, 11, 1

_EHDR = struct.Struct("<16sHHIQQQIHHHHHH")
_PHDR = struct.Struct("<IIQQQQQQ")
_SHDR = struct.Struct("<IIQQQQIIQQ")
_SYM = struct.Struct("<IBBHQQ")


class ImageError(ValueError):
    pass


class MalformedElf(ImageError):
    pass


class WrongMachine(ImageError):
    pass


class WrongClass(ImageError):
    pass


class OddBase(ImageError):
    pass


class OutOfRange(ImageError):
    """An access outside every mapped segment."""

    def __init__(self, addr: int, length: int):
        super().__init__(f"unmapped access at {addr:#x} (+{length})")
        self.addr = addr
        self.length = length


@dataclass(frozen=True)
class Segment:
    base: int
    data: bytes
    perms: str  # subset of "rwx"

    @property
    def end(self) -> int:
        return self.base + len(self.data)

    @property
    def executable(self) -> bool:
        return "x" in self.perms

    def contains(self, addr: int, length: int = 1) -> bool:
        return self.base <= addr and addr + length <= self.end


@dataclass(frozen=True)
class MemoryImage:
    segments: tuple[Segment, ...]
    symbols: dict[str, int] = field(default_factory=dict)
    entry_hint: int | None = None

    def __post_init__(self):
        segs = sorted(self.segments, key=lambda s: s.base)
        for a, b in zip(segs, segs[1:]):
            if a.end > b.base:
                raise ImageError(f"segments overlap at {b.base:#x}")
        for s in segs:
            if s.executable and s.base % 2:
                raise OddBase(f"executable segment at odd address {s.base:#x}")
        object.__setattr__(self, "segments", tuple(segs))

    @property
    def executable_segments(self) -> list[Segment]:
        return [s for s in self.segments if s.executable]

    def segment_at(self, addr: int, length: int = 1) -> Segment | None:
        for s in self.segments:
            if s.contains(addr, length):
                return s
        return None

    def read(self, addr: int, length: int) -> bytes:
        return read_mem(self, addr, length)


def read_mem(img: MemoryImage, addr: int, length: int) -> bytes:
    if length == 0:
        return b""
    seg = img.segment_at(addr, length)
    if seg is None:
        raise OutOfRange(addr, length)
    off = addr - seg.base
    return seg.data[off:off + length]


def load_raw(data: bytes, base: int) -> MemoryImage:
    if base % 2:
        raise OddBase(f"raw image base {base:#x} is odd")
    return MemoryImage((Segment(base, bytes(data), "rx"),))


STT_SECTION, STT_FILE = 3, 4


def _perms(flags: int) -> str:
    return "".join(c for c, bit in (("r", PF_R), ("w", PF_W), ("x", PF_X)) if flags & bit)


def load_elf(data: bytes) -> MemoryImage:
    if len(data) < 16 or data[:4] != b"\x7fELF":
        raise MalformedElf("bad ELF magic")
    if data[4] != 2:
        raise WrongClass("not a 64-bit ELF")
    if data[5] != 1:
        raise MalformedElf("not little-endian")
    if len(data) < _EHDR.size:
        raise MalformedElf("truncated ELF header")
    (_, _type, machine, _ver, entry, phoff, shoff, _flags, _ehsize,
     phentsize, phnum, shentsize, shnum, _shstrndx) = _EHDR.unpack_from(data)
    if machine != EM_RISCV:
        raise WrongMachine(f"machine type {machine} is not RISC-V")
    if phnum and (phentsize != _PHDR.size or phoff + phnum * _PHDR.size > len(data)):
        raise MalformedElf("truncated program headers")
    segments = []
    for i in range(phnum):
        p_type, p_flags, p_offset, p_vaddr, _paddr, p_filesz, p_memsz, _align = \
            _PHDR.unpack_from(data, phoff + i * _PHDR.size)
        if p_type != PT_LOAD:
            continue
        if p_offset + p_filesz > len(data):
            raise MalformedElf("segment extends past end of file")
        body = data[p_offset:p_offset + p_filesz] + bytes(max(0, p_memsz - p_filesz))
        segments.append(Segment(p_vaddr, body, _perms(p_flags)))

    symbols: dict[str, int] = {}
    if shnum and shoff:
        if shentsize != _SHDR.size or shoff + shnum * _SHDR.size > len(data):
            raise MalformedElf("truncated section headers")
        shdrs = [_SHDR.unpack_from(data, shoff + i * _SHDR.size) for i in range(shnum)]
        tables = [h for h in shdrs if h[1] == SHT_SYMTAB] or \
                 [h for h in shdrs if h[1] == SHT_DYNSYM]
        for h in tables[:1]:
            _n, _t, _f, _a, off, size, link, _i, _al, entsize = h
            stroff = shdrs[link][4]
            for k in range(1, size // (entsize or _SYM.size)):
                name_off, info, _other, _shndx, value, _sz = _SYM.unpack_from(
                    data, off + k * _SYM.size)
                if info & 0xF in (STT_SECTION, STT_FILE):
                    continue
                end = data.index(b"\0", stroff + name_off)
                name = data[stroff + name_off:end].decode()
                if name and name not in symbols:
                    symbols[name] = value
    return MemoryImage(tuple(segments), symbols, entry or None)


def write_elf(img: MemoryImage) -> bytes:
    """Serialize an image as a minimal ET_EXEC ELF64 with a .symtab."""
    names = [".text" if s.executable else ".data" if "w" in s.perms else ".rodata"
             for s in img.segments]
    phoff = _EHDR.size
    off = phoff + _PHDR.size * len(img.segments)
    off = (off + 15) & ~15
    seg_offsets = []
    blob = bytearray()
    for s in img.segments:
        pad = (-(off + len(blob)) % 16)
        blob += bytes(pad)
        seg_offsets.append(off + len(blob))
        blob += s.data

    strtab = bytearray(b"\0")
    syms = bytearray(bytes(_SYM.size))
    for name, addr in img.symbols.items():
        shndx = next((i + 1 for i, s in enumerate(img.segments) if s.contains(addr)), 0xFFF1)
        syms += _SYM.pack(len(strtab), 0x10, 0, shndx, addr, 0)  # STB_GLOBAL, STT_NOTYPE
        strtab += name.encode() + b"\0"
    shstr = bytearray(b"\0")

    def sh_name(n: str) -> int:
        pos = len(shstr)
        shstr.extend(n.encode() + b"\0")
        return pos

    sym_off = off + len(blob)
    sym_off += -sym_off % 8
    str_off = sym_off + len(syms)
    shstr_names = [sh_name(n) for n in names]
    n_symtab, n_strtab, n_shstr = sh_name(".symtab"), sh_name(".strtab"), sh_name(".shstrtab")
    shstr_off = str_off + len(strtab)
    shoff = shstr_off + len(shstr)
    shoff += -shoff % 8

    nseg = len(img.segments)
    shdrs = [bytes(_SHDR.size)]
    for s, n, o in zip(img.segments, shstr_names, seg_offsets):
        flags = 2 | (1 if "w" in s.perms else 0) | (4 if s.executable else 0)
        shdrs.append(_SHDR.pack(n, SHT_PROGBITS, flags, s.base, o, len(s.data), 0, 0, 16, 0))
    shdrs.append(_SHDR.pack(n_symtab, SHT_SYMTAB, 0, 0, sym_off, len(syms), nseg + 2, 1, 8,
                            _SYM.size))
    shdrs.append(_SHDR.pack(n_strtab, SHT_STRTAB, 0, 0, str_off, len(strtab), 0, 0, 1, 0))
    shdrs.append(_SHDR.pack(n_shstr, SHT_STRTAB, 0, 0, shstr_off, len(shstr), 0, 0, 1, 0))

    ident = b"\x7fELF" + bytes([2, 1, 1, 0]) + bytes(8)
    ehdr = _EHDR.pack(ident, 2, EM_RISCV, 1, img.entry_hint or 0, phoff, shoff, 0x5,
                      _EHDR.size, _PHDR.size, nseg, _SHDR.size, len(shdrs), len(shdrs) - 1)
    phdrs = b"".join(
        _PHDR.pack(PT_LOAD, sum(bit for c, bit in (("r", PF_R), ("w", PF_W), ("x", PF_X))
                                if c in s.perms), o, s.base, s.base, len(s.data),
                   len(s.data), 0x10)
        for s, o in zip(img.segments, seg_offsets))
    out = bytearray(ehdr + phdrs)
    out += bytes(off - len(out))
    out += blob
    out += bytes(sym_off - len(out))
    out += syms + strtab + shstr
    out += bytes(shoff - len(out))
    out += b"".join(shdrs)
    return bytes(out)


def load_image(data: bytes, base: int | None = None) -> MemoryImage:
    """ELF when the magic is present, otherwise raw at ``base``."""
    if data[:4] == b"\x7fELF" or base is None:
        return load_elf(data)
    return load_raw(data, base)
