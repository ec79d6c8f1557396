"""Symbolic 64-bit expressions over initial register values.

Values are unsigned 64-bit integers throughout; signed operations reinterpret.
This evaluator is written independently of the emulator's code generator so
that summaries can be checked against concrete execution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

M64 = (1 << 64) - 1
M32 = (1 << 32) - 1


def _s64(v: int) -> int:
    v &= M64
    return v - (1 << 64) if v >> 63 else v


def _s32(v: int) -> int:
    v &= M32
    return v - (1 << 32) if v >> 31 else v


def _w(v: int) -> int:
    """Sign-extend the low word to 64 bits (the *W instructions' result rule)."""
    return _s32(v) & M64


def _div(a: int, b: int) -> int:
    a, b = _s64(a), _s64(b)
    if b == 0:
        return M64
    if a == -(1 << 63) and b == -1:
        return a & M64
    q = abs(a) // abs(b)
    return (q if (a < 0) == (b < 0) else -q) & M64


def _rem(a: int, b: int) -> int:
    sa, sb = _s64(a), _s64(b)
    if sb == 0:
        return a & M64
    if sa == -(1 << 63) and sb == -1:
        return 0
    r = abs(sa) % abs(sb)
    return (-r if sa < 0 else r) & M64


def _divw(a: int, b: int) -> int:
    a, b = _s32(a), _s32(b)
    if b == 0:
        return M64
    if a == -(1 << 31) and b == -1:
        return _w(a)
    q = abs(a) // abs(b)
    return _w(q if (a < 0) == (b < 0) else -q)


def _remw(a: int, b: int) -> int:
    sa, sb = _s32(a), _s32(b)
    if sb == 0:
        return _w(sa)
    if sa == -(1 << 31) and sb == -1:
        return 0
    r = abs(sa) % abs(sb)
    return _w(-r if sa < 0 else r)


OPS: dict[str, Callable[[int, int], int]] = {
    "add": lambda a, b: (a + b) & M64,
    "sub": lambda a, b: (a - b) & M64,
    "sll": lambda a, b: (a << (b & 63)) & M64,
    "srl": lambda a, b: (a & M64) >> (b & 63),
    "sra": lambda a, b: (_s64(a) >> (b & 63)) & M64,
    "slt": lambda a, b: int(_s64(a) < _s64(b)),
    "sltu": lambda a, b: int((a & M64) < (b & M64)),
    "xor": lambda a, b: (a ^ b) & M64,
    "or": lambda a, b: (a | b) & M64,
    "and": lambda a, b: a & b & M64,
    "mul": lambda a, b: (a * b) & M64,
    "mulh": lambda a, b: ((_s64(a) * _s64(b)) >> 64) & M64,
    "mulhsu": lambda a, b: ((_s64(a) * (b & M64)) >> 64) & M64,
    "mulhu": lambda a, b: ((a & M64) * (b & M64)) >> 64,
    "div": _div,
    "divu": lambda a, b: M64 if b & M64 == 0 else (a & M64) // (b & M64),
    "rem": _rem,
    "remu": lambda a, b: a & M64 if b & M64 == 0 else (a & M64) % (b & M64),
    "addw": lambda a, b: _w(a + b),
    "subw": lambda a, b: _w(a - b),
    "sllw": lambda a, b: _w(a << (b & 31)),
    "srlw": lambda a, b: _w((a & M32) >> (b & 31)),
    "sraw": lambda a, b: _w(_s32(a) >> (b & 31)),
    "mulw": lambda a, b: _w(a * b),
    "divw": _divw,
    "divuw": lambda a, b: M64 if b & M32 == 0 else _w((a & M32) // (b & M32)),
    "remw": _remw,
    "remuw": lambda a, b: _w(a) if b & M32 == 0 else _w((a & M32) % (b & M32)),
}

CONDS: dict[str, Callable[[int, int], bool]] = {
    "eq": lambda a, b: a & M64 == b & M64,
    "ne": lambda a, b: a & M64 != b & M64,
    "lt": lambda a, b: _s64(a) < _s64(b),
    "ge": lambda a, b: _s64(a) >= _s64(b),
    "ltu": lambda a, b: a & M64 < b & M64,
    "geu": lambda a, b: a & M64 >= b & M64,
}
NEGATE = {"eq": "ne", "ne": "eq", "lt": "ge", "ge": "lt", "ltu": "geu", "geu": "ltu"}


@dataclass(frozen=True)
class Const:
    value: int

    def __str__(self) -> str:
        v = _s64(self.value)
        return str(v) if -10 < v < 10 else (f"-{-v:#x}" if v < 0 else f"{v:#x}")


@dataclass(frozen=True)
class Sym:
    """Initial value of a register."""

    name: str

    def __str__(self) -> str:
        return f"{self.name}0"


@dataclass(frozen=True)
class Load:
    addr: "Expr"
    width: int
    signed: bool = True

    def __str__(self) -> str:
        return f"mem{self.width * 8}[{self.addr}]"


@dataclass(frozen=True)
class Op:
    op: str
    args: tuple

    def __str__(self) -> str:
        if self.op in ("add", "sub") and len(self.args) == 2:
            a, b = self.args
            if isinstance(b, Const) and _s64(b.value) < 0 and self.op == "add":
                return f"({a} - {Const(-_s64(b.value) & M64)})"
            return f"({a} {'+' if self.op == 'add' else '-'} {b})"
        return f"{self.op}({', '.join(map(str, self.args))})"


@dataclass(frozen=True)
class CallResult:
    """Value of ``reg`` after the ``call``-th call made by the gadget."""

    call: int
    reg: str

    def __str__(self) -> str:
        return f"call{self.call}.{self.reg}"


Expr = Union[Const, Sym, Load, Op, CallResult]


def const(v: int) -> Const:
    return Const(v & M64)


def binop(op: str, a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(OPS[op](a.value, b.value))
    if op == "add":
        if isinstance(a, Const):
            a, b = b, a
        if isinstance(b, Const):
            if b.value == 0:
                return a
            if isinstance(a, Op) and a.op == "add" and isinstance(a.args[1], Const):
                return binop("add", a.args[0], Const((a.args[1].value + b.value) & M64))
    if op == "sub" and isinstance(b, Const):
        return binop("add", a, Const(-b.value & M64))
    if op in ("or", "xor") and isinstance(b, Const) and b.value == 0:
        return a
    if op in ("sll", "srl", "sra") and isinstance(b, Const) and b.value & 63 == 0:
        return a
    return Op(op, (a, b))


def split_offset(e: Expr) -> tuple[Expr, int]:
    """Return ``(base, k)`` with ``e == base + k``."""
    if isinstance(e, Op) and e.op == "add" and isinstance(e.args[1], Const):
        return e.args[0], _s64(e.args[1].value)
    if isinstance(e, Const):
        return Const(0), _s64(e.value)
    return e, 0


@dataclass
class Env:
    regs: dict[str, int]
    load: Callable[[int, int, bool], int]
    call_results: list[dict[str, int]] | None = None


def evaluate(e: Expr, env: Env) -> int:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Sym):
        return env.regs[e.name] & M64
    if isinstance(e, Load):
        return env.load(evaluate(e.addr, env), e.width, e.signed) & M64
    if isinstance(e, Op):
        return OPS[e.op](*(evaluate(a, env) for a in e.args))
    if isinstance(e, CallResult):
        if env.call_results is None:
            raise ValueError("expression depends on a call result but no call model given")
        return env.call_results[e.call][e.reg] & M64
    raise TypeError(f"not an expression: {e!r}")


def load_from(read: Callable[[int, int], bytes]) -> Callable[[int, int, bool], int]:
    def load(addr: int, width: int, signed: bool) -> int:
        v = int.from_bytes(read(addr, width), "little")
        if signed and v >> (width * 8 - 1):
            v -= 1 << (width * 8)
        return v & M64
    return load


def free_regs(e: Expr) -> set[str]:
    if isinstance(e, Sym):
        return {e.name}
    if isinstance(e, Load):
        return free_regs(e.addr)
    if isinstance(e, Op):
        out: set[str] = set()
        for a in e.args:
            out |= free_regs(a)
        return out
    return set()
