"""Gadget catalogs: role bindings handed from the scanner to the chain builder.

Text form, one binding per line::

    ROLE entry a b key=value ...
    CONST addr value
    FUNC name addr

Register maps are written ``reg:off,reg:off``.  Lines starting with ``#``
are comments.  Within a role, earlier lines are preferred.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .image import MemoryImage
from .scanner import ROLE_KINDS, Gadget, GadgetRole, PivotGadget, classify, scan, scan_pivots

FUNCTIONS = ("putchar", "getchar", "exit")
REQUIRED = ("NOP", "POP", "READMEM", "WRITEMEM", "ADD1", "SUB1", "CALL_JALR_A5",
            "BRANCH_UNCOND", "COND_BRANCH")


class IncompleteCatalog(ValueError):
    def __init__(self, role: str, detail: str = ""):
        super().__init__(f"catalog has no usable {role} gadget{': ' + detail if detail else ''}")
        self.role = role


class CatalogSyntaxError(ValueError):
    pass


def fmt_regmap(m: dict[str, int]) -> str:
    return ",".join(f"{r}:{off:#x}" for r, off in m.items()) or "-"


def parse_regmap(s: str) -> dict[str, int]:
    if s in ("", "-"):
        return {}
    out = {}
    for part in s.split(","):
        r, _, off = part.partition(":")
        out[r] = int(off, 0)
    return out


@dataclass(frozen=True)
class CatalogEntry:
    role: str
    entry: int
    a: int
    b: int
    params: dict = field(default_factory=dict, hash=False)

    @property
    def pops(self) -> dict[str, int]:
        return parse_regmap(self.params.get("pops", "-"))

    def int_param(self, key: str) -> int:
        return int(self.params[key], 0)

    def regmap(self, key: str) -> dict[str, int]:
        return parse_regmap(self.params.get(key, "-"))

    def to_line(self) -> str:
        kv = " ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.role} {self.entry:#x} {self.a:#x} {self.b:#x}" + (f" {kv}" if kv else "")


@dataclass
class GadgetCatalog:
    entries: list[CatalogEntry] = field(default_factory=list)
    constants: list[tuple[int, int]] = field(default_factory=list)
    functions: dict[str, int] = field(default_factory=dict)

    def find(self, role: str, **want: str) -> list[CatalogEntry]:
        return [e for e in self.entries if e.role == role
                and all(e.params.get(k) == v for k, v in want.items())]

    def first(self, role: str, **want: str) -> CatalogEntry:
        got = self.find(role, **want)
        if not got:
            detail = " ".join(f"{k}={v}" for k, v in want.items())
            raise IncompleteCatalog(role, detail)
        return got[0]

    def pops_for(self, reg: str) -> list[CatalogEntry]:
        return [e for e in self.entries if e.role == "POP" and reg in e.pops]

    def missing(self) -> list[str]:
        """Required roles with no entry at all, in the canonical order."""
        have = {e.role for e in self.entries}
        return [r for r in REQUIRED if r not in have]

    def to_text(self) -> str:
        lines = ["# role entry a b params"]
        lines += [e.to_line() for e in self.entries]
        lines += [f"CONST {addr:#x} {value:#x}" for addr, value in self.constants]
        lines += [f"FUNC {name} {addr:#x}" for name, addr in self.functions.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GadgetCatalog":
        cat = cls()
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#")[0].strip()
            if not line:
                continue
            f = line.split()
            try:
                if f[0] == "CONST":
                    cat.constants.append((int(f[1], 0), int(f[2], 0)))
                elif f[0] == "FUNC":
                    cat.functions[f[1]] = int(f[2], 0)
                elif f[0] in ROLE_KINDS:
                    params = dict(kv.split("=", 1) for kv in f[4:])
                    cat.entries.append(CatalogEntry(f[0], int(f[1], 0), int(f[2], 0),
                                                    int(f[3], 0), params))
                else:
                    raise CatalogSyntaxError(f"line {n}: unknown record {f[0]!r}")
            except (IndexError, ValueError) as exc:
                if isinstance(exc, CatalogSyntaxError):
                    raise
                raise CatalogSyntaxError(f"line {n}: {exc}") from None
        return cat


def _params(role: GadgetRole) -> dict[str, str]:
    b = role.binding
    k = role.kind
    if k in ("NOP",):
        return {}
    if k == "POP":
        return {"pops": fmt_regmap(b["pops"])}
    if k in ("ADD1", "SUB1"):
        return {"reg": b["reg"], "pops": fmt_regmap(b["pops"])}
    if k == "MOV_SP":
        return {"reg": b["reg"], "offset": f"{b['offset']:#x}", "pops": fmt_regmap(b["pops"])}
    if k == "READMEM":
        guards = "/".join(f"{g['pop']}:{g['pop_off']:#x}:{g['mem_reg']}:{g['mem_disp']:#x}"
                          for g in b["guards"]) or "-"
        return {"dst": b["dst"], "addr": b["addr"], "disp": f"{b['disp']:#x}",
                "addends": ",".join(b["addends"]) or "-", "guards": guards,
                "pops": fmt_regmap(b["pops"]), "clobbers": ",".join(b["clobbers"]) or "-"}
    if k == "WRITEMEM":
        return {"addr": b["addr"], "disp": f"{b['disp']:#x}", "value": b["value"],
                "pops": fmt_regmap(b["pops"])}
    if k == "CALL_JALR_A5":
        return {"target": b["target"], "pops": fmt_regmap(b["pops"]),
                "keeps_a0": str(int(b["keeps_a0"]))}
    if k == "COND_BRANCH":
        z, nz = b["zero"], b["nonzero"]
        return {"reg": b["reg"], "disp": f"{b['disp']:#x}",
                "z_a": f"{z['a']:#x}", "z_pops": fmt_regmap(z["pops"]),
                "nz_a": f"{nz['a']:#x}", "nz_pops": fmt_regmap(nz["pops"])}
    if k == "BRANCH_UNCOND":
        return {"base": b["base"], "ra_off": f"{b['ra_off']:#x}",
                "sp_off": f"{b['sp_off']:#x}", "clobbers": ",".join(b["clobbers"]) or "-"}
    raise ValueError(k)


def _cost(e: CatalogEntry) -> tuple:
    # fewer stack words first, then fewer popped registers, then address
    return (e.b, len(e.pops), e.entry)


def build_catalog(img: MemoryImage, gadgets: list[Gadget] | None = None,
                  pivots: list[PivotGadget] | None = None) -> GadgetCatalog:
    """Classify every gadget and collect constants and host functions."""
    if gadgets is None:
        gadgets = scan(img)
    if pivots is None:
        pivots = scan_pivots(img)
    entries = []
    for g in list(gadgets) + list(pivots):
        for role in classify(g, img):
            a = g.a if isinstance(g, Gadget) else 0
            b = g.b if isinstance(g, Gadget) else 0
            params = _params(role)
            if getattr(g, "unintended_entry", False):
                params["unintended"] = "1"
            entries.append(CatalogEntry(role.kind, g.entry, a, b, params))
    entries.sort(key=lambda e: (ROLE_KINDS.index(e.role), _cost(e)))
    constants = []
    for seg in img.segments:
        if "r" in seg.perms and not seg.executable and "w" not in seg.perms:
            off = -seg.base % 8
            if off + 8 <= len(seg.data):
                constants.append((seg.base + off,
                                  int.from_bytes(seg.data[off:off + 8], "little")))
                break
    functions = {n: img.symbols[n] for n in FUNCTIONS if n in img.symbols}
    return GadgetCatalog(entries, constants, functions)
