"""Command-line entry point: ``rvrop <subcommand> ...``.

Exit codes:
  0   success (for ``run``: the chain's own exit status is passed through)
  1   an input file could not be loaded, or the arguments are invalid
  2   unbalanced bracket in the Brainfuck source
  3   the gadget catalog lacks a required role
  10  the emulated chain trapped
  11  the step limit was reached
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import bf, catalog, chain, emulator, image, scanner, synth

EXIT_LOAD = 1
EXIT_BRACKET = 2
EXIT_CATALOG = 3
EXIT_TRAP = 10
EXIT_STEP_LIMIT = 11

EPILOG = """exit codes:
  0   success; `run` passes the chain's exit status through
  1   input file could not be loaded, or invalid arguments
  2   unbalanced bracket in the Brainfuck source
  3   catalog lacks a required gadget role
  10  emulated chain trapped
  11  step limit reached
"""


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def parse_addr(text: str) -> int:
    """Hex with a 0x prefix, or decimal."""
    try:
        return int(text, 16) if text.lower().startswith("0x") else int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an address: {text!r}") from None


def parse_base_sp(text: str) -> int:
    v = parse_addr(text)
    if v % 16:
        raise argparse.ArgumentTypeError(f"base sp {v:#x} is not 16-byte aligned")
    return v


@dataclass
class CliConfig:
    subcommand: str
    inputs: list[Path] = field(default_factory=list)
    image_base: int | None = None
    base_sp: int = bf.CompileConfig.base_sp
    max_window: int = scanner.DEFAULT_WINDOW
    max_steps: int = emulator.DEFAULT_MAX_STEPS
    tape_cells: int = bf.TapeConfig.cell_count
    output: Path | None = None
    listing: Path | None = None
    trace: Path | None = None
    stdin: Path | None = None
    fmt: str = "text"
    strict: bool = False

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "CliConfig":
        cfg = cls(ns.cmd)
        for name in ("image_base", "base_sp", "max_window", "max_steps", "tape_cells",
                     "listing", "trace", "stdin", "fmt", "strict"):
            if getattr(ns, name, None) is not None:
                setattr(cfg, name, getattr(ns, name))
        cfg.output = getattr(ns, "output", None)
        cfg.inputs = [p for p in (getattr(ns, k, None) for k in ("image", "source", "chain")) if p]
        return cfg


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise CliError(EXIT_LOAD, f"cannot read {path}: {exc.strerror}") from None


def _load_image(path: Path, base: int | None) -> image.MemoryImage:
    try:
        return image.load_image(_read(path), base)
    except image.ImageError as exc:
        raise CliError(EXIT_LOAD, f"cannot load image {path}: {exc}") from None


def _load_catalog(path: Path) -> catalog.GadgetCatalog:
    try:
        return catalog.GadgetCatalog.from_text(_read(path).decode())
    except (catalog.CatalogSyntaxError, UnicodeDecodeError) as exc:
        raise CliError(EXIT_LOAD, f"cannot load catalog {path}: {exc}") from None


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def cmd_scan(cfg: CliConfig) -> int:
    img = _load_image(cfg.inputs[0], cfg.image_base)
    gadgets = scanner.scan(img, cfg.max_window)
    if cfg.fmt == "catalog":
        cat = catalog.build_catalog(img, gadgets, scanner.scan_pivots(img, cfg.max_window))
        _emit(cat.to_text(), cfg.output)
        return 0
    lines = ["# entry a b unintended summary"]
    for g in gadgets:
        lines.append(f"{g.entry:#x} {g.a:#x} {g.b:#x} {int(g.unintended_entry)} "
                     f"{g.summary.digest()}")
    c = scanner.census(img, gadgets)
    lines.append(f"# total {c.total} unintended {c.unintended}")
    _emit("\n".join(lines) + "\n", cfg.output)
    return 0


def cmd_stats(cfg: CliConfig) -> int:
    img = _load_image(cfg.inputs[0], cfg.image_base)
    gadgets = scanner.scan(img, cfg.max_window)
    c = scanner.census(img, gadgets)
    cat = catalog.build_catalog(img, gadgets, scanner.scan_pivots(img, cfg.max_window))
    counts: dict[str, int] = {}
    for e in cat.entries:
        counts[e.role] = counts.get(e.role, 0) + 1
    lines = [f"total {c.total}", f"unintended {c.unintended}"]
    lines += [f"unintended_entry {e:#x}" for e in c.unintended_entries]
    lines += [f"role {r} {counts.get(r, 0)}" for r in scanner.ROLE_KINDS]
    missing = cat.missing()
    lines.append("missing " + (",".join(missing) if missing else "-"))
    _emit("\n".join(lines) + "\n", cfg.output)
    return 0


def cmd_catalog(cfg: CliConfig) -> int:
    cfg.fmt = "catalog"
    return cmd_scan(cfg)


def cmd_compile(cfg: CliConfig, catalog_path: Path) -> int:
    try:
        src = _read(cfg.inputs[0]).decode("latin-1")
        prog = bf.parse(src)
    except bf.UnbalancedBracket as exc:
        raise CliError(EXIT_BRACKET, f"{cfg.inputs[0]}: {exc}") from None
    cat = _load_catalog(catalog_path)
    try:
        cc = bf.compile_program(prog, cat, bf.TapeConfig(cell_count=cfg.tape_cells),
                                bf.CompileConfig(base_sp=cfg.base_sp))
    except catalog.IncompleteCatalog as exc:
        raise CliError(EXIT_CATALOG, f"incomplete catalog: missing {exc.role} ({exc})") from None
    out = cfg.output or cfg.inputs[0].with_suffix(".chain")
    out.write_bytes(chain.serialize(cc.resolved))
    if cfg.listing is not None:
        cfg.listing.write_text(chain.listing(cc.resolved))
    print(f"wrote {out} ({len(cc.resolved.words) * 8} chain bytes, "
          f"{len(cc.program.frames)} frames)", file=sys.stderr)
    return 0


def cmd_run(cfg: CliConfig) -> int:
    img = _load_image(cfg.inputs[0], cfg.image_base)
    try:
        binary = chain.deserialize(_read(cfg.inputs[1]))
    except chain.BadChainFile as exc:
        raise CliError(EXIT_LOAD, f"cannot load chain {cfg.inputs[1]}: {exc}") from None
    stdin = _read(cfg.stdin) if cfg.stdin is not None else b""
    mode = "full" if cfg.trace is not None else "off"
    res = emulator.boot(img, binary, stdin,
                        emulator.BootConfig(cfg.max_steps, cfg.strict, mode))
    sys.stdout.buffer.write(res.output)
    sys.stdout.flush()
    if cfg.trace is not None:
        cfg.trace.write_text("".join(f"{ev}\n" for ev in res.trace or ()))
    if res.trap is not None:
        t = res.trap
        where = f" faulting address {t.addr:#x}" if t.addr is not None else ""
        print(f"trap: {t}{where}", file=sys.stderr)
        return EXIT_TRAP
    if res.step_limit:
        print(f"step limit reached after {res.steps} instructions", file=sys.stderr)
        return EXIT_STEP_LIMIT
    return res.exit_status or 0


def cmd_build_image(out: Path, manifest: Path | None, seed: int | None) -> int:
    img, man = synth.build_image(synth.SynthConfig(shuffle_seed=seed))
    out.write_bytes(image.write_elf(img))
    (manifest or out.with_suffix(".manifest")).write_text(man.to_text())
    return 0


class _Parser(argparse.ArgumentParser):
    # usage errors share code 1 so that 2 stays reserved for bracket errors
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_LOAD, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rvrop", description="RISC-V ROP chain toolkit",
                                epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def image_args(sp):
        sp.add_argument("image", type=Path)
        sp.add_argument("--image-base", type=parse_addr,
                        help="load address for raw (non-ELF) images")
        sp.add_argument("--max-window", type=int)
        sp.add_argument("-o", "--output", type=Path)

    s = sub.add_parser("scan", help="list chainable gadgets", epilog=EPILOG)
    image_args(s)
    s.add_argument("--format", dest="fmt", choices=("text", "catalog"), default="text")
    image_args(sub.add_parser("catalog", help="write a gadget catalog", epilog=EPILOG))
    image_args(sub.add_parser("stats", help="gadget census and role counts", epilog=EPILOG))

    c = sub.add_parser("compile", help="compile Brainfuck to a chain", epilog=EPILOG)
    c.add_argument("source", type=Path)
    c.add_argument("--catalog", type=Path, required=True)
    c.add_argument("--base-sp", type=parse_base_sp)
    c.add_argument("--tape-cells", type=int)
    c.add_argument("-o", "--output", type=Path)
    c.add_argument("--listing", type=Path)

    r = sub.add_parser("run", help="run a chain in the emulator", epilog=EPILOG)
    r.add_argument("image", type=Path)
    r.add_argument("chain", type=Path)
    r.add_argument("--image-base", type=parse_addr)
    r.add_argument("--stdin", type=Path)
    r.add_argument("--max-steps", type=int)
    r.add_argument("--trace", type=Path)
    r.add_argument("--strict", action="store_true", default=None,
                   help="trap when sp is not 16-byte aligned at a return")

    b = sub.add_parser("build-image", help="write the synthetic test image", epilog=EPILOG)
    b.add_argument("-o", "--output", type=Path, required=True)
    b.add_argument("--manifest", type=Path)
    b.add_argument("--seed", type=int)
    return p


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    cfg = CliConfig.from_args(ns)
    try:
        if ns.cmd == "scan":
            return cmd_scan(cfg)
        if ns.cmd == "catalog":
            return cmd_catalog(cfg)
        if ns.cmd == "stats":
            return cmd_stats(cfg)
        if ns.cmd == "compile":
            return cmd_compile(cfg, ns.catalog)
        if ns.cmd == "run":
            return cmd_run(cfg)
        return cmd_build_image(ns.output, ns.manifest, ns.seed)
    except CliError as exc:
        print(f"rvrop: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
