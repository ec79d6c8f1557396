"""Assemble randomized instructions with clang's RISC-V assembler.

Writes ``tests/data/isa_vectors.txt``: one ``<hex bytes> <assembly>`` line per
instruction.  Run once; the output is committed and used as a frozen oracle.
"""

import random
import subprocess
import sys
import tempfile
from pathlib import Path

from elftools.elf.elffile import ELFFile

R = ["zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2",
     "a3", "a4", "a5", "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9",
     "s10", "s11", "t3", "t4", "t5", "t6"]
P = ["s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5"]
NZ = R[1:]


def rnd_lines(rng: random.Random) -> list[tuple[str, bool]]:
    r = lambda: rng.choice(R)  # noqa: E731
    i12 = lambda: rng.randrange(-2048, 2048)  # noqa: E731
    out = []
    for mn in ["add", "sub", "sll", "slt", "sltu", "xor", "srl", "sra", "or", "and",
               "mul", "mulh", "mulhsu", "mulhu", "div", "divu", "rem", "remu", "addw",
               "subw", "sllw", "srlw", "sraw", "mulw", "divw", "divuw", "remw", "remuw"]:
        out.append((f"{mn} {r()}, {r()}, {r()}", False))
    for mn in ["addi", "slti", "sltiu", "xori", "ori", "andi", "addiw"]:
        out.append((f"{mn} {r()}, {r()}, {i12()}", False))
    for mn in ["slli", "srli", "srai"]:
        out.append((f"{mn} {r()}, {r()}, {rng.randrange(64)}", False))
    for mn in ["slliw", "srliw", "sraiw"]:
        out.append((f"{mn} {r()}, {r()}, {rng.randrange(32)}", False))
    for mn in ["lb", "lh", "lw", "ld", "lbu", "lhu", "lwu", "jalr"]:
        out.append((f"{mn} {r()}, {i12()}({r()})", False))
    for mn in ["sb", "sh", "sw", "sd"]:
        out.append((f"{mn} {r()}, {i12()}({r()})", False))
    for mn in ["beq", "bne", "blt", "bge", "bltu", "bgeu"]:
        out.append((f"{mn} {r()}, {r()}, {rng.randrange(-2048, 2048) * 2}", False))
    out.append((f"jal {r()}, {rng.randrange(-(1 << 19), 1 << 19) * 2}", False))
    out.append((f"lui {r()}, {rng.randrange(1 << 20):#x}", False))
    out.append((f"auipc {r()}, {rng.randrange(1 << 20):#x}", False))
    p = lambda: rng.choice(P)  # noqa: E731
    ci6 = lambda: rng.choice([x for x in range(-32, 32) if x])  # noqa: E731
    out += [
        (f"c.addi4spn {p()}, sp, {rng.randrange(1, 256) * 4}", True),
        (f"c.lw {p()}, {rng.randrange(32) * 4}({p()})", True),
        (f"c.ld {p()}, {rng.randrange(32) * 8}({p()})", True),
        (f"c.sw {p()}, {rng.randrange(32) * 4}({p()})", True),
        (f"c.sd {p()}, {rng.randrange(32) * 8}({p()})", True),
        (f"c.addi {rng.choice(NZ)}, {ci6()}", True),
        (f"c.addiw {rng.choice(NZ)}, {ci6()}", True),
        (f"c.li {rng.choice(NZ)}, {ci6()}", True),
        (f"c.addi16sp sp, {rng.choice([x for x in range(-32, 32) if x]) * 16}", True),
        (f"c.lui {rng.choice([x for x in NZ if x != 'sp'])}, "
         f"{rng.choice(list(range(1, 32)) + list(range(0xFFFE0, 0x100000))):#x}", True),
        (f"c.srli {p()}, {rng.randrange(1, 64)}", True),
        (f"c.srai {p()}, {rng.randrange(1, 64)}", True),
        (f"c.andi {p()}, {rng.randrange(-32, 32)}", True),
        (f"c.sub {p()}, {p()}", True), (f"c.xor {p()}, {p()}", True),
        (f"c.or {p()}, {p()}", True), (f"c.and {p()}, {p()}", True),
        (f"c.subw {p()}, {p()}", True), (f"c.addw {p()}, {p()}", True),
        (f"c.j {rng.randrange(-1024, 1024) * 2}", True),
        (f"c.beqz {p()}, {rng.randrange(-128, 128) * 2}", True),
        (f"c.bnez {p()}, {rng.randrange(-128, 128) * 2}", True),
        (f"c.slli {rng.choice(NZ)}, {rng.randrange(1, 64)}", True),
        (f"c.lwsp {rng.choice(NZ)}, {rng.randrange(64) * 4}(sp)", True),
        (f"c.ldsp {rng.choice(NZ)}, {rng.randrange(64) * 8}(sp)", True),
        (f"c.jr {rng.choice(NZ)}", True),
        (f"c.mv {rng.choice(NZ)}, {rng.choice(NZ)}", True),
        (f"c.jalr {rng.choice(NZ)}", True),
        (f"c.add {rng.choice(NZ)}, {rng.choice(NZ)}", True),
        (f"c.swsp {r()}, {rng.randrange(64) * 4}(sp)", True),
        (f"c.sdsp {r()}, {rng.randrange(64) * 8}(sp)", True),
    ]
    return out


def assemble_one(line: str, compressed: bool) -> bytes:
    src = (".option rvc\n" if compressed else ".option norvc\n") + line + "\n"
    with tempfile.TemporaryDirectory() as d:
        s, o = Path(d, "t.s"), Path(d, "t.o")
        s.write_text(src)
        subprocess.run(["clang", "--target=riscv64", "-march=rv64gc", "-c", str(s),
                        "-o", str(o)], check=True, capture_output=True)
        with open(o, "rb") as f:
            return ELFFile(f).get_section_by_name(".text").data()


def main(rounds: int = 8, seed: int = 2020) -> None:
    rng = random.Random(seed)
    lines = []
    fixed = [("c.ldsp ra, 8(sp)", True), ("c.addi sp, 16", True), ("c.jr ra", True),
             ("addi sp, sp, 16", False), ("jalr zero, 0(ra)", False),
             ("c.ldsp ra, 0x28(sp)", True), ("c.addi16sp sp, 0x30", True),
             ("c.ld a0, 8(a0)", True), ("c.add a0, a5", True),
             ("bne a4, a5, 0x1e", False), ("c.ebreak", True), ("ecall", False),
             ("ebreak", False)]
    for _ in range(rounds):
        fixed += rnd_lines(rng)
    for line, comp in fixed:
        lines.append(f"{assemble_one(line, comp).hex()} {line}")
    out = Path(__file__).resolve().parents[1] / "tests" / "data" / "isa_vectors.txt"
    out.parent.mkdir(exist_ok=True)
    out.write_text("# bytes(hex) assembly -- produced by clang --target=riscv64\n"
                   + "\n".join(lines) + "\n")
    print(f"wrote {len(lines)} vectors to {out}", file=sys.stderr)


if __name__ == "__main__":
    main()
