"""Build a small static RV64 ELF with clang and lld for the loader tests.

Writes ``tests/data/clang_sample.elf``.  Run once; the output is committed so
the tests do not need a cross toolchain.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

SOURCE = """
long table[4] = {1, 2, 3, 4};
const char msg[] = "hello";
long f(long x) { return x + table[x & 3]; }
void _start(void) { for (;;) f(3); }
"""


def main(out: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        src = Path(tmp) / "sample.c"
        src.write_text(SOURCE)
        subprocess.run(["clang", "--target=riscv64", "-march=rv64gc", "-O1", "-nostdlib",
                        "-fuse-ld=lld", "-static", "-o", str(out), str(src)], check=True)
    print(f"wrote {out}")


if __name__ == "__main__":
    root = Path(__file__).resolve().parent.parent
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else root / "tests" / "data" / "clang_sample.elf")
