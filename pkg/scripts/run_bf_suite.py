"""Compile the bundled Brainfuck programs, run them in the emulator and
compare against the reference interpreter.

    python scripts/run_bf_suite.py [--only NAME] [--stdin TEXT]
"""

import argparse
import sys
import time

from rvrop import bf, catalog, chain, emulator, synth


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", choices=bf.EXAMPLES)
    ap.add_argument("--stdin", default="the quick brown fox\n",
                    help="input for the sort program")
    args = ap.parse_args()
    img, _ = synth.build_image()
    cat = catalog.build_catalog(img)
    failed = 0
    total = 0.0
    for name in [args.only] if args.only else bf.EXAMPLES:
        src = bf.example_source(name)
        stdin = args.stdin.encode() if name == "sort" else b""
        t0 = time.perf_counter()
        cc = bf.compile_program(src, cat)
        data = chain.serialize(cc.resolved)
        res = emulator.boot(img, data, stdin)
        dt = time.perf_counter() - t0
        total += dt
        ok = res.ok and res.output == bf.interpret(src, stdin).output
        failed += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name:<11} {len(data):>9} chain bytes "
              f"{res.steps:>11} instructions {dt:6.2f}s")
    print(f"total {total:.1f}s")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
