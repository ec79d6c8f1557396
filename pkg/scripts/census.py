"""Gadget census and role coverage for an image (the synthetic one by default).

    python scripts/census.py [IMAGE] [--image-base ADDR] [--sweep linear|symbols]
"""

import argparse
from pathlib import Path

from rvrop import catalog, image, scanner, synth


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("image", nargs="?", type=Path)
    ap.add_argument("--image-base", type=lambda s: int(s, 0))
    ap.add_argument("--sweep", choices=("linear", "symbols"), default="linear")
    ap.add_argument("--max-window", type=int, default=scanner.DEFAULT_WINDOW)
    args = ap.parse_args()
    if args.image is None:
        img, _ = synth.build_image()
    else:
        img = image.load_image(args.image.read_bytes(), args.image_base)
    gadgets = scanner.scan(img, args.max_window)
    c = scanner.census(img, gadgets, sweep=args.sweep)
    print(f"chainable gadgets: {c.total}")
    print(f"unintended:        {c.unintended}")
    for e in c.unintended_entries:
        print(f"  {e:#x}")
    cat = catalog.build_catalog(img, gadgets, scanner.scan_pivots(img, args.max_window))
    for role in scanner.ROLE_KINDS:
        n = sum(e.role == role for e in cat.entries)
        print(f"{role:<16} {n}")
    missing = cat.missing()
    print("missing roles: " + (", ".join(missing) if missing else "none"))


if __name__ == "__main__":
    main()
