"""Write the synthetic gadget image, its manifest and its catalog.

    python scripts/build_image.py OUTDIR [--seed N]
"""

import argparse
from pathlib import Path

from rvrop import catalog, image, synth


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", type=Path)
    ap.add_argument("--seed", type=int, help="shuffle the planted pieces")
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)
    img, man = synth.build_image(synth.SynthConfig(shuffle_seed=args.seed))
    (args.outdir / "synthetic.elf").write_bytes(image.write_elf(img))
    (args.outdir / "synthetic.manifest").write_text(man.to_text())
    (args.outdir / "synthetic.catalog").write_text(catalog.build_catalog(img).to_text())
    print(f"wrote synthetic.elf, .manifest and .catalog to {args.outdir}")


if __name__ == "__main__":
    main()
