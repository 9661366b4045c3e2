#!/usr/bin/env python3
"""Write the bundled demo assets (models, inputs, a training dataset) as JSON
files under demo/, ready for the CLI and the workbench service."""

import argparse
import json
from pathlib import Path

from attrql.demo import (
    acceptance_input,
    acceptance_mlp,
    blobs_dataset,
    image_demo_model,
    spiky_image,
)
from attrql.runtime import Dataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo", help="output directory")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    images = Dataset(
        tuple(spiky_image(seed=s, side=8) for s in range(12)),
        tuple(s % 2 for s in range(12)),
    )
    assets = {
        "mlp.json": acceptance_mlp(0).to_dict(),
        "mlp_alt.json": acceptance_mlp(1).to_dict(),
        "input.json": acceptance_input(0).to_dict(),
        "input_alt.json": acceptance_input(1).to_dict(),
        "conv.json": image_demo_model(seed=0, side=8).to_dict(),
        "image.json": spiky_image(seed=0, side=8).to_dict(),
        "image_alt.json": spiky_image(seed=4, side=8).to_dict(),
        "blobs6.json": blobs_dataset(
            seed=3, n_per_class=80, centers=((2.0,) * 6, (-2.0,) * 6), sigma=0.8
        ).to_dict(),
        "images.json": images.to_dict(),
    }
    for name, payload in assets.items():
        (out / name).write_text(json.dumps(payload))
        print(f"wrote {out / name}")


if __name__ == "__main__":
    main()
