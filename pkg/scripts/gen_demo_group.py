#!/usr/bin/env python3
"""Regenerate the bundled demo group under data/demo/.

Writes four 32x32 frames of a drifting bright rectangle, their masks, a
constant-translation displacement field, and two manifests: one that selects
rectangle-remapped positions (no field) and one that selects the field-warped
path. Everything is seeded, so reruns reproduce the same bytes.
"""

import argparse
from pathlib import Path

import numpy as np

from grouprope.formats import GroupManifest, to_uint8, write_field, write_manifest, write_pgm, write_ppm
from grouprope.ge_rope import DisplacementField
from grouprope.synthetic import synth_group_images

SEED = 7
N_FRAMES = 4
SIZE = 32


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out", default=Path(__file__).resolve().parent.parent / "data" / "demo"
    )
    out = Path(parser.parse_args().out)
    out.mkdir(parents=True, exist_ok=True)

    images, masks, offsets = synth_group_images(SEED, N_FRAMES, SIZE, SIZE)
    image_names, mask_names, captions = [], [], []
    for t in range(N_FRAMES):
        image_names.append(f"frame_{t:03d}.ppm")
        mask_names.append(f"mask_{t:03d}.pgm")
        captions.append(f"bright square at row {offsets[t][0]} col {offsets[t][1]}")
        write_ppm(out / image_names[-1], to_uint8(images[t].transpose(1, 2, 0)))
        write_pgm(out / mask_names[-1], to_uint8(masks[t]))

    # constant 4-pixel down-right translation; one token cell after preparation
    field = DisplacementField(np.full((SIZE, SIZE), 4.0), np.full((SIZE, SIZE), 4.0))
    write_field(out / "field.gedf", field)

    common = dict(
        images=tuple(image_names),
        masks=tuple(mask_names),
        captions=tuple(captions),
        theta=10000.0,
        d_t=8,
        d_h=12,
        d_w=12,
        r=2,
        channels=12,
        p_t=1,
        p_h=2,
        p_w=2,
        schedule="linear",
        n_steps=8,
        seed=SEED,
    )
    write_manifest(out / "demo.manifest", GroupManifest(group="demo", **common))
    write_manifest(
        out / "demo_field.manifest",
        GroupManifest(group="demo_field", field="field.gedf", **common),
    )
    print(f"wrote demo group to {out}")


if __name__ == "__main__":
    main()
