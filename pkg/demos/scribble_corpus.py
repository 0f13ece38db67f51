"""Generate a few synthetic scenes, their scribbles, corrupted scribbles and
SLIC pseudo-boundaries, and write them as PNGs for a look.

Run with ``python3 demos/scribble_corpus.py [out_dir]``.
"""
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from scribbleseg import scribbledata as sd
from scribbleseg.boundaries import boundary_mask, slic

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_corpus")
out.mkdir(parents=True, exist_ok=True)

# Class colours for the label and scribble overlays; 255 (unlabelled) stays black.
palette = np.zeros((256, 3), dtype=np.uint8)
palette[:4] = [[90, 90, 90], [230, 60, 60], [60, 200, 60], [60, 90, 230]]

for seed in range(4):
    image, labels = sd.generate_scene(sd.SceneSpec(seed, n_objects=3))
    scribbles = sd.scribble_from_mask(labels, seed)
    print(f"scene {seed}: classes {sorted(set(np.unique(labels)))}, "
          f"{len(scribbles.strokes)} strokes covering {np.mean(scribbles.labels != 255):.1%} of pixels")

    # Corruptions: drop whole objects, or shrink every stroke to a spot.
    dropped = sd.drop_scribbles(scribbles, 0.5, seed)
    spots = sd.shrink_scribbles(scribbles, 1.0, seed, fixed=True)

    # Pseudo-boundaries: edges between SLIC superpixels, widened by one pixel.
    sp = slic(image)
    bnd = boundary_mask(sp, dilation=1)
    print(f"  {sp.n_segments} superpixels, {bnd.mean():.0%} of pixels marked as boundary")

    tiles = [sd.to_uint8(image), palette[labels], palette[scribbles.labels], palette[dropped.labels],
             palette[spots.labels], np.repeat(bnd[..., None] * 255, 3, -1).astype(np.uint8)]
    Image.fromarray(np.concatenate(tiles, axis=1)).resize((6 * 128, 128), Image.NEAREST).save(out / f"scene_{seed}.png")

print("wrote", out.resolve())
