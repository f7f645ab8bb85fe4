"""Regenerates the 64x64 tile pair used by the data loader tests."""
from pathlib import Path

import numpy as np
from PIL import Image

here = Path(__file__).resolve().parent
rng = np.random.default_rng(7)

img = (rng.random((64, 64, 3)) * 255).astype(np.uint8)
Image.fromarray(img, "RGB").save(here / "tile_sat.png")

# RGB mask: a diagonal band in white plus a horizontal stripe drawn only in
# the red channel, so loaders must collapse channels by max.
mask = np.zeros((64, 64, 3), np.uint8)
yy, xx = np.mgrid[0:64, 0:64]
mask[np.abs(yy - xx) < 3] = 255
mask[30:33, :, 0] = 200
mask[10, 5] = (100, 100, 100)  # grey below threshold stays background
Image.fromarray(mask, "RGB").save(here / "tile_map.png")

positives = int((mask.max(axis=2) > 127).sum())
(here / "tile_positives.txt").write_text(f"{positives}\n")
print(positives)
