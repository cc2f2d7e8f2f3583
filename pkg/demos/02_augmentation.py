"""Expanding a training set: original, sheared and rotated copies, each cut
into four tiles, blurred and resized.

Run: python3 demos/02_augmentation.py [output_dir]
"""

import sys
import tempfile
from pathlib import Path

from pcbview import PKU_CLASSES, AugmentSpec, build_contrast_dataset, build_shear_rotate_dataset, tile_2x2
from pcbview.dataset import write_dataset
from pcbview.synthetic import make_boards

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="pcbview-demo-"))

boards = make_boards(4, seed=3)
print(f"{len(boards)} synthetic boards, {sum(len(b.labels) for b in boards)} defects")

# One image, tiled on its own: a label crossing a tile border may land in two tiles.
tiles = tile_2x2(boards[0])
print("labels per tile of", boards[0].source_id, [len(t.labels) for t in tiles])

# The full expansion: 3 variants x 4 tiles = 12 outputs per input.
spec = AugmentSpec(output_size=128, seed=7)
train = build_shear_rotate_dataset(boards, spec)
print(f"\ntrain expansion: {len(boards)} -> {len(train)} tiles of {train[0].image.shape}")
first = train[4]
print("one record:", first.source_id, {k: first.provenance[k] for k in sorted(first.provenance) if k != "matrix"})

# Same seed, same bytes.
again = build_shear_rotate_dataset(boards, spec)
print("rerun identical:", all((a.image == b.image).all() and a.labels == b.labels for a, b in zip(train, again)))

# The shifted test set replaces each image with one transformed copy.
contrast = build_contrast_dataset(boards, shear=0.06, rotate=10, seed=7)
for li in contrast:
    p = li.provenance
    what = f"shear {p['shear']}" if p["variant"] == "shear" else f"rotate {p['rotate_deg']:.2f} deg"
    print(f"  {li.source_id}: {what}, {len(li.labels)} labels")

write_dataset(train, out_dir / "train", PKU_CLASSES, split="train")
write_dataset(contrast, out_dir / "contrast", PKU_CLASSES, split="test")
print("\nwrote", out_dir)
