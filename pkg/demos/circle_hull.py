"""Compute the hull of the circle |z| = 1/2 through the command line.

Writes a disc grid and the one-cell-wide circle mask to a scratch
directory, runs `pshkit hull` with the radial oracle enabled, and shows
the report: the hull fills the circle in to the full disc |z| <= 1/2.
"""

import os
import tempfile

import numpy as np

from pshkit.cli import run
from pshkit.grid import INTERIOR, build_disc_domain, read_label_file, write_mask

h = 1.0 / 64
work = tempfile.mkdtemp(prefix="pshkit-hull-")
grid = build_disc_domain(1, 1.0, h)
x, y = grid.coordinate_arrays()
r = np.sqrt(x * x + y * y)

write_mask(grid, os.path.join(work, "disc1.grid"))
ring = (np.abs(r - 0.5) <= h / 2 + 1e-12) & (grid.mask == INTERIOR)
write_mask(grid, os.path.join(work, "ring.mask"), labels=np.where(ring, 2, 0))

rc = run(["hull",
          "--grid", os.path.join(work, "disc1.grid"),
          "--K", os.path.join(work, "ring.mask"),
          "--spec", "psh",
          "--theta", "0.01",
          "--oracle", "radial",
          "--out", os.path.join(work, "out")])
print("\nexit code:", rc)

_, _, _, _, lab = read_label_file(os.path.join(work, "out", "hull.mask"))
filled = lab == 2
print("K cells:", int(ring.sum()), "-> hull cells:", int(filled.sum()))

# coarse picture of the filled hull, one character per 4x4 block
step = 4
for i in range(0, grid.dims[0], step):
    line = "".join("#" if filled[i, j] else
                   ("." if grid.mask[i, j] else " ")
                   for j in range(0, grid.dims[1], step))
    print(line)
print("\nfiles under", work)
