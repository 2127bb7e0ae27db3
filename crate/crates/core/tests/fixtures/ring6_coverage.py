"""Recomputes the ring6 fixture coverage counts with numpy.

Usage: python3 ring6_coverage.py
Prints total valid voxels and per-camera winners for the 4x50x50 grid
used by tests/brute_force.rs.
"""
import json
import math

import numpy as np

W, H, HFOV, COUNT = 64, 32, 70.0, 6
D_MIN, D_MAX, BINS = 1.0, 61.0, 60
ORIGIN = np.array([-25.0, -25.0, -2.0])
SIZE = np.array([1.0, 1.0, 1.0])
Z, GH, GW = 4, 50, 50

f = (W / 2.0) / math.tan(math.radians(HFOV) / 2.0)
cx, cy = W / 2.0, H / 2.0

zi, yi, xi = np.meshgrid(np.arange(Z), np.arange(GH), np.arange(GW), indexing="ij")
px = ORIGIN[0] + (xi + 0.5) * SIZE[0]
py = ORIGIN[1] + (yi + 0.5) * SIZE[1]
pz = ORIGIN[2] + (zi + 0.5) * SIZE[2]

owner = np.full(px.shape, -1)
bins = np.full(px.shape, -1)
for cam in range(COUNT):
    yaw = math.radians(cam * 360.0 / COUNT)
    s, c = math.sin(yaw), math.cos(yaw)
    xc = s * px + (-c) * py + 0.0 * pz + 0.0
    yc = 0.0 * px + 0.0 * py + (-1.0) * pz + 0.0
    zc = c * px + s * py + 0.0 * pz + 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f * xc / zc + cx
        v = f * yc / zc + cy
    hit = (zc > 1e-6) & (u >= 0) & (u < W) & (v >= 0) & (v < H) & (zc >= D_MIN) & (zc < D_MAX)
    take = hit & (owner < 0)
    owner[take] = cam
    width = (D_MAX - D_MIN) / BINS
    bins[take] = np.minimum(np.floor((zc[take] - D_MIN) / width), BINS - 1)

print(json.dumps({
    "valid": int((owner >= 0).sum()),
    "per_camera": [int((owner == k).sum()) for k in range(COUNT)],
    "bin_histogram_sum": int(bins[owner >= 0].sum()),
}))
