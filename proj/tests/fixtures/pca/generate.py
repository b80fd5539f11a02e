"""Writes the two-cluster PCA fixture and its numpy oracle values."""
import json
import pathlib
import struct

import numpy as np

here = pathlib.Path(__file__).parent
rng = np.random.default_rng(7)
C, H, W = 4, 12, 12

mask = np.zeros((H, W), dtype=np.uint8)
mask[:, : W // 2] = 1
feats = np.zeros((C, H, W))
for y in range(H):
    for x in range(W):
        centre = np.array([5.0 if mask[y, x] else -5.0, 0.0, 0.0, 0.0])
        jitter = rng.normal(size=C)
        jitter *= rng.uniform(0.0, 1.0) / np.linalg.norm(jitter)
        feats[:, y, x] = centre + jitter

with open(here / "features.snft", "wb") as f:
    f.write(b"SNFT")
    f.write(struct.pack("<II", 1, 3))
    f.write(struct.pack("<III", C, H, W))
    f.write(feats.astype("<f8").tobytes())

with open(here / "mask.pgm", "wb") as f:
    f.write(b"P5\n%d %d\n255\n" % (W, H))
    f.write((mask * 255).astype(np.uint8).tobytes())

X = feats.reshape(C, -1).T
Xc = X - X.mean(axis=0)
vals, vecs = np.linalg.eigh(Xc.T @ Xc / X.shape[0])
order = np.argsort(vals)[::-1]
P = Xc @ vecs[:, order[:2]]
flat = mask.reshape(-1).astype(bool)


def spread(points):
    return float(np.mean(np.linalg.norm(points - points.mean(axis=0), axis=1)))


oracle = {
    "object_distance": spread(P[flat]),
    "background_distance": spread(P[~flat]),
    "eigenvalues": [float(v) for v in vals[order]],
}
(here / "oracle.json").write_text(json.dumps(oracle, indent=2) + "\n")
