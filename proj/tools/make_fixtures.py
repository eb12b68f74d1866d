#!/usr/bin/env python3
"""Regenerates tests/data from scikit-image's bundled sample images.

Layout:
  train/    24 crops of 180x180 (training images)
  heldout/  10 crops of 80x80 from images never used for training
  deblur/   one 128x128 image for the deblurring loop
  noisy25/  a smooth 128x128 image with AWGN sigma=25 (seeded)
  kernels/  delta.txt, box3.txt, motion19.txt
"""

import argparse
from pathlib import Path

import numpy as np
import skimage.data as sd
from skimage.color import rgb2gray


def gray(img):
    if img.ndim == 3:
        img = rgb2gray(img[..., :3]) * 255.0
    return np.asarray(img, dtype=np.float64)


def write_pgm(path, img):
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def write_kernel(path, k):
    with open(path, "w") as f:
        for row in k:
            f.write(" ".join("%.8f" % v for v in row) + "\n")


def motion_kernel(size=19, seed=7):
    # A smooth random camera path rasterised with bilinear splats, then
    # normalised; the same recipe Levin et al. style kernels resemble.
    rng = np.random.default_rng(seed)
    k = np.zeros((size, size))
    pos = np.array([size / 2.0, size / 2.0])
    vel = rng.normal(size=2)
    vel /= np.linalg.norm(vel)
    pts = []
    for _ in range(60):
        vel += 0.35 * rng.normal(size=2)
        vel /= np.linalg.norm(vel)
        pos = pos + 0.25 * vel
        pts.append(pos.copy())
    pts = np.array(pts)
    pts -= pts.mean(axis=0) - (size - 1) / 2.0
    for y, x in pts:
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                yy, xx = y0 + dy, x0 + dx
                if 0 <= yy < size and 0 <= xx < size:
                    k[yy, xx] += wy * wx
    return k / k.sum()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "tests" / "data"))
    out = Path(ap.parse_args().out)
    for sub in ("train", "heldout", "deblur", "noisy25", "kernels"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    train_src = {
        "astronaut": gray(sd.astronaut()),
        "coffee": gray(sd.coffee()),
        "chelsea": gray(sd.chelsea()),
        "rocket": gray(sd.rocket()),
        "ihc": gray(sd.immunohistochemistry()),
        "moon": gray(sd.moon()),
        "brick": gray(sd.brick()),
        "grass": gray(sd.grass()),
        "gravel": gray(sd.gravel()),
        "clock": gray(sd.clock()),
        "hubble": gray(sd.hubble_deep_field()),
        "page": gray(sd.page()),
    }
    rng = np.random.default_rng(2024)
    n = 0
    for name, img in train_src.items():
        for j in range(2):
            h, w = img.shape
            y = int(rng.integers(0, h - 180 + 1))
            x = int(rng.integers(0, w - 180 + 1))
            write_pgm(out / "train" / ("%s_%d.pgm" % (name, j)), img[y:y + 180, x:x + 180])
            n += 1
    assert n == 24

    held = [
        ("camera", gray(sd.camera()), [(60, 200), (300, 120), (380, 330), (150, 380)]),
        ("coins", gray(sd.coins()), [(40, 40), (180, 150), (100, 280)]),
        ("cell", gray(sd.cell()), [(100, 100), (300, 250), (500, 400)]),
    ]
    for name, img, spots in held:
        for i, (y, x) in enumerate(spots):
            write_pgm(out / "heldout" / ("%s_%d.pgm" % (name, i)), img[y:y + 80, x:x + 80])

    cam = gray(sd.camera())
    write_pgm(out / "deblur" / "camera128.pgm", cam.reshape(128, 4, 128, 4).mean(axis=(1, 3)))

    yy, xx = np.mgrid[0:128, 0:128]
    smooth = 125 + 40 * np.sin(xx / 23.0) * np.cos(yy / 31.0)
    noise = np.random.default_rng(25).normal(scale=25.0, size=smooth.shape)
    write_pgm(out / "noisy25" / "smooth_sigma25.pgm", smooth + noise)

    write_kernel(out / "kernels" / "delta.txt", np.pad(np.ones((1, 1)), 1))
    write_kernel(out / "kernels" / "box3.txt", np.ones((3, 3)))
    write_kernel(out / "kernels" / "motion19.txt", motion_kernel())


if __name__ == "__main__":
    main()
