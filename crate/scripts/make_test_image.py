"""Write the synthetic 128x128 test scene used by the image-reconstruction demo.

Usage:
    python3 scripts/make_test_image.py data/shapes128.pgm
"""

import sys

import numpy as np


def scene(side=128):
    y, x = np.mgrid[0:side, 0:side] / (side - 1)
    img = 0.15 + 0.25 * x  # soft horizontal ramp
    img[(x - 0.35) ** 2 + (y - 0.4) ** 2 < 0.18**2] = 0.85  # disc
    img[(np.abs(x - 0.72) < 0.12) & (np.abs(y - 0.7) < 0.18)] = 0.05  # dark square
    bars = (x > 0.6) & (x < 0.95) & (y > 0.1) & (y < 0.35)
    img[bars & (np.floor(x * 40) % 2 == 0)] = 1.0  # thin bars, saturated
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def main(path):
    img = scene()
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


if __name__ == "__main__":
    main(sys.argv[1])
