"""Walk a rendered image through the preprocessing pipeline.

Shows the grayscale conversion, median denoise, bilinear resize, and the
one-hot label encoding a solver consumes.
"""

import numpy as np

from capnet import Charset, DistortionSpec
from capnet.capgen import render_captcha
from capnet.datapipe import (
    decode_prediction,
    denoise_median3,
    encode_label,
    normalize,
    read_pgm,
    resize_bilinear,
    to_grayscale,
    write_pgm,
)
from capnet.tensor import Rng


def main():
    charset = Charset("0123456789abcdefghijklmnopqrstuvwxyz")
    sample = render_captcha("h4x0r", DistortionSpec(), Rng(3))
    print(f"rendered {sample.label!r}: shape {sample.image.shape}, "
          f"dtype {sample.image.dtype}")

    # stack to fake RGB, then collapse back: to_grayscale averages channels
    rgb = np.stack([sample.image] * 3, axis=-1)
    gray = to_grayscale(rgb)
    print(f"grayscale round trip exact: {np.array_equal(gray, sample.image)}")

    cleaned = denoise_median3(gray)
    flipped = int((cleaned != gray).sum())
    print(f"median filter changed {flipped} of {gray.size} pixels "
          f"(mostly isolated pepper)")

    small = resize_bilinear(cleaned, 25, 100)
    print(f"resized to {small.shape}")

    x = normalize(gray)
    print(f"normalized: shape {x.shape}, range [{x.min():.3f}, {x.max():.3f}]")

    y = encode_label(sample.label, charset)
    print(f"one-hot label: shape {y.shape}, row sums {y.sum(axis=1)}")
    print(f"decodes back to: {decode_prediction(y, charset)!r}")

    write_pgm("demo_sample.pgm", sample.image)
    back = read_pgm("demo_sample.pgm")
    print(f"PGM round trip bit-exact: {np.array_equal(back, sample.image)}")


if __name__ == "__main__":
    main()
