#!/usr/bin/env python3
# Stand-in for the encoder/decoder pair: "encode" downsamples by box averaging
# and quantizes with a QP-dependent step, "decode" copies the intermediate to PNG.
import sys
from PIL import Image

mode, src, dst = sys.argv[1], sys.argv[2], sys.argv[3]
img = Image.open(src).convert("RGB")
if mode == "encode":
    scale, qp = int(sys.argv[4]), int(sys.argv[5])
    w, h = -(-img.width // scale), -(-img.height // scale)
    img = img.resize((w, h), Image.BOX)
    step = 1 + (qp - 31) // 8
    img = img.point(lambda v: (v // step) * step)
img.save(dst, format="PNG")
