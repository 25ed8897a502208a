#!/usr/bin/env python3
# Copyright 2026 The kbnet Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Builds the desk-scale grayscale corpus from scikit-image's bundled samples.

Only images whose scikit-image docstring states public-domain or CC0 terms are
used. Large pictures contribute several non-overlapping tiles so the training
split reaches 20 files. Output is 8-bit grayscale PNG.
"""
import argparse
import os

import numpy as np
from PIL import Image
from skimage import color, data

# (name, loader, tiles) -- tiles > 1 splits the image into a grid of regions.
TRAIN = [
    ("astronaut", data.astronaut, 2),
    ("brick", data.brick, 1),
    ("cell", data.cell, 1),
    ("clock", data.clock, 1),
    ("coffee", data.coffee, 2),
    ("grass", data.grass, 1),
    ("gravel", data.gravel, 2),
    ("hubble", data.hubble_deep_field, 2),
    ("ihc", data.immunohistochemistry, 2),
    ("retina", data.retina, 2),
    ("rocket", data.rocket, 2),
    ("text", data.text, 1),
    ("microaneurysms", data.microaneurysms, 1),
]
EVAL = [
    ("camera", data.camera),
    ("chelsea", data.chelsea),
    ("coins", data.coins),
    ("horse", data.horse),
]


def to_gray_u8(img):
    img = np.asarray(img)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = img[..., :3]
        img = (color.rgb2gray(img) * 255.0 + 0.5).astype(np.uint8)
    return img.astype(np.uint8)


def shrink(img, max_side):
    h, w = img.shape
    scale = max_side / max(h, w)
    if scale >= 1.0:
        return img
    size = (max(1, round(w * scale)), max(1, round(h * scale)))
    return np.asarray(Image.fromarray(img).resize(size, Image.LANCZOS))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "corpus"))
    ap.add_argument("--max-side", type=int, default=256)
    args = ap.parse_args()
    train_dir = os.path.join(args.out, "train")
    eval_dir = os.path.join(args.out, "eval")
    os.makedirs(train_dir, exist_ok=True)
    os.makedirs(eval_dir, exist_ok=True)

    count = 0
    for name, loader, tiles in TRAIN:
        img = to_gray_u8(loader())
        if tiles == 1:
            parts = [img]
        else:
            h, w = img.shape
            if w >= h:
                parts = [img[:, : w // 2], img[:, w // 2 :]]
            else:
                parts = [img[: h // 2], img[h // 2 :]]
        for k, part in enumerate(parts):
            part = shrink(part, args.max_side)
            Image.fromarray(part).save(os.path.join(train_dir, f"{name}_{k}.png"))
            count += 1
    for name, loader in EVAL:
        img = shrink(to_gray_u8(loader()), args.max_side)
        Image.fromarray(img).save(os.path.join(eval_dir, f"{name}.png"))
    print(f"wrote {count} training images and {len(EVAL)} evaluation images")


if __name__ == "__main__":
    main()
