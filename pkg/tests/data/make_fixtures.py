"""Regenerate the shipped rig, camera images and golden topview.

Run from the repository root: ``python tests/data/make_fixtures.py``.
The golden PNG must only be regenerated deliberately.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from polyslot.camera import FisheyeCamera, look_at, save_rig
from polyslot.topview import (TopviewSpec, build_remap_table, checkerboard,
                              render_ground_image, synthesize_topview)

HERE = Path(__file__).parent
PKG_DATA = HERE.parents[1] / "src" / "polyslot" / "data"

MOUNTS = {
    "front": ((0.0, 2.4, 0.8), (0.0, 4.4, 0.0)),
    "rear": ((0.0, -2.4, 0.9), (0.0, -4.4, 0.0)),
    "left": ((-1.0, 0.3, 1.0), (-2.0, 0.3, 0.0)),
    "right": ((1.0, 0.3, 1.0), (2.0, 0.3, 0.0)),
}


def make_rig():
    rig = []
    for name, (pos, target) in MOUNTS.items():
        rotation, translation = look_at(pos, target)
        rig.append(FisheyeCamera(
            focal=(330.0, 330.0), principal=(639.5, 399.5),
            distortion=(0.02, -0.005, 0.001, -0.0001),
            rotation=rotation, translation=translation,
            image_size=(1280, 800), name=name))
    return rig


def main():
    rig = make_rig()
    save_rig(rig, PKG_DATA / "fixture_rig.yaml")
    texture = checkerboard(1.0)
    images = [render_ground_image(cam, texture, supersample=2) for cam in rig]
    for cam, img in zip(rig, images):
        Image.fromarray(img).save(HERE / f"fixture_{cam.name}.png")
    table = build_remap_table(rig, TopviewSpec())
    Image.fromarray(synthesize_topview(table, images)).save(HERE / "golden_topview.png")


if __name__ == "__main__":
    main()
