"""On-disk dataset layout: one JSON manifest plus PPM images.

Manifest schema (version 1):
    version     int
    width       int, pixels
    height      int, pixels
    focal       float, pixels
    t_near      float, ray-parameter near bound
    t_far       float, ray-parameter far bound
    background  "black" | "white"
    frames      list of {file: str, transform: 4x4 row-major camera-to-world,
                         split: "train" | "heldout"}

This is also the ingestion format for any externally converted dataset.
"""

import json
from pathlib import Path

import numpy as np

from .errors import BadConfig
from .geometry import Camera
from .images import write_ppm, read_ppm
from .scenes import DatasetBundle

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


def save_dataset(bundle: DatasetBundle, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = []
    for i, (img, cam, split) in enumerate(zip(bundle.images, bundle.cameras, bundle.splits)):
        name = f"{split}_{i:03d}.ppm"
        write_ppm(out / name, img)
        frames.append({
            "file": name,
            "transform": [[float(v) for v in row] for row in cam.to_matrix()],
            "split": split,
        })
    cam0 = bundle.cameras[0]
    manifest = {
        "version": MANIFEST_VERSION,
        "width": cam0.width,
        "height": cam0.height,
        "focal": cam0.focal,
        "t_near": bundle.t_near,
        "t_far": bundle.t_far,
        "background": bundle.background,
        "frames": frames,
    }
    path = out / MANIFEST_NAME
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_dataset(dataset_dir) -> DatasetBundle:
    root = Path(dataset_dir)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise BadConfig(f"no {MANIFEST_NAME} in {root}")
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION:
        raise BadConfig(f"unsupported manifest version {manifest.get('version')}")
    try:
        width, height, focal = manifest["width"], manifest["height"], manifest["focal"]
        images, cameras, splits = [], [], []
        for frame in manifest["frames"]:
            images.append(read_ppm(root / frame["file"]))
            cameras.append(Camera.from_matrix(
                np.array(frame["transform"], dtype=np.float64), focal, width, height
            ))
            splits.append(frame["split"])
        return DatasetBundle(
            images=images,
            cameras=cameras,
            t_near=float(manifest["t_near"]),
            t_far=float(manifest["t_far"]),
            splits=splits,
            background=manifest.get("background", "black"),
        )
    except (KeyError, ValueError) as exc:
        raise BadConfig(f"malformed manifest {path}: {exc}") from exc
