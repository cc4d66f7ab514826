"""On-disk formats: splat PLY, camera JSON, checkpoints, images, datasets.

The PLY layout is the interchange standard for Gaussian point clouds:
float32 properties x/y/z, zeroed normals, DC then higher-order SH (channel
major), opacity logit, log-scales, and the (w, x, y, z) quaternion.
Checkpoints are a single binary container: magic, version, CRC32, a JSON
table of contents, then raw little-endian array payloads.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import SH_C0, Camera, GaussianModel, look_at_camera, normalize_quaternions
from .errors import ChecksumError, FormatError, InvalidAttributeError, VersionError
from .importance import ImportanceTable
from .render import RenderOptions, render_image

CHECKPOINT_MAGIC = b"ESPL"
CHECKPOINT_MAJOR = 1
CHECKPOINT_MINOR = 0

_CAMERA_KEYS = ("world_to_camera", "fx", "fy", "cx", "cy", "width", "height")


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


# -- splat point clouds ---------------------------------------------------------


def _ply_property_names(k: int) -> list[str]:
    names = ["x", "y", "z", "nx", "ny", "nz"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (k - 1))]
    names.append("opacity")
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    return names


def write_pointlist(model: GaussianModel, path) -> None:
    """Binary little-endian PLY in the standard splat layout (float32)."""
    path = Path(path)
    k = model.sh.shape[2]
    names = _ply_property_names(k)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {model.n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")
    data = np.zeros((model.n, len(names)), dtype="<f4")
    data[:, 0:3] = model.positions
    data[:, 6:9] = model.sh[:, :, 0]
    col = 9
    if k > 1:
        rest = 3 * (k - 1)
        data[:, col : col + rest] = model.sh[:, :, 1:].reshape(model.n, rest)
        col += rest
    data[:, col] = model.opacities
    data[:, col + 1 : col + 4] = model.log_scales
    data[:, col + 4 : col + 8] = model.rotations
    _atomic_write(path, "\n".join(header).encode("ascii") + b"\n" + data.tobytes())


def read_pointlist(path) -> GaussianModel:
    """Parse the standard splat PLY layout; raises FormatError with offsets."""
    buf = Path(path).read_bytes()
    end = buf.find(b"end_header\n")
    if not buf.startswith(b"ply\n"):
        raise FormatError("not a PLY file (missing 'ply' magic)", offset=0)
    if end < 0:
        raise FormatError("header never terminated by end_header", offset=len(buf))
    data_start = end + len(b"end_header\n")

    n_vertex = None
    names: list[str] = []
    offset = 0
    for line in buf[:end].decode("ascii", errors="replace").splitlines():
        stripped = line.strip()
        if stripped.startswith("format"):
            if stripped != "format binary_little_endian 1.0":
                raise FormatError(f"unsupported format {stripped!r}", offset=offset)
        elif stripped.startswith("element"):
            parts = stripped.split()
            if parts[1] != "vertex":
                raise FormatError(f"unsupported element {parts[1]!r}", offset=offset)
            n_vertex = int(parts[2])
        elif stripped.startswith("property"):
            parts = stripped.split()
            if parts[1] != "float":
                raise FormatError(
                    f"property {parts[-1]!r} has type {parts[1]!r}, expected float",
                    offset=offset,
                )
            names.append(parts[2])
        offset += len(line.encode("ascii", errors="replace")) + 1
    if n_vertex is None:
        raise FormatError("header declares no vertex element", offset=end)

    expected = n_vertex * len(names) * 4
    if len(buf) - data_start < expected:
        raise FormatError(
            f"data truncated: expected {expected} bytes, found {len(buf) - data_start}",
            offset=len(buf),
        )
    table = np.frombuffer(
        buf, dtype="<f4", count=n_vertex * len(names), offset=data_start
    ).reshape(n_vertex, len(names))
    index = {name: i for i, name in enumerate(names)}

    def column(name: str) -> np.ndarray:
        if name not in index:
            raise FormatError(f"missing property {name!r}", offset=end)
        return table[:, index[name]].astype(np.float64)

    n_rest = sum(1 for name in names if name.startswith("f_rest_"))
    if n_rest % 3 != 0:
        raise FormatError(f"{n_rest} f_rest properties is not divisible by 3", offset=end)
    k = n_rest // 3 + 1
    if k not in (1, 4, 9, 16):
        raise FormatError(f"{n_rest} f_rest properties matches no SH degree", offset=end)

    sh = np.empty((n_vertex, 3, k))
    for ch in range(3):
        sh[:, ch, 0] = column(f"f_dc_{ch}")
        for j in range(k - 1):
            sh[:, ch, 1 + j] = column(f"f_rest_{ch * (k - 1) + j}")
    return GaussianModel(
        positions=np.stack([column("x"), column("y"), column("z")], axis=1),
        log_scales=np.stack([column(f"scale_{i}") for i in range(3)], axis=1),
        rotations=np.stack([column(f"rot_{i}") for i in range(4)], axis=1),
        opacities=column("opacity"),
        sh=sh,
    )


# -- cameras --------------------------------------------------------------------


def save_cameras(cameras, path) -> None:
    entries = []
    for cam in cameras:
        entries.append(
            {
                "world_to_camera": cam.world_to_camera.tolist(),
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "width": cam.width,
                "height": cam.height,
                "near": cam.near,
                "far": cam.far,
                "image_path": cam.image_path,
            }
        )
    _atomic_write(Path(path), json.dumps({"cameras": entries}, indent=2).encode())


def load_cameras(path) -> list[Camera]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"camera file is not valid JSON: {exc}", offset=exc.pos) from exc
    if not isinstance(data, dict) or "cameras" not in data:
        raise FormatError("camera file lacks a 'cameras' list")
    cameras = []
    for i, entry in enumerate(data["cameras"]):
        for key in _CAMERA_KEYS:
            if key not in entry:
                raise FormatError(f"camera entry {i} is missing {key!r}")
        cameras.append(
            Camera(
                world_to_camera=np.asarray(entry["world_to_camera"], dtype=np.float64),
                fx=float(entry["fx"]),
                fy=float(entry["fy"]),
                cx=float(entry["cx"]),
                cy=float(entry["cy"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
                near=float(entry.get("near", 0.05)),
                far=float(entry.get("far", 100.0)),
                image_path=str(entry.get("image_path", "")),
            )
        )
    return cameras


# -- checkpoint container ---------------------------------------------------------


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays plus JSON metadata atomically."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": str(arr.dtype),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    toc = json.dumps({"arrays": entries, "meta": meta or {}}).encode()
    body = struct.pack("<Q", len(toc)) + toc + b"".join(blobs)
    header = CHECKPOINT_MAGIC + struct.pack(
        "<HHI", CHECKPOINT_MAJOR, CHECKPOINT_MINOR, zlib.crc32(body)
    )
    _atomic_write(Path(path), header + body)


def load_checkpoint(path):
    """Returns (arrays, meta, (major, minor)); validates magic, version, CRC."""
    buf = Path(path).read_bytes()
    if len(buf) < 20:
        raise FormatError("checkpoint shorter than its fixed header", offset=len(buf))
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(
            f"bad magic {buf[:4]!r}, expected {CHECKPOINT_MAGIC!r}", offset=0
        )
    major, minor, crc = struct.unpack("<HHI", buf[4:12])
    if major != CHECKPOINT_MAJOR:
        raise VersionError(
            f"checkpoint major version {major}, reader supports {CHECKPOINT_MAJOR}",
            offset=4,
        )
    if zlib.crc32(buf[12:]) != crc:
        raise ChecksumError("payload does not match its stored CRC32", offset=8)
    toc_len = struct.unpack("<Q", buf[12:20])[0]
    if 20 + toc_len > len(buf):
        raise FormatError(
            f"table of contents claims {toc_len} bytes beyond the file", offset=12
        )
    try:
        toc = json.loads(buf[20 : 20 + toc_len])
    except json.JSONDecodeError as exc:
        raise FormatError(f"table of contents is not valid JSON: {exc}", offset=20) from exc
    data = buf[20 + toc_len :]
    arrays = {}
    for entry in toc["arrays"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(data):
            raise FormatError(
                f"array {entry['name']!r} extends beyond the file",
                offset=20 + toc_len + entry["offset"],
            )
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        arrays[entry["name"]] = (
            np.frombuffer(data, dtype=entry["dtype"], count=count, offset=entry["offset"])
            .reshape(entry["shape"])
            .copy()
        )
    return arrays, toc["meta"], (major, minor)


def model_to_arrays(model: GaussianModel, prefix: str = "model.") -> dict:
    return {
        f"{prefix}positions": model.positions,
        f"{prefix}log_scales": model.log_scales,
        f"{prefix}rotations": model.rotations,
        f"{prefix}opacities": model.opacities,
        f"{prefix}sh": model.sh,
    }


def model_from_arrays(arrays: dict, prefix: str = "model.") -> GaussianModel:
    try:
        return GaussianModel(
            positions=arrays[f"{prefix}positions"],
            log_scales=arrays[f"{prefix}log_scales"],
            rotations=arrays[f"{prefix}rotations"],
            opacities=arrays[f"{prefix}opacities"],
            sh=arrays[f"{prefix}sh"],
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint lacks model array {exc.args[0]!r}") from exc


def save_importance(path, table: ImportanceTable) -> None:
    save_checkpoint(
        path,
        {"scores": table.scores, "gamma": table.gamma, "ranking": table.ranking},
        meta={"kind": "importance", "iteration": table.iteration, "n_views": table.n_views},
    )


def load_importance(path) -> ImportanceTable:
    arrays, meta, _ = load_checkpoint(path)
    if meta.get("kind") != "importance":
        raise FormatError(f"checkpoint holds {meta.get('kind')!r}, expected importance")
    return ImportanceTable(
        scores=arrays["scores"],
        gamma=arrays["gamma"],
        iteration=int(meta["iteration"]),
        n_views=int(meta["n_views"]),
        ranking=arrays["ranking"],
    )


# -- images -----------------------------------------------------------------------


def save_image(image: np.ndarray, path) -> None:
    """Clamp to [0, 1], quantize to 8-bit RGB, and write by file extension."""
    u8 = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(Path(path))


def load_image(path) -> np.ndarray:
    with Image.open(Path(path)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def encode_png(image: np.ndarray) -> bytes:
    import io as _io

    u8 = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    sink = _io.BytesIO()
    Image.fromarray(u8, mode="RGB").save(sink, format="PNG")
    return sink.getvalue()


# -- datasets ----------------------------------------------------------------------


@dataclass
class SceneDataset:
    """Posed views with ground-truth images, all in memory.

    `split` assigns each view to "train" or "test"; omitted means every view
    trains. Optimization samples train views only; metrics use the test ones.
    """

    cameras: list
    images: list  # (H, W, 3) float64 in [0, 1]
    split: list | None = None

    def __post_init__(self):
        if self.split is not None:
            if len(self.split) != len(self.cameras):
                raise InvalidAttributeError(
                    f"split labels {len(self.split)} views, dataset has {len(self.cameras)}"
                )
            bad = set(self.split) - {"train", "test"}
            if bad:
                raise InvalidAttributeError(f"unknown split labels {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.cameras)

    def view(self, i: int):
        return self.cameras[i], self.images[i]

    def train_indices(self) -> np.ndarray:
        if self.split is None:
            return np.arange(len(self.cameras))
        return np.flatnonzero([label == "train" for label in self.split])

    def test_indices(self) -> np.ndarray:
        if self.split is None:
            return np.arange(0)
        return np.flatnonzero([label == "test" for label in self.split])


def save_dataset(dirpath, dataset: SceneDataset) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    (dirpath / "images").mkdir(exist_ok=True)
    cameras = []
    for i, (cam, img) in enumerate(zip(dataset.cameras, dataset.images)):
        rel = f"images/view_{i:04d}.png"
        save_image(img, dirpath / rel)
        cameras.append(
            Camera(
                world_to_camera=cam.world_to_camera,
                fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
                width=cam.width, height=cam.height,
                near=cam.near, far=cam.far, image_path=rel,
            )
        )
    save_cameras(cameras, dirpath / "cameras.json")
    if dataset.split is not None:
        path = dirpath / "cameras.json"
        data = json.loads(path.read_text())
        for entry, label in zip(data["cameras"], dataset.split):
            entry["split"] = label
        _atomic_write(path, json.dumps(data, indent=2).encode())


def load_dataset(dirpath) -> SceneDataset:
    dirpath = Path(dirpath)
    cameras = load_cameras(dirpath / "cameras.json")
    raw = json.loads((dirpath / "cameras.json").read_text())["cameras"]
    split = [entry["split"] for entry in raw] if all("split" in e for e in raw) else None
    images = []
    for cam in cameras:
        if not cam.image_path:
            raise FormatError("camera entry lacks an image_path")
        images.append(load_image(dirpath / cam.image_path))
    return SceneDataset(cameras=cameras, images=images, split=split)


# -- synthetic scenes ---------------------------------------------------------------


@dataclass
class SyntheticScene:
    """A planted model, its rendered ground truth, and a degraded init."""

    dataset: SceneDataset
    true_model: GaussianModel
    init_model: GaussianModel
    background: np.ndarray


def _planted_model(rng: np.random.Generator, n: int, sh_degree: int) -> GaussianModel:
    k = (sh_degree + 1) ** 2
    centers = np.array([[-0.35, -0.1, -0.05], [0.4, 0.15, 0.1], [0.0, 0.25, 0.35]])
    which = rng.integers(0, len(centers), size=n)
    positions = centers[which] + rng.normal(0.0, 0.22, size=(n, 3))
    base = rng.uniform(0.12, 0.88, size=(n, 3))
    sh = np.zeros((n, 3, k))
    sh[:, :, 0] = (base - 0.5) / SH_C0
    if k > 1:
        sh[:, :, 1:] = rng.uniform(-0.08, 0.08, size=(n, 3, k - 1))
    return GaussianModel(
        positions=positions,
        log_scales=rng.uniform(np.log(0.035), np.log(0.12), size=(n, 3)),
        rotations=normalize_quaternions(rng.normal(size=(n, 4))),
        opacities=rng.uniform(0.2, 2.5, size=n),
        sh=sh,
    )


def ring_cameras(
    n_views: int, image_size: int, radius: float = 2.3, target=(0.0, 0.0, 0.0)
) -> list[Camera]:
    """Evenly spaced azimuths on two interleaved elevation bands."""
    cams = []
    for i in range(n_views):
        azimuth = 2.0 * math.pi * i / n_views
        z = radius * (0.28 if i % 2 == 0 else 0.55)
        eye = (radius * math.cos(azimuth), radius * math.sin(azimuth), z)
        cams.append(
            look_at_camera(
                eye, target, fx=1.2 * image_size, width=image_size, height=image_size
            )
        )
    return cams


def generate_synthetic(
    seed: int = 0,
    n_points: int = 400,
    n_views: int = 12,
    image_size: int = 32,
    sh_degree: int = 1,
    background=(1.0, 1.0, 1.0),
    init_jitter: float = 0.05,
    holdout_every: int = 4,
) -> SyntheticScene:
    """Plant a model, render ground truth from a camera ring, and derive a
    jittered, color-flattened initialization for training runs.

    Every `holdout_every`-th view is held out as test; 0 disables the split.
    """
    if n_points < 1 or n_views < 1:
        raise InvalidAttributeError("synthetic scene needs at least one point and view")
    rng = np.random.default_rng(seed)
    true_model = _planted_model(rng, n_points, sh_degree)
    cameras = ring_cameras(n_views, image_size)
    options = RenderOptions(background=tuple(background))
    images = [render_image(true_model, cam, options=options) for cam in cameras]
    split = None
    if holdout_every > 0 and n_views > 1:
        split = [
            "test" if i % holdout_every == holdout_every - 1 else "train"
            for i in range(n_views)
        ]

    k = (sh_degree + 1) ** 2
    init_sh = np.zeros((n_points, 3, k))
    init_sh[:, :, 0] = (rng.uniform(0.35, 0.65, size=(n_points, 3)) - 0.5) / SH_C0
    init_model = GaussianModel(
        positions=true_model.positions + rng.normal(0.0, init_jitter, size=(n_points, 3)),
        log_scales=np.full((n_points, 3), np.log(0.06)),
        rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n_points, 1)),
        opacities=np.full(n_points, np.log(0.1 / 0.9)),
        sh=init_sh,
    )
    return SyntheticScene(
        dataset=SceneDataset(cameras=cameras, images=images, split=split),
        true_model=true_model,
        init_model=init_model,
        background=np.asarray(background, dtype=np.float64),
    )
