"""File formats: PFM depth maps, Middlebury .flo flows, calibration and
pose tables, and PNG/JPEG ingestion.

PFM is written grayscale ("Pf"), scale -1.0 (little-endian), rows stored
bottom-up per the format's convention.  Flow files use the Middlebury
layout: the magic float 202021.25 (bytes "PIEH"), int32 width and height,
then row-major interleaved float32 (u, v) pairs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import cv2
import numpy as np

from .geometry import CameraIntrinsics, SmallPose

FLO_MAGIC = 202021.25


def write_pfm(path, data: np.ndarray, scale: float = -1.0) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("PFM writer expects a single-channel map")
    if scale >= 0:
        raise ValueError("only little-endian PFM (negative scale) is written")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(f"{scale:.1f}\n".encode("ascii"))
        f.write(data[::-1].astype("<f4").tobytes())


def read_pfm(path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise ValueError(f"not a grayscale PFM file (header {header!r})")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(f.read(4 * w * h), dtype=dtype)
    return raw.reshape(h, w)[::-1].copy(), scale


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(".flo writer expects an (H, W, 2) flow")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(flow.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = struct.unpack("<f", f.read(4))[0]
        if abs(magic - FLO_MAGIC) > 1e-3:
            raise ValueError(f"bad .flo magic {magic}")
        w, h = struct.unpack("<ii", f.read(8))
        raw = np.frombuffer(f.read(8 * w * h), dtype="<f4")
    return raw.reshape(h, w, 2).copy()


def write_calibration(
    path, intrinsics: CameraIntrinsics, width: int, height: int, comment: str = ""
) -> None:
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines += [
        f"fx = {intrinsics.fx!r}",
        f"fy = {intrinsics.fy!r}",
        f"cx = {intrinsics.cx!r}",
        f"cy = {intrinsics.cy!r}",
        f"width = {width}",
        f"height = {height}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_calibration(path) -> tuple[CameraIntrinsics, int, int]:
    """Parse the key = value calibration file; returns (K, width, height)."""
    values: dict[str, float] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed calibration line: {line!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = float(val.strip())
    missing = {"fx", "fy", "cx", "cy", "width", "height"} - set(values)
    if missing:
        raise ValueError(f"calibration file missing keys: {sorted(missing)}")
    intrinsics = CameraIntrinsics(values["fx"], values["fy"], values["cx"], values["cy"])
    return intrinsics, int(values["width"]), int(values["height"])


def write_poses(path, poses: list[SmallPose]) -> None:
    lines = ["# frame rx ry rz tx ty tz"]
    for i, pose in enumerate(poses):
        parts = [str(i)] + [f"{v!r}" for v in (*pose.r, *pose.t)]
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path) -> list[SmallPose]:
    poses = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"malformed pose line: {line!r}")
        vals = [float(p) for p in parts[1:]]
        poses.append(SmallPose(np.array(vals[:3]), np.array(vals[3:])))
    return poses


def load_image(path) -> np.ndarray:
    """Load PNG/JPEG as float32 RGB in [0, 1]; 8- and 16-bit inputs supported."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"cannot read image {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float32) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float32) / 65535.0
    else:
        img = raw.astype(np.float32)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    elif img.shape[2] == 4:
        img = img[:, :, :3]
    return np.ascontiguousarray(img[:, :, ::-1])  # BGR -> RGB


def save_image(path, image: np.ndarray, bit_depth: int = 8) -> None:
    """Save a float [0, 1] image (gray or RGB) as 8- or 16-bit PNG/JPEG."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if bit_depth == 8:
        quant = np.rint(img * 255.0).astype(np.uint8)
    elif bit_depth == 16:
        quant = np.rint(img * 65535.0).astype(np.uint16)
    else:
        raise ValueError("bit_depth must be 8 or 16")
    if quant.ndim == 3:
        quant = np.ascontiguousarray(quant[:, :, ::-1])  # RGB -> BGR
    if not cv2.imwrite(str(path), quant):
        raise ValueError(f"cannot write image {path}")
