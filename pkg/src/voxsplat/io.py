"""File formats: PFM float maps, PNG images, binary PLY point clouds,
raw volume dumps, and single-file training checkpoints."""

from __future__ import annotations

import json
import struct

import numpy as np
from PIL import Image

# ----------------------------------------------------------------------- PFM

def write_pfm(path, data: np.ndarray) -> None:
    """Portable Float Map: 'PF' for (H,W,3), 'Pf' for (H,W); little-endian,
    rows stored bottom-up (negative scale marks the byte order)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    elif data.ndim == 2:
        header = b"Pf"
    else:
        raise ValueError(f"PFM stores (H,W) or (H,W,3) float32, got {data.shape}")
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"not a PFM file: header {header!r}")
        width, height = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        count = width * height * (3 if header == b"PF" else 1)
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(count * 4), dtype=dtype, count=count)
    shape = (height, width, 3) if header == b"PF" else (height, width)
    return data.reshape(shape)[::-1].astype(np.float32)


# ----------------------------------------------------------------------- PNG

def write_png(path, image: np.ndarray) -> None:
    """Write an image as 8-bit PNG. Float input is taken as [0,1] and quantized."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    Image.fromarray(image).save(path)


def read_png(path) -> np.ndarray:
    """Read a PNG back to float32 in [0,1]; shape (H,W) or (H,W,C)."""
    return np.asarray(Image.open(path), dtype=np.float32) / 255.0


# ----------------------------------------------------------------------- PLY

PLY_PROPERTIES = (
    "x", "y", "z", "scale_u", "scale_v",
    "quat_w", "quat_x", "quat_y", "quat_z",
    "opacity",
)


def write_ply(path, rows: np.ndarray, sh_channels: int) -> None:
    """Binary little-endian PLY, one vertex per splat.

    ``rows`` is (N, 10 + sh_channels) float32 ordered as PLY_PROPERTIES then
    sh_0 .. sh_{k-1}.
    """
    rows = np.ascontiguousarray(rows, dtype="<f4")
    n_props = len(PLY_PROPERTIES) + sh_channels
    if rows.ndim != 2 or rows.shape[1] != n_props:
        raise ValueError(f"expected (N,{n_props}) rows, got {rows.shape}")
    names = list(PLY_PROPERTIES) + [f"sh_{i}" for i in range(sh_channels)]
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {rows.shape[0]}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rows.tobytes())


def read_ply(path) -> tuple[np.ndarray, list[str]]:
    """Read back a float-only binary PLY written by write_ply."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise ValueError("not a PLY file")
        if b"binary_little_endian" not in f.readline():
            raise ValueError("only binary little-endian PLY is supported")
        names: list[str] = []
        count = 0
        while True:
            line = f.readline().strip()
            if line == b"end_header":
                break
            parts = line.split()
            if parts[0] == b"element":
                count = int(parts[2])
            elif parts[0] == b"property":
                if parts[1] != b"float":
                    raise ValueError("only float properties are supported")
                names.append(parts[2].decode())
        data = np.frombuffer(f.read(count * len(names) * 4), dtype="<f4")
    return data.reshape(count, len(names)).astype(np.float32), names


# -------------------------------------------------------------- volume dumps

def write_volume(path, volume: np.ndarray, meta: dict | None = None) -> None:
    """Raw float32 little-endian dump of a (C,D,H,W) volume plus a JSON sidecar
    recording shape and axis order."""
    volume = np.ascontiguousarray(volume, dtype="<f4")
    if volume.ndim != 4:
        raise ValueError(f"expected (C,D,H,W), got {volume.shape}")
    with open(path, "wb") as f:
        f.write(volume.tobytes())
    sidecar = {"shape": list(volume.shape), "dtype": "float32", "order": "czyx"}
    if meta:
        sidecar.update(meta)
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=1)


def read_volume(path) -> np.ndarray:
    with open(str(path) + ".json") as f:
        sidecar = json.load(f)
    shape = tuple(sidecar["shape"])
    with open(path, "rb") as f:
        data = np.frombuffer(f.read(), dtype="<f4")
    return data.reshape(shape).astype(np.float32)


# --------------------------------------------------------------- checkpoints

_CKPT_MAGIC = b"VXSP0001"


def write_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Single-file checkpoint: magic, manifest length, JSON manifest, raw data.

    The manifest records each array's name, shape, dtype, and byte offset into
    the data section, plus the caller's ``meta`` (step counter, config, RNG
    state). Load followed by save reproduces the file byte for byte.
    """
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        # not ascontiguousarray: that would promote 0-d shapes to (1,)
        arr = np.asarray(arrays[name])
        blob = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": arr.dtype.name, "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"arrays": entries, "meta": meta},
                          sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for blob in blobs:
            f.write(blob)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        if f.read(8) != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen))
        data = f.read()
    arrays = {}
    for ent in manifest["arrays"]:
        raw = data[ent["offset"]:ent["offset"] + ent["nbytes"]]
        arrays[ent["name"]] = np.frombuffer(raw, dtype=ent["dtype"]).reshape(ent["shape"]).copy()
    return arrays, manifest["meta"]
