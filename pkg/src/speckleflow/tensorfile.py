"""On-disk formats: tensor files, model files, CSV, PNG export.

Tensor file layout (all little-endian):
    magic "SPKT" | version u16 | ndim u8 | dims u32 * ndim | dtype tag u8 |
    row-major payload (tag 1 = float32)
An optional plain-text metadata sidecar lives next to the tensor at
``<path>.meta`` with one ``key = value`` pair per line.

Model file layout:
    magic "SPKM" | version u16 | header length u32 | JSON header (utf-8) |
    flat weights as float32
The header carries the architecture descriptor, the schedule parameters,
the conditioning width, and seed provenance, so a model file alone is
enough to reconstruct the sampler.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .diffusion.denoiser import DenoiserArch, DenoiserParams
from .diffusion.schedule import NoiseSchedule, linear_schedule

TENSOR_MAGIC = b"SPKT"
MODEL_MAGIC = b"SPKM"
FORMAT_VERSION = 1
_DTYPE_TAG_F32 = 1


def write_metadata(path, metadata: dict) -> None:
    lines = [f"{key} = {value}" for key, value in metadata.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metadata(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def sidecar_path(path) -> Path:
    return Path(str(path) + ".meta")


def write_tensor(path, array: np.ndarray, metadata: dict | None = None) -> None:
    """Write an array as a float32 tensor file (plus optional sidecar)."""
    array = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    if array.ndim < 1 or array.ndim > 255:
        raise ValueError("tensor rank must be between 1 and 255")
    header = TENSOR_MAGIC + struct.pack("<HB", FORMAT_VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    header += struct.pack("<B", _DTYPE_TAG_F32)
    Path(path).write_bytes(header + array.tobytes())
    if metadata is not None:
        write_metadata(sidecar_path(path), metadata)


def read_tensor(path, with_metadata: bool = False):
    """Read a tensor file; optionally also its metadata sidecar dict."""
    raw = Path(path).read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise ValueError(f"{path}: not a tensor file (bad magic)")
    version, ndim = struct.unpack_from("<HB", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    offset = 7
    dims = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    (tag,) = struct.unpack_from("<B", raw, offset)
    offset += 1
    if tag != _DTYPE_TAG_F32:
        raise ValueError(f"{path}: unsupported dtype tag {tag}")
    count = int(np.prod(dims)) if ndim else 0
    payload = raw[offset:]
    if len(payload) != 4 * count:
        raise ValueError(f"{path}: payload length {len(payload)} != {4 * count} expected")
    array = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if not with_metadata:
        return array
    meta_file = sidecar_path(path)
    metadata = read_metadata(meta_file) if meta_file.exists() else {}
    return array, metadata


def save_model(
    path,
    params: DenoiserParams,
    sched: NoiseSchedule,
    beta_start: float,
    beta_end: float,
    n_few: int,
    seeds: dict | None = None,
    metadata: dict | None = None,
) -> None:
    arch = params.arch
    header = {
        "arch": {
            "in_channels": arch.in_channels,
            "hidden_channels": arch.hidden_channels,
            "n_layers": arch.n_layers,
            "kernel_size": arch.kernel_size,
            "time_embed_dim": arch.time_embed_dim,
        },
        "schedule": {"T": sched.T, "beta_start": beta_start, "beta_end": beta_end},
        "n_few": n_few,
        "seeds": seeds or {},
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    weights = np.ascontiguousarray(params.weights, dtype="<f4")
    out = MODEL_MAGIC + struct.pack("<HI", FORMAT_VERSION, len(blob)) + blob + weights.tobytes()
    Path(path).write_bytes(out)


def load_model(path) -> tuple[DenoiserParams, NoiseSchedule, dict]:
    """Load a model file: (params, schedule, full header dict)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    version, header_len = struct.unpack_from("<HI", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {version}")
    header = json.loads(raw[10 : 10 + header_len].decode("utf-8"))
    arch = DenoiserArch(**header["arch"])
    weights = np.frombuffer(raw[10 + header_len :], dtype="<f4").copy()
    params = DenoiserParams(arch=arch, weights=weights)
    sched_info = header["schedule"]
    sched = linear_schedule(sched_info["T"], sched_info["beta_start"], sched_info["beta_end"])
    return params, sched, header


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """Comma-separated, header row, decimal-point float literals (repr)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def export_png(map_2d: np.ndarray, path, metadata: dict | None = None) -> None:
    """Write a map as 8-bit grayscale, min-max scaled per image.

    A constant map becomes uniform mid-gray. The scaling bounds go into the
    sidecar so the quantization is documented.
    """
    map_2d = np.asarray(map_2d, dtype=np.float64)
    if map_2d.ndim != 2:
        raise ValueError("expected a 2D map")
    if not np.all(np.isfinite(map_2d)):
        raise ValueError("map contains non-finite values")
    lo, hi = float(map_2d.min()), float(map_2d.max())
    if hi > lo:
        scaled = np.rint((map_2d - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.full(map_2d.shape, 128.0)
    Image.fromarray(scaled.astype(np.uint8), mode="L").save(path)
    sidecar = {"scale_min": lo, "scale_max": hi}
    if metadata:
        sidecar.update(metadata)
    write_metadata(sidecar_path(path), sidecar)
