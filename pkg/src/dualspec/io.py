"""File formats: HSC cubes, HDN1 checkpoints, PGM images, CSV logs and JSON documents.

All binary fields are little-endian. HSC payloads are float32 in
(h, w, c) row-major order, so ``((h * W + w) * C + c)`` indexes the stream.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import ParamStore
from .errors import ConfigError, FormatError
from .network import NetConfig, count_params, init_params

HSC_MAGIC = b"HSC1"
CKPT_MAGIC = b"HDN1"
_F32 = np.dtype("<f4")

NET_KEYS = ("channels", "blocks_pre", "blocks_post", "groups", "in_channels")
CKPT_KEYS = NET_KEYS + ("alpha", "lambda", "patches", "seed")


# ---------------------------------------------------------------- HSC


def encode_hsc(cube: np.ndarray) -> bytes:
    cube = np.asarray(cube)
    if cube.ndim == 2:
        cube = cube[:, :, None]
    if cube.ndim != 3:
        raise ConfigError(f"HSC holds (H, W, C) arrays, got shape {cube.shape}")
    h, w, c = cube.shape
    return HSC_MAGIC + struct.pack("<3I", h, w, c) + np.ascontiguousarray(cube, dtype=_F32).tobytes()


def decode_hsc(blob: bytes) -> np.ndarray:
    if len(blob) < 16 or blob[:4] != HSC_MAGIC:
        raise FormatError("bad magic: not an HSC1 file")
    h, w, c = struct.unpack("<3I", blob[4:16])
    expected = 4 * h * w * c
    if len(blob) - 16 != expected:
        raise FormatError(f"HSC payload is {len(blob) - 16} bytes, header {h}x{w}x{c} needs {expected}")
    return np.frombuffer(blob, dtype=_F32, offset=16).reshape(h, w, c).astype(np.float64)


def write_hsc(path, cube: np.ndarray) -> None:
    Path(path).write_bytes(encode_hsc(cube))


def read_hsc(path) -> np.ndarray:
    """(H, W, C) float64 array holding the stored float32 values exactly."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    return decode_hsc(blob)


# ---------------------------------------------------------------- checkpoints


def checkpoint_document(net: NetConfig, alpha: float, lam: float, patches: int, seed: int) -> dict:
    doc = net.to_dict()
    doc.update({"alpha": float(alpha), "lambda": float(lam), "patches": int(patches), "seed": int(seed)})
    return {key: doc[key] for key in CKPT_KEYS}


def encode_checkpoint(params: ParamStore, doc: dict) -> bytes:
    missing = [k for k in CKPT_KEYS if k not in doc]
    if missing:
        raise ConfigError(f"checkpoint config is missing {missing}")
    text = json.dumps({k: doc[k] for k in CKPT_KEYS}).encode("utf-8")
    stream = np.ascontiguousarray(params.flatten(), dtype=_F32).tobytes()
    return CKPT_MAGIC + struct.pack("<I", len(text)) + text + stream


def decode_checkpoint(blob: bytes) -> tuple[NetConfig, ParamStore, dict]:
    if len(blob) < 8 or blob[:4] != CKPT_MAGIC:
        raise FormatError("bad magic: not an HDN1 checkpoint")
    (n,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + n:
        raise FormatError(f"checkpoint truncated inside its {n}-byte config")
    try:
        doc = json.loads(blob[8 : 8 + n].decode("utf-8"))
        net = NetConfig(**{k: int(doc[k]) for k in NET_KEYS})
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"checkpoint config unreadable: {exc}") from exc
    payload = len(blob) - 8 - n
    expected = 4 * count_params(net)
    if payload != expected:
        raise FormatError(f"checkpoint holds {payload} parameter bytes, config needs {expected}")
    params = init_params(net, seed=0)
    params.load_flat(np.frombuffer(blob, dtype=_F32, offset=8 + n).astype(np.float64))
    return net, params, doc


def write_checkpoint(path, params: ParamStore, doc: dict) -> None:
    Path(path).write_bytes(encode_checkpoint(params, doc))


def read_checkpoint(path) -> tuple[NetConfig, ParamStore, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    return decode_checkpoint(blob)


# ---------------------------------------------------------------- PGM, CSV, JSON


def write_pgm(path, image: np.ndarray) -> None:
    """Binary P5 greyscale with maxval 255."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ConfigError(f"PGM needs a 2D uint8 image, got {image.dtype} {image.shape}")
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError("bad magic: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    data = blob[len(blob) - w * h :]
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def write_log_csv(path, rows: list[dict], columns=("step", "l1", "fdl", "total", "lr")) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


def read_log_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path} must hold a JSON object")
    return doc
