"""On-disk formats.

Cubes and abundance maps: a JSON header ``<stem>.json`` (height, width,
channels, dtype ``"f32"``, layout ``"bip"``, endianness ``"little"``) next to
a raw file ``<stem>.bin`` of little-endian float32 values, pixel-major with
bands interleaved. Endmembers: CSV, one spectrum per row. Abundance images:
8-bit binary PGM scaled by the map maximum.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DimensionError

_DTYPE = np.dtype("<f4")


def _stem(path):
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def write_cube(path, cube):
    """Write an ``H x W x C`` array; returns the two paths written."""
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise DimensionError(f"expected H x W x C, got shape {cube.shape}")
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    h, w, c = cube.shape
    header = {"height": h, "width": w, "channels": c, "dtype": "f32",
              "layout": "bip", "endianness": "little"}
    hdr_path = stem.with_suffix(".json")
    bin_path = stem.with_suffix(".bin")
    hdr_path.write_text(json.dumps(header, indent=2) + "\n")
    bin_path.write_bytes(np.ascontiguousarray(cube, dtype=_DTYPE).tobytes())
    return hdr_path, bin_path


def read_cube(path):
    """Read a cube written by :func:`write_cube` as float64."""
    stem = _stem(path)
    header = json.loads(stem.with_suffix(".json").read_text())
    if header.get("dtype", "f32") != "f32" or header.get("layout", "bip") != "bip":
        raise DimensionError(f"unsupported cube encoding {header}")
    if header.get("endianness", "little") != "little":
        raise DimensionError("only little-endian cubes are supported")
    shape = (int(header["height"]), int(header["width"]), int(header["channels"]))
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=_DTYPE)
    if raw.size != math.prod(shape):
        raise DimensionError(f"{stem}.bin holds {raw.size} values, header says {shape}")
    return raw.reshape(shape).astype(np.float64)


def quantize(x):
    """Values as they come back from a cube file."""
    return np.asarray(x, dtype=_DTYPE).astype(np.float64)


def cube_exists(path):
    stem = _stem(path)
    return stem.with_suffix(".json").exists() and stem.with_suffix(".bin").exists()


def write_matrix_csv(path, mat, header=None):
    """Full-precision CSV (``repr`` round trip is exact)."""
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path


def read_matrix_csv(path):
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2).astype(np.float64)


def write_pgm(path, image):
    """8-bit grayscale PGM, scaled so the maximum maps to 255."""
    img = np.asarray(image, dtype=np.float64)
    top = img.max()
    scaled = np.zeros(img.shape) if top <= 0 else np.clip(img / top, 0.0, 1.0) * 255.0
    data = np.round(scaled).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = data.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())
    return path


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def write_rows_csv(path, rows, fields):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fields})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def read_rows_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return "nan" if math.isnan(o) else ("inf" if o > 0 else "-inf")
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default)


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
