"""Binary file formats plus CSV and PGM import/export.

Cube (HSC1):       magic "HSC1", width/height/bands as little-endian uint32,
                   then width*height*bands float64 LE values, pixel-major
                   (row-major pixels, bands contiguous per pixel).
Endmembers (EMM1): magic "EMM1", bands/count as uint32, then bands*count
                   float64 LE values stored one endmember after another.
Abundance (ABM1):  magic "ABM1", width/height/K as uint32, then pixel-major
                   float64 LE values like the cube.
Model (DSCN):      magic "DSCN", uint32 format version, a length-prefixed
                   JSON config block, then named float64 tensors.

Arrays use (height, width, channels) layout in memory; readers reject any
file whose declared dimensions disagree with the payload size.
"""

from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .model import DscnModel, Fusion, ModelConfig

CUBE_MAGIC = b"HSC1"
ENDMEMBER_MAGIC = b"EMM1"
ABUNDANCE_MAGIC = b"ABM1"
MODEL_MAGIC = b"DSCN"
MODEL_VERSION = 1

_U32_MAX = 2 ** 32 - 1


def _check_u32(*dims):
    for d in dims:
        if not 0 < d <= _U32_MAX:
            raise InputError(f"dimension {d} does not fit the uint32 header field")


def _read_payload(path, magic, n_dims):
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError(f"{path}: file truncated before magic", byte_offset=len(data))
    if data[:4] != magic:
        raise FormatError(
            f"{path}: bad magic {data[:4]!r}, expected {magic!r}", byte_offset=0)
    head_len = 4 + 4 * n_dims
    if len(data) < head_len:
        raise FormatError(f"{path}: file truncated in header", byte_offset=len(data))
    dims = struct.unpack_from(f"<{n_dims}I", data, 4)
    if min(dims) == 0:
        raise FormatError(f"{path}: zero dimension in header {dims}", byte_offset=4)
    count = 1
    for d in dims:
        count *= d
    expected = head_len + 8 * count
    if len(data) < expected:
        raise FormatError(
            f"{path}: payload short for declared dims {dims}: need {expected} "
            f"bytes, file has {len(data)}", byte_offset=len(data))
    if len(data) > expected:
        raise FormatError(
            f"{path}: {len(data) - expected} trailing bytes after payload",
            byte_offset=expected)
    values = np.frombuffer(data, dtype="<f8", count=count, offset=head_len)
    return dims, values


def write_cube(path, cube):
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3:
        raise InputError(f"cube must be (height, width, bands), got shape {cube.shape}")
    h, w, b = cube.shape
    _check_u32(w, h, b)
    header = CUBE_MAGIC + struct.pack("<III", w, h, b)
    Path(path).write_bytes(header + np.ascontiguousarray(cube, dtype="<f8").tobytes())


def read_cube(path):
    (w, h, b), values = _read_payload(path, CUBE_MAGIC, 3)
    return values.reshape(h, w, b).astype(np.float64)


def write_endmembers(path, endmembers):
    e = np.asarray(endmembers, dtype=np.float64)
    if e.ndim != 2:
        raise InputError(f"endmembers must be (bands, K), got shape {e.shape}")
    b, k = e.shape
    _check_u32(b, k)
    header = ENDMEMBER_MAGIC + struct.pack("<II", b, k)
    Path(path).write_bytes(header + np.ascontiguousarray(e.T, dtype="<f8").tobytes())


def read_endmembers(path):
    (b, k), values = _read_payload(path, ENDMEMBER_MAGIC, 2)
    return values.reshape(k, b).T.astype(np.float64)


def write_abundance(path, amaps):
    a = np.asarray(amaps, dtype=np.float64)
    if a.ndim != 3:
        raise InputError(f"abundance map must be (height, width, K), got shape {a.shape}")
    h, w, k = a.shape
    _check_u32(w, h, k)
    header = ABUNDANCE_MAGIC + struct.pack("<III", w, h, k)
    Path(path).write_bytes(header + np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_abundance(path):
    (w, h, k), values = _read_payload(path, ABUNDANCE_MAGIC, 3)
    return values.reshape(h, w, k).astype(np.float64)


def export_endmembers_csv(path, endmembers):
    """Write a bands-by-K CSV at 17 significant digits (float64 round-trips)."""
    e = np.asarray(endmembers, dtype=np.float64)
    if e.ndim != 2:
        raise InputError(f"endmembers must be (bands, K), got shape {e.shape}")
    lines = [",".join(f"{v:.17g}" for v in row) for row in e]
    Path(path).write_text("\n".join(lines) + "\n")


def import_endmembers_csv(path, clamp_negative=False):
    """Parse a bands-by-K numeric CSV; a non-numeric first row is a header.

    Negative values are rejected unless clamp_negative is set, in which case
    they are clamped to zero with a warning.
    """
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty CSV")

    def cells_of(line):
        return [c.strip() for c in line.split(",")]

    def numeric_row(cells):
        try:
            return [float(c) for c in cells]
        except ValueError:
            return None

    start = 0
    first = numeric_row(cells_of(lines[0]))
    if first is None:
        start = 1
        if len(lines) == 1:
            raise FormatError(f"{path}: header row but no data rows")
    width = len(cells_of(lines[start]))
    rows = []
    for i, line in enumerate(lines[start:], start=start + 1):
        cells = cells_of(line)
        if len(cells) != width:
            raise FormatError(
                f"{path}: row {i} has {len(cells)} columns, expected {width}")
        for j, cell in enumerate(cells, start=1):
            try:
                float(cell)
            except ValueError:
                raise FormatError(
                    f"{path}: row {i}, column {j}: not numeric: {cell!r}") from None
        rows.append([float(c) for c in cells])
    matrix = np.array(rows, dtype=np.float64)
    if (matrix < 0).any():
        if not clamp_negative:
            r, c = np.argwhere(matrix < 0)[0]
            raise InputError(
                f"{path}: negative endmember value {matrix[r, c]} at row "
                f"{int(r) + 1 + start}, column {int(c) + 1}; pass "
                f"clamp_negative to zero negatives")
        n_neg = int((matrix < 0).sum())
        warnings.warn(f"{path}: clamped {n_neg} negative endmember entries to zero",
                      stacklevel=2)
        matrix = np.maximum(matrix, 0.0)
    return matrix


def load_endmembers(path):
    """Read endmembers from an EMM1 file, or a CSV when the suffix is .csv."""
    if str(path).lower().endswith(".csv"):
        return import_endmembers_csv(path)
    return read_endmembers(path)


def write_model(path, model: DscnModel):
    cfg = model.config
    header = {
        "format_version": MODEL_VERSION,
        "config": {
            "bands": cfg.bands,
            "num_endmembers": cfg.num_endmembers,
            "block1": list(cfg.block1),
            "block2": list(cfg.block2),
            "block3": list(cfg.block3),
            "pool": list(cfg.pool),
            "fusion": cfg.fusion.value,
            "spectral_norm_mode": cfg.spectral_norm_mode.value,
            "seed": cfg.seed,
        },
        "bn_initialized": {"bnorm3": model.bnorm3.initialized},
    }
    tensors = dict(model.trainables)
    tensors["w_d"] = model.w_d
    tensors["bnorm3.running_mean"] = model.bnorm3.running_mean
    tensors["bnorm3.running_var"] = model.bnorm3.running_var
    if cfg.fusion is Fusion.S:
        header["bn_initialized"]["head_bn"] = model.head_bn.initialized
        tensors["head_bn.running_mean"] = model.head_bn.running_mean
        tensors["head_bn.running_var"] = model.head_bn.running_var

    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(blob)), blob,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        encoded = name.encode()
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_model(path) -> DscnModel:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError(f"{path}: file truncated before magic", byte_offset=len(data))
    if data[:4] != MODEL_MAGIC:
        raise FormatError(
            f"{path}: bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}", byte_offset=0)

    offset = 4

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if len(data) < offset + size:
            raise FormatError(f"{path}: file truncated", byte_offset=len(data))
        values = struct.unpack_from(fmt, data, offset)
        offset += size
        return values

    (version, blob_len) = take("<II")
    if version != MODEL_VERSION:
        raise FormatError(
            f"{path}: unsupported model format version {version}, expected "
            f"{MODEL_VERSION}", byte_offset=4)
    if len(data) < offset + blob_len:
        raise FormatError(f"{path}: file truncated in config block",
                          byte_offset=len(data))
    try:
        header = json.loads(data[offset:offset + blob_len])
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: bad config block: {err}", byte_offset=offset) from None
    offset += blob_len

    (tensor_count,) = take("<I")
    tensors = {}
    for _ in range(tensor_count):
        (name_len,) = take("<I")
        if len(data) < offset + name_len:
            raise FormatError(f"{path}: file truncated in tensor name",
                              byte_offset=len(data))
        name = data[offset:offset + name_len].decode()
        offset += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        count = 1
        for d in shape:
            count *= d
        if len(data) < offset + 8 * count:
            raise FormatError(f"{path}: tensor {name} payload truncated",
                              byte_offset=len(data))
        tensors[name] = np.frombuffer(
            data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes",
                          byte_offset=offset)

    cfg = ModelConfig(**header["config"])
    if "w_d" not in tensors:
        raise FormatError(f"{path}: missing endmember tensor w_d")
    model = DscnModel(cfg, tensors["w_d"])
    for name, target in model.trainables.items():
        if name not in tensors:
            raise FormatError(f"{path}: missing tensor {name}")
        if tensors[name].shape != target.shape:
            raise FormatError(
                f"{path}: tensor {name} has shape {tensors[name].shape}, "
                f"expected {target.shape}")
        target[...] = tensors[name]
    model.bnorm3.running_mean[...] = tensors["bnorm3.running_mean"]
    model.bnorm3.running_var[...] = tensors["bnorm3.running_var"]
    model.bnorm3.initialized = bool(header["bn_initialized"]["bnorm3"])
    if cfg.fusion is Fusion.S:
        model.head_bn.running_mean[...] = tensors["head_bn.running_mean"]
        model.head_bn.running_var[...] = tensors["head_bn.running_var"]
        model.head_bn.initialized = bool(header["bn_initialized"]["head_bn"])
    return model


def write_pgm(path, image):
    """8-bit binary PGM (P5); values are clipped from [0, 1] to 0..255."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InputError(f"PGM image must be 2-D, got shape {image.shape}")
    h, w = image.shape
    levels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + levels.tobytes())
