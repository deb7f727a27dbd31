"""On-disk formats for teacher checkpoints and cached teacher logits.

Checkpoint (``.ckpt``), all integers little-endian::

    8 bytes   magic  b"MLKDCKPT"
    1 byte    version (1)
    4 bytes   uint32 header length H
    H bytes   UTF-8 JSON: {"layer_widths", "activation", "seed", "dtype", "checksum"}
    ...       parameters in order W0, b0, W1, b1, ... as raw little-endian arrays
              of ``dtype``; W_i is row-major (fan_in, fan_out)

Cached logits (``.logits``)::

    8 bytes   magic  b"MLKDLGTS"
    1 byte    version (1)
    4 bytes   uint32 K (classes)
    4 bytes   uint32 N (rows)
    64 bytes  ASCII hex sha256 checksum of the teacher parameters
    N*K*4     float32 little-endian rows, row i = teacher logits for train sample i
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import IncompatibleCheckpoint
from .mlp import Mlp, MlpSpec

CKPT_MAGIC = b"MLKDCKPT"
LOGITS_MAGIC = b"MLKDLGTS"
VERSION = 1


def save_checkpoint(model, path):
    path = Path(path)
    dtype = np.dtype(model.dtype).newbyteorder("<")
    header = json.dumps({
        "layer_widths": list(model.spec.layer_widths),
        "activation": model.spec.activation,
        "seed": model.spec.seed,
        "dtype": np.dtype(model.dtype).name,
        "checksum": model.checksum(),
    }, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<BI", VERSION, len(header)))
        fh.write(header)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype=dtype).tobytes())
    return path


def load_checkpoint(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise IncompatibleCheckpoint(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<BI", raw, 8)
    if version != VERSION:
        raise IncompatibleCheckpoint(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<BI")
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    spec = MlpSpec(tuple(header["layer_widths"]), header["activation"], int(header["seed"]))
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    offset = start + hlen
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        for shape, sink in (((fan_in, fan_out), weights), ((fan_out,), biases)):
            count = int(np.prod(shape))
            arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
            sink.append(arr.astype(dtype.newbyteorder("=")))
            offset += count * dtype.itemsize
    if offset != len(raw):
        raise IncompatibleCheckpoint(f"{path}: {len(raw) - offset} trailing bytes")
    model = Mlp(spec, weights, biases)
    if model.checksum() != header["checksum"]:
        raise IncompatibleCheckpoint(f"{path}: parameter checksum mismatch")
    return model


def check_compatible(model, n_features, n_classes):
    if model.spec.n_inputs != n_features or model.spec.n_outputs != n_classes:
        raise IncompatibleCheckpoint(
            f"checkpoint maps {model.spec.n_inputs} -> {model.spec.n_outputs}, "
            f"dataset needs {n_features} -> {n_classes}")


def save_logits(logits, teacher_checksum, path):
    logits = np.ascontiguousarray(logits, dtype="<f4")
    n_rows, n_classes = logits.shape
    checksum = teacher_checksum.encode("ascii")
    if len(checksum) != 64:
        raise ValueError("teacher checksum must be a 64-character sha256 hex digest")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(LOGITS_MAGIC)
        fh.write(struct.pack("<BII", VERSION, n_classes, n_rows))
        fh.write(checksum)
        fh.write(logits.tobytes())
    return path


def load_logits(path, expected_checksum=None):
    """Return ``(logits, checksum)``; raise if the file belongs to another teacher."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != LOGITS_MAGIC:
        raise IncompatibleCheckpoint(f"{path}: not a logits cache (bad magic)")
    version, n_classes, n_rows = struct.unpack_from("<BII", raw, 8)
    if version != VERSION:
        raise IncompatibleCheckpoint(f"{path}: unsupported logits cache version {version}")
    start = 8 + struct.calcsize("<BII")
    checksum = raw[start:start + 64].decode("ascii")
    if expected_checksum is not None and checksum != expected_checksum:
        raise IncompatibleCheckpoint(f"{path}: cached logits come from a different teacher")
    body = raw[start + 64:]
    if len(body) != 4 * n_rows * n_classes:
        raise IncompatibleCheckpoint(f"{path}: expected {n_rows}x{n_classes} float32 rows")
    logits = np.frombuffer(body, dtype="<f4").reshape(n_rows, n_classes).astype(np.float32)
    return logits, checksum
