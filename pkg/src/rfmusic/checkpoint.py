"""Checkpoint container: magic "RFMK1\\n", a length-prefixed JSON header
(configs, step, rng state, tensor index with byte offsets), raw little-endian
tensor payloads, and a trailing CRC32 over everything before it. Round trips
are byte-identical; truncation or corruption is rejected, never partially
loaded."""

import dataclasses
import json
import struct
import zlib

import numpy as np

from .errors import CheckpointCorruptError, CheckpointVersionError

MAGIC = b"RFMK1\n"
FORMAT_VERSION = 1
_DTYPES = {"f32": "<f4", "f64": "<f8"}


def _config_dict(cfg):
    return dataclasses.asdict(cfg) if dataclasses.is_dataclass(cfg) else dict(cfg)


def save_checkpoint(path, *, model_config, train_config, encoder_config, step,
                    tensors, norm_stats, rng_state, extra=None):
    """Write a checkpoint.

    tensors: ordered {name: ndarray}; dtype must be float32 or float64.
    rng_state: the bit-generator state dict of a numpy Generator.
    """
    index = []
    payload = bytearray()
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype = "f32" if arr.dtype == np.float32 else "f64"
        index.append(
            {"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": len(payload)}
        )
        payload.extend(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": _config_dict(model_config),
        "train_config": _config_dict(train_config),
        "encoder_config": _config_dict(encoder_config),
        "step": int(step),
        "norm_stats": {"mean": float(norm_stats[0]), "std": float(norm_stats[1])},
        "rng_state": rng_state,
        "tensors": index,
        "payload_bytes": len(payload),
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(head)) + head + bytes(payload)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", crc))


def load_checkpoint(path):
    """Read a checkpoint; returns (header dict, {name: ndarray})."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 12 or not blob.startswith(MAGIC):
        raise CheckpointCorruptError(f"{path}: not a checkpoint (bad magic)")
    body, tail = blob[:-4], blob[-4:]
    if struct.unpack("<I", tail)[0] != (zlib.crc32(body) & 0xFFFFFFFF):
        raise CheckpointCorruptError(f"{path}: CRC mismatch (truncated or corrupted)")
    off = len(MAGIC)
    (head_len,) = struct.unpack_from("<Q", body, off)
    off += 8
    header = json.loads(body[off:off + head_len].decode("utf-8"))
    off += head_len
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {header.get('format_version')} needs migration "
            f"(this build reads version {FORMAT_VERSION})"
        )
    payload = body[off:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointCorruptError(f"{path}: payload length mismatch")
    tensors = {}
    for entry in header["tensors"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dt, count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, tensors
