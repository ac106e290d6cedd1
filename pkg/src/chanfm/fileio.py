"""Bit-exact binary file formats and text run configuration.

Dataset files ("WGCT"): little-endian header
    magic 4s | version u32 | dtype u8 | T u32 | S u32 | F u32 | count u32
followed by the payload, sample-major then t, s, f (complex values as f32
real/imag pairs), plus a text sidecar manifest `<path>.manifest` holding
sorted key=value metadata and the SHA-256 of the payload.

Checkpoint files ("WGCK"): little-endian header
    magic 4s | version u32 | record count u32
then per record: name length u16, UTF-8 name, rank u8, dims u32 each, f32
payload; a CRC32 of all record bytes trails the file.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from configparser import ConfigParser
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"WGCT"
CHECKPOINT_MAGIC = b"WGCK"
FORMAT_VERSION = 1
DTYPE_COMPLEX64 = 0
DTYPE_FLOAT32 = 1


class FileFormatError(Exception):
    pass


class BadMagicError(FileFormatError):
    pass


class UnsupportedVersionError(FileFormatError):
    pass


class BadChecksumError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


class ConfigError(ValueError):
    pass


def _manifest_path(path) -> Path:
    return Path(str(path) + ".manifest")


def save_dataset(path, samples: np.ndarray, metadata: dict | None = None) -> None:
    """Write samples [count, T, S, F] (complex or float32) plus the manifest."""
    samples = np.asarray(samples)
    if samples.ndim != 4:
        raise FileFormatError(f"dataset must be [count, T, S, F], got {samples.shape}")
    count, T, S, F = samples.shape
    if np.iscomplexobj(samples):
        dtype = DTYPE_COMPLEX64
        payload = np.ascontiguousarray(samples.astype(np.complex64)).tobytes()
    else:
        dtype = DTYPE_FLOAT32
        payload = np.ascontiguousarray(samples.astype(np.float32)).tobytes()
    header = struct.pack("<4sIBIIII", DATASET_MAGIC, FORMAT_VERSION, dtype, T, S, F, count)
    Path(path).write_bytes(header + payload)

    lines = [f"payload_sha256={hashlib.sha256(payload).hexdigest()}"]
    for k in sorted(metadata or {}):
        v = (metadata or {})[k]
        lines.append(f"{k}={v}")
    _manifest_path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path, verify: bool = True):
    """Read a dataset file; returns (samples, metadata dict)."""
    blob = Path(path).read_bytes()
    head_len = struct.calcsize("<4sIBIIII")
    if len(blob) < head_len:
        raise TruncatedFileError(f"{path}: shorter than the header")
    magic, version, dtype, T, S, F, count = struct.unpack("<4sIBIIII", blob[:head_len])
    if magic != DATASET_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    scalar = 8 if dtype == DTYPE_COMPLEX64 else 4
    want = count * T * S * F * scalar
    payload = blob[head_len:]
    if len(payload) != want:
        raise TruncatedFileError(f"{path}: payload is {len(payload)} bytes, header says {want}")

    metadata: dict[str, str] = {}
    man = _manifest_path(path)
    if man.exists():
        for line in man.read_text().splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                metadata[k] = v
        if verify:
            got = hashlib.sha256(payload).hexdigest()
            if metadata.get("payload_sha256") not in (None, got):
                raise BadChecksumError(f"{path}: payload checksum mismatch")
    if dtype == DTYPE_COMPLEX64:
        samples = np.frombuffer(payload, dtype="<c8").reshape(count, T, S, F)
    elif dtype == DTYPE_FLOAT32:
        samples = np.frombuffer(payload, dtype="<f4").reshape(count, T, S, F)
    else:
        raise FileFormatError(f"{path}: unknown dtype code {dtype}")
    return samples.copy(), metadata


def save_checkpoint(path, records: dict[str, np.ndarray]) -> None:
    """Write named float32 tensor records with a trailing CRC32."""
    names = list(records)
    if len(set(names)) != len(names):
        raise FileFormatError("record names must be unique")
    body = bytearray()
    for name in names:
        arr = np.asarray(records[name], dtype=np.float32)
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FileFormatError(f"record name too long: {name[:32]}...")
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    header = struct.pack("<4sII", CHECKPOINT_MAGIC, FORMAT_VERSION, len(names))
    crc = struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    Path(path).write_bytes(header + bytes(body) + crc)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    head_len = struct.calcsize("<4sII")
    if len(blob) < head_len + 4:
        raise TruncatedFileError(f"{path}: shorter than header + checksum")
    magic, version, n_records = struct.unpack("<4sII", blob[:head_len])
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    body, crc_bytes = blob[head_len:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != (zlib.crc32(body) & 0xFFFFFFFF):
        raise BadChecksumError(f"{path}: CRC32 mismatch")
    records: dict[str, np.ndarray] = {}
    off = 0
    for _ in range(n_records):
        try:
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", body, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(dims)
            off += 4 * size
        except (struct.error, ValueError) as e:
            raise TruncatedFileError(f"{path}: truncated record table ({e})") from None
        if name in records:
            raise FileFormatError(f"{path}: duplicate record name {name!r}")
        records[name] = arr.copy()
    if off != len(body):
        raise TruncatedFileError(f"{path}: {len(body) - off} trailing bytes after records")
    return records


# ---------------------------------------------------------------------------
# Run configuration: INI-style text with a strict key schema
# ---------------------------------------------------------------------------

_SCHEMA: dict[str, dict[str, type]] = {
    "simulator": {
        "task": str, "subcarriers": int, "slots": int, "tx": str, "rx": str,
        "dual_pol": bool, "carrier_hz": float, "scs_hz": float, "slot_s": float,
        "velocity_kmh": float, "scatterers": int, "pilot_len": int, "snr_db": float,
        "count": int, "per_class": int,
    },
    "encoder": {
        "d_model": int, "layers": int, "heads": int, "ff": int, "patch": str,
        "mask_ratio": float, "dropout": float,
    },
    "pretrain": {"epochs": int, "batch": int, "lr": float, "noise_snr_lo": float,
                 "noise_snr_hi": float},
    "task": {
        "kind": str, "input": str, "head": str, "width": int, "blocks": int,
        "heads": int, "ff": int, "steps": int, "lr": float, "batch": int,
        "finetune_rounds": int, "finetune_steps": int,
    },
    "eval": {
        "tasks": str, "modes": str, "snr_grid": str, "velocity_grid": str,
        "seeds": str, "train_count": int, "test_count": int, "pretrain_count": int,
        "pretrain_epochs": int, "head_steps": int, "head_batch": int, "head_lr": float,
        "head_width": int, "head_blocks": int, "timing": bool,
    },
}

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


class RunConfig:
    """Validated key/value configuration; unknown sections or keys are rejected."""

    def __init__(self, values: dict[str, dict[str, object]], text: str):
        self.values = values
        self.text = text

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = ConfigParser()
        parser.read_string(text)
        values: dict[str, dict[str, object]] = {}
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            values[section] = {}
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                kind = _SCHEMA[section][key]
                try:
                    if kind is bool:
                        values[section][key] = _BOOL[raw.strip().lower()]
                    else:
                        values[section][key] = kind(raw)
                except (KeyError, ValueError):
                    raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from None
        return cls(values, text)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)

    def hash(self) -> str:
        canon = []
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                canon.append(f"{section}.{key}={self.values[section][key]}")
        return hashlib.sha256("\n".join(canon).encode()).hexdigest()[:16]


def int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if str(x).strip()]


def float_list(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if str(x).strip()]


def str_list(text: str) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


def shape_of(text: str) -> tuple:
    return tuple(int(x) for x in str(text).lower().split("x"))
