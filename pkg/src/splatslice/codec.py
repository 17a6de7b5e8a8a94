"""Bit-exact binary asset format (little-endian throughout).

Layout::

    magic "CGSA" | version u32 | flags u32 | axis 3xf32 | K u32 |
    offsets Kxf32 | bounds 6xf32 | sh_degree u8 | sh_count u32 |
    sh_table sh_count x bands x 3 x f16 |
    base_count u32 | base records | K x (delta_count u32 | delta records) |
    crc32 u32

Record: position 3xf32 | scale 3xf32 | rotation smallest-three u32 |
opacity u8 | dc 3xf16 | sh_index u32 (0xFFFFFFFF = none).

The rotation codec packs the drop index in the top 2 bits and three 10-bit
components over [-1/sqrt2, 1/sqrt2]. Encoding picks the nearest of the four
candidate codewords (ties to the smaller packed word), which makes
encode -> decode -> encode reproduce identical bytes.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .compiler import LayeredAsset
from .errors import AssetFormatError, AssetIntegrityError, AssetTruncatedError
from .ingest import SH_NONE, GaussianCloud

MAGIC = b"CGSA"
VERSION = 1
SH_INDEX_NONE = 0xFFFFFFFF

_SQRT2 = np.sqrt(2.0)
_REC_DTYPE = np.dtype(
    [
        ("pos", "<f4", 3),
        ("scale", "<f4", 3),
        ("rot", "<u4"),
        ("opacity", "u1"),
        ("dc", "<f2", 3),
        ("sh", "<u4"),
    ]
)
RECORD_SIZE = _REC_DTYPE.itemsize  # 39 bytes


def _grid_encode(v: np.ndarray) -> np.ndarray:
    """Component value in [-1/sqrt2, 1/sqrt2] -> 10-bit grid index."""
    return np.clip(np.rint((v * _SQRT2 + 1.0) * 0.5 * 1023.0), 0, 1023).astype(np.uint32)


def _grid_decode(g: np.ndarray) -> np.ndarray:
    return (g.astype(np.float64) / 1023.0 * 2.0 - 1.0) / _SQRT2


def pack_quaternions(quats: np.ndarray) -> np.ndarray:
    """(N,4) unit quaternions -> (N,) u32 smallest-three words."""
    q = np.asarray(quats, dtype=np.float64)
    n = len(q)
    errs = np.empty((n, 4))
    words = np.empty((n, 4), dtype=np.uint64)
    others_idx = [[j for j in range(4) if j != i] for i in range(4)]
    for i in range(4):
        sign = np.where(q[:, i] < 0, -1.0, 1.0)
        qq = q * sign[:, None]
        others = qq[:, others_idx[i]]
        grid = _grid_encode(others)
        vals = _grid_decode(grid)
        recon = np.sqrt(np.maximum(1.0 - np.sum(vals * vals, axis=1), 0.0))
        errs[:, i] = np.sum((others - vals) ** 2, axis=1) + (qq[:, i] - recon) ** 2
        words[:, i] = (
            (np.uint64(i) << np.uint64(30))
            | (grid[:, 0].astype(np.uint64) << np.uint64(20))
            | (grid[:, 1].astype(np.uint64) << np.uint64(10))
            | grid[:, 2].astype(np.uint64)
        )
    best = errs.min(axis=1, keepdims=True)
    candidates = np.where(errs == best, words, np.uint64(1) << np.uint64(60))
    return candidates.min(axis=1).astype(np.uint32)


def unpack_quaternions(words: np.ndarray) -> np.ndarray:
    """(N,) u32 words -> (N,4) unit quaternions (w,x,y,z), float64."""
    w = np.asarray(words, dtype=np.uint32)
    idx = (w >> 30).astype(np.int64)
    g = np.stack([(w >> 20) & 0x3FF, (w >> 10) & 0x3FF, w & 0x3FF], axis=1)
    vals = _grid_decode(g)
    recon = np.sqrt(np.maximum(1.0 - np.sum(vals * vals, axis=1), 0.0))
    out = np.empty((len(w), 4))
    rows = np.arange(len(w))
    out[rows, idx] = recon
    others = np.array([[j for j in range(4) if j != i] for i in range(4)])
    cols = others[idx]
    out[rows[:, None], cols] = vals
    return out


def _encode_records(cloud: GaussianCloud) -> bytes:
    rec = np.zeros(len(cloud), dtype=_REC_DTYPE)
    rec["pos"] = cloud.positions
    rec["scale"] = cloud.scales
    rec["rot"] = pack_quaternions(cloud.rotations.astype(np.float64))
    rec["opacity"] = np.rint(cloud.opacities.astype(np.float64) * 255.0).astype(np.uint8)
    rec["dc"] = cloud.dc_colors.astype(np.float16)
    rec["sh"] = np.where(
        cloud.sh_indices == SH_NONE, SH_INDEX_NONE, cloud.sh_indices
    ).astype(np.uint32)
    return rec.tobytes()


def _decode_records(raw: bytes, count: int, sh_degree: int, sh_table, name: str) -> GaussianCloud:
    rec = np.frombuffer(raw, dtype=_REC_DTYPE, count=count)
    sh_idx = rec["sh"].astype(np.int64)
    bad = (sh_idx != SH_INDEX_NONE) & (sh_idx >= len(sh_table))
    if np.any(bad):
        raise AssetFormatError(
            f"{name}: sh_index {int(sh_idx[np.argmax(bad)])} exceeds table size {len(sh_table)}"
        )
    sh_idx = np.where(sh_idx == SH_INDEX_NONE, SH_NONE, sh_idx)
    return GaussianCloud(
        positions=np.ascontiguousarray(rec["pos"]),
        scales=np.ascontiguousarray(rec["scale"]),
        rotations=unpack_quaternions(rec["rot"]).astype(np.float32),
        opacities=(rec["opacity"].astype(np.float64) / 255.0).astype(np.float32),
        dc_colors=rec["dc"].astype(np.float32),
        sh_indices=sh_idx,
        sh_degree=sh_degree,
        sh_table=sh_table,
        source_name=name,
    )


def encode_asset(asset: LayeredAsset) -> bytes:
    """Serialize an asset; identical inputs produce identical bytes."""
    k = asset.num_states
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, 0)
    buf += np.asarray(asset.axis, dtype="<f4").tobytes()
    buf += struct.pack("<I", k)
    buf += np.asarray(asset.offsets, dtype="<f4").tobytes()
    buf += np.asarray(asset.bounds, dtype="<f4").tobytes()
    table = np.ascontiguousarray(asset.sh_table, dtype="<f2")
    buf += struct.pack("<BI", asset.sh_degree, len(table))
    buf += table.tobytes()
    buf += struct.pack("<I", len(asset.base_layer))
    buf += _encode_records(asset.base_layer)
    for delta in asset.delta_layers:
        buf += struct.pack("<I", len(delta))
        buf += _encode_records(delta)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    return bytes(buf)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise AssetTruncatedError(self.pos + n, len(self.data))
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def decode_asset(data: bytes) -> LayeredAsset:
    """Parse an encoded asset, verifying layout and checksum."""
    cur = _Cursor(data)
    if cur.take(4) != MAGIC:
        raise AssetFormatError("bad magic (not a CGSA asset)")
    version = cur.u32()
    if version != VERSION:
        raise AssetFormatError(f"unsupported version {version}")
    cur.u32()  # flags, reserved
    axis = np.frombuffer(cur.take(12), dtype="<f4").astype(np.float64)
    k = cur.u32()
    if k < 1:
        raise AssetFormatError("asset must contain at least one state")
    offsets = np.frombuffer(cur.take(4 * k), dtype="<f4").astype(np.float64)
    if np.any(np.diff(offsets) <= 0):
        raise AssetFormatError("offsets are not strictly increasing")
    bounds = np.frombuffer(cur.take(24), dtype="<f4").reshape(2, 3)
    sh_degree = cur.u8()
    if sh_degree not in (0, 1, 2, 3):
        raise AssetFormatError(f"invalid SH degree {sh_degree}")
    sh_count = cur.u32()
    if sh_degree == 0 and sh_count > 0:
        raise AssetFormatError("SH table present but degree is 0")
    bands = (sh_degree + 1) ** 2 - 1 if sh_degree else 0
    table = (
        np.frombuffer(cur.take(sh_count * bands * 3 * 2), dtype="<f2").reshape(
            sh_count, bands, 3
        )
        if sh_count
        else np.empty((0, bands, 3), dtype=np.float16)
    )

    def read_layer(name: str) -> GaussianCloud:
        count = cur.u32()
        raw = cur.take(count * RECORD_SIZE)
        return _decode_records(raw, count, sh_degree, table, name)

    base = read_layer("base")
    deltas = [read_layer(f"delta_{i}") for i in range(k)]
    crc_offset = cur.pos
    stored = cur.u32()
    if cur.pos != len(data):
        raise AssetFormatError(f"{len(data) - cur.pos} trailing bytes after checksum")
    actual = zlib.crc32(data[:crc_offset])
    if stored != actual:
        raise AssetIntegrityError(f"crc mismatch: stored {stored:#010x}, computed {actual:#010x}")

    return LayeredAsset(
        axis=axis,
        offsets=offsets,
        sh_degree=sh_degree,
        sh_table=table,
        base_layer=base,
        delta_layers=deltas,
        bounds=bounds,
    )


def load_asset(path) -> LayeredAsset:
    with open(path, "rb") as f:
        return decode_asset(f.read())


def save_asset(asset: LayeredAsset, path) -> int:
    blob = encode_asset(asset)
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)
