"""Consolidate a state sequence into one layered asset.

Consolidation has two steps: higher-order SH payloads are deduplicated into
one global table shared by every state, then primitives present in all K
states (matched by a quantized identity key) move into a shared base layer,
leaving per-state deltas that hold only each state's exclusive residue.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import CompileError, InvalidArgumentError
from .ingest import SH_NONE, GaussianCloud, StateSequence

# Identity-key quantization grids. Baked states copy unchanged primitives
# bitwise, so exact matching on a fine grid is sufficient and keeps
# reconstruction lossless.
POSITION_STEP = 1e-5
SCALE_STEP = 1e-5
OPACITY_STEP = 1e-5
DC_STEP = 1e-5
ROTATION_STEP = 1e-6

_NONE_PAYLOAD_DIGEST = b"\xff" * 16
_KEY_BYTES = 14 * 8 + 16  # 14 quantized int64 attributes + payload digest


@dataclass(eq=False)
class LayeredAsset:
    """Compiled form: global SH table, shared base layer, K delta layers."""

    axis: np.ndarray
    offsets: np.ndarray
    sh_degree: int
    sh_table: np.ndarray
    base_layer: GaussianCloud
    delta_layers: list[GaussianCloud]
    bounds: np.ndarray

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=np.float64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.bounds = np.asarray(self.bounds, dtype=np.float32).reshape(2, 3)
        if len(self.offsets) != len(self.delta_layers) or len(self.offsets) < 1:
            raise InvalidArgumentError("need one delta layer per offset, K >= 1")
        if np.any(np.diff(self.offsets) <= 0):
            raise InvalidArgumentError("offsets must be strictly increasing")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-6:
            raise InvalidArgumentError("axis must be a unit vector")

    @property
    def num_states(self) -> int:
        return len(self.offsets)

    @property
    def base_count(self) -> int:
        return len(self.base_layer)

    @property
    def delta_total(self) -> int:
        return sum(len(d) for d in self.delta_layers)


def _payload_digests(sh_table: np.ndarray) -> np.ndarray:
    """16-byte digest per global SH table entry."""
    table16 = np.ascontiguousarray(sh_table, dtype=np.float16)
    out = np.empty(len(table16), dtype="|S16")
    for m in range(len(table16)):
        out[m] = hashlib.blake2b(table16[m].tobytes(), digest_size=16).digest()
    return out


def _quantized_columns(cloud: GaussianCloud) -> np.ndarray:
    """(N, 14) int64 grid coordinates of every matched attribute."""
    n = len(cloud)
    q = np.empty((n, 14), dtype=np.int64)
    q[:, 0:3] = np.round(cloud.positions.astype(np.float64) / POSITION_STEP)
    q[:, 3:6] = np.round(cloud.scales.astype(np.float64) / SCALE_STEP)
    rot = cloud.rotations.astype(np.float64)
    sign = np.where(rot[:, 0] < 0, -1.0, 1.0)  # canonicalize quaternion to w >= 0
    q[:, 6:10] = np.round(rot * sign[:, None] / ROTATION_STEP)
    q[:, 10] = np.round(cloud.opacities.astype(np.float64) / OPACITY_STEP)
    q[:, 11:14] = np.round(cloud.dc_colors.astype(np.float64) / DC_STEP)
    return q


def identity_keys(cloud: GaussianCloud, payload_digests: np.ndarray | None = None) -> np.ndarray:
    """Per-primitive identity key bytes, shape (N,) of |S{_KEY_BYTES}.

    Keys are equal exactly when every attribute falls on the same grid cell
    and the SH payloads are bytewise identical at storage precision.
    """
    if payload_digests is None:
        payload_digests = _payload_digests(cloud.sh_table)
    n = len(cloud)
    raw = np.empty((n, _KEY_BYTES), dtype=np.uint8)
    raw[:, : 14 * 8] = _quantized_columns(cloud).view(np.uint8).reshape(n, 14 * 8)
    pay = np.full(n, _NONE_PAYLOAD_DIGEST, dtype="|S16")
    mask = cloud.sh_indices != SH_NONE
    if mask.any():
        pay[mask] = payload_digests[cloud.sh_indices[mask]]
    raw[:, 14 * 8 :] = pay.view(np.uint8).reshape(n, 16)
    return np.ascontiguousarray(raw).view(f"|S{_KEY_BYTES}").reshape(n)


def identity_key(prim, sh_payload: np.ndarray | None) -> bytes:
    """Identity key of a single primitive (scalar convenience)."""
    if sh_payload is None:
        digest = _NONE_PAYLOAD_DIGEST
    else:
        digest = hashlib.blake2b(
            np.ascontiguousarray(sh_payload, dtype=np.float16).tobytes(), digest_size=16
        ).digest()
    q = np.empty(14, dtype=np.int64)
    q[0:3] = np.round(np.asarray(prim.position, np.float64) / POSITION_STEP)
    q[3:6] = np.round(np.asarray(prim.scale, np.float64) / SCALE_STEP)
    rot = np.asarray(prim.rotation, np.float64)
    if rot[0] < 0:
        rot = -rot
    q[6:10] = np.round(rot / ROTATION_STEP)
    q[10] = round(prim.opacity / OPACITY_STEP)
    q[11:14] = np.round(np.asarray(prim.dc_color, np.float64) / DC_STEP)
    return q.tobytes() + digest


def dedup_sh(seq: StateSequence) -> tuple[np.ndarray, StateSequence]:
    """Merge all per-state SH tables into one global float16 table.

    Payloads are quantized to storage precision (float16) and keyed
    bytewise; the global table keeps first-use order. Every returned state
    shares the global table. Idempotent.
    """
    degrees = {c.sh_degree for c in seq.states if c.sh_degree > 0}
    if len(degrees) > 1:
        raise CompileError(f"states mix SH degrees {sorted(degrees)}")
    degree = degrees.pop() if degrees else 0
    bands = (degree + 1) ** 2 - 1 if degree else 0

    mapping: dict[bytes, int] = {}
    entries: list[np.ndarray] = []
    remapped: list[np.ndarray] = []
    for cloud in seq.states:
        idx = cloud.sh_indices
        used = idx != SH_NONE
        new_idx = np.full(len(cloud), SH_NONE, dtype=np.int64)
        if used.any():
            local16 = np.ascontiguousarray(cloud.sh_table, dtype=np.float16)
            # register table entries in order of first use by a primitive
            uniq, first = np.unique(idx[used], return_index=True)
            order = np.argsort(first)
            local_map = np.full(len(local16), -1, dtype=np.int64)
            for local in uniq[order]:
                b = local16[local].tobytes()
                g = mapping.get(b)
                if g is None:
                    g = len(mapping)
                    mapping[b] = g
                    entries.append(local16[local])
                local_map[local] = g
            new_idx[used] = local_map[idx[used]]
        remapped.append(new_idx)

    table = (
        np.stack(entries).astype(np.float16)
        if entries
        else np.empty((0, bands, 3), dtype=np.float16)
    )
    new_states = [
        GaussianCloud(
            positions=c.positions,
            scales=c.scales,
            rotations=c.rotations,
            opacities=c.opacities,
            dc_colors=c.dc_colors,
            sh_indices=remapped[i],
            sh_degree=degree,
            sh_table=table,
            source_name=c.source_name,
        )
        for i, c in enumerate(seq.states)
    ]
    return table, StateSequence(states=new_states, offsets=seq.offsets, axis=seq.axis)


def _take(cloud: GaussianCloud, idx: np.ndarray) -> GaussianCloud:
    return GaussianCloud(
        positions=cloud.positions[idx],
        scales=cloud.scales[idx],
        rotations=cloud.rotations[idx],
        opacities=cloud.opacities[idx],
        dc_colors=cloud.dc_colors[idx],
        sh_indices=cloud.sh_indices[idx],
        sh_degree=cloud.sh_degree,
        sh_table=cloud.sh_table,
        source_name=cloud.source_name,
    )


def consolidate(seq: StateSequence) -> LayeredAsset:
    """Build the layered asset: shared base plus one exclusive delta per state."""
    table, seq = dedup_sh(seq)
    digests = _payload_digests(table)
    keys = [identity_keys(c, digests) for c in seq.states]

    for k, kk in enumerate(keys):
        uniq, counts = np.unique(kk, return_counts=True)
        if np.any(counts > 1):
            dup = uniq[np.argmax(counts > 1)]
            raise CompileError(
                f"state {k} ({seq.states[k].source_name or 'unnamed'}) contains duplicate "
                f"primitives with identity key {dup.hex()}"
            )

    base_keys = reduce(
        lambda a, b: np.intersect1d(a, b, assume_unique=True),
        [np.sort(kk) for kk in keys],
    )

    def ordered_subset(state_idx: int, member: np.ndarray) -> GaussianCloud:
        sel = np.flatnonzero(member)
        order = np.argsort(keys[state_idx][sel], kind="stable")
        return _take(seq.states[state_idx], sel[order])

    in_base_0 = np.isin(keys[0], base_keys, assume_unique=True)
    base = ordered_subset(0, in_base_0)
    deltas = [
        ordered_subset(k, ~np.isin(keys[k], base_keys, assume_unique=True))
        for k in range(len(seq))
    ]

    parts = [base.positions] + [d.positions for d in deltas]
    stacked = np.concatenate([p for p in parts if len(p)]) if any(len(p) for p in parts) else None
    if stacked is None:
        bounds = np.zeros((2, 3), dtype=np.float32)
    else:
        bounds = np.stack([stacked.min(axis=0), stacked.max(axis=0)])

    return LayeredAsset(
        axis=seq.axis,
        offsets=seq.offsets,
        sh_degree=seq.states[0].sh_degree,
        sh_table=table,
        base_layer=base,
        delta_layers=deltas,
        bounds=bounds,
    )


def reconstruct_state(asset: LayeredAsset, k: int) -> GaussianCloud:
    """Base plus delta k, the full Gaussian state for one baked offset."""
    if not 0 <= k < asset.num_states:
        raise IndexError(f"state index {k} out of range [0, {asset.num_states})")
    b, d = asset.base_layer, asset.delta_layers[k]
    return GaussianCloud(
        positions=np.concatenate([b.positions, d.positions]),
        scales=np.concatenate([b.scales, d.scales]),
        rotations=np.concatenate([b.rotations, d.rotations]),
        opacities=np.concatenate([b.opacities, d.opacities]),
        dc_colors=np.concatenate([b.dc_colors, d.dc_colors]),
        sh_indices=np.concatenate([b.sh_indices, d.sh_indices]),
        sh_degree=asset.sh_degree,
        sh_table=asset.sh_table,
        source_name=f"state_{k}",
    )
