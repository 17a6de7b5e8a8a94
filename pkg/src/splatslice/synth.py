"""Synthetic state-sequence generator.

Stands in for baked neural outputs: a configurable fraction of primitives
is bit-identical across every state, the rest are regenerated per state in
a thin band around that state's slicing plane. Deterministic for a fixed
seed.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .ingest import SH_NONE, GaussianCloud, write_ply

VOLUME_HALF = 1.0          # states live in the [-1, 1]^3 box
OFFSET_SPAN = 0.9          # offsets cover [-0.9, 0.9] along the axis
BAND_SIGMA = 0.03          # spread of state-exclusive primitives around the plane
SHARED_SH_POOL = 32        # distinct payloads in "shared" SH mode


def _random_unit_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return (q / np.linalg.norm(q, axis=1, keepdims=True)).astype(np.float32)


def _random_attrs(rng: np.random.Generator, n: int):
    scales = rng.uniform(0.02, 0.08, size=(n, 3)).astype(np.float32)
    rotations = _random_unit_quats(rng, n)
    opacities = rng.uniform(0.2, 0.95, size=n).astype(np.float32)
    dc = rng.uniform(-1.5, 1.5, size=(n, 3)).astype(np.float32)
    return scales, rotations, opacities, dc


def generate_case(
    out_dir,
    states: int,
    primitives: int,
    shared_fraction: float,
    seed: int = 0,
    sh_degree: int = 1,
    sh_mode: str = "shared",
    name: str = "case",
) -> dict:
    """Write K PLY files plus a manifest; returns a summary dict."""
    if states < 1:
        raise InvalidArgumentError(f"need at least one state, got {states}")
    if primitives < 0:
        raise InvalidArgumentError(f"primitive count must be >= 0, got {primitives}")
    if not 0.0 <= shared_fraction <= 1.0:
        raise InvalidArgumentError(f"shared fraction must be in [0,1], got {shared_fraction}")
    if sh_degree not in (0, 1, 2, 3):
        raise InvalidArgumentError(f"SH degree must be 0..3, got {sh_degree}")
    if sh_mode not in ("shared", "unique"):
        raise InvalidArgumentError(f"sh_mode must be 'shared' or 'unique', got {sh_mode!r}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    axis = np.array([0.0, 0.0, 1.0])
    offsets = (
        np.linspace(-OFFSET_SPAN, OFFSET_SPAN, states) if states > 1 else np.array([0.0])
    )

    n_shared = math.ceil(shared_fraction * primitives)
    n_band = primitives - n_shared
    bands = (sh_degree + 1) ** 2 - 1 if sh_degree else 0

    seeds = np.random.SeedSequence(seed).spawn(states + 1)
    rng0 = np.random.default_rng(seeds[0])

    shared_pos = rng0.uniform(-VOLUME_HALF, VOLUME_HALF, size=(n_shared, 3)).astype(np.float32)
    shared_scale, shared_rot, shared_op, shared_dc = _random_attrs(rng0, n_shared)

    if sh_degree:
        pool_size = SHARED_SH_POOL if sh_mode == "shared" else 0
        pool = (
            rng0.uniform(-0.3, 0.3, size=(pool_size, bands, 3)).astype(np.float32)
            if pool_size
            else None
        )
        if sh_mode == "shared":
            shared_sh_idx = rng0.integers(0, pool_size, size=n_shared)
        else:
            shared_payloads = rng0.uniform(-0.3, 0.3, size=(n_shared, bands, 3)).astype(
                np.float32
            )
            shared_sh_idx = np.arange(n_shared)

    entries = []
    total_bytes = 0
    for k in range(states):
        rng_k = np.random.default_rng(seeds[k + 1])
        band_pos = np.empty((n_band, 3), dtype=np.float32)
        band_pos[:, 0:2] = rng_k.uniform(-VOLUME_HALF, VOLUME_HALF, size=(n_band, 2))
        band_pos[:, 2] = np.clip(
            offsets[k] + rng_k.normal(0.0, BAND_SIGMA, size=n_band),
            -VOLUME_HALF,
            VOLUME_HALF,
        )
        band_scale, band_rot, band_op, band_dc = _random_attrs(rng_k, n_band)

        if sh_degree == 0:
            sh_table = np.empty((0, 0, 3), np.float32)
            sh_indices = np.full(primitives, SH_NONE, dtype=np.int64)
        elif sh_mode == "shared":
            sh_table = pool
            band_idx = rng_k.integers(0, len(pool), size=n_band)
            sh_indices = np.concatenate([shared_sh_idx, band_idx])
        else:
            band_payloads = rng_k.uniform(-0.3, 0.3, size=(n_band, bands, 3)).astype(np.float32)
            sh_table = (
                np.concatenate([shared_payloads, band_payloads])
                if primitives
                else np.empty((0, bands, 3), np.float32)
            )
            sh_indices = np.arange(primitives, dtype=np.int64)

        cloud = GaussianCloud(
            positions=np.concatenate([shared_pos, band_pos]),
            scales=np.concatenate([shared_scale, band_scale]),
            rotations=np.concatenate([shared_rot, band_rot]),
            opacities=np.concatenate([shared_op, band_op]),
            dc_colors=np.concatenate([shared_dc, band_dc]),
            sh_indices=sh_indices,
            sh_degree=sh_degree,
            sh_table=sh_table,
            source_name=f"{name}_{k:03d}",
        )
        fname = f"{name}_{k:03d}.ply"
        blob = write_ply(cloud)
        (out_dir / fname).write_bytes(blob)
        total_bytes += len(blob)
        entries.append({"path": fname, "offset": float(offsets[k])})

    manifest = {"axis": axis.tolist(), "states": entries}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", "utf-8")
    return {
        "manifest": str(manifest_path),
        "states": states,
        "primitives": primitives,
        "shared": n_shared,
        "ply_bytes": total_bytes,
    }
