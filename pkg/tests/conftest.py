"""Shared fixtures and independent helpers for the test suite."""

from __future__ import annotations

import math
import struct

import numpy as np
import pytest

from splatslice.ingest import SH_NONE, GaussianCloud, StateSequence

# Standard 3DGS property order used by the handcrafted writer (degree 1).
DGS_PROPS_DEG1 = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(9)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def handcrafted_ply(rows, props, fmt="binary"):
    """Assemble PLY bytes by hand, independent of the package's writer."""
    lines = ["ply"]
    lines.append("format binary_little_endian 1.0" if fmt == "binary" else "format ascii 1.0")
    lines.append(f"element vertex {len(rows)}")
    lines += [f"property float {p}" for p in props]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    if fmt == "binary":
        body = b"".join(struct.pack("<" + "f" * len(props), *row) for row in rows)
    else:
        body = "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in rows).encode()
    return header + body


def random_cloud(n, seed=0, sh_degree=1, source_name="test") -> GaussianCloud:
    rng = np.random.default_rng(seed)
    bands = (sh_degree + 1) ** 2 - 1 if sh_degree else 0
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    if sh_degree:
        sh_table = rng.uniform(-0.4, 0.4, size=(n, bands, 3)).astype(np.float32)
        sh_indices = np.arange(n, dtype=np.int64)
    else:
        sh_table = np.empty((0, 0, 3), np.float32)
        sh_indices = np.full(n, SH_NONE, dtype=np.int64)
    return GaussianCloud(
        positions=rng.uniform(-1, 1, size=(n, 3)).astype(np.float32),
        scales=rng.uniform(0.01, 0.2, size=(n, 3)).astype(np.float32),
        rotations=quats.astype(np.float32),
        opacities=rng.uniform(0.05, 1.0, size=n).astype(np.float32),
        dc_colors=rng.uniform(-1.5, 1.5, size=(n, 3)).astype(np.float32),
        sh_indices=sh_indices,
        sh_degree=sh_degree,
        sh_table=sh_table,
        source_name=source_name,
    )


def take_rows(cloud: GaussianCloud, idx) -> GaussianCloud:
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


def random_sequence(k, n, shared_fraction, seed=0, sh_degree=1) -> StateSequence:
    """In-memory sequence: ceil(f*n) primitives bit-identical across states."""
    rng = np.random.default_rng(seed)
    n_shared = math.ceil(shared_fraction * n)
    shared = random_cloud(n_shared, seed=seed + 1, sh_degree=sh_degree)
    states = []
    for s in range(k):
        extra = random_cloud(n - n_shared, seed=seed + 100 + s, sh_degree=sh_degree)
        if sh_degree:
            table = np.concatenate([shared.sh_table, extra.sh_table]) if n else shared.sh_table
            idx = np.concatenate([shared.sh_indices, extra.sh_indices + len(shared.sh_table)])
        else:
            table = shared.sh_table
            idx = np.concatenate([shared.sh_indices, extra.sh_indices])
        states.append(
            GaussianCloud(
                positions=np.concatenate([shared.positions, extra.positions]),
                scales=np.concatenate([shared.scales, extra.scales]),
                rotations=np.concatenate([shared.rotations, extra.rotations]),
                opacities=np.concatenate([shared.opacities, extra.opacities]),
                dc_colors=np.concatenate([shared.dc_colors, extra.dc_colors]),
                sh_indices=idx,
                sh_degree=sh_degree,
                sh_table=table,
                source_name=f"state_{s}",
            )
        )
    offsets = np.linspace(-0.9, 0.9, k) if k > 1 else np.array([0.0])
    return StateSequence(states=states, offsets=offsets, axis=np.array([0.0, 0.0, 1.0]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
