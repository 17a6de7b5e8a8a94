"""Parse per-state Gaussian point clouds from PLY and assemble state sequences.

The PLY layout is the de-facto 3DGS export convention: one ``vertex`` element
with float properties x, y, z, f_dc_0..2, f_rest_*, opacity, scale_0..2,
rot_0..3. Scales are stored in log space and opacities in logit space.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import GaussianPrimitive, ShCoefficients
from .errors import (
    InvalidArgumentError,
    ManifestError,
    PlyDataError,
    PlyParseError,
    PlySchemaError,
)

SH_NONE = -1

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_REQUIRED_PROPS = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity",
    "f_dc_0", "f_dc_1", "f_dc_2",
)

# f_rest property count -> SH degree
_REST_DEGREES = {0: 0, 9: 1, 24: 2, 45: 3}


def threads_limit() -> int:
    """Worker cap from SPLATSLICE_THREADS (defaults to the CPU count)."""
    raw = os.environ.get("SPLATSLICE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n if n > 0 else (os.cpu_count() or 1))


@dataclass
class Violation:
    """One invariant violation found by :func:`validate_cloud`."""

    index: int
    fieldname: str
    message: str

    def __str__(self):
        return f"primitive {self.index}: {self.fieldname}: {self.message}"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass
class GaussianCloud:
    """A full Gaussian state, stored column-wise for bulk math.

    ``sh_indices`` holds SH_NONE (-1) for primitives without higher-order
    coefficients; other entries index ``sh_table`` of shape (M, B, 3).
    """

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    dc_colors: np.ndarray
    sh_indices: np.ndarray
    sh_degree: int
    sh_table: np.ndarray
    source_name: str = ""

    def __post_init__(self):
        n = len(self.positions)
        self.positions = _frozen(np.ascontiguousarray(self.positions, dtype=np.float32))
        self.scales = _frozen(np.ascontiguousarray(self.scales, dtype=np.float32))
        self.rotations = _frozen(np.ascontiguousarray(self.rotations, dtype=np.float32))
        self.opacities = _frozen(np.ascontiguousarray(self.opacities, dtype=np.float32))
        self.dc_colors = _frozen(np.ascontiguousarray(self.dc_colors, dtype=np.float32))
        self.sh_indices = _frozen(np.ascontiguousarray(self.sh_indices, dtype=np.int64))
        self.sh_table = _frozen(np.ascontiguousarray(self.sh_table))
        for name in ("scales", "rotations", "opacities", "dc_colors", "sh_indices"):
            if len(getattr(self, name)) != n:
                raise InvalidArgumentError(f"{name} length does not match positions ({n})")
        bad = (self.sh_indices < SH_NONE) | (self.sh_indices >= len(self.sh_table))
        if np.any(bad):
            raise InvalidArgumentError(
                f"sh_indices out of range at {np.flatnonzero(bad)[:5].tolist()}"
            )

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls, sh_degree: int = 0, source_name: str = "") -> "GaussianCloud":
        b = (sh_degree + 1) ** 2 - 1 if sh_degree else 0
        return cls(
            positions=np.empty((0, 3), np.float32),
            scales=np.empty((0, 3), np.float32),
            rotations=np.empty((0, 4), np.float32),
            opacities=np.empty(0, np.float32),
            dc_colors=np.empty((0, 3), np.float32),
            sh_indices=np.empty(0, np.int64),
            sh_degree=sh_degree,
            sh_table=np.empty((0, b, 3), np.float32),
            source_name=source_name,
        )

    def primitive(self, i: int) -> GaussianPrimitive:
        idx = int(self.sh_indices[i])
        return GaussianPrimitive(
            position=self.positions[i],
            scale=self.scales[i],
            rotation=self.rotations[i],
            opacity=float(self.opacities[i]),
            dc_color=self.dc_colors[i],
            sh_index=None if idx == SH_NONE else idx,
        )

    @property
    def primitives(self) -> list[GaussianPrimitive]:
        return [self.primitive(i) for i in range(len(self))]

    def sh_coefficients(self, table_index: int) -> ShCoefficients | None:
        if table_index == SH_NONE:
            return None
        return ShCoefficients(self.sh_degree, np.asarray(self.sh_table[table_index], np.float64))

    def resolved_sh(self) -> np.ndarray | None:
        """Per-primitive (N, B, 3) coefficients, zeros where sh_index is NONE."""
        if self.sh_degree == 0:
            return None
        b = (self.sh_degree + 1) ** 2 - 1
        out = np.zeros((len(self), b, 3), dtype=np.float64)
        mask = self.sh_indices != SH_NONE
        out[mask] = np.asarray(self.sh_table, np.float64)[self.sh_indices[mask]]
        return out


@dataclass
class StateSequence:
    """K full Gaussian states tagged with strictly increasing plane offsets."""

    states: list[GaussianCloud]
    offsets: np.ndarray
    axis: np.ndarray

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.axis = np.asarray(self.axis, dtype=np.float64)
        if len(self.states) != len(self.offsets) or len(self.states) < 1:
            raise InvalidArgumentError("need K >= 1 states with one offset each")
        if np.any(np.diff(self.offsets) <= 0):
            raise InvalidArgumentError("offsets must be strictly increasing")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-6:
            raise InvalidArgumentError("axis must be a unit vector")

    def __len__(self):
        return len(self.states)


def _parse_header(data: bytes):
    """Returns (format, n_vertices, properties, body_offset, n_header_lines)."""
    end = data.find(b"end_header")
    if end < 0:
        raise PlyParseError("missing end_header")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyParseError("no newline after end_header")
    header = data[:nl].decode("ascii", errors="replace")
    lines = header.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("file does not start with 'ply'", line=1)

    fmt = None
    n_vertices = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    seen_other_element = False
    for lineno, raw in enumerate(lines[1:], start=2):
        tok = raw.strip().split()
        if not tok or tok[0] == "comment" or tok[0] == "obj_info":
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"unsupported format {' '.join(tok[1:])!r}", line=lineno)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise PlyParseError("malformed element declaration", line=lineno)
            if tok[1] == "vertex":
                if seen_other_element:
                    raise PlyParseError("vertex element must come first", line=lineno)
                try:
                    n_vertices = int(tok[2])
                except ValueError:
                    raise PlyParseError(f"bad vertex count {tok[2]!r}", line=lineno) from None
                if n_vertices < 0:
                    raise PlyParseError(f"negative vertex count {n_vertices}", line=lineno)
                in_vertex = True
            else:
                in_vertex = False
                seen_other_element = True
        elif tok[0] == "property":
            if not in_vertex:
                continue  # properties of trailing elements are ignored
            if len(tok) != 3:
                raise PlyParseError("only scalar properties are supported", line=lineno)
            if tok[1] not in _PLY_TYPES:
                raise PlyParseError(f"unknown property type {tok[1]!r}", line=lineno)
            props.append((tok[2], _PLY_TYPES[tok[1]]))
        elif tok[0] == "end_header":
            break
        else:
            raise PlyParseError(f"unrecognized header line {raw.strip()!r}", line=lineno)
    if fmt is None:
        raise PlyParseError("missing format declaration")
    if n_vertices is None:
        raise PlyParseError("missing vertex element")
    return fmt, n_vertices, props, nl + 1, header.count("\n") + 1


def _rest_layout(prop_names: list[str]) -> tuple[int, int]:
    """(degree, count) for the contiguous f_rest_* block."""
    count = sum(1 for p in prop_names if p.startswith("f_rest_"))
    if count not in _REST_DEGREES:
        raise PlySchemaError(
            f"unsupported f_rest property count {count} (expected one of 0/9/24/45)"
        )
    for i in range(count):
        if f"f_rest_{i}" not in prop_names:
            raise PlySchemaError(f"missing required property 'f_rest_{i}'")
    return _REST_DEGREES[count], count


def parse_ply(data: bytes, source_name: str = "<bytes>") -> GaussianCloud:
    """Decode one 3DGS point cloud from PLY bytes."""
    fmt, n, props, body_off, header_lines = _parse_header(data)
    names = [p[0] for p in props]
    for req in _REQUIRED_PROPS:
        if req not in names:
            raise PlySchemaError(f"missing required property {req!r}")
    degree, rest_count = _rest_layout(names)

    if fmt == "binary_little_endian":
        dtype = np.dtype([(name, "<" + code) for name, code in props])
        body = data[body_off:]
        need = dtype.itemsize * n
        if len(body) < need:
            raise PlyParseError(
                f"vertex data truncated: need {need} bytes, have {len(body)}"
            )
        table = np.frombuffer(body, dtype=dtype, count=n)
    else:
        text = data[body_off:].decode("ascii", errors="replace")
        rows = [ln for ln in text.splitlines() if ln.strip()]
        if len(rows) < n:
            raise PlyParseError(f"expected {n} vertex rows, found {len(rows)}")
        table = np.zeros(n, dtype=np.dtype([(name, "<" + code) for name, code in props]))
        for i in range(n):
            tok = rows[i].split()
            if len(tok) != len(props):
                raise PlyParseError(
                    f"expected {len(props)} values, found {len(tok)}",
                    line=header_lines + i + 1,
                )
            try:
                vals = [float(t) for t in tok]
            except ValueError:
                raise PlyParseError(
                    f"non-numeric vertex value in {rows[i]!r}", line=header_lines + i + 1
                ) from None
            for (name, _), v in zip(props, vals):
                table[name][i] = v

    def col(name):
        return np.asarray(table[name], dtype=np.float32)

    raw_cols = {name: col(name) for name in _REQUIRED_PROPS}
    rest = (
        np.stack([col(f"f_rest_{i}") for i in range(rest_count)], axis=1)
        if rest_count
        else np.empty((n, 0), np.float32)
    )

    finite = np.ones(n, dtype=bool)
    for c in raw_cols.values():
        finite &= np.isfinite(c)
    if rest_count:
        finite &= np.isfinite(rest).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise PlyDataError("non-finite attribute value", vertex=bad)

    positions = np.stack([raw_cols["x"], raw_cols["y"], raw_cols["z"]], axis=1)
    scales = np.exp(np.stack([raw_cols[f"scale_{i}"] for i in range(3)], axis=1))
    quats = np.stack([raw_cols[f"rot_{i}"] for i in range(4)], axis=1)
    norms = np.linalg.norm(quats.astype(np.float64), axis=1)
    if np.any(norms == 0):
        raise PlyDataError(
            "zero-length rotation quaternion", vertex=int(np.flatnonzero(norms == 0)[0])
        )
    rotations = (quats / norms[:, None].astype(np.float32)).astype(np.float32)
    with np.errstate(over="ignore"):
        opacities = (1.0 / (1.0 + np.exp(-raw_cols["opacity"].astype(np.float64)))).astype(
            np.float32
        )
    dc = np.stack([raw_cols[f"f_dc_{i}"] for i in range(3)], axis=1)

    if degree:
        b = (degree + 1) ** 2 - 1
        # f_rest is channel-major: all R coefficients, then G, then B
        sh_table = rest.reshape(n, 3, b).transpose(0, 2, 1)
        sh_indices = np.arange(n, dtype=np.int64)
    else:
        sh_table = np.empty((0, 0, 3), np.float32)
        sh_indices = np.full(n, SH_NONE, dtype=np.int64)

    return GaussianCloud(
        positions=positions,
        scales=scales,
        rotations=rotations,
        opacities=opacities,
        dc_colors=dc,
        sh_indices=sh_indices,
        sh_degree=degree,
        sh_table=sh_table,
        source_name=source_name,
    )


def write_ply(cloud: GaussianCloud, fmt: str = "binary") -> bytes:
    """Serialize a cloud back to 3DGS PLY (inverse activations applied)."""
    n = len(cloud)
    degree = cloud.sh_degree
    b = (degree + 1) ** 2 - 1 if degree else 0
    names = list(_REQUIRED_PROPS[:3])
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * b)]
    names += ["opacity"] + [f"scale_{i}" for i in range(3)] + [f"rot_{i}" for i in range(4)]

    hdr = ["ply"]
    hdr.append("format binary_little_endian 1.0" if fmt == "binary" else "format ascii 1.0")
    hdr.append(f"element vertex {n}")
    hdr += [f"property float {nm}" for nm in names]
    hdr.append("end_header")
    header = ("\n".join(hdr) + "\n").encode("ascii")

    cols = np.zeros((n, len(names)), dtype=np.float32)
    cols[:, 0:3] = cloud.positions
    cols[:, 3:6] = cloud.dc_colors
    if b:
        resolved = cloud.resolved_sh()
        cols[:, 6 : 6 + 3 * b] = resolved.transpose(0, 2, 1).reshape(n, 3 * b)
    base = 6 + 3 * b
    # keep logit finite at the opacity extremes
    safe = np.clip(cloud.opacities.astype(np.float64), 1e-6, 1 - 1e-6)
    cols[:, base] = np.log(safe / (1.0 - safe)).astype(np.float32)
    cols[:, base + 1 : base + 4] = np.log(cloud.scales)
    cols[:, base + 4 : base + 8] = cloud.rotations

    if fmt == "binary":
        return header + cols.astype("<f4").tobytes()
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in cols)
    return header + (body + "\n" if n else "").encode("ascii")


def validate_cloud(cloud: GaussianCloud) -> list[Violation]:
    """Check type invariants; returns one violation per offending field."""
    out: list[Violation] = []
    for name, arr in (
        ("position", cloud.positions),
        ("scale", cloud.scales),
        ("rotation", cloud.rotations),
        ("opacity", cloud.opacities),
        ("dc_color", cloud.dc_colors),
    ):
        finite = np.isfinite(arr).reshape(len(cloud), -1).all(axis=1)
        for i in np.flatnonzero(~finite):
            out.append(Violation(int(i), name, "non-finite value"))
    for i in np.flatnonzero(~(cloud.scales > 0).all(axis=1)):
        out.append(Violation(int(i), "scale", "components must be > 0"))
    norms = np.linalg.norm(cloud.rotations.astype(np.float64), axis=1)
    for i in np.flatnonzero(np.abs(norms - 1.0) > 1e-6):
        out.append(Violation(int(i), "rotation", f"not unit length (|q|={norms[i]:.7f})"))
    for i in np.flatnonzero((cloud.opacities < 0) | (cloud.opacities > 1)):
        out.append(Violation(int(i), "opacity", "outside [0, 1]"))
    dangling = (cloud.sh_indices != SH_NONE) & (
        (cloud.sh_indices < 0) | (cloud.sh_indices >= len(cloud.sh_table))
    )
    for i in np.flatnonzero(dangling):
        out.append(
            Violation(int(i), "sh_index", f"dangling reference {int(cloud.sh_indices[i])}")
        )
    return sorted(out, key=lambda v: v.index)


def load_manifest(path) -> tuple[np.ndarray, list[tuple[Path, float]]]:
    """Read and validate a manifest; returns (unit axis, [(path, offset)])."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(doc, dict) or "axis" not in doc or "states" not in doc:
        raise ManifestError(f"{path}: manifest must have 'axis' and 'states' keys")
    axis = np.asarray(doc["axis"], dtype=np.float64)
    if axis.shape != (3,) or not np.all(np.isfinite(axis)):
        raise ManifestError(f"{path}: axis must be a finite 3-vector")
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise ManifestError(f"{path}: axis must be non-zero")
    axis = axis / norm
    states = doc["states"]
    if not isinstance(states, list) or not states:
        raise ManifestError(f"{path}: 'states' must be a non-empty list")
    entries = []
    for i, st in enumerate(states):
        if not isinstance(st, dict) or "path" not in st or "offset" not in st:
            raise ManifestError(f"{path}: state {i} needs 'path' and 'offset'")
        try:
            offset = float(st["offset"])
        except (TypeError, ValueError):
            raise ManifestError(f"{path}: state {i} offset is not a number") from None
        if not np.isfinite(offset):
            raise ManifestError(f"{path}: state {i} offset is not finite")
        entries.append((path.parent / st["path"], offset))
    offsets = [e[1] for e in entries]
    if len(set(offsets)) != len(offsets):
        dup = sorted(o for o in set(offsets) if offsets.count(o) > 1)[0]
        raise ManifestError(f"{path}: duplicate offset {dup}")
    return axis, entries


def load_state_sequence(manifest_path) -> StateSequence:
    """Load every state named in a manifest, sorted by offset."""
    axis, entries = load_manifest(manifest_path)
    entries = sorted(entries, key=lambda e: e[1])

    def load_one(entry):
        p, _ = entry
        data = p.read_bytes()
        return parse_ply(data, source_name=p.name)

    with ThreadPoolExecutor(max_workers=min(len(entries), threads_limit())) as pool:
        states = list(pool.map(load_one, entries))
    return StateSequence(
        states=states, offsets=np.array([e[1] for e in entries]), axis=axis
    )
