"""CPU splat rasterizer with arbitrary-plane slicing.

Pipeline: select the precomputed state nearest the plane, gather its active
primitives, slice (hard drop / opacity modulation / none), project with the
first-order EWA approximation, depth-sort globally, then composite
front-to-back. Pure function of its inputs; identical calls produce
identical frames.
"""

from __future__ import annotations

import enum
import weakref
from dataclasses import dataclass

import numpy as np

from .compiler import LayeredAsset, reconstruct_state
from .core import (
    CameraPose,
    GaussianPrimitive,
    SlicingPlane,
    evaluate_colors,
    modulated_opacities,
    projected_radii,
    quat_to_matrix,
    quats_to_matrices,
    signed_distances,
)
from .errors import ContractViolationError, InvalidArgumentError
from .frames import FrameImage
from .ingest import GaussianCloud

# Dilation added to the screen covariance diagonal (pixels^2) and the cap on
# any single compositing term; both follow common splatting practice for
# sub-pixel stability.
COV2D_DILATION = 0.3
ALPHA_CAP = 0.99
ALPHA_MIN = 1.0 / 255.0
TRANSMITTANCE_FLOOR = 1e-3


class RenderMode(enum.Enum):
    UNSLICED = "unsliced"
    HARD = "hard"
    MODULATED = "modulated"

    @classmethod
    def parse(cls, name: str) -> "RenderMode":
        try:
            return cls(name.lower())
        except ValueError:
            raise InvalidArgumentError(
                f"unknown render mode {name!r} (expected unsliced/hard/modulated)"
            ) from None


@dataclass(frozen=True)
class ProjectedSplat:
    """One splat after perspective projection to the screen."""

    mean: np.ndarray          # pixel coordinates
    cov: np.ndarray           # 2x2 screen covariance, pixels^2
    depth: float              # camera-space z, > near
    opacity: float            # effective alpha after slicing
    color: np.ndarray         # linear RGB

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, np.float64))
        object.__setattr__(self, "cov", np.asarray(self.cov, np.float64))
        object.__setattr__(self, "color", np.asarray(self.color, np.float64))
        c = self.cov
        if c.shape != (2, 2) or abs(c[0, 1] - c[1, 0]) > 1e-9 or np.linalg.det(c) <= 0:
            raise InvalidArgumentError("screen covariance must be symmetric positive-definite")


def select_state(asset: LayeredAsset, plane: SlicingPlane) -> int:
    """Index of the baked state whose offset best matches the plane.

    When the plane misses the bounding box entirely the last (largest
    offset, least truncated) state is used. Otherwise the plane's closest
    point to the bounds centroid is projected onto the precompute axis and
    the nearest offset wins, ties toward the larger offset.
    """
    lo = asset.bounds[0].astype(np.float64)
    hi = asset.bounds[1].astype(np.float64)
    centroid = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    n, c = plane.normal, plane.offset
    dist = centroid @ n - c
    reach = np.abs(n) @ half
    if abs(dist) > reach:
        return asset.num_states - 1
    closest = centroid - dist * n
    e = closest @ asset.axis
    d = np.abs(asset.offsets - e)
    return len(d) - 1 - int(np.argmin(d[::-1]))


def active_set(asset: LayeredAsset, k: int) -> GaussianCloud:
    """Base layer followed by delta layer k (references asset storage)."""
    if not 0 <= k < asset.num_states:
        raise IndexError(f"state index {k} out of range [0, {asset.num_states})")
    if len(asset.delta_layers[k]) == 0:
        return asset.base_layer
    return reconstruct_state(asset, k)


@dataclass
class _Packed:
    """Active-set columns upcast once for render math."""

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    dc_colors: np.ndarray
    sh_coeffs: np.ndarray | None
    sh_degree: int


_packed_cache: "weakref.WeakKeyDictionary[LayeredAsset, dict[int, _Packed]]" = (
    weakref.WeakKeyDictionary()
)


def _packed_state(asset: LayeredAsset, k: int) -> _Packed:
    per_asset = _packed_cache.setdefault(asset, {})
    packed = per_asset.get(k)
    if packed is None:
        cloud = active_set(asset, k)
        packed = _Packed(
            positions=cloud.positions.astype(np.float64),
            scales=cloud.scales.astype(np.float64),
            rotations=cloud.rotations.astype(np.float64),
            opacities=cloud.opacities.astype(np.float64),
            dc_colors=cloud.dc_colors.astype(np.float64),
            sh_coeffs=cloud.resolved_sh(),
            sh_degree=cloud.sh_degree,
        )
        per_asset[k] = packed
    return packed


def _project_arrays(positions, scales, rotations, camera: CameraPose):
    """EWA projection. Returns (keep_idx, means2d, cov2d, depths)."""
    r = quat_to_matrix(camera.orientation)  # camera-to-world
    p_cam = (positions - camera.position) @ r  # == R^T (p - pos) row-wise
    depths = p_cam[:, 2]
    keep = depths > camera.near
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        return idx, np.empty((0, 2)), np.empty((0, 2, 2)), np.empty(0)
    p_cam = p_cam[idx]
    z = p_cam[:, 2]
    f = camera.focal
    cx, cy = camera.principal_point
    u = f * p_cam[:, 0] / z + cx
    v = f * p_cam[:, 1] / z + cy

    # first-order (Jacobian) screen covariance: A = J R^T M, cov = A A^T
    # with M = Rot diag(scale) so that Sigma = M M^T
    mats = quats_to_matrices(rotations[idx]) * scales[idx][:, None, :]
    j = np.zeros((len(idx), 2, 3))
    j[:, 0, 0] = f / z
    j[:, 0, 2] = -f * p_cam[:, 0] / (z * z)
    j[:, 1, 1] = f / z
    j[:, 1, 2] = -f * p_cam[:, 1] / (z * z)
    a = j @ (r.T @ mats)
    cov = a @ a.transpose(0, 2, 1)
    cov[:, 0, 0] += COV2D_DILATION
    cov[:, 1, 1] += COV2D_DILATION

    # viewport test against the 3-sigma ellipse's bounding box
    ex = 3.0 * np.sqrt(cov[:, 0, 0])
    ey = 3.0 * np.sqrt(cov[:, 1, 1])
    w, h = camera.width, camera.height
    onscreen = (u + ex >= -0.5) & (u - ex <= w - 0.5) & (v + ey >= -0.5) & (v - ey <= h - 0.5)
    sel = np.flatnonzero(onscreen)
    means = np.stack([u[sel], v[sel]], axis=1)
    return idx[sel], means, cov[sel], z[sel]


def project_gaussian(prim: GaussianPrimitive, camera: CameraPose) -> ProjectedSplat | None:
    """Project one primitive; None when culled (behind near plane or offscreen)."""
    idx, means, cov, depths = _project_arrays(
        prim.position.reshape(1, 3),
        prim.scale.reshape(1, 3),
        prim.rotation.reshape(1, 4),
        camera,
    )
    if len(idx) == 0:
        return None
    view = prim.position - camera.position
    view = view / np.linalg.norm(view)
    color = evaluate_colors(prim.dc_color.reshape(1, 3), None, view.reshape(1, 3), 0)[0]
    return ProjectedSplat(
        mean=means[0], cov=cov[0], depth=float(depths[0]), opacity=prim.opacity, color=color
    )


def composite_linear(
    means: np.ndarray,
    covs: np.ndarray,
    alphas: np.ndarray,
    colors: np.ndarray,
    width: int,
    height: int,
    background=(0.0, 0.0, 0.0),
) -> np.ndarray:
    """Front-to-back "over" compositing in linear color, (H, W, 3) float.

    Inputs must already be sorted by ascending depth. A pixel stops
    accumulating once its transmittance falls below 1e-3; the remaining
    transmittance then multiplies the background.
    """
    if width < 1 or height < 1:
        raise InvalidArgumentError("viewport must be at least 1x1")
    color_acc = np.zeros((height, width, 3))
    transmit = np.ones((height, width))
    for i in range(len(means)):
        a, b = covs[i, 0, 0], covs[i, 0, 1]
        c = covs[i, 1, 1]
        det = a * c - b * b
        # 9-sigma support: truncated tail is < 1e-15 of the peak term
        rx = 9.0 * np.sqrt(a)
        ry = 9.0 * np.sqrt(c)
        x0 = max(int(np.floor(means[i, 0] - rx)), 0)
        x1 = min(int(np.ceil(means[i, 0] + rx)) + 1, width)
        y0 = max(int(np.floor(means[i, 1] - ry)), 0)
        y1 = min(int(np.ceil(means[i, 1] + ry)) + 1, height)
        if x0 >= x1 or y0 >= y1:
            continue
        xs = np.arange(x0, x1) - means[i, 0]
        ys = np.arange(y0, y1) - means[i, 1]
        dx = xs[None, :]
        dy = ys[:, None]
        q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
        alpha = np.minimum(alphas[i] * np.exp(-0.5 * q), ALPHA_CAP)
        t_box = transmit[y0:y1, x0:x1]
        active = t_box >= TRANSMITTANCE_FLOOR
        contrib = np.where(active, alpha * t_box, 0.0)
        color_acc[y0:y1, x0:x1] += contrib[:, :, None] * colors[i]
        transmit[y0:y1, x0:x1] = np.where(active, t_box * (1.0 - alpha), t_box)
    return color_acc + transmit[:, :, None] * np.asarray(background, np.float64)


def composite(
    splats: list[ProjectedSplat], width: int, height: int, background=(0.0, 0.0, 0.0)
) -> FrameImage:
    """Composite a depth-sorted splat list into an sRGB frame."""
    depths = np.array([s.depth for s in splats])
    if np.any(np.diff(depths) < 0):
        raise ContractViolationError("splats must be sorted by ascending depth")
    linear = composite_linear(
        means=np.array([s.mean for s in splats]).reshape(-1, 2),
        covs=np.array([s.cov for s in splats]).reshape(-1, 2, 2),
        alphas=np.array([s.opacity for s in splats]),
        colors=np.array([s.color for s in splats]).reshape(-1, 3),
        width=width,
        height=height,
        background=background,
    )
    return FrameImage.from_linear_rgb(linear)


def render(
    asset: LayeredAsset,
    plane: SlicingPlane,
    camera: CameraPose,
    mode: RenderMode = RenderMode.MODULATED,
    k_sigma: float = 3.0,
    background=(0.0, 0.0, 0.0),
) -> FrameImage:
    """Render the asset under a slicing plane. Deterministic."""
    if camera.width < 1 or camera.height < 1:
        raise InvalidArgumentError("viewport must be at least 1x1")
    if k_sigma <= 0:
        raise InvalidArgumentError(f"k_sigma must be > 0, got {k_sigma}")
    k = select_state(asset, plane)
    packed = _packed_state(asset, k)

    if mode is RenderMode.UNSLICED:
        alphas = packed.opacities
        live = slice(None)
    elif mode is RenderMode.HARD:
        live = signed_distances(packed.positions, plane) > 0.0
        alphas = packed.opacities[live]
    elif mode is RenderMode.MODULATED:
        s_n = projected_radii(packed.rotations, packed.scales, plane.normal, k_sigma)
        alphas = modulated_opacities(packed.opacities, packed.positions, plane, s_n)
        live = slice(None)
    else:
        raise InvalidArgumentError(f"unknown render mode {mode!r}")

    positions = packed.positions[live]
    scales = packed.scales[live]
    rotations = packed.rotations[live]
    dc = packed.dc_colors[live]
    sh = packed.sh_coeffs[live] if packed.sh_coeffs is not None else None

    visible = alphas >= ALPHA_MIN
    positions, scales, rotations = positions[visible], scales[visible], rotations[visible]
    alphas, dc = alphas[visible], dc[visible]
    sh = sh[visible] if sh is not None else None

    idx, means, covs, depths = _project_arrays(positions, scales, rotations, camera)
    if len(idx) == 0:
        return FrameImage.from_linear_rgb(
            np.broadcast_to(
                np.asarray(background, np.float64), (camera.height, camera.width, 3)
            ).copy()
        )
    view_dirs = positions[idx] - camera.position
    view_dirs = view_dirs / np.linalg.norm(view_dirs, axis=1, keepdims=True)
    colors = evaluate_colors(
        dc[idx], sh[idx] if sh is not None else None, view_dirs, packed.sh_degree
    )
    order = np.argsort(depths, kind="stable")
    linear = composite_linear(
        means[order], covs[order], alphas[idx][order], colors[order],
        camera.width, camera.height, background,
    )
    return FrameImage.from_linear_rgb(linear)
