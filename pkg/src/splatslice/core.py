"""Domain types and closed-form slicing math for Gaussian splat volumes.

Everything here is a pure function of immutable value types; instances are
safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

# Real spherical harmonics constants, bands 0..3 (standard 3DGS ordering).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

UNIT_TOL = 1e-6


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise InvalidArgumentError(f"expected a 3-vector, got shape {a.shape}")
    return a


def _quat(q) -> np.ndarray:
    a = np.asarray(q, dtype=np.float64)
    if a.shape != (4,):
        raise InvalidArgumentError(f"expected a (w,x,y,z) quaternion, got shape {a.shape}")
    return a


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for a unit quaternion (w,x,y,z), local -> world."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    """Batched version of :func:`quat_to_matrix` for an (N,4) array."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w,x,y,z) for a rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic 3D Gaussian.

    ``scale`` holds per-axis standard deviations (after activation, not the
    log-space PLY values); ``sh_index`` points into an external table of
    higher-order SH coefficients, or None when the primitive carries only
    its DC color.
    """

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    dc_color: np.ndarray
    sh_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "scale", _vec3(self.scale))
        object.__setattr__(self, "rotation", _quat(self.rotation))
        object.__setattr__(self, "dc_color", _vec3(self.dc_color))
        if not np.all(self.scale > 0):
            raise InvalidArgumentError(f"scale components must be > 0, got {self.scale}")
        if abs(np.linalg.norm(self.rotation) - 1.0) > UNIT_TOL:
            raise InvalidArgumentError(f"rotation must be a unit quaternion, got {self.rotation}")
        if not 0.0 <= self.opacity <= 1.0:
            raise InvalidArgumentError(f"opacity must be in [0,1], got {self.opacity}")
        if self.sh_index is not None and self.sh_index < 0:
            raise InvalidArgumentError(f"sh_index must be non-negative, got {self.sh_index}")


@dataclass(frozen=True)
class SlicingPlane:
    """Oriented plane {p : p.n = c}; the half-space p.n > c is kept."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "normal", _vec3(self.normal))
        object.__setattr__(self, "offset", float(self.offset))
        if abs(np.linalg.norm(self.normal) - 1.0) > UNIT_TOL:
            raise InvalidArgumentError(f"plane normal must be unit length, got {self.normal}")

    @classmethod
    def from_unnormalized(cls, normal, offset: float) -> "SlicingPlane":
        n = _vec3(normal)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise InvalidArgumentError("plane normal must be non-zero")
        return cls(n / norm, float(offset))

    def flipped(self) -> "SlicingPlane":
        return SlicingPlane(-self.normal, -self.offset)


@dataclass(frozen=True)
class ShCoefficients:
    """Higher-order SH coefficients: bands 1..degree, one RGB triple each."""

    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise InvalidArgumentError(f"SH degree must be 1, 2 or 3, got {self.degree}")
        c = np.asarray(self.coeffs, dtype=np.float64)
        expected = (self.degree + 1) ** 2 - 1
        if c.shape != (expected, 3):
            raise InvalidArgumentError(
                f"degree {self.degree} needs coeffs of shape ({expected}, 3), got {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera: x right, y down, z forward in camera space.

    ``orientation`` rotates camera-space vectors into world space.
    """

    position: np.ndarray
    orientation: np.ndarray
    vertical_fov: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "orientation", _quat(self.orientation))
        if abs(np.linalg.norm(self.orientation) - 1.0) > UNIT_TOL:
            raise InvalidArgumentError("camera orientation must be a unit quaternion")
        if not 0 < self.vertical_fov < np.pi:
            raise InvalidArgumentError(f"vertical_fov must be in (0, pi), got {self.vertical_fov}")
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError(f"viewport must be >= 1x1, got {self.width}x{self.height}")
        if self.near <= 0:
            raise InvalidArgumentError(f"near must be positive, got {self.near}")

    @property
    def rotation_matrix(self) -> np.ndarray:
        """Camera-to-world rotation."""
        return quat_to_matrix(self.orientation)

    @property
    def focal(self) -> float:
        """Focal length in pixels (square pixels, set by the vertical fov)."""
        return self.height / (2.0 * np.tan(self.vertical_fov / 2.0))

    @property
    def principal_point(self) -> tuple[float, float]:
        """Pixel-center coordinates of the optical axis."""
        return (self.width - 1) / 2.0, (self.height - 1) / 2.0

    @classmethod
    def look_at(
        cls,
        position,
        target,
        up=(0.0, 1.0, 0.0),
        vertical_fov: float = np.pi / 3,
        width: int = 512,
        height: int = 512,
        near: float = 0.01,
    ) -> "CameraPose":
        position = _vec3(position)
        forward = _vec3(target) - position
        norm = np.linalg.norm(forward)
        if norm == 0:
            raise InvalidArgumentError("camera target must differ from position")
        forward = forward / norm
        right = np.cross(forward, _vec3(up))
        rnorm = np.linalg.norm(right)
        if rnorm < 1e-9:
            raise InvalidArgumentError("up direction is parallel to the view direction")
        right = right / rnorm
        down = np.cross(forward, right)
        rot = np.column_stack([right, down, forward])
        return cls(position, quat_from_matrix(rot), vertical_fov, width, height, near)


def covariance(prim: GaussianPrimitive) -> np.ndarray:
    """3x3 covariance R diag(scale^2) R^T of a primitive."""
    r = quat_to_matrix(prim.rotation)
    return (r * prim.scale**2) @ r.T


def projected_radius(prim: GaussianPrimitive, normal, k_sigma: float = 3.0) -> float:
    """Splat extent along ``normal``: k_sigma * sqrt(n^T Sigma n)."""
    n = _vec3(normal)
    # n^T Sigma n = |diag(scale) R^T n|^2
    local = quat_to_matrix(prim.rotation).T @ n
    return float(k_sigma) * float(np.linalg.norm(prim.scale * local))


def projected_radii(
    rotations: np.ndarray, scales: np.ndarray, normal: np.ndarray, k_sigma: float = 3.0
) -> np.ndarray:
    """Batched :func:`projected_radius` over (N,4) rotations and (N,3) scales."""
    mats = quats_to_matrices(rotations)
    local = mats.transpose(0, 2, 1) @ np.asarray(normal, dtype=np.float64).reshape(3, 1)
    return k_sigma * np.linalg.norm(np.asarray(scales, dtype=np.float64) * local[:, :, 0], axis=1)


def signed_distance(position, plane: SlicingPlane) -> float:
    """mu.n - c for one position."""
    return float(_vec3(position) @ plane.normal - plane.offset)


def signed_distances(positions: np.ndarray, plane: SlicingPlane) -> np.ndarray:
    return np.asarray(positions, dtype=np.float64) @ plane.normal - plane.offset


def modulated_opacity(alpha: float, position, plane: SlicingPlane, s_n: float) -> float:
    """Opacity fade alpha * clamp(1/2 + d / (2 s_n), 0, 1).

    s_n is the splat's projected radius along the plane normal; primitives
    fade out in proportion to how deep they sit behind the plane.
    """
    if s_n <= 0:
        raise InvalidArgumentError(f"projected radius must be > 0, got {s_n}")
    d = signed_distance(position, plane)
    sigma = min(max(0.5 + d / (2.0 * s_n), 0.0), 1.0)
    return alpha * sigma


def modulated_opacities(
    alphas: np.ndarray, positions: np.ndarray, plane: SlicingPlane, s_n: np.ndarray
) -> np.ndarray:
    """Batched :func:`modulated_opacity`."""
    s_n = np.asarray(s_n, dtype=np.float64)
    if np.any(s_n <= 0):
        raise InvalidArgumentError("projected radii must be > 0")
    d = signed_distances(positions, plane)
    sigma = np.clip(0.5 + d / (2.0 * s_n), 0.0, 1.0)
    return np.asarray(alphas, dtype=np.float64) * sigma


def hard_visibility(position, plane: SlicingPlane) -> bool:
    """Binary centroid test: visible iff strictly on the positive side."""
    return signed_distance(position, plane) > 0.0


def _sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values for bands 1..degree at unit directions, shape (N, B)."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cols = [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        cols += [
            SH_C2[0] * xy,
            SH_C2[1] * yz,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * xz,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        cols += [
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * xy * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[4] * x * (4.0 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3.0 * yy),
        ]
    return np.stack(cols, axis=1)


def evaluate_color(
    prim: GaussianPrimitive, sh: ShCoefficients | None, view_dir
) -> np.ndarray:
    """RGB in [0,1] from the DC term plus optional higher-order SH."""
    d = _vec3(view_dir)
    rgb = 0.5 + SH_C0 * prim.dc_color
    if sh is not None:
        basis = _sh_basis(d.reshape(1, 3), sh.degree)[0]
        rgb = rgb + basis @ sh.coeffs
    return np.clip(rgb, 0.0, 1.0)


def evaluate_colors(
    dc_colors: np.ndarray,
    sh_coeffs: np.ndarray | None,
    view_dirs: np.ndarray,
    degree: int,
) -> np.ndarray:
    """Batched color evaluation.

    ``sh_coeffs`` is (N, B, 3) with zero rows where a primitive has no
    higher-order terms, or None when the whole batch is DC-only.
    """
    rgb = 0.5 + SH_C0 * np.asarray(dc_colors, dtype=np.float64)
    if sh_coeffs is not None and degree > 0:
        basis = _sh_basis(np.asarray(view_dirs, dtype=np.float64), degree)
        rgb = rgb + np.einsum("nb,nbc->nc", basis, np.asarray(sh_coeffs, dtype=np.float64))
    return np.clip(rgb, 0.0, 1.0)
