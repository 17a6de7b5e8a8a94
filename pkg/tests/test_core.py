import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatslice.core import (
    SH_C1,
    CameraPose,
    GaussianPrimitive,
    ShCoefficients,
    SlicingPlane,
    covariance,
    evaluate_color,
    hard_visibility,
    modulated_opacity,
    projected_radius,
    signed_distance,
)
from splatslice.errors import InvalidArgumentError

SQ2 = np.sqrt(0.5)
ROT_90Z = (SQ2, 0.0, 0.0, SQ2)  # 90 degrees about z


def prim(scale=(1, 1, 1), rotation=(1, 0, 0, 0), position=(0, 0, 0), opacity=0.5):
    return GaussianPrimitive(
        position=position, scale=scale, rotation=rotation, opacity=opacity, dc_color=(0, 0, 0)
    )


unit_quats = st.builds(
    lambda a, b, c, d: np.array([a, b, c, d]) / np.linalg.norm([a, b, c, d]),
    *[st.floats(-1, 1).filter(lambda x: abs(x) > 1e-3) for _ in range(4)],
)
scales3 = st.tuples(*[st.floats(0.01, 10.0) for _ in range(3)])


class TestInvariants:
    def test_scale_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            prim(scale=(0, 1, 1))

    def test_rotation_must_be_unit(self):
        with pytest.raises(InvalidArgumentError):
            prim(rotation=(1, 1, 0, 0))

    def test_opacity_range(self):
        with pytest.raises(InvalidArgumentError):
            prim(opacity=1.5)

    def test_plane_normal_must_be_unit(self):
        with pytest.raises(InvalidArgumentError):
            SlicingPlane((0, 0, 2.0), 0.0)
        SlicingPlane.from_unnormalized((0, 0, 2.0), 0.0)

    def test_sh_coeffs_length_checked(self):
        with pytest.raises(InvalidArgumentError):
            ShCoefficients(1, np.zeros((4, 3)))
        ShCoefficients(2, np.zeros((8, 3)))

    def test_camera_viewport_positive(self):
        with pytest.raises(InvalidArgumentError):
            CameraPose((0, 0, 0), (1, 0, 0, 0), 1.0, width=0, height=10)


class TestCovariance:
    def test_isotropic_identity(self):
        np.testing.assert_allclose(covariance(prim()), np.eye(3), atol=1e-12)

    def test_axis_aligned(self):
        np.testing.assert_allclose(
            covariance(prim(scale=(2, 1, 1))), np.diag([4.0, 1.0, 1.0]), atol=1e-12
        )

    def test_rotated_90z(self):
        # R S S^T R^T multiplied out by hand: x and y variances swap
        got = covariance(prim(scale=(2, 1, 1), rotation=ROT_90Z))
        np.testing.assert_allclose(got, np.diag([1.0, 4.0, 1.0]), atol=1e-9)

    @given(q=unit_quats, s=scales3)
    @settings(max_examples=60, deadline=None)
    def test_eigenvalues_are_squared_scales(self, q, s):
        cov = covariance(prim(scale=s, rotation=q))
        np.testing.assert_allclose(cov, cov.T, atol=1e-9)
        eig = np.sort(np.linalg.eigvalsh(cov))
        np.testing.assert_allclose(eig, np.sort(np.asarray(s) ** 2), rtol=1e-8, atol=1e-9)


class TestProjectedRadius:
    def test_isotropic(self):
        assert projected_radius(prim(scale=(0.7, 0.7, 0.7)), (0, 0, 1), k_sigma=1.0) == pytest.approx(0.7)

    def test_axis_aligned(self):
        p = prim(scale=(3.0, 2.0, 1.0))
        assert projected_radius(p, (1, 0, 0), k_sigma=1.0) == pytest.approx(3.0)

    def test_rotated_90z_picks_second_axis(self):
        # explicit matrix product: n=(1,0,0) lands on the local y axis
        p = prim(scale=(3.0, 2.0, 1.0), rotation=ROT_90Z)
        assert projected_radius(p, (1, 0, 0), k_sigma=1.0) == pytest.approx(2.0)

    def test_k_sigma_scales_linearly(self):
        p = prim(scale=(0.5, 0.5, 0.5))
        assert projected_radius(p, (0, 1, 0), k_sigma=3.0) == pytest.approx(1.5)

    @given(q=unit_quats, s=scales3)
    @settings(max_examples=60, deadline=None)
    def test_quaternion_sign_flip_invariance(self, q, s):
        n = np.array([0.6, 0.0, 0.8])
        a = projected_radius(prim(scale=s, rotation=q), n)
        b = projected_radius(prim(scale=s, rotation=-q), n)
        assert a == pytest.approx(b, rel=1e-12)


class TestSignedDistance:
    def test_on_plane(self):
        assert signed_distance((1, 2, 0), SlicingPlane((0, 0, 1.0), 0.0)) == 0.0

    def test_above(self):
        assert signed_distance((5, 5, 2), SlicingPlane((0, 0, 1.0), 0.0)) == 2.0

    def test_below_with_offset(self):
        assert signed_distance((0, 0, 1), SlicingPlane((0, 0, 1.0), 3.0)) == -2.0


class TestModulatedOpacity:
    plane = SlicingPlane((0, 0, 1.0), 0.0)

    def test_centroid_on_plane_gives_half(self):
        assert modulated_opacity(0.8, (0, 0, 0), self.plane, 1.0) == pytest.approx(0.4)

    def test_clamps_to_full_at_plus_radius(self):
        assert modulated_opacity(0.8, (0, 0, 1.0), self.plane, 1.0) == 0.8

    def test_clamps_to_zero_at_minus_radius(self):
        assert modulated_opacity(0.8, (0, 0, -1.0), self.plane, 1.0) == 0.0

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(InvalidArgumentError):
            modulated_opacity(0.8, (0, 0, 0), self.plane, 0.0)

    @given(
        alpha=st.floats(0, 1),
        d1=st.floats(-10, 10),
        d2=st.floats(-10, 10),
        s_n=st.floats(1e-3, 10),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_and_lipschitz(self, alpha, d1, d2, s_n):
        a1 = modulated_opacity(alpha, (0, 0, d1), self.plane, s_n)
        a2 = modulated_opacity(alpha, (0, 0, d2), self.plane, s_n)
        if d1 <= d2:
            assert a1 <= a2 + 1e-12
        assert abs(a1 - a2) <= alpha * abs(d1 - d2) / (2 * s_n) + 1e-12
        assert 0.0 <= a1 <= alpha + 1e-12

    @given(z=st.floats(-50, 50), s_n=st.floats(1e-3, 5.0), alpha=st.floats(0, 1))
    @settings(max_examples=200, deadline=None)
    def test_never_resurrects_deep_clips(self, z, s_n, alpha):
        pos = (0.3, -0.2, z)
        if not hard_visibility(pos, self.plane) and signed_distance(pos, self.plane) <= -s_n:
            assert modulated_opacity(alpha, pos, self.plane, s_n) == 0.0


class TestHardVisibility:
    def test_positive_side(self):
        assert hard_visibility((0, 0, 1), SlicingPlane((0, 0, 1.0), 0.0))

    def test_negative_side(self):
        assert not hard_visibility((0, 0, -1), SlicingPlane((0, 0, 1.0), 0.0))

    def test_boundary_is_invisible(self):
        assert not hard_visibility((4, 4, 0), SlicingPlane((0, 0, 1.0), 0.0))

    @given(
        pos=st.tuples(*[st.floats(-5, 5) for _ in range(3)]),
        c=st.floats(-3, 3),
    )
    @settings(max_examples=200, deadline=None)
    def test_plane_flip_coverage(self, pos, c):
        plane = SlicingPlane((0, 0, 1.0), c)
        a = hard_visibility(pos, plane)
        b = hard_visibility(pos, plane.flipped())
        if signed_distance(pos, plane) == 0.0:
            assert not a and not b
        else:
            assert a != b


class TestEvaluateColor:
    def test_zero_coeffs_give_mid_gray(self):
        np.testing.assert_allclose(evaluate_color(prim(), None, (0, 0, 1)), [0.5, 0.5, 0.5])

    def test_degree0_is_view_independent(self):
        p = GaussianPrimitive((0, 0, 0), (1, 1, 1), (1, 0, 0, 0), 0.5, dc_color=(0.4, -0.2, 0.9))
        dirs = [(0, 0, 1), (0, 0, -1), (1, 0, 0), (0.6, 0, 0.8)]
        colors = [evaluate_color(p, None, d) for d in dirs]
        for c in colors[1:]:
            np.testing.assert_array_equal(c, colors[0])

    def test_degree1_z_flip_differs_by_twice_z_band(self):
        coeffs = np.array([[0.0, 0.0, 0.0], [0.1, 0.05, -0.08], [0.0, 0.0, 0.0]])
        sh = ShCoefficients(1, coeffs)
        p = prim()
        up = evaluate_color(p, sh, (0, 0, 1))
        down = evaluate_color(p, sh, (0, 0, -1))
        # real SH band 1: only the z term differs at +-z, contribution SH_C1 * c_z
        np.testing.assert_allclose(up - down, 2.0 * SH_C1 * coeffs[1], atol=1e-12)

    def test_clamped_to_unit_interval(self):
        p = GaussianPrimitive((0, 0, 0), (1, 1, 1), (1, 0, 0, 0), 0.5, dc_color=(99.0, -99.0, 0.0))
        c = evaluate_color(p, None, (0, 0, 1))
        assert c[0] == 1.0 and c[1] == 0.0


class TestCameraPose:
    def test_look_at_points_camera_forward(self):
        cam = CameraPose.look_at((0, 0, -4), (0, 0, 0))
        r = cam.rotation_matrix
        np.testing.assert_allclose(r[:, 2], [0, 0, 1], atol=1e-12)  # forward
        np.testing.assert_allclose(r[:, 1], [0, -1, 0], atol=1e-12)  # down
        assert np.linalg.det(r) == pytest.approx(1.0)

    def test_look_at_rejects_degenerate_up(self):
        with pytest.raises(InvalidArgumentError):
            CameraPose.look_at((0, 0, -4), (0, 0, 0), up=(0, 0, 1))
