import json
import math

import numpy as np
import pytest

from splatslice.errors import (
    ManifestError,
    PlyDataError,
    PlyParseError,
    PlySchemaError,
)
from splatslice.ingest import (
    SH_NONE,
    load_state_sequence,
    parse_ply,
    validate_cloud,
    write_ply,
)

from conftest import DGS_PROPS_DEG1, handcrafted_ply, random_cloud


def make_row(x=0.1, y=0.2, z=0.3, opacity_raw=0.0, scale_raw=-2.0, quat=(1, 0, 0, 0)):
    # x y z, f_dc x3, f_rest x9, opacity, scale x3, rot x4
    return (
        [x, y, z]
        + [0.25, -0.5, 0.75]
        + [0.01 * i for i in range(9)]
        + [opacity_raw]
        + [scale_raw] * 3
        + list(quat)
    )


class TestParsePly:
    def test_empty_cloud(self):
        data = handcrafted_ply([], DGS_PROPS_DEG1)
        cloud = parse_ply(data)
        assert len(cloud) == 0
        assert cloud.sh_degree == 1

    def test_logistic_midpoint(self):
        data = handcrafted_ply([make_row(opacity_raw=0.0)], DGS_PROPS_DEG1)
        cloud = parse_ply(data)
        assert cloud.opacities[0] == pytest.approx(0.5)

    def test_three_vertices_bit_exact(self):
        # fixture assembled by the independent struct.pack writer above;
        # every expectation recomputed field by field from the raw values
        rows = [
            make_row(0.125, -2.5, 7.0, opacity_raw=1.25, scale_raw=-1.5, quat=(0.0, 2.0, 0.0, 0.0)),
            make_row(1e-3, 0.0, -0.0625, opacity_raw=-3.0, scale_raw=0.25, quat=(0.5, 0.5, 0.5, 0.5)),
            make_row(100.0, -100.0, 0.5, opacity_raw=9.0, scale_raw=-4.0, quat=(0.8, 0.0, 0.6, 0.0)),
        ]
        cloud = parse_ply(handcrafted_ply(rows, DGS_PROPS_DEG1))
        assert len(cloud) == 3
        for i, row in enumerate(rows):
            expect_pos = np.array(row[0:3], dtype=np.float32)
            np.testing.assert_array_equal(cloud.positions[i], expect_pos)
            np.testing.assert_array_equal(cloud.dc_colors[i], np.float32(row[3:6]))
            expect_scale = np.exp(np.array(row[16:19], dtype=np.float32))
            np.testing.assert_array_equal(cloud.scales[i], expect_scale)
            raw_q = np.array(row[19:23], dtype=np.float32)
            np.testing.assert_allclose(
                cloud.rotations[i], raw_q / np.linalg.norm(raw_q.astype(np.float64)), rtol=1e-6
            )
            assert cloud.opacities[i] == pytest.approx(1 / (1 + math.exp(-row[15])), rel=1e-6)
            # f_rest is channel-major: coeff j of channel c sits at f_rest_{c*3+j}
            sh = cloud.sh_table[cloud.sh_indices[i]]
            for band in range(3):
                for ch in range(3):
                    assert sh[band, ch] == np.float32(row[6 + ch * 3 + band])

    def test_ascii_format(self):
        rows = [make_row(), make_row(x=9.5)]
        cloud = parse_ply(handcrafted_ply(rows, DGS_PROPS_DEG1, fmt="ascii"))
        assert len(cloud) == 2
        assert cloud.positions[1, 0] == np.float32(9.5)

    def test_no_sh_rest(self):
        props = [p for p in DGS_PROPS_DEG1 if not p.startswith("f_rest")]
        rows = [[0.1, 0.2, 0.3, 0, 0, 0, 0.0, -2, -2, -2, 1, 0, 0, 0]]
        cloud = parse_ply(handcrafted_ply(rows, props))
        assert cloud.sh_degree == 0
        assert cloud.sh_indices[0] == SH_NONE

    def test_extra_properties_ignored(self):
        props = ["nx", "ny", "nz"] + DGS_PROPS_DEG1
        rows = [[7.0, 8.0, 9.0] + make_row()]
        cloud = parse_ply(handcrafted_ply(rows, props))
        assert cloud.positions[0, 0] == np.float32(0.1)

    def test_bad_magic_reports_line(self):
        data = b"plyx\nformat ascii 1.0\nend_header\n"
        with pytest.raises(PlyParseError) as e:
            parse_ply(data)
        assert "line 1" in str(e.value)

    def test_missing_end_header(self):
        with pytest.raises(PlyParseError, match="end_header"):
            parse_ply(b"ply\nformat ascii 1.0\nelement vertex 0\n")

    def test_unknown_format(self):
        data = b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n"
        with pytest.raises(PlyParseError, match="line 2"):
            parse_ply(data)

    def test_missing_property_named(self):
        props = [p for p in DGS_PROPS_DEG1 if p != "opacity"]
        rows = [make_row()[:-8] + make_row()[-7:]]
        data = handcrafted_ply([r[: len(props)] for r in rows], props)
        with pytest.raises(PlySchemaError, match="opacity"):
            parse_ply(data)

    def test_nonfinite_reports_vertex(self):
        rows = [make_row(), make_row(x=float("nan")), make_row()]
        with pytest.raises(PlyDataError, match="vertex 1"):
            parse_ply(handcrafted_ply(rows, DGS_PROPS_DEG1))

    def test_truncated_body(self):
        data = handcrafted_ply([make_row()], DGS_PROPS_DEG1)
        with pytest.raises(PlyParseError, match="truncated"):
            parse_ply(data[:-8])

    def test_bad_rest_count(self):
        props = DGS_PROPS_DEG1[:6] + ["f_rest_0", "f_rest_1"] + DGS_PROPS_DEG1[15:]
        rows = [[0.0] * len(props)]
        with pytest.raises(PlySchemaError, match="f_rest"):
            parse_ply(handcrafted_ply(rows, props))

    def test_ascii_bad_token_count_reports_line(self):
        good = handcrafted_ply([make_row(), make_row()], DGS_PROPS_DEG1, fmt="ascii")
        head, _, body = good.partition(b"end_header\n")
        lines = body.decode().splitlines()
        lines[1] = "1.0 2.0"
        broken = head + b"end_header\n" + ("\n".join(lines) + "\n").encode()
        with pytest.raises(PlyParseError, match="expected 23 values"):
            parse_ply(broken)


class TestWriteRoundTrip:
    @pytest.mark.parametrize("fmt", ["binary", "ascii"])
    @pytest.mark.parametrize("sh_degree", [0, 1, 2])
    def test_parse_write_identity(self, fmt, sh_degree):
        cloud = random_cloud(40, seed=3, sh_degree=sh_degree)
        back = parse_ply(write_ply(cloud, fmt=fmt))
        np.testing.assert_array_equal(back.positions, cloud.positions)
        np.testing.assert_allclose(back.scales, cloud.scales, rtol=1e-6)
        np.testing.assert_allclose(back.rotations, cloud.rotations, atol=1e-6)
        np.testing.assert_allclose(back.opacities, cloud.opacities, atol=2e-6)
        np.testing.assert_array_equal(back.dc_colors, cloud.dc_colors)
        if sh_degree:
            np.testing.assert_allclose(back.resolved_sh(), cloud.resolved_sh(), atol=1e-6)

    def test_extreme_opacity_round_trip_stays_close(self):
        cloud = random_cloud(4, seed=1, sh_degree=0)
        arr = cloud.opacities.copy()
        object.__setattr__(cloud, "opacities", arr)  # dataclass is not frozen; direct set ok
        arr.flags.writeable = True
        arr[:2] = [0.0, 1.0]
        arr.flags.writeable = False
        back = parse_ply(write_ply(cloud))
        np.testing.assert_allclose(back.opacities, cloud.opacities, atol=2e-6)


class TestValidateCloud:
    def test_well_formed(self):
        assert validate_cloud(random_cloud(10, seed=5)) == []

    def test_zero_scale_flagged(self):
        cloud = random_cloud(3, seed=6)
        bad = cloud.scales.copy()
        bad[1, 0] = 0.0
        cloud.scales = bad
        violations = validate_cloud(cloud)
        assert len(violations) == 1
        assert violations[0].index == 1 and violations[0].fieldname == "scale"

    def test_dangling_sh_reference(self):
        cloud = random_cloud(3, seed=7)
        idx = cloud.sh_indices.copy()
        idx[2] = len(cloud.sh_table)
        cloud.__dict__["sh_indices"] = idx  # bypass __post_init__ range check
        violations = validate_cloud(cloud)
        assert len(violations) == 1
        assert violations[0].index == 2 and violations[0].fieldname == "sh_index"


class TestManifest:
    def _write_states(self, tmp_path, offsets):
        entries = []
        for i, off in enumerate(offsets):
            name = f"s{i}.ply"
            cloud = random_cloud(5, seed=i)
            (tmp_path / name).write_bytes(write_ply(cloud))
            entries.append({"path": name, "offset": off})
        man = tmp_path / "manifest.json"
        man.write_text(json.dumps({"axis": [0, 0, 1], "states": entries}))
        return man

    def test_single_state(self, tmp_path):
        seq = load_state_sequence(self._write_states(tmp_path, [0.0]))
        assert len(seq) == 1

    def test_unsorted_offsets_sorted(self, tmp_path):
        man = self._write_states(tmp_path, [0.2, 0.0, 0.1])
        seq = load_state_sequence(man)
        np.testing.assert_array_equal(seq.offsets, [0.0, 0.1, 0.2])
        assert [s.source_name for s in seq.states] == ["s1.ply", "s2.ply", "s0.ply"]

    def test_duplicate_offset_rejected(self, tmp_path):
        man = self._write_states(tmp_path, [0.0, 0.0])
        with pytest.raises(ManifestError, match="duplicate offset"):
            load_state_sequence(man)

    def test_missing_file_names_path(self, tmp_path):
        man = tmp_path / "manifest.json"
        man.write_text(json.dumps({"axis": [0, 0, 1], "states": [{"path": "gone.ply", "offset": 0}]}))
        with pytest.raises(FileNotFoundError, match="gone.ply"):
            load_state_sequence(man)

    def test_invalid_json(self, tmp_path):
        man = tmp_path / "manifest.json"
        man.write_text("{nope")
        with pytest.raises(ManifestError, match="invalid JSON"):
            load_state_sequence(man)

    def test_permutation_invariance(self, tmp_path):
        man = self._write_states(tmp_path, [0.3, -0.1, 0.7])
        doc = json.loads(man.read_text())
        doc["states"] = doc["states"][::-1]
        man2 = tmp_path / "manifest2.json"
        man2.write_text(json.dumps(doc))
        a = load_state_sequence(man)
        b = load_state_sequence(man2)
        np.testing.assert_array_equal(a.offsets, b.offsets)
        for sa, sb in zip(a.states, b.states):
            np.testing.assert_array_equal(sa.positions, sb.positions)
