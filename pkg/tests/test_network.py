import json
import math

import numpy as np
import pytest

from radialopf.network import (
    Box,
    BusSpec,
    Disk,
    FeederModel,
    FeederParseError,
    FeederValidationError,
    LineSpec,
    ObjectiveCoeffs,
    PhaseSet,
    TopologyTemplate,
    feeder_to_dict,
    generate_topology,
    loads_feeder,
    phase_lift,
    phase_project,
    validate_radial,
)

TWO_BUS_DOC = {
    "buses": [
        {
            "id": 0,
            "phases": "a",
            "vmin": [1.0],
            "vmax": [1.0],
            "region": [{"type": "box", "p": [None, None], "q": [None, None]}],
            "cost": [{"alpha": 0.0, "beta": 1.0}],
        },
        {
            "id": 1,
            "phases": "a",
            "vmin": [0.9025],
            "vmax": [1.1025],
            "region": [{"type": "box", "p": [-0.1, -0.1], "q": [0.0, 0.0]}],
            "cost": [{"alpha": 0.0, "beta": 1.0}],
        },
    ],
    "lines": [
        {
            "bus": 1,
            "parent": 0,
            "z": [[{"re": 0.01, "im": 0.02}]],
        }
    ],
}


def line_model(n, phases="a"):
    return generate_topology("line", n, TopologyTemplate(phases=phases))


class TestPhaseSet:
    def test_canonical_order_enforced(self):
        with pytest.raises(ValueError):
            PhaseSet("ba")

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            PhaseSet("")

    def test_subset(self):
        assert PhaseSet("ab").issubset(PhaseSet("abc"))
        assert not PhaseSet("c").issubset(PhaseSet("ab"))


class TestProjectLift:
    def test_project_worked_example(self):
        # 3-phase parent voltage restricted to phases {a, b}: the top-left block
        v = np.arange(9, dtype=complex).reshape(3, 3) + 1j
        out = phase_project(v, PhaseSet("abc"), PhaseSet("ab"))
        assert np.array_equal(out, v[:2, :2])

    def test_project_identity(self):
        v = np.eye(2, dtype=complex)
        assert np.array_equal(phase_project(v, PhaseSet("ab"), PhaseSet("ab")), v)

    def test_project_to_scalar(self):
        v = np.arange(9, dtype=complex).reshape(3, 3)
        out = phase_project(v, PhaseSet("abc"), PhaseSet("a"))
        assert out.shape == (1, 1) and out[0, 0] == v[0, 0]

    def test_project_requires_subset(self):
        with pytest.raises(ValueError):
            phase_project(np.eye(2), PhaseSet("ab"), PhaseSet("c"))

    def test_lift_worked_example(self):
        x = np.array([[2.0 + 1j]])
        out = phase_lift(x, PhaseSet("a"), PhaseSet("ab"))
        assert np.array_equal(out, np.array([[2.0 + 1j, 0], [0, 0]]))

    def test_lift_identity(self):
        x = np.eye(3, dtype=complex)
        assert np.array_equal(phase_lift(x, PhaseSet("abc"), PhaseSet("abc")), x)

    def test_lift_middle_phase(self):
        x = np.array([[5.0]])
        out = phase_lift(x, PhaseSet("b"), PhaseSet("abc"))
        expected = np.zeros((3, 3))
        expected[1, 1] = 5.0
        assert np.array_equal(out, expected)

    def test_lift_requires_superset(self):
        with pytest.raises(ValueError):
            phase_lift(np.eye(2), PhaseSet("ab"), PhaseSet("a"))

    def test_lift_after_project_masks(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            src = PhaseSet("abc")
            dst = PhaseSet(["a", "b", "c", "ab", "ac", "bc", "abc"][rng.integers(7)])
            b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            h = 0.5 * (b + b.conj().T)
            masked = phase_lift(phase_project(h, src, dst), dst, src)
            idx = dst.indices_in(src)
            expected = np.zeros_like(h)
            expected[np.ix_(idx, idx)] = h[np.ix_(idx, idx)]
            assert np.array_equal(masked, expected)
            # masking again changes nothing
            again = phase_lift(phase_project(masked, src, dst), dst, src)
            assert np.array_equal(again, masked)


class TestLoader:
    def test_minimal_two_bus(self):
        model = loads_feeder(json.dumps(TWO_BUS_DOC))
        assert len(model.buses) == 2 and len(model.lines) == 1
        assert model.bus(0).regions[0] == Box(-math.inf, math.inf, -math.inf, math.inf)

    def test_duplicate_id(self):
        doc = json.loads(json.dumps(TWO_BUS_DOC))
        doc["buses"][1]["id"] = 0
        with pytest.raises(FeederParseError, match="duplicate id"):
            loads_feeder(json.dumps(doc))

    def test_phase_nesting_error(self):
        doc = json.loads(json.dumps(TWO_BUS_DOC))
        doc["buses"][0]["phases"] = "ab"
        doc["buses"][0]["vmin"] = [1.0, 1.0]
        doc["buses"][0]["vmax"] = [1.0, 1.0]
        doc["buses"][0]["region"] = doc["buses"][0]["region"] * 2
        doc["buses"][0]["cost"] = doc["buses"][0]["cost"] * 2
        doc["buses"][1]["phases"] = "c"
        with pytest.raises(FeederValidationError, match="not nested"):
            loads_feeder(json.dumps(doc))

    def test_bad_json_reports_position(self):
        with pytest.raises(FeederParseError, match="line 1"):
            loads_feeder("{not json")

    def test_disk_region(self):
        doc = json.loads(json.dumps(TWO_BUS_DOC))
        doc["buses"][1]["region"] = [{"type": "disk", "smax": 0.5}]
        model = loads_feeder(json.dumps(doc))
        assert model.bus(1).regions[0] == Disk(0.5)

    def test_round_trip(self):
        model = loads_feeder(json.dumps(TWO_BUS_DOC))
        doc = feeder_to_dict(model)
        again = loads_feeder(json.dumps(doc))
        assert json.dumps(feeder_to_dict(again), sort_keys=True) == json.dumps(
            doc, sort_keys=True
        )

    def test_generated_round_trip(self):
        for kind in ("line", "fat-tree"):
            model = generate_topology(kind, 9, TopologyTemplate(phases="abc"))
            doc = json.dumps(feeder_to_dict(model))
            again = loads_feeder(doc)
            assert json.dumps(feeder_to_dict(again)) == doc


class TestValidateRadial:
    def test_line_network_clean(self):
        assert validate_radial(line_model(5)) == []

    def test_cycle_detected(self):
        model = line_model(5)
        extra = LineSpec(2, 4, model.lines[0].z.copy())
        bad = FeederModel(model.buses, model.lines + (extra,))
        report = validate_radial(bad)
        assert any("not a tree" in v or "cycle" in v for v in report)

    def test_island_detected(self):
        model = line_model(4)
        # re-point bus 3's parent at itself's subtree: 3 -> 3 is a self loop
        lines = tuple(
            ln if ln.bus != 3 else LineSpec(3, 3, ln.z.copy()) for ln in model.lines
        )
        report = validate_radial(FeederModel(model.buses, lines))
        assert report

    def test_impedance_dimension(self):
        model = line_model(3, phases="abc")
        lines = (
            model.lines[0],
            LineSpec(2, 1, np.eye(2, dtype=complex) * 0.01),
        )
        report = validate_radial(FeederModel(model.buses, lines))
        assert any("impedance" in v for v in report)

    def test_missing_root(self):
        model = line_model(3)
        report = validate_radial(FeederModel(model.buses[1:], model.lines[1:]))
        assert any("root" in v for v in report)


class TestGenerate:
    def test_line_is_path(self):
        model = generate_topology("line", 5)
        assert [ln.parent for ln in model.lines] == [0, 1, 2, 3]

    def test_fat_tree_depth_two(self):
        model = generate_topology("fat-tree", 7)
        assert model.children[0] == (1, 2)
        assert model.children[1] == (3, 4)
        assert model.children[2] == (5, 6)

    def test_size_one_rejected(self):
        with pytest.raises(ValueError):
            generate_topology("line", 1)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            generate_topology("ring", 5)

    def test_generated_always_validate(self):
        for kind in ("line", "fat-tree"):
            for size in (2, 3, 8, 17):
                for phases in ("a", "bc", "abc"):
                    model = generate_topology(
                        kind, size, TopologyTemplate(phases=phases)
                    )
                    assert validate_radial(model) == []

    def test_root_is_pinned_and_unconstrained(self):
        model = generate_topology("line", 3)
        root = model.bus(0)
        assert root.v_lo == root.v_hi
        region = root.regions[0]
        assert math.isinf(region.p_hi) and math.isinf(region.q_hi)


class TestRegionTypes:
    def test_box_bounds_ordered(self):
        with pytest.raises(ValueError):
            Box(1.0, 0.0, 0.0, 0.0)

    def test_disk_radius(self):
        with pytest.raises(ValueError):
            Disk(-1.0)

    def test_initial_points(self):
        assert Box(-2.0, -1.0, 0.0, 4.0).initial_point() == complex(-1.5, 2.0)
        assert Box(-math.inf, math.inf, 1.0, math.inf).initial_point() == complex(0, 1)
        assert Disk(3.0).initial_point() == 0j

    def test_objective_requires_convexity(self):
        with pytest.raises(ValueError):
            ObjectiveCoeffs(-1.0, 0.0)

    def test_bus_voltage_bounds(self):
        with pytest.raises(ValueError):
            BusSpec(
                0,
                PhaseSet("a"),
                (0.0,),
                (1.0,),
                (Box(0, 0, 0, 0),),
                (ObjectiveCoeffs(),),
            )
