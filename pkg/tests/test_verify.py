import math

import numpy as np
import pytest

from radialopf.network import (
    Box,
    BusSpec,
    FeederModel,
    LineSpec,
    ObjectiveCoeffs,
    PhaseSet,
)
from radialopf.subproblems import XBlock
from radialopf.verify import brute_force_opf, check_bfm_feasibility, check_rank1

INF = float("inf")


def two_bus(z, region, v0=1.0):
    loss = (ObjectiveCoeffs(0.0, 1.0),)
    root = BusSpec(0, PhaseSet("a"), (v0,), (v0,), (Box(-INF, INF, -INF, INF),), loss)
    child = BusSpec(1, PhaseSet("a"), (0.9025,), (1.1025,), (region,), loss)
    return FeederModel((root, child), (LineSpec(1, 0, np.array([[z]])),))


def exact_flow_solution(model, s1):
    """Closed-form single-phase power flow for a 2-bus feeder."""
    z = complex(model.lines[0].z[0, 0])
    v0 = model.bus(0).v_lo[0]
    w = v0 + 2.0 * (np.conj(z) * s1).real
    zsq = abs(z) ** 2
    if zsq == 0:
        ell = abs(s1) ** 2 / v0
        v1 = v0
    else:
        disc = w * w - 4.0 * zsq * abs(s1) ** 2
        ell = (w - math.sqrt(disc)) / (2.0 * zsq)
        v1 = w - zsq * ell
    s0 = -s1 + z * ell
    return {
        0: XBlock(v=np.array([[v0 + 0j]]), s=np.array([s0])),
        1: XBlock(
            v=np.array([[v1 + 0j]]),
            s=np.array([s1]),
            S=np.array([[s1]]),
            ell=np.array([[ell + 0j]]),
        ),
    }


class TestBfmFeasibility:
    def test_exact_flow_passes(self):
        model = two_bus(0.02 + 0.04j, Box(-0.1, -0.1, -0.05, -0.05))
        solution = exact_flow_solution(model, -0.1 - 0.05j)
        report = check_bfm_feasibility(solution, model, tol=1e-10)
        assert report.ok
        assert report.max_residual <= 1e-10

    def test_perturbation_flags_bus(self):
        model = two_bus(0.02 + 0.04j, Box(-0.1, -0.1, -0.05, -0.05))
        solution = exact_flow_solution(model, -0.1 - 0.05j)
        solution[1].v[0, 0] += 0.1
        report = check_bfm_feasibility(solution, model, tol=1e-6)
        assert not report.ok
        assert any("bus 1" in line for line in report.violations())

    def test_zero_impedance_equal_voltages(self):
        model = two_bus(0j, Box(-0.1, -0.1, 0.0, 0.0))
        solution = exact_flow_solution(model, -0.1 + 0j)
        report = check_bfm_feasibility(solution, model, tol=1e-12)
        assert solution[1].v[0, 0] == pytest.approx(solution[0].v[0, 0])
        assert report.voltage_drop[1] <= 1e-12

    def test_shape_mismatch_raises(self):
        model = two_bus(0.02j, Box(-0.1, -0.1, 0.0, 0.0))
        solution = exact_flow_solution(model, -0.1 + 0j)
        solution[1] = XBlock(v=np.eye(2, dtype=complex), s=np.zeros(2, dtype=complex))
        with pytest.raises(ValueError):
            check_bfm_feasibility(solution, model)


class TestRank1:
    def test_outer_product_block_is_exact(self):
        model = two_bus(0.02 + 0.04j, Box(-0.1, -0.1, 0.0, 0.0))
        V = np.array([1.0 + 0.05j])
        I = np.array([-0.2 + 0.1j])
        solution = {
            0: XBlock(v=np.array([[1.0 + 0j]]), s=np.zeros(1, dtype=complex)),
            1: XBlock(
                v=np.outer(V, V.conj()),
                s=np.zeros(1, dtype=complex),
                S=np.outer(V, I.conj()),
                ell=np.outer(I, I.conj()),
            ),
        }
        report = check_rank1(solution, model)
        assert report.max_ratio <= 1e-12
        assert report.exact

    def test_identity_block_ratio_one(self):
        model = two_bus(0.02j, Box(-0.1, -0.1, 0.0, 0.0))
        solution = {
            0: XBlock(v=np.array([[1.0 + 0j]]), s=np.zeros(1, dtype=complex)),
            1: XBlock(
                v=np.array([[1.0 + 0j]]),
                s=np.zeros(1, dtype=complex),
                S=np.zeros((1, 1), dtype=complex),
                ell=np.array([[1.0 + 0j]]),
            ),
        }
        report = check_rank1(solution, model)
        assert report.ratios[1] == pytest.approx(1.0)
        assert not report.exact


class TestReportDocuments:
    def test_reports_serialize_to_documents(self):
        import json

        model = two_bus(0.02 + 0.04j, Box(-0.1, -0.1, -0.05, -0.05))
        solution = exact_flow_solution(model, -0.1 - 0.05j)
        bfm = check_bfm_feasibility(solution, model, tol=1e-9)
        rank = check_rank1(solution, model)
        doc = json.loads(json.dumps({"bfm": bfm.as_dict(), "rank1": rank.as_dict()}))
        assert doc["bfm"]["ok"] is True
        assert "1" in doc["bfm"]["voltage_drop"]
        assert doc["rank1"]["exact"] is True
        assert doc["rank1"]["ratios"]["1"] <= 1e-10


class TestBruteForce:
    def test_zero_load_zero_loss(self):
        model = two_bus(0.02 + 0.04j, Box(0.0, 0.0, 0.0, 0.0))
        best, best_s = brute_force_opf(model, grid_step=1e-2)
        assert best == pytest.approx(0.0, abs=1e-12)
        assert best_s == 0

    def test_singleton_box_matches_closed_form(self):
        s1 = -0.12 - 0.06j
        z = 0.03 + 0.05j
        model = two_bus(z, Box(s1.real, s1.real, s1.imag, s1.imag))
        best, best_s = brute_force_opf(model, grid_step=1e-2)
        assert best_s == pytest.approx(s1)
        solution = exact_flow_solution(model, s1)
        ell = solution[1].ell[0, 0].real
        # loss objective: total injection equals the line loss Re(z) * ell
        assert best == pytest.approx(z.real * ell, abs=1e-12)

    def test_refinement_stability(self):
        model = two_bus(0.05 + 0.1j, Box(-0.35, -0.25, -0.25, 0.25))
        coarse, _ = brute_force_opf(model, grid_step=1e-2)
        fine, _ = brute_force_opf(model, grid_step=1e-3)
        assert fine <= coarse + 1e-12
        assert abs(coarse - fine) <= 1e-3

    def test_rejects_wrong_topology(self):
        from radialopf.network import generate_topology

        with pytest.raises(ValueError):
            brute_force_opf(generate_topology("line", 3), 1e-2)

    def test_rejects_unbounded_region(self):
        model = two_bus(0.02j, Box(-INF, 0.0, 0.0, 0.0))
        with pytest.raises(ValueError):
            brute_force_opf(model, 1e-2)

    def test_infeasible_when_voltage_band_excludes_flow(self):
        # huge fixed load on a stiff line drives v1 below the band
        model = two_bus(0.5 + 0.5j, Box(-0.6, -0.6, 0.0, 0.0))
        with pytest.raises(ValueError):
            brute_force_opf(model, 1e-2)


class TestOracleConsistency:
    def test_admm_brackets_oracle(self):
        from radialopf.engine import SolverConfig, run

        model = two_bus(0.05 + 0.1j, Box(-0.35, -0.25, -0.25, 0.25))
        result = run(model, SolverConfig(tol_scale=1e-6))
        assert result.converged
        best, _ = brute_force_opf(model, grid_step=1e-3)
        obj = result.history[-1].objective
        assert obj >= best - 1e-6
        rank = check_rank1(result.solution, model)
        if rank.exact:
            assert obj <= best + 1e-3 * abs(best) + 1e-6

    def test_y_outputs_pass_bfm_check(self):
        # map one agent's observation set into solution form; the y step
        # enforces the equations exactly
        from radialopf.engine import (
            SolverConfig,
            initialize,
            multiplier_update_round,
            x_update_round,
            y_update_round,
        )

        model = two_bus(0.05 + 0.1j, Box(-0.35, -0.25, -0.25, 0.25))
        config = SolverConfig()
        agents = initialize(model, config)
        for _ in range(4):
            x_update_round(agents, config)
            y_update_round(agents, config)
            multiplier_update_round(agents, config.rho)
        leaf = agents[1]
        solution = {
            0: XBlock(v=leaf.y_parent_v.copy(), s=agents[0].y_s.copy()),
            1: XBlock(
                v=leaf.y_v.copy(),
                s=leaf.y_s.copy(),
                S=leaf.y_S.copy(),
                ell=leaf.y_ell.copy(),
            ),
        }
        # patch the root balance using the root's own observation of the leaf
        root = agents[0]
        s0 = -(root.y_child[1][0] - model.lines[0].z @ root.y_child[1][1]).diagonal()
        solution[0].s = s0
        report = check_bfm_feasibility(
            {
                0: solution[0],
                1: solution[1],
            },
            model,
            tol=1e-9,
        )
        assert report.voltage_drop[1] <= 1e-9
        assert report.power_balance[1] <= 1e-9
