"""File formats emitted and consumed by the command-line driver.

Solution documents mirror the feeder layout with per-bus (v, s, S, ell)
entries, complex numbers spelled as {"re": x, "im": y}. Iteration
histories are CSV with the fixed header ``k,r,s,objective``; benchmark
sweeps use ``kind,size,iterations,total_s,per_bus_s``.
"""

from __future__ import annotations

import csv
import hashlib
import json

import numpy as np

from .engine import IterationStats, RunResult, SolverConfig
from .network import FeederModel, feeder_to_dict
from .subproblems import XBlock

__all__ = [
    "HISTORY_HEADER",
    "BENCH_HEADER",
    "model_hash",
    "solution_to_dict",
    "solution_from_dict",
    "write_solution",
    "read_solution",
    "write_history_csv",
    "build_manifest",
    "write_manifest",
]

HISTORY_HEADER = ["k", "r", "s", "objective"]
BENCH_HEADER = ["kind", "size", "iterations", "total_s", "per_bus_s"]


def model_hash(model: FeederModel) -> str:
    canonical = json.dumps(feeder_to_dict(model), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _c(z: complex) -> dict:
    return {"re": float(z.real), "im": float(z.imag)}


def _cmat(a: np.ndarray) -> list:
    return [[_c(z) for z in row] for row in a.tolist()]


def _parse_c(obj) -> complex:
    return complex(float(obj["re"]), float(obj["im"]))


def _parse_cmat(rows) -> np.ndarray:
    return np.array([[_parse_c(e) for e in row] for row in rows], dtype=complex)


def solution_to_dict(
    solution: dict[int, XBlock], model: FeederModel, status: str, objective: float,
    iterations: int,
) -> dict:
    buses = []
    for b in model.buses:
        blk = solution[b.id]
        entry = {
            "id": b.id,
            "phases": b.phases.letters,
            "v": _cmat(blk.v),
            "s": [_c(z) for z in blk.s.tolist()],
            "S": None if blk.S is None else _cmat(blk.S),
            "l": None if blk.ell is None else _cmat(blk.ell),
        }
        buses.append(entry)
    return {
        "status": status,
        "objective": float(objective),
        "iterations": int(iterations),
        "buses": buses,
    }


def solution_from_dict(doc: dict) -> dict[int, XBlock]:
    solution: dict[int, XBlock] = {}
    for entry in doc["buses"]:
        v = _parse_cmat(entry["v"])
        s = np.array([_parse_c(e) for e in entry["s"]], dtype=complex)
        S = None if entry.get("S") is None else _parse_cmat(entry["S"])
        ell = None if entry.get("l") is None else _parse_cmat(entry["l"])
        solution[int(entry["id"])] = XBlock(v=v, s=s, S=S, ell=ell)
    return solution


def write_solution(path, solution, model, status, objective, iterations) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(solution_to_dict(solution, model, status, objective, iterations), fh)
        fh.write("\n")


def read_solution(path) -> dict[int, XBlock]:
    with open(path, "r", encoding="utf-8") as fh:
        return solution_from_dict(json.load(fh))


def write_history_csv(path, history: list[IterationStats]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        for row in history:
            writer.writerow([row.k, repr(row.r), repr(row.s), repr(row.objective)])


def build_manifest(
    model: FeederModel,
    config: SolverConfig,
    result: RunResult,
    exactness_max_ratio: float,
    exactness_threshold: float,
) -> dict:
    last = result.history[-1]
    return {
        "config": {
            "rho": config.rho,
            "tol_scale": config.tol_scale,
            "max_iters": config.max_iters,
            "mode": config.mode,
        },
        "model_hash": model_hash(model),
        "status": result.status,
        "iterations": len(result.history),
        "wall_time_s": result.wall_seconds,
        "wall_time_per_bus_s": result.wall_seconds / result.n_buses,
        "final_r": last.r,
        "final_s": last.s,
        "objective": last.objective,
        "exactness": {
            "max_ratio": exactness_max_ratio,
            "threshold": exactness_threshold,
            "exact": exactness_max_ratio <= exactness_threshold,
        },
    }


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
