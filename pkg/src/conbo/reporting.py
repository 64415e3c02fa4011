"""Trace serialization and plot-ready surface grids.

Trace files are line-delimited JSON with a fixed key order, so identical
runs produce byte-identical files and each line parses on its own. Surface
files are CSV grids with the header ``x1,x2,value``; the p_min surface is
the estimated minimizer distribution on its discretization rather than a
dense grid.
"""

from __future__ import annotations

import json

import numpy as np

from .acquisition import acquisition_values
from .decoupled import build_discretization, estimate_pmin
from .errors import InputError
from .optimizer import ConstrainedOptimizer, IterationRecord

_SURFACE_STREAM_KEY = 8


def jsonable(value):
    """Recursively convert payloads (numpy scalars/arrays, tuples) into
    plain JSON-serializable Python values."""
    if isinstance(value, dict):
        return {k: jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


def record_to_dict(record: IterationRecord) -> dict:
    """Trace record with a fixed key order. Wall time is kept out of the
    serialized record so identical runs serialize to identical bytes."""
    return {
        "iter": record.index,
        "task": record.task,
        "x": jsonable(record.x),
        "observation": jsonable(record.observation),
        "incumbent_x": jsonable(record.incumbent_x),
        "incumbent_value": jsonable(record.incumbent_value),
        "feasible": bool(record.feasible),
        "mode": record.mode,
    }


def trace_line(record_dict: dict) -> str:
    return json.dumps(record_dict, separators=(",", ":"))


def render_csv(rows: np.ndarray) -> str:
    lines = ["x1,x2,value"]
    for x1, x2, value in rows:
        lines.append(f"{x1:.10g},{x2:.10g},{value:.10g}")
    return "\n".join(lines) + "\n"


def compute_surfaces(opt: ConstrainedOptimizer, resolution: int) -> dict[str, np.ndarray]:
    """Gridded diagnostic surfaces for 2D problems.

    Returns (resolution^2, 3) arrays keyed by surface name: the posterior
    mean and variance of the objective, each constraint's satisfaction
    probability and its thresholded indicator, the acquisition, and the
    p_min mass on its discretization.
    """
    if opt.problem.dim != 2:
        raise InputError("surfaces are only defined for 2D problems")
    if resolution < 2:
        raise InputError("resolution must be >= 2")

    bounds = opt.problem.bounds
    axes = [np.linspace(bounds[d, 0], bounds[d, 1], resolution) for d in range(2)]
    g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    grid = np.column_stack([g1.ravel(), g2.ravel()])
    grid_unit = opt.normalizer.to_unit(grid)

    members = opt.objective_model.members
    n_members = len(members)
    mean_acc = np.zeros(grid.shape[0])
    second_acc = np.zeros(grid.shape[0])
    for member in members:
        mean, var = member.predict_batch(grid_unit)
        mean_acc += mean
        second_acc += var + mean**2
    mix_mean = mean_acc / n_members
    mix_var = np.maximum(second_acc / n_members - mix_mean**2, 0.0)

    scale = opt.objective_model.output_scale
    surfaces: dict[str, np.ndarray] = {}
    surfaces["objective_mean"] = _with_grid(grid, opt.objective_model.from_model_space(mix_mean))
    surfaces["objective_variance"] = _with_grid(grid, mix_var * scale**2)

    snapshot = opt.current_snapshot()
    for model in snapshot.constraint_models:
        prob = model.probability_batch(grid_unit)
        surfaces[f"constraint_{model.spec.id}_probability"] = _with_grid(grid, prob)
        indicator = (prob >= 1.0 - model.spec.delta).astype(float)
        surfaces[f"constraint_{model.spec.id}_indicator"] = _with_grid(grid, indicator)

    surfaces["acquisition"] = _with_grid(grid, acquisition_values(snapshot, grid_unit))

    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=opt.seed, spawn_key=(_SURFACE_STREAM_KEY, opt.iteration))
    )
    disc_rng, pmin_rng = rng.spawn(2)
    points = build_discretization(snapshot, opt.search.discretization, disc_rng)
    pmin = estimate_pmin(snapshot, points, opt.search.pmin_samples, pmin_rng)
    surfaces["pmin"] = _with_grid(opt.normalizer.to_problem(pmin.points), pmin.mass)
    return surfaces


def _with_grid(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.column_stack([grid, values])
