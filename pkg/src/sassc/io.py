"""Canonical JSON serialization, instance files, and report emission.

All JSON written by this package is canonical: keys sorted, floats with 17
significant digits, no whitespace variation. Identical inputs therefore
produce byte-identical files, and every report embeds the SHA-256 of the
instance it came from plus the sampling seed, so any number in a study is
traceable to an exact instance.

Realized scenario fields are never serialized; instances store only the
field specifications and the seed, and realizations are regenerated on
load.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .certify import KKT_CSV_COLUMNS, KktReport
from .grid import build_grid
from .homotopy import HomotopyReport
from .problem import DualPoint, Instance, PrimalPoint
from .scenarios import FieldSpec, sample_scenarios
from .solvers import SolveReport

HOMOTOPY_CSV_COLUMNS = ("alpha_prime", "Ez2", "dist_x1", "objective", "kkt_max")
MMS_CSV_COLUMNS = ("n1d", "h", "max_error", "rate")


def _fmt(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError(f"cannot serialize non-finite number {x}")
    return format(float(x), ".17g")


def canonical_json(obj) -> str:
    """Render nested dict/list/scalar data as canonical JSON text."""

    def render(o) -> str:
        if o is None:
            return "null"
        if isinstance(o, bool):
            return "true" if o else "false"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return _fmt(o)
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, np.ndarray):
            return render(o.tolist())
        if isinstance(o, (list, tuple)):
            return "[" + ",".join(render(v) for v in o) + "]"
        if isinstance(o, dict):
            items = sorted(o.items())
            return "{" + ",".join(json.dumps(str(k)) + ":" + render(v) for k, v in items) + "}"
        raise TypeError(f"cannot serialize object of type {type(o)}")

    return render(obj) + "\n"


def atomic_write(path: str, text: str) -> None:
    """Write via a temporary file and rename, so readers never see partials."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Field specs and instances


def fieldspec_to_dict(spec: FieldSpec) -> dict:
    return {
        "baseline": spec.baseline,
        "modes": [[amp, k1, k2] for amp, (k1, k2) in spec.modes],
        "clip": None if spec.clip is None else [spec.clip[0], spec.clip[1]],
    }


def fieldspec_from_dict(d: dict) -> FieldSpec:
    modes = tuple((float(m[0]), (int(m[1]), int(m[2]))) for m in d.get("modes", []))
    clip = d.get("clip")
    return FieldSpec(
        baseline=float(d["baseline"]),
        modes=modes,
        clip=None if clip is None else (float(clip[0]), float(clip[1])),
    )


def _bounds_out(arr: np.ndarray):
    if np.all(arr == arr[0]):
        return float(arr[0])
    return arr.tolist()


def instance_to_dict(inst: Instance) -> dict:
    sc = inst.scenarios
    scen = {
        "S": sc.S,
        "seed": sc.seed,
        "spec_a": fieldspec_to_dict(sc.spec_a),
        "spec_g": fieldspec_to_dict(sc.spec_g),
        "spec_psi": fieldspec_to_dict(sc.spec_psi),
    }
    if not np.allclose(sc.p, 1.0 / sc.S, rtol=0, atol=0):
        scen["probabilities"] = sc.p.tolist()
    if inst.y_spec is not None:
        y_d = {"spec": fieldspec_to_dict(inst.y_spec)}
    else:
        y_d = {"array": inst.y_target.tolist()}
    return {
        "grid": {"n1d": inst.grid.n1d},
        "scenarios": scen,
        "c1": {"lo": _bounds_out(inst.c1_lo), "hi": _bounds_out(inst.c1_hi)},
        "c2": {"M": inst.c2_bound},
        "y_D": y_d,
        "alpha": inst.alpha,
        "alpha_prime": inst.alpha_prime,
        "mode": inst.mode,
    }


def evaluate_deterministic(spec: FieldSpec, grid) -> np.ndarray:
    """Evaluate a field spec with unit mode weights (no randomness)."""
    sx, sy = grid.interior_coords()
    return spec.evaluate(np.ones(len(spec.modes)), sx, sy)


def instance_from_dict(d: dict) -> Instance:
    grid = build_grid(int(d["grid"]["n1d"]))
    scen = d["scenarios"]
    spec_a = fieldspec_from_dict(scen["spec_a"])
    if spec_a.clip is None or spec_a.clip[0] <= 0:
        raise ValueError(
            "uniform ellipticity violated: the coefficient spec needs a clip "
            f"interval with positive lower bound, got {spec_a.clip}"
        )
    probs = scen.get("probabilities")
    scenarios = sample_scenarios(
        spec_a,
        fieldspec_from_dict(scen["spec_g"]),
        fieldspec_from_dict(scen["spec_psi"]),
        S=int(scen["S"]),
        seed=int(scen["seed"]),
        probabilities=None if probs is None else np.asarray(probs, dtype=float),
    )
    y_d = d["y_D"]
    if "spec" in y_d:
        y_spec = fieldspec_from_dict(y_d["spec"])
        y_target = evaluate_deterministic(y_spec, grid)
    else:
        y_spec = None
        y_target = np.asarray(y_d["array"], dtype=float)
    return Instance(
        grid=grid,
        scenarios=scenarios,
        c1_lo=np.asarray(d["c1"]["lo"], dtype=float),
        c1_hi=np.asarray(d["c1"]["hi"], dtype=float),
        c2_bound=float(d["c2"]["M"]),
        y_target=y_target,
        alpha=float(d["alpha"]),
        alpha_prime=float(d["alpha_prime"]),
        mode=str(d["mode"]),
        y_spec=y_spec,
    )


def save_instance(inst: Instance, path: str) -> str:
    """Write the canonical instance file; returns its SHA-256."""
    text = canonical_json(instance_to_dict(inst))
    atomic_write(path, text)
    return sha256_text(text)


def load_instance(path: str) -> tuple[Instance, str]:
    """Load an instance file; returns the instance and the canonical SHA-256."""
    with open(path) as fh:
        d = json.load(fh)
    inst = instance_from_dict(d)
    return inst, sha256_text(canonical_json(instance_to_dict(inst)))


def instance_sha(inst: Instance) -> str:
    return sha256_text(canonical_json(instance_to_dict(inst)))


# ---------------------------------------------------------------------------
# Templates


def template_dict(preset: str = "default", seed: int | None = None,
                  n1d: int | None = None, scenario_count: int | None = None) -> dict:
    """Built-in instance templates.

    ``default`` is the binding-obstacle production template; ``tiny`` is
    small enough for the dense reference oracle.
    """
    if preset == "default":
        d = {
            "grid": {"n1d": 16},
            "scenarios": {
                "S": 8,
                "seed": 7,
                "spec_a": {"baseline": 1.0,
                           "modes": [[0.4, 1, 1], [0.2, 2, 1]],
                           "clip": [0.5, 2.0]},
                "spec_g": {"baseline": 0.03,
                           "modes": [[0.015, 1, 2], [0.0075, 2, 2]],
                           "clip": None},
                "spec_psi": {"baseline": 0.0018,
                             "modes": [[0.0006, 1, 1]],
                             "clip": None},
            },
            "c1": {"lo": -2.0, "hi": 2.0},
            "c2": {"M": 1.0},
            "y_D": {"spec": {"baseline": 0.0, "modes": [[0.0075, 1, 1]], "clip": None}},
            "alpha": 0.02,
            "alpha_prime": 1.0,
            "mode": "slack",
        }
    elif preset == "tiny":
        d = {
            "grid": {"n1d": 4},
            "scenarios": {
                "S": 3,
                "seed": 1,
                "spec_a": {"baseline": 1.0,
                           "modes": [[0.4, 1, 1]],
                           "clip": [0.5, 2.0]},
                "spec_g": {"baseline": 1.0,
                           "modes": [[0.5, 1, 2]],
                           "clip": None},
                "spec_psi": {"baseline": 0.06,
                             "modes": [[0.02, 1, 1]],
                             "clip": None},
            },
            "c1": {"lo": -2.0, "hi": 2.0},
            "c2": {"M": 1.0},
            "y_D": {"spec": {"baseline": 0.0, "modes": [[0.25, 1, 1]], "clip": None}},
            "alpha": 0.1,
            "alpha_prime": 1.0,
            "mode": "slack",
        }
    else:
        raise ValueError(f"unknown preset {preset!r}")
    if seed is not None:
        d["scenarios"]["seed"] = int(seed)
    if n1d is not None:
        d["grid"]["n1d"] = int(n1d)
    if scenario_count is not None:
        d["scenarios"]["S"] = int(scenario_count)
    return d


def make_instance(preset: str = "default", **overrides) -> Instance:
    return instance_from_dict(template_dict(preset, **overrides))


# ---------------------------------------------------------------------------
# Points and reports


def primal_to_dict(x: PrimalPoint, provenance: dict) -> dict:
    return {"x1": x.x1.tolist(), "y": x.y.tolist(), "z": x.z.tolist(), **provenance}


def primal_from_dict(d: dict) -> PrimalPoint:
    return PrimalPoint(
        x1=np.asarray(d["x1"], dtype=float),
        y=np.asarray(d["y"], dtype=float),
        z=np.asarray(d["z"], dtype=float),
    )


def dual_to_dict(lam: DualPoint, provenance: dict) -> dict:
    return {
        "adjoint": lam.adjoint.tolist(),
        "obstacle": lam.obstacle.tolist(),
        "nonanticipativity": lam.nonant.tolist(),
        **provenance,
    }


def dual_from_dict(d: dict) -> DualPoint:
    return DualPoint(
        adjoint=np.asarray(d["adjoint"], dtype=float),
        obstacle=np.asarray(d["obstacle"], dtype=float),
        nonant=np.asarray(d["nonanticipativity"], dtype=float),
    )


def solve_report_to_dict(rep: SolveReport, provenance: dict) -> dict:
    # wall time deliberately omitted: reports must be deterministic
    return {
        "algorithm": rep.algorithm,
        "iterations": rep.iterations,
        "status": rep.status,
        "residuals": rep.residuals,
        "objective": rep.objective,
        "dual_value": rep.dual_value,
        "extras": {k: v for k, v in rep.extras.items()
                   if isinstance(v, (int, float, bool, str))},
        **provenance,
    }


def kkt_report_to_dict(rep: KktReport, provenance: dict) -> dict:
    return {
        "r1": rep.r1, "r2": rep.r2, "r3": rep.r3, "r3p": rep.r3p, "r4": rep.r4,
        "r5_sign": rep.r5_sign, "r5_feas": rep.r5_feas, "r5_comp": rep.r5_comp,
        "duality_gap": rep.duality_gap,
        "l1_lambda_e": rep.l1_lambda_e,
        "l1_lambda_i": rep.l1_lambda_i,
        "l1_rho": rep.l1_rho,
        "objective": rep.objective,
        "dual_value": rep.dual_value,
        **provenance,
    }


def kkt_report_csv(rep: KktReport) -> str:
    return ",".join(KKT_CSV_COLUMNS) + "\n" + rep.to_csv_row() + "\n"


def homotopy_csv(rep: HomotopyReport) -> str:
    lines = [",".join(HOMOTOPY_CSV_COLUMNS)]
    for lvl in rep.levels:
        lines.append(
            f"{lvl.alpha_prime:.17g},{lvl.ez2:.17g},{lvl.dist_x1:.17g},"
            f"{lvl.objective:.17g},{lvl.kkt_max:.17g}"
        )
    return "\n".join(lines) + "\n"


def homotopy_to_dict(rep: HomotopyReport, provenance: dict) -> dict:
    return {
        "schedule": rep.schedule,
        "levels": [
            {"alpha_prime": l.alpha_prime, "Ez2": l.ez2, "dist_x1": l.dist_x1,
             "objective": l.objective, "kkt_max": l.kkt_max, "converged": l.converged}
            for l in rep.levels
        ],
        "slope": rep.slope,
        "intercept": rep.intercept,
        "r_squared": rep.r_squared,
        "zero_slack_levels": rep.zero_slack_levels,
        "reference_status": rep.reference.status,
        **provenance,
    }


def mms_csv(rows) -> str:
    lines = [",".join(MMS_CSV_COLUMNS)]
    for r in rows:
        rate = "" if r.rate is None else f"{r.rate:.17g}"
        lines.append(f"{r.n1d},{r.h:.17g},{r.max_error:.17g},{rate}")
    return "\n".join(lines) + "\n"
