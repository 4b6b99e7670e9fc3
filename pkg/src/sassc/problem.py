"""Discrete two-stage problem data and its convex-duality algebra.

The decision variables are a deterministic control ``x1`` on the grid and
per-scenario second-stage pairs ``(y, z)`` of state and slack. The model is

    minimize  (alpha/2)||x1||^2
              + E[ (1/2)||y - y_target||^2 + (alpha'/2)||z||^2 ]
    subject to  x1 in C1,  y_k in C2,  z_k in C2,
                A_k y_k - x1 - g_k = 0        for every scenario k,
                y_k - z_k <= psi_k            for every scenario k,

with C1 a per-node box, C2 = [-M, M] per node, and all norms taken in the
mesh-weighted discrete L2 sense. In "hard" mode the slack z is removed and
the inequality becomes ``y_k <= psi_k``.

Multiplier arrays are stored as densities with respect to the discrete
measure ``p_k h^2``, so their magnitudes are stable under mesh refinement
and scenario-count changes and approximate integrable functions rather
than measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .grid import Grid, assemble_operator, solve_linear
from .scenarios import FieldSpec, ScenarioSet

MODES = ("slack", "hard")

# Box membership uses exact clamping comparison with this much slack;
# equality residuals in feasibility reports default to a looser bound.
BOX_TOL = 1e-12
EQ_TOL = 1e-8


def norm_h(v: np.ndarray, h: float) -> float:
    """Mesh-weighted Euclidean norm ``h * ||v||_2`` of a flat nodal vector."""
    return float(h * np.linalg.norm(v))


def inner_h(u: np.ndarray, v: np.ndarray, h: float) -> float:
    """Mesh-weighted inner product ``h^2 * sum(u v)``."""
    return float(h * h * np.dot(u, v))


def pairing(u: np.ndarray, lam: np.ndarray, p: np.ndarray, h: float) -> float:
    """Duality pairing of a random field with a multiplier density.

    ``sum_k p_k h^2 sum_i u[k, i] lam[k, i]`` for arrays of shape (S, n).
    """
    u = np.asarray(u, dtype=float)
    lam = np.asarray(lam, dtype=float)
    per_scenario = np.einsum("ki,ki->k", u, lam)
    return float(h * h * np.dot(p, per_scenario))


@dataclass
class Instance:
    """Full problem data bound to a grid and a scenario set."""

    grid: Grid
    scenarios: ScenarioSet
    c1_lo: np.ndarray
    c1_hi: np.ndarray
    c2_bound: float
    y_target: np.ndarray
    alpha: float
    alpha_prime: float
    mode: str = "slack"
    y_spec: FieldSpec | None = None

    def __post_init__(self):
        n = self.grid.n
        self.c1_lo = np.broadcast_to(np.asarray(self.c1_lo, dtype=float), (n,)).copy()
        self.c1_hi = np.broadcast_to(np.asarray(self.c1_hi, dtype=float), (n,)).copy()
        self.y_target = np.broadcast_to(np.asarray(self.y_target, dtype=float), (n,)).copy()
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if np.any(self.c1_lo > self.c1_hi):
            raise ValueError("control box is empty: c1_lo > c1_hi somewhere")
        if not (np.all(np.isfinite(self.c1_lo)) and np.all(np.isfinite(self.c1_hi))):
            raise ValueError("control box must be bounded (finite bounds)")
        if not 0 < self.c2_bound < math.inf:
            raise ValueError(f"state box bound M must be positive and finite, "
                             f"got {self.c2_bound}")
        if not self.alpha > 0:
            raise ValueError(f"control weight alpha must be positive, got {self.alpha}")
        if not self.alpha_prime > 0:
            raise ValueError(f"slack weight alpha' must be positive, got {self.alpha_prime}")
        if not np.all(np.isfinite(self.y_target)):
            raise ValueError("target contains non-finite values")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def S(self) -> int:
        return self.scenarios.S

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def p(self) -> np.ndarray:
        return self.scenarios.p

    def fields(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Realized nodal arrays ``(a_closed, g, psi)`` on this grid."""
        return self.scenarios.realize(self.grid)

    def operators(self) -> list[sp.csr_matrix]:
        """Per-scenario stiffness matrices, cached on the scenario set."""
        key = ("ops", self.grid.n1d)
        if key not in self.scenarios._cache:
            a_closed, _, _ = self.fields()
            self.scenarios._cache[key] = [
                assemble_operator(self.grid, a_closed[k]) for k in range(self.S)
            ]
        return self.scenarios._cache[key]

    def block_operator(self) -> sp.csr_matrix:
        """Block-diagonal stack of the per-scenario operators."""
        key = ("blk", self.grid.n1d)
        if key not in self.scenarios._cache:
            self.scenarios._cache[key] = sp.block_diag(self.operators(), format="csr")
        return self.scenarios._cache[key]

    def with_alpha_prime(self, alpha_prime: float) -> "Instance":
        return replace(self, alpha_prime=float(alpha_prime))

    def with_mode(self, mode: str) -> "Instance":
        return replace(self, mode=mode)


@dataclass
class PrimalPoint:
    """First-stage control and per-scenario states and slacks."""

    x1: np.ndarray  # (n,)
    y: np.ndarray   # (S, n)
    z: np.ndarray   # (S, n); all-zero in hard mode

    def copy(self) -> "PrimalPoint":
        return PrimalPoint(self.x1.copy(), self.y.copy(), self.z.copy())


@dataclass
class DualPoint:
    """Multiplier densities with respect to the measure ``p_k h^2``.

    ``adjoint`` multiplies the PDE equality constraint, ``obstacle`` the
    pointwise state constraint (entrywise nonnegative at valid points), and
    ``nonant`` is the nonanticipativity multiplier tied to the first stage.
    """

    adjoint: np.ndarray   # (S, n)
    obstacle: np.ndarray  # (S, n)
    nonant: np.ndarray    # (S, n)

    def copy(self) -> "DualPoint":
        return DualPoint(self.adjoint.copy(), self.obstacle.copy(), self.nonant.copy())


def zeros_primal(inst: Instance) -> PrimalPoint:
    return PrimalPoint(
        np.zeros(inst.n), np.zeros((inst.S, inst.n)), np.zeros((inst.S, inst.n))
    )


def zeros_dual(inst: Instance) -> DualPoint:
    shape = (inst.S, inst.n)
    return DualPoint(np.zeros(shape), np.zeros(shape), np.zeros(shape))


def objective(inst: Instance, x: PrimalPoint) -> float:
    """Value of the quadratic objective at a primal point."""
    h2 = inst.h * inst.h
    track = x.y - inst.y_target[None, :]
    per_k = 0.5 * np.einsum("ki,ki->k", track, track)
    if inst.mode == "slack":
        per_k = per_k + 0.5 * inst.alpha_prime * np.einsum("ki,ki->k", x.z, x.z)
    val = float(np.dot(inst.p, per_k)) + 0.5 * inst.alpha * float(np.dot(x.x1, x.x1))
    return h2 * val


def project_c1(inst: Instance, v: np.ndarray) -> np.ndarray:
    """Entrywise projection onto the control box C1."""
    return np.clip(v, inst.c1_lo, inst.c1_hi)


def project_c2(inst: Instance, v: np.ndarray) -> np.ndarray:
    """Entrywise projection onto the state box C2 = [-M, M]."""
    M = inst.c2_bound
    return np.clip(v, -M, M)


def project_koplus(v: np.ndarray) -> np.ndarray:
    """Projection onto the nonnegative cone (self-dual here)."""
    return np.maximum(v, 0.0)


def in_first_stage_box(inst: Instance, x1: np.ndarray, tol: float = BOX_TOL) -> bool:
    return bool(np.all(x1 >= inst.c1_lo - tol) and np.all(x1 <= inst.c1_hi + tol))


def _in_x0(inst: Instance, x: PrimalPoint, tol: float = BOX_TOL) -> bool:
    M = inst.c2_bound
    if not in_first_stage_box(inst, x.x1, tol):
        return False
    if np.any(np.abs(x.y) > M + tol):
        return False
    if inst.mode == "slack" and np.any(np.abs(x.z) > M + tol):
        return False
    return True


def constraint_values(inst: Instance, x: PrimalPoint) -> tuple[np.ndarray, np.ndarray]:
    """Equality residuals ``A_k y_k - x1 - g_k`` and inequality values.

    The inequality value is ``y - z - psi`` in slack mode and ``y - psi``
    in hard mode; feasibility means it is entrywise nonpositive.
    """
    _, g, psi = inst.fields()
    Ay = (inst.block_operator() @ x.y.ravel()).reshape(inst.S, inst.n)
    eq = Ay - x.x1[None, :] - g
    ineq = x.y - psi if inst.mode == "hard" else x.y - x.z - psi
    return eq, ineq


def lagrangian(inst: Instance, x: PrimalPoint, lam: DualPoint) -> float:
    """Generalized Lagrangian with its three-valued contract.

    Returns ``+inf`` when the primal point violates the box constraints,
    ``-inf`` when it satisfies them but the obstacle multiplier has a
    negative entry, and the finite saddle-function value otherwise.
    """
    if not _in_x0(inst, x):
        return math.inf
    if float(lam.obstacle.min()) < 0.0:
        return -math.inf
    eq, ineq = constraint_values(inst, x)
    return (
        objective(inst, x)
        + pairing(eq, lam.adjoint, inst.p, inst.h)
        + pairing(ineq, lam.obstacle, inst.p, inst.h)
    )


def dual_function(inst: Instance, lam: DualPoint) -> float:
    """Closed-form dual function value (the inf of the Lagrangian).

    Each inner minimization is a per-node clamped quadratic: the control
    block over C1, and per scenario the state block and (in slack mode)
    the slack block over C2. Returns ``-inf`` exactly when the obstacle
    multiplier has a negative entry.
    """
    if float(lam.obstacle.min()) < 0.0:
        return -math.inf
    h2 = inst.h * inst.h
    M = inst.c2_bound
    _, g, psi = inst.fields()

    e_adj = inst.p @ lam.adjoint  # expectation of the adjoint density
    x1s = np.clip(e_adj / inst.alpha, inst.c1_lo, inst.c1_hi)
    val = h2 * float(np.sum(0.5 * inst.alpha * x1s**2 - e_adj * x1s))

    Alam = (inst.block_operator() @ lam.adjoint.ravel()).reshape(inst.S, inst.n)
    c = Alam + lam.obstacle
    ys = np.clip(inst.y_target[None, :] - c, -M, M)
    vy = 0.5 * (ys - inst.y_target[None, :]) ** 2 + c * ys
    per_k = vy.sum(axis=1)
    if inst.mode == "slack":
        zs = np.clip(lam.obstacle / inst.alpha_prime, -M, M)
        per_k = per_k + np.sum(0.5 * inst.alpha_prime * zs**2 - lam.obstacle * zs, axis=1)
    per_k = per_k - np.einsum("ki,ki->k", lam.adjoint, g)
    per_k = per_k - np.einsum("ki,ki->k", lam.obstacle, psi)
    val += h2 * float(np.dot(inst.p, per_k))
    return val


@dataclass
class FeasibilityReport:
    """Per-constraint maximal violations of a primal point."""

    x1_box: float
    y_box: float
    z_box: float
    equality: np.ndarray  # per-scenario mesh-weighted residual norms
    inequality: float

    @property
    def equality_max(self) -> float:
        return float(self.equality.max(initial=0.0))

    def feasible(self, box_tol: float = BOX_TOL, eq_tol: float = EQ_TOL) -> bool:
        pointwise = max(self.x1_box, self.y_box, self.z_box, self.inequality)
        return pointwise <= box_tol and self.equality_max <= eq_tol


def feasibility_check(inst: Instance, x: PrimalPoint) -> FeasibilityReport:
    """Measure how far a primal point is from every constraint."""
    M = inst.c2_bound
    x1v = float(np.maximum(np.maximum(inst.c1_lo - x.x1, x.x1 - inst.c1_hi), 0.0).max())
    yv = float(np.maximum(np.abs(x.y) - M, 0.0).max())
    if inst.mode == "slack":
        zv = float(np.maximum(np.abs(x.z) - M, 0.0).max())
    else:
        zv = 0.0
    eq, ineq = constraint_values(inst, x)
    eq_norms = inst.h * np.linalg.norm(eq, axis=1)
    iv = float(np.maximum(ineq, 0.0).max())
    return FeasibilityReport(
        x1_box=x1v, y_box=yv, z_box=zv, equality=eq_norms, inequality=iv
    )


@dataclass
class SlaterReport:
    """Outcome of the constructive strict-feasibility check."""

    success: bool
    margin: float
    delta: float
    x1: np.ndarray
    worst: dict | None = None


def _second_stage_candidate(inst: Instance, x1: np.ndarray):
    """Solve the PDE per scenario and lift the slack above the obstacle."""
    _, g, psi = inst.fields()
    ops = inst.operators()
    M = inst.c2_bound
    delta = min(1.0, M / 2.0)
    y = np.stack([solve_linear(ops[k], x1 + g[k]) for k in range(inst.S)])
    z = np.clip(y - psi + delta, -M, M)
    return y, z, delta


def _interior_margins(inst: Instance, x1, y, z, include_x1: bool = True) -> dict[str, np.ndarray]:
    _, _, psi = inst.fields()
    M = inst.c2_bound
    margins = {
        "inequality": psi + z - y,
        "y_box": M - np.abs(y),
        "z_box": M - np.abs(z),
    }
    if include_x1:
        margins["x1_box"] = np.minimum(x1 - inst.c1_lo, inst.c1_hi - x1)
    return margins


def _worst_margin(margins: dict[str, np.ndarray]) -> tuple[float, dict]:
    eps = math.inf
    worst: dict = {}
    for name, arr in margins.items():
        m = float(arr.min())
        if m < eps:
            eps = m
            flat = int(np.argmin(arr))
            if arr.ndim == 2:
                worst = {"component": name, "scenario": flat // arr.shape[1],
                         "node": flat % arr.shape[1], "margin": m}
            else:
                worst = {"component": name, "scenario": None, "node": flat, "margin": m}
    return eps, worst


def slater_check(inst: Instance, x1: np.ndarray | None = None,
                 include_x1_margin: bool = True) -> SlaterReport:
    """Construct a candidate point with uniform interior margin.

    The candidate takes the control at the box midpoint (or the supplied
    ``x1``), the exact PDE solutions as states, and slacks lifted a fixed
    amount above the obstacle gap. Success requires a strictly positive
    margin in every box and in the obstacle inequality.
    """
    if inst.mode != "slack":
        raise ValueError("strict-feasibility check requires slack mode")
    if x1 is None:
        x1 = 0.5 * (inst.c1_lo + inst.c1_hi)
    y, z, delta = _second_stage_candidate(inst, x1)
    eps, worst = _worst_margin(_interior_margins(inst, x1, y, z, include_x1_margin))
    return SlaterReport(success=eps > 0.0, margin=eps, delta=delta, x1=x1,
                        worst=None if eps > 0.0 else worst)


@dataclass
class RecourseReport:
    """Sampled check that admissible controls admit feasible second stages."""

    successes: list[bool]
    margins: list[float]
    all_ok: bool
    no_probes: bool


def recourse_probe(inst: Instance, probes: list[np.ndarray]) -> RecourseReport:
    """Run the strict-feasibility construction from each probe control.

    This is a sampled check, not a proof: it reports whether each probe in
    C1 admits an interior second stage. The probe itself may sit on the
    boundary of the control box; only the second-stage margins count.
    """
    if inst.mode != "slack":
        raise ValueError("recourse probing requires slack mode")
    successes: list[bool] = []
    margins: list[float] = []
    for j, probe in enumerate(probes):
        probe = np.broadcast_to(np.asarray(probe, dtype=float), (inst.n,))
        if not in_first_stage_box(inst, probe):
            raise ValueError(f"probe {j} lies outside the control box")
        rep = slater_check(inst, x1=probe.copy(), include_x1_margin=False)
        successes.append(rep.success)
        margins.append(rep.margin)
    return RecourseReport(
        successes=successes,
        margins=margins,
        all_ok=all(successes) if successes else True,
        no_probes=not successes,
    )
