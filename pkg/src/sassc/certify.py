"""Certification of primal-dual pairs against the optimality system.

A candidate pair is scored with natural (projection) residuals, one scalar
per optimality condition, all in mesh-weighted norms:

    r1       first-stage variational inequality over C1
    r2       consistency of the nonanticipativity multiplier with the
             adjoint (identity control-to-load map)
    r3       state stationarity over C2
    r3p      slack stationarity over C2 (slack mode only)
    r4       PDE equality residual
    r5_sign  smallest obstacle-multiplier entry (must be >= -tol)
    r5_feas  largest obstacle violation
    r5_comp  integrated complementarity product

together with the duality gap and the weighted-l1 norms of the multiplier
densities. A natural residual is exactly zero at solutions of the
corresponding variational inequality, which makes "all residuals below
tolerance" a checkable certificate of optimality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problem import (
    DualPoint,
    Instance,
    PrimalPoint,
    constraint_values,
    dual_function,
    objective,
    pairing,
    project_c1,
    project_c2,
)

# Barrier-oracle pairs carry O(sqrt(mu)) multiplier noise; certify them
# at this looser tolerance. First-order solves use the tighter default.
DEFAULT_TOL = 1e-6
ORACLE_TOL = 1e-4

KKT_CSV_COLUMNS = (
    "r1", "r2", "r3", "r3p", "r4",
    "r5_sign", "r5_feas", "r5_comp",
    "duality_gap", "l1_lambda_e", "l1_lambda_i", "l1_rho",
)


@dataclass
class KktReport:
    """Residuals, gap, and multiplier norms of a candidate pair."""

    r1: float
    r2: float
    r3: float
    r3p: float | None
    r4: float
    r5_sign: float
    r5_feas: float
    r5_comp: float
    duality_gap: float
    l1_lambda_e: float
    l1_lambda_i: float
    l1_rho: float
    objective: float
    dual_value: float

    def max_residual(self) -> float:
        """Largest certificate residual (sign violations count positively)."""
        vals = [self.r1, self.r2, self.r3, self.r4,
                self.r5_feas, self.r5_comp, max(0.0, -self.r5_sign)]
        if self.r3p is not None:
            vals.append(self.r3p)
        return max(vals)

    def relative_gap(self) -> float:
        return self.duality_gap / (1.0 + abs(self.objective))

    def passes(self, tol: float = DEFAULT_TOL, gap_tol: float | None = None) -> bool:
        """Certificate: every residual within ``tol``; gap within ``gap_tol``."""
        if self.max_residual() > tol:
            return False
        if gap_tol is not None and not self.relative_gap() <= gap_tol:
            return False
        return True

    def residual_dict(self) -> dict[str, float | None]:
        return {
            "r1": self.r1, "r2": self.r2, "r3": self.r3, "r3p": self.r3p,
            "r4": self.r4, "r5_sign": self.r5_sign, "r5_feas": self.r5_feas,
            "r5_comp": self.r5_comp,
        }

    def to_csv_row(self) -> str:
        vals = {
            "r1": self.r1, "r2": self.r2, "r3": self.r3,
            "r3p": float("nan") if self.r3p is None else self.r3p,
            "r4": self.r4, "r5_sign": self.r5_sign, "r5_feas": self.r5_feas,
            "r5_comp": self.r5_comp, "duality_gap": self.duality_gap,
            "l1_lambda_e": self.l1_lambda_e, "l1_lambda_i": self.l1_lambda_i,
            "l1_rho": self.l1_rho,
        }
        return ",".join(f"{vals[c]:.17g}" for c in KKT_CSV_COLUMNS)


def natural_residuals(
    inst: Instance,
    x: PrimalPoint,
    lam: DualPoint,
    x1_extra_quad: float = 0.0,
    x1_extra_center: np.ndarray | None = None,
    x1_extra_lin: np.ndarray | None = None,
) -> dict[str, float]:
    """Stationarity and feasibility residuals of a candidate pair.

    The optional ``x1_extra_*`` terms add ``(q/2)||x1 - c||^2 + <l, x1>``
    to the control objective; the scenario-decomposition solver certifies
    its augmented subproblems through them. They default to zero, which
    yields the plain optimality system.
    """
    h = inst.h
    p = inst.p

    e_rho = p @ lam.nonant
    f_x1 = inst.alpha * x.x1 + e_rho
    if x1_extra_quad != 0.0:
        center = 0.0 if x1_extra_center is None else x1_extra_center
        f_x1 = f_x1 + x1_extra_quad * (x.x1 - center)
    if x1_extra_lin is not None:
        f_x1 = f_x1 + x1_extra_lin
    r1 = h * float(np.linalg.norm(x.x1 - project_c1(inst, x.x1 - f_x1)))

    r2 = h * float(np.linalg.norm(lam.nonant + lam.adjoint, axis=1).max())

    Alam = (inst.block_operator() @ lam.adjoint.ravel()).reshape(inst.S, inst.n)
    f_y = x.y - inst.y_target[None, :] + Alam + lam.obstacle
    r3 = h * float(np.linalg.norm(x.y - project_c2(inst, x.y - f_y), axis=1).max())

    if inst.mode == "slack":
        f_z = inst.alpha_prime * x.z - lam.obstacle
        r3p = h * float(np.linalg.norm(x.z - project_c2(inst, x.z - f_z), axis=1).max())
    else:
        r3p = None

    eq, ineq = constraint_values(inst, x)
    r4 = h * float(np.linalg.norm(eq, axis=1).max())
    r5_sign = float(lam.obstacle.min())
    r5_feas = float(np.maximum(ineq, 0.0).max())
    r5_comp = abs(pairing(ineq, lam.obstacle, p, h))

    out = {"r1": r1, "r2": r2, "r3": r3, "r4": r4,
           "r5_sign": r5_sign, "r5_feas": r5_feas, "r5_comp": r5_comp}
    if r3p is not None:
        out["r3p"] = r3p
    return out


def multiplier_l1_norms(inst: Instance, lam: DualPoint) -> tuple[float, float, float]:
    """Weighted-l1 norms of the three multiplier densities.

    ``sum_k p_k h^2 sum_i |lam[k, i]|``: the discrete analogue of the L1
    norm of an integrable multiplier, which should stay bounded under mesh
    refinement.
    """
    hh = inst.h * inst.h

    def wl1(arr: np.ndarray) -> float:
        return hh * float(np.dot(inst.p, np.abs(arr).sum(axis=1)))

    return wl1(lam.adjoint), wl1(lam.obstacle), wl1(lam.nonant)


def duality_gap(inst: Instance, x: PrimalPoint, lam: DualPoint) -> float:
    """Objective minus dual function value; ``+inf`` for invalid multipliers."""
    if float(lam.obstacle.min()) < 0.0:
        return math.inf
    return objective(inst, x) - dual_function(inst, lam)


def kkt_residuals(inst: Instance, x: PrimalPoint, lam: DualPoint) -> KktReport:
    """Full certification report for a candidate primal-dual pair."""
    res = natural_residuals(inst, x, lam)
    obj = objective(inst, x)
    dual = dual_function(inst, lam)
    l1e, l1i, l1r = multiplier_l1_norms(inst, lam)
    return KktReport(
        r1=res["r1"], r2=res["r2"], r3=res["r3"], r3p=res.get("r3p"),
        r4=res["r4"], r5_sign=res["r5_sign"], r5_feas=res["r5_feas"],
        r5_comp=res["r5_comp"],
        duality_gap=obj - dual,
        l1_lambda_e=l1e, l1_lambda_i=l1i, l1_rho=l1r,
        objective=obj, dual_value=dual,
    )


@dataclass
class FixedPointGaps:
    """Distances to the closed-form stationarity fixed points."""

    dx1: float
    dy: float
    dz: float | None


def stationarity_fixed_points(inst: Instance, x: PrimalPoint, lam: DualPoint) -> FixedPointGaps:
    """Distances of a candidate to the closed-form optimality maps.

    At a solution the control equals ``P_C1(-E[rho]/alpha)``, each state
    equals ``P_C2(y_target - A lam_e - lam_i)``, and each slack equals
    ``P_C2(lam_i / alpha')``; the returned gaps are the mesh-weighted
    distances to those prox characterizations.
    """
    h = inst.h
    e_rho = inst.p @ lam.nonant
    x1s = project_c1(inst, -e_rho / inst.alpha)
    dx1 = h * float(np.linalg.norm(x.x1 - x1s))

    Alam = (inst.block_operator() @ lam.adjoint.ravel()).reshape(inst.S, inst.n)
    ys = project_c2(inst, inst.y_target[None, :] - Alam - lam.obstacle)
    dy = h * float(np.linalg.norm(x.y - ys, axis=1).max())

    if inst.mode == "slack":
        zs = project_c2(inst, lam.obstacle / inst.alpha_prime)
        dz = h * float(np.linalg.norm(x.z - zs, axis=1).max())
    else:
        dz = None
    return FixedPointGaps(dx1=dx1, dy=dy, dz=dz)
