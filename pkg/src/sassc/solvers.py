"""Solution algorithms: first-order primal-dual splitting, progressive
hedging, and a dense log-barrier reference oracle.

The default solver is a primal-dual hybrid-gradient splitting of

    min_x  f(x) + h(Kx),
    f  = objective + box indicators        (prox = per-node clamped quadratics)
    Kx = (A_k y_k - x1 per scenario, y_k - z_k per scenario)
    h  = indicator{ = g_k }  (+)  indicator{ <= psi_k }

run in multiplier-density coordinates, where the dual updates are the
plain shifts ``lam_e += sigma (K_e xbar - g)`` and
``lam_i = max(0, lam_i + sigma (K_i xbar - psi))`` and the measure weights
cancel from the iteration entirely. The iteration works in block-balanced
variables (see the engine docstring); since every objective block is
strongly convex, the classical strongly-convex step schedule is also
available behind ``SolverParams.accelerate``, though fixed balanced steps
converge faster on these instances and are the default.

Progressive hedging decomposes by scenario and exposes the
nonanticipativity structure algorithmically: scenario copies of the
control are driven to consensus by weights ``w_k`` that converge to the
negative of the per-scenario nonanticipativity density minus the shared
control gradient.

The barrier oracle is deliberately a different algorithmic family (dense
Newton on a log-barrier interior path) so that agreement between solvers
is evidence of correctness rather than a tautology.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import certify
from .grid import operator_norm_estimate
from .problem import (
    DualPoint,
    Instance,
    PrimalPoint,
    dual_function,
    objective,
    project_c1,
)

STATUS_CONVERGED = "converged"
STATUS_ITERATION_CAP = "iteration_cap"
STATUS_INFEASIBLE = "infeasibility_suspected"
STATUS_FAILURE = "failure"

BARRIER_SIZE_LIMIT = 2000


class BarrierSizeError(ValueError):
    """Instance too large for the dense reference oracle."""


class BarrierFailure(RuntimeError):
    """Newton iteration on the barrier subproblem broke down."""


@dataclass
class SolverParams:
    """Tuning knobs shared by the solvers."""

    max_iters: int = 400_000
    kkt_tolerance: float = 1e-6
    step_safety: float = 0.99          # tau * sigma * ||K||^2 <= step_safety
    accelerate: bool = False
    check_every: int = 50
    ph_penalty: float = 1.0
    ph_inner_tolerance: float = 1e-8
    ph_max_outer: int = 500
    barrier_mu0: float = 1.0
    barrier_shrink: float = 0.2
    barrier_mu_terminal: float = 1e-10
    divergence_threshold: float = 1e6
    history_csv: str | None = None

    def __post_init__(self):
        positive = {
            "max_iters": self.max_iters,
            "kkt_tolerance": self.kkt_tolerance,
            "step_safety": self.step_safety,
            "check_every": self.check_every,
            "ph_penalty": self.ph_penalty,
            "ph_inner_tolerance": self.ph_inner_tolerance,
            "ph_max_outer": self.ph_max_outer,
            "barrier_mu0": self.barrier_mu0,
            "barrier_shrink": self.barrier_shrink,
            "barrier_mu_terminal": self.barrier_mu_terminal,
            "divergence_threshold": self.divergence_threshold,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not self.kkt_tolerance < 1.0:
            raise ValueError("kkt_tolerance must be below 1")
        if not self.barrier_shrink < 1.0:
            raise ValueError("barrier_shrink must be below 1")


@dataclass
class SolveReport:
    """Outcome of one solver run.

    ``wall_time`` is informational only and is never serialized, so that
    reports from identical runs are byte-identical.
    """

    algorithm: str
    iterations: int
    status: str
    residuals: dict
    objective: float
    dual_value: float
    wall_time: float
    extras: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED


def extract_rho(inst: Instance, adjoint: np.ndarray) -> np.ndarray:
    """Nonanticipativity density implied by the adjoint multiplier.

    With the identity control-to-load map the consistency condition reads
    ``rho_k = -lam_e_k`` scenario by scenario.
    """
    adjoint = np.asarray(adjoint, dtype=float)
    if adjoint.shape != (inst.S, inst.n):
        raise ValueError(f"expected shape {(inst.S, inst.n)}, got {adjoint.shape}")
    return -adjoint


def _estimate_k_norm(
    inst: Instance, s1: float = 1.0, sz: float = 1.0, ci: float = 1.0
) -> float:
    """Weighted operator norm of the constraint map K.

    ``s1`` and ``sz`` rescale the control and slack columns and ``ci`` the
    inequality rows; the norm of the rescaled map governs the step sizes
    of the block-balanced iteration (a plain change of variables in the
    splitting). Estimates are cached alongside the realized fields, which
    the scenario-decomposition solver relies on when re-solving the same
    subproblems round after round.
    """
    key = ("knorm", inst.grid.n1d, inst.mode, float(s1), float(sz), float(ci))
    cached = inst.scenarios._cache.get(key)
    if cached is not None:
        return cached
    S, n = inst.S, inst.n
    slack = inst.mode == "slack"
    Ablk = inst.block_operator()
    p = inst.p
    hh = inst.h * inst.h
    nx = n + S * n + (S * n if slack else 0)

    w_x1 = np.full(n, hh)
    w_block = np.repeat(p * hh, n)
    weights = np.concatenate([w_x1] + [w_block] * (2 if slack else 1))

    def forward(v: np.ndarray) -> np.ndarray:
        x1 = v[:n]
        y = v[n:n + S * n]
        e = Ablk @ y - np.tile(s1 * x1, S)
        if slack:
            z = v[n + S * n:]
            i = ci * (y - sz * z)
        else:
            i = ci * y
        return np.concatenate([e, i])

    def adjoint(w: np.ndarray) -> np.ndarray:
        we = w[:S * n].reshape(S, n)
        wi = w[S * n:].reshape(S, n)
        out_x1 = -s1 * (p @ we)
        out_y = (Ablk @ we.ravel()).reshape(S, n) + ci * wi
        parts = [out_x1, out_y.ravel()]
        if slack:
            parts.append(-ci * sz * wi.ravel())
        return np.concatenate(parts)

    est = operator_norm_estimate(forward, adjoint, nx, weights=weights)
    inst.scenarios._cache[key] = est
    return est


def _pdhg_engine(
    inst: Instance,
    params: SolverParams,
    tol: float,
    max_iters: int,
    warm: tuple[PrimalPoint, DualPoint] | None = None,
    x1_extra_quad: float = 0.0,
    x1_extra_center: np.ndarray | None = None,
    x1_extra_lin: np.ndarray | None = None,
    history=None,
):
    """Run the primal-dual iteration until the optimality residuals drop
    below ``tol``; returns (primal, dual, iterations, status).

    The raw constraint map is badly block-imbalanced: the state column
    carries the stiffness norm while the control and slack columns and the
    inequality rows carry unit norm. The iteration therefore runs in
    block-balanced variables: control and slack columns and the inequality
    rows are rescaled by the square root of the unbalanced operator norm
    (the inequality rows by a third of it in hard mode, where no slack
    block bridges the coupling). These are changes of variables only; the
    dual updates and the clamped-quadratic proxes keep their form, with
    effective per-block steps ``tau * scale^2`` and the true obstacle
    multiplier recovered as ``row_scale * iterate``.
    """
    S, n, h = inst.S, inst.n, inst.h
    slack = inst.mode == "slack"
    M = inst.c2_bound
    p = inst.p
    _, g, psi = inst.fields()
    Ablk = inst.block_operator()
    y_t = inst.y_target

    q = x1_extra_quad
    qc = 0.0 if (q == 0.0 or x1_extra_center is None) else q * x1_extra_center
    lin = 0.0 if x1_extra_lin is None else x1_extra_lin

    k0 = _estimate_k_norm(inst)
    scale = max(1.0, math.sqrt(k0))
    s1 = scale
    sz = scale if slack else 1.0
    ci = scale if slack else max(1.0, k0 / 3.0)
    knorm = _estimate_k_norm(inst, s1=s1, sz=sz, ci=ci)
    tau = sigma = math.sqrt(params.step_safety) / knorm
    tau1 = tau * s1 * s1
    tauz = tau * sz * sz
    gamma = min(
        (inst.alpha + q) * s1**2,
        1.0,
        inst.alpha_prime * sz**2 if slack else math.inf,
    )

    if warm is None:
        x1 = project_c1(inst, np.zeros(n))
        y = np.zeros((S, n))
        z = np.zeros((S, n))
        lam_e = np.zeros((S, n))
        lam_ih = np.zeros((S, n))
    else:
        xw, lw = warm
        x1 = xw.x1.copy()
        y = xw.y.copy()
        z = xw.z.copy()
        lam_e = lw.adjoint.copy()
        lam_ih = np.maximum(lw.obstacle, 0.0) / ci

    xb1, yb, zb = x1.copy(), y.copy(), z.copy()
    status = STATUS_ITERATION_CAP
    best_worst = math.inf
    best = None
    it = 0
    while it < max_iters:
        it += 1
        # dual ascent at the extrapolated primal point
        Ay = (Ablk @ yb.ravel()).reshape(S, n)
        lam_e += sigma * (Ay - xb1[None, :] - g)
        ineq = yb - zb if slack else yb
        np.maximum(0.0, lam_ih + sigma * ci * (ineq - psi), out=lam_ih)

        # proximal descent; every block is a clamped quadratic
        e_lam = p @ lam_e
        v1 = x1 + tau1 * (e_lam + qc - lin)
        x1n = np.clip(v1 / (1.0 + tau1 * (inst.alpha + q)), inst.c1_lo, inst.c1_hi)

        Alam = (Ablk @ lam_e.ravel()).reshape(S, n)
        vy = y - tau * (Alam + ci * lam_ih)
        yn = np.clip((vy + tau * y_t[None, :]) / (1.0 + tau), -M, M)
        if slack:
            zn = np.clip((z + tauz * ci * lam_ih) / (1.0 + tauz * inst.alpha_prime), -M, M)
        else:
            zn = z

        if params.accelerate:
            theta = 1.0 / math.sqrt(1.0 + 2.0 * gamma * tau)
            tau *= theta
            tau1 *= theta
            tauz *= theta
            sigma /= theta
        else:
            theta = 1.0

        xb1 = x1n + theta * (x1n - x1)
        yb = yn + theta * (yn - y)
        zb = zn + theta * (zn - z) if slack else z
        x1, y, z = x1n, yn, zn

        if it % params.check_every == 0 or it == max_iters:
            xp = PrimalPoint(x1, y, z)
            lam = DualPoint(lam_e, ci * lam_ih, -lam_e)
            res = certify.natural_residuals(
                inst, xp, lam,
                x1_extra_quad=q, x1_extra_center=x1_extra_center,
                x1_extra_lin=x1_extra_lin,
            )
            worst = max(res["r1"], res["r3"], res.get("r3p", 0.0),
                        res["r4"], res["r5_feas"], res["r5_comp"])
            if history is not None:
                history(it, res, xp, lam)
            if worst < best_worst:
                best_worst = worst
                best = (x1.copy(), y.copy(), z.copy(), lam_e.copy(), lam_ih.copy())
            if worst <= tol:
                status = STATUS_CONVERGED
                break
            lam_mag = max(h * np.linalg.norm(lam_e, axis=1).max(),
                          ci * h * np.linalg.norm(lam_ih, axis=1).max())
            if lam_mag > params.divergence_threshold:
                status = STATUS_INFEASIBLE
                break

    if status != STATUS_CONVERGED and best is not None:
        x1, y, z, lam_e, lam_ih = best
    primal = PrimalPoint(x1.copy(), y.copy(), z.copy() if slack else np.zeros((S, n)))
    dual = DualPoint(lam_e.copy(), ci * lam_ih, extract_rho(inst, lam_e))
    return primal, dual, it, status


def _history_writer(inst: Instance, path: str):
    """Stream per-check residual rows to a CSV file."""
    fh = open(path, "w")
    fh.write("iteration,r1,r2,r3,r3p,r4,r5_sign,r5_feas,r5_comp,objective,dual_value\n")

    def write(it, res, xp, lam):
        obj = objective(inst, xp)
        dv = dual_function(inst, lam)
        r3p = res.get("r3p", float("nan"))
        fh.write(
            f"{it},{res['r1']:.17g},0,{res['r3']:.17g},{r3p:.17g},{res['r4']:.17g},"
            f"{res['r5_sign']:.17g},{res['r5_feas']:.17g},{res['r5_comp']:.17g},"
            f"{obj:.17g},{dv:.17g}\n"
        )

    return write, fh


def solve_pdhg(
    inst: Instance,
    params: SolverParams | None = None,
    warm: tuple[PrimalPoint, DualPoint] | None = None,
) -> tuple[PrimalPoint, DualPoint, SolveReport]:
    """Solve an instance with the primal-dual splitting.

    Returns the primal point, the multiplier densities (with the
    nonanticipativity component attached), and a report whose residual
    vector comes from the full certification pass.
    """
    params = params or SolverParams()
    t0 = time.perf_counter()
    history = fh = None
    if params.history_csv is not None:
        history, fh = _history_writer(inst, params.history_csv)
    try:
        primal, dual, iters, status = _pdhg_engine(
            inst, params, tol=params.kkt_tolerance, max_iters=params.max_iters,
            warm=warm, history=history,
        )
    finally:
        if fh is not None:
            fh.close()
    report_kkt = certify.kkt_residuals(inst, primal, dual)
    report = SolveReport(
        algorithm="pdhg",
        iterations=iters,
        status=status,
        residuals=report_kkt.residual_dict(),
        objective=report_kkt.objective,
        dual_value=report_kkt.dual_value,
        wall_time=time.perf_counter() - t0,
    )
    return primal, dual, report


def solve_hard(
    inst: Instance,
    params: SolverParams | None = None,
    warm: tuple[PrimalPoint, DualPoint] | None = None,
) -> tuple[PrimalPoint, DualPoint, SolveReport]:
    """Solve a hard-mode instance (no slack; states pinned under the obstacle)."""
    if inst.mode != "hard":
        raise ValueError("solve_hard requires an instance in hard mode")
    primal, dual, report = solve_pdhg(inst, params, warm=warm)
    report.algorithm = "pdhg_hard"
    return primal, dual, report


def solve_progressive_hedging(
    inst: Instance,
    params: SolverParams | None = None,
) -> tuple[PrimalPoint, DualPoint, SolveReport, np.ndarray]:
    """Scenario decomposition with consensus on the first-stage control.

    Each outer round solves, per scenario, the single-scenario problem
    augmented with the weight term ``<w_k, x1>`` and the proximal penalty
    ``(r/2)||x1 - consensus||^2`` (the first round omits both), then
    averages the scenario controls into a new consensus and updates the
    weights by ``w_k += r (x1_k - consensus)``. At interior consensus the
    weights satisfy ``w_k = -rho_k - alpha * consensus``.

    Returns the consensus primal point, the per-scenario duals, a report,
    and the final weight array. ``extras`` carries the consensus gap, the
    largest probability-weighted mean of the weights seen at any outer
    iteration (zero up to roundoff while the consensus projection stays
    inactive), and the total inner iteration count.
    """
    params = params or SolverParams()
    if inst.mode != "slack":
        raise ValueError("progressive hedging requires slack mode (feasible subproblems)")
    t0 = time.perf_counter()
    S, n = inst.S, inst.n
    r = params.ph_penalty
    subs = [replace(inst, scenarios=inst.scenarios.subset([k])) for k in range(S)]

    w = np.zeros((S, n))
    x_hat = np.zeros(n)
    x1s = np.zeros((S, n))
    warm_state: list = [None] * S
    status = STATUS_ITERATION_CAP
    gap = math.inf
    projection_active = False
    drift_log: list[float] = []
    outer = 0
    inner_total = 0

    for outer in range(1, params.ph_max_outer + 1):
        first = outer == 1
        for k in range(S):
            xk, lk, it_k, st_k = _pdhg_engine(
                subs[k], params,
                tol=params.ph_inner_tolerance,
                max_iters=params.max_iters,
                warm=warm_state[k],
                x1_extra_quad=0.0 if first else r,
                x1_extra_center=None if first else x_hat,
                x1_extra_lin=None if first else w[k],
            )
            inner_total += it_k
            if st_k not in (STATUS_CONVERGED,):
                raise RuntimeError(
                    f"progressive hedging subproblem for scenario {k} "
                    f"did not converge (status {st_k})"
                )
            warm_state[k] = (xk, lk)
            x1s[k] = xk.x1

        mean = inst.p @ x1s
        x_hat = project_c1(inst, mean)
        if not np.array_equal(x_hat, mean):
            projection_active = True
        w += r * (x1s - x_hat[None, :])
        drift_log.append(inst.h * float(np.linalg.norm(inst.p @ w)))

        gap = inst.h * float(np.linalg.norm(x1s - x_hat[None, :], axis=1).max())
        if gap <= params.kkt_tolerance:
            status = STATUS_CONVERGED
            break

    y = np.stack([warm_state[k][0].y[0] for k in range(S)])
    z = np.stack([warm_state[k][0].z[0] for k in range(S)])
    lam_e = np.stack([warm_state[k][1].adjoint[0] for k in range(S)])
    lam_i = np.stack([warm_state[k][1].obstacle[0] for k in range(S)])
    primal = PrimalPoint(x_hat.copy(), y, z)
    dual = DualPoint(lam_e, lam_i, extract_rho(inst, lam_e))
    report_kkt = certify.kkt_residuals(inst, primal, dual)
    report = SolveReport(
        algorithm="progressive_hedging",
        iterations=outer,
        status=status,
        residuals=report_kkt.residual_dict(),
        objective=report_kkt.objective,
        dual_value=report_kkt.dual_value,
        wall_time=time.perf_counter() - t0,
        extras={
            "consensus_gap": gap,
            "weight_mean_drift": max(drift_log) if drift_log else 0.0,
            "projection_active": projection_active,
            "inner_iterations": inner_total,
        },
    )
    return primal, dual, report, w


# ---------------------------------------------------------------------------
# Dense log-barrier reference oracle


def _barrier_terms(v, mu, spans, psi_flat, n, S, slack):
    """Gradient and Hessian contributions of all log-barrier terms.

    Returns (grad, hess_diag, hess_cross, min_slack) where hess_cross is
    the y/z coupling of the obstacle terms (slack mode).
    """
    nv = v.size
    grad = np.zeros(nv)
    hdiag = np.zeros(nv)
    x1 = v[:n]
    y = v[n:n + S * n]
    lo, hi, M = spans

    s_lo = x1 - lo
    s_hi = hi - x1
    s_ylo = y + M
    s_yhi = M - y
    slacks = [s_lo, s_hi, s_ylo, s_yhi]

    grad[:n] += mu * (-1.0 / s_lo + 1.0 / s_hi)
    hdiag[:n] += mu * (1.0 / s_lo**2 + 1.0 / s_hi**2)
    grad[n:n + S * n] += mu * (-1.0 / s_ylo + 1.0 / s_yhi)
    hdiag[n:n + S * n] += mu * (1.0 / s_ylo**2 + 1.0 / s_yhi**2)

    if slack:
        z = v[n + S * n:]
        s_zlo = z + M
        s_zhi = M - z
        s_obs = psi_flat + z - y
        slacks += [s_zlo, s_zhi, s_obs]
        grad[n + S * n:] += mu * (-1.0 / s_zlo + 1.0 / s_zhi)
        hdiag[n + S * n:] += mu * (1.0 / s_zlo**2 + 1.0 / s_zhi**2)
        grad[n:n + S * n] += mu / s_obs
        grad[n + S * n:] += -mu / s_obs
        hdiag[n:n + S * n] += mu / s_obs**2
        hdiag[n + S * n:] += mu / s_obs**2
        hcross = -mu / s_obs**2
    else:
        s_obs = psi_flat - y
        slacks.append(s_obs)
        grad[n:n + S * n] += mu / s_obs
        hdiag[n:n + S * n] += mu / s_obs**2
        hcross = None

    min_slack = min(float(s.min()) for s in slacks)
    return grad, hdiag, hcross, min_slack


def _barrier_fraction_to_boundary(v, dv, spans, psi_flat, n, S, slack) -> float:
    """Largest step keeping every barrier slack strictly positive."""
    lo, hi, M = spans
    x1, dx1 = v[:n], dv[:n]
    y, dy = v[n:n + S * n], dv[n:n + S * n]
    pairs = [
        (x1 - lo, dx1), (hi - x1, -dx1),
        (y + M, dy), (M - y, -dy),
    ]
    if slack:
        z, dz = v[n + S * n:], dv[n + S * n:]
        pairs += [(z + M, dz), (M - z, -dz), (psi_flat + z - y, dz - dy)]
    else:
        pairs.append((psi_flat - y, -dy))
    smax = 1.0
    for s, ds in pairs:
        shrink = ds < 0
        if np.any(shrink):
            smax = min(smax, float(np.min(-s[shrink] / ds[shrink])))
    return 0.99 * smax


def solve_barrier_reference(
    inst: Instance,
    params: SolverParams | None = None,
) -> tuple[PrimalPoint, DualPoint, SolveReport]:
    """Dense interior-point reference solve for small instances.

    Follows the central path of the log-barrier reformulation (all boxes
    and the obstacle inequality barriered, the PDE equality kept in a
    dense Newton KKT system), shrinking the barrier parameter
    geometrically to its terminal value. Obstacle multipliers are
    recovered from the barrier gradients, ``mu / slack``, converted to
    densities; the equality multipliers come from the Newton system.
    """
    params = params or SolverParams()
    t0 = time.perf_counter()
    S, n, h = inst.S, inst.n, inst.h
    hh = h * h
    slack = inst.mode == "slack"
    M = inst.c2_bound
    p = inst.p
    nv = n + S * n + (S * n if slack else 0)
    if nv > BARRIER_SIZE_LIMIT:
        raise BarrierSizeError(
            f"barrier oracle limited to {BARRIER_SIZE_LIMIT} variables, got {nv}"
        )
    _, g, psi = inst.fields()
    ops = inst.operators()

    lo, hi = inst.c1_lo, inst.c1_hi
    if np.any(hi - lo <= 0):
        raise BarrierFailure("control box has empty interior")
    psi_flat = psi.ravel()
    spans = (lo, hi, M)

    # strictly interior start; the PDE equality is reached by Newton
    x1 = 0.5 * (lo + hi)
    y0 = np.zeros(S * n)
    if slack:
        delta = 0.5 * min(1.0, M)
        z0 = np.clip(np.maximum(0.0, -psi_flat + delta), -0.9 * M, 0.9 * M)
        if np.any(psi_flat + z0 - y0 <= 0):
            raise BarrierFailure("could not construct a strictly feasible start")
        v = np.concatenate([x1, y0, z0])
    else:
        y0 = np.clip(psi_flat - 0.5 * min(1.0, M), -0.9 * M, 0.9 * M)
        if np.any(psi_flat - y0 <= 0):
            raise BarrierFailure("obstacle admits no strictly feasible state")
        v = np.concatenate([x1, y0])

    # quadratic objective: gradient factors and constant Hessian diagonal
    w_y = np.repeat(p * hh, n)
    hobj = np.concatenate(
        [np.full(n, inst.alpha * hh), w_y]
        + ([inst.alpha_prime * w_y] if slack else [])
    )
    yt_flat = np.tile(inst.y_target, S)

    # dense equality Jacobian: A_k y_k - x1 - g_k = 0
    E = np.zeros((S * n, nv))
    for k in range(S):
        rows = slice(k * n, (k + 1) * n)
        E[rows, :n] = -np.eye(n)
        E[rows, n + k * n: n + (k + 1) * n] = ops[k].toarray()
    b = g.ravel()
    nu = np.zeros(S * n)

    def obj_grad(v):
        gr = hobj * v
        gr[n:n + S * n] -= w_y * yt_flat
        return gr

    mu = params.barrier_mu0
    newton_steps = 0
    while True:
        inner_tol = max(1e-11, 1e-2 * mu)
        for _ in range(80):
            bgrad, bhdiag, bhcross, _ = _barrier_terms(v, mu, spans, psi_flat, n, S, slack)
            grad = obj_grad(v) + bgrad
            r_dual = grad + E.T @ nu
            r_eq = E @ v - b
            if max(np.abs(r_dual).max(), np.abs(r_eq).max()) <= inner_tol:
                break

            H = np.zeros((nv, nv))
            np.fill_diagonal(H, hobj + bhdiag)
            if bhcross is not None:
                iy = np.arange(n, n + S * n)
                iz = np.arange(n + S * n, nv)
                H[iy, iz] += bhcross
                H[iz, iy] += bhcross
            KKT = np.zeros((nv + S * n, nv + S * n))
            KKT[:nv, :nv] = H
            KKT[:nv, nv:] = E.T
            KKT[nv:, :nv] = E
            rhs = np.concatenate([-r_dual, -r_eq])
            try:
                sol = scipy.linalg.solve(KKT, rhs)
            except scipy.linalg.LinAlgError:
                KKT[:nv, :nv] += 1e-10 * np.eye(nv)
                try:
                    sol = scipy.linalg.solve(KKT, rhs)
                except scipy.linalg.LinAlgError as exc:
                    raise BarrierFailure(
                        f"Newton system singular at mu={mu:.3e}: {exc}"
                    ) from exc
            dv, dnu = sol[:nv], sol[nv:]

            smax = _barrier_fraction_to_boundary(v, dv, spans, psi_flat, n, S, slack)
            step = min(1.0, smax)
            base = np.linalg.norm(np.concatenate([r_dual, r_eq]))
            stalled = False
            for _ in range(40):
                vt = v + step * dv
                nut = nu + step * dnu
                bg, _, _, ms = _barrier_terms(vt, mu, spans, psi_flat, n, S, slack)
                if ms > 0.0:
                    rt = np.linalg.norm(
                        np.concatenate([obj_grad(vt) + bg + E.T @ nut, E @ vt - b])
                    )
                    if rt <= (1.0 - 1e-4 * step) * base:
                        break
                step *= 0.5
            else:
                stalled = True
            if stalled:
                # no productive step left at this mu; acceptable at the
                # numerical floor (final quality is gated by the KKT
                # certificate), fatal if the system genuinely broke down
                if base <= 1e-6:
                    break
                raise BarrierFailure(
                    f"line search stalled at mu={mu:.3e}; residual {base:.3e}"
                )
            v = v + step * dv
            nu = nu + step * dnu
            newton_steps += 1
        if mu <= params.barrier_mu_terminal:
            break
        mu = max(params.barrier_mu_terminal, mu * params.barrier_shrink)

    x1 = v[:n]
    y = v[n:n + S * n].reshape(S, n)
    z = v[n + S * n:].reshape(S, n) if slack else np.zeros((S, n))
    weights = (p * hh)[:, None]
    if slack:
        s_obs = (psi_flat + v[n + S * n:] - v[n:n + S * n]).reshape(S, n)
    else:
        s_obs = (psi_flat - v[n:n + S * n]).reshape(S, n)
    lam_i = (mu / s_obs) / weights
    lam_e = nu.reshape(S, n) / weights
    primal = PrimalPoint(x1.copy(), y.copy(), z.copy())
    dual = DualPoint(lam_e, lam_i, extract_rho(inst, lam_e))
    report_kkt = certify.kkt_residuals(inst, primal, dual)
    status = STATUS_CONVERGED
    if report_kkt.max_residual() > 10.0 * math.sqrt(params.barrier_mu_terminal):
        status = STATUS_FAILURE
    report = SolveReport(
        algorithm="barrier",
        iterations=newton_steps,
        status=status,
        residuals=report_kkt.residual_dict(),
        objective=report_kkt.objective,
        dual_value=report_kkt.dual_value,
        wall_time=time.perf_counter() - t0,
        extras={"mu_terminal": mu},
    )
    return primal, dual, report
