import math

import numpy as np
import pytest

from sassc import io
from sassc.grid import build_grid, solve_linear
from sassc.problem import (
    DualPoint,
    Instance,
    PrimalPoint,
    dual_function,
    feasibility_check,
    lagrangian,
    objective,
    pairing,
    project_c1,
    project_c2,
    project_koplus,
    recourse_probe,
    slater_check,
    zeros_dual,
    zeros_primal,
)
from sassc.scenarios import FieldSpec, sample_scenarios


def one_node_instance(alpha=1.0, alpha_prime=1.0, M=5.0):
    """Single interior node, single deterministic scenario."""
    scen = sample_scenarios(
        FieldSpec(1.0, (), clip=(0.5, 2.0)), FieldSpec(0.0, ()), FieldSpec(10.0, ()),
        S=1, seed=0,
    )
    return Instance(
        grid=build_grid(1), scenarios=scen,
        c1_lo=-5.0, c1_hi=5.0, c2_bound=M,
        y_target=np.zeros(1), alpha=alpha, alpha_prime=alpha_prime,
    )


def feasible_point(inst, x1, extra=None):
    """Exactly feasible point: PDE solutions plus lifted slack."""
    _, g, psi = inst.fields()
    ops = inst.operators()
    y = np.stack([solve_linear(ops[k], x1 + g[k]) for k in range(inst.S)])
    lift = 0.0 if extra is None else extra
    z = np.clip(np.maximum(0.0, y - psi) + lift, -inst.c2_bound, inst.c2_bound)
    return PrimalPoint(x1, y, z)


def test_objective_zero_at_exact_fit(tiny_instance):
    inst = tiny_instance
    x = zeros_primal(inst)
    x.y[:] = inst.y_target[None, :]
    assert objective(inst, x) == 0.0


def test_objective_single_node_arithmetic():
    inst = one_node_instance()
    x = PrimalPoint(np.zeros(1), np.full((1, 1), 2.0), np.zeros((1, 1)))
    # (1/2) * h^2 * (y - y_target)^2 with h = 1/2
    assert objective(inst, x) == pytest.approx(0.5, rel=1e-15)


def test_objective_matches_independent_summation(tiny_instance):
    inst = tiny_instance
    rng = np.random.default_rng(42)
    x = PrimalPoint(
        rng.standard_normal(inst.n),
        rng.standard_normal((inst.S, inst.n)),
        rng.standard_normal((inst.S, inst.n)),
    )
    hh = inst.h * inst.h
    expected = 0.5 * inst.alpha * hh * sum(v * v for v in x.x1)
    for k in range(inst.S):
        track = sum((x.y[k, i] - inst.y_target[i]) ** 2 for i in range(inst.n))
        slack = sum(v * v for v in x.z[k])
        expected += inst.p[k] * hh * 0.5 * (track + inst.alpha_prime * slack)
    assert objective(inst, x) == pytest.approx(expected, rel=1e-14)


def test_pairing_constant_fields():
    p = np.full(4, 0.25)
    u = np.ones((4, 9))
    lam = np.ones((4, 9))
    assert pairing(u, lam, p, 0.25) == pytest.approx(9.0 / 16.0, rel=1e-15)
    assert pairing(u, np.zeros((4, 9)), p, 0.25) == 0.0


def test_pairing_bilinear_fuzz():
    rng = np.random.default_rng(1)
    p = np.array([0.2, 0.3, 0.5])
    for _ in range(25):
        u = rng.standard_normal((3, 7))
        l1 = rng.standard_normal((3, 7))
        l2 = rng.standard_normal((3, 7))
        a, b = rng.standard_normal(2)
        lhs = pairing(u, a * l1 + b * l2, p, 0.125)
        rhs = a * pairing(u, l1, p, 0.125) + b * pairing(u, l2, p, 0.125)
        assert abs(lhs - rhs) <= 1e-13 * max(1.0, abs(lhs))
        assert pairing(u, l1, p, 0.125) == pytest.approx(
            pairing(l1, u, p, 0.125), rel=1e-14)


def test_projections_clamp():
    inst = one_node_instance(M=1.0)
    v = np.array([1.5, -0.2, -3.0])
    np.testing.assert_allclose(project_c2(inst, v), [1.0, -0.2, -1.0])
    np.testing.assert_allclose(project_koplus(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])


def test_projections_idempotent_and_nonexpansive(tiny_instance):
    inst = tiny_instance
    rng = np.random.default_rng(7)
    for _ in range(50):
        u = 3.0 * rng.standard_normal(inst.n)
        v = 3.0 * rng.standard_normal(inst.n)
        for proj in (lambda w: project_c1(inst, w), lambda w: project_c2(inst, w),
                     project_koplus):
            pu, pv = proj(u), proj(v)
            np.testing.assert_array_equal(proj(pu), pu)
            assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-15


def test_lagrangian_three_branches(tiny_instance):
    inst = tiny_instance
    x = zeros_primal(inst)
    lam = zeros_dual(inst)
    assert lagrangian(inst, x, lam) == pytest.approx(objective(inst, x))

    lam_bad = zeros_dual(inst)
    lam_bad.obstacle[0, 0] = -1e-14
    assert lagrangian(inst, x, lam_bad) == -math.inf

    x_out = zeros_primal(inst)
    x_out.x1[:] = inst.c1_hi + 1.0
    assert lagrangian(inst, x_out, lam) == math.inf


def test_lagrangian_feasible_point_bounded_by_objective(tiny_instance):
    inst = tiny_instance
    rng = np.random.default_rng(5)
    x1 = rng.uniform(inst.c1_lo, inst.c1_hi)
    x = feasible_point(inst, x1, extra=0.01)
    lam = zeros_dual(inst)
    lam.obstacle[:] = np.abs(rng.standard_normal((inst.S, inst.n)))
    val = lagrangian(inst, x, lam)
    # equality holds exactly, inequality <= 0, lam_i >= 0, so L <= j
    assert val <= objective(inst, x) + 1e-10
    assert lagrangian(inst, x, zeros_dual(inst)) == pytest.approx(
        objective(inst, x), abs=1e-12)


def test_dual_function_zero_multiplier(tiny_instance):
    # 0 in C1 and |y_target| <= M, so every inner minimum vanishes
    assert dual_function(tiny_instance, zeros_dual(tiny_instance)) == 0.0


def test_dual_function_negative_multiplier(tiny_instance):
    lam = zeros_dual(tiny_instance)
    lam.obstacle[0, 0] = -1e-16
    assert dual_function(tiny_instance, lam) == -math.inf


def test_weak_duality_fuzz(tiny_instance):
    inst = tiny_instance
    rng = np.random.default_rng(12)
    checked = 0
    for _ in range(100):
        x1 = rng.uniform(inst.c1_lo, inst.c1_hi)
        x = feasible_point(inst, x1, extra=rng.uniform(0.0, 0.1))
        if np.abs(x.y).max() > inst.c2_bound:
            continue
        lam = DualPoint(
            rng.standard_normal((inst.S, inst.n)),
            np.abs(rng.standard_normal((inst.S, inst.n))),
            np.zeros((inst.S, inst.n)),
        )
        assert dual_function(inst, lam) <= objective(inst, x) + 1e-10
        checked += 1
    assert checked >= 90


def test_dual_concavity_along_segments(tiny_instance):
    inst = tiny_instance
    rng = np.random.default_rng(3)
    shape = (inst.S, inst.n)
    for _ in range(20):
        l1 = DualPoint(rng.standard_normal(shape), np.abs(rng.standard_normal(shape)),
                       np.zeros(shape))
        l2 = DualPoint(rng.standard_normal(shape), np.abs(rng.standard_normal(shape)),
                       np.zeros(shape))
        t = rng.uniform()
        mix = DualPoint(t * l1.adjoint + (1 - t) * l2.adjoint,
                        t * l1.obstacle + (1 - t) * l2.obstacle,
                        np.zeros(shape))
        g_mix = dual_function(inst, mix)
        bound = t * dual_function(inst, l1) + (1 - t) * dual_function(inst, l2)
        assert g_mix >= bound - 1e-10


def test_feasibility_check_constructed_point(tiny_instance):
    inst = tiny_instance
    rep = feasibility_check(inst, feasible_point(inst, np.zeros(inst.n)))
    assert max(rep.x1_box, rep.y_box, rep.z_box, rep.inequality) <= 1e-12
    assert rep.equality_max <= 1e-10
    assert rep.feasible()


def test_feasibility_check_reports_violation(tiny_instance):
    inst = tiny_instance
    x = feasible_point(inst, np.zeros(inst.n))
    x.y[0] += 10.0
    rep = feasibility_check(inst, x)
    assert rep.y_box == pytest.approx(10.0 + np.abs(
        feasible_point(tiny_instance, np.zeros(inst.n)).y[0]).max() - inst.c2_bound,
        abs=1e-9)
    assert not rep.feasible()


def test_slater_success_on_default_instance():
    inst = io.make_instance("default", n1d=8)
    rep = slater_check(inst)
    assert rep.success
    assert rep.margin >= rep.delta / 2.0


def test_slater_fails_when_box_too_small():
    d = io.template_dict("tiny")
    d["c2"] = {"M": 1e-4}
    inst = io.instance_from_dict(d)
    rep = slater_check(inst)
    assert not rep.success
    assert rep.worst is not None and rep.worst["component"] in ("y_box", "z_box")


def test_slater_requires_slack_mode(tiny_instance):
    with pytest.raises(ValueError):
        slater_check(tiny_instance.with_mode("hard"))


def test_recourse_probe_midpoint_and_vertices(tiny_instance):
    inst = tiny_instance
    rep = recourse_probe(inst, [0.5 * (inst.c1_lo + inst.c1_hi)])
    assert rep.all_ok and not rep.no_probes
    rep2 = recourse_probe(inst, [inst.c1_lo, inst.c1_hi])
    assert rep2.successes == [True, True]


def test_recourse_probe_empty_is_vacuous(tiny_instance):
    rep = recourse_probe(tiny_instance, [])
    assert rep.all_ok and rep.no_probes


def test_recourse_probe_rejects_outside_point(tiny_instance):
    inst = tiny_instance
    with pytest.raises(ValueError):
        recourse_probe(inst, [inst.c1_hi + 1.0])


def test_instance_validation():
    scen = sample_scenarios(
        FieldSpec(1.0, (), clip=(0.5, 2.0)), FieldSpec(0.0, ()), FieldSpec(1.0, ()),
        S=1, seed=0,
    )
    grid = build_grid(2)
    ok = dict(grid=grid, scenarios=scen, c1_lo=-1.0, c1_hi=1.0, c2_bound=1.0,
              y_target=np.zeros(4), alpha=1.0, alpha_prime=1.0)
    Instance(**ok)
    for bad in (dict(c1_lo=2.0), dict(c2_bound=0.0), dict(alpha=0.0),
                dict(alpha_prime=-1.0), dict(mode="soft")):
        with pytest.raises(ValueError):
            Instance(**{**ok, **bad})


def test_oracle_solution_feasibility(tiny_instance):
    from sassc.solvers import SolverParams, solve_barrier_reference
    x, lam, rep = solve_barrier_reference(
        tiny_instance, SolverParams(barrier_mu_terminal=1e-12))
    fr = feasibility_check(tiny_instance, x)
    assert max(fr.x1_box, fr.y_box, fr.z_box, fr.inequality) <= 1e-8
    assert fr.equality_max <= 1e-8
