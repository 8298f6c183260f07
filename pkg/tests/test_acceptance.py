"""End-to-end acceptance checks, one test per criterion.

Run with ``pytest tests/test_acceptance.py -s``; a summary line per criterion is
printed when the module finishes, whether or not output capture is on.
"""
import contextlib
import math
import sys
import time

import numpy as np
import pytest

from helpers import random_form, vectorised_point
from oracles import dolbeault_dim
from koppelman import cohomology as co
from koppelman import expr as ex
from koppelman import forms as F
from koppelman import kernels as kf
from koppelman import quadrature as qd
from koppelman.expr import VarId
from koppelman.forms import Form

RESULTS = {}


@pytest.fixture(scope="module", autouse=True)
def summary():
    yield
    for num in sorted(RESULTS):
        ok, name, secs = RESULTS[num]
        sys.__stdout__.write(f"\ncriterion {num:2d} {'PASS' if ok else 'FAIL'}  {name}  ({secs:.2f} s)")
    sys.__stdout__.write("\n")


@contextlib.contextmanager
def criterion(num, name, budget):
    t0 = time.perf_counter()
    RESULTS[num] = (False, name, 0.0)
    yield
    secs = time.perf_counter() - t0
    RESULTS[num] = (secs < budget, name, secs)
    print(f"criterion {num} {'PASS' if secs < budget else 'FAIL'} {name} ({secs:.2f} s)")
    assert secs < budget, f"took {secs:.1f} s, budget {budget} s"


def pure_degree(f, rng):
    degs = sorted(f.degrees())
    k = degs[rng.integers(len(degs))] if degs else 0
    return Form({m: c for m, c in f.items() if len(m) == k}), k


def test_criterion_01_form_identities():
    eta = kf.flat_eta(2)
    rng = np.random.default_rng(2024)
    with criterion(1, "dbar^2, delta^2, nabla^2, anticommutation, Leibniz on 200 forms", 10):
        worst = 0.0
        for _ in range(200):
            f, g, pt = random_form(rng), random_form(rng), vectorised_point(rng, n=8)
            fk, k = pure_degree(f, rng)
            checks = [
                F.dbar(F.dbar(f)),
                F.contract_eta(F.contract_eta(f, eta), eta),
                F.nabla(F.nabla(f, eta), eta),
                F.contract_eta(F.dbar(f), eta) + F.dbar(F.contract_eta(f, eta)),
                F.nabla(F.wedge(fk, g), eta) - F.wedge(F.nabla(fk, eta), g)
                - F.wedge(fk, F.nabla(g, eta)).scale((-1) ** k),
            ]
            worst = max(worst, *(F.max_abs(c, pt) for c in checks))
        assert worst < 1e-12


def test_criterion_02_cauchy_reproduction():
    rng = np.random.default_rng(2)
    pair = kf.bm_kernel(1)
    rule = qd.QuadratureRule(points=256)
    zeta = ex.var("zeta", 0)
    with criterion(2, "Cauchy formula on the disc, degree <= 5, 20 points, 256 nodes", 5):
        worst = 0.0
        for _ in range(20):
            deg = int(rng.integers(0, 6))
            coefs = rng.normal(size=(deg + 1, 2)) @ np.array([1, 1j])
            phi = F.scalar(ex.add(*[ex.mul(complex(c), ex.power(zeta, j)) for j, c in enumerate(coefs)], 0))
            z = 0.9 * math.sqrt(rng.random()) * np.exp(2j * math.pi * rng.random())
            T = qd.koppelman_eval(phi, pair, qd.Disc(), (z,), rule)
            worst = max(worst, T.residual)
        assert worst < 1e-10


def test_criterion_03_bm_is_cauchy():
    rng = np.random.default_rng(3)
    with criterion(3, "n = 1 Bochner-Martinelli kernel equals the Cauchy kernel", 1):
        pt = vectorised_point(rng, count=1, n=100)
        K = kf.bm_kernel(1).K
        got = np.broadcast_to(ex.evaluate(K.terms[(F.Generator("d", "zeta", 0),)], pt), (100,))
        ref = 1 / (2j * math.pi * (pt[VarId("zeta", 0)] - pt[VarId("z", 0)]))
        assert np.max(np.abs(got - ref) / np.abs(ref)) < 1e-13


def test_criterion_04_ball_reproduction():
    phi = F.scalar(ex.add(ex.mul(ex.var("zeta", 0), ex.var("zeta", 1)), 3))
    with criterion(4, "Bochner-Martinelli reproduction on the unit ball of C^2", 120):
        T = qd.koppelman_eval(phi, kf.bm_kernel(2), qd.Ball((0j, 0j), 1.0, 2), (0.2 + 0.1j, -0.3j),
                              qd.QuadratureRule(points=12))
        assert T.residual < 1e-3


WEIGHTS = [
    (kf.WeightSpec("polynomial_growth", power=k), kf.C(1)) for k in range(4)
] + [
    (kf.WeightSpec("alpha_projective", power=k), kf.P(n)) for n in (1, 2) for k in range(4)
] + [
    (kf.WeightSpec("alpha_product", power=k, tilde=t), kf.PxP(1, 1)) for k in (0, 1, 2) for t in (False, True)
] + [
    (kf.WeightSpec("function_of_weight", coefficients=(0.25, 0.5, 0.25),
                   base=kf.WeightSpec("polynomial_growth", power=1)), kf.C(2)),
]


def test_criterion_05_weight_axioms():
    with criterion(5, "every weight satisfies nabla g = 0 and g_00 = 1 on the diagonal", 30):
        for spec, amb in WEIGHTS:
            g = kf.weight(spec, amb, check=False)
            nab, diag = kf.check_weight(g, amb, points=100, rng=5)
            assert nab < 1e-10 and diag < 1e-12, spec.describe()


def test_criterion_06_polynomial_growth():
    z = (0.3 + 0.2j,)
    rule = qd.QuadratureRule(points=64)
    with criterion(6, "weighted formula reproduces polynomials on growing discs", 60):
        for d in (0, 1, 2):
            phi = F.scalar(ex.power(ex.var("zeta", 0), d) if d else ex.ONE)
            for k in range(d, d + 3):
                pair = kf.weighted_flat_kernels(1, kf.WeightSpec("polynomial_growth", power=k), check=False)
                trace = qd.convergence_study(
                    lambda R: qd.koppelman_eval(phi, pair, qd.truncated_Cn(R), z, rule), [5, 10, 20])
                assert max(trace.residuals) < 1e-4, (d, k, trace.residuals)
                if k > d:
                    assert trace.monotone_boundary, (d, k, trace.boundary_magnitudes)


def test_criterion_07_dbar_solutions():
    with criterion(7, "Koppelman potential solves dbar u = phi on the disc and on P^1", 120):
        disc = co.solve_dbar(F.dbar_gen("zeta", 0).scale(ex.var("zeta", 0, True)), "C1")
        assert disc.verdict == "solved" and disc.residual < 1e-3
        psi = F.scalar(ex.div(ex.var("zeta", 1, True), ex.norm2("zeta", 2)))
        proj = co.solve_dbar(F.dbar(psi, ["zeta"]), "P1", -1)
        assert proj.verdict == "solved" and proj.residual < 1e-3


def test_criterion_08_projective_geometry():
    with criterion(8, "Chern data on P^1, P^2 and the constant function on P^1", 60):
        for n in (1, 2):
            geo = kf.pn_geometry(n)
            assert kf.check_chern(geo.chern, kf.P(n), points=100, tol=1e-9) < 1e-9
            pt = kf.sample_points(kf.P(n), 100, 6)
            assert F.max_abs(F.dbar(geo.chern.Theta_tilde), pt) < 1e-9
        T = qd.koppelman_eval(F.scalar(1), kf.pn_kernels(1, 0, 0), qd.projective_line(), (1, 0.4 - 0.3j),
                              qd.QuadratureRule(points=32))
        assert abs(T.scalar("p_term") - 1) < 1e-6


def test_criterion_09_cohomology_cases():
    with criterion(9, "P^1 case classification, mechanisms and the r = -2 obstruction", 180):
        for p in (0, 1):
            for q in (0, 1):
                for r in range(-3, 4):
                    case = co.CohomologyCase(("P", 1), p, q, r)
                    letter = co.classify(case)
                    if letter != "unknown":
                        assert dolbeault_dim(p, q, r) == 0
                        assert co.mechanism(1, p, q, r, letter).passed
        assert co.classify(co.CohomologyCase(("P", 1), 0, 1, -1)) == "d"
        v = co.analyze(co.CohomologyCase(("P", 1), 0, 1, -2))
        assert dolbeault_dim(0, 1, -2) == 1
        assert v.verdict == "obstructed" and v.obstruction.normalized_pairing > 0.1


def test_criterion_10_product_constants():
    rule = qd.QuadratureRule(points=16)
    with criterion(10, "P^1 x P^1 reproduces constants and integrals split by Fubini", 180):
        T = qd.koppelman_eval(F.scalar(1), kf.product_kernels(1, 1, 0, 0), qd.P1xP1(),
                              ((1, 0.3 + 0.2j), (1, -0.4 + 0.1j)), rule)
        assert abs(T.scalar("p_term") - 1) < 1e-5
        P = kf.product_kernels(1, 1, 0, 0, with_K=False).P
        f = ex.div(ex.mul(ex.var("zeta", 1), ex.var("zeta", 1, True), ex.var("zeta_tilde", 0),
                          ex.var("zeta_tilde", 0, True)),
                   ex.mul(ex.norm2("zeta", 2), ex.norm2("zeta_tilde", 2)))
        fixed = {VarId("z", 0): 1, VarId("z", 1): 0.3 + 0.2j, VarId("z_tilde", 0): 1, VarId("z_tilde", 1): -0.4 + 0.1j}
        grid = qd.QuadratureRule(points=24)
        full = qd.scalar_value(qd.integrate(P.scale(f), qd.P1xP1(), grid, fixed, strict=False))
        split = qd.scalar_value(qd.iterated_integral(P.scale(f), F.scalar(1), qd.projective_line("zeta"),
                                                     qd.projective_line("zeta_tilde"), grid, fixed))
        assert abs(full - split) < 1e-8
