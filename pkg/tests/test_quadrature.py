import math

import numpy as np
import pytest

from koppelman import expr as ex
from koppelman import forms as F
from koppelman import kernels as kf
from koppelman import quadrature as qd
from koppelman.errors import DegreeMismatch, DomainError, SingularityUnhandled, TwistMismatch
from koppelman.expr import VarId

ZETA = ex.var("zeta", 0)
ZETABAR = ex.var("zeta", 0, True)


def area_form(coef=1):
    return F.wedge(F.d("zeta", 0), F.dbar_gen("zeta", 0)).scale(coef)


# basic integrals ------------------------------------------------------------


def test_disc_area_convention():
    val = qd.scalar_value(qd.integrate(area_form(), qd.Disc(), qd.QuadratureRule(points=16)))
    assert val == pytest.approx(-2j * math.pi, abs=1e-13)


def test_residue_on_circle():
    density = F.d("zeta", 0).scale(ex.div(1, ZETA))
    val = qd.scalar_value(qd.integrate(density, qd.Disc().boundary(), qd.QuadratureRule(points=32)))
    assert val == pytest.approx(2j * math.pi, abs=1e-13)


def test_singular_density_converges():
    # 1/(zeta - z0) has modulus |zeta - z0|^-1; Cauchy-Pompeiu gives int_D dA/(zeta - z0) = -pi conj(z0)
    z0 = 0.3 + 0.2j
    density = area_form(ex.div(1, ex.add(ZETA, -z0)))
    exact = 2j * math.pi * np.conj(z0)
    err = []
    for pts in (2, 4, 8, 16):
        rule = qd.QuadratureRule(points=pts).centered((z0,))
        err.append(abs(qd.scalar_value(qd.integrate(density, qd.Disc(), rule)) - exact))
    assert all(b <= max(a / 2, 1e-13) for a, b in zip(err, err[1:]))
    assert err[-1] < 1e-10


def test_strict_degree_mismatch():
    with pytest.raises(DegreeMismatch):
        qd.integrate(F.d("zeta", 0), qd.Disc(), strict=True)


def test_tensor_rule_refuses_pole():
    rule = qd.QuadratureRule(kind="gauss_legendre_tensor").centered((0.1,))
    with pytest.raises(SingularityUnhandled):
        qd.integrate(area_form(), qd.Disc(), rule)


def test_stokes_disc():
    omega = F.d("zeta", 0).scale(ZETABAR)
    rule = qd.QuadratureRule(points=32)
    bd = qd.scalar_value(qd.integrate(omega, qd.Disc().boundary(), rule))
    inner = qd.scalar_value(qd.integrate(F.exterior_d(omega), qd.Disc(), rule))
    assert bd == pytest.approx(inner, abs=1e-12)
    assert bd == pytest.approx(2j * math.pi, abs=1e-12)


def test_stokes_ball_c2():
    omega = F.wedge_all(F.d("zeta", 0), F.d("zeta", 1), F.dbar_gen("zeta", 1)).scale(ex.var("zeta", 0, True))
    ball = qd.Ball((0j, 0j), 1.0, 2)
    rule = qd.QuadratureRule(points=12)
    bd = qd.scalar_value(qd.integrate(omega, ball.boundary(), rule))
    inner = qd.scalar_value(qd.integrate(F.exterior_d(omega), ball, rule))
    assert abs(bd) > 1e-3
    assert bd == pytest.approx(inner, rel=1e-10)


def test_projective_volume():
    # int_{P^1} of the Fubini-Study form i/(2 pi) ddbar log|zeta|^2 is 1
    fs = kf.ddbar_log_norm("zeta", 2).scale(1j / (2 * math.pi))
    val = qd.scalar_value(qd.integrate(fs, qd.projective_line(), qd.QuadratureRule(points=32), strict=False))
    assert val == pytest.approx(1, abs=1e-12)


# Koppelman terms --------------------------------------------------------------


def test_cauchy_polynomial_terms():
    phi = F.scalar(ex.power(ZETA, 2))
    T = qd.koppelman_eval(phi, kf.bm_kernel(1), qd.Disc(), (0.3,), qd.QuadratureRule(points=64))
    assert T.scalar("boundary_term") == pytest.approx(0.09, abs=1e-13)
    assert abs(T.scalar("dbar_phi_term")) < 1e-12 and abs(T.scalar("p_term")) < 1e-12
    assert T.residual < 1e-12


def test_cauchy_mesh_refinement():
    phi = F.scalar(ex.add(ex.power(ZETA, 5), ex.mul(2j, ZETA)))
    pair = kf.bm_kernel(1)
    trace = qd.convergence_study(
        lambda m: qd.koppelman_eval(phi, pair, qd.Disc(), (0.5 - 0.2j,), qd.QuadratureRule(points=m)), [4, 8, 64, 128, 256])
    res = trace.residuals
    assert res[-1] < 1e-10
    assert res[1] < res[0]
    assert all(b <= 2 * a + 1e-14 for a, b in zip(res, res[1:]))


def test_interior_point_required():
    with pytest.raises(DomainError):
        qd.koppelman_eval(F.scalar(ZETA), kf.bm_kernel(1), qd.Disc(), (1.0,))


@pytest.mark.parametrize("mode", ["finite_difference", "symbolic"])
def test_disc_dbar_solution(mode):
    phi = F.dbar_gen("zeta", 0).scale(ZETABAR)
    for z in (0.0, 0.3 + 0.1j, -0.2 + 0.4j):
        T = qd.koppelman_eval(phi, kf.bm_kernel(1), qd.Disc(), (z,), qd.QuadratureRule(points=48), mode=mode)
        diff = qd._add_values(T.dbar_z_potential, {m: -v for m, v in T.phi_at_z.items()})
        assert qd.values_norm(diff) < 1e-3
        assert qd.values_norm(T.boundary_term) < 1e-12
        assert T.residual < 1e-3


def test_modes_agree_on_potential_derivative():
    phi = F.dbar_gen("zeta", 0).scale(ex.mul(ZETA, ZETABAR))
    z = (0.25 - 0.1j,)
    rule = qd.QuadratureRule(points=48)
    a = qd.koppelman_eval(phi, kf.bm_kernel(1), qd.Disc(), z, rule, mode="finite_difference")
    b = qd.koppelman_eval(phi, kf.bm_kernel(1), qd.Disc(), z, rule, mode="symbolic")
    diff = qd._add_values(a.dbar_z_potential, {m: -v for m, v in b.dbar_z_potential.items()})
    assert qd.values_norm(diff) < 1e-6


def test_bm_ball_reproduction():
    phi = F.scalar(ex.add(ex.mul(ex.var("zeta", 0), ex.var("zeta", 1)), 3))
    T = qd.koppelman_eval(phi, kf.bm_kernel(2), qd.Ball((0j, 0j), 1.0, 2), (0.2 + 0.1j, -0.3j),
                          qd.QuadratureRule(points=12))
    assert T.residual < 1e-3


def test_projective_constants():
    T = qd.koppelman_eval(F.scalar(1), kf.pn_kernels(1, 0, 0), qd.projective_line(), (1, 0.4 - 0.3j),
                          qd.QuadratureRule(points=32))
    assert T.scalar("p_term") == pytest.approx(1, abs=1e-10)
    assert not T.boundary_term


@pytest.mark.parametrize("phi", [ex.var("zeta", 0), ex.var("zeta", 1), ex.add(ex.var("zeta", 0), ex.mul(2j, ex.var("zeta", 1)))])
def test_projective_sections_of_o1(phi):
    T = qd.koppelman_eval(F.scalar(phi), kf.pn_kernels(1, 0, 1), qd.projective_line(), (1, 0.7 + 0.2j),
                          qd.QuadratureRule(points=32))
    assert T.residual < 1e-8


def test_projective_dbar_solution_o_minus_1():
    psi = F.scalar(ex.div(ex.var("zeta", 1, True), ex.norm2("zeta", 2)))
    phi = F.dbar(psi, ["zeta"])
    for mode in ("finite_difference", "symbolic"):
        T = qd.koppelman_eval(phi, kf.pn_kernels(1, 0, -1), qd.projective_line(), (1, 0.3 - 0.5j),
                              qd.QuadratureRule(points=32), mode=mode)
        assert T.residual < 1e-3
        assert not T.p_term or qd.values_norm(T.p_term) < 1e-12


def test_twist_mismatch():
    with pytest.raises(TwistMismatch):
        qd.koppelman_eval(F.scalar(ex.var("zeta", 0)), kf.pn_kernels(1, 0, 0), qd.projective_line(), (1, 0.1))


def test_thread_count_does_not_change_results(monkeypatch):
    phi = F.scalar(ex.power(ZETA, 3))
    rule = qd.QuadratureRule(points=128, angular=256)
    density = F.wedge(kf.bm_kernel(1).K, phi)
    fixed = {VarId("z", 0): 0.1}
    monkeypatch.setenv("KOPPELMAN_THREADS", "1")
    a = qd.integrate(density, qd.Disc().boundary(), rule, fixed, strict=False)
    monkeypatch.setenv("KOPPELMAN_THREADS", "3")
    assert qd.thread_count() == 3
    b = qd.integrate(density, qd.Disc().boundary(), rule, fixed, strict=False)
    assert a == b


# products --------------------------------------------------------------------------


def _fixed_product(z, zt):
    return {VarId("z", 0): 1, VarId("z", 1): z, VarId("z_tilde", 0): 1, VarId("z_tilde", 1): zt}


def test_product_constants():
    T = qd.koppelman_eval(F.scalar(1), kf.product_kernels(1, 1, 0, 0), qd.P1xP1(),
                          ((1, 0.3 + 0.2j), (1, -0.4 + 0.1j)), qd.QuadratureRule(points=16))
    assert T.scalar("p_term") == pytest.approx(1, abs=1e-10)


def test_product_section_reproduced():
    phi = F.scalar(ex.add(ex.mul(ex.var("zeta", 1), ex.var("zeta_tilde", 0)), ex.mul(2, ex.var("zeta", 0), ex.var("zeta_tilde", 1))))
    T = qd.koppelman_eval(phi, kf.product_kernels(1, 1, 1, 1), qd.P1xP1(),
                          ((1, 0.3 + 0.2j), (1, -0.4 + 0.1j)), qd.QuadratureRule(points=16))
    assert T.residual < 1e-8


def test_fubini_split_nonconstant_density():
    P = kf.product_kernels(1, 1, 0, 0, with_K=False).P
    f = ex.div(ex.mul(ex.var("zeta", 1), ex.var("zeta", 1, True), ex.var("zeta_tilde", 0), ex.var("zeta_tilde", 0, True)),
               ex.mul(ex.norm2("zeta", 2), ex.norm2("zeta_tilde", 2)))
    density = P.scale(f)
    fixed = _fixed_product(0.3 + 0.2j, -0.4 + 0.1j)
    rule = qd.QuadratureRule(points=24)
    full = qd.scalar_value(qd.integrate(density, qd.P1xP1(), rule, fixed, strict=False))
    it = qd.scalar_value(qd.iterated_integral(density, F.scalar(1), qd.projective_line("zeta"),
                                              qd.projective_line("zeta_tilde"), rule, fixed))
    assert abs(full) > 1e-3
    assert abs(full - it) < 1e-8


def test_product_boundary_refused():
    with pytest.raises(DomainError):
        qd.Product(qd.Disc(), qd.Disc(space="zeta_tilde")).boundary()


# reports ------------------------------------------------------------------------------


def test_csv_trace_columns():
    phi = F.scalar(ZETA)
    trace = qd.convergence_study(
        lambda m: qd.koppelman_eval(phi, kf.bm_kernel(1), qd.Disc(), (0.1,), qd.QuadratureRule(points=m)), [8, 16])
    lines = trace.to_csv().splitlines()
    assert lines[0] == "mesh,residual,runtime_ms"
    assert all(line.endswith(",") for line in lines[1:])
    timed = trace.to_csv(timing=True).splitlines()
    assert all(float(line.split(",")[2]) >= 0 for line in timed[1:])


def test_report_schema():
    T = qd.koppelman_eval(F.scalar(ZETA), kf.bm_kernel(1), qd.Disc(), (0.1,), qd.QuadratureRule(points=8))
    rep = qd.report(T, 8)
    assert rep["schema"] == 1 and rep["runtime_ms"] is None
    assert set(rep["terms"]) == {"boundary", "dbar_phi", "dbar_z_potential", "p_term"}
    assert qd.dumps(rep) == qd.dumps(qd.report(T, 8))
