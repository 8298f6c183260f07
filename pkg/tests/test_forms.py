import itertools
import math

import numpy as np
import pytest

from helpers import random_form, random_point, vectorised_point
from koppelman import expr as ex
from koppelman import forms as F
from koppelman import kernels as kf
from koppelman.errors import AmbientMismatch, RankExceeded
from koppelman.expr import VarId
from koppelman.forms import Form, Generator

ETA2 = kf.flat_eta(2)


def close(f, g, pt, tol=1e-12):
    scale = max(1.0, F.max_abs(f, pt), F.max_abs(g, pt))
    return F.max_abs(f - g, pt) <= tol * scale


def pure_degree(f, rng):
    """Restrict a random form to one total degree."""
    degs = sorted(f.degrees())
    k = degs[rng.integers(len(degs))] if degs else 0
    return Form({m: c for m, c in f.items() if len(m) == k}), k


# wedge ----------------------------------------------------------------------


def test_square_vanishes():
    assert F.wedge(F.e(1), F.e(1)).is_zero()
    assert F.wedge(F.d("zeta", 0), F.d("zeta", 0)).is_zero()


def test_anticommute_generators():
    a, b = F.d("zeta", 1), F.dbar_gen("zeta", 1)
    pt = random_point(np.random.default_rng(0))
    assert close(F.wedge(a, b), -F.wedge(b, a), pt)


def _perm_sign(seq):
    sign, seq = 1, list(seq)
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def test_wedge_sign_against_permutation_parity():
    a, b = ex.var("zeta", 0), ex.var("z", 1)
    left = F.Form.monomial([Generator("e", "E", 0), Generator("e_star", "E", 0)], a)
    right = F.Form.monomial([Generator("e", "E", 1), Generator("e_star", "E", 1)], b)
    prod = F.wedge(left, right)
    [(mono, coef)] = prod.items()
    gens = [Generator("e", "E", 0), Generator("e_star", "E", 0), Generator("e", "E", 1), Generator("e_star", "E", 1)]
    order = [mono.index(g) for g in gens]
    pt = ex.assign(zeta=2.0, z=(0, 3.0))
    assert complex(ex.evaluate(coef, pt)) == pytest.approx(_perm_sign(order) * 6.0)
    # brute force over all orderings of four generators
    for perm in itertools.permutations(range(4)):
        f = F.Form.monomial([gens[i] for i in perm])
        [(m, c)] = f.items()
        assert complex(ex.evaluate(c, {})) == _perm_sign([m.index(gens[i]) for i in perm])


def test_wedge_associative_and_graded_commutative():
    rng = np.random.default_rng(1)
    for _ in range(40):
        f, kf_ = pure_degree(random_form(rng), rng)
        g, kg = pure_degree(random_form(rng), rng)
        h = random_form(rng)
        pt = random_point(rng)
        assert close(F.wedge(F.wedge(f, g), h), F.wedge(f, F.wedge(g, h)), pt)
        assert close(F.wedge(f, g), F.wedge(g, f).scale((-1) ** (kf_ * kg)), pt)


def test_check_ambient():
    with pytest.raises(AmbientMismatch):
        F.check_ambient(F.d("zeta", 0), F.d("z_tilde", 0), ["zeta", "z"])


# derivatives --------------------------------------------------------------


def test_dbar_single_term():
    f = F.e_star(1).scale(ex.var("zeta", 1, True))
    expected = F.wedge(F.dbar_gen("zeta", 1), F.e_star(1))
    pt = random_point(np.random.default_rng(2))
    assert close(F.dbar(f), expected, pt)


def test_dbar_of_bm_section_matches_kernel_coefficient():
    # n = 1: the kernel has no dbar part, so dbar b must vanish away from the diagonal
    b = kf.bm_section(1)
    pt = vectorised_point(np.random.default_rng(3), count=1)
    assert F.max_abs(F.dbar(b), pt) < 1e-12


def test_dbar_bm_section_finite_difference_n2():
    b = kf.bm_section(2)
    db = F.dbar(b)
    rng = np.random.default_rng(4)
    pt = random_point(rng)
    h = 1e-6
    # coefficient of dbar(zeta,0) ^ e*_1 equals d/d conj(zeta_0) of b's e*_1 coefficient
    mono = (Generator("dbar", "zeta", 0), Generator("e_star", "E", 1))
    coef = b.terms[(Generator("e_star", "E", 1),)]

    def at(delta):
        p = dict(pt)
        p[VarId("zeta", 0)] = pt[VarId("zeta", 0)] + delta
        return complex(ex.evaluate(coef, p))

    fd = 0.5 * ((at(h) - at(-h)) / (2 * h) + 1j * (at(1j * h) - at(-1j * h)) / (2 * h))
    assert complex(ex.evaluate(db.terms[mono], pt)) == pytest.approx(fd, rel=1e-6)


# contraction -----------------------------------------------------------------


def test_contract_basic():
    pt = random_point(np.random.default_rng(5))
    eta = [ex.var("zeta", 0), ex.var("zeta", 1)]
    assert close(F.contract_eta(F.e_star(0), eta), F.scalar(eta[0]), pt)
    f = F.wedge(F.e_star(0), F.e_star(1))
    expected = F.e_star(1).scale(eta[0]) - F.e_star(0).scale(eta[1])
    assert close(F.contract_eta(f, eta), expected, pt)


def test_delta_s_projective():
    geo = kf.pn_geometry(2)
    z, zeta = ex.norm2("z", 3), ex.norm2("zeta", 3)
    zz = ex.dot([ex.var("z", i, True) for i in range(3)], [ex.var("zeta", i) for i in range(3)])
    expected = ex.div(ex.add(ex.mul(zeta, z), ex.mul(-1, zz, ex.conj(zz))), ex.mul(zeta, z))
    got = F.contract(geo.s, geo.eta)
    pt = kf.sample_points(kf.P(2), 20, 0)
    assert close(got, F.scalar(expected).scale(kf.PROJ_C), pt)


# the identity suite on random forms -------------------------------------


@pytest.fixture(scope="module")
def random_batch():
    rng = np.random.default_rng(7)
    return [(random_form(rng), random_form(rng), vectorised_point(rng, n=8)) for _ in range(200)], rng


def test_dbar_squared(random_batch):
    batch, _ = random_batch
    for f, _, pt in batch:
        assert F.max_abs(F.dbar(F.dbar(f)), pt) < 1e-12


def test_delta_squared(random_batch):
    batch, _ = random_batch
    for f, _, pt in batch:
        assert F.max_abs(F.contract_eta(F.contract_eta(f, ETA2), ETA2), pt) < 1e-12


def test_nabla_squared(random_batch):
    batch, _ = random_batch
    for f, _, pt in batch:
        assert F.max_abs(F.nabla(F.nabla(f, ETA2), ETA2), pt) < 1e-12


def test_anticommutation(random_batch):
    batch, _ = random_batch
    for f, _, pt in batch:
        lhs = F.contract_eta(F.dbar(f), ETA2) + F.dbar(F.contract_eta(f, ETA2))
        assert F.max_abs(lhs, pt) < 1e-12


def test_leibniz(random_batch):
    batch, rng = random_batch
    for f, g, pt in batch:
        f, k = pure_degree(f, rng)
        lhs = F.nabla(F.wedge(f, g), ETA2)
        rhs = F.wedge(F.nabla(f, ETA2), g) + F.wedge(f, F.nabla(g, ETA2)).scale((-1) ** k)
        assert F.max_abs(lhs - rhs, pt) < 1e-12


# geometric inverse ---------------------------------------------------------


def test_nabla_one_is_zero():
    assert F.nabla(F.scalar(1), ETA2).is_zero()


def test_geometric_inverse_top_degree_n1():
    b = kf.bm_section(1)
    u = F.geometric_inverse(b, kf.flat_eta(1))
    pt = vectorised_point(np.random.default_rng(8), count=1)
    assert close(u, b, pt)


def test_nabla_b_is_one_minus_dbar_b():
    b = kf.bm_section(1)
    pt = vectorised_point(np.random.default_rng(9), count=1)
    assert close(F.nabla(b, kf.flat_eta(1)), F.scalar(1) - F.dbar(b), pt)


def test_nabla_u_is_one_n2():
    u = F.geometric_inverse(kf.bm_section(2), ETA2)
    pt = vectorised_point(np.random.default_rng(10), n=50)
    assert close(F.nabla(u, ETA2), F.scalar(1), pt, 1e-10)


def test_geometric_inverse_cfl_component():
    # s with delta_eta s = 1 after normalisation: u_{n,n-1} = s ^ (dbar s)^(n-1) / (delta s)^n
    n = 2
    s = F.e_star(0).scale(ex.var("zeta", 0, True)) + F.e_star(1).scale(ex.var("zeta", 1, True))
    u = F.geometric_inverse(s, ETA2)
    den = F.contract_eta(s, ETA2).scalar_part()
    expected = F.wedge(s, F.dbar(s)).scale(ex.power(den, -n))
    pt = vectorised_point(np.random.default_rng(11))
    assert close(F.pick_bidegree(u, p_estar=n), expected, pt)


def test_geometric_inverse_rejects_bad_numerator():
    with pytest.raises(RankExceeded):
        F.geometric_inverse(F.wedge(F.e_star(0), F.e_star(1)), ETA2)


# fiber projection -----------------------------------------------------------


def test_project_fiber_signs():
    phi = ex.var("zeta", 0)
    pt = ex.assign(zeta=1.5)
    pos = F.project_fiber(F.wedge(F.e(0), F.e_star(0)).scale(phi), 1)
    neg = F.project_fiber(F.wedge(F.e_star(0), F.e(0)).scale(phi), 1)
    assert complex(ex.evaluate(pos.scalar_part(), pt)) == 1.5
    assert complex(ex.evaluate(neg.scalar_part(), pt)) == -1.5


def test_project_fiber_with_beta_replaces_estar():
    # int_E v ^ beta_n turns e*_j into d zeta_j
    n = 2
    beta = F.Form()
    for j in range(n):
        beta = beta + F.wedge(F.d("zeta", j), F.e(j))
    rng = np.random.default_rng(12)
    v = F.e_star(0).scale(ex.var("z", 0)) + F.e_star(1).scale(ex.var("z", 1, True))
    v = F.wedge(v, F.e_star(0) + F.e_star(1))
    got = F.project_fiber(F.wedge(v, F.divided_power(beta, n)), n)
    expected = F.estar_to_differentials(v, "zeta", images={j: F.d("zeta", j) for j in range(n)})
    pt = random_point(rng)
    assert close(got, expected, pt)


def test_project_fiber_order_invariant():
    rng = np.random.default_rng(13)
    f = random_form(rng, terms=6, max_len=6)
    pt = random_point(rng)
    a = F.project_fiber(f, indices=[0, 1])
    b = F.project_fiber(f, indices=[1, 0])
    assert close(a, b, pt)


# component selection ----------------------------------------------------------


def test_pick_bidegree():
    f = F.scalar(1) + F.wedge(F.dbar_gen("zeta", 0), F.e_star(0))
    assert F.pick_bidegree(f, scalar_only=True).scalar_part().value == 1
    u = F.geometric_inverse(kf.bm_section(2), ETA2)
    top = F.pick_bidegree(u, p_estar=2, dbar_total=1)
    assert top.degrees() == {3}


def test_pick_bidegree_p0_density_on_p1():
    # the (1,1)-in-zeta, (0,0)-in-z part of P_{0,r} is the top power of alpha against the prefactor
    r = 1
    P = kf.pn_kernels(1, 0, r, with_K=False).P
    dens = F.pick_bidegree(P, zeta=(1, 1), z=(0, 0))
    geo = kf.pn_geometry(1)
    hand = F.project_fiber(F.wedge_all(geo.prefactor, F.wedge_power(geo.alpha, 1 + r), geo.beta), indices=range(2))
    hand = F.pick_bidegree(hand, zeta=(1, 1), z=(0, 0))
    pt = kf.sample_points(kf.P(1), 20, 1)
    assert close(dens, hand, pt)


# serialization -----------------------------------------------------------------


def test_dump_round_trip():
    rng = np.random.default_rng(14)
    f = random_form(rng, terms=5)
    g = F.parse_dump(F.dump(f))
    assert close(f, g, random_point(rng), 0)
    assert F.dump(f) == F.dump(g)


def test_rename_space():
    f = F.d("zeta", 0).scale(ex.var("zeta", 1, True))
    g = F.rename_space(f, "zeta", "z")
    [(mono, coef)] = g.items()
    assert mono == (Generator("d", "z", 0),)
    assert coef.free_vars == {VarId("z", 1, True)}


def test_two_pi_constant():
    assert kf.TWO_PI_I == pytest.approx(2j * math.pi)
