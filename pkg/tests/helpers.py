import numpy as np

from koppelman import expr as ex
from koppelman import forms as F
from koppelman.expr import VarId
from koppelman.forms import Generator


def random_expr(rng, spaces=("zeta", "z"), count=2, depth=3):
    """Random smooth expression; denominators are kept away from zero."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.3:
            return ex.const(complex(*rng.normal(size=2)))
        sp = spaces[rng.integers(len(spaces))]
        return ex.var(sp, int(rng.integers(count)), bool(rng.integers(2)))
    op = rng.integers(4)
    a = random_expr(rng, spaces, count, depth - 1)
    b = random_expr(rng, spaces, count, depth - 1)
    if op == 0:
        return ex.add(a, b)
    if op == 1:
        return ex.mul(a, b)
    if op == 2:
        return ex.div(a, ex.add(2, ex.mul(b, ex.conj(b))))
    return ex.power(a, int(rng.integers(0, 4)))


def generator_pool(spaces=("zeta", "z"), count=2, fiber_rank=2):
    gens = []
    for sp in spaces:
        for i in range(count):
            gens += [Generator("d", sp, i), Generator("dbar", sp, i)]
    for i in range(fiber_rank):
        gens += [Generator("e", "E", i), Generator("e_star", "E", i)]
    return gens


def random_form(rng, terms=3, max_len=3, spaces=("zeta", "z"), count=2, fiber_rank=2, depth=2):
    pool = generator_pool(spaces, count, fiber_rank)
    out = F.Form()
    for _ in range(terms):
        mono = F.random_monomials(rng, pool, max_len)
        out = out + F.Form.monomial(mono, random_expr(rng, spaces, count, depth))
    return out


def random_point(rng, spaces=("zeta", "z"), count=2, scale=0.7):
    return {VarId(sp, i): complex(*(scale * rng.normal(size=2))) for sp in spaces for i in range(count)}


def fd_wirtinger(f, point, vid, h=1e-6):
    """Central-difference Wirtinger derivative of an Expr at a scalar point."""
    base = vid.base

    def at(delta):
        p = dict(point)
        p[base] = point[base] + delta
        return complex(ex.evaluate(f, p))

    dx = (at(h) - at(-h)) / (2 * h)
    dy = (at(1j * h) - at(-1j * h)) / (2 * h)
    return 0.5 * (dx + 1j * dy) if vid.conjugated else 0.5 * (dx - 1j * dy)


def vectorised_point(rng, spaces=("zeta", "z"), count=2, n=50, scale=0.7):
    return {VarId(sp, i): scale * (rng.normal(size=n) + 1j * rng.normal(size=n))
            for sp in spaces for i in range(count)}
