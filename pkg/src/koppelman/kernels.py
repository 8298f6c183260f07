"""Kernels and weights for Koppelman formulas in C^n, on P^n and on P^n x P^m.

Conventions (fixed once, pinned by the reproduction tests):

* In ``C^n`` the diagonal section is ``eta = 2*pi*i*(zeta - z)`` and the frame
  element ``e_j^*`` stands for ``d eta_j / (2*pi*i) = d zeta_j - d z_j``.
* On ``P^n`` the fiber computations take place in the trivial bundle of rank
  ``n + 1`` (frame ``e_0 .. e_n``) and contraction sends ``e_j^*`` to
  ``-2*pi*i*z_j``.  The quotient bundle is reached through the prefactor
  ``zeta.e ^ conj(zeta).e^* / |zeta|^2``.
* On ``P^n x P^m`` there is no auxiliary bundle: contraction acts directly on
  ``d zeta_j`` (to ``-2*pi*i*z_j``) and on ``d zeta~_j`` (to ``-2*pi*i*z~_j``).

With these choices every weight has scalar part 1 on the diagonal and the
P-kernels reproduce constants with total mass exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from . import forms as F
from .errors import (
    ChernInconsistent,
    DegreeOutOfRange,
    DualityRequired,
    SupportFunctionInvalid,
    WeightAxiomViolation,
)
from .forms import Form, Generator

TWO_PI_I = 2j * math.pi
PROJ_C = -TWO_PI_I  # contraction constant on projective spaces


@dataclass(frozen=True)
class Ambient:
    """``kind`` is ``"C"`` (affine C^n), ``"P"`` (P^n) or ``"PxP"`` (P^n x P^m)."""

    kind: str
    n: int
    m: int = 0

    def __post_init__(self):
        if self.kind not in ("C", "P", "PxP"):
            raise ValueError(f"unknown ambient kind {self.kind!r}")
        if self.n < 1 or (self.kind == "PxP" and self.m < 1):
            raise DegreeOutOfRange("dimensions must be positive")

    @property
    def coords(self) -> int:
        """Number of coordinates per point of the first factor."""
        return self.n if self.kind == "C" else self.n + 1

    @property
    def dim(self) -> int:
        return self.n + (self.m if self.kind == "PxP" else 0)

    def label(self) -> str:
        if self.kind == "C":
            return f"C{self.n}"
        if self.kind == "P":
            return f"P{self.n}"
        return f"P{self.n}xP{self.m}"


def C(n: int) -> Ambient:
    return Ambient("C", n)


def P(n: int) -> Ambient:
    return Ambient("P", n)


def PxP(n: int, m: int) -> Ambient:
    return Ambient("PxP", n, m)


# ----------------------------------------------------------------------
# small builders


def _vars(space: str, count: int, conjugated: bool = False):
    return [ex.var(space, i, conjugated) for i in range(count)]


def _frame_dot(coefs, kind: str, fiber: str = "E") -> Form:
    """``sum coefs[j] * e_j`` (or ``e_j^*``)."""
    out = Form()
    for j, c in enumerate(coefs):
        out = out + Form.monomial((Generator(kind, fiber, j),), c)
    return out


def _diff_dot(coefs, space: str, kind: str = "d") -> Form:
    out = Form()
    for j, c in enumerate(coefs):
        out = out + Form.monomial((Generator(kind, space, j),), c)
    return out


def _pair(one: Form, other: Form) -> Form:
    return F.wedge(one, other)


def ddbar_log_norm(space: str, count: int) -> Form:
    """``partial dbar log |v|^2`` in the coordinates of ``space``."""
    v = _vars(space, count)
    nrm = ex.norm2(space, count)
    dbar_log = _diff_dot([ex.div(vi, nrm) for vi in v], space, "dbar")
    return F.partial(dbar_log, [space])


# ----------------------------------------------------------------------
# random sample points


def sample_points(ambient: Ambient, count: int, rng=None, diagonal: bool = False,
                  scale: float = 1.0) -> dict:
    """Random evaluation points (vectorised over ``count``) for the ambient's variables."""
    rng = np.random.default_rng(rng)

    def gauss(k):
        return scale * (rng.standard_normal((k, count)) + 1j * rng.standard_normal((k, count))) / math.sqrt(2)

    k = ambient.coords
    zeta = gauss(k)
    z = zeta.copy() if diagonal else gauss(k)
    coords = {"zeta": zeta, "z": z}
    if ambient.kind == "PxP":
        zt = gauss(ambient.m + 1)
        coords["zeta_tilde"] = zt
        coords["z_tilde"] = zt.copy() if diagonal else gauss(ambient.m + 1)
    return ex.assign(**coords)


def max_component(f: Form, point) -> float:
    return F.max_abs(f, point)


# ----------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class ChernData:
    """``D_eta`` (the connection applied to the section) and the curvature ``Theta_tilde``."""

    D_eta: Form
    Theta_tilde: Form

    def combined(self) -> Form:
        """``D eta / (2 pi i) + i Theta~ / (2 pi)``."""
        return self.D_eta.scale(1 / TWO_PI_I) + self.Theta_tilde.scale(1j / (2 * math.pi))


@dataclass(frozen=True)
class WeightSpec:
    """Description of a weight.

    kinds: ``one_plus_nablaQ`` (``Q`` a Form), ``function_of_weight`` (``coefficients``
    of a polynomial G and a ``base`` spec), ``polynomial_growth`` (``power``),
    ``alpha_projective`` (``power``) and ``alpha_product`` (``power``, ``tilde``).
    """

    kind: str
    Q: Optional[Form] = None
    coefficients: Sequence[complex] = ()
    base: Optional["WeightSpec"] = None
    power: int = 1
    tilde: bool = False

    def describe(self) -> str:
        if self.kind == "function_of_weight":
            return f"G{tuple(self.coefficients)}({self.base.describe()})"
        if self.kind == "one_plus_nablaQ":
            return "1+nablaQ"
        return f"{self.kind}^{self.power}"


@dataclass(frozen=True)
class KernelPair:
    K: Form
    P: Form
    ambient: Ambient
    twist: Optional[tuple] = None
    weight_stack: tuple = ()
    eta_convention: str = ""
    eta: dict = field(default_factory=dict, compare=False, repr=False)

    def k_component(self, **spec) -> Form:
        return F.pick_bidegree(self.K, **spec)

    def p_component(self, **spec) -> Form:
        return F.pick_bidegree(self.P, **spec)


# ----------------------------------------------------------------------
# contraction data


def flat_eta(n: int) -> list:
    """``eta_j = 2 pi i (zeta_j - z_j)``."""
    return [ex.mul(ex.const(TWO_PI_I), ex.add(ex.var("zeta", j), ex.mul(-1, ex.var("z", j)))) for j in range(n)]


def eta_map(ambient: Ambient) -> dict:
    """Contraction data (generator -> scalar) of the diagonal section."""
    if ambient.kind == "C":
        return F.eta_mapping(flat_eta(ambient.n))
    if ambient.kind == "P":
        return {Generator("e_star", "E", j): ex.mul(ex.const(PROJ_C), ex.var("z", j))
                for j in range(ambient.n + 1)}
    out = {Generator("d", "zeta", j): ex.mul(ex.const(PROJ_C), ex.var("z", j)) for j in range(ambient.n + 1)}
    out.update({Generator("d", "zeta_tilde", j): ex.mul(ex.const(PROJ_C), ex.var("z_tilde", j))
                for j in range(ambient.m + 1)})
    return out


def nabla(f: Form, ambient: Ambient) -> Form:
    return F.contract(f, eta_map(ambient)) - F.dbar(f)


def flat_identification(n: int) -> dict:
    """``e_j^* -> d zeta_j - d z_j``."""
    return {j: F.d("zeta", j) - F.d("z", j) for j in range(n)}


def to_differentials(f: Form, n: int) -> Form:
    return F.estar_to_differentials(f, images=flat_identification(n))


# ----------------------------------------------------------------------
# C^n kernels


def bm_section(n: int) -> Form:
    """``b = sum conj(eta_j) e_j^* / |eta|^2`` (so that ``delta_eta b = 1``)."""
    eta = flat_eta(n)
    nrm = ex.add(*[ex.mul(h, ex.conj(h)) for h in eta])
    return _frame_dot([ex.div(ex.conj(h), nrm) for h in eta], "e_star")


def _flat_pair(u: Form, n: int, convention: str, weights=(), weight_form: Optional[Form] = None) -> KernelPair:
    if weight_form is None:
        K = to_differentials(F.pick_bidegree(u, p_estar=n), n)
        P = Form()
    else:
        K = to_differentials(F.pick_bidegree(F.wedge(u, weight_form), p_estar=n), n)
        P = to_differentials(F.pick_bidegree(weight_form, p_estar=n), n)
    return KernelPair(K=K, P=P, ambient=C(n), weight_stack=tuple(weights), eta_convention=convention,
                      eta=eta_map(C(n)))


def bm_kernel(n: int) -> KernelPair:
    """Bochner-Martinelli kernel in ``C^n``: top e*-degree part of ``b / nabla b``."""
    if n < 1:
        raise DegreeOutOfRange("n must be >= 1")
    u = F.geometric_inverse(bm_section(n), flat_eta(n))
    return _flat_pair(u, n, "eta=2pi i(zeta-z); e*_j=dzeta_j-dz_j")


def decay_exponent(K: Form, n: int, ts=None, rng=0, rays: int = 8) -> float:
    """Fitted exponent ``a`` in ``max |K| ~ |zeta - z|^a`` along random rays into the diagonal."""
    ts = np.geomspace(1e-4, 1e-2, 9) if ts is None else np.asarray(ts)
    rng = np.random.default_rng(rng)
    z = (rng.standard_normal((n, rays)) + 1j * rng.standard_normal((n, rays))) * 0.5
    v = rng.standard_normal((n, rays)) + 1j * rng.standard_normal((n, rays))
    v /= np.linalg.norm(v, axis=0)
    slopes = []
    for j in range(rays):
        mags = []
        for t in ts:
            pt = ex.assign(zeta=z[:, j] + t * v[:, j], z=z[:, j])
            mags.append(F.max_abs(K, pt))
        slopes.append(np.polyfit(np.log(ts), np.log(mags), 1)[0])
    return float(np.median(slopes))


def _sampled_support_check(s: Form, n: int, rng) -> None:
    eta = flat_eta(n)
    delta = F.contract_eta(s, eta).scalar_part()
    rng = np.random.default_rng(rng)
    count = 200
    z = (rng.standard_normal((n, count)) + 1j * rng.standard_normal((n, count))) * 0.5
    direction = rng.standard_normal((n, count)) + 1j * rng.standard_normal((n, count))
    direction /= np.linalg.norm(direction, axis=0)
    upper, lower = [], []
    for t in (1e-1, 1e-2, 1e-3):
        pt = ex.assign(zeta=z + t * direction, z=z)
        try:
            dv = np.abs(ex.evaluate(delta, pt)) * np.ones(count)
            sv = np.sqrt(sum(np.abs(np.broadcast_to(c, (count,))) ** 2 for c in s.evaluate(pt).values()))
        except ZeroDivisionError as err:
            raise SupportFunctionInvalid("support function singular off the diagonal") from err
        h = (2 * math.pi * t)
        upper.append(np.max(sv / h))
        lower.append(np.min(dv / h ** 2))
    if not np.all(np.isfinite(upper)) or upper[-1] > 10 * upper[0] + 1e-12:
        raise SupportFunctionInvalid("|s| is not O(|eta|) near the diagonal")
    if lower[-1] < 0.1 * lower[0] or lower[0] <= 0:
        raise SupportFunctionInvalid("|delta_eta s| is not bounded below by |eta|^2 near the diagonal")
    far = ex.assign(zeta=rng.standard_normal((n, 10_000)) + 1j * rng.standard_normal((n, 10_000)),
                    z=rng.standard_normal((n, 10_000)) + 1j * rng.standard_normal((n, 10_000)))
    if np.min(np.abs(np.broadcast_to(ex.evaluate(delta, far), (10_000,)))) == 0:
        raise SupportFunctionInvalid("delta_eta s vanishes off the diagonal")


def cfl_kernel(s: Form, n: int, check: bool = True, rng=0) -> KernelPair:
    """Cauchy-Fantappie-Leray kernel ``s ^ (dbar s)^(n-1) / (delta_eta s)^n`` from a support form ``s``."""
    if check:
        _sampled_support_check(s, n, rng)
    u = F.geometric_inverse(s, flat_eta(n))
    return _flat_pair(u, n, "eta=2pi i(zeta-z); e*_j=dzeta_j-dz_j; cfl")


# ----------------------------------------------------------------------
# weights


def polynomial_growth_Q(n: int) -> Form:
    """``Q = conj(zeta).e^* / (2 pi i (1 + |zeta|^2))``."""
    den = ex.mul(ex.const(TWO_PI_I), ex.add(1, ex.norm2("zeta", n)))
    return _frame_dot([ex.div(ex.var("zeta", j, True), den) for j in range(n)], "e_star")


def alpha_projective(n: int) -> Form:
    """``z.conj(zeta)/|zeta|^2 + dbar(conj(zeta).e^*/|zeta|^2) / (2 pi i)``."""
    nz = ex.norm2("zeta", n + 1)
    scalar = ex.div(ex.dot(_vars("z", n + 1), _vars("zeta", n + 1, True)), nz)
    frame = _frame_dot([ex.div(ex.var("zeta", j, True), nz) for j in range(n + 1)], "e_star")
    return F.scalar(scalar) + F.dbar(frame).scale(1 / TWO_PI_I)


def alpha_product(n: int, tilde: bool = False) -> Form:
    """``z.conj(zeta)/|zeta|^2 + (i / 2 pi) partial dbar log|zeta|^2`` (or its tilde copy)."""
    zs, s = ("z_tilde", "zeta_tilde") if tilde else ("z", "zeta")
    nz = ex.norm2(s, n + 1)
    scalar = ex.div(ex.dot(_vars(zs, n + 1), _vars(s, n + 1, True)), nz)
    return F.scalar(scalar) + ddbar_log_norm(s, n + 1).scale(1j / (2 * math.pi))


def _realize(spec: WeightSpec, ambient: Ambient) -> Form:
    if spec.kind == "one_plus_nablaQ":
        Q = spec.Q if spec.Q is not None else Form()
        return F.scalar(1) + nabla(Q, ambient)
    if spec.kind == "polynomial_growth":
        if ambient.kind != "C":
            raise WeightAxiomViolation("polynomial-growth weight lives on C^n")
        g = F.scalar(1) - nabla(polynomial_growth_Q(ambient.n), ambient)
        return F.wedge_power(g, spec.power)
    if spec.kind == "alpha_projective":
        if ambient.kind != "P":
            raise WeightAxiomViolation("alpha_projective needs a P^n ambient")
        return F.wedge_power(alpha_projective(ambient.n), spec.power)
    if spec.kind == "alpha_product":
        if ambient.kind != "PxP":
            raise WeightAxiomViolation("alpha_product needs a P^n x P^m ambient")
        dim = ambient.m if spec.tilde else ambient.n
        return F.wedge_power(alpha_product(dim, spec.tilde), spec.power)
    if spec.kind == "function_of_weight":
        if spec.base is None:
            raise WeightAxiomViolation("function_of_weight needs a base weight")
        coefs = [complex(c) for c in spec.coefficients]
        if abs(sum(coefs) - 1) > 1e-12:
            raise WeightAxiomViolation("G(1) must equal 1")
        g = _realize(spec.base, ambient)
        out, gp = Form(), F.scalar(1)
        for c in coefs:
            out = out + gp.scale(c)
            gp = F.wedge(gp, g)
        return out
    raise WeightAxiomViolation(f"unknown weight kind {spec.kind!r}")


def check_weight(g: Form, ambient: Ambient, points: int = 100, rng=0,
                 nabla_tol: float = 1e-10, diag_tol: float = 1e-12) -> tuple:
    """Return ``(max |nabla g|, max |g_00(z,z) - 1|)``; raise if either exceeds its tolerance."""
    pts = sample_points(ambient, points, rng)
    res = F.max_abs(nabla(g, ambient), pts)
    diag = sample_points(ambient, points, np.random.default_rng(rng).integers(1 << 30), diagonal=True)
    sc = np.broadcast_to(ex.evaluate(g.scalar_part(), diag), (points,))
    dres = float(np.max(np.abs(sc - 1)))
    if res > nabla_tol:
        raise WeightAxiomViolation(f"nabla g = {res:.3e} exceeds {nabla_tol}")
    if dres > diag_tol:
        raise WeightAxiomViolation(f"scalar part on the diagonal deviates from 1 by {dres:.3e}")
    return res, dres


def weight(spec: WeightSpec, ambient: Ambient, check: bool = True, points: int = 100) -> Form:
    """Realize a weight as a Form; optionally verify both weight axioms numerically."""
    g = _realize(spec, ambient)
    if check:
        check_weight(g, ambient, points)
    return g


def weighted_flat_kernels(n: int, spec: WeightSpec, check: bool = True) -> KernelPair:
    """``K = (u ^ g)_{n}``, ``P = g_{n}`` in ``C^n`` for a weight ``g``."""
    g = weight(spec, C(n), check=check)
    u = F.geometric_inverse(bm_section(n), flat_eta(n))
    return _flat_pair(u, n, "eta=2pi i(zeta-z); e*_j=dzeta_j-dz_j", (spec.describe(),), g)


# ----------------------------------------------------------------------
# kernels from a section and a connection


def flat_chern(n: int) -> ChernData:
    D_eta = Form()
    for j in range(n):
        D_eta = D_eta + F.wedge(F.d("zeta", j) - F.d("z", j), F.e(j)).scale(TWO_PI_I)
    return ChernData(D_eta=D_eta, Theta_tilde=Form())


def check_chern(chern: ChernData, ambient: Ambient, points: int = 100, rng=0, tol: float = 1e-8) -> float:
    pts = sample_points(ambient, points, rng)
    res = max(F.max_abs(nabla(chern.combined(), ambient), pts), F.max_abs(F.dbar(chern.Theta_tilde), pts))
    if res > tol:
        raise ChernInconsistent(f"connection/curvature residual {res:.3e} exceeds {tol}")
    return res


def chern_kernels(u: Form, chern: ChernData, n: int, g: Optional[Form] = None,
                  ambient: Optional[Ambient] = None, prefactor: Optional[Form] = None,
                  fiber_indices: Optional[Sequence[int]] = None, check: bool = True) -> KernelPair:
    """``K = int_E u ^ g ^ C_n`` and ``P = int_E g ^ C_n`` with ``C = D eta/2 pi i + i Theta~/2 pi``.

    ``prefactor`` (if given) is wedged in front before the fiber integral; with
    ``fiber_indices`` it realizes integration over a subbundle.
    """
    ambient = ambient or C(n)
    if check:
        check_chern(chern, ambient)
    Cn = F.divided_power(chern.combined(), n if fiber_indices is None else len(fiber_indices) - 1)
    gw = g if g is not None else F.scalar(1)
    pre = prefactor if prefactor is not None else F.scalar(1)
    idx = fiber_indices if fiber_indices is not None else range(n)
    K = F.project_fiber(F.wedge_all(pre, u, gw, Cn), indices=idx)
    Pf = F.project_fiber(F.wedge_all(pre, gw, Cn), indices=idx)
    return KernelPair(K=K, P=Pf, ambient=ambient, eta_convention="generic", eta=eta_map(ambient))


# ----------------------------------------------------------------------
# P^n


@dataclass(frozen=True)
class PnGeometry:
    n: int
    eta: dict
    s: Form
    sigma: Form
    alpha: Form
    beta: Form
    chern: ChernData
    prefactor: Form
    delta_s: ex.Expr


def pn_geometry(n: int) -> PnGeometry:
    if n < 1:
        raise DegreeOutOfRange("n must be >= 1")
    k = n + 1
    zeta, zetab = _vars("zeta", k), _vars("zeta", k, True)
    z, zb = _vars("z", k), _vars("z", k, True)
    nzeta, nz = ex.norm2("zeta", k), ex.norm2("z", k)
    zb_zeta = ex.dot(zb, zeta)

    coeff = ex.div(zb_zeta, ex.mul(nzeta, nz))
    s = _frame_dot([ex.add(ex.div(zb[j], nz), ex.mul(-1, coeff, zetab[j])) for j in range(k)], "e_star")
    emap = eta_map(P(n))
    delta_s = F.contract(s, emap).scalar_part()
    sigma = s.scale(ex.div(1, delta_s))

    beta = F.Form()
    for j in range(k):
        beta = beta + F.wedge(F.d("zeta", j), F.e(j))

    # connection applied to eta = c z.e
    dz_e = Form()
    zeta_scalar = ex.div(ex.dot(zetab, z), nzeta)
    for j in range(k):
        dz_e = dz_e + F.wedge(F.d("z", j), F.e(j))
    dlog = _diff_dot([ex.div(zb[j], nz) for j in range(k)], "z")
    D_eta = (dz_e - beta.scale(zeta_scalar) - F.wedge(dlog, _frame_dot(z, "e"))).scale(PROJ_C)

    e_estar = Form()
    for j in range(k):
        e_estar = e_estar + F.wedge(F.e(j), F.e_star(j))
    frame = _frame_dot([ex.div(zetab[j], nzeta) for j in range(k)], "e_star")
    theta = F.wedge(ddbar_log_norm("z", k), e_estar) - F.wedge(F.dbar(frame), beta)

    prefactor = F.wedge(_frame_dot(zeta, "e"), _frame_dot(zetab, "e_star")).scale(ex.div(1, nzeta))
    return PnGeometry(n=n, eta=emap, s=s, sigma=sigma, alpha=alpha_projective(n), beta=beta,
                      chern=ChernData(D_eta, theta), prefactor=prefactor, delta_s=delta_s)


_PN_CACHE: dict = {}


def pn_kernels(n: int, p: int, r: int, with_K: bool = True) -> KernelPair:
    """Twisted kernels for ``(p, q)``-forms with values in ``L^r`` on ``P^n``.

    ``K = int_E u ^ alpha^(n-p+r) ^ beta_(n-p) ^ C_p`` and ``P`` the same
    without ``u``; both are computed over the trivial bundle of rank ``n+1``.
    """
    if not 0 <= p <= n:
        raise DegreeOutOfRange(f"p = {p} outside [0, {n}]")
    power = n - p + r
    if power < 0:
        raise DualityRequired(f"weight exponent {power} < 0; pair with the dual kernels for L^{-r}")
    key = (n, p, r, with_K)
    if key in _PN_CACHE:
        return _PN_CACHE[key]
    geo = pn_geometry(n)
    base = F.wedge_all(geo.prefactor, F.wedge_power(geo.alpha, power), F.divided_power(geo.beta, n - p),
                       F.divided_power(geo.chern.combined(), p))
    idx = range(n + 1)
    Pf = F.project_fiber(base, indices=idx)
    if with_K:
        u = F.geometric_inverse(geo.s, geo.eta, order=n - 1)
        K = F.project_fiber(F.wedge(u, base), indices=idx)
    else:
        K = Form()
    pair = KernelPair(K=K, P=Pf, ambient=P(n), twist=(p, r), weight_stack=(f"alpha^{power}",),
                      eta_convention="eta=-2pi i z.e", eta=geo.eta)
    _PN_CACHE[key] = pair
    return pair


def twist_multidegree(p: int, r: int) -> tuple:
    """Expected homogeneity ``(deg_zeta, deg_zetabar, deg_z, deg_zbar)`` of a kernel coefficient
    before accounting for its differentials."""
    return (-r, 0, r, 0)


# ----------------------------------------------------------------------
# P^n x P^m


def product_section(n: int, m: int) -> Form:
    """``s = s_zeta + s_zeta~`` written directly in ``d zeta`` and ``d zeta~``."""
    out = Form()
    for (zs, s, k) in (("z", "zeta", n + 1), ("z_tilde", "zeta_tilde", m + 1)):
        zb, zeta, zetab = _vars(zs, k, True), _vars(s, k), _vars(s, k, True)
        nz, nzeta = ex.norm2(zs, k), ex.norm2(s, k)
        coeff = ex.div(ex.dot(zb, zeta), ex.mul(nz, nzeta))
        out = out + _diff_dot([ex.add(ex.div(zb[j], nz), ex.mul(-1, coeff, zetab[j])) for j in range(k)], s)
    return out


def product_kernels(n: int, m: int, k: int, l: int, with_K: bool = True) -> KernelPair:
    """``K = alpha^(n+k) ^ alpha~^(m+l) ^ u``, ``P = alpha^(n+k) ^ alpha~^(m+l)``."""
    if n + k < 0 or m + l < 0:
        raise DegreeOutOfRange("weight exponents n+k and m+l must be >= 0")
    amb = PxP(n, m)
    emap = eta_map(amb)
    weight_form = F.wedge(F.wedge_power(alpha_product(n), n + k), F.wedge_power(alpha_product(m, True), m + l))
    if with_K:
        u = F.geometric_inverse(product_section(n, m), emap, order=n + m - 1)
        K = F.wedge(weight_form, u)
    else:
        K = Form()
    return KernelPair(K=K, P=weight_form, ambient=amb, twist=(k, l),
                      weight_stack=(f"alpha^{n + k}", f"alpha~^{m + l}"),
                      eta_convention="d zeta_j -> -2pi i z_j", eta=emap)
