"""Vanishing and obstruction checks for Dolbeault cohomology of line bundles.

On ``P^n`` a closed ``(p, q)``-form with values in ``L^r`` is exact as soon as
its pairing with the P-kernel vanishes or is itself exact.  ``classify``
evaluates sufficient conditions for vanishing; ``mechanism`` verifies the
reason in each trivial case, either symbolically (the needed P-component is
empty by degree count) or through an explicit ``dbar_z``-primitive.
Nontriviality is only ever reported from a numeric obstruction pairing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import expr as ex
from . import forms as F
from . import kernels as kf
from . import quadrature as qd
from .errors import CaseMismatch, DegreeOutOfRange, DualityRequired, NotClosed, TwistMismatch
from .expr import VarId
from .forms import Form, Generator

CASE_ORDER = ("a", "b", "d", "e", "c")


@dataclass(frozen=True)
class CohomologyCase:
    """``space`` is ``("P", n)`` or ``("PxP", n, m)``; ``twist`` is ``r`` or ``(k, l)``."""

    space: tuple
    p: int
    q: int
    twist: object
    expected: Optional[str] = None

    @property
    def n(self) -> int:
        return self.space[1]

    def label(self) -> str:
        sp = f"P{self.n}" if self.space[0] == "P" else f"P{self.space[1]}xP{self.space[2]}"
        return f"H^({self.p},{self.q})({sp}, L^{self.twist})"


def pn_letters(n: int, p: int, q: int, r: int) -> tuple:
    """All case letters whose hypotheses hold for ``H^{p,q}(P^n, L^r)``."""
    hits = []
    if q == p and p not in (0, n) and r != 0:
        hits.append("a")
    if q == 0 and r <= p and (r, p) != (0, 0):
        hits.append("b")
    if q == n and r >= p - n and (r, p) != (0, n):
        hits.append("c")
    if p < q and r >= -(n - p):
        hits.append("d")
    if p > q and r <= p:
        hits.append("e")
    return tuple(sorted(hits, key=CASE_ORDER.index))


def product_letters(n: int, m: int, q: int, k: int, l: int) -> tuple:
    hits = []
    if q not in (0, n, m, n + m):
        hits.append("a")
    if q == 0 and (k < 0 or l < 0):
        hits.append("b")
    if q == n and (l < 0 or k >= -n):
        hits.append("c")
    if q == m and (k < 0 or l >= -m):
        hits.append("d")
    if q == n + m and (k >= -n or l >= -m):
        hits.append("e")
    return tuple(hits)


def classify(case: CohomologyCase) -> str:
    """Case letter proving triviality, or ``"unknown"`` (never ``"nontrivial"``)."""
    if not (0 <= case.q <= (case.n if case.space[0] == "P" else case.space[1] + case.space[2])):
        raise DegreeOutOfRange("q outside the admissible range")
    if case.space[0] == "P":
        if not 0 <= case.p <= case.n:
            raise DegreeOutOfRange("p outside [0, n]")
        letters = pn_letters(case.n, case.p, case.q, case.twist)
    else:
        if case.p != 0:
            raise DegreeOutOfRange("product spaces support (0, q)-forms only")
        k, l = case.twist
        letters = product_letters(case.space[1], case.space[2], case.q, k, l)
    return letters[0] if letters else "unknown"


# ----------------------------------------------------------------------
# exactness certificate


def omega_z(n: int, space: str = "z") -> Form:
    """``dbar partial log |z|^2`` (note the order)."""
    return kf.ddbar_log_norm(space, n + 1).scale(-1)


def _zetabar_dot_z(n: int) -> ex.Expr:
    return ex.dot([ex.var("zeta", i, True) for i in range(n + 1)], [ex.var("z", i) for i in range(n + 1)])


@dataclass
class Certificate:
    g: Form
    target: Form
    residual: float
    projective_residual: float

    @property
    def ok(self) -> bool:
        return self.residual < 1e-10 and self.projective_residual < 1e-10


def euler_contraction(f: Form, n: int, space: str = "z") -> Form:
    """Contraction with ``z . d/dz``."""
    return F.contract(f, {Generator("d", space, i): ex.var(space, i) for i in range(n + 1)})


def exactness_certificate(n: int, p: int, q: int, r: int, points: int = 50, rng=0) -> Certificate:
    """Explicit projective primitive ``g`` with ``dbar_z g = (conj(zeta).z)^r omega_z^p``."""
    if not (1 <= p <= n and q == p and r >= 1):
        raise CaseMismatch("certificate needs q = p >= 1 and r >= 1")
    w = _zetabar_dot_z(n)
    nz = ex.norm2("z", n + 1)
    om = omega_z(n)
    dlog = F.partial(F.scalar(nz), ["z"]).scale(ex.div(1, nz))
    zdz = F.Form()
    for i in range(n + 1):
        zdz = zdz + F.d("z", i).scale(ex.var("zeta", i, True))
    bracket = dlog.scale(w) - zdz
    g = F.wedge(bracket.scale(ex.power(w, r - 1)), F.wedge_power(om, p - 1))
    target = F.wedge_power(om, p).scale(ex.power(w, r))
    pts = kf.sample_points(kf.P(n), points, rng)
    res = F.max_abs(F.dbar(g, ["z"]) - target, pts)
    proj = F.max_abs(euler_contraction(g, n), pts)
    return Certificate(g, target, res, proj)


# ----------------------------------------------------------------------
# mechanisms


@dataclass
class Mechanism:
    letter: str
    mode: str  # "primal" or "dual"
    kernel: tuple  # (p, r) of the P-kernel used
    component: tuple  # z-bidegree examined
    kind: str  # "empty" or "certificate"
    passed: bool
    residual: float = 0.0
    detail: str = ""


def _chart_pullback(f: Form, spaces=("z",)) -> Form:
    """Drop differentials of the frozen chart coordinate (index 0) in ``spaces``."""
    return Form({m: c for m, c in f.items() if not any(g.space in spaces and g.index == 0 for g in m)})


def _chart_points(n: int, count: int, rng) -> dict:
    rng = np.random.default_rng(rng)

    def chart():
        v = (rng.standard_normal((n, count)) + 1j * rng.standard_normal((n, count))) * 0.8
        return np.vstack([np.ones((1, count)), v])

    return ex.assign(zeta=chart(), z=chart())


def _factor_check(C: Form, n: int, p: int, r: int, rng=0) -> tuple:
    """Verify ``C = A(zeta) ^ (conj(zeta).z)^r omega^p`` and that ``A ^ g`` is a dbar_z-primitive."""
    cert = exactness_certificate(n, p, p, r)
    Cc = _chart_pullback(C)
    Z = _chart_pullback(cert.target)
    pts = _chart_points(n, 40, rng)
    zvals = Z.evaluate(pts)
    m0 = max(zvals, key=lambda m: float(np.min(np.abs(zvals[m]))))
    A = {}
    for mono, coef in Cc.items():
        zpart = tuple(g for g in mono if g.space == "z")
        if zpart == m0:
            zeta_part = tuple(g for g in mono if g.space != "z")
            A[zeta_part] = ex.div(coef, Z.terms[m0])
    A = Form(A)
    fact = F.max_abs(F.wedge(A, Z) - Cc, pts)
    # A must not depend on z
    other = dict(pts)
    alt = _chart_points(n, 40, np.random.default_rng(rng).integers(1 << 30))
    for i in range(n + 1):
        other[VarId("z", i)] = alt[VarId("z", i)]
    av, bv = A.evaluate(pts), A.evaluate(other)
    zdep = max([float(np.max(np.abs(av[m] - bv[m]))) for m in av], default=0.0)
    prim = F.wedge(A, _chart_pullback(cert.g))
    dprim = _chart_pullback(F.dbar(prim, ["z"]))
    res = min(F.max_abs(dprim - Cc, pts), F.max_abs(dprim + Cc, pts))
    scale = max(F.max_abs(Cc, pts), 1e-300)
    return max(fact, zdep, res) / scale, cert


def _kernel_P(n: int, p: int, r: int) -> Form:
    return kf.pn_kernels(n, p, r, with_K=False).P


def mechanism(n: int, p: int, q: int, r: int, letter: Optional[str] = None) -> Mechanism:
    """Check the reason behind a trivial case on ``P^n``."""
    letters = pn_letters(n, p, q, r)
    if letter is None:
        if not letters:
            raise CaseMismatch("no case letter applies")
        letter = letters[0]
    elif letter not in letters:
        raise CaseMismatch(f"case {letter}) does not apply to (p,q,r) = ({p},{q},{r})")
    if letter == "a":
        if r > 0:
            mode, kp, kr, comp = "primal", p, r, (p, p)
        else:
            mode, kp, kr, comp = "dual", n - p, -r, (n - p, n - p)
    elif letter == "b":
        mode, kp, kr, comp = "dual", n - p, -r, (n - p, n)
    elif letter == "c":
        mode, kp, kr, comp = "primal", p, r, (p, n)
    elif letter == "d":
        mode, kp, kr, comp = "primal", p, r, (p, q)
    else:
        mode, kp, kr, comp = "dual", n - p, -r, (n - p, n - q)
    Pk = _kernel_P(n, kp, kr)
    part = F.pick_bidegree(Pk, z=comp)
    if part.is_zero():
        return Mechanism(letter, mode, (kp, kr), comp, "empty", True, 0.0, "no term of this z-bidegree")
    # the surviving component must be dbar_z-exact through the explicit primitive
    try:
        res, _ = _factor_check(part, n, comp[0], kr)
    except CaseMismatch as err:
        return Mechanism(letter, mode, (kp, kr), comp, "certificate", False, math.inf, str(err))
    return Mechanism(letter, mode, (kp, kr), comp, "certificate", res < 1e-10, res)


# ----------------------------------------------------------------------
# pairings and solving


def serre_dual_pair(phi: Form, pair: kf.KernelPair, zeta, rule: Optional[qd.QuadratureRule] = None,
                    check_twist: bool = True) -> dict:
    """``int_z phi(z) ^ P(zeta, z)`` for ``phi`` written in the ``zeta`` variables.

    Returns the resulting form in ``zeta`` at the homogeneous point ``zeta``
    (chart ``zeta_0 = 1``), restricted to the bidegree of ``phi``.
    """
    if pair.ambient.kind != "P" or pair.ambient.n != 1:
        raise DegreeOutOfRange("dual pairing is evaluated numerically on P^1")
    n = pair.ambient.n
    p, q = qd.form_bidegree(phi, ["zeta"])
    kp, kr = pair.twist
    if kp != n - p:
        raise TwistMismatch(f"dual kernel must be for p = {n - p}")
    if check_twist:
        t = qd.form_twist(phi)
        if t is not None and t != -kr:
            raise TwistMismatch(f"form takes values in L^{t}, dual kernel expects L^{-kr}")
    rule = rule or qd.QuadratureRule(points=32)
    zeta = tuple(complex(c) for c in zeta)
    zeta = tuple(c / zeta[0] for c in zeta)
    phi_z = F.rename_space(phi, "zeta", "z")
    comp = F.pick_bidegree(pair.P, z=(n - p, n - q))
    density = F.wedge(phi_z, comp)
    fixed = {VarId("zeta", i): c for i, c in enumerate(zeta)}
    vals = qd.integrate(density, qd.projective_line("z"), rule.centered(zeta), fixed, strict=False)
    return {m: v for m, v in vals.items()
            if not any(g.index == 0 for g in m)
            and sum(g.kind == "d" for g in m) == p and sum(g.kind == "dbar" for g in m) == q}


@dataclass
class ObstructionResult:
    p_pairing: complex
    dbar_solution: list = field(default_factory=list)
    residual: float = 0.0
    verdict: str = "inconclusive"
    mode: str = "primal"
    normalized_pairing: float = 0.0

    def to_dict(self) -> dict:
        return {
            "p_pairing": [float(np.real(self.p_pairing)), float(np.imag(self.p_pairing))],
            "normalized_pairing": float(self.normalized_pairing),
            "residual": float(self.residual),
            "verdict": self.verdict,
            "mode": self.mode,
            "samples": [{"z": [[float(np.real(c)), float(np.imag(c))] for c in z],
                         "u": qd.values_to_json(u)} for z, u in self.dbar_solution],
        }


def check_closed(phi: Form, ambient: kf.Ambient, tol: float = 1e-8, rng=0) -> float:
    pts = kf.sample_points(ambient, 50, rng)
    res = F.max_abs(F.dbar(phi, ["zeta", "zeta_tilde"]), pts)
    if res > tol:
        raise NotClosed(f"dbar phi = {res:.3e}")
    return res


def default_grid(space: str, count: int = 9) -> list:
    """Interior evaluation points: ``|z| <= 0.5`` in the disc, chart points on ``P^1``."""
    rng = np.random.default_rng(7)
    pts = []
    for _ in range(count):
        rad = 0.5 * math.sqrt(rng.random())
        val = rad * np.exp(2j * math.pi * rng.random())
        pts.append((val,) if space == "C1" else (1.0, 1.6 * val))
    return pts


def _max_ratio(num: dict, den: dict) -> float:
    top = max([abs(v) for v in num.values()], default=0.0)
    bot = max([abs(v) for v in den.values()], default=0.0)
    return top / bot if bot > 0 else (math.inf if top > 0 else 0.0)


def solve_dbar(phi: Form, space: str = "P1", twist: int = 0, mesh: int = 48, grid=None,
               pairing_tol: float = 1e-8, residual_tol: float = 1e-3) -> ObstructionResult:
    """Try to solve ``dbar u = phi`` with the Koppelman potential; report the P-obstruction.

    ``space`` is ``"C1"`` (unit disc) or ``"P1"``.  On ``P^1``, twists below the
    primal range switch to the dual pairing, which can only certify obstruction.
    """
    rule = qd.QuadratureRule(points=mesh)
    if space == "C1":
        check_closed(phi, kf.C(1))
        pair, domain = kf.bm_kernel(1), qd.Disc()
        n, p, q = 1, *qd.form_bidegree(phi, ["zeta"])
    elif space == "P1":
        check_closed(phi, kf.P(1))
        n = 1
        p, q = qd.form_bidegree(phi, ["zeta"])
        t = qd.form_twist(phi)
        if t is not None and t != twist and not phi.is_zero():
            raise TwistMismatch(f"form takes values in L^{t}, not L^{twist}")
        try:
            pair = kf.pn_kernels(n, p, twist)
        except DualityRequired:
            return _dual_obstruction(phi, n, p, q, twist, rule, grid)
        domain = qd.projective_line()
    else:
        raise DegreeOutOfRange(f"unsupported space {space!r}")
    grid = grid or default_grid(space)
    samples, res, pairing, norm = [], 0.0, 0j, 0.0
    for z in grid:
        T = qd.koppelman_eval(phi, pair, domain, z, rule)
        samples.append((T.z[0], T.potential_term))
        diff = qd._add_values(T.dbar_z_potential, {m: -v for m, v in T.phi_at_z.items()})
        res = max(res, qd.values_norm(diff))
        pv = max(T.p_term.values(), key=abs, default=0j)
        if abs(pv) > abs(pairing):
            pairing = pv
        norm = max(norm, _max_ratio(T.p_term, T.phi_at_z))
    if res < residual_tol and abs(pairing) < pairing_tol:
        verdict = "solved"
    elif norm > 0.1:
        verdict = "obstructed"
    else:
        verdict = "inconclusive"
    return ObstructionResult(pairing, samples, res, verdict, "primal", norm)


def _dual_obstruction(phi, n, p, q, r, rule, grid) -> ObstructionResult:
    pair = kf.pn_kernels(n, n - p, -r, with_K=False)
    grid = grid or default_grid("P1", 5)
    pairing, norm = 0j, 0.0
    for zeta in grid:
        zeta = tuple(complex(c) for c in zeta)
        vals = serre_dual_pair(phi, pair, zeta, rule)
        pt = {VarId("zeta", i): c for i, c in enumerate(zeta)}
        ref = {m: v for m, v in phi.evaluate(pt).items() if not any(g.index == 0 for g in m)}
        pv = max(vals.values(), key=abs, default=0j)
        if abs(pv) > abs(pairing):
            pairing = pv
        norm = max(norm, _max_ratio(vals, ref))
    verdict = "obstructed" if norm > 0.1 else "inconclusive"
    return ObstructionResult(pairing, [], 0.0, verdict, "dual", norm)


# ----------------------------------------------------------------------
# representatives and reports on P^1


def representative(p: int, q: int, r: int) -> Form:
    """A closed form spanning (part of) ``H^{p,q}(P^1, L^r)`` when that group is nonzero."""
    z0, z1 = ex.var("zeta", 0), ex.var("zeta", 1)
    z0b, z1b = ex.conj(z0), ex.conj(z1)
    nrm = ex.norm2("zeta", 2)
    hol = F.d("zeta", 1).scale(z0) - F.d("zeta", 0).scale(z1)
    anti = F.dbar_gen("zeta", 1).scale(z0b) - F.dbar_gen("zeta", 0).scale(z1b)
    if (p, q) == (0, 0) and r >= 0:
        return F.scalar(ex.power(z0, r) if r else ex.ONE)
    if (p, q) == (0, 1) and r <= -2:
        return anti.scale(ex.power(z0b, -r - 2)).scale(ex.power(nrm, r))
    if (p, q) == (1, 0) and r >= 2:
        return hol.scale(ex.power(z0, r - 2)) if r > 2 else hol
    if (p, q) == (1, 1) and r <= 0:
        return F.wedge(hol, anti).scale(ex.mul(ex.power(z0b, -r), ex.power(nrm, r - 2)))
    raise CaseMismatch(f"H^({p},{q})(P^1, L^{r}) vanishes")


@dataclass
class CohomologyVerdict:
    case: CohomologyCase
    letter: str
    verdict: str
    mechanism: Optional[Mechanism] = None
    obstruction: Optional[ObstructionResult] = None

    def to_dict(self) -> dict:
        out = {"schema": qd.SCHEMA, "case": {"space": list(self.case.space), "p": self.case.p,
                                             "q": self.case.q, "twist": self.case.twist},
               "letter": self.letter, "verdict": self.verdict}
        if self.mechanism is not None:
            m = self.mechanism
            out["mechanism"] = {"kind": m.kind, "mode": m.mode, "kernel": list(m.kernel),
                                "component": list(m.component), "passed": m.passed,
                                "residual": float(m.residual)}
        if self.obstruction is not None:
            out["obstruction"] = self.obstruction.to_dict()
        return out


def analyze(case: CohomologyCase, mesh: int = 32) -> CohomologyVerdict:
    """Classify, then either verify the vanishing mechanism or look for an obstruction (P^1)."""
    letter = classify(case)
    if case.space[0] != "P":
        return CohomologyVerdict(case, letter, "trivial" if letter != "unknown" else "unknown",
                                 product_mechanism(case))
    n, p, q, r = case.n, case.p, case.q, case.twist
    if letter != "unknown":
        mech = mechanism(n, p, q, r, letter)
        return CohomologyVerdict(case, letter, "trivial" if mech.passed else "mechanism_failed", mech)
    if n != 1:
        return CohomologyVerdict(case, letter, "unknown")
    try:
        phi = representative(p, q, r)
    except CaseMismatch:
        return CohomologyVerdict(case, letter, "unknown")
    obs = solve_dbar(phi, "P1", r, mesh=mesh, grid=default_grid("P1", 3))
    return CohomologyVerdict(case, letter, obs.verdict, obstruction=obs)


def product_mechanism(case: CohomologyCase) -> Optional[Mechanism]:
    """Degree count on ``P^n x P^m``: every split ``q = q1 + q2`` must meet a vanishing factor."""
    _, n, m = case.space
    k, l = case.twist
    letter = classify(case)
    if letter == "unknown":
        return None
    ok, details = True, []
    for q1 in range(0, n + 1):
        q2 = case.q - q1
        if not 0 <= q2 <= m:
            continue
        fac1 = bool(pn_letters(n, 0, q1, k))
        fac2 = bool(pn_letters(m, 0, q2, l))
        weight_empty = (n + k < 0) or (m + l < 0)
        good = fac1 or fac2 or weight_empty
        details.append(f"q1={q1}:{'ok' if good else 'open'}")
        ok = ok and good
    return Mechanism(letter, "primal", (k, l), (0, case.q), "factor", ok, 0.0, ",".join(details))
