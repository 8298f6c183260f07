"""Integration of form densities over concrete domains and Koppelman term assembly.

A domain produces a :class:`NodeSet`: quadrature weights, the coordinates of
the integrated variable space at each node and their derivatives with
respect to the real parameters.  A monomial ``d zeta_i ^ dbar zeta_j ^ ...``
pulls back to the determinant of the corresponding gradient rows
(conjugated for ``dbar``), so no measure convention has to be coded
separately: ``d zeta ^ dbar zeta = -2i dx ^ dy`` falls out of the pullback.
Orientation is fixed per node from the sign of the real Jacobian (with the
outward normal in front for boundaries).

Kernels are singular on the diagonal.  Volume rules are polar about the
evaluation point, so the radial Jacobian absorbs the ``|zeta - z|^(1-2n)``
blow-up and no node sits on the singular set.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import expr as ex
from . import forms as F
from .errors import DegreeMismatch, DomainError, SingularityUnhandled, TwistMismatch
from .expr import VarId
from .forms import Form, Generator
from .kernels import KernelPair

SCHEMA = 1
CHUNK = 1 << 14
FD_STEP = 1e-4


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("KOPPELMAN_THREADS", "1")))
    except ValueError:
        return 1


# ----------------------------------------------------------------------
# rules and node sets


@dataclass(frozen=True)
class QuadratureRule:
    """``points`` radial (or polar-angle) nodes; ``angular`` defaults to ``2 * points``.

    ``kind`` is ``"polar_singularity_centered"`` (polar about ``singular_center``)
    or ``"gauss_legendre_tensor"`` (plain tensor rule about the domain's own
    center, which refuses singular centers).
    """

    kind: str = "polar_singularity_centered"
    points: int = 64
    angular: Optional[int] = None
    singular_center: Optional[tuple] = None
    exclusion_radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("polar_singularity_centered", "gauss_legendre_tensor"):
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.points < 1 or self.exclusion_radius < 0:
            raise ValueError("points must be positive and the exclusion radius nonnegative")

    @property
    def n_angular(self) -> int:
        return self.angular or 2 * self.points

    def centered(self, center) -> "QuadratureRule":
        return replace(self, singular_center=center)


@dataclass
class NodeSet:
    weights: np.ndarray
    coords: dict
    grads: dict
    dim: int

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def product(self, other: "NodeSet") -> "NodeSet":
        n1, n2 = self.size, other.size
        w = (self.weights[:, None] * other.weights[None, :]).ravel()
        coords, grads = {}, {}
        dim = self.dim + other.dim
        for sp, c in self.coords.items():
            coords[sp] = np.repeat(c, n2, axis=1)
            g = np.zeros(coords[sp].shape + (dim,), complex)
            g[..., : self.dim] = np.repeat(self.grads[sp], n2, axis=1)
            grads[sp] = g
        for sp, c in other.coords.items():
            coords[sp] = np.tile(c, (1, n1))
            g = np.zeros(coords[sp].shape + (dim,), complex)
            g[..., self.dim:] = np.tile(other.grads[sp], (1, n1, 1))
            grads[sp] = g
        return NodeSet(w, coords, grads, dim)


def _gauss(n: int, a: float, b: float):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _sphere_param(n: int, points: int, angular: int):
    """Unit sphere in C^n: ``omega (n, M)``, ``d omega / d angles (n, M, A)``, weights ``(M,)``."""
    if n == 1:
        th = 2 * np.pi * np.arange(angular) / angular
        om = np.exp(1j * th)[None, :]
        return om, (1j * om)[..., None], np.full(angular, 2 * np.pi / angular)
    if n == 2:
        chi, wc = _gauss(points, 0.0, np.pi / 2)
        phi = 2 * np.pi * np.arange(angular) / angular
        wp = np.full(angular, 2 * np.pi / angular)
        C, P1, P2 = np.meshgrid(chi, phi, phi, indexing="ij")
        W = (wc[:, None, None] * wp[None, :, None] * wp[None, None, :]).ravel()
        C, P1, P2 = C.ravel(), P1.ravel(), P2.ravel()
        e1, e2 = np.exp(1j * P1), np.exp(1j * P2)
        om = np.stack([np.cos(C) * e1, np.sin(C) * e2])
        d = np.zeros((2, C.size, 3), complex)
        d[0, :, 0], d[1, :, 0] = -np.sin(C) * e1, np.cos(C) * e2
        d[0, :, 1] = 1j * om[0]
        d[1, :, 2] = 1j * om[1]
        return om, d, W
    raise DomainError("sphere parametrizations exist for n = 1, 2 only")


def _real_jacobian(grads: Sequence[np.ndarray]) -> np.ndarray:
    """Stack (re, im) rows of complex coordinate gradients into ``(N, 2k, D)``."""
    rows = []
    for g in grads:
        rows += [g.real, g.imag]
    return np.stack(rows, axis=1)


def _orientation(grads, normal: Optional[np.ndarray] = None) -> np.ndarray:
    J = _real_jacobian(grads)
    if normal is not None:
        nr = []
        for c in normal:
            nr += [c.real, c.imag]
        J = np.concatenate([np.stack(nr, axis=1)[..., None], J], axis=2)
    sign = np.sign(np.linalg.det(J))
    if np.any(sign == 0):
        raise DomainError("degenerate parametrization")
    return sign


def _polar_ball(center, radius, z0, points, angular, eps, n):
    """Star-shaped polar nodes for the ball ``|zeta - center| < radius`` about ``z0``."""
    a = np.asarray(z0, complex) - np.asarray(center, complex)
    om, dom, wsph = _sphere_param(n, points, angular)
    p = np.real(np.sum(np.conj(om) * a[:, None], axis=0))
    dp = np.real(np.sum(np.conj(dom) * a[:, None, None], axis=0))
    disc = radius**2 - np.sum(np.abs(a) ** 2) + p**2
    if np.sum(np.abs(a) ** 2) >= radius**2:
        raise DomainError("polar center must lie inside the ball")
    sq = np.sqrt(disc)
    rmax = -p + sq
    drmax = -dp + (p / sq)[:, None] * dp
    if np.any(rmax <= eps):
        raise DomainError("exclusion radius reaches the boundary")
    s, ws = _gauss(points, 0.0, 1.0)
    S, M = s.size, om.shape[1]
    span = rmax - eps
    rho = eps + s[:, None] * span[None, :]
    coords = np.asarray(z0, complex)[:, None, None] + rho[None] * om[:, None, :]
    g = np.empty((n, S, M, 1 + dom.shape[2]), complex)
    g[..., 0] = span[None, None, :] * om[:, None, :]
    g[..., 1:] = rho[None, :, :, None] * dom[:, None, :, :] + (
        s[None, :, None, None] * drmax[None, None, :, :] * om[:, None, :, None])
    w = (ws[:, None] * wsph[None, :]).ravel()
    coords = coords.reshape(n, S * M)
    g = g.reshape(n, S * M, -1)
    w = w * _orientation([g[i] for i in range(n)])
    return coords, g, w


# ----------------------------------------------------------------------
# domains


class Domain:
    spaces: tuple = ()
    real_dim: int = 0
    orientation: int = 1

    def nodes(self, rule: QuadratureRule) -> NodeSet:  # pragma: no cover - interface
        raise NotImplementedError

    def boundary(self) -> Optional["Domain"]:
        return None

    def chart_constant(self) -> set:
        """Coordinates (space, index) frozen by the chart (their differentials pull back to 0)."""
        return set()


@dataclass(frozen=True)
class Ball(Domain):
    """``|zeta - center| < radius`` in ``C^n`` (``n`` = 1 is a disc)."""

    center: tuple = (0j,)
    radius: float = 1.0
    n: int = 1
    space: str = "zeta"
    orientation: int = 1

    def __post_init__(self):
        if len(self.center) != self.n:
            raise DomainError("center has the wrong dimension")

    @property
    def spaces(self):
        return (self.space,)

    @property
    def real_dim(self):
        return 2 * self.n

    def nodes(self, rule: QuadratureRule) -> NodeSet:
        z0 = self.center
        if rule.singular_center is not None:
            if rule.kind == "gauss_legendre_tensor":
                raise SingularityUnhandled("tensor rule cannot integrate across a pole; use the polar rule")
            z0 = tuple(rule.singular_center)
            if len(z0) != self.n:
                raise DomainError("singular center has the wrong dimension")
        coords, g, w = _polar_ball(self.center, self.radius, z0, rule.points, rule.n_angular,
                                   rule.exclusion_radius if rule.singular_center is not None else 0.0, self.n)
        return NodeSet(w * self.orientation, {self.space: coords}, {self.space: g}, self.real_dim)

    def boundary(self) -> "Sphere":
        return Sphere(self.center, self.radius, self.n, self.space)

    def contains(self, point) -> bool:
        return float(np.sum(np.abs(np.asarray(point) - np.asarray(self.center)) ** 2)) < self.radius**2


def Disc(center: complex = 0j, radius: float = 1.0, space: str = "zeta") -> Ball:
    return Ball((complex(center),), radius, 1, space)


def truncated_Cn(R: float, n: int = 1, space: str = "zeta") -> Ball:
    return Ball((0j,) * n, R, n, space)


@dataclass(frozen=True)
class Sphere(Domain):
    """Boundary of a ball, oriented by the outward normal (circle when ``n`` = 1)."""

    center: tuple = (0j,)
    radius: float = 1.0
    n: int = 1
    space: str = "zeta"
    orientation: int = 1

    @property
    def spaces(self):
        return (self.space,)

    @property
    def real_dim(self):
        return 2 * self.n - 1

    def nodes(self, rule: QuadratureRule) -> NodeSet:
        ang = rule.angular or (rule.points if self.n == 1 else 2 * rule.points)
        om, dom, w = _sphere_param(self.n, rule.points, ang)
        coords = np.asarray(self.center, complex)[:, None] + self.radius * om
        g = self.radius * dom
        w = w * _orientation([g[i] for i in range(self.n)], normal=om) * self.orientation
        return NodeSet(w, {self.space: coords}, {self.space: g}, self.real_dim)


@dataclass(frozen=True)
class Annulus(Domain):
    center: complex = 0j
    r_in: float = 0.5
    r_out: float = 1.0
    space: str = "zeta"
    orientation: int = 1

    @property
    def spaces(self):
        return (self.space,)

    @property
    def real_dim(self):
        return 2

    def nodes(self, rule: QuadratureRule) -> NodeSet:
        if rule.singular_center is not None:
            raise SingularityUnhandled("annulus rules are not centered at a pole")
        coords, g, w = _polar_ball((self.center,), self.r_out, (self.center,), rule.points,
                                   rule.n_angular, self.r_in, 1)
        return NodeSet(w * self.orientation, {self.space: coords}, {self.space: g}, 2)


@dataclass(frozen=True)
class ProjectiveChart(Domain):
    """``P^1`` through the chart ``zeta = (1, w)``, ``w`` over all of ``C``.

    Polar about the chart point of the singular center with ``|w - v| = tan(psi / 2)``,
    which maps ``psi`` in ``[0, pi)`` onto ``[0, inf)``.
    """

    n: int = 1
    space: str = "zeta"
    orientation: int = 1

    def __post_init__(self):
        if self.n != 1:
            raise DomainError("numerical projective integration is implemented for P^1")

    @property
    def spaces(self):
        return (self.space,)

    @property
    def real_dim(self):
        return 2

    def chart_constant(self) -> set:
        return {(self.space, 0)}

    def nodes(self, rule: QuadratureRule) -> NodeSet:
        v = 0j
        if rule.singular_center is not None:
            c = tuple(rule.singular_center)
            if len(c) != 2 or c[0] == 0:
                raise DomainError("singular center must be a homogeneous point with nonzero first entry")
            v = complex(c[1] / c[0])
        eps = rule.exclusion_radius if rule.singular_center is not None else 0.0
        psi0 = 2 * math.atan(eps)
        t, wt = _gauss(rule.points, 0.0, 1.0)
        M = rule.n_angular
        th = 2 * np.pi * np.arange(M) / M
        psi = psi0 + t * (np.pi - psi0)
        rho = np.tan(psi / 2)
        drho = 0.5 / np.cos(psi / 2) ** 2 * (np.pi - psi0)
        E = np.exp(1j * th)
        w = v + rho[:, None] * E[None, :]
        g1 = np.stack([drho[:, None] * E[None, :], 1j * rho[:, None] * E[None, :]], axis=-1)
        N = w.size
        coords = np.stack([np.ones(N, complex), w.ravel()])
        g = np.zeros((2, N, 2), complex)
        g[1] = g1.reshape(N, 2)
        wts = (wt[:, None] * np.full(M, 2 * np.pi / M)[None, :]).ravel()
        wts = wts * _orientation([g[1]]) * self.orientation
        return NodeSet(wts, {self.space: coords}, {self.space: g}, 2)


@dataclass(frozen=True)
class Product(Domain):
    first: Domain = None
    second: Domain = None

    @property
    def spaces(self):
        return tuple(self.first.spaces) + tuple(self.second.spaces)

    @property
    def real_dim(self):
        return self.first.real_dim + self.second.real_dim

    def chart_constant(self) -> set:
        return self.first.chart_constant() | self.second.chart_constant()

    def nodes(self, rule: QuadratureRule) -> NodeSet:
        c = rule.singular_center
        r1 = rule.centered(None if c is None else c[0])
        r2 = rule.centered(None if c is None else c[1])
        return self.first.nodes(r1).product(self.second.nodes(r2))

    def boundary(self):
        if self.first.boundary() is None and self.second.boundary() is None:
            return None
        raise DomainError("boundaries of product domains are not supported")


def projective_line(space: str = "zeta") -> ProjectiveChart:
    return ProjectiveChart(1, space)


def P1xP1() -> Product:
    return Product(projective_line("zeta"), projective_line("zeta_tilde"))


# ----------------------------------------------------------------------
# integration


def _front_sign(mono, spaces) -> int:
    """Sign of moving the generators of ``spaces`` to the front, keeping relative order."""
    inv, seen_rest = 0, 0
    for g in mono:
        if g.space in spaces:
            inv += seen_rest
        else:
            seen_rest += 1
    return -1 if inv % 2 else 1


def _det(rows: list) -> np.ndarray:
    D = len(rows)
    if D == 1:
        return rows[0][:, 0]
    if D == 2:
        return rows[0][:, 0] * rows[1][:, 1] - rows[0][:, 1] * rows[1][:, 0]
    return np.linalg.det(np.stack(rows, axis=1))


def _plan(density: Form, nodes: NodeSet):
    spaces = set(nodes.coords)
    frozen = {(sp, i) for sp, g in nodes.grads.items() for i in range(g.shape[0]) if not np.any(g[i])}
    plan: dict = {}
    for mono, coef in density.items():
        inner = [g for g in mono if g.space in spaces]
        if len(inner) != nodes.dim or any(g.kind not in ("d", "dbar") for g in inner):
            continue
        if any((g.space, g.index) in frozen for g in inner):
            continue
        rest = tuple(g for g in mono if g.space not in spaces)
        rows = tuple((g.space, g.index, g.kind == "dbar") for g in inner)
        plan.setdefault(rest, []).append((coef, _front_sign(mono, spaces), rows))
    return plan


def _eval_chunk(plan, nodes: NodeSet, fixed: dict, sl: slice) -> dict:
    point = dict(fixed)
    for sp, c in nodes.coords.items():
        for i in range(c.shape[0]):
            point[VarId(sp, i)] = c[i, sl]
    w = nodes.weights[sl]
    order = [(rest, k) for rest, items in plan.items() for k in range(len(items))]
    try:
        values = ex.evaluate_many([plan[rest][k][0] for rest, k in order], point)
    except ZeroDivisionError as err:
        raise SingularityUnhandled("integrand evaluated on its singular set") from err
    dets: dict = {}
    out = {}
    for (rest, k), val in zip(order, values):
        _, sign, rows = plan[rest][k]
        if rows not in dets:
            mats = []
            for sp, i, bar in rows:
                g = nodes.grads[sp][i, sl]
                mats.append(np.conj(g) if bar else g)
            dets[rows] = _det(mats)
        # fixed variables may carry leading batch axes; reduce over nodes only
        contrib = np.sum(w * val * dets[rows], axis=-1) * sign
        out[rest] = out.get(rest, 0j) + contrib
    return out


def integrate(density: Form, domain: Domain, rule: Optional[QuadratureRule] = None,
              fixed: Optional[dict] = None, strict: bool = True) -> dict:
    """Oriented integral of ``density`` over ``domain``.

    Returns a dict from the remaining (non-integrated) generator monomial to its
    complex coefficient; ``()`` holds the scalar part.  Terms whose degree in the
    integrated variables differs from the domain's real dimension are dropped.
    Values in ``fixed`` may be arrays of shape ``(B, 1)``; the coefficients are
    then arrays of shape ``(B,)``.
    """
    rule = rule or QuadratureRule()
    nodes = domain.nodes(rule)
    plan = _plan(density, nodes)
    if not plan:
        if strict and not density.is_zero():
            raise DegreeMismatch(f"no term of degree {nodes.dim} in the integrated variables")
        return {}
    fixed = fixed or {}
    slices = [slice(i, min(i + CHUNK, nodes.size)) for i in range(0, nodes.size, CHUNK)]
    workers = thread_count()
    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda sl: _eval_chunk(plan, nodes, fixed, sl), slices))
    else:
        parts = [_eval_chunk(plan, nodes, fixed, sl) for sl in slices]
    total: dict = {}
    for part in parts:  # fixed reduction order
        for rest, v in part.items():
            total[rest] = total.get(rest, 0j) + v
    for v in total.values():
        if not np.all(np.isfinite(v)):
            raise SingularityUnhandled("non-finite integral; is the pole covered by the polar rule?")
    return total


def scalar_value(result: dict) -> complex:
    return complex(result.get((), 0j))


# ----------------------------------------------------------------------
# form-valued results


def _values_to_form(values: dict) -> Form:
    return Form({m: ex.const(complex(v)) for m, v in values.items()})


def _form_to_values(f: Form) -> dict:
    return {m: complex(ex.evaluate(c, {})) for m, c in f.items()}


def _add_values(*parts: dict) -> dict:
    out: dict = {}
    for p in parts:
        for m, v in p.items():
            out[m] = out.get(m, 0j) + v
    return out


def _select(values: dict, p: int, q: int, frozen: set) -> dict:
    out = {}
    for m, v in values.items():
        if any((g.space, g.index) in frozen for g in m):
            continue
        if sum(g.kind == "d" for g in m) == p and sum(g.kind == "dbar" for g in m) == q:
            out[m] = v
    return out


def mono_label(mono) -> str:
    return " ^ ".join(str(g) for g in mono) if mono else "1"


def values_to_json(values: dict) -> dict:
    return {mono_label(m): [float(np.real(v)), float(np.imag(v))]
            for m, v in sorted(values.items(), key=lambda kv: [g.key for g in kv[0]])}


def values_norm(values: dict) -> float:
    return max([abs(v) for v in values.values()], default=0.0)


# ----------------------------------------------------------------------
# Koppelman terms


@dataclass
class KoppelmanTerms:
    boundary_term: dict
    dbar_phi_term: dict
    potential_term: dict
    dbar_z_potential: dict
    p_term: dict
    phi_at_z: dict
    residual: float
    z: tuple
    mode: str = "finite_difference"

    def total(self) -> dict:
        return _add_values(self.boundary_term, self.dbar_phi_term, self.dbar_z_potential, self.p_term)

    def scalar(self, name: str) -> complex:
        return complex(getattr(self, name).get((), 0j))

    def to_dict(self) -> dict:
        return {
            "terms": {
                "boundary": values_to_json(self.boundary_term),
                "dbar_phi": values_to_json(self.dbar_phi_term),
                "dbar_z_potential": values_to_json(self.dbar_z_potential),
                "p_term": values_to_json(self.p_term),
            },
            "potential": values_to_json(self.potential_term),
            "phi_at_z": values_to_json(self.phi_at_z),
            "residual": float(self.residual),
            "z": [[float(np.real(c)), float(np.imag(c))] for c in _flatten_point(self.z)],
            "mode": self.mode,
        }


def _flatten_point(z):
    out = []
    for c in z:
        if isinstance(c, (tuple, list, np.ndarray)):
            out += list(c)
        else:
            out.append(c)
    return out


def _ambient_layout(pair: KernelPair):
    """Pairs (integrated space, evaluation space) and frozen chart coordinates in z."""
    kind = pair.ambient.kind
    if kind == "PxP":
        return [("zeta", "z"), ("zeta_tilde", "z_tilde")], {("z", 0), ("z_tilde", 0)}
    if kind == "P":
        return [("zeta", "z")], {("z", 0)}
    return [("zeta", "z")], set()


def _normalize_z(z, pair: KernelPair):
    kind = pair.ambient.kind
    if kind == "C":
        z = tuple(complex(c) for c in np.atleast_1d(z))
        if len(z) != pair.ambient.n:
            raise DomainError("evaluation point has the wrong dimension")
        return (z,)
    parts = (z,) if kind == "P" else tuple(z)
    out = []
    for part in parts:
        part = tuple(complex(c) for c in part)
        if part[0] == 0:
            raise DomainError("evaluation point must lie in the chart z_0 != 0")
        out.append(tuple(c / part[0] for c in part))
    return tuple(out)


def _fixed_point(zs, layout) -> dict:
    pt = {}
    for (_, zsp), zv in zip(layout, zs):
        for i, c in enumerate(zv):
            pt[VarId(zsp, i)] = c
    return pt


def form_bidegree(phi: Form, spaces) -> tuple:
    degs = set()
    for mono, _ in phi.items():
        degs.add((sum(g.kind == "d" and g.space in spaces for g in mono),
                  sum(g.kind == "dbar" and g.space in spaces for g in mono)))
    if len(degs) > 1:
        raise DegreeMismatch(f"form has mixed bidegrees {sorted(degs)}")
    return degs.pop() if degs else (0, 0)


def form_twist(phi: Form, space: str = "zeta"):
    """Line-bundle degree ``r`` of a projective form (``None`` if not homogeneous)."""
    twist = None
    for mono, coef in phi.items():
        h = ex.homogeneity(coef)
        if h is ex.INHOMOGENEOUS:
            return None
        hol = (h.deg_zeta if space == "zeta" else h.deg_zeta_tilde) + sum(
            g.kind == "d" and g.space == space for g in mono)
        anti = (h.deg_zetabar if space == "zeta" else h.deg_zeta_tildebar) + sum(
            g.kind == "dbar" and g.space == space for g in mono)
        if anti != 0 or (twist is not None and hol != twist):
            return None
        twist = hol
    return twist


def _rename_to_z(phi: Form, layout) -> Form:
    out = phi
    for zsp, sp in layout:
        out = F.rename_space(out, zsp, sp)
    return out


def _check_twist(phi: Form, pair: KernelPair):
    if pair.ambient.kind != "P" or pair.twist is None:
        return
    r = pair.twist[1]
    t = form_twist(phi, "zeta")
    if t is not None and t != r and not phi.is_zero():
        raise TwistMismatch(f"form takes values in L^{t}, kernel expects L^{r}")


def _potential(pair, phi, domain, zs, layout, rule, q) -> dict:
    density = F.wedge(pair.K, phi)
    res = integrate(density, domain, rule.centered(zs if len(zs) > 1 else zs[0]),
                    _fixed_point(zs, layout), strict=False)
    return res


def _free_coords(zs, layout, frozen):
    out = []
    for part, (_, zsp) in enumerate(layout):
        for i in range(len(zs[part])):
            if (zsp, i) not in frozen:
                out.append((part, i, zsp))
    return out


def _shift(zs, part, i, delta):
    zs = [list(z) for z in zs]
    zs[part][i] += delta
    return tuple(tuple(z) for z in zs)


def _dbar_fd(pair, phi, domain, zs, layout, rule, frozen, p, q, h) -> dict:
    out = Form()
    for part, i, zsp in _free_coords(zs, layout, frozen):
        vals = {}
        for key, delta in (("+x", h), ("-x", -h), ("+y", 1j * h), ("-y", -1j * h)):
            pot = _select(_potential(pair, phi, domain, _shift(zs, part, i, delta), layout, rule, q),
                          p, q - 1, frozen)
            vals[key] = pot
        monos = set().union(*[set(v) for v in vals.values()])
        deriv = {}
        for m in monos:
            dx = (vals["+x"].get(m, 0j) - vals["-x"].get(m, 0j)) / (2 * h)
            dy = (vals["+y"].get(m, 0j) - vals["-y"].get(m, 0j)) / (2 * h)
            deriv[m] = 0.5 * (dx + 1j * dy)
        out = out + F.wedge(F.dbar_gen(zsp, i), _values_to_form(deriv))
    return _form_to_values(out)


def _dbar_symbolic(pair, phi, domain, zs, layout, rule, frozen, p, q) -> dict:
    """Differentiate under the integral in polar coordinates moving with ``z`` (n = 1 only)."""
    if pair.ambient.dim != 1 or (p, q) != (0, 1):
        raise DomainError("symbolic dbar_z mode supports (0,1)-forms in dimension one")
    (zeta_sp, z_sp), = layout
    idx = 1 if pair.ambient.kind == "P" else 0
    density = F.pick_bidegree(F.wedge(pair.K, phi), z=(0, 0))
    gens = (Generator("d", zeta_sp, idx), Generator("dbar", zeta_sp, idx))
    coef = density.terms.get(gens)
    if coef is None:
        return {}
    moving = ex.add(ex.wirtinger(coef, VarId(zeta_sp, idx, True)), ex.wirtinger(coef, VarId(z_sp, idx, True)))
    inner = Form({gens: moving})
    fixed = _fixed_point(zs, layout)
    val = scalar_value(integrate(inner, domain, rule.centered(zs[0]), fixed, strict=False))
    if isinstance(domain, Ball):
        # the polar upper limit moves with z: Leibniz boundary contribution
        c, R, z0 = domain.center[0], domain.radius, zs[0][0]
        M = rule.n_angular
        th = 2 * np.pi * np.arange(M) / M
        a = z0 - c
        E = np.exp(1j * th)
        pr = np.real(np.conj(E) * a)
        sq = np.sqrt(R**2 - abs(a) ** 2 + pr**2)
        rmax = -pr + sq
        drmax = -E / 2 + (-a + pr * E) / (2 * sq)
        pt = dict(fixed)
        pt[VarId(zeta_sp, idx)] = z0 + rmax * E
        if pair.ambient.kind == "P":
            pt[VarId(zeta_sp, 0)] = np.ones(M)
        fval = np.broadcast_to(ex.evaluate(coef, pt), (M,))
        # d zeta ^ dbar zeta = -2i rho d rho d theta
        val += np.sum(fval * (-2j) * rmax * drmax) * (2 * np.pi / M)
    return {(Generator("dbar", z_sp, idx),): val}


def koppelman_eval(phi: Form, pair: KernelPair, domain: Domain, z, rule: Optional[QuadratureRule] = None,
                   mode: str = "finite_difference", h: float = FD_STEP,
                   boundary_rule: Optional[QuadratureRule] = None) -> KoppelmanTerms:
    """All four terms of the Koppelman formula for ``phi`` at ``z``.

    ``phi`` lives in the integration variables (``zeta``, and ``zeta_tilde`` on
    products).  Projective points are homogeneous tuples and are rescaled to the
    chart ``z_0 = 1``; all form values are reported in that chart.
    """
    rule = rule or QuadratureRule()
    layout, frozen = _ambient_layout(pair)
    zs = _normalize_z(z, pair)
    if pair.ambient.kind == "C" and isinstance(domain, Ball) and not domain.contains(zs[0]):
        raise DomainError("evaluation point must be interior to the domain")
    spaces = [a for a, _ in layout]
    p, q = form_bidegree(phi, spaces)
    _check_twist(phi, pair)
    fixed = _fixed_point(zs, layout)
    centered = rule.centered(zs if len(zs) > 1 else zs[0])

    boundary = {}
    bdom = domain.boundary()
    if bdom is not None:
        brule = boundary_rule or QuadratureRule(points=rule.n_angular)
        boundary = _select(integrate(F.wedge(pair.K, phi), bdom, brule, fixed, strict=False), p, q, frozen)

    dphi = F.dbar(phi, spaces)
    dbar_phi = {}
    if not dphi.is_zero():
        dbar_phi = _select(integrate(F.wedge(pair.K, dphi), domain, centered, fixed, strict=False), p, q, frozen)

    potential = _select(_potential(pair, phi, domain, zs, layout, rule, q), p, q - 1, frozen) if q >= 1 else {}
    if q >= 1:
        if mode == "symbolic":
            dz = _dbar_symbolic(pair, phi, domain, zs, layout, rule, frozen, p, q)
        elif mode == "finite_difference":
            dz = _dbar_fd(pair, phi, domain, zs, layout, rule, frozen, p, q, h)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        dz = _select(dz, p, q, frozen)
    else:
        dz = {}

    pterm = {}
    if not pair.P.is_zero():
        pterm = _select(integrate(F.wedge(pair.P, phi), domain, centered, fixed, strict=False), p, q, frozen)

    phi_z = _select(_form_to_values_at(_rename_to_z(phi, layout), fixed), p, q, frozen)
    total = _add_values(boundary, dbar_phi, dz, pterm)
    diff = _add_values(total, {m: -v for m, v in phi_z.items()})
    return KoppelmanTerms(boundary, dbar_phi, potential, dz, pterm, phi_z, values_norm(diff), zs, mode)


def _form_to_values_at(f: Form, point: dict) -> dict:
    return {m: complex(v) for m, v in f.evaluate(point).items()}


def potential_values(phi: Form, pair: KernelPair, domain: Domain, z, rule: Optional[QuadratureRule] = None) -> dict:
    """``int_D K ^ phi`` at ``z`` (the candidate solution of ``dbar u = phi``)."""
    rule = rule or QuadratureRule()
    layout, frozen = _ambient_layout(pair)
    zs = _normalize_z(z, pair)
    p, q = form_bidegree(phi, [a for a, _ in layout])
    return _select(_potential(pair, phi, domain, zs, layout, rule, q), p, q - 1, frozen)


def integrate_values(terms: Sequence[tuple], nodes: NodeSet) -> dict:
    """Integrate precomputed node values: ``terms`` is a list of ``(monomial, values (N,))``."""
    spaces = set(nodes.coords)
    out: dict = {}
    for mono, vals in terms:
        inner = [g for g in mono if g.space in spaces]
        if len(inner) != nodes.dim:
            continue
        rest = tuple(g for g in mono if g.space not in spaces)
        rows = [np.conj(nodes.grads[g.space][g.index]) if g.kind == "dbar" else nodes.grads[g.space][g.index]
                for g in inner]
        val = np.sum(nodes.weights * vals * _det(rows)) * _front_sign(mono, spaces)
        out[rest] = out.get(rest, 0j) + val
    return out


def iterated_integral(inner_density: Form, outer_factor: Form, inner: Domain, outer: Domain,
                      rule: Optional[QuadratureRule] = None, fixed: Optional[dict] = None) -> dict:
    """``int_outer (int_inner inner_density) ^ outer_factor``, evaluated as a genuine iterated integral."""
    rule = rule or QuadratureRule()
    fixed = dict(fixed or {})
    onodes = outer.nodes(rule)
    batch = dict(fixed)
    for sp, c in onodes.coords.items():
        for i in range(c.shape[0]):
            batch[VarId(sp, i)] = c[i][:, None]
    inner_vals = integrate(inner_density, inner, rule, batch, strict=False)
    opoint = dict(fixed)
    for sp, c in onodes.coords.items():
        for i in range(c.shape[0]):
            opoint[VarId(sp, i)] = c[i]
    fvals = outer_factor.evaluate(opoint)
    terms = []
    for m1, v1 in inner_vals.items():
        for m2, v2 in fvals.items():
            mono, sign = F._merge_sign(m1, m2)
            if mono is None:
                continue
            terms.append((mono, sign * np.broadcast_to(v1, (onodes.size,)) * v2))
    return integrate_values(terms, onodes)


# ----------------------------------------------------------------------
# convergence studies and reports


@dataclass
class TraceEntry:
    mesh: object
    residual: float
    boundary: float
    runtime_ms: float


@dataclass
class ConvergenceTrace:
    entries: list = field(default_factory=list)

    @property
    def residuals(self) -> list:
        return [e.residual for e in self.entries]

    @property
    def boundary_magnitudes(self) -> list:
        return [e.boundary for e in self.entries]

    @staticmethod
    def _decreasing(xs) -> bool:
        return all(b < a for a, b in zip(xs, xs[1:]))

    @property
    def monotone_residual(self) -> bool:
        return self._decreasing(self.residuals)

    @property
    def monotone_boundary(self) -> bool:
        return self._decreasing(self.boundary_magnitudes)

    def to_csv(self, timing: bool = False) -> str:
        lines = ["mesh,residual,runtime_ms"]
        for e in self.entries:
            rt = f"{e.runtime_ms:.3f}" if timing else ""
            lines.append(f"{e.mesh},{e.residual:.17g},{rt}")
        return "\n".join(lines) + "\n"


def convergence_study(run: Callable[[object], KoppelmanTerms], meshes: Sequence) -> ConvergenceTrace:
    """Run ``run(mesh)`` for each mesh parameter and record residuals and boundary-term sizes."""
    trace = ConvergenceTrace()
    for mesh in meshes:
        t0 = time.perf_counter()
        terms = run(mesh)
        dt = (time.perf_counter() - t0) * 1e3
        trace.entries.append(TraceEntry(mesh, float(terms.residual), values_norm(terms.boundary_term), dt))
    return trace


def report(terms: KoppelmanTerms, mesh, runtime_ms: Optional[float] = None, **extra) -> dict:
    out = {"schema": SCHEMA}
    out.update(terms.to_dict())
    out["mesh"] = mesh
    out["runtime_ms"] = runtime_ms
    out.update(extra)
    return out


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item() if not np.iscomplexobj(obj) else [float(obj.real), float(obj.imag)]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default)
