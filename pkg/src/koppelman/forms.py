"""Graded anticommutative algebra of forms with values in exterior powers of E and E*.

A :class:`Form` is a finite sum ``coefficient * g_1 ^ ... ^ g_k`` where the
``g_i`` are odd generators: holomorphic and antiholomorphic differentials of
each coordinate space, and frame elements ``e_i`` / ``e_i^*`` of a fiber.
Monomials are stored strictly sorted in the canonical generator order
(space, kind, index), with kind order ``d < dbar < e < e_star``.

The operators here (``dbar``, ``partial``, ``contract``, ``nabla``) are
antiderivations of the total degree, every generator counting as degree 1.
``dbar`` wedges new differentials from the left.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import expr as ex
from .errors import AmbientMismatch, RankExceeded
from .expr import Expr, VarId

__all__ = [
    "Generator",
    "d",
    "dbar_gen",
    "e",
    "e_star",
    "Form",
    "Bidegree",
    "scalar",
    "wedge",
    "wedge_all",
    "wedge_power",
    "divided_power",
    "dbar",
    "partial",
    "exterior_d",
    "contract",
    "contract_eta",
    "nabla",
    "geometric_inverse",
    "project_fiber",
    "pick_bidegree",
    "bidegree",
    "substitute_generators",
    "estar_to_differentials",
    "substitute_vars",
    "forms_close",
    "dump",
    "parse_dump",
]

FIBERS = ("E", "E_tilde")
SPACE_RANK = {"zeta": 0, "zeta_tilde": 1, "z": 2, "z_tilde": 3, "E": 4, "E_tilde": 5}
KIND_RANK = {"d": 0, "dbar": 1, "e": 2, "e_star": 3}


@dataclass(frozen=True)
class Generator:
    kind: str
    space: str
    index: int

    def __post_init__(self):
        if self.kind not in KIND_RANK:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        fiber = self.kind in ("e", "e_star")
        if fiber != (self.space in FIBERS) or self.space not in SPACE_RANK:
            raise ValueError(f"generator {self.kind} cannot live on space {self.space!r}")

    @property
    def key(self):
        return (SPACE_RANK[self.space], KIND_RANK[self.kind], self.index)

    def __lt__(self, other):
        return self.key < other.key

    def __str__(self):
        name = {"d": "d", "dbar": "dbar", "e": "e", "e_star": "estar"}[self.kind]
        return f"{name}({self.space},{self.index})"


def _sort_sign(gens: Sequence[Generator]):
    """Sorted tuple and permutation sign, or (None, 0) on a repeated generator."""
    keys = [g.key for g in gens]
    if len(set(keys)) != len(keys):
        return None, 0
    inversions = 0
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            if keys[i] > keys[j]:
                inversions += 1
    return tuple(sorted(gens, key=lambda g: g.key)), (-1) ** inversions


def _merge_sign(m1, m2):
    """Sign and sorted concatenation of two sorted monomials (None if they share a generator)."""
    if not m1:
        return m2, 1
    if not m2:
        return m1, 1
    k1 = [g.key for g in m1]
    k2 = [g.key for g in m2]
    s2 = set(k2)
    if any(k in s2 for k in k1):
        return None, 0
    inv = 0
    j = 0
    # count pairs (a in m1, b in m2) with a > b
    for a in k1:
        while j < len(k2) and k2[j] < a:
            j += 1
        inv += j
    merged = tuple(sorted(m1 + m2, key=lambda g: g.key))
    return merged, (-1 if inv % 2 else 1)


def d(space: str, index: int) -> "Form":
    return Form.monomial((Generator("d", space, index),))


def dbar_gen(space: str, index: int) -> "Form":
    return Form.monomial((Generator("dbar", space, index),))


def e(index: int, fiber: str = "E") -> "Form":
    return Form.monomial((Generator("e", fiber, index),))


def e_star(index: int, fiber: str = "E") -> "Form":
    return Form.monomial((Generator("e_star", fiber, index),))


class Form:
    """Immutable element of the form algebra."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Optional[Mapping[tuple, Expr]] = None):
        clean = {}
        for mono, coef in (terms or {}).items():
            coef = ex._lift(coef)
            if not coef.is_zero():
                clean[tuple(mono)] = coef
        self._terms = clean

    @classmethod
    def monomial(cls, gens: Sequence[Generator], coef=1) -> "Form":
        mono, sign = _sort_sign(gens)
        if mono is None:
            return cls()
        return cls({mono: ex.mul(ex.const(sign), ex._lift(coef))})

    @classmethod
    def _from_lists(cls, acc: Mapping[tuple, list]) -> "Form":
        return cls({m: ex.add(*cs) for m, cs in acc.items()})

    # ---------------------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms.items())

    def is_zero(self) -> bool:
        return not self._terms

    def scalar_part(self) -> Expr:
        return self._terms.get((), ex.ZERO)

    def generators(self) -> set:
        return {g for m in self._terms for g in m}

    def degrees(self) -> set:
        return {len(m) for m in self._terms}

    # ---------------------------------------------------------------
    def __add__(self, other):
        other = _as_form(other)
        acc = {m: [c] for m, c in self._terms.items()}
        for m, c in other._terms.items():
            acc.setdefault(m, []).append(c)
        return Form._from_lists(acc)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1)

    def __sub__(self, other):
        return self + (-_as_form(other))

    def __rsub__(self, other):
        return _as_form(other) - self

    def scale(self, factor) -> "Form":
        factor = ex._lift(factor)
        if factor.is_zero():
            return Form()
        return Form({m: ex.mul(factor, c) for m, c in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, Form):
            return wedge(self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __xor__(self, other):
        return wedge(self, _as_form(other))

    def __truediv__(self, other):
        return self.scale(ex.div(ex.ONE, ex._lift(other)))

    def map_coefficients(self, fn) -> "Form":
        return Form({m: fn(c) for m, c in self._terms.items()})

    def evaluate(self, point) -> dict:
        keys = list(self._terms)
        return dict(zip(keys, ex.evaluate_many([self._terms[k] for k in keys], point)))

    def __repr__(self):
        if not self._terms:
            return "Form(0)"
        return f"Form({len(self._terms)} terms)"


def _as_form(x) -> Form:
    if isinstance(x, Form):
        return x
    return scalar(x)


def scalar(value) -> Form:
    return Form({(): ex._lift(value)})


# ----------------------------------------------------------------------
# products


def wedge(f: Form, g: Form) -> Form:
    f, g = _as_form(f), _as_form(g)
    acc: dict = {}
    for m1, c1 in f.items():
        for m2, c2 in g.items():
            mono, sign = _merge_sign(m1, m2)
            if mono is None:
                continue
            coef = ex.mul(c1, c2) if sign > 0 else ex.mul(ex.const(-1), c1, c2)
            acc.setdefault(mono, []).append(coef)
    return Form._from_lists(acc)


def wedge_all(*forms: Form) -> Form:
    out = scalar(1)
    for f in forms:
        out = wedge(out, f)
    return out


def wedge_power(f: Form, k: int) -> Form:
    if k < 0:
        raise ValueError("negative wedge power")
    out = scalar(1)
    for _ in range(k):
        out = wedge(out, f)
    return out


def divided_power(f: Form, k: int) -> Form:
    """``f^k / k!``."""
    return wedge_power(f, k).scale(1.0 / float(np.prod(range(1, k + 1)) if k else 1))


# ----------------------------------------------------------------------
# derivations


def _all_spaces(f: Form):
    return {v.space for _, c in f.items() for v in c.free_vars}


def _differentiate(f: Form, spaces, conjugated: bool, kind: str) -> Form:
    spaces = set(_all_spaces(f) if spaces is None else spaces)
    acc: dict = {}
    for mono, coef in f.items():
        for vid in sorted(coef.free_vars):
            if vid.conjugated != conjugated or vid.space not in spaces:
                continue
            dc = ex.wirtinger(coef, vid)
            if dc.is_zero():
                continue
            gen = Generator(kind, vid.space, vid.index)
            new, sign = _merge_sign((gen,), mono)
            if new is None:
                continue
            acc.setdefault(new, []).append(dc if sign > 0 else ex.mul(ex.const(-1), dc))
    return Form._from_lists(acc)


def dbar(f: Form, acting_on: Optional[Iterable[str]] = None) -> Form:
    """Antiholomorphic exterior derivative in the given variable spaces (default: all)."""
    return _differentiate(_as_form(f), acting_on, True, "dbar")


def partial(f: Form, acting_on: Optional[Iterable[str]] = None) -> Form:
    """Holomorphic exterior derivative in the given variable spaces (default: all)."""
    return _differentiate(_as_form(f), acting_on, False, "d")


def exterior_d(f: Form, acting_on: Optional[Iterable[str]] = None) -> Form:
    return partial(f, acting_on) + dbar(f, acting_on)


def contract(f: Form, mapping: Mapping[Generator, Expr]) -> Form:
    """Interior product: the degree -1 antiderivation sending ``g -> mapping[g]``.

    Generators absent from ``mapping`` are sent to 0.
    """
    f = _as_form(f)
    acc: dict = {}
    for mono, coef in f.items():
        for i, g in enumerate(mono):
            val = mapping.get(g)
            if val is None:
                continue
            val = ex._lift(val)
            if val.is_zero():
                continue
            rest = mono[:i] + mono[i + 1:]
            c = ex.mul(val, coef)
            acc.setdefault(rest, []).append(c if i % 2 == 0 else ex.mul(ex.const(-1), c))
    return Form._from_lists(acc)


def eta_mapping(eta, fiber: str = "E", offset: int = 0) -> dict:
    """Contraction data sending ``e_star(offset + j)`` to ``eta[j]``."""
    if isinstance(eta, Mapping):
        return dict(eta)
    return {Generator("e_star", fiber, offset + j): ex._lift(v) for j, v in enumerate(eta)}


def contract_eta(f: Form, eta) -> Form:
    """``delta_eta``: contraction with the section ``sum eta_j e_j``.

    ``eta`` is a sequence of expressions (acting on ``e_star(j)``) or an explicit
    generator mapping.
    """
    return contract(f, eta_mapping(eta))


def nabla(f: Form, eta, acting_on: Optional[Iterable[str]] = None) -> Form:
    """``delta_eta - dbar``."""
    return contract_eta(f, eta) - dbar(f, acting_on)


def geometric_inverse(numerator: Form, eta, order: Optional[int] = None) -> Form:
    """``s / nabla s = sum_k s ^ (dbar s)^k / (delta_eta s)^(k+1)``.

    ``numerator`` must be homogeneous of degree one in the generators that
    ``eta`` contracts.  The series is truncated after ``order`` (default: the
    number of contracted generators minus one), which is exact for degree
    reasons when that number is the rank.
    """
    mapping = eta_mapping(eta)
    targets = set(mapping)
    for mono, _ in numerator.items():
        if sum(1 for g in mono if g in targets) != 1:
            raise RankExceeded("numerator must have degree exactly 1 in the contracted generators")
    delta = contract(numerator, mapping)
    if delta.degrees() - {0}:
        raise RankExceeded("contraction of the numerator is not a scalar")
    den = delta.scalar_part()
    if den.is_zero():
        raise RankExceeded("contraction of the numerator vanishes identically")
    if order is None:
        order = len(targets) - 1
    ds = dbar(numerator)
    out = Form()
    term = numerator
    for k in range(order + 1):
        out = out + term.scale(ex.power(den, -(k + 1)))
        term = wedge(term, ds)
        if term.is_zero():
            break
    return out


# ----------------------------------------------------------------------
# fiber integration and degree bookkeeping


def project_fiber(f: Form, rank: Optional[int] = None, fiber: str = "E",
                  indices: Optional[Sequence[int]] = None) -> Form:
    """Fiber integral: coefficient of ``e_1 ^ e_1^* ^ ... ^ e_n ^ e_n^*``.

    Terms not containing the full fiber monomial are discarded.  ``indices``
    defaults to ``range(rank)``.
    """
    if indices is None:
        if rank is None:
            raise ValueError("give rank or indices")
        indices = range(rank)
    indices = list(indices)
    full = []
    for i in indices:
        full += [Generator("e", fiber, i), Generator("e_star", fiber, i)]
    canon, sign = _sort_sign(full)
    full_set = set(full)
    acc: dict = {}
    for mono, coef in f.items():
        fib = [g for g in mono if g.space == fiber]
        if set(fib) != full_set:
            continue
        rest = tuple(g for g in mono if g.space != fiber)
        # rest comes first in canonical order, so mono = rest ^ (sign * I_n)
        acc.setdefault(rest, []).append(coef if sign > 0 else ex.mul(ex.const(-1), coef))
    return Form._from_lists(acc)


@dataclass(frozen=True)
class Bidegree:
    """Degree counts of a monomial; ``None`` entries are unconstrained when selecting."""

    p_estar: Optional[int] = None
    p_e: Optional[int] = None
    zeta: Optional[tuple] = None
    z: Optional[tuple] = None
    zeta_tilde: Optional[tuple] = None
    z_tilde: Optional[tuple] = None


def bidegree(mono: Sequence[Generator]) -> Bidegree:
    counts = {}
    for g in mono:
        counts[(g.kind, g.space)] = counts.get((g.kind, g.space), 0) + 1

    def pair(space):
        return (counts.get(("d", space), 0), counts.get(("dbar", space), 0))

    return Bidegree(
        p_estar=sum(v for (k, _), v in counts.items() if k == "e_star"),
        p_e=sum(v for (k, _), v in counts.items() if k == "e"),
        zeta=pair("zeta"), z=pair("z"), zeta_tilde=pair("zeta_tilde"), z_tilde=pair("z_tilde"),
    )


def _matches(actual: Bidegree, want: Bidegree) -> bool:
    for field in ("p_estar", "p_e"):
        w = getattr(want, field)
        if w is not None and getattr(actual, field) != w:
            return False
    for field in ("zeta", "z", "zeta_tilde", "z_tilde"):
        w = getattr(want, field)
        if w is None:
            continue
        a = getattr(actual, field)
        if any(wi is not None and wi != ai for wi, ai in zip(w, a)):
            return False
    return True


def pick_bidegree(f: Form, spec: Optional[Bidegree] = None, *, dbar_total: Optional[int] = None,
                  d_total: Optional[int] = None, scalar_only: bool = False, **fields) -> Form:
    """Sub-sum of terms matching a (partial) degree specification.

    ``fields`` are :class:`Bidegree` fields; ``dbar_total``/``d_total`` count
    antiholomorphic/holomorphic differentials over all spaces.
    """
    want = spec if spec is not None else Bidegree(**fields)
    out = {}
    for mono, coef in f.items():
        if scalar_only and mono:
            continue
        if not _matches(bidegree(mono), want):
            continue
        if dbar_total is not None and sum(g.kind == "dbar" for g in mono) != dbar_total:
            continue
        if d_total is not None and sum(g.kind == "d" for g in mono) != d_total:
            continue
        out[mono] = coef
    return Form(out)


# ----------------------------------------------------------------------
# substitutions


def substitute_generators(f: Form, mapping: Mapping[Generator, Form]) -> Form:
    """Replace generators in place by 1-forms, re-sorting with signs.

    Generators missing from ``mapping`` are kept.
    """
    out = Form()
    for mono, coef in f.items():
        acc = scalar(coef)
        for g in mono:
            acc = wedge(acc, mapping.get(g, Form.monomial((g,))))
            if acc.is_zero():
                break
        out = out + acc
    return out


def estar_to_differentials(f: Form, space: str = "zeta", fiber: str = "E",
                           images: Optional[Mapping[int, Form]] = None) -> Form:
    """Replace every ``e_i^*`` by ``d(space)_i`` (or by ``images[i]``)."""
    gens = {g for g in f.generators() if g.kind == "e_star" and g.space == fiber}
    mapping = {}
    for g in gens:
        mapping[g] = images[g.index] if images is not None else d(space, g.index)
    return substitute_generators(f, mapping)


def substitute_vars(f: Form, mapping: Mapping[VarId, Expr]) -> Form:
    return f.map_coefficients(lambda c: ex.substitute(c, mapping))


def rename_space(f: Form, old: str, new: str) -> Form:
    """Move a form from one coordinate space to another (variables and differentials)."""
    vmap = {}
    for _, c in f.items():
        for v in c.free_vars:
            if v.space == old:
                vmap[v.base] = ex.var(new, v.index)
    out = {}
    for mono, coef in f.items():
        gens = [Generator(g.kind, new, g.index) if g.space == old else g for g in mono]
        piece = Form.monomial(gens, ex.substitute(coef, vmap))
        for m, c in piece.items():
            out.setdefault(m, []).append(c)
    return Form._from_lists(out)


# ----------------------------------------------------------------------
# numerics and text


def forms_close(f: Form, g: Form, points: Iterable, rtol: float = 1e-12, atol: float = 1e-12) -> bool:
    diff = f - g
    for p in points:
        for _, val in diff.evaluate(p).items():
            ref = max([np.max(np.abs(v)) for v in f.evaluate(p).values()] + [0.0])
            if np.max(np.abs(val)) > atol + rtol * ref:
                return False
    return True


def max_abs(f: Form, point) -> float:
    vals = f.evaluate(point).values()
    return max([float(np.max(np.abs(v))) for v in vals], default=0.0)


def dump(f: Form) -> str:
    """One line per term: ``+ <coefficient> ^ gen ^ gen ...`` (sorted, deterministic)."""
    lines = []
    for mono in sorted(f.terms, key=lambda m: [g.key for g in m]):
        parts = [ex.to_text(f.terms[mono])] + [str(g) for g in mono]
        lines.append("+ " + " ^ ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def _parse_gen(tok: str) -> Generator:
    name, rest = tok.split("(", 1)
    space, index = rest.rstrip(")").split(",")
    kind = {"d": "d", "dbar": "dbar", "e": "e", "estar": "e_star"}[name]
    return Generator(kind, space, int(index))


def parse_dump(text: str) -> Form:
    out = Form()
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if not line.startswith("+ "):
            raise ValueError(f"bad form line {line!r}")
        parts = line[2:].split(" ^ ")
        coef = ex.from_text(parts[0])
        out = out + Form.monomial([_parse_gen(t) for t in parts[1:]], coef)
    return out


def check_ambient(f: Form, g: Form, allowed_spaces: Iterable[str]) -> None:
    allowed = set(allowed_spaces)
    for h in (f, g):
        bad = {gen.space for gen in h.generators()} - allowed
        if bad:
            raise AmbientMismatch(f"generators on spaces {sorted(bad)} outside the ambient")


def random_monomials(rng, gens: Sequence[Generator], max_len: int):
    k = rng.integers(0, max_len + 1)
    idx = rng.choice(len(gens), size=k, replace=False)
    return [gens[i] for i in idx]

