"""Scalar expressions in complex variables with Wirtinger calculus.

Every coefficient of every differential form in the package is an
:class:`Expr`.  Expressions are immutable trees built from constants,
variables, sums, products, quotients and integer powers.  Conjugation is
pushed down to the leaves at construction time, so a variable and its
conjugate are distinct leaves and Wirtinger differentiation is a leaf rule.

There is no general simplifier: construction only flattens sums and
products, folds constants and drops structural zeros.  Equality of two
expressions is decided numerically (see :func:`allclose`).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

from .errors import DivisionByZero, ParseError, UnboundVariable

__all__ = [
    "SPACES",
    "VarId",
    "Expr",
    "Const",
    "Var",
    "Add",
    "Mul",
    "Div",
    "Pow",
    "const",
    "var",
    "add",
    "mul",
    "div",
    "power",
    "conj",
    "ZERO",
    "ONE",
    "evaluate",
    "evaluate_many",
    "wirtinger",
    "substitute",
    "HomogeneityDegree",
    "INHOMOGENEOUS",
    "homogeneity",
    "to_text",
    "from_text",
    "allclose",
    "assign",
    "dot",
    "norm2",
]

SPACES = ("zeta", "zeta_tilde", "z", "z_tilde")

Number = Union[int, float, complex]


@dataclass(frozen=True, order=True)
class VarId:
    """A coordinate ``space[index]``, or its complex conjugate."""

    space: str
    index: int
    conjugated: bool = False

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"unknown variable space {self.space!r}")
        if self.index < 0:
            raise ValueError("variable index must be >= 0")

    @property
    def base(self) -> "VarId":
        return VarId(self.space, self.index, False) if self.conjugated else self

    def flipped(self) -> "VarId":
        return VarId(self.space, self.index, not self.conjugated)

    def __str__(self):
        return f"{self.space}{'bar' if self.conjugated else ''}{self.index}"


class Expr:
    """Base class of expression nodes.  Use the module-level constructors."""

    __slots__ = ("_free", "__weakref__")

    def __init__(self):
        self._free = None

    # arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, mul(const(-1), _lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), mul(const(-1), self))

    def __neg__(self):
        return mul(const(-1), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __pow__(self, n):
        return power(self, n)

    def conj(self) -> "Expr":
        return conj(self)

    @property
    def free_vars(self) -> frozenset:
        if self._free is None:
            self._free = self._compute_free()
        return self._free

    def _compute_free(self) -> frozenset:
        out = frozenset()
        for child in self.children():
            out = out | child.free_vars
        return out

    def children(self) -> tuple:
        return ()

    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0

    def __call__(self, point):
        return evaluate(self, point)

    def __repr__(self):
        return to_text(self)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: Number):
        super().__init__()
        self.value = complex(value)

    def _compute_free(self):
        return frozenset()


class Var(Expr):
    __slots__ = ("vid",)

    def __init__(self, vid: VarId):
        super().__init__()
        self.vid = vid

    def _compute_free(self):
        return frozenset((self.vid,))


class Add(Expr):
    __slots__ = ("args",)

    def __init__(self, args: tuple):
        super().__init__()
        self.args = args

    def children(self):
        return self.args


class Mul(Expr):
    __slots__ = ("args",)

    def __init__(self, args: tuple):
        super().__init__()
        self.args = args

    def children(self):
        return self.args


class Div(Expr):
    __slots__ = ("num", "den")

    def __init__(self, num: Expr, den: Expr):
        super().__init__()
        self.num = num
        self.den = den

    def children(self):
        return (self.num, self.den)


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base: Expr, exp: int):
        super().__init__()
        self.base = base
        self.exp = exp

    def children(self):
        return (self.base,)


ZERO = Const(0)
ONE = Const(1)


def _lift(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, complex, np.number)):
        return const(x)
    raise TypeError(f"cannot use {type(x).__name__} as an expression")


def const(value: Number) -> Expr:
    value = complex(value)
    if value == 0:
        return ZERO
    if value == 1:
        return ONE
    return Const(value)


def var(space: str, index: int, conjugated: bool = False) -> Expr:
    return Var(VarId(space, index, conjugated))


def add(*args) -> Expr:
    terms = []
    c = 0j
    for a in args:
        a = _lift(a)
        if isinstance(a, Const):
            c += a.value
        elif isinstance(a, Add):
            for t in a.args:
                if isinstance(t, Const):
                    c += t.value
                else:
                    terms.append(t)
        else:
            terms.append(a)
    if c != 0:
        terms.append(Const(c))
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    return Add(tuple(terms))


def mul(*args) -> Expr:
    factors = []
    c = 1 + 0j
    for a in args:
        a = _lift(a)
        if isinstance(a, Const):
            c *= a.value
        elif isinstance(a, Mul):
            for t in a.args:
                if isinstance(t, Const):
                    c *= t.value
                else:
                    factors.append(t)
        else:
            factors.append(a)
    if c == 0:
        return ZERO
    if not factors:
        return const(c)
    if c != 1:
        factors.insert(0, Const(c))
    if len(factors) == 1:
        return factors[0]
    return Mul(tuple(factors))


def div(num, den) -> Expr:
    num, den = _lift(num), _lift(den)
    if isinstance(den, Const):
        if den.value == 0:
            raise DivisionByZero("division by the constant 0")
        return mul(const(1 / den.value), num)
    if num.is_zero():
        return ZERO
    return Div(num, den)


def power(base, n: int) -> Expr:
    base = _lift(base)
    if int(n) != n:
        raise ValueError("only integer powers are supported")
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        if base.value == 0 and n < 0:
            raise DivisionByZero("negative power of 0")
        return const(base.value**n)
    if isinstance(base, Pow):
        return power(base.base, base.exp * n)
    return Pow(base, n)


def conj(e) -> Expr:
    """Complex conjugate, pushed all the way to the leaves."""
    e = _lift(e)
    memo: dict = {}

    def rec(node):
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Const):
            out = const(node.value.conjugate())
        elif isinstance(node, Var):
            out = Var(node.vid.flipped())
        elif isinstance(node, Add):
            out = add(*[rec(a) for a in node.args])
        elif isinstance(node, Mul):
            out = mul(*[rec(a) for a in node.args])
        elif isinstance(node, Div):
            out = div(rec(node.num), rec(node.den))
        elif isinstance(node, Pow):
            out = power(rec(node.base), node.exp)
        else:  # pragma: no cover
            raise TypeError(type(node))
        memo[key] = out
        return out

    return rec(e)


# ----------------------------------------------------------------------
# evaluation


def assign(**coords) -> dict:
    """Build an evaluation point, e.g. ``assign(zeta=(1, 2j), z=(0.5,))``.

    Values may be scalars or numpy arrays (all broadcastable together).
    """
    point = {}
    for space, values in coords.items():
        if np.ndim(values) == 0 and not isinstance(values, (list, tuple)):
            values = (values,)
        for i, v in enumerate(values):
            point[VarId(space, i)] = v
    return point


class _Evaluator:
    """Evaluates many expressions at one point, sharing work between common subtrees."""

    def __init__(self, point: Mapping[VarId, object]):
        self.point = point
        self.memo: dict = {}
        self.cache: dict = {}

    def lookup(self, vid: VarId):
        if vid in self.cache:
            return self.cache[vid]
        try:
            val = self.point[vid.base]
        except KeyError:
            raise UnboundVariable(str(vid.base)) from None
        if vid.conjugated:
            val = np.conj(val)
        self.cache[vid] = val
        return val

    def __call__(self, node):
        key = id(node)
        memo = self.memo
        if key in memo:
            return memo[key][1]
        if isinstance(node, Const):
            out = node.value
        elif isinstance(node, Var):
            out = self.lookup(node.vid)
        elif isinstance(node, Add):
            out = self(node.args[0])
            for a in node.args[1:]:
                out = out + self(a)
        elif isinstance(node, Mul):
            out = self(node.args[0])
            for a in node.args[1:]:
                out = out * self(a)
        elif isinstance(node, Div):
            den = self(node.den)
            if np.any(den == 0):
                raise DivisionByZero(f"denominator {to_text(node.den)[:60]} vanishes")
            out = self(node.num) / den
        elif isinstance(node, Pow):
            b = self(node.base)
            if node.exp < 0:
                if np.any(b == 0):
                    raise DivisionByZero("negative power of a vanishing base")
                out = 1.0 / b ** (-node.exp)
            else:
                out = b**node.exp
        else:  # pragma: no cover
            raise TypeError(type(node))
        # keep the node alive so its id cannot be recycled while memoised
        memo[key] = (node, out)
        return out


def _finish(out):
    if isinstance(out, np.ndarray):
        return out.astype(complex, copy=False)
    return complex(out)


def evaluate(expr: Expr, point: Mapping[VarId, object]):
    """Evaluate ``expr`` at ``point`` (a mapping from base :class:`VarId` to values).

    Values may be numpy arrays, in which case evaluation is vectorised.
    Raises :class:`DivisionByZero` if any denominator vanishes.
    """
    return _finish(_Evaluator(point)(expr))


def evaluate_many(exprs: Iterable[Expr], point: Mapping[VarId, object]) -> list:
    """Evaluate several expressions at one point with a shared memo."""
    ev = _Evaluator(point)
    return [_finish(ev(e)) for e in exprs]


# ----------------------------------------------------------------------
# calculus


def wirtinger(expr: Expr, wrt: VarId) -> Expr:
    """Wirtinger derivative d(expr)/d(wrt), the conjugate pair treated as independent."""
    memo: dict = {}

    def rec(node):
        if wrt not in node.free_vars:
            return ZERO
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Var):
            out = ONE if node.vid == wrt else ZERO
        elif isinstance(node, Add):
            out = add(*[rec(a) for a in node.args])
        elif isinstance(node, Mul):
            parts = []
            for i, a in enumerate(node.args):
                da = rec(a)
                if da.is_zero():
                    continue
                parts.append(mul(*node.args[:i], da, *node.args[i + 1:]))
            out = add(*parts)
        elif isinstance(node, Div):
            dn, dd = rec(node.num), rec(node.den)
            first = div(dn, node.den)
            if dd.is_zero():
                out = first
            else:
                out = add(first, mul(const(-1), node.num, dd, power(node.den, -2)))
        elif isinstance(node, Pow):
            out = mul(const(node.exp), power(node.base, node.exp - 1), rec(node.base))
        else:  # pragma: no cover
            raise TypeError(type(node))
        memo[key] = out
        return out

    return rec(expr)


def substitute(expr: Expr, mapping: Mapping[VarId, Expr]) -> Expr:
    """Replace variables by expressions.  Keys are base variables; conjugates follow."""
    full = {}
    for k, v in mapping.items():
        v = _lift(v)
        full[k.base] = v
        full[k.base.flipped()] = conj(v)
    memo: dict = {}

    def rec(node):
        if not (node.free_vars & full.keys()):
            return node
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Var):
            out = full[node.vid]
        elif isinstance(node, Add):
            out = add(*[rec(a) for a in node.args])
        elif isinstance(node, Mul):
            out = mul(*[rec(a) for a in node.args])
        elif isinstance(node, Div):
            out = div(rec(node.num), rec(node.den))
        elif isinstance(node, Pow):
            out = power(rec(node.base), node.exp)
        else:  # pragma: no cover
            raise TypeError(type(node))
        memo[key] = out
        return out

    return rec(expr)


# ----------------------------------------------------------------------
# homogeneity


@dataclass(frozen=True)
class HomogeneityDegree:
    """Joint degree under ``v -> lambda v`` per variable space, holomorphic and conjugate."""

    deg_zeta: int = 0
    deg_zetabar: int = 0
    deg_z: int = 0
    deg_zbar: int = 0
    deg_zeta_tilde: int = 0
    deg_zeta_tildebar: int = 0
    deg_z_tilde: int = 0
    deg_z_tildebar: int = 0

    def _vec(self):
        return tuple(getattr(self, f) for f in self.__dataclass_fields__)

    @classmethod
    def _from(cls, vec):
        return cls(*vec)

    def __add__(self, other):
        return self._from(a + b for a, b in zip(self._vec(), other._vec()))

    def __neg__(self):
        return self._from(-a for a in self._vec())

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, n: int):
        return self._from(a * n for a in self._vec())

    def conjugate(self):
        v = self._vec()
        return self._from((v[1], v[0], v[3], v[2], v[5], v[4], v[7], v[6]))

    @classmethod
    def of_var(cls, vid: VarId):
        name = "deg_" + vid.space + ("bar" if vid.conjugated else "")
        return cls(**{name: 1})


class _Inhomogeneous:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "INHOMOGENEOUS"

    def __bool__(self):
        return False


INHOMOGENEOUS = _Inhomogeneous()


def homogeneity(expr: Expr):
    """Joint homogeneity multidegree of ``expr`` or :data:`INHOMOGENEOUS`.

    Decided structurally: a sum is homogeneous only if every summand has the
    same degree.
    """
    memo: dict = {}

    def rec(node):
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Const):
            out = HomogeneityDegree()
        elif isinstance(node, Var):
            out = HomogeneityDegree.of_var(node.vid)
        elif isinstance(node, Add):
            degs = [rec(a) for a in node.args]
            out = degs[0]
            if any(d is INHOMOGENEOUS or d != out for d in degs):
                out = INHOMOGENEOUS
        elif isinstance(node, Mul):
            out = HomogeneityDegree()
            for a in node.args:
                d = rec(a)
                if d is INHOMOGENEOUS:
                    out = INHOMOGENEOUS
                    break
                out = out + d
        elif isinstance(node, Div):
            a, b = rec(node.num), rec(node.den)
            out = INHOMOGENEOUS if (a is INHOMOGENEOUS or b is INHOMOGENEOUS) else a - b
        elif isinstance(node, Pow):
            b = rec(node.base)
            out = INHOMOGENEOUS if b is INHOMOGENEOUS else b * node.exp
        else:  # pragma: no cover
            raise TypeError(type(node))
        memo[key] = out
        return out

    return rec(expr)


# ----------------------------------------------------------------------
# text format


def _fmt_complex(c: complex) -> str:
    re_, im = c.real, c.imag
    sign = "-" if (im < 0 or (im == 0 and np.signbit(im))) else "+"
    return f"{re_!r}{sign}{abs(im)!r}i"


def to_text(expr: Expr) -> str:
    """Prefix serialisation: ``add(mul(const(2.0+0.0i),var(zeta,0)),var(z,0,bar))``."""
    if isinstance(expr, Const):
        return f"const({_fmt_complex(expr.value)})"
    if isinstance(expr, Var):
        v = expr.vid
        return f"var({v.space},{v.index}{',bar' if v.conjugated else ''})"
    if isinstance(expr, Add):
        return "add(" + ",".join(to_text(a) for a in expr.args) + ")"
    if isinstance(expr, Mul):
        return "mul(" + ",".join(to_text(a) for a in expr.args) + ")"
    if isinstance(expr, Div):
        return f"div({to_text(expr.num)},{to_text(expr.den)})"
    if isinstance(expr, Pow):
        return f"pow({to_text(expr.base)},{expr.exp})"
    raise TypeError(type(expr))  # pragma: no cover


_FLOAT = r"(?:\d+(?:\.\d*)?(?:e[+-]?\d+)?|inf|nan)"
_COMPLEX_RE = re.compile(rf"^(?P<re>[+-]?{_FLOAT})(?P<im>[+-]{_FLOAT})i$")
_TOKEN_RE = re.compile(r"\s*([A-Za-z_][A-Za-z_0-9]*|\(|\)|,|[^(),\s]+)")


def _parse_complex(s: str) -> complex:
    m = _COMPLEX_RE.match(s)
    if not m:
        raise ParseError(f"bad complex constant {s!r}")
    return complex(float(m.group("re")), float(m.group("im")))


def from_text(text: str) -> Expr:
    """Inverse of :func:`to_text`.  Also accepts ``conj(...)`` nodes."""
    tokens = _TOKEN_RE.findall(text.strip())
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take(expected=None):
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of input")
        tok = tokens[pos]
        if expected is not None and tok != expected:
            raise ParseError(f"expected {expected!r}, got {tok!r}")
        pos += 1
        return tok

    def node():
        name = take()
        take("(")
        if name == "const":
            raw = ""
            while peek() not in (")", None):
                raw += take()
            take(")")
            return const(_parse_complex(raw))
        if name == "var":
            space = take()
            take(",")
            index = int(take())
            bar = False
            if peek() == ",":
                take(",")
                if take() != "bar":
                    raise ParseError("variable flag must be 'bar'")
                bar = True
            take(")")
            return var(space, index, bar)
        args = [node()]
        while peek() == ",":
            take(",")
            if name == "pow":
                exp = int(take())
                take(")")
                return power(args[0], exp)
            args.append(node())
        take(")")
        if name == "add":
            return add(*args)
        if name == "mul":
            return mul(*args)
        if name == "div":
            if len(args) != 2:
                raise ParseError("div takes two arguments")
            return div(*args)
        if name == "conj":
            return conj(args[0])
        raise ParseError(f"unknown node {name!r}")

    out = node()
    if pos != len(tokens):
        raise ParseError("trailing input")
    return out


# ----------------------------------------------------------------------
# helpers


def allclose(a: Expr, b: Expr, points: Iterable[Mapping], rtol=1e-12, atol=1e-12) -> bool:
    """Pointwise-numeric equality test at the given points."""
    for p in points:
        va, vb = evaluate(a, p), evaluate(b, p)
        if not np.allclose(va, vb, rtol=rtol, atol=atol):
            return False
    return True


def dot(xs: Iterable[Expr], ys: Iterable[Expr]) -> Expr:
    return add(*[mul(x, y) for x, y in zip(xs, ys)])


def norm2(space: str, count: int) -> Expr:
    """``|v|^2 = sum v_i conj(v_i)`` for the first ``count`` coordinates of ``space``."""
    return add(*[mul(var(space, i), var(space, i, True)) for i in range(count)])
