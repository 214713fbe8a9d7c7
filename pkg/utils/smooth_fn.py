"""
Smooth scalar functions of one variable.

Expressions are immutable trees over real/complex literals, the variable x,
+ - * /, integer powers, sin, cos, exp and negation. Two numeric leaves extend
the tree for solver output: ``Numeric`` (a callable returning derivatives) and
``Integral`` (a quadrature-backed antiderivative).

Grammar accepted by ``parse_expr``::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' int)?
    base   := number | 'x' | '(' expr ')'
            | ('sin'|'cos'|'exp') '(' expr ')' | '-' base

Numbers are decimal with an optional exponent and an optional trailing ``i``
for imaginary literals.
"""

import logging
import math
import re
import warnings
from dataclasses import dataclass
from functools import reduce
from typing import Callable, List, Union

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from utils import config

logger = logging.getLogger(__name__)

Scalar = Union[float, complex]


class ExprSyntaxError(ValueError):
    """Raised for malformed expression source; ``offset`` is a byte offset"""

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    pass


class EvaluationError(ArithmeticError):
    pass


class QuadratureError(ArithmeticError):
    pass


# ============================================================================
# EXPRESSION NODES
# ============================================================================

class SmoothExpr:
    """Base class for expression nodes; arithmetic builds new trees"""

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __str__(self):
        try:
            return to_source(self)
        except TypeError:
            return f"<{type(self).__name__}>"


@dataclass(frozen=True)
class Const(SmoothExpr):
    value: Scalar

    def _eval(self, x):
        return self.value

    def _diff(self):
        return ZERO

    def _taylor(self, x, order):
        out = np.zeros(order + 1, dtype=np.result_type(float, type(self.value)))
        out[0] = self.value
        return out

    def _source(self):
        v = self.value
        if isinstance(v, complex):
            re_part, im_part = v.real, v.imag
            sign = "-" if im_part < 0 else "+"
            return f"({_number_source(re_part)} {sign} {_number_source(abs(im_part))}i)"
        text = _number_source(v)
        return f"({text})" if v < 0 else text


@dataclass(frozen=True)
class Var(SmoothExpr):

    def _eval(self, x):
        return x

    def _diff(self):
        return ONE

    def _taylor(self, x, order):
        out = np.zeros(order + 1)
        out[0] = x
        if order >= 1:
            out[1] = 1.0
        return out

    def _source(self):
        return "x"


@dataclass(frozen=True)
class Add(SmoothExpr):
    left: SmoothExpr
    right: SmoothExpr

    def _eval(self, x):
        return self.left._eval(x) + self.right._eval(x)

    def _diff(self):
        return add(self.left._diff(), self.right._diff())

    def _taylor(self, x, order):
        return self.left._taylor(x, order) + self.right._taylor(x, order)

    def _source(self):
        return f"({self.left._source()} + {self.right._source()})"


@dataclass(frozen=True)
class Sub(SmoothExpr):
    left: SmoothExpr
    right: SmoothExpr

    def _eval(self, x):
        return self.left._eval(x) - self.right._eval(x)

    def _diff(self):
        return sub(self.left._diff(), self.right._diff())

    def _taylor(self, x, order):
        return self.left._taylor(x, order) - self.right._taylor(x, order)

    def _source(self):
        return f"({self.left._source()} - {self.right._source()})"


@dataclass(frozen=True)
class Mul(SmoothExpr):
    left: SmoothExpr
    right: SmoothExpr

    def _eval(self, x):
        return self.left._eval(x) * self.right._eval(x)

    def _diff(self):
        return add(mul(self.left._diff(), self.right), mul(self.left, self.right._diff()))

    def _taylor(self, x, order):
        return _series_mul(self.left._taylor(x, order), self.right._taylor(x, order))

    def _source(self):
        return f"({self.left._source()} * {self.right._source()})"


@dataclass(frozen=True)
class Div(SmoothExpr):
    left: SmoothExpr
    right: SmoothExpr

    def _eval(self, x):
        den = self.right._eval(x)
        if np.any(np.asarray(den) == 0):
            raise EvaluationError(f"division by zero in {self} at x={_where_zero(x, den)}")
        return self.left._eval(x) / den

    def _diff(self):
        num = sub(mul(self.left._diff(), self.right), mul(self.left, self.right._diff()))
        return div(num, power(self.right, 2))

    def _taylor(self, x, order):
        return _series_div(self.left._taylor(x, order), self.right._taylor(x, order), x)

    def _source(self):
        return f"({self.left._source()} / {self.right._source()})"


@dataclass(frozen=True)
class Pow(SmoothExpr):
    base: SmoothExpr
    exponent: int

    def _eval(self, x):
        b = self.base._eval(x)
        if self.exponent < 0:
            if np.any(np.asarray(b) == 0):
                raise EvaluationError(f"division by zero in {self} at x={_where_zero(x, b)}")
            return 1.0 / b ** (-self.exponent)
        return b ** self.exponent

    def _diff(self):
        n = self.exponent
        if n == 0:
            return ZERO
        return mul(mul(Const(float(n)), power(self.base, n - 1)), self.base._diff())

    def _taylor(self, x, order):
        b = self.base._taylor(x, order)
        n = abs(self.exponent)
        result = np.zeros(order + 1, dtype=b.dtype)
        result[0] = 1.0
        square = b
        while n:
            if n & 1:
                result = _series_mul(result, square)
            n >>= 1
            if n:
                square = _series_mul(square, square)
        if self.exponent < 0:
            one = np.zeros(order + 1)
            one[0] = 1.0
            return _series_div(one, result, x)
        return result

    def _source(self):
        return f"({self.base._source()})^{self.exponent}"


@dataclass(frozen=True)
class Neg(SmoothExpr):
    arg: SmoothExpr

    def _eval(self, x):
        return -self.arg._eval(x)

    def _diff(self):
        return neg(self.arg._diff())

    def _taylor(self, x, order):
        return -self.arg._taylor(x, order)

    def _source(self):
        return f"(-({self.arg._source()}))"


@dataclass(frozen=True)
class Func(SmoothExpr):
    name: str
    arg: SmoothExpr

    def _eval(self, x):
        return _UFUNCS[self.name](self.arg._eval(x))

    def _diff(self):
        inner = self.arg._diff()
        if self.name == "sin":
            return mul(Func("cos", self.arg), inner)
        if self.name == "cos":
            return neg(mul(Func("sin", self.arg), inner))
        return mul(self, inner)

    def _taylor(self, x, order):
        a = self.arg._taylor(x, order)
        if self.name == "exp":
            return _series_exp(a)
        s, c = _series_sin_cos(a)
        return s if self.name == "sin" else c

    def _source(self):
        return f"{self.name}({self.arg._source()})"


@dataclass(frozen=True, eq=False)
class Numeric(SmoothExpr):
    """Leaf backed by ``jet_fn(x, k)``, the k-th derivative at x"""
    label: str
    jet_fn: Callable
    order: int = 0

    def _eval(self, x):
        return self.jet_fn(x, self.order)

    def _diff(self):
        return Numeric(self.label, self.jet_fn, self.order + 1)

    def _taylor(self, x, order):
        values = [self.jet_fn(x, self.order + j) / math.factorial(j) for j in range(order + 1)]
        return np.asarray(values)

    def _source(self):
        raise TypeError(f"numeric leaf {self.label!r} has no source form")


@dataclass(frozen=True, eq=False)
class Integral(SmoothExpr):
    """constant + integral of ``integrand`` from ``anchor`` to x"""
    integrand: SmoothExpr
    anchor: float
    constant: Scalar = 0.0

    def _value(self, x):
        if x == self.anchor:
            return self.constant
        return self.constant + quad_complex(lambda s: self.integrand._eval(s), self.anchor, x)

    def _eval(self, x):
        if np.ndim(x) == 0:
            return self._value(float(x))
        return np.array([self._value(float(s)) for s in np.ravel(x)]).reshape(np.shape(x))

    def _diff(self):
        return self.integrand

    def _taylor(self, x, order):
        head = np.asarray([self._value(x)])
        if order == 0:
            return head
        tail = self.integrand._taylor(x, order - 1) / np.arange(1, order + 1)
        return np.concatenate([head.astype(np.result_type(head, tail)), tail])

    def _source(self):
        raise TypeError("antiderivative leaf has no source form")


ZERO = Const(0.0)
ONE = Const(1.0)
X = Var()

_UFUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}


def _number_source(v):
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"non-finite literal {v!r} cannot be printed")
    return repr(v)


def _where_zero(x, den):
    den = np.asarray(den)
    if den.ndim == 0:
        return x
    return np.asarray(x)[den == 0][0]


# ====== TAYLOR SERIES ARITHMETIC ======

def _series_mul(a, b):
    return np.convolve(a, b)[: len(a)]


def _series_div(a, b, x):
    if b[0] == 0:
        raise EvaluationError(f"division by zero at x={x}")
    q = np.zeros(len(a), dtype=np.result_type(a, b))
    for k in range(len(a)):
        q[k] = (a[k] - np.dot(b[1 : k + 1], q[k - 1 :: -1][:k])) / b[0]
    return q


def _series_exp(a):
    e = np.zeros(len(a), dtype=np.result_type(a, float))
    e[0] = np.exp(a[0])
    for k in range(1, len(a)):
        j = np.arange(1, k + 1)
        e[k] = np.sum(j * a[1 : k + 1] * e[k - 1 :: -1][:k]) / k
    return e


def _series_sin_cos(a):
    dtype = np.result_type(a, float)
    s = np.zeros(len(a), dtype=dtype)
    c = np.zeros(len(a), dtype=dtype)
    s[0], c[0] = np.sin(a[0]), np.cos(a[0])
    for k in range(1, len(a)):
        j = np.arange(1, k + 1)
        s[k] = np.sum(j * a[1 : k + 1] * c[k - 1 :: -1][:k]) / k
        c[k] = -np.sum(j * a[1 : k + 1] * s[k - 1 :: -1][:k]) / k
    return s, c


# ============================================================================
# CONSTRUCTORS
# ============================================================================

def _clean_scalar(v):
    if isinstance(v, (complex, np.complexfloating)):
        v = complex(v)
        return v.real if v.imag == 0 else v
    return float(v)


def as_expr(value) -> SmoothExpr:
    """Coerce numbers and source strings to expressions"""
    if isinstance(value, SmoothExpr):
        return value
    if isinstance(value, str):
        return parse_expr(value)
    if isinstance(value, (int, float, complex, np.number)):
        return Const(_clean_scalar(value))
    raise TypeError(f"cannot build an expression from {type(value).__name__}")


def _cval(e):
    return e.value if isinstance(e, Const) else None


def add(a, b) -> SmoothExpr:
    a, b = as_expr(a), as_expr(b)
    va, vb = _cval(a), _cval(b)
    if va is not None and vb is not None:
        return Const(_clean_scalar(va + vb))
    if va == 0:
        return b
    if vb == 0:
        return a
    return Add(a, b)


def sub(a, b) -> SmoothExpr:
    a, b = as_expr(a), as_expr(b)
    va, vb = _cval(a), _cval(b)
    if va is not None and vb is not None:
        return Const(_clean_scalar(va - vb))
    if vb == 0:
        return a
    if va == 0:
        return neg(b)
    return Sub(a, b)


def mul(a, b) -> SmoothExpr:
    a, b = as_expr(a), as_expr(b)
    va, vb = _cval(a), _cval(b)
    if va is not None and vb is not None:
        return Const(_clean_scalar(va * vb))
    if va == 0 or vb == 0:
        return ZERO
    if va == 1:
        return b
    if vb == 1:
        return a
    return Mul(a, b)


def div(a, b) -> SmoothExpr:
    a, b = as_expr(a), as_expr(b)
    va, vb = _cval(a), _cval(b)
    if vb is not None and vb != 0:
        if va is not None:
            return Const(_clean_scalar(va / vb))
        if vb == 1:
            return a
    return Div(a, b)


def power(base, exponent: int) -> SmoothExpr:
    if int(exponent) != exponent:
        raise ValueError(f"only integer powers are supported, got {exponent!r}")
    exponent = int(exponent)
    base = as_expr(base)
    vb = _cval(base)
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if vb is not None and (vb != 0 or exponent > 0):
        return Const(_clean_scalar(vb ** exponent))
    return Pow(base, exponent)


def neg(a) -> SmoothExpr:
    a = as_expr(a)
    va = _cval(a)
    if va is not None:
        return Const(_clean_scalar(-va))
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def scale(c, e) -> SmoothExpr:
    return mul(as_expr(c), e)


def sin(e) -> SmoothExpr:
    return Func("sin", as_expr(e))


def cos(e) -> SmoothExpr:
    return Func("cos", as_expr(e))


def exp(e) -> SmoothExpr:
    return Func("exp", as_expr(e))


_COMBINERS = {
    "add": lambda args: reduce(add, args, ZERO),
    "mul": lambda args: reduce(mul, args, ONE),
    "scale": lambda args: scale(*args),
}


def combine(op, *args) -> SmoothExpr:
    """Compose expressions with ``add``, ``mul`` or ``scale(c, e)``"""
    if op not in _COMBINERS:
        raise ValueError(f"unknown combine operation: {op}")
    if op == "scale" and len(args) != 2:
        raise ValueError("scale takes (constant, expression)")
    return _COMBINERS[op](list(args))


# ============================================================================
# CALCULUS AND EVALUATION
# ============================================================================

def differentiate(e: SmoothExpr, k: int = 1) -> SmoothExpr:
    """Exact k-th derivative; k = 0 returns e"""
    if k < 0:
        raise ValueError("derivative order must be non-negative")
    for _ in range(k):
        e = e._diff()
    return e


def evaluate(e: SmoothExpr, x):
    """Evaluate at a scalar or an array of points.

    Raises EvaluationError on a zero divisor instead of returning inf/NaN.
    """
    xs = np.asarray(x, dtype=float)
    with np.errstate(divide="raise", invalid="ignore"):
        try:
            out = e._eval(xs if xs.ndim else float(xs))
        except FloatingPointError as exc:
            raise EvaluationError(f"division by zero evaluating {e}") from exc
    if xs.ndim == 0:
        return _clean_scalar(np.asarray(out).item())
    return np.broadcast_to(out, xs.shape).copy()


def eval_jet(e: SmoothExpr, x: float, maxk: int) -> List[Scalar]:
    """Values of e, e', ..., e^(maxk) at x by truncated Taylor arithmetic"""
    if maxk < 0:
        raise ValueError("jet order must be non-negative")
    coeffs = e._taylor(float(x), maxk)
    return [_clean_scalar(coeffs[j] * math.factorial(j)) for j in range(maxk + 1)]


def check_pole_free(e: SmoothExpr, lo: float, hi: float, samples: int = config.POLE_SAMPLES):
    """Sample e densely on [lo, hi]; raise EvaluationError on a pole"""
    grid = np.linspace(lo, hi, samples)
    values = evaluate(e, grid)
    if not np.all(np.isfinite(values)):
        bad = grid[~np.isfinite(values)][0]
        raise EvaluationError(f"{e} is not finite at x={bad}")
    return True


def is_constant(e: SmoothExpr) -> bool:
    return isinstance(e, Const)


def quad_complex(func, a, b, points=None, epsabs=config.QUAD_EPSABS,
                 epsrel=config.QUAD_EPSREL, limit=config.QUAD_LIMIT):
    """Adaptive quadrature of a possibly complex integrand on [a, b]"""
    if a == b:
        return 0.0
    lo, hi = min(a, b), max(a, b)
    inner = None
    if points is not None:
        inner = sorted({p for p in points if lo < p < hi}) or None
    sample = func(0.5 * (a + b))
    parts = [np.real] + ([np.imag] if np.iscomplexobj(sample) else [])
    total = []
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        for part in parts:
            try:
                value, err = quad(lambda s: float(part(func(s))), a, b, points=inner,
                                  epsabs=epsabs, epsrel=epsrel, limit=limit)
            except IntegrationWarning as exc:
                raise QuadratureError(f"quadrature did not converge on [{a}, {b}]: {exc}") from exc
            logger.debug("quad on [%g, %g]: %.3e (err %.1e)", a, b, value, err)
            total.append(value)
    if len(total) == 2:
        return _clean_scalar(complex(total[0], total[1]))
    return total[0]


# ============================================================================
# PARSER AND PRINTER
# ============================================================================

_NUMBER = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_FUNCTIONS = ("sin", "cos", "exp")


def tokenize(source: str) -> list:
    """Split source into (kind, text, byte_offset) tokens ending with 'end'"""
    tokens = []
    idx = 0

    def offset(i):
        return len(source[:i].encode("utf-8"))

    while idx < len(source):
        c = source[idx]
        if c.isspace():
            idx += 1
            continue
        match = _NUMBER.match(source, idx)
        if match:
            text = match.group(0)
            end = match.end()
            if end < len(source) and source[end] == "i":
                text += "i"
                end += 1
            tokens.append(("num", text, offset(idx)))
            idx = end
            continue
        match = _IDENT.match(source, idx)
        if match:
            tokens.append(("ident", match.group(0), offset(idx)))
            idx = match.end()
            continue
        if c in "+-*/^()":
            tokens.append(("op", c, offset(idx)))
            idx += 1
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", offset(idx))
    tokens.append(("end", "", offset(len(source))))
    return tokens


class _Parser:
    def __init__(self, source):
        self.tokens = tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        token = self.tokens[self.pos]
        if token[0] != "end":
            self.pos += 1
        return token

    def expect(self, text):
        kind, value, off = self.peek()
        if value != text or kind != "op":
            found = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", off)
        return self.advance()

    def parse(self):
        tree = self.expr()
        kind, value, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {value!r}", off)
        return tree

    def expr(self):
        left = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.advance()[1]
            right = self.term()
            left = add(left, right) if op == "+" else sub(left, right)
        return left

    def term(self):
        left = self.factor()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.advance()[1]
            right = self.factor()
            left = mul(left, right) if op == "*" else div(left, right)
        return left

    def factor(self):
        base = self.base()
        if self.peek()[:2] == ("op", "^"):
            self.advance()
            # x^-k is 1 / x^k
            sign = 1
            if self.peek()[:2] == ("op", "-"):
                self.advance()
                sign = -1
            kind, text, off = self.advance()
            if kind != "num" or not text.isdigit():
                raise ExprSyntaxError("expected integer exponent", off)
            return power(base, sign * int(text))
        return base

    def base(self):
        kind, text, off = self.advance()
        if kind == "num":
            if text.endswith("i"):
                return Const(complex(0.0, float(text[:-1])))
            return Const(float(text))
        if kind == "ident":
            if text == "x":
                return X
            if text in _FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(text, arg)
            raise UnknownIdentifierError(f"unknown identifier {text!r}", off)
        if (kind, text) == ("op", "("):
            inner = self.expr()
            self.expect(")")
            return inner
        if (kind, text) == ("op", "-"):
            # -x^2 is -(x^2)
            return neg(self.factor())
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", off)


def parse_expr(source: str) -> SmoothExpr:
    """Parse grammar source into an expression tree"""
    return _Parser(source).parse()


def to_source(e: SmoothExpr) -> str:
    """Print e in grammar form; parse_expr(to_source(e)) evaluates like e"""
    return e._source()
