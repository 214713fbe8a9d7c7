"""
Piecewise-smooth functions plus finite Dirac combinations.

A ``DistA`` is F = sum_i f_i chi_(x_i, x_i+1) + sum c_ij delta^(j)(x - x_i). All
operations return canonical values: zero delta coefficients are dropped and
every delta point is a breakpoint. Breakpoints with equal pieces on both sides
are allowed; ``sing_supp`` filters them numerically.

The product ``star`` takes, at each singular point, the LEFT lateral piece of
the left factor and the RIGHT lateral piece of the right factor, so that
H * delta = 0 while delta * H = delta.
"""

import logging
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from math import comb
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from utils import config
from utils.smooth_fn import (
    ONE, ZERO, Const, Integral, QuadratureError, Scalar, SmoothExpr, as_expr, eval_jet,
    evaluate, is_constant, parse_expr, quad_complex, to_source, X,
)
from utils.smooth_fn import add as expr_add
from utils.smooth_fn import mul as expr_mul
from utils.smooth_fn import scale as expr_scale
from utils.smooth_fn import sub as expr_sub
from utils.smooth_fn import differentiate as expr_diff

logger = logging.getLogger(__name__)

__all__ = [
    "DeltaPart", "PiecewisePart", "DistA", "QuadratureError",
    "make_dist", "zero", "smooth", "heaviside", "dirac",
    "canonicalize", "refine", "add", "sub", "scale", "dual_smooth_delta", "star",
    "derivative", "antiderivative", "restrict", "sing_supp", "dist_order",
    "pair_with_test", "equals", "lateral_piece", "to_json", "from_json",
]


def _clean(c):
    c = complex(c)
    return c.real if c.imag == 0 else c


# ============================================================================
# DATA TYPES
# ============================================================================

@dataclass(frozen=True)
class DeltaPart:
    """sum c * delta^(order)(x - point), stored as sorted (point, order, c)"""
    terms: Tuple[Tuple[float, int, Scalar], ...] = ()

    @classmethod
    def from_dict(cls, mapping: Dict[Tuple[float, int], Scalar]) -> "DeltaPart":
        items = [(float(x), int(k), _clean(c)) for (x, k), c in mapping.items() if c != 0]
        return cls(tuple(sorted(items, key=lambda t: (t[0], t[1]))))

    def as_dict(self) -> Dict[Tuple[float, int], Scalar]:
        return {(x, k): c for x, k, c in self.terms}

    def coefficient(self, x: float, k: int) -> Scalar:
        for px, pk, c in self.terms:
            if px == x and pk == k:
                return c
        return 0.0

    def at(self, x: float) -> Dict[int, Scalar]:
        return {k: c for px, k, c in self.terms if px == x}

    def points(self) -> List[float]:
        return sorted({x for x, _, _ in self.terms})

    def max_order(self) -> int:
        return max((k for _, k, _ in self.terms), default=-1)

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)

    def __bool__(self):
        return bool(self.terms)


@dataclass(frozen=True)
class PiecewisePart:
    breakpoints: Tuple[float, ...] = ()
    pieces: Tuple[SmoothExpr, ...] = (ZERO,)

    def __post_init__(self):
        if len(self.pieces) != len(self.breakpoints) + 1:
            raise ValueError(
                f"{len(self.breakpoints)} breakpoints need {len(self.breakpoints) + 1} pieces, "
                f"got {len(self.pieces)}"
            )
        if any(b <= a for a, b in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must be strictly increasing")


@dataclass(frozen=True)
class DistA:
    piecewise: PiecewisePart = PiecewisePart()
    deltas: DeltaPart = DeltaPart()

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return self.piecewise.breakpoints

    @property
    def pieces(self) -> Tuple[SmoothExpr, ...]:
        return self.piecewise.pieces

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(-1.0, self)

    def __rmul__(self, c):
        return scale(c, self)


# ============================================================================
# CONSTRUCTORS
# ============================================================================

def make_dist(breakpoints: Iterable[float] = (), pieces: Optional[Iterable] = None,
              deltas: Optional[Dict[Tuple[float, int], Scalar]] = None) -> DistA:
    """Build a canonical DistA from raw parts (pieces may be source strings)"""
    bps = tuple(float(x) for x in breakpoints)
    pcs = tuple(as_expr(p) for p in pieces) if pieces is not None else (ZERO,) * (len(bps) + 1)
    return canonicalize(DistA(PiecewisePart(bps, pcs), DeltaPart.from_dict(deltas or {})))


def zero() -> DistA:
    return DistA()


def smooth(expr) -> DistA:
    return DistA(PiecewisePart((), (as_expr(expr),)))


def heaviside(x0: float = 0.0, side: str = "right") -> DistA:
    """H(x - x0); side='left' gives H_-(x - x0) = 1 - H(x - x0)"""
    if side not in ("right", "left"):
        raise ValueError(f"side must be 'right' or 'left', got {side!r}")
    pieces = (ZERO, ONE) if side == "right" else (ONE, ZERO)
    return DistA(PiecewisePart((float(x0),), pieces))


def dirac(x0: float = 0.0, order: int = 0, coeff: Scalar = 1.0) -> DistA:
    return make_dist(deltas={(float(x0), int(order)): coeff})


# ============================================================================
# CANONICAL FORM AND REFINEMENT
# ============================================================================

def _piece_index(breakpoints, x, side="right"):
    if side == "right":
        return bisect_right(breakpoints, x)
    return bisect_left(breakpoints, x)


def lateral_piece(F: DistA, x: float, side: str) -> SmoothExpr:
    """Piece of F just left (side='left') or right (side='right') of x"""
    return F.pieces[_piece_index(F.breakpoints, x, side)]


def _refine_to(F, points):
    new_bps = sorted(set(F.breakpoints) | {float(p) for p in points})
    if len(new_bps) == len(F.breakpoints):
        return F
    old = F.breakpoints
    pieces = [F.pieces[0]]
    for a, b in zip(new_bps, new_bps[1:] + [None]):
        mid = a + 1.0 if b is None else 0.5 * (a + b)
        pieces.append(F.pieces[_piece_index(old, mid)])
    return DistA(PiecewisePart(tuple(new_bps), tuple(pieces)), F.deltas)


def canonicalize(F: DistA) -> DistA:
    """Drop zero delta coefficients and insert delta points as breakpoints"""
    deltas = DeltaPart.from_dict(F.deltas.as_dict())
    F = DistA(F.piecewise, deltas)
    return _refine_to(F, deltas.points())


def refine(F: DistA, G: DistA) -> Tuple[DistA, DistA]:
    """Rewrite F and G over the union of their breakpoints"""
    F, G = canonicalize(F), canonicalize(G)
    union = set(F.breakpoints) | set(G.breakpoints)
    return _refine_to(F, union), _refine_to(G, union)


# ============================================================================
# LINEAR STRUCTURE
# ============================================================================

def _merge_terms(*parts):
    acc: Dict[Tuple[float, int], Scalar] = {}
    for part, factor in parts:
        for x, k, c in part:
            acc[(x, k)] = acc.get((x, k), 0.0) + factor * c
    return DeltaPart.from_dict(acc)


def add(F: DistA, G: DistA) -> DistA:
    F, G = refine(F, G)
    pieces = tuple(expr_add(f, g) for f, g in zip(F.pieces, G.pieces))
    return canonicalize(DistA(PiecewisePart(F.breakpoints, pieces), _merge_terms((F.deltas, 1.0), (G.deltas, 1.0))))


def scale(c: Scalar, F: DistA) -> DistA:
    pieces = tuple(expr_scale(c, f) for f in F.pieces)
    return canonicalize(DistA(PiecewisePart(F.breakpoints, pieces), _merge_terms((F.deltas, c))))


def sub(F: DistA, G: DistA) -> DistA:
    return add(F, scale(-1.0, G))


def linear_combination(terms: Iterable[Tuple[Scalar, DistA]]) -> DistA:
    total = zero()
    for c, F in terms:
        total = add(total, scale(c, F))
    return total


# ============================================================================
# PRODUCT
# ============================================================================

def dual_smooth_delta(g: SmoothExpr, x0: float, k: int) -> DeltaPart:
    """g(x) delta^(k)(x - x0) = sum_j C(k,j) (-1)^j g^(j)(x0) delta^(k-j)(x - x0)"""
    jet = eval_jet(g, x0, k)
    return DeltaPart.from_dict({(x0, k - j): comb(k, j) * (-1) ** j * jet[j] for j in range(k + 1)})


def star(F: DistA, G: DistA) -> DistA:
    """Intrinsic product F*G.

    Regular parts multiply pointwise. A delta of F at x_i is multiplied by the
    piece of G to the right of x_i, a delta of G by the piece of F to the left;
    delta times delta vanishes.
    """
    F, G = refine(F, G)
    bps = F.breakpoints
    pieces = tuple(expr_mul(f, g) for f, g in zip(F.pieces, G.pieces))
    parts = []
    for x, j, c in F.deltas:
        g_right = G.pieces[_piece_index(bps, x, "right")]
        parts.append((dual_smooth_delta(g_right, x, j), c))
    for x, j, c in G.deltas:
        f_left = F.pieces[_piece_index(bps, x, "left")]
        parts.append((dual_smooth_delta(f_left, x, j), c))
    return canonicalize(DistA(PiecewisePart(bps, pieces), _merge_terms(*parts)))


# ============================================================================
# CALCULUS
# ============================================================================

def derivative(F: DistA, k: int = 1) -> DistA:
    """Distributional k-th derivative (jumps at breakpoints become deltas)"""
    if k < 0:
        raise ValueError("derivative order must be non-negative")
    F = canonicalize(F)
    for _ in range(k):
        acc: Dict[Tuple[float, int], Scalar] = {}
        for i, x in enumerate(F.breakpoints):
            left, right = F.pieces[i], F.pieces[i + 1]
            if left is not right:
                jump = evaluate(right, x) - evaluate(left, x)
                acc[(x, 0)] = acc.get((x, 0), 0.0) + jump
        for x, j, c in F.deltas:
            acc[(x, j + 1)] = acc.get((x, j + 1), 0.0) + c
        pieces = tuple(expr_diff(p, 1) for p in F.pieces)
        F = canonicalize(DistA(PiecewisePart(F.breakpoints, pieces), DeltaPart.from_dict(acc)))
    return F


def _primitive(f, anchor, constant):
    if is_constant(f):
        return expr_add(Const(_clean(constant)), expr_mul(f, expr_sub(X, anchor)))
    return Integral(f, anchor, _clean(constant))


def antiderivative(F: DistA) -> DistA:
    """G with derivative(G) == F and leftmost constant 0.

    Pieces are quadrature-backed; a delta at x_i becomes a unit-weighted jump
    of the regular part there, delta^(k) becomes delta^(k-1).
    """
    F = canonicalize(F)
    bps = F.breakpoints
    jumps = {x: c for x, j, c in F.deltas if j == 0}
    lowered = DeltaPart.from_dict({(x, j - 1): c for x, j, c in F.deltas if j >= 1})
    pieces = [_primitive(F.pieces[0], bps[0] if bps else 0.0, 0.0)]
    for i, x in enumerate(bps):
        start = evaluate(pieces[i], x) + jumps.get(x, 0.0)
        pieces.append(_primitive(F.pieces[i + 1], x, start))
    return canonicalize(DistA(PiecewisePart(bps, tuple(pieces)), lowered))


def restrict(F: DistA, interval: Tuple[float, float]) -> DistA:
    """Restriction to the open interval (lo, hi); outer pieces extend representationally"""
    lo, hi = interval
    F = canonicalize(F)
    bps = F.breakpoints
    first = bisect_right(bps, lo) if np.isfinite(lo) else 0
    last = bisect_left(bps, hi) if np.isfinite(hi) else len(bps)
    piecewise = PiecewisePart(bps[first:last], F.pieces[first:last + 1])
    deltas = DeltaPart(tuple(t for t in F.deltas if lo < t[0] < hi))
    return DistA(piecewise, deltas)


def sing_supp(F: DistA, jet_order: int = config.JET_ORDER, rtol: float = config.SING_SUPP_RTOL) -> List[float]:
    """Delta points plus breakpoints where some lateral jet differs"""
    F = canonicalize(F)
    points = set(F.deltas.points())
    for i, x in enumerate(F.breakpoints):
        left, right = F.pieces[i], F.pieces[i + 1]
        if x in points or left is right:
            continue
        jl = np.asarray(eval_jet(left, x, jet_order))
        jr = np.asarray(eval_jet(right, x, jet_order))
        if np.any(np.abs(jl - jr) > rtol * (1.0 + np.maximum(np.abs(jl), np.abs(jr)))):
            points.add(x)
    return sorted(points)


def dist_order(F: DistA) -> int:
    """0 for regular F (and for F = 0), else 1 + highest delta order"""
    F = canonicalize(F)
    return F.deltas.max_order() + 1


# ============================================================================
# PAIRING AND COMPARISON
# ============================================================================

def _edges(bps, lo, hi):
    return [lo] + [x for x in bps if lo < x < hi] + [hi]


def pair_with_test(F: DistA, t: SmoothExpr, support: Tuple[float, float]) -> Scalar:
    """<F, t> for a test function t supported in ``support``"""
    lo, hi = support
    F = canonicalize(F)
    t = as_expr(t)
    total = 0.0
    edges = _edges(F.breakpoints, lo, hi)
    for a, b in zip(edges, edges[1:]):
        piece = F.pieces[_piece_index(F.breakpoints, 0.5 * (a + b))]
        if is_constant(piece) and piece.value == 0:
            continue
        total += quad_complex(lambda s, p=piece: evaluate(p, s) * evaluate(t, s), a, b)
    for x, j, c in F.deltas:
        if lo < x < hi:
            total += c * (-1) ** j * eval_jet(t, x, j)[j]
    return _clean(total)


def equals(F: DistA, G: DistA, tol: float = config.EQUALS_TOL,
           domain: Optional[Tuple[float, float]] = None) -> bool:
    """Numeric equality: delta coefficients within tol, pieces at sample points"""
    F, G = refine(F, G)
    dF, dG = F.deltas.as_dict(), G.deltas.as_dict()
    for key in set(dF) | set(dG):
        if abs(dF.get(key, 0.0) - dG.get(key, 0.0)) > tol:
            return False
    lo, hi = domain or config.WORKING_DOMAIN
    edges = _edges(F.breakpoints, lo, hi)
    for a, b in zip(edges, edges[1:]):
        idx = _piece_index(F.breakpoints, 0.5 * (a + b))
        f, g = F.pieces[idx], G.pieces[idx]
        if f is g:
            continue
        xs = np.linspace(a, b, config.EQUALS_SAMPLES)
        vf, vg = evaluate(f, xs), evaluate(g, xs)
        if np.any(np.abs(vf - vg) > tol + tol * np.abs(vf)):
            return False
    return True


# ============================================================================
# SERIALIZATION
# ============================================================================

def to_json(F: DistA) -> dict:
    F = canonicalize(F)
    return {
        "breakpoints": list(F.breakpoints),
        "pieces": [to_source(p) for p in F.pieces],
        "deltas": [
            {"x": x, "order": k, "re": complex(c).real, "im": complex(c).imag}
            for x, k, c in F.deltas
        ],
    }


def from_json(doc) -> DistA:
    """Parse the serialized form; numbers and expression strings are accepted too"""
    if isinstance(doc, (int, float, str)):
        return smooth(parse_expr(doc) if isinstance(doc, str) else doc)
    if not isinstance(doc, dict):
        raise ValueError(f"distribution must be an object, got {type(doc).__name__}")
    bps = doc.get("breakpoints", [])
    pieces = doc.get("pieces")
    if pieces is None:
        pieces = ["0"] * (len(bps) + 1)
    if len(pieces) != len(bps) + 1:
        raise ValueError(f"{len(bps)} breakpoints need {len(bps) + 1} pieces, got {len(pieces)}")
    deltas = {}
    for entry in doc.get("deltas", []):
        try:
            key = (float(entry["x"]), int(entry.get("order", 0)))
            value = complex(float(entry.get("re", 0.0)), float(entry.get("im", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed delta entry {entry!r}") from exc
        if key[1] < 0:
            raise ValueError(f"negative delta order in {entry!r}")
        deltas[key] = deltas.get(key, 0.0) + value
    if list(bps) != sorted(bps):
        raise ValueError(f"breakpoints must be increasing: {bps}")
    return make_dist(bps, [parse_expr(p) if isinstance(p, str) else as_expr(p) for p in pieces], deltas)
