"""
Linear ODEs with coefficients in the distribution algebra.

Solves sum_i (a_i * psi^(i) + psi^(i) * b_i) = f on a closed domain. Between
singular points the equation is a smooth ODE with coefficients
c_i = a_i + b_i; at each singular point x0 the generalized solution
psi = sum chi_i psi_i + Delta must cancel every delta term, which gives
n interface rows  B psi_+(x0) = A psi_-(x0) + c  and the coefficients of
Delta as affine functions of the lateral jets.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from math import comb, factorial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.integrate import solve_ivp

from utils import config
from utils.dist_algebra import (
    DeltaPart, DistA, PiecewisePart, add, derivative, dirac, dist_order, from_json,
    lateral_piece, restrict, scale, sing_supp, smooth, star, sub, zero,
)
from utils.smooth_fn import (
    ZERO, EvaluationError, Numeric, SmoothExpr, X, check_pole_free, eval_jet,
    evaluate, is_constant, parse_expr,
)
from utils.smooth_fn import add as expr_add
from utils.smooth_fn import power as expr_power
from utils.smooth_fn import scale as expr_scale
from utils.smooth_fn import sub as expr_sub

logger = logging.getLogger(__name__)


class SectionallySingular(ValueError):
    pass


class DegenerateInterface(ValueError):
    pass


class IntegrationError(ArithmeticError):
    pass


class ProblemError(ValueError):
    pass


# ============================================================================
# PROBLEM DESCRIPTION
# ============================================================================

@dataclass(frozen=True)
class DivergenceTerm:
    """D^outer(coefficient * D^inner psi) for side 'left', D^outer(D^inner psi * coefficient) for 'right'"""
    outer: int
    inner: int
    coefficient: DistA
    side: str = "left"


@dataclass(frozen=True)
class ProblemSpec:
    n: int
    a: Tuple[DistA, ...]
    b: Tuple[DistA, ...]
    f: SmoothExpr = ZERO
    domain: Tuple[float, float] = config.WORKING_DOMAIN
    divergence_terms: Tuple[DivergenceTerm, ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ProblemError(f"order must be at least 1, got {self.n}")
        if len(self.a) != self.n + 1 or len(self.b) != self.n + 1:
            raise ProblemError(f"order {self.n} needs {self.n + 1} left and right coefficients")
        lo, hi = self.domain
        if not lo < hi:
            raise ProblemError(f"empty domain [{lo}, {hi}]")
        for term in self.divergence_terms:
            if term.side not in ("left", "right") or term.outer < 0 or term.inner < 0:
                raise ProblemError(f"malformed divergence term {term}")


@dataclass(frozen=True)
class IVPCondition:
    x0: float
    C: Tuple[complex, ...]


@dataclass(frozen=True)
class BoundaryRow:
    endpoint: str
    jet_order: int
    value: complex = 0.0


def expand_divergence(spec: ProblemSpec) -> ProblemSpec:
    """Rewrite divergence terms as standard left/right coefficients (Leibniz rule)"""
    if not spec.divergence_terms:
        return spec
    n = max([spec.n] + [t.outer + t.inner for t in spec.divergence_terms])
    a = list(spec.a) + [zero()] * (n - spec.n)
    b = list(spec.b) + [zero()] * (n - spec.n)
    for term in spec.divergence_terms:
        target = a if term.side == "left" else b
        m, k = term.outer, term.inner
        for j in range(m + 1):
            target[k + j] = add(target[k + j], scale(comb(m, j), derivative(term.coefficient, m - j)))
    return ProblemSpec(n, tuple(a), tuple(b), spec.f, spec.domain, ())


def _normalized(spec):
    spec = expand_divergence(spec)
    lo, hi = spec.domain
    a = tuple(restrict(c, (lo, hi)) for c in spec.a)
    b = tuple(restrict(c, (lo, hi)) for c in spec.b)
    return replace(spec, a=a, b=b)


def _is_zero(F):
    return not F.deltas and all(is_constant(p) and p.value == 0 for p in F.pieces)


def singular_points(spec: ProblemSpec) -> List[float]:
    lo, hi = spec.domain
    points = set()
    for coef in spec.a + spec.b:
        points.update(x for x in sing_supp(coef) if lo < x < hi)
    return sorted(points)


def _local_order(spec, x0):
    orders = [max(c.deltas.at(x0), default=-1) + 1 for c in spec.a + spec.b]
    return max(orders, default=0)


# ============================================================================
# SMOOTH SUB-PROBLEMS
# ============================================================================

@dataclass(frozen=True)
class SmoothODE:
    """sum_i c_i psi^(i) = f with smooth coefficients"""
    coeffs: Tuple[SmoothExpr, ...]
    f: SmoothExpr = ZERO

    @property
    def n(self) -> int:
        return len(self.coeffs) - 1

    def homogeneous(self) -> "SmoothODE":
        return SmoothODE(self.coeffs, ZERO)

    def is_complex(self, x: float) -> bool:
        return any(isinstance(evaluate(e, x), complex) for e in self.coeffs + (self.f,))

    def companion(self, x, y):
        n = self.n
        dy = np.empty_like(y)
        dy[:-1] = y[1:]
        acc = evaluate(self.f, x)
        for i in range(n):
            c = self.coeffs[i]
            if not (is_constant(c) and c.value == 0):
                acc = acc - evaluate(c, x) * y[i]
        dy[-1] = acc / evaluate(self.coeffs[n], x)
        return dy

    def jet_map(self, x: float, order: int) -> Tuple[np.ndarray, np.ndarray]:
        """(E, e) with [psi, ..., psi^(order)](x) = E @ [psi, ..., psi^(n-1)](x) + e.

        Orders >= n come from differentiating the equation m times:
        sum_i sum_l C(m,l) c_i^(m-l) psi^(i+l) = f^(m).
        """
        n = self.n
        if order < n:
            return np.eye(n)[: order + 1], np.zeros(order + 1)
        depth = order - n
        cj = [eval_jet(c, x, depth) for c in self.coeffs]
        fj = eval_jet(self.f, x, depth)
        lead = cj[n][0]
        if lead == 0:
            raise DegenerateInterface(f"leading coefficient vanishes at x={x}")
        dtype = np.result_type(*[np.asarray(v) for v in cj], np.asarray(fj))
        E = np.zeros((order + 1, n), dtype=dtype)
        e = np.zeros(order + 1, dtype=dtype)
        E[:n, :n] = np.eye(n)
        for m in range(depth + 1):
            row_E = np.zeros(n, dtype=dtype)
            row_e = fj[m]
            for i in range(n + 1):
                for l in range(m + 1):
                    if i == n and l == m:
                        continue
                    coef = comb(m, l) * cj[i][m - l]
                    if coef != 0:
                        row_E = row_E - coef * E[i + l]
                        row_e = row_e - coef * e[i + l]
            E[n + m] = row_E / lead
            e[n + m] = row_e / lead
        return E, e


def smooth_restriction(spec: ProblemSpec, interval: Tuple[float, float]) -> SmoothODE:
    """Coefficients a_i + b_i of the regular interval containing ``interval``"""
    mid = 0.5 * (interval[0] + interval[1])
    coeffs = tuple(
        expr_add(lateral_piece(a, mid, "right"), lateral_piece(b, mid, "right"))
        for a, b in zip(spec.a, spec.b)
    )
    return SmoothODE(coeffs, spec.f)


def _lateral_ode(spec, x0, side):
    coeffs = tuple(
        expr_add(lateral_piece(a, x0, side), lateral_piece(b, x0, side))
        for a, b in zip(spec.a, spec.b)
    )
    return SmoothODE(coeffs, spec.f)


class SolutionFn:
    """Dense solution of a smooth IVP on a closed interval.

    Derivatives 0..n-1 come from the integrator's dense output, higher ones
    from the equation itself.
    """

    def __init__(self, ode: SmoothODE, interval, anchor, initial, rtol=config.RTOL, atol=config.ATOL):
        self.ode = ode
        self.interval = (float(interval[0]), float(interval[1]))
        self.anchor = float(anchor)
        self.n = ode.n
        self.rtol, self.atol = rtol, atol
        lo, hi = self.interval
        if not lo - self._slack() <= self.anchor <= hi + self._slack():
            raise ProblemError(f"anchor {anchor} outside interval [{lo}, {hi}]")
        dtype = complex if (np.iscomplexobj(initial) or ode.is_complex(0.5 * (lo + hi))) else float
        self.initial = np.asarray(initial, dtype=dtype)
        if self.initial.shape != (self.n,):
            raise ProblemError(f"initial jet needs {self.n} values, got {self.initial.shape}")
        self._right = self._integrate(hi) if self.anchor < hi else None
        self._left = self._integrate(lo) if self.anchor > lo else None
        self._jets: Dict[Tuple[float, int], np.ndarray] = {}

    def _slack(self):
        return 1e-9 * (1.0 + self.interval[1] - self.interval[0])

    def _integrate(self, end):
        sol = solve_ivp(self.ode.companion, (self.anchor, end), self.initial, method="DOP853",
                        dense_output=True, rtol=self.rtol, atol=self.atol)
        if not sol.success:
            raise IntegrationError(f"integration from {self.anchor} to {end} failed: {sol.message}")
        logger.debug("DOP853 %g -> %g: %d rhs evaluations", self.anchor, end, sol.nfev)
        return sol.sol

    def state(self, x):
        """[psi, ..., psi^(n-1)] at x (shape (n,) or (n, len(x)))"""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.interval
        if np.any(xs < lo - self._slack()) or np.any(xs > hi + self._slack()):
            raise ProblemError(f"evaluation outside [{lo}, {hi}]")
        xs = np.clip(xs, lo, hi)
        out = np.empty((self.n, xs.size), dtype=self.initial.dtype)
        right = xs >= self.anchor
        if self.n:
            at_anchor = xs == self.anchor
            out[:, at_anchor] = self.initial[:, None]
            rest_r = right & ~at_anchor
            if rest_r.any():
                out[:, rest_r] = self._right(xs[rest_r]).reshape(self.n, -1)
            if (~right).any():
                out[:, ~right] = self._left(xs[~right]).reshape(self.n, -1)
        return out[:, 0] if np.ndim(x) == 0 else out

    def jet(self, x: float, k: int) -> np.ndarray:
        """psi, ..., psi^(k) at a scalar x"""
        key = (float(x), int(k))
        cached = self._jets.get(key)
        if cached is None:
            ybar = self.state(float(x))
            if k < self.n:
                cached = ybar[: k + 1]
            else:
                E, e = self.ode.jet_map(float(x), k)
                cached = E @ ybar + e
            self._jets[key] = cached
        return cached

    def derivative(self, x, k: int = 0):
        if np.ndim(x) == 0:
            v = self.jet(float(x), k)[k]
            return complex(v) if np.iscomplexobj(v) else float(v)
        xs = np.asarray(x, dtype=float)
        if k < self.n:
            return self.state(xs)[k]
        return np.array([self.jet(float(s), k)[k] for s in xs.ravel()]).reshape(xs.shape)

    def __call__(self, x):
        return self.derivative(x, 0)

    def as_expr(self, label: str = "psi") -> Numeric:
        return Numeric(label, self.derivative, 0)

    def ode_defect(self, samples: int = config.CHECK_MESH) -> float:
        """Relative residual of the smooth ODE, cell by cell on a check mesh.

        The increment of psi^(n-1) over each cell is compared with the
        Gauss-Legendre integral of psi^(n) taken from the equation, so the
        dense output is never differenced.
        """
        lo, hi = self.interval
        edges = np.linspace(lo, hi, samples + 1)
        mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
        nodes, weights = np.polynomial.legendre.leggauss(8)
        xs = (mid[:, None] + half[:, None] * nodes).ravel()
        y = self.state(xs)
        terms = [evaluate(c, xs) * y[i] for i, c in enumerate(self.ode.coeffs[:-1])]
        lead = evaluate(self.ode.coeffs[-1], xs)
        rhs = evaluate(self.ode.f, xs)
        top = (rhs - sum(terms)) / lead
        integral = (top.reshape(samples, -1) @ weights) * half
        increments = np.diff(self.state(edges)[-1])
        residual = np.abs(increments - integral) / (2 * half)
        scale_ = np.max((sum(np.abs(t) for t in terms) + np.abs(rhs)) / np.abs(lead))
        return float(np.max(residual) / scale_) if scale_ > 0 else float(np.max(residual))


def solve_smooth_ivp(ode: SmoothODE, interval, x0: float, C, rtol=config.RTOL, atol=config.ATOL) -> SolutionFn:
    """Unique smooth solution with [psi, ..., psi^(n-1)](x0) = C"""
    lo, hi = interval
    check_pole_free(ode.coeffs[-1], lo, hi)
    if np.min(np.abs(evaluate(ode.coeffs[-1], np.linspace(lo, hi, config.POLE_SAMPLES)))) == 0:
        raise SectionallySingular(f"leading coefficient vanishes on [{lo}, {hi}]")
    return SolutionFn(ode, interval, x0, C, rtol, atol)


def fundamental_system(ode: SmoothODE, interval, anchor: float, rtol=config.RTOL, atol=config.ATOL,
                       max_workers: Optional[int] = None):
    """n homogeneous solutions with unit jets at anchor and a particular one with zero jet"""
    n = ode.n
    homogeneous = ode.homogeneous()
    jobs = [(homogeneous, np.eye(n)[j]) for j in range(n)] + [(ode, np.zeros(n))]
    with ThreadPoolExecutor(max_workers=max_workers or config.max_threads()) as pool:
        solutions = list(pool.map(lambda job: solve_smooth_ivp(job[0], interval, anchor, job[1], rtol, atol), jobs))
    return solutions[:n], solutions[n]


# ============================================================================
# VALIDATION
# ============================================================================

@dataclass(frozen=True)
class ValidationReport:
    n: int
    M: int
    singular_points: Tuple[float, ...]
    intervals: Tuple[Tuple[float, float], ...]
    regime: str
    warnings: Tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "M": self.M,
            "singular_points": list(self.singular_points),
            "regime": self.regime,
            "warnings": list(self.warnings),
        }


def _intervals(domain, points):
    edges = [domain[0]] + list(points) + [domain[1]]
    return list(zip(edges, edges[1:]))


def validate(spec: ProblemSpec) -> ValidationReport:
    """Check sectional regularity and the interface pivots; report n, M and the regime"""
    spec = _normalized(spec)
    n = spec.n
    points = singular_points(spec)
    intervals = _intervals(spec.domain, points)
    leading = []
    for interval in intervals:
        ode = smooth_restriction(spec, interval)
        try:
            for e in ode.coeffs + (ode.f,):
                check_pole_free(e, *interval)
        except EvaluationError as exc:
            raise ProblemError(f"coefficient not pole-free on {interval}: {exc}") from exc
        samples = np.abs(evaluate(ode.coeffs[-1], np.linspace(*interval, config.POLE_SAMPLES)))
        leading.append(samples)
    scale_ = max(1.0, max(float(np.max(s)) for s in leading))
    for interval, samples in zip(intervals, leading):
        if np.min(samples) <= config.LEADING_RTOL * scale_:
            raise SectionallySingular(
                f"leading coefficient a_n + b_n vanishes on [{interval[0]}, {interval[1]}]"
            )
    for x0 in points:
        cross = evaluate(lateral_piece(spec.a[n], x0, "left"), x0) + evaluate(lateral_piece(spec.b[n], x0, "right"), x0)
        if abs(cross) <= config.LEADING_RTOL * scale_:
            raise DegenerateInterface(f"a_n(x0-) + b_n(x0+) = 0 at x0={x0}")
    M = max((dist_order(c) for c in spec.a + spec.b), default=0)
    regime = "M<=n" if M <= n else "M>n"
    warnings = []
    if not points:
        warnings.append("no singular points: the problem is a smooth ODE")
    logger.debug("validated: n=%d M=%d singular points %s", n, M, points)
    return ValidationReport(n, M, tuple(points), tuple(intervals), regime, tuple(warnings))


# ============================================================================
# INTERFACE SYSTEMS
# ============================================================================

@dataclass(frozen=True)
class InterfaceSystem:
    point: float
    n: int
    M: int
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    delta_minus: np.ndarray
    delta_plus: np.ndarray
    delta_offset: np.ndarray
    classification: str
    rank_A: int
    rank_B: int
    dim_W: int
    near_threshold: bool = False

    @property
    def ker_A_dim(self) -> int:
        return self.n - self.rank_A

    @property
    def ker_B_dim(self) -> int:
        return self.n - self.rank_B

    @property
    def offset_nonzero(self) -> bool:
        scale_ = max(1.0, np.max(np.abs(self.A), initial=0.0), np.max(np.abs(self.B), initial=0.0))
        return bool(np.max(np.abs(self.c), initial=0.0) > 1e-12 * scale_)

    def delta_coefficients(self, jet_minus, jet_plus) -> np.ndarray:
        """d_k of Delta = sum d_k delta^(k)(x - x0) for given lateral jets"""
        return self.delta_minus @ np.asarray(jet_minus) + self.delta_plus @ np.asarray(jet_plus) + self.delta_offset

    def mismatch(self, jet_minus, jet_plus) -> np.ndarray:
        return self.B @ np.asarray(jet_plus) - self.A @ np.asarray(jet_minus) - self.c

    def as_dict(self) -> dict:
        return {
            "point": self.point,
            "classification": self.classification,
            "M": self.M,
            "rank_A": self.rank_A,
            "rank_B": self.rank_B,
            "dim_W": self.dim_W,
            "offset_nonzero": self.offset_nonzero,
            "near_threshold": self.near_threshold,
        }


def apply_operator(spec: ProblemSpec, psi: DistA) -> DistA:
    """L[psi] = sum_i a_i * psi^(i) + psi^(i) * b_i"""
    total = zero()
    d_psi = psi
    for i in range(spec.n + 1):
        if i:
            d_psi = derivative(d_psi, 1)
        if not _is_zero(spec.a[i]):
            total = add(total, star(spec.a[i], d_psi))
        if not _is_zero(spec.b[i]):
            total = add(total, star(d_psi, spec.b[i]))
    return total


def _rank(matrix):
    if matrix.size == 0:
        return 0, False
    s = scipy.linalg.svd(matrix, compute_uv=False)
    if s[0] == 0:
        return 0, False
    threshold = config.RANK_RTOL * s[0]
    near = bool(np.any((s > threshold / 10) & (s < threshold * 10)))
    return int(np.sum(s > threshold)), near


def _classification(A, B):
    n = A.shape[0]
    rank_A, near_A = _rank(A)
    rank_B, near_B = _rank(B)
    rank_AB, near_AB = _rank(np.hstack([A, B]))
    dim_W = rank_A + rank_B - rank_AB
    if dim_W == 0:
        tag = "separating"
    elif dim_W == n:
        tag = "interacting"
    else:
        tag = "partially_interacting"
    return {
        "classification": tag, "rank_A": rank_A, "rank_B": rank_B, "dim_W": dim_W,
        "near_threshold": near_A or near_B or near_AB,
    }


def classify(sys: InterfaceSystem) -> str:
    """separating / interacting / partially_interacting from dim(Ran A n Ran B)"""
    return _classification(np.asarray(sys.A), np.asarray(sys.B))["classification"]


def _jet_basis(x0, j, side):
    mono = expr_scale(1.0 / factorial(j), expr_power(expr_sub(X, x0), j))
    pieces = (mono, ZERO) if side == "left" else (ZERO, mono)
    return DistA(PiecewisePart((float(x0),), pieces))


def build_interface_system(spec: ProblemSpec, x0: float) -> InterfaceSystem:
    """Match delta coefficients of L[psi] at x0.

    Unknowns are the coefficients d_k of Delta (k < M - n) and the lateral
    jets psi_-^(j)(x0), psi_+^(j)(x0). Rows are delta orders 0..max(n, M)-1.
    Rows of order >= n fix d (upper triangular, pivot a_n(x0-) + b_n(x0+));
    jets of order >= n are eliminated through the lateral equations; the
    remaining n rows give B psi_+ = A psi_- + c.
    """
    spec = _normalized(spec)
    x0 = float(x0)
    n = spec.n
    M = _local_order(spec, x0)
    D = max(0, M - n)
    J = n + max(M, 1) - 1
    R = max(n, M)

    basis = [dirac(x0, k) for k in range(D)]
    basis += [_jet_basis(x0, j, "left") for j in range(J + 1)]
    basis += [_jet_basis(x0, j, "right") for j in range(J + 1)]
    images = [apply_operator(spec, psi) for psi in basis]
    dtype = np.result_type(float, *[np.asarray(c) for img in images for _, _, c in img.deltas])
    G = np.zeros((R, len(basis)), dtype=dtype)
    for col, image in enumerate(images):
        for order, coef in image.deltas.at(x0).items():
            if order >= R:
                raise DegenerateInterface(f"unexpected delta order {order} at x0={x0}")
            G[order, col] = coef
    G_d, G_m, G_p = G[:, :D], G[:, D:D + J + 1], G[:, D + J + 1:]

    left, right = _lateral_ode(spec, x0, "left"), _lateral_ode(spec, x0, "right")
    for ode, side in ((left, "-"), (right, "+")):
        if evaluate(ode.coeffs[-1], x0) == 0:
            raise DegenerateInterface(f"lateral leading coefficient a_n{side} + b_n{side} vanishes at x0={x0}")
    E_m, e_m = left.jet_map(x0, J)
    E_p, e_p = right.jet_map(x0, J)
    P_m, P_p = G_m @ E_m, G_p @ E_p
    q = G_m @ e_m + G_p @ e_p

    if D:
        top = slice(n, n + D)
        S = G_d[top]
        pivot = evaluate(lateral_piece(spec.a[n], x0, "left"), x0) + evaluate(lateral_piece(spec.b[n], x0, "right"), x0)
        if abs(pivot) == 0 or np.any(np.abs(np.diag(S)) <= config.LEADING_RTOL * abs(pivot)):
            raise DegenerateInterface(f"a_n(x0-) + b_n(x0+) = 0 at x0={x0}")
        rhs = -np.hstack([P_m[top], P_p[top], q[top][:, None]])
        sol = scipy.linalg.solve_triangular(S, rhs, lower=False)
        Dm, Dp, d0 = sol[:, :n], sol[:, n:2 * n], sol[:, 2 * n]
    else:
        Dm = np.zeros((0, n))
        Dp = np.zeros((0, n))
        d0 = np.zeros(0)
    low = slice(0, n)
    R_m = P_m[low] + G_d[low] @ Dm
    R_p = P_p[low] + G_d[low] @ Dp
    r = q[low] + G_d[low] @ d0
    A, B, c = -R_m, R_p, -r
    info = _classification(A, B)
    system = InterfaceSystem(x0, n, M, A, B, c, Dm, Dp, d0, **info)
    if system.offset_nonzero:
        logger.warning("interface at x0=%g has a nonzero affine offset c=%s", x0, c)
    if system.near_threshold:
        logger.warning("interface at x0=%g: singular values near the rank threshold", x0)
    logger.info("interface at x0=%g: %s (rank A=%d, rank B=%d, dim W=%d)",
                x0, system.classification, system.rank_A, system.rank_B, system.dim_W)
    return system


@dataclass(frozen=True)
class KernelSets:
    system: InterfaceSystem

    def _in_range(self, target, vector):
        vector = np.asarray(vector)
        if not np.any(vector):
            return True
        x, *_ = scipy.linalg.lstsq(target, vector)
        return bool(np.linalg.norm(target @ x - vector) <= config.CONSISTENCY_RTOL * max(1.0, np.linalg.norm(vector)))

    def in_K_A(self, jet_minus) -> bool:
        """A X in Ran B: data arriving from the left can be continued"""
        return self._in_range(self.system.B, self.system.A @ np.asarray(jet_minus) + self.system.c)

    def in_K_B(self, jet_plus) -> bool:
        return self._in_range(self.system.A, self.system.B @ np.asarray(jet_plus) - self.system.c)

    @property
    def unique_from_left(self) -> bool:
        return self.system.ker_B_dim == 0

    @property
    def unique_from_right(self) -> bool:
        return self.system.ker_A_dim == 0

    def outlook(self) -> dict:
        return {
            "unique_from_left": self.unique_from_left,
            "unique_from_right": self.unique_from_right,
            "family_dim_from_left": self.system.ker_B_dim,
            "family_dim_from_right": self.system.ker_A_dim,
        }


def kernel_sets(sys: InterfaceSystem) -> KernelSets:
    return KernelSets(sys)


# ============================================================================
# GLOBAL SOLUTIONS
# ============================================================================

@dataclass(frozen=True)
class Existence:
    kind: str
    dim: int = 0

    def __str__(self):
        return f"affine_family({self.dim})" if self.kind == "affine_family" else self.kind


@dataclass(frozen=True)
class GeneralizedSolution:
    spec: ProblemSpec
    points: Tuple[float, ...]
    intervals: Tuple[Tuple[float, float], ...]
    pieces: Tuple[SolutionFn, ...]
    delta: DeltaPart
    existence: Existence
    interfaces: Tuple[InterfaceSystem, ...]
    coordinates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kernel_basis: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.spec.n

    def piece_at(self, x: float, side: str = "right") -> SolutionFn:
        idx = np.searchsorted(self.points, x, side="right" if side == "right" else "left")
        return self.pieces[int(idx)]


def _anchors(intervals, points):
    if not points:
        return [intervals[0][0]]
    return [intervals[0][1]] + [a for a, _ in intervals[1:]]


def _affine_jets(fs, ode, x, order):
    """Jets at x of the interval solution as (Mx, m): jets = Mx @ kappa + m"""
    homogeneous, particular = fs
    Phi = np.column_stack([h.state(x) for h in homogeneous])
    p = particular.state(x)
    if order < ode.n:
        return Phi[: order + 1], p[: order + 1]
    E, e = ode.jet_map(x, order)
    return E @ Phi, E @ p + e


def _solve_assembled(K, rhs):
    """Minimum-norm solution, nullspace basis and consistency of K kappa = rhs"""
    K = np.array(K, dtype=np.result_type(K, rhs, float))
    rhs = np.array(rhs, dtype=K.dtype)
    row_scale = np.max(np.abs(K), axis=1)
    zero_rows = row_scale == 0
    if np.any(np.abs(rhs[zero_rows]) > 0):
        return None, None, False
    K, rhs = K[~zero_rows] / row_scale[~zero_rows, None], rhs[~zero_rows] / row_scale[~zero_rows]
    # drop round-off before column scaling
    K[np.abs(K) <= 1e-14] = 0.0
    col_scale = np.max(np.abs(K), axis=0)
    col_scale[col_scale == 0] = 1.0
    Ks = K / col_scale
    U, s, Vh = scipy.linalg.svd(Ks)
    rank = int(np.sum(s > config.RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    y = Vh[:rank].conj().T @ ((U[:, :rank].conj().T @ rhs) / s[:rank])
    consistent = np.linalg.norm(Ks @ y - rhs) <= config.CONSISTENCY_RTOL * max(1.0, np.linalg.norm(rhs))
    kappa = y / col_scale
    null = Vh[rank:].conj().T / col_scale[:, None]
    if null.shape[1]:
        null = scipy.linalg.orth(null)
        kappa = kappa - null @ (null.conj().T @ kappa)
    return kappa, null, bool(consistent)


def _solve_global(spec, condition, rtol, atol, check=True):
    report = validate(spec)
    spec = _normalized(spec)
    n = spec.n
    points = list(report.singular_points)
    intervals = list(report.intervals)
    anchors = _anchors(intervals, points)
    odes = [smooth_restriction(spec, iv) for iv in intervals]
    interfaces = [build_interface_system(spec, p) for p in points]

    with ThreadPoolExecutor(max_workers=config.max_threads()) as pool:
        systems = list(pool.map(
            lambda i: fundamental_system(odes[i], intervals[i], anchors[i], rtol, atol, max_workers=1),
            range(len(intervals)),
        ))

    size = n * len(intervals)
    rows, rhs = [], []

    def block(i, coeffs):
        row = np.zeros((coeffs.shape[0], size), dtype=np.result_type(coeffs, float))
        row[:, n * i:n * (i + 1)] = coeffs
        return row

    for p_idx, (p, sys) in enumerate(zip(points, interfaces)):
        Phi_L, p_L = _affine_jets(systems[p_idx], odes[p_idx], p, n - 1)
        Phi_R, p_R = _affine_jets(systems[p_idx + 1], odes[p_idx + 1], p, n - 1)
        rows.append(block(p_idx, -sys.A @ Phi_L) + block(p_idx + 1, sys.B @ Phi_R))
        rhs.append(sys.c + sys.A @ p_L - sys.B @ p_R)

    if isinstance(condition, IVPCondition):
        x0 = float(condition.x0)
        lo, hi = spec.domain
        if not lo <= x0 <= hi:
            raise ProblemError(f"initial point {x0} outside the domain [{lo}, {hi}]")
        if x0 in points:
            raise ProblemError(f"initial point {x0} is a singular point")
        if len(condition.C) != n:
            raise ProblemError(f"initial condition needs {n} values, got {len(condition.C)}")
        k = int(np.searchsorted(points, x0))
        Phi, p = _affine_jets(systems[k], odes[k], x0, n - 1)
        rows.append(block(k, Phi))
        rhs.append(np.asarray(condition.C) - p)
    else:
        for bc in condition:
            if bc.endpoint not in ("lo", "hi"):
                raise ProblemError(f"boundary endpoint must be 'lo' or 'hi', got {bc.endpoint!r}")
            k = 0 if bc.endpoint == "lo" else len(intervals) - 1
            x = spec.domain[0] if bc.endpoint == "lo" else spec.domain[1]
            Mx, m = _affine_jets(systems[k], odes[k], x, bc.jet_order)
            rows.append(block(k, Mx[bc.jet_order][None, :]))
            rhs.append(np.atleast_1d(bc.value - m[bc.jet_order]))

    K = np.vstack(rows) if rows else np.zeros((0, size))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    kappa, null, consistent = _solve_assembled(K, b)

    if not consistent:
        logger.info("no generalized solution: interface or boundary rows are inconsistent")
        return GeneralizedSolution(spec, tuple(points), tuple(intervals), (), DeltaPart(),
                                   Existence("none"), tuple(interfaces),
                                   diagnostics={"piecewise_sup": float("nan"), "delta_norm": float("nan")})
    existence = Existence("affine_family", null.shape[1]) if null.shape[1] else Existence("unique")

    pieces = tuple(
        SolutionFn(odes[i], intervals[i], anchors[i], kappa[n * i:n * (i + 1)], rtol, atol)
        for i in range(len(intervals))
    )
    delta = _assemble_delta(points, interfaces, pieces, n)
    sol = GeneralizedSolution(spec, tuple(points), tuple(intervals), pieces, delta, existence,
                              tuple(interfaces), kappa, null)
    if check:
        piecewise_sup, delta_norm = residual(spec, sol)
        sol.diagnostics.update({
            "piecewise_sup": piecewise_sup,
            "delta_norm": delta_norm,
            "ode_defect": max((p.ode_defect() for p in pieces), default=0.0),
        })
    logger.info("existence: %s", existence)
    return sol


def _assemble_delta(points, interfaces, pieces, n):
    terms = {}
    for idx, (p, sys) in enumerate(zip(points, interfaces)):
        if not sys.delta_offset.size:
            continue
        jm = pieces[idx].jet(p, n - 1)
        jp = pieces[idx + 1].jet(p, n - 1)
        for k, d in enumerate(sys.delta_coefficients(jm, jp)):
            terms[(p, k)] = d
    return DeltaPart.from_dict(terms)


def solve_ivp_global(spec: ProblemSpec, x0: float, C: Sequence, rtol=config.RTOL, atol=config.ATOL,
                     check: bool = True) -> GeneralizedSolution:
    """Generalized solution with [psi, ..., psi^(n-1)](x0) = C at a regular point x0"""
    return _solve_global(spec, IVPCondition(float(x0), tuple(C)), rtol, atol, check)


def solve_bvp_global(spec: ProblemSpec, boundary: Sequence[BoundaryRow], rtol=config.RTOL, atol=config.ATOL,
                     check: bool = True) -> GeneralizedSolution:
    """Generalized solution subject to endpoint jet conditions"""
    return _solve_global(spec, list(boundary), rtol, atol, check)


def to_distribution(sol: GeneralizedSolution) -> DistA:
    """psi as an element of the algebra (numeric pieces plus Delta)"""
    if not sol.pieces:
        raise ProblemError("no solution to convert")
    leaves = tuple(p.as_expr(f"psi{i}") for i, p in enumerate(sol.pieces))
    return DistA(PiecewisePart(tuple(sol.points), leaves), sol.delta)


def residual(spec: ProblemSpec, sol: GeneralizedSolution) -> Tuple[float, float]:
    """(sup of the regular part, max |delta coefficient|) of L[psi] - f.

    Both are relative to max(1, sup |a_n + b_n|) over the intervals.
    """
    spec = _normalized(spec)
    psi = to_distribution(sol)
    defect = sub(apply_operator(spec, psi), smooth(spec.f))
    lo, hi = spec.domain
    sup = 0.0
    leading = 1.0
    for a, b in sol.intervals:
        xs = a + (b - a) * (np.arange(config.CHECK_MESH) + 0.5) / config.CHECK_MESH
        lead = smooth_restriction(spec, (a, b)).coeffs[-1]
        leading = max(leading, float(np.max(np.abs(evaluate(lead, xs)))))
        for x in xs:
            sup = max(sup, abs(evaluate(lateral_piece(defect, x, "right"), x)))
    delta_norm = max((abs(c) for x, _, c in defect.deltas if lo < x < hi), default=0.0)
    return float(sup) / leading, float(delta_norm) / leading


def sample_solution(sol: GeneralizedSolution, mesh: Sequence[float]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Values and derivatives 0..n-1 on mesh, plus the Dirac part as rows"""
    n = sol.n
    columns = ["x", "interval", "side"] + [f"d{k}" for k in range(n)]
    delta_rows = pd.DataFrame(
        [{"point": x, "order": k, "re": complex(c).real, "im": complex(c).imag} for x, k, c in sol.delta],
        columns=["point", "order", "re", "im"],
    )
    mesh = np.sort(np.asarray(mesh, dtype=float))
    if not mesh.size or not sol.pieces:
        return pd.DataFrame(columns=columns), delta_rows
    lo, hi = sol.spec.domain
    if mesh[0] < lo or mesh[-1] > hi:
        raise ProblemError(f"mesh leaves the domain [{lo}, {hi}]")
    records = []
    for x in mesh:
        idx = int(np.searchsorted(sol.points, x, side="right"))
        sides = [("left", idx - 1), ("right", idx)] if x in sol.points else [("", idx)]
        for side, i in sides:
            values = sol.pieces[i].state(float(x))
            records.append([x, i, side] + list(values))
    table = pd.DataFrame(records, columns=columns)
    for k in range(n):
        col = table[f"d{k}"]
        if np.iscomplexobj(col.to_numpy()):
            values = col.to_numpy()
            table[f"d{k}"] = values.real
            if np.any(values.imag):
                table[f"d{k}_im"] = values.imag
    return table, delta_rows


# ============================================================================
# PROBLEM FILES
# ============================================================================

def problem_from_json(doc: dict):
    """(ProblemSpec, condition) from a problem document"""
    try:
        n = int(doc["n"])
        a = tuple(from_json(c) for c in doc["a"])
        b = tuple(from_json(c) for c in doc.get("b", [0] * (n + 1)))
        f = parse_expr(str(doc.get("f", "0")))
        domain = tuple(float(v) for v in doc["domain"])
        terms = tuple(
            DivergenceTerm(int(t["outer"]), int(t["inner"]), from_json(t["coefficient"]), t.get("side", "left"))
            for t in doc.get("divergence_terms", [])
        )
    except (KeyError, TypeError) as exc:
        raise ProblemError(f"malformed problem document: {exc}") from exc
    spec = ProblemSpec(n, a, b, f, domain, terms)
    cond = doc.get("condition")
    if not isinstance(cond, dict):
        raise ProblemError("problem document needs a 'condition' object")
    if cond.get("type") == "ivp":
        C = tuple(_scalar(v) for v in cond.get("C", []))
        return spec, IVPCondition(float(cond["x0"]), C)
    if cond.get("type") == "bvp":
        rows = [BoundaryRow(r["endpoint"], int(r["jet_order"]), _scalar(r.get("value", 0.0)))
                for r in cond.get("rows", [])]
        return spec, rows
    raise ProblemError(f"unknown condition type {cond.get('type')!r}")


def _scalar(v):
    if isinstance(v, dict):
        return complex(float(v.get("re", 0.0)), float(v.get("im", 0.0)))
    return float(v)
