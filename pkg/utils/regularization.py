"""
Smooth regularization families of distributions in the algebra.

``regularize(F, eps, side)`` returns F_eps shifted by eps to the right (side
'plus') or left (side 'minus'). Away from the collars [p - eps, p + eps] around
the singular points of the regular part, F_eps coincides with the pieces of F;
inside a collar the two lateral pieces are blended by a smooth step, and every
delta term c * delta^(j)(x - p) becomes c times the j-th derivative of a unit
mass bump kernel centred at p.

The weak residuals measure how far <F_eps^+ psi, t> is from <F*psi, t>
(resp. <F_eps^- psi, t> from <psi*F, t>) along a decreasing eps schedule.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial
from scipy.integrate import quad

from utils import config
from utils.dist_algebra import (
    DistA, canonicalize, derivative, lateral_piece, pair_with_test, sing_supp, star,
)
from utils.smooth_fn import SmoothExpr, as_expr, eval_jet, evaluate, quad_complex

logger = logging.getLogger(__name__)

SIDES = ("plus", "minus")


class RegularizationError(ValueError):
    pass


# ============================================================================
# BUMP KERNEL
# ============================================================================

@lru_cache(maxsize=None)
def _bump_numerator(k):
    """P_k with phi^(k)(u) = P_k(u) / (1 - u^2)^(2k) * phi(u)"""
    if k == 0:
        return Polynomial([1.0])
    p = _bump_numerator(k - 1)
    j = k - 1
    one_minus_u2 = Polynomial([1.0, 0.0, -1.0])
    u = Polynomial([0.0, 1.0])
    return p.deriv() * one_minus_u2 ** 2 + 4 * j * u * one_minus_u2 * p - 2 * u * p


def bump_profile(u, k: int = 0):
    """k-th derivative of exp(-1/(1 - u^2)) on (-1, 1), zero outside"""
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    w = 1.0 - ui * ui
    out[inside] = _bump_numerator(k)(ui) / w ** (2 * k) * np.exp(-1.0 / w)
    return float(out[0]) if scalar else out


@lru_cache(maxsize=None)
def bump_normalizer() -> float:
    value, _ = quad(lambda s: bump_profile(s), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return value


@lru_cache(maxsize=65536)
def smooth_step(u: float) -> float:
    """0 for u <= -1, 1 for u >= 1, normalized integral of the bump between"""
    if u <= -1.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    if u > 0.0:
        return 1.0 - smooth_step(-u)
    value, _ = quad(lambda s: bump_profile(s), -1.0, u, epsabs=1e-14, epsrel=1e-13)
    return value / bump_normalizer()


def _step_derivative(u, j):
    if j == 0:
        return smooth_step(u)
    return bump_profile(u, j - 1) / bump_normalizer()


@dataclass(frozen=True)
class Kernel:
    """Unit-mass bump supported in [x0 - eps, x0 + eps]"""
    x0: float
    eps: float

    def __call__(self, x, k: int = 0):
        u = (np.asarray(x, dtype=float) - self.x0) / self.eps
        return bump_profile(u, k) / (bump_normalizer() * self.eps ** (1 + k))

    @property
    def support(self) -> Tuple[float, float]:
        return (self.x0 - self.eps, self.x0 + self.eps)


def bump_mollifier(x0: float, eps: float) -> Kernel:
    if not eps > 0:
        raise RegularizationError(f"eps must be positive, got {eps}")
    return Kernel(float(x0), float(eps))


# ============================================================================
# REGULARIZED FUNCTIONS
# ============================================================================

@dataclass(frozen=True)
class RegularizedFn:
    base: DistA
    epsilon: float
    side: str
    blend_points: Tuple[float, ...] = field(default=())

    @property
    def shift(self) -> float:
        return self.epsilon if self.side == "plus" else -self.epsilon

    def edges(self) -> List[float]:
        """Collar and kernel-support edges after the shift"""
        centres = sorted(set(self.blend_points) | set(self.base.deltas.points()))
        out = []
        for p in centres:
            out.extend([p - self.epsilon + self.shift, p + self.shift, p + self.epsilon + self.shift])
        return out

    def jet(self, x: float, k: int = 0) -> List[complex]:
        """Derivatives 0..k at x"""
        eps = self.epsilon
        y = float(x) - self.shift
        values = np.zeros(k + 1, dtype=complex)
        collar = next((p for p in self.blend_points if abs(y - p) < eps), None)
        if collar is None:
            values += np.asarray(eval_jet(lateral_piece(self.base, y, "right"), y, k))
        else:
            jl = np.asarray(eval_jet(lateral_piece(self.base, collar, "left"), y, k), dtype=complex)
            jr = np.asarray(eval_jet(lateral_piece(self.base, collar, "right"), y, k), dtype=complex)
            u = (y - collar) / eps
            steps = [_step_derivative(u, j) / eps ** j for j in range(k + 1)]
            for m in range(k + 1):
                values[m] += jl[m] + sum(comb(m, j) * steps[j] * (jr - jl)[m - j] for j in range(m + 1))
        for p, j, c in self.base.deltas:
            if abs(y - p) < eps:
                kernel = Kernel(p, eps)
                for m in range(k + 1):
                    values[m] += c * kernel(y, j + m)
        return [v.real if v.imag == 0 else v for v in values]

    def __call__(self, x):
        if np.ndim(x) == 0:
            return self.jet(float(x), 0)[0]
        return np.array([self.jet(float(s), 0)[0] for s in np.ravel(x)]).reshape(np.shape(x))


def regularize(F: DistA, eps: float, side: str) -> RegularizedFn:
    """Smooth family member F_eps^side"""
    if side not in SIDES:
        raise RegularizationError(f"side must be one of {SIDES}, got {side!r}")
    if not eps > 0:
        raise RegularizationError(f"eps must be positive, got {eps}")
    F = canonicalize(F)
    blend = tuple(sing_supp(DistA(F.piecewise)))
    centres = sorted(set(blend) | set(F.deltas.points()))
    gaps = np.diff(centres)
    if len(gaps) and eps >= 0.5 * gaps.min():
        raise RegularizationError(
            f"eps too large: {eps} must be below half the minimal breakpoint gap {0.5 * gaps.min()}"
        )
    return RegularizedFn(F, float(eps), side, blend)


# ============================================================================
# WEAK PAIRINGS
# ============================================================================

def _support(support):
    return tuple(support) if support is not None else config.WORKING_DOMAIN


def pair_regularized(R: RegularizedFn, psi: Optional[DistA], t: SmoothExpr,
                     support: Tuple[float, float]) -> complex:
    """<R psi, t>: quadrature on the regular part, pointwise on the deltas of psi.

    ``psi=None`` pairs R itself with t.
    """
    lo, hi = support
    t = as_expr(t)
    edges = R.edges()
    if psi is None:
        return quad_complex(lambda s: R(s) * evaluate(t, s), lo, hi, points=edges)
    psi = canonicalize(psi)
    bounds = [lo] + [x for x in psi.breakpoints if lo < x < hi] + [hi]
    total = 0.0
    for a, b in zip(bounds, bounds[1:]):
        piece = lateral_piece(psi, 0.5 * (a + b), "right")
        total += quad_complex(lambda s, p=piece: R(s) * evaluate(p, s) * evaluate(t, s), a, b, points=edges)
    for x, j, c in psi.deltas:
        if lo < x < hi:
            rj = R.jet(x, j)
            tj = eval_jet(t, x, j)
            leibniz = sum(comb(j, l) * rj[l] * tj[j - l] for l in range(j + 1))
            total += c * (-1) ** j * leibniz
    return total


def weak_residual(F: DistA, psi: DistA, t, eps: float, side: str,
                  support: Optional[Tuple[float, float]] = None) -> float:
    """|<F_eps psi, t> - <F*psi, t>| (plus) or against <psi*F, t> (minus)"""
    support = _support(support)
    R = regularize(F, eps, side)
    approx = pair_regularized(R, psi, t, support)
    exact = pair_with_test(star(F, psi) if side == "plus" else star(psi, F), t, support)
    return float(abs(approx - exact))


def distributional_residual(F: DistA, t, eps: float, side: str,
                            support: Optional[Tuple[float, float]] = None) -> float:
    """|<F_eps, t> - <F, t>|"""
    support = _support(support)
    approx = pair_regularized(regularize(F, eps, side), None, t, support)
    return float(abs(approx - pair_with_test(F, t, support)))


def limit_ode_residual(spec, psi: DistA, t, eps: float,
                       support: Optional[Tuple[float, float]] = None) -> float:
    """|sum_i <a_i,eps^+ psi^(i) + b_i,eps^- psi^(i), t> - <f, t>| for a problem spec"""
    support = _support(support)
    total = 0.0
    for i in range(spec.n + 1):
        d_psi = derivative(psi, i)
        total += pair_regularized(regularize(spec.a[i], eps, "plus"), d_psi, t, support)
        total += pair_regularized(regularize(spec.b[i], eps, "minus"), d_psi, t, support)
    t = as_expr(t)
    rhs = quad_complex(lambda s: evaluate(spec.f, s) * evaluate(t, s), *support)
    return float(abs(total - rhs))


def check_schedule(schedule: Sequence[float]) -> List[float]:
    schedule = [float(e) for e in schedule]
    if not schedule:
        raise RegularizationError("empty eps schedule")
    if any(e <= 0 for e in schedule):
        raise RegularizationError("eps values must be positive")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise RegularizationError("eps schedule must be strictly decreasing")
    return schedule


def fitted_slope(eps: Sequence[float], residual: Sequence[float]) -> float:
    """Slope of log(residual) against log(eps); NaN if fewer than two usable points"""
    eps = np.asarray(eps, dtype=float)
    residual = np.asarray(residual, dtype=float)
    usable = residual > 1e-15
    if usable.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[usable]), np.log(residual[usable]), 1)[0])


def convergence_report(F: DistA, psi: DistA, t, eps_schedule: Sequence[float], side: str = "plus",
                       support: Optional[Tuple[float, float]] = None,
                       max_workers: Optional[int] = None) -> pd.DataFrame:
    """Weak residual per eps plus the fitted decay slope (columns eps, residual, slope)"""
    schedule = check_schedule(eps_schedule)
    workers = max_workers or config.max_threads()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        residuals = list(pool.map(lambda e: weak_residual(F, psi, t, e, side, support), schedule))
    slope = fitted_slope(schedule, residuals)
    logger.debug("convergence slope %.3f over %d eps values", slope, len(schedule))
    report = pd.DataFrame({"eps": schedule, "residual": residuals, "slope": slope})
    report.attrs["slope"] = slope
    return report
