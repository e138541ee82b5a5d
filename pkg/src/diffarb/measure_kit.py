"""Real-function and measure calculus for diffusion characteristics.

This module provides the numeric substrate used everywhere else:

* a small closed expression grammar for scale functions and densities
  (serializable, with exact one-sided derivatives and a.e. second
  derivatives),
* ``SmoothPiece1D`` -- a piecewise-smooth monotone function with explicit
  kink bookkeeping,
* ``DecomposedMeasure`` -- a measure written explicitly as an absolutely
  continuous density plus atoms plus an optional singular-continuous
  component on a declared base,
* monotone inversion, pushforward of measures through increasing maps,
  second-derivative measures of convex-difference functions,
* integrability deciders for local-L2 style conditions, combining an exact
  exponent rule on annotated singularities with a conservative numeric
  refinement fallback.

Everything is pure and immutable after construction; all function handles
accept and return numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "MeasureKitError",
    "DomainError",
    "RangeError",
    "QuadratureError",
    "KinkMismatchError",
    "QuadConfig",
    "Expr",
    "Const",
    "Affine",
    "PowerSigned",
    "ExpIntegral",
    "Sum",
    "Product",
    "Compose",
    "Piecewise",
    "Tabulated",
    "expr_to_json",
    "expr_from_json",
    "SmoothPiece1D",
    "ScComponent",
    "DecomposedMeasure",
    "measure_to_json",
    "measure_from_json",
    "adaptive_quad",
    "gl_fixed",
    "invert_monotone",
    "invert_monotone_vec",
    "pushforward",
    "second_derivative_decomposition",
    "LocalBehavior",
    "IntegrabilityVerdict",
    "decide_L2_local",
    "decide_weighted_L2_boundary",
    "decide_abs_integral",
    "sampled_total_variation",
]


class MeasureKitError(Exception):
    """Base error for this module."""


class DomainError(MeasureKitError):
    """Argument outside the domain of a function handle."""


class RangeError(MeasureKitError):
    """Target value outside the range of a monotone function."""


class QuadratureError(MeasureKitError):
    """Adaptive quadrature failed to reach the requested tolerance.

    Raised instead of silently returning a truncated value.
    """


class KinkMismatchError(MeasureKitError):
    """Declared kink list disagrees with the one-sided derivatives."""


@dataclass(frozen=True)
class QuadConfig:
    """Tolerances shared by the quadrature and equality checks.

    rel/abs are the adaptive quadrature targets; eq_rel is the relative
    tolerance for algebraic identities; atom_loc the absolute tolerance for
    matching atom locations; invert the monotone-inversion tolerance.
    """

    rel: float = 1e-8
    abs: float = 1e-12
    eq_rel: float = 1e-9
    atom_loc: float = 1e-12
    invert: float = 1e-12

    def override(self, **kw: float) -> "QuadConfig":
        vals = {k: getattr(self, k) for k in ("rel", "abs", "eq_rel", "atom_loc", "invert")}
        for k, v in kw.items():
            if k not in vals:
                raise MeasureKitError(f"unknown tolerance key {k!r}")
            vals[k] = float(v)
        return QuadConfig(**vals)


DEFAULT_QUAD = QuadConfig()


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def match_shape(out, like):
    """Reshape a flat result to the shape of the input it was computed from."""
    out = np.asarray(out, dtype=float)
    shp = np.shape(like)
    return out.reshape(shp)


def close_rel(a: float, b: float, tol: float, floor: float = 1e-15) -> bool:
    """Relative closeness with an absolute floor for near-zero pairs."""
    a = float(a)
    b = float(b)
    scale = max(abs(a), abs(b))
    if scale <= floor:
        return True
    return abs(a - b) <= tol * scale


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def gl_fixed(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, n: int = 21) -> float:
    """Fixed n-point Gauss-Legendre panel. Nodes never touch a or b."""
    if a == b:
        return 0.0
    x, w = _leggauss(n)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    vals = _arr(f(mid + half * x))
    return float(half * np.dot(w, vals))


def adaptive_quad(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    rtol: float = 1e-8,
    atol: float = 1e-12,
    max_panels: int = 2000,
) -> float:
    """Globally adaptive quadrature of a vectorized integrand.

    Error per panel is estimated as the difference between 21- and 10-point
    Gauss rules; panels are split worst-first until the summed error meets
    max(atol, rtol * |integral|). Raises :class:`QuadratureError` if the
    panel budget is exhausted -- never returns a silently truncated value.
    """
    if a == b:
        return 0.0
    sign = 1.0
    if a > b:
        a, b, sign = b, a, -1.0

    def panel(lo: float, hi: float):
        x21, w21 = _leggauss(21)
        x10, w10 = _leggauss(10)
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        v21 = _arr(f(mid + half * x21))
        v10 = _arr(f(mid + half * x10))
        if not (np.all(np.isfinite(v21)) and np.all(np.isfinite(v10))):
            return lo, hi, 0.0, math.inf
        i21 = float(half * np.dot(w21, v21))
        i10 = float(half * np.dot(w10, v10))
        return lo, hi, i21, abs(i21 - i10)

    panels = [panel(a, b)]
    while True:
        total = sum(p[2] for p in panels)
        err = sum(p[3] for p in panels)
        if err <= max(atol, rtol * abs(total)):
            return sign * total
        if len(panels) >= max_panels:
            raise QuadratureError(
                f"adaptive quadrature on [{a}, {b}] did not converge: "
                f"{len(panels)} panels, residual error {err:.3e}"
            )
        worst = max(range(len(panels)), key=lambda i: panels[i][3])
        lo, hi, _, _ = panels.pop(worst)
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            raise QuadratureError(
                f"adaptive quadrature on [{a}, {b}] hit float resolution near {lo}"
            )
        panels.append(panel(lo, mid))
        panels.append(panel(mid, hi))


# ---------------------------------------------------------------------------
# Expression grammar
# ---------------------------------------------------------------------------


class Expr:
    """Base of the closed expression grammar.

    Subclasses implement vectorized ``value`` and one-sided derivatives.
    ``side`` is +1 for right-hand, -1 for left-hand limits; away from the
    breakpoints both sides agree.
    """

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def deriv(self, x: np.ndarray, side: int = 1) -> np.ndarray:
        raise NotImplementedError

    def deriv2(self, x: np.ndarray, side: int = 1) -> np.ndarray:
        """A.e. second derivative (density of the AC part of f'')."""
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        """Candidate points where the function may fail to be C^2."""
        return ()

    def infinite_slope_points(self) -> tuple[float, ...]:
        """Points where the first derivative diverges to +inf."""
        return ()

    def __call__(self, x):
        return self.value(_arr(x))


@dataclass(frozen=True)
class Const(Expr):
    c: float

    def value(self, x):
        x = _arr(x)
        return np.full_like(x, self.c)

    def deriv(self, x, side=1):
        return np.zeros_like(_arr(x))

    def deriv2(self, x, side=1):
        return np.zeros_like(_arr(x))


@dataclass(frozen=True)
class Affine(Expr):
    """a*x + b."""

    a: float
    b: float

    def value(self, x):
        return self.a * _arr(x) + self.b

    def deriv(self, x, side=1):
        return np.full_like(_arr(x), self.a)

    def deriv2(self, x, side=1):
        return np.zeros_like(_arr(x))


@dataclass(frozen=True)
class PowerSigned(Expr):
    """sign(x - center) * |x - center| ** p  with p > 0.

    Odd-symmetric power around ``center``; strictly increasing for every
    p > 0. For p < 1 the derivative diverges at the center, for p > 1 it
    vanishes there; both cases keep the two one-sided derivatives equal.
    """

    center: float
    p: float

    def __post_init__(self):
        if not self.p > 0:
            raise MeasureKitError("PowerSigned requires p > 0")

    def value(self, x):
        u = _arr(x) - self.center
        return np.sign(u) * np.abs(u) ** self.p

    def deriv(self, x, side=1):
        u = np.abs(_arr(x) - self.center)
        with np.errstate(divide="ignore"):
            out = self.p * u ** (self.p - 1.0)
        if self.p == 1.0:
            out = np.where(u == 0.0, 1.0, out)
        elif self.p > 1.0:
            out = np.where(u == 0.0, 0.0, out)
        else:
            out = np.where(u == 0.0, np.inf, out)
        return out

    def deriv2(self, x, side=1):
        u = _arr(x) - self.center
        au = np.abs(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.p * (self.p - 1.0) * np.sign(u) * au ** (self.p - 2.0)
        return np.where(au == 0.0, 0.0, out)

    def breakpoints(self):
        return () if self.p == 1.0 else (self.center,)

    def infinite_slope_points(self):
        return (self.center,) if self.p < 1.0 else ()


@dataclass(frozen=True)
class ExpIntegral(Expr):
    """x -> integral_anchor^x exp( integral_inner-anchor^y mu(z) dz ) dy.

    The canonical representation of a scale function with mu in L2_loc;
    both anchors are fixed at construction. Evaluation uses nested adaptive
    quadrature at relative tolerance 1e-10 (the ``rtol`` field).
    """

    mu: Expr
    anchor: float = 0.0
    inner_anchor: Optional[float] = None
    rtol: float = 1e-10

    def _a_inner(self) -> float:
        return self.anchor if self.inner_anchor is None else self.inner_anchor

    def _inner(self, y: float) -> float:
        return adaptive_quad(self.mu.value, self._a_inner(), y, rtol=self.rtol, atol=1e-14)

    def _growth(self, y):
        ys = _arr(y)
        flat = np.atleast_1d(ys).ravel()
        out = np.array([math.exp(self._inner(float(v))) for v in flat])
        return out.reshape(np.shape(ys)) if np.shape(ys) else out[0]

    def value(self, x):
        xs = _arr(x)
        flat = np.atleast_1d(xs).ravel()
        order = np.argsort(flat)
        vals = np.empty_like(flat)
        acc = 0.0
        prev = self.anchor
        for idx in order:
            xi = float(flat[idx])
            acc += adaptive_quad(lambda y: self._growth(y), prev, xi, rtol=self.rtol, atol=1e-14)
            vals[idx] = acc
            prev = xi
        return vals.reshape(np.shape(xs)) if np.shape(xs) else vals[0]

    def deriv(self, x, side=1):
        xs = _arr(x)
        flat = np.atleast_1d(xs).ravel()
        out = np.array([self._growth(float(v)) for v in flat])
        return out.reshape(np.shape(xs)) if np.shape(xs) else out[0]

    def deriv2(self, x, side=1):
        return self.mu.value(_arr(x)) * self.deriv(x, side)

    def breakpoints(self):
        return self.mu.breakpoints()


@dataclass(frozen=True)
class Sum(Expr):
    terms: tuple[Expr, ...]

    def __init__(self, terms: Sequence[Expr]):
        object.__setattr__(self, "terms", tuple(terms))

    def value(self, x):
        x = _arr(x)
        out = np.zeros_like(x)
        for t in self.terms:
            out = out + t.value(x)
        return out

    def deriv(self, x, side=1):
        x = _arr(x)
        out = np.zeros_like(x)
        for t in self.terms:
            out = out + t.deriv(x, side)
        return out

    def deriv2(self, x, side=1):
        x = _arr(x)
        out = np.zeros_like(x)
        for t in self.terms:
            out = out + t.deriv2(x, side)
        return out

    def breakpoints(self):
        pts: list[float] = []
        for t in self.terms:
            pts.extend(t.breakpoints())
        return tuple(sorted(set(pts)))

    def infinite_slope_points(self):
        pts: list[float] = []
        for t in self.terms:
            pts.extend(t.infinite_slope_points())
        return tuple(sorted(set(pts)))


@dataclass(frozen=True)
class Product(Expr):
    factors: tuple[Expr, ...]

    def __init__(self, factors: Sequence[Expr]):
        object.__setattr__(self, "factors", tuple(factors))

    def value(self, x):
        x = _arr(x)
        out = np.ones_like(x)
        for t in self.factors:
            out = out * t.value(x)
        return out

    def deriv(self, x, side=1):
        x = _arr(x)
        vals = [t.value(x) for t in self.factors]
        out = np.zeros_like(x)
        for i, t in enumerate(self.factors):
            part = t.deriv(x, side)
            for j, v in enumerate(vals):
                if j != i:
                    part = part * v
            out = out + part
        return out

    def deriv2(self, x, side=1):
        x = _arr(x)
        vals = [t.value(x) for t in self.factors]
        ders = [t.deriv(x, side) for t in self.factors]
        out = np.zeros_like(x)
        n = len(self.factors)
        for i in range(n):
            part = self.factors[i].deriv2(x, side)
            for j in range(n):
                if j != i:
                    part = part * vals[j]
            out = out + part
        # ordered pairs (i, j), i != j: each unordered pair appears twice,
        # matching the product-rule coefficient 2 f'g'
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                part = ders[i] * ders[j]
                for k in range(n):
                    if k != i and k != j:
                        part = part * vals[k]
                out = out + part
        return out

    def breakpoints(self):
        pts: list[float] = []
        for t in self.factors:
            pts.extend(t.breakpoints())
        return tuple(sorted(set(pts)))

    def infinite_slope_points(self):
        pts: list[float] = []
        for t in self.factors:
            pts.extend(t.infinite_slope_points())
        return tuple(sorted(set(pts)))


@dataclass(frozen=True)
class Compose(Expr):
    """outer(inner(x)). Kink detection covers kinks of the inner map."""

    outer: Expr
    inner: Expr

    def value(self, x):
        return self.outer.value(self.inner.value(_arr(x)))

    def deriv(self, x, side=1):
        x = _arr(x)
        di = self.inner.deriv(x, side)
        oside = np.where(di >= 0, side, -side)
        u = self.inner.value(x)
        do_r = self.outer.deriv(u, 1)
        do_l = self.outer.deriv(u, -1)
        do = np.where(oside > 0, do_r, do_l)
        return do * di

    def deriv2(self, x, side=1):
        x = _arr(x)
        u = self.inner.value(x)
        di = self.inner.deriv(x, side)
        return self.outer.deriv2(u, side) * di * di + self.outer.deriv(u, side) * self.inner.deriv2(x, side)

    def _pull_back(self, pts: tuple[float, ...]) -> tuple[float, ...]:
        # exact preimages are available when the inner map is affine;
        # otherwise kink detection is limited to the inner breakpoints
        if isinstance(self.inner, Affine) and self.inner.a != 0:
            return tuple((p - self.inner.b) / self.inner.a for p in pts)
        return ()

    def breakpoints(self):
        pts = set(self.inner.breakpoints())
        pts.update(self._pull_back(self.outer.breakpoints()))
        return tuple(sorted(pts))

    def infinite_slope_points(self):
        pts = set(self.inner.infinite_slope_points())
        pts.update(self._pull_back(self.outer.infinite_slope_points()))
        return tuple(sorted(pts))


@dataclass(frozen=True)
class Piecewise(Expr):
    """Pieces glued at strictly increasing breakpoints.

    Values at a breakpoint follow the right-hand piece. Jumps are allowed
    (densities may be discontinuous); continuity is enforced separately
    where the expression is used as a scale function.
    """

    points: tuple[float, ...]
    pieces: tuple[Expr, ...]

    def __init__(self, points: Sequence[float], pieces: Sequence[Expr]):
        points = tuple(float(p) for p in points)
        pieces = tuple(pieces)
        if len(pieces) != len(points) + 1:
            raise MeasureKitError("Piecewise needs len(pieces) == len(points) + 1")
        if any(points[i] >= points[i + 1] for i in range(len(points) - 1)):
            raise MeasureKitError("Piecewise breakpoints must be strictly increasing")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "pieces", pieces)

    def is_continuous(self, tol: float = 1e-9) -> bool:
        for i, p in enumerate(self.points):
            left = float(self.pieces[i].value(np.asarray(p)))
            right = float(self.pieces[i + 1].value(np.asarray(p)))
            if not close_rel(left, right, tol, floor=1e-12):
                return False
        return True

    def _index(self, x: np.ndarray, side: int) -> np.ndarray:
        pts = np.asarray(self.points)
        return np.searchsorted(pts, x, side="right" if side > 0 else "left")

    def _apply(self, x: np.ndarray, fn: str, side: int) -> np.ndarray:
        x = _arr(x)
        idx = self._index(np.atleast_1d(x), side)
        out = np.empty_like(np.atleast_1d(x))
        for i, piece in enumerate(self.pieces):
            mask = idx == i
            if np.any(mask):
                out[mask] = getattr(piece, fn)(np.atleast_1d(x)[mask], side) if fn != "value" else piece.value(
                    np.atleast_1d(x)[mask]
                )
        return out.reshape(np.shape(x)) if np.shape(x) else out[0]

    def value(self, x):
        return self._apply(x, "value", 1)

    def deriv(self, x, side=1):
        return self._apply(x, "deriv", side)

    def deriv2(self, x, side=1):
        return self._apply(x, "deriv2", side)

    def breakpoints(self):
        pts = set(self.points)
        for p in self.pieces:
            pts.update(p.breakpoints())
        return tuple(sorted(pts))

    def infinite_slope_points(self):
        pts: set[float] = set()
        for p in self.pieces:
            pts.update(p.infinite_slope_points())
        return tuple(sorted(pts))


@dataclass(frozen=True)
class Tabulated(Expr):
    """Monotone piecewise-linear interpolant of strictly increasing samples.

    Outside the sampled range the end segments extrapolate linearly.
    """

    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __init__(self, xs: Sequence[float], ys: Sequence[float]):
        xs = tuple(float(v) for v in xs)
        ys = tuple(float(v) for v in ys)
        if len(xs) != len(ys) or len(xs) < 2:
            raise MeasureKitError("Tabulated needs >= 2 samples")
        if any(xs[i] >= xs[i + 1] for i in range(len(xs) - 1)):
            raise MeasureKitError("Tabulated xs must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def _slopes(self) -> np.ndarray:
        xs = np.asarray(self.xs)
        ys = np.asarray(self.ys)
        return np.diff(ys) / np.diff(xs)

    def value(self, x):
        x = _arr(x)
        xs = np.asarray(self.xs)
        ys = np.asarray(self.ys)
        out = np.interp(x, xs, ys)
        s = self._slopes()
        lo = x < xs[0]
        hi = x > xs[-1]
        out = np.where(lo, ys[0] + s[0] * (x - xs[0]), out)
        out = np.where(hi, ys[-1] + s[-1] * (x - xs[-1]), out)
        return out

    def deriv(self, x, side=1):
        x = _arr(x)
        xs = np.asarray(self.xs)
        s = self._slopes()
        idx = np.searchsorted(xs, np.atleast_1d(x), side="right" if side > 0 else "left") - 1
        idx = np.clip(idx, 0, len(s) - 1)
        out = s[idx]
        return out.reshape(np.shape(x)) if np.shape(x) else float(out[0])

    def deriv2(self, x, side=1):
        return np.zeros_like(_arr(x))

    def breakpoints(self):
        return tuple(self.xs[1:-1])


_NODE_TAGS = {
    "const": Const,
    "affine": Affine,
    "power_signed": PowerSigned,
    "exp_integral": ExpIntegral,
    "sum": Sum,
    "product": Product,
    "compose": Compose,
    "piecewise": Piecewise,
    "tabulated": Tabulated,
}


def expr_to_json(e: Expr) -> dict:
    """Serialize an expression to the fixed structured-text form."""
    if isinstance(e, Const):
        return {"node": "const", "c": e.c}
    if isinstance(e, Affine):
        return {"node": "affine", "a": e.a, "b": e.b}
    if isinstance(e, PowerSigned):
        return {"node": "power_signed", "center": e.center, "p": e.p}
    if isinstance(e, ExpIntegral):
        return {
            "node": "exp_integral",
            "mu": expr_to_json(e.mu),
            "anchor": e.anchor,
            "inner_anchor": e.inner_anchor,
        }
    if isinstance(e, Sum):
        return {"node": "sum", "terms": [expr_to_json(t) for t in e.terms]}
    if isinstance(e, Product):
        return {"node": "product", "factors": [expr_to_json(t) for t in e.factors]}
    if isinstance(e, Compose):
        return {"node": "compose", "outer": expr_to_json(e.outer), "inner": expr_to_json(e.inner)}
    if isinstance(e, Piecewise):
        return {
            "node": "piecewise",
            "breakpoints": list(e.points),
            "pieces": [expr_to_json(p) for p in e.pieces],
        }
    if isinstance(e, Tabulated):
        return {"node": "tabulated", "samples": [[x, y] for x, y in zip(e.xs, e.ys)]}
    raise MeasureKitError(f"cannot serialize expression of type {type(e).__name__}")


def expr_from_json(obj: dict) -> Expr:
    if not isinstance(obj, dict) or "node" not in obj:
        raise MeasureKitError("expression object must be a dict with a 'node' tag")
    tag = obj["node"]
    if tag not in _NODE_TAGS:
        raise MeasureKitError(f"unknown expression node tag {tag!r}")
    if tag == "const":
        return Const(float(obj["c"]))
    if tag == "affine":
        return Affine(float(obj["a"]), float(obj["b"]))
    if tag == "power_signed":
        return PowerSigned(float(obj["center"]), float(obj["p"]))
    if tag == "exp_integral":
        inner = obj.get("inner_anchor")
        return ExpIntegral(
            expr_from_json(obj["mu"]),
            float(obj.get("anchor", 0.0)),
            None if inner is None else float(inner),
        )
    if tag == "sum":
        return Sum([expr_from_json(t) for t in obj["terms"]])
    if tag == "product":
        return Product([expr_from_json(t) for t in obj["factors"]])
    if tag == "compose":
        return Compose(expr_from_json(obj["outer"]), expr_from_json(obj["inner"]))
    if tag == "piecewise":
        return Piecewise([float(p) for p in obj["breakpoints"]], [expr_from_json(p) for p in obj["pieces"]])
    if tag == "tabulated":
        samples = obj["samples"]
        return Tabulated([s[0] for s in samples], [s[1] for s in samples])
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# SmoothPiece1D
# ---------------------------------------------------------------------------


def _expr_continuous(e: Expr) -> bool:
    if isinstance(e, Piecewise):
        return e.is_continuous() and all(_expr_continuous(p) for p in e.pieces)
    if isinstance(e, Sum):
        return all(_expr_continuous(t) for t in e.terms)
    if isinstance(e, Product):
        return all(_expr_continuous(t) for t in e.factors)
    if isinstance(e, Compose):
        return _expr_continuous(e.outer) and _expr_continuous(e.inner)
    if isinstance(e, ExpIntegral):
        return True  # an integral is continuous regardless of mu
    return True


@dataclass(frozen=True)
class SmoothPiece1D:
    """Piecewise-smooth function with explicit one-sided derivative handles.

    ``d2_ac`` is the density of the absolutely continuous part of the second
    derivative measure; kink jumps carry the atomic part separately.
    """

    domain: tuple[float, float]
    value: Callable[[np.ndarray], np.ndarray]
    d_plus: Callable[[np.ndarray], np.ndarray]
    d_minus: Callable[[np.ndarray], np.ndarray]
    d2_ac: Callable[[np.ndarray], np.ndarray]
    kinks: tuple[tuple[float, float], ...] = ()
    infinite_slope: tuple[float, ...] = ()
    expr: Optional[Expr] = None

    @classmethod
    def from_expr(cls, e: Expr, domain: tuple[float, float]) -> "SmoothPiece1D":
        """Build from an expression; the function must be continuous.

        One-sided derivatives at the expression's breakpoints determine the
        kink list; continuity at the breakpoints is mandatory here (this is
        the constructor used for scale functions and their inverses).
        """
        lo, hi = domain
        if not _expr_continuous(e):
            raise MeasureKitError("expression has a jump at a breakpoint; not usable as a function piece")
        kinks = []
        for c in e.breakpoints():
            if not (lo < c < hi):
                continue
            dm = float(e.deriv(np.asarray(c), -1))
            dp = float(e.deriv(np.asarray(c), 1))
            if math.isfinite(dm) and math.isfinite(dp) and not close_rel(dm, dp, 1e-12):
                kinks.append((c, dp - dm))
        inf_pts = tuple(p for p in e.infinite_slope_points() if lo < p < hi)
        return cls(
            domain=domain,
            value=e.value,
            d_plus=lambda x: e.deriv(x, 1),
            d_minus=lambda x: e.deriv(x, -1),
            d2_ac=lambda x: e.deriv2(x, 1),
            kinks=tuple(kinks),
            infinite_slope=inf_pts,
            expr=e,
        )

    def contains(self, x: float) -> bool:
        lo, hi = self.domain
        return lo <= x <= hi

    def eval(self, x) -> np.ndarray:
        """Domain-checked evaluation; arguments outside raise DomainError."""
        arr = _arr(x)
        lo, hi = self.domain
        if np.any(arr < lo) or np.any(arr > hi):
            raise DomainError(f"argument outside the domain [{lo}, {hi}]")
        return self.value(arr)

    def check_increasing(self, n: int = 512) -> None:
        lo, hi = self.domain
        a = lo if math.isfinite(lo) else -1e6
        b = hi if math.isfinite(hi) else 1e6
        xs = np.linspace(a, b, n)
        vals = _arr(self.value(xs))
        if np.any(np.diff(vals) <= 0):
            bad = int(np.argmax(np.diff(vals) <= 0))
            raise MeasureKitError(f"function is not strictly increasing near x = {xs[bad]}")


# ---------------------------------------------------------------------------
# Monotone inversion
# ---------------------------------------------------------------------------


def _bracket(f: SmoothPiece1D, y: float) -> tuple[float, float]:
    lo, hi = f.domain
    a = lo if math.isfinite(lo) else -1.0
    b = hi if math.isfinite(hi) else 1.0
    if not math.isfinite(lo):
        while float(f.value(np.asarray(a))) > y:
            a = a * 2 if a < 0 else -1.0
            if abs(a) > 1e300:
                raise RangeError(f"target {y} below the range")
    if not math.isfinite(hi):
        while float(f.value(np.asarray(b))) < y:
            b = b * 2 if b > 0 else 1.0
            if abs(b) > 1e300:
                raise RangeError(f"target {y} above the range")
    fa = float(f.value(np.asarray(a)))
    fb = float(f.value(np.asarray(b)))
    if y < fa - 1e-12 * (1 + abs(fa)) or y > fb + 1e-12 * (1 + abs(fb)):
        raise RangeError(f"target {y} outside range [{fa}, {fb}]")
    return a, b


def invert_monotone(f: SmoothPiece1D, y: float, cfg: QuadConfig = DEFAULT_QUAD) -> float:
    """Solve f(x) = y for strictly increasing f.

    Bracketing bisection, refined by Newton whenever the local derivative is
    finite and >= 1e-6 on the bracket; pure bisection otherwise. The result
    satisfies |f(x) - y| <= cfg.invert * (1 + |y|).
    """
    y = float(y)
    a, b = _bracket(f, y)
    tol = cfg.invert * (1.0 + abs(y))
    x = 0.5 * (a + b)
    for _ in range(200):
        fx = float(f.value(np.asarray(x)))
        if abs(fx - y) <= tol:
            return x
        if fx < y:
            a = x
        else:
            b = x
        d = float(f.d_plus(np.asarray(x)))
        use_newton = math.isfinite(d) and d >= 1e-6
        if use_newton:
            xn = x - (fx - y) / d
            if a < xn < b:
                x = xn
                continue
        x = 0.5 * (a + b)
        if b - a <= 4 * np.finfo(float).eps * max(1.0, abs(a), abs(b)):
            return x
    return x


def invert_monotone_vec(f: SmoothPiece1D, ys: np.ndarray, cfg: QuadConfig = DEFAULT_QUAD) -> np.ndarray:
    """Vectorized inverse: bisection to float resolution plus Newton polish."""
    ys_in = ys
    ys = np.atleast_1d(_arr(ys))
    lo, hi = f.domain
    a = np.full_like(ys, lo if math.isfinite(lo) else -1.0)
    b = np.full_like(ys, hi if math.isfinite(hi) else 1.0)
    if not math.isfinite(lo):
        for _ in range(600):
            bad = _arr(f.value(a)) > ys
            if not np.any(bad):
                break
            a[bad] = np.where(a[bad] < 0, a[bad] * 2, -1.0)
    if not math.isfinite(hi):
        for _ in range(600):
            bad = _arr(f.value(b)) < ys
            if not np.any(bad):
                break
            b[bad] = np.where(b[bad] > 0, b[bad] * 2, 1.0)
    for _ in range(90):
        mid = 0.5 * (a + b)
        below = _arr(f.value(mid)) < ys
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
        if np.all((b - a) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(b))):
            break
    x = 0.5 * (a + b)
    for _ in range(3):
        d = _arr(f.d_plus(x))
        ok = np.isfinite(d) & (d >= 1e-6)
        step = np.where(ok, (_arr(f.value(x)) - ys) / np.where(ok, d, 1.0), 0.0)
        x = np.clip(x - step, a, b)
    return match_shape(x, ys_in)


# ---------------------------------------------------------------------------
# Decomposed measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScComponent:
    """Singular-continuous part: multiplier(x) dBase(x) on a declared base.

    Two sc parts are comparable only if their ``base_id`` matches; this is
    an enforced declaration, never inferred from the cdf handles.
    """

    base_id: str
    base_cdf: Callable[[np.ndarray], np.ndarray]
    multiplier: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float] = (0.0, 1.0)


@dataclass(frozen=True)
class DecomposedMeasure:
    """Measure = ac_density dx + sum of atoms + optional sc component.

    ``atoms`` are (point, mass) pairs, sorted and pairwise distinct; mass may
    be math.inf only at the endpoints of ``support`` (absorption), and may be
    negative for signed second-derivative measures.
    """

    support: tuple[float, float]
    ac_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    atoms: tuple[tuple[float, float], ...] = ()
    sc: Optional[ScComponent] = None
    ac_breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        pts = [a[0] for a in self.atoms]
        if any(pts[i] >= pts[i + 1] for i in range(len(pts) - 1)):
            raise MeasureKitError("atoms must be sorted by location and pairwise distinct")
        lo, hi = self.support
        for x, m in self.atoms:
            if not (lo <= x <= hi):
                raise MeasureKitError(f"atom at {x} outside support {self.support}")
            if math.isinf(m) and x not in (lo, hi):
                raise MeasureKitError("infinite atom mass is only allowed at support endpoints")

    def atom_mass_at(self, x: float, loc_tol: float = 1e-12) -> float:
        for p, m in self.atoms:
            if abs(p - x) <= loc_tol * (1.0 + abs(x)):
                return m
        return 0.0

    def interior_atoms(self, lo: float, hi: float) -> tuple[tuple[float, float], ...]:
        """Atoms strictly inside (lo, hi)."""
        eps = 1e-12
        lo_cut = lo + eps * (1 + abs(lo)) if math.isfinite(lo) else lo
        hi_cut = hi - eps * (1 + abs(hi)) if math.isfinite(hi) else hi
        return tuple((p, m) for p, m in self.atoms if lo_cut < p < hi_cut)

    def sc_mass(self, a: float, b: float, n: int = 1024) -> float:
        if self.sc is None:
            return 0.0
        lo = max(a, self.sc.support[0])
        hi = min(b, self.sc.support[1])
        if hi <= lo:
            return 0.0
        grid = np.linspace(lo, hi, n + 1)
        cdf = _arr(self.sc.base_cdf(grid))
        mids = 0.5 * (grid[:-1] + grid[1:])
        mult = _arr(self.sc.multiplier(mids))
        return float(np.dot(mult, np.diff(cdf)))

    def mass(self, a: float, b: float, cfg: QuadConfig = DEFAULT_QUAD) -> float:
        """Mass of [a, b]; infinite atoms propagate to inf.

        The AC integral is split at declared density breakpoints and atom
        locations, where the density is allowed to jump.
        """
        total = 0.0
        if self.ac_density is not None:
            cuts = sorted(
                {a, b}
                | {p for p in self.ac_breakpoints if a < p < b}
                | {p for p, _ in self.atoms if a < p < b}
            )
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                total += adaptive_quad(self.ac_density, lo, hi, rtol=cfg.rel, atol=cfg.abs)
        for p, m in self.atoms:
            if a <= p <= b:
                if math.isinf(m):
                    return math.inf
                total += m
        total += self.sc_mass(a, b)
        return total


def measure_to_json(m: DecomposedMeasure, ac_expr: Optional[Expr] = None) -> dict:
    """Serialize; the ac part must be grammar-backed to be serializable."""
    if m.ac_density is not None and ac_expr is None:
        raise MeasureKitError("serializing a measure requires its ac density as an expression")
    atoms = [[p, ("inf" if math.isinf(mass) else mass)] for p, mass in m.atoms]
    return {
        "ac": None if ac_expr is None else expr_to_json(ac_expr),
        "atoms": atoms,
        "sc": None,  # sc components are declaration objects, not serialized here
    }


def measure_from_json(obj: dict, support: tuple[float, float]) -> DecomposedMeasure:
    if not isinstance(obj, dict):
        raise MeasureKitError("measure object must be a dict")
    unknown = set(obj) - {"ac", "atoms", "sc"}
    if unknown:
        raise MeasureKitError(f"unknown measure fields: {sorted(unknown)}")
    ac = obj.get("ac")
    density = None
    if ac is not None:
        e = expr_from_json(ac)
        density = e.value
    atoms = []
    for pair in obj.get("atoms", []):
        x, mass = pair
        atoms.append((float(x), math.inf if mass == "inf" else float(mass)))
    atoms.sort(key=lambda t: t[0])
    sc_obj = obj.get("sc")
    sc = None
    if sc_obj is not None:
        base = expr_from_json(sc_obj["base_cdf"])
        mult = expr_from_json(sc_obj["multiplier"])
        sup = tuple(sc_obj.get("support", (support[0], support[1])))
        sc = ScComponent(str(sc_obj["base_id"]), base.value, mult.value, (float(sup[0]), float(sup[1])))
    return DecomposedMeasure(support=support, ac_density=density, atoms=tuple(atoms), sc=sc)


# ---------------------------------------------------------------------------
# Pushforward and second-derivative decomposition
# ---------------------------------------------------------------------------


def pushforward(
    m: DecomposedMeasure,
    s: SmoothPiece1D,
    qprime_zero_intervals: Sequence[tuple[float, float]] = (),
    annotated: bool = False,
    cfg: QuadConfig = DEFAULT_QUAD,
) -> DecomposedMeasure:
    """Image measure of ``m`` under the strictly increasing map ``s``.

    Atoms move to (s(point), mass). The ac density transforms pointwise as
    m_ac(q(u)) * q'(u), q = s^{-1}. An sc part keeps its base_id and gets its
    cdf composed with q. If the inverse has a zero-derivative set of positive
    measure (``qprime_zero_intervals`` nonempty) the ac part cannot be pushed
    as a density unless the caller annotated the situation explicitly.
    """
    if qprime_zero_intervals and not annotated:
        raise MeasureKitError(
            "pushforward through a map whose inverse has q' = 0 on a set of "
            "positive measure requires an explicit annotation"
        )
    lo, hi = m.support
    u_lo = float(s.value(np.asarray(lo))) if math.isfinite(lo) else -math.inf
    u_hi = float(s.value(np.asarray(hi))) if math.isfinite(hi) else math.inf

    new_atoms = tuple(
        (float(s.value(np.asarray(p))) if math.isfinite(p) else p, mass) for p, mass in m.atoms
    )

    density = None
    if m.ac_density is not None:
        src = m.ac_density

        def pushed(u: np.ndarray) -> np.ndarray:
            u = np.atleast_1d(_arr(u))
            x = invert_monotone_vec(s, u, cfg)
            dp = _arr(s.d_plus(x))
            with np.errstate(divide="ignore"):
                qp = np.where(dp > 0, 1.0 / dp, np.inf)
            return _arr(src(x)) * qp

        density = pushed

    sc = None
    if m.sc is not None:
        base = m.sc

        def cdf_u(u: np.ndarray) -> np.ndarray:
            u = np.atleast_1d(_arr(u))
            return _arr(base.base_cdf(invert_monotone_vec(s, u, cfg)))

        def mult_u(u: np.ndarray) -> np.ndarray:
            u = np.atleast_1d(_arr(u))
            return _arr(base.multiplier(invert_monotone_vec(s, u, cfg)))

        sc_lo = float(s.value(np.asarray(base.support[0])))
        sc_hi = float(s.value(np.asarray(base.support[1])))
        sc = ScComponent(base.base_id, cdf_u, mult_u, (sc_lo, sc_hi))

    # the pushed density may jump at images of scale kinks and of source
    # density breakpoints; record them so mass integration can split there
    breaks = {float(s.value(np.asarray(c))) for c, _ in s.kinks}
    breaks.update(float(s.value(np.asarray(p))) for p in m.ac_breakpoints if math.isfinite(p))
    breaks.update(float(s.value(np.asarray(p))) for p in s.infinite_slope if math.isfinite(p))
    return DecomposedMeasure(
        support=(u_lo, u_hi),
        ac_density=density,
        atoms=new_atoms,
        sc=sc,
        ac_breakpoints=tuple(sorted(b for b in breaks if u_lo < b < u_hi)),
    )


def second_derivative_decomposition(
    q: SmoothPiece1D,
    kinks: Sequence[tuple[float, float]],
    sc: Optional[ScComponent] = None,
    validate_bv: bool = True,
    cfg: QuadConfig = DEFAULT_QUAD,
) -> DecomposedMeasure:
    """Second-derivative measure of a convex-difference function.

    ``kinks`` is the declared list of (point, jump of q'_+). Each declared
    jump is validated against the one-sided derivative handles; the AC
    density is taken from ``q.d2_ac`` and the sc part from the declaration.
    """
    atoms = []
    for c, jump in sorted(kinks, key=lambda t: t[0]):
        dp = float(q.d_plus(np.asarray(c)))
        dm = float(q.d_minus(np.asarray(c)))
        actual = dp - dm
        if not close_rel(actual, jump, 1e-9, floor=1e-12):
            raise KinkMismatchError(
                f"declared kink jump {jump} at {c} disagrees with derivatives ({actual})"
            )
        if abs(jump) > 0:
            atoms.append((c, jump))
    if validate_bv:
        lo, hi = q.domain
        a = lo if math.isfinite(lo) else -4.0
        b = hi if math.isfinite(hi) else 4.0
        tv, stable = sampled_total_variation(q.d_plus, (a, b))
        if not stable:
            raise MeasureKitError(
                "q'_+ does not have locally finite variation (sampled TV unstable); "
                "q is not the difference of two convex functions"
            )
    lo, hi = q.domain
    breaks: set[float] = {c for c, _ in q.kinks}
    breaks.update(q.infinite_slope)
    if q.expr is not None:
        breaks.update(q.expr.breakpoints())
    return DecomposedMeasure(
        support=q.domain,
        ac_density=q.d2_ac,
        atoms=tuple(atoms),
        sc=sc,
        ac_breakpoints=tuple(sorted(b for b in breaks if lo < b < hi)),
    )


def sampled_total_variation(
    dfun: Callable[[np.ndarray], np.ndarray],
    interval: tuple[float, float],
    levels: Sequence[int] = (9, 10, 11, 12),
    growth_tol: float = 1.10,
) -> tuple[list[float], bool]:
    """Total variation of a derivative handle on refining grids.

    Returns the TV estimates and a stability flag: stable means the last
    refinements grew by less than ``growth_tol`` and stayed finite. Grids are
    offset slightly so isolated non-differentiability points are not hit
    exactly.
    """
    a, b = interval
    tvs: list[float] = []
    for k in levels:
        n = 2**k
        xs = np.linspace(a, b, n + 1) + (b - a) * 0.5 / (n * 7919.0)
        vals = _arr(dfun(xs))
        if not np.all(np.isfinite(vals)):
            return tvs + [math.inf], False
        tvs.append(float(np.sum(np.abs(np.diff(vals)))))
    if tvs[-1] == 0.0:
        return tvs, True
    ok = all(
        tvs[i + 1] <= growth_tol * tvs[i] + 1e-12 for i in range(len(tvs) - 2, len(tvs) - 1)
    ) and tvs[-1] <= growth_tol * tvs[-2] + 1e-12
    return tvs, ok


# ---------------------------------------------------------------------------
# Integrability deciders
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalBehavior:
    """Declares f(x) ~ coeff * |x - point| ** exponent on the given side."""

    point: float
    side: str  # 'left' | 'right' | 'both'
    exponent: float
    coeff: float

    def __post_init__(self):
        if self.side not in ("left", "right", "both"):
            raise MeasureKitError("side must be 'left', 'right' or 'both'")
        if self.coeff == 0:
            raise MeasureKitError("LocalBehavior requires a nonzero coefficient")

    def covers(self, direction: int) -> bool:
        return self.side == "both" or (self.side == "right") == (direction > 0)


@dataclass(frozen=True)
class IntegrabilityVerdict:
    status: str  # 'finite' | 'divergent' | 'inconclusive'
    method: str  # 'exponent-rule' | 'numeric-refinement'
    diagnostics: tuple[float, ...] = ()


_LEVEL_CAP = 40
_TAIL_FRACTION = 1e-8
_DIVERGENCE_RATIO = 0.9


def _dyadic_probe(
    g: Callable[[np.ndarray], np.ndarray],
    point: float,
    direction: int,
    width: float,
    context_total: float,
) -> tuple[str, list[float]]:
    """Probe integral of g over dyadically shrinking annuli toward a point.

    Divergent when level increments stop decaying geometrically (ratio >=
    0.9 sustained over the last three levels); finite when the geometric
    tail bound drops below 1e-8 of the accumulated total; inconclusive when
    the float resolution floor is reached first.
    """
    vals: list[float] = []
    total = abs(context_total)
    floor = 1e-13 * (1.0 + abs(point))
    for k in range(1, _LEVEL_CAP + 1):
        outer = width * 2.0 ** (1 - k)
        inner = width * 2.0 ** (-k)
        if inner < floor:
            return "inconclusive", vals
        if direction > 0:
            a, b = point + inner, point + outer
        else:
            a, b = point - outer, point - inner
        val = gl_fixed(g, a, b, 21)
        if not math.isfinite(val):
            return "divergent", vals + [val]
        vals.append(val)
        total += abs(val)
        if k >= 4:
            if max(vals[-3:]) == 0.0:
                return "finite", vals
            r1 = vals[-1] / vals[-2] if vals[-2] > 0 else (0.0 if vals[-1] == 0 else math.inf)
            r2 = vals[-2] / vals[-3] if vals[-3] > 0 else (0.0 if vals[-2] == 0 else math.inf)
            if min(r1, r2) >= _DIVERGENCE_RATIO:
                return "divergent", vals
            r = max(r1, r2)
            if r < 1.0:
                tail = vals[-1] * r / (1.0 - r)
                if tail < _TAIL_FRACTION * max(total, 1e-300):
                    return "finite", vals
    return "inconclusive", vals


def _detect_suspicious(
    g: Callable[[np.ndarray], np.ndarray], a: float, b: float, known: Sequence[float]
) -> list[float]:
    xs = np.linspace(a, b, 1025)[1:-1]
    vals = np.abs(_arr(g(xs)))
    finite = vals[np.isfinite(vals)]
    if finite.size == 0:
        return []
    scale = float(np.median(finite)) + 1e-300
    flag = (~np.isfinite(vals)) | (vals > 1e6 * scale)
    pts: list[float] = []
    for x in xs[flag]:
        if all(abs(x - p) > (b - a) / 64 for p in list(known) + pts):
            pts.append(float(x))
    return pts


def _decide_g_integral(
    g: Callable[[np.ndarray], np.ndarray],
    window: tuple[float, float],
    specials: Sequence[tuple[float, Optional[float]]],
    cfg: QuadConfig,
) -> IntegrabilityVerdict:
    """Decide finiteness of the integral of g >= 0 over a window.

    ``specials`` holds (point, g_exponent | None): annotated points carry the
    exact local exponent of g (rule: finite iff exponent > -1, strictly);
    None marks an un-annotated suspicious point probed numerically.
    """
    a, b = window
    if not a < b:
        raise MeasureKitError("window must be nondegenerate")
    method = "exponent-rule"
    diagnostics: list[float] = []
    statuses: list[str] = []
    pts = sorted(set(p for p, _ in specials if a <= p <= b))
    exps = {p: e for p, e in specials if a <= p <= b}

    # exact rule on annotated points
    for p in pts:
        e = exps.get(p)
        if e is not None:
            statuses.append("finite" if e > -1.0 else "divergent")

    if "divergent" in statuses:
        return IntegrabilityVerdict("divergent", "exponent-rule", tuple(diagnostics))

    # numeric part: probe un-annotated points, integrate the smooth remainder
    gaps = [a] + pts + [b]
    context = 0.0
    try:
        for i in range(len(gaps) - 1):
            lo_, hi_ = gaps[i], gaps[i + 1]
            pad_lo = 0.05 * (hi_ - lo_) if gaps[i] in pts else 0.0
            pad_hi = 0.05 * (hi_ - lo_) if gaps[i + 1] in pts else 0.0
            if hi_ - pad_hi > lo_ + pad_lo:
                context += gl_fixed(g, lo_ + pad_lo, hi_ - pad_hi, 42)
    except (OverflowError, FloatingPointError):
        context = 1.0
    if not math.isfinite(context):
        context = 1.0

    for p in pts:
        if exps.get(p) is not None:
            continue
        method = "numeric-refinement"
        for direction in (-1, 1):
            if direction < 0 and p <= a:
                continue
            if direction > 0 and p >= b:
                continue
            width = min(abs(p - a) if direction < 0 else abs(b - p), (b - a) * 0.25)
            if width <= 0:
                continue
            status, vals = _dyadic_probe(g, p, direction, width, context)
            diagnostics = vals[-6:]
            statuses.append(status)
            if status == "divergent":
                return IntegrabilityVerdict("divergent", method, tuple(diagnostics))

    if "inconclusive" in statuses:
        return IntegrabilityVerdict("inconclusive", method, tuple(diagnostics))
    return IntegrabilityVerdict("finite", method, tuple(diagnostics))


def decide_L2_local(
    f: Callable[[np.ndarray], np.ndarray],
    window: tuple[float, float],
    behaviors: Sequence[LocalBehavior] = (),
    suspicious: Sequence[float] = (),
    cfg: QuadConfig = DEFAULT_QUAD,
    auto_detect: bool = True,
) -> IntegrabilityVerdict:
    """Is the integral of f^2 over the window finite?

    Annotated singularities f ~ C|x-x0|^p are decided exactly: the
    contribution is finite iff p > -1/2 (strict). Un-annotated suspicious
    points fall back to dyadic numeric refinement, which may return
    'inconclusive' -- a value, not an error.
    """
    a, b = window

    def g(x):
        v = _arr(f(x))
        return v * v

    specials: list[tuple[float, Optional[float]]] = []
    for beh in behaviors:
        if a <= beh.point <= b:
            specials.append((beh.point, 2.0 * beh.exponent))
    known = [p for p, _ in specials]
    for p in suspicious:
        if a <= p <= b and all(abs(p - q_) > 1e-12 for q_ in known):
            specials.append((float(p), None))
            known.append(float(p))
    if auto_detect:
        for p in _detect_suspicious(g, a, b, known):
            specials.append((p, None))
    return _decide_g_integral(g, window, specials, cfg)


def decide_weighted_L2_boundary(
    f: Callable[[np.ndarray], np.ndarray],
    b_image: float,
    window: tuple[float, float],
    behaviors: Sequence[LocalBehavior] = (),
    cfg: QuadConfig = DEFAULT_QUAD,
) -> IntegrabilityVerdict:
    """Is the integral of |x - b_image| f(x)^2 over a boundary collar finite?

    For f ~ C|x-b|^p at the boundary image the contribution is finite iff
    p > -1 (strict).
    """
    a, b = window
    if not (abs(a - b_image) <= 1e-9 * (1 + abs(b_image)) or abs(b - b_image) <= 1e-9 * (1 + abs(b_image))):
        raise MeasureKitError("window must be adjacent to the boundary image")

    def g(x):
        x = _arr(x)
        v = _arr(f(x))
        return np.abs(x - b_image) * v * v

    specials: list[tuple[float, Optional[float]]] = []
    for beh in behaviors:
        if abs(beh.point - b_image) <= 1e-9 * (1 + abs(b_image)):
            specials.append((b_image, 2.0 * beh.exponent + 1.0))
        elif a <= beh.point <= b:
            specials.append((beh.point, 2.0 * beh.exponent))
    if all(abs(p - b_image) > 1e-9 * (1 + abs(b_image)) for p, _ in specials):
        specials.append((b_image, None))
    return _decide_g_integral(g, window, specials, cfg)


def decide_abs_integral(
    f: Callable[[np.ndarray], np.ndarray],
    window: tuple[float, float],
    point_exponents: Sequence[tuple[float, float]] = (),
    weight_point: Optional[float] = None,
    suspicious: Sequence[float] = (),
    cfg: QuadConfig = DEFAULT_QUAD,
) -> IntegrabilityVerdict:
    """Finiteness of the integral of |f| (optionally weighted by |x - w|).

    ``point_exponents`` annotates |f| ~ C|x-x0|^p; the rule threshold is
    p > -1 (plus one when the weight point coincides with the annotation).
    Used for the |q''| prerequisites of the semimartingale check.
    """

    def g(x):
        x = _arr(x)
        v = np.abs(_arr(f(x)))
        if weight_point is not None:
            v = v * np.abs(x - weight_point)
        return v

    specials: list[tuple[float, Optional[float]]] = []
    for p, e in point_exponents:
        ge = e + (1.0 if weight_point is not None and abs(p - weight_point) <= 1e-12 * (1 + abs(p)) else 0.0)
        specials.append((p, ge))
    for p in suspicious:
        specials.append((float(p), None))
    if weight_point is not None and all(abs(p - weight_point) > 1e-12 * (1 + abs(weight_point)) for p, _ in specials):
        specials.append((float(weight_point), None))
    return _decide_g_integral(g, window, specials, cfg)
