"""Market model record, boundary classification, and standing assumptions.

A market is a one-dimensional regular diffusion on a state interval J,
described by a strictly increasing continuous scale function and a speed
measure, together with a constant interest rate r and a finite horizon. The
discounted price is exp(-r t) Y_t.

This module derives the natural-scale view (inverse scale q, its second
derivative measure, the pushforward speed measure, and the phi / gamma
fields used by the classifier), classifies boundary behaviour with a
Feller-type accessibility test, and verifies the semimartingale standing
assumption (q must be a difference of two convex functions, with weighted
|q''| integrability near accessible boundaries).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .measure_kit import (
    DecomposedMeasure,
    Expr,
    LocalBehavior,
    QuadConfig,
    DEFAULT_QUAD,
    ScComponent,
    SmoothPiece1D,
    close_rel,
    decide_abs_integral,
    expr_from_json,
    invert_monotone_vec,
    measure_from_json,
    pushforward,
    sampled_total_variation,
    second_derivative_decomposition,
)

__all__ = [
    "SpecValidationError",
    "StateInterval",
    "BoundaryBehavior",
    "DiffusionSpec",
    "NaturalScaleView",
    "AssumptionCheck",
    "AssumptionReport",
    "DecompositionFields",
    "BoundaryTerm",
    "classify_boundary",
    "derive_natural_scale",
    "check_semimartingale_assumption",
    "semimartingale_decomposition_fields",
    "load_model_spec",
    "flat_spot_second_derivative_ok",
]


class SpecValidationError(Exception):
    """The model description violates a standing assumption."""


@dataclass(frozen=True)
class StateInterval:
    """State interval J with endpoint membership flags."""

    alpha: float
    beta: float
    alpha_closed: bool = False
    beta_closed: bool = False

    def __post_init__(self):
        if not self.alpha < self.beta:
            raise SpecValidationError("state interval requires alpha < beta")
        if self.alpha_closed and not math.isfinite(self.alpha):
            raise SpecValidationError("a closed endpoint must be finite")
        if self.beta_closed and not math.isfinite(self.beta):
            raise SpecValidationError("a closed endpoint must be finite")

    def interior(self) -> tuple[float, float]:
        return (self.alpha, self.beta)

    def contains_interior(self, x: float) -> bool:
        return self.alpha < x < self.beta


@dataclass(frozen=True)
class BoundaryBehavior:
    """Behaviour of a finite endpoint.

    kind is 'inaccessible', 'absorbing' or 'reflecting'; a reflecting
    boundary carries its stickiness (the speed-measure atom there, 0 meaning
    instantaneous reflection). An absorbing boundary is exactly an endpoint
    in J with infinite speed atom.
    """

    kind: str
    stickiness: float = 0.0
    note: str = ""

    def __post_init__(self):
        if self.kind not in ("inaccessible", "absorbing", "reflecting"):
            raise SpecValidationError(f"unknown boundary kind {self.kind!r}")

    @property
    def accessible(self) -> bool:
        return self.kind in ("absorbing", "reflecting")


@dataclass(frozen=True)
class DiffusionSpec:
    """Full market model: diffusion characteristics plus analytic annotations.

    Annotations (kinks, the zero set of q', local behaviours of phi and of
    q'' near boundary images) let the classifier decide integral conditions
    exactly; everything annotated is still validated numerically where a
    numeric check exists.
    """

    J: StateInterval
    scale: SmoothPiece1D
    speed: DecomposedMeasure
    x0: float
    r: float
    horizon: float = 1.0
    model_id: str = "model"
    qprime_zero_set: tuple[tuple[float, float], ...] = ()  # natural-scale coords, (a, b) with a == b for points
    phi_behaviors: tuple[LocalBehavior, ...] = ()
    qpp_behaviors: tuple[LocalBehavior, ...] = ()
    q_expr: Optional[Expr] = None
    q_piece: Optional[SmoothPiece1D] = None
    speed_natural: Optional[DecomposedMeasure] = None
    declared_boundaries: tuple[tuple[str, str], ...] = ()  # (side, kind)
    qpp_sc: Optional[ScComponent] = None
    speed_sc_natural: Optional[ScComponent] = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise SpecValidationError("horizon must be positive")
        lo, hi = self.J.alpha, self.J.beta
        if not (lo <= self.x0 <= hi):
            raise SpecValidationError("x0 outside the state interval")
        for a, b in self.qprime_zero_set:
            if a > b:
                raise SpecValidationError("zero-set intervals must have a <= b")

    def declared_kind(self, side: str) -> Optional[str]:
        for s, kind in self.declared_boundaries:
            if s == side:
                return kind
        return None


@dataclass(frozen=True)
class NaturalScaleView:
    """Derived cache: everything the classifier needs, in s(J) coordinates."""

    sJ: tuple[float, float]
    q: SmoothPiece1D
    qpp: DecomposedMeasure
    mU: DecomposedMeasure
    phi: Callable[[np.ndarray], np.ndarray]
    gamma: Callable[[np.ndarray], np.ndarray]
    boundaries: tuple[tuple[str, BoundaryBehavior], ...]
    r: float
    s_x0: float

    def boundary(self, side: str) -> BoundaryBehavior:
        for s, b in self.boundaries:
            if s == side:
                return b
        raise KeyError(side)

    def boundary_image(self, side: str) -> float:
        return self.sJ[0] if side == "left" else self.sJ[1]

    def boundary_value(self, spec: DiffusionSpec, side: str) -> float:
        return spec.J.alpha if side == "left" else spec.J.beta


# ---------------------------------------------------------------------------
# Boundary classification
# ---------------------------------------------------------------------------


def _scale_limit(scale: SmoothPiece1D, b: float, side: str) -> float:
    """s(b) by continuity; +-inf when the scale diverges at the endpoint."""
    if math.isfinite(b):
        v = float(scale.value(np.asarray(b)))
        return v
    sign = -1.0 if side == "left" else 1.0
    vals = [float(scale.value(np.asarray(sign * 10.0**k))) for k in range(1, 12)]
    if not math.isfinite(vals[-1]):
        return sign * math.inf
    # converging increments mean a finite limit (the endpoint stays
    # inaccessible either way, not being part of J)
    inc_last = abs(vals[-1] - vals[-2])
    inc_prev = abs(vals[-2] - vals[-3])
    if inc_last <= 1e-6 * (1.0 + abs(vals[-1])) and inc_last <= inc_prev:
        return vals[-1]
    return sign * math.inf


def classify_boundary(
    spec: DiffusionSpec, side: str, cfg: QuadConfig = DEFAULT_QUAD
) -> BoundaryBehavior:
    """Feller-type accessibility test plus the speed-atom dichotomy.

    Accessible iff |s(b)| < infinity and the integral of |s(b) - s(y)| m(dy)
    over a collar at b converges. Accessible with infinite atom -> absorbing;
    finite atom -> reflecting (stickiness = atom). A declared behaviour is
    validated against the test; a definite conflict is an error, and an
    inconclusive test defers to the declaration.
    """
    if side not in ("left", "right"):
        raise SpecValidationError("side must be 'left' or 'right'")
    b = spec.J.alpha if side == "left" else spec.J.beta
    in_J = spec.J.alpha_closed if side == "left" else spec.J.beta_closed
    declared = spec.declared_kind(side)

    if not math.isfinite(b):
        if declared not in (None, "inaccessible"):
            raise SpecValidationError(f"infinite endpoint cannot be {declared}")
        return BoundaryBehavior("inaccessible", note="infinite endpoint")

    s_b = _scale_limit(spec.scale, b, side)
    if not math.isfinite(s_b):
        if declared not in (None, "inaccessible"):
            raise SpecValidationError(
                f"{side} boundary declared {declared} but its scale image is infinite"
            )
        return BoundaryBehavior("inaccessible", note="scale image infinite")

    # integral test on a collar at the boundary
    other = spec.J.beta if side == "left" else spec.J.alpha
    reach = min(1.0, 0.25 * abs(other - b)) if math.isfinite(other) else 1.0
    lo, hi = (b, b + reach) if side == "left" else (b - reach, b)
    status = "finite"
    if spec.speed.ac_density is not None:
        sc_fun = spec.scale.value

        def g(y: np.ndarray) -> np.ndarray:
            y = np.atleast_1d(np.asarray(y, float))
            return np.abs(np.asarray(sc_fun(y), float) - s_b) * np.abs(
                np.asarray(spec.speed.ac_density(y), float)
            )

        verdict = decide_abs_integral(g, (lo, hi), suspicious=[b], cfg=cfg)
        status = verdict.status
    for p, m in spec.speed.interior_atoms(spec.J.alpha, spec.J.beta):
        if lo <= p <= hi and math.isinf(m):
            status = "divergent"

    if status == "inconclusive":
        if declared is not None:
            kind = declared
            atom = spec.speed.atom_mass_at(b)
            stick = 0.0 if (math.isinf(atom) or kind != "reflecting") else atom
            return BoundaryBehavior(kind, stick, note="accessibility test inconclusive; declaration used")
        return BoundaryBehavior(
            "inaccessible",
            note="accessibility test inconclusive and no declaration given",
        )

    accessible = status == "finite"
    if accessible:
        if not in_J:
            raise SpecValidationError(
                f"{side} boundary is accessible but excluded from the state interval"
            )
        atom = spec.speed.atom_mass_at(b)
        kind = "absorbing" if math.isinf(atom) else "reflecting"
        result = BoundaryBehavior(kind, 0.0 if math.isinf(atom) else atom)
    else:
        result = BoundaryBehavior("inaccessible", note="speed-weighted scale integral diverges")

    if declared is not None and declared != result.kind:
        raise SpecValidationError(
            f"declared {side} boundary {declared!r} conflicts with the "
            f"accessibility test ({result.kind!r})"
        )
    return result


# ---------------------------------------------------------------------------
# Natural-scale derivation
# ---------------------------------------------------------------------------


def _numeric_inverse(scale: SmoothPiece1D, sJ: tuple[float, float], cfg: QuadConfig) -> SmoothPiece1D:
    """Inverse of the scale as function handles via root finding.

    q' = 1/s'(q) one-sided, q'' = -s''(q) / s'(q)^3 a.e.
    """

    def q_val(u):
        return invert_monotone_vec(scale, u, cfg)

    def d_side(u, side):
        x = invert_monotone_vec(scale, u, cfg)
        d = np.asarray(scale.d_plus(x) if side > 0 else scale.d_minus(x), float)
        with np.errstate(divide="ignore"):
            return np.where(d > 0, 1.0 / d, np.inf)

    def d2(u):
        x = invert_monotone_vec(scale, u, cfg)
        d = np.asarray(scale.d_plus(x), float)
        dd = np.asarray(scale.d2_ac(x), float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -dd / d**3
        return np.where(np.isfinite(out), out, 0.0)

    kinks = []
    for c, _ in scale.kinks:
        u = float(scale.value(np.asarray(c)))
        dp = float(scale.d_plus(np.asarray(c)))
        dm = float(scale.d_minus(np.asarray(c)))
        if dp > 0 and dm > 0:
            kinks.append((u, 1.0 / dp - 1.0 / dm))
    inf_slope = tuple(
        float(scale.value(np.asarray(c)))
        for c in _zero_slope_points(scale)
        if math.isfinite(c)
    )
    return SmoothPiece1D(
        domain=sJ,
        value=q_val,
        d_plus=lambda u: d_side(u, 1),
        d_minus=lambda u: d_side(u, -1),
        d2_ac=d2,
        kinks=tuple(kinks),
        infinite_slope=inf_slope,
    )


def _zero_slope_points(scale: SmoothPiece1D) -> tuple[float, ...]:
    """Points where s' = 0, i.e. where the inverse derivative explodes."""
    if scale.expr is None:
        return ()
    pts = []
    for c in scale.expr.breakpoints():
        lo, hi = scale.domain
        if not (lo < c < hi):
            continue
        dp = float(scale.d_plus(np.asarray(c)))
        dm = float(scale.d_minus(np.asarray(c)))
        if dp == 0.0 or dm == 0.0:
            pts.append(c)
    return tuple(pts)


def derive_natural_scale(spec: DiffusionSpec, cfg: QuadConfig = DEFAULT_QUAD) -> NaturalScaleView:
    """Populate the natural-scale cache for a validated model.

    phi(x) = (q''(x)/2 - r q(x) mU_ac(x)) / q'(x) on {q' != 0}, 0 elsewhere;
    gamma(x) = same numerator / q'(x)^2, set to 0 at boundary images (any
    value is admissible there).
    """
    lo, hi = spec.J.alpha, spec.J.beta
    s_lo = _scale_limit(spec.scale, lo, "left")
    s_hi = _scale_limit(spec.scale, hi, "right")
    sJ = (s_lo, s_hi)

    boundaries = (
        ("left", classify_boundary(spec, "left", cfg)),
        ("right", classify_boundary(spec, "right", cfg)),
    )
    for side, beh in boundaries:
        b = lo if side == "left" else hi
        if beh.kind == "absorbing" and spec.x0 == b:
            raise SpecValidationError("starting value absorbing")
    if not spec.J.contains_interior(spec.x0):
        side = "left" if spec.x0 == lo else "right"
        beh = dict(boundaries)[side]
        if beh.kind != "reflecting":
            raise SpecValidationError(
                "x0 must lie in the interior or at a reflecting boundary"
            )

    if spec.q_piece is not None:
        q = spec.q_piece
    elif spec.q_expr is not None:
        q = SmoothPiece1D.from_expr(spec.q_expr, sJ)
    else:
        q = _numeric_inverse(spec.scale, sJ, cfg)

    qpp = second_derivative_decomposition(q, q.kinks, sc=spec.qpp_sc, validate_bv=False)

    zero_ivals = tuple((a, b) for a, b in spec.qprime_zero_set if b > a)
    if spec.speed_natural is not None:
        mU = spec.speed_natural
        if spec.speed_sc_natural is not None and mU.sc is None:
            mU = replace(mU, sc=spec.speed_sc_natural)
        _validate_speed_hint(spec, mU, zero_ivals, cfg)
    else:
        mU = pushforward(
            spec.speed, spec.scale, qprime_zero_intervals=zero_ivals, annotated=False, cfg=cfg
        )
        if spec.speed_sc_natural is not None:
            mU = replace(mU, sc=spec.speed_sc_natural)

    mU_ac = mU.ac_density
    q_val = q.value
    qp = q.d_plus
    qpp_ac = q.d2_ac
    r = spec.r

    def numerator(u: np.ndarray) -> np.ndarray:
        out = 0.5 * np.asarray(qpp_ac(u), float)
        if r != 0.0 and mU_ac is not None:
            out = out - r * np.asarray(q_val(u), float) * np.asarray(mU_ac(u), float)
        return out

    def phi(u):
        u = np.asarray(u, float)
        d = np.asarray(qp(u), float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = numerator(u) / d
        return np.where((d != 0.0) & np.isfinite(d), out, 0.0)

    def gamma(u):
        u = np.asarray(u, float)
        d = np.asarray(qp(u), float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = numerator(u) / (d * d)
        return np.where((d != 0.0) & np.isfinite(d), out, 0.0)

    return NaturalScaleView(
        sJ=sJ,
        q=q,
        qpp=qpp,
        mU=mU,
        phi=phi,
        gamma=gamma,
        boundaries=boundaries,
        r=spec.r,
        s_x0=float(spec.scale.value(np.asarray(spec.x0))),
    )


def _validate_speed_hint(
    spec: DiffusionSpec,
    mU: DecomposedMeasure,
    zero_ivals: tuple,
    cfg: QuadConfig,
) -> None:
    """Cross-check a declared natural-scale speed against the pushforward.

    Skipped when the pushforward itself is undefined (annotated q' = 0 sets).
    Atom images are always checked; the ac part on a few sample intervals.
    """
    for p, m in spec.speed.atoms:
        u = float(spec.scale.value(np.asarray(p))) if math.isfinite(p) else p
        mu_mass = mU.atom_mass_at(u, cfg.atom_loc)
        if math.isinf(m) != math.isinf(mu_mass) or (
            math.isfinite(m) and not close_rel(m, mu_mass, 1e-9)
        ):
            raise SpecValidationError(
                f"declared natural-scale speed atom at {u} has mass {mu_mass}, "
                f"but the state-space atom at {p} has mass {m}"
            )
    if zero_ivals or spec.speed.ac_density is None or mU.ac_density is None:
        return
    lo, hi = spec.J.alpha, spec.J.beta
    a = lo if math.isfinite(lo) else spec.x0 - 2.0
    b = hi if math.isfinite(hi) else spec.x0 + 2.0
    probes = np.linspace(a, b, 5)
    # atoms were matched above; compare the AC parts alone so that edge
    # rounding of atom images cannot shift a point mass across a probe cut
    ac_only_m = replace(spec.speed, atoms=(), sc=None)
    ac_only_u = replace(mU, atoms=(), sc=None)
    for x1, x2 in zip(probes[:-1], probes[1:]):
        lhs = ac_only_m.mass(float(x1), float(x2), cfg)
        u1 = float(spec.scale.value(np.asarray(x1)))
        u2 = float(spec.scale.value(np.asarray(x2)))
        rhs = ac_only_u.mass(u1, u2, cfg)
        # sanity tolerance: state-space densities may carry integrable
        # singularities where the quadrature is only good to ~1e-5
        if not close_rel(lhs, rhs, 1e-4):
            raise SpecValidationError(
                f"declared natural-scale speed disagrees with pushforward on "
                f"[{x1}, {x2}]: {lhs} vs {rhs}"
            )


# ---------------------------------------------------------------------------
# Standing assumption
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    ok: bool
    note: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    passed: bool
    checks: tuple[AssumptionCheck, ...]

    def failures(self) -> list[str]:
        return [c.note or c.name for c in self.checks if not c.ok]


def check_semimartingale_assumption(
    view: NaturalScaleView, spec: DiffusionSpec, cfg: QuadConfig = DEFAULT_QUAD
) -> AssumptionReport:
    """Is the price process a semimartingale?

    (a) q'_+ must have locally finite variation (difference of two convex
    functions); (b) near an absorbing boundary image the |q''| measure must
    integrate the distance weight; (c) near a reflecting boundary image
    |q''| must be finite up to the boundary. Failure is a value -- it blocks
    classification but raises nothing here.
    """
    checks: list[AssumptionCheck] = []

    # (a) local finite variation of q'_+
    if view.q.infinite_slope:
        checks.append(
            AssumptionCheck(
                "q-prime-finite",
                False,
                f"q' explodes at {view.q.infinite_slope} (scale has flat points); "
                "the price process is not a semimartingale",
            )
        )
    else:
        # probe a compact interior window covering the start image and all
        # structurally interesting points (kinks, flat spots)
        s_lo, s_hi = view.sJ
        focus = [view.s_x0] + [c for c, _ in view.q.kinks] + [a for a, _ in spec.qprime_zero_set]
        span = s_hi - s_lo
        margin = 0.05 * min(1.0, span if math.isfinite(span) else 1.0)
        lo = min(focus) - 2.0
        hi = max(focus) + 2.0
        if math.isfinite(s_lo):
            lo = max(lo, s_lo + margin)
        if math.isfinite(s_hi):
            hi = min(hi, s_hi - margin)
        if lo < hi:
            tvs, stable = sampled_total_variation(view.q.d_plus, (lo, hi))
            checks.append(
                AssumptionCheck(
                    "q-prime-bv",
                    stable,
                    "" if stable else f"sampled total variation of q'_+ unstable: {tvs}",
                )
            )
        else:
            checks.append(AssumptionCheck("q-prime-bv", True, "window degenerate; skipped"))

    # (b), (c) boundary integrability of |q''|
    for side, beh in view.boundaries:
        if not beh.accessible:
            continue
        u_b = view.boundary_image(side)
        s_lo, s_hi = view.sJ
        span = s_hi - s_lo if math.isfinite(s_hi - s_lo) else math.inf
        reach = min(1.0, span / 4 if math.isfinite(span) else 1.0)
        window = (u_b, u_b + reach) if side == "left" else (u_b - reach, u_b)
        exps = [
            (b.point, b.exponent)
            for b in spec.qpp_behaviors
            if abs(b.point - u_b) <= 1e-9 * (1 + abs(u_b))
        ]
        weight = u_b if beh.kind == "absorbing" else None
        verdict = decide_abs_integral(
            view.q.d2_ac, window, point_exponents=exps, weight_point=weight, cfg=cfg
        )
        label = f"qpp-integrable-{side}-{beh.kind}"
        if verdict.status == "finite":
            checks.append(AssumptionCheck(label, True))
        else:
            checks.append(
                AssumptionCheck(
                    label,
                    False,
                    f"|q''| {'distance-weighted ' if weight is not None else ''}integral "
                    f"near s({side}) is {verdict.status}",
                )
            )

    return AssumptionReport(passed=all(c.ok for c in checks), checks=tuple(checks))


# ---------------------------------------------------------------------------
# Concrete semimartingale decomposition fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryTerm:
    side: str
    lt_coefficient: float  # q'_+(s(b))/2 on the left, q'_-(s(b))/2 on the right
    atom_drift: float  # r * b * mU({s(b)})

    @property
    def net(self) -> float:
        return self.lt_coefficient - self.atom_drift


@dataclass(frozen=True)
class DecompositionFields:
    """Pieces of the discounted-price decomposition at natural scale.

    qv_factor(u) = [q'_+(u)]^2 multiplies d<U,U>; the interior drift measure
    is q''(dx)/2 - r q(x) mU(dx); each reflecting boundary contributes its
    local-time coefficient net of the sticky-atom drift.
    """

    qv_factor: Callable[[np.ndarray], np.ndarray]
    drift_measure: DecomposedMeasure
    boundary_terms: tuple[BoundaryTerm, ...]


def semimartingale_decomposition_fields(
    view: NaturalScaleView, spec: DiffusionSpec
) -> DecompositionFields:
    qp = view.q.d_plus
    q_val = view.q.value
    mU_ac = view.mU.ac_density
    qpp_ac = view.q.d2_ac
    r = view.r

    def qv(u):
        d = np.asarray(qp(np.atleast_1d(np.asarray(u, float))), float)
        return d * d

    def drift_density(u):
        u = np.atleast_1d(np.asarray(u, float))
        out = 0.5 * np.asarray(qpp_ac(u), float)
        if r != 0.0 and mU_ac is not None:
            out = out - r * np.asarray(q_val(u), float) * np.asarray(mU_ac(u), float)
        return out

    lo_u, hi_u = view.sJ
    atoms: dict[float, float] = {}
    for p, m in view.qpp.interior_atoms(lo_u, hi_u):
        atoms[p] = atoms.get(p, 0.0) + 0.5 * m
    if r != 0.0:
        for p, m in view.mU.interior_atoms(lo_u, hi_u):
            atoms[p] = atoms.get(p, 0.0) - r * float(q_val(np.asarray(p))) * m
    drift = DecomposedMeasure(
        support=view.sJ,
        ac_density=drift_density,
        atoms=tuple(sorted((p, m) for p, m in atoms.items() if m != 0.0)),
        ac_breakpoints=view.qpp.ac_breakpoints,
    )

    terms = []
    for side, beh in view.boundaries:
        if beh.kind != "reflecting":
            continue
        u_b = view.boundary_image(side)
        b = view.boundary_value(spec, side)
        d = view.q.d_plus if side == "left" else view.q.d_minus
        coeff = 0.5 * float(d(np.asarray(u_b)))
        atom = view.mU.atom_mass_at(u_b)
        terms.append(BoundaryTerm(side, coeff, view.r * b * atom))
    return DecompositionFields(qv_factor=qv, drift_measure=drift, boundary_terms=tuple(terms))


def flat_spot_second_derivative_ok(
    view: NaturalScaleView,
    spec: DiffusionSpec,
    samples_per_interval: int = 10_000,
    tol: float = 1e-9,
) -> bool:
    """On the declared zero set of q', the AC density of q'' must vanish a.e.

    Sampled check used as an internal consistency guard for models whose q''
    is absolutely continuous and whose q' is finite.
    """
    for a, b in spec.qprime_zero_set:
        if b <= a:
            continue
        xs = np.linspace(a, b, samples_per_interval + 2)[1:-1]
        vals = np.asarray(view.q.d2_ac(xs), float)
        scale = 1.0 + float(np.max(np.abs(vals)))
        if np.any(np.abs(vals) > tol * scale):
            return False
    return True


# ---------------------------------------------------------------------------
# Model-spec files
# ---------------------------------------------------------------------------

_ALLOWED_FIELDS = {
    "model_id",
    "state_interval",
    "scale",
    "speed",
    "x0",
    "r",
    "horizon",
    "qprime_zero_set",
    "phi_behaviors",
    "qpp_behaviors",
    "boundaries",
    "inverse_scale",
    "speed_natural",
    "qpp_sc",
}


def _sc_from_json(obj: dict) -> ScComponent:
    unknown = set(obj) - {"base_id", "base_cdf", "multiplier", "support"}
    if unknown:
        raise SpecValidationError(f"unknown sc fields: {sorted(unknown)}")
    base = expr_from_json(obj["base_cdf"])
    mult = expr_from_json(obj["multiplier"])
    sup = obj.get("support", [0.0, 1.0])
    return ScComponent(str(obj["base_id"]), base.value, mult.value, (float(sup[0]), float(sup[1])))


def _endpoint(v) -> float:
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return float(v)


def _behaviors(items) -> tuple[LocalBehavior, ...]:
    out = []
    for it in items:
        unknown = set(it) - {"point", "side", "exponent", "coeff"}
        if unknown:
            raise SpecValidationError(f"unknown behavior fields: {sorted(unknown)}")
        out.append(
            LocalBehavior(float(it["point"]), str(it["side"]), float(it["exponent"]), float(it["coeff"]))
        )
    return tuple(out)


def load_model_spec(obj: dict) -> DiffusionSpec:
    """Parse the structured model document; unknown fields are rejected."""
    if not isinstance(obj, dict):
        raise SpecValidationError("model spec must be an object")
    unknown = set(obj) - _ALLOWED_FIELDS
    if unknown:
        raise SpecValidationError(f"unknown model fields: {sorted(unknown)}")
    for req in ("state_interval", "scale", "speed", "x0", "r"):
        if req not in obj:
            raise SpecValidationError(f"missing required field {req!r}")
    si = obj["state_interval"]
    unknown = set(si) - {"alpha", "beta", "alpha_closed", "beta_closed"}
    if unknown:
        raise SpecValidationError(f"unknown state_interval fields: {sorted(unknown)}")
    J = StateInterval(
        _endpoint(si["alpha"]),
        _endpoint(si["beta"]),
        bool(si.get("alpha_closed", False)),
        bool(si.get("beta_closed", False)),
    )
    scale_expr = expr_from_json(obj["scale"])
    scale = SmoothPiece1D.from_expr(scale_expr, (J.alpha, J.beta))
    scale.check_increasing()
    speed = measure_from_json(obj["speed"], support=(J.alpha, J.beta))
    zero_set = []
    for item in obj.get("qprime_zero_set", []):
        if isinstance(item, (list, tuple)):
            zero_set.append((float(item[0]), float(item[1])))
        else:
            zero_set.append((float(item), float(item)))
    q_expr = None
    if obj.get("inverse_scale") is not None:
        q_expr = expr_from_json(obj["inverse_scale"])
    speed_nat = None
    if obj.get("speed_natural") is not None:
        lo_u = float(scale.value(np.asarray(J.alpha))) if math.isfinite(J.alpha) else -math.inf
        hi_u = float(scale.value(np.asarray(J.beta))) if math.isfinite(J.beta) else math.inf
        speed_nat = measure_from_json(obj["speed_natural"], support=(lo_u, hi_u))
    decls = tuple((side, str(kind)) for side, kind in obj.get("boundaries", {}).items())
    for side, kind in decls:
        if side not in ("left", "right"):
            raise SpecValidationError(f"unknown boundary side {side!r}")
    qpp_sc = None
    if obj.get("qpp_sc") is not None:
        qpp_sc = _sc_from_json(obj["qpp_sc"])
    return DiffusionSpec(
        J=J,
        scale=scale,
        speed=speed,
        x0=float(obj["x0"]),
        r=float(obj["r"]),
        horizon=float(obj.get("horizon", 1.0)),
        model_id=str(obj.get("model_id", "model")),
        qprime_zero_set=tuple(zero_set),
        phi_behaviors=_behaviors(obj.get("phi_behaviors", [])),
        qpp_behaviors=_behaviors(obj.get("qpp_behaviors", [])),
        q_expr=q_expr,
        speed_natural=speed_nat,
        declared_boundaries=decls,
        qpp_sc=qpp_sc,
    )
