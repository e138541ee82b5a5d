"""Deterministic NIP / NSA / NUPBR verdicts from diffusion characteristics.

The three notions are decided by deterministic conditions on the inverse
scale function q and the natural-scale speed measure mU:

* NIP -- boundary clauses (absorbing needs r = 0 or a zero boundary value;
  reflecting needs r b mU({s(b)}) to equal the one-sided q'(s(b))/2),
  matching of the singular parts r q(x) mU_si(dx) = q''_si(dx)/2 on the
  interior, and r q mU_ac = q''/2 a.e. on the zero set of q'.
* NSA -- NIP plus local square integrability of
  phi = (q''/2 - r q mU_ac)/q' on {q' != 0}, with an unweighted collar
  condition at every reflecting boundary.
* NUPBR -- NSA plus the distance-weighted collar condition at every
  absorbing boundary; with no absorbing boundary, NUPBR equals NSA.

Verdicts are tri-state: numeric inconclusiveness is reported, never mapped
silently to failure. Equality-type conditions carry their residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .diffusion_model import (
    DiffusionSpec,
    NaturalScaleView,
    SpecValidationError,
    check_semimartingale_assumption,
    derive_natural_scale,
)
from .measure_kit import (
    DEFAULT_QUAD,
    LocalBehavior,
    QuadConfig,
    close_rel,
    decide_L2_local,
    decide_weighted_L2_boundary,
)

__all__ = [
    "ConditionReport",
    "Verdict",
    "check_nip",
    "check_nip_zero_rate",
    "check_nsa",
    "check_nupbr",
    "check_rp",
    "classify",
    "verdict_to_json",
]

HOLDS = "holds"
FAILS = "fails"
INCONCLUSIVE = "inconclusive"

_ZERO_SET_SAMPLES = 10_000
_GENERIC_WINDOWS = 32


@dataclass(frozen=True)
class ConditionReport:
    id: str
    status: str  # 'pass' | 'fail' | 'inconclusive'
    residual: Optional[float] = None
    note: str = ""


@dataclass(frozen=True)
class Verdict:
    nip: str
    nsa: str
    nupbr: str
    rp: str
    reports: tuple[ConditionReport, ...]
    impr: Optional[dict] = None

    def triple(self) -> tuple[str, str, str]:
        return (self.nip, self.nsa, self.nupbr)


def _combine(statuses: Sequence[str]) -> str:
    if any(s == "fail" for s in statuses):
        return FAILS
    if any(s == "inconclusive" for s in statuses):
        return INCONCLUSIVE
    return HOLDS


def _and_then(prev: str, cond: str) -> str:
    """Conjunction of a verdict with an extra condition status."""
    if prev == FAILS or cond == "fail":
        return FAILS
    if prev == INCONCLUSIVE or cond == "inconclusive":
        return INCONCLUSIVE
    return HOLDS


# ---------------------------------------------------------------------------
# NIP
# ---------------------------------------------------------------------------


def check_nip(
    view: NaturalScaleView, spec: DiffusionSpec, cfg: QuadConfig = DEFAULT_QUAD
) -> tuple[str, list[ConditionReport]]:
    reports: list[ConditionReport] = []
    r = spec.r
    lo_u, hi_u = view.sJ

    # (i) boundary clauses
    for side, beh in view.boundaries:
        if not beh.accessible:
            continue
        b = view.boundary_value(spec, side)
        u_b = view.boundary_image(side)
        if beh.kind == "absorbing":
            ok = (r == 0.0) or (b == 0.0)
            reports.append(
                ConditionReport(
                    "NIP.i.a",
                    "pass" if ok else "fail",
                    note=f"{side} absorbing at {b}, r = {r}",
                )
            )
        else:
            atom = view.mU.atom_mass_at(u_b, cfg.atom_loc)
            d = view.q.d_plus if side == "left" else view.q.d_minus
            lhs = r * b * atom
            rhs = 0.5 * float(d(np.asarray(u_b)))
            ok = close_rel(lhs, rhs, cfg.eq_rel)
            reports.append(
                ConditionReport(
                    "NIP.i.b",
                    "pass" if ok else "fail",
                    residual=lhs - rhs,
                    note=f"{side} reflecting: r b mU atom = {lhs}, one-sided q'/2 = {rhs}",
                )
            )

    # (ii) singular parts on the interior
    reports.extend(_check_singular_parts(view, spec, cfg))

    # (iii) a.e. identity on the declared zero set of q'
    reports.extend(_check_flat_spots(view, spec, cfg))

    return _combine([c.status for c in reports]), reports


def _check_singular_parts(
    view: NaturalScaleView, spec: DiffusionSpec, cfg: QuadConfig
) -> list[ConditionReport]:
    reports: list[ConditionReport] = []
    r = spec.r
    lo_u, hi_u = view.sJ
    q_val = view.q.value
    m_atoms = {p: m for p, m in view.mU.interior_atoms(lo_u, hi_u)}
    q_atoms = {p: m for p, m in view.qpp.interior_atoms(lo_u, hi_u)}

    # cluster atom locations within the matching tolerance, then compare
    # the pair of masses cluster by cluster
    locations = sorted(set(m_atoms) | set(q_atoms))
    clusters: list[list[float]] = []
    for p in locations:
        if clusters and p - clusters[-1][-1] <= cfg.atom_loc * (1 + abs(p)):
            clusters[-1].append(p)
        else:
            clusters.append([p])
    matched = [
        (group[0], sum(m_atoms.get(p, 0.0) for p in group), sum(q_atoms.get(p, 0.0) for p in group))
        for group in clusters
    ]

    if not matched:
        reports.append(ConditionReport("NIP.ii", "pass", residual=0.0, note="no interior atoms"))
    for p, mm, qm in matched:
        q_at = float(q_val(np.asarray(p)))
        lhs = r * q_at * mm
        rhs = 0.5 * qm
        scale = abs(r) * abs(q_at) * abs(mm) + 0.5 * abs(qm)
        ok = abs(lhs - rhs) <= cfg.eq_rel * max(scale, 1e-15)
        reports.append(
            ConditionReport(
                "NIP.ii",
                "pass" if ok else "fail",
                residual=lhs - rhs,
                note=f"atom at {p}: r q mU mass = {lhs}, q'' mass / 2 = {rhs}",
            )
        )

    m_sc = view.mU.sc
    q_sc = view.qpp.sc
    if m_sc is None and q_sc is None:
        pass
    elif m_sc is not None and q_sc is not None and m_sc.base_id != q_sc.base_id:
        reports.append(
            ConditionReport(
                "NIP.ii",
                "inconclusive",
                note=(
                    f"singular-continuous parts live on different bases "
                    f"({m_sc.base_id!r} vs {q_sc.base_id!r}); equality on all "
                    "Borel sets is not numerically decidable"
                ),
            )
        )
    else:
        base = m_sc or q_sc
        us = np.linspace(base.support[0], base.support[1], 514)[1:-1]
        lhs = r * np.asarray(q_val(us), float) * (
            np.asarray(m_sc.multiplier(us), float) if m_sc is not None else 0.0
        )
        rhs = 0.5 * (np.asarray(q_sc.multiplier(us), float) if q_sc is not None else 0.0)
        scale = float(np.max(np.abs(lhs)) + np.max(np.abs(rhs)))
        worst = float(np.max(np.abs(lhs - rhs)))
        ok = worst <= cfg.eq_rel * max(scale, 1e-15)
        reports.append(
            ConditionReport(
                "NIP.ii",
                "pass" if ok else "fail",
                residual=worst,
                note=f"sc multipliers compared on {len(us)} base-support points",
            )
        )
    return reports


def _check_flat_spots(
    view: NaturalScaleView, spec: DiffusionSpec, cfg: QuadConfig
) -> list[ConditionReport]:
    """Condition (iii): r q mU_ac = q''/2 a.e. where q' vanishes.

    Isolated points are Lebesgue-null and impose nothing; each declared
    interval is sampled densely and a single violation fails the condition.
    """
    reports: list[ConditionReport] = []
    r = spec.r
    intervals = [(a, b) for a, b in spec.qprime_zero_set if b > a]
    if not intervals:
        reports.append(
            ConditionReport("NIP.iii", "pass", residual=0.0, note="zero set of q' is Lebesgue-null")
        )
        return reports
    mU_ac = view.mU.ac_density
    for a, b in intervals:
        xs = np.linspace(a, b, _ZERO_SET_SAMPLES + 2)[1:-1]
        rhs = 0.5 * np.asarray(view.q.d2_ac(xs), float)
        if r == 0.0 or mU_ac is None:
            lhs = np.zeros_like(xs)
        else:
            lhs = r * np.asarray(view.q.value(xs), float) * np.asarray(mU_ac(xs), float)
        diff = np.abs(lhs - rhs)
        scale = np.maximum(np.abs(lhs), np.abs(rhs))
        bad = diff > cfg.eq_rel * np.maximum(scale, 1e-15)
        worst = float(np.max(diff))
        reports.append(
            ConditionReport(
                "NIP.iii",
                "fail" if bool(np.any(bad)) else "pass",
                residual=worst,
                note=f"sampled {len(xs)} points of the flat interval [{a}, {b}]",
            )
        )
    return reports


def check_nip_zero_rate(
    view: NaturalScaleView, spec: DiffusionSpec, cfg: QuadConfig = DEFAULT_QUAD
) -> tuple[str, list[ConditionReport]]:
    """Zero-rate fast path: reflecting boundaries need a flat inverse scale
    at the boundary image, and q'' must have no singular part."""
    if spec.r != 0.0:
        raise SpecValidationError("zero-rate NIP check called with r != 0")
    reports: list[ConditionReport] = []
    for side, beh in view.boundaries:
        if beh.kind != "reflecting":
            continue
        u_b = view.boundary_image(side)
        d = view.q.d_plus if side == "left" else view.q.d_minus
        val = float(d(np.asarray(u_b)))
        ok = abs(val) <= cfg.eq_rel
        reports.append(
            ConditionReport(
                "NIP.i.b",
                "pass" if ok else "fail",
                residual=val,
                note=f"{side} reflecting requires q'(s(b)) = 0 at zero rate",
            )
        )
    lo_u, hi_u = view.sJ
    si_atoms = view.qpp.interior_atoms(lo_u, hi_u)
    si_clean = not si_atoms and view.qpp.sc is None
    reports.append(
        ConditionReport(
            "NIP.ii",
            "pass" if si_clean else "fail",
            note="q'' must be absolutely continuous at zero rate"
            + ("" if si_clean else f" (atoms at {[p for p, _ in si_atoms]})"),
        )
    )
    return _combine([c.status for c in reports]), reports


# ---------------------------------------------------------------------------
# NSA / NUPBR
# ---------------------------------------------------------------------------


def _interior_behaviors(view: NaturalScaleView, spec: DiffusionSpec) -> list[LocalBehavior]:
    lo_u, hi_u = view.sJ
    out = []
    for b in spec.phi_behaviors:
        if lo_u < b.point < hi_u:
            out.append(b)
    return out


def _boundary_behaviors(view: NaturalScaleView, spec: DiffusionSpec, u_b: float) -> list[LocalBehavior]:
    return [b for b in spec.phi_behaviors if abs(b.point - u_b) <= 1e-12 * (1 + abs(u_b))]


def _collar_length(view: NaturalScaleView) -> float:
    lo_u, hi_u = view.sJ
    span = hi_u - lo_u
    return min(1.0, span / 4.0) if math.isfinite(span) else 1.0


def _phi_l2_interior(
    view: NaturalScaleView, spec: DiffusionSpec, cfg: QuadConfig
) -> ConditionReport:
    """phi in L2_loc of the open image interval.

    Windows around every annotated interior singular point (decided by the
    exponent rule) plus a fixed panel of generic windows over a compact
    probe region around the start image.
    """
    lo_u, hi_u = view.sJ
    behaviors = _interior_behaviors(view, spec)
    statuses: list[str] = []
    worst_note = ""

    for beh in behaviors:
        gap = min(1.0, 0.5 * min(beh.point - lo_u, hi_u - beh.point))
        window = (beh.point - gap, beh.point + gap)
        window = (max(window[0], lo_u + 1e-12), min(window[1], hi_u - 1e-12))
        v = decide_L2_local(view.phi, window, behaviors=[beh], cfg=cfg, auto_detect=False)
        statuses.append(v.status)
        if v.status != "finite":
            worst_note = f"phi**2 {v.status} near interior point {beh.point}"
            break

    if "divergent" not in statuses:
        margin = 0.5 * _collar_length(view)
        lo_c = lo_u + margin if math.isfinite(lo_u) else view.s_x0 - 8.0
        hi_c = hi_u - margin if math.isfinite(hi_u) else view.s_x0 + 8.0
        lo_c, hi_c = min(lo_c, view.s_x0 - 0.5), max(hi_c, view.s_x0 + 0.5)
        edges = np.linspace(lo_c, hi_c, _GENERIC_WINDOWS + 1)
        pts = [b.point for b in behaviors]
        for a, b in zip(edges[:-1], edges[1:]):
            local = [bb for bb in behaviors if a <= bb.point <= b]
            v = decide_L2_local(view.phi, (float(a), float(b)), behaviors=local, cfg=cfg)
            statuses.append(v.status)
            if v.status == "divergent":
                worst_note = f"phi**2 divergent on generic window [{a:.4g}, {b:.4g}]"
                break
            if v.status == "inconclusive" and not worst_note:
                worst_note = f"phi**2 inconclusive on window [{a:.4g}, {b:.4g}]"

    status = (
        "fail"
        if "divergent" in statuses
        else ("inconclusive" if "inconclusive" in statuses else "pass")
    )
    return ConditionReport("NSA.iv.loc", status, note=worst_note or "local square integrability of phi")


def _phi_reflecting_collars(
    view: NaturalScaleView, spec: DiffusionSpec, cfg: QuadConfig
) -> list[ConditionReport]:
    reports = []
    ell = _collar_length(view)
    for side, beh in view.boundaries:
        if beh.kind != "reflecting":
            continue
        u_b = view.boundary_image(side)
        window = (u_b, u_b + ell) if side == "left" else (u_b - ell, u_b)
        bb = _boundary_behaviors(view, spec, u_b)
        v = decide_L2_local(view.phi, window, behaviors=bb, suspicious=[u_b], cfg=cfg)
        status = {"finite": "pass", "divergent": "fail", "inconclusive": "inconclusive"}[v.status]
        reports.append(
            ConditionReport(
                "NSA.iv.refl",
                status,
                note=f"collar integral of phi**2 at the {side} reflecting boundary: {v.status}",
            )
        )
    return reports


def check_nsa(
    view: NaturalScaleView,
    spec: DiffusionSpec,
    cfg: QuadConfig = DEFAULT_QUAD,
    nip_status: Optional[str] = None,
) -> tuple[str, list[ConditionReport]]:
    if nip_status is None:
        nip_status, _ = check_nip(view, spec, cfg)
    reports = [_phi_l2_interior(view, spec, cfg)]
    reports.extend(_phi_reflecting_collars(view, spec, cfg))
    status = nip_status
    for c in reports:
        status = _and_then(status, c.status)
    return status, reports


def check_nupbr(
    view: NaturalScaleView,
    spec: DiffusionSpec,
    cfg: QuadConfig = DEFAULT_QUAD,
    nsa_status: Optional[str] = None,
) -> tuple[str, list[ConditionReport]]:
    if nsa_status is None:
        nsa_status, _ = check_nsa(view, spec, cfg)
    reports: list[ConditionReport] = []
    ell = _collar_length(view)
    has_absorbing = False
    for side, beh in view.boundaries:
        if beh.kind != "absorbing":
            continue
        has_absorbing = True
        u_b = view.boundary_image(side)
        window = (u_b, u_b + ell) if side == "left" else (u_b - ell, u_b)
        bb = _boundary_behaviors(view, spec, u_b)
        v = decide_weighted_L2_boundary(view.phi, u_b, window, behaviors=bb, cfg=cfg)
        status = {"finite": "pass", "divergent": "fail", "inconclusive": "inconclusive"}[v.status]
        reports.append(
            ConditionReport(
                "NUPBR.v",
                status,
                note=f"distance-weighted collar integral of phi**2 at the {side} absorbing boundary: {v.status}",
            )
        )
    if not has_absorbing:
        # with no absorbing boundary the two notions coincide
        return nsa_status, reports
    status = nsa_status
    for c in reports:
        status = _and_then(status, c.status)
    return status, reports


def check_rp(view: NaturalScaleView, spec: DiffusionSpec) -> tuple[str, ConditionReport]:
    """Representation property: the zero set of q' must be Lebesgue-null."""
    fat = [(a, b) for a, b in spec.qprime_zero_set if b > a]
    if fat:
        total = sum(b - a for a, b in fat)
        return FAILS, ConditionReport(
            "RP", "fail", residual=total, note=f"zero set of q' has Lebesgue measure {total:.6g}"
        )
    return HOLDS, ConditionReport("RP", "pass", residual=0.0, note="zero set of q' is Lebesgue-null")


# ---------------------------------------------------------------------------
# Aggregate
# ---------------------------------------------------------------------------


def classify(spec: DiffusionSpec, cfg: QuadConfig = DEFAULT_QUAD) -> Verdict:
    """Derive, validate, and produce the full tri-state verdict."""
    view = derive_natural_scale(spec, cfg)
    assumption = check_semimartingale_assumption(view, spec, cfg)
    if not assumption.passed:
        raise SpecValidationError(
            "the price process fails the semimartingale prerequisites: "
            + "; ".join(assumption.failures())
        )

    nip, nip_reports = check_nip(view, spec, cfg)
    if spec.r == 0.0:
        zr, _ = check_nip_zero_rate(view, spec, cfg)
        if zr != nip and INCONCLUSIVE not in (zr, nip):
            raise RuntimeError(
                f"internal inconsistency: zero-rate fast path says {zr}, general path {nip}"
            )
    nsa, nsa_reports = check_nsa(view, spec, cfg, nip_status=nip)
    nupbr, nupbr_reports = check_nupbr(view, spec, cfg, nsa_status=nsa)
    rp, rp_report = check_rp(view, spec)

    # ordering: holds can only weaken along NUPBR -> NSA -> NIP
    order = {HOLDS: 2, INCONCLUSIVE: 1, FAILS: 0}
    assert order[nupbr] <= order[nsa] <= order[nip], (nip, nsa, nupbr)

    us = _gamma_probe_points(view)
    impr = {
        "formula": "gamma(u) = (q''(u)/2 - r q(u) mU_ac(u)) / q'(u)^2 on {q' != 0}, 0 at boundary images",
        "samples": [[float(u), float(np.asarray(view.gamma(np.asarray([u])))[0])] for u in us],
    }
    return Verdict(
        nip=nip,
        nsa=nsa,
        nupbr=nupbr,
        rp=rp,
        reports=tuple(nip_reports + nsa_reports + nupbr_reports + [rp_report]),
        impr=impr,
    )


def _gamma_probe_points(view: NaturalScaleView) -> np.ndarray:
    lo_u, hi_u = view.sJ
    lo = lo_u + 0.25 if math.isfinite(lo_u) else view.s_x0 - 2.0
    hi = hi_u - 0.25 if math.isfinite(hi_u) else view.s_x0 + 2.0
    if not lo < hi:
        lo, hi = view.s_x0 - 0.5, view.s_x0 + 0.5
    return np.linspace(lo, hi, 9)


def verdict_to_json(spec: DiffusionSpec, v: Verdict) -> dict:
    """Stable-key-order report object for writing and diffing."""
    return {
        "model_id": spec.model_id,
        "r": spec.r,
        "nip": v.nip,
        "nsa": v.nsa,
        "nupbr": v.nupbr,
        "rp": v.rp,
        "reports": [
            {
                "id": c.id,
                "status": c.status,
                "residual": c.residual,
                "note": c.note,
            }
            for c in v.reports
        ],
        "impr": v.impr,
    }
