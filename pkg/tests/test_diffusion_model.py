"""Boundary classification, natural-scale derivation, standing assumption."""

import math

import numpy as np
import pytest

from diffarb.diffusion_model import (
    DiffusionSpec,
    SpecValidationError,
    StateInterval,
    check_semimartingale_assumption,
    classify_boundary,
    derive_natural_scale,
    flat_spot_second_derivative_ok,
    load_model_spec,
    semimartingale_decomposition_fields,
)
from diffarb.measure_kit import DecomposedMeasure, PowerSigned, SmoothPiece1D
from diffarb.model_catalog import build_model

INF = math.inf


def test_state_interval_validation():
    with pytest.raises(SpecValidationError):
        StateInterval(2.0, 1.0)
    with pytest.raises(SpecValidationError):
        StateInterval(-INF, 1.0, alpha_closed=True)


# ---------------------------------------------------------------------------
# boundary classification
# ---------------------------------------------------------------------------


def test_bm_boundaries_inaccessible():
    spec = build_model("brownian_motion")
    assert classify_boundary(spec, "left").kind == "inaccessible"
    assert classify_boundary(spec, "right").kind == "inaccessible"


def test_reflected_bm_left_boundary_sticky():
    spec = build_model("sticky_reflected_bm", {"rho": 0.7})
    beh = classify_boundary(spec, "left")
    assert beh.kind == "reflecting"
    assert beh.stickiness == 0.7


def test_absorbing_from_infinite_atom():
    spec = build_model("gen_squared_bessel", {"m0": INF})
    assert classify_boundary(spec, "left").kind == "absorbing"


def test_declaration_conflict_is_error():
    spec = build_model("sticky_reflected_bm")
    bad = DiffusionSpec(
        **{**spec.__dict__, "declared_boundaries": (("left", "inaccessible"),)}
    )
    with pytest.raises(SpecValidationError):
        classify_boundary(bad, "left")


def test_absorbing_start_rejected():
    # x0 at an absorbing boundary is excluded by the standing assumptions
    with pytest.raises(SpecValidationError, match="absorbing"):
        spec = build_model("gen_squared_bessel", {"m0": INF, "x0": 1.0})
        spec = DiffusionSpec(**{**spec.__dict__, "x0": 0.0})
        derive_natural_scale(spec)


# ---------------------------------------------------------------------------
# natural-scale derivation
# ---------------------------------------------------------------------------


def test_bm_fields_vanish():
    spec = build_model("brownian_motion", {"r": 0.0})
    view = derive_natural_scale(spec)
    u = np.linspace(-3, 3, 13)
    assert np.allclose(view.phi(u), 0.0)
    assert np.allclose(view.gamma(u), 0.0)


def test_cubed_bm_phi_is_one_over_u():
    view = derive_natural_scale(build_model("cubed_bm"))
    u = np.array([-2.0, -0.5, 0.5, 3.0])
    assert np.allclose(view.phi(u), 1.0 / u, rtol=1e-12)
    assert view.phi(np.array([0.0]))[0] == 0.0  # indicator at the flat point


def test_squared_bessel_gamma_matches_price_form():
    # gamma(U_t) must equal delta / (4 Y_t) with Y = q(U)
    delta = 1.0
    view = derive_natural_scale(build_model("squared_bessel", {"delta": delta}))
    u = np.array([0.4, 1.0, 1.7])
    y = np.asarray(view.q.value(u), float)
    assert np.allclose(view.gamma(u), delta / (4 * y), rtol=1e-10)


def test_view_round_trip_q_of_scale():
    spec = build_model("sticky_skew")
    view = derive_natural_scale(spec)
    xs = np.linspace(-2, 4, 23)
    us = np.asarray(spec.scale.value(xs), float)
    assert np.allclose(np.asarray(view.q.value(us), float), xs, rtol=1e-10, atol=1e-10)


# ---------------------------------------------------------------------------
# semimartingale standing assumption
# ---------------------------------------------------------------------------


def test_cube_passes_assumption():
    spec = build_model("cubed_bm")
    view = derive_natural_scale(spec)
    assert check_semimartingale_assumption(view, spec).passed


def test_sqrt_abs_bm_fails_assumption():
    # scale sign(x) x^2 means q(u) = sign(u) sqrt|u|: q' explodes at 0 with
    # non-integrable variation; the price process is not a semimartingale
    J = StateInterval(-INF, INF)
    scale = SmoothPiece1D.from_expr(PowerSigned(0.0, 2.0), (J.alpha, J.beta))
    spec = DiffusionSpec(
        J=J,
        scale=scale,
        speed=DecomposedMeasure(support=(J.alpha, J.beta), ac_density=lambda x: np.ones_like(x)),
        x0=1.0,
        r=0.0,
        q_expr=PowerSigned(0.0, 0.5),
    )
    view = derive_natural_scale(spec)
    report = check_semimartingale_assumption(view, spec)
    assert not report.passed


def test_affine_passes_assumption():
    spec = build_model("brownian_motion")
    view = derive_natural_scale(spec)
    assert check_semimartingale_assumption(view, spec).passed


# ---------------------------------------------------------------------------
# decomposition fields
# ---------------------------------------------------------------------------


def test_decomposition_bm():
    spec = build_model("brownian_motion", {"r": 0.0})
    view = derive_natural_scale(spec)
    f = semimartingale_decomposition_fields(view, spec)
    u = np.linspace(-2, 2, 9)
    assert np.allclose(f.qv_factor(u), 1.0)
    assert np.allclose(f.drift_measure.ac_density(u), 0.0)
    assert f.drift_measure.atoms == ()
    assert f.boundary_terms == ()


@pytest.mark.parametrize("r,rho,expect_zero", [(0.5, 1.0, True), (0.5, 0.9, False), (0.0, 1.0, False)])
def test_decomposition_sticky_boundary_term(r, rho, expect_zero):
    spec = build_model("sticky_reflected_bm", {"r": r, "rho": rho})
    view = derive_natural_scale(spec)
    f = semimartingale_decomposition_fields(view, spec)
    (term,) = f.boundary_terms
    assert term.lt_coefficient == 0.5
    assert (abs(term.net) < 1e-12) == expect_zero


def test_decomposition_skew_atom():
    # pure skew at zero rate: the drift measure is the half kink jump
    spec = build_model("sticky_skew", {"r": 0.0, "kappa": 0.75, "c": 1.0, "xi": 0.0})
    view = derive_natural_scale(spec)
    f = semimartingale_decomposition_fields(view, spec)
    atoms = dict(f.drift_measure.atoms)
    kappa = 0.75
    assert abs(atoms[0.0] - 0.5 * (2 * kappa - 1) / ((1 - kappa) * kappa)) < 1e-12


def test_smooth_drift_matches_half_q2():
    # r = 0 and polynomial q: classical relation drift density = q''(x)/2
    spec = build_model("cubed_bm", {"r": 0.0})
    view = derive_natural_scale(spec)
    f = semimartingale_decomposition_fields(view, spec)
    u = np.linspace(-1.5, 1.5, 11)
    assert np.allclose(f.drift_measure.ac_density(u), 0.5 * 6.0 * u, rtol=1e-12)


def test_flat_spot_consistency_guard():
    spec = build_model("fat_cantor")
    view = derive_natural_scale(spec)
    assert flat_spot_second_derivative_ok(view, spec)


# ---------------------------------------------------------------------------
# model-spec documents
# ---------------------------------------------------------------------------


def _bm_doc():
    return {
        "model_id": "doc_bm",
        "state_interval": {"alpha": "-inf", "beta": "inf"},
        "scale": {"node": "affine", "a": 1.0, "b": 0.0},
        "speed": {"ac": {"node": "const", "c": 1.0}, "atoms": [], "sc": None},
        "x0": 0.0,
        "r": 0.0,
        "horizon": 1.0,
    }


def test_load_model_spec_round_trip():
    spec = load_model_spec(_bm_doc())
    assert spec.model_id == "doc_bm"
    view = derive_natural_scale(spec)
    assert view.sJ == (-INF, INF)


def test_load_model_spec_rejects_unknown_fields():
    doc = _bm_doc()
    doc["extra_knob"] = 1
    with pytest.raises(SpecValidationError, match="extra_knob"):
        load_model_spec(doc)


def test_load_model_spec_requires_core_fields():
    doc = _bm_doc()
    del doc["speed"]
    with pytest.raises(SpecValidationError, match="speed"):
        load_model_spec(doc)


def test_load_model_spec_sticky_boundary():
    doc = {
        "state_interval": {"alpha": 1.0, "beta": "inf", "alpha_closed": True},
        "scale": {"node": "affine", "a": 1.0, "b": 0.0},
        "speed": {"ac": {"node": "const", "c": 1.0}, "atoms": [[1.0, 1.0]], "sc": None},
        "x0": 1.5,
        "r": 0.5,
        "boundaries": {"left": "reflecting"},
    }
    spec = load_model_spec(doc)
    assert classify_boundary(spec, "left").stickiness == 1.0
