import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import LINK_LENGTH, LINK_MASS
from nmodes.errors import ContractViolation, ModelSpecError
from nmodes.models import (
    RigidChainParams,
    SoftArmParams,
    backbone_position,
    build_pcc,
    build_rigid_chain,
    load_model_spec,
    model_from_spec,
    reference_arm,
)
from oracles import arc_point, frame_chain_points, rod_chain_mass

L = 0.4


def spec_doc(kind="pcc", n=3, **extra):
    doc = {
        "kind": kind,
        "radius_m": 0.02,
        "density_kg_m3": 1062.0,
        "rest_length_m": 0.4,
        "young_modulus_pa": 0.66e6,
        "poisson": 0.5,
        "n_bodies": n,
    }
    doc.update(extra)
    return doc


# ---------------------------------------------------------------------------
# PCC geometry
# ---------------------------------------------------------------------------
def test_straight_pcc_tip(models):
    np.testing.assert_allclose(backbone_position(models["pcc1"], [0.0], L), [0.0, 0.0, -L], atol=1e-15)


def test_semicircle_tip(models):
    tip = backbone_position(models["pcc1"], [np.pi], L)
    assert abs(tip[0]) == pytest.approx(2 * L / np.pi, rel=1e-13)
    assert tip[2] == pytest.approx(0.0, abs=1e-14)
    assert tip[1] == 0.0


@pytest.mark.parametrize("theta", [0.3, -1.1, 2.7])
def test_single_arc_matches_closed_form(models, theta):
    s = np.linspace(0, L, 17)
    got = models["pcc1"].backbone(np.array([theta]), s)
    expected = arc_point(theta, L, s)
    np.testing.assert_allclose(np.abs(got[:, 0]), np.abs(expected[:, 0]), atol=1e-14)
    np.testing.assert_allclose(got[:, 2], expected[:, 2], atol=1e-14)


@pytest.mark.parametrize("a", [0.2, 1.0, 2.5])
def test_s_shape_keeps_tip_tangent(models, a):
    m = models["pcc2"]
    h = 1e-5
    p0, p1, p2 = m.backbone(np.array([a, -a]), [L, L - h, L - 2 * h])
    t = (3 * p0 - 4 * p1 + p2) / (2 * h)
    np.testing.assert_allclose(t / np.linalg.norm(t), [0, 0, -1], atol=1e-6)


@pytest.mark.parametrize("q1", [1e-3, -2e-3])
def test_small_bending_taylor(models, q1):
    s = np.linspace(0, L, 9)
    lateral = models["pcc1"].backbone(np.array([q1]), s)[:, 0]
    np.testing.assert_allclose(np.abs(lateral), s**2 * abs(q1) / (2 * L), rtol=1e-3, atol=1e-15)


def test_backbone_rest_axis(models):
    for m in models.values():
        s = np.linspace(0, L, 13)
        pts = m.backbone(m.q_eq, s)
        np.testing.assert_allclose(pts, np.stack([0 * s, 0 * s, -s], axis=1), atol=1e-15)


def test_backbone_position_domain(models):
    with pytest.raises(ContractViolation):
        backbone_position(models["pcc2"], [0.0, 0.0], L + 1e-6)
    with pytest.raises(ContractViolation):
        backbone_position(models["pcc2"], [0.0, 0.0], -1e-9)


# ---------------------------------------------------------------------------
# rigid chain
# ---------------------------------------------------------------------------
def test_rigid_recipe_values():
    p = RigidChainParams.from_soft_arm(reference_arm(1), 10)
    assert p.joint_stiffness == pytest.approx(2.073, abs=1e-3)
    assert p.link_mass == pytest.approx(0.05338, abs=1e-5)
    assert p.link_length == pytest.approx(0.04)


def test_single_rod_inertia():
    m = build_rigid_chain(RigidChainParams(1, LINK_LENGTH, LINK_MASS, 1.0))
    np.testing.assert_allclose(m.mass_matrix([0.0]), [[LINK_MASS * LINK_LENGTH**2 / 3]], rtol=1e-14)


def test_double_pendulum_inertia_at_rest():
    m = build_rigid_chain(RigidChainParams(2, LINK_LENGTH, LINK_MASS, 1.0))
    # hand derivation for two uniform rods in relative angles at q = 0
    ml2 = LINK_MASS * LINK_LENGTH**2
    expected = ml2 * np.array([[1 / 3 + 1 + 1 / 2 * 2 + 1 / 3, 1 / 2 + 1 / 3], [1 / 2 + 1 / 3, 1 / 3]])
    np.testing.assert_allclose(m.mass_matrix([0.0, 0.0]), expected, rtol=1e-13)


def test_rigid_chain_matches_frame_composition(models, rng):
    m = models["rigid10"]
    s = np.arange(11) * 0.04
    for _ in range(10):
        q = rng.normal(size=10)
        np.testing.assert_allclose(m.backbone(q, s), frame_chain_points(q, 0.04, s), atol=1e-14)
        s_mid = rng.uniform(0, L, 7)
        np.testing.assert_allclose(m.backbone(q, s_mid), frame_chain_points(q, 0.04, s_mid), atol=1e-14)


def test_rigid_chain_mass_matches_rod_formula(models, rng):
    m = models["rigid10"]
    p = RigidChainParams.from_soft_arm(reference_arm(1), 10)
    for _ in range(10):
        q = rng.normal(size=10)
        M = m.mass_matrix(q)
        expected = rod_chain_mass(q, p.link_mass, p.link_length)
        np.testing.assert_allclose(M, expected, rtol=1e-10, atol=1e-10 * np.abs(expected).max())


# ---------------------------------------------------------------------------
# backbone invariants
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("name", ["pcc2", "pcc5", "rigid10"])
def test_segments_join_continuously(models, name, rng):
    m = models[name]
    bounds = np.cumsum(m.segment_lengths)[:-1]
    eps = 1e-13
    for _ in range(10):
        q = rng.normal(size=m.n_dofs)
        left = m.backbone(q, bounds - eps)
        right = m.backbone(q, bounds + eps)
        np.testing.assert_allclose(left, right, atol=1e-12)


@pytest.mark.parametrize("name", ["pcc1", "pcc3", "pcc5", "rigid10"])
def test_backbone_is_inextensible(models, name, rng):
    m = models[name]
    # 10^4 intervals; the grid contains the rigid joints so chords never cut corners
    s = np.linspace(0, L, 10_001)
    for _ in range(5):
        pts = m.backbone(rng.normal(scale=1.5, size=m.n_dofs), s)
        length = np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))
        assert length == pytest.approx(L, rel=1e-6)


@pytest.mark.parametrize("name", ["pcc1", "pcc4"])
def test_straight_segment_branch_is_continuous(models, name, rng):
    m = models[name]
    s = np.linspace(0, L, 11)
    base = rng.normal(size=m.n_dofs)
    for i in range(m.n_dofs):
        qs = []
        for v in (-1e-12, 0.0, 1e-12):
            q = base.copy()
            q[i] = v
            qs.append(q)
        H = [m.backbone(q, s) for q in qs]
        J = [m.backbone_jacobian(q, L) for q in qs]
        np.testing.assert_allclose(H[0], H[1], atol=1e-9)
        np.testing.assert_allclose(H[2], H[1], atol=1e-9)
        np.testing.assert_allclose(J[0], J[1], atol=1e-9)
        np.testing.assert_allclose(J[2], J[1], atol=1e-9)


@pytest.mark.parametrize("name", ["pcc2", "rigid10"])
def test_jacobian_matches_finite_differences(models, name, rng):
    m = models[name]
    q = rng.normal(size=m.n_dofs)
    h = 1e-7
    J = m.backbone_jacobian(q, 0.31)
    fd = np.stack(
        [(m.backbone(q + h * e, [0.31])[0] - m.backbone(q - h * e, [0.31])[0]) / (2 * h) for e in np.eye(m.n_dofs)],
        axis=1,
    )
    np.testing.assert_allclose(J, fd, atol=1e-8)


def test_first_frequencies_are_comparable(linear_modes):
    rigid = linear_modes["rigid10"].omegas[0]
    for n in range(1, 6):
        assert abs(linear_modes[f"pcc{n}"].omegas[0] / rigid - 1) < 0.25


# ---------------------------------------------------------------------------
# parameters and spec files
# ---------------------------------------------------------------------------
def test_soft_arm_derived_quantities():
    arm = reference_arm(1)
    assert arm.bending_stiffness == pytest.approx(0.66e6 * np.pi * 0.02**4 / 4)
    assert arm.line_density == pytest.approx(1062 * np.pi * 0.02**2)


@pytest.mark.parametrize("field", ["radius", "density", "rest_length", "young_modulus", "gravity"])
def test_soft_arm_rejects_non_positive(field):
    kwargs = dict(radius=0.02, density=1062.0, rest_length=0.4, young_modulus=0.66e6)
    kwargs[field] = 0.0
    with pytest.raises(ModelSpecError):
        SoftArmParams(**kwargs)


def test_soft_arm_rejects_zero_bodies():
    with pytest.raises(ModelSpecError):
        reference_arm(0)


def test_load_pcc_spec(tmp_path):
    path = tmp_path / "arm.json"
    path.write_text(json.dumps(spec_doc("pcc", 3)))
    m = load_model_spec(path)
    assert m.n_dofs == 3
    assert m.length == pytest.approx(0.4)


def test_load_rigid_spec_from_stream():
    m = load_model_spec(io.StringIO(json.dumps(spec_doc("rigid_chain", 10))))
    assert m.n_dofs == 10
    assert m.segment_lengths[0] == pytest.approx(0.04)


def test_spec_missing_radius_names_field():
    doc = spec_doc()
    del doc["radius_m"]
    with pytest.raises(ModelSpecError, match="radius_m"):
        model_from_spec(doc)


def test_spec_unknown_field_rejected():
    with pytest.raises(ModelSpecError, match="colour"):
        model_from_spec(spec_doc(colour="red"))


def test_spec_unknown_kind_rejected():
    with pytest.raises(ModelSpecError):
        model_from_spec(spec_doc(kind="cosserat"))


def test_spec_parse_error():
    with pytest.raises(ModelSpecError):
        load_model_spec(io.StringIO("{not json"))


def test_spec_defaults_match_reference_models(models):
    assert model_from_spec(spec_doc("pcc", 5)).fingerprint == models["pcc5"].fingerprint
    assert model_from_spec(spec_doc("rigid_chain", 10)).fingerprint == models["rigid10"].fingerprint


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(["radius_m", "density_kg_m3", "rest_length_m", "young_modulus_pa", "poisson", "gravity_m_s2"]),
    st.floats(1.001, 3.0),
)
def test_fingerprint_covers_every_field(field, factor):
    base = model_from_spec(spec_doc())
    doc = spec_doc()
    doc[field] = doc.get(field, 9.81) * factor
    assert model_from_spec(doc).fingerprint != base.fingerprint


def test_fingerprint_covers_kind_and_order():
    prints = {model_from_spec(spec_doc(k, n)).fingerprint for k in ("pcc", "rigid_chain") for n in (2, 3)}
    assert len(prints) == 4


def test_builders_accept_parameter_blocks():
    arm = reference_arm(2)
    assert build_pcc(arm).n_dofs == 2
    assert build_rigid_chain(RigidChainParams.from_soft_arm(arm, 4)).n_dofs == 4
