import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalefree.benchmark import EXAMPLE_A, EXAMPLE_B, EXAMPLE_C, PRINTED_H, PRINTED_K, printed_spec
from scalefree.errors import DimensionError, SynthesisError
from scalefree.lti import LtiSystem
from scalefree.protocols import (ControllerState, ProtocolKind, ProtocolSpec, initial_state,
                                 protocol1_step, protocol2_step, protocol3_step, protocol4_step)
from scalefree.synthesis import GainSet, default_target, design_gains, design_precompensator

floats = st.floats(-10, 10, allow_nan=False)
P2_SPEC = ProtocolSpec.partial_state(design_gains(LtiSystem(EXAMPLE_A, EXAMPLE_B, EXAMPLE_C)))


@pytest.fixture
def scalar_spec():
    return ProtocolSpec.full_state([[1.0]], [[1.0]], [[0.5]])


@pytest.fixture
def p2_spec(example_agent):
    return ProtocolSpec.partial_state(design_gains(example_agent))


def identity_p3(target):
    agent = LtiSystem(target.system.A, target.system.B, target.system.C, Cm=target.system.C)
    comp = design_precompensator(agent, target)
    g = design_gains(target.system)
    return agent, comp, ProtocolSpec.output_sync(target, g, [comp])


# -- protocol 1 --------------------------------------------------------------

def test_scalar_full_state_step(scalar_spec):
    new, u, rho = protocol1_step(ControllerState(np.array([1.0])), [0.2], [0.1], scalar_spec)
    assert u == pytest.approx([-0.5], abs=1e-15)
    assert new.eta == pytest.approx([0.6], abs=1e-15)
    assert rho == pytest.approx([1.0])


def test_zero_state_zero_successor(scalar_spec, p2_spec):
    new, u, _ = protocol1_step(initial_state(scalar_spec), [0.0], [0.0], scalar_spec)
    assert np.all(new.eta == 0) and np.all(u == 0)
    new, u, _ = protocol2_step(initial_state(p2_spec), [0.0], np.zeros(3), p2_spec)
    assert np.all(new.eta == 0) and np.all(new.xhat == 0) and np.all(u == 0)


def test_zero_gain_gives_zero_input():
    spec = ProtocolSpec.full_state([[0.5]], [[1.0]], [[0.0]])
    state = ControllerState(np.array([0.7]))
    for zeta, zh in ((0.3, -0.1), (1.0, 2.0), (-4.0, 0.0)):
        state, u, _ = protocol1_step(state, [zeta], [zh], spec)
        assert u == pytest.approx([0.0])


def test_full_state_batched_rows_match_single(scalar_spec):
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3)) * 0.3
    spec = ProtocolSpec.full_state(A, np.eye(3)[:, :1], design_gains(LtiSystem(A, np.eye(3)[:, :1],
                                                                               np.eye(3))).K)
    eta, z, zh = (rng.standard_normal((4, 3)) for _ in range(3))
    batch, ub, _ = protocol1_step(ControllerState(eta), z, zh, spec)
    for i in range(4):
        one, u1, _ = protocol1_step(ControllerState(eta[i]), z[i], zh[i], spec)
        assert np.allclose(one.eta, batch.eta[i], atol=1e-15)
        assert np.allclose(u1, ub[i], atol=1e-15)


# -- protocol 2 --------------------------------------------------------------

def test_partial_state_benchmark_step_with_published_gains():
    spec = printed_spec()
    assert not spec.certified
    e1 = np.array([1.0, 0.0, 0.0])
    new, u, _ = protocol2_step(ControllerState(e1, np.zeros(3)), [0.0], np.zeros(3), spec)
    assert u == pytest.approx([-0.0695], abs=1e-15)
    assert new.eta == pytest.approx([0.5, 0.0, -0.0695], abs=1e-15)
    assert np.all(new.xhat == 0)


def test_published_gains_refused_by_default():
    with pytest.raises(SynthesisError, match="rho_feedback = 1.2651851"):
        ProtocolSpec(ProtocolKind.PARTIAL_STATE, EXAMPLE_A, EXAMPLE_B, EXAMPLE_C,
                     PRINTED_K, PRINTED_H)
    with pytest.raises(SynthesisError):
        GainSet(EXAMPLE_A, EXAMPLE_B, EXAMPLE_C, PRINTED_K, PRINTED_H)


def test_partial_state_step_matches_hand_formula(p2_spec):
    rng = np.random.default_rng(7)
    eta, xhat, zh = rng.standard_normal((3, 3))
    zeta = rng.standard_normal(1)
    A, B, C, K, H = p2_spec.A, p2_spec.B, p2_spec.C, p2_spec.K, p2_spec.H
    new, u, _ = protocol2_step(ControllerState(eta, xhat), zeta, zh, p2_spec)
    assert np.allclose(u, -K @ eta, atol=1e-14)
    assert np.allclose(new.eta, A @ eta + B @ u + A @ xhat - A @ zh, atol=1e-14)
    assert np.allclose(new.xhat, A @ xhat - B @ K @ zh + H @ (zeta - C @ xhat), atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.lists(floats, min_size=8, max_size=8), st.lists(floats, min_size=8, max_size=8),
       floats, floats)
def test_partial_state_step_is_linear(v1, v2, a, b):
    spec = P2_SPEC

    def step(v):
        v = np.asarray(v)
        s, u, _ = protocol2_step(ControllerState(v[:3], v[3:6]), v[6:7], np.r_[v[7], 0, 0], spec)
        return np.concatenate([s.eta, s.xhat, u])

    lhs = step(a * np.asarray(v1) + b * np.asarray(v2))
    rhs = a * step(v1) + b * step(v2)
    assert np.allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs).max()))


def test_step_is_deterministic(p2_spec):
    rng = np.random.default_rng(0)
    args = (ControllerState(rng.standard_normal(3), rng.standard_normal(3)),
            rng.standard_normal(1), rng.standard_normal(3))
    a = protocol2_step(*args, p2_spec)
    b = protocol2_step(*args, p2_spec)
    assert np.array_equal(a[0].eta, b[0].eta) and np.array_equal(a[0].xhat, b[0].xhat)
    assert np.array_equal(a[1], b[1])


def test_dimension_errors(p2_spec, scalar_spec):
    with pytest.raises(DimensionError):
        protocol2_step(ControllerState(np.zeros(2), np.zeros(3)), [0.0], np.zeros(3), p2_spec)
    with pytest.raises(DimensionError):
        protocol2_step(ControllerState(np.zeros(3), np.zeros(3)), [0.0, 0.0], np.zeros(3), p2_spec)
    with pytest.raises(DimensionError):
        protocol1_step(ControllerState(np.zeros(1)), [0.0], [0.0, 1.0], scalar_spec)


def test_wrong_kind_rejected(p2_spec, scalar_spec):
    with pytest.raises(ValueError, match="full_state"):
        protocol1_step(initial_state(p2_spec), np.zeros(3), np.zeros(3), p2_spec)
    with pytest.raises(ValueError, match="partial_state"):
        protocol2_step(initial_state(scalar_spec), [0.0], [0.0], scalar_spec)


def test_spec_validation(example_agent):
    g = design_gains(example_agent)
    with pytest.raises(DimensionError, match="C = I"):
        ProtocolSpec(ProtocolKind.FULL_STATE, g.A, g.B, g.C, g.K)
    with pytest.raises(SynthesisError, match="observer gain"):
        ProtocolSpec(ProtocolKind.PARTIAL_STATE, g.A, g.B, g.C, g.K)
    with pytest.raises(SynthesisError, match="compensators"):
        ProtocolSpec(ProtocolKind.OUTPUT_SYNC, g.A, g.B, g.C, g.K, g.H)
    with pytest.raises(DimensionError):
        ProtocolSpec.full_state(np.eye(3), np.ones((3, 1)), np.ones((1, 2)))


def test_uncertified_spec_records_radii():
    spec = printed_spec()
    assert spec.certificates["rho_feedback"] == pytest.approx(1.26518513658800882740937386971,
                                                              abs=1e-12)
    assert spec.certificates["rho_observer"] == pytest.approx(0.590307016761965244566239327954,
                                                              abs=1e-12)


# -- protocols 3 and 4 -------------------------------------------------------

def test_identity_compensator_reduces_protocol3_to_protocol2():
    target = default_target(3)
    agent, comp, spec3 = identity_p3(target)
    assert comp.order == 0
    g = design_gains(target.system)
    spec2 = ProtocolSpec.partial_state(g)
    rng = np.random.default_rng(11)
    s3 = initial_state(spec3, agent=0)
    s2 = initial_state(spec2)
    s3 = ControllerState(rng.standard_normal(3), rng.standard_normal(3), s3.xi)
    s2 = ControllerState(s3.eta.copy(), s3.xhat.copy())
    for _ in range(25):
        zeta, zh, z = rng.standard_normal(1), rng.standard_normal(3), rng.standard_normal(1)
        s3, u3, _ = protocol3_step(s3, zeta, zh, z, spec3, comp)
        s2, u2, _ = protocol2_step(s2, zeta, zh, spec2)
        assert np.array_equal(u3, u2)
        assert np.array_equal(s3.eta, s2.eta) and np.array_equal(s3.xhat, s2.xhat)


def test_protocol3_needs_compensator():
    target = default_target(3)
    _, _, spec3 = identity_p3(target)
    with pytest.raises(SynthesisError, match="compensator"):
        protocol3_step(initial_state(spec3, agent=0), [0.0], np.zeros(3), [0.0], spec3, None)
    with pytest.raises(ValueError, match="agent index"):
        initial_state(spec3)


def _p3_setup():
    target = default_target(3)
    agent = LtiSystem([[1.7, -0.6], [1.0, 0.0]], [[1.0], [0.0]], [[1.0, -0.2]], Cm=[[1.0, -0.2]])
    comp = design_precompensator(agent, target)
    return comp, ProtocolSpec.output_sync(target, design_gains(target.system), [comp])


P3_COMP, P3_SPEC = _p3_setup()


@settings(max_examples=40, deadline=None)
@given(st.lists(floats, min_size=6 + P3_COMP.order, max_size=6 + P3_COMP.order), floats)
def test_protocol3_input_linear_in_state(v, a):
    comp, spec = P3_COMP, P3_SPEC
    v = np.asarray(v)
    k = comp.order
    state = ControllerState(v[:3], v[3:6], v[6:6 + k])

    def u_of(s, scale):
        scaled = ControllerState(scale * s.eta, scale * s.xhat, scale * s.xi)
        return protocol3_step(scaled, [0.0], np.zeros(3), [0.0], spec, comp)[1]

    assert np.allclose(u_of(state, a), a * u_of(state, 1.0),
                       atol=1e-9 * (1 + abs(a) * np.abs(u_of(state, 1.0)).max()))


def test_protocol4_zero_inputs_zero_successor():
    from scalefree.synthesis import augment_exosystem

    exo = augment_exosystem(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0], [-1.0, 0.0]]), 3)
    agent = LtiSystem([[1.7, -0.6], [1.0, 0.0]], [[1.0], [0.0]], [[1.0, -0.2]], Cm=[[1.0, -0.2]])
    comp = design_precompensator(agent, exo.target)
    spec = ProtocolSpec.regulated_sync(exo, design_gains(exo.target.system), [comp])
    s = initial_state(spec, agent=0)
    new, u, _ = protocol4_step(s, [0.0], np.zeros(spec.n), [0.0], spec, comp)
    assert np.all(new.eta == 0) and np.all(new.xhat == 0) and np.all(new.xi == 0)
    assert np.all(u == 0)
    with pytest.raises(ValueError, match="regulated_sync"):
        protocol3_step(s, [0.0], np.zeros(spec.n), [0.0], spec, comp)
