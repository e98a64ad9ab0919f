import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import closed_forms as cf
from qdfr import cli, mat, proto
from qdfr.errors import BetaNonpositive, DegenerateSpectrum, ProtocolInvalid


@pytest.mark.parametrize("n", [1, 2, 3])
def test_spin_half_theta_squares_to_minus_one(n):
    theta = proto.TimeReversalOp.spin_half(n)
    expect = (-1) ** n * np.eye(2**n)
    assert np.array_equal(theta.square(), expect)


def test_spinless_theta_squares_to_one():
    assert np.array_equal(proto.TimeReversalOp.spinless(3).square(), np.eye(3))


def test_theta_flips_spin():
    theta = proto.TimeReversalOp.spin_half(1)
    for s in (mat.SX, mat.SY, mat.SZ):
        assert np.allclose(theta.conjugate(s), -s)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_time_reverse_is_involution(seed):
    rng = np.random.default_rng(seed)
    theta = proto.TimeReversalOp.spin_half(1)
    u = mat.random_unitary(2, rng)
    h = mat.random_hermitian(2, rng)
    assert np.allclose(proto.time_reverse(proto.time_reverse(u, theta, True), theta, True), u)
    assert np.allclose(proto.time_reverse(proto.time_reverse(h, theta), theta), h)
    # the reversed propagator of exp(-iHt) evolves forward under H~ = Theta H Theta^dagger
    t = 0.4
    rev = proto.time_reverse(mat.phase_exp(h, -t), theta, evolution=True)
    assert np.allclose(rev, mat.phase_exp(theta.conjugate(h), -t))


def test_quench_thermodynamics(quench):
    assert np.allclose(quench.outcome_probs(), cf.p_l(), atol=1e-14, rtol=0)
    assert np.allclose(quench.branch_probs(), cf.p_k(), atol=1e-14, rtol=0)
    assert np.allclose(quench.free_energies(), cf.delta_f(), atol=1e-14, rtol=0)
    assert np.allclose(quench.joint_probs(), (cf.p_l()[:, None] * cf.p_k_given_l()).T, atol=1e-14, rtol=0)
    assert np.allclose(quench.mismatch, cf.p_k_given_l(), atol=1e-15, rtol=0)


def test_quench_backward_hamiltonians(quench_b):
    assert np.allclose(quench_b.initial_hamiltonians[0], 2 * mat.SX)
    assert np.allclose(quench_b.initial_hamiltonians[1], 3 * mat.SX)
    assert np.allclose(quench_b.h_final_rev, mat.SZ)
    # reversed spectra carry the forward energies
    assert np.allclose(quench_b.final_spectrum.energies, [-1, 1])
    assert np.allclose(quench_b.initial_spectra[1].energies, [-3, 3])


def test_backward_round_trip(rng):
    p = proto.random_protocol(rng, dim=2)
    b = proto.build_backward(p)
    q = proto.forward_from_backward(b, p.mismatch)
    assert np.allclose(q.h0, p.h0)
    assert np.allclose(q.u_drive, p.u_drive)
    for x, y in zip(q.branches, p.branches):
        assert np.allclose(x.v_feedback, y.v_feedback)
        assert np.allclose(x.h_final, y.h_final)


def test_gibbs_state():
    h = proto.pauli_hamiltonian(cz=-1.0)
    rho = proto.gibbs_state(h, 0.2)
    assert np.isclose(np.trace(rho).real, 1.0)
    assert np.isclose(rho[0, 0].real / rho[1, 1].real, np.exp(0.4))
    assert np.allclose(proto.gibbs_state(h, 0.0), np.eye(2) / 2)
    with pytest.raises(BetaNonpositive):
        proto.gibbs_state(h, -1.0)
    # large beta stays finite
    assert np.isfinite(proto.gibbs_state(1e3 * h, 10.0)).all()


def test_free_energy_limit_at_zero_beta():
    p = proto.quench_protocol(beta=0.0)
    assert np.allclose(p.free_energies(), 0.0)


def _base_args():
    p = proto.quench_protocol()
    return dict(
        beta=p.beta, h0=p.h0, u_drive=p.u_drive, meas_projectors=p.meas_projectors, mismatch=p.mismatch, branches=p.branches
    )


@pytest.mark.parametrize(
    "change, err",
    [
        (dict(u_drive=np.array([[1, 1], [0, 1]])), ProtocolInvalid),
        (dict(mismatch=np.array([[0.5, 0.6], [0.5, 0.5]])), ProtocolInvalid),
        (dict(mismatch=np.ones((2, 3)) / 3), ProtocolInvalid),
        (dict(meas_projectors=(np.diag([1.0, 0.0]),)), ProtocolInvalid),
        (dict(meas_projectors=(np.diag([1.0, 0.0]), np.diag([1.0, 0.0]))), ProtocolInvalid),
        (dict(h0=np.eye(2)), DegenerateSpectrum),
        (dict(beta=-0.1), BetaNonpositive),
    ],
)
def test_protocol_validation(change, err):
    with pytest.raises(err):
        proto.FeedbackProtocol(**{**_base_args(), **change})


def test_json_round_trip(quench, rng):
    for p in (quench, proto.random_protocol(rng)):
        q = proto.loads(proto.dumps(p))
        assert np.allclose(q.h0, p.h0)
        assert np.allclose(q.mismatch, p.mismatch)
        assert np.allclose(q.free_energies(), p.free_energies())


def test_missing_field_named():
    d = proto.protocol_to_dict(proto.quench_protocol())
    del d["u_drive"]
    with pytest.raises(ProtocolInvalid, match="u_drive"):
        proto.protocol_from_dict(d)


def test_bundled_config_is_the_quench():
    cfg = cli.load_config("bundled:quench_distinct_gaps")
    p, q = cfg.protocol, proto.quench_protocol()
    assert np.allclose(p.u_drive, q.u_drive)
    assert np.allclose(p.mismatch, q.mismatch)
    for x, y in zip(p.branches, q.branches):
        assert np.allclose(x.v_feedback, y.v_feedback)
        assert np.allclose(x.h_final, y.h_final)
    text = (cli.resources.files("qdfr.configs") / "quench_distinct_gaps.json").read_text()
    assert len(json.loads(text)["protocol"]) == 6
