import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import closed_forms as cf
from qdfr import circuits, mat, oracle, proto
from qdfr.errors import GridMismatch, IncompleteProjectors, IndexOutOfRange

CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
HAD = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
GRID64 = np.linspace(-8.0, 8.0, 64)


def test_mcnot_computational_basis():
    m = circuits.mcnot([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])
    assert np.array_equal(m, CNOT)


def test_mcnot_hadamard_basis():
    plus, minus = HAD[:, 0], HAD[:, 1]
    m = circuits.mcnot([mat.projector(plus), mat.projector(minus)])
    h1 = np.kron(HAD, np.eye(2))
    assert np.allclose(m, h1 @ CNOT @ h1, atol=1e-15)


def test_mcnot_involution_and_errors(rng):
    q = mat.random_unitary(2, rng)
    m = circuits.mcnot([mat.projector(q[:, 0]), mat.projector(q[:, 1])])
    assert np.allclose(m @ m, np.eye(4), atol=1e-14)
    assert mat.is_unitary(m, 1e-13)
    with pytest.raises(IncompleteProjectors):
        circuits.mcnot([np.diag([1.0, 0.0]), np.diag([1.0, 0.0])])
    with pytest.raises(IncompleteProjectors):
        circuits.mcnot([np.diag([1.0, 0.0])])


def test_controlled_gate_embedding():
    reg = circuits.Register(("A", "S"), (2, 2))
    g = reg.controlled("S", mat.SX, {"A": 1})
    assert np.array_equal(g, CNOT)


def test_forward_mismatch_at_zero(quench):
    res = circuits.run_forward_mismatch(quench, 0.0)
    assert sum(res.outcome_probs.values()) == pytest.approx(1.0, abs=1e-12)
    for (k, l), prob in res.outcome_probs.items():
        assert prob == pytest.approx(quench.joint_probs()[k, l], abs=1e-14)
        assert res.ancilla_sx[(k, l)] == pytest.approx(1.0, abs=1e-12)
        assert res.ancilla_sy[(k, l)] == pytest.approx(0.0, abs=1e-12)


def test_forward_mismatch_closed_form(quench):
    res = circuits.run_forward_mismatch(quench, 1.3)
    for k in range(2):
        for l in range(2):
            assert abs(res.chi((k, l)) - cf.chi_forward(k, l, 1.3)) < 1e-10


def test_outcome_probabilities_match_joint_table(quench):
    # p(k, l) at u is the norm of the ancilla-branch superposition, independent of u here
    for u in (0.0, 0.9, 2.5):
        res = circuits.run_forward_mismatch(quench, u)
        for key, prob in res.outcome_probs.items():
            z = complex(res.ancilla_sx[key], res.ancilla_sy[key])
            assert abs(z) <= 1 + 1e-10
            assert prob == pytest.approx(quench.joint_probs()[key], abs=1e-12)


def test_no_mismatch_circuit_has_diagonal_outcomes():
    p = proto.quench_protocol(phi=0.0)
    res = circuits.run_forward_mismatch(p, 0.4)
    assert res.outcome_probs[(0, 1)] < 1e-15 and res.outcome_probs[(1, 0)] < 1e-15


def test_wcm_circuit(quench):
    res0 = circuits.run_forward_wcm(quench, 0.0)
    for k in range(2):
        assert res0.outcome_probs[k] == pytest.approx(quench.outcome_probs()[k], abs=1e-14)
    for u in GRID64[::7]:
        res = circuits.run_forward_wcm(quench, u)
        for k in range(2):
            assert abs(res.chi(k) - cf.chi_forward_wcm(k, u)) < 1e-10
            assert abs(complex(res.ancilla_sx[k], res.ancilla_sy[k])) <= 1 + 1e-10


def test_backward_circuit(quench, quench_b):
    res = circuits.run_backward(quench_b, 0, 0.7)
    assert sum(res.outcome_probs.values()) == pytest.approx(1.0, abs=1e-12)
    pk = quench.branch_probs()
    assert abs(pk[0] * res.chi(0) - cf.chi_backward(0, 0, 0.7)) < 1e-10
    assert abs(res.chi(0) - cf.chi_backward_wcm(0, 0.7)) < 1e-10
    with pytest.raises(IndexOutOfRange):
        circuits.run_backward(quench_b, 5, 0.1)


def test_backward_at_zero(quench_b):
    res = circuits.run_backward(quench_b, 1, 0.0)
    for l in range(2):
        assert res.ancilla_sx[l] == pytest.approx(1.0, abs=1e-12)
        assert res.outcome_probs[l] == pytest.approx(0.5, abs=1e-14)


def test_joint_probability_circuit(quench):
    got = circuits.run_joint_prob(quench)
    assert got[(0, 0)] == pytest.approx(0.149672, abs=1e-6)
    assert got[(1, 0)] == pytest.approx(0.449015, abs=1e-6)
    assert got[(0, 1)] == pytest.approx(0.300985, abs=1e-6)
    assert got[(1, 1)] == pytest.approx(0.100328, abs=1e-6)
    assert sum(got.values()) == pytest.approx(1.0, abs=1e-14)
    diag = circuits.run_joint_prob(proto.quench_protocol(phi=0.0))
    pl = quench.outcome_probs()
    for (k, l), v in diag.items():
        assert v == pytest.approx(pl[l] if k == l else 0.0, abs=1e-14)


def test_joint_probability_general_mismatch(rng):
    p = proto.random_protocol(rng, dim=2, n_branches=3)
    got = circuits.run_joint_prob(p)
    ref = p.joint_probs()
    for (k, l), v in got.items():
        assert v == pytest.approx(ref[k, l], abs=1e-13)


def test_assemble_backward(quench, quench_b):
    u = GRID64
    chi = circuits.backward_chi_samples(quench, quench_b, u)
    u0 = np.array([0.0])
    joint = circuits.run_joint_prob(quench)
    outcomes = {k: circuits.backward_outcomes(quench_b, k, u0) for k in range(2)}
    at0 = circuits.assemble_backward_chi(joint, outcomes, u0)
    pk = quench.branch_probs()
    for k in range(2):
        assert sum(at0[(k, l)][0] for l in range(2)) == pytest.approx(pk[k], abs=1e-14)
        for l in range(2):
            assert at0[(k, l)][0] == pytest.approx(pk[k] * 0.5, abs=1e-14)
            assert np.max(np.abs(chi[(k, l)] - cf.chi_backward(k, l, u))) < 1e-10
    with pytest.raises(GridMismatch):
        circuits.assemble_backward_chi(joint, outcomes, np.array([0.5]))


def _max_dev_all_families(p, b, u):
    dev = 0.0
    for (k, l), v in circuits.forward_chi_samples(p, u).items():
        dev = max(dev, np.max(np.abs(v - oracle.chi_forward_trace(p, k, l, u))))
    for (k, l), v in circuits.backward_chi_samples(p, b, u).items():
        dev = max(dev, np.max(np.abs(v - oracle.chi_backward_trace(b, l, k, u))))
    if p.n_outcomes == p.n_branches:
        for k, v in circuits.wcm_forward_chi_samples(p, u).items():
            dev = max(dev, np.max(np.abs(v - oracle.chi_forward_wcm_trace(p, k, u))))
        for k, v in circuits.wcm_backward_chi_samples(b, u).items():
            dev = max(dev, np.max(np.abs(v - oracle.chi_backward_wcm_trace(b, k, u))))
    return dev


def test_quench_grid_equivalence(quench, quench_b):
    assert _max_dev_all_families(quench, quench_b, GRID64) < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_random_protocol_equivalence(seed, n_branches):
    p = proto.random_protocol(np.random.default_rng(seed), dim=2, n_branches=n_branches)
    b = proto.build_backward(p)
    assert _max_dev_all_families(p, b, np.linspace(-3, 3, 6)) < 1e-10


def test_hermitian_symmetry_of_circuit_chi(quench):
    u = np.linspace(0.2, 4.0, 5)
    plus = circuits.forward_chi_samples(quench, u)
    minus = circuits.forward_chi_samples(quench, -u)
    for key in plus:
        assert np.allclose(minus[key], np.conj(plus[key]), atol=1e-14)


def test_shot_sampling_is_seeded(quench):
    exact = circuits.run_forward_mismatch(quench, 0.8)
    a = circuits.sample_shots(exact, 20000, np.random.default_rng(1))
    b = circuits.sample_shots(exact, 20000, np.random.default_rng(1))
    assert a == b
    for key in exact.outcome_probs:
        assert a.outcome_probs[key] == pytest.approx(exact.outcome_probs[key], abs=0.02)


def test_chi_csv(quench):
    u = np.array([-0.5, 0.0, 0.5])
    text = circuits.chi_to_csv(u, circuits.forward_chi_samples(quench, u))
    lines = text.splitlines()
    assert lines[0] == "u,re,im,k,l,outcome_prob"
    assert len(lines) == 1 + 4 * 3
    prob = float(lines[1].split(",")[-1])
    assert prob == pytest.approx(quench.joint_probs()[0, 0], abs=1e-14)
