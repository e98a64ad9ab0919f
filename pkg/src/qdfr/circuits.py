"""Density-matrix simulation of the interferometric characteristic-function circuits.

Layout conventions
------------------
* Ancilla ``A`` starts in |+>. The branch with ancilla |1> carries the
  initial phase gate exp(-i u H_initial); the branch with ancilla |0> carries
  exp(-i u H_final) after the protocol. After the memories are measured,
  <sigma_x> + i <sigma_y> of the ancilla equals chi(u) / p(outcome).
* Memories start in |0>. An M-CNOT writes the measurement outcome into a
  memory; a controlled preparation on a second memory realises the mismatch
  channel, so its computational state is the applied feedback branch k.
* Everything is exact: outcome statistics come from projections of the full
  joint density matrix, never from sampling (``sample_shots`` is the only
  stochastic helper and is a noise study on top of an exact outcome).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import mat
from .errors import GridMismatch, IncompleteProjectors, IndexOutOfRange, ProtocolInvalid
from .proto import BackwardProtocol, FeedbackProtocol

STATE_TOL = 1e-10
PLUS = mat.projector(np.array([1, 1]) / np.sqrt(2))


class Register:
    """Ordered named subsystems of a joint Hilbert space."""

    def __init__(self, roles, dims):
        self.roles = tuple(roles)
        self.dims = tuple(int(d) for d in dims)
        self.dim = int(np.prod(self.dims))

    def index(self, role: str) -> int:
        return self.roles.index(role)

    def embed(self, ops: dict) -> np.ndarray:
        """Tensor product with ``ops[role]`` on the named factors, identity elsewhere."""
        factors = [np.asarray(ops.get(r, np.eye(d)), dtype=complex) for r, d in zip(self.roles, self.dims)]
        return mat.kron(*factors) if len(factors) > 1 else factors[0]

    def basis_projector(self, role: str, value: int) -> np.ndarray:
        d = self.dims[self.index(role)]
        p = np.zeros((d, d), dtype=complex)
        p[value, value] = 1.0
        return p

    def controlled(self, target: str, op, controls: dict) -> np.ndarray:
        """``op`` on ``target`` when every control role is in the given basis state."""
        ctrl = {r: self.basis_projector(r, v) for r, v in controls.items()}
        gate_on = self.embed({**ctrl, target: op})
        proj = self.embed(ctrl)
        return np.eye(self.dim, dtype=complex) - proj + gate_on

    def reduced(self, rho, roles) -> np.ndarray:
        return mat.partial_trace(rho, self.dims, [self.index(r) for r in roles])


def shift(d: int, steps: int = 1) -> np.ndarray:
    """Cyclic increment |j> -> |j + steps mod d> (sigma_x for d = 2)."""
    out = np.zeros((d, d), dtype=complex)
    for j in range(d):
        out[(j + steps) % d, j] = 1.0
    return out


def _check_projectors(projectors) -> list[np.ndarray]:
    projs = [mat.as_matrix(m) for m in projectors]
    d = projs[0].shape[0]
    if len(projs) < 2:
        raise IncompleteProjectors("an M-CNOT needs at least two projectors")
    total = sum(projs)
    if np.max(np.abs(total - np.eye(d))) > mat.VALIDATION_TOL:
        raise IncompleteProjectors("projectors do not resolve the identity")
    for i, a in enumerate(projs):
        for j, b in enumerate(projs):
            expect = a if i == j else 0.0
            if np.max(np.abs(a @ b - expect)) > mat.VALIDATION_TOL:
                raise IncompleteProjectors("projectors are not mutually orthogonal idempotents")
    return projs


def mcontrolled(projectors, targets) -> np.ndarray:
    """sum_l M_l (x) T_l on S (x) M."""
    return sum(mat.kron(m, t) for m, t in zip(projectors, targets))


def mcnot(meas_projectors, memory_dim: int | None = None) -> np.ndarray:
    """M_0 (x) 1 + M_1 (x) sigma_x, generalised to a cyclic shift for more outcomes."""
    projs = _check_projectors(meas_projectors)
    d = memory_dim or len(projs)
    return mcontrolled(projs, [shift(d, l) for l in range(len(projs))])


def preparation_unitary(amplitudes) -> np.ndarray:
    """Real Householder unitary whose first column is ``amplitudes``."""
    a = np.asarray(amplitudes, dtype=float)
    a = a / np.linalg.norm(a)
    e0 = np.zeros_like(a)
    e0[0] = 1.0
    v = e0 - a
    if np.linalg.norm(v) < 1e-15:
        return np.eye(len(a), dtype=complex)
    return (np.eye(len(a)) - 2.0 * np.outer(v, v) / (v @ v)).astype(complex)


def mismatch_preparations(p: FeedbackProtocol) -> list[np.ndarray]:
    """Q_l on the branch memory with |<k|Q_l|0>|^2 = p(k|l).

    For the rotation model this is R_x(phi) X^l, i.e. a copy of the outcome
    followed by the x rotation on the memory that drives the feedback.
    """
    if p.mismatch_phi is not None and p.n_outcomes == 2 and p.n_branches == 2:
        return [mat.rx(p.mismatch_phi) @ shift(2, l) for l in range(2)]
    return [preparation_unitary(np.sqrt(np.clip(p.mismatch[l], 0.0, None))) for l in range(p.n_outcomes)]


@dataclass(frozen=True)
class CircuitOutcome:
    u: float
    outcome_probs: dict
    ancilla_sx: dict
    ancilla_sy: dict

    def chi(self, key) -> complex:
        """outcome probability * (<sigma_x> + i <sigma_y>)."""
        return self.outcome_probs[key] * complex(self.ancilla_sx[key], self.ancilla_sy[key])


def _evolve(reg: Register, rho, gates) -> np.ndarray:
    for g in gates:
        if not mat.is_unitary(g, STATE_TOL):
            raise ProtocolInvalid("assembled circuit step is not unitary")
        rho = g @ rho @ mat.dagger(g)
        if abs(np.trace(rho) - 1.0) > STATE_TOL or not mat.is_hermitian(rho, STATE_TOL):
            raise ProtocolInvalid("joint state left the density-matrix set")
    return rho


def _readout(reg: Register, rho, memories, u: float) -> CircuitOutcome:
    shapes = [reg.dims[reg.index(m)] for m in memories]
    probs, sx, sy = {}, {}, {}
    total = 0.0
    for values in np.ndindex(*shapes):
        proj = reg.embed({m: reg.basis_projector(m, v) for m, v in zip(memories, values)})
        post = proj @ rho @ proj
        prob = float(np.trace(post).real)
        total += prob
        key = values if len(values) > 1 else values[0]
        probs[key] = prob
        if prob > 1e-14:
            ra = reg.reduced(post, ["A"]) / prob
            sx[key] = float(np.trace(ra @ mat.SX).real)
            sy[key] = float(np.trace(ra @ mat.SY).real)
        else:
            sx[key] = sy[key] = 0.0
    if abs(total - 1.0) > STATE_TOL:
        raise ProtocolInvalid(f"memory outcome probabilities sum to {total}")
    return CircuitOutcome(float(u), probs, sx, sy)


def run_forward_mismatch(p: FeedbackProtocol, u: float) -> CircuitOutcome:
    """Ancilla, system and two memories; outcomes keyed (k, l)."""
    L, K = p.n_outcomes, p.n_branches
    reg = Register(("A", "S", "M1", "M2"), (2, p.dim, L, K))
    ket0_l = np.zeros((L, L)); ket0_l[0, 0] = 1
    ket0_k = np.zeros((K, K)); ket0_k[0, 0] = 1
    rho = mat.kron(PLUS, p.rho0(), ket0_l, ket0_k)
    write_l = mcontrolled(p.meas_projectors, [shift(L, l) for l in range(L)])
    gates = [
        reg.controlled("S", mat.phase_exp(p.h0, -u), {"A": 1}),
        reg.embed({"S": p.u_drive}),
        mat.kron(np.eye(2), write_l, np.eye(K)),
        sum(reg.embed({"M1": reg.basis_projector("M1", l), "M2": q}) for l, q in enumerate(mismatch_preparations(p))),
        sum(reg.embed({"M2": reg.basis_projector("M2", k), "S": br.v_feedback}) for k, br in enumerate(p.branches)),
    ]
    gates += [reg.controlled("S", mat.phase_exp(br.h_final, -u), {"A": 0, "M2": k}) for k, br in enumerate(p.branches)]
    rho = _evolve(reg, rho, gates)
    return _readout(reg, rho, ["M2", "M1"], u)


def run_forward_wcm(p: FeedbackProtocol, u: float) -> CircuitOutcome:
    """Single memory written by the M-CNOT and driving the feedback directly."""
    if p.n_outcomes != p.n_branches:
        raise ProtocolInvalid("the no-mismatch circuit needs one branch per outcome")
    L = p.n_outcomes
    reg = Register(("A", "S", "M"), (2, p.dim, L))
    ket0 = np.zeros((L, L)); ket0[0, 0] = 1
    rho = mat.kron(PLUS, p.rho0(), ket0)
    write = mcontrolled(p.meas_projectors, [shift(L, l) for l in range(L)])
    gates = [
        reg.controlled("S", mat.phase_exp(p.h0, -u), {"A": 1}),
        reg.embed({"S": p.u_drive}),
        mat.kron(np.eye(2), write),
        sum(reg.embed({"M": reg.basis_projector("M", k), "S": br.v_feedback}) for k, br in enumerate(p.branches)),
    ]
    gates += [reg.controlled("S", mat.phase_exp(br.h_final, -u), {"A": 0, "M": k}) for k, br in enumerate(p.branches)]
    rho = _evolve(reg, rho, gates)
    return _readout(reg, rho, ["M"], u)


def run_backward(b: BackwardProtocol, k: int, u: float) -> CircuitOutcome:
    """Backward circuit from the k-th initial Gibbs state; outcomes keyed by l.

    The ancilla of outcome l encodes A(k, l) / p_B(l); for l = k this is the
    no-mismatch backward characteristic function.
    """
    if not 0 <= k < b.n_branches:
        raise IndexOutOfRange(f"branch index k={k} outside 0..{b.n_branches - 1}")
    L = b.n_outcomes
    d = b.h_final_rev.shape[0]
    reg = Register(("A", "S", "M"), (2, d, L))
    ket0 = np.zeros((L, L)); ket0[0, 0] = 1
    rho = mat.kron(PLUS, b.rho0(k), ket0)
    write = mcontrolled(b.meas_projectors_rev, [shift(L, l) for l in range(L)])
    gates = [
        reg.controlled("S", mat.phase_exp(b.initial_hamiltonians[k], -u), {"A": 1}),
        reg.embed({"S": b.v_feedback_rev[k]}),
        mat.kron(np.eye(2), write),
        reg.embed({"S": b.u_drive_rev}),
        reg.controlled("S", mat.phase_exp(b.h_final_rev, -u), {"A": 0}),
    ]
    rho = _evolve(reg, rho, gates)
    return _readout(reg, rho, ["M"], u)


def run_joint_prob(p: FeedbackProtocol) -> dict:
    """p(k, l) from the composite measurement of M on the system and sigma_z on the memory."""
    L, K = p.n_outcomes, p.n_branches
    reg = Register(("S", "M"), (p.dim, K))
    ket0 = np.zeros((K, K)); ket0[0, 0] = 1
    rho = mat.kron(p.rho0(), ket0)
    gates = [reg.embed({"S": p.u_drive}), mcontrolled(p.meas_projectors, mismatch_preparations(p))]
    rho = _evolve(reg, rho, gates)
    out = {}
    for k in range(K):
        for l, ml in enumerate(p.meas_projectors):
            proj = reg.embed({"S": ml, "M": reg.basis_projector("M", k)})
            out[(k, l)] = float(np.trace(proj @ rho).real)
    if abs(sum(out.values()) - 1.0) > STATE_TOL:
        raise ProtocolInvalid("composite measurement probabilities do not sum to one")
    return out


def branch_marginal(joint: dict) -> dict:
    out: dict = {}
    for (k, _), v in joint.items():
        out[k] = out.get(k, 0.0) + v
    return out


def information_from_joint(joint: dict) -> dict:
    """I(k, l) = ln p(k, l) / (p(k) p(l))."""
    pk = branch_marginal(joint)
    pl: dict = {}
    for (_, l), v in joint.items():
        pl[l] = pl.get(l, 0.0) + v
    return {key: float(np.log(v / (pk[key[0]] * pl[key[1]]))) if v > 0 else -np.inf for key, v in joint.items()}


# characteristic functions on a grid ------------------------------------------

def forward_chi_samples(p: FeedbackProtocol, u_values) -> dict:
    """chi_F^(k,l)(u) for every history, keyed (k, l)."""
    out = {(k, l): np.empty(len(u_values), dtype=complex) for k in range(p.n_branches) for l in range(p.n_outcomes)}
    for j, u in enumerate(u_values):
        res = run_forward_mismatch(p, float(u))
        for key in out:
            out[key][j] = res.chi(key)
    return out


def wcm_forward_chi_samples(p: FeedbackProtocol, u_values) -> dict:
    out = {k: np.empty(len(u_values), dtype=complex) for k in range(p.n_branches)}
    for j, u in enumerate(u_values):
        res = run_forward_wcm(p, float(u))
        for k in out:
            out[k][j] = res.chi(k)
    return out


def backward_outcomes(b: BackwardProtocol, k: int, u_values) -> list[CircuitOutcome]:
    return [run_backward(b, k, float(u)) for u in u_values]


def wcm_backward_chi_samples(b: BackwardProtocol, u_values) -> dict:
    return {k: np.array([o.chi(k) for o in backward_outcomes(b, k, u_values)]) for k in range(b.n_branches)}


def assemble_backward_chi(joint: dict, outcomes_by_k: dict, u_values=None) -> dict:
    """chi_B^(l,k)(u) = p(k) A(k, l), keyed (k, l); p(k) from ``run_joint_prob``."""
    pk = branch_marginal(joint)
    out = {}
    for k, outcomes in outcomes_by_k.items():
        us = np.array([o.u for o in outcomes])
        if u_values is not None and (len(us) != len(u_values) or np.max(np.abs(us - np.asarray(u_values))) > 0):
            raise GridMismatch(f"backward outcomes for k={k} were taken on a different grid")
        for l in outcomes[0].outcome_probs:
            out[(k, l)] = pk[k] * np.array([o.chi(l) for o in outcomes])
    return out


def backward_chi_samples(p: FeedbackProtocol, b: BackwardProtocol, u_values) -> dict:
    joint = run_joint_prob(p)
    outcomes = {k: backward_outcomes(b, k, u_values) for k in range(b.n_branches)}
    return assemble_backward_chi(joint, outcomes, u_values)


def sample_shots(outcome: CircuitOutcome, shots: int, rng: np.random.Generator) -> CircuitOutcome:
    """Finite-shot estimate of an exact outcome (noise study only)."""
    keys = list(outcome.outcome_probs)
    probs = np.array([outcome.outcome_probs[k] for k in keys])
    counts = rng.multinomial(shots, probs / probs.sum())
    p_hat, sx, sy = {}, {}, {}
    for key, n in zip(keys, counts):
        p_hat[key] = n / shots
        if n == 0:
            sx[key] = sy[key] = 0.0
            continue
        # each Pauli is measured on its own batch of n shots
        px = 0.5 * (1 + outcome.ancilla_sx[key])
        py = 0.5 * (1 + outcome.ancilla_sy[key])
        sx[key] = 2 * rng.binomial(n, np.clip(px, 0, 1)) / n - 1
        sy[key] = 2 * rng.binomial(n, np.clip(py, 0, 1)) / n - 1
    return CircuitOutcome(outcome.u, p_hat, sx, sy)


def chi_to_csv(u_values, samples: dict, outcome_probs: dict | None = None) -> str:
    """Columns u, re, im, k, l, outcome_prob; keys are (k, l) or k (wcm, l = k).

    ``outcome_prob`` defaults to chi(0), which equals the history probability.
    """
    u_values = np.asarray(u_values, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["u", "re", "im", "k", "l", "outcome_prob"])
    for key in sorted(samples):
        k, l = key if isinstance(key, tuple) else (key, key)
        if outcome_probs is not None:
            prob = outcome_probs[key]
        else:
            prob = float(samples[key][int(np.argmin(np.abs(u_values)))].real)
        for u, z in zip(u_values, samples[key]):
            w.writerow([repr(float(u)), repr(float(z.real)), repr(float(z.imag)), k, l, repr(float(prob))])
    return buf.getvalue()
