"""Feedback protocols, thermal states and the time-reversal construction.

Energies are in units of hbar*omega_0 and ``beta`` is the dimensionless
inverse temperature beta*hbar*omega_0.

The mismatch channel is stored as ``mismatch[l, k] = p(k|l)``: one row per
measurement outcome ``l``, each row summing to one.

Backward eigenstate labels follow the time-reversal map, never basis order:
the backward projector with label ``n`` is ``Theta P_n Theta^dagger`` and
carries the forward eigenvalue with the same label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import mat
from .errors import BetaNonpositive, DegenerateSpectrum, NotHermitian, ProtocolInvalid

TOL = mat.VALIDATION_TOL


@dataclass(frozen=True)
class Spectrum:
    """Nondegenerate spectral data: ascending energies and rank-one projectors."""

    energies: np.ndarray
    projectors: tuple[np.ndarray, ...]

    @classmethod
    def of(cls, h, what: str = "Hamiltonian") -> "Spectrum":
        try:
            eig = mat.herm_eigen(h)
        except NotHermitian as exc:
            raise ProtocolInvalid(f"{what} is not Hermitian") from exc
        if eig.degenerate:
            raise DegenerateSpectrum(f"{what} has a degenerate spectrum {eig.eigenvalues.tolist()}")
        return cls(eig.eigenvalues, tuple(eig.projectors()))


@dataclass(frozen=True)
class TimeReversalOp:
    """Antiunitary Theta = Y K with unitary part ``Y`` and complex conjugation K."""

    unitary_part: np.ndarray

    @classmethod
    def spin_half(cls, n_qubits: int = 1) -> "TimeReversalOp":
        y = 1j * mat.SY
        return cls(mat.kron(*([y] * n_qubits)) if n_qubits > 1 else y.copy())

    @classmethod
    def spinless(cls, dim: int) -> "TimeReversalOp":
        return cls(np.eye(dim, dtype=complex))

    @property
    def dim(self) -> int:
        return self.unitary_part.shape[0]

    def square(self) -> np.ndarray:
        """Theta^2 as a linear operator, Y Y^*."""
        return self.unitary_part @ self.unitary_part.conj()

    def state(self, psi) -> np.ndarray:
        return self.unitary_part @ np.asarray(psi, dtype=complex).conj()

    def conjugate(self, op) -> np.ndarray:
        """Theta O Theta^dagger = Y O^* Y^dagger."""
        y = self.unitary_part
        return y @ np.asarray(op, dtype=complex).conj() @ mat.dagger(y)


def time_reverse(op, theta: TimeReversalOp, evolution: bool = False) -> np.ndarray:
    """Time-reversed observable, or for ``evolution=True`` the backward propagator.

    A forward propagator U maps to the backward one via
    Theta U Theta^dagger = U_backward^dagger.
    """
    out = theta.conjugate(op)
    return mat.dagger(out) if evolution else out


def gibbs_state(h, beta: float) -> np.ndarray:
    if beta < 0:
        raise BetaNonpositive("beta must be nonnegative")
    eig = mat.herm_eigen(h)
    lam = eig.eigenvalues
    w = np.exp(-beta * (lam - lam.min()))
    w /= w.sum()
    return (eig.eigenvectors * w) @ mat.dagger(eig.eigenvectors)


def log_partition(h, beta: float) -> float:
    lam = mat.herm_eigen(h).eigenvalues
    shift = lam.min()
    return float(-beta * shift + np.log(np.sum(np.exp(-beta * (lam - shift)))))


def free_energy_difference(h_init, h_final, beta: float) -> float:
    """Delta F = -(1/beta) ln(Z_final / Z_init)."""
    if not beta > 0:
        raise BetaNonpositive(f"beta must be positive, got {beta}")
    return -(log_partition(h_final, beta) - log_partition(h_init, beta)) / beta


def rx_mismatch(phi: float, n: int = 2) -> np.ndarray:
    """p(k|l) = |<k| exp(-i phi sigma_x) |l>|^2 as a [l, k] table."""
    if n != 2:
        raise ProtocolInvalid("the rotation mismatch model is defined for two outcomes")
    r = mat.rx(phi)
    return (np.abs(r) ** 2).T.copy()


@dataclass(frozen=True)
class Branch:
    v_feedback: np.ndarray
    h_final: np.ndarray


@dataclass(frozen=True)
class FeedbackProtocol:
    beta: float
    h0: np.ndarray
    u_drive: np.ndarray
    meas_projectors: tuple[np.ndarray, ...]
    mismatch: np.ndarray
    branches: tuple[Branch, ...]
    mismatch_phi: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "h0", mat.as_matrix(self.h0))
        object.__setattr__(self, "u_drive", mat.as_matrix(self.u_drive))
        object.__setattr__(self, "meas_projectors", tuple(mat.as_matrix(m) for m in self.meas_projectors))
        object.__setattr__(self, "mismatch", np.asarray(self.mismatch, dtype=float))
        object.__setattr__(
            self,
            "branches",
            tuple(Branch(mat.as_matrix(b.v_feedback), mat.as_matrix(b.h_final)) for b in self.branches),
        )
        self.validate()

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def n_outcomes(self) -> int:
        return len(self.meas_projectors)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def validate(self) -> None:
        d = self.dim
        if not np.isfinite(self.beta) or self.beta < 0:
            raise BetaNonpositive(f"beta must be a finite nonnegative number, got {self.beta}")
        Spectrum.of(self.h0, "h0")
        if self.u_drive.shape != (d, d) or not mat.is_unitary(self.u_drive, TOL):
            raise ProtocolInvalid("u_drive must be a unitary of the system dimension")
        if not self.meas_projectors:
            raise ProtocolInvalid("at least one measurement projector is required")
        total = np.zeros((d, d), dtype=complex)
        for i, mi in enumerate(self.meas_projectors):
            if mi.shape != (d, d):
                raise ProtocolInvalid(f"projector {i} has the wrong dimension")
            for j, mj in enumerate(self.meas_projectors):
                expect = mi if i == j else np.zeros_like(mi)
                if np.max(np.abs(mi @ mj - expect)) > TOL:
                    raise ProtocolInvalid(f"projectors {i} and {j} are not orthogonal idempotents")
            total += mi
        if np.max(np.abs(total - np.eye(d))) > TOL:
            raise ProtocolInvalid("measurement projectors do not sum to the identity")
        if not self.branches:
            raise ProtocolInvalid("at least one feedback branch is required")
        for k, br in enumerate(self.branches):
            if br.v_feedback.shape != (d, d) or not mat.is_unitary(br.v_feedback, TOL):
                raise ProtocolInvalid(f"branch {k} feedback operator is not unitary")
            Spectrum.of(br.h_final, f"branch {k} final Hamiltonian")
        p = self.mismatch
        if p.shape != (self.n_outcomes, self.n_branches):
            raise ProtocolInvalid(
                f"mismatch table must have shape (outcomes, branches) = "
                f"{(self.n_outcomes, self.n_branches)}, got {p.shape}"
            )
        if np.any(p < -TOL) or np.any(p > 1 + TOL) or np.max(np.abs(p.sum(axis=1) - 1)) > TOL:
            raise ProtocolInvalid("each mismatch row p(.|l) must be a probability vector")

    # derived quantities
    def rho0(self) -> np.ndarray:
        return gibbs_state(self.h0, self.beta)

    def spectrum0(self) -> Spectrum:
        return Spectrum.of(self.h0)

    def spectrum_final(self, k: int) -> Spectrum:
        return Spectrum.of(self.branches[k].h_final)

    def outcome_probs(self) -> np.ndarray:
        """p(l) = Tr[M_l U rho0 U^dagger]."""
        rho1 = self.u_drive @ self.rho0() @ mat.dagger(self.u_drive)
        return np.array([np.trace(m @ rho1).real for m in self.meas_projectors])

    def joint_probs(self) -> np.ndarray:
        """p(k, l) indexed [k, l]."""
        return (self.mismatch * self.outcome_probs()[:, None]).T

    def branch_probs(self) -> np.ndarray:
        return self.joint_probs().sum(axis=1)

    def free_energies(self) -> np.ndarray:
        """Delta F^(k); at beta = 0 the finite limit (Tr H_k - Tr H_0) / d."""
        if self.beta == 0:
            return np.array([(np.trace(b.h_final) - np.trace(self.h0)).real / self.dim for b in self.branches])
        return np.array([free_energy_difference(self.h0, b.h_final, self.beta) for b in self.branches])


@dataclass(frozen=True)
class BackwardProtocol:
    beta: float
    initial_hamiltonians: tuple[np.ndarray, ...]
    sampling: np.ndarray
    v_feedback_rev: tuple[np.ndarray, ...]
    meas_projectors_rev: tuple[np.ndarray, ...]
    u_drive_rev: np.ndarray
    h_final_rev: np.ndarray
    # label-carrying spectra: initial_spectra[k] pairs with forward branch k final
    # energies, final_spectrum with the forward initial energies
    initial_spectra: tuple[Spectrum, ...] = field(repr=False, default=())
    final_spectrum: Spectrum | None = field(repr=False, default=None)

    @property
    def n_branches(self) -> int:
        return len(self.initial_hamiltonians)

    @property
    def n_outcomes(self) -> int:
        return len(self.meas_projectors_rev)

    def rho0(self, k: int) -> np.ndarray:
        return gibbs_state(self.initial_hamiltonians[k], self.beta)


def _reversed_spectrum(spec: Spectrum, h_rev: np.ndarray, theta: TimeReversalOp) -> Spectrum:
    projs = tuple(theta.conjugate(p) for p in spec.projectors)
    for e, p in zip(spec.energies, projs):
        if np.max(np.abs(h_rev @ p - e * p)) > TOL * max(1.0, float(np.max(np.abs(h_rev)))):
            raise ProtocolInvalid("time-reversed projector is not an eigenprojector of the reversed Hamiltonian")
    return Spectrum(spec.energies.copy(), projs)


def build_backward(fwd: FeedbackProtocol, theta: TimeReversalOp | None = None) -> BackwardProtocol:
    theta = theta or default_theta(fwd.dim)
    if theta.dim != fwd.dim:
        raise ProtocolInvalid("time-reversal operator dimension does not match the system")
    h_init = tuple(theta.conjugate(b.h_final) for b in fwd.branches)
    h_fin = theta.conjugate(fwd.h0)
    init_specs = tuple(
        _reversed_spectrum(fwd.spectrum_final(k), h_init[k], theta) for k in range(fwd.n_branches)
    )
    return BackwardProtocol(
        beta=fwd.beta,
        initial_hamiltonians=h_init,
        sampling=fwd.branch_probs(),
        v_feedback_rev=tuple(time_reverse(b.v_feedback, theta, evolution=True) for b in fwd.branches),
        meas_projectors_rev=tuple(theta.conjugate(m) for m in fwd.meas_projectors),
        u_drive_rev=time_reverse(fwd.u_drive, theta, evolution=True),
        h_final_rev=h_fin,
        initial_spectra=init_specs,
        final_spectrum=_reversed_spectrum(fwd.spectrum0(), h_fin, theta),
    )


def forward_from_backward(b: BackwardProtocol, mismatch, theta: TimeReversalOp | None = None) -> FeedbackProtocol:
    """Undo ``build_backward``; the mismatch channel has no backward counterpart and is supplied."""
    theta = theta or default_theta(b.h_final_rev.shape[0])
    return FeedbackProtocol(
        beta=b.beta,
        h0=theta.conjugate(b.h_final_rev),
        u_drive=time_reverse(b.u_drive_rev, theta, evolution=True),
        meas_projectors=tuple(theta.conjugate(m) for m in b.meas_projectors_rev),
        mismatch=mismatch,
        branches=tuple(
            Branch(time_reverse(v, theta, evolution=True), theta.conjugate(h))
            for v, h in zip(b.v_feedback_rev, b.initial_hamiltonians)
        ),
    )


def default_theta(dim: int) -> TimeReversalOp:
    n = int(round(np.log2(dim)))
    if 2**n == dim and n >= 1:
        return TimeReversalOp.spin_half(n)
    return TimeReversalOp.spinless(dim)


# convenience constructors ---------------------------------------------------

def pauli_hamiltonian(cx: float = 0.0, cy: float = 0.0, cz: float = 0.0, c0: float = 0.0) -> np.ndarray:
    return c0 * mat.I2 + cx * mat.SX + cy * mat.SY + cz * mat.SZ


def quench_protocol(
    omegas=(2.0, 3.0),
    beta: float = 0.2,
    phi: float = np.pi / 3,
    omega0: float = 1.0,
    tau1: float = 0.5,
    tau2: float = 1.2,
) -> FeedbackProtocol:
    """Qubit controlled by conditional sudden quenches.

    H0 = -omega0 sz, free evolution up to tau1, energy measurement, then the
    quench H^(k) = -omega_k sx held until tau2. The evolution times only set
    phases that commute with the relevant Hamiltonians.
    """
    h0 = pauli_hamiltonian(cz=-omega0)
    u = mat.phase_exp(mat.SZ, omega0 * tau1)
    projs = (mat.projector(mat.KET0), mat.projector(mat.KET1))
    branches = tuple(
        Branch(mat.phase_exp(mat.SX, w * (tau2 - tau1)), pauli_hamiltonian(cx=-w)) for w in omegas
    )
    return FeedbackProtocol(beta, h0, u, projs, rx_mismatch(phi), branches, mismatch_phi=phi)


def trivial_measurement_protocol(h0, u_total, h_final, beta: float) -> FeedbackProtocol:
    """Single outcome (identity projector), single branch: no feedback at all."""
    d = np.asarray(h0).shape[0]
    return FeedbackProtocol(
        beta, h0, np.eye(d), (np.eye(d),), np.ones((1, 1)), (Branch(u_total, h_final),)
    )


def random_protocol(rng: np.random.Generator, dim: int = 2, n_branches: int = 2, beta=None) -> FeedbackProtocol:
    h0 = mat.random_hermitian(dim, rng)
    u = mat.random_unitary(dim, rng)
    basis = mat.random_unitary(dim, rng)
    projs = tuple(mat.projector(basis[:, j]) for j in range(dim))
    raw = rng.uniform(0.05, 1.0, (dim, n_branches))
    mismatch = raw / raw.sum(axis=1, keepdims=True)
    branches = tuple(Branch(mat.random_unitary(dim, rng), mat.random_hermitian(dim, rng)) for _ in range(n_branches))
    beta = float(rng.uniform(0.1, 3.0)) if beta is None else beta
    return FeedbackProtocol(beta, h0, u, projs, mismatch, branches)


# JSON ------------------------------------------------------------------------

def _enc_matrix(m) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _dec_matrix(data, what: str) -> np.ndarray:
    try:
        arr = np.asarray(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProtocolInvalid(f"{what}: matrix entries must be [re, im] pairs") from exc
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ProtocolInvalid(f"{what}: expected an n x n array of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def _dec_operator(data, what: str) -> np.ndarray:
    """Matrix of [re, im] pairs, or a Pauli-form dict {"cx", "cy", "cz", "c0"}."""
    if isinstance(data, dict):
        unknown = set(data) - {"cx", "cy", "cz", "c0"}
        if unknown:
            raise ProtocolInvalid(f"{what}: unknown Pauli coefficients {sorted(unknown)}")
        return pauli_hamiltonian(**{k: float(v) for k, v in data.items()})
    return _dec_matrix(data, what)


def _dec_unitary(data, what: str) -> np.ndarray:
    """Matrix, or {"generator": <operator>, "angle": t} meaning exp(i t G)."""
    if isinstance(data, dict) and "generator" in data:
        return mat.phase_exp(_dec_operator(data["generator"], what), float(data.get("angle", 0.0)))
    return _dec_operator(data, what)


def protocol_to_dict(p: FeedbackProtocol) -> dict:
    mismatch = (
        {"model": "rx", "phi": float(p.mismatch_phi)}
        if p.mismatch_phi is not None
        else [[float(x) for x in row] for row in p.mismatch]
    )
    return {
        "beta": float(p.beta),
        "h0": _enc_matrix(p.h0),
        "u_drive": _enc_matrix(p.u_drive),
        "projectors": [_enc_matrix(m) for m in p.meas_projectors],
        "mismatch": mismatch,
        "branches": [{"v_feedback": _enc_matrix(b.v_feedback), "h_final": _enc_matrix(b.h_final)} for b in p.branches],
    }


def protocol_from_dict(d: dict) -> FeedbackProtocol:
    if not isinstance(d, dict):
        raise ProtocolInvalid("protocol document must be a JSON object")
    for key in ("beta", "h0", "u_drive", "projectors", "mismatch", "branches"):
        if key not in d:
            raise ProtocolInvalid(f"missing field '{key}'")
    mm = d["mismatch"]
    phi = None
    if isinstance(mm, dict):
        if mm.get("model") != "rx" or "phi" not in mm:
            raise ProtocolInvalid("mismatch object must be {\"model\": \"rx\", \"phi\": <angle>}")
        phi = float(mm["phi"])
        table = rx_mismatch(phi, len(d["projectors"]))
    else:
        table = np.asarray(mm, dtype=float)
    try:
        branches = tuple(
            Branch(_dec_unitary(b["v_feedback"], f"branches[{i}].v_feedback"),
                   _dec_operator(b["h_final"], f"branches[{i}].h_final"))
            for i, b in enumerate(d["branches"])
        )
    except (KeyError, TypeError) as exc:
        raise ProtocolInvalid("each branch needs 'v_feedback' and 'h_final'") from exc
    return FeedbackProtocol(
        beta=float(d["beta"]),
        h0=_dec_operator(d["h0"], "h0"),
        u_drive=_dec_unitary(d["u_drive"], "u_drive"),
        meas_projectors=tuple(_dec_operator(m, f"projectors[{i}]") for i, m in enumerate(d["projectors"])),
        mismatch=table,
        branches=branches,
        mismatch_phi=phi,
    )


def dumps(p: FeedbackProtocol) -> str:
    return json.dumps(protocol_to_dict(p), indent=2)


def loads(text: str) -> FeedbackProtocol:
    return protocol_from_dict(json.loads(text))
