"""Exact two-point-measurement statistics by enumeration of histories.

Every probability here is a closed-form trace; nothing is sampled. A history
of the forward feedback protocol is (m, k, l, n): initial energy label n,
measurement outcome l, applied feedback branch k, final energy label m of
H^(k). Backward atoms carry the same tuple, with n the label of the final
backward energy and m the label of the initial backward energy, so forward
and backward partners share identical labels.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import mat
from .errors import IndexOutOfRange, ProtocolInvalid, UnpairedAtom, ZeroBranchProbability
from .proto import BackwardProtocol, FeedbackProtocol, Spectrum, TimeReversalOp, build_backward, default_theta
from .proto import free_energy_difference, time_reverse

WEIGHT_FLOOR = 1e-15


class Kind(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    FORWARD_WCM = "forward_wcm"
    BACKWARD_WCM = "backward_wcm"
    NOFEEDBACK_FWD = "nofeedback_fwd"
    NOFEEDBACK_BWD = "nofeedback_bwd"


@dataclass(frozen=True)
class Atom:
    w: float
    df: float
    i: float
    weight: float
    labels: tuple[int, int, int, int]


@dataclass(frozen=True)
class AtomPDF:
    atoms: tuple[Atom, ...]
    kind: Kind

    def __post_init__(self):
        kept = sorted((a for a in self.atoms if a.weight >= WEIGHT_FLOOR), key=lambda a: a.labels)
        labels = [a.labels for a in kept]
        if len(set(labels)) != len(labels):
            raise ValueError("atom labels must be unique within one distribution")
        object.__setattr__(self, "atoms", tuple(kept))

    def __len__(self):
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    @property
    def total(self) -> float:
        return float(sum(a.weight for a in self.atoms))

    def as_dict(self) -> dict:
        return {a.labels: a for a in self.atoms}

    def select(self, k=None, l=None) -> "AtomPDF":
        keep = [a for a in self.atoms if (k is None or a.labels[1] == k) and (l is None or a.labels[2] == l)]
        return AtomPDF(tuple(keep), self.kind)

    def histories(self) -> list[tuple[int, int]]:
        return sorted({(a.labels[1], a.labels[2]) for a in self.atoms})

    def locations(self) -> np.ndarray:
        return np.array([a.w for a in self.atoms])

    def weights(self) -> np.ndarray:
        return np.array([a.weight for a in self.atoms])

    def char_fn(self, u) -> np.ndarray:
        """Closed-form characteristic function sum_j w_j exp(i u W_j)."""
        u = np.asarray(u, dtype=float)
        return np.exp(1j * np.multiply.outer(u, self.locations())) @ self.weights()

    def merge(self, other: "AtomPDF", kind: Kind | None = None) -> "AtomPDF":
        return AtomPDF(self.atoms + other.atoms, kind or self.kind)


def _slice(p, k: int, l: int | None = None):
    if not 0 <= k < p.n_branches:
        raise IndexOutOfRange(f"branch index k={k} outside 0..{p.n_branches - 1}")
    if l is not None and not 0 <= l < p.n_outcomes:
        raise IndexOutOfRange(f"outcome index l={l} outside 0..{p.n_outcomes - 1}")


def _tpm(final: Spectrum, chain, initial: Spectrum, p_init) -> np.ndarray:
    """table[m, n] = Tr[P_m C Pi_n C^dagger] p(n) for a Kraus chain C."""
    out = np.empty((len(final.energies), len(initial.energies)))
    for n, pin in enumerate(initial.projectors):
        evolved = chain @ pin @ mat.dagger(chain)
        for m, pm in enumerate(final.projectors):
            out[m, n] = np.trace(pm @ evolved).real * p_init[n]
    return np.clip(out, 0.0, None)


def _thermal_populations(spec: Spectrum, beta: float) -> np.ndarray:
    e = spec.energies
    w = np.exp(-beta * (e - e.min()))
    return w / w.sum()


def conditional_tables(p: FeedbackProtocol) -> dict:
    """Factorized conditionals p(n), p(l|n), p(m|l) as defined for rank-one projectors."""
    s0 = p.spectrum0()
    p_n = _thermal_populations(s0, p.beta)
    u = p.u_drive
    p_l_n = np.array([[np.trace(ml @ u @ pn @ mat.dagger(u)).real for pn in s0.projectors] for ml in p.meas_projectors])
    p_m_l = []
    for k, br in enumerate(p.branches):
        sk = p.spectrum_final(k)
        v = br.v_feedback
        p_m_l.append(np.array([[np.trace(pm @ v @ ml @ mat.dagger(v)).real for ml in p.meas_projectors] for pm in sk.projectors]))
    return {"p_n": p_n, "p_l_given_n": p_l_n, "p_m_given_l": p_m_l}


def mutual_information_density(p: FeedbackProtocol) -> np.ndarray:
    """I(k, l) = ln p(k|l)/p(k) in nats, indexed [k, l]; -inf where p(k|l) = 0."""
    pk = p.branch_probs()
    cond = p.mismatch.T
    out = np.full(cond.shape, -np.inf)
    for k in range(cond.shape[0]):
        for l in range(cond.shape[1]):
            if cond[k, l] > 0:
                if pk[k] <= 0:
                    raise ZeroBranchProbability(f"p(k={k}) = 0 while p(k|l={l}) > 0")
                out[k, l] = np.log(cond[k, l] / pk[k])
    return out


def mean_information(p: FeedbackProtocol) -> float:
    joint = p.joint_probs()
    info = mutual_information_density(p)
    mask = joint > 0
    return float(np.sum(joint[mask] * info[mask]))


def forward_mixed_work_pdf(p: FeedbackProtocol, k: int, l: int) -> AtomPDF:
    _slice(p, k, l)
    s0 = p.spectrum0()
    sk = p.spectrum_final(k)
    br = p.branches[k]
    chain = br.v_feedback @ p.meas_projectors[l] @ p.u_drive
    table = _tpm(sk, chain, s0, _thermal_populations(s0, p.beta)) * p.mismatch[l, k]
    df = p.free_energies()[k]
    info = mutual_information_density(p)[k, l] if table.sum() > 0 else 0.0
    atoms = [
        Atom(float(sk.energies[m] - s0.energies[n]), float(df), float(info), float(table[m, n]), (m, k, l, n))
        for m in range(table.shape[0])
        for n in range(table.shape[1])
    ]
    return AtomPDF(tuple(atoms), Kind.FORWARD)


def backward_mixed_work_pdf(b: BackwardProtocol, l: int, k: int, fwd: FeedbackProtocol | None = None) -> AtomPDF:
    """Backward atoms for history (l, k). ``fwd`` supplies Delta F and I for the atom tags."""
    _slice(b, k, l)
    sk = b.initial_spectra[k]
    sf = b.final_spectrum
    chain = b.u_drive_rev @ b.meas_projectors_rev[l] @ b.v_feedback_rev[k]
    # table[n, m]: final backward label n, initial backward label m
    table = _tpm(sf, chain, sk, _thermal_populations(sk, b.beta)) * b.sampling[k]
    df = -fwd.free_energies()[k] if fwd is not None else float("nan")
    info = mutual_information_density(fwd)[k, l] if fwd is not None and table.sum() > 0 else float("nan")
    atoms = [
        Atom(float(sf.energies[n] - sk.energies[m]), float(df), float(info), float(table[n, m]), (m, k, l, n))
        for n in range(table.shape[0])
        for m in range(table.shape[1])
    ]
    return AtomPDF(tuple(atoms), Kind.BACKWARD)


def wcm_mixed_work_pdfs(p: FeedbackProtocol, b: BackwardProtocol, k: int) -> tuple[AtomPDF, AtomPDF]:
    """Mixed PDFs of the protocol with feedback branch k applied exactly when l = k."""
    if p.n_outcomes != p.n_branches:
        raise ProtocolInvalid("the no-mismatch protocol needs one branch per measurement outcome")
    _slice(p, k, k)
    s0 = p.spectrum0()
    sk = p.spectrum_final(k)
    df = p.free_energies()[k]
    chain = p.branches[k].v_feedback @ p.meas_projectors[k] @ p.u_drive
    table = _tpm(sk, chain, s0, _thermal_populations(s0, p.beta))
    fwd = AtomPDF(
        tuple(
            Atom(float(sk.energies[m] - s0.energies[n]), float(df), 0.0, float(table[m, n]), (m, k, k, n))
            for m in range(table.shape[0])
            for n in range(table.shape[1])
        ),
        Kind.FORWARD_WCM,
    )
    bk = b.initial_spectra[k]
    sf = b.final_spectrum
    bchain = b.u_drive_rev @ b.meas_projectors_rev[k] @ b.v_feedback_rev[k]
    btable = _tpm(sf, bchain, bk, _thermal_populations(bk, b.beta))
    bwd = AtomPDF(
        tuple(
            Atom(float(sf.energies[n] - bk.energies[m]), float(-df), 0.0, float(btable[n, m]), (m, k, k, n))
            for n in range(btable.shape[0])
            for m in range(btable.shape[1])
        ),
        Kind.BACKWARD_WCM,
    )
    return fwd, bwd


def joint_pdfs(p: FeedbackProtocol, b: BackwardProtocol | None = None) -> tuple[AtomPDF, AtomPDF]:
    """Whole-process forward and backward distributions over (W, Delta F, I)."""
    b = b or build_backward(p)
    fwd, bwd = [], []
    for k in range(p.n_branches):
        for l in range(p.n_outcomes):
            fwd.extend(forward_mixed_work_pdf(p, k, l).atoms)
            bwd.extend(backward_mixed_work_pdf(b, l, k, p).atoms)
    return AtomPDF(tuple(fwd), Kind.FORWARD), AtomPDF(tuple(bwd), Kind.BACKWARD)


def _trace_chi(h_end, chain, h_start, rho, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.empty(len(u), dtype=complex)
    for j, x in enumerate(u):
        a = mat.phase_exp(h_end, x) @ chain @ mat.phase_exp(h_start, -x) @ rho @ mat.dagger(chain)
        out[j] = np.trace(a)
    return out


def chi_forward_trace(p: FeedbackProtocol, k: int, l: int, u) -> np.ndarray:
    """p(k|l) Tr[e^{iuH^(k)} V M_l U e^{-iuH_0} rho_0 U^dagger M_l V^dagger]."""
    _slice(p, k, l)
    chain = p.branches[k].v_feedback @ p.meas_projectors[l] @ p.u_drive
    return p.mismatch[l, k] * _trace_chi(p.branches[k].h_final, chain, p.h0, p.rho0(), u)


def chi_backward_trace(b: BackwardProtocol, l: int, k: int, u) -> np.ndarray:
    """p(k) Tr[e^{iu H~_tau2} U~ M~_l V~^(k) e^{-iu H~_0^(k)} rho~_0^(k) ...^dagger]."""
    _slice(b, k, l)
    chain = b.u_drive_rev @ b.meas_projectors_rev[l] @ b.v_feedback_rev[k]
    return b.sampling[k] * _trace_chi(b.h_final_rev, chain, b.initial_hamiltonians[k], b.rho0(k), u)


def chi_forward_wcm_trace(p: FeedbackProtocol, k: int, u) -> np.ndarray:
    _slice(p, k, k)
    chain = p.branches[k].v_feedback @ p.meas_projectors[k] @ p.u_drive
    return _trace_chi(p.branches[k].h_final, chain, p.h0, p.rho0(), u)


def chi_backward_wcm_trace(b: BackwardProtocol, k: int, u) -> np.ndarray:
    _slice(b, k, k)
    chain = b.u_drive_rev @ b.meas_projectors_rev[k] @ b.v_feedback_rev[k]
    return _trace_chi(b.h_final_rev, chain, b.initial_hamiltonians[k], b.rho0(k), u)


def all_backward_mixed(p: FeedbackProtocol, b: BackwardProtocol) -> dict:
    return {(k, l): backward_mixed_work_pdf(b, l, k, p) for k in range(p.n_branches) for l in range(p.n_outcomes)}


@dataclass(frozen=True)
class MarginalReport:
    p_kl: dict
    p_df: dict
    p_i: dict
    p_w: dict
    mean_w: float
    mean_df: float
    mean_i: float


def _accumulate(pairs) -> dict:
    out: dict = {}
    for key, wgt in pairs:
        key = round(key, 12)
        out[key] = out.get(key, 0.0) + wgt
    return dict(sorted(out.items()))


def marginals_and_averages(joint: AtomPDF) -> MarginalReport:
    atoms = joint.atoms
    p_kl: dict = {}
    for a in atoms:
        key = (a.labels[1], a.labels[2])
        p_kl[key] = p_kl.get(key, 0.0) + a.weight
    finite_i = [a for a in atoms if np.isfinite(a.i)]
    return MarginalReport(
        p_kl=dict(sorted(p_kl.items())),
        p_df=_accumulate((a.df, a.weight) for a in atoms),
        p_i=_accumulate((a.i, a.weight) for a in finite_i),
        p_w=_accumulate((a.w, a.weight) for a in atoms),
        mean_w=float(sum(a.w * a.weight for a in atoms)),
        mean_df=float(sum(a.df * a.weight for a in atoms)),
        mean_i=float(sum(a.i * a.weight for a in finite_i)),
    )


def mean_work_from_states(p: FeedbackProtocol) -> float:
    """sum_{k,l} p(k,l) [U(rho^(k,l)) - U(rho0)] from the evolved density matrices."""
    rho0 = p.rho0()
    u0 = np.trace(rho0 @ p.h0).real
    rho1 = p.u_drive @ rho0 @ mat.dagger(p.u_drive)
    total = 0.0
    for l, ml in enumerate(p.meas_projectors):
        post = ml @ rho1 @ ml
        pl = np.trace(post).real
        if pl <= 0:
            continue
        for k, br in enumerate(p.branches):
            pkl = p.mismatch[l, k] * pl
            rho_kl = br.v_feedback @ (post / pl) @ mat.dagger(br.v_feedback)
            total += pkl * (np.trace(rho_kl @ br.h_final).real - u0)
    return float(total)


def mean_backward_work_from_states(b: BackwardProtocol) -> float:
    total = 0.0
    for k in range(b.n_branches):
        rho0 = b.rho0(k)
        u0 = np.trace(rho0 @ b.initial_hamiltonians[k]).real
        rho1 = b.v_feedback_rev[k] @ rho0 @ mat.dagger(b.v_feedback_rev[k])
        for ml in b.meas_projectors_rev:
            post = ml @ rho1 @ ml
            pl = np.trace(post).real
            if pl <= 0:
                continue
            rho_f = b.u_drive_rev @ (post / pl) @ mat.dagger(b.u_drive_rev)
            total += b.sampling[k] * pl * (np.trace(rho_f @ b.h_final_rev).real - u0)
    return float(total)


def nofeedback_work_pdfs(h0, u, beta: float, h_final=None, theta: TimeReversalOp | None = None) -> tuple[AtomPDF, AtomPDF]:
    """Plain two-point-measurement PDFs of a driven protocol and its time reverse."""
    h0 = mat.as_matrix(h0)
    h_final = h0 if h_final is None else mat.as_matrix(h_final)
    u = mat.as_matrix(u)
    if not mat.is_unitary(u, mat.VALIDATION_TOL):
        raise ProtocolInvalid("drive is not unitary")
    theta = theta or default_theta(h0.shape[0])
    s0 = Spectrum.of(h0, "h0")
    sf = Spectrum.of(h_final, "h_final")
    df = free_energy_difference(h0, h_final, beta) if beta > 0 else float((np.trace(h_final) - np.trace(h0)).real / h0.shape[0])
    table = _tpm(sf, u, s0, _thermal_populations(s0, beta))
    fwd = AtomPDF(
        tuple(
            Atom(float(sf.energies[m] - s0.energies[n]), df, 0.0, float(table[m, n]), (m, 0, 0, n))
            for m in range(table.shape[0])
            for n in range(table.shape[1])
        ),
        Kind.NOFEEDBACK_FWD,
    )
    # backward: start in the Gibbs state of Theta H_final Theta^dagger
    b_init = Spectrum(sf.energies, tuple(theta.conjugate(pm) for pm in sf.projectors))
    b_fin = Spectrum(s0.energies, tuple(theta.conjugate(pn) for pn in s0.projectors))
    u_rev = time_reverse(u, theta, evolution=True)
    btable = _tpm(b_fin, u_rev, b_init, _thermal_populations(b_init, beta))
    bwd = AtomPDF(
        tuple(
            Atom(float(b_fin.energies[n] - b_init.energies[m]), -df, 0.0, float(btable[n, m]), (m, 0, 0, n))
            for n in range(btable.shape[0])
            for m in range(btable.shape[1])
        ),
        Kind.NOFEEDBACK_BWD,
    )
    return fwd, bwd


@dataclass(frozen=True)
class AtomRatio:
    labels: tuple[int, int, int, int]
    w: float
    ratio: float
    predicted: float

    @property
    def rel_dev(self) -> float:
        return abs(self.ratio - self.predicted) / abs(self.predicted)


@dataclass(frozen=True)
class QDFRCheck:
    ratios: tuple[AtomRatio, ...]

    @property
    def max_rel_dev(self) -> float:
        return max((r.rel_dev for r in self.ratios), default=0.0)


def pair_atoms(fwd: AtomPDF, bwd: AtomPDF) -> list[tuple[Atom, Atom]]:
    partners = bwd.as_dict()
    pairs = []
    for a in fwd.atoms:
        b = partners.get(a.labels)
        if b is None or b.weight < WEIGHT_FLOOR:
            raise UnpairedAtom(f"forward atom {a.labels} (W={a.w:+.6g}) has no backward partner")
        pairs.append((a, b))
    return pairs


def qdfr_atom_check(fwd: AtomPDF, bwd: AtomPDF, beta: float) -> QDFRCheck:
    """Per-atom ratio P_F / P_B(-W) against exp(beta (W - Delta F) + I)."""
    out = []
    for a, b in pair_atoms(fwd, bwd):
        if abs(a.w + b.w) > 1e-9 * max(1.0, abs(a.w)):
            raise UnpairedAtom(f"partner of {a.labels} sits at W={b.w}, expected {-a.w}")
        predicted = float(np.exp(beta * (a.w - a.df) + (a.i if np.isfinite(a.i) else 0.0)))
        out.append(AtomRatio(a.labels, a.w, a.weight / b.weight, predicted))
    return QDFRCheck(tuple(out))


# export ----------------------------------------------------------------------

COLUMNS = ("m", "k", "l", "n", "W", "dF", "I", "weight")


def atoms_to_csv(pdf: AtomPDF) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for a in pdf.atoms:
        writer.writerow([*a.labels, repr(a.w), repr(a.df), repr(a.i), repr(a.weight)])
    return buf.getvalue()


def atoms_to_json(pdf: AtomPDF) -> str:
    return json.dumps(
        {
            "kind": pdf.kind.value,
            "atoms": [dict(zip(COLUMNS, [*a.labels, a.w, a.df, a.i, a.weight])) for a in pdf.atoms],
        },
        indent=2,
    )


def atoms_from_json(text: str) -> AtomPDF:
    d = json.loads(text)
    atoms = tuple(
        Atom(row["W"], row["dF"], row["I"], row["weight"], (row["m"], row["k"], row["l"], row["n"])) for row in d["atoms"]
    )
    return AtomPDF(atoms, Kind(d["kind"]))
