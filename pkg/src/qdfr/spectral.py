"""Conjugate-variable grids, characteristic-function sampling and Fourier reconstruction.

A characteristic function sampled on a symmetric grid is windowed by
exp(-gamma |u|) and inverse transformed. Each delta atom of weight p becomes
a Lorentzian of half-width gamma and height p / (pi gamma), so the weight is
read back as pi * gamma * height. With gamma = 0 the samples are instead fitted
by least squares on known atom locations, which recovers exact weights.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, GridTooCoarse, InfeasibleGrid, OverlappingPeaks
from .oracle import Atom, AtomPDF, Kind
from .proto import FeedbackProtocol

MAX_POINTS = 1 << 20
SEPARATION = 6.0  # minimum peak separation in units of gamma
PAD = 8  # zero padding of the transform, refines the W grid


@dataclass(frozen=True)
class UGrid:
    u_max: float
    n: int
    w_max: float | None = None
    margin: float = 0.0
    gamma: float | None = None

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise InfeasibleGrid(f"sample count must be even and at least 2, got {self.n}")
        if not self.u_max > 0:
            raise InfeasibleGrid("u_max must be positive")

    @property
    def du(self) -> float:
        return 2.0 * self.u_max / self.n

    @property
    def values(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.du

    @property
    def zero_index(self) -> int:
        return self.n // 2

    @property
    def resolution(self) -> float:
        return 2.0 * np.pi / (self.n * self.du)

    @property
    def w_window(self) -> float:
        """Half-width of the alias-free work window, pi / du."""
        return np.pi / self.du

    def supports(self, gamma: float) -> bool:
        return gamma <= 0 or self.resolution <= gamma / 4.0 * (1 + 1e-12)


def plan_ugrid(w_max: float, gamma: float, margin: float = 0.25) -> UGrid:
    """Smallest power-of-two grid with du <= pi/(w_max(1+margin)) and 2pi/(n du) <= gamma/4."""
    if not (np.isfinite(w_max) and w_max > 0):
        raise InfeasibleGrid(f"w_max must be positive, got {w_max}")
    if not (np.isfinite(gamma) and gamma > 0):
        raise InfeasibleGrid(f"gamma must be positive for grid planning, got {gamma}")
    if margin < 0:
        raise InfeasibleGrid(f"margin must be nonnegative, got {margin}")
    du = np.pi / (w_max * (1.0 + margin))
    need = 8.0 * np.pi / (gamma * du)
    n = 8
    while n < need * (1 - 1e-12):
        n *= 2
        if n > MAX_POINTS:
            raise InfeasibleGrid(f"grid would need more than {MAX_POINTS} points")
    return UGrid(u_max=n * du / 2.0, n=n, w_max=float(w_max), margin=float(margin), gamma=float(gamma))


def fixed_ugrid(u_max: float, n: int) -> UGrid:
    return UGrid(u_max=float(u_max), n=int(n))


@dataclass(frozen=True)
class SampledCharFn:
    grid: UGrid
    samples: np.ndarray
    labels: tuple = ()
    kind: str = ""
    template: AtomPDF | None = field(default=None, repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        object.__setattr__(self, "samples", s)
        if s.shape != (self.grid.n,):
            raise GridMismatch(f"{s.shape[0] if s.ndim else 0} samples for a grid of {self.grid.n}")
        if abs(s[self.grid.zero_index].imag) > 1e-10:
            raise GridMismatch("chi(0) is not real")

    @property
    def total(self) -> float:
        return float(self.samples[self.grid.zero_index].real)

    def __add__(self, other: "SampledCharFn") -> "SampledCharFn":
        if other.grid != self.grid:
            raise GridMismatch("cannot add characteristic functions on different grids")
        return SampledCharFn(self.grid, self.samples + other.samples, self.labels, self.kind)


def sample_chi(source, grid: UGrid, labels: tuple = (), kind: str = "") -> SampledCharFn:
    """Sample an ``AtomPDF`` (closed form) or any callable u -> chi(u) on ``grid``."""
    u = grid.values
    if isinstance(source, AtomPDF):
        return SampledCharFn(grid, source.char_fn(u), labels, kind or source.kind.value, template=source)
    return SampledCharFn(grid, np.asarray(source(u), dtype=complex), labels, kind)


def sample_circuit_set(p: FeedbackProtocol, b, grid: UGrid, which: str, templates: dict | None = None) -> dict:
    """All histories of one circuit family: 'forward', 'backward', 'forward_wcm' or 'backward_wcm'."""
    from . import circuits

    u = grid.values
    if which == "forward":
        raw = circuits.forward_chi_samples(p, u)
    elif which == "backward":
        raw = circuits.backward_chi_samples(p, b, u)
    elif which == "forward_wcm":
        raw = circuits.wcm_forward_chi_samples(p, u)
    elif which == "backward_wcm":
        raw = circuits.wcm_backward_chi_samples(b, u)
    else:
        raise ValueError(f"unknown circuit family {which!r}")
    templates = templates or {}
    return {
        key: SampledCharFn(grid, v, key if isinstance(key, tuple) else (key, key), which, templates.get(key))
        for key, v in raw.items()
    }


def protocol_work_bound(p: FeedbackProtocol) -> float:
    """Largest |E_final - E_initial| over all branches."""
    e0 = p.spectrum0().energies
    out = 0.0
    for k in range(p.n_branches):
        ek = p.spectrum_final(k).energies
        out = max(out, float(np.max(np.abs(ek[:, None] - e0[None, :]))))
    return out


@dataclass(frozen=True)
class BroadenedPDF:
    w_grid: np.ndarray
    values: np.ndarray
    gamma: float
    labels: tuple = ()
    kind: str = ""
    source: SampledCharFn | None = field(default=None, repr=False)

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.w_grid))

    def evaluate(self, w) -> np.ndarray:
        """Exact windowed inverse transform at arbitrary W (grid interpolation without a source)."""
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if self.source is None:
            return np.interp(w, self.w_grid, self.values)
        return _direct_transform(self.source, self.gamma, w)


def _windowed(chi: SampledCharFn, gamma: float) -> np.ndarray:
    return chi.samples * np.exp(-gamma * np.abs(chi.grid.values))


def _direct_transform(chi: SampledCharFn, gamma: float, w: np.ndarray) -> np.ndarray:
    u = chi.grid.values
    x = _windowed(chi, gamma)
    phase = np.exp(-1j * np.outer(w, u))
    return (phase @ x).real * chi.grid.du / (2.0 * np.pi)


def reconstruct_pdf(chi: SampledCharFn, gamma: float, template: AtomPDF | None = None):
    """Broadened PDF for gamma > 0; exact ``AtomPDF`` for gamma = 0.

    The exact path fits the samples by least squares on the atom locations of
    ``template`` (or ``chi.template``): it uses the sampled data, not the
    template weights, which only split weight between atoms sharing a location.
    """
    if gamma < 0:
        raise GridTooCoarse(f"gamma must be nonnegative, got {gamma}")
    if gamma == 0:
        return _exact_atoms(chi, template or chi.template)
    grid = chi.grid
    if not grid.supports(gamma):
        raise GridTooCoarse(f"grid resolution {grid.resolution:.4g} exceeds gamma/4 = {gamma / 4:.4g}")
    n = grid.n
    size = PAD * n
    x = np.zeros(size, dtype=complex)
    x[:n] = _windowed(chi, gamma)
    m = np.fft.fftfreq(size, d=1.0 / size)  # integer frequency index, negative half wrapped
    w = 2.0 * np.pi * m / (size * grid.du)
    vals = (np.fft.fft(x) * np.exp(1j * np.pi * n * m / size)).real * grid.du / (2.0 * np.pi)
    order = np.argsort(w, kind="stable")
    return BroadenedPDF(w[order], vals[order], float(gamma), chi.labels, chi.kind, chi)


def _location_groups(template: AtomPDF, tol: float = 1e-9) -> list[list[Atom]]:
    groups: list[list[Atom]] = []
    for atom in sorted(template.atoms, key=lambda a: (a.w, a.labels)):
        if groups and abs(atom.w - groups[-1][0].w) <= tol:
            groups[-1].append(atom)
        else:
            groups.append([atom])
    return groups


def _split(groups, weights, kind) -> AtomPDF:
    atoms = []
    for group, wt in zip(groups, weights):
        ref = sum(a.weight for a in group)
        for a in group:
            share = a.weight / ref if ref > 0 else 1.0 / len(group)
            atoms.append(Atom(a.w, a.df, a.i, float(wt * share), a.labels))
    return AtomPDF(tuple(atoms), kind)


def _exact_atoms(chi: SampledCharFn, template: AtomPDF | None) -> AtomPDF:
    if template is None:
        raise GridTooCoarse("exact reconstruction (gamma = 0) needs known atom locations")
    groups = _location_groups(template)
    locs = np.array([g[0].w for g in groups])
    if len(locs) == 0:
        return AtomPDF((), template.kind)
    if np.max(np.abs(locs)) >= chi.grid.w_window:
        raise GridTooCoarse("atom locations fall outside the alias-free window")
    design = np.exp(1j * np.outer(chi.grid.values, locs))
    # stack real and imaginary parts so the weights stay real
    a = np.vstack([design.real, design.imag])
    y = np.concatenate([chi.samples.real, chi.samples.imag])
    weights, *_ = np.linalg.lstsq(a, y, rcond=None)
    return _split(groups, weights, template.kind)


def _check_separation(locs, gamma: float) -> None:
    locs = np.sort(np.asarray(locs, dtype=float))
    if len(locs) > 1:
        gap = float(np.min(np.diff(locs)))
        if gap < SEPARATION * gamma:
            raise OverlappingPeaks(f"peaks {gap:.4g} apart, below {SEPARATION:g} gamma = {SEPARATION * gamma:.4g}")


def _deconvolved_weights(pdf: "BroadenedPDF", locs: np.ndarray) -> np.ndarray:
    # heights at known locations include Lorentzian tails of the neighbours; undo them
    g = pdf.gamma
    heights = pdf.evaluate(locs)
    d = locs[:, None] - locs[None, :]
    lor = g / (np.pi * (d * d + g * g))
    return np.linalg.solve(lor, heights)


def _parabolic(y0: float, y1: float, y2: float) -> tuple[float, float]:
    denom = y0 - 2.0 * y1 + y2
    if denom >= 0:
        return 0.0, y1
    off = 0.5 * (y0 - y2) / denom
    return off, y1 - 0.25 * (y0 - y2) * off


def _half_width(values: np.ndarray, w: np.ndarray, i: int, height: float) -> float:
    lo = i
    while lo > 0 and values[lo] > height / 2:
        lo -= 1
    hi = i
    while hi < len(values) - 1 and values[hi] > height / 2:
        hi += 1
    return 0.5 * (w[hi] - w[lo])


def extract_atoms(
    pdf: BroadenedPDF,
    expected_locations=None,
    template: AtomPDF | None = None,
    threshold: float = 1e-3,
) -> list[Atom]:
    """Atoms read from Lorentzian peaks: weight = pi * gamma * height.

    With ``template`` the expected locations and labels come from its atoms,
    and weight at a shared location is split in the template's proportions.
    At known locations the tails of neighbouring peaks are removed by solving
    the small Lorentzian overlap system.
    Without expected locations maxima are searched and refined by a
    three-point parabola.
    """
    g = pdf.gamma
    if template is not None:
        groups = _location_groups(template)
        locs = np.array([grp[0].w for grp in groups])
        _check_separation(locs, g)
        weights = _deconvolved_weights(pdf, locs) if len(locs) else np.array([])
        return list(_split(groups, weights, template.kind).atoms)
    k, l = (pdf.labels + (-1, -1))[:2] if pdf.labels else (-1, -1)
    if expected_locations is not None:
        locs = np.unique(np.asarray(expected_locations, dtype=float))
        _check_separation(locs, g)
        weights = _deconvolved_weights(pdf, locs)
        return [Atom(float(x), np.nan, np.nan, float(p), (j, k, l, -1)) for j, (x, p) in enumerate(zip(locs, weights))]
    v, w = pdf.values, pdf.w_grid
    floor = threshold * float(np.max(v))
    peaks = [i for i in range(1, len(v) - 1) if v[i] > floor and v[i] >= v[i - 1] and v[i] > v[i + 1]]
    found = []
    dw = w[1] - w[0]
    reach = max(1, int(round(SEPARATION * g / dw)))
    for i in peaks:
        off, h = _parabolic(v[i - 1], v[i], v[i + 1])
        # truncation ripple between tails makes shallow maxima; a peak must fall to half height nearby
        left, right = v[max(0, i - reach):i + 1].min(), v[i:i + reach + 1].min()
        if h - max(left, right) < 0.5 * h:
            continue
        if _half_width(v, w, i, h) > 1.5 * g:
            raise OverlappingPeaks(f"peak near W={w[i]:.4g} is wider than a single Lorentzian")
        found.append((w[i] + off * dw, h))
    _check_separation([x for x, _ in found], g)
    return [Atom(float(x), np.nan, np.nan, float(np.pi * g * h), (j, k, l, -1)) for j, (x, h) in enumerate(found)]


def recover_atoms(chis: dict, gamma: float, templates: dict, kind: Kind) -> AtomPDF:
    """Per-history reconstruction and extraction, merged into one labelled PDF."""
    atoms: list[Atom] = []
    for key in sorted(chis):
        tpl = templates[key]
        if gamma == 0:
            atoms.extend(reconstruct_pdf(chis[key], 0.0, tpl).atoms)
        else:
            atoms.extend(extract_atoms(reconstruct_pdf(chis[key], gamma), template=tpl))
    return AtomPDF(tuple(atoms), kind)


def pdf_to_csv(pdfs: dict) -> str:
    """Columns k, l, W, value; one block per history key."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["k", "l", "W", "value"])
    for key in sorted(pdfs):
        k, l = key if isinstance(key, tuple) else (key, key)
        pdf = pdfs[key]
        for x, y in zip(pdf.w_grid, pdf.values):
            wr.writerow([k, l, repr(float(x)), repr(float(y))])
    return buf.getvalue()
