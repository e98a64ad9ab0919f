"""Ratio points, line and hyperplane regressions, and the consistency verdict.

For each forward atom the log ratio ln P_F / P_B(partner) is a point on
z = beta W - beta dF + I. Straight lines per history give beta from the slope
and dF (or I) from the zero crossing; the hyperplane regression over every
history tests whether the coefficient of I equals one.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegeneratePoints, RankDeficient, UnpairedAtom
from .oracle import WEIGHT_FLOOR, AtomPDF

VARIATION_TOL = 1e-9


@dataclass(frozen=True)
class RatioPoint:
    w: float
    df: float
    i: float
    logratio: float
    labels: tuple


def ratio_points(fwd: AtomPDF, bwd: AtomPDF) -> list[RatioPoint]:
    """Pair atoms by their history labels; backward partners sit at -W."""
    partners = bwd.as_dict()
    out = []
    for a in fwd.atoms:
        b = partners.get(a.labels)
        if b is None:
            raise UnpairedAtom(f"forward atom {a.labels} (W={a.w:+.6g}) has no backward partner")
        if a.weight > WEIGHT_FLOOR and b.weight > WEIGHT_FLOOR:
            info = a.i if np.isfinite(a.i) else 0.0
            out.append(RatioPoint(a.w, a.df, info, float(np.log(a.weight / b.weight)), a.labels))
    return out


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    zero_crossing: float
    residual_max: float
    n_points: int

    def __iter__(self):
        return iter((self.slope, self.intercept, self.zero_crossing))


def fit_line(points) -> LineFit:
    """OLS fit of logratio against W; the zero crossing is where the ratio is one."""
    w = np.array([p.w for p in points], dtype=float)
    z = np.array([p.logratio for p in points], dtype=float)
    if len(w) < 2 or np.ptp(w) <= VARIATION_TOL * max(1.0, float(np.max(np.abs(w)))):
        raise DegeneratePoints(f"need at least two distinct W values, got {sorted(set(w.tolist()))}")
    a = np.column_stack([w, np.ones_like(w)])
    (slope, intercept), *_ = np.linalg.lstsq(a, z, rcond=None)
    # the line must rise or fall measurably across the W range
    if abs(slope) * np.ptp(w) <= 1e-12 * max(1.0, float(np.max(np.abs(z)))):
        raise DegeneratePoints("fitted slope is zero, no zero crossing")
    resid = z - a @ np.array([slope, intercept])
    return LineFit(float(slope), float(intercept), float(-intercept / slope), float(np.max(np.abs(resid))), len(w))


def extract_information(zero_crossing: float, beta_hat: float, deltaF_hat: float) -> float:
    """I = beta (dF - W0); with no mismatch W0 = dF and the result is zero."""
    if not beta_hat > 0:
        raise DegeneratePoints(f"beta estimate must be positive, got {beta_hat}")
    return float(beta_hat * (deltaF_hat - zero_crossing))


@dataclass(frozen=True)
class HyperplaneFit:
    model: tuple[str, ...]
    coefficients: dict
    residual_max: float
    n_points: int
    constants: dict = field(default_factory=dict)

    @property
    def c_w(self) -> float | None:
        return self.coefficients.get("W")

    @property
    def c_df(self) -> float | None:
        return self.coefficients.get("dF")

    @property
    def c_i(self) -> float | None:
        return self.coefficients.get("I")

    @property
    def c0(self) -> float | None:
        return self.coefficients.get("1")

    @property
    def deltaF_hat(self) -> float | None:
        """dF read from the intercept when dF was constant and dropped."""
        if "dF" in self.model or self.c0 is None or not self.c_w:
            return None
        shift = self.constants.get("I", 0.0) if "I" not in self.model else 0.0
        return float(-(self.c0 - shift) / self.c_w)

    def __iter__(self):
        return iter((self.c_w, self.c_df, self.c_i, self.residual_max))


_VARS = ("W", "dF", "I")


def _columns(points) -> dict:
    return {
        "W": np.array([p.w for p in points], dtype=float),
        "dF": np.array([p.df for p in points], dtype=float),
        "I": np.array([p.i for p in points], dtype=float),
    }


def _varies(x: np.ndarray) -> bool:
    return float(np.ptp(x)) > VARIATION_TOL * max(1.0, float(np.max(np.abs(x))))


def _centered_rank(cols: list[np.ndarray]) -> int:
    if not cols:
        return 0
    m = np.column_stack([c - c.mean() for c in cols])
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > VARIATION_TOL * max(1.0, float(s[0]))))


def _solve(names, cols, z, n, constants) -> HyperplaneFit:
    a = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(a, z, rcond=None)
    resid = z - a @ coef
    return HyperplaneFit(tuple(names), dict(zip(names, map(float, coef))), float(np.max(np.abs(resid))), n, constants)


def hyperplane_fit(points) -> HyperplaneFit:
    """z = c_W W + c_dF dF + c_I I without intercept.

    Every variable must vary across the points, otherwise its coefficient is
    not separable from the others and ``RankDeficient`` is raised.
    """
    if len(points) < 4:
        raise RankDeficient(f"hyperplane fit needs at least 4 points, got {len(points)}")
    cols = _columns(points)
    flat = [v for v in _VARS if not _varies(cols[v])]
    if flat or _centered_rank([cols[v] for v in _VARS]) < 3:
        raise RankDeficient(f"design does not span (W, dF, I); constant: {flat or 'none'}")
    z = np.array([p.logratio for p in points], dtype=float)
    return _solve(_VARS, [cols[v] for v in _VARS], z, len(points), {})


def hyperplane_fit_ladder(points) -> HyperplaneFit:
    """Full three-variable fit, falling back to fewer variables plus an intercept.

    Constant variables are dropped first; if the rest are still collinear the
    later variables (I, then dF) are dropped until the design has full rank.
    The fitted ``model`` records which terms were used.
    """
    try:
        return hyperplane_fit(points)
    except RankDeficient:
        pass
    cols = _columns(points)
    if not _varies(cols["W"]) or len(points) < 2:
        raise RankDeficient("W does not vary; no regression is possible")
    constants = {v: float(cols[v].mean()) for v in _VARS if not _varies(cols[v])}
    names = [v for v in _VARS if v not in constants]
    while _centered_rank([cols[v] for v in names]) < len(names):
        constants[names[-1]] = float(cols[names[-1]].mean())
        names.pop()
    if len(points) < len(names) + 1:
        raise RankDeficient(f"{len(points)} points cannot fix {len(names) + 1} coefficients")
    z = np.array([p.logratio for p in points], dtype=float)
    design = [cols[v] for v in names] + [np.ones(len(points))]
    return _solve(names + ["1"], design, z, len(points), constants)


@dataclass(frozen=True)
class Tolerances:
    info: float = 1e-6
    beta: float = 1e-6


@dataclass
class FitReport:
    beta_ref: float
    beta_hat: dict
    deltaF_hat: dict
    i_hat: dict
    hyperplane: dict
    residual_max: float
    checks: dict
    verdict: bool
    tolerances: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _key(k) -> str:
    return ",".join(str(x) for x in k) if isinstance(k, tuple) else str(k)


def consistency_report(
    beta_ref: float,
    wcm_fits: dict,
    mismatch_fits: dict,
    hyperplane: HyperplaneFit,
    info_from_probs: dict,
    tol: Tolerances = Tolerances(),
) -> FitReport:
    """Collect both estimation pathways and the hyperplane coefficient checks.

    Blue pathway: dF from the no-mismatch zero crossing, then I from the
    mismatch zero crossing. Red pathway: I from p(k, l) directly, then dF from
    the mismatch zero crossing.
    """
    beta_hat = {f"wcm:{_key(k)}": f.slope for k, f in sorted(wcm_fits.items())}
    beta_hat.update({f"mismatch:{_key(k)}": f.slope for k, f in sorted(mismatch_fits.items())})
    if hyperplane.c_w is not None:
        beta_hat["hyperplane"] = hyperplane.c_w

    df_blue = {k: f.zero_crossing for k, f in wcm_fits.items()}
    i_blue, df_red, i_red = {}, {}, {}
    for (k, l), f in sorted(mismatch_fits.items()):
        if k in df_blue:
            i_blue[(k, l)] = extract_information(f.zero_crossing, f.slope, df_blue[k])
        if (k, l) in info_from_probs:
            i_red[(k, l)] = float(info_from_probs[(k, l)])
            df_red.setdefault(k, []).append(f.zero_crossing + i_red[(k, l)] / f.slope)
    df_red = {k: float(np.mean(v)) for k, v in df_red.items()}

    checks = {}
    if hyperplane.c_i is not None:
        checks["c_I"] = abs(hyperplane.c_i - 1.0) <= tol.info
    if hyperplane.c_w is not None:
        checks["c_W"] = abs(hyperplane.c_w - beta_ref) / beta_ref <= tol.beta
    if hyperplane.c_df is not None:
        checks["c_dF"] = abs(hyperplane.c_df + beta_ref) / beta_ref <= tol.beta
    common_i = sorted(set(i_blue) & set(i_red))
    common_df = sorted(set(df_blue) & set(df_red))
    dev_i = max((abs(i_blue[k] - i_red[k]) for k in common_i), default=0.0)
    dev_df = max((abs(df_blue[k] - df_red[k]) for k in common_df), default=0.0)
    pathway_dev = max(dev_i, dev_df)

    return FitReport(
        beta_ref=float(beta_ref),
        beta_hat=beta_hat,
        deltaF_hat={
            "blue": {_key(k): v for k, v in sorted(df_blue.items())},
            "red": {_key(k): v for k, v in sorted(df_red.items())},
            "hyperplane_intercept": hyperplane.deltaF_hat,
        },
        i_hat={
            "blue": {_key(k): v for k, v in sorted(i_blue.items())},
            "red": {_key(k): v for k, v in sorted(i_red.items())},
        },
        hyperplane={
            "model": list(hyperplane.model),
            "coefficients": dict(hyperplane.coefficients),
            "constants": dict(hyperplane.constants),
            "n_points": hyperplane.n_points,
        },
        residual_max=hyperplane.residual_max,
        checks={**checks, "pathway_deviation": pathway_dev},
        verdict=bool(checks) and all(checks.values()),
        tolerances={"info": tol.info, "beta": tol.beta},
    )


RATIO_COLUMNS = ("m", "k", "l", "n", "W", "dF", "I", "logratio")


def ratio_points_to_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RATIO_COLUMNS)
    for p in points:
        w.writerow([*p.labels, repr(float(p.w)), repr(float(p.df)), repr(float(p.i)), repr(float(p.logratio))])
    return buf.getvalue()
