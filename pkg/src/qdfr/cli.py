"""Batch pipeline: protocol config in, characteristic functions, PDFs, fits and a report out.

Exit codes: 0 verdict true, 1 verdict false, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import circuits, oracle, proto, spectral, verify
from .errors import ConfigInvalid, MissingArtifact, NumericalError, ProtocolInvalid, QDFRError, ValidationError
from .oracle import Kind

SCHEMA_VERSION = 1
MODES = ("oracle", "circuits", "full")
FAMILIES = ("forward", "backward", "forward_wcm", "backward_wcm")
EQUIVALENCE_TOL = 1e-10
CONFIG_KEYS = {"protocol", "protocol_file", "gamma", "margin", "mode", "outdir", "tolerances", "chi_points", "plot_gamma"}


@dataclass
class RunConfig:
    protocol: proto.FeedbackProtocol
    gamma: float = 0.0
    margin: float = 0.25
    mode: str = "full"
    outdir: Path = Path("qdfr_out")
    tolerances: verify.Tolerances | None = None
    chi_points: int = 64
    plot_gamma: float = 0.05
    source: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ConfigInvalid(f"field 'gamma' must be a nonnegative number, got {self.gamma}")
        if self.margin < 0:
            raise ConfigInvalid(f"field 'margin' must be nonnegative, got {self.margin}")
        if self.mode not in MODES:
            raise ConfigInvalid(f"field 'mode' must be one of {MODES}, got {self.mode!r}")
        if self.chi_points < 2 or self.chi_points % 2:
            raise ConfigInvalid(f"field 'chi_points' must be an even integer >= 2, got {self.chi_points}")
        if not self.plot_gamma > 0:
            raise ConfigInvalid(f"field 'plot_gamma' must be positive, got {self.plot_gamma}")
        if self.tolerances is None:
            t = 1e-6 if self.gamma == 0 else 0.02
            self.tolerances = verify.Tolerances(info=t, beta=t)


def bundled_configs() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("qdfr.configs").iterdir() if p.name.endswith(".json"))


def _read_config_text(ref: str) -> tuple[str, Path]:
    if ref.startswith("bundled:"):
        name = ref.split(":", 1)[1]
        res = resources.files("qdfr.configs") / f"{name}.json"
        if not res.is_file():
            raise ConfigInvalid(f"no bundled config {name!r}; available: {bundled_configs()}")
        return res.read_text(), Path.cwd()
    path = Path(ref)
    if not path.is_file():
        raise ConfigInvalid(f"config file {ref} not found")
    return path.read_text(), path.parent


def parse_config(doc: dict, base: Path | None = None, source: str = "") -> RunConfig:
    """Validate a config document; every error names the offending field."""
    if not isinstance(doc, dict):
        raise ConfigInvalid("config must be a JSON object")
    unknown = set(doc) - CONFIG_KEYS - {"schema", "description"}
    if unknown:
        raise ConfigInvalid(f"unknown config fields {sorted(unknown)}")
    if "protocol" in doc:
        pdoc = doc["protocol"]
    elif "protocol_file" in doc:
        ppath = (base or Path.cwd()) / doc["protocol_file"]
        if not ppath.is_file():
            raise ConfigInvalid(f"field 'protocol_file': {ppath} not found")
        pdoc = json.loads(ppath.read_text())
    else:
        raise ConfigInvalid("missing field 'protocol' (or 'protocol_file')")
    if isinstance(pdoc, dict) and "beta" not in pdoc:
        raise ConfigInvalid("missing field 'protocol.beta'")
    try:
        p = proto.protocol_from_dict(pdoc)
    except ProtocolInvalid as exc:
        raise ConfigInvalid(f"field 'protocol': {exc}") from exc
    tol = doc.get("tolerances")
    tolerances = None
    if tol is not None:
        try:
            tolerances = verify.Tolerances(info=float(tol["info"]), beta=float(tol["beta"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid("field 'tolerances' must be {\"info\": x, \"beta\": y}") from exc
    try:
        return RunConfig(
            protocol=p,
            gamma=float(doc.get("gamma", 0.0)),
            margin=float(doc.get("margin", 0.25)),
            mode=str(doc.get("mode", "full")),
            outdir=Path(doc.get("outdir", "qdfr_out")),
            tolerances=tolerances,
            chi_points=int(doc.get("chi_points", 64)),
            plot_gamma=float(doc.get("plot_gamma", 0.05)),
            source=source,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, QDFRError):
            raise
        raise ConfigInvalid(f"malformed config value: {exc}") from exc


def load_config(ref: str, **overrides) -> RunConfig:
    text, base = _read_config_text(ref)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return parse_config(doc, base, ref)


# pipeline --------------------------------------------------------------------

@dataclass
class Artifacts:
    config: RunConfig
    grid: spectral.UGrid
    templates: dict
    chis: dict
    recovered: dict = field(default_factory=dict)
    pdfs: dict = field(default_factory=dict)
    wcm_points: dict = field(default_factory=dict)
    mismatch_points: dict = field(default_factory=dict)
    report: dict | None = None
    joint: dict = field(default_factory=dict)


def _templates(p, b) -> dict:
    fwd, bwd = oracle.joint_pdfs(p, b)
    out = {
        "forward": {kl: fwd.select(*kl) for kl in fwd.histories()},
        "backward": {kl: bwd.select(*kl) for kl in bwd.histories()},
        "forward_wcm": {},
        "backward_wcm": {},
    }
    if p.n_outcomes == p.n_branches:
        for k in range(p.n_branches):
            f, r = oracle.wcm_mixed_work_pdfs(p, b, k)
            out["forward_wcm"][k], out["backward_wcm"][k] = f, r
    return out


def _grid(cfg: RunConfig) -> spectral.UGrid:
    w_max = spectral.protocol_work_bound(cfg.protocol)
    if w_max <= 0:
        w_max = 1.0
    if cfg.gamma > 0:
        return spectral.plan_ugrid(w_max, cfg.gamma, cfg.margin)
    du = np.pi / (w_max * (1.0 + cfg.margin))
    return spectral.fixed_ugrid(cfg.chi_points * du / 2.0, cfg.chi_points)


def _sample(cfg: RunConfig, p, b, grid, templates) -> tuple[dict, float | None]:
    families = [f for f in FAMILIES if templates[f]]
    oracle_chis = {
        fam: {key: spectral.sample_chi(tpl, grid, key if isinstance(key, tuple) else (key, key), fam) for key, tpl in templates[fam].items()}
        for fam in families
    }
    if cfg.mode == "oracle":
        return oracle_chis, None
    circuit_chis = {fam: spectral.sample_circuit_set(p, b, grid, fam, templates[fam]) for fam in families}
    dev = None
    if cfg.mode == "full":
        dev = max(
            float(np.max(np.abs(circuit_chis[f][key].samples - oracle_chis[f][key].samples)))
            for f in families
            for key in oracle_chis[f]
        )
        if dev > EQUIVALENCE_TOL:
            raise NumericalError(f"circuit and oracle characteristic functions differ by {dev:.3g}")
    return circuit_chis, dev


_KINDS = {"forward": Kind.FORWARD, "backward": Kind.BACKWARD, "forward_wcm": Kind.FORWARD_WCM, "backward_wcm": Kind.BACKWARD_WCM}


def _reconstruct(cfg: RunConfig, art: Artifacts) -> None:
    for fam, chis in art.chis.items():
        art.recovered[fam] = spectral.recover_atoms(chis, cfg.gamma, art.templates[fam], _KINDS[fam])
    # curves for plotting: the measured ones when broadened, else drawn from recovered atoms
    if cfg.gamma > 0:
        for fam, chis in art.chis.items():
            art.pdfs[fam] = {key: spectral.reconstruct_pdf(c, cfg.gamma) for key, c in chis.items()}
        return
    w_max = max(spectral.protocol_work_bound(cfg.protocol), 1.0)
    plot_grid = spectral.plan_ugrid(w_max, cfg.plot_gamma, cfg.margin)
    for fam, rec in art.recovered.items():
        art.pdfs[fam] = {}
        for key in art.chis[fam]:
            sel = rec.select(*key) if isinstance(key, tuple) else rec.select(k=key)
            art.pdfs[fam][key] = spectral.reconstruct_pdf(spectral.sample_chi(sel, plot_grid, key), cfg.plot_gamma)


def _verify(cfg: RunConfig, art: Artifacts, circuit_dev) -> None:
    p = cfg.protocol
    rec = art.recovered
    wcm_fits = {}
    for k in sorted(art.chis.get("forward_wcm", {})):
        pts = verify.ratio_points(rec["forward_wcm"].select(k=k), rec["backward_wcm"].select(k=k))
        art.wcm_points[k] = pts
        wcm_fits[k] = verify.fit_line(pts)
    mm_fits = {}
    for kl in sorted(art.chis["forward"]):
        pts = verify.ratio_points(rec["forward"].select(*kl), rec["backward"].select(*kl))
        art.mismatch_points[kl] = pts
        if len(pts) >= 2:
            mm_fits[kl] = verify.fit_line(pts)
    all_pts = [pt for kl in sorted(art.mismatch_points) for pt in art.mismatch_points[kl]]
    hp = verify.hyperplane_fit_ladder(all_pts)
    if cfg.mode == "oracle":
        info = oracle.mutual_information_density(p)
        art.joint = {(k, l): float(v) for (k, l), v in np.ndenumerate(p.joint_probs())}
        info_probs = {(k, l): float(v) for (k, l), v in np.ndenumerate(info) if np.isfinite(v)}
    else:
        art.joint = circuits.run_joint_prob(p)
        info_probs = {k: v for k, v in circuits.information_from_joint(art.joint).items() if np.isfinite(v)}
    fit = verify.consistency_report(p.beta, wcm_fits, mm_fits, hp, info_probs, cfg.tolerances)
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "source": cfg.source,
            "mode": cfg.mode,
            "gamma": cfg.gamma,
            "margin": cfg.margin,
            "plot_gamma": cfg.plot_gamma,
        },
        "grid": {"n": art.grid.n, "u_max": art.grid.u_max, "du": art.grid.du},
        "reference": {
            "beta": p.beta,
            "deltaF": [float(x) for x in p.free_energies()],
            "information": {f"{k},{l}": v for (k, l), v in sorted(info_probs.items())},
            "p_kl": {f"{k},{l}": v for (k, l), v in sorted(art.joint.items())},
        },
        "circuit_oracle_max_dev": circuit_dev,
        "line_fits": {
            "wcm": {str(k): _line(f) for k, f in sorted(wcm_fits.items())},
            "mismatch": {f"{k},{l}": _line(f) for (k, l), f in sorted(mm_fits.items())},
        },
        "fit": fit.to_dict(),
        "verdict": fit.verdict,
    }
    art.report = report


def _line(f: verify.LineFit) -> dict:
    return {"slope": f.slope, "intercept": f.intercept, "zero_crossing": f.zero_crossing, "residual_max": f.residual_max}


def run_pipeline(cfg: RunConfig, stages: str = "verify", write: bool = True) -> Artifacts:
    """Run up to ``stages`` in ('chi', 'reconstruct', 'verify') and write the artifacts."""
    p = cfg.protocol
    b = proto.build_backward(p)
    grid = _grid(cfg)
    templates = _templates(p, b)
    chis, dev = _sample(cfg, p, b, grid, templates)
    art = Artifacts(cfg, grid, templates, chis)
    if stages in ("reconstruct", "verify"):
        _reconstruct(cfg, art)
    if stages == "verify":
        _verify(cfg, art, dev)
    if write:
        write_artifacts(art)
    return art


def write_artifacts(art: Artifacts) -> None:
    out = Path(art.config.outdir)
    out.mkdir(parents=True, exist_ok=True)
    u = art.grid.values
    for fam, chis in art.chis.items():
        (out / f"chi_{fam}.csv").write_text(circuits.chi_to_csv(u, {k: c.samples for k, c in chis.items()}))
    for fam, pdfs in art.pdfs.items():
        (out / f"pdf_{fam}.csv").write_text(spectral.pdf_to_csv(pdfs))
    for fam, rec in art.recovered.items():
        (out / f"atoms_{fam}.csv").write_text(oracle.atoms_to_csv(rec))
    if art.report is not None:
        if art.wcm_points:
            (out / "ratio_wcm.csv").write_text(verify.ratio_points_to_csv([pt for k in sorted(art.wcm_points) for pt in art.wcm_points[k]]))
        (out / "ratio_mismatch.csv").write_text(
            verify.ratio_points_to_csv([pt for kl in sorted(art.mismatch_points) for pt in art.mismatch_points[kl]])
        )
        (out / "report.json").write_text(json.dumps(art.report, indent=2) + "\n")


# plot data -------------------------------------------------------------------

def _read_csv(path: Path) -> list[dict]:
    if not path.is_file():
        raise MissingArtifact(f"{path.name} not found in {path.parent}")
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _write_rows(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_plot_data(outdir) -> list[Path]:
    """Figure-ready CSVs built from the artifacts written by ``run_pipeline``."""
    out = Path(outdir)
    report_path = out / "report.json"
    if not report_path.is_file():
        raise MissingArtifact(f"report.json not found in {out}")
    report = json.loads(report_path.read_text())
    written = []

    wcm = _read_csv(out / "ratio_wcm.csv")
    lines = report["line_fits"]["wcm"]
    rows = []
    for r in wcm:
        f = lines[r["k"]]
        w = float(r["W"])
        rows.append([r["k"], r["W"], r["logratio"], _fmt(f["slope"] * w + f["intercept"])])
    _write_rows(out / "fig8_wcm_ratio.csv", ["k", "W", "logratio", "fit"], rows)
    written.append(out / "fig8_wcm_ratio.csv")

    pdf_rows = _read_csv(out / "pdf_forward.csv")
    keys = sorted({(int(r["k"]), int(r["l"])) for r in pdf_rows})
    by_key = {key: [r for r in pdf_rows if (int(r["k"]), int(r["l"])) == key] for key in keys}
    ws = [r["W"] for r in by_key[keys[0]]]
    header = ["W"] + [f"P_F_k{k}_l{l}" for k, l in keys]
    _write_rows(out / "fig9_mixed_pdf.csv", header, [[w] + [by_key[key][j]["value"] for key in keys] for j, w in enumerate(ws)])
    written.append(out / "fig9_mixed_pdf.csv")

    mm = _read_csv(out / "ratio_mismatch.csv")
    mlines = report["line_fits"]["mismatch"]
    rows = []
    for r in mm:
        f = mlines.get(f"{r['k']},{r['l']}")
        fit = _fmt(f["slope"] * float(r["W"]) + f["intercept"]) if f else ""
        rows.append([r["k"], r["l"], r["W"], r["logratio"], fit])
    _write_rows(out / "fig10_mismatch_ratio.csv", ["k", "l", "W", "logratio", "fit"], rows)
    written.append(out / "fig10_mismatch_ratio.csv")

    back_rows = _read_csv(out / "pdf_backward.csv")
    fwd_total = np.zeros(len(ws))
    bwd_total = np.zeros(len(ws))
    for key in keys:
        fwd_total += np.array([float(r["value"]) for r in by_key[key]])
    for key in sorted({(int(r["k"]), int(r["l"])) for r in back_rows}):
        vals = [float(r["value"]) for r in back_rows if (int(r["k"]), int(r["l"])) == key]
        bwd_total += np.array(vals)
    _write_rows(
        out / "fig11_work_pdfs.csv",
        ["W", "P_F", "P_B"],
        [[w, _fmt(a), _fmt(b)] for w, a, b in zip(ws, fwd_total, bwd_total)],
    )
    written.append(out / "fig11_work_pdfs.csv")

    hp = report["fit"]["hyperplane"]
    coef = hp["coefficients"]
    rows = []
    for r in mm:
        vals = {"W": float(r["W"]), "dF": float(r["dF"]), "I": float(r["I"]), "1": 1.0}
        pred = sum(c * vals[name] for name, c in coef.items())
        rows.append([r["k"], r["l"], r["W"], r["dF"], r["I"], r["logratio"], _fmt(pred)])
    _write_rows(out / "fig12_hyperplane.csv", ["k", "l", "W", "dF", "I", "logratio", "fit"], rows)
    written.append(out / "fig12_hyperplane.csv")
    return written


# command line ----------------------------------------------------------------

def _oracle_summary(cfg: RunConfig) -> dict:
    p = cfg.protocol
    b = proto.build_backward(p)
    fwd, bwd = oracle.joint_pdfs(p, b)
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "atoms_forward.csv").write_text(oracle.atoms_to_csv(fwd))
    (out / "atoms_backward.csv").write_text(oracle.atoms_to_csv(bwd))
    info = oracle.mutual_information_density(p)
    return {
        "schema_version": SCHEMA_VERSION,
        "p_l": [float(x) for x in p.outcome_probs()],
        "p_k": [float(x) for x in p.branch_probs()],
        "deltaF": [float(x) for x in p.free_energies()],
        "information": {f"{k},{l}": float(v) for (k, l), v in np.ndenumerate(info)},
        "qdfr_max_rel_dev": oracle.qdfr_atom_check(fwd, bwd, p.beta).max_rel_dev,
        "total_forward": fwd.total,
        "total_backward": bwd.total,
    }


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qdfr", description="Feedback fluctuation-relation workbench")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (
        ("oracle", "exact two-point-measurement atoms and summary"),
        ("chi", "sample the characteristic functions"),
        ("reconstruct", "sample and reconstruct the work PDFs"),
        ("verify", "full analysis with report.json"),
        ("pipeline", "full analysis plus figure data"),
    ):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="config JSON path, or bundled:<name>")
        sp.add_argument("--gamma", type=float, default=None, help="Lorentzian half-width, 0 for exact atoms")
        sp.add_argument("--outdir", default=None)
        sp.add_argument("--mode", choices=MODES, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, gamma=args.gamma, outdir=args.outdir, mode=args.mode)
        if args.command == "oracle":
            print(json.dumps(_oracle_summary(cfg), indent=2))
            return 0
        stage = {"chi": "chi", "reconstruct": "reconstruct"}.get(args.command, "verify")
        art = run_pipeline(cfg, stage)
        if args.command == "pipeline":
            emit_plot_data(cfg.outdir)
        if art.report is None:
            return 0
        fit = art.report["fit"]
        print(json.dumps({"verdict": fit["verdict"], "checks": fit["checks"], "hyperplane": fit["hyperplane"]}, indent=2))
        return 0 if art.report["verdict"] else 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
