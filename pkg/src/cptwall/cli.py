"""Command-line runner.

Subcommands
-----------
sweep          line shape on the configured grid (analytic, Monte Carlo or both)
fig5           the six resonance-shape panels for five elastic probabilities
compare        analytic vs Monte Carlo at a few detunings
distributions  exact vs fitted duration densities

Every run writes a CSV (17 significant digits, ``\\n`` line ends) and a JSON
sidecar ``<csv>.json`` with all parameters, quadrature settings, seed and code
version. Exit status is 0 only when all requested files were written.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .averaging import sweep
from .config import ConfigError, RunConfig, describe_keys, parse_config, serialize, with_overrides
from .core import PhysicalParams
from .distributions import (F_prime, F_prime_approx, F_tau, f_t_approx, f_t_exact, geometry,
                            DARK_CHORD_FIT, PI32)
from .montecarlo import estimate_rho33
from .structure import analysis_grid, report_structure

FIG5_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)
# panel -> (beam radius m, Rabi frequency 1/s); b repeats a on a zoomed grid
FIG5_PANELS = {
    "a": (1.5e-3, 7.7e5),
    "b": (1.5e-3, 7.7e5),
    "c": (0.5e-3, 1.46e7),
    "d": (0.5e-3, 7.3e5),
    "e": (5e-3, 3.3e5),
    "f": (5e-3, 1.46e6),
}
FIG5_SPAN = 2 * math.pi * 5e4
FIG5_ZOOM_SPAN = 2 * math.pi * 5e3


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_csv(path, header, columns):
    """Write equal-length columns; values use 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = zip(*columns)
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path):
    """Inverse of :func:`write_csv`: ``(header, dict of float arrays)``."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().rstrip("\n").split(",")
        data = np.array([[float(v) for v in ln.rstrip("\n").split(",")] for ln in fh if ln.strip()])
    data = data.reshape(-1, len(header))
    return header, {h: data[:, i] for i, h in enumerate(header)}


def _write_meta(path, meta):
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _base_meta(cfg: RunConfig, command):
    return {
        "command": command,
        "code_version": __version__,
        "params": asdict(cfg.params),
        "quadrature_order": cfg.quadrature_order,
        "velocity_rule": cfg.velocity_rule,
        "mode": cfg.mode,
        "mc": asdict(cfg.mc),
        "config": serialize(cfg),
    }


def _mc_column(cfg: RunConfig, omegas, workers):
    mean, se = [], []
    for om in omegas:
        est = estimate_rho33(cfg.params, float(om), cfg.mc, workers=workers)
        mean.append(est.mean)
        se.append(est.std_error)
    return np.array(mean), np.array(se)


def compare_summary(analytic, mc, stderr) -> dict:
    z = np.abs(np.asarray(analytic) - np.asarray(mc)) / np.asarray(stderr)
    return {"max_abs_z": float(np.max(z)), "mean_abs_z": float(np.mean(z)),
            "points_within_3se": int(np.sum(z <= 3)), "points": int(len(z))}


def run(cfg: RunConfig, omegas=None, workers: int = 1, command="sweep") -> dict:
    """Compute the configured spectrum and write CSV + sidecar. Returns the
    metadata written to the sidecar."""
    omegas = cfg.grid() if omegas is None else np.asarray(omegas, dtype=float)
    header, cols = ["omega_rad_s"], [omegas]
    meta = _base_meta(cfg, command)
    meta["omega_points"] = len(omegas)
    meta["omega_span"] = float(np.max(np.abs(omegas)))
    analytic = None
    if cfg.mode in ("analytic", "both"):
        spec = sweep(cfg.params, omegas, cfg.quadrature_order, cfg.velocity_rule, workers)
        analytic = spec.rho33
        header.append("rho33_analytic")
        cols.append(analytic)
        meta["velocity_nodes"] = spec.meta["velocity_nodes"]
        meta["fallback_nodes"] = spec.meta["fallback_nodes"]
    if cfg.mode in ("mc", "both"):
        mc_mean, mc_se = _mc_column(cfg, omegas, workers)
        header += ["rho33_mc", "mc_stderr"]
        cols += [mc_mean, mc_se]
        meta["mc_resolved"] = asdict(cfg.mc.resolved(cfg.params))
        if analytic is not None:
            meta["comparison"] = compare_summary(analytic, mc_mean, mc_se)
    write_csv(cfg.output_path, header, cols)
    _write_meta(str(cfg.output_path) + ".json", meta)
    return meta


# --------------------------------------------------------------------------- fig5


def fig5_params(panel: str, alpha: float, base: PhysicalParams = PhysicalParams()) -> PhysicalParams:
    r, V = FIG5_PANELS[panel]
    return base.with_(beam_radius=r, rabi_1=V, rabi_2=V, elastic_prob=alpha)


def fig5_grid(panel: str, points: int = 401) -> np.ndarray:
    """Zoomed linear grid for panel b, centre-refined symmetric grid otherwise."""
    if panel == "b":
        return np.linspace(-FIG5_ZOOM_SPAN, FIG5_ZOOM_SPAN, points | 1)
    return analysis_grid(FIG5_SPAN, points)


def fig5_panel(panel: str, order: int, rule: str = "doppler", points: int = 401,
               workers: int = 1, base: PhysicalParams = PhysicalParams()):
    """Spectra for every alpha of one panel plus their structure reports.

    The alpha = 0 spectrum is the reference for the other four (see
    :func:`report_structure`). Panel b shares panel a's parameters and is
    only a zoom, so it gets no structure report.
    """
    omegas = fig5_grid(panel, points)
    spectra = {a: sweep(fig5_params(panel, a, base), omegas, order, rule, workers) for a in FIG5_ALPHAS}
    reports = {}
    if panel != "b":
        ref = spectra[0.0]
        reports = {a: report_structure(s, ref) for a, s in spectra.items()}
    return omegas, spectra, reports


def _fig5(cfg: RunConfig, outdir: Path, points: int, workers: int):
    summary = {"code_version": __version__, "quadrature_order": cfg.quadrature_order,
               "velocity_rule": cfg.velocity_rule, "points": points, "panels": {}}
    for panel in FIG5_PANELS:
        omegas, spectra, reports = fig5_panel(panel, cfg.quadrature_order, cfg.velocity_rule,
                                              points, workers, cfg.params)
        header = ["omega_rad_s"] + [f"rho33_alpha_{a:g}" for a in FIG5_ALPHAS]
        path = outdir / f"fig5_{panel}.csv"
        write_csv(path, header, [omegas] + [spectra[a].rho33 for a in FIG5_ALPHAS])
        at0 = [float(np.interp(0.0, omegas, spectra[a].rho33)) for a in FIG5_ALPHAS]
        r, V = FIG5_PANELS[panel]
        entry = {"beam_radius": r, "rabi": V, "csv": path.name, "rho33_at_zero": at0,
                 "decreasing_in_alpha": bool(np.all(np.diff(at0) < 0))}
        if reports:
            entry["structure"] = {f"{a:g}": reports[a].as_dict() for a in FIG5_ALPHAS}
        summary["panels"][panel] = entry
        print(f"panel {panel}: r = {r:g} m, V = {V:g} 1/s -> {path}")
    _write_meta(outdir / "fig5_summary.json", summary)
    return summary


# --------------------------------------------------------------------------- distributions


def _distributions(cfg: RunConfig, outdir: Path, points: int):
    p = cfg.params
    geo = geometry(p)
    x = np.linspace(0.0, 10.0, points)
    t = x * p.beam_radius / geo.v_T
    write_csv(outdir / "dwell_time.csv",
              ["x", "t_s", "f_t_exact", "f_t_approx", "F_tau_exact", "F_tau_approx"],
              [x, t, f_t_exact(t, p) * p.beam_radius / geo.v_T, f_t_approx(x),
               F_tau(t, p), 1 - f_t_approx(x) / f_t_approx(0.0)])
    files = ["dwell_time.csv"]
    if geo.ell_perp > 0:
        y = np.linspace(0.0, 10.0, points)
        tp = y * geo.ell_perp / geo.v_T
        write_csv(outdir / "dark_chord.csv", ["y", "tau_prime_s", "F_prime_exact", "F_prime_approx"],
                  [y, tp, F_prime(tp, p), F_prime_approx(y, DARK_CHORD_FIT)])
        files.append("dark_chord.csv")
    meta = _base_meta(cfg, "distributions")
    meta.update(files=files, geometry=asdict(geo), pi_three_halves=PI32)
    _write_meta(outdir / "distributions.json", meta)
    for f in files:
        print(outdir / f)


# --------------------------------------------------------------------------- entry point


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value parameter file")
    common.add_argument("--output", help="CSV path (sweep/compare) or directory (fig5/distributions)")
    common.add_argument("--mode", choices=["analytic", "mc", "both"])
    common.add_argument("--alpha", type=float, help="elastic wall-collision probability override")
    common.add_argument("--seed", type=int, help="Monte Carlo seed override")
    common.add_argument("--atoms", type=int, help="Monte Carlo trajectories override")
    common.add_argument("--quad", type=int, help="velocity quadrature points per panel")
    common.add_argument("--workers", type=int, default=1, help="worker processes")

    ap = argparse.ArgumentParser(prog="cptwall", description=__doc__.split("\n\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter,
                                 epilog="config keys:\n" + describe_keys())
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="line shape on the configured grid")
    f5 = sub.add_parser("fig5", parents=[common], help="six panels x five alphas")
    f5.add_argument("--points", type=int, default=401)
    cmp_ = sub.add_parser("compare", parents=[common], help="analytic vs Monte Carlo")
    cmp_.add_argument("--omegas", type=float, nargs="+",
                      default=[0.0, 2 * math.pi * 200, -2 * math.pi * 200,
                               2 * math.pi * 1e4, -2 * math.pi * 1e4],
                      help="Raman detunings in rad/s")
    ds = sub.add_parser("distributions", parents=[common], help="duration density tables")
    ds.add_argument("--points", type=int, default=201)
    return ap


def _load(args) -> RunConfig:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    cfg = parse_config(text)
    return with_overrides(cfg, alpha=args.alpha, seed=args.seed, atoms=args.atoms, quad=args.quad,
                          mode=args.mode, output=args.output if args.command in ("sweep", "compare") else None)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "sweep":
            meta = run(cfg, workers=args.workers)
            print(cfg.output_path)
            if "comparison" in meta:
                print(json.dumps(meta["comparison"]))
        elif args.command == "compare":
            cfg = replace(cfg, mode="both")
            if args.output is None:
                cfg = replace(cfg, output_path="compare.csv")
            meta = run(cfg, omegas=np.sort(np.asarray(args.omegas)), workers=args.workers,
                       command="compare")
            print(cfg.output_path)
            print(json.dumps(meta["comparison"]))
        elif args.command == "fig5":
            _fig5(cfg, Path(args.output or "fig5"), args.points, args.workers)
        else:
            _distributions(cfg, Path(args.output or "distributions"), args.points)
    except ConfigError as exc:
        print(f"cptwall: config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        print(f"cptwall: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
