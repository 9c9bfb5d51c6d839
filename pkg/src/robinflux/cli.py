"""``robinflux`` command line: domain generation, theorem checks, flux sweeps, reports.

Exit codes: 0 when every check passes, 1 on infrastructure errors (bad
configuration, I/O, solver breakdown), 2 when a theorem check fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .flux import (
    DAHLBERG_C,
    EmptyIntermediateRange,
    InsufficientSpan,
    entropy_comparison,
    flux_curve,
    lung_from_field,
    phase_transition_report,
)
from .geometry import (
    build_ball_domain,
    build_prefractal_domain,
    build_shell_domain,
    save_domain,
    surface_measure,
    verify_mixed_dimension,
)
from .green import (
    REGIME_COLUMNS,
    WrongRegime,
    ball_oracle_green,
    check_dirichlet_regime,
    check_neumann_regime,
    monotonicity_check,
    robin_green,
)
from .measure import (
    ainfty_diagnostic,
    boundary_comparison_check,
    bourgain_check,
    change_of_pole_check,
    deep_poles,
    dirichlet_measure_vector,
    doubling_check,
    greenhm_equiv_check,
    robin_harmonic_measure,
    smoothing_check,
)
from .reporting import OutputDir, json_text, loglog_svg, sha256_file
from .solve import SolverConfig

logger = logging.getLogger("robinflux")

EXIT_OK, EXIT_INFRA, EXIT_CHECK = 0, 1, 2

FLUX_COLUMNS = ["a", "F", "F_inf_minus_F", "J", "regime"]
HM_COLUMNS = {
    "bourgain": ["face", "r", "pole", "omega", "bound", "ratio", "pass"],
    "greenhm_equiv": ["Qx", "Qy", "Qz", "r", "pole", "corkscrew", "index", "omega", "green", "ratio",
                      "pass", "branch"],
    "change_of_pole": ["face", "r", "X", "Y", "ratio", "pass"],
    "boundary_comparison": ["face", "r", "cell", "u", "v", "ratio", "pass"],
    "smoothing": ["face", "r_P", "a_r_P", "pole", "density", "dirichlet_average", "ratio", "pass"],
    "doubling": ["a", "face", "r", "pole", "ratio", "clipped", "pass"],
    "ainfty": ["a", "face", "r", "pole", "sigma_ratio", "omega_ratio", "pass"],
}


# -- shared helpers ---------------------------------------------------------------------


def build_domain(spec):
    kind, n = spec["kind"], spec["n"]
    if kind == "ball":
        domain = build_ball_domain(spec["R"], spec["h"], n)
    elif kind == "shell":
        domain = build_shell_domain(spec["R"], spec["R_in"], spec["h"], n)
    else:
        ell = spec["L"] * 3.0 ** (-spec["depth"])
        h = spec["h"] if spec["h"] is not None else spec["h_over_ell"] * ell
        domain = build_prefractal_domain(spec["L"], spec["depth"], h, n)
    return domain, surface_measure(domain, spec["corrected_measure"])


def solver_config(cfg):
    s = cfg["solver"]
    return SolverConfig(rel_tol=s["rel_tol"], max_iter=s["max_iter"], preconditioner=s["preconditioner"])


def a_grid(cfg):
    g = cfg["a_grid"]
    if g["values"] is not None:
        return sorted(g["values"])
    return list(np.geomspace(g["min"], g["max"], g["count"]))


class LungCache:
    """On-disk cache of lung fields keyed by domain hash and Robin parameter."""

    def __init__(self, root, domain, sigma):
        self.domain, self.sigma = domain, sigma
        self.dir = Path(root) / "cache" / domain.content_hash()[:16]
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0

    def _path(self, a):
        return self.dir / f"lung_{float(a).hex()}.npy"

    def get(self, a):
        path = self._path(a)
        if not path.exists():
            return None
        self.hits += 1
        return lung_from_field(self.domain, self.sigma, a, np.load(path))

    def put(self, a, sol):
        tmp = self._path(a).with_suffix(".tmp.npy")
        np.save(tmp, sol.field)
        os.replace(tmp, self._path(a))


def _status(ok):
    return "pass" if ok else "fail"


def _manifest(args, cfg, out, reports, checks, t0):
    return {
        "tool": "robinflux", "version": __version__, "command": args.command,
        "config": cfg, "reports": reports, "checks": checks,
        "passed": all(v == "pass" for v in checks.values() if v != "skipped"),
        "wall_time": time.perf_counter() - t0,
        "artifacts": out.hashes(),
    }


# -- commands -----------------------------------------------------------------------------


def cmd_gen_domain(args, cfg, out):
    domain, sigma = build_domain(cfg["domain"])
    save_domain(domain, out.staged("domain.json").with_suffix(""))
    out.staged("domain.mask")
    n_samples = max(16, cfg["measure"]["samples"])
    geo = verify_mixed_dimension(domain, sigma, sample_count=n_samples, seed=cfg["seed"])
    report = {"domain": repr(domain), "hash": domain.content_hash(), "n_cells": domain.n_cells,
              "n_faces": domain.n_faces, "diam": domain.diam, "sigma_total": sigma.total,
              "metadata": domain.metadata, "mixed_dimension": geo.to_dict()}
    out.write_json("geometry.json", report)
    checks = {}
    if domain.metadata.get("kind") == "prefractal" and domain.metadata.get("depth", 0) >= 1:
        checks["mixed_dimension"] = _status(domain.dim - 2 < geo.fitted_d < domain.dim)
    return {"geometry": report}, checks


def _regime_for(domain, sigma, a, forced):
    natural = "neumann" if a * sigma.total <= domain.diam ** (domain.dim - 2) else "dirichlet"
    return natural if forced in (None, "auto") else forced


def cmd_green_checks(args, cfg, out):
    domain, sigma = build_domain(cfg["domain"])
    g, acc, sc = cfg["green"], cfg["accept"], solver_config(cfg)
    C = args.accept_const or acc["C_green"]
    pole = np.asarray(g["pole"][:domain.dim], dtype=float)
    reports, checks, certs = {}, {}, []

    if domain.metadata.get("kind") == "ball" and domain.dim == 3:
        R = domain.metadata["R"]
        rows = []
        for a in g["oracle_a"]:
            field = robin_green(domain, sigma, a, pole, sc)
            certs.append(field.flux_certificate)
            for r in g["oracle_radii"]:
                X = np.zeros(domain.dim)
                X[0] = r
                num = field(domain.locate(X))
                ref = ball_oracle_green(domain.dim, R, a, r)
                err = abs(num - ref) / ref
                rows.append({"a": a, "radius": r, "numeric": num, "oracle": ref, "rel_error": err,
                             "pass": err <= acc["oracle_tol"]})
        out.write_csv("green_oracle.csv", rows)
        checks["oracle"] = _status(all(r["pass"] for r in rows))
        reports["oracle"] = {"max_rel_error": max(r["rel_error"] for r in rows), "tol": acc["oracle_tol"]}

    a = g["a"]
    mono_a = g["monotone_a"] or [a / 10, a, a * 10]
    mono = monotonicity_check(domain, sigma, pole, mono_a, sc)
    certs += mono.flux_certificates
    reports["monotonicity"] = mono.to_dict()
    checks["monotonicity"] = _status(mono.passed)

    regime = _regime_for(domain, sigma, a, args.regime or g["regime"])
    if regime == "neumann":
        rep = check_neumann_regime(domain, sigma, a, pole, g["samples"], C, cfg["seed"], sc)
    else:
        rep = check_dirichlet_regime(domain, sigma, a, max(4, g["samples"] // 4), C, cfg["seed"], config=sc)
    certs += rep.certificates
    out.write_csv("green_regime.csv", rep.rows, REGIME_COLUMNS)
    reports["regime"] = rep.to_dict()
    checks[f"regime_{regime}"] = _status(rep.passed)

    gap = max(abs(c - 1) for c in certs)
    reports["flux_certificates"] = {"count": len(certs), "max_gap": gap, "tol": acc["certificate_tol"]}
    checks["flux_certificate"] = _status(gap <= acc["certificate_tol"])
    out.write_json("green_checks.json", reports)
    return reports, checks


def _measure_a_values(cfg, sigma):
    m = cfg["measure"]
    if m["a_values"] is not None:
        return sorted(m["a_values"])
    return [k / sigma.total for k in m["a_sigma_multiples"]]


def cmd_hm_checks(args, cfg, out):
    domain, sigma = build_domain(cfg["domain"])
    m, acc, sc, seed = cfg["measure"], cfg["accept"], solver_config(cfg), cfg["seed"]
    C = args.accept_const or acc["C_measure"]
    M = args.accept_const or acc["M_bourgain"]
    frac = acc["pass_fraction"]
    a_values = _measure_a_values(cfg, sigma)
    selected = set(m["checks"])
    reports, checks = {}, {}

    def record(name, rep):
        out.write_csv(f"hm_{name}.csv", rep.rows, HM_COLUMNS[rep.name])
        reports[name] = rep.to_dict()
        checks[name] = rep.status

    if "mass" in selected:
        rng = np.random.default_rng(seed)
        poles = deep_poles(domain, m["mass_poles"], rng)
        rows = []
        for a in a_values:
            for p in poles:
                w = robin_harmonic_measure(domain, sigma, a, p, sc)
                mass = w.mass * (1 + 1e-3) if args.inject_fault == "mass" else w.mass
                rows.append({"kind": "robin", "a": a, "pole": p, "mass": mass,
                             "pass": abs(mass - 1) <= acc["mass_tol"]})
        for p in poles[:2]:
            w = dirichlet_measure_vector(domain, p, sigma, sc)
            mass = w.mass * (1 + 1e-3) if args.inject_fault == "mass" else w.mass
            rows.append({"kind": "dirichlet", "a": math.inf, "pole": p, "mass": mass,
                         "pass": abs(mass - 1) <= acc["mass_tol"]})
        out.write_csv("hm_mass.csv", rows)
        reports["mass"] = {"max_gap": max(abs(r["mass"] - 1) for r in rows), "tol": acc["mass_tol"]}
        checks["mass"] = _status(all(r["pass"] for r in rows))

    n = m["samples"]
    for k, a in enumerate(a_values):
        tag = f"a{k}"
        if "bourgain" in selected:
            record(f"bourgain_{tag}", bourgain_check(domain, sigma, a, n, M, seed, sc, frac))
        if "greenhm_equiv" in selected:
            record(f"greenhm_equiv_{tag}", greenhm_equiv_check(domain, sigma, a, n, C, seed=seed, config=sc,
                                                              min_pass_fraction=frac))
        if "change_of_pole" in selected:
            record(f"change_of_pole_{tag}", change_of_pole_check(domain, sigma, a, max(4, n // 2), C,
                                                                seed=seed, config=sc, min_pass_fraction=frac))
        if "boundary_comparison" in selected:
            record(f"boundary_comparison_{tag}", boundary_comparison_check(
                domain, sigma, a, max(4, n // 2), C, seed=seed, config=sc, min_pass_fraction=frac))
        if "smoothing" in selected:
            record(f"smoothing_{tag}", smoothing_check(domain, sigma, a, max(4, n // 2), C, seed=seed,
                                                       config=sc, min_pass_fraction=frac))
    if "doubling" in selected:
        record("doubling", doubling_check(domain, sigma, a_values, n, C, seed=seed, config=sc,
                                          spread_limit=acc["doubling_spread"]))
    if "ainfty" in selected:
        record("ainfty", ainfty_diagnostic(domain, sigma, a_values, 2 * n, acc["theta_min"],
                                           seed=seed, config=sc))
    reports["a_values"] = a_values
    out.write_json("hm_checks.json", reports)
    return reports, checks


def cmd_flux(args, cfg, out):
    domain, sigma = build_domain(cfg["domain"])
    acc, sc = cfg["accept"], solver_config(cfg)
    cache = LungCache(args.out, domain, sigma) if args.resume else None
    curve = flux_curve(domain, sigma, a_grid(cfg), sc, jobs=args.jobs, cache=cache)
    out.write_csv("flux_curve.csv", list(curve.rows()), FLUX_COLUMNS)
    details = [{"a": float(a), "F": float(F), "direct_difference": float(d), "magic_difference": float(mg),
                "derivative": float(dv)}
               for a, F, d, mg, dv in zip(curve.a, curve.F, curve.direct_difference,
                                          curve.F_inf_minus_F, curve.derivative)]
    out.write_csv("flux_details.csv", details)

    reports, checks = {}, {}
    reports["curve"] = {"points": len(curve.a), "f_infinity": curve.f_infinity,
                        "f_infinity_ring": curve.f_infinity_ring, "sigma_total": curve.sigma_total,
                        "ell": curve.ell, "span_ok": curve.span_ok,
                        "monotonicity_violations": curve.monotonicity_violations,
                        "cache_hits": cache.hits if cache else 0}
    checks["strictly_increasing"] = _status(curve.monotonicity_violations == 0)
    checks["bounded_by_f_infinity"] = _status(bool(np.all(curve.F < curve.f_infinity)))
    checks["derivative_nonnegative"] = _status(bool(np.all(curve.derivative >= 0)))
    energy_gap = float(np.max(np.abs(curve.F - curve.J) / curve.F))
    reports["curve"]["energy_gap"] = energy_gap
    checks["energy_identity"] = _status(energy_gap <= acc["energy_tol"])
    magic_gap = float(np.max(np.abs(curve.F_inf_minus_F - curve.direct_difference) / curve.direct_difference))
    reports["curve"]["magic_gap"] = magic_gap
    checks["magic_relation"] = _status(magic_gap <= acc["magic_gap"])

    K = args.accept_const or acc["flux_ratio"]
    small = curve.a <= 1 / curve.sigma_total
    large = ~small
    neumann_ratio = curve.F[small] / (curve.a[small] * curve.sigma_total)
    plateau_ratio = curve.F[large] / curve.f_infinity
    checks["neumann_band"] = _status(bool(small.any() and np.all((neumann_ratio >= 1 / K) & (neumann_ratio <= K))))
    checks["plateau_band"] = _status(bool(large.any() and np.all((plateau_ratio >= 1 / K) & (plateau_ratio <= 1))))
    try:
        phase = phase_transition_report(curve)
        reports["phase"] = phase.to_dict()
        checks["neumann_slope"] = _status(abs(phase.neumann_slope - 1) <= acc["slope_tol_neumann"])
        checks["dahlberg_slope"] = _status(abs(phase.dahlberg_slope + 1) <= acc["slope_tol_dahlberg"])
    except InsufficientSpan as exc:
        reports["phase"] = {"error": str(exc)}
        checks["phase_span"] = "fail"
    out.write_json("phase_report.json", reports.get("phase", {}))

    if cfg["flux"]["entropy"]:
        try:
            ent = entropy_comparison(domain, sigma, count=cfg["flux"]["entropy_count"], seed=cfg["seed"],
                                     max_band=acc["entropy_band"], config=sc)
            reports["entropy"] = ent.to_dict()
            out.write_csv("entropy.csv", [
                {"a": a, "r_a": r, "entropy": S, "difference": d, "ratio": q, "index_fraction": f}
                for a, r, S, d, q, f in zip(ent.a, ent.r_a, ent.entropy, ent.difference, ent.ratio,
                                            ent.index_fraction)])
            checks["entropy_band"] = _status(ent.passed)
        except EmptyIntermediateRange as exc:
            reports["entropy"] = {"skipped": str(exc)}
            checks["entropy_band"] = "skipped"

    if cfg["flux"]["plot"]:
        markers = [("1/sigma", 1 / curve.sigma_total)]
        if curve.ell:
            markers.append((f"{DAHLBERG_C:g}/ell", DAHLBERG_C / curve.ell))
        out.write_text("flux.svg", loglog_svg(
            [("F(a)", curve.a, curve.F), ("F(inf) - F(a)", curve.a, curve.F_inf_minus_F)],
            markers, title="total flow", xlabel="a", ylabel="flux"))
    out.write_json("flux_report.json", reports)
    return reports, checks


def cmd_report(args, cfg, out):
    root = Path(args.out)
    manifests = sorted(root.glob("manifest_*.json"))
    if not manifests:
        raise FileNotFoundError(f"no manifests in {root}")
    summary, checks = {}, {}
    for path in manifests:
        man = json.loads(path.read_text())
        bad = [name for name, digest in man["artifacts"].items()
               if not (root / name).exists() or sha256_file(root / name) != digest]
        summary[man["command"]] = {"passed": man["passed"], "checks": man["checks"],
                                   "hash_mismatches": bad}
        for name, status in man["checks"].items():
            checks[f"{man['command']}.{name}"] = status
        checks[f"{man['command']}.artifacts"] = _status(not bad)
    out.write_json("summary.json", summary)
    return {"summary": summary}, checks


COMMANDS = {"gen-domain": cmd_gen_domain, "green-checks": cmd_green_checks,
            "hm-checks": cmd_hm_checks, "flux": cmd_flux, "report": cmd_report}


# -- entry point ----------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="robinflux", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"robinflux {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name != "report", help="JSON run configuration")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker threads (falls back to ROBINFLUX_JOBS, then the config)")
        p.add_argument("--accept-const", type=float, default=None,
                       help="override the theorem acceptance constant")
        p.add_argument("--resume", action="store_true", help="reuse cached lung solves")
        p.add_argument("--regime", choices=["auto", "neumann", "dirichlet"], default=None,
                       help="force the Green regime suite")
        p.add_argument("--inject-fault", choices=["mass"], default=None, help=argparse.SUPPRESS)
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _resolve_jobs(args, cfg):
    if args.jobs is not None:
        return args.jobs
    env = os.environ.get("ROBINFLUX_JOBS")
    if env:
        try:
            jobs = int(env)
        except ValueError:
            raise ConfigError(f"ROBINFLUX_JOBS={env!r} is not an integer") from None
        if jobs < 1:
            raise ConfigError("ROBINFLUX_JOBS must be at least 1")
        return jobs
    return cfg["jobs"]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    out = None
    try:
        if args.config is not None:
            cfg = load_config(args.config)
        else:
            cfg = {}
        if cfg:
            if args.seed is not None:
                cfg["seed"] = args.seed
            args.jobs = _resolve_jobs(args, cfg)
            cfg["jobs"] = args.jobs
        out = OutputDir(args.out)
        reports, checks = COMMANDS[args.command](args, cfg, out)
        name = f"manifest_{args.command.replace('-', '_')}.json"
        manifest = _manifest(args, cfg, out, reports, checks, t0)
        out.write_text(name, json_text(manifest))
        out.commit()
    except WrongRegime as exc:
        if out:
            out.discard()
        print(f"robinflux: wrong regime: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        if out:
            out.discard()
        print(f"robinflux: error: {exc}", file=sys.stderr)
        return EXIT_INFRA
    except Exception as exc:  # unexpected failures are infrastructure errors too
        if out:
            out.discard()
        logger.debug("unexpected failure", exc_info=True)
        print(f"robinflux: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFRA
    failed = [k for k, v in checks.items() if v == "fail"]
    for k, v in checks.items():
        print(f"{v.upper():7s} {k}")
    if failed:
        print(f"robinflux: {len(failed)} check(s) failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
