"""Command-line orchestration: forward solves, illumination construction,
CGO studies, symbol checks, inversion and the deterministic pipeline.

Exit codes: 1 configuration error, 2 solver failure, 3 Faddeev resonance,
4 outer-iteration divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as qio
from .errors import (
    ConfigError,
    Divergence,
    NoConvergence,
    QtatError,
    ResolutionError,
    ResonanceError,
)
from .forward import (
    BoundaryIllumination,
    SolverConfig,
    VectorField,
    internal_data,
    solve_forward,
    lap7,
)
from .illum import (
    boundary_trace,
    cgo_params,
    direction_family,
    plane_wave_family,
    plane_wave_field,
    plane_wave_params,
)
from .medium import Grid, Medium, derived_fields, eval_q, make_phantom
from .version import SCHEMA_VERSION, __version__

EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_RESONANCE = 3
EXIT_DIVERGENCE = 4


def _vec3(text: str) -> np.ndarray:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated values")
    return np.array(parts)


def _limit_threads(n: int | None):
    if n is None:
        n = int(os.environ.get("QTAT_THREADS", "0")) or None
    if n is None:
        return None
    try:
        import threadpoolctl

        return threadpoolctl.threadpool_limits(limits=n)
    except Exception:  # pragma: no cover - depends on runtime BLAS
        return None


def _write_csv(path, rows, fieldnames) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})


# --- illum ------------------------------------------------------------------


def _load_illuminations(directory, grid: Grid) -> list:
    """Boundary illuminations from a directory: either stored boundary
    arrays (illum_###.json) or a parameter spec (spec.json) evaluated on
    `grid`."""
    d = Path(directory)
    spec_path = d / "spec.json"
    stored = sorted(d.glob("illum_*.json"))
    if stored:
        return [qio.load_illumination(d, p.stem) for p in stored]
    if not spec_path.exists():
        raise ConfigError(f"no illuminations in {d} (need spec.json or illum_*.json)")
    spec = json.loads(spec_path.read_text())
    kind = spec.get("kind")
    if kind == "family":
        q0 = complex(spec["q0"][0], spec["q0"][1])
        _, fields = plane_wave_family(q0, grid)
        return [boundary_trace(F) for F in fields]
    if kind == "plane":
        q0 = complex(spec["q0"][0], spec["q0"][1])
        p = plane_wave_params(q0, np.asarray(spec["eta"], float))
        return [boundary_trace(plane_wave_field(p, grid))]
    raise ConfigError(f"unknown illumination kind {kind!r}")


def cmd_illum(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "family":
        fam = direction_family(3)
        spec = {
            "schema": SCHEMA_VERSION,
            "kind": "family",
            "q0": [args.q0_re, args.q0_im],
            "pairs": [[list(r), list(p)] for r, p in fam.pairs],
        }
    elif args.kind == "plane":
        p = plane_wave_params(complex(args.q0_re, args.q0_im), args.eta)
        spec = {
            "schema": SCHEMA_VERSION,
            "kind": "plane",
            "q0": [args.q0_re, args.q0_im],
            "eta": list(np.asarray(args.eta, float)),
            "zeta": [[z.real, z.imag] for z in p.zeta],
        }
    else:  # cgo
        p = cgo_params(args.s, args.rho, args.rho_perp, args.k)
        spec = {
            "schema": SCHEMA_VERSION,
            "kind": "cgo",
            "s": args.s,
            "k": args.k,
            "rho": list(args.rho),
            "rho_perp": list(args.rho_perp),
            "zeta": [[z.real, z.imag] for z in p.zeta],
            "eta_zeta": [[z.real, z.imag] for z in p.eta_zeta],
        }
    (out / "spec.json").write_text(json.dumps(spec, indent=2))
    if args.medium is not None:
        medium = qio.load_medium(args.medium)
        ills = _load_illuminations(out, medium.grid)
        for i, f in enumerate(ills):
            qio.save_illumination(f, out, f"illum_{i:03d}")
    qio.write_manifest(out, {"command": "illum"})
    return 0


# --- forward ------------------------------------------------------------------


def cmd_forward(args) -> int:
    medium = qio.load_medium(args.medium)
    ills = _load_illuminations(args.illum, medium.grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SolverConfig(tol=args.tol)
    rows = []
    for j, f in enumerate(ills):
        E = solve_forward(medium, f, cfg)
        H = internal_data(medium.sigma, E)
        qio.save_vector_field(E, out, f"E_{j:03d}")
        qio.save_internal_data(H, out, f"H_{j:03d}")
        rows.append({"j": j, "e_norm": E.norm2(), "h_max": float(H.H.max())})
        if args.plot:
            from . import plots

            plots.slice_plot(np.sum(np.abs(E.values) ** 2, axis=0),
                             out / f"E_{j:03d}.png", title=f"|E_{j}|^2 mid-slice")
            plots.slice_plot(H.H, out / f"H_{j:03d}.png",
                             title=f"H_{j} mid-slice", cmap="magma")
    _write_csv(out / "forward.csv", rows, ["j", "e_norm", "h_max"])
    qio.write_manifest(out, {"command": "forward", "tol": args.tol})
    return 0


# --- cgo ----------------------------------------------------------------------


def cmd_cgo(args) -> int:
    from . import cgo as cgo_mod

    medium = qio.load_medium(args.medium)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = cgo_mod.extend_medium(medium)
    _, k = cgo_mod.background_constants(ext)
    rows = []
    if args.study_decay:
        s_values = [float(s) for s in args.study_decay.split(",")]
        study = cgo_mod.remainder_decay_study(medium, args.rho, args.rho_perp,
                                              s_values, tol=args.tol)
        for r in study["rows"]:
            r["slope"] = study["slope"]
        rows = study["rows"]
        _write_csv(out / "decay.csv", rows,
                   ["s", "zeta_norm", "r_norm", "eta_norm", "bound_ratio",
                    "terms", "tail", "slope"])
        if args.plot:
            from . import plots

            plots.decay_plot(rows, out / "decay.png", ylabel="||R||",
                             title="CGO remainder decay")
    p = cgo_params(args.s, args.rho, args.rho_perp, k)
    field = cgo_mod.cgo_field(medium, p, tol=args.tol)
    qio.save_vector_field(field.field, out, "E_cgo")
    summary = {
        "s": args.s,
        "k": k,
        "zeta_norm": p.zeta_norm,
        "series_terms": field.pair.series_terms,
        "tail_norm": field.pair.tail_norm,
        "min_abs_E": field.min_abs,
        "bkgd_residual": field.residual,
        "slope": rows[0]["slope"] if rows else None,
    }
    (out / "cgo.json").write_text(json.dumps(summary, indent=2))
    if args.plot:
        from . import plots

        plots.slice_plot(np.sum(np.abs(field.field.values) ** 2, axis=0),
                         out / "E_cgo.png", title="|E_zeta|^2 mid-slice")
    qio.write_manifest(out, {"command": "cgo"})
    return 0


# --- check-symbols -------------------------------------------------------------


def cmd_check_symbols(args) -> int:
    from .symbols import boundary_covering_scan, ellipticity_scan

    medium = qio.load_medium(args.medium)
    d = Path(args.fields)
    names = sorted(p.stem for p in d.glob("E_*.json"))
    if not names:
        raise ConfigError(f"no fields E_*.json under {d}")
    fields = [qio.load_vector_field(d, n) for n in names]
    der = derived_fields(medium)
    rep = ellipticity_scan(fields, der, xi_samples=args.xi_samples,
                           omega=medium.omega)
    lop = boundary_covering_scan(fields, der, samples=args.boundary_samples)
    verdicts = {}
    for (_, j, l), r in lop:
        verdicts[r.verdict] = verdicts.get(r.verdict, 0) + 1
    report = {
        "schema": SCHEMA_VERSION,
        "margin": rep.margin,
        "sampled_margin": rep.sampled_margin,
        "rank_tol": rep.rank_tol,
        "passed": bool(rep.passed),
        "argmin_index": list(rep.argmin_index),
        "argmin_xi": [float(x) for x in rep.argmin_xi],
        "xi_samples": rep.xi_samples,
        "per_point_min_stats": {
            "min": float(rep.per_point_min.min()),
            "median": float(np.median(rep.per_point_min)),
            "max": float(rep.per_point_min.max()),
        },
        "lopatinskii": {
            "samples": args.boundary_samples,
            "verdicts": verdicts,
            "worst_discriminant": max(
                (r.discriminant for _, r in lop
                 if np.isfinite(r.discriminant)), default=None
            ),
        },
    }
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(json.dumps(report, indent=2))
    side = Path(args.report).with_suffix(".per_point.bin")
    side.write_bytes(np.ascontiguousarray(rep.per_point_min, "<f8").tobytes())
    if args.plot:
        from . import plots

        plots.margin_histogram(rep.per_point_min, rep.rank_tol,
                               Path(args.report).with_suffix(".png"))
    return 0


# --- invert -------------------------------------------------------------------


def _load_data_dir(directory) -> list:
    d = Path(directory)
    names = sorted(p.stem for p in d.glob("H_*.json"))
    if not names:
        raise ConfigError(f"no internal data H_*.json under {directory}")
    return [qio.load_internal_data(d, n) for n in names]


def cmd_invert(args) -> int:
    from .inverse import (
        BoundaryData,
        GaussNewtonConfig,
        LinearizedSystem,
        Perturbation,
        ResidualBlocks,
        gauss_newton,
        normal_solve,
    )

    init = qio.load_medium(args.init)
    data = _load_data_dir(args.data)
    ills = _load_illuminations(args.illum, init.grid)
    if len(ills) != len(data):
        raise ConfigError(
            f"{len(data)} data files vs {len(ills)} illuminations"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fcfg = SolverConfig(tol=args.tol)
    g = init.grid

    traces = None
    if args.traces:
        tdir = Path(args.traces)
        tE = np.stack([
            qio.load_vector_field(tdir, p.stem).values
            for p in sorted(tdir.glob("E_*.json"))
        ])
        tmed = qio.load_medium(tdir)
        traces = BoundaryData(E=tE, sigma=tmed.sigma, n=tmed.n)

    if args.mode == "newton":
        if traces is None:
            raise ConfigError("newton mode needs --traces (boundary data)")
        cfg = GaussNewtonConfig(max_iter=args.max_iter, reg=args.reg,
                                cg_tol=args.cg_tol, cg_maxiter=args.cg_maxiter,
                                forward_cfg=fcfg)
        rec = gauss_newton(data, init, ills, cfg, traces)
        qio.save_medium(rec.medium, out)
        history = rec.residual_history
        result = {
            "mode": "newton",
            "iterations": rec.iterations,
            "converged": bool(rec.converged),
            "boundary_mismatch": rec.boundary_mismatch,
        }
    else:
        fields = [solve_forward(init, f, fcfg) for f in ills]
        sysL = LinearizedSystem(medium=init, fields=fields)
        interior = g.interior_mask(1)
        h = g.spacing
        ddata = np.stack([
            lap7(data[j].H - internal_data(init.sigma, fields[j]).H, h) * interior
            for j in range(len(fields))
        ])
        S = ResidualBlocks(
            mx=np.zeros((len(fields), 3, *g.dims), complex),
            mx_conj=np.zeros((len(fields), 3, *g.dims), complex),
            data=ddata,
        )
        shell = None
        if traces is not None:
            shell = Perturbation(
                dE=traces.E - np.stack([F.values for F in fields]),
                dsigma=traces.sigma - init.sigma,
                dn=traces.n - init.n,
            )
        ns = normal_solve(sysL, S, shell=shell, eps=args.reg,
                          tol=args.cg_tol, maxiter=args.cg_maxiter)
        rec_sigma = init.sigma + ns.w.dsigma
        rec_n = init.n + ns.w.dn
        qio.save_medium(
            Medium(grid=g, n=np.clip(rec_n, init.n_floor, None),
                   sigma=np.clip(rec_sigma, 0.0, None), omega=init.omega),
            out,
        )
        history = [ns.relres]
        result = {
            "mode": "linear",
            "iterations": ns.iterations,
            "converged": bool(ns.converged),
            "relres": ns.relres,
        }
    _write_csv(out / "residual.csv",
               [{"iteration": i, "residual": r} for i, r in enumerate(history)],
               ["iteration", "residual"])
    (out / "invert.json").write_text(json.dumps(result, indent=2))
    if args.plot:
        from . import plots

        plots.residual_history_plot(history, out / "residual.png")
        rec_med = qio.load_medium(out)
        plots.slice_plot(rec_med.sigma, out / "sigma.png", title="recon sigma")
        plots.slice_plot(rec_med.n, out / "n.png", title="recon n")
    qio.write_manifest(out, {"command": "invert"})
    return 0


# --- pipeline -------------------------------------------------------------------


def _build_medium(entry: dict, grid: Grid) -> Medium:
    entry = dict(entry)
    if "load" in entry:
        return qio.load_medium(entry["load"])
    kind = entry.pop("kind")
    return make_phantom(kind, grid, **entry)


def run_pipeline(config: dict, out_dir=None) -> dict:
    """Forward -> data synthesis -> symbol check -> inversion, deterministic
    under the configured seed; returns the manifest dictionary."""
    from .inverse import (
        BoundaryData,
        GaussNewtonConfig,
        gauss_newton,
    )

    seed = int(config.get("seed", 0))
    rng = np.random.default_rng(seed)
    out = Path(out_dir or config.get("out", "qtat_run"))
    out.mkdir(parents=True, exist_ok=True)

    gcfg = config["grid"]
    grid = Grid(dims=tuple(gcfg["dims"]), spacing=float(gcfg["spacing"]),
                origin=tuple(gcfg.get("origin", (0.0, 0.0, 0.0))))
    truth = _build_medium(config["medium"], grid)
    bg_cfg = dict(config.get("background", {}))
    bg_cfg.setdefault("kind", "constant")
    bg_cfg.setdefault("omega", truth.omega)
    bg_cfg.setdefault("n_c", float(truth.n[0, 0, 0]))
    bg_cfg.setdefault("sigma_c", float(truth.sigma[0, 0, 0]))
    init = _build_medium(bg_cfg, grid)
    qio.save_medium(truth, out / "truth")
    qio.save_medium(init, out / "init")

    ill_cfg = config.get("illuminations", {"kind": "family"})
    if ill_cfg.get("kind", "family") == "family":
        q0 = complex(np.mean(eval_q(init)))
        _, fields0 = plane_wave_family(q0, grid)
        ills = [boundary_trace(F) for F in fields0]
    else:
        raise ConfigError("pipeline supports illuminations.kind == 'family'")

    fcfg = SolverConfig(tol=float(config.get("forward", {}).get("tol", 1e-10)))
    true_fields = [solve_forward(truth, f, fcfg) for f in ills]
    data = []
    noise = float(config.get("noise", {}).get("level", 0.0))
    fdir = out / "data"
    for j, F in enumerate(true_fields):
        H = internal_data(truth.sigma, F)
        Hn = H.H * (1.0 + noise * rng.standard_normal(H.H.shape)) if noise else H.H
        H = type(H)(grid=grid, H=np.clip(Hn, 0.0, None))
        qio.save_internal_data(H, fdir, f"H_{j:03d}")
        qio.save_vector_field(F, fdir, f"E_{j:03d}")
        data.append(H)

    sym_cfg = config.get("symbols", {})
    report = {}
    if sym_cfg.get("enabled", True):
        from .symbols import ellipticity_scan

        rep = ellipticity_scan(true_fields, derived_fields(truth),
                               xi_samples=int(sym_cfg.get("xi_samples", 512)),
                               omega=truth.omega)
        report["symbols"] = {"margin": rep.margin, "rank_tol": rep.rank_tol,
                             "passed": bool(rep.passed)}
        (out / "symbols.json").write_text(json.dumps(report["symbols"], indent=2))

    inv_cfg = config.get("invert", {"mode": "newton"})
    traces = BoundaryData(E=np.stack([F.values for F in true_fields]),
                          sigma=truth.sigma, n=truth.n)
    cfg = GaussNewtonConfig(
        max_iter=int(inv_cfg.get("max_iter", 8)),
        reg=inv_cfg.get("reg"),
        cg_tol=float(inv_cfg.get("cg_tol", 1e-6)),
        cg_maxiter=int(inv_cfg.get("cg_maxiter", 1200)),
        forward_cfg=fcfg,
    )
    rec = gauss_newton(data, init, ills, cfg, traces)
    qio.save_medium(rec.medium, out / "recon")
    err_sigma = float(np.linalg.norm(rec.medium.sigma - truth.sigma)
                      / max(np.linalg.norm(truth.sigma), 1e-300))
    err_n = float(np.linalg.norm(rec.medium.n - truth.n)
                  / max(np.linalg.norm(truth.n), 1e-300))
    _write_csv(out / "residual.csv",
               [{"iteration": i, "residual": r}
                for i, r in enumerate(rec.residual_history)],
               ["iteration", "residual"])
    if config.get("plots", True):
        from . import plots

        plots.residual_history_plot(rec.residual_history, out / "residual.png",
                                    title="Gauss-Newton residual")
        plots.recon_comparison_plot(truth.sigma, rec.medium.sigma,
                                    out / "recon_sigma.png", label="sigma")
        plots.recon_comparison_plot(truth.n, rec.medium.n,
                                    out / "recon_n.png", label="n")
    manifest = qio.write_manifest(out, {
        "command": "pipeline",
        "seed": seed,
        "schema": SCHEMA_VERSION,
        "metrics": {
            "err_sigma": err_sigma,
            "err_n": err_n,
            "iterations": rec.iterations,
            "residual_final": rec.residual_history[-1],
            **report.get("symbols", {}),
        },
    })
    return manifest


def cmd_pipeline(args) -> int:
    try:
        config = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON at line {exc.lineno}, column "
              f"{exc.colno}: {exc.msg}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError:
        print(f"config error: no such file {args.config}", file=sys.stderr)
        return EXIT_CONFIG
    run_pipeline(config, args.out)
    return 0


# --- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qtat",
        description="quantitative thermo-acoustic tomography toolkit",
    )
    ap.add_argument("--version", action="version",
                    version=f"qtat {__version__} (schema {SCHEMA_VERSION})")
    ap.add_argument("--threads", type=int, default=None,
                    help="cap BLAS/FFT worker threads (env: QTAT_THREADS)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="solve the boundary-value problem")
    p.add_argument("--medium", required=True)
    p.add_argument("--illum", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("illum", help="construct illumination specs")
    p.add_argument("--kind", choices=("plane", "cgo", "family"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--medium", help="also store boundary arrays on this grid")
    p.add_argument("--q0-re", type=float, default=1.0)
    p.add_argument("--q0-im", type=float, default=0.0)
    p.add_argument("--eta", type=_vec3, default=np.array([0.0, 0.0, 1.0]))
    p.add_argument("--s", type=float, default=20.0)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--rho", type=_vec3, default=np.array([0.0, 0.0, 1.0]))
    p.add_argument("--rho-perp", type=_vec3, default=np.array([1.0, 0.0, 0.0]))
    p.set_defaults(func=cmd_illum)

    p = sub.add_parser("cgo", help="complex-frequency solutions and decay studies")
    p.add_argument("--medium", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--rho", type=_vec3, default=np.array([0.0, 0.0, 1.0]))
    p.add_argument("--rho-perp", type=_vec3, default=np.array([1.0, 0.0, 0.0]))
    p.add_argument("--study-decay", default="",
                   help="comma-separated s values for the decay CSV")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_cgo)

    p = sub.add_parser("check-symbols", help="ellipticity and covering checks")
    p.add_argument("--fields", required=True)
    p.add_argument("--medium", required=True)
    p.add_argument("--xi-samples", type=int, default=2048)
    p.add_argument("--boundary-samples", type=int, default=24)
    p.add_argument("--report", required=True)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_check_symbols)

    p = sub.add_parser("invert", help="linearized or Gauss-Newton reconstruction")
    p.add_argument("--data", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--illum", required=True)
    p.add_argument("--mode", choices=("linear", "newton"), default="linear")
    p.add_argument("--reg", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=8)
    p.add_argument("--cg-tol", type=float, default=1e-8)
    p.add_argument("--cg-maxiter", type=int, default=1500)
    p.add_argument("--tol", type=float, default=1e-10,
                   help="forward-solver tolerance")
    p.add_argument("--traces", default=None,
                   help="directory with true-state fields + medium for "
                        "boundary shells")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("pipeline", help="run a configured experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    limiter = _limit_threads(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResonanceError as exc:
        print(f"resonance: {exc}", file=sys.stderr)
        return EXIT_RESONANCE
    except (NoConvergence, ResolutionError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except Divergence as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except QtatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
