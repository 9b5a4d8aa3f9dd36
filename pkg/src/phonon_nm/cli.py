"""Command line entry point: one experiment per invocation.

Every subcommand reads a strict INI config, runs, and leaves two files: a
CSV whose header names each column with its unit, and a JSON sidecar with
the fully resolved config (canonical text, defaults filled in), the seeds,
package versions, wall time, and per-experiment convergence notes.  Runs
are deterministic given the config and seed, so re-running the sidecar's
embedded config text reproduces the CSV byte for byte.

Exit codes: 0 on success, 2 when the config (or a validate check) is the
problem, 3 when the numerics are.  Errors go to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from dataclasses import asdict, fields, replace

import numpy as np
import scipy

from . import __version__
from .config import (ConfigError, SCHEMAS, build_bath_params,
                     build_mode_params, build_siv_params, load_config)
from .siv import GHZ

_EXIT_CONFIG = 2
_EXIT_NUMERICS = 3


# --- output helpers ---

def _cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    # repr round-trips doubles exactly and never minds the locale
    return repr(float(v))


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_cell(v) for v in row) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


def _sidecar_path(csv_path):
    base, _ = os.path.splitext(csv_path)
    return base + ".json"


def _resolve_out(cfg, args):
    path = cfg.get("output", "path")
    if path is None:
        return None
    if not os.path.isabs(path):
        path = os.path.join(args.out, path)
    return path


# --- experiment runners; each returns (header, rows, convergence) ---

def _dissipation(cfg):
    d = cfg["dissipation"]
    return d["gamma_siv_ghz"] * GHZ, d["n_delta"]


def _run_trace_distance(cfg, args):
    from .sweeps import single_trajectory_nd

    p = build_siv_params(cfg)
    m_res = build_mode_params(cfg)
    m_off = replace(m_res, omega_ph=cfg["mode"]["omega_off_ghz"] * GHZ)
    gamma_siv, n_delta = _dissipation(cfg)
    manifold_n = cfg["initial"]["manifold_n"]
    window = cfg["window"]["window"]
    samples = cfg["window"]["samples"]
    nd_res, t_dim, d_res = single_trajectory_nd(
        p, m_res, gamma_siv, n_delta, manifold_n=manifold_n,
        window=window, samples=samples)
    nd_off, _, d_off = single_trajectory_nd(
        p, m_off, gamma_siv, n_delta, manifold_n=manifold_n,
        window=window, samples=samples)
    rows = list(zip(t_dim, d_res, d_off))
    conv = {"nd_resonant": nd_res, "nd_offresonant": nd_off,
            "contrast": nd_off / nd_res if nd_res else float("nan")}
    return ["t_dimensionless", "D_resonant", "D_offresonant"], rows, conv


def _run_nd_bz(cfg, args):
    from .sweeps import GridSpec, nd_vs_bz

    p = build_siv_params(cfg)
    m = build_mode_params(cfg, g1=0.0)
    gamma_siv, n_delta = _dissipation(cfg)
    g_list = [g * GHZ for g in cfg["mode"]["g_list_ghz"]]
    grid = GridSpec("bz", cfg["grid"]["bz_min_t"], cfg["grid"]["bz_max_t"],
                    cfg["grid"]["count"])
    win = cfg["window"]
    seconds = "window_seconds" in win
    res = nd_vs_bz(p, m, gamma_siv, n_delta, grid, g_list,
                   manifold_n=cfg["initial"]["manifold_n"],
                   window=win["window_seconds"] if seconds else win["window"],
                   samples=win["samples"], window_in_seconds=seconds,
                   base_seed=args.seed or 0, threads=args.threads)
    header = ["bz_tesla"] + ["nd_g=%.6gGHz" % g for g in cfg["mode"]["g_list_ghz"]]
    bz = res.axes["bz"]
    rows = [(bz[j],) + tuple(res.values[:, j]) for j in range(bz.size)]
    conv = {"peak_bz_tesla": res.extras["peak_bz"],
            "peak_value": res.extras["peak_value"]}
    if "peak_scaling" in res.extras:
        conv["peak_scaling"] = res.extras["peak_scaling"]
    return header, rows, conv


def _opt_kwargs(cfg):
    o = cfg["optimizer"]
    return dict(pop_size=o["pop_size"], max_gen=o["max_gen"],
                f_weight=o["f_weight"], cr=o["cr"])


def _run_blp_map(cfg, args):
    from .sweeps import GridSpec, blp_map, reflect_map

    p = build_siv_params(cfg)
    m = build_mode_params(cfg)
    gamma_siv, n_delta = _dissipation(cfg)
    g = cfg["grid"]
    bxg = GridSpec("bx", 0.0, g["bx_max_t"], g["bx_count"])
    bzg = GridSpec("bz", 0.0, g["bz_max_t"], g["bz_count"])
    quadrant = blp_map(p, m, gamma_siv, n_delta, bxg, bzg,
                       window=cfg["window"]["window"],
                       samples_low=cfg["window"]["samples_low"],
                       samples_high=cfg["window"]["samples"],
                       opt_kwargs=_opt_kwargs(cfg),
                       base_seed=cfg["optimizer"]["seed"],
                       threads=args.threads)
    full = reflect_map(quadrant)
    bx, bz = full.axes["bx"], full.axes["bz"]
    rows = [(bx[i], bz[j], full.values[i, j])
            for i in range(bx.size) for j in range(bz.size)]
    conv = {"failed_points": len(quadrant.failed_points()),
            "optimizer": cfg["optimizer"]}
    return ["bx_tesla", "bz_tesla", "n_blp"], rows, conv


def temperature_grid(t_min, t_max, count, spacing, tanh_scale=0.3):
    """Sample points for a temperature scan, endpoints exact.

    tanh spacing equidistributes points along the saturating response
    tanh(scale / T), which is how one wants to sample a curve that
    plateaus at both ends of the scan.
    """
    if spacing == "linear":
        return np.linspace(t_min, t_max, count)
    if spacing == "geom":
        return np.geomspace(t_min, t_max, count)
    if spacing == "tanh":
        u = np.linspace(np.tanh(tanh_scale / t_min),
                        np.tanh(tanh_scale / t_max), count)
        t = tanh_scale / np.arctanh(u)
        t[0], t[-1] = t_min, t_max
        return t
    raise ConfigError("unknown spacing %r" % spacing)


def _run_blp_temp(cfg, args):
    from .sweeps import blp_vs_temperature

    p = build_siv_params(cfg)
    bath = build_bath_params(cfg)
    g = cfg["grid"]
    ts = temperature_grid(g["t_min_k"], g["t_max_k"], g["count"],
                          g["spacing"], g["tanh_scale_k"])
    res = blp_vs_temperature(p, bath, ts,
                             window=cfg["window"]["window"],
                             samples=cfg["window"]["samples"],
                             subdivide=cfg["window"]["subdivide"],
                             opt_kwargs=_opt_kwargs(cfg),
                             base_seed=cfg["optimizer"]["seed"],
                             threads=args.threads)
    rows = list(zip(res.axes["temperature"], res.values))
    conv = {"optimizer": cfg["optimizer"]}
    if "fit" in res.extras:
        conv["fit"] = asdict(res.extras["fit"])
    else:
        conv["fit_error"] = res.extras.get("fit_error", "not attempted")
    return ["temperature_k", "n_blp"], rows, conv


def _run_meanfield(cfg, args):
    from .meanfield import MeanFieldParams, meanfield_scaling

    mf = cfg["meanfield"]
    base = MeanFieldParams(omega_s=mf["omega_s_ghz"] * GHZ,
                           omega_ph=mf["omega_ph_ghz"] * GHZ,
                           g=mf["g_ghz"] * GHZ,
                           gamma_ph=mf["omega_ph_ghz"] * GHZ / mf["quality_factor"],
                           gamma_siv=mf["gamma_siv_ghz"] * GHZ)
    scan = cfg["scan"]
    alphas = np.linspace(scan["alpha_min"], scan["alpha_max"], scan["count"])
    rows, per_t = [], []
    for t_k in scan["t_list_k"]:
        out = meanfield_scaling(alphas, replace(base, temperature=t_k),
                                window=cfg["window"]["window"],
                                samples=cfg["window"]["samples"])
        rows.extend((t_k, a, v) for a, v in zip(out["alpha0"], out["nd"]))
        per_t.append({"temperature_k": t_k, "slope": out["slope"],
                      "conf_half_width": out["conf_half_width"],
                      "r_squared": out["r_squared"]})
    slopes = [d["slope"] for d in per_t]
    conv = {"per_temperature": per_t,
            "slopes_decreasing": bool(np.all(np.diff(slopes) < 0))
            if len(slopes) > 1 else None}
    return ["temperature_k", "alpha0", "nd"], rows, conv


def _run_spectrum_map(cfg, args):
    from .sweeps import GridSpec, spectrum_ratio_map

    p = build_siv_params(cfg)
    m = build_mode_params(cfg)
    g = cfg["grid"]
    bxg = GridSpec("bx", 0.0, g["bx_max_t"], g["bx_count"])
    bzg = GridSpec("bz", 0.0, g["bz_max_t"], g["bz_count"])
    res = spectrum_ratio_map(p, m, bxg, bzg, pair=tuple(g["pair"]),
                             base_seed=args.seed or 0, threads=args.threads)
    bx, bz = res.axes["bx"], res.axes["bz"]
    rows = [(bx[i], bz[j], res.values[i, j])
            for i in range(bx.size) for j in range(bz.size)]
    n_inf = sum(1 for r in res.provenance if r["status"] == "infinite")
    conv = {"infinite_points": n_inf, "pair": list(g["pair"])}
    return ["bx_tesla", "bz_tesla", "omega_ph_over_gap"], rows, conv


def _run_rates_dump(cfg, args):
    from .bath import golden_rule_rate, rate_integrals

    bath = build_bath_params(cfg)
    d = cfg["dump"]
    omega = d["omega_ghz"] * GHZ
    ts = np.linspace(0.0, d["t_max_ns"], d["samples"])
    names = [f.name for f in fields(rate_integrals(omega, 0.0, bath))]
    rows = []
    for t_ns in ts:
        rs = rate_integrals(omega, t_ns * 1e-9, bath, subdivide=d["subdivide"])
        rows.append((t_ns,) + tuple(getattr(rs, n) for n in names))
    conv = {"golden_rule_rad_per_s": golden_rule_rate(omega, bath),
            "final": dict(zip(names, rows[-1][1:]))}
    return ["t_ns"] + ["%s_rad_per_s" % n for n in names], rows, conv


def _run_validate(cfg, args):
    from .bath import rate_integrals
    from .dynamics import build_lindblad, propagate, truncation_check
    from .qcore import trace_distance
    from .siv import (build_full_hamiltonian, build_siv_hamiltonian,
                      build_transverse_hamiltonian, eigenenergies_longitudinal)

    p = build_siv_params(cfg)
    m = build_mode_params(cfg)
    gamma_siv, n_delta = _dissipation(cfg)
    bath = build_bath_params(cfg)
    ck = cfg["checks"]
    checks = []

    def run(name, tol, fn):
        try:
            residual = float(fn())
            status = "PASS" if residual < tol else "FAIL"
            detail = ""
        except Exception as err:
            residual, status = float("nan"), "FAIL"
            detail = "%s: %s" % (err.__class__.__name__, err)
        checks.append({"check": name, "status": status, "residual": residual,
                       "tolerance": tol, "detail": detail})

    def hermiticity():
        build = build_full_hamiltonian if p.longitudinal else build_transverse_hamiltonian
        h = build(p, m)
        h4 = build_siv_hamiltonian(p)
        return max(np.abs(h - h.conj().T).max() / np.abs(h).max(),
                   np.abs(h4 - h4.conj().T).max() / np.abs(h4).max())

    def closed_form():
        pz = p.with_field((0.0, 0.0, p.b[2]))
        e_closed = eigenenergies_longitudinal(pz)
        e_num = np.linalg.eigvalsh(build_siv_hamiltonian(pz))
        return np.abs(np.sort(e_closed) - e_num).max() / p.delta0

    def contractivity():
        m0 = replace(m, g1=0.0, g2=0.0)
        model = build_lindblad(p, m0, gamma_siv, n_delta)
        rng = np.random.default_rng(args.seed or 0)
        worst = 0.0
        t_grid = np.linspace(0.0, ck["window"] / bath.center, 64)
        for _ in range(3):
            pair = []
            for _ in range(2):
                a = rng.standard_normal((model.dim, model.dim))
                a = a + 1j * rng.standard_normal(a.shape)
                rho = a @ a.conj().T
                pair.append(rho / np.trace(rho).real)
            t1 = propagate(model, pair[0], t_grid)
            t2 = propagate(model, pair[1], t_grid)
            d = np.array([trace_distance(x, y)
                          for x, y in zip(t1.states, t2.states)])
            worst = max(worst, float(np.max(np.diff(d))))
        return worst

    def rate_zeros():
        rs = rate_integrals(bath.center, 0.0, bath)
        return max(abs(getattr(rs, f.name)) for f in fields(rs))

    def truncation():
        if m.g_abs == 0.0:
            raise ValueError("truncation check needs a coupled mode (g != 0)")

        def rho0_builder(fock):
            dim = 4 * fock.size
            rho0 = np.zeros((dim, dim), dtype=complex)
            rho0[1, 1] = 1.0   # label 1, one phonon: inside any truncation
            return rho0

        t_grid = np.linspace(0.0, ck["window"] / m.g_abs, ck["samples"])
        sup, d_small, _ = truncation_check(p, m, gamma_siv, n_delta,
                                           rho0_builder, t_grid)
        scale = float(np.max(d_small))
        return sup / scale if scale > 0 else sup

    run("hermiticity", 1e-12, hermiticity)
    run("closed_form_vs_eigensolve", 1e-6, closed_form)
    run("contractivity_at_g0", 1e-10, contractivity)
    run("rate_integrals_zero_at_t0", 1e-30, rate_zeros)
    run("truncation_convergence", ck["truncation_tol"], truncation)
    return checks


RUNNERS = {
    "trace-distance": _run_trace_distance,
    "nd-bz": _run_nd_bz,
    "blp-map": _run_blp_map,
    "blp-temp": _run_blp_temp,
    "meanfield-scaling": _run_meanfield,
    "spectrum-map": _run_spectrum_map,
    "rates-dump": _run_rates_dump,
}


# --- wiring ---

def _parse_args(argv):
    ap = argparse.ArgumentParser(
        prog="phonon-nm",
        description="Backflow spectroscopy experiments for a color-center "
                    "coupled to phonons; one experiment per invocation.")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in (*RUNNERS, "validate"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI config file")
        sp.add_argument("--override", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
        sp.add_argument("--threads", type=int, default=os.cpu_count(),
                        help="worker threads for sweeps (default: all cores)")
        sp.add_argument("--seed", type=int, default=None,
                        help="seed override for stochastic experiments")
        sp.add_argument("--out", default=".",
                        help="directory that relative output paths land in")
    return ap.parse_args(argv)


def _fail(code, kind, err):
    payload = {"error": {"exit_code": code, "type": kind,
                         "class": err.__class__.__name__,
                         "message": str(err)}}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None):
    args = _parse_args(argv)
    if args.threads is not None and args.threads < 1:
        return _fail(_EXIT_CONFIG, "config", ValueError("--threads must be >= 1"))
    overrides = list(args.override)
    if args.seed is not None and "optimizer" in SCHEMAS[args.experiment]:
        overrides.append("optimizer.seed=%d" % args.seed)
    try:
        cfg = load_config(args.config, args.experiment, overrides)
    except ConfigError as err:
        return _fail(_EXIT_CONFIG, "config", err)

    t0 = time.time()
    try:
        if args.experiment == "validate":
            checks = _run_validate(cfg, args)
        else:
            header, rows, conv = RUNNERS[args.experiment](cfg, args)
    except ConfigError as err:
        return _fail(_EXIT_CONFIG, "config", err)
    except (ValueError, RuntimeError, ArithmeticError,
            np.linalg.LinAlgError) as err:
        return _fail(_EXIT_NUMERICS, "numerical", err)
    wall = time.time() - t0

    if args.experiment == "validate":
        all_pass = all(c["status"] == "PASS" for c in checks)
        for c in checks:
            line = "%-28s %s  (residual %.3g, tol %.3g)" % (
                c["check"], c["status"], c["residual"], c["tolerance"])
            if c["detail"]:
                line += "  [%s]" % c["detail"]
            print(line)
        print("validate: %s" % ("all checks passed" if all_pass
                                else "some checks FAILED"))
        path = _resolve_out(cfg, args)
        if path is not None:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(_jsonable({"checks": checks, "all_pass": all_pass,
                                     "wall_time_s": wall}), f, indent=2)
                f.write("\n")
        return 0 if all_pass else _EXIT_CONFIG

    path = _resolve_out(cfg, args)
    try:
        _write_csv(path, header, rows)
        sidecar = {
            "experiment": args.experiment,
            "config_text": cfg.canonical_text(),
            "config_path": os.path.abspath(args.config),
            "overrides": list(args.override),
            "seed": args.seed,
            "threads": args.threads,
            "rows": len(rows),
            "csv_path": os.path.abspath(path),
            "versions": {"phonon_nm": __version__,
                         "python": platform.python_version(),
                         "numpy": np.__version__,
                         "scipy": scipy.__version__},
            "wall_time_s": wall,
            "convergence": _jsonable(conv),
        }
        with open(_sidecar_path(path), "w", encoding="utf-8") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as err:
        return _fail(_EXIT_CONFIG, "io", err)
    print("%s: %d rows -> %s (%.1f s)" % (args.experiment, len(rows),
                                          path, wall))
    return 0


if __name__ == "__main__":
    sys.exit(main())
