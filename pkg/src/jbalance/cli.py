"""Experiment runner: balance | flow | stability | verify.

Reproducible batch computations with machine-readable outputs (JSON + CSV).
Exit codes: 0 success, 2 config/usage error, 3 convergence or check failure,
4 quadrature health failure (trace identity or calibration off tolerance).
"""

import argparse
import csv
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .flows import (FlowError, balancing_flow, grid_from_potential, jflow_run,
                    quantization_comparison)
from .geometry import GeometryError, mixed_density, volume_density
from .presets import make_problem, normal_cone_from_facet, problem_names
from .quantisation import HermitianForm, QuantisationError
from .stability import (NormalConeConfig, StabilityError, blowup_table,
                        cone_criteria, df_weight, inequality_checks, j_weight,
                        trivial_table)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILURE = 3
EXIT_HEALTH = 4

DEFAULTS = {
    "problem": "P2-O1-O1",
    "k_list": [3, 4],
    "resolution": 64,
    "n_theta": None,
    "tol": 1e-9,
    "norm": "fro",
    "maxiter": 500,
    "health_tol": 1e-6,
    "seed": 0,
    "out": "jbalance_out",
    "flow": {"dt": 0.1, "T": 10.0, "grid": 48, "compare_T": 1.0,
             "start_amplitude": 0.3},
    "stability": {"r_values": list(range(1, 11)), "facet": 0, "klt": True},
}


class ConfigError(ValueError):
    pass


def load_config(path, overrides=None):
    cfg = json.loads(json.dumps(DEFAULTS))  # deep copy
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        for key, val in user.items():
            if key in ("flow", "stability") and isinstance(val, dict):
                cfg[key].update(val)
            else:
                cfg[key] = val
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    ks = cfg["k_list"]
    if not ks or list(ks) != sorted(int(k) for k in ks) or min(ks) < 1:
        raise ConfigError("k_list must be non-empty positive integers, ascending")
    cfg["k_list"] = [int(k) for k in ks]
    for name in ("tol", "health_tol"):
        if cfg[name] <= 0:
            raise ConfigError(f"{name} must be positive")
    return cfg


def build_problem(cfg):
    spec = cfg["problem"]
    kmax = max(cfg["k_list"])
    if isinstance(spec, str):
        return make_problem(spec, resolution=cfg["resolution"], kmax=kmax)
    if isinstance(spec, dict):
        polytope = spec.get("polytope")
        if isinstance(polytope, dict):
            from .geometry import DelzantPolytope
            polytope = DelzantPolytope(polytope["normals"], polytope["offsets"],
                                       name=polytope.get("name", "custom"))
        return make_problem(spec.get("name", "custom"),
                            resolution=cfg["resolution"], kmax=kmax,
                            polytope=polytope,
                            l2_spec=spec.get("l2"),
                            chi_mode=spec.get("chi", "reference"))
    raise ConfigError("problem must be a preset name or an object")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _random_diag_forms(q, rng, count, spread=1.0):
    return [HermitianForm.from_diagonal(np.exp(rng.uniform(-spread, spread, q.n_plus_1)), q.k)
            for _ in range(count)]


# ---------------------------------------------------------------------------
# balance
# ---------------------------------------------------------------------------

def cmd_balance(cfg):
    problem = build_problem(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    failures = 0
    for k in cfg["k_list"]:
        q = problem.quantisation(k, n_theta=cfg["n_theta"])
        health = max(q.trace_identity_residual(H)
                     for H in _random_diag_forms(q, rng, 2))
        if health > cfg["health_tol"]:
            print(f"HEALTH k={k}: trace identity residual {health:.3e} exceeds "
                  f"{cfg['health_tol']:.1e}; increase resolution")
            return EXIT_HEALTH
        res = q.iterate_to_balance(HermitianForm.identity(q.n_plus_1, k),
                                   tol=cfg["tol"], maxiter=cfg["maxiter"],
                                   norm=cfg["norm"])
        cols, rows = res.history_columns()
        write_csv(out / f"balance_k{k}.csv", cols, rows)
        from .functionals import report_row
        (out / f"balanced_k{k}.json").write_text(json.dumps({
            "problem": problem.name, "k": k, "converged": res.converged,
            "steps": len(res.history) - 1, "message": res.message,
            "health_residual": health,
            "energy": report_row("i_mu0", "FS(Id)", res.history[-1]["i_mu0"], q),
            "form": res.H.to_json(q.basis)}, indent=1))
        status = "ok" if res.converged else "NOT CONVERGED"
        print(f"balance k={k}: {status} in {len(res.history)-1} steps, "
              f"||mu0||_{cfg['norm']} = {res.history[-1]['mu0_' + cfg['norm']]:.3e}")
        if not res.converged:
            failures += 1
    return EXIT_FAILURE if failures else EXIT_OK


# ---------------------------------------------------------------------------
# flow
# ---------------------------------------------------------------------------

def _write_grid_csv(path, xs, ys, values, t):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nx", "ny", "xmin", "xmax", "ymin", "ymax", "t"])
        writer.writerow([len(xs), len(ys), repr(float(xs[0])), repr(float(xs[-1])),
                         repr(float(ys[0])), repr(float(ys[-1])), repr(float(t))])
        writer.writerow(["values_row_major"])
        for row in values:
            writer.writerow([repr(float(v)) for v in row])


def cmd_flow(cfg):
    problem = build_problem(cfg)
    fcfg = cfg["flow"]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    P = problem.polytope
    if P.dim != 2:
        raise ConfigError("flow subcommand needs a surface problem")
    coeffs = fcfg["start_amplitude"] * rng.standard_normal(P.ehrhart_count(1))
    u0 = problem.u_ref.with_log_coeffs(coeffs - coeffs.mean())

    for k in cfg["k_list"]:
        q = problem.quantisation(k, n_theta=cfg["n_theta"])
        H0 = q.hilb_map(u0)
        traj = balancing_flow(q, H0, dt=fcfg["dt"], T=fcfg["T"])
        rows = [[s.t, s.diagnostics["mu0_fro"], s.diagnostics["mu0_sq"],
                 s.diagnostics.get("i_mu0", ""), s.diagnostics["logdet"]]
                for s in traj]
        write_csv(out / f"balancing_flow_k{k}.csv",
                  ["t", "mu0_fro", "mu0_sq", "i_mu0", "logdet"], rows)
        print(f"flow k={k}: ||mu0||_F {traj[0].diagnostics['mu0_fro']:.3e} -> "
              f"{traj[-1].diagnostics['mu0_fro']:.3e} over T={fcfg['T']}")

    grid0 = grid_from_potential(P, u0, fcfg["grid"])
    pde = jflow_run(grid0, problem.chi, problem.gamma, T=fcfg["compare_T"],
                    snap_times=(fcfg["compare_T"] / 2,))
    for t, vals in sorted(pde.snapshots.items()):
        _write_grid_csv(out / f"jflow_grid_t{t:g}.csv", grid0.xs, grid0.ys, vals, t)
    write_csv(out / "jflow_residual.csv", ["t", "sup_residual"],
              [[t, r] for t, r in pde.residual_log])

    rows, meta = quantization_comparison(P, problem.chi, problem.gamma,
                                         problem.rule, u0, cfg["k_list"],
                                         T=fcfg["compare_T"], nx=fcfg["grid"])
    (out / "quantization_comparison.json").write_text(json.dumps(
        {"problem": problem.name, "meta": meta, "rows": rows}, indent=1))
    print("comparison:", ", ".join(f"k={r['k']} t={r['t']:g}: {r['distance']:.4f}"
                                   for r in rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------

def cmd_stability(cfg):
    from .geometry import intersection_numbers
    from .stability import SurfaceClassData, WeightPolynomials, chow_hilbert_weight

    problem = build_problem(cfg)
    scfg = cfg["stability"]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        if "class_data" in scfg:
            data = SurfaceClassData.from_json(scfg["class_data"])
        else:
            data = problem.class_data(klt=scfg.get("klt", True))
    except StabilityError as exc:
        raise ConfigError(str(exc))
    pair_tab = intersection_numbers(problem.polytope, problem.l2_spec)
    write_csv(out / "pairings.csv", ["classes", "value"],
              sorted(pair_tab.items()))
    gamma = data.gamma()
    verdicts = cone_criteria(data)
    (out / "verdicts.json").write_text(json.dumps({
        "problem": problem.name, "gamma": str(verdicts["gamma"]),
        "gamma_canonical": str(verdicts["gamma_canonical"]),
        "verdicts": [v.as_dict() for v in verdicts["verdicts"]]}, indent=1))

    from .stability import IntersectionTable
    if "table" in scfg:
        fixed = IntersectionTable.from_json(scfg["table"])
        make_table = lambda r: fixed
    else:
        if "centre" in scfg:
            c = scfg["centre"]
            make_cfg = lambda r: NormalConeConfig(dd=c["dd"], l1d=c["l1d"],
                                                  l2d=c["l2d"], kd=c["kd"], r=r,
                                                  r_min=c.get("r_min", 1))
        else:
            make_cfg = lambda r: normal_cone_from_facet(problem.polytope,
                                                        problem.l2_spec,
                                                        scfg.get("facet", 0), r=r)
        make_table = lambda r: blowup_table(data, make_cfg(r))
    rows = []
    triv = trivial_table()
    rows.append(["trivial", str(j_weight(triv, gamma, 1)),
                 str(df_weight(triv, data, 1)), "", "", "", ""])
    for r in scfg["r_values"]:
        r = Fraction(r)
        table = make_table(r)
        rep = inequality_checks(table, r)
        rows.append([str(r), str(j_weight(table, gamma, r)),
                     str(df_weight(table, data, r)),
                     str(rep["ii_exceptional"]), str(rep["iii_combined"]),
                     str(rep["surface"]), rep["admissible"]])
    write_csv(out / "stability_sweep.csv",
              ["r", "j_weight", "df_weight", "ineq_ii", "ineq_iii",
               "ineq_surface", "admissible"], rows)
    if "weights" in scfg:
        wp = WeightPolynomials.from_json(scfg["weights"])
        chout = []
        for r in scfg["r_values"]:
            res = chow_hilbert_weight(wp, Fraction(r))
            chout.append([str(Fraction(r)), str(res["e_top"]),
                          str(res["j_weight_normalised"])])
        write_csv(out / "chow_weights.csv",
                  ["r", "e_top", "j_weight_normalised"], chout)
    for v in verdicts["verdicts"]:
        mark = "inapplicable" if not v.applicable else ("holds" if v.holds else "fails")
        print(f"stability {v.name}: {mark} (margin {v.margin})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def run_verification(cfg):
    """The invariant battery.  Returns (checks, exit_code) where checks are
    (name, passed, detail, is_health) tuples."""
    problem = build_problem(cfg)
    P = problem.polytope
    rule = problem.rule
    rng = np.random.default_rng(cfg["seed"])
    checks = []

    def add(name, passed, detail, health=False):
        checks.append((name, bool(passed), detail, health))

    # geometry: Ehrhart counts are a degree-2 polynomial with leading vol(P)
    counts = [P.ehrhart_count(k) for k in range(1, 7)]
    d2 = np.diff(counts, 2)
    ok = np.all(d2 == d2[0]) and Fraction(int(d2[0]), 2) == P.volume()
    add("ehrhart_polynomial", ok, f"counts k=1..6: {counts}")

    from .geometry import intersection_numbers
    tab = intersection_numbers(P, problem.l2_spec)
    add("intersection_volume", tab["L1L1"] == 2 * P.volume(),
        f"L1^2 = {tab['L1L1']}")

    # calibration consistency for random admissible potentials
    kcal = min(3, max(cfg["k_list"]))
    q = problem.quantisation(kcal)
    worst = 0.0
    for H in _random_diag_forms(q, rng, 3):
        u = q.fs_map(H)
        total = rule.integrate(volume_density(np.asarray(u.hessian(rule.nodes)) * kcal)) * rule.c_vol
        worst = max(worst, abs(total / (kcal ** P.dim * q.V) - 1.0))
    add("calibration_consistency", worst < 1e-6, f"rel defect {worst:.2e}",
        health=True)

    # gamma two ways: quadrature vs intersection numbers
    mixv = mixed_density(np.asarray(problem.u_ref.hessian(rule.nodes)),
                         np.asarray(problem.chi.hessian(rule.nodes)))
    g_quad = rule.integrate(mixv) * rule.c_vol / q.V
    add("gamma_two_ways", abs(g_quad / problem.gamma - 1.0) < 1e-6,
        f"quadrature {g_quad:.10f} vs exact {problem.gamma}", health=True)

    # trace identity at the largest requested level: the primary health check
    kmax = max(cfg["k_list"])
    qmax = problem.quantisation(kmax)
    health = max(qmax.trace_identity_residual(H)
                 for H in _random_diag_forms(qmax, rng, 3))
    add("trace_identity", health < cfg["health_tol"],
        f"k={kmax} relative residual {health:.2e}", health=True)

    # moment map: exactly traceless, scale invariant metric distances
    H = _random_diag_forms(qmax, rng, 1)[0]
    mu = qmax.mu0(H)
    add("mu0_traceless", abs(np.trace(mu)) < 1e-12 * qmax.n_plus_1,
        f"tr mu0 = {np.trace(mu):.2e}")

    # fs scaling invariance: D^2 u_{cH} = D^2 u_H
    u1 = qmax.fs_map(H)
    u2 = qmax.fs_map(HermitianForm(H.matrix * 4.2, kmax))
    dh = np.max(np.abs(np.asarray(u1.hessian(rule.nodes[:50]))
                       - np.asarray(u2.hessian(rule.nodes[:50]))))
    add("fs_scaling_invariance", dh < 1e-12, f"Hessian shift {dh:.2e}")

    # nef monotonicity on the Mori generators
    from .geometry import line_bundle_class, mori_generators
    gens = mori_generators(P)
    c1 = line_bundle_class(P, "L1")
    c2 = line_bundle_class(P, problem.l2_spec)
    nef_l2 = all(g.pair(c2) >= 0 for g in gens)
    nef_sum = all(g.pair(c2 + c1) >= 0 for g in gens)
    add("nef_monotone", (not nef_l2) or nef_sum, f"L2 nef: {nef_l2}")

    # stability identities on the default centre
    try:
        data = problem.class_data()
        cfg1 = normal_cone_from_facet(P, problem.l2_spec, 0, r=1)
        table = blowup_table(data, cfg1)
        ok = True
        for r in (1, 2, 5):
            df = df_weight(table, data, r)  # includes the decomposition identity
            ok = ok and (j_weight(trivial_table(), data.gamma(), r) == 0)
        add("stability_identities", ok, "DF decomposition and E=0 zeroes")
    except StabilityError as exc:
        add("stability_identities", False, str(exc))

    any_fail = any(not p for _, p, _, _ in checks)
    health_fail = any(h and not p for _, p, _, h in checks)
    code = EXIT_HEALTH if health_fail else (EXIT_FAILURE if any_fail else EXIT_OK)
    return checks, code


def cmd_verify(cfg):
    checks, code = run_verification(cfg)
    for name, passed, detail, health in checks:
        tag = "PASS" if passed else ("FAIL(health)" if health else "FAIL")
        print(f"{tag:12s} {name}: {detail}")
    print(f"verify: {sum(p for _, p, _, _ in checks)}/{len(checks)} checks passed")
    return code


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def make_parser():
    parser = argparse.ArgumentParser(
        prog="jbalance",
        description="Balanced-metric quantisation of the J-flow on toric surfaces")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("balance", cmd_balance), ("flow", cmd_flow),
                     ("stability", cmd_stability), ("verify", cmd_verify)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--k-list", default=None,
                       help="comma separated levels, e.g. 3,4,5")
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--resolution", type=int, default=None)
        p.add_argument("--problem", default=None,
                       help=f"preset name; options: {problem_names()}")
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    overrides = {"out": args.out, "seed": args.seed, "tol": args.tol,
                 "resolution": args.resolution, "problem": args.problem}
    if args.k_list:
        try:
            overrides["k_list"] = [int(s) for s in args.k_list.split(",")]
        except ValueError:
            print("invalid --k-list", file=sys.stderr)
            return EXIT_USAGE
    try:
        cfg = load_config(args.config, overrides)
        return args.func(cfg)
    except (ConfigError, GeometryError, StabilityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FlowError as exc:
        print(f"flow failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except QuantisationError as exc:
        print(f"quadrature/positivity failure: {exc}", file=sys.stderr)
        return EXIT_HEALTH


if __name__ == "__main__":
    sys.exit(main())
