"""Command-line interface: ``porous-crn {parse,equilibrium,simulate,verify-truncation,verify-inequalities}``.

Exit codes: 0 ok, 1 parse or configuration error, 2 i/o error,
3 infeasible equilibrium problem, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .equilibrium import (EquilibriumError, check_complex_balance, conservation_basis,
                          detect_boundary_equilibria, face_meets_class, solve_equilibrium)
from .network import (DiffusionSpec, ParseError, load_network, parse_network, psi,
                       wegscheider_matrix)
from .solver import Grid, SimConfig, SolverError, StabilityError, initial_profile, run
from .truncation import verify_key_estimate, verify_vanishing_on_compacts

EXIT_OK, EXIT_PARSE, EXIT_IO, EXIT_INFEASIBLE, EXIT_INVARIANT = 0, 1, 2, 3, 4

MASS_TOL = {"imex-newton": 1e-8, "explicit": 1e-10}
ENTROPY_TOL = 1e-8
NEG_TOL = 1e-13


class ConfigError(ValueError):
    pass


@dataclass
class RunManifest:
    run_id: str
    config_digest: str
    outputs: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {"run_id": self.run_id, "config_digest": self.config_digest,
                "outputs": self.outputs, "wall_time": self.wall_time}


def _dump(obj, fh=None):
    text = json.dumps(obj, indent=2, default=_json_default)
    if fh is None:
        print(text)
    else:
        fh.write(text + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _matrix_str(A) -> str:
    A = np.atleast_2d(A)
    if A.size == 0:
        return "  (empty)"
    return "\n".join("  [" + ", ".join(f"{x:g}" for x in row) + "]" for row in A)


def _out_root(arg) -> Path:
    return Path(os.environ.get("SIM_OUT_DIR") or arg or "runs")


# --------------------------------------------------------------------------
# parse

def cmd_parse(args) -> int:
    net = load_network(args.network_file)
    basis = conservation_basis(net)
    print("species: " + ", ".join(net.species))
    print("reactions:")
    for line in str(net).splitlines():
        print("  " + line)
    print("W =")
    print(_matrix_str(wegscheider_matrix(net)))
    print(f"m = {basis.m}")
    print("Q =")
    print(_matrix_str(basis.Q) if basis.m else "  (empty)")
    cb = check_complex_balance(net, np.ones(net.n_species))
    status = "complex balanced" if cb <= 1e-12 else f"not complex balanced (residual {cb:g})"
    print(f"at u = 1: {status}")
    return EXIT_OK


# --------------------------------------------------------------------------
# equilibrium

def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_equilibrium(args) -> int:
    net = load_network(args.network_file)
    basis = conservation_basis(net)
    M = _float_list(args.M) if args.M else []
    if len(M) != basis.m:
        raise ConfigError(f"network has {basis.m} conservation laws but {len(M)} masses were given")
    boundary = detect_boundary_equilibria(net, basis)
    report = {"species": list(net.species),
              "boundary_equilibria": [dict(b.to_json(), may_meet_class=face_meets_class(b, basis, M, args.volume))
                                      for b in boundary]}
    try:
        eq = solve_equilibrium(net, basis, M, domain_volume=args.volume)
    except EquilibriumError as exc:
        report["error"] = str(exc)
        report["last_iterate"] = None if exc.u is None else np.asarray(exc.u).tolist()
        report["cb_residual"] = exc.cb_residual
        report["class_residual"] = exc.class_residual
        _dump(report, sys.stderr)
        return EXIT_INFEASIBLE
    report["equilibrium"] = eq.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            _dump(report, fh)
    else:
        _dump(report)
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate

CONFIG_KEYS = {"network_file", "d", "m", "eps", "N", "length", "dt", "t_end", "scheme",
               "initial", "seed", "trace_every", "regime", "newton_tol", "newton_max_iter"}


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("network_file", "d", "m", "N", "dt", "t_end", "initial"):
        if key not in cfg:
            raise ConfigError(f"config is missing {key!r}")
    nf = Path(cfg["network_file"])
    if not nf.is_absolute():
        cfg["network_file"] = str(Path(path).resolve().parent / nf)
    return cfg


def build_run(cfg: dict):
    """Turn a config dict into ``(net, SimConfig, initial field)``."""
    net = load_network(cfg["network_file"])
    I = net.n_species
    try:
        diff = DiffusionSpec(d=cfg["d"], m=cfg["m"], regime=cfg.get("regime", "renormalised"))
        if len(diff.d) != I:
            raise ValueError(f"d and m need {I} entries, one per species")
        diff.check_regime(net)
        grid = Grid(int(cfg["N"]), float(cfg.get("length", 1.0)))
        sim = SimConfig(grid=grid, diffusion=diff, dt=float(cfg["dt"]), t_end=float(cfg["t_end"]),
                        eps=float(cfg.get("eps", 0.0)), scheme=cfg.get("scheme", "imex-newton"),
                        newton_tol=float(cfg.get("newton_tol", 1e-12)),
                        newton_max_iter=int(cfg.get("newton_max_iter", 50)),
                        trace_every=int(cfg.get("trace_every", 1)))
        rng = np.random.default_rng(cfg.get("seed", 0))
        init = cfg["initial"]
        if isinstance(init, dict):
            missing = [s for s in net.species if s not in init]
            if missing:
                raise ValueError(f"initial data missing for species {missing}")
            rows = [initial_profile(init[s], grid, rng) for s in net.species]
        elif isinstance(init, list) and len(init) == I:
            rows = [initial_profile(p, grid, rng) for p in init]
        else:
            raise ValueError("initial must map every species to a profile")
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return net, sim, np.vstack(rows)


def check_invariants(trace, final, scheme) -> list:
    problems = []
    scale = 1.0 + float(np.max(np.abs(trace.masses[0]))) if trace.masses[0].size else 1.0
    drift = trace.mass_drift()
    if drift > MASS_TOL[scheme] * scale:
        problems.append(f"mass drift {drift:.3e} exceeds {MASS_TOL[scheme]:g}")
    rise = trace.entropy_increase()
    if rise > ENTROPY_TOL:
        problems.append(f"relative entropy increased by {rise:.3e}")
    if np.min(final) < -NEG_TOL:
        problems.append(f"negative concentration {np.min(final):.3e}")
    return problems


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def simulate_one(cfg: dict, out_root: Path, label: str = ""):
    """Run one simulation and write its artifacts. Returns ``(manifest, decay, problems)``."""
    start = time.perf_counter()
    net, sim, u0 = build_run(cfg)
    basis = conservation_basis(net)
    M = basis.masses(u0, sim.grid.h)
    eq = solve_equilibrium(net, basis, M, domain_volume=sim.grid.length)
    trace, final = run(u0, sim, net, eq, basis)
    digest = config_digest(cfg)
    run_id = f"{digest[:12]}{'-' + label if label else ''}-{uuid.uuid4().hex[:8]}"
    out = out_root / run_id
    out.mkdir(parents=True, exist_ok=False)
    problems = check_invariants(trace, final, sim.scheme)
    final = np.maximum(final, 0.0)

    trace_path = out / "trace.csv"
    trace.to_csv(trace_path)
    field_path = out / "final_field.csv"
    with open(field_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"u_{i + 1}" for i in range(final.shape[0])])
        for j, x in enumerate(sim.grid.x):
            w.writerow([repr(float(x))] + [repr(float(v)) for v in final[:, j]])
    try:
        decay = dg.fit_decay(trace, u_inf=eq.u_inf, alpha=max(1.0, max(sim.diffusion.m)))
        decay_json = decay.to_json()
    except dg.InsufficientDataError as exc:
        decay = None
        decay_json = {"error": str(exc)}
    decay_json["equilibrium"] = eq.u_inf.tolist()
    decay_json["invariant_violations"] = problems
    decay_path = out / "decay.json"
    with open(decay_path, "w") as fh:
        _dump(decay_json, fh)
    manifest = RunManifest(run_id=run_id, config_digest=digest,
                           outputs={"trace": str(trace_path), "final_field": str(field_path),
                                    "decay": str(decay_path)})
    manifest.wall_time = time.perf_counter() - start
    with open(out / "manifest.json", "w") as fh:
        _dump(manifest.to_json(), fh)
    return manifest, decay, problems


def _sweep_worker(job):
    cfg, root, label = job
    manifest, decay, problems = simulate_one(cfg, Path(root), label)
    return manifest.to_json(), (None if decay is None else decay.lam), problems


def _parse_sweep(spec):
    if "=" not in spec:
        raise ConfigError("--sweep expects KEY=v1,v2,...")
    key, values = spec.split("=", 1)
    key = key.strip()
    if key not in ("eps", "dt", "N"):
        raise ConfigError(f"cannot sweep over {key!r}")
    vals = _float_list(values)
    if key == "N":
        vals = [int(v) for v in vals]
    return key, vals


def cmd_simulate(args) -> int:
    cfg = load_config(args.config_file)
    root = _out_root(args.out)
    if not args.sweep:
        manifest, decay, problems = simulate_one(cfg, root)
        print(json.dumps(manifest.to_json()))
        if problems:
            for p in problems:
                print(f"invariant violation: {p}", file=sys.stderr)
            return EXIT_INVARIANT
        return EXIT_OK

    key, values = _parse_sweep(args.sweep)
    jobs = [(dict(cfg, **{key: v}), str(root), f"{key}{v}") for v in values]
    build_run(cfg)  # surface config errors before launching workers
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    lams = [r[1] for r in results]
    good = [x for x in lams if x is not None]
    spread = (max(good) - min(good)) / float(np.mean(good)) if len(good) == len(lams) and good else None
    summary = {"parameter": key, "values": values, "lambda": lams, "lambda_spread": spread,
               "runs": [r[0] for r in results]}
    root.mkdir(parents=True, exist_ok=True)
    sweep_path = root / f"sweep-{config_digest(cfg)[:12]}-{uuid.uuid4().hex[:8]}.json"
    with open(sweep_path, "w") as fh:
        _dump(summary, fh)
    summary["summary_file"] = str(sweep_path)
    print(json.dumps(summary, default=_json_default))
    problems = [p for r in results for p in r[2]]
    if problems:
        for p in problems:
            print(f"invariant violation: {p}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


# --------------------------------------------------------------------------
# verification subcommands

def cmd_verify_truncation(args) -> int:
    m = _float_list(args.m)
    E_list = [2.0**k for k in range(args.max_power + 1)]
    table, summary = [], []
    ok = True
    for i in range(len(m)):
        key = verify_key_estimate(m, i, E_list)
        comp = verify_vanishing_on_compacts(m, i, args.K, seed=args.seed)
        ok &= bool(key["no_growth"])
        table.extend(dict(row, i=i) for row in key["table"])
        summary.append({"i": i, "K": key["K"], "no_growth": key["no_growth"],
                        "compact_rows": comp["rows"], "vanishes_on_compacts": comp["to_zero"]})
    _dump({"m": m, "E": E_list, "table": table, "summary": summary})
    return EXIT_OK if ok else EXIT_INVARIANT


def _write_state(path, u):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"u_{i + 1}" for i in range(u.shape[0])])
        for col in u.T:
            w.writerow([repr(float(v)) for v in col])


def cmd_verify_inequalities(args) -> int:
    rng = np.random.default_rng(args.seed)
    n = args.samples
    N = args.N
    h = 1.0 / N
    kind = args.inequality
    worst, worst_state = np.inf, None
    if kind == "psi":
        x = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), n))
        y = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), n))
        a = psi(x, y) - (np.sqrt(x) - np.sqrt(y)) ** 2
        b = (np.sqrt(x) - np.sqrt(y)) ** 2 - (0.5 * x - y)
        margin = np.minimum(a, b)
        k = int(np.argmin(margin))
        worst, worst_state = float(margin[k]), np.array([[x[k]], [y[k]]])
    elif kind == "lsi":
        for u in dg.sample_positive_fields(n, N, rng):
            for mi in _float_list(args.m):
                r = dg.check_lsi(u, mi, h)
                if r is None:
                    continue
                vals = [v for v in r if v is not None]
                if vals and min(vals) < worst:
                    worst, worst_state = min(vals), u
    else:
        net = load_network(args.network) if args.network else parse_network("A <-> B, kf=1, kb=1")
        basis = conservation_basis(net)
        M = _float_list(args.M) if args.M else [1.0] * basis.m
        eq = solve_equilibrium(net, basis, M)
        fields = dg.sample_class_fields(eq.u_inf, basis, n, N, rng,
                                        max_entropy=10.0 if kind == "eed" else None)
        if kind == "ckp":
            for u in fields:
                r = dg.check_ckp(u, eq.u_inf, basis, h)
                if r < worst:
                    worst, worst_state = r, u
        else:
            m = _float_list(args.m)
            if len(m) == 1:
                m = m * net.n_species
            diff = DiffusionSpec(d=[1.0] * net.n_species, m=m, regime="weak" if max(m) >= 2 else "renormalised")
            for u in fields:
                _, r = dg.check_eed(net, eq.u_inf, diff, [u], h)
                if r < worst:
                    worst, worst_state = r, u
    state_file = None
    if worst_state is not None:
        root = _out_root(args.out)
        root.mkdir(parents=True, exist_ok=True)
        state_file = str(root / f"argmin-{kind}-seed{args.seed}.csv")
        _write_state(state_file, worst_state)
    _dump({"inequality": kind, "samples": n, "worst_ratio": worst, "argmin_state_file": state_file})
    if kind == "psi":
        return EXIT_OK if worst >= -1e-12 else EXIT_INVARIANT
    return EXIT_OK if worst > 0 else EXIT_INVARIANT


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="porous-crn",
                                description="Mass-action reaction networks with porous-medium diffusion.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("parse", help="print a network summary with W and Q")
    sp.add_argument("network_file")
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("equilibrium", help="solve for the complex balanced equilibrium")
    sp.add_argument("network_file")
    sp.add_argument("--M", default="", help="comma-separated conserved masses")
    sp.add_argument("--volume", type=float, default=1.0)
    sp.add_argument("--out", help="write the JSON report here instead of stdout")
    sp.set_defaults(func=cmd_equilibrium)

    sp = sub.add_parser("simulate", help="run the reaction-diffusion solver")
    sp.add_argument("config_file")
    sp.add_argument("--out", help="output root (SIM_OUT_DIR takes precedence)")
    sp.add_argument("--sweep", help="KEY=v1,v2,... with KEY in eps, dt, N")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("verify-truncation", help="scan the truncation estimates")
    sp.add_argument("--m", default="0.5,1.0,1.5")
    sp.add_argument("--max-power", type=int, default=10)
    sp.add_argument("--K", type=float, default=2.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify_truncation)

    sp = sub.add_parser("verify-inequalities", help="sample the functional inequalities")
    sp.add_argument("--inequality", choices=["psi", "ckp", "lsi", "eed"], required=True)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--N", type=int, default=128)
    sp.add_argument("--m", default="1.0")
    sp.add_argument("--network")
    sp.add_argument("--M", default="")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_verify_inequalities)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except StabilityError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except EquilibriumError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
