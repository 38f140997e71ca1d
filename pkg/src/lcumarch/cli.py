"""Config-driven experiment runner.

    lcumarch solve    --config cfg.toml --out DIR
    lcumarch sweep    --config cfg.toml --out DIR [--threads N]
    lcumarch validate --config cfg.toml
    lcumarch report   --out DIR

Exit codes: 0 ok, 2 config error, 3 infeasible plan, 4 resource ceiling.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import click
import numpy as np

try:
    import tomllib
except ImportError:                    # python < 3.11
    import tomli as tomllib

from . import __version__, qsim
from .analysis import accuracy_gain, fit_power_law, mse
from .fdmodel import FlowProblem, StabilityError, classical_march
from .lcu import (CeilingError, ConvergenceError, choose_delta, truncation_error,
                  truncation_error_bound)
from .linalg import implicit_kappa
from .tmcqc import (MarchPlan, PlanCeilingError, PlanError, Shots, complexity_report, qubit_count,
                    run, run_richardson, success_probability, validate_plan)
from .fdmodel import build_explicit, build_implicit

KINDS = ("SolveOnce", "EpsSweep", "ResolutionSweep", "NoiseSweep", "ShotSweep",
         "TruncationStudy", "ComplexityTable")
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_CEILING = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    problem: FlowProblem
    method: int = 2
    K: int = 4
    eps: list = field(default_factory=lambda: [1e-3])
    pairs: list = field(default_factory=list)             # [(eps1, eps2), ...]
    p_noise: list = field(default_factory=lambda: [0.0])
    shots: list = field(default_factory=list)
    resolutions: list = field(default_factory=list)
    alpha: Optional[float] = None                         # fixes dt per resolution
    dt_list: list = field(default_factory=list)
    p_min: Optional[int] = None
    p_min_list: list = field(default_factory=list)
    methods: list = field(default_factory=list)
    seed: Optional[int] = None
    replicates: int = 1
    weighting: str = "decomposed"
    p_meas: Optional[float] = None
    protocol: str = "stepwise"
    eps_n: float = 1e-10
    term_ceiling: int = 100_000
    name: str = ""
    out: Optional[str] = None

    @property
    def shots_mode(self):
        return bool(self.shots)

    def to_dict(self):
        d = asdict(self)
        d["problem"] = self.problem.to_dict()
        d["pairs"] = [list(p) for p in self.pairs]
        return d


def _need(cond, msg):
    if not cond:
        raise ConfigError(msg)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a parsed TOML table; errors name the offending field."""
    data = dict(data)
    kind = data.pop("kind", None)
    _need(kind in KINDS, f"field 'kind': expected one of {KINDS}, got {kind!r}")
    prob = data.pop("problem", None)
    _need(isinstance(prob, dict), "table [problem] is required")
    runs = dict(data.pop("run", {}))
    for k in ("name", "seed", "out"):
        if k in data:
            runs.setdefault(k, data.pop(k))
    _need(not data, f"unknown top-level keys: {sorted(data)}")
    alpha = runs.get("alpha")
    prob = dict(prob)
    if alpha is not None and "dt" not in prob:
        n, L, D = int(prob.get("ng", 0) or 2), float(prob.get("l", 1.0)), float(prob.get("d", 1.0))
        prob["dt"] = float(alpha) * (L / n) ** 2 / D
    try:
        problem = FlowProblem.from_dict(prob)
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"table [problem]: {e}") from None
    known = {f for f in ExperimentConfig.__dataclass_fields__} - {"kind", "problem"}
    extra = set(runs) - known
    _need(not extra, f"table [run]: unknown keys {sorted(extra)}")
    try:
        cfg = ExperimentConfig(kind, problem, **runs)
    except TypeError as e:
        raise ConfigError(f"table [run]: {e}") from None
    cfg.pairs = [tuple(float(x) for x in p) for p in cfg.pairs]
    for p in cfg.pairs:
        _need(len(p) == 2 and p[0] > p[1] > 0, f"field 'run.pairs': need eps1 > eps2 > 0, got {p}")
    _need(all(e > 0 for e in cfg.eps), "field 'run.eps': values must be positive")
    _need(cfg.method in range(1, 7), f"field 'run.method': expected 1..6, got {cfg.method}")
    _need(cfg.K in (2, 4), f"field 'run.K': expected 2 or 4, got {cfg.K}")
    _need(cfg.weighting in ("unit", "decomposed"), "field 'run.weighting': unit or decomposed")
    _need(cfg.replicates >= 1, "field 'run.replicates': must be >= 1")
    need_list = {"EpsSweep": ("eps",), "ResolutionSweep": ("resolutions", "pairs"),
                 "NoiseSweep": ("p_noise", "pairs", "shots"), "ShotSweep": ("shots", "pairs"),
                 "TruncationStudy": ("p_min_list",), "ComplexityTable": ("methods",)}
    for k in need_list.get(kind, ()):
        _need(len(getattr(cfg, k)) > 0, f"field 'run.{k}': must be nonempty for {kind}")
    if kind == "ResolutionSweep":
        _need(alpha is not None or "dt" in prob, "ResolutionSweep needs run.alpha or problem.dt")
    if cfg.shots_mode or kind in ("NoiseSweep", "ShotSweep"):
        _need(cfg.seed is not None, "field 'seed': mandatory when shots are sampled")
    _need(all(int(s) >= 1 for s in cfg.shots), "field 'run.shots': values must be >= 1")
    cfg.shots = [int(s) for s in cfg.shots]
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    return parse_config(data)


def bundled_config(name):
    """Path of a config shipped with the package (e.g. 'fig4c')."""
    here = os.path.join(os.path.dirname(__file__), "configs")
    p = os.path.join(here, name if name.endswith(".toml") else name + ".toml")
    if not os.path.exists(p):
        raise FileNotFoundError(p)
    return p


def bundled_configs():
    here = os.path.join(os.path.dirname(__file__), "configs")
    return sorted(f[:-5] for f in os.listdir(here) if f.endswith(".toml"))


# ---------------------------------------------------------------- grid points


def _problem_for(cfg, ng=None, dt=None):
    p = cfg.problem
    if ng is not None:
        p = p.with_(ng=int(ng))
        if cfg.alpha is not None:
            p = p.with_(dt=cfg.alpha * p.dx ** 2 / p.d)
    if dt is not None:
        p = p.with_(dt=float(dt))
    return p


def _mode(cfg, shots, p_noise, seed):
    if not shots:
        return None
    nm = qsim.NoiseModel.uniform(p_noise, seed, cfg.weighting) if p_noise else None
    if nm is not None and cfg.p_meas is not None:
        nm = qsim.NoiseModel(p_noise, cfg.p_meas, p_noise, seed, cfg.weighting)
    return Shots(int(shots), nm, int(seed), cfg.protocol)


def _plan(cfg, problem, eps, mode=None, method=None, p_min=None):
    return MarchPlan(method or cfg.method, problem, float(eps), cfg.K,
                     p_min if p_min is not None else cfg.p_min, mode, None, cfg.term_ceiling, cfg.eps_n)


def _classify(exc):
    if isinstance(exc, (PlanCeilingError, CeilingError)):
        return EXIT_CEILING
    return EXIT_INFEASIBLE


_FAILURES = (PlanError, StabilityError, ConvergenceError, CeilingError, ZeroDivisionError)


def _guard(fn, *args):
    """Run fn; failures become a (status, code) tagged result instead of raising."""
    try:
        return {"status": "ok", **fn(*args)}
    except _FAILURES as e:
        return {"status": f"failed: {e}", "code": _classify(e)}


def _f(x):
    return None if x is None else float(x)


def _point_single(cfg, problem, eps, shots, p_noise, seed):
    plan = _plan(cfg, problem, eps, _mode(cfg, shots, p_noise, seed))
    r = run(plan)
    return {"result": r, "mse_classical": _f(r.mse_classical[-1]),
            "mse_analytical": _f(r.mse_analytical[-1]) if r.mse_analytical is not None else None,
            "p_succ_total": float(r.p_succ_total), "wall_s": r.info.get("wall_s")}


def _point_pair(cfg, problem, pair, shots, p_noise, seed):
    plan = _plan(cfg, problem, pair[0], _mode(cfg, shots, p_noise, seed))
    t0 = time.perf_counter()
    ex, r1, r2 = run_richardson(plan, *pair)
    an = ex.mse_analytical is not None
    key = "mse_analytical" if an else "mse_classical"
    m1, m2, me = (getattr(r, key) for r in (r1, r2, ex))
    return {"result": ex, "reference": "analytical" if an else "classical",
            "mse_eps1": float(m1[-1]), "mse_eps2": float(m2[-1]), "mse_extrapolated": float(me[-1]),
            "series_eps1": m1.tolist(), "series_eps2": m2.tolist(), "series_extrapolated": me.tolist(),
            "gain": float(accuracy_gain(m2[-1], me[-1])) if m2[-1] > 0 else None,
            "wall_s": time.perf_counter() - t0}


def _pmap(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda a: _guard(fn, *a), items))
    return [_guard(fn, *a) for a in items]


# ---------------------------------------------------------------- experiments


def _provenance(cfg, shots=None, p_noise=0.0):
    if not shots:
        return "exact"
    return "noisy" if p_noise else "shots"


def _seed_of(cfg, rep):
    return int(np.random.SeedSequence([int(cfg.seed or 0), rep]).generate_state(1)[0])


def run_experiment(cfg: ExperimentConfig, threads=1):
    """Execute the grid; returns (report dict, tables {name: (header, rows)})."""
    kind = cfg.kind
    tables = {}
    runs = []
    fits = {}
    t0 = time.perf_counter()
    p0 = cfg.problem
    if kind == "SolveOnce":
        shots = cfg.shots[0] if cfg.shots else 0
        pn = cfg.p_noise[0] if cfg.p_noise else 0.0
        if cfg.pairs:
            out = _guard(_point_pair, cfg, p0, cfg.pairs[0], shots, pn, cfg.seed or 0)
        else:
            out = _guard(_point_single, cfg, p0, cfg.eps[0], shots, pn, cfg.seed or 0)
        if out["status"] != "ok":
            return _finish(cfg, tables, runs, fits, t0, failed=out)
        r = out.pop("result")
        an = r.mse_analytical
        rows = []
        for k, s in enumerate(r.steps):
            rows.append([int(s)] + [float(v) for v in np.real(r.fields[k])] +
                        [float(r.mse_classical[k]), float(an[k]) if an is not None else ""])
        hdr = ["step"] + [f"u_{i}" for i in range(r.fields.shape[1])] + ["mse_classical", "mse_analytical"]
        tables["trajectory"] = (hdr, rows)
        summ = r.summary()
        summ.update({k: v for k, v in out.items() if not k.startswith("series")})
        summ["provenance"] = _provenance(cfg, shots, pn)
        runs.append(summ)
    elif kind == "EpsSweep":
        shots = cfg.shots[0] if cfg.shots else 0
        pn = cfg.p_noise[0] if cfg.p_noise else 0.0
        items = [(cfg, p0, e, shots, pn, cfg.seed or 0) for e in cfg.eps]
        res = _pmap(_point_single, items, threads)
        rows = []
        for e, o in zip(cfg.eps, res):
            o.pop("result", None)
            rows.append([float(e), "single", o.get("mse_classical", ""), _blank(o.get("mse_analytical")),
                         o.get("p_succ_total", ""), _provenance(cfg, shots, pn), o["status"]])
            runs.append({"epsilon": float(e), **o})
        pres = _pmap(_point_pair, [(cfg, p0, pr, shots, pn, cfg.seed or 0) for pr in cfg.pairs], threads)
        for pr, o in zip(cfg.pairs, pres):
            o.pop("result", None)
            rows.append([float(pr[1]), f"extrapolated({pr[0]:g},{pr[1]:g})", "", _blank(o.get("mse_extrapolated")),
                         "", _provenance(cfg, shots, pn), o["status"]])
            runs.append({"pair": list(pr), **_strip_series(o)})
        tables["mse_vs_eps"] = (["epsilon", "kind", "mse_classical", "mse_analytical", "p_succ_total",
                                 "provenance", "status"], rows)
    elif kind == "ResolutionSweep":
        items = [(cfg, _problem_for(cfg, ng=n), pr, 0, 0.0, 0) for n in cfg.resolutions for pr in cfg.pairs]
        res = _pmap(_point_pair, items, threads)
        rows = []
        for it, o in zip(items, res):
            o.pop("result", None)
            pb, pr = it[1], it[2]
            rows.append([pb.ng, pr[0], pr[1], _blank(o.get("mse_eps1")), _blank(o.get("mse_eps2")),
                         _blank(o.get("mse_extrapolated")),
                         _blank(None if o.get("gain") is None else 100 * o["gain"]), "exact", o["status"]])
            runs.append({"ng": pb.ng, "pair": list(pr), **_strip_series(o)})
        tables["mse_vs_resolution"] = (["ng", "eps1", "eps2", "mse_eps1", "mse_eps2", "mse_extrapolated",
                                        "gain_pct", "provenance", "status"], rows)
    elif kind == "NoiseSweep":
        shots = cfg.shots[0]
        pr = cfg.pairs[0]
        items = [(cfg, p0, pr, shots, float(pn), _seed_of(cfg, r)) for pn in cfg.p_noise
                 for r in range(cfg.replicates)]
        res = _pmap(_point_pair, items, threads)
        rows = []
        for it, o in zip(items, res):
            o.pop("result", None)
            pn, sd = it[4], it[5]
            ser = o.get("series_extrapolated")
            if ser is None:
                rows.append([pn, sd, "", "", "", "", _provenance(cfg, shots, pn), o["status"]])
            else:
                for k, v in enumerate(ser):
                    rows.append([pn, sd, k, v, o["series_eps1"][k], o["series_eps2"][k],
                                 _provenance(cfg, shots, pn), o["status"]])
            runs.append({"p_noise": pn, "seed": sd, **o})
        tables["mse_vs_noise"] = (["p_noise", "seed", "step", "mse_extrapolated", "mse_eps1", "mse_eps2",
                                   "provenance", "status"], rows)
        for pn in cfg.p_noise:
            ser = [o["series_extrapolated"] for it, o in zip(items, res) if it[4] == pn and o["status"] == "ok"]
            if ser:
                m = np.mean(ser, axis=0)
                fits[f"p_noise={pn:g}"] = {"first_step_mse": float(m[1]), "final_mse": float(m[-1]),
                                          "ratio_final_first": float(m[-1] / m[1]) if m[1] > 0 else None}
    elif kind == "ShotSweep":
        # the un-extrapolated columns come from standalone marches at eps1 and
        # eps2, not from the per-step components of the extrapolated march
        pr = cfg.pairs[0]
        pn = cfg.p_noise[0] if cfg.p_noise else 0.0
        grid = [(n, _seed_of(cfg, r)) for n in cfg.shots for r in range(cfg.replicates)]
        res = _pmap(_point_pair, [(cfg, p0, pr, n, pn, sd) for n, sd in grid], threads)
        single = {e: _pmap(_point_single, [(cfg, p0, e, n, pn, sd) for n, sd in grid], threads) for e in pr}
        ref = "mse_analytical" if p0.bc == "periodic" and p0.ic == "delta" else "mse_classical"
        rows = []
        for i, ((n, sd), o) in enumerate(zip(grid, res)):
            o.pop("result", None)
            s1, s2 = (single[e][i] for e in pr)
            for s in (s1, s2):
                s.pop("result", None)
            o["mse_single_eps1"] = s1.get(ref)
            o["mse_single_eps2"] = s2.get(ref)
            status = next((x["status"] for x in (o, s1, s2) if x["status"] != "ok"), "ok")
            rows.append([n, sd, _blank(o.get("mse_extrapolated")), _blank(o["mse_single_eps1"]),
                         _blank(o["mse_single_eps2"]), _provenance(cfg, n, pn), status])
            runs.append({"shots": n, "seed": sd, **_strip_series(o), "status": status})
        tables["mse_vs_shots"] = (["shots", "seed", "mse_extrapolated", "mse_eps1", "mse_eps2",
                                   "provenance", "status"], rows)
        for col, key in ((2, "mse_extrapolated"), (3, "mse_eps1"), (4, "mse_eps2")):
            xs, ys = [], []
            for n in cfg.shots:
                v = [r[col] for r in rows if r[0] == n and r[-1] == "ok"]
                if v:
                    xs.append(n)
                    ys.append(float(np.mean(v)))
            if len(xs) >= 3 and all(y > 0 for y in ys):
                fits[key] = fit_power_law(xs, ys).to_dict()
    elif kind == "TruncationStudy":
        dts = cfg.dt_list or [p0.dt]
        rows = []
        for dt in dts:
            pb = _problem_for(cfg, dt=dt)
            M = np.eye(pb.ng) - build_implicit(pb)
            kap = implicit_kappa(M)
            for P in cfg.p_min_list:
                try:
                    b = truncation_error_bound(M, int(P))
                    err = truncation_error(M, int(P))
                    rows.append([kap, int(P), pb.dt, err, b["bound"], b["norm"], "ok"])
                except _FAILURES as e:
                    rows.append([kap, int(P), pb.dt, "", "", "", f"failed: {e}"])
        tables["truncation_vs_kappa"] = (["kappa", "p_min", "dt", "error", "bound", "norm_m", "status"], rows)
    elif kind == "ComplexityTable":
        rows = []
        for m in cfg.methods:
            plan = _plan(cfg, p0, cfg.eps[0], method=int(m))
            try:
                validate_plan(plan)
                c = complexity_report(plan)
                tr = classical_march(p0, plan.scheme)
                ps, ns, eta = success_probability(plan, tr)
                rows.append([int(m), c["name"], c["lcu_depth"], _blank(c["qubits_table"]), c["qubits_circuit"],
                             _blank(c["p_min"]), c["gate_complexity_gu"], c["classical_cost"],
                             _blank(c["kappa"]), ps, ns, eta, "ok"])
            except _FAILURES as e:
                rows.append([int(m)] + [""] * 11 + [f"failed: {e}"])
        tables["complexity_table"] = (["method", "name", "lcu_depth", "qubits_table", "qubits_circuit", "p_min",
                                       "gate_complexity_gu", "classical_cost", "kappa", "p_succ",
                                       "shots_required", "eta", "status"], rows)
    return _finish(cfg, tables, runs, fits, t0)


def _blank(v):
    return "" if v is None else v


def _strip_series(o):
    return {k: v for k, v in o.items() if not k.startswith("series")}


def _finish(cfg, tables, runs, fits, t0, failed=None):
    report = {"version": __version__, "config": cfg.to_dict(),
              "units": {"mse": "mean over grid points of squared difference of rescaled fields",
                        "shots": "circuit executions per LCU block",
                        "p_noise": "bit-flip probability per gate location",
                        "wall_s": "seconds"},
              "runs": runs, "fits": fits, "tables": sorted(tables), "wall_s": time.perf_counter() - t0}
    if failed is not None:
        report["failed"] = failed["status"]
        report["exit_code"] = failed["code"]
    else:
        statuses = [r[-1] for hdr, rows in tables.values() if hdr[-1] == "status" for r in rows]
        bad = [s for s in statuses if s != "ok"]
        report["exit_code"] = EXIT_OK
        if statuses and len(bad) == len(statuses):
            report["exit_code"] = EXIT_CEILING if all("ceiling" in s or "qubit cap" in s for s in bad) \
                else EXIT_INFEASIBLE
            report["failed"] = bad[0]
    return report, tables


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_outputs(report, tables, out_dir, fmt="csv"):
    os.makedirs(out_dir, exist_ok=True)
    for name, (hdr, rows) in tables.items():
        if fmt == "csv":
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(hdr)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
            with open(os.path.join(out_dir, name + ".csv"), "w", newline="") as fh:
                fh.write(buf.getvalue())
        else:
            with open(os.path.join(out_dir, name + ".json"), "w") as fh:
                json.dump([dict(zip(hdr, r)) for r in rows], fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# ---------------------------------------------------------------- validation


def diagnose(cfg: ExperimentConfig):
    """Dry-run checks per plan of the grid. Never executes circuits."""
    out = []
    problems = [cfg.problem]
    if cfg.resolutions:
        problems = [_problem_for(cfg, ng=n) for n in cfg.resolutions]
    methods = [int(m) for m in cfg.methods] or [cfg.method]
    eps_list = sorted({*cfg.eps, *(e for pr in cfg.pairs for e in pr)}, reverse=True)
    for pb in problems:
        for m in methods:
            for e in eps_list:
                plan = _plan(cfg, pb, e, method=m)
                d = {"ng": pb.ng, "method": m, "epsilon": e, "alpha": pb.alpha, "chi": pb.chi,
                     "stable": pb.alpha <= 0.5 + 1e-12, "peclet_cell": pb.c * pb.dx / pb.d if pb.d else math.inf,
                     "chi_le_alpha": pb.chi <= pb.alpha + 1e-15}
                A = build_explicit(pb) if pb.alpha <= 0.5 else None
                if A is not None:
                    dl, feas = choose_delta(A, e)
                    d.update({"delta_suggested": dl, "scaling_feasible": bool(feas)})
                try:
                    validate_plan(plan)
                    d["qubits"] = qubit_count(plan)
                    tr = classical_march(pb, plan.scheme)
                    ps, ns, _ = success_probability(plan, tr)
                    d["p_succ"] = ps
                    d["shots_required"] = ns
                    d["est_wall_s"] = _wall_estimate(d["qubits"], pb.tau if m in (2, 4) else 1,
                                                     max(cfg.shots or [0]))
                    d["status"] = "feasible"
                except _FAILURES as ex:
                    d["status"] = f"infeasible: {ex}"
                    d["code"] = _classify(ex)
                out.append(d)
    return out


def _wall_estimate(nq, depth, shots):
    # rough: ~40 dense gates per block on 2^nq amplitudes at ~1e-9 s each
    t = 40 * depth * (1 << nq) * 1e-9
    if shots:
        t += depth * shots * 2e-8
    return t


# ---------------------------------------------------------------- click


def _load_or_exit(path, seed):
    try:
        cfg = load_config(path)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def _config_option(f):
    return click.option("--config", "config", required=True, type=click.Path(dir_okay=False),
                        help="TOML experiment file, or the name of a bundled config.")(f)


def _resolve(path):
    if not os.path.exists(path):
        try:
            return bundled_config(path)
        except FileNotFoundError:
            pass
    return path


@click.group()
@click.version_option(__version__)
def main():
    """Time-marching LCU circuits for 1-D advection-diffusion."""


def _execute(config, out, seed, threads, fmt, expect_single):
    cfg = _load_or_exit(_resolve(config), seed)
    if expect_single and cfg.kind != "SolveOnce":
        click.echo(f"config error: solve expects kind = SolveOnce, got {cfg.kind}", err=True)
        sys.exit(EXIT_CONFIG)
    out = out or cfg.out or "out"
    report, tables = run_experiment(cfg, threads)
    write_outputs(report, tables, out, fmt)
    code = report["exit_code"]
    if code:
        click.echo(str(report.get("failed")), err=True)
    else:
        click.echo(f"wrote {', '.join(sorted(tables))} and report.json to {out}")
    sys.exit(code)


@main.command()
@_config_option
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=1)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
def solve(config, out, seed, threads, fmt):
    """Run a single march (kind = SolveOnce)."""
    _execute(config, out, seed, threads, fmt, True)


@main.command()
@_config_option
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=1)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
def sweep(config, out, seed, threads, fmt):
    """Run the parameter grid of any experiment kind."""
    _execute(config, out, seed, threads, fmt, False)


@main.command()
@_config_option
@click.option("--seed", type=int, default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json")
def validate(config, seed, fmt):
    """Dry-run feasibility checks; nothing is simulated."""
    cfg = _load_or_exit(_resolve(config), seed)
    diags = diagnose(cfg)
    if fmt == "json":
        click.echo(json.dumps(diags, indent=1, default=_json_default))
    else:
        keys = sorted({k for d in diags for k in d})
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(keys)
        for d in diags:
            w.writerow([_fmt(d.get(k, "")) for k in keys])
    bad = [d for d in diags if d["status"] != "feasible"]
    if bad:
        click.echo(f"first failure: {bad[0]['status']}", err=True)
        sys.exit(bad[0]["code"])
    sys.exit(EXIT_OK)


@main.command()
@click.option("--out", type=click.Path(file_okay=False, exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
def report(out, fmt):
    """Print a summary of a finished run directory."""
    path = os.path.join(out, "report.json")
    try:
        with open(path) as fh:
            rep = json.load(fh)
    except (OSError, ValueError) as e:
        click.echo(f"config error: cannot read {path}: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    if fmt == "json":
        click.echo(json.dumps({k: rep[k] for k in ("config", "fits", "tables", "exit_code") if k in rep},
                              indent=1, sort_keys=True))
        sys.exit(EXIT_OK)
    cfg = rep.get("config", {})
    click.echo(f"kind: {cfg.get('kind')}  method: {cfg.get('method')}  exit: {rep.get('exit_code')}")
    for name in rep.get("tables", []):
        p = os.path.join(out, name + ".csv")
        if os.path.exists(p):
            with open(p) as fh:
                n = sum(1 for _ in fh) - 1
            click.echo(f"  {name}.csv: {n} rows")
    for k, v in sorted(rep.get("fits", {}).items()):
        click.echo(f"  fit {k}: {v}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
