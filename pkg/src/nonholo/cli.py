"""Command-line scenario runner.

    nonholo list
    nonholo validate <file|builtin>
    nonholo run <file|builtin> [--formulation X] [--dt D] [--t-end T] [--out DIR] [--jobs N]

Outputs go to ``--out``, else ``$NONHOLO_OUT``, else ``./nonholo_out``, in
a sub-directory named after the scenario.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .affine import AffineResult
from .constraints import OffManifoldError
from .integrate import SimulationResult, Status
from .scenarios import (
    BUILTINS,
    Scenario,
    ScenarioError,
    formulations_for,
    list_scenarios,
    load_builtin,
    load_file,
    run_single,
)

logger = logging.getLogger("nonholo")

ENV_OUT = "NONHOLO_OUT"
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STATUS = {
    Status.COMPLETED: 0,
    Status.SINGULAR_SYSTEM: 3,
    Status.DRIFT_EXCEEDED: 4,
    Status.EFFECTIVE_MASS_SINGULAR: 5,
}


# ---------------------------------------------------------------------------
# artifacts


def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    return "%.17g" % x


def trajectory_csv(res: SimulationResult, n: int, m: int) -> str:
    """Columns t, q..., v..., lambda..., E_L, E_M, reaction_power, residual_max."""
    head = ["t"] + [f"q{i}" for i in range(n)] + [f"v{i}" for i in range(n)] + [f"lambda{a}" for a in range(m)]
    head += ["E_L", "E_M", "reaction_power", "residual_max"]
    lines = [",".join(head)]
    for s in res.samples:
        lam = s.lam if len(s.lam) == m else np.zeros(m)
        row = [s.t, *s.q, *s.v, *lam, s.E_L, s.E_M, s.reaction_power, s.residual_max]
        lines.append(",".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def affine_csv(res: AffineResult) -> str:
    n = res.G.shape[1]
    head = ["t"] + [f"G{i}{j}" for i in range(n) for j in range(n)] + ["T_int", "E_total", "symmetry_residual"]
    lines = [",".join(head)]
    for k in range(len(res.t)):
        row = [res.t[k], *res.G[k].ravel(), res.T_int[k], res.energy[k], res.symmetry_residual[k]]
        lines.append(",".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


@dataclass
class RunSummary:
    formulation: str
    status: str
    message: str
    samples: int
    t_final: float
    terminal_q: List[float]
    terminal_v: List[float]
    max_drift: float
    energy_drift: float
    max_reaction_power: float


@dataclass
class ComparisonReport:
    scenario: str
    reference: str
    gap_quantity: str
    gap_max: Dict[str, float] = field(default_factory=dict)
    gap_final: Dict[str, float] = field(default_factory=dict)
    runs: Dict[str, RunSummary] = field(default_factory=dict)
    non_equivalent: Optional[bool] = None
    gaps_strictly_decreasing: Optional[bool] = None


def _sim_of(res):
    return res.sim if isinstance(res, AffineResult) else res


def summarize(which: str, res) -> RunSummary:
    sim = _sim_of(res)
    last = sim.samples[-1] if sim.samples else None
    rp = np.abs(sim.reaction_power) if sim.samples else np.zeros(1)
    return RunSummary(
        formulation=which,
        status=sim.status.value,
        message=sim.message,
        samples=len(sim.samples),
        t_final=float(last.t) if last else 0.0,
        terminal_q=[float(x) for x in last.q] if last else [],
        terminal_v=[float(x) for x in last.v] if last else [],
        max_drift=float(sim.max_drift),
        energy_drift=float(sim.energy_drift),
        max_reaction_power=float(np.max(rp, initial=0.0)),
    )


def gap_series(a, b):
    """Per-sample distance between two runs: |q_a - q_b| or ||G_a - G_b||_F."""
    if isinstance(a, AffineResult):
        k = min(len(a.t), len(b.t))
        t = a.t[:k]
        if not np.allclose(t, b.t[:k]):
            raise ValueError("runs are on different time grids")
        return t, np.linalg.norm((a.G[:k] - b.G[:k]).reshape(k, -1), axis=1)
    k = min(len(a.samples), len(b.samples))
    t = a.t[:k]
    if not np.allclose(t, b.t[:k]):
        raise ValueError("runs are on different time grids")
    return t, np.linalg.norm(a.q[:k] - b.q[:k], axis=1)


NON_EQUIVALENCE_THRESHOLD = 1e-3


def compare(sc: Scenario, results: Dict[str, object]):
    """ComparisonReport plus the gap series (name -> (t, gap))."""
    names = list(results)
    ref = names[0]
    affine = isinstance(results[ref], AffineResult)
    rep = ComparisonReport(sc.name, ref, "G (Frobenius)" if affine else "q (Euclidean)")
    for name, res in results.items():
        rep.runs[name] = summarize(name, res)
    series = {}
    for other in names[1:]:
        t, g = gap_series(results[ref], results[other])
        series[other] = (t, g)
        rep.gap_max[other] = float(np.max(g, initial=0.0))
        rep.gap_final[other] = float(g[-1]) if len(g) else 0.0
    if sc.formulation == "both" and len(names) == 2:
        rep.non_equivalent = rep.gap_max[names[1]] > NON_EQUIVALENCE_THRESHOLD
    if sc.formulation == "penalty_sweep":
        gm = [rep.gap_max[n] for n in names[1:]]
        rep.gaps_strictly_decreasing = all(x > y for x, y in zip(gm, gm[1:]))
    return rep, series


# ---------------------------------------------------------------------------
# running


def _load(target: str) -> Scenario:
    if os.path.exists(target):
        return load_file(target)
    if target in BUILTINS:
        return load_builtin(target)
    raise ScenarioError("file", f"no such file or built-in scenario: {target!r}")


def _worker(raw: dict, name: str, which: str):
    from .scenarios import load_dict

    return which, run_single(load_dict(raw, name=name), which)


def run_scenario(sc: Scenario, jobs: int = 1) -> Dict[str, object]:
    which = formulations_for(sc)
    if jobs > 1 and len(which) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(which))) as pool:
            futs = [pool.submit(_worker, sc.raw, sc.name, w) for w in which]
            out = dict(f.result() for f in futs)
        return {w: out[w] for w in which}
    return {w: run_single(sc, w) for w in which}


def write_outputs(sc: Scenario, results: Dict[str, object], out_dir: str) -> dict:
    d = os.path.join(out_dir, sc.name)
    files = []
    for name, res in results.items():
        path = os.path.join(d, f"{name}.csv")
        if isinstance(res, AffineResult):
            _atomic_write(path, affine_csv(res))
        else:
            m = len(res.samples[0].lam) if res.samples else 0
            _atomic_write(path, trajectory_csv(res, len(res.samples[0].q) if res.samples else 0, m))
        files.append(path)
    rep, series = compare(sc, results)
    for other, (t, g) in series.items():
        path = os.path.join(d, f"gap_{rep.reference}_vs_{other}.csv")
        body = "t,gap\n" + "".join(f"{_fmt(a)},{_fmt(b)}\n" for a, b in zip(t, g))
        _atomic_write(path, body)
        files.append(path)
    summary = {"scenario": sc.name, "formulation": sc.formulation, "report": asdict(rep)}
    _atomic_write(os.path.join(d, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _worst_status(results) -> Status:
    worst = Status.COMPLETED
    for res in results.values():
        st = _sim_of(res).status
        if EXIT_STATUS[st] > EXIT_STATUS[worst]:
            worst = st
    return worst


def cmd_run(args) -> int:
    try:
        sc = _load(args.scenario).with_overrides(args.formulation, args.dt, args.t_end)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = args.out or sc.out_dir or os.environ.get(ENV_OUT) or "nonholo_out"
    try:
        results = run_scenario(sc, args.jobs)
    except (OffManifoldError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    summary = write_outputs(sc, results, out_dir)
    rep = summary["report"]
    for name, run in rep["runs"].items():
        print(f"{name:>16s}: {run['status']:<22s} t={run['t_final']:.6g} max_drift={run['max_drift']:.3g}")
    for name, g in rep["gap_max"].items():
        print(f"{'gap ' + name:>16s}: {g:.6g} (max over run, {rep['gap_quantity']})")
    if rep["non_equivalent"] is not None:
        print(f"non-equivalent: {rep['non_equivalent']}")
    if rep["gaps_strictly_decreasing"] is not None:
        print(f"penalty gaps strictly decreasing: {rep['gaps_strictly_decreasing']}")
    print(f"artifacts: {os.path.join(out_dir, sc.name)}")
    worst = _worst_status(results)
    if worst is not Status.COMPLETED:
        msgs = [_sim_of(r).message for r in results.values() if _sim_of(r).status is worst]
        print(f"status: {worst.value}: {msgs[0]}", file=sys.stderr)
    return EXIT_STATUS[worst]


def cmd_list(args) -> int:
    for name, desc, prov in list_scenarios():
        print(f"{name:<22s} {desc}")
        print(f"{'':<22s}   [{prov}]")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        sc = _load(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"ok: {sc.name} ({sc.system}, formulation={sc.formulation}, runs={formulations_for(sc)})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonholo", description="Constrained Lagrangian dynamics scenario runner")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file or built-in")
    r.add_argument("scenario")
    r.add_argument("--formulation", choices=["dalembert", "vakonomic", "both", "penalty_sweep"])
    r.add_argument("--dt", type=float)
    r.add_argument("--t-end", type=float, dest="t_end")
    r.add_argument("--out")
    r.add_argument("--jobs", type=int, default=1, help="parallel runs for both/penalty_sweep")
    r.set_defaults(func=cmd_run)
    ls = sub.add_parser("list", help="list built-in scenarios")
    ls.set_defaults(func=cmd_list)
    v = sub.add_parser("validate", help="parse and validate a scenario without running it")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
