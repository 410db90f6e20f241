"""Command-line entry point: run benchmark scenarios or the oracle suite.

Outputs per run: a CSV of per-step metrics (flushed after every step so a
killed run keeps its completed rows), optional legacy VTK snapshots of the
solution fields and a JSON summary with iteration totals and wall time.
Reruns with identical configuration and thread count reproduce the CSV
byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import scenarios, selfcheck
from .krylov import SolverControl
from .mgsolve import PreconditionerKind
from .model import SplitKind
from .nonlinear import ActiveSetParams, SolverConfig
from .scenarios import EpsRule, RunAborted

__all__ = ["RunConfig", "write_vtk", "CsvSink", "main", "entry"]

_CSV_COLUMNS = ("step", "time", "as_iters", "gmres_total", "gmres_mean",
                "load_y", "crack_energy", "bulk_energy", "n_active")

_VTK_CELL_TYPE = {2: 9, 3: 12}           # VTK_QUAD, VTK_HEXAHEDRON
_VTK_ORDER = {2: (0, 1, 3, 2), 3: (0, 1, 3, 2, 4, 5, 7, 6)}


@dataclass
class RunConfig:
    scenario: str = "multiple_fractures"
    levels: int = 4
    dim: int = 2
    eps: str = "h"
    split: str = ""              # empty keeps the scenario default
    precond: str = "full"
    dt: float = 0.0              # 0 keeps the scenario default
    t_end: float = 0.0
    out: str = "out"
    vtk_every: int = 0
    threads: int = 1
    seed: int = 0
    abs_tol: float = 1e-10
    rel_tol: float = 1e-4
    restart: int = 30
    max_iters: int = 1000
    cheb_degree: int = 4
    active_set_c: float = 100.0
    active_set_tol: float = 1e-10
    active_set_max_iters: int = 50

    @classmethod
    def from_file(cls, path):
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def write_vtk(mesh, U, path):
    """Legacy ASCII VTK unstructured grid with displacement and phase field.

    Dof layout is component-major with the phase field last, matching the
    solver's vectors.
    """
    dim = mesh.dim
    V = mesh.n_vertices
    U = np.asarray(U)
    u = U[:dim * V].reshape(dim, V)
    phi = U[dim * V:(dim + 1) * V]

    pts = np.zeros((V, 3))
    pts[:, :dim] = mesh.vertices
    vec = np.zeros((V, 3))
    vec[:, :dim] = u.T
    order = _VTK_ORDER[dim]
    n_corners = len(order)

    with open(path, "w", encoding="ascii") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write("fracmg solution\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {V} double\n")
        for p in pts:
            f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        f.write(f"CELLS {mesh.n_cells} {mesh.n_cells * (n_corners + 1)}\n")
        for cell in mesh.cells:
            f.write(" ".join([str(n_corners)] + [str(cell[o]) for o in order]))
            f.write("\n")
        f.write(f"CELL_TYPES {mesh.n_cells}\n")
        for _ in range(mesh.n_cells):
            f.write(f"{_VTK_CELL_TYPE[dim]}\n")
        f.write(f"POINT_DATA {V}\n")
        f.write("VECTORS displacement double\n")
        for w in vec:
            f.write(f"{w[0]:.17g} {w[1]:.17g} {w[2]:.17g}\n")
        f.write("SCALARS phase_field double\n")
        f.write("LOOKUP_TABLE default\n")
        for value in phi:
            f.write(f"{value:.17g}\n")


class CsvSink:
    """Writes one metrics row per completed step, flushing immediately."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "w", encoding="utf-8", newline="\n")
        self._f.write(",".join(_CSV_COLUMNS) + "\n")
        self._f.flush()

    def __call__(self, record, ctx):
        g = record.gmres_iters_per_as_step
        total = int(sum(g))
        mean = total / len(g) if g else 0.0
        row = (
            f"{record.step},{record.time:.17g},{record.active_set_iters},"
            f"{total},{mean:.17g},{record.load:.17g},"
            f"{record.crack_energy:.17g},{record.bulk_energy:.17g},"
            f"{record.n_active}"
        )
        self._f.write(row + "\n")
        self._f.flush()

    def close(self):
        self._f.close()


class VtkSink:
    def __init__(self, out_dir, every):
        self.out_dir = Path(out_dir)
        self.every = every

    def __call__(self, record, ctx):
        if self.every > 0 and record.step % self.every == 0:
            path = self.out_dir / f"solution_{record.step:06d}.vtk"
            write_vtk(ctx.disc.finest.mesh, ctx.U, path)


def _build_scenario(cfg):
    eps_rule = EpsRule.parse(cfg.eps)
    if cfg.scenario in ("multiple_fractures", "multiple_fractures_random"):
        sc = scenarios.make_multiple_fractures(
            cfg.levels, random_field=cfg.scenario.endswith("random"))
        if cfg.eps != "h":
            sc.eps_rule = eps_rule
    elif cfg.scenario in ("lshape2d", "lshape3d"):
        dim = 3 if cfg.scenario == "lshape3d" else cfg.dim
        sc = scenarios.make_lshape(cfg.levels, dim=dim, eps_rule=eps_rule)
    else:
        raise ValueError(f"unknown scenario {cfg.scenario!r}")
    if cfg.split:
        sc.split = SplitKind(cfg.split)
    if cfg.dt > 0.0:
        sc.dt = cfg.dt
    if cfg.t_end > 0.0:
        sc.t_end = cfg.t_end
    return sc


def _build_solver_config(cfg):
    return SolverConfig(
        control=SolverControl(abs_tol=cfg.abs_tol, rel_tol=cfg.rel_tol,
                              max_iters=cfg.max_iters, restart=cfg.restart),
        active_set=ActiveSetParams(c=cfg.active_set_c, eps_as=cfg.active_set_tol,
                                   max_iters=cfg.active_set_max_iters),
        precond=PreconditionerKind(cfg.precond),
        cheb_degree=cfg.cheb_degree,
        seed=cfg.seed,
        threads=cfg.threads,
    )


def _write_summary(out_dir, cfg, records, wall, status):
    summary = {
        "scenario": cfg.scenario,
        "levels": cfg.levels,
        "status": status,
        "steps": len(records),
        "total_as_iters": int(sum(r.active_set_iters for r in records)),
        "total_gmres_iters": int(sum(sum(r.gmres_iters_per_as_step)
                                     for r in records)),
        "final_crack_energy": records[-1].crack_energy if records else 0.0,
        "final_bulk_energy": records[-1].bulk_energy if records else 0.0,
        "wall_time_s": wall,
        "csv": str(Path(out_dir) / "metrics.csv"),
    }
    path = Path(out_dir) / "summary.json"
    path.write_text(json.dumps(summary, indent=2) + "\n")
    return path


def make_parser():
    parser = argparse.ArgumentParser(
        prog="fracmg",
        description="Matrix-free multigrid solver for phase-field fracture")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark scenario")
    p_run.add_argument("--config", help="JSON config file; flags override it")
    p_run.add_argument("--scenario", choices=[
        "multiple_fractures", "multiple_fractures_random", "lshape2d",
        "lshape3d"])
    p_run.add_argument("--levels", type=int)
    p_run.add_argument("--dim", type=int, choices=[2, 3])
    p_run.add_argument("--eps", help="'h' or 'fixed:<value>'")
    p_run.add_argument("--split", choices=["none", "miehe"])
    p_run.add_argument("--precond", choices=["full", "blockdiag"])
    p_run.add_argument("--dt", type=float)
    p_run.add_argument("--t-end", dest="t_end", type=float)
    p_run.add_argument("--out")
    p_run.add_argument("--vtk-every", dest="vtk_every", type=int)
    p_run.add_argument("--threads", type=int)
    p_run.add_argument("--seed", type=int)

    sub.add_parser("verify", help="run the built-in oracle suite")
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors (a config error here)
        return 0 if exc.code == 0 else 1

    if args.command == "verify":
        results = selfcheck.run_all(verbose=True)
        return 0 if all(r.passed for r in results) else 1

    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        for f in fields(RunConfig):
            val = getattr(args, f.name, None)
            if val is not None:
                setattr(cfg, f.name, val)
        scenario = _build_scenario(cfg)
        solver_cfg = _build_solver_config(cfg)
    except (ValueError, OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_sink = CsvSink(out_dir / "metrics.csv")
    sinks = [csv_sink]
    if cfg.vtk_every > 0:
        sinks.append(VtkSink(out_dir, cfg.vtk_every))

    started = time.perf_counter()
    status = "completed"
    code = 0
    try:
        records = scenarios.run(scenario, solver_cfg, sinks)
    except RunAborted as err:
        records = err.records
        status = "nonconvergence"
        code = 2
        print(f"solver failed: {err}", file=sys.stderr)
    finally:
        csv_sink.close()
    wall = time.perf_counter() - started
    summary_path = _write_summary(out_dir, cfg, records, wall, status)
    print(f"{status}: {len(records)} steps, summary at {summary_path}")
    return code


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
