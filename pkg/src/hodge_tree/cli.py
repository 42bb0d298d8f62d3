"""Command line front end: ``hodge-tree <command> [options]``.

Commands
  hodge               four-step (three-step for k = n) versus monolithic solves
  poincare-constants  Poincaré constants of the bar subspaces on a mesh ladder
  precond-study       condition numbers and MINRES iterations of the
                      auxiliary space preconditioned projection problem
  mesh-info           simplex counts, Euler characteristic, tree statistics

Output columns (CSV header order; JSON rows use the same keys)
  hodge               dim N h k method n_prob1 n_prob2 n_prob3 n_prob4
                      t_prob1 t_prob2 t_prob3 t_prob4 dofs_total t_total
                      dofs_monolithic t_monolithic speedup rel_diff residual
  poincare-constants  dim N h k cbar cbar_dense status
  precond-study       dim N h k log10_alpha alpha cbar kappa minres_iters status

Times are medians of three runs in seconds. Rows are emitted in
(N, k, alpha) order regardless of --jobs. With a fixed seed the output is
identical across runs except for the time columns; --no-timings blanks them.

Exit codes: 0 success, 1 invalid arguments, 2 solver or estimator failure.
HODGE_TREE_THREADS sets the default for --jobs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .hodge import SubproblemError, random_problem, solve, solve_monolithic
from .linalg import SolverError
from .mesh import MeshError, SimplicialMesh, generate_structured, mean_diameter, read_mesh
from .poincare import PoincareOperator
from .precond import (
    DENSE_LIMIT,
    AuxPreconditioner,
    estimate_condition,
    pminres,
    poincare_constant,
    poincare_constant_dense,
)
from .trees import TreeError, build_partition, format_partition
from .whitney import FormComplex

log = logging.getLogger("hodge_tree")

DEFAULT_LADDER = {2: (4, 8, 16, 32, 64), 3: (2, 4, 8, 12)}
DEFAULT_ALPHA_EXP = (-4, -3, -2, -1, 0)
KAPPA_LIMIT = 200_000  # skip condition numbers above this many DOFs

HODGE_COLUMNS = [
    "dim", "N", "h", "k", "method",
    "n_prob1", "n_prob2", "n_prob3", "n_prob4",
    "t_prob1", "t_prob2", "t_prob3", "t_prob4",
    "dofs_total", "t_total", "dofs_monolithic", "t_monolithic",
    "speedup", "rel_diff", "residual",
]  # fmt: skip
POINCARE_COLUMNS = ["dim", "N", "h", "k", "cbar", "cbar_dense", "status"]
PRECOND_COLUMNS = [
    "dim", "N", "h", "k", "log10_alpha", "alpha", "cbar", "kappa", "minres_iters", "status",
]  # fmt: skip
TIME_COLUMNS = {"t_prob1", "t_prob2", "t_prob3", "t_prob4", "t_total", "t_monolithic", "speedup"}


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default; 2 is reserved for solver failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass
class ExperimentConfig:
    command: str
    dim: int
    ladder: tuple[int, ...]
    ks: tuple[int, ...]
    alpha_exp: tuple[float, ...]
    seed: int
    tol: float
    out: str | None
    fmt: str
    dump_trees: bool
    dense_oracle: bool
    jobs: int
    mesh_path: str | None
    timings: bool


@dataclass
class MeshSetup:
    N: int
    mesh: SimplicialMesh
    fc: FormComplex
    part: object
    op: PoincareOperator

    @property
    def h(self) -> float:
        return mean_diameter(self.mesh)


# --------------------------------------------------------------------------
# argument handling


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from exc


def _exp_list(text: str) -> tuple[float, ...]:
    """'-4..0' (integer range) or a comma separated list such as '-4,-2.5,0'."""
    try:
        if ".." in text:
            lo, hi = (int(t) for t in text.split(".."))
            step = 1 if hi >= lo else -1
            return tuple(float(e) for e in range(lo, hi + step, step))
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad exponent list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="hodge-tree",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("command", choices=["hodge", "poincare-constants", "precond-study", "mesh-info"])
    p.add_argument("--dim", type=int, default=2, choices=[2, 3])
    g = p.add_mutually_exclusive_group()
    g.add_argument("--refine", type=int, help="single refinement level N")
    g.add_argument("--ladder", type=_int_list, help="comma separated refinement levels")
    p.add_argument("--k", type=_int_list, help="comma separated form degrees")
    p.add_argument(
        "--alpha-exp",
        type=_exp_list,
        default=DEFAULT_ALPHA_EXP,
        help="log10 alpha values, e.g. --alpha-exp=-4..0 or --alpha-exp=-2,0",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8, help="MINRES relative tolerance")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", dest="fmt", choices=["csv", "json"], default="csv")
    p.add_argument("--dump-trees", action="store_true", help="mesh-info: print the partition")
    p.add_argument("--dense-oracle", action="store_true", help="cross-check with dense eigensolves")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--mesh", dest="mesh_path", help="read the mesh from a file instead")
    p.add_argument("--no-timings", action="store_true", help="leave time columns empty")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def make_config(args: argparse.Namespace) -> ExperimentConfig:
    n = args.dim
    if args.refine is not None:
        ladder = (args.refine,)
    elif args.ladder:
        ladder = args.ladder
    else:
        ladder = DEFAULT_LADDER[n] if args.command != "mesh-info" else (1,)
    if args.mesh_path:
        ladder = (0,)
    elif any(N < 1 for N in ladder):
        raise ConfigError("refinement levels must be positive")

    valid = {
        "hodge": range(1, n + 1),
        "poincare-constants": range(0, n),
        "precond-study": range(1, n),
        "mesh-info": range(0, n + 1),
    }[args.command]
    ks = tuple(args.k) if args.k else tuple(valid)
    bad = [k for k in ks if k not in valid]
    if bad:
        raise ConfigError(f"k={bad[0]} is out of range for {args.command} in {n}D")

    for e in args.alpha_exp:
        if not e <= 0:
            raise ConfigError(f"alpha = 10^{e} exceeds 1")
    if not 0 < args.tol < 1:
        raise ConfigError("--tol must lie in (0, 1)")

    jobs = args.jobs
    if jobs is None:
        env = os.environ.get("HODGE_TREE_THREADS", "1")
        try:
            jobs = int(env)
        except ValueError as exc:
            raise ConfigError(f"HODGE_TREE_THREADS={env!r} is not an integer") from exc
    if jobs < 1:
        raise ConfigError("--jobs must be at least 1")

    return ExperimentConfig(
        command=args.command,
        dim=n,
        ladder=tuple(ladder),
        ks=ks,
        alpha_exp=tuple(args.alpha_exp),
        seed=args.seed,
        tol=args.tol,
        out=args.out,
        fmt=args.fmt,
        dump_trees=args.dump_trees,
        dense_oracle=args.dense_oracle,
        jobs=jobs,
        mesh_path=args.mesh_path,
        timings=not args.no_timings,
    )


def setup_mesh(cfg: ExperimentConfig, N: int) -> MeshSetup:
    if cfg.mesh_path:
        mesh = read_mesh(cfg.mesh_path)
        if mesh.dim != cfg.dim:
            raise ConfigError(f"mesh file is {mesh.dim}D but --dim is {cfg.dim}")
    else:
        mesh = generate_structured(cfg.dim, N)
    fc = FormComplex(mesh)
    part = build_partition(mesh)
    return MeshSetup(N, mesh, fc, part, PoincareOperator(fc, part))


def _map(cfg: ExperimentConfig, fn, items):
    """Ordered map, threaded when --jobs > 1."""
    if cfg.jobs == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# commands


def run_hodge(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for N in cfg.ladder:
        s = setup_mesh(cfg, N)

        def one(k, s=s, N=N):
            rng = np.random.default_rng([cfg.seed, N, k])
            problem = random_problem(s.fc, s.part, s.op, k, rng)
            fast = solve(problem, repeats=3)
            ref = solve_monolithic(problem, repeats=3)
            subs = {sp.name: sp for sp in fast.subproblems}
            t_fast = sum(sp.seconds for sp in fast.subproblems)
            t_ref = ref.subproblems[0].seconds
            diff = np.linalg.norm(np.concatenate([fast.v - ref.v, fast.u - ref.u]))
            diff /= max(np.linalg.norm(np.concatenate([ref.v, ref.u])), 1e-300)
            row = {
                "dim": cfg.dim, "N": N, "h": s.h, "k": k, "method": fast.method,
                "dofs_total": fast.total_dofs, "t_total": t_fast,
                "dofs_monolithic": ref.total_dofs, "t_monolithic": t_ref,
                "speedup": t_ref / t_fast if t_fast > 0 else math.inf,
                "rel_diff": float(diff),
                "residual": max(fast.residual_eq1, fast.residual_eq2),
            }  # fmt: skip
            for i in range(1, 5):
                sp = subs.get(f"prob{i}")
                row[f"n_prob{i}"] = sp.dofs if sp else 0
                row[f"t_prob{i}"] = sp.seconds if sp else 0.0
            _check_hodge_row(row)
            return row

        rows.extend(_map(cfg, one, cfg.ks))
    return rows


def _check_hodge_row(row: dict) -> None:
    total = sum(row[f"n_prob{i}"] for i in range(1, 5))
    if total != row["dofs_total"] or total != row["dofs_monolithic"]:
        raise SolverError(f"DOF bookkeeping mismatch at k={row['k']}: {total}")


def run_poincare_constants(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for N in cfg.ladder:
        s = setup_mesh(cfg, N)

        def one(k, s=s, N=N):
            row = {"dim": cfg.dim, "N": N, "h": s.h, "k": k, "cbar": None, "cbar_dense": None}
            try:
                row["cbar"] = poincare_constant(s.fc, s.part, k, seed=cfg.seed)
                if cfg.dense_oracle and s.fc.n(k) < DENSE_LIMIT:
                    row["cbar_dense"] = poincare_constant_dense(s.fc, s.part, k)
                row["status"] = "ok"
            except SolverError as exc:
                row["status"] = f"failed: {exc}"
            return row

        rows.extend(_map(cfg, one, cfg.ks))
    return rows


def run_precond_study(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for N in cfg.ladder:
        s = setup_mesh(cfg, N)
        cbar = {k: poincare_constant(s.fc, s.part, k, seed=cfg.seed) for k in cfg.ks}
        cells = [(k, e) for k in cfg.ks for e in cfg.alpha_exp]

        def one(cell, s=s, N=N, cbar=cbar):
            k, e = cell
            alpha = 10.0**e
            row = {
                "dim": cfg.dim, "N": N, "h": s.h, "k": k, "log10_alpha": e, "alpha": alpha,
                "cbar": cbar[k], "kappa": None, "minres_iters": None,
            }  # fmt: skip
            try:
                P = AuxPreconditioner(s.fc, s.part, k, alpha)
                if s.fc.n(k) <= KAPPA_LIMIT:
                    row["kappa"] = estimate_condition(s.fc, s.part, k, alpha, precond=P, seed=cfg.seed)[0]
                rng = np.random.default_rng([cfg.seed, N, k])
                f = rng.uniform(-1.0, 1.0, s.fc.n(k))
                _, its, ok = pminres(s.fc, s.part, k, alpha, f, rel_tol=cfg.tol, precond=P)
                row["minres_iters"] = its
                row["status"] = "ok" if ok else "minres-not-converged"
            except SolverError as exc:
                row["status"] = f"failed: {exc}"
            if row["status"] == "ok":
                if row["kappa"] is not None and row["kappa"] < 1 - 1e-8:
                    row["status"] = "failed: kappa < 1"
                if row["minres_iters"] < 1:
                    row["status"] = "failed: no MINRES iterations"
            return row

        rows.extend(_map(cfg, one, cells))
    return rows


def mesh_info(cfg: ExperimentConfig) -> str:
    out = []
    for N in cfg.ladder:
        s = setup_mesh(cfg, N)
        m, part = s.mesh, s.part
        counts = " ".join(map(str, m.counts))
        label = cfg.mesh_path or f"N={N}"
        out.append(f"{label}: {counts}, chi={m.euler_characteristic()}")
        out.append(f"  h={s.h:.6g}")
        node_deg = np.bincount(part.node_tree.parent[part.node_tree.parent >= 0], minlength=m.num(0))
        dual = part.dual_tree
        dual_deg = np.bincount(dual.parent, minlength=dual.outside + 1)
        out.append(
            f"  node tree: root={part.root} depth={part.node_tree.depth()} "
            f"max_children={int(node_deg.max())}"
        )
        out.append(
            f"  dual tree: depth={dual.depth()} max_children={int(dual_deg[:-1].max())} "
            f"boundary_children={int(dual_deg[-1])}"
        )
        bars = " ".join(str(part.n_bar(k)) for k in range(m.dim + 1))
        rings = " ".join(str(part.n_ring(k)) for k in range(m.dim + 1))
        out.append(f"  bar: {bars}")
        out.append(f"  ring: {rings}")
        if cfg.dump_trees:
            out.append(format_partition(part).rstrip("\n"))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# output


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.6e}"
    return str(value)


def format_rows(rows: list[dict], columns: list[str], fmt: str, timings: bool = True) -> str:
    if not timings:
        rows = [{c: (None if c in TIME_COLUMNS else r.get(c)) for c in columns} for r in rows]
    if fmt == "json":
        clean = [{c: _json_value(r.get(c)) for c in columns} for r in rows]
        return json.dumps(clean, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if not math.isfinite(v) else v
    return v


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = make_config(args)
    except ConfigError as exc:
        print(f"hodge-tree: error: {exc}", file=sys.stderr)
        return 1

    try:
        if cfg.command == "mesh-info":
            _emit(mesh_info(cfg), cfg.out)
            return 0
        runner, columns = {
            "hodge": (run_hodge, HODGE_COLUMNS),
            "poincare-constants": (run_poincare_constants, POINCARE_COLUMNS),
            "precond-study": (run_precond_study, PRECOND_COLUMNS),
        }[cfg.command]
        rows = runner(cfg)
    except (ConfigError, MeshError, OSError) as exc:
        print(f"hodge-tree: error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, SubproblemError, TreeError) as exc:
        print(f"hodge-tree: solver failure: {exc}", file=sys.stderr)
        return 2

    _emit(format_rows(rows, columns, cfg.fmt, cfg.timings), cfg.out)
    failed = [r for r in rows if str(r.get("status", "ok")) != "ok"]
    if failed:
        print(f"hodge-tree: {len(failed)} cell(s) failed", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
