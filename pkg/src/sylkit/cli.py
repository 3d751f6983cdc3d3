"""Command-line front end: ``sylkit {gen,solve,bench,fov}``.

Exit codes: 0 converged / success, 2 iteration cap reached, 64 usage
error, 65 data error, 70 internal error.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from ._rng import unit_block
from .errors import MaxIterations, ParseError, SylkitError, UnknownGenerator
from .krylov import SolverConfig, rhs_norm, solve, true_residual
from .linalg import read_dense_mm, write_dense_mm
from .sparse import (
    gen_convdiff_2d,
    gen_convdiff_3d,
    gen_hhat_ex45,
    gen_toeplitz_ex41,
    read_matrix_market,
    write_matrix_market,
)

EXIT_OK, EXIT_MAXIT, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 64, 65, 70

log = logging.getLogger("sylkit")


class UsageError(Exception):
    pass


def _num(x):
    """Round-trippable text form of a real scalar."""
    return repr(float(x))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# -- problem generation -------------------------------------------------------

GENERATORS = ("convdiff2d", "convdiff3d", "toeplitz41", "hhat45")
DEFAULT_FIELDS = {
    "convdiff2d": ("example61_A", "example61_B"),
    "convdiff3d": ("example63_A", "example63_B"),
}


def build_problem(generator, grid=None, nu=None, field=None, field_b=None, r=1, seed_c=0, n=None):
    """Matrices and right-hand side factors for a named generator.

    Returns a dict with keys ``A``, ``B``, ``C1``, ``C2`` (``B`` and
    ``C2`` may be missing for one-sided examples) and ``params``.
    """
    if generator in DEFAULT_FIELDS:
        if grid is None or nu is None:
            raise UsageError(f"{generator} needs --grid and --nu")
        fa, fb = DEFAULT_FIELDS[generator]
        fa = field or fa
        fb = field_b or fb
        gen = gen_convdiff_2d if generator == "convdiff2d" else gen_convdiff_3d
        A = gen(grid, nu, fa)
        B = gen(grid, nu, fb)
        N = A.shape[0]
        params = dict(generator=generator, grid=grid, nu=nu, field=fa, field_b=fb, r=r, seed_c=seed_c)
        return dict(A=A, B=B, C1=unit_block(N, r, seed_c), C2=unit_block(N, r, seed_c + 1), params=params)
    if generator == "toeplitz41":
        if n is None:
            raise UsageError("toeplitz41 needs --n")
        A = gen_toeplitz_ex41(n)
        c = np.ones((n, 1)) / np.sqrt(n)
        return dict(A=A, C1=c, params=dict(generator=generator, n=n))
    raise UnknownGenerator(f"unknown generator {generator!r}; choose from {GENERATORS}")


def cmd_gen(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.generator == "hhat45":
        if args.d is None:
            raise UsageError("hhat45 needs --d")
        H, h = gen_hhat_ex45(args.d, args.seed, args.order)
        write_dense_mm(H, out / "Hhat.mtx")
        write_dense_mm(h[:, None], out / "hhat.mtx")
        params = dict(generator="hhat45", d=args.d, seed=args.seed, order=args.order)
        files = ["Hhat.mtx", "hhat.mtx"]
    else:
        prob = build_problem(args.generator, args.grid, args.nu, args.field, args.field_b, args.r, args.seed, args.n)
        files = []
        for key in ("A", "B"):
            if key in prob:
                write_matrix_market(prob[key], out / f"{key}.mtx")
                files.append(f"{key}.mtx")
        for key in ("C1", "C2"):
            if key in prob:
                write_dense_mm(prob[key], out / f"{key}.mtx")
                files.append(f"{key}.mtx")
        params = prob["params"]
    (out / "manifest.json").write_text(json.dumps({"params": params, "files": files}, indent=2) + "\n")
    print(f"wrote {', '.join(files)} to {out}")
    return EXIT_OK


# -- configuration -----------------------------------------------------------

SOLVER_KEYS = {
    "engine": str,
    "tol": float,
    "maxit": int,
    "k": lambda v: None if v.lower() in ("inf", "none") else int(v),
    "k_b": lambda v: None if v.lower() in ("inf", "none") else int(v),
    "p": int,
    "s": int,
    "sketch": str,
    "seed": int,
    "rank_tol": float,
    "chunk": int,
    "verify": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "paper_literal_scale": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "reorth": lambda v: v.lower() in ("1", "true", "yes", "on"),
}
PROBLEM_KEYS = {
    "problem": str,
    "A": str,
    "B": str,
    "C1": str,
    "C2": str,
    "generator": str,
    "grid": int,
    "nu": float,
    "field": str,
    "field_b": str,
    "r": int,
    "seed_c": int,
    "out": str,
}


def parse_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    conf = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {raw!r}", line=lineno)
        key, value = (t.strip() for t in line.split("=", 1))
        conv = SOLVER_KEYS.get(key) or PROBLEM_KEYS.get(key)
        if conv is None:
            raise ParseError(f"unknown key {key!r}", line=lineno)
        try:
            conf[key] = conv(value)
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {value!r}", line=lineno) from exc
    return conf


def _load_problem(conf):
    sources = [bool(conf.get("problem")), bool(conf.get("A")), bool(conf.get("generator"))]
    if sum(sources) != 1:
        raise UsageError("give exactly one problem source: problem=DIR, A=/B=/C1=/C2= paths, or generator=NAME")
    if conf.get("generator"):
        prob = build_problem(
            conf["generator"], conf.get("grid"), conf.get("nu"), conf.get("field"),
            conf.get("field_b"), conf.get("r", 1), conf.get("seed_c", 0),
        )
        if "B" not in prob:
            prob["B"] = prob["A"].transpose()
            prob["C2"] = prob["C1"]
        return prob
    if conf.get("problem"):
        base = Path(conf["problem"])
        paths = {k: base / f"{k}.mtx" for k in ("A", "B", "C1", "C2")}
    else:
        paths = {k: Path(conf[k]) for k in ("A", "B", "C1", "C2") if conf.get(k)}
    if "A" not in paths or not paths["A"].exists():
        raise UsageError("matrix A not found")
    A = read_matrix_market(paths["A"])
    C1 = read_dense_mm(paths["C1"])
    if paths.get("B") is not None and paths["B"].exists():
        B = read_matrix_market(paths["B"])
        C2 = read_dense_mm(paths["C2"]) if paths["C2"].exists() else C1
    else:
        B, C2 = A.transpose(), C1
    return dict(A=A, B=B, C1=C1, C2=C2, params={k: str(v) for k, v in paths.items()})


def _solver_config(conf):
    kw = {k: conf[k] for k in SOLVER_KEYS if k in conf}
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def write_history(path, result, true_res=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d", "rho", "true_res", "wall_s", "mem_vectors"])
        by_d = {c["d"]: c["true_res"] for c in result.checks}
        for h in result.history:
            tr = by_d.get(h.d, "")
            w.writerow([h.d, _num(h.rho), _num(tr) if tr != "" else "", f"{h.wall:.6f}", h.mem])


def cmd_solve(args):
    conf = {}
    if args.config:
        try:
            conf.update(parse_config(Path(args.config).read_text()))
        except (OSError, ParseError) as exc:
            raise UsageError(f"bad config {args.config}: {exc}") from exc
    for key in list(SOLVER_KEYS) + list(PROBLEM_KEYS):
        val = getattr(args, key, None)
        if val is not None:
            conf[key] = val
    cfg = _solver_config(conf)
    prob = _load_problem(conf)
    out = Path(conf.get("out") or args.out)
    out.mkdir(parents=True, exist_ok=True)
    A, B, C1, C2 = prob["A"], prob["B"], prob["C1"], prob["C2"]
    status, code, error = "converged", EXIT_OK, None
    try:
        res = solve(A, B, C1, C2, cfg)
    except MaxIterations as exc:
        res, status, code, error = exc.result, "max_iterations", EXIT_MAXIT, str(exc)
    rel_true = None
    if cfg.verify:
        rel_true = true_residual(A, B, C1, C2, res.X1, res.X2) / rhs_norm(C1, C2)
    write_history(out / "history.csv", res)
    write_dense_mm(res.X1, out / "X1.mtx")
    write_dense_mm(res.X2, out / "X2.mtx")
    report = {
        "engine": res.engine,
        "d": res.d,
        "rank": res.rank,
        "converged": res.converged,
        "status": status,
        "exit_code": code,
        "error": error,
        "rho": res.rho,
        "relative_rho": res.relative_rho,
        "true_relative_residual": rel_true,
        "mem_long_vectors": res.mem_long_vectors,
        "wall_s": res.wall,
        "skipped_checks": res.skipped,
        "breakdown": res.breakdown,
        "config": {k: v for k, v in cfg.__dict__.items()},
        "problem": prob["params"],
        "meta": {"finished_at": time.strftime("%Y-%m-%dT%H:%M:%S")},
    }
    (out / "result.json").write_text(json.dumps(report, indent=2, default=str) + "\n")
    print(f"{status}: engine={res.engine} d={res.d} rank={res.rank} mem={res.mem_long_vectors} rel_rho={res.relative_rho:.3e}")
    return code


# -- benchmark suites ---------------------------------------------------------

REPORT_COLUMNS = [
    "suite", "label", "engine", "dim", "grid", "n", "nu", "k", "k_b", "s", "p",
    "d", "converged", "rank", "mem", "wall_s", "true_rel_res", "error",
]


def suite_rows(name, full_scale=False):
    """Configurations of a benchmark suite as ``(label, problem kwargs, SolverConfig)``."""
    rows = []
    if name == "table1-desk":
        grid = 300 if full_scale else 100
        s = 1200 if full_scale else 400
        for nu in (0.1, 0.01):
            for p in (1, 10):
                prob = dict(generator="convdiff2d", grid=grid, nu=nu)
                rows.append((f"full nu={nu} p={p}", prob, SolverConfig(engine="full", k=None, p=p, tol=1e-6, maxit=600)))
                rows.append((f"sketched nu={nu} p={p}", prob, SolverConfig(engine="sketched", k=10, s=s, p=p, tol=1e-6, maxit=600)))
    elif name == "table2-desk":
        grid = 300 if full_scale else 100
        prob = dict(generator="convdiff2d", grid=grid, nu=0.1)
        rows.append(("full nu=0.1", prob, SolverConfig(engine="full", k=None, p=10, tol=1e-6, maxit=800)))
        for kb in (40, 60):
            rows.append((f"truncated kA=40 kB={kb}", prob, SolverConfig(engine="truncated", k=40, k_b=kb, p=10, tol=1e-6, maxit=800)))
    elif name == "table3-desk":
        grids = (40, 50) if full_scale else (22, 27)
        for grid in grids:
            prob = dict(generator="convdiff3d", grid=grid, nu=0.005)
            rows.append((f"sketched grid={grid}", prob, SolverConfig(engine="sketched", k=3, s=500, p=10, tol=1e-6, maxit=250)))
    else:
        raise UsageError(f"unknown suite {name!r}; choose table1-desk, table2-desk or table3-desk")
    return rows


def run_bench_row(suite, label, prob_kw, cfg):
    row = dict(suite=suite, label=label, engine=cfg.engine, k=cfg.k, k_b=cfg.k_b, s=cfg.s, p=cfg.p, error="")
    try:
        prob = build_problem(**prob_kw)
        A, B, C1, C2 = prob["A"], prob["B"], prob["C1"], prob["C2"]
        row.update(dim=3 if prob_kw["generator"] == "convdiff3d" else 2, grid=prob_kw["grid"], n=A.shape[0], nu=prob_kw["nu"])
        try:
            res = solve(A, B, C1, C2, cfg)
        except MaxIterations as exc:
            res = exc.result
            row["error"] = "max_iterations"
        row.update(
            d=res.d,
            converged=res.converged,
            rank=res.rank,
            mem=res.mem_long_vectors,
            wall_s=f"{res.wall:.3f}",
            true_rel_res=_num(true_residual(A, B, C1, C2, res.X1, res.X2) / rhs_norm(C1, C2)),
        )
    except SylkitError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_suite(name, full_scale=False, workers=1):
    rows = suite_rows(name, full_scale)
    jobs = [(name, label, prob, cfg) for label, prob, cfg in rows]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(run_bench_row, *zip(*jobs)))
    return [run_bench_row(*job) for job in jobs]


def cmd_bench(args):
    workers = int(os.environ.get("SYLKIT_THREADS", "1") or 1)
    rows = run_suite(args.suite, args.full_scale, max(1, workers))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.suite}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in REPORT_COLUMNS})
    for row in rows:
        print(f"{row['label']:>28}: d={row.get('d')} mem={row.get('mem')} rank={row.get('rank')} {row['error']}")
    print(f"wrote {path}")
    return EXIT_OK


# -- analysis exports ---------------------------------------------------------


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path}")


def _ex45_pair(args):
    seed = args.seed if args.seed is not None else analysis.find_example45_seed(args.d, unstable=True)
    H, h = gen_hhat_ex45(args.d, seed, args.order)
    return H, h, seed


def cmd_fov(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mode = args.mode
    if mode == "boundary":
        if not args.matrix:
            raise UsageError("boundary needs --matrix")
        path = Path(args.matrix)
        head = path.open().readline().lower()
        M = read_dense_mm(path) if "array" in head else read_matrix_market(path).to_dense()
        fb = analysis.fov_boundary(M, args.angles)
        _write_csv(out / "boundary.csv", ["theta", "re", "im"],
                   [(_num(t), _num(z.real), _num(z.imag)) for t, z in zip(fb.angles, fb.points)])
    elif mode == "effective":
        H, h, seed = _ex45_pair(args)
        eff = analysis.effective_fov(H, h)
        spec = np.linalg.eigvals(eff.compressed)
        rows = [("full", _num(z.real), _num(z.imag), _num(f)) for z, f in zip(eff.eigenvalues, eff.eigvec_first)]
        rows += [("compressed", _num(z.real), _num(z.imag), "") for z in spec]
        _write_csv(out / "effective.csv", ["set", "re", "im", "first_entry_mag"], rows)
        print(f"seed={seed} kept={eff.kept_count} dropped={eff.dropped_count}")
    elif mode == "decay":
        H, h, seed = _ex45_pair(args)
        prof = analysis.schur_decay_profile(H, h)
        _write_csv(out / "decay.csv", ["dist", "first_entry_mag"],
                   [(_num(a), _num(b)) for a, b in zip(prof.distance, prof.first_entry)])
        print(f"seed={seed} spearman={prof.spearman:.3f}")
    elif mode == "sketch-sweep":
        rows, normA = analysis.example41_sweep(range(args.seeds))
        _write_csv(out / "sketch_sweep.csv", ["seed", "alpha_sketched", "alpha_plain", "shift"],
                   [(s, _num(a), _num(b), _num(c)) for s, a, b, c in rows])
        print(f"||A||_2={normA:.4f} max|shift|={max(abs(r[3]) for r in rows):.4f}")
    elif mode == "bound":
        import scipy.sparse as sp
        from .sparse import SparseMatrix

        n = args.n
        A = SparseMatrix.from_scipy(sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)))
        c = unit_block(n, 1, args.seed if args.seed is not None else 0)
        cfg = SolverConfig(engine="sketched", k=args.k, s=args.s or n, sketch=args.sketch, seed=args.seed or 0)
        rows = analysis.lyapunov_bound_sweep(A, c, cfg, range(args.dmin, args.dmax + 1))
        _write_csv(out / "bound.csv", ["d", "bound", "error", "status"],
                   [(r.d, _num(r.bound), _num(r.error), r.status) for r in rows])
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser():
    p = _Parser(prog="sylkit", description="Sketched and truncated Krylov solvers for Sylvester equations")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a test problem")
    g.add_argument("generator", choices=GENERATORS)
    g.add_argument("--grid", type=int)
    g.add_argument("--nu", type=float)
    g.add_argument("--field")
    g.add_argument("--field-b", dest="field_b")
    g.add_argument("--n", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--r", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--order", choices=("ascending", "descending"), default="ascending")
    g.add_argument("--out", default=".")

    s = sub.add_parser("solve", help="solve A X + X B = C1 C2^T")
    s.add_argument("--config")
    s.add_argument("--out", default="run")
    for key, conv in SOLVER_KEYS.items():
        flag = "--" + key.replace("_", "-")
        s.add_argument(flag, dest=key, type=conv)
    for key in ("problem", "A", "B", "C1", "C2", "generator", "field", "field_b"):
        s.add_argument("--" + key.replace("_", "-"), dest=key)
    s.add_argument("--grid", type=int)
    s.add_argument("--nu", type=float)
    s.add_argument("--r", type=int)
    s.add_argument("--seed-c", dest="seed_c", type=int)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite")
    b.add_argument("--out", default="bench")
    b.add_argument("--full-scale", action="store_true")

    f = sub.add_parser("fov", help="field-of-values diagnostics")
    f.add_argument("mode", choices=("boundary", "effective", "decay", "sketch-sweep", "bound"))
    f.add_argument("--matrix")
    f.add_argument("--angles", type=int, default=256)
    f.add_argument("--example45", action="store_true")
    f.add_argument("--example41", action="store_true")
    f.add_argument("--d", type=int, default=100)
    f.add_argument("--seed", type=int)
    f.add_argument("--seeds", type=int, default=50)
    f.add_argument("--order", choices=("ascending", "descending"), default="ascending")
    f.add_argument("--n", type=int, default=100)
    f.add_argument("--k", type=int, default=None)
    f.add_argument("--s", type=int, default=None)
    f.add_argument("--sketch", default="srdct")
    f.add_argument("--dmin", type=int, default=5)
    f.add_argument("--dmax", type=int, default=30)
    f.add_argument("--out", default=".")
    return p


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "bench": cmd_bench, "fov": cmd_fov}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, UnknownGenerator, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SylkitError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
