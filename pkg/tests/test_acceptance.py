"""Acceptance criteria 1-10.

Each test prints one ``criterion N: PASS|FAIL`` line (also collected into
the terminal summary) before asserting. Run with::

    pytest tests/test_acceptance.py -v
"""

import time

import numpy as np
import pytest
import scipy.linalg as spla
import scipy.sparse as sp
from hypothesis import HealthCheck, given, settings, strategies as st

from sylkit import analysis as an
from sylkit._rng import unit_block
from sylkit.errors import MaxIterations
from sylkit.krylov import (
    SolverConfig,
    compress_Y,
    rhs_norm,
    solve_full,
    solve_sketched,
    solve_truncated,
    true_residual,
)
from sylkit.linalg import solve_sylvester_dense
from sylkit.sketch import SketchOperator
from sylkit.sparse import SparseMatrix, gen_convdiff_2d, gen_hhat_ex45

from conftest import convdiff_problem, random_stable, report

ROUNDOFF = 64 * np.finfo(float).eps


def finish(solver, *args, **kw):
    try:
        return solver(*args, **kw)
    except MaxIterations as exc:
        return exc.result


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- 1: engine equivalence -----------------------------------------------------


def test_criterion_01_engine_equivalence():
    t0 = time.perf_counter()
    worst, checks = 0.0, 0
    rng = np.random.default_rng(2024)
    for i in range(20):
        grid = int(rng.integers(8, 23))  # n <= 484
        r = 1 + i % 2
        A, B, C1, C2 = convdiff_problem(grid=grid, nu=float(rng.choice([0.1, 0.05])), r=r, seed=100 + i)
        cfg = dict(k=None, tol=1e-8, p=int(rng.integers(2, 6)), maxit=grid * grid // r)
        ys_full, ys_sk = [], []
        finish(solve_full, A, B, C1, C2, SolverConfig(engine="full", **cfg), on_check=lambda d, Y, rho: ys_full.append(Y))
        finish(solve_sketched, A, B, C1, C2, SolverConfig(engine="sketched", sketch="exact", **cfg), on_check=lambda d, Y, rho: ys_sk.append(Y))
        assert len(ys_full) == len(ys_sk)
        for a, b in zip(ys_sk, ys_full):
            worst = max(worst, rel(a, b))
            checks += 1
    wall = time.perf_counter() - t0
    ok = worst <= 1e-10 and wall < 30
    report(1, ok, f"20 problems, {checks} checks, max rel |Y_sk - Y_full| = {worst:.2e} (<= 1e-10), {wall:.1f} s (< 30)")
    assert ok


# -- 2: dense Sylvester against Kronecker elimination ------------------------------------


def test_criterion_02_dense_sylvester():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(50):
        m = int(rng.integers(1, 11))
        p = int(rng.integers(1, 100 // m + 1))
        p = min(p, 10) if m * p > 100 else p
        H = random_stable(m, 1000 + i)
        G = random_stable(p, 2000 + i)
        C = rng.standard_normal((m, p))
        Y = solve_sylvester_dense(H, G, C)
        L = np.kron(np.eye(p), H) + np.kron(G, np.eye(m))
        Yk = np.linalg.solve(L, C.reshape(-1, order="F")).reshape((m, p), order="F")
        assert m * p <= 100
        worst = max(worst, rel(Y, Yk))
    wall = time.perf_counter() - t0
    ok = worst <= 1e-10 and wall < 10
    report(2, ok, f"50 instances m*p <= 100, max rel error {worst:.2e} (<= 1e-10), {wall:.2f} s (< 10)")
    assert ok


# -- 3: residual identities --------------------------------------------------------


def test_criterion_03_residual_identities():
    t0 = time.perf_counter()
    worst_sk, sk_checks = 0.0, 0
    for i, (kind, s) in enumerate([("srdct", 100), ("gaussian", 120), ("srdct", 160), ("gaussian", 150)]):
        A, B, C1, C2 = convdiff_problem(grid=15, seed=10 + i)
        res = finish(solve_sketched, A, B, C1, C2, SolverConfig(k=3, s=s, sketch=kind, seed=i, p=3, maxit=45, verify=True))
        for ch in res.checks:
            worst_sk = max(worst_sk, abs(ch["sketched_res"] - ch["rho"]) / ch["rho"])
            sk_checks += 1
    violations, tr_checks, instances = 0, 0, 0
    for i in range(50):
        k = (1, 3, 10)[i % 3]
        grid = 8 + i % 7
        A, B, C1, C2 = convdiff_problem(grid=grid, nu=(0.1, 0.02)[i % 2], r=1 + (i % 5 == 0), seed=200 + i)
        res = finish(solve_truncated, A, B, C1, C2, SolverConfig(engine="truncated", k=k, p=4, maxit=40, verify=True))
        instances += 1
        for ch in res.checks:
            tr_checks += 1
            violations += ch["true_res"] > ch["rho"]
    wall = time.perf_counter() - t0
    ok = worst_sk <= 1e-9 and violations == 0 and sk_checks > 0 and wall < 60
    report(
        3,
        ok,
        f"sketched estimator vs explicit |S_U R S_V^T|: max rel diff {worst_sk:.1e} over {sk_checks} checks (<= 1e-9); "
        f"truncated bound violated {violations}/{tr_checks} checks on {instances} instances, k in {{1,3,10}}; {wall:.1f} s",
    )
    assert ok


# -- 4: embedding sandwich -----------------------------------------------------------


def test_criterion_04_embedding_sandwich():
    t0 = time.perf_counter()
    stats = {"runs": 0, "sandwich": 0, "kappa": 0, "bad": []}

    @settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(
        grid=st.integers(8, 16),
        k=st.sampled_from([2, 3, 5]),
        frac=st.floats(0.6, 1.0),
        kind=st.sampled_from(["srdct", "gaussian"]),
        seed=st.integers(0, 10_000),
    )
    def prop(grid, k, frac, kind, seed):
        A, B, C1, C2 = convdiff_problem(grid=grid, seed=seed)
        n = grid * grid
        cfg = SolverConfig(k=k, s=max(4, int(frac * n)), sketch=kind, seed=seed, p=3, maxit=30, verify=True)
        res = finish(solve_sketched, A, B, C1, C2, cfg)
        stats["runs"] += 1
        assert res.checks
        for ch in res.checks:
            eps = max(ch["eps_u"], ch["eps_v"])
            et = eps * (2 + eps)
            # explicit residual carries an absolute rounding floor
            slack = ROUNDOFF * ch["rhs_norm"]
            if et < 1:
                stats["sandwich"] += 1
                lo = np.sqrt(ch["rho"] ** 2 / (1 + et)) - slack
                hi = np.sqrt(ch["rho"] ** 2 / (1 - et)) + slack
                if not lo <= ch["true_res"] <= hi:
                    stats["bad"].append(("sandwich", grid, k, kind, ch["d"]))
                assert lo <= ch["true_res"] <= hi
            for side in ("u", "v"):
                e = ch[f"eps_{side}"]
                if e < 1:
                    stats["kappa"] += 1
                    limit = np.sqrt((1 + e) / (1 - e)) + 1e-6
                    if ch[f"kappa_{side}"] > limit:
                        stats["bad"].append(("kappa", grid, k, kind, ch["d"]))
                    assert ch[f"kappa_{side}"] <= limit

    try:
        prop()
        ok = True
    except AssertionError:
        ok = False
    wall = time.perf_counter() - t0
    ok = ok and stats["sandwich"] > 0 and wall < 60
    report(
        4,
        ok,
        f"{stats['runs']} generated runs: sandwich checked at {stats['sandwich']} checks with eps~ < 1, "
        f"whitened condition bound at {stats['kappa']} checks; failures {stats['bad'][:3]}; {wall:.1f} s",
    )
    assert ok


# -- 5 and 6: desk-scale runs ------------------------------------------------------


@pytest.fixture(scope="module")
def desk():
    A = gen_convdiff_2d(100, 0.1, "example61_A")
    B = gen_convdiff_2d(100, 0.1, "example61_B")
    n = A.shape[0]
    C1, C2 = unit_block(n, 1, 1), unit_block(n, 1, 2)
    out = {"problem": (A, B, C1, C2)}
    t0 = time.perf_counter()
    out["full"] = solve_full(A, B, C1, C2, SolverConfig(engine="full", k=None, tol=1e-6, p=10, maxit=600))
    out["full_wall"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    out["sketched"] = finish(solve_sketched, A, B, C1, C2, SolverConfig(engine="sketched", k=10, s=400, tol=1e-6, p=10, maxit=600))
    out["sketched_wall"] = time.perf_counter() - t0
    return out


@pytest.mark.slow
def test_criterion_05_desk_table1(desk):
    A, B, C1, C2 = desk["problem"]
    full, sk = desk["full"], desk["sketched"]
    true_rel = true_residual(A, B, C1, C2, sk.X1, sk.X2) / rhs_norm(C1, C2)
    d_ratio = sk.d / full.d
    mem_ratio = sk.mem_long_vectors / full.mem_long_vectors
    wall = desk["full_wall"] + desk["sketched_wall"]
    ok = sk.converged and true_rel <= 5e-6 and abs(d_ratio - 1) <= 0.15 and mem_ratio <= 0.15 and wall < 300
    report(
        5,
        ok,
        f"grid 100: sketched d={sk.d} vs full d={full.d} (ratio {d_ratio:.3f}), true rel residual {true_rel:.2e} (<= 5e-6), "
        f"mem {sk.mem_long_vectors} vs {full.mem_long_vectors} (ratio {mem_ratio:.3f} <= 0.15), {wall:.1f} s",
    )
    assert ok


@pytest.mark.slow
def test_criterion_06_truncation_delay(desk):
    A, B, C1, C2 = desk["problem"]
    full, sk = desk["full"], desk["sketched"]
    t0 = time.perf_counter()
    # maxit well beyond 1.1x the full count keeps the run inside the time budget
    tr = finish(solve_truncated, A, B, C1, C2, SolverConfig(engine="truncated", k=10, k_b=10, tol=1e-6, p=10, maxit=300))
    wall = time.perf_counter() - t0 + desk["full_wall"] + desk["sketched_wall"]
    delayed = (not tr.converged) or tr.d >= 1.1 * full.d
    sk_close = sk.converged and abs(sk.d / full.d - 1) <= 0.15
    ok = delayed and sk_close and wall < 300
    state = f"converged at d={tr.d}" if tr.converged else f"not converged by maxit={tr.d} (rel rho {tr.relative_rho:.1e})"
    report(6, ok, f"truncated k=10 {state}; full d={full.d}; sketched k=10 d={sk.d}; {wall:.1f} s")
    assert ok


# -- 7: effective field of values ----------------------------------------------------


def test_criterion_07_effective_fov():
    t0 = time.perf_counter()
    d = 100
    seed = an.find_example45_seed(d, unstable=True)
    H, h = gen_hhat_ex45(d, seed)
    M = H.copy()
    M[:, -1] += h
    eff = an.effective_fov(H, h)
    a_H, a_M = an.alpha(H), an.alpha(M)
    comp_max = np.linalg.eigvals(eff.compressed).real.max()
    # sign=-1 solves M Z + Z M^* + Q1^* e1 e1^* Q1 = 0, whose solution is PSD for stable M
    Y, _ = an.effective_lyapunov(eff, beta=1.0, sign=-1.0)
    nY = np.linalg.norm(Y)
    herm = np.linalg.norm(Y - Y.conj().T) / nY
    min_eig = np.linalg.eigvalsh((Y + Y.conj().T) / 2).min()
    wall = time.perf_counter() - t0
    ok = a_H < 0 < a_M and comp_max < 0 and herm <= 1e-12 and min_eig >= -1e-10 * nY and wall < 10
    report(
        7,
        ok,
        f"seed {seed}: alpha(Hhat)={a_H:.3f} < 0 < alpha(Hhat+hhat e_d^T)={a_M:.3f}; dropped {eff.dropped_count}; "
        f"max Re eig(compressed)={comp_max:.3f} < 0; Y Hermitian ({herm:.1e}), min eig {min_eig:.1e} >= -1e-10|Y| "
        f"(PSD for the form M Y + Y M^* + e1 e1^* = 0); {wall:.2f} s",
    )
    assert ok


# -- 8: ellipse bound ---------------------------------------------------------------


def test_criterion_08_ellipse_bound():
    t0 = time.perf_counter()
    e1 = 2 * an.eta_eps(1 / np.sqrt(2))
    e0 = 2 * an.eta_eps(0.0)
    n = 100
    A = SparseMatrix.from_scipy(sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)))
    c = unit_block(n, 1, 7)
    rows = an.lyapunov_bound_sweep(A, c, SolverConfig(k=None, s=n, sketch="srdct", seed=3), range(5, 31))
    tested = [r for r in rows if r.status == "ok"]
    skipped = [r.d for r in rows if r.status != "ok"]
    violated = [r.d for r in tested if not r.error <= r.bound]
    wall = time.perf_counter() - t0
    ok = abs(e1 - 19.45) <= 0.01 and e0 == 8 and len(rows) == 26 and len(tested) >= 10 and not violated and wall < 60
    worst = max((r.error / r.bound for r in tested), default=float("nan"))
    report(
        8,
        ok,
        f"2 eta(1/sqrt2)={e1:.4f}, 2 eta(0)={e0:g}; 1D Laplacian n=100, d in [5,30]: bound checked at {len(tested)} d, "
        f"skipped {skipped or 'none'}, violations {violated or 'none'}, max error/bound {worst:.2e}; {wall:.1f} s",
    )
    assert ok


# -- 9: tensorized embedding ---------------------------------------------------------


def test_criterion_09_tensor_embedding():
    t0 = time.perf_counter()
    n, d = 400, 5
    m = d + 1
    passed = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        U, _ = np.linalg.qr(rng.standard_normal((n, m)))
        V, _ = np.linalg.qr(rng.standard_normal((n, m)))
        Z = rng.standard_normal((m, m))
        S_U = SketchOperator("gaussian", n, 16 * m, 2 * seed)
        S_V = SketchOperator("gaussian", n, 16 * m, 2 * seed + 1)
        ratio, et = an.tensor_embedding_check(S_U, S_V, U, V, Z)
        passed += (1 - et) <= ratio**2 <= (1 + et)
    wall = time.perf_counter() - t0
    ok = passed >= 95 and wall < 30
    report(9, ok, f"Gaussian s=16(d+1), d=5: sandwich held for {passed}/100 seeds (>= 95); {wall:.1f} s")
    assert ok


# -- 10: two-pass fidelity -------------------------------------------------------------


def test_criterion_10_two_pass():
    t0 = time.perf_counter()
    worst, mem_bad, runs = 0.0, [], 0
    cases = [
        ("sketched", 3, None, 1), ("sketched", 5, 1, 1), ("sketched", 4, 17, 2),
        ("truncated", 3, None, 1), ("truncated", 6, 2, 2), ("sketched", 10, 64, 1),
    ]
    for i, (engine, k, chunk, r) in enumerate(cases):
        A, B, C1, C2 = convdiff_problem(grid=14, r=r, seed=40 + i)
        cfg = SolverConfig(engine=engine, k=k, k_b=k, s=150, chunk=chunk, p=5, tol=1e-7, maxit=150, verify=True)
        res = finish(solve_sketched if engine == "sketched" else solve_truncated, A, B, C1, C2, cfg)
        runs += 1
        ch = res.checks[-1]
        assert ch["d"] == res.d
        Z1, Z2, ell = compress_Y(ch["Y"], cfg.effective_rank_tol)
        if engine == "sketched":
            Z1 = spla.solve_triangular(ch["T_U"], Z1)
            Z2 = spla.solve_triangular(ch["T_V"], Z2)
        assert ell == res.rank
        worst = max(worst, rel(res.X1, ch["U"] @ Z1), rel(res.X2, ch["V"] @ Z2))
        used_chunk = chunk if chunk is not None else k * r
        limit = 2 * (k + 1) * r + 2 * ell + min(used_chunk, res.d * r)
        if res.mem_long_vectors > limit:
            mem_bad.append((engine, k, chunk, res.mem_long_vectors, limit))
    wall = time.perf_counter() - t0
    ok = worst <= 1e-12 and not mem_bad and wall < 60
    report(
        10,
        ok,
        f"{runs} verification runs: max rel |X - U Z| = {worst:.1e} (<= 1e-12); peak memory over 2(k+1)r+2l+chunk: "
        f"{mem_bad or 'none'}; {wall:.1f} s",
    )
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
