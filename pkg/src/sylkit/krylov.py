"""Block Krylov projection solvers for ``A X + X B = C1 C2^T``.

Three engines share one block Arnoldi builder:

``full``
    Every new block is orthogonalized against the whole basis. The basis
    is kept, the projected equation is Galerkin in the Euclidean inner
    product and the residual norm estimate is exact.
``truncated``
    Orthogonalization against the last ``k`` blocks only. The basis is
    locally orthogonal, and the cheap estimate is an upper bound on the
    true residual norm.
``sketched``
    Truncated Arnoldi plus a sketched QR of ``S [U_1, ..., U_{d+1}]``.
    The projected equation is posed for the whitened basis ``U T^{-1}``,
    for which the residual estimate equals the sketched residual norm
    exactly.

Truncated and sketched runs keep only a window of basis blocks. The
solution factors are rebuilt in a second sweep that replays the stored
orthogonalization coefficients, so no inner products are recomputed.
"""

from collections import deque
from dataclasses import dataclass, field
import logging
import time
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg as spla
from scipy.linalg import blas

from .errors import (
    Breakdown,
    DimensionMismatch,
    MaxIterations,
    ReplayMismatch,
    SingularOperator,
)
from .linalg import householder_qr, solve_sylvester_dense, svd
from .sketch import SketchOperator, SketchedQR, measure_distortion, sketch_apply, whiten_hessenberg_update
from .sparse import SparseMatrix, spmv_block

log = logging.getLogger(__name__)

ENGINES = ("full", "truncated", "sketched")
MAX_CONSECUTIVE_SKIPS = 5
VERIFY_MAX_N = 2000


@dataclass
class SolverConfig:
    """Parameters of one solve.

    ``k = None`` disables truncation. ``k_b`` sets a separate depth for
    the ``B`` basis (truncated engine only). ``s = None`` picks
    ``min(n, 400)``. The ``B`` side sketch uses ``seed_v`` (default
    ``seed + 1``); pass ``seed_v = seed`` to share one sketch, as the
    Lyapunov analysis requires. ``rank_tol = None`` means ``tol / 10``. ``chunk``
    is the number of basis columns gathered per product in the second
    sweep (default ``k * r``).
    """

    engine: str = "sketched"
    tol: float = 1e-6
    maxit: int = 500
    k: Optional[int] = 10
    k_b: Optional[int] = None
    p: int = 10
    s: Optional[int] = None
    sketch: str = "srdct"
    seed: int = 0
    seed_v: Optional[int] = None
    rank_tol: Optional[float] = None
    chunk: Optional[int] = None
    verify: bool = False
    paper_literal_scale: bool = False
    reorth: bool = False

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.maxit < 1:
            raise ValueError("maxit must be at least 1")
        if self.p < 1:
            raise ValueError("p must be at least 1")
        for name in ("k", "k_b"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be positive or None")
        if self.chunk is not None and self.chunk < 1:
            raise ValueError("chunk must be positive")

    @property
    def effective_rank_tol(self):
        return self.tol / 10 if self.rank_tol is None else self.rank_tol

    def depths(self):
        if self.engine == "full":
            return None, None
        if self.engine == "sketched":
            return self.k, self.k
        return self.k, self.k if self.k_b is None else self.k_b


class HistoryEntry(NamedTuple):
    d: int
    rho: float
    wall: float
    mem: int


@dataclass
class SolveResult:
    X1: np.ndarray
    X2: np.ndarray
    d: int
    history: list
    rank: int
    mem_long_vectors: int
    converged: bool
    engine: str
    rho: float = float("nan")
    rhs_norm: float = float("nan")
    wall: float = 0.0
    Y: Optional[np.ndarray] = None
    skipped: list = field(default_factory=list)
    breakdown: bool = False
    checks: list = field(default_factory=list)

    @property
    def relative_rho(self):
        return self.rho / self.rhs_norm


class LongVectorCounter:
    """Tracks the number of live length-``n`` columns.

    Every long buffer of a solve is allocated through :meth:`alloc` (or
    registered with :meth:`adopt`) and dropped with :meth:`free`; the peak
    of the running column count is the memory figure reported by solves.
    """

    def __init__(self):
        self._live = {}
        self.live = 0
        self.peak = 0

    def adopt(self, arr):
        cols = 1 if arr.ndim == 1 else arr.shape[1]
        self._live[id(arr)] = cols
        self.live += cols
        self.peak = max(self.peak, self.live)
        return arr

    def alloc(self, n, cols):
        return self.adopt(np.zeros((n, cols)))

    def free(self, arr):
        self.live -= self._live.pop(id(arr))


def _normalize(W, ref):
    """``W = U R`` with ``R`` from Householder QR and ``U = W R^{-1}``.

    The triangular solve, rather than the Householder ``Q``, defines ``U``
    so that replaying the same ``W`` reproduces ``U`` bit for bit.
    """
    _, R = householder_qr(W)
    diag = np.diagonal(R)
    small = np.flatnonzero(diag <= 1e-14 * ref) if ref > 0 else np.arange(len(diag))
    if small.size:
        raise Breakdown(
            f"new basis column {int(small[0])} is numerically dependent",
            column=int(small[0]),
        )
    U = spla.solve_triangular(R, W.T, trans="T").T
    return U, R


class BlockArnoldi:
    """Windowed block Arnoldi process for ``M`` (or ``M^T``).

    Parameters
    ----------
    M : SparseMatrix
    C : (n, r) starting block
    k : truncation depth, ``None`` for full orthogonalization
    transpose : build the space of ``M^T`` instead of ``M``
    counter : LongVectorCounter for the live basis blocks
    keep_all : retain every block in :attr:`shadow` (not counted)
    reorth : run a second orthogonalization pass
    """

    def __init__(self, M, C, k=None, transpose=False, counter=None, keep_all=False, reorth=False):
        self.M = M
        self.transpose = transpose
        self.k = k
        self.reorth = reorth
        self.counter = counter if counter is not None else LongVectorCounter()
        C = np.asarray(C, dtype=float)
        self.n, self.r = C.shape
        U1, self.ell = _normalize(C, np.linalg.norm(C))
        self.counter.adopt(U1)
        self.window = deque([U1])
        self.nblocks = 1
        self._H = np.zeros((8 * self.r, 8 * self.r))
        self.shadow = [U1.copy()] if keep_all else None

    @property
    def H(self):
        """Block Hessenberg matrix with ``nblocks`` block rows and ``nblocks-1`` block columns."""
        r = self.r
        return self._H[: self.nblocks * r, : (self.nblocks - 1) * r]

    def block(self, i, j):
        r = self.r
        return self._H[(i - 1) * r : i * r, (j - 1) * r : j * r]

    def _ensure(self, rows):
        if rows <= self._H.shape[0]:
            return
        size = self._H.shape[0]
        while size < rows:
            size *= 2
        H = np.zeros((size, size))
        H[: self._H.shape[0], : self._H.shape[1]] = self._H
        self._H = H

    @property
    def last(self):
        return self.window[-1]

    def first_orth_index(self, j):
        return 1 if self.k is None else max(1, j - self.k + 1)

    def step(self):
        """Expand the basis by one block; returns ``U_{j+1}``.

        Raises Breakdown (after recording the Hessenberg column) when the
        new block is numerically dependent on the window.
        """
        j = self.nblocks
        r = self.r
        self._ensure((j + 1) * r)
        W = self.counter.adopt(spmv_block(self.M, self.last, transpose=self.transpose))
        ref = np.linalg.norm(W)
        lo = self.first_orth_index(j)
        blocks = list(self.window)[len(self.window) - (j - lo + 1) :]
        for _ in range(2 if self.reorth else 1):
            for i, Ui in zip(range(lo, j + 1), blocks):
                h = Ui.T @ W
                W -= Ui @ h
                self._H[(i - 1) * r : i * r, (j - 1) * r : j * r] += h
        try:
            if (j + 1) * r > self.n:
                raise Breakdown(f"Krylov space exhausted at dimension {j * r}", column=j * r)
            U, R = _normalize(W, ref)
        except Breakdown:
            _, R = householder_qr(W)
            self._H[j * r : (j + 1) * r, (j - 1) * r : j * r] = R
            self.counter.free(W)
            raise
        self._H[j * r : (j + 1) * r, (j - 1) * r : j * r] = R
        self.counter.free(W)
        self.counter.adopt(U)
        self.window.append(U)
        self.nblocks += 1
        if self.shadow is not None:
            self.shadow.append(U.copy())
        if self.k is not None:
            while len(self.window) > self.k:
                self.counter.free(self.window.popleft())
        return U

    def release(self):
        while self.window:
            self.counter.free(self.window.popleft())

    def basis(self, d=None):
        """Retained basis ``[U_1 ... U_d]`` (requires ``keep_all``)."""
        if self.shadow is None:
            raise RuntimeError("basis was not retained; build with keep_all=True")
        d = len(self.shadow) if d is None else d
        return np.hstack(self.shadow[:d])


# -- residual estimates -------------------------------------------------------


def _last_block_rows(Y, d, r):
    return Y[(d - 1) * r : d * r, :]


def _last_block_cols(Y, d, r):
    return Y[:, (d - 1) * r : d * r]


def residual_norm_full(Y, h_last, g_last, d, r):
    """Exact Frobenius residual norm for orthonormal bases."""
    a = np.linalg.norm(h_last @ _last_block_rows(Y, d, r))
    b = np.linalg.norm(_last_block_cols(Y, d, r) @ g_last.T)
    return float(np.hypot(a, b))


def residual_bound_truncated(Y, h_last, g_last, d, r):
    """Upper bound ``sqrt(dr) (|Y E_d g^T| + |h E_d^T Y|)`` on the truncated residual."""
    a = np.linalg.norm(_last_block_cols(Y, d, r) @ np.asarray(g_last).T)
    b = np.linalg.norm(np.asarray(h_last) @ _last_block_rows(Y, d, r))
    return float(np.sqrt(d * r) * (a + b))


def residual_norm_sketched(Y, h_last, g_last, d, r):
    """Sketched residual norm ``sqrt(|h E_d^T Y|^2 + |Y E_d g^T|^2)``.

    For the sketched engine ``h_last``, ``g_last`` are the whitened
    next-block coefficients ``tau_{d+1} h_{d+1,d} tau_d^{-1}``.
    """
    return residual_norm_full(Y, np.asarray(h_last), np.asarray(g_last), d, r)


# -- compression and reconstruction ------------------------------------------


def compress_Y(Y, rank_tol):
    """Balanced low-rank factors with ``|Y - Y1 Y2^T|_F <= rank_tol |Y|_F``."""
    Y = np.asarray(Y, dtype=float)
    U, s, V = svd(Y)
    total = np.linalg.norm(s)
    if total == 0.0:
        return np.zeros((Y.shape[0], 0)), np.zeros((Y.shape[1], 0)), 0
    # tail[i] = norm of s[i:]
    tail = np.sqrt(np.cumsum((s**2)[::-1])[::-1])
    tail = np.append(tail, 0.0)
    ell = int(np.argmax(tail <= rank_tol * total))
    root = np.sqrt(s[:ell])
    return U[:, :ell] * root, V[:, :ell] * root, ell


def _accumulate(X, stage, filled, Z, row0):
    if filled:
        _gemm_into(X, stage[:, :filled], Z[row0 : row0 + filled])


def _gemm_into(X, U, Zrows):
    """``X += U @ Zrows`` without an n-by-ell temporary (X is Fortran-ordered)."""
    blas.dgemm(1.0, U, Zrows, beta=1.0, c=X, overwrite_c=True)


def replay_product(M, C, H, k, Z, chunk=None, transpose=False, counter=None, reorth=False):
    """Second sweep: regenerate ``U_1, ..., U_d`` and return ``U_d Z``.

    ``H`` holds the coefficients of the first sweep (at least ``d`` block
    rows and ``d-1`` block columns), ``k`` the truncation depth used
    there. With ``chunk=None`` each block is folded into the result as it
    leaves the truncation window, so no staging memory is needed. An
    explicit ``chunk`` gathers blocks into a staging buffer of that many
    columns and multiplies them in one product per flush.
    """
    counter = counter if counter is not None else LongVectorCounter()
    C = np.asarray(C, dtype=float)
    n, r = C.shape
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] % r:
        raise DimensionMismatch(f"Z has {Z.shape[0]} rows, not a multiple of r={r}")
    d = Z.shape[0] // r
    ell = Z.shape[1]
    staged = chunk is not None
    X = counter.adopt(np.zeros((n, ell), order="F"))
    if staged:
        chunk = min(max(r, chunk), d * r)
        stage = counter.alloc(n, chunk)
    U1, _ = _normalize(C, np.linalg.norm(C))
    counter.adopt(U1)
    window = deque([U1])
    filled, row0 = 0, 0

    def evict():
        # the oldest block in the window is block j - len(window) + 1
        U = window.popleft()
        if not staged:
            i = j - len(window) - 1
            _gemm_into(X, U, Z[i * r : (i + 1) * r])
        counter.free(U)

    for j in range(1, d + 1):
        Uj = window[-1]
        if staged:
            if filled + r > chunk:
                _accumulate(X, stage, filled, Z, row0)
                row0 += filled
                filled = 0
            stage[:, filled : filled + r] = Uj
            filled += r
        if j == d:
            break
        W = counter.adopt(spmv_block(M, Uj, transpose=transpose))
        lo = 1 if k is None else max(1, j - k + 1)
        blocks = list(window)[len(window) - (j - lo + 1) :]
        for i, Ui in zip(range(lo, j + 1), blocks):
            W -= Ui @ H[(i - 1) * r : i * r, (j - 1) * r : j * r]
        h_next = H[j * r : (j + 1) * r, (j - 1) * r : j * r]
        got = np.linalg.norm(W, axis=0)
        want = np.linalg.norm(h_next, axis=0)
        tol = 1e-6 if reorth else 1e-8
        if np.any(np.abs(got - want) > tol * np.maximum(want, 1e-300)):
            raise ReplayMismatch(
                f"replayed block {j + 1} column norms {got} differ from stored {want}"
            )
        if k is not None and len(window) >= k:
            # block j - k + 1 is no longer needed for the recurrence
            evict()
        U = spla.solve_triangular(h_next, W.T, trans="T").T
        counter.free(W)
        counter.adopt(U)
        window.append(U)
    if staged:
        _accumulate(X, stage, filled, Z, row0)
        counter.free(stage)
    j = d
    while window:
        evict()
    return X


def two_pass_reconstruct(A, B, C1, C2, Hband_A, Hband_B, Z1, Z2, chunk=None, k_a=None, k_b=None, counter=None):
    """Rebuild ``X1 = U_d Z1`` and ``X2 = V_d Z2`` by replaying both Arnoldi sweeps."""
    counter = counter if counter is not None else LongVectorCounter()
    X1 = replay_product(A, C1, Hband_A, k_a, Z1, chunk=chunk, counter=counter)
    X2 = replay_product(B, C2, Hband_B, k_b, Z2, chunk=chunk, transpose=True, counter=counter)
    return X1, X2


# -- explicit residuals (verification) ---------------------------------------


def _lowrank_norm(L, R):
    """Frobenius norm of ``L R^T`` through thin QR factors."""
    if L.shape[1] > min(L.shape[0], R.shape[0]):
        return float(np.linalg.norm(L @ R.T))
    _, RL = householder_qr(L)
    _, RR = householder_qr(R)
    return float(np.linalg.norm(RL @ RR.T))


def residual_factors(A, B, C1, C2, X1, X2):
    """Factors ``L, R`` with ``A X + X B - C1 C2^T = L R^T`` for ``X = X1 X2^T``."""
    AX1 = spmv_block(A, X1) if X1.shape[1] else X1
    BtX2 = spmv_block(B, X2, transpose=True) if X2.shape[1] else X2
    L = np.hstack([AX1, X1, C1])
    R = np.hstack([X2, BtX2, -C2])
    return L, R


def true_residual(A, B, C1, C2, X1, X2):
    """Absolute Frobenius norm of ``A X1 X2^T + X1 X2^T B - C1 C2^T``."""
    L, R = residual_factors(A, B, C1, C2, X1, X2)
    return _lowrank_norm(L, R)


def rhs_norm(C1, C2):
    return _lowrank_norm(np.asarray(C1, float), np.asarray(C2, float))


# -- engines -----------------------------------------------------------------


def _check_problem(A, B, C1, C2):
    C1 = np.asarray(C1, dtype=float)
    C2 = np.asarray(C2, dtype=float)
    if C1.ndim == 1:
        C1 = C1[:, None]
    if C2.ndim == 1:
        C2 = C2[:, None]
    if A.shape[0] != A.shape[1] or B.shape[0] != B.shape[1]:
        raise DimensionMismatch("A and B must be square")
    if C1.shape[0] != A.shape[0] or C2.shape[0] != B.shape[0]:
        raise DimensionMismatch(
            f"C1 {C1.shape} / C2 {C2.shape} do not match A {A.shape} / B {B.shape}"
        )
    if C1.shape[1] != C2.shape[1]:
        raise DimensionMismatch("C1 and C2 must have the same number of columns")
    return C1, C2


class _Run:
    """State shared by the three engines during one solve."""

    def __init__(self, A, B, C1, C2, cfg, on_check):
        self.A, self.B = A, B
        self.C1, self.C2 = _check_problem(A, B, C1, C2)
        self.cfg = cfg
        self.on_check = on_check
        self.r = self.C1.shape[1]
        self.counter = LongVectorCounter()
        if cfg.verify and max(A.shape[0], B.shape[0]) > VERIFY_MAX_N:
            raise ValueError(f"verification mode is limited to n <= {VERIFY_MAX_N}")
        k_a, k_b = cfg.depths()
        self.k_a, self.k_b = k_a, k_b
        keep = cfg.verify
        self.arnA = BlockArnoldi(A, self.C1, k_a, False, self.counter, keep, cfg.reorth)
        self.arnB = BlockArnoldi(B, self.C2, k_b, True, self.counter, keep, cfg.reorth)
        self.t0 = time.perf_counter()
        self.history = []
        self.checks = []
        self.skipped = []
        # (T_U, T_V) of the latest sketched check
        self.whiten = None

    def record(self, d, rho):
        entry = HistoryEntry(d, float(rho), time.perf_counter() - self.t0, self.counter.live)
        self.history.append(entry)
        return entry


def _rhs(d, r, b1, b2):
    E = np.zeros((d * r, d * r))
    E[:r, :r] = b1 @ b2.T
    return E


def _finish(run, cfg, d, Y, Z, rho, beta, converged, breakdown):
    """Compress the projected solution and build the long factors."""
    if run.whiten is None:
        Z1, Z2, ell = compress_Y(Z, cfg.effective_rank_tol)
    else:
        # truncate in whitened coordinates, where the basis is nearly
        # orthonormal; Z itself can be huge with cancelling terms
        TU, TV = run.whiten
        Y1, Y2, ell = compress_Y(Y, cfg.effective_rank_tol)
        Z1 = spla.solve_triangular(TU, Y1)
        Z2 = spla.solve_triangular(TV, Y2)
    r = run.r
    if cfg.engine == "full":
        # the whole basis is live in the window
        X1 = run.counter.alloc(run.arnA.n, ell)
        X2 = run.counter.alloc(run.arnB.n, ell)
        for i, (Ui, Vi) in enumerate(zip(run.arnA.window, run.arnB.window)):
            if i == d:
                break
            X1 += Ui @ Z1[i * r : (i + 1) * r]
            X2 += Vi @ Z2[i * r : (i + 1) * r]
        run.arnA.release()
        run.arnB.release()
    else:
        run.arnA.release()
        run.arnB.release()
        X1 = replay_product(run.A, run.C1, run.arnA.H, run.k_a, Z1, cfg.chunk, False, run.counter, cfg.reorth)
        X2 = replay_product(run.B, run.C2, run.arnB.H, run.k_b, Z2, cfg.chunk, True, run.counter, cfg.reorth)
    result = SolveResult(
        X1=X1,
        X2=X2,
        d=d,
        history=run.history,
        rank=ell,
        mem_long_vectors=run.counter.peak,
        converged=converged,
        engine=cfg.engine,
        rho=float(rho),
        rhs_norm=float(beta),
        wall=time.perf_counter() - run.t0,
        Y=Y,
        skipped=run.skipped,
        breakdown=breakdown,
        checks=run.checks,
    )
    if not converged and not breakdown:
        raise MaxIterations(
            f"no convergence in {cfg.maxit} iterations (relative estimate {rho / beta:.3e})",
            result=result,
        )
    return result


def _verify(run, d, Y, Z, rho, extra):
    """Explicit checks against the retained bases (small problems only)."""
    r = run.r
    U = run.arnA.basis(d)
    V = run.arnB.basis(d)
    P = U @ Z
    L, R = residual_factors(run.A, run.B, run.C1, run.C2, P, V)
    info = {
        "d": d,
        "Y": Y.copy(),
        "rho": float(rho),
        "true_res": _lowrank_norm(L, R),
        "rhs_norm": rhs_norm(run.C1, run.C2),
    }
    Ufull = run.arnA.basis()
    Vfull = run.arnB.basis()
    info["U"], info["V"] = U, V
    if Ufull.shape[1] >= (d + 1) * r:
        info["U_next"] = Ufull[:, d * r : (d + 1) * r]
    if Vfull.shape[1] >= (d + 1) * r:
        info["V_next"] = Vfull[:, d * r : (d + 1) * r]
    info["relation_A"] = float(
        np.linalg.norm(spmv_block(run.A, U) - Ufull[:, : (d + 1) * r] @ run.arnA.H[: (d + 1) * r, : d * r])
        if Ufull.shape[1] >= (d + 1) * r
        else np.nan
    )
    info.update(extra)
    if "S_U" in extra:
        S_U, S_V = extra["S_U"], extra["S_V"]
        SL, SR = sketch_apply(S_U, L), sketch_apply(S_V, R)
        info["sketched_res"] = _lowrank_norm(SL, SR)
        QU, _ = householder_qr(Ufull)
        QV, _ = householder_qr(Vfull)
        info["eps_u"] = measure_distortion(S_U, QU)
        info["eps_v"] = measure_distortion(S_V, QV)
        TU, TV = extra["T_U"], extra["T_V"]
        Uw = spla.solve_triangular(TU, U.T, trans="T").T
        Vw = spla.solve_triangular(TV, V.T, trans="T").T
        sv = np.linalg.svd(Uw, compute_uv=False)
        info["kappa_u"] = float(sv[0] / sv[-1])
        sv = np.linalg.svd(Vw, compute_uv=False)
        info["kappa_v"] = float(sv[0] / sv[-1])
        SUw, SVw = sketch_apply(S_U, Uw), sketch_apply(S_V, Vw)
        G = (SUw.T @ SL) @ (SR.T @ SVw)
        info["galerkin"] = float(np.linalg.norm(G))
    else:
        info["galerkin"] = float(np.linalg.norm((U.T @ L) @ (R.T @ V)))
    return info


def _step_both(run, d):
    grew = []
    for arn in (run.arnA, run.arnB):
        try:
            arn.step()
            grew.append(True)
        except Breakdown as exc:
            log.info("lucky breakdown at step %d: %s", d, exc)
            grew.append(False)
    return tuple(grew)


def _check_due(d, cfg):
    return d % cfg.p == 0 or d == cfg.maxit


def solve_full(A, B, C1, C2, cfg=None, on_check=None):
    """Fully orthogonal block Arnoldi Galerkin solve."""
    cfg = SolverConfig(engine="full") if cfg is None else cfg
    if cfg.engine != "full":
        cfg = _with(cfg, engine="full")
    return _solve_orthogonal(A, B, C1, C2, cfg, on_check)


def solve_truncated(A, B, C1, C2, cfg=None, on_check=None):
    """Truncated block Arnoldi solve with depths ``cfg.k`` and ``cfg.k_b``."""
    cfg = SolverConfig(engine="truncated") if cfg is None else cfg
    if cfg.engine != "truncated":
        cfg = _with(cfg, engine="truncated")
    return _solve_orthogonal(A, B, C1, C2, cfg, on_check)


def _with(cfg, **kw):
    data = dict(cfg.__dict__)
    data.update(kw)
    return SolverConfig(**data)


def _solve_orthogonal(A, B, C1, C2, cfg, on_check):
    run = _Run(A, B, C1, C2, cfg, on_check)
    r = run.r
    b1, b2 = run.arnA.ell, run.arnB.ell
    beta = float(np.linalg.norm(b1 @ b2.T))
    estimate = residual_norm_full if cfg.engine == "full" else residual_bound_truncated
    Y = Z = None
    rho = np.inf
    for d in range(1, cfg.maxit + 1):
        grew_a, grew_b = _step_both(run, d)
        breakdown = not (grew_a and grew_b)
        if not (breakdown or _check_due(d, cfg)):
            continue
        H = run.arnA._H[: d * r, : d * r]
        G = run.arnB._H[: d * r, : d * r]
        h = run.arnA.block(d + 1, d)
        g = run.arnB.block(d + 1, d)
        Y = solve_sylvester_dense(H, G, _rhs(d, r, b1, b2))
        Z = Y
        rho = estimate(Y, h, g, d, r)
        run.record(d, rho)
        if cfg.verify:
            run.checks.append(_verify(run, d, Y, Z, rho, {"H": H.copy(), "G": G.copy()}))
        if on_check is not None:
            on_check(d, Y, rho)
        if rho < cfg.tol * beta or breakdown:
            return _finish(run, cfg, d, Y, Z, rho, beta, rho < cfg.tol * beta, breakdown)
    return _finish(run, cfg, cfg.maxit, Y, Z, rho, beta, False, False)


def make_sketches(n1, n2, cfg):
    """The pair ``(S_U, S_V)`` used by the sketched engine."""
    kind = cfg.sketch
    out = []
    seed_v = cfg.seed + 1 if cfg.seed_v is None else cfg.seed_v
    for n, seed in ((n1, cfg.seed), (n2, seed_v)):
        s = n if kind == "exact" else min(n, cfg.s if cfg.s is not None else 400)
        out.append(SketchOperator(kind, n, s, seed, cfg.paper_literal_scale))
    return tuple(out)


class _WhitenedSide:
    """Sketched QR and whitened Hessenberg bookkeeping for one basis."""

    def __init__(self, S, arn):
        self.S = S
        self.arn = arn
        self.qr = SketchedQR(S.s)
        self.t, self.tau = self.qr.append(sketch_apply(S, arn.last))
        self.Hhat = np.zeros((0, 0))
        self.pending = None

    def advance(self, j, grew):
        """Fold step ``j`` into ``Hhat`` and return ``(M_j, hn)``.

        ``M_j`` is the projected coefficient matrix and ``hn`` the whitened
        next-block coefficient. ``grew`` tells whether ``U_{j+1}`` exists.
        """
        arn, r = self.arn, self.arn.r
        T_prev = self.qr.T[: (j - 1) * r, : (j - 1) * r]
        h_col = arn._H[: (j - 1) * r, (j - 1) * r : j * r]
        h_sub = arn.block(j, j - 1) if j > 1 else np.zeros((r, r))
        h_diag = arn.block(j, j)
        self.Hhat, _ = whiten_hessenberg_update(self.Hhat, T_prev, self.t, self.tau, h_col, h_sub, h_diag)
        tau_j = self.tau
        h_next = arn.block(j + 1, j)
        M = self.Hhat.copy()
        if grew:
            self.t, self.tau = self.qr.append(sketch_apply(self.S, arn.last))
            tau_inv = np.linalg.solve(tau_j, np.eye(r))
            M[:, (j - 1) * r :] += self.t @ h_next @ tau_inv
            hn = self.tau @ h_next @ tau_inv
        else:
            hn = np.zeros((r, r))
        return M, hn

    @property
    def beta(self):
        return self.qr.T[: self.arn.r, : self.arn.r] @ self.arn.ell


def solve_sketched(A, B, C1, C2, cfg=None, on_check=None):
    """Sketched-and-truncated block Arnoldi solve."""
    cfg = SolverConfig(engine="sketched") if cfg is None else cfg
    if cfg.engine != "sketched":
        cfg = _with(cfg, engine="sketched")
    run = _Run(A, B, C1, C2, cfg, on_check)
    r = run.r
    S_U, S_V = make_sketches(A.shape[0], B.shape[0], cfg)
    side_u = _WhitenedSide(S_U, run.arnA)
    side_v = _WhitenedSide(S_V, run.arnB)
    b1, b2 = side_u.beta, side_v.beta
    beta = float(np.linalg.norm(b1 @ b2.T))
    Y = Z = None
    rho = np.inf
    consecutive = 0
    for d in range(1, cfg.maxit + 1):
        grew_a, grew_b = _step_both(run, d)
        breakdown = not (grew_a and grew_b)
        MU, hn = side_u.advance(d, grew_a)
        MV, gn = side_v.advance(d, grew_b)
        if not (breakdown or _check_due(d, cfg)):
            continue
        try:
            Ycand = solve_sylvester_dense(MU, MV, _rhs(d, r, b1, b2))
        except SingularOperator as exc:
            consecutive += 1
            run.skipped.append(d)
            log.warning("projected equation singular at d=%d, skipping check: %s", d, exc)
            if consecutive >= MAX_CONSECUTIVE_SKIPS or breakdown:
                raise SingularOperator(
                    f"projected equation singular at {consecutive} consecutive checks (last d={d})",
                    pair=exc.pair,
                    value=exc.value,
                ) from exc
            continue
        consecutive = 0
        Y = Ycand
        rho = residual_norm_sketched(Y, hn, gn, d, r)
        TU = side_u.qr.T[: d * r, : d * r]
        TV = side_v.qr.T[: d * r, : d * r]
        Z = spla.solve_triangular(TU, Y)
        Z = spla.solve_triangular(TV, Z.T).T
        run.whiten = (TU, TV)
        run.record(d, rho)
        if cfg.verify:
            extra = {
                "S_U": S_U,
                "S_V": S_V,
                "T_U": TU.copy(),
                "T_V": TV.copy(),
                "T_U_full": side_u.qr.T.copy(),
                "T_V_full": side_v.qr.T.copy(),
                "M_U": MU.copy(),
                "M_V": MV.copy(),
                "hn": hn.copy(),
                "gn": gn.copy(),
                "H": run.arnA.H.copy(),
                "G": run.arnB.H.copy(),
            }
            run.checks.append(_verify(run, d, Y, Z, rho, extra))
        if on_check is not None:
            on_check(d, Y, rho)
        if rho < cfg.tol * beta or breakdown:
            return _finish(run, cfg, d, Y, Z, rho, beta, rho < cfg.tol * beta, breakdown)
    if Y is None:
        raise SingularOperator("projected equation was never solvable")
    return _finish(run, cfg, run.history[-1].d, Y, Z, rho, beta, False, False)


def solve(A, B, C1, C2, cfg: SolverConfig, on_check: Optional[Callable] = None) -> SolveResult:
    """Dispatch to the engine named in ``cfg.engine``."""
    fn = {"full": solve_full, "truncated": solve_truncated, "sketched": solve_sketched}[cfg.engine]
    return fn(A, B, C1, C2, cfg, on_check)
