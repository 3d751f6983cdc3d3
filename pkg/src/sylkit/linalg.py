"""Dense linear algebra kernels for the projected (small) problems.

Matrices are plain :class:`numpy.ndarray` objects. Real and complex inputs
are kept apart: a routine returns real output only when every input is
real, and complex promotion happens explicitly inside the routine.
"""

from dataclasses import dataclass
import csv

import numpy as np
import scipy.linalg as spla

from .errors import NonConvergence, NotHermitian, ParseError, SingularOperator

_EPS = np.finfo(float).eps


def householder_qr(M, thin=True):
    """QR factorization by Householder reflections.

    The diagonal of ``R`` is made nonnegative, so the factorization of a
    full-rank matrix is unique. Rank deficiency shows up as small diagonal
    entries of ``R``; it is not treated as an error.

    Parameters
    ----------
    M : (m, n) array
    thin : bool
        Return the economy factors ``Q`` (m x n) and ``R`` (n x n).
        Requires ``m >= n``.

    Returns
    -------
    Q, R : arrays
    """
    A = np.array(M, dtype=np.result_type(M, float), copy=True)
    if A.ndim == 1:
        A = A[:, None]
    m, n = A.shape
    if thin and m < n:
        raise ValueError(f"thin QR needs rows >= cols, got {m}x{n}")
    steps = min(m - 1, n) if m > n else min(m, n)
    vs = []
    for j in range(steps):
        x = A[j:, j]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            vs.append(None)
            continue
        v = x.copy()
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v[0] += phase * alpha
        v /= np.linalg.norm(v)
        A[j:, j:] -= 2.0 * np.outer(v, v.conj() @ A[j:, j:])
        vs.append(v)
    k = n if thin else m
    Q = np.eye(m, k, dtype=A.dtype)
    for j in reversed(range(len(vs))):
        v = vs[j]
        if v is not None:
            Q[j:, :] -= 2.0 * np.outer(v, v.conj() @ Q[j:, :])
    R = np.triu(A[:k, :] if thin else A)
    # fix signs so that diag(R) >= 0
    d = np.diagonal(R).copy()
    phase = np.ones(len(d), dtype=A.dtype)
    nz = d != 0
    phase[nz] = d[nz] / np.abs(d[nz])
    R[: len(d), :] *= phase.conj()[:, None]
    Q[:, : len(d)] *= phase[None, :]
    return Q, R


@dataclass(frozen=True)
class SchurDecomposition:
    """Complex Schur form ``A = Q R Q^*`` with unitary ``Q``."""

    Q: np.ndarray
    R: np.ndarray

    @property
    def dim(self):
        return self.R.shape[0]

    @property
    def eigenvalues(self):
        return np.diagonal(self.R).copy()


def complex_schur(M):
    """Complex Schur decomposition of a square real or complex matrix.

    Backed by LAPACK's shifted QR algorithm (``zgees``); entries of ``R``
    below the diagonal are set to exactly zero.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"square matrix required, got shape {M.shape}")
    if M.shape[0] == 0:
        z = np.zeros((0, 0), dtype=complex)
        return SchurDecomposition(z, z.copy())
    try:
        R, Q = spla.schur(M.astype(complex), output="complex")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NonConvergence(f"Schur QR iteration failed: {exc}") from exc
    R = np.triu(R)
    return SchurDecomposition(Q, R)


def _swap_adjacent(Q, R, k):
    t11, t22, t12 = R[k, k], R[k + 1, k + 1], R[k, k + 1]
    if t11 == t22:
        return
    x = np.array([t12, t22 - t11])
    x /= np.linalg.norm(x)
    G = np.array([[x[0], -np.conj(x[1])], [x[1], np.conj(x[0])]])
    R[:, k : k + 2] = R[:, k : k + 2] @ G
    R[k : k + 2, :] = G.conj().T @ R[k : k + 2, :]
    Q[:, k : k + 2] = Q[:, k : k + 2] @ G
    R[k + 1, k] = 0.0
    R[k, k], R[k + 1, k + 1] = t22, t11


def reorder_schur(schur, select):
    """Reorder a complex Schur form so that selected eigenvalues come first.

    ``select`` is a boolean mask over the current diagonal of ``R``. The
    relative order inside each group is preserved. Adjacent diagonal
    entries are exchanged with unitary 2x2 rotations, so the eigenvalue
    multiset is kept exactly.
    """
    select = np.asarray(select, dtype=bool)
    Q = schur.Q.astype(complex, copy=True)
    R = schur.R.astype(complex, copy=True)
    order = list(np.flatnonzero(select))
    ins = 0
    for pos in order:
        for k in range(pos - 1, ins - 1, -1):
            _swap_adjacent(Q, R, k)
        ins += 1
    return SchurDecomposition(Q, np.triu(R))


def hermitian_eig(M, check_tol=1e-12):
    """Eigen-decomposition of a Hermitian matrix, eigenvalues ascending."""
    M = np.asarray(M)
    scale = max(np.linalg.norm(M), 1e-300)
    if np.linalg.norm(M - M.conj().T) > check_tol * scale:
        raise NotHermitian("matrix is not Hermitian to working tolerance")
    values, vectors = np.linalg.eigh(M)
    return values, vectors


def _round_robin(n):
    """Pairings of a round-robin tournament on ``n`` (even) players."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        rounds.append(
            (np.array(players[: n // 2]), np.array(players[n // 2 :][::-1]))
        )
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_sweeps(U, V, max_sweeps=80):
    n = U.shape[1]
    if n < 2:
        return U, V
    m = n + (n % 2)
    if m != n:
        U = np.hstack([U, np.zeros((U.shape[0], 1))])
        V = np.pad(V, ((0, 1), (0, 1)))
    tol = m * _EPS
    rounds = _round_robin(m)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            up, uq = U[:, p], U[:, q]
            a = np.einsum("ij,ij->j", up, up)
            b = np.einsum("ij,ij->j", uq, uq)
            g = np.einsum("ij,ij->j", up, uq)
            act = np.abs(g) > tol * np.sqrt(a * b)
            act &= (a > 0) & (b > 0)
            if not act.any():
                continue
            rotated = True
            p, q, a, b, g = p[act], q[act], a[act], b[act], g[act]
            zeta = (b - a) / (2.0 * g)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t[zeta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for X in (U, V):
                xp, xq = X[:, p].copy(), X[:, q]
                X[:, p] = c * xp - s * xq
                X[:, q] = s * xp + c * xq
        if not rotated:
            break
    return U[:, :n], V[:n, :n]


def svd(M):
    """Thin singular value decomposition by one-sided Jacobi rotations.

    Returns ``U`` (m x k), ``sigma`` (k,) nonincreasing and ``V`` (n x k)
    with ``k = min(m, n)`` and ``M = U @ diag(sigma) @ V.T``. Tall inputs
    are first reduced by a QR factorization; wide inputs are transposed.
    """
    M = np.asarray(M, dtype=float)
    m, n = M.shape
    if m < n:
        V, s, U = svd(M.T)
        return U, s, V
    if n == 0:
        return np.zeros((m, 0)), np.zeros(0), np.zeros((0, 0))
    Q, R = householder_qr(M)
    W, V = _jacobi_sweeps(R.copy(), np.eye(n))
    sigma = np.linalg.norm(W, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, W, V = sigma[order], W[:, order], V[:, order]
    Ur = np.zeros_like(W)
    nz = sigma > 0
    Ur[:, nz] = W[:, nz] / sigma[nz]
    if not nz.all():
        # complete the left singular vectors of the null part
        k = int(nz.sum())
        Qc, _ = householder_qr(np.hstack([Ur[:, :k], np.eye(n)]), thin=False)
        Ur[:, k:] = Qc[:, k:n]
    return Q @ Ur, sigma, V


def solve_sylvester_dense(H, G, C):
    """Solve ``H Y + Y G^T = C`` by complex Bartels-Stewart.

    Both coefficients are reduced to complex Schur form, the triangular
    system is solved column by column from the right, and the result is
    transformed back. ``Y`` is real when ``H``, ``G`` and ``C`` are real.

    Raises
    ------
    SingularOperator
        If some ``|r_ii + s_jj|`` falls below ``1e-14 (||H|| + ||G||)``.
    """
    H, G, C = np.asarray(H), np.asarray(G), np.asarray(C)
    m, p = H.shape[0], G.shape[0]
    if C.shape != (m, p):
        raise ValueError(f"rhs shape {C.shape} does not match ({m}, {p})")
    real = not any(np.iscomplexobj(X) for X in (H, G, C))
    sh, sg = complex_schur(H), complex_schur(G)
    R1, R2 = sh.R, sg.R
    Ct = sh.Q.conj().T @ C @ sg.Q.conj()
    thresh = 1e-14 * (np.linalg.norm(H) + np.linalg.norm(G))
    d1 = np.diagonal(R1)
    Yt = np.zeros((m, p), dtype=complex)
    for j in range(p - 1, -1, -1):
        shift = R2[j, j]
        gap = np.abs(d1 + shift)
        i = int(np.argmin(gap)) if m else 0
        if m and gap[i] < thresh:
            raise SingularOperator(
                f"spectra overlap: |r_{i}{i} + s_{j}{j}| = {gap[i]:.3e}",
                pair=(i, j),
                value=float(gap[i]),
            )
        rhs = Ct[:, j] - Yt[:, j + 1 :] @ R2[j, j + 1 :]
        Yt[:, j] = spla.solve_triangular(R1 + shift * np.eye(m), rhs)
    Y = sh.Q @ Yt @ sg.Q.T
    return Y.real.copy() if real else Y


def solve_lyapunov_kron(H, G, C):
    """Reference solve of ``H Y + Y G^T = C`` via the Kronecker system.

    Dense Gaussian elimination on ``(I kron H + G kron I) vec(Y) = vec(C)``;
    only meant for small oracle checks.
    """
    H, G, C = np.asarray(H), np.asarray(G), np.asarray(C)
    m, p = H.shape[0], G.shape[0]
    L = np.kron(np.eye(p), H) + np.kron(G, np.eye(m))
    y = np.linalg.solve(L, C.reshape(-1, order="F"))
    return y.reshape((m, p), order="F")


# -- dense file formats ------------------------------------------------------


def write_dense_mm(M, path):
    """Write a real dense matrix in Matrix Market array format."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for v in M.reshape(-1, order="F"):
            fh.write(f"{float(v)!r}\n")


def read_dense_mm(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].lower().startswith("%%matrixmarket matrix array"):
        raise ParseError("missing '%%MatrixMarket matrix array' header", line=1)
    body = [(i + 1, ln) for i, ln in enumerate(lines[1:], start=1) if ln.strip() and not ln.startswith("%")]
    if not body:
        raise ParseError("missing size line", line=len(lines))
    lineno, size = body[0]
    try:
        rows, cols = (int(t) for t in size.split()[:2])
    except ValueError as exc:
        raise ParseError(f"bad size line {size!r}", line=lineno) from exc
    values = []
    for lineno, ln in body[1:]:
        try:
            values.append(float(ln.split()[0]))
        except ValueError as exc:
            raise ParseError(f"bad value {ln!r}", line=lineno) from exc
    if len(values) != rows * cols:
        raise ParseError(f"expected {rows * cols} values, found {len(values)}")
    return np.array(values).reshape((rows, cols), order="F")


def write_dense_csv(M, path):
    """CSV with a ``rows,cols`` header followed by one row per line."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(M.shape)
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def read_dense_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", line=1)
    try:
        m, n = int(rows[0][0]), int(rows[0][1])
    except (ValueError, IndexError) as exc:
        raise ParseError("header must be 'rows,cols'", line=1) from exc
    if len(rows) - 1 != m:
        raise ParseError(f"expected {m} data rows, found {len(rows) - 1}")
    out = np.empty((m, n))
    for i, row in enumerate(rows[1:]):
        if len(row) != n:
            raise ParseError(f"expected {n} columns", line=i + 2)
        out[i] = [float(v) for v in row]
    return out
