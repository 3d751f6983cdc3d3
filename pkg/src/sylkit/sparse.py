"""Sparse CSR storage, block products, Matrix Market IO and test-matrix generators.

Generators return the *negative* of the discretized differential operator,
so that the matrices are stable (field of values in the left half-plane).
Grid nodes are the interior points of a uniform mesh with spacing
``h = 1/(grid+1)``, numbered lexicographically with ``x`` running fastest.
"""

from dataclasses import dataclass
import re

import numpy as np
import scipy.sparse as sp

from ._rng import Stream
from .errors import DimensionMismatch, InvalidField, ParseError


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable real matrix in canonical compressed sparse-row form."""

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rp, ci, v = self.row_ptr, self.col_idx, self.values
        if len(rp) != self.n_rows + 1 or rp[0] != 0 or np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be nondecreasing, start at 0, length n_rows+1")
        if rp[-1] != len(ci) or len(ci) != len(v):
            raise ValueError("row_ptr[-1], len(col_idx) and len(values) disagree")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise ValueError("column index out of range")
        inner = np.diff(ci)
        first = np.zeros(len(ci), dtype=bool)
        first[rp[:-1][np.diff(rp) > 0]] = True
        if len(ci) > 1 and np.any((inner <= 0) & ~first[1:]):
            raise ValueError("column indices must increase strictly within a row")
        for a in (rp, ci, v):
            a.setflags(write=False)
        object.__setattr__(self, "_csr", sp.csr_matrix((v, ci, rp), shape=self.shape))

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return int(self.row_ptr[-1])

    @classmethod
    def from_scipy(cls, M) -> "SparseMatrix":
        C = sp.csr_matrix(M, dtype=float)
        C.sum_duplicates()
        C.eliminate_zeros()
        C.sort_indices()
        return cls(
            C.shape[0],
            C.shape[1],
            C.indptr.astype(np.int64),
            C.indices.astype(np.int64),
            C.data.astype(float),
        )

    @classmethod
    def from_dense(cls, D) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(D, dtype=float)))

    def to_scipy(self):
        return self._csr.copy()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr.T)

    def __matmul__(self, X):
        return spmv_block(self, X)


def spmv_block(M: SparseMatrix, X, transpose: bool = False) -> np.ndarray:
    """Product ``M @ X`` (or ``M.T @ X``) for an ``n x r`` block ``X``."""
    X = np.asarray(X, dtype=float)
    vec = X.ndim == 1
    X2 = X[:, None] if vec else X
    need = M.n_rows if transpose else M.n_cols
    if X2.shape[0] != need:
        raise DimensionMismatch(
            f"block has {X2.shape[0]} rows, operator expects {need}"
        )
    Y = (M._csr.T @ X2) if transpose else (M._csr @ X2)
    Y = np.asarray(Y)
    return Y[:, 0] if vec else Y


def symmetric_part_alpha(M) -> float:
    """Rightmost point of the field of values, ``lambda_max((M + M^T)/2)``."""
    from .linalg import hermitian_eig

    D = M.to_dense() if isinstance(M, SparseMatrix) else np.asarray(M)
    values, _ = hermitian_eig((D + D.conj().T) / 2)
    return float(values[-1])


# -- convection fields -------------------------------------------------------

_FIELDS_2D = {
    "example61_A": lambda x, y: (np.ones_like(x), np.ones_like(y)),
    "example61_B": lambda x, y: (3 * y * (1 - x**2), -2 * x * (1 - y**2)),
}
_FIELDS_3D = {
    "example63_A": lambda x, y, z: (x * np.sin(x), y * np.cos(y), np.exp(z**2 - 1)),
    "example63_B": lambda x, y, z: ((1 - x**2) * y * z, np.ones_like(y), np.exp(z)),
}

_CONST_RE = re.compile(r"^constant\(([^)]*)\)$")


def _field(field, dim):
    table = _FIELDS_2D if dim == 2 else _FIELDS_3D
    if isinstance(field, str):
        if field in table:
            return table[field]
        m = _CONST_RE.match(field.replace(" ", ""))
        if not m:
            raise InvalidField(f"unknown {dim}D convection field {field!r}")
        try:
            field = tuple(float(t) for t in m.group(1).split(","))
        except ValueError as exc:
            raise InvalidField(f"bad constant field {field!r}") from exc
    try:
        w = tuple(float(c) for c in field)
    except TypeError as exc:
        raise InvalidField(f"unsupported field {field!r}") from exc
    if len(w) != dim or not all(np.isfinite(w)):
        raise InvalidField(f"constant field needs {dim} finite components, got {w}")
    return lambda *xs: tuple(np.full_like(xs[0], c) for c in w)


def _convdiff(grid, nu, field, dim):
    if grid < 3:
        raise ValueError("grid must be at least 3")
    wfun = _field(field, dim)
    h = 1.0 / (grid + 1)
    N = grid**dim
    idx = np.arange(N)
    # coordinate index per axis, axis 0 (x) fastest
    sub = [(idx // grid**a) % grid for a in range(dim)]
    coords = [(s + 1) * h for s in sub]
    w = wfun(*coords)
    rows = [idx]
    cols = [idx]
    vals = [np.full(N, -2.0 * dim * nu / h**2)]
    for a in range(dim):
        stride = grid**a
        for sgn in (1, -1):
            ok = (sub[a] + sgn >= 0) & (sub[a] + sgn < grid)
            rows.append(idx[ok])
            cols.append(idx[ok] + sgn * stride)
            vals.append(nu / h**2 - sgn * w[a][ok] / (2 * h))
    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    )
    return SparseMatrix.from_scipy(M)


def gen_convdiff_2d(grid: int, nu: float, field="example61_A") -> SparseMatrix:
    """Negated centered-difference matrix of ``-nu Lap(u) + w . grad(u)`` on the unit square.

    ``field`` is ``"example61_A"`` (``w = (1, 1)``), ``"example61_B"``
    (``w = (3y(1-x^2), -2x(1-y^2))``), a string ``"constant(w1,w2)"`` or a
    2-tuple.
    """
    return _convdiff(grid, nu, field, 2)


def gen_convdiff_3d(grid: int, nu: float, field="example63_A") -> SparseMatrix:
    """Seven-point analogue of :func:`gen_convdiff_2d` on the unit cube.

    Named fields: ``"example63_A"`` with ``w = (x sin x, y cos y, e^(z^2-1))``
    and ``"example63_B"`` with ``w = ((1-x^2) y z, 1, e^z)``.
    """
    return _convdiff(grid, nu, field, 3)


def gen_toeplitz_ex41(n: int) -> SparseMatrix:
    """Banded nonnormal Toeplitz matrix with diagonals ``(0.5, 1, -3, -1, -1)``.

    Entry ``(i+2, i)`` is 0.5, ``(i+1, i)`` is 1, the diagonal is -3 and
    both superdiagonals are -1.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    M = sp.diags(
        [0.5, 1.0, -3.0, -1.0, -1.0], [-2, -1, 0, 1, 2], shape=(n, n), format="csr"
    )
    return SparseMatrix.from_scipy(M)


def gen_hhat_ex45(d: int, seed: int, order: str = "ascending"):
    """Dense Toeplitz test pair ``(Hhat, hhat)`` for the effective-FOV study.

    ``Hhat`` has constant diagonal -4 and subdiagonal 2, first row
    ``[-4, 1/2, 1/2, g_1/20, ..., g_{d-3}/20]`` with standard normal
    ``g``. ``hhat_i = w_i * eta_i`` where ``eta`` is standard normal and
    the weights run linearly between 1 and 20: ``order="ascending"`` puts
    weight 1 on the first entry, ``"descending"`` puts weight 20 there.
    """
    if d < 4:
        raise ValueError("d must be at least 4")
    if order not in ("ascending", "descending"):
        raise ValueError(f"order must be 'ascending' or 'descending', got {order!r}")
    rs = Stream(seed)
    first_row = np.concatenate([[-4.0, 0.5, 0.5], rs.normal(d - 3) / 20])
    eta = rs.normal(d)
    H = np.zeros((d, d))
    for j in range(d):
        H[np.arange(d - j), np.arange(j, d)] = first_row[j]
    H[np.arange(1, d), np.arange(d - 1)] = 2.0
    weights = np.linspace(1.0, 20.0, d)
    if order == "descending":
        weights = weights[::-1]
    return H, weights * eta


# -- Matrix Market coordinate format -----------------------------------------

_MM_HEADER = "%%MatrixMarket matrix coordinate real general"


def write_matrix_market(M: SparseMatrix, path) -> None:
    C = M._csr.tocoo()
    with open(path, "w") as fh:
        fh.write(_MM_HEADER + "\n")
        fh.write(f"{M.n_rows} {M.n_cols} {M.nnz}\n")
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_matrix_market(path) -> SparseMatrix:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    head = lines[0].lower().split()
    if head[:4] != ["%%matrixmarket", "matrix", "coordinate", "real"]:
        raise ParseError("expected a real coordinate Matrix Market header", line=1)
    symmetric = len(head) > 4 and head[4] == "symmetric"
    body = [(k + 1, ln) for k, ln in enumerate(lines) if k > 0 and ln.strip() and not ln.startswith("%")]
    if not body:
        raise ParseError("missing size line", line=len(lines))
    lineno, size = body[0]
    try:
        m, n, nnz = (int(t) for t in size.split())
    except ValueError as exc:
        raise ParseError(f"bad size line {size!r}", line=lineno) from exc
    entries = body[1:]
    if len(entries) != nnz:
        raise DimensionMismatch(f"header declares {nnz} entries, file has {len(entries)}")
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    for k, (lineno, ln) in enumerate(entries):
        parts = ln.split()
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad entry {ln!r}", line=lineno) from exc
        if not (1 <= i <= m and 1 <= j <= n):
            raise ParseError(f"index ({i}, {j}) outside {m}x{n}", line=lineno)
        rows[k], cols[k], vals[k] = i - 1, j - 1, v
    if symmetric:
        off = rows != cols
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, vals[off]]),
        )
    return SparseMatrix.from_scipy(sp.coo_matrix((vals, (rows, cols)), shape=(m, n)))
