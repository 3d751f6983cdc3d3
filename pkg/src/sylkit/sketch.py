"""Oblivious subspace embeddings and the incremental sketched QR.

A sketch ``S`` maps length-``n`` vectors to length ``s``. Three kinds are
available:

* ``"gaussian"``: a stored ``s x n`` matrix with i.i.d. ``N(0, 1/s)`` entries,
* ``"srdct"``: ``scale * Rows_D(DCT(eps * x))`` with Rademacher signs ``eps``,
  an orthonormal DCT-II and ``s`` distinct sampled rows ``D``,
* ``"exact"``: the identity (``s = n``).

Operators are rebuilt from ``(kind, n, s, seed)`` alone.
"""

from dataclasses import dataclass, field

import numpy as np

from ._rng import Stream
from .errors import Breakdown, DimensionMismatch, NotOrthonormal, SingularTau
from .linalg import householder_qr, svd

KINDS = ("gaussian", "srdct", "exact")


def dct2_ortho(X):
    """Orthonormal DCT-II along axis 0, via a complex FFT of length ``2n``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    ext = np.concatenate([X, X[::-1]], axis=0)
    F = np.fft.fft(ext, axis=0)[:n]
    k = np.arange(n)
    shift = np.exp(-0.5j * np.pi * k / n)
    Y = (shift.reshape((n,) + (1,) * (X.ndim - 1)) * F).real / 2.0
    w = np.full(n, np.sqrt(2.0 / n))
    w[0] = np.sqrt(1.0 / n)
    return Y * w.reshape((n,) + (1,) * (X.ndim - 1))


@dataclass(frozen=True, eq=False)
class SketchOperator:
    """Seeded embedding from ``R^n`` to ``R^s``.

    ``paper_literal_scale`` switches the SRDCT scale from ``sqrt(n/s)``
    (which makes ``E||Sx||^2 = ||x||^2``) to ``sqrt(s/n)``.
    """

    kind: str
    n: int
    s: int
    seed: int = 0
    paper_literal_scale: bool = False
    _payload: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"sketch kind must be one of {KINDS}, got {self.kind!r}")
        if not 1 <= self.s <= self.n:
            raise ValueError(f"need 1 <= s <= n, got s={self.s}, n={self.n}")
        if self.kind == "exact" and self.s != self.n:
            raise ValueError("exact sketch requires s = n")
        rs = Stream(self.seed)
        p = self._payload
        if self.kind == "gaussian":
            p["G"] = rs.normal((self.s, self.n)) / np.sqrt(self.s)
        elif self.kind == "srdct":
            p["signs"] = rs.signs(self.n)
            p["rows"] = np.sort(rs.sample(self.n, self.s))
            ratio = self.s / self.n if self.paper_literal_scale else self.n / self.s
            p["scale"] = np.sqrt(ratio)

    @property
    def rows(self):
        return self._payload.get("rows")

    @property
    def scale(self):
        return self._payload.get("scale", 1.0)

    def apply(self, X):
        return sketch_apply(self, X)

    def dense(self):
        """The explicit ``s x n`` matrix (small ``n`` only)."""
        return sketch_apply(self, np.eye(self.n))


def sketch_apply(S: SketchOperator, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[0] != S.n:
        raise DimensionMismatch(f"sketch expects length {S.n}, got {X.shape[0]}")
    if S.kind == "exact":
        return X.copy()
    p = S._payload
    if S.kind == "gaussian":
        return p["G"] @ X
    signed = X * p["signs"].reshape((S.n,) + (1,) * (X.ndim - 1))
    return p["scale"] * dct2_ortho(signed)[p["rows"]]


def measure_distortion(S: SketchOperator, basis, ortho_tol=1e-10) -> float:
    """Smallest ``eps`` with ``(1-eps)|v|^2 <= |Sv|^2 <= (1+eps)|v|^2`` on ``range(basis)``."""
    basis = np.asarray(basis, dtype=float)
    if basis.ndim == 1:
        basis = basis[:, None]
    m = basis.shape[1]
    if np.linalg.norm(basis.T @ basis - np.eye(m)) > ortho_tol * max(1, m):
        raise NotOrthonormal("basis columns are not orthonormal")
    _, sigma, _ = svd(sketch_apply(S, basis))
    return float(max(1.0 - sigma[-1] ** 2, sigma[0] ** 2 - 1.0, 0.0))


class SketchedQR:
    """Incremental QR ``Q T = [W_1, W_2, ...]`` of sketched block columns.

    Each append runs classical Gram-Schmidt twice against the stored
    ``Q`` followed by a Householder QR of the remainder. Storage grows by
    doubling.
    """

    def __init__(self, s: int, capacity: int = 16):
        self.s = s
        self.m = 0
        self._Q = np.zeros((s, capacity))
        self._T = np.zeros((capacity, capacity))
        self.block_sizes = []

    @property
    def Q(self):
        return self._Q[:, : self.m]

    @property
    def T(self):
        return self._T[: self.m, : self.m]

    def _grow(self, need):
        cap = self._Q.shape[1]
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        Q = np.zeros((self.s, cap))
        Q[:, : self.m] = self.Q
        T = np.zeros((cap, cap))
        T[: self.m, : self.m] = self.T
        self._Q, self._T = Q, T

    def append(self, W):
        """Append block ``W`` (``s x r``); returns ``(t, tau)``.

        ``t`` is the ``m x r`` coupling block against the existing columns
        and ``tau`` the ``r x r`` upper triangular diagonal block.
        """
        W = np.asarray(W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        if W.shape[0] != self.s:
            raise DimensionMismatch(f"block has {W.shape[0]} rows, expected {self.s}")
        r = W.shape[1]
        wnorm = np.linalg.norm(W)
        Q = self.Q
        t = np.zeros((self.m, r))
        R = W.copy()
        if self.m:
            for _ in range(2):
                c = Q.T @ R
                R -= Q @ c
                t += c
        if self.m + r > self.s:
            raise Breakdown("sketched basis exceeds the sketch dimension", column=self.m)
        Qn, tau = householder_qr(R)
        diag = np.diagonal(tau)
        bad = np.flatnonzero(diag < 1e-14 * wnorm) if wnorm > 0 else np.arange(r)
        if bad.size:
            raise Breakdown(
                f"sketched basis numerically dependent at column {self.m + bad[0]}",
                column=int(self.m + bad[0]),
            )
        self._grow(self.m + r)
        self._Q[:, self.m : self.m + r] = Qn
        self._T[: self.m, self.m : self.m + r] = t
        self._T[self.m : self.m + r, self.m : self.m + r] = tau
        self.m += r
        self.block_sizes.append(r)
        return t, tau


def _inv_tri(tau):
    d = np.abs(np.diagonal(tau))
    if d.size and d.min() <= 1e-300 + 1e-15 * d.max():
        raise SingularTau("triangular diagonal block is numerically singular")
    return np.linalg.solve(tau, np.eye(tau.shape[0]))


def whiten_hessenberg_update(Hhat, T, t_new, tau_new, h_col, h_sub, h_diag):
    """Extend ``Hhat = T H T^{-1}`` by one block row and column.

    Parameters
    ----------
    Hhat : (dr, dr) current whitened Hessenberg matrix (may be empty)
    T : (dr, dr) upper triangular sketched-QR factor of the first d blocks
    t_new, tau_new : coupling block ``(dr, r)`` and diagonal block ``(r, r)``
        produced by appending block ``d+1`` to the sketched QR
    h_col : (dr, r) Arnoldi coefficients ``h_{1..d, d+1}``
    h_sub : (r, r) coefficient ``h_{d+1, d}`` (ignored when ``d = 0``)
    h_diag : (r, r) coefficient ``h_{d+1, d+1}``

    Returns
    -------
    Hhat_next : ((d+1)r, (d+1)r) the matrix ``T' H' T'^{-1}``
    corr : (dr, r) the rank-``r`` correction ``t_new h_sub tau_d^{-1}``
        such that the leading block of ``Hhat_next`` is
        ``Hhat + corr E_d^T``
    """
    dr = Hhat.shape[0]
    r = tau_new.shape[0]
    tau_new_inv = _inv_tri(tau_new)
    if dr == 0:
        return tau_new @ h_diag @ tau_new_inv, np.zeros((0, r))
    tau_d_inv = _inv_tri(T[dr - r :, dr - r :])
    corr = t_new @ h_sub @ tau_d_inv
    top_left = Hhat.copy()
    top_left[:, dr - r :] += corr
    top_right = (-top_left @ t_new + T @ h_col + t_new @ h_diag) @ tau_new_inv
    bottom_left = np.zeros((r, dr))
    bottom_left[:, dr - r :] = tau_new @ h_sub @ tau_d_inv
    bottom_right = tau_new @ (h_diag - h_sub @ tau_d_inv @ t_new[dr - r :]) @ tau_new_inv
    out = np.block([[top_left, top_right], [bottom_left, bottom_right]])
    return out, corr
