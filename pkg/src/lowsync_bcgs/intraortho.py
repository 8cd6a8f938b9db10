"""Intraorthogonalization routines: thin QR of a single block vector.

Every routine returns a :class:`QRFactorization` with ``diag(R) >= 0`` and
charges the ledger with its declared number of synchronizations.
"""
from __future__ import annotations

import enum

import numpy as np
import scipy.linalg as sla

from .core import (
    EPS,
    UNIT_ROUNDOFF,
    NotPositiveDefinite,
    QRFactorization,
    RankDeficient,
    SyncLedger,
    _charge,
    as_matrix,
    cholesky_upper,
    normalize_signs,
    tri_solve,
)

DEFAULT_TSQR_BLOCKS = 4


class IntraorthoKind(enum.Enum):
    """Available intraorthogonalizations with their LOO exponent ``alpha1``.

    The measured loss of orthogonality scales like ``u * kappa(X)**alpha1``.
    """

    HOUSE_QR = ("HouseQR", 0)
    TSQR = ("TSQR", 0)
    MGS = ("MGS", 1)
    CHOL_QR = ("CholQR", 2)
    CHOL_QR_PYTHAGOREAN = ("CholQRPythagorean", 2)

    def __init__(self, tag, alpha1):
        self.tag = tag
        self.alpha1 = alpha1

    def sync_cost(self, s: int) -> int:
        if self is IntraorthoKind.MGS:
            return s
        if self is IntraorthoKind.CHOL_QR_PYTHAGOREAN:
            return 0
        return 1

    @classmethod
    def parse(cls, name) -> "IntraorthoKind":
        if isinstance(name, cls):
            return name
        key = str(name).replace("-", "").replace("_", "").lower()
        for kind in cls:
            if key in (kind.tag.lower(), kind.name.replace("_", "").lower()):
                return kind
        raise ValueError(f"unknown intraorthogonalization {name!r}")


def _rank_flag(R, scale, m):
    d = np.abs(np.diag(R))
    return bool(d.size and np.any(d <= max(m, R.shape[1]) * EPS * scale))


def house_qr(X, ledger: SyncLedger | None = None, phase: str = "io") -> QRFactorization:
    """Householder thin QR (LAPACK ``geqrf``/``orgqr``).

    Charged as one synchronization: it stands in for TSQR.
    """
    X = as_matrix(X)
    m, n = X.shape
    if n > m:
        raise ValueError(f"HouseQR needs m >= n, got {X.shape}")
    _charge(ledger, phase)
    if n == 0:
        return QRFactorization(np.zeros((m, 0)), np.zeros((0, 0)))
    Q, R = sla.qr(X, mode="economic")
    Q, R = normalize_signs(Q, R)
    return QRFactorization(Q, R, _rank_flag(R, np.linalg.norm(X), m))


def _tsqr_node(panels):
    if len(panels) == 1:
        Q, R = sla.qr(panels[0], mode="economic")
        return [Q], R
    half = len(panels) // 2
    q_top, r_top = _tsqr_node(panels[:half])
    q_bot, r_bot = _tsqr_node(panels[half:])
    Qn, Rn = sla.qr(np.vstack([r_top, r_bot]), mode="economic")
    k = r_top.shape[0]
    return [q @ Qn[:k] for q in q_top] + [q @ Qn[k:] for q in q_bot], Rn


def tsqr(X, row_blocks: int = DEFAULT_TSQR_BLOCKS, ledger: SyncLedger | None = None,
         phase: str = "io") -> QRFactorization:
    """Tall-skinny QR over a balanced binary reduction tree of row panels."""
    X = as_matrix(X)
    m, n = X.shape
    if n > m:
        raise ValueError(f"TSQR needs m >= n, got {X.shape}")
    if row_blocks < 1:
        raise ValueError("row_blocks must be >= 1")
    _charge(ledger, phase)
    if n == 0:
        return QRFactorization(np.zeros((m, 0)), np.zeros((0, 0)))
    panels = np.array_split(X, min(row_blocks, m), axis=0)
    q_leaves, R = _tsqr_node(panels)
    Q = np.vstack(q_leaves)
    Q, R = normalize_signs(Q, R)
    return QRFactorization(Q, R, _rank_flag(R, np.linalg.norm(X), m))


def mgs(X, ledger: SyncLedger | None = None, phase: str = "io") -> QRFactorization:
    """Modified Gram-Schmidt, one reduction per column."""
    X = as_matrix(X)
    m, n = X.shape
    Q = X.copy()
    R = np.zeros((n, n))
    for j in range(n):
        _charge(ledger, phase)
        nrm = np.linalg.norm(Q[:, j])
        if nrm == 0 or not np.isfinite(nrm):
            raise RankDeficient(j)
        R[j, j] = nrm
        Q[:, j] /= nrm
        for k in range(j + 1, n):
            R[j, k] = Q[:, j] @ Q[:, k]
            Q[:, k] -= R[j, k] * Q[:, j]
    return QRFactorization(Q, R)


def chol_qr(X, ledger: SyncLedger | None = None, phase: str = "io") -> QRFactorization:
    """Cholesky QR: ``R = chol(X^T X)``, ``Q = X R^{-1}``.

    The Gram matrix carries an error of order ``m u ||X||^2``, so a factor
    with ``sigma_min(R)^2 <= m u ||R||^2`` is treated as not positive
    definite even when every pivot happened to come out positive.
    """
    X = as_matrix(X)
    G = X.T @ X
    _charge(ledger, phase)
    R = cholesky_upper(G)
    if R.size:
        sv = np.linalg.svd(R, compute_uv=False)
        if sv[-1] ** 2 <= X.shape[0] * UNIT_ROUNDOFF * sv[0] ** 2:
            raise NotPositiveDefinite(int(np.argmin(np.abs(np.diag(R)))),
                                      "Gram matrix is not numerically positive definite")
    return QRFactorization(tri_solve(R, X, side="right"), R)


def pythagorean_chol_step(V, T, S_proj, ledger: SyncLedger | None = None):
    """Sync-free Cholesky QR of a projected block via the Pythagorean identity.

    ``V = X - Qprev @ S_proj`` has Gram matrix ``T - S_proj^T S_proj`` where
    ``T = X^T X`` was obtained in an earlier reduction, so no new reduction is
    needed.  Returns ``(U, S_diag)`` with ``V = U S_diag``.
    """
    V = as_matrix(V)
    T = as_matrix(T)
    S_proj = as_matrix(S_proj) if np.size(S_proj) else np.zeros((0, V.shape[1]))
    S_diag = cholesky_upper(T - S_proj.T @ S_proj)
    return tri_solve(S_diag, V, side="right"), S_diag


def intraortho(kind, X, ledger: SyncLedger | None = None, phase: str = "io",
               tsqr_blocks: int = DEFAULT_TSQR_BLOCKS) -> QRFactorization:
    """Dispatch to the routine named by ``kind``."""
    kind = IntraorthoKind.parse(kind)
    if kind is IntraorthoKind.HOUSE_QR:
        return house_qr(X, ledger, phase)
    if kind is IntraorthoKind.TSQR:
        return tsqr(X, tsqr_blocks, ledger, phase)
    if kind is IntraorthoKind.MGS:
        return mgs(X, ledger, phase)
    if kind is IntraorthoKind.CHOL_QR:
        return chol_qr(X, ledger, phase)
    raise ValueError(f"{kind.tag} needs a precomputed Gram matrix; use pythagorean_chol_step")
