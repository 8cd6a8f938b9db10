"""Dense kernels, metrics and the synchronization ledger shared by every variant.

Matrices are plain float64 ``numpy.ndarray`` objects.  A "panel" or "block
vector" is an ``m x s`` slice of columns.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

EPS = np.finfo(np.float64).eps
UNIT_ROUNDOFF = EPS / 2


class BcgsError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(BcgsError, ValueError):
    """Operands have incompatible shapes."""


class FactorizationBreakdown(BcgsError):
    """A factorization could not be completed in floating point."""


class NotPositiveDefinite(FactorizationBreakdown):
    """Cholesky met a non-positive (or non-finite) pivot.

    ``pivot`` is the 0-based index of the failing diagonal entry.
    """

    def __init__(self, pivot, msg=None):
        self.pivot = pivot
        super().__init__(msg or f"matrix is not positive definite (pivot {pivot})")


class RankDeficient(FactorizationBreakdown):
    """A column vanished during orthogonalization."""

    def __init__(self, column, msg=None):
        self.column = column
        super().__init__(msg or f"column {column} is numerically zero")


class SingularTriangular(BcgsError, np.linalg.LinAlgError):
    """Triangular solve with a zero on the diagonal."""


class SingularMatrix(BcgsError, np.linalg.LinAlgError):
    """Matrix is numerically singular."""


class ZeroMatrix(BcgsError, ValueError):
    """Relative quantity requested for a zero matrix."""


class SyncLedger:
    """Counter of logical global reductions, broken down by phase label."""

    def __init__(self):
        self._breakdown: dict[str, int] = {}

    @property
    def total(self) -> int:
        return sum(self._breakdown.values())

    @property
    def breakdown(self) -> list[tuple[str, int]]:
        return list(self._breakdown.items())

    def charge(self, phase: str, count: int = 1) -> None:
        if count < 0:
            raise ValueError("the ledger is never decremented")
        self._breakdown[phase] = self._breakdown.get(phase, 0) + count

    def count(self, *phases: str) -> int:
        return sum(self._breakdown.get(p, 0) for p in phases)

    def excluding(self, *phases: str) -> int:
        """Total with the given phases left out."""
        return self.total - self.count(*phases)

    def __repr__(self):
        return f"SyncLedger(total={self.total}, breakdown={self.breakdown})"


def _charge(ledger, phase, count=1):
    if ledger is not None:
        ledger.charge(phase, count)


@dataclass(frozen=True)
class BlockPartition:
    """Block-column layout: ``lead_width + (p - 1) * s`` columns over ``m`` rows."""

    m: int
    p: int
    s: int
    lead_width: int | None = None

    def __post_init__(self):
        if self.lead_width is None:
            object.__setattr__(self, "lead_width", self.s)
        if self.s < 1 or self.p < 1 or self.lead_width < 1:
            raise DimensionError("s, p and lead_width must be positive")
        if self.n > self.m:
            raise DimensionError(f"{self.n} columns do not fit in {self.m} rows")

    @property
    def n(self) -> int:
        return self.lead_width + (self.p - 1) * self.s

    def bounds(self, k: int) -> tuple[int, int]:
        """Column range ``[start, stop)`` of block ``k`` (0-based)."""
        if not 0 <= k < self.p:
            raise IndexError(k)
        if k == 0:
            return 0, self.lead_width
        start = self.lead_width + (k - 1) * self.s
        return start, start + self.s

    def blocks(self, X: np.ndarray) -> list[np.ndarray]:
        if X.shape != (self.m, self.n):
            raise DimensionError(f"expected {(self.m, self.n)}, got {X.shape}")
        return [X[:, slice(*self.bounds(k))] for k in range(self.p)]

    @classmethod
    def for_matrix(cls, X: np.ndarray, s: int, lead_width: int | None = None):
        m, n = X.shape
        lead = s if lead_width is None else lead_width
        if n < lead or (n - lead) % s:
            raise DimensionError(f"{n} columns cannot be split into blocks of {s}")
        return cls(m, 1 + (n - lead) // s, s, lead)


@dataclass
class QRFactorization:
    Q: np.ndarray
    R: np.ndarray
    rank_deficient: bool = field(default=False)

    def __iter__(self):
        yield self.Q
        yield self.R


def as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError(f"expected a matrix, got ndim={X.ndim}")
    return X


def fused_block_product(left_panels: Sequence[np.ndarray], right_panels: Sequence[np.ndarray],
                        ledger: SyncLedger | None, phase: str = "fused"):
    """All block inner products ``L_i^T R_j`` for one logical reduction.

    Each entry of the returned grid is computed with its own product, so it is
    bitwise equal to computing ``L_i.T @ R_j`` by hand.  The ledger is charged
    once no matter how many panels are fused.
    """
    left = [as_matrix(L) for L in left_panels]
    right = [as_matrix(R) for R in right_panels]
    rows = {P.shape[0] for P in left + right}
    if len(rows) > 1:
        raise DimensionError(f"panels have different row counts {sorted(rows)}")
    grid = [[L.T @ R for R in right] for L in left]
    _charge(ledger, phase)
    return grid


def cholesky_upper(G: np.ndarray) -> np.ndarray:
    """Upper Cholesky factor of the symmetric part of ``G``."""
    G = as_matrix(G)
    if G.shape[0] != G.shape[1]:
        raise DimensionError(f"Cholesky needs a square matrix, got {G.shape}")
    if G.shape[0] == 0:
        return G.copy()
    G = 0.5 * (G + G.T)
    if not np.all(np.isfinite(G)):
        bad = int(np.flatnonzero(~np.isfinite(G).all(axis=0))[0])
        raise NotPositiveDefinite(bad, "non-finite entries in Cholesky input")
    R, info = lapack.dpotrf(G, lower=0, clean=1)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return R


def tri_solve(R: np.ndarray, B: np.ndarray, side: str = "left", trans: bool = False) -> np.ndarray:
    """Solve with the upper triangular ``R`` without forming its inverse.

    ``side="left"`` returns ``op(R)^{-1} B``; ``side="right"`` returns
    ``B op(R)^{-1}``, where ``op`` transposes when ``trans`` is set.
    """
    R = as_matrix(R)
    B = as_matrix(B)
    n = R.shape[0]
    if R.shape != (n, n):
        raise DimensionError(f"triangular factor must be square, got {R.shape}")
    d = np.diag(R)
    if np.any(d == 0):
        raise SingularTriangular(f"zero diagonal entry at {int(np.flatnonzero(d == 0)[0])}")
    if side == "left":
        if B.shape[0] != n:
            raise DimensionError(f"{R.shape} cannot solve against {B.shape}")
        return sla.solve_triangular(R, B, lower=False, trans=1 if trans else 0)
    if side == "right":
        if B.shape[1] != n:
            raise DimensionError(f"{B.shape} cannot solve against {R.shape}")
        # X op(R) = B  <=>  op(R)^T X^T = B^T
        return sla.solve_triangular(R, B.T, lower=False, trans=0 if trans else 1).T
    raise ValueError(f"side must be 'left' or 'right', not {side!r}")


def loss_of_orthogonality(Q: np.ndarray) -> float:
    """``||I - Q^T Q||_2``."""
    Q = as_matrix(Q)
    n = Q.shape[1]
    if n == 0:
        return 0.0
    return float(np.linalg.norm(np.eye(n) - Q.T @ Q, 2))


def relative_residual(X: np.ndarray, Q: np.ndarray, R: np.ndarray) -> float:
    """``||X - Q R||_2 / ||X||_2``."""
    X = as_matrix(X)
    nx = np.linalg.norm(X, 2)
    if nx == 0:
        raise ZeroMatrix("relative residual of a zero matrix")
    return float(np.linalg.norm(X - as_matrix(Q) @ as_matrix(R), 2) / nx)


def singular_values(X: np.ndarray) -> np.ndarray:
    return np.linalg.svd(as_matrix(X), compute_uv=False)


def cond2(X: np.ndarray) -> float:
    X = as_matrix(X)
    sv = singular_values(X)
    if sv.size == 0:
        raise SingularMatrix("empty matrix")
    if sv[-1] <= UNIT_ROUNDOFF * sv[0] * max(X.shape):
        raise SingularMatrix(f"sigma_min={sv[-1]:.3e} relative to sigma_max={sv[0]:.3e}")
    return float(sv[0] / sv[-1])


def normalize_signs(Q: np.ndarray, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip column signs of ``Q`` and row signs of ``R`` so that ``diag(R) >= 0``."""
    k = min(R.shape)
    sign = np.where(np.diag(R)[:k] < 0, -1.0, 1.0)
    Q = Q.copy()
    R = R.copy()
    Q[:, :k] *= sign
    R[:k, :] *= sign[:, None]
    return Q, R
