"""Block classical Gram-Schmidt drivers with reorthogonalization.

All drivers share :class:`BlockOrthogonalizer`, a left-to-right streaming
engine that pulls block vectors from a :class:`BlockFeed`.  The plain drivers
feed the blocks of a fixed matrix; s-step Arnoldi feeds Krylov panels that are
generated on demand from a seed column handed back by the engine.

Ledger phases used by the engine:

``io_a``              factorization of the first block
``first_projection``  first inner products against the first block (lazy variants)
``fused``             the single fused reduction of the one/two-sync loops
``io_1`` / ``io_2``   intraorthogonalization of a projected block
``project`` / ``reproject``  plain block inner products (two-pass variants)
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BlockPartition,
    FactorizationBreakdown,
    NotPositiveDefinite,
    QRFactorization,
    RankDeficient,
    SyncLedger,
    as_matrix,
    cholesky_upper,
    fused_block_product,
    loss_of_orthogonality,
    tri_solve,
)
from .intraortho import IntraorthoKind, intraortho, pythagorean_chol_step

DEFAULT_SWITCH_CONST = math.sqrt(3.0)

# phases that build the first column of the basis; excluded when counting
# synchronizations the way s-step GMRES reports them
SETUP_PHASES = ("io_a", "first_projection")


class VariantTag(enum.Enum):
    PIP_IRO = "BCGS-PIP+"
    IP_1S = "BCGSI+P-1S"
    IP_2S = "BCGSI+P-2S"
    ADAPTIVE = "BCGSI+A-P-1S"
    BCGS2 = "BCGSI+"
    A_1S = "BCGSI+A-1S"

    @classmethod
    def parse(cls, name) -> "VariantTag":
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "_")
        if key in cls.__members__:
            return cls[key]
        for tag in cls:
            if str(name).strip().upper() == tag.value.upper():
                return tag
        raise ValueError(f"unknown variant {name!r}")


@dataclass(frozen=True)
class OrthoVariant:
    tag: VariantTag
    io_a: IntraorthoKind = IntraorthoKind.HOUSE_QR
    io_1: IntraorthoKind = IntraorthoKind.HOUSE_QR
    io_2: IntraorthoKind = IntraorthoKind.HOUSE_QR
    switch_const: float = DEFAULT_SWITCH_CONST

    def __post_init__(self):
        object.__setattr__(self, "tag", VariantTag.parse(self.tag))
        for name in ("io_a", "io_1", "io_2"):
            object.__setattr__(self, name, IntraorthoKind.parse(getattr(self, name)))
        if self.io_a is IntraorthoKind.CHOL_QR_PYTHAGOREAN:
            raise ValueError("the first block needs a standalone intraorthogonalization")
        if self.tag in (VariantTag.IP_2S, VariantTag.ADAPTIVE) and self.io_1.alpha1 > 1:
            raise ValueError(f"{self.tag.value} requires IO_1 with alpha1 <= 1, got {self.io_1.tag}")
        if self.switch_const <= 0:
            raise ValueError("switch_const must be positive")


@dataclass
class BcgsReport:
    factorization: QRFactorization
    ledger: SyncLedger
    switch_block: int | None = None
    per_block_loo: list[float] = field(default_factory=list)
    error: FactorizationBreakdown | None = None
    completed_blocks: int = 0

    @property
    def Q(self):
        return self.factorization.Q

    @property
    def R(self):
        return self.factorization.R

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def status(self) -> str:
        return "ok" if self.error is None else "breakdown"

    def loo(self) -> float:
        return loss_of_orthogonality(self.Q)

    def raise_for_status(self):
        if self.error is not None:
            raise self.error
        return self


def lazy_s_column(Z_prev, P_prev, Y_cols_prev, Y_diag_prev) -> np.ndarray:
    """Projection coefficients of the next block from delayed quantities.

    With ``Q_k = (U_k - Qprev Y_cols) Y_diag^{-1}``::

        Qprev^T X_next = Z_prev
        Q_k^T X_next   = Y_diag^{-T} (P_prev - Y_cols^T Z_prev)

    so ``[Qprev Q_k]^T X_next`` needs no new reduction.
    """
    Z_prev = as_matrix(Z_prev)
    top = tri_solve(Y_diag_prev, as_matrix(P_prev) - as_matrix(Y_cols_prev).T @ Z_prev,
                    side="left", trans=True)
    return np.vstack([Z_prev, top])


def switch_check(Omega, switch_const: float = DEFAULT_SWITCH_CONST) -> bool:
    """True when ``const^2 * lambda_min(Omega) <= lambda_max(Omega)``.

    ``Omega = U^T U`` so this asks whether ``kappa(U) >= const``.  A
    non-positive smallest eigenvalue always switches.
    """
    Omega = as_matrix(Omega)
    Omega = 0.5 * (Omega + Omega.T)
    if not np.all(np.isfinite(Omega)):
        return True
    lam = np.linalg.eigvalsh(Omega)
    if lam[0] <= 0:
        return True
    return bool(switch_const ** 2 * lam[0] <= lam[-1])


class BlockFeed:
    """Source of block vectors for the streaming engine.

    ``next(seed)`` returns the next block or ``None`` when there is none;
    ``seed`` is the most recent basis column (only Krylov feeds use it).
    ``redo(seed)`` replaces the block returned by the last ``next`` call.
    """

    def next(self, seed):
        raise NotImplementedError

    def redo(self, seed):
        raise NotImplementedError


class MatrixFeed(BlockFeed):
    def __init__(self, blocks):
        self._blocks = list(blocks)
        self._pos = 0

    def next(self, seed):
        if self._pos >= len(self._blocks):
            return None
        self._pos += 1
        return self._blocks[self._pos - 1]

    def redo(self, seed):
        return self._blocks[self._pos - 1]


class BlockOrthogonalizer:
    """Streaming block QR; ``steps()`` yields after each completed block.

    ``Q[:, :ncols]`` and ``R[:ncols, :ncols]`` hold the factorization of the
    blocks completed so far.  Breakdowns propagate as
    :class:`FactorizationBreakdown` with ``block``, ``projection`` and
    ``residual_ratio`` attributes attached.
    """

    def __init__(self, variant: OrthoVariant, first, feed: BlockFeed, capacity: int,
                 ledger: SyncLedger | None = None):
        self.variant = variant
        self.first = as_matrix(first)
        self.feed = feed
        self.ledger = ledger if ledger is not None else SyncLedger()
        m = self.first.shape[0]
        self.Q = np.zeros((m, capacity))
        self.R = np.zeros((capacity, capacity))
        self.ncols = 0
        self.nblocks = 0
        self.switch_index = None
        self.block_bounds: list[tuple[int, int]] = []

    # -- bookkeeping -------------------------------------------------------
    def _qprev(self):
        return self.Q[:, :self.ncols]

    def _commit(self, Qb, R_above, R_diag):
        w = Qb.shape[1]
        c = self.ncols
        if c + w > self.Q.shape[1]:
            raise ValueError("block exceeds the preallocated capacity")
        self.Q[:, c:c + w] = Qb
        self.R[:c, c:c + w] = R_above
        self.R[c:c + w, c:c + w] = np.triu(R_diag)
        self.block_bounds.append((c, c + w))
        self.ncols += w
        self.nblocks += 1

    def _fail(self, exc, X, Qp, S):
        X = as_matrix(X)
        nx = np.linalg.norm(X)
        resid = np.linalg.norm(X - Qp @ S) if S is not None else nx
        exc.block = self.nblocks
        exc.projection = S
        exc.residual_ratio = float(resid / nx) if nx > 0 else 0.0
        raise exc

    def _io(self, kind, V, phase, X, Qp, S):
        try:
            fact = intraortho(kind, V, self.ledger, phase)
        except FactorizationBreakdown as exc:
            self._fail(exc, X, Qp, S)
        if fact.rank_deficient:
            d = np.abs(np.diag(fact.R))
            self._fail(RankDeficient(int(np.argmin(d))), X, Qp, S)
        return fact.Q, fact.R

    def _chol(self, G, X, Qp, S):
        try:
            return cholesky_upper(G)
        except NotPositiveDefinite as exc:
            self._fail(exc, X, Qp, S)

    def _first_block(self):
        Q, R = self._io(self.variant.io_a if self.variant.tag is not VariantTag.BCGS2
                        else self.variant.io_2, self.first, "io_a", self.first, None, None)
        self._commit(Q, np.zeros((0, Q.shape[1])), R)

    def _fused(self, Qp, U, Xn, gram_next):
        if Xn is None:
            g = fused_block_product([Qp, U], [U], self.ledger, "fused")
            return g[0][0], g[1][0], None, None, None
        if gram_next:
            g = fused_block_product([Qp, U, Xn], [U, Xn], self.ledger, "fused")
            return g[0][0], g[1][0], g[0][1], g[1][1], g[2][1]
        g = fused_block_product([Qp, U], [U, Xn], self.ledger, "fused")
        return g[0][0], g[1][0], g[0][1], g[1][1], None

    # -- variants ----------------------------------------------------------
    def steps(self):
        tag = self.variant.tag
        if tag is VariantTag.IP_1S:
            return self._run_lazy("1s")
        if tag is VariantTag.IP_2S:
            return self._run_lazy("2s")
        if tag is VariantTag.ADAPTIVE:
            return self._run_lazy("adaptive")
        if tag is VariantTag.PIP_IRO:
            return self._run_pip_iro()
        if tag is VariantTag.BCGS2:
            return self._run_bcgs2()
        if tag is VariantTag.A_1S:
            return self._run_a_1s()
        raise ValueError(tag)

    def _run_lazy(self, mode):
        """One-sync, two-sync and adaptive loops (they differ only in IO_1)."""
        v = self.variant
        self._first_block()
        yield 0
        X = self.feed.next(self.Q[:, self.ncols - 1])
        if X is None:
            return
        two_sync = mode == "2s"
        Qp = self._qprev()
        if two_sync:
            S = fused_block_product([Qp], [X], self.ledger, "first_projection")[0][0]
            T = None
        else:
            g = fused_block_product([Qp, X], [X], self.ledger, "first_projection")
            S, T = g[0][0], g[1][0]
        while True:
            Qp = self._qprev()
            U = None
            if not two_sync:
                try:
                    U, Sd = pythagorean_chol_step(X - Qp @ S, T, S)
                except NotPositiveDefinite as exc:
                    if mode != "adaptive":
                        self._fail(exc, X, Qp, S)
                    # U cannot even be formed: switch without wasting the fused sync
                    two_sync = True
                    self.switch_index = self.nblocks
            if U is None:
                U, Sd = self._io(v.io_1, X - Qp @ S, "io_1", X, Qp, S)
            Xn = self.feed.next(U[:, -1])
            Y, Om, Z, P, Tn = self._fused(Qp, U, Xn, gram_next=not two_sync)
            if mode == "adaptive" and not two_sync and switch_check(Om, v.switch_const):
                two_sync = True
                self.switch_index = self.nblocks
                U, Sd = self._io(v.io_1, X - Qp @ S, "io_1", X, Qp, S)
                if Xn is not None:
                    Xn = self.feed.redo(U[:, -1])
                Y, Om, Z, P, Tn = self._fused(Qp, U, Xn, gram_next=False)
            Yd = self._chol(Om - Y.T @ Y, X, Qp, S)
            Qb = tri_solve(Yd, U - Qp @ Y, side="right")
            self._commit(Qb, S + Y @ Sd, Yd @ Sd)
            yield self.nblocks - 1
            if Xn is None:
                return
            S = lazy_s_column(Z, P, Y, Yd)
            T = Tn
            X = Xn

    def _run_pip_iro(self):
        self._first_block()
        yield 0
        while True:
            X = self.feed.next(self.Q[:, self.ncols - 1])
            if X is None:
                return
            Qp = self._qprev()
            g = fused_block_product([Qp, X], [X], self.ledger, "project")
            S, T = g[0][0], g[1][0]
            try:
                U, Sd = pythagorean_chol_step(X - Qp @ S, T, S)
            except NotPositiveDefinite as exc:
                self._fail(exc, X, Qp, S)
            g = fused_block_product([Qp, U], [U], self.ledger, "reproject")
            Y, Om = g[0][0], g[1][0]
            Yd = self._chol(Om - Y.T @ Y, X, Qp, S)
            self._commit(tri_solve(Yd, U - Qp @ Y, side="right"), S + Y @ Sd, Yd @ Sd)
            yield self.nblocks - 1

    def _run_bcgs2(self):
        v = self.variant
        self._first_block()
        yield 0
        while True:
            X = self.feed.next(self.Q[:, self.ncols - 1])
            if X is None:
                return
            Qp = self._qprev()
            S1 = fused_block_product([Qp], [X], self.ledger, "project")[0][0]
            U, R1 = self._io(v.io_1, X - Qp @ S1, "io_1", X, Qp, S1)
            S2 = fused_block_product([Qp], [U], self.ledger, "reproject")[0][0]
            Qb, R2 = self._io(v.io_2, U - Qp @ S2, "io_2", X, Qp, S1)
            self._commit(Qb, S1 + S2 @ R1, R2 @ R1)
            yield self.nblocks - 1

    def _run_a_1s(self):
        """One-sync variant without the first intraorthogonalization.

        The first reduction factors ``[X_1 X_2]`` at once so that
        ``Q_1^T X_2`` comes out of the same tree reduction as ``Q_1``.
        """
        v = self.variant
        X0 = self.first
        X = self.feed.next(X0[:, -1])
        if X is None:
            self._first_block()
            yield 0
            return
        w0 = X0.shape[1]
        Qw, Rw = self._io(v.io_a, np.hstack([X0, X]), "io_a", X0, None, None)
        self._commit(Qw[:, :w0], np.zeros((0, w0)), Rw[:w0, :w0])
        yield 0
        S = Rw[:w0, w0:]
        V = X - self._qprev() @ S
        while True:
            Qp = self._qprev()
            Xn = self.feed.next(V[:, -1])
            Y, Om, Z, P, _ = self._fused(Qp, V, Xn, gram_next=False)
            Yd = self._chol(Om - Y.T @ Y, X, Qp, S)
            self._commit(tri_solve(Yd, V - Qp @ Y, side="right"), S + Y, Yd)
            yield self.nblocks - 1
            if Xn is None:
                return
            S = lazy_s_column(Z, P, Y, Yd)
            X = Xn
            V = X - self._qprev() @ S


def _as_partition(X, part) -> BlockPartition:
    if isinstance(part, BlockPartition):
        return part
    return BlockPartition.for_matrix(X, int(part))


def run_variant(variant: OrthoVariant, X, part, ledger: SyncLedger | None = None,
                track_loo: bool = False) -> BcgsReport:
    """Factor ``X`` block by block; breakdowns give a partial report."""
    X = as_matrix(X)
    part = _as_partition(X, part)
    blocks = part.blocks(X)
    ledger = ledger if ledger is not None else SyncLedger()
    eng = BlockOrthogonalizer(variant, blocks[0], MatrixFeed(blocks[1:]), part.n, ledger)
    per_block = []
    error = None
    try:
        for _ in eng.steps():
            if track_loo:
                per_block.append(loss_of_orthogonality(eng.Q[:, :eng.ncols]))
    except FactorizationBreakdown as exc:
        error = exc
    nc = eng.ncols
    fact = QRFactorization(eng.Q[:, :nc].copy(), eng.R[:nc, :nc].copy())
    switch = None if eng.switch_index is None else eng.switch_index + 1
    return BcgsReport(fact, ledger, switch, per_block, error, eng.nblocks)


def bcgs_pip_iro(X, part, io_a=IntraorthoKind.HOUSE_QR, ledger=None, track_loo=False):
    """Two-sync reorthogonalized BCGS with Pythagorean inner products."""
    return run_variant(OrthoVariant(VariantTag.PIP_IRO, io_a=io_a), X, part, ledger, track_loo)


def bcgs_i_p_1s(X, part, io_a=IntraorthoKind.HOUSE_QR, ledger=None, track_loo=False):
    """One-sync reorthogonalized BCGS: Pythagorean first pass, delayed normalization.

    Needs ``O(u) kappa(X)**2 <= 1/2`` for O(u) loss of orthogonality.
    """
    return run_variant(OrthoVariant(VariantTag.IP_1S, io_a=io_a), X, part, ledger, track_loo)


def bcgs_i_p_2s(X, part, io_a=IntraorthoKind.HOUSE_QR, io_1=IntraorthoKind.HOUSE_QR,
                ledger=None, track_loo=False):
    """Two-sync variant: a stable IO_1 replaces the Pythagorean first pass."""
    return run_variant(OrthoVariant(VariantTag.IP_2S, io_a=io_a, io_1=io_1), X, part, ledger,
                       track_loo)


def bcgs_adaptive(X, part, io_a=IntraorthoKind.HOUSE_QR, io_1=IntraorthoKind.HOUSE_QR,
                  switch_const=DEFAULT_SWITCH_CONST, ledger=None, track_loo=False):
    """Run the one-sync loop until ``switch_check`` fires, then the two-sync loop.

    At the switching block the one-sync ``U`` is discarded and recomputed by
    IO_1, so that block is charged its wasted fused reduction plus the two
    reductions of the two-sync loop.
    """
    v = OrthoVariant(VariantTag.ADAPTIVE, io_a=io_a, io_1=io_1, switch_const=switch_const)
    return run_variant(v, X, part, ledger, track_loo)


def bcgs_iro(X, part, io_1=IntraorthoKind.HOUSE_QR, io_2=IntraorthoKind.HOUSE_QR,
             ledger=None, track_loo=False):
    """Classic BCGS2: project, IO_1, project again, IO_2 (four reductions per block)."""
    v = OrthoVariant(VariantTag.BCGS2, io_1=io_1, io_2=io_2)
    return run_variant(v, X, part, ledger, track_loo)


def bcgs_iro_a_1s(X, part, io_a=IntraorthoKind.HOUSE_QR, ledger=None, track_loo=False):
    return run_variant(OrthoVariant(VariantTag.A_1S, io_a=io_a), X, part, ledger, track_loo)


DRIVERS = {
    VariantTag.PIP_IRO: bcgs_pip_iro,
    VariantTag.IP_1S: bcgs_i_p_1s,
    VariantTag.IP_2S: bcgs_i_p_2s,
    VariantTag.ADAPTIVE: bcgs_adaptive,
    VariantTag.BCGS2: bcgs_iro,
    VariantTag.A_1S: bcgs_iro_a_1s,
}
