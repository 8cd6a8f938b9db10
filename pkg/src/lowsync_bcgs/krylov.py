"""s-step Arnoldi and s-step GMRES on top of the streaming block orthogonalizer.

The Arnoldi process feeds Krylov panels into :class:`BlockOrthogonalizer`.
Block 0 is the residual ``r``; block ``k`` is the panel
``X_k = M_L^{-1} A M_R^{-1} B_k``.  For the delayed-normalization variants the
panel ``B_{k+1}`` is generated from the last column of ``U_k`` because ``Q_k``
is not formed until after the reduction that already needs ``X_{k+1}``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bcgs import (
    SETUP_PHASES,
    BlockFeed,
    BlockOrthogonalizer,
    OrthoVariant,
    VariantTag,
)
from .core import (
    EPS,
    BcgsError,
    DimensionError,
    FactorizationBreakdown,
    SingularTriangular,
    SyncLedger,
    tri_solve,
)
from .intraortho import IntraorthoKind

DEFAULT_TOL = 1e-12
GMRES_VARIANTS = (VariantTag.IP_1S, VariantTag.IP_2S, VariantTag.ADAPTIVE, VariantTag.BCGS2,
                  VariantTag.PIP_IRO)


class BreakdownError(BcgsError):
    """A Krylov basis column vanished: the space is invariant (lucky breakdown)."""

    def __init__(self, column, msg=None):
        self.column = column
        super().__init__(msg or f"basis column {column} vanished")


class LinearOperator:
    """Square operator ``v -> A v`` with a stored Frobenius norm."""

    def __init__(self, m: int, apply: Callable, frobenius_norm: float = float("nan"), matrix=None):
        self.m = int(m)
        self._apply = apply
        self.frobenius_norm = float(frobenius_norm)
        self.matrix = matrix

    @property
    def shape(self):
        return (self.m, self.m)

    def apply(self, V):
        V = np.asarray(V, dtype=np.float64)
        if V.shape[0] != self.m:
            raise DimensionError(f"operator of order {self.m} applied to shape {V.shape}")
        return np.asarray(self._apply(V), dtype=np.float64)

    def __matmul__(self, V):
        return self.apply(V)

    def __repr__(self):
        return f"LinearOperator(m={self.m}, frobenius_norm={self.frobenius_norm:.3e})"


def as_operator(A) -> LinearOperator:
    """Wrap a dense array, a scipy sparse matrix or an existing operator."""
    if isinstance(A, LinearOperator):
        return A
    if sp.issparse(A):
        A = sp.csr_matrix(A, dtype=np.float64)
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"operator must be square, got {A.shape}")
        return LinearOperator(A.shape[0], A.__matmul__, spla.norm(A, "fro"), A)
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"operator must be square, got {A.shape}")
    return LinearOperator(A.shape[0], A.__matmul__, np.linalg.norm(A, "fro"), A)


def identity_operator(m: int) -> LinearOperator:
    return LinearOperator(m, lambda V: V.copy(), np.sqrt(m))


class BasisKind(enum.Enum):
    MONOMIAL = "monomial"
    NEWTON = "newton"


@dataclass
class BasisPolicy:
    """Polynomial recurrence for the panel columns.

    Newton shifts left as ``None`` are filled with Leja-ordered Ritz values
    once the first block step is available.
    """

    kind: BasisKind = BasisKind.MONOMIAL
    shifts: list[float] | None = None
    column_scaling: str = "unit"

    def __post_init__(self):
        self.kind = BasisKind(self.kind)
        if self.column_scaling not in ("none", "unit"):
            raise ValueError("column_scaling must be 'none' or 'unit'")

    def shift(self, j: int) -> float:
        if self.kind is BasisKind.MONOMIAL or not self.shifts:
            return 0.0
        return float(self.shifts[j % len(self.shifts)])


class Panel(NamedTuple):
    B: np.ndarray
    Z: np.ndarray
    X: np.ndarray


def _apply_opt(M, V):
    return V if M is None else as_operator(M).apply(V)


def generate_panel(A_op, M_L, M_R, seed_vector, s: int, policy: BasisPolicy | None = None) -> Panel:
    """Krylov panel ``B`` from ``seed_vector`` plus ``Z = M_R^{-1} B`` and ``X = M_L^{-1} A Z``.

    The recurrence runs in the preconditioned operator ``Ahat = M_L^{-1} A M_R^{-1}``:
    ``b_{j+1} = (Ahat - theta_j) b_j``, so ``X`` reuses every operator
    application.  ``M_L`` and ``M_R`` apply the inverse preconditioners
    (``None`` means identity).
    """
    A_op = as_operator(A_op)
    policy = policy or BasisPolicy()
    if s < 1:
        raise ValueError("s must be >= 1")
    if policy.kind is BasisKind.NEWTON and policy.shifts is not None and len(policy.shifts) < s - 1:
        raise ValueError(f"Newton basis needs at least {s - 1} shifts")
    m = A_op.m
    scale = policy.column_scaling == "unit"
    b = np.asarray(seed_vector, dtype=np.float64).reshape(m)
    B = np.empty((m, s))
    Z = np.empty((m, s))
    X = np.empty((m, s))
    nb = np.linalg.norm(b)
    if nb == 0 or not np.isfinite(nb):
        raise BreakdownError(0)
    if scale:
        b = b / nb
    for j in range(s):
        B[:, j] = b
        Z[:, j] = _apply_opt(M_R, b)
        X[:, j] = _apply_opt(M_L, A_op.apply(Z[:, j]))
        if j == s - 1:
            break
        theta = policy.shift(j)
        nxt = X[:, j] - theta * b
        nn = np.linalg.norm(nxt)
        ref = np.linalg.norm(X[:, j]) + abs(theta) * np.linalg.norm(b)
        if nn <= EPS * ref or not np.isfinite(nn):
            raise BreakdownError(j + 1)
        b = nxt / nn if scale else nxt
    return Panel(B, Z, X)


def leja_order(values) -> np.ndarray:
    """Leja ordering of real shifts: largest magnitude first, then farthest by product."""
    vals = list(np.asarray(values, dtype=np.float64))
    if not vals:
        return np.zeros(0)
    out = [max(vals, key=abs)]
    vals.remove(out[0])
    while vals:
        nxt = max(vals, key=lambda v: np.prod([abs(v - w) for w in out]))
        out.append(nxt)
        vals.remove(nxt)
    return np.array(out)


def gmres_backward_error(A_op, b, x) -> float:
    """``||b - A x|| / (||A||_F ||x|| + ||b||)``."""
    A_op = as_operator(A_op)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    den = A_op.frobenius_norm * np.linalg.norm(x) + np.linalg.norm(b)
    if den == 0:
        return 0.0
    return float(np.linalg.norm(b - A_op.apply(x)) / den)


class _KrylovFeed(BlockFeed):
    def __init__(self, A_op, M_L, M_R, s, policy, max_panels, Zstore):
        self.A_op, self.M_L, self.M_R, self.s = A_op, M_L, M_R, s
        self.policy = policy
        self.max_panels = max_panels
        self.panels: list[Panel] = []
        self.Zstore = Zstore
        self.breakdown: BreakdownError | None = None

    def _make(self, seed):
        try:
            return generate_panel(self.A_op, self.M_L, self.M_R, seed, self.s, self.policy)
        except BreakdownError as exc:
            self.breakdown = exc
            return None

    def _store(self, panel):
        k = len(self.panels)
        self.Zstore[:, k * self.s:(k + 1) * self.s] = panel.Z

    def next(self, seed):
        if len(self.panels) >= self.max_panels or self.breakdown is not None:
            return None
        panel = self._make(seed)
        if panel is None:
            return None
        self._store(panel)
        self.panels.append(panel)
        return panel.X

    def redo(self, seed):
        self.panels.pop()
        return self.next(seed)


class GmresRecord(NamedTuple):
    step: int
    vectors: int
    backward_error: float
    sync_total: int
    ls_residual: float


class GmresState:
    """Everything an s-step GMRES run carries between block steps.

    ``Q``/``Rfac`` are views of the orthogonalizer's storage; ``H`` is
    ``Rfac`` without its first column.  ``T_ls`` and ``g`` hold the Givens
    factorization of ``H`` and the rotated right-hand side ``beta G^T e_1``.
    """

    def __init__(self, A_op, b, x0, s, variant, M_L, M_R, policy, tol, max_iter, ledger):
        self.A = A_op
        self.b = b
        self.x0 = x0
        self.s = s
        self.variant = variant
        self.M_L, self.M_R = M_L, M_R
        self.policy = policy
        self.tol = tol
        self.max_iter = max_iter
        self.ledger = ledger
        m = A_op.m
        cap = max_iter * s
        self.Zprec = np.zeros((m, cap))
        self.givens = np.zeros((cap, 2))
        self.T_ls = np.zeros((cap + 1, cap))
        self.g = np.zeros(cap + 1)
        self.ls_columns = 0
        self.history: list[GmresRecord] = []
        self.steps = 0
        self.x = x0.copy()
        self.backward_error = gmres_backward_error(A_op, b, x0)
        self.best_x = self.x
        self.best_error = self.backward_error
        self.status = "running"
        self.error: Exception | None = None
        self.switch_block: int | None = None
        self.beta = 0.0
        self.engine: BlockOrthogonalizer | None = None
        self.feed: _KrylovFeed | None = None
        self._steps = None
        self._ritz_pending = policy.kind is BasisKind.NEWTON and policy.shifts is None

    @property
    def Q(self):
        return self.engine.Q[:, :self.engine.ncols]

    @property
    def Rfac(self):
        n = self.engine.ncols
        return self.engine.R[:n, :n]

    @property
    def H(self):
        return self.Rfac[:, 1:]

    @property
    def B(self):
        return [p.B for p in self.feed.panels[:self.steps]]

    @property
    def vectors(self) -> int:
        return self.steps * self.s

    @property
    def done(self) -> bool:
        return self.status != "running"

    @property
    def sync_total(self) -> int:
        """Reductions excluding those that build the first basis column."""
        return self.ledger.excluding(*SETUP_PHASES)

    @property
    def iteration_split(self) -> tuple[int, int]:
        """Single-vector iterations done by the one-sync and two-sync loops (adaptive)."""
        if self.switch_block is None:
            return self.vectors, 0
        first = (self.switch_block - 1) * self.s
        return first, self.vectors - first


def _variant_for(variant, io_1, switch_const) -> OrthoVariant:
    if isinstance(variant, OrthoVariant):
        v = variant
    else:
        tag = VariantTag.parse(variant)
        kw = {"io_1": io_1}
        if tag is VariantTag.ADAPTIVE:
            kw["switch_const"] = switch_const
        v = OrthoVariant(tag, **kw)
    if v.tag not in GMRES_VARIANTS:
        raise ValueError(f"{v.tag.value} is not supported inside s-step GMRES")
    return v


def arnoldi_init(A_op, b, x0=None, s: int = 2, variant="IP_2S", M_L=None, M_R=None,
                 policy: BasisPolicy | None = None, tol: float = DEFAULT_TOL,
                 max_iter: int | None = None, io_1=IntraorthoKind.HOUSE_QR,
                 switch_const: float | None = None, ledger: SyncLedger | None = None) -> GmresState:
    """Residual, ``beta`` and ``Q_1 = r / beta``; returns a state ready for block steps."""
    from .bcgs import DEFAULT_SWITCH_CONST

    A_op = as_operator(A_op)
    m = A_op.m
    if s < 1:
        raise ValueError("s must be >= 1")
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.shape[0] != m:
        raise DimensionError(f"right-hand side has length {b.shape[0]}, expected {m}")
    x0 = np.zeros(m) if x0 is None else np.asarray(x0, dtype=np.float64).reshape(-1).copy()
    v = _variant_for(variant, io_1, DEFAULT_SWITCH_CONST if switch_const is None else switch_const)
    if max_iter is None:
        max_iter = m // s
    # never ask for more basis vectors than the space holds
    max_iter = max(0, min(int(max_iter), (m - 1) // s))
    policy = policy or BasisPolicy()
    ledger = ledger if ledger is not None else SyncLedger()
    st = GmresState(A_op, b, x0, s, v, M_L, M_R, policy, tol, max_iter, ledger)
    r = _apply_opt(M_L, b - A_op.apply(x0))
    st.feed = _KrylovFeed(A_op, M_L, M_R, s, policy, max_iter, st.Zprec)
    st.engine = BlockOrthogonalizer(v, r[:, None], st.feed, 1 + max_iter * s, ledger)
    if st.backward_error <= tol or np.linalg.norm(r) == 0:
        st.status = "converged"
        return st
    st._steps = st.engine.steps()
    try:
        next(st._steps)
    except FactorizationBreakdown as exc:
        st.error = exc
        st.status = "halted"
        return st
    st.beta = float(st.engine.R[0, 0])
    st.g[0] = st.beta
    if max_iter == 0:
        st.status = "max_iter"
    return st


def givens_ls_update(state: GmresState, new_H_columns) -> GmresState:
    """Rotate new Hessenberg columns into ``T_ls`` and extend ``g``.

    Columns ``j0 .. j0+w-1`` with ``j0`` the number already processed; each
    arrives with ``j0 + w + 1`` rows.  Rotation ``(c, s)`` maps ``(a, b)`` to
    ``(c a + s b, -s a + c b) = (r, 0)``.
    """
    Hn = np.asarray(new_H_columns, dtype=np.float64)
    j0 = state.ls_columns
    for t in range(Hn.shape[1]):
        j = j0 + t
        h = np.zeros(j + 2)
        rows = min(Hn.shape[0], j + 2)
        h[:rows] = Hn[:rows, t]
        for i in range(j):
            c, sn = state.givens[i]
            h[i], h[i + 1] = c * h[i] + sn * h[i + 1], -sn * h[i] + c * h[i + 1]
        a, bb = h[j], h[j + 1]
        if bb == 0:
            c, sn = 1.0, 0.0
        else:
            rr = np.hypot(a, bb)
            c, sn = a / rr, bb / rr
            h[j], h[j + 1] = rr, 0.0
        state.givens[j] = (c, sn)
        state.T_ls[:j + 1, j] = h[:j + 1]
        state.g[j], state.g[j + 1] = c * state.g[j], -sn * state.g[j]
    state.ls_columns = j0 + Hn.shape[1]
    return state


def _ls_solution(state: GmresState, k: int):
    T = state.T_ls[:k, :k]
    try:
        return tri_solve(T, state.g[:k, None]).ravel()
    except SingularTriangular:
        return np.linalg.lstsq(T, state.g[:k], rcond=None)[0]


def _record(state: GmresState, x, ls_res):
    be = gmres_backward_error(state.A, state.b, x)
    state.x = x
    state.backward_error = be
    if be < state.best_error or state.best_x is None:
        state.best_x, state.best_error = x, be
    state.history.append(GmresRecord(state.steps, state.vectors, be, state.sync_total, float(ls_res)))
    return be


def _augmented_candidate(state: GmresState, exc):
    """Least-squares iterate that also uses the projection of the failed panel.

    When ``X_k - Q S`` is (near) zero the Krylov space is invariant and
    ``Ahat B_k = Q S`` closes the Arnoldi relation.
    """
    S = getattr(exc, "projection", None)
    blk = getattr(exc, "block", None)
    if S is None or blk is None or blk < 1 or blk - 1 >= len(state.feed.panels):
        return None
    n = state.engine.ncols
    S = np.asarray(S)
    if S.shape[0] != n:
        return None
    Hp = state.engine.R[:n, 1:n]
    M = np.hstack([Hp, S])
    rhs = np.zeros(n)
    rhs[0] = state.beta
    y = np.linalg.lstsq(M, rhs, rcond=None)[0]
    Zall = np.hstack([state.Zprec[:, :n - 1], state.feed.panels[blk - 1].Z])
    return state.x0 + Zall @ y


def _set_ritz_shifts(state: GmresState):
    s = state.s
    theta = np.linalg.eigvals(state.H[:s, :s]).real
    state.policy.shifts = list(leja_order(theta))
    state._ritz_pending = False


def _note_switch(state: GmresState):
    if state.engine.switch_index is not None:
        state.switch_block = state.engine.switch_index


def arnoldi_step(state: GmresState) -> GmresState:
    """Advance one block step; on success rotate the new ``H`` columns into the LS factor."""
    if state.done:
        return state
    try:
        next(state._steps)
    except StopIteration:
        if state.feed.breakdown is not None:
            state.error = state.feed.breakdown
        state.status = "converged" if state.backward_error <= state.tol else (
            "max_iter" if state.feed.breakdown is None else "halted")
        return state
    except FactorizationBreakdown as exc:
        state.error = exc
        _note_switch(state)
        cand = _augmented_candidate(state, exc)
        if cand is not None:
            be = gmres_backward_error(state.A, state.b, cand)
            if be < state.backward_error:
                # the failed block still produced a usable search direction
                state.steps += 1
                _record(state, cand, float("nan"))
        state.status = "converged" if state.backward_error <= state.tol else "halted"
        return state
    state.steps += 1
    _note_switch(state)
    c0, c1 = state.engine.block_bounds[-1]
    givens_ls_update(state, state.engine.R[:c1, c0:c1])
    k = c1 - 1
    y = _ls_solution(state, k)
    x = state.x0 + state.Zprec[:, :k] @ y
    be = _record(state, x, abs(state.g[k]))
    if state._ritz_pending and state.steps == 1:
        _set_ritz_shifts(state)
    if be <= state.tol:
        state.status = "converged"
    elif state.steps >= state.max_iter:
        state.status = "max_iter"
    return state


def sstep_gmres(A_op, b, x0=None, s: int = 2, variant="IP_2S", M_L=None, M_R=None,
                tol: float = DEFAULT_TOL, max_iter: int | None = None,
                policy: BasisPolicy | None = None, io_1=IntraorthoKind.HOUSE_QR,
                switch_const: float | None = None):
    """s-step GMRES without restarts.

    The true backward error is evaluated on the explicitly formed iterate
    after every block step.  Returns ``(x, state)`` where ``x`` is the first
    iterate meeting ``tol`` or, failing that, the best one seen.
    """
    state = arnoldi_init(A_op, b, x0, s, variant, M_L, M_R, policy, tol, max_iter, io_1,
                         switch_const)
    while not state.done:
        arnoldi_step(state)
    if state._steps is not None:
        state._steps.close()
    x = state.x if state.status == "converged" else state.best_x
    return x, state
