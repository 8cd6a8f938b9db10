"""Test-matrix generators, Matrix Market I/O and the LOO-versus-kappa sweep.

Generator constructions (all driven by ``numpy.random.default_rng(seed)``):

default   ``U diag(sigma) V^T`` with orthonormal ``U, V`` and ``sigma`` geometric
          from 1 to ``1/kappa``.
glued     block ``k`` is ``Z G_k + sigma_k U_k O_k``: a shared orthonormal base
          ``Z`` plus a private orthonormal ``U_k``, with ``G_k, O_k`` orthogonal.
          Each block is perfectly conditioned on its own, but all blocks lean on
          the same ``s``-dimensional base.  ``sigma_k`` decays geometrically from
          1 and its rate is bisected so that ``cond2`` lands on the target.
monomial  block ``k`` is ``[v, A v, ..., A^{s-1} v]`` (unit columns) for a
          diagonal ``A`` with eigenvalues evenly spaced in ``[1 - delta, 1]`` and a
          fresh random ``v`` per block.  Narrowing the spectrum makes the powers
          more parallel, so ``delta`` is bisected toward ``kappa_target``; the
          widest spectrum bottoms out near ``kappa = 1e3`` for ``s = 5``, so the
          condition number is recorded rather than guaranteed.
piled     ``X_1 = G_1`` and ``X_k = X_{k-1} + tau^{k-1} G_k``: every block is
          a small perturbation of the pile below it.

``gen_gmres_system`` builds a square nonsymmetric system for s-step GMRES
experiments when no Matrix Market file is at hand.
"""
from __future__ import annotations

import csv
import enum
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bcgs import OrthoVariant, VariantTag, run_variant
from .core import (
    BcgsError,
    BlockPartition,
    DimensionError,
    relative_residual,
    singular_values,
)
from .intraortho import IntraorthoKind
from .krylov import LinearOperator, as_operator


class MatrixClass(enum.Enum):
    DEFAULT = "default"
    GLUED = "glued"
    MONOMIAL = "monomial"
    PILED = "piled"

    @classmethod
    def parse(cls, name) -> "MatrixClass":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(f"unknown matrix class {name!r}") from None


@dataclass(frozen=True)
class MatrixClassParams:
    cls: MatrixClass
    m: int
    p: int
    s: int
    kappa_target: float = 1e6
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cls", MatrixClass.parse(self.cls))
        if not self.kappa_target >= 1:
            raise ValueError("kappa_target must be >= 1")
        BlockPartition(self.m, self.p, self.s)

    @property
    def n(self) -> int:
        return self.p * self.s

    @property
    def partition(self) -> BlockPartition:
        return BlockPartition(self.m, self.p, self.s)


def measured_kappa(X) -> float:
    """``sigma_max / sigma_min`` that returns ``inf`` instead of raising."""
    sv = singular_values(X)
    if sv.size == 0 or sv[-1] == 0:
        return math.inf
    return float(sv[0] / sv[-1])


def _orthonormal(rng, m, n):
    Q, R = np.linalg.qr(rng.standard_normal((m, n)))
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def gen_default(params: MatrixClassParams) -> np.ndarray:
    rng = np.random.default_rng(params.rng_seed)
    m, n = params.m, params.n
    U = _orthonormal(rng, m, n)
    V = _orthonormal(rng, n, n)
    sigma = np.geomspace(1.0, 1.0 / params.kappa_target, n)
    return (U * sigma) @ V.T


def gen_glued(params: MatrixClassParams) -> np.ndarray:
    """Blocks glued onto one shared subspace.

    Needs ``m >= (p + 1) s`` so the base and the private directions fit.
    """
    m, s, p = params.m, params.s, params.p
    if m < (p + 1) * s:
        raise DimensionError(f"glued matrices need m >= (p+1)s = {(p + 1) * s}, got m={m}")
    rng = np.random.default_rng(params.rng_seed)
    W = _orthonormal(rng, m, (p + 1) * s)
    base, private = W[:, :s], W[:, s:]
    glue = [_orthonormal(rng, s, s) for _ in range(p)]
    mix = [_orthonormal(rng, s, s) for _ in range(p)]
    target = params.kappa_target

    def build(t):
        sigma = np.exp(-t * np.arange(p) / max(p - 1, 1))
        X = np.empty((m, params.n))
        for k in range(p):
            X[:, k * s:(k + 1) * s] = (base @ glue[k]
                                       + sigma[k] * private[:, k * s:(k + 1) * s] @ mix[k])
        return X

    if p == 1 or measured_kappa(build(0.0)) >= target:
        return build(0.0)
    lo, hi = 0.0, math.log(target) + math.log(10.0 * math.sqrt(p + 1))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if measured_kappa(build(mid)) < target:
            lo = mid
        else:
            hi = mid
    return build(hi)


def gen_monomial(params: MatrixClassParams) -> np.ndarray:
    rng = np.random.default_rng(params.rng_seed)
    m, s, p = params.m, params.s, params.p
    seeds = rng.standard_normal((p, m))

    def build(log_delta):
        lam = np.linspace(1.0 - math.exp(log_delta), 1.0, m)
        X = np.empty((m, params.n))
        for k in range(p):
            v = seeds[k]
            for j in range(s):
                v = v / np.linalg.norm(v)
                X[:, k * s + j] = v
                v = lam * v
        return X

    # a narrower spectrum gives more nearly parallel powers, hence larger kappa
    lo, hi = math.log(1e-8), math.log(0.999)
    if s == 1 or measured_kappa(build(hi)) >= params.kappa_target:
        return build(hi)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if measured_kappa(build(mid)) >= params.kappa_target:
            lo = mid
        else:
            hi = mid
    return build(lo)


def gen_piled(params: MatrixClassParams) -> np.ndarray:
    rng = np.random.default_rng(params.rng_seed)
    m, s, p = params.m, params.s, params.p
    tau = params.kappa_target ** (-1.0 / max(p - 1, 1))
    X = np.empty((m, params.n))
    X[:, :s] = rng.standard_normal((m, s))
    for k in range(1, p):
        X[:, k * s:(k + 1) * s] = X[:, (k - 1) * s:k * s] + tau ** k * rng.standard_normal((m, s))
    return X


GENERATORS = {
    MatrixClass.DEFAULT: gen_default,
    MatrixClass.GLUED: gen_glued,
    MatrixClass.MONOMIAL: gen_monomial,
    MatrixClass.PILED: gen_piled,
}


def generate(params: MatrixClassParams) -> np.ndarray:
    return GENERATORS[params.cls](params)


def gen_gmres_system(m: int = 400, rng_seed: int = 6, n_large: int = 20, large: float = 1e3,
                     small: float = 0.3, coupling: float = 2.0) -> np.ndarray:
    """Dense nonsymmetric test system with a clustered spectrum and outliers.

    ``A = P T P^T`` with ``P`` random orthogonal and ``T`` upper triangular:
    its diagonal has a bulk in ``[1, 3]``, ``n_large`` eigenvalues spread
    geometrically up to ``large`` and one small eigenvalue ``small``; the
    strict upper triangle is Gaussian scaled by ``coupling / sqrt(m)``.
    The defaults give ``cond2 ~ 6e3``, a problem on which monomial s-step
    GMRES converges for moderate ``s`` but the basis for ``s = 4`` is too
    ill-conditioned for the one-sync variant.
    """
    rng = np.random.default_rng(rng_seed)
    lo, hi = 1.0, 3.0
    d = np.concatenate([rng.uniform(lo, hi, m - n_large - 1),
                        np.geomspace(hi, large, n_large + 1)[1:], [small]])
    rng.shuffle(d)
    T = np.diag(d) + coupling * np.triu(rng.standard_normal((m, m)), 1) / math.sqrt(m)
    P, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return P @ T @ P.T


# -- Matrix Market --------------------------------------------------------------

class ParseError(BcgsError, ValueError):
    """Malformed Matrix Market input; ``line`` is 1-based."""

    def __init__(self, line, msg):
        self.line = line
        super().__init__(f"line {line}: {msg}")


_FIELDS = ("real", "integer", "double")
_SYMMETRIES = ("general", "symmetric", "skew-symmetric")


def _data_lines(lines, start):
    for no, raw in enumerate(lines[start:], start=start + 1):
        text = raw.strip()
        if text and not text.startswith("%"):
            yield no, text.split()


def _parse_float(tok, no):
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(no, f"not a number: {tok!r}") from None
    if not math.isfinite(val):
        raise ParseError(no, f"non-finite entry {tok!r}")
    return val


def _parse_int(tok, no, what):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(no, f"bad {what}: {tok!r}") from None


def parse_matrix_market(text: str) -> sp.csr_matrix:
    lines = text.splitlines()
    if not lines:
        raise ParseError(1, "empty file")
    head = lines[0].split()
    if len(head) != 5 or head[0].lower() != "%%matrixmarket" or head[1].lower() != "matrix":
        raise ParseError(1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'")
    fmt, fld, sym = (h.lower() for h in head[2:])
    if fmt not in ("coordinate", "array"):
        raise ParseError(1, f"unsupported format {fmt!r}")
    if fld not in _FIELDS:
        raise ParseError(1, f"unsupported field {fld!r}")
    if sym not in _SYMMETRIES:
        raise ParseError(1, f"unsupported symmetry {sym!r}")
    body = _data_lines(lines, 1)
    try:
        no, size = next(body)
    except StopIteration:
        raise ParseError(len(lines), "missing size line") from None
    if fmt == "coordinate":
        if len(size) != 3:
            raise ParseError(no, "size line must hold rows, cols, nnz")
        nr, nc, nnz = (_parse_int(t, no, "size") for t in size)
    else:
        if len(size) != 2:
            raise ParseError(no, "size line must hold rows, cols")
        nr, nc = (_parse_int(t, no, "size") for t in size)
    if nr < 1 or nc < 0:
        raise ParseError(no, "dimensions must be positive")
    if sym != "general" and nr != nc:
        raise ParseError(no, f"{sym} matrix must be square")

    rows, cols, vals = [], [], []
    if fmt == "coordinate":
        if nnz < 0:
            raise ParseError(no, "negative entry count")
        count = 0
        for no, tok in body:
            if len(tok) != 3:
                raise ParseError(no, "expected 'row col value'")
            i, j = _parse_int(tok[0], no, "row"), _parse_int(tok[1], no, "column")
            if not (1 <= i <= nr and 1 <= j <= nc):
                raise ParseError(no, f"index ({i}, {j}) outside {nr}x{nc}")
            if sym != "general" and j > i:
                raise ParseError(no, "symmetric storage must be lower triangular")
            if sym == "skew-symmetric" and i == j:
                raise ParseError(no, "skew-symmetric storage has no diagonal")
            rows.append(i - 1)
            cols.append(j - 1)
            vals.append(_parse_float(tok[2], no))
            count += 1
            if count > nnz:
                raise ParseError(no, f"more than the declared {nnz} entries")
        if count < nnz:
            raise ParseError(len(lines), f"expected {nnz} entries, found {count}")
    else:
        if sym == "general":
            slots = [(i, j) for j in range(nc) for i in range(nr)]
        elif sym == "symmetric":
            slots = [(i, j) for j in range(nc) for i in range(j, nr)]
        else:
            slots = [(i, j) for j in range(nc) for i in range(j + 1, nr)]
        k = 0
        for no, tok in body:
            if len(tok) != 1:
                raise ParseError(no, "array format holds one value per line")
            if k >= len(slots):
                raise ParseError(no, f"more than the expected {len(slots)} values")
            i, j = slots[k]
            rows.append(i)
            cols.append(j)
            vals.append(_parse_float(tok[0], no))
            k += 1
        if k < len(slots):
            raise ParseError(len(lines), f"expected {len(slots)} values, found {k}")

    rows = np.array(rows, dtype=np.int64)
    cols = np.array(cols, dtype=np.int64)
    vals = np.array(vals, dtype=np.float64)
    if sym != "general":
        off = rows != cols
        sign = -1.0 if sym == "skew-symmetric" else 1.0
        rows, cols, vals = (np.concatenate([rows, cols[off]]), np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, sign * vals[off]]))
    A = sp.coo_matrix((vals, (rows, cols)), shape=(nr, nc)).tocsr()
    A.sum_duplicates()
    return A


def read_matrix_market(path, dense: bool = False):
    """Load a Matrix Market file.

    Returns a :class:`LinearOperator` (CSR storage in ``.matrix``, Frobenius
    norm precomputed) or, with ``dense=True``, an ``ndarray``.
    """
    with open(path, "r", encoding="ascii", errors="strict") as fh:
        A = parse_matrix_market(fh.read())
    if dense:
        return A.toarray()
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"operator must be square, got {A.shape}")
    return as_operator(A)


def write_matrix_market(path, A, fmt: str = "array", comment: str | None = None) -> None:
    """Write a real general matrix; values use ``repr`` so reading back is exact."""
    if isinstance(A, LinearOperator):
        A = A.matrix
    if fmt not in ("array", "coordinate"):
        raise ValueError("fmt must be 'array' or 'coordinate'")
    buf = io.StringIO()
    buf.write(f"%%MatrixMarket matrix {fmt} real general\n")
    if comment:
        for line in comment.splitlines():
            buf.write(f"% {line}\n")
    if fmt == "array":
        D = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)
        nr, nc = D.shape
        buf.write(f"{nr} {nc}\n")
        for v in D.ravel(order="F"):
            buf.write(f"{float(v)!r}\n")
    else:
        C = sp.coo_matrix(A)
        C.sum_duplicates()
        order = np.lexsort((C.row, C.col))
        buf.write(f"{C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for k in order:
            buf.write(f"{C.row[k] + 1} {C.col[k] + 1} {float(C.data[k])!r}\n")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(buf.getvalue())


# -- sweeps ---------------------------------------------------------------------

CSV_COLUMNS = ("class", "kappa_target", "kappa_measured", "variant", "io_a", "io_1", "loo",
               "rel_residual", "sync_total", "status")


@dataclass
class SweepRow:
    cls: str
    kappa_target: float
    kappa_measured: float
    variant: str
    io_a: str
    io_1: str
    loo: float
    rel_residual: float
    sync_total: int
    status: str

    def as_csv(self) -> list[str]:
        return [self.cls, f"{self.kappa_target:.6e}", f"{self.kappa_measured:.6e}", self.variant,
                self.io_a, self.io_1, f"{self.loo:.6e}", f"{self.rel_residual:.6e}",
                str(self.sync_total), self.status]


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def select(self, variant=None, kappa_target=None) -> list[SweepRow]:
        tag = None if variant is None else VariantTag.parse(variant).name
        return [r for r in self.rows
                if (tag is None or r.variant == tag)
                and (kappa_target is None or r.kappa_target == kappa_target)]

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(r.as_csv())
        text = buf.getvalue()
        if dest is not None:
            if isinstance(dest, (str, os.PathLike)):
                with open(dest, "w", encoding="ascii", newline="") as fh:
                    fh.write(text)
            else:
                dest.write(text)
        return text


def _as_variant(v, io_a, io_1) -> OrthoVariant:
    if isinstance(v, OrthoVariant):
        return v
    tag = VariantTag.parse(v)
    if tag is VariantTag.BCGS2:
        return OrthoVariant(tag, io_1=io_1, io_2=io_a)
    return OrthoVariant(tag, io_a=io_a, io_1=io_1)


def kappa_sweep(cls, variants, kappa_grid, part: BlockPartition, rng_seed: int = 0,
                io_a=IntraorthoKind.HOUSE_QR, io_1=IntraorthoKind.HOUSE_QR) -> SweepResult:
    """One factorization per (kappa, variant); breakdowns become ``loo = inf`` rows."""
    cls = MatrixClass.parse(cls)
    vs = [_as_variant(v, io_a, io_1) for v in variants]
    out = SweepResult()
    for kappa in kappa_grid:
        params = MatrixClassParams(cls, part.m, part.p, part.s, float(kappa), rng_seed)
        X = generate(params)
        km = measured_kappa(X)
        for v in vs:
            rep = run_variant(v, X, part)
            if rep.ok:
                loo = rep.loo()
                res = relative_residual(X, rep.Q, rep.R)
            else:
                loo = res = math.inf
            io_first = v.io_2 if v.tag is VariantTag.BCGS2 else v.io_a
            out.rows.append(SweepRow(cls.value, float(kappa), km, v.tag.name, io_first.tag,
                                     v.io_1.tag, loo, res, rep.ledger.total, rep.status))
    return out
