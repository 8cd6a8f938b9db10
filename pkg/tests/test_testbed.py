import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from lowsync_bcgs.bcgs import VariantTag
from lowsync_bcgs.core import BlockPartition, DimensionError, cond2
from lowsync_bcgs.testbed import (
    CSV_COLUMNS,
    MatrixClassParams,
    ParseError,
    gen_default,
    gen_glued,
    gen_gmres_system,
    gen_monomial,
    gen_piled,
    generate,
    kappa_sweep,
    measured_kappa,
    parse_matrix_market,
    read_matrix_market,
    write_matrix_market,
)

CLASSES = ["default", "glued", "monomial", "piled"]


def params(cls, kappa=1e6, seed=0, m=200, p=10, s=5):
    return MatrixClassParams(cls, m, p, s, kappa, seed)


# -- generators ------------------------------------------------------------------

def test_params_validation():
    with pytest.raises(ValueError):
        params("default", kappa=0.5)
    with pytest.raises(ValueError):
        params("hilbert")
    with pytest.raises(DimensionError):
        params("default", m=20)
    assert params("GLUED").cls.value == "glued"


@pytest.mark.parametrize("cls", CLASSES)
def test_generators_deterministic(cls):
    a, b = generate(params(cls, seed=4)), generate(params(cls, seed=4))
    assert np.array_equal(a, b)
    assert a.shape == (200, 50) and np.all(np.isfinite(a))
    assert not np.array_equal(a, generate(params(cls, seed=5)))


def test_default_kappa():
    assert cond2(gen_default(params("default", 1.0))) == pytest.approx(1.0)
    for kappa in (1e2, 1e8, 1e12):
        assert abs(cond2(gen_default(params("default", kappa))) / kappa - 1) <= 0.1


def test_glued_kappa():
    assert cond2(gen_glued(params("glued", 1.0))) < 10
    for kappa in (1e4, 1e8, 1e12):
        km = measured_kappa(gen_glued(params("glued", kappa)))
        assert kappa / 10 <= km <= kappa * 10


def test_glued_blocks_stay_modest():
    X = gen_glued(params("glued", 1e12))
    for k in range(10):
        assert cond2(X[:, 5 * k:5 * k + 5]) < 1e4


def test_glued_needs_room():
    with pytest.raises(DimensionError):
        gen_glued(MatrixClassParams("glued", 50, 10, 5, 1e6, 0))


@pytest.mark.parametrize("cls", ["default", "glued"])
def test_kappa_monotone_in_target(cls):
    ks = [measured_kappa(generate(params(cls, k))) for k in (1e2, 1e4, 1e6, 1e8, 1e10)]
    assert all(a < b for a, b in zip(ks, ks[1:]))


def test_monomial_s1_is_normalized_random():
    X = gen_monomial(MatrixClassParams("monomial", 100, 8, 1, 1e6, 0))
    np.testing.assert_allclose(np.linalg.norm(X, axis=0), 1.0)
    assert cond2(X) < 10


def test_monomial_kappa_grows_with_s():
    ks = [measured_kappa(gen_monomial(MatrixClassParams("monomial", 200, 5, s, 1.0, 0)))
          for s in (2, 4, 8)]
    assert ks[0] < ks[1] < ks[2]


def test_monomial_hits_reachable_target():
    km = measured_kappa(gen_monomial(params("monomial", 1e8)))
    assert 1e8 <= km <= 1e9


def test_piled_single_block_and_growth():
    X = gen_piled(MatrixClassParams("piled", 50, 1, 4, 1e6, 0))
    assert X.shape == (50, 4) and cond2(X) < 100
    X = gen_piled(params("piled", 1e8))
    ks = [measured_kappa(X[:, :5 * k]) for k in range(1, 11)]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(ks, ks[1:]))


def test_gmres_system():
    A = gen_gmres_system()
    assert A.shape == (400, 400)
    assert 3e3 <= cond2(A) <= 1e4
    assert not np.allclose(A, A.T)
    assert np.array_equal(A, gen_gmres_system())


# -- Matrix Market ---------------------------------------------------------------

def test_read_coordinate_diag(tmp_path):
    f = tmp_path / "d.mtx"
    f.write_text("%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 1.0\n2 2 2.0\n")
    op = read_matrix_market(f)
    assert np.array_equal(op.matrix.toarray(), np.diag([1.0, 2.0]))
    assert op.frobenius_norm == pytest.approx(math.sqrt(5))
    assert np.array_equal(read_matrix_market(f, dense=True), np.diag([1.0, 2.0]))


def test_read_symmetric_expands():
    A = parse_matrix_market("%%MatrixMarket matrix coordinate real symmetric\n"
                            "3 3 4\n1 1 4\n2 1 -1\n3 2 2.5\n3 3 1\n").toarray()
    np.testing.assert_array_equal(A, A.T)
    assert A[0, 1] == -1 and A[1, 2] == 2.5


def test_read_skew_and_array():
    A = parse_matrix_market("%%MatrixMarket matrix coordinate real skew-symmetric\n"
                            "2 2 1\n2 1 3\n").toarray()
    np.testing.assert_array_equal(A, [[0, -3], [3, 0]])
    B = parse_matrix_market("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n")
    np.testing.assert_array_equal(B.toarray(), [[1, 3], [2, 4]])
    C = parse_matrix_market("%%MatrixMarket matrix array integer symmetric\n2 2\n1\n2\n3\n")
    np.testing.assert_array_equal(C.toarray(), [[1, 2], [2, 3]])


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1\n", 1),
    ("%%MatrixMarket vector coordinate real general\n", 1),
    ("%%MatrixMarket matrix coordinate real general\n2 2\n", 2),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n", 3),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 abc\n", 3),
    ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n", 3),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 1\n2 2 2\n", 4),
    ("%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n1 2 1.0\n", 3),
    ("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n", 5),
    ("%%MatrixMarket matrix coordinate real general\n% only comment\n", 2),
    ("%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 nan\n", 3),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as info:
        parse_matrix_market(text)
    assert info.value.line == line


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1),
       st.sampled_from(["array", "coordinate"]))
def test_round_trip_exact(nr, nc, seed, fmt):
    import tempfile
    from pathlib import Path
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((nr, nc)) * 10.0 ** rng.integers(-300, 300, (nr, nc))
    A[rng.random((nr, nc)) < 0.3] = 0.0
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "a.mtx"
        write_matrix_market(path, sp.csr_matrix(A) if fmt == "coordinate" else A, fmt=fmt)
        back = read_matrix_market(path, dense=True)
    assert np.array_equal(back, A)


def test_generated_round_trip(tmp_path):
    X = gen_default(params("default", 1e6))
    write_matrix_market(tmp_path / "x.mtx", X, comment="default kappa=1e6")
    assert np.array_equal(read_matrix_market(tmp_path / "x.mtx", dense=True), X)


def test_rectangular_operator_rejected(tmp_path):
    write_matrix_market(tmp_path / "r.mtx", np.ones((3, 2)))
    with pytest.raises(DimensionError):
        read_matrix_market(tmp_path / "r.mtx")


# -- sweeps ----------------------------------------------------------------------

def test_sweep_small_kappa_all_variants():
    res = kappa_sweep("default", list(VariantTag), [1e1], BlockPartition(200, 10, 5))
    assert len(res) == 6
    for row in res.rows:
        assert row.status == "ok" and row.loo <= 1e-13 and row.rel_residual <= 1e-13


def test_sweep_large_kappa_regimes():
    res = kappa_sweep("glued", ["IP_1S", "IP_2S"], [1e10], BlockPartition(200, 10, 5))
    one, = res.select("IP_1S")
    two, = res.select("IP_2S")
    assert one.status == "breakdown" or one.loo > 1e-8
    assert two.loo <= 1e-13


def test_sweep_breakdown_row():
    res = kappa_sweep("glued", ["IP_1S"], [1e14], BlockPartition(200, 10, 5))
    row, = res.rows
    assert row.status == "breakdown" and row.loo == math.inf and row.rel_residual == math.inf


def test_sweep_deterministic_csv(tmp_path):
    part = BlockPartition(100, 5, 4)
    a = kappa_sweep("piled", ["IP_2S", "BCGS2"], [1e3, 1e6], part, rng_seed=2).to_csv()
    b = kappa_sweep("piled", ["IP_2S", "BCGS2"], [1e3, 1e6], part, rng_seed=2)
    assert a == b.to_csv(tmp_path / "s.csv") == (tmp_path / "s.csv").read_text()
    lines = a.splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) == 5


@pytest.mark.parametrize("cls", CLASSES)
def test_sweep_houseqr_below_kappa_squared_boundary(cls):
    stable = [t for t in VariantTag if t is not VariantTag.A_1S]
    res = kappa_sweep(cls, stable, [1e2, 1e4, 1e6], BlockPartition(200, 10, 5))
    for row in res.rows:
        if row.kappa_measured < 1e7:
            assert row.loo <= 1e-8, row
