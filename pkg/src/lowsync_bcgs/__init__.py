"""Low-synchronization reorthogonalized block Gram-Schmidt and s-step GMRES."""
from .bcgs import (
    DEFAULT_SWITCH_CONST,
    DRIVERS,
    BcgsReport,
    BlockOrthogonalizer,
    OrthoVariant,
    VariantTag,
    bcgs_adaptive,
    bcgs_i_p_1s,
    bcgs_i_p_2s,
    bcgs_iro,
    bcgs_iro_a_1s,
    bcgs_pip_iro,
    lazy_s_column,
    run_variant,
    switch_check,
)
from .core import (
    BlockPartition,
    DimensionError,
    FactorizationBreakdown,
    NotPositiveDefinite,
    QRFactorization,
    RankDeficient,
    SingularMatrix,
    SingularTriangular,
    SyncLedger,
    ZeroMatrix,
    cholesky_upper,
    cond2,
    fused_block_product,
    loss_of_orthogonality,
    relative_residual,
    tri_solve,
)
from .intraortho import IntraorthoKind, chol_qr, house_qr, mgs, pythagorean_chol_step, tsqr
from .krylov import (
    BasisKind,
    BasisPolicy,
    BreakdownError,
    GmresState,
    LinearOperator,
    arnoldi_init,
    arnoldi_step,
    as_operator,
    generate_panel,
    givens_ls_update,
    gmres_backward_error,
    sstep_gmres,
)

__version__ = "0.1.0"
