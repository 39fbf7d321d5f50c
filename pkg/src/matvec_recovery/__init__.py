"""Recovering structured matrices from matrix-vector products.

Exact recovery of diagonal, banded, circulant, Toeplitz, Hankel and
Toeplitz-like matrices; randomized low-rank, HSS and HODLR recovery; and
witnesses showing when a budget of products cannot pin a matrix down.
"""

from .basic_recovery import (
    recover_block_diagonal,
    recover_circulant,
    recover_diagonal,
    recover_hankel,
    recover_symmetric_tridiagonal,
    recover_toeplitz,
    recover_toeplitz_like,
    recover_tridiagonal,
)
from .errors import (
    ConfigurationError,
    DegeneracyError,
    IllConditionedInputError,
    InputShapeError,
    RecoveryError,
    SingularPencilError,
    UnderdeterminedError,
)
from .hodlr import (
    recover_hodlr_general,
    recover_hodlr_generic_rank1,
    recover_hodlr_symmetric,
    stop_level,
)
from .hss import HssConfig, recover_hss, recover_restricted_hss
from .lowrank import (
    SketchConfig,
    nystrom_recover_symmetric,
    rsvd_recover,
    witness_lowrank,
    witness_orthogonal,
    witness_symmetric,
)
from .oracle import (
    NoiseSpec,
    OracleHandle,
    QueryLedger,
    dense_oracle,
    form_oracle,
    query,
    query_transpose,
    with_noise,
)
from .structured import apply_form, apply_form_transpose, load_form, materialize, random_form, save_form

__version__ = "0.1.0"
