"""Orthogonal tensor decomposition by the robust tensor power method.

Dense symmetric tensors, exact and count-sketch contraction backends, the
power method with deflation, recovery checks and benchmark tooling.
"""
from .errors import (
    BudgetExceededError,
    DegenerateUpdateError,
    DimensionMismatchError,
    ExtractionError,
    HypothesisError,
    NonUnitQueryWarning,
    RankMismatchError,
)
from .sketch import (
    BackendConfig,
    ExactBackend,
    SketchBackend,
    SketchState,
    band_violation_test,
    make_backend,
)
from .tensor import (
    DenseTensor,
    NoiseSpec,
    Spectrum,
    contract_all_but_one,
    contract_all_but_two,
    contract_full,
    frobenius_norm,
    gaussian_noise_tensor,
    outer_power,
    random_orthonormal_basis,
    random_spectrum,
    spectral_norm_estimate,
    synth_orthogonal,
    tensor_axpy,
)
from .tpm import (
    Decomposition,
    PowerMethodConfig,
    RecoveryReport,
    decompose,
    deflation_diagnostics,
    extract_top,
    verify_epsilon_close,
)

__version__ = "0.1.0"
