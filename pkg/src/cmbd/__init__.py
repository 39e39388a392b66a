"""Compressive multichannel blind deconvolution.

Generate sparse-filter / finite-support-source channel ensembles, acquire
compressive Fourier (or z-domain) measurements directly or through the
sum-of-sincs kernel, recover filters and source with cross-relation solvers,
and run seeded Monte Carlo phase-transition experiments.
"""

from .errors import (
    AmbiguityError,
    BudgetExceededError,
    ConditioningError,
    DomainError,
    PreconditionError,
)
from .signals import (
    AlignmentResult,
    ChannelEnsemble,
    ComplexSequence,
    CoprimenessReport,
    ExplicitSamples,
    FourierGaussianMixture,
    LinearComplexitySource,
    SourceRealization,
    SparseFilterSpec,
    align_up_to_shift_scale,
    circular_convolve,
    coprimeness_check,
    delta,
    dtft_at,
    linear_convolve,
    random_dense_filter,
    random_sparse_filter,
    realize_source,
    z_eval,
)
from .sampling import (
    FrequencyGrid,
    MeasurementSet,
    SosKernel,
    SparkCertificate,
    VandermondeOperator,
    ZGrid,
    acquire_via_kernel,
    certify_full_spark,
    consecutive_universal_grid,
    measure_fourier,
    read_measurements,
    sos_impulse,
    write_measurements,
    z_grid,
)
from .recovery import (
    CrossRelationSystem,
    ExhaustiveSearchResult,
    OmpResult,
    RecoveryResult,
    RelativeAmbiguity,
    SupportSolution,
    bdc,
    build_cross_relation,
    exhaustive_search,
    nb_omp,
    nonsparse_eigen,
    omp,
    pairwise_source_recovery,
    refine_on_support,
    relative_ambiguity_from_overlap,
    result_from_json,
    result_to_json,
    tpi,
)

__version__ = "0.1.0"
