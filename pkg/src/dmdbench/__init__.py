"""Desk-scale benchmark of spectral recovery for noisily observed latent
linear systems: system construction, simulation, four spectral estimators,
and a registration/density/KL evaluation pipeline."""

from .algorithms import (
    DmdModel,
    EmptyData,
    IllConditionedBlock,
    RankDeficient,
    RankExceedsData,
    SingularBackwardOperator,
    SnapshotPairs,
    SquareRootBranchFailure,
    exact_dmd,
    fb_dmd,
    load_model,
    make_pairs,
    model_from_dict,
    model_to_dict,
    opt_dmd,
    reconstruct,
    save_model,
    tls_dmd,
)
from .evaluation import (
    BinStats,
    CellResult,
    DensityGrid,
    GeometryMismatch,
    RegisteredTrial,
    TrialOutcome,
    accumulate_density,
    compute_bin_stats,
    kl_divergence,
    read_density_csv,
    register,
    run_until_converged,
    write_density_csv,
)
from .observables import (
    DimensionMismatch,
    MonomialBasis,
    ObservableMap,
    build_basis,
    coupled_quadratic_observable,
    lift,
    linear_observable,
    monomial_observable,
    multi_indices,
    observe,
)
from .systems import (
    LinearSystem,
    NoiseSpec,
    SingularParameterization,
    SystemSpec,
    TrajectorySet,
    build_system,
    read_trajectory_csv,
    simulate,
    write_trajectory_csv,
)

__version__ = "0.1.0"
