"""Causal topological order extraction via Schur-complement elimination on
score-information matrices, with data generators, pluggable Hessian
providers, order-based pruning, and a metrics/benchmark harness."""

from .dag import (
    TopoOrder,
    WeightedDag,
    chain_graph,
    collider_graph,
    generate_er,
    generate_sf,
    is_valid_topo,
)
from .estimator import ScoreSchurSort, check_data
from .exceptions import (
    BuildError,
    CapabilityError,
    CriterionError,
    EliminationError,
    GenerationError,
    InputError,
    ParameterError,
    SchurSortError,
    SolverError,
    TrainingError,
    UndefinedMetricError,
    UnsupportedMechanismError,
)
from .hessian import (
    HessianProvider,
    LinearEmpiricalProvider,
    LinearPopulationProvider,
    OracleProvider,
    linear_empirical_precision,
    linear_population_precision,
    offdiag_block_samples,
    oracle_hessian,
)
from .mechanisms import (
    MechanismSpec,
    SampleMatrix,
    mech_grad,
    mech_hess_diag,
    sample,
)
from .metrics import (
    MetricsReport,
    edge_violations,
    expected_kendall,
    kendall_mc,
    shd,
    tpr,
)
from .prune import PruneConfig, prune
from .scorenet import (
    LinearScoreModel,
    ScoreNet,
    ScoreNetConfig,
    ScoreNetProvider,
    score_net_hessian_stream,
    train_score_net,
)
from .sjim import SjimState, build_sjim, diag_energy, schur_eliminate
from .sort import (
    SortConfig,
    SortTrace,
    block_ssts,
    covariance_patch,
    exact_samplewise_ssts,
    leaf_criterion_cv2,
    run_sort,
)

__version__ = "0.1.0"
