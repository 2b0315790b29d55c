"""Multi-source collaborative filtering by joint matrix factorization.

The package factorizes a sparse user-item rating matrix jointly with any
number of user-attribute and item-attribute source matrices that overlap it
through shared entities. Two interchangeable trainers minimize the same
objective: a centralized gradient-descent trainer and a deterministic
simulation of a master/slave protocol that exchanges only latent vectors
and partial gradients, with byte-accurate traffic accounting.
"""

from .central import (
    TerminationReason,
    TraceEntry,
    TrainTrace,
    train_centralized,
)
from .datafiles import Dataset, load_manifest, read_triples, write_dataset, write_triples
from .distributed import (
    GradientMessage,
    MessageKind,
    TrafficLedger,
    TransferReport,
    run_distributed,
    transfer_report,
)
from .entities import EntityId, ITEM_NAMESPACE, USER_NAMESPACE
from .errors import (
    DimensionMismatchError,
    DuplicateCoordinateError,
    EmptyInputError,
    JointrecError,
    ManifestError,
    MissingSlaveReplyError,
    NonFiniteValueError,
    RowCountMismatchError,
    UnknownEntityError,
    UnknownEntityInMessageError,
)
from .evaluation import (
    BUCKET_LABELS,
    BucketAxis,
    BucketReport,
    SplitSpec,
    SweepMode,
    baseline_item_mean,
    baseline_user_mean,
    bucketed_rmse,
    evaluate_model,
    rmse,
    source_sweep,
    split,
)
from .factors import FactorMatrix, Hyperparams, init_factors
from .objective import (
    GradientSet,
    LossBreakdown,
    ModelState,
    SourceFactors,
    grad,
    init_state,
    loss,
    oplus,
    predict,
    predict_pairs,
)
from .sparse import (
    Alignment,
    RatingDataset,
    SourceKind,
    SourceMatrix,
    SparseMatrix,
    align_source,
    build_sparse,
    source_from_triples,
)
from .synthetic import SourceSpec, SyntheticSpec, generate_dataset

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
