"""fedsim: a deterministic federated-averaging simulator.

Synchronous rounds of local mini-batch SGD on synthetic non-i.i.d. user
partitions, aggregated on a parameter server with plain weighted averaging
or Adam-style per-coordinate updates, evaluated by recall at a
false-alarms-per-hour budget, with communication-cost accounting.
"""

from .client import FULL_BATCH, ClientUpdate, LocalTrainingConfig, local_step_count, train_local
from .data import (
    POSITIVE_LABEL,
    ClientPartition,
    Federation,
    FederationSpec,
    load_federation,
    partition_stats,
    save_federation,
    split_users,
    synthesize_federation,
)
from .errors import ConfigError, EvaluationError, FederationFormatError
from .evaluation import (
    EvalTargets,
    OperatingPoint,
    ScoredExample,
    early_stop_check,
    federated_eval,
    operating_point,
    pooled_eval,
    score_examples,
)
from .experiment import (
    BaselineMode,
    EvalMode,
    ExperimentConfig,
    ExperimentResult,
    FederationSource,
    MetricsRecord,
    config_from_dict,
    load_config,
    run_baseline,
    run_experiment,
    sweep,
)
from .model import (
    LabeledExample,
    ModelSpec,
    finite_difference_check,
    forward,
    gradient,
    loss,
    xavier_init,
)
from .seeding import derive_seed
from .server import (
    AveragingKind,
    AveragingStrategy,
    RoundConfig,
    RoundRecord,
    ServerState,
    apply_adam,
    apply_plain,
    pseudo_gradient,
    run_round,
    select_clients,
    upload_cost_bytes,
)

__version__ = "0.1.0"
