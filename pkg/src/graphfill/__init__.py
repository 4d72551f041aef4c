"""Graph feature imputation toolkit: dual-path adversarial imputer, baselines, eval."""

from .baselines import KnnConfig, knn_impute, mean_impute
from .data import (
    DatasetSplit,
    Graph,
    NormStats,
    apply_mask,
    load_single_graph,
    load_tudataset,
    make_synthetic_dataset,
    normalize_features,
    sample_mask,
    split_dataset,
)
from .discriminator import CriticConfig, SubgraphCritic, critic_value
from .evaluation import SweepReport, TrialResult, downstream_accuracy, emit_report, rmse, run_sweep
from .generator import (
    DualPathGenerator,
    GeneratorConfig,
    GraphPathConfig,
    MlpPathConfig,
    compose_imputation,
)
from .training import (
    LossConfig,
    TTURConfig,
    TrainingDiverged,
    TrainState,
    critic_loss,
    generator_loss,
    gradient_penalty,
    impute,
    load_checkpoint,
    reconstruction_loss,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
