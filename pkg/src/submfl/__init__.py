"""Federated learning with a cascade of pruned submodels for heterogeneous devices."""

from .config import ExperimentConfig, load_config
from .data import Dataset, holdout_split, load_idx, partition_equal, synthetic_blobs
from .federation import (
    DevicePopulation,
    drop_devices,
    eligible_devices,
    fedavg,
    local_train,
    sample_available,
    sample_population,
    train_model_on_devices,
)
from .nn import Hyperparams, NetworkSpec, ParamSet, adam_step, evaluate, forward, init_network, loss_and_grads
from .orchestrator import compare_reports, prepare, run_sfl_baseline, run_submfl
from .pruning import Mask, PruneMode, apply_mask, generate_submodels, global_sparsity, threshold_mask

__version__ = "0.1.0"
