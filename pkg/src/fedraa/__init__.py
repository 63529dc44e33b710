"""Resource-adaptive asynchronous federated learning simulator."""

from .config import ExperimentConfig, load_config
from .engine import RunLog, SimSetup, StalenessMode, apply_update, run_async, run_sync, staleness_weight
from .model import (
    Fragment,
    FragmentSpec,
    ModelSpec,
    extract_fragment,
    forward_loss,
    grad_g,
    local_train,
    merge_fragment,
    partition_model,
)
from .scheduler import (
    ClientProfile,
    CostModel,
    SchedulerState,
    brute_force_offline_K,
    cost,
    feasible_set,
    gre_raa_assign,
    mp_assign,
    offline_sorted_assignment,
    random_assign,
)

__version__ = "0.1.0"

__all__ = [
    "ClientProfile", "CostModel", "ExperimentConfig", "Fragment", "FragmentSpec", "ModelSpec",
    "RunLog", "SchedulerState", "SimSetup", "StalenessMode", "apply_update", "brute_force_offline_K",
    "cost", "extract_fragment", "feasible_set", "forward_loss", "grad_g", "gre_raa_assign",
    "load_config", "local_train", "merge_fragment", "mp_assign", "offline_sorted_assignment",
    "partition_model", "random_assign", "run_async", "run_sync", "staleness_weight",
]
