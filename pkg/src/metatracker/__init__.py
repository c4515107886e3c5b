"""Meta-RL tracker for peer selection in live-video streaming overlays."""

from .agent import TrainConfig, actor_loss, adapt_task, critic_loss
from .env import StreamingEnvironment, run_episode, select_action
from .experiment import (
    VARIANTS,
    ExperimentConfig,
    VariantSpec,
    build_tasks,
    load_config,
    run_experiment,
    simulate_policy,
)
from .graph import (
    Interaction,
    SyntheticEventConfig,
    Task,
    TemporalInteractionNetwork,
    generate_synthetic_event,
    load_events,
    normalize_throughput,
    split_task,
)
from .meta import MetaConfig, SignatureBuffer, meta_train, signature_divergence
from .metrics import EvalReport, evaluate, mae, mse, rmse
from .nn import (
    GraphSignature,
    NetworkDims,
    ParameterSet,
    initialize,
    load_checkpoint,
    save_checkpoint,
)
from .replay import ReplayBuffer, ThroughputHistogram, Transition, kl_divergence

__version__ = "0.1.0"
