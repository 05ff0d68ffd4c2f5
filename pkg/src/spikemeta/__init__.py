"""Probabilistic spiking-network engine with online meta-learning.

Local three-factor within-task learning for GLM spiking neurons, nested
inside a first-order meta-update over a stream of tasks, with baselines, a
synthetic task generator, and brute-force numerical verification tools.
"""

from .basis import BasisSet, build_raised_cosine_basis
from .datasets import (
    Example,
    SyntheticTaskFamily,
    Task,
    encode_label,
    load_spike_dataset,
    rate_encode,
    save_spike_dataset,
    split_train_test,
)
from .learning import LearnConfig, TraceState, learning_signal, local_gradient, update
from .metalearn import (
    MetaConfig,
    MetaDataBuffer,
    RunMetrics,
    TaskDataBuffer,
    classify,
    evaluate,
    evaluate_adaptation,
    joint_training_update,
    meta_update,
    run_task_stream,
    sample_meta_batch,
)
from .network import (
    ModelParams,
    NetworkSpec,
    NetworkState,
    conditional_log_likelihood,
    init_params,
    load_checkpoint,
    make_network,
    membrane_potential,
    save_checkpoint,
    spike_probability,
    step,
)

__version__ = "0.1.0"
