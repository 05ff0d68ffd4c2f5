"""Outer meta-learning loop, buffers, first-order meta-updates, baselines.

The runner consumes a stream of tasks. Within each task it streams batches
into a task-data buffer, re-learns task parameters from the current
initialization at every step, evaluates them, and (for the meta method)
nudges the initialization toward the adapted parameters of models trained on
data sampled from previously seen tasks -- the first-order (adapted
parameters minus initialization) meta-gradient. Baselines: joint training pools the
sampled data into one ordinary update; conventional training re-initializes
per task and never updates the initialization.
"""

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import Task
from .learning import LearnConfig, update
from .network import (
    ModelParams,
    NetworkSpec,
    NetworkState,
    init_params,
    spike_probability,
    step,
    bernoulli_log_pmf_from_u,
    membrane_potentials,
    _filters,
)

METHODS = ("meta", "joint", "conventional")


@dataclass(frozen=True)
class MetaConfig:
    mu: float = 0.02            # meta-learning rate
    n_tasks: int = 5            # tasks sampled per meta-update
    m_examples: int = 2         # examples sampled per task
    batch_size: int = 2         # within-task batch size B
    inner: LearnConfig = field(default_factory=LearnConfig)
    meta_cadence: int = 1       # meta-update every this many within-task steps
    eval_cadence: int = 1       # evaluate every this many within-task steps
    eval_repeats: int = 5       # free-running repetitions per classification
    init_scale: float = 0.1     # uniform init half-width for theta
    buffer_capacity: int | None = None

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        for name in ("n_tasks", "m_examples", "batch_size",
                     "meta_cadence", "eval_cadence", "eval_repeats"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


class TaskDataBuffer:
    """Growing within-task example store."""

    def __init__(self, task_id):
        self.task_id = task_id
        self.examples: list = []

    def add_batch(self, batch: list):
        self.examples.extend(batch)

    def __len__(self):
        return len(self.examples)


class MetaDataBuffer:
    """Cross-task store; a task's data is added once, after its stream ends.

    With a capacity set, the oldest task is evicted first.
    """

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1 when set")
        self.capacity = capacity
        self._store: dict = {}

    def add_task(self, task_id, examples: list):
        if task_id in self._store:
            raise ValueError(f"task {task_id!r} is already in the buffer")
        self._store[task_id] = list(examples)
        if self.capacity is not None and len(self._store) > self.capacity:
            oldest = next(iter(self._store))
            del self._store[oldest]

    @property
    def task_ids(self) -> list:
        return list(self._store)

    def examples_for(self, task_id) -> list:
        return self._store[task_id]

    def __len__(self):
        return len(self._store)


def sample_meta_batch(
    buffer: MetaDataBuffer, cfg: MetaConfig, rng: np.random.Generator
) -> list:
    """Draw n_tasks datasets of m_examples each from the buffer.

    Tasks are drawn uniformly, without replacement when the buffer holds at
    least n_tasks tasks; examples are drawn uniformly without replacement
    within each task.
    """
    ids = buffer.task_ids
    if not ids:
        raise ValueError("meta-data buffer is empty")
    with_repl = len(ids) < cfg.n_tasks
    chosen = rng.choice(len(ids), size=cfg.n_tasks, replace=with_repl)
    datasets = []
    for k in chosen:
        pool = buffer.examples_for(ids[k])
        if len(pool) < cfg.m_examples:
            raise ValueError(
                f"task {ids[k]!r} holds {len(pool)} examples, "
                f"need {cfg.m_examples}"
            )
        picks = rng.choice(len(pool), size=cfg.m_examples, replace=False)
        datasets.append([pool[j] for j in picks])
    return datasets


def meta_update(
    theta: ModelParams,
    datasets: list,
    spec: NetworkSpec,
    cfg: MetaConfig,
    rng: np.random.Generator,
) -> ModelParams:
    """First-order meta-step: adapt one model per dataset from theta, then
    move theta by mu times the summed (adapted - theta) displacements,
    accumulated in ascending dataset order. Moving toward the adapted
    parameters is the first-order meta-gradient step; the inner updates
    ascend the data log-likelihood, so the displacement already points in
    the improvement direction.

    Each inner run gets its own generator spawned from `rng` in order, so a
    caller holding an identically seeded generator can replay every inner run.
    """
    if not datasets:
        raise ValueError("need at least one dataset")
    children = rng.spawn(len(datasets))
    total = None
    for data, child in zip(datasets, children):
        phi = update(theta, data, spec, cfg.inner, child)
        delta = phi - theta
        total = delta if total is None else total + delta
    return theta + cfg.mu * total


def joint_training_update(
    theta: ModelParams,
    buffer: MetaDataBuffer,
    spec: NetworkSpec,
    cfg: MetaConfig,
    rng: np.random.Generator,
) -> ModelParams:
    """Baseline: pool the same sampled datasets into one stream and apply an
    ordinary within-task update to theta directly."""
    sample_rng, update_rng = rng.spawn(2)
    datasets = sample_meta_batch(buffer, cfg, sample_rng)
    pooled = [ex for data in datasets for ex in data]
    return update(theta, pooled, spec, cfg.inner, update_rng)


# ---------------------------------------------------------------------------
# inference and evaluation

def classify(
    params: ModelParams,
    spec: NetworkSpec,
    x: np.ndarray,
    rng: np.random.Generator,
    repeats: int = 5,
) -> int:
    """Free-run the network on input spikes and read out the class as the
    visible neuron with the highest total spike count, averaged over
    `repeats` runs. Ties break to the lowest index."""
    comp = spec.compiled()
    x = np.asarray(x, dtype=float)
    counts = np.zeros(comp.n_visible)
    filt = _filters(params, comp)
    state = NetworkState(spec)
    for _ in range(repeats):
        state.reset()
        for t in range(x.shape[1]):
            _, vis, _ = step(state, params, spec, x[:, t], None, rng, filt)
            counts += vis
    return int(np.argmax(counts))


def _example_logloss(params, spec, ex, rng, filt) -> float:
    """Per-step, per-channel negative log-likelihood of the target spikes
    with visible neurons teacher-forced and hidden neurons sampled."""
    comp = spec.compiled()
    state = NetworkState(spec)
    x = np.asarray(ex.x, dtype=float)
    y = np.asarray(ex.y, dtype=float)
    ll = 0.0
    for t in range(x.shape[1]):
        _, _, u = step(state, params, spec, x[:, t], y[:, t], rng, filt)
        ll += float(bernoulli_log_pmf_from_u(y[:, t], u[:comp.n_visible]).sum())
    return -ll / (x.shape[1] * comp.n_visible)


def evaluate(
    params: ModelParams,
    spec: NetworkSpec,
    test_examples: list,
    rng: np.random.Generator,
    repeats: int = 5,
) -> tuple[float, float]:
    """Returns (accuracy, mean logloss) over the test set."""
    comp = spec.compiled()
    filt = _filters(params, comp)
    correct = 0
    losses = []
    for ex in test_examples:
        pred = classify(params, spec, ex.x, rng, repeats)
        correct += int(pred == ex.label)
        losses.append(_example_logloss(params, spec, ex, rng, filt))
    return correct / len(test_examples), float(np.mean(losses))


# ---------------------------------------------------------------------------
# run metrics

@dataclass
class MetricRecord:
    t: int
    i: int
    examples_seen: int
    test_accuracy: float
    test_logloss: float
    wallclock_ms: float
    method: str


@dataclass
class RunMetrics:
    records: list = field(default_factory=list)

    CSV_COLUMNS = (
        "t", "i", "examples_seen", "test_accuracy", "test_logloss",
        "wallclock_ms", "method",
    )

    def append(self, rec: MetricRecord):
        self.records.append(rec)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.CSV_COLUMNS)
            for r in self.records:
                w.writerow([
                    r.t, r.i, r.examples_seen,
                    format(r.test_accuracy, ".17g"),
                    format(r.test_logloss, ".17g"),
                    format(r.wallclock_ms, ".3f"),
                    r.method,
                ])

    def rows_without_wallclock(self) -> list:
        return [
            (r.t, r.i, r.examples_seen, r.test_accuracy, r.test_logloss, r.method)
            for r in self.records
        ]


def _batches(examples: list, size: int):
    return [examples[k:k + size] for k in range(0, len(examples), size)]


def run_task_stream(
    task_stream: list,
    spec: NetworkSpec,
    cfg: MetaConfig,
    rng: np.random.Generator,
    method: str = "meta",
    eval_hook=None,
    theta0: ModelParams | None = None,
    warm_start_buffer: MetaDataBuffer | None = None,
    fold_into_buffer: bool = True,
    checkpoint_hook=None,
    reinit_hook=None,
):
    """Run the full nested loop over a stream of tasks.

    method:
      "meta"         -- first-order meta-updates from buffered past tasks;
      "joint"        -- pooled training on buffered past tasks instead;
      "conventional" -- no cross-task updates, fresh random initialization
                        per task.

    The generator is split into independent streams for initialization,
    per-step simulation, and cross-task updates, so methods that skip a
    stage consume identical randomness in the others.

    Returns (RunMetrics, final theta, meta buffer).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if not task_stream:
        raise ValueError("task stream is empty")
    init_rng, step_rng, cross_rng = rng.spawn(3)
    theta = theta0 if theta0 is not None else init_params(
        spec, init_rng, cfg.init_scale
    )
    buffer = warm_start_buffer if warm_start_buffer is not None \
        else MetaDataBuffer(cfg.buffer_capacity)
    if eval_hook is None:
        eval_hook = make_eval_hook(spec, cfg)
    metrics = RunMetrics()

    for t, task in enumerate(task_stream, start=1):
        if method == "conventional":
            reinit_rng = init_rng.spawn(1)[0]
            theta = reinit_hook(t, reinit_rng) if reinit_hook is not None \
                else init_params(spec, reinit_rng, cfg.init_scale)
        if not task.train:
            raise ValueError(f"task {task.task_id!r} has no training data")
        task_buf = TaskDataBuffer(task.task_id)
        for i, batch in enumerate(_batches(task.train, cfg.batch_size), start=1):
            started = time.perf_counter()
            task_buf.add_batch(batch)
            upd_rng, eval_rng = step_rng.spawn(2)
            phi = update(theta, task_buf.examples, spec, cfg.inner, upd_rng)
            do_cross = len(buffer) > 0 and i % cfg.meta_cadence == 0
            if method == "meta" and do_cross and cfg.mu > 0:
                sample_rng, mu_rng = cross_rng.spawn(2)
                datasets = sample_meta_batch(buffer, cfg, sample_rng)
                theta = meta_update(theta, datasets, spec, cfg, mu_rng)
            elif method == "joint" and do_cross:
                theta = joint_training_update(
                    theta, buffer, spec, cfg, cross_rng.spawn(1)[0]
                )
            if i % cfg.eval_cadence == 0:
                acc, logloss = eval_hook(phi, task, eval_rng)
                metrics.append(MetricRecord(
                    t=t, i=i, examples_seen=len(task_buf),
                    test_accuracy=acc, test_logloss=logloss,
                    wallclock_ms=(time.perf_counter() - started) * 1e3,
                    method=method,
                ))
        if fold_into_buffer:
            buffer.add_task(task.task_id, task_buf.examples)
        if checkpoint_hook is not None:
            checkpoint_hook(t, theta)
    return metrics, theta, buffer


def make_eval_hook(spec: NetworkSpec, cfg: MetaConfig):
    def hook(params, task: Task, rng):
        return evaluate(params, spec, task.test, rng, cfg.eval_repeats)
    return hook


def evaluate_adaptation(
    theta: ModelParams | None,
    tasks: list,
    spec: NetworkSpec,
    cfg: MetaConfig,
    rng: np.random.Generator,
    method: str = "meta",
    eval_hook=None,
) -> RunMetrics:
    """Frozen-initialization evaluation: adapt within each task from `theta`
    (or a fresh random init per task for the conventional method) with all
    cross-task updates disabled, and record accuracy at every step."""
    frozen_cfg = replace(cfg, mu=0.0)
    run_method = "conventional" if method == "conventional" else "meta"
    metrics, _, _ = run_task_stream(
        tasks, spec, frozen_cfg, rng,
        method=run_method,
        eval_hook=eval_hook,
        theta0=None if method == "conventional" else theta,
        fold_into_buffer=False,
    )
    for rec in metrics.records:
        rec.method = method
    return metrics
