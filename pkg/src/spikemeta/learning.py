"""Online within-task learner with local three-factor updates.

A single streaming pass over the task examples: at every step the network is
run with visible neurons clamped to the targets and hidden neurons sampled;
per-parameter gradient contributions and a global learning signal are
accumulated; every `delta_s` steps both are folded into exponentially decaying
traces and applied. Visible-neuron parameters climb their own likelihood
gradient; hidden-neuron parameters are additionally gated by the global
learning-signal trace (three-factor rule).
"""

from dataclasses import dataclass, field

import numpy as np

from .network import (
    ModelParams,
    NetworkSpec,
    NetworkState,
    bernoulli_log_pmf_from_u,
    membrane_potentials,
    spike_probability,
    _filters,
)


@dataclass(frozen=True)
class LearnConfig:
    eta: float = 0.05          # learning rate
    kappa: float = 0.2         # trace decay in [0, 1)
    delta_s: int = 5           # steps between trace updates
    reg_lambda: float = 0.0    # L1 strength on filter weights
    reset_between_examples: bool = True

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if not 0.0 <= self.kappa < 1.0:
            raise ValueError("kappa must be in [0, 1)")
        if self.delta_s < 1:
            raise ValueError("delta_s must be >= 1")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")


@dataclass
class TraceState:
    """Accumulators (since the last boundary) and their decaying traces."""

    learning_signal_acc: float
    learning_signal_trace: float
    grad_acc: ModelParams
    grad_trace: ModelParams

    @classmethod
    def zeros(cls, template: ModelParams) -> "TraceState":
        return cls(0.0, 0.0, template.zeros_like(), template.zeros_like())


def learning_signal(visible_spikes: np.ndarray, visible_u: np.ndarray) -> float:
    """Global error signal: summed visible-neuron Bernoulli log-likelihood."""
    visible_spikes = np.asarray(visible_spikes, dtype=float)
    visible_u = np.asarray(visible_u, dtype=float)
    if visible_spikes.shape != visible_u.shape:
        raise ValueError("spike and potential vectors must have equal length")
    return float(bernoulli_log_pmf_from_u(visible_spikes, visible_u).sum())


def local_gradient(
    post_spike: float,
    u: float,
    pre_windows: list[np.ndarray],
    self_window: np.ndarray,
    synaptic_basis,
    feedback_basis,
):
    """Single-neuron, single-step gradient of its spike log-likelihood.

    Returns (w_alpha_grads, w_beta_grad, gamma_grad) where w_alpha_grads has
    one row per incoming synapse. Every component factors as the post-synaptic
    error (spike - sigmoid(u)) times a pre-synaptic term.
    """
    A = synaptic_basis.basis_matrix
    B = feedback_basis.basis_matrix
    err = float(post_spike) - spike_probability(u)
    alpha_grads = np.zeros((len(pre_windows), A.shape[1]))
    for k, w in enumerate(pre_windows):
        w = np.asarray(w, dtype=float)
        if w.shape != (A.shape[0],):
            raise ValueError("pre-synaptic window length must equal window_len")
        alpha_grads[k] = (w @ A) * err
    self_window = np.asarray(self_window, dtype=float)
    if self_window.shape != (B.shape[0],):
        raise ValueError("self-feedback window length must equal window_len")
    return alpha_grads, (self_window @ B) * err, err


def sequence_gradients(
    visible_seq, hidden_seq, exogenous_seq, params: ModelParams,
    spec: NetworkSpec,
) -> ModelParams:
    """Analytic gradient of the summed per-neuron spike log-likelihoods of a
    fixed spike record (visible and hidden alike), accumulated over all steps.

    Restricted to visible rows this is the gradient of
    conditional_log_likelihood; restricted to hidden rows, of
    hidden_log_likelihood.
    """
    comp = spec.compiled()
    visible_seq = np.asarray(visible_seq, dtype=float)
    hidden_seq = np.asarray(hidden_seq, dtype=float)
    exogenous_seq = np.asarray(exogenous_seq, dtype=float)
    T = visible_seq.shape[1]
    grads = params.zeros_like()
    state = NetworkState(spec)
    filt = _filters(params, comp)
    for t in range(T):
        u = membrane_potentials(state, params, spec, filt)
        spikes = np.concatenate([visible_seq[:, t], hidden_seq[:, t]])
        err = spikes - spike_probability(u)
        _accumulate_step_gradients(grads, comp, state.history, err)
        state.push(exogenous_seq[:, t], spikes)
    return grads


def _accumulate_step_gradients(grads: ModelParams, comp, history, err):
    """Add one step's per-parameter gradient contributions in place."""
    if len(comp.syn_src):
        pre = history[comp.syn_src] @ comp.A          # (num_syn, K_a)
        grads.w_alpha += pre * err[comp.syn_dest][:, None]
    grads.w_beta += (history[comp.n_inputs:] @ comp.B) * err[:, None]
    grads.gamma += err


def update(
    theta: ModelParams,
    dataset,
    spec: NetworkSpec,
    cfg: LearnConfig,
    rng: np.random.Generator,
    boundary_hook=None,
    trace_log: list | None = None,
) -> ModelParams:
    """One streaming pass over `dataset`, starting from initialization theta.

    Examples are concatenated into a single stream; spike histories are reset
    at example boundaries by default (cfg.reset_between_examples). The
    learning-signal trace persists across the whole stream. A final partial
    accumulation window still triggers one trace update at stream end.

    `boundary_hook(traces, tau)` is called at each boundary before the trace
    update and may mutate the TraceState (used for instrumentation).
    `trace_log`, if given, receives (tau, signal_trace, grad_trace_norm) rows.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    theta.validate_against(spec)
    comp = spec.compiled()
    params = theta.copy()
    filt = _filters(params, comp)
    traces = TraceState.zeros(theta)
    state = NetworkState(spec)

    total = sum(ex.horizon for ex in dataset)
    tau_global = 0
    for ex in dataset:
        x, y = np.asarray(ex.x, dtype=float), np.asarray(ex.y, dtype=float)
        if x.shape[0] != comp.n_inputs or y.shape[0] != comp.n_visible:
            raise ValueError("example channel counts do not match the network")
        if cfg.reset_between_examples:
            state.reset()
        for t in range(x.shape[1]):
            u = membrane_potentials(state, params, spec, filt)
            p = spike_probability(u)
            spikes = (rng.random(comp.n_neurons) < p).astype(float)
            spikes[:comp.n_visible] = y[:, t]
            traces.learning_signal_acc += learning_signal(
                y[:, t], u[:comp.n_visible]
            )
            # gradients use the pre-synaptic window ending at tau-1, i.e. the
            # history as it stands before this step's spikes are pushed
            _accumulate_step_gradients(
                traces.grad_acc, comp, state.history, spikes - p
            )
            state.push(x[:, t], spikes)
            tau_global += 1
            if tau_global % cfg.delta_s == 0 or tau_global == total:
                if boundary_hook is not None:
                    boundary_hook(traces, tau_global)
                _apply_boundary(params, traces, comp, cfg)
                filt = _filters(params, comp)
                if trace_log is not None:
                    trace_log.append((
                        tau_global,
                        traces.learning_signal_trace,
                        float(np.linalg.norm(traces.grad_trace.to_vector())),
                    ))
    return params


def _apply_boundary(params: ModelParams, traces: TraceState, comp, cfg):
    """Fold accumulators into traces, apply the parameter update, reset."""
    k = cfg.kappa
    traces.learning_signal_trace = (
        k * traces.learning_signal_trace + (1 - k) * traces.learning_signal_acc
    )
    gt, ga = traces.grad_trace, traces.grad_acc
    gt.w_alpha = k * gt.w_alpha + (1 - k) * ga.w_alpha
    gt.w_beta = k * gt.w_beta + (1 - k) * ga.w_beta
    gt.gamma = k * gt.gamma + (1 - k) * ga.gamma

    l = traces.learning_signal_trace
    gate_syn = np.where(comp.syn_dest_hidden, l, 1.0)
    gate_neur = np.where(comp.neuron_hidden, l, 1.0)
    params.w_alpha += cfg.eta * gate_syn[:, None] * gt.w_alpha
    params.w_beta += cfg.eta * gate_neur[:, None] * gt.w_beta
    params.gamma += cfg.eta * gate_neur * gt.gamma
    if cfg.reg_lambda > 0:
        params.w_alpha -= cfg.eta * cfg.reg_lambda * np.sign(params.w_alpha)
        params.w_beta -= cfg.eta * cfg.reg_lambda * np.sign(params.w_beta)

    traces.learning_signal_acc = 0.0
    traces.grad_acc = ga.zeros_like()
