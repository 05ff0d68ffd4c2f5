"""Probabilistic GLM spiking network: topology, dynamics, and likelihood.

Neurons emit binary spikes at discrete processing steps. Each neuron's
membrane potential is a linear filter of the last `window_len` spikes of its
pre-synaptic sources plus a self-feedback filter and a bias; the spike is
Bernoulli with probability sigmoid(potential). Visible neurons can be clamped
to data (training) or sampled freely (inference).
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet, build_raised_cosine_basis


def spike_probability(u):
    """Numerically safe sigmoid, open interval (0, 1)."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    # keep the result in the open interval even when the float saturates
    np.clip(out, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg, out=out)
    return out if out.ndim else float(out)


def bernoulli_log_pmf(spike, p):
    """log( (1-s)(1-p) + s p ), elementwise."""
    spike = np.asarray(spike, dtype=float)
    p = np.asarray(p, dtype=float)
    return np.log((1.0 - spike) * (1.0 - p) + spike * p)


def bernoulli_log_pmf_from_u(spike, u):
    """log pmf of a spike under probability sigmoid(u), computed directly
    from the potential so it stays finite even when the sigmoid saturates:
    log pmf = -log(1 + exp((1-2s) u))."""
    spike = np.asarray(spike, dtype=float)
    u = np.asarray(u, dtype=float)
    return -np.logaddexp(0.0, (1.0 - 2.0 * spike) * u)


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable network topology.

    Neuron and input ids share one namespace and must be unique. Synapses are
    directed (source, dest) pairs where source may be a neuron or an input
    channel and dest must be a neuron. Every neuron additionally has an
    implicit self-feedback filter (not listed in `synapses`).
    """

    visible: tuple
    hidden: tuple
    inputs: tuple
    synapses: tuple
    synaptic_basis: BasisSet
    feedback_basis: BasisSet

    def __post_init__(self):
        vis, hid, inp = set(self.visible), set(self.hidden), set(self.inputs)
        if vis & hid or (vis | hid) & inp:
            raise ValueError("visible, hidden and input ids must be disjoint")
        if len(vis) != len(self.visible) or len(hid) != len(self.hidden) \
                or len(inp) != len(self.inputs):
            raise ValueError("duplicate ids within a group")
        neurons = vis | hid
        seen = set()
        for src, dst in self.synapses:
            if dst not in neurons:
                raise ValueError(f"synapse destination {dst!r} is not a neuron")
            if src not in neurons and src not in inp:
                raise ValueError(f"unknown synapse source {src!r}")
            if (src, dst) in seen:
                raise ValueError(f"duplicate synapse {(src, dst)!r}")
            seen.add((src, dst))
        if self.synaptic_basis.window_len != self.feedback_basis.window_len:
            raise ValueError("synaptic and feedback bases must share window_len")

    # -- derived views ----------------------------------------------------
    @property
    def neurons(self) -> tuple:
        return self.visible + self.hidden

    @property
    def window_len(self) -> int:
        return self.synaptic_basis.window_len

    def compiled(self) -> "_CompiledSpec":
        comp = getattr(self, "_compiled_cache", None)
        if comp is None:
            comp = _CompiledSpec(self)
            object.__setattr__(self, "_compiled_cache", comp)
        return comp

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "visible": list(self.visible),
            "hidden": list(self.hidden),
            "inputs": list(self.inputs),
            "synapses": [list(s) for s in self.synapses],
            "synaptic_basis": self.synaptic_basis.to_dict(),
            "feedback_basis": self.feedback_basis.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            visible=tuple(d["visible"]),
            hidden=tuple(d["hidden"]),
            inputs=tuple(d["inputs"]),
            synapses=tuple(tuple(s) for s in d["synapses"]),
            synaptic_basis=BasisSet.from_dict(d["synaptic_basis"]),
            feedback_basis=BasisSet.from_dict(d["feedback_basis"]),
        )

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class _CompiledSpec:
    """Index arrays for vectorized simulation.

    Source rows in the history matrix: inputs first (spec order), then
    neurons (visible then hidden, spec order).
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.n_inputs = len(spec.inputs)
        self.n_neurons = len(spec.neurons)
        self.n_visible = len(spec.visible)
        self.n_hidden = len(spec.hidden)
        self.n_sources = self.n_inputs + self.n_neurons
        self.window_len = spec.window_len

        src_index = {sid: k for k, sid in enumerate(spec.inputs)}
        src_index.update(
            {nid: self.n_inputs + k for k, nid in enumerate(spec.neurons)}
        )
        self.neuron_index = {nid: k for k, nid in enumerate(spec.neurons)}
        self.syn_src = np.array(
            [src_index[s] for s, _ in spec.synapses], dtype=np.intp
        )
        self.syn_dest = np.array(
            [self.neuron_index[d] for _, d in spec.synapses], dtype=np.intp
        )
        self.syn_dest_hidden = self.syn_dest >= self.n_visible
        self.neuron_hidden = np.zeros(self.n_neurons, dtype=bool)
        self.neuron_hidden[self.n_visible:] = True
        self.A = spec.synaptic_basis.basis_matrix
        self.B = spec.feedback_basis.basis_matrix


@dataclass
class ModelParams:
    """Trainable parameters, row-aligned with a NetworkSpec.

    w_alpha[k] are the synaptic-basis weights of spec.synapses[k];
    w_beta[i] / gamma[i] belong to spec.neurons[i].
    """

    w_alpha: np.ndarray  # (num_synapses, K_a)
    w_beta: np.ndarray   # (num_neurons, K_b)
    gamma: np.ndarray    # (num_neurons,)

    def __post_init__(self):
        self.w_alpha = np.asarray(self.w_alpha, dtype=float)
        self.w_beta = np.asarray(self.w_beta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        for a in (self.w_alpha, self.w_beta, self.gamma):
            if not np.all(np.isfinite(a)):
                raise ValueError("parameters must be finite")

    def validate_against(self, spec: NetworkSpec):
        n_syn, n_neur = len(spec.synapses), len(spec.neurons)
        ka = spec.synaptic_basis.num_basis
        kb = spec.feedback_basis.num_basis
        if self.w_alpha.shape != (n_syn, ka):
            raise ValueError(
                f"w_alpha shape {self.w_alpha.shape} != ({n_syn}, {ka})"
            )
        if self.w_beta.shape != (n_neur, kb):
            raise ValueError(
                f"w_beta shape {self.w_beta.shape} != ({n_neur}, {kb})"
            )
        if self.gamma.shape != (n_neur,):
            raise ValueError(f"gamma shape {self.gamma.shape} != ({n_neur},)")

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.w_alpha.copy(), self.w_beta.copy(), self.gamma.copy()
        )

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            np.zeros_like(self.w_alpha),
            np.zeros_like(self.w_beta),
            np.zeros_like(self.gamma),
        )

    # elementwise arithmetic, used by the meta-update and the oracles
    def __add__(self, other):
        return ModelParams(
            self.w_alpha + other.w_alpha,
            self.w_beta + other.w_beta,
            self.gamma + other.gamma,
        )

    def __sub__(self, other):
        return ModelParams(
            self.w_alpha - other.w_alpha,
            self.w_beta - other.w_beta,
            self.gamma - other.gamma,
        )

    def __mul__(self, scalar: float):
        return ModelParams(
            self.w_alpha * scalar, self.w_beta * scalar, self.gamma * scalar
        )

    __rmul__ = __mul__

    def allclose(self, other, **kw) -> bool:
        return (
            np.allclose(self.w_alpha, other.w_alpha, **kw)
            and np.allclose(self.w_beta, other.w_beta, **kw)
            and np.allclose(self.gamma, other.gamma, **kw)
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.w_alpha.ravel(), self.w_beta.ravel(), self.gamma]
        )

    def from_vector(self, vec: np.ndarray) -> "ModelParams":
        """New ModelParams with this one's shapes, values from `vec`."""
        na, nb = self.w_alpha.size, self.w_beta.size
        if vec.shape != (na + nb + self.gamma.size,):
            raise ValueError("vector length mismatch")
        return ModelParams(
            vec[:na].reshape(self.w_alpha.shape).copy(),
            vec[na:na + nb].reshape(self.w_beta.shape).copy(),
            vec[na + nb:].copy(),
        )

    def max_abs(self) -> float:
        return max(
            float(np.max(np.abs(self.w_alpha), initial=0.0)),
            float(np.max(np.abs(self.w_beta), initial=0.0)),
            float(np.max(np.abs(self.gamma), initial=0.0)),
        )


def init_params(
    spec: NetworkSpec, rng: np.random.Generator, scale: float = 0.1
) -> ModelParams:
    """I.i.d. uniform initialization on [-scale, +scale]."""
    ka = spec.synaptic_basis.num_basis
    kb = spec.feedback_basis.num_basis
    return ModelParams(
        rng.uniform(-scale, scale, (len(spec.synapses), ka)),
        rng.uniform(-scale, scale, (len(spec.neurons), kb)),
        rng.uniform(-scale, scale, len(spec.neurons)),
    )


class NetworkState:
    """Spike history over the filter window plus the current step counter.

    history has shape (n_inputs + n_neurons, window_len); column 0 holds the
    most recent spikes (time tau-1), column w-1 the oldest (tau - window_len).
    """

    def __init__(self, spec: NetworkSpec):
        comp = spec.compiled()
        self.spec = spec
        self.history = np.zeros((comp.n_sources, comp.window_len))
        self.tau = 0

    def reset(self):
        self.history[:] = 0.0
        self.tau = 0

    def push(self, input_spikes: np.ndarray, neuron_spikes: np.ndarray):
        comp = self.spec.compiled()
        self.history[:, 1:] = self.history[:, :-1]
        self.history[:comp.n_inputs, 0] = input_spikes
        self.history[comp.n_inputs:, 0] = neuron_spikes
        self.tau += 1


def _filters(params: ModelParams, comp: _CompiledSpec):
    """Materialize per-synapse and per-neuron filters over the window."""
    return params.w_alpha @ comp.A.T, params.w_beta @ comp.B.T


def membrane_potentials(
    state: NetworkState, params: ModelParams, spec: NetworkSpec,
    _filters_pair=None,
) -> np.ndarray:
    """Potentials of all neurons given the current spike history."""
    comp = spec.compiled()
    alpha_f, beta_f = (
        _filters_pair if _filters_pair is not None else _filters(params, comp)
    )
    u = params.gamma.copy()
    if len(comp.syn_src):
        contrib = (alpha_f * state.history[comp.syn_src]).sum(axis=1)
        u += np.bincount(
            comp.syn_dest, weights=contrib, minlength=comp.n_neurons
        )
    u += (beta_f * state.history[comp.n_inputs:]).sum(axis=1)
    return u


def membrane_potential(
    state: NetworkState, params: ModelParams, spec: NetworkSpec, neuron
) -> float:
    comp = spec.compiled()
    if neuron not in comp.neuron_index:
        raise KeyError(f"unknown neuron id {neuron!r}")
    return float(membrane_potentials(state, params, spec)[comp.neuron_index[neuron]])


def step(
    state: NetworkState,
    params: ModelParams,
    spec: NetworkSpec,
    exogenous_spikes: np.ndarray,
    clamp_visible: np.ndarray | None,
    rng: np.random.Generator,
    _filters_pair=None,
):
    """Advance the network by one step.

    Computes all potentials from the current history, samples hidden spikes
    Bernoulli(sigmoid(u)), sets visible spikes to `clamp_visible` when given
    (training) or samples them too (free-running), then pushes the new spikes
    plus the exogenous inputs into the history.

    Returns (hidden_spikes, visible_spikes, u) with u as used for sampling.
    """
    comp = spec.compiled()
    exogenous_spikes = np.asarray(exogenous_spikes, dtype=float)
    if exogenous_spikes.shape != (comp.n_inputs,):
        raise ValueError(
            f"expected {comp.n_inputs} exogenous channels, "
            f"got shape {exogenous_spikes.shape}"
        )
    u = membrane_potentials(state, params, spec, _filters_pair)
    p = spike_probability(u)
    draws = rng.random(comp.n_neurons)
    spikes = (draws < p).astype(float)
    if clamp_visible is not None:
        clamp_visible = np.asarray(clamp_visible, dtype=float)
        if clamp_visible.shape != (comp.n_visible,):
            raise ValueError(
                f"expected {comp.n_visible} visible clamps, "
                f"got shape {clamp_visible.shape}"
            )
        spikes[:comp.n_visible] = clamp_visible
    state.push(exogenous_spikes, spikes)
    return spikes[comp.n_visible:].copy(), spikes[:comp.n_visible].copy(), u


def replay_potentials(
    visible_seq: np.ndarray,
    hidden_seq: np.ndarray,
    exogenous_seq: np.ndarray,
    params: ModelParams,
    spec: NetworkSpec,
) -> np.ndarray:
    """Deterministic replay: potentials of every neuron at every step.

    Sequences are (channels, T) binary arrays; u[:, t] depends only on spikes
    strictly before t (all-zero padding before t=0). Returns (n_neurons, T).
    """
    comp = spec.compiled()
    visible_seq = np.asarray(visible_seq, dtype=float)
    hidden_seq = np.asarray(hidden_seq, dtype=float)
    exogenous_seq = np.asarray(exogenous_seq, dtype=float)
    T = visible_seq.shape[1]
    if hidden_seq.shape != (comp.n_hidden, T) or exogenous_seq.shape[1] != T:
        raise ValueError("sequence lengths/shapes are inconsistent")
    if visible_seq.shape[0] != comp.n_visible \
            or exogenous_seq.shape[0] != comp.n_inputs:
        raise ValueError("sequence channel counts do not match the network")

    state = NetworkState(spec)
    filt = _filters(params, comp)
    out = np.empty((comp.n_neurons, T))
    for t in range(T):
        out[:, t] = membrane_potentials(state, params, spec, filt)
        state.push(
            exogenous_seq[:, t],
            np.concatenate([visible_seq[:, t], hidden_seq[:, t]]),
        )
    return out


def conditional_log_likelihood(
    visible_seq: np.ndarray,
    hidden_seq: np.ndarray,
    exogenous_seq: np.ndarray,
    params: ModelParams,
    spec: NetworkSpec,
) -> float:
    """log-probability of the visible sequence causally conditioned on the
    hidden sequence: sum over steps and visible neurons of the Bernoulli
    log-pmf under the realized potentials."""
    comp = spec.compiled()
    u = replay_potentials(visible_seq, hidden_seq, exogenous_seq, params, spec)
    return float(bernoulli_log_pmf_from_u(visible_seq, u[:comp.n_visible]).sum())


def hidden_log_likelihood(
    visible_seq, hidden_seq, exogenous_seq, params, spec
) -> float:
    """Causally conditioned log-probability of the hidden sequence."""
    comp = spec.compiled()
    u = replay_potentials(visible_seq, hidden_seq, exogenous_seq, params, spec)
    return float(bernoulli_log_pmf_from_u(hidden_seq, u[comp.n_visible:]).sum())


# ---------------------------------------------------------------------------
# topology presets

def make_network(
    n_inputs: int,
    n_visible: int = 2,
    n_hidden: int = 4,
    window_len: int = 10,
    k_alpha: int = 8,
    k_beta: int | None = None,
    preset: str = "full-recurrent",
) -> NetworkSpec:
    """Build a NetworkSpec from a named topology preset.

    `full-recurrent`: all inputs feed every neuron; hidden neurons are
    laterally connected to each other and project to the visible neurons;
    visible neurons feed back to every hidden neuron.
    `feedforward`: inputs to every neuron, hidden to visible, nothing else.
    """
    if k_beta is None:
        k_beta = k_alpha
    inputs = tuple(f"in{k}" for k in range(n_inputs))
    visible = tuple(f"v{k}" for k in range(n_visible))
    hidden = tuple(f"h{k}" for k in range(n_hidden))
    syn = [(i, n) for i in inputs for n in visible + hidden]
    syn += [(h, v) for h in hidden for v in visible]
    if preset == "full-recurrent":
        syn += [(a, b) for a in hidden for b in hidden if a != b]
        syn += [(v, h) for v in visible for h in hidden]
    elif preset != "feedforward":
        raise ValueError(f"unknown topology preset {preset!r}")
    return NetworkSpec(
        visible=visible,
        hidden=hidden,
        inputs=inputs,
        synapses=tuple(syn),
        synaptic_basis=build_raised_cosine_basis(k_alpha, window_len),
        feedback_basis=build_raised_cosine_basis(k_beta, window_len),
    )


# ---------------------------------------------------------------------------
# checkpoint format

_CKPT_MAGIC = "SPIKEMETA-CHECKPOINT"
_CKPT_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_checkpoint(path, spec: NetworkSpec, params: ModelParams):
    """Versioned text checkpoint: header with spec hash and embedded spec,
    then flat parameter arrays in sorted-id order, 17 significant digits."""
    params.validate_against(spec)
    syn_order = sorted(range(len(spec.synapses)), key=lambda k: spec.synapses[k])
    neur_order = sorted(range(len(spec.neurons)), key=lambda k: spec.neurons[k])
    lines = [
        f"{_CKPT_MAGIC} v{_CKPT_VERSION}",
        f"spec_hash {spec.content_hash()}",
        "spec " + json.dumps(spec.to_dict(), sort_keys=True),
    ]
    for k in syn_order:
        src, dst = spec.synapses[k]
        vals = " ".join(_fmt(v) for v in params.w_alpha[k])
        lines.append(f"w_alpha {src} {dst} {vals}")
    for k in neur_order:
        vals = " ".join(_fmt(v) for v in params.w_beta[k])
        lines.append(f"w_beta {spec.neurons[k]} {vals}")
    for k in neur_order:
        lines.append(f"gamma {spec.neurons[k]} {_fmt(params.gamma[k])}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    """Inverse of save_checkpoint. Returns (spec, params)."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != f"{_CKPT_MAGIC} v{_CKPT_VERSION}":
        raise CheckpointError("not a recognized checkpoint file")
    if len(lines) < 3 or not lines[1].startswith("spec_hash ") \
            or not lines[2].startswith("spec "):
        raise CheckpointError("checkpoint header is incomplete")
    spec = NetworkSpec.from_dict(json.loads(lines[2][len("spec "):]))
    if spec.content_hash() != lines[1].split(" ", 1)[1]:
        raise CheckpointError("spec hash mismatch")

    syn_index = {tuple(s): k for k, s in enumerate(spec.synapses)}
    neur_index = {n: k for k, n in enumerate(spec.neurons)}
    ka = spec.synaptic_basis.num_basis
    kb = spec.feedback_basis.num_basis
    w_alpha = np.full((len(spec.synapses), ka), np.nan)
    w_beta = np.full((len(spec.neurons), kb), np.nan)
    gamma = np.full(len(spec.neurons), np.nan)
    for ln in lines[3:]:
        parts = ln.split()
        if not parts:
            continue
        kind = parts[0]
        if kind == "w_alpha":
            key = (parts[1], parts[2])
            if key not in syn_index:
                raise CheckpointError(f"unknown synapse {key!r}")
            w_alpha[syn_index[key]] = [float(v) for v in parts[3:]]
        elif kind == "w_beta":
            w_beta[neur_index[parts[1]]] = [float(v) for v in parts[2:]]
        elif kind == "gamma":
            gamma[neur_index[parts[1]]] = float(parts[2])
        else:
            raise CheckpointError(f"unknown record kind {kind!r}")
    if np.any(np.isnan(w_alpha)) or np.any(np.isnan(w_beta)) or np.any(np.isnan(gamma)):
        raise CheckpointError("checkpoint is missing parameter records")
    params = ModelParams(w_alpha, w_beta, gamma)
    params.validate_against(spec)
    return spec, params
