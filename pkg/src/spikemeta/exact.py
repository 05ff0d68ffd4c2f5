"""Brute-force ground truth for tiny networks.

Exhaustively enumerates every hidden spike sequence to compute the exact
marginal log-likelihood of a visible sequence and the exact expectation of
the conditional log-likelihood under the hidden-spike distribution, plus
central finite differences for gradient checking. Intentionally exponential;
instances are capped so the enumeration stays small.
"""

from dataclasses import dataclass

import numpy as np

from .network import (
    ModelParams,
    NetworkSpec,
    bernoulli_log_pmf_from_u,
    init_params,
    make_network,
    spike_probability,
)

MAX_ENUM_BITS = 15


@dataclass
class TinyInstance:
    """A network small enough to marginalize hidden activity exhaustively."""

    spec: NetworkSpec
    params: ModelParams
    visible_seq: np.ndarray     # (n_visible, T)
    exogenous_seq: np.ndarray   # (n_inputs, T)

    def __post_init__(self):
        self.visible_seq = np.asarray(self.visible_seq, dtype=float)
        self.exogenous_seq = np.asarray(self.exogenous_seq, dtype=float)
        self.params.validate_against(self.spec)
        comp = self.spec.compiled()
        self.horizon = self.visible_seq.shape[1]
        if self.exogenous_seq.shape != (comp.n_inputs, self.horizon):
            raise ValueError("exogenous sequence shape mismatch")
        if self.visible_seq.shape[0] != comp.n_visible:
            raise ValueError("visible sequence channel mismatch")
        self.enum_bits = comp.n_hidden * self.horizon
        if self.enum_bits > MAX_ENUM_BITS:
            raise ValueError(
                f"instance needs 2^{self.enum_bits} sequences, "
                f"cap is 2^{MAX_ENUM_BITS}"
            )


def random_tiny_instance(
    rng: np.random.Generator,
    n_visible: int = 1,
    n_hidden: int = 2,
    n_inputs: int = 2,
    horizon: int = 4,
    window_len: int = 3,
    num_basis: int = 2,
    param_scale: float = 0.5,
) -> TinyInstance:
    spec = make_network(
        n_inputs=n_inputs, n_visible=n_visible, n_hidden=n_hidden,
        window_len=window_len, k_alpha=num_basis, preset="full-recurrent",
    )
    params = init_params(spec, rng, param_scale)
    v = (rng.random((n_visible, horizon)) < 0.5).astype(float)
    x = (rng.random((n_inputs, horizon)) < 0.5).astype(float)
    return TinyInstance(spec=spec, params=params, visible_seq=v, exogenous_seq=x)


def _all_hidden_sequences(n_hidden: int, horizon: int) -> np.ndarray:
    """All binary hidden records, shape (2^(n_hidden*T), n_hidden, T), in
    lexicographic order of the flattened bit pattern."""
    bits = n_hidden * horizon
    codes = np.arange(2**bits, dtype=np.int64)
    shifts = np.arange(bits - 1, -1, -1)
    flat = (codes[:, None] >> shifts[None, :]) & 1
    return flat.reshape(2**bits, n_hidden, horizon).astype(float)


def enumerate_log_probs(instance: TinyInstance):
    """For every hidden sequence (lexicographic order) return the pair of
    causally conditioned log-probabilities (log p(v||h), log p(h||v)).

    Vectorized across the whole enumeration: a batched replay of the network
    dynamics with one history tensor per candidate sequence.
    """
    comp = instance.spec.compiled()
    H = _all_hidden_sequences(comp.n_hidden, instance.horizon)
    n_seq = H.shape[0]
    w = comp.window_len
    alpha_f = instance.params.w_alpha @ comp.A.T
    beta_f = instance.params.w_beta @ comp.B.T
    dest_onehot = np.zeros((len(comp.syn_dest), comp.n_neurons))
    dest_onehot[np.arange(len(comp.syn_dest)), comp.syn_dest] = 1.0

    hist = np.zeros((n_seq, comp.n_sources, w))
    lp_v = np.zeros(n_seq)
    lp_h = np.zeros(n_seq)
    for t in range(instance.horizon):
        u = np.broadcast_to(
            instance.params.gamma, (n_seq, comp.n_neurons)
        ).copy()
        if len(comp.syn_src):
            contrib = (hist[:, comp.syn_src, :] * alpha_f).sum(axis=2)
            u += contrib @ dest_onehot
        u += (hist[:, comp.n_inputs:, :] * beta_f).sum(axis=2)
        v_t = instance.visible_seq[:, t]
        lp_v += bernoulli_log_pmf_from_u(v_t, u[:, :comp.n_visible]).sum(axis=1)
        lp_h += bernoulli_log_pmf_from_u(H[:, :, t], u[:, comp.n_visible:]).sum(axis=1)
        hist[:, :, 1:] = hist[:, :, :-1]
        hist[:, :comp.n_inputs, 0] = instance.exogenous_seq[:, t]
        hist[:, comp.n_inputs:comp.n_inputs + comp.n_visible, 0] = v_t
        hist[:, comp.n_inputs + comp.n_visible:, 0] = H[:, :, t]
    return lp_v, lp_h


def exact_log_marginal(instance: TinyInstance) -> float:
    """log sum over hidden sequences of the joint probability, accumulated
    with a running max for numerical stability."""
    lp_v, lp_h = enumerate_log_probs(instance)
    joint = lp_v + lp_h
    m = -np.inf
    acc = 0.0
    for x in joint:
        if x > m:
            acc = acc * np.exp(m - x) + 1.0 if np.isfinite(m) else 1.0
            m = x
        else:
            acc += np.exp(x - m)
    return float(m + np.log(acc))


def exact_elbo(instance: TinyInstance) -> float:
    """Exact expectation of the conditional log-likelihood of the visible
    spikes under the hidden-spike distribution (a lower bound on the
    marginal by Jensen's inequality)."""
    lp_v, lp_h = enumerate_log_probs(instance)
    return float(np.sum(np.exp(lp_h) * lp_v))


def finite_diff_grad(f, params: ModelParams, h: float = 1e-4) -> ModelParams:
    """Central finite differences of a scalar function of the parameters."""
    vec = params.to_vector()
    grad = np.empty_like(vec)
    for k in range(vec.size):
        bump = np.zeros_like(vec)
        bump[k] = h
        hi = f(params.from_vector(vec + bump))
        lo = f(params.from_vector(vec - bump))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"non-finite evaluation at coordinate {k}")
        grad[k] = (hi - lo) / (2.0 * h)
    return params.from_vector(grad)


def gradcheck(
    seed: int = 0,
    n_instances: int = 5,
    h: float = 1e-4,
    corrupt: bool = False,
    **instance_kw,
):
    """Compare analytic spike log-likelihood gradients against central
    finite differences on random tiny instances.

    Returns a dict with the max relative error per parameter group. The
    `corrupt` flag deliberately biases the analytic gradient (negative
    control for the checking machinery).
    """
    from .learning import sequence_gradients
    from .network import conditional_log_likelihood, hidden_log_likelihood

    rng = np.random.default_rng(seed)
    worst = {"w_alpha": 0.0, "w_beta": 0.0, "gamma": 0.0}
    for _ in range(n_instances):
        inst = random_tiny_instance(rng, **instance_kw)
        comp = inst.spec.compiled()
        hseq = (rng.random((comp.n_hidden, inst.horizon)) < 0.5).astype(float)

        def total_ll(p):
            return conditional_log_likelihood(
                inst.visible_seq, hseq, inst.exogenous_seq, p, inst.spec
            ) + hidden_log_likelihood(
                inst.visible_seq, hseq, inst.exogenous_seq, p, inst.spec
            )

        analytic = sequence_gradients(
            inst.visible_seq, hseq, inst.exogenous_seq, inst.params, inst.spec
        )
        if corrupt:
            analytic.gamma = analytic.gamma + 0.1
        numeric = finite_diff_grad(total_ll, inst.params, h)
        for name in worst:
            a = getattr(analytic, name)
            n = getattr(numeric, name)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3)
            worst[name] = max(worst[name], float(np.max(np.abs(a - n) / denom)))
    return worst
