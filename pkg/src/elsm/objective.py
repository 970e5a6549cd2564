"""Log-likelihoods, closed-form entropies and the evidence lower bound.

The scalar helpers (``log_gaussian_density``, ``edge_log_likelihood``,
``transition_log_density``) work on plain arrays and are what the tests use
as reference evaluations.  The batched functions operate on
:class:`~elsm.autodiff.Tensor` values so that the bound can be differentiated
with respect to the encoder and decoder parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import VariationalState, reparameterize, responsibilities
from .model_core import edge_kernel_f, neighbor_mean

P_MIN = 1e-7
RATE_FLOOR = 1e-10
LOG_P_MIN = math.log(P_MIN)
LOG_P_MAX = math.log1p(-P_MIN)
LOG_2PI = math.log(2.0 * math.pi)

DECODER_KINDS = ("bernoulli-kernel", "bernoulli-learned", "poisson-learned")


@dataclass
class DecoderSpec:
    """Edge decoder choice and its initial scalars.

    ``bernoulli-kernel`` uses the fixed tanh kernel with radius ``s2``;
    ``bernoulli-learned`` uses ``sigmoid(b_rho - w_rho^2 |dz|^2)``;
    ``poisson-learned`` predicts the rate ``exp(b_rho - w_rho^2 |dz|^2)``.
    """

    kind: str = "bernoulli-kernel"
    s2: float = 1.0
    w_rho: float = 1.0
    b_rho: float = 0.0
    learn_s2: bool = False
    learn_s4: bool = False

    def __post_init__(self):
        if self.kind not in DECODER_KINDS:
            raise ValueError(f"unknown decoder kind {self.kind!r}; expected one of {DECODER_KINDS}")
        if not self.s2 > 0:
            raise ValueError("s2 must be strictly positive")


@dataclass
class Priors:
    """Inference-time prior values."""

    m_prior: np.ndarray | None = None
    s: float = 1.0
    s1: float = 0.1
    s3: float = 1.0
    s4: float = 1.0
    pi: np.ndarray | None = None

    def __post_init__(self):
        for name in ("s", "s1", "s3", "s4"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.pi is not None:
            self.pi = np.asarray(self.pi, dtype=np.float64)

    def mean(self, d: int) -> np.ndarray:
        if self.m_prior is None:
            return np.zeros(d)
        m = np.asarray(self.m_prior, dtype=np.float64)
        if m.shape != (d,):
            raise ValueError(f"prior mean has shape {m.shape}, expected ({d},)")
        return m

    def mixing(self, K: int) -> np.ndarray:
        if self.pi is None:
            return np.full(K, 1.0 / K)
        if self.pi.shape != (K,):
            raise ValueError(f"pi has length {len(self.pi)}, expected {K}")
        return self.pi


def log_tanh_kernel_pair(x) -> tuple[Tensor, Tensor]:
    """``log p`` and ``log(1 - p)`` for ``p = 1 - tanh(x)``, clamped like ``p``.

    ``log(1 - tanh x) = log 2 - softplus(2x)`` avoids the cancellation in
    ``1 - tanh x`` for large ``x``.
    """
    x = ad.as_tensor(x)
    log_p = ad.clip(math.log(2.0) - ad.softplus(x * 2.0), LOG_P_MIN, LOG_P_MAX)
    log_q = ad.log(ad.clip(ad.tanh(x), P_MIN, 1.0 - P_MIN))
    return log_p, log_q


class Decoder:
    """Decoder state: the spec plus its learnable scalars as tensors."""

    def __init__(self, spec: DecoderSpec, s4: float = 1.0):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        if spec.kind != "bernoulli-kernel":
            self.params["w_rho"] = Tensor(np.array(spec.w_rho), requires_grad=True, name="w_rho")
            self.params["b_rho"] = Tensor(np.array(spec.b_rho), requires_grad=True, name="b_rho")
        if spec.learn_s2 and spec.kind == "bernoulli-kernel":
            self.params["log_s2"] = Tensor(np.array(math.log(spec.s2)), requires_grad=True,
                                           name="log_s2")
        if spec.learn_s4:
            self.params["log_s4"] = Tensor(np.array(math.log(s4)), requires_grad=True,
                                           name="log_s4")
        self._s4 = float(s4)

    @property
    def kind(self) -> str:
        return self.spec.kind

    def inv_s2_sq(self):
        if "log_s2" in self.params:
            return ad.exp(self.params["log_s2"] * -2.0)
        return 1.0 / self.spec.s2 ** 2

    def inv_s4_sq(self):
        if "log_s4" in self.params:
            return ad.exp(self.params["log_s4"] * -2.0)
        return 1.0 / self._s4 ** 2

    def s4_value(self) -> float:
        return float(np.sqrt(1.0 / float(ad.as_tensor(self.inv_s4_sq()).data)))

    def logit_or_lograte(self, D):
        """``b_rho - w_rho^2 D`` for the learned decoders."""
        w, b = self.params["w_rho"], self.params["b_rho"]
        return b - ad.square(w) * D

    def log_likelihood(self, D, A) -> Tensor:
        """Elementwise ``log P(a | z_i, z_j)`` given squared distances ``D``."""
        A = np.asarray(A, dtype=np.float64)
        D = ad.as_tensor(D)
        kind = self.spec.kind
        if kind == "bernoulli-kernel":
            log_p, log_q = log_tanh_kernel_pair(D * self.inv_s2_sq())
            return A * log_p + (1.0 - A) * log_q
        if kind == "bernoulli-learned":
            z = self.logit_or_lograte(D)
            log_p = ad.clip(ad.neg(ad.softplus(ad.neg(z))), LOG_P_MIN, LOG_P_MAX)
            log_q = ad.clip(ad.neg(ad.softplus(z)), LOG_P_MIN, LOG_P_MAX)
            return A * log_p + (1.0 - A) * log_q
        if np.any(A < 0):
            raise ValueError("Poisson decoder needs non-negative counts")
        log_rate = ad.clip(self.logit_or_lograte(D), math.log(RATE_FLOOR), np.inf)
        return A * log_rate - ad.exp(log_rate) - gammaln(A + 1.0)

    def edge_probability(self, D) -> np.ndarray:
        """Probability that an edge is present, ``P(a > 0)``."""
        with ad.no_grad():
            D = ad.as_tensor(D)
            kind = self.spec.kind
            if kind == "bernoulli-kernel":
                return 1.0 - np.tanh(D.data * float(ad.as_tensor(self.inv_s2_sq()).data))
            z = self.logit_or_lograte(D).data
            if kind == "bernoulli-learned":
                return ad._stable_sigmoid(z)
            return 1.0 - np.exp(-np.exp(np.maximum(z, math.log(RATE_FLOOR))))

    def rate(self, D) -> np.ndarray:
        """Poisson mean for the given squared distances."""
        if self.spec.kind != "poisson-learned":
            raise ValueError("rate is only defined for the Poisson decoder")
        with ad.no_grad():
            z = self.logit_or_lograte(ad.as_tensor(D)).data
        return np.exp(np.maximum(z, math.log(RATE_FLOOR)))


def _as_decoder(decoder) -> Decoder:
    return decoder if isinstance(decoder, Decoder) else Decoder(decoder)


# scalar reference evaluations

def log_gaussian_density(x, mean, var) -> float:
    """Log-density of ``N(mean, diag(var))`` at ``x``; ``var`` scalar or vector."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    var = np.broadcast_to(np.asarray(var, dtype=np.float64), x.shape)
    if np.any(var <= 0):
        raise ValueError("variance must be strictly positive")
    return float(-0.5 * np.sum((x - mean) ** 2 / var + np.log(2.0 * np.pi * var)))


def edge_log_likelihood(a, z_i, z_j, decoder) -> float:
    dec = _as_decoder(decoder)
    diff = np.asarray(z_i, dtype=np.float64) - np.asarray(z_j, dtype=np.float64)
    if dec.kind == "poisson-learned":
        if a < 0:
            raise ValueError("Poisson decoder needs a non-negative count")
    elif a not in (0, 1):
        raise ValueError("Bernoulli decoders need a binary observation")
    with ad.no_grad():
        return float(dec.log_likelihood(np.array(diff @ diff), np.array(float(a))).data)


def transition_log_density(z_t, Z_prev, A_prev, i: int, s1: float, s4: float) -> float:
    mu = neighbor_mean(Z_prev, A_prev, i, s4)
    return log_gaussian_density(z_t, mu, s1 ** 2)


# batched tensor terms

def gaussian_logpdf(x, mean, var) -> Tensor:
    """Isotropic/diagonal Gaussian log-density summed over the last axis."""
    x = ad.as_tensor(x)
    diff = x - mean
    d = x.shape[-1]
    if not isinstance(var, Tensor) and np.size(var) == 1:
        v = float(var)
        return ad.tsum(diff * diff, axis=-1) * (-0.5 / v) - 0.5 * d * math.log(2.0 * math.pi * v)
    var_t = ad.as_tensor(var)
    return ad.tsum(diff * diff / var_t + ad.log(var_t), axis=-1) * -0.5 - 0.5 * d * LOG_2PI


def _lower_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n)), k=-1)


def edge_term(A, Z, decoder, D=None) -> Tensor:
    """Sum of edge log-likelihoods over every snapshot's strict lower triangle."""
    dec = _as_decoder(decoder)
    A = np.asarray(A, dtype=np.float64)
    D = ad.pairwise_sq_dists(Z) if D is None else D
    ll = dec.log_likelihood(D, A)
    return ad.tsum(ll * _lower_mask(A.shape[-1]))


def neighbor_mean_tensor(Z_prev, A_prev, inv_s4_sq, D_prev=None) -> Tensor:
    """Batched neighbour means; ``Z_prev`` is ``(..., n, d)``."""
    Z_prev = ad.as_tensor(Z_prev)
    D_prev = ad.pairwise_sq_dists(Z_prev) if D_prev is None else D_prev
    W = ad.exp(D_prev * (-inv_s4_sq)) * A_prev
    num = Z_prev + ad.matmul(W, Z_prev)
    den = 1.0 + ad.tsum(W, axis=-1, keepdims=True)
    return num / den


def transition_log_densities(A, Z, s1: float, inv_s4_sq, D=None) -> Tensor:
    """``log N(z_i^(t) | mean_i^(t), s1^2 I)`` for t >= 2; shape ``(T-1, n)``."""
    Z = ad.as_tensor(Z)
    A = np.asarray(A, dtype=np.float64)
    T = Z.shape[0]
    D_prev = None if D is None else D[0:T - 1]
    means = neighbor_mean_tensor(Z[0:T - 1], A[:T - 1], inv_s4_sq, D_prev)
    return gaussian_logpdf(Z[1:T], means, s1 ** 2)


@dataclass
class JointTerms:
    """Additive pieces of a joint log-likelihood."""

    edge: Tensor
    transition: Tensor
    prior: Tensor
    discrete: Tensor

    @property
    def total(self) -> Tensor:
        return self.edge + self.transition + self.prior + self.discrete


def _network_array(network) -> np.ndarray:
    return np.asarray(getattr(network, "snapshots", network), dtype=np.float64)


def joint_log_likelihood_ielsm(network, Z, priors: Priors, decoder) -> JointTerms:
    """Joint log-likelihood of the simplified model at embeddings ``Z``."""
    A = _network_array(network)
    Z = ad.as_tensor(Z)
    dec = _as_decoder(decoder)
    T, n, d = Z.shape
    if A.shape[0] != T:
        raise ValueError(f"network has {A.shape[0]} snapshots but Z has {T}")
    D = ad.pairwise_sq_dists(Z)
    prior = ad.tsum(gaussian_logpdf(Z[0], priors.mean(d), priors.s ** 2))
    edge = edge_term(A, Z, dec, D)
    if T > 1:
        transition = ad.tsum(transition_log_densities(A, Z, priors.s1, dec.inv_s4_sq(), D))
    else:
        transition = Tensor(0.0)
    return JointTerms(edge, transition, prior, Tensor(0.0))


@dataclass
class DiscreteComponents:
    """Log-densities conditioned on each value of the discrete latents.

    ``first`` is ``(n, K)`` with ``log N(z_i^(1) | mu_j, s1^2 I)``; ``log_pi``
    is ``(K,)``; the split and transition arrays are ``(T-1, n)`` evaluated at
    ``h = 1`` and ``h = 0``.
    """

    first: Tensor
    log_pi: np.ndarray
    split_on: Tensor
    split_off: Tensor
    trans_on: Tensor
    trans_off: Tensor


def _safe_log_pi(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    return np.log(np.maximum(pi, 1e-300))


def discrete_components(A, Z, alpha, mu, priors: Priors, decoder=None, D=None) -> DiscreteComponents:
    A = np.asarray(A, dtype=np.float64)
    Z, alpha, mu = ad.as_tensor(Z), ad.as_tensor(alpha), ad.as_tensor(mu)
    T, n, d = Z.shape
    K = mu.shape[0]
    s1_sq = priors.s1 ** 2
    first = gaussian_logpdf(ad.expand_dims(Z[0], 1), ad.expand_dims(mu, 0), s1_sq)
    log_pi = _safe_log_pi(priors.mixing(K))
    if T > 1:
        inv_s4_sq = _as_decoder(decoder).inv_s4_sq() if decoder is not None else 1.0 / priors.s4 ** 2
        a_b = ad.expand_dims(alpha, 1)
        diff = Z[0:T - 1] - a_b
        split_on, split_off = log_tanh_kernel_pair(
            ad.tsum(diff * diff, axis=-1) * (1.0 / priors.s3 ** 2))
        trans_on = gaussian_logpdf(Z[1:T], a_b, s1_sq)
        D_prev = None if D is None else D[0:T - 1]
        means = neighbor_mean_tensor(Z[0:T - 1], A[:T - 1], inv_s4_sq, D_prev)
        trans_off = gaussian_logpdf(Z[1:T], means, s1_sq)
    else:
        empty = Tensor(np.zeros((0, n)))
        split_on = split_off = trans_on = trans_off = empty
    return DiscreteComponents(first, log_pi, split_on, split_off, trans_on, trans_off)


def _soft_c(c, n: int, K: int) -> Tensor:
    if isinstance(c, Tensor):
        return c
    c = np.asarray(c)
    if c.ndim == 1:
        onehot = np.zeros((n, K))
        onehot[np.arange(n), c.astype(np.int64) - 1] = 1.0
        return Tensor(onehot)
    return Tensor(c)


def _discrete_parts(c_hat, h_hat, comp: DiscreteComponents) -> dict[str, Tensor]:
    c_hat, h_hat = ad.as_tensor(c_hat), ad.as_tensor(h_hat)
    return {
        "membership_prior": ad.tsum(c_hat * comp.log_pi),
        "first_layer": ad.tsum(c_hat * comp.first),
        "split": ad.tsum(h_hat * comp.split_on + (1.0 - h_hat) * comp.split_off),
        "transition": ad.tsum(h_hat * comp.trans_on + (1.0 - h_hat) * comp.trans_off),
    }


def expected_discrete_terms(c_hat, h_hat, comp: DiscreteComponents) -> Tensor:
    """Every term that depends on ``c`` or ``h``, averaged analytically under
    independent categorical ``c_hat`` rows and Bernoulli ``h_hat`` entries."""
    parts = _discrete_parts(c_hat, h_hat, comp)
    return parts["membership_prior"] + parts["first_layer"] + parts["split"] + parts["transition"]


def joint_log_likelihood_elsm(network, Z, c, h, alpha, mu, priors: Priors, decoder) -> JointTerms:
    """Joint log-likelihood of the full model.

    ``c`` may be 1-based hard labels ``(n,)`` or responsibilities ``(n, K)``;
    ``h`` may be binary or probabilities, shape ``(T-1, n)``.  Soft values give
    the analytic expectation over the discrete latents.
    """
    A = _network_array(network)
    Z, alpha, mu = ad.as_tensor(Z), ad.as_tensor(alpha), ad.as_tensor(mu)
    dec = _as_decoder(decoder)
    T, n, d = Z.shape
    K = mu.shape[0]
    if K < 1:
        raise ValueError("need at least one initial center")
    m = priors.mean(d)
    s_sq = priors.s ** 2
    D = ad.pairwise_sq_dists(Z)
    edge = edge_term(A, Z, dec, D)
    comp = discrete_components(A, Z, alpha, mu, priors, dec, D)
    parts = _discrete_parts(_soft_c(c, n, K), ad.as_tensor(h) if T > 1 else np.zeros((0, n)), comp)
    prior = ad.tsum(gaussian_logpdf(mu, m, s_sq)) + parts["first_layer"]
    if T > 1:
        prior = prior + ad.tsum(gaussian_logpdf(alpha, m, s_sq))
    discrete = parts["membership_prior"] + parts["split"]
    return JointTerms(edge, parts["transition"], prior, discrete)


# entropies

def _xlogx(p) -> Tensor:
    p = ad.as_tensor(p)
    return p * ad.log(ad.clip(p, 1e-300, 1.0))


def gaussian_entropy(log_var) -> Tensor:
    log_var = ad.as_tensor(log_var)
    return ad.tsum(log_var + (1.0 + LOG_2PI)) * 0.5


def bernoulli_entropy(p) -> Tensor:
    p = ad.as_tensor(p)
    return ad.neg(ad.tsum(_xlogx(p) + _xlogx(1.0 - p)))


def categorical_entropy(probs) -> Tensor:
    return ad.neg(ad.tsum(_xlogx(probs)))


def entropies(state: VariationalState, c_hat=None) -> Tensor:
    """Closed-form entropy of the mean-field posterior."""
    total = gaussian_entropy(state.log_var)
    if state.is_elsm:
        total = total + gaussian_entropy(state.alpha_log_var) + gaussian_entropy(state.mu_log_var)
        total = total + bernoulli_entropy(state.h_hat)
        c_hat = state.c_hat if c_hat is None else c_hat
        if c_hat is not None:
            total = total + categorical_entropy(c_hat)
    return total


# evidence lower bound

@dataclass
class Noise:
    """Standard-normal draws for the reparameterised samples.

    Arrays carry a leading sample axis: ``z`` is ``(S, T, n, d)``, ``alpha``
    ``(S, T-1, d)`` and ``mu`` ``(S, K, d)``.
    """

    z: np.ndarray
    alpha: np.ndarray | None = None
    mu: np.ndarray | None = None

    @property
    def samples(self) -> int:
        return self.z.shape[0]

    @classmethod
    def draw(cls, rng: np.random.Generator, T: int, n: int, d: int, samples: int = 1,
             K: int | None = None) -> "Noise":
        z = rng.standard_normal((samples, T, n, d))
        if K is None:
            return cls(z)
        alpha = rng.standard_normal((samples, max(T - 1, 0), d))
        mu = rng.standard_normal((samples, K, d))
        return cls(z, alpha, mu)

    @classmethod
    def zeros(cls, T: int, n: int, d: int, K: int | None = None) -> "Noise":
        if K is None:
            return cls(np.zeros((1, T, n, d)))
        return cls(np.zeros((1, T, n, d)), np.zeros((1, max(T - 1, 0), d)), np.zeros((1, K, d)))


@dataclass
class ElboReport:
    total: Tensor
    elbo: float
    joint: float
    entropy: float
    edge: float
    transition: float
    prior: float
    discrete: float
    extras: dict = field(default_factory=dict)

    def components(self) -> dict[str, float]:
        return {"elbo": self.elbo, "joint": self.joint, "entropy": self.entropy,
                "edge": self.edge, "transition": self.transition, "prior": self.prior,
                "discrete": self.discrete}


def elbo(variant: str, network, state: VariationalState, noise: Noise, priors: Priors,
         decoder, sample_weights=None) -> ElboReport:
    """Monte Carlo evidence lower bound.

    The joint term is averaged over the noise samples (uniformly, or with
    ``sample_weights`` for quadrature); entropies are exact.  For the full
    model the responsibilities are recomputed from each sample of ``z^(1)``.
    """
    if variant not in ("ielsm", "elsm"):
        raise ValueError(f"unknown variant {variant!r}")
    A = _network_array(network)
    dec = _as_decoder(decoder)
    S = noise.samples
    weights = np.full(S, 1.0 / S) if sample_weights is None else np.asarray(sample_weights, float)
    if weights.shape != (S,):
        raise ValueError("sample_weights must have one entry per noise sample")

    acc = {"edge": Tensor(0.0), "transition": Tensor(0.0), "prior": Tensor(0.0),
           "discrete": Tensor(0.0)}
    c_entropy = Tensor(0.0)
    c_hats = []
    for s in range(S):
        Z = reparameterize(state.nu, state.log_var, noise.z[s])
        if variant == "ielsm":
            terms = joint_log_likelihood_ielsm(A, Z, priors, dec)
        else:
            if not state.is_elsm:
                raise ValueError("the full-model bound needs the full-model heads")
            alpha = reparameterize(state.alpha_mean, state.alpha_log_var, noise.alpha[s])
            mu = reparameterize(state.mu_mean, state.mu_log_var, noise.mu[s])
            K = mu.shape[0]
            c_hat = state.c_hat
            if c_hat is None:
                c_hat = responsibilities(Z[0], state.mu_mean, priors.mixing(K), priors.s1)
            c_hats.append(c_hat)
            terms = joint_log_likelihood_elsm(A, Z, c_hat, state.h_hat, alpha, mu, priors, dec)
            if state.c_hat is None:
                c_entropy = c_entropy + categorical_entropy(c_hat) * weights[s]
        w = weights[s]
        for key in acc:
            acc[key] = acc[key] + getattr(terms, key) * w

    joint = acc["edge"] + acc["transition"] + acc["prior"] + acc["discrete"]
    entropy = entropies(state) + c_entropy
    total = joint + entropy
    values = {k: float(v.data) for k, v in acc.items()}
    extras = {}
    if c_hats:
        extras["c_hat"] = np.mean([np.asarray(ad.as_tensor(c).data) for c in c_hats], axis=0)
    return ElboReport(total=total, elbo=float(total.data), joint=float(joint.data),
                      entropy=float(entropy.data), extras=extras, **values)
