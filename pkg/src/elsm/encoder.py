"""Amortised inference network: a bidirectional LSTM over adjacency rows.

At snapshot ``t`` every node's adjacency row is one input vector; the LSTM
runs over time in both directions with the nodes acting as the batch.  The
concatenated directional outputs ``g`` feed the variational heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0


@dataclass
class EncoderConfig:
    n_input: int
    d: int
    hidden: int = 64
    head_hidden: int = 64
    n_features: int = 0
    elsm: bool = False
    K: int = 5
    reduce_dim: int = 4

    @property
    def m_out(self) -> int:
        return 2 * self.hidden


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> dict[str, Tensor]:
        return self.tensors


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(config: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    """Fan-in scaled uniform initialisation; forget-gate bias starts at 1."""
    if config.elsm and config.K < 1:
        raise ValueError("the full model needs K >= 1 initial communities")
    H, d = config.hidden, config.d
    n_in = config.n_input + config.n_features
    raw: dict[str, np.ndarray] = {}
    for direction in ("fwd", "bwd"):
        raw[f"{direction}.Wx"] = _uniform(rng, n_in + H, (n_in, 4 * H))
        raw[f"{direction}.Wh"] = _uniform(rng, n_in + H, (H, 4 * H))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        raw[f"{direction}.b"] = b
    g_dim, hh = config.m_out, config.head_hidden
    for head in ("M", "V"):
        raw[f"{head}.W1"] = _uniform(rng, g_dim, (g_dim, hh))
        raw[f"{head}.b1"] = np.zeros(hh)
        raw[f"{head}.W2"] = _uniform(rng, hh, (hh, d))
        raw[f"{head}.b2"] = np.zeros(d)
    if config.elsm:
        r, n, K = config.reduce_dim, config.n_input, config.K
        raw["h.W"] = _uniform(rng, g_dim, (g_dim, 1))
        raw["h.b"] = np.zeros(1)
        raw["alpha.P.W"] = _uniform(rng, g_dim, (g_dim, r))
        raw["alpha.P.b"] = np.zeros(r)
        raw["alpha.W"] = _uniform(rng, n * r, (n * r, 2 * d))
        raw["alpha.b"] = np.zeros(2 * d)
        raw["mu.R.W"] = _uniform(rng, g_dim, (g_dim, r))
        raw["mu.R.b"] = np.zeros(r)
        raw["mu.W"] = _uniform(rng, n * r, (n * r, 2 * K * d))
        # spread initial center means so the mixture components start distinct
        raw["mu.b"] = np.concatenate([rng.standard_normal(K * d), np.zeros(K * d)])
    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}
    return EncoderParams(config, tensors)


def lstm_cell_step(x, state, Wx, Wh, b):
    """One LSTM update for a batch of rows.

    Gate layout along the last axis is ``[input, forget, candidate, output]``.
    """
    h, c = state
    H = Wh.shape[0]
    pre = ad.matmul(x, Wx) + ad.matmul(h, Wh) + b
    if pre.shape[-1] != 4 * H:
        raise ad.ShapeError(f"gate pre-activation width {pre.shape[-1]} != 4*{H}")
    sig = ad.sigmoid(pre[..., 0:2 * H])
    i_gate, f_gate = sig[..., 0:H], sig[..., H:2 * H]
    cand = ad.tanh(pre[..., 2 * H:3 * H])
    o_gate = ad.sigmoid(pre[..., 3 * H:4 * H])
    c_new = f_gate * c + i_gate * cand
    h_new = o_gate * ad.tanh(c_new)
    return h_new, c_new


def lstm_sequence(X, Wx, Wh, b, reverse: bool = False) -> Tensor:
    """Run an LSTM over the leading (time) axis of ``X`` as a single tape op.

    Equivalent to iterating :func:`lstm_cell_step` from zero state, with the
    backward pass done by hand-written backpropagation through time.
    Returns hidden outputs of shape ``(T, n, H)`` in the original time order.
    """
    X, Wx, Wh, b = (ad.as_tensor(v) for v in (X, Wx, Wh, b))
    T, n, n_in = X.shape
    H = Wh.shape[0]
    if Wx.shape != (n_in, 4 * H) or Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ad.ShapeError("LSTM weight shapes are inconsistent with the input")
    order = range(T - 1, -1, -1) if reverse else range(T)
    proj = (X.data.reshape(T * n, n_in) @ Wx.data).reshape(T, n, 4 * H) + b.data
    gates = np.empty((T, n, 4 * H))
    cells = np.empty((T, n, H))
    tanh_c = np.empty((T, n, H))
    h_prev = np.empty((T, n, H))
    c_prev = np.empty((T, n, H))
    out = np.empty((T, n, H))
    h = np.zeros((n, H))
    c = np.zeros((n, H))
    for t in order:
        pre = proj[t] + h @ Wh.data
        act = gates[t]
        act[:, :2 * H] = ad._stable_sigmoid(pre[:, :2 * H])
        act[:, 2 * H:3 * H] = np.tanh(pre[:, 2 * H:3 * H])
        act[:, 3 * H:] = ad._stable_sigmoid(pre[:, 3 * H:])
        h_prev[t], c_prev[t] = h, c
        c = act[:, H:2 * H] * c + act[:, :H] * act[:, 2 * H:3 * H]
        tc = np.tanh(c)
        h = act[:, 3 * H:] * tc
        cells[t], tanh_c[t], out[t] = c, tc, h

    def backward(g_out):
        d_pre = np.empty((T, n, 4 * H))
        dh_next = np.zeros((n, H))
        dc_next = np.zeros((n, H))
        for t in reversed(order):
            act = gates[t]
            i_g, f_g, c_g, o_g = (act[:, k * H:(k + 1) * H] for k in range(4))
            dh = g_out[t] + dh_next
            dc = dh * o_g * (1.0 - tanh_c[t] ** 2) + dc_next
            dp = d_pre[t]
            dp[:, :H] = dc * c_g * i_g * (1.0 - i_g)
            dp[:, H:2 * H] = dc * c_prev[t] * f_g * (1.0 - f_g)
            dp[:, 2 * H:3 * H] = dc * i_g * (1.0 - c_g ** 2)
            dp[:, 3 * H:] = dh * tanh_c[t] * o_g * (1.0 - o_g)
            dc_next = dc * f_g
            dh_next = dp @ Wh.data.T
        flat = d_pre.reshape(T * n, 4 * H)
        gX = (flat @ Wx.data.T).reshape(X.shape) if X.requires_grad else None
        gWx = X.data.reshape(T * n, n_in).T @ flat if Wx.requires_grad else None
        gWh = h_prev.reshape(T * n, H).T @ flat if Wh.requires_grad else None
        gb = flat.sum(axis=0) if b.requires_grad else None
        return gX, gWx, gWh, gb

    return ad._make(out, (X, Wx, Wh, b), backward)


def _inputs(snapshots, features) -> np.ndarray:
    X = np.asarray(snapshots, dtype=np.float64)
    if features is not None:
        F = np.asarray(features, dtype=np.float64)
        if F.ndim == 2:
            F = np.broadcast_to(F, (X.shape[0],) + F.shape)
        X = np.concatenate([X, F], axis=-1)
    return X


def bilstm_forward(snapshots, params: EncoderParams, features=None) -> Tensor:
    """Return ``g`` with shape ``(T, n, 2 * hidden)``.

    ``snapshots`` is ``(T, n, n)`` (a :class:`DynamicNetwork`'s array);
    optional ``features`` (``(n, f)`` or ``(T, n, f)``) are appended to rows.
    """
    X = _inputs(getattr(snapshots, "snapshots", snapshots), features)
    T, n, _ = X.shape
    if T < 1:
        raise ValueError("need at least one snapshot")
    outputs = [lstm_sequence(X, *(params[f"{direction}.{k}"] for k in ("Wx", "Wh", "b")),
                             reverse=(direction == "bwd"))
               for direction in ("fwd", "bwd")]
    return ad.concat(outputs, axis=-1)


def bilstm_forward_stepwise(snapshots, params: EncoderParams, features=None) -> Tensor:
    """Same as :func:`bilstm_forward` but composed from per-step tape ops."""
    X = _inputs(getattr(snapshots, "snapshots", snapshots), features)
    T, n, _ = X.shape
    H = params.config.hidden
    outputs = {}
    for direction, order in (("fwd", range(T)), ("bwd", range(T - 1, -1, -1))):
        Wx, Wh, b = (params[f"{direction}.{k}"] for k in ("Wx", "Wh", "b"))
        h = c = Tensor(np.zeros((n, H)))
        seq = [None] * T
        for t in order:
            h, c = lstm_cell_step(X[t], (h, c), Wx, Wh, b)
            seq[t] = h
        outputs[direction] = ad.stack(seq, axis=0)
    return ad.concat([outputs["fwd"], outputs["bwd"]], axis=-1)


def _mlp(x, params: EncoderParams, head: str) -> Tensor:
    hidden = ad.tanh(ad.matmul(x, params[f"{head}.W1"]) + params[f"{head}.b1"])
    return ad.matmul(hidden, params[f"{head}.W2"]) + params[f"{head}.b2"]


@dataclass
class VariationalState:
    """Variational parameters; Gaussian ``z`` factors plus the discrete/center
    factors of the full model when present."""

    nu: Tensor
    log_var: Tensor
    m: Tensor | None = None
    h_hat: Tensor | None = None
    c_hat: Tensor | None = None
    alpha_mean: Tensor | None = None
    alpha_log_var: Tensor | None = None
    mu_mean: Tensor | None = None
    mu_log_var: Tensor | None = None

    @property
    def is_elsm(self) -> bool:
        return self.h_hat is not None

    def to_numpy(self) -> dict[str, np.ndarray]:
        out = {}
        for key in ("nu", "log_var", "m", "h_hat", "c_hat", "alpha_mean",
                    "alpha_log_var", "mu_mean", "mu_log_var"):
            value = getattr(self, key)
            if value is not None:
                out[key] = np.array(ad.as_tensor(value).data)
        return out


def clamp_log_var(x) -> Tensor:
    return ad.clip(x, LOG_VAR_MIN, LOG_VAR_MAX)


def heads_forward(g, params: EncoderParams) -> VariationalState:
    """Apply the shared mean and log-variance heads at every (t, i)."""
    g = ad.as_tensor(g)
    nu = _mlp(g, params, "M")
    log_var = clamp_log_var(_mlp(g, params, "V"))
    return VariationalState(nu=nu, log_var=log_var)


def reparameterize(nu, log_var, eps) -> Tensor:
    """``nu + exp(log_var / 2) * eps``."""
    nu, log_var = ad.as_tensor(nu), ad.as_tensor(log_var)
    eps = np.asarray(eps, dtype=np.float64)
    if nu.shape != log_var.shape or nu.shape != eps.shape:
        raise ad.ShapeError(f"shape mismatch: {nu.shape}, {log_var.shape}, {eps.shape}")
    return nu + ad.exp(log_var * 0.5) * eps


def responsibilities(Z_first, mu_means, pi, s1: float) -> Tensor:
    """Mixture responsibilities of each first-snapshot embedding over ``K``
    isotropic components with variance ``s1^2`` and mixing weights ``pi``."""
    Z_first, mu_means = ad.as_tensor(Z_first), ad.as_tensor(mu_means)
    pi = np.asarray(pi, dtype=np.float64)
    if mu_means.shape[0] == 0:
        raise ValueError("need at least one mixture component")
    diff = ad.expand_dims(Z_first, 1) - ad.expand_dims(mu_means, 0)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    logits = ad.tsum(diff * diff, axis=-1) * (-0.5 / s1 ** 2) + log_pi
    return ad.exp(logits - ad.logsumexp(logits, axis=1, keepdims=True))


def elsm_heads_forward(g, params: EncoderParams, Z_first=None, pi=None,
                       s1: float | None = None) -> VariationalState:
    """Heads of the full model.

    ``h_hat[t-1]`` (the split probability for snapshot ``t``) is read from
    ``g[t-1]``; the alpha network pools reduced node states of snapshot
    ``t-1`` into the Gaussian for ``alpha`` at ``t``; the center network pools
    the first snapshot.  ``nu`` blends the pre-split mean with the alpha mean.
    Responsibilities are filled in when ``Z_first`` is supplied.
    """
    cfg = params.config
    if not cfg.elsm or cfg.K < 1:
        raise ValueError("encoder was not built with the full-model heads (K >= 1)")
    g = ad.as_tensor(g)
    T, n, _ = g.shape
    d, K, r = cfg.d, cfg.K, cfg.reduce_dim
    m = _mlp(g, params, "M")
    log_var = clamp_log_var(_mlp(g, params, "V"))

    g0 = g[0]
    red_mu = ad.tanh(ad.matmul(g0, params["mu.R.W"]) + params["mu.R.b"])
    mu_out = ad.matmul(red_mu.reshape(1, n * r), params["mu.W"]) + params["mu.b"]
    mu_mean = mu_out[0, :K * d].reshape(K, d)
    mu_log_var = clamp_log_var(mu_out[0, K * d:].reshape(K, d))

    if T > 1:
        g_prev = g[0:T - 1]
        h_hat = ad.sigmoid(ad.matmul(g_prev, params["h.W"]) + params["h.b"])[..., 0]
        red_a = ad.tanh(ad.matmul(g_prev, params["alpha.P.W"]) + params["alpha.P.b"])
        a_out = ad.matmul(red_a.reshape(T - 1, n * r), params["alpha.W"]) + params["alpha.b"]
        alpha_mean = a_out[:, :d]
        alpha_log_var = clamp_log_var(a_out[:, d:])
        hh = ad.expand_dims(h_hat, -1)
        later = (1.0 - hh) * m[1:] + hh * ad.expand_dims(alpha_mean, 1)
        nu = ad.concat([m[0:1], later], axis=0)
    else:
        h_hat = Tensor(np.zeros((0, n)))
        alpha_mean = Tensor(np.zeros((0, d)))
        alpha_log_var = Tensor(np.zeros((0, d)))
        nu = m

    state = VariationalState(nu=nu, log_var=log_var, m=m, h_hat=h_hat,
                             alpha_mean=alpha_mean, alpha_log_var=alpha_log_var,
                             mu_mean=mu_mean, mu_log_var=mu_log_var)
    if Z_first is not None:
        state.c_hat = responsibilities(Z_first, mu_mean, pi, s1)
    return state
