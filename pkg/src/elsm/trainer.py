"""Gradient-ascent training of the inference network, with checkpointing."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import (
    EncoderConfig,
    EncoderParams,
    VariationalState,
    bilstm_forward,
    elsm_heads_forward,
    heads_forward,
    init_encoder,
)
from .generator import substream
from .objective import Decoder, DecoderSpec, ElboReport, Noise, Priors, elbo

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"ELSMCKPT"
CHECKPOINT_VERSION = 1

# substream keys for training randomness
_INIT_STREAM = 100
_NOISE_STREAM = 101


@dataclass
class PriorConfig:
    m_prior: list | None = None
    s: float = 1.0
    s1: float = 0.1
    s3: float = 1.0
    s4: float = 1.0
    pi: list | None = None

    def build(self) -> Priors:
        return Priors(m_prior=None if self.m_prior is None else np.asarray(self.m_prior, float),
                      s=self.s, s1=self.s1, s3=self.s3, s4=self.s4,
                      pi=None if self.pi is None else np.asarray(self.pi, float))


@dataclass
class TrainConfig:
    variant: str = "ielsm"
    epochs: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 10.0
    seed: int = 0
    d: int = 2
    hidden: int = 64
    head_hidden: int = 64
    reduce_dim: int = 4
    K: int = 5
    mc_samples: int = 1
    frozen_noise: bool = False
    log_every: int = 1
    checkpoint_path: str | None = None
    decoder: DecoderSpec = field(default_factory=DecoderSpec)
    priors: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        if isinstance(self.decoder, dict):
            self.decoder = DecoderSpec(**self.decoder)
        if isinstance(self.priors, dict):
            self.priors = PriorConfig(**self.priors)
        if self.variant not in ("ielsm", "elsm"):
            raise ValueError(f"variant must be 'ielsm' or 'elsm', got {self.variant!r}")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        for name in ("d", "hidden", "head_hidden", "reduce_dim", "K", "mc_samples", "log_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        self.priors.build()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class InferenceModel:
    """Encoder, decoder and priors for one network size."""

    def __init__(self, config: TrainConfig, n: int, n_features: int = 0):
        self.config = config
        self.n = int(n)
        self.priors = config.priors.build()
        enc_cfg = EncoderConfig(n_input=self.n, d=config.d, hidden=config.hidden,
                                head_hidden=config.head_hidden, n_features=n_features,
                                elsm=config.variant == "elsm", K=config.K,
                                reduce_dim=config.reduce_dim)
        self.encoder: EncoderParams = init_encoder(enc_cfg, substream(config.seed, _INIT_STREAM))
        self.decoder = Decoder(config.decoder, s4=self.priors.s4)
        self.epochs_trained = 0

    @property
    def variant(self) -> str:
        return self.config.variant

    def parameters(self) -> dict[str, Tensor]:
        params = {f"encoder.{k}": v for k, v in self.encoder.tensors.items()}
        params.update({f"decoder.{k}": v for k, v in self.decoder.params.items()})
        return params

    def variational_state(self, network, features=None) -> VariationalState:
        A = getattr(network, "snapshots", network)
        if A.shape[1] != self.n:
            raise ValueError(f"model built for {self.n} nodes, network has {A.shape[1]}")
        g = bilstm_forward(A, self.encoder, features)
        if self.variant == "elsm":
            return elsm_heads_forward(g, self.encoder)
        return heads_forward(g, self.encoder)

    def draw_noise(self, rng: np.random.Generator, T: int) -> Noise:
        K = self.config.K if self.variant == "elsm" else None
        return Noise.draw(rng, T, self.n, self.config.d, self.config.mc_samples, K)

    def elbo(self, network, noise: Noise, features=None) -> ElboReport:
        state = self.variational_state(network, features)
        return elbo(self.variant, network, state, noise, self.priors, self.decoder)

    def embeddings(self, network, features=None) -> dict[str, np.ndarray]:
        """Posterior means and the other variational parameters as arrays."""
        with ad.no_grad():
            state = self.variational_state(network, features)
            out = state.to_numpy()
            if self.variant == "elsm":
                from .encoder import responsibilities

                out["c_hat"] = np.asarray(responsibilities(
                    state.nu[0], state.mu_mean, self.priors.mixing(self.config.K),
                    self.priors.s1).data)
        return out


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            update = self.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + self.eps)
            p.data = p.data + update


class NonFiniteLossError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


LOG_COLUMNS = ("epoch", "elbo", "joint", "entropy", "edge", "transition", "prior", "discrete")


class Trainer:
    """Full-batch ascent on the evidence lower bound."""

    def __init__(self, network, config: TrainConfig, features=None,
                 model: InferenceModel | None = None):
        self.network = network
        self.config = config
        self.features = features
        n_features = 0 if features is None else np.asarray(features).shape[-1]
        self.model = model or InferenceModel(config, network.n, n_features)
        # ascent: the optimiser receives the negated gradient of the loss -ELBO
        self.optimizer = Adam(self.model.parameters(), config.lr, config.beta1,
                              config.beta2, config.adam_eps)
        self.log: list[dict] = []
        self._frozen: Noise | None = None

    @property
    def epoch(self) -> int:
        return self.model.epochs_trained

    def noise_for_epoch(self, epoch: int) -> Noise:
        if self.config.frozen_noise:
            if self._frozen is None:
                self._frozen = self.model.draw_noise(substream(self.config.seed, _NOISE_STREAM),
                                                     self.network.T)
            return self._frozen
        return self.model.draw_noise(substream(self.config.seed, _NOISE_STREAM, epoch),
                                     self.network.T)

    def step(self) -> ElboReport:
        params = self.model.parameters()
        for p in params.values():
            p.grad = None
        report = self.model.elbo(self.network, self.noise_for_epoch(self.epoch), self.features)
        if not np.isfinite(report.elbo):
            bad = [k for k, v in report.components().items() if not np.isfinite(v)]
            raise NonFiniteLossError(
                f"non-finite ELBO at epoch {self.epoch}; offending components: {bad}")
        ad.backward(report.total)
        grads = {k: (p.grad if p.grad is not None else np.zeros(p.shape))
                 for k, p in params.items()}
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not np.isfinite(norm):
            raise NonFiniteLossError(f"non-finite gradient at epoch {self.epoch}")
        if norm > self.config.clip_norm:
            scale = self.config.clip_norm / norm
            grads = {k: g * scale for k, g in grads.items()}
        self.optimizer.step(grads)
        if self.epoch % self.config.log_every == 0:
            self.log.append({"epoch": self.epoch, **report.components()})
        self.model.epochs_trained += 1
        return report

    def run(self, epochs: int | None = None) -> list[dict]:
        target = self.config.epochs if epochs is None else self.epoch + int(epochs)
        while self.epoch < target:
            report = self.step()
            if self.epoch % 500 == 0:
                log.info("epoch %d elbo %.3f", self.epoch, report.elbo)
        return self.log

    # checkpointing

    def save_checkpoint(self, path) -> None:
        arrays: list[tuple[str, np.ndarray]] = []
        for k, p in self.model.parameters().items():
            arrays.append((f"param/{k}", p.data))
            arrays.append((f"adam_m/{k}", self.optimizer.m[k]))
            arrays.append((f"adam_v/{k}", self.optimizer.v[k]))
        index, offset = [], 0
        for name, arr in arrays:
            index.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size * 8
        header = {
            "config": self.config.to_dict(),
            "n": self.model.n,
            "n_features": self.model.encoder.config.n_features,
            "epoch": self.epoch,
            "adam_t": self.optimizer.t,
            "rng": {"kind": "philox-substream", "seed": self.config.seed,
                    "next_epoch": self.epoch, "frozen_noise": self.config.frozen_noise},
            "log": self.log,
            "arrays": index,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
            fh.write(blob)
            fh.write(payload)

    @classmethod
    def from_checkpoint(cls, path, network, features=None,
                        expect: TrainConfig | None = None) -> "Trainer":
        header, arrays = read_checkpoint(path)
        config = TrainConfig.from_dict(header["config"])
        if expect is not None:
            for key in ("variant", "d", "hidden", "head_hidden", "K", "reduce_dim"):
                if getattr(expect, key) != getattr(config, key):
                    raise CheckpointMismatchError(
                        f"checkpoint has {key}={getattr(config, key)!r}, "
                        f"expected {getattr(expect, key)!r}")
        if network.n != header["n"]:
            raise CheckpointMismatchError(
                f"checkpoint built for {header['n']} nodes, network has {network.n}")
        trainer = cls(network, config, features)
        params = trainer.model.parameters()
        for k, p in params.items():
            try:
                p.data = arrays[f"param/{k}"].copy()
                trainer.optimizer.m[k] = arrays[f"adam_m/{k}"].copy()
                trainer.optimizer.v[k] = arrays[f"adam_v/{k}"].copy()
            except KeyError as exc:
                raise CheckpointMismatchError(f"checkpoint lacks array {exc}") from exc
            if p.data.shape != trainer.optimizer.m[k].shape:
                raise CheckpointMismatchError(f"shape mismatch for {k}")
        trainer.optimizer.t = int(header["adam_t"])
        trainer.model.epochs_trained = int(header["epoch"])
        trainer.log = list(header["log"])
        return trainer


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    try:
        version, hlen = struct.unpack_from("<IQ", raw, pos)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    pos += struct.calcsize("<IQ")
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    pos += hlen
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = pos + entry["offset"]
        if start + 8 * count > len(raw):
            raise CheckpointError(f"{path}: truncated payload")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count,
                                              offset=start).reshape(entry["shape"])
    return header, arrays


def train(network, config: TrainConfig, features=None):
    """Train from scratch; returns ``(model, variational state arrays, log)``."""
    trainer = Trainer(network, config, features)
    trainer.run()
    if config.checkpoint_path:
        trainer.save_checkpoint(config.checkpoint_path)
    return trainer.model, trainer.model.embeddings(network, features), trainer.log
