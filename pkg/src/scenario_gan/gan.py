"""Wasserstein GAN over fixed-length time-series windows.

The critic is trained ``n_discri`` times per generator step with RMSProp and
its weights are clipped to ``[-c, c]`` after every update. Losses::

    L_G = -mean D(G(z))
    L_D = -mean D(x) + mean D(G(z))        (and V(G, D) = -L_D)
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, DataError, NumericalError, ShapeError

log = logging.getLogger(__name__)

MODEL_FORMAT = "scenario-gan/model"
CHECKPOINT_FORMAT = "scenario-gan/checkpoint"
FORMAT_VERSION = 1

_LOWEST_OPEN = np.nextafter(-1.0, 0.0)


# -- architectures --------------------------------------------------------------

def covering_conv(in_channels: int, in_length: int, out_channels: int,
                  kernel_width: int = 4, stride: int = 2) -> nn.LayerSpec:
    """Strided convolution whose last patch ends on the last input position.

    A stride that does not divide ``in_length - kernel_width`` silently drops
    the tail of the input, so the kernel is widened until it does. Inputs
    shorter than the kernel get a single full-width patch.
    """
    width = min(kernel_width, in_length)
    while (in_length - width) % stride:
        width += 1
    return nn.conv1d(in_channels, in_length, out_channels, kernel_width=width, stride=stride)


def conv_generator(latent_dim: int, length: int, batch_norm: bool = True) -> nn.NetworkSpec:
    """Dense up-sample to 16 channels, two strided convolutions, dense read-out."""
    l0 = 2 * length
    c1 = covering_conv(16, l0, 16)
    c2 = covering_conv(16, c1.out_length, 8)
    layers = [nn.dense(latent_dim, 16 * l0)]
    for conv in (c1, c2):
        if batch_norm:
            layers.append(nn.batchnorm(conv.in_dim))
        layers += [nn.relu(conv.in_dim), conv]
    if batch_norm:
        layers.append(nn.batchnorm(c2.out_dim))
    layers += [nn.relu(c2.out_dim), nn.dense(c2.out_dim, length)]
    return nn.NetworkSpec(layers)


def conv_discriminator(length: int, batch_norm: bool = False, leak: float = 0.2) -> nn.NetworkSpec:
    """Two strided convolutions (8 then 16 channels) and two dense layers."""
    c1 = covering_conv(1, length, 8)
    c2 = covering_conv(8, c1.out_length, 16)
    hidden = 32
    layers = [c1]
    for nxt in (c2, nn.dense(c2.out_dim, hidden), nn.dense(hidden, 1)):
        width = nxt.in_dim
        if batch_norm:
            layers.append(nn.batchnorm(width))
        layers += [nn.leakyrelu(width, leak), nxt]
    return nn.NetworkSpec(layers)


def dense_generator(latent_dim: int, length: int, hidden: int = 64,
                    batch_norm: bool = True) -> nn.NetworkSpec:
    layers = [nn.dense(latent_dim, hidden)]
    if batch_norm:
        layers.append(nn.batchnorm(hidden))
    layers += [nn.relu(hidden), nn.dense(hidden, hidden)]
    if batch_norm:
        layers.append(nn.batchnorm(hidden))
    layers += [nn.relu(hidden), nn.dense(hidden, length)]
    return nn.NetworkSpec(layers)


def dense_discriminator(length: int, hidden: int = 64, leak: float = 0.2) -> nn.NetworkSpec:
    return nn.NetworkSpec([
        nn.dense(length, hidden), nn.leakyrelu(hidden, leak),
        nn.dense(hidden, hidden), nn.leakyrelu(hidden, leak),
        nn.dense(hidden, 1),
    ])


ARCHITECTURES = ("conv", "dense")


# -- model ----------------------------------------------------------------------

@dataclass
class GanModel:
    generator: nn.Network
    discriminator: nn.Network
    latent_dim: int
    h: int
    k: int
    # data-space window = offset + scale * generator network output
    offset: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        self.validate()

    @property
    def window_length(self) -> int:
        return self.h + self.k + 1

    def validate(self) -> None:
        if self.latent_dim <= 0 or self.h < 0 or self.k < 1:
            raise ConfigError("latent_dim must be positive, h >= 0 and k >= 1")
        g, d = self.generator.spec, self.discriminator.spec
        if g.input_dim != self.latent_dim:
            raise ConfigError(f"generator input {g.input_dim} != latent_dim {self.latent_dim}")
        if g.output_dim != self.window_length or d.input_dim != self.window_length:
            raise ConfigError(f"networks must map windows of length {self.window_length}")
        if d.output_dim != 1:
            raise ConfigError("discriminator must output a single value")
        if not (np.isfinite(self.offset) and np.isfinite(self.scale) and self.scale > 0):
            raise ConfigError("normalization offset must be finite and scale positive")

    # G and D in data space, with the normalization folded into the tapes

    def gen_forward(self, z, mode: str = "frozen"):
        raw, tape = self.generator.forward(z, mode)
        return self.offset + self.scale * raw, tape

    def gen_backward(self, tape, grad_x):
        return self.generator.backward(tape, np.asarray(grad_x) * self.scale)

    def disc_forward(self, x, mode: str = "frozen"):
        return self.discriminator.forward((np.asarray(x, dtype=np.float64) - self.offset) / self.scale,
                                          mode)

    def disc_backward(self, tape, grad_out):
        grads, gx = self.discriminator.backward(tape, grad_out)
        return grads, gx / self.scale

    def G(self, z, mode: str = "frozen") -> np.ndarray:
        return self.gen_forward(z, mode)[0]

    def D(self, x, mode: str = "frozen") -> np.ndarray:
        return self.disc_forward(x, mode)[0]

    def fit_normalization(self, data: np.ndarray, min_scale: float = 1e-3) -> None:
        """Center on the global training mean and scale by the global std."""
        self.offset = float(np.mean(data))
        self.scale = float(max(np.std(data), min_scale))

    @classmethod
    def build(cls, h: int, k: int, latent_dim: int | None = None,
              architecture: str = "conv", seed=0, generator_bn: bool = True,
              discriminator_bn: bool = False) -> "GanModel":
        """Fresh model; the latent dimension defaults to the window length."""
        length = h + k + 1
        latent_dim = length if latent_dim is None else latent_dim
        if architecture == "conv":
            gspec = conv_generator(latent_dim, length, batch_norm=generator_bn)
            dspec = conv_discriminator(length, batch_norm=discriminator_bn)
        elif architecture == "dense":
            gspec = dense_generator(latent_dim, length, batch_norm=generator_bn)
            dspec = dense_discriminator(length)
        else:
            raise ConfigError(f"unknown architecture {architecture!r}")
        gseed, dseed = np.random.SeedSequence(seed).spawn(2)
        return cls(nn.Network.initialize(gspec, gseed), nn.Network.initialize(dspec, dseed),
                   latent_dim, h, k)

    def copy(self) -> "GanModel":
        return GanModel(self.generator.copy(), self.discriminator.copy(),
                        self.latent_dim, self.h, self.k, self.offset, self.scale)

    def with_split(self, k: int) -> "GanModel":
        """Same networks, different history/horizon split of the window."""
        h = self.window_length - k - 1
        if k < 1 or h < 0:
            raise ConfigError(f"horizon k={k} does not fit a window of length {self.window_length}")
        return GanModel(self.generator, self.discriminator, self.latent_dim, h, k,
                        self.offset, self.scale)

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": FORMAT_VERSION,
            "latent_dim": self.latent_dim,
            "h": self.h,
            "k": self.k,
            "offset": self.offset,
            "scale": self.scale,
            "generator": nn.network_to_json(self.generator),
            "discriminator": nn.network_to_json(self.discriminator),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GanModel":
        if d.get("format") != MODEL_FORMAT:
            raise DataError(f"not a model document (format={d.get('format')!r})")
        if d.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported model format version {d.get('version')!r}")
        return cls(nn.network_from_json(d["generator"]), nn.network_from_json(d["discriminator"]),
                   d["latent_dim"], d["h"], d["k"], d["offset"], d["scale"])

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "GanModel":
        return cls.from_json(json.loads(Path(path).read_text()))

    @property
    def model_id(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


# -- sampling and losses --------------------------------------------------------

def sample_noise(m: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Unif(-1, 1) noise of shape ``(m, dim)``, open at both ends."""
    if m <= 0 or dim <= 0:
        raise ConfigError("noise batch and dimension must be positive")
    return np.maximum(rng.uniform(-1.0, 1.0, size=(m, dim)), _LOWEST_OPEN)


def _check_batches(model: GanModel, x_batch=None, z_batch=None):
    out = []
    if x_batch is not None:
        x_batch = np.asarray(x_batch, dtype=np.float64)
        if x_batch.ndim != 2 or x_batch.shape[1] != model.window_length:
            raise ShapeError(f"data batch must be (m, {model.window_length}), got {x_batch.shape}")
        out.append(x_batch)
    if z_batch is not None:
        z_batch = np.asarray(z_batch, dtype=np.float64)
        if z_batch.ndim != 2 or z_batch.shape[1] != model.latent_dim:
            raise ShapeError(f"noise batch must be (m, {model.latent_dim}), got {z_batch.shape}")
        out.append(z_batch)
    return out


def discriminator_loss(model: GanModel, x_batch, z_batch, mode: str = "frozen") -> float:
    x, z = _check_batches(model, x_batch, z_batch)
    fake = model.G(z, mode)
    return float(-model.D(x, mode).mean() + model.D(fake, mode).mean())


def generator_loss(model: GanModel, z_batch, mode: str = "frozen") -> float:
    (z,) = _check_batches(model, z_batch=z_batch)
    return float(-model.D(model.G(z, mode), mode).mean())


def value_function(model: GanModel, x_batch, z_batch, mode: str = "frozen") -> float:
    """Minimax value mean D(x) - mean D(G(z)); equals -L_D."""
    x, z = _check_batches(model, x_batch, z_batch)
    fake = model.G(z, mode)
    return float(model.D(x, mode).mean() - model.D(fake, mode).mean())


def generate(model: GanModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` generator samples of length h+k+1, batch-norm frozen."""
    if n == 0:
        return np.zeros((0, model.window_length))
    return model.G(sample_noise(n, model.latent_dim, rng), "frozen")


# -- training -------------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    clip: float = 0.01
    batch_size: int = 64
    n_discri: int = 4
    iterations: int = 1000
    seed: int = 0
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    bn_decay: float = 0.99
    # optional early stop on a moving average of |E D(x) - E D(G(z))|
    early_stop_threshold: float | None = None
    early_stop_patience: int = 500
    early_stop_span: int = 50
    normalize: bool = True
    recalibration_batches: int = 8

    def validate(self) -> None:
        for name in ("learning_rate", "clip", "batch_size", "n_discri"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")


@dataclass
class TrainRecord:
    iteration: int
    d_real: float
    d_fake: float
    loss_d: float
    loss_g: float
    wall_time: float = 0.0


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "d_real", "d_fake", "loss_d", "loss_g"])
        for r in self.records:
            w.writerow([r.iteration, repr(r.d_real), repr(r.d_fake), repr(r.loss_d), repr(r.loss_g)])
        return buf.getvalue()


def as_window_array(dataset) -> np.ndarray:
    """Stack windows (arrays or objects exposing ``.values``) into ``(n, length)``."""
    if isinstance(dataset, np.ndarray):
        arr = np.asarray(dataset, dtype=np.float64)
    else:
        rows = [np.asarray(getattr(w, "values", w), dtype=np.float64) for w in dataset]
        if not rows:
            raise DataError("dataset is empty")
        lengths = {len(r) for r in rows}
        if len(lengths) != 1:
            raise DataError(f"windows have differing lengths {sorted(lengths)}")
        arr = np.stack(rows)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DataError("dataset is empty")
    return arr


class Trainer:
    """Stateful weight-clipped WGAN training loop, resumable from a checkpoint document."""

    def __init__(self, model: GanModel, dataset, config: TrainConfig):
        config.validate()
        data = as_window_array(dataset)
        if data.shape[1] != model.window_length:
            raise DataError(f"window length {data.shape[1]} != model length {model.window_length}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise DataError("training windows must be finite and lie in [0, 1]")
        self.model = model.copy()
        if config.normalize:
            self.model.fit_normalization(data)
        self.data = data
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.opt_d = nn.RMSProp(config.learning_rate, config.rms_decay, config.rms_eps)
        self.opt_g = nn.RMSProp(config.learning_rate, config.rms_decay, config.rms_eps)
        self.iteration = 0
        self.log = TrainLog()
        self.stopped_early = False
        self._gaps: list = []
        self._below = 0
        self.on_critic_step = None  # optional hook(trainer) after each clipped update

    def _data_batch(self) -> np.ndarray:
        idx = self.rng.integers(0, self.data.shape[0], size=self.config.batch_size)
        return self.data[idx]

    def critic_step(self):
        m = self.config.batch_size
        model, disc = self.model, self.model.discriminator
        x = self._data_batch()
        z = sample_noise(m, model.latent_dim, self.rng)
        fake = model.G(z, "training")
        d_real, tape_real = model.disc_forward(x, "training")
        d_fake, tape_fake = model.disc_forward(fake, "training")
        loss = -d_real.mean() + d_fake.mean()
        g_real, _ = model.disc_backward(tape_real, np.full_like(d_real, -1.0 / m))
        g_fake, _ = model.disc_backward(tape_fake, np.full_like(d_fake, 1.0 / m))
        grads = [{k: a[k] + b[k] for k in a} for a, b in zip(g_real, g_fake)]
        disc.params = nn.clip_params(self.opt_d.step(disc.params, grads), self.config.clip)
        for tape in (tape_real, tape_fake):
            disc.bn_state = nn.update_running_stats(disc.bn_state, tape, self.config.bn_decay)
        if self.on_critic_step is not None:
            self.on_critic_step(self)
        return float(d_real.mean()), float(d_fake.mean()), float(loss)

    def generator_step(self) -> float:
        m = self.config.batch_size
        model, gen = self.model, self.model.generator
        z = sample_noise(m, model.latent_dim, self.rng)
        fake, tape_g = model.gen_forward(z, "training")
        d_fake, tape_d = model.disc_forward(fake, "training")
        loss = -d_fake.mean()
        _, g_x = model.disc_backward(tape_d, np.full_like(d_fake, -1.0 / m))
        grads, _ = model.gen_backward(tape_g, g_x)
        gen.params = self.opt_g.step(gen.params, grads)
        gen.bn_state = nn.update_running_stats(gen.bn_state, tape_g, self.config.bn_decay)
        return float(loss)

    def _early_stop(self, gap: float) -> bool:
        cfg = self.config
        if cfg.early_stop_threshold is None:
            return False
        self._gaps.append(gap)
        recent = self._gaps[-cfg.early_stop_span:]
        self._below = self._below + 1 if np.mean(recent) < cfg.early_stop_threshold else 0
        return self._below >= cfg.early_stop_patience

    def run(self, until: int | None = None, checkpoint_every: int = 0,
            checkpoint_path=None) -> None:
        until = self.config.iterations if until is None else min(until, self.config.iterations)
        t0 = time.perf_counter()
        while self.iteration < until and not self.stopped_early:
            for _ in range(self.config.n_discri):
                d_real, d_fake, loss_d = self.critic_step()
            loss_g = self.generator_step()
            values = (d_real, d_fake, loss_d, loss_g)
            if not all(np.isfinite(values)):
                raise NumericalError(
                    f"non-finite training value at iteration {self.iteration}: "
                    f"E D(x)={d_real}, E D(G(z))={d_fake}, L_D={loss_d}, L_G={loss_g}"
                )
            self.log.records.append(TrainRecord(self.iteration, d_real, d_fake, loss_d, loss_g,
                                                time.perf_counter() - t0))
            self.iteration += 1
            if self.iteration % 500 == 0:
                log.info("iter %d  L_D=%.5g  L_G=%.5g", self.iteration, loss_d, loss_g)
            if self._early_stop(abs(d_real - d_fake)):
                self.stopped_early = True
                log.info("early stop at iteration %d", self.iteration)
            if checkpoint_every and checkpoint_path and self.iteration % checkpoint_every == 0:
                self.save_checkpoint(checkpoint_path)

    # -- checkpointing --

    def checkpoint_json(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": FORMAT_VERSION,
            "model": self.model.to_json(),
            "config": asdict(self.config),
            "iteration": self.iteration,
            "stopped_early": self.stopped_early,
            "rng": self.rng.bit_generator.state,
            "opt_d": _opt_to_json(self.opt_d),
            "opt_g": _opt_to_json(self.opt_g),
            # wall times are left out so checkpoints are reproducible byte for byte
            "log": [{k: v for k, v in asdict(r).items() if k != "wall_time"}
                    for r in self.log.records],
            "early_stop": {"gaps": self._gaps, "below": self._below},
        }

    def save_checkpoint(self, path) -> None:
        Path(path).write_text(json.dumps(self.checkpoint_json(), sort_keys=True))

    @classmethod
    def from_checkpoint(cls, path, dataset, iterations: int | None = None) -> "Trainer":
        d = json.loads(Path(path).read_text())
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != FORMAT_VERSION:
            raise DataError("not a training checkpoint")
        config = TrainConfig(**d["config"])
        if iterations is not None:
            config.iterations = iterations
        trainer = cls(GanModel.from_json(d["model"]), dataset, config)
        trainer.iteration = d["iteration"]
        trainer.stopped_early = d["stopped_early"]
        trainer.rng.bit_generator.state = d["rng"]
        trainer.opt_d = _opt_from_json(d["opt_d"])
        trainer.opt_g = _opt_from_json(d["opt_g"])
        trainer.log = TrainLog([TrainRecord(**r) for r in d["log"]])
        trainer._gaps = list(d["early_stop"]["gaps"])
        trainer._below = d["early_stop"]["below"]
        return trainer


def _opt_to_json(opt: nn.RMSProp) -> dict:
    state = opt.state_dict()
    state["acc"] = None if state["acc"] is None else nn.arrays_to_json(state["acc"])
    return state


def _opt_from_json(d: dict) -> nn.RMSProp:
    d = dict(d)
    d["acc"] = None if d["acc"] is None else nn.arrays_from_json(d["acc"])
    return nn.RMSProp.from_state_dict(d)


def recalibrate_batchnorm(model: GanModel, seed, batches: int = 8, batch_size: int = 256) -> None:
    """Replace the generator's running batch-norm statistics with population estimates.

    Moving averages lag behind parameters that change every step, so the frozen
    generator drifts from its training-mode behaviour. Averaging batch statistics
    of the final parameters over fresh noise removes that lag.
    """
    gen = model.generator
    bn_layers = [i for i, layer in enumerate(gen.spec.layers) if layer.kind == "batchnorm"]
    if not bn_layers or batches <= 0:
        return
    rng = np.random.default_rng(seed)
    sums = {i: [0.0, 0.0] for i in bn_layers}
    for _ in range(batches):
        _, tape = gen.forward(sample_noise(batch_size, model.latent_dim, rng), "training")
        for i in bn_layers:
            _, _, mean, var = tape.caches[i]
            sums[i][0] = sums[i][0] + mean
            sums[i][1] = sums[i][1] + var
    for i in bn_layers:
        gen.bn_state[i] = {"mean": sums[i][0] / batches, "var": sums[i][1] / batches}


def finalize(trainer: Trainer) -> GanModel:
    """Trained model with batch-norm statistics frozen for inference."""
    model = trainer.model.copy()
    recalibrate_batchnorm(model, [trainer.config.seed, 1], trainer.config.recalibration_batches)
    return model


def train(model: GanModel, dataset, config: TrainConfig) -> tuple[GanModel, TrainLog]:
    """Train a copy of ``model`` on ``dataset``; the input model is not modified."""
    trainer = Trainer(model, dataset, config)
    trainer.run()
    return finalize(trainer), trainer.log
