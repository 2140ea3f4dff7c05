"""Losses, optimizers and the training loop.

Losses are means over the batch: ``mse`` averages squared error over every
element of the ``(batch, o)`` prediction, ``softmax-cross-entropy`` averages
the per-sample cross entropy against one-hot targets.

Weight decay is added to the gradient (``g + lambda * theta``) for factor
matrices only; parameters named ``beta`` or ``b<n>`` are exempt.
"""

from __future__ import annotations

import csv
import io
import math
import re
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import Gradients, Graph
from .blocks import ProductNet, forward_product
from .checkpoint import atomic_write_bytes, save_checkpoint
from .data import Dataset
from .tensor import ShapeError, Tensor

OPTIMIZERS = ("sgd-momentum", "adam")
LOSSES = ("mse", "softmax-cross-entropy")
SCHEDULES = ("constant", "step")
METRIC_COLUMNS = ("epoch", "lr", "train_loss", "train_accuracy", "eval_loss", "eval_accuracy",
                  "param_norm", "grad_norm")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"loss became non-finite ({loss}) in epoch {epoch}")


@dataclass
class TrainConfig:
    optimizer: str = "sgd-momentum"
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    loss: str = "mse"
    clip: float | None = 5.0
    schedule: str = "constant"
    decay_at: tuple[float, ...] = (0.5, 0.75)
    decay_factor: float = 0.1
    checkpoint_every: int = 0

    def __post_init__(self):
        self.decay_at = tuple(float(f) for f in self.decay_at)
        self.validate()

    def validate(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError("optimizer", f"must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ConfigError("loss", f"must be one of {LOSSES}, got {self.loss!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError("schedule", f"must be one of {SCHEDULES}, got {self.schedule!r}")
        for key in ("lr", "eps", "decay_factor"):
            v = getattr(self, key)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                raise ConfigError(key, f"must be a positive number, got {v!r}")
        for key in ("momentum", "beta1", "beta2"):
            v = getattr(self, key)
            if not isinstance(v, (int, float)) or not 0 <= v < 1:
                raise ConfigError(key, f"must lie in [0, 1), got {v!r}")
        if not isinstance(self.weight_decay, (int, float)) or self.weight_decay < 0:
            raise ConfigError("weight_decay", f"must be non-negative, got {self.weight_decay!r}")
        for key in ("batch_size", "epochs"):
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(key, f"must be a positive integer, got {v!r}")
        if not isinstance(self.checkpoint_every, int) or self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every", f"must be a non-negative integer, got {self.checkpoint_every!r}")
        if self.clip is not None and (not isinstance(self.clip, (int, float)) or not self.clip > 0):
            raise ConfigError("clip", f"must be positive or null, got {self.clip!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed", f"must be an integer, got {self.seed!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``; step decay fires at each fraction in ``decay_at``."""
        if self.schedule == "constant":
            return float(self.lr)
        drops = sum(epoch >= int(round(f * self.epochs)) for f in self.decay_at)
        return float(self.lr) * self.decay_factor ** drops

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decay_at"] = list(self.decay_at)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(key, "unknown training option")
        return cls(**d)


# -- optimizers ------------------------------------------------------------------------

_BIAS_NAME = re.compile(r"(^|\.)(beta|b\d+)$")


def decays(name: str) -> bool:
    """Whether weight decay applies to the parameter called ``name``."""
    return _BIAS_NAME.search(name) is None


def _check(params, grads):
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")


def step_sgd_momentum(params: dict, grads, state: dict | None, cfg: TrainConfig, lr: float | None = None):
    """v <- mu v + g + lambda theta;  theta <- theta - eta v."""
    _check(params, grads)
    lr = cfg.lr if lr is None else lr
    state = state or {"t": 0, "v": {}}
    new_params, velocity = {}, {}
    for name, p in params.items():
        g = grads[name].data
        if cfg.weight_decay and decays(name):
            g = g + cfg.weight_decay * p.data
        v = state["v"].get(name)
        v = g if v is None else cfg.momentum * v + g
        velocity[name] = v
        new_params[name] = Tensor._wrap(p.data - lr * v)
    return new_params, {"t": state["t"] + 1, "v": velocity}


def step_adam(params: dict, grads, state: dict | None, cfg: TrainConfig, lr: float | None = None):
    """Adam with bias correction; epsilon sits under the root: theta -= eta m_hat / sqrt(v_hat + eps)."""
    _check(params, grads)
    lr = cfg.lr if lr is None else lr
    state = state or {"t": 0, "m": {}, "v": {}}
    t = state["t"] + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_params, ms, vs = {}, {}, {}
    for name, p in params.items():
        g = grads[name].data
        if cfg.weight_decay and decays(name):
            g = g + cfg.weight_decay * p.data
        m = b1 * state["m"].get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state["v"].get(name, 0.0) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        ms[name], vs[name] = m, v
        new_params[name] = Tensor._wrap(p.data - lr * m_hat / np.sqrt(v_hat + cfg.eps))
    return new_params, {"t": t, "m": ms, "v": vs}


STEPS = {"sgd-momentum": step_sgd_momentum, "adam": step_adam}


def clip_gradients(grads: Gradients, threshold: float | None) -> tuple[Gradients, float]:
    """Rescale so the global L2 norm is at most ``threshold``; returns the pre-clip norm."""
    norm = grads.norm()
    if threshold is None or norm <= threshold:
        return grads, norm
    factor = threshold / norm
    return Gradients({k: Tensor._wrap(g.data * factor) for k, g in grads.items()}), norm


# -- metrics ------------------------------------------------------------------------------


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, row: dict, seconds: float) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epoch indices must increase")
        self.rows.append(row)
        self.seconds.append(seconds)

    @property
    def last(self) -> dict:
        return self.rows[-1]

    def to_csv(self) -> str:
        """Deterministic metrics table (wall-clock excluded; see :meth:`timing_csv`)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row.get(c)) for c in METRIC_COLUMNS])
        return buf.getvalue()

    def timing_csv(self) -> str:
        lines = ["epoch,seconds"]
        lines += [f"{r['epoch']},{s:.6f}" for r, s in zip(self.rows, self.seconds)]
        return "\n".join(lines) + "\n"

    def write(self, directory) -> None:
        directory = Path(directory)
        atomic_write_bytes(directory / "metrics.csv", self.to_csv().encode())
        atomic_write_bytes(directory / "timing.csv", self.timing_csv().encode())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- loop --------------------------------------------------------------------------------


def _loss_value(pred: np.ndarray, target: np.ndarray, loss: str) -> float:
    if loss == "mse":
        d = pred - target
        return float((d * d).sum() / d.size)
    z = pred - pred.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-(target * logp).sum() / pred.shape[0])


def evaluate(model: ProductNet, data: Dataset, loss: str = "mse", chunk: int = 2048) -> dict:
    """Mean loss over ``data`` (and argmax accuracy for classification); never mutates ``model``."""
    if data.input_dim != model.input_dim or data.output_dim != model.output_dim:
        raise ShapeError(
            f"dataset is {data.input_dim}->{data.output_dim}, model is {model.input_dim}->{model.output_dim}"
        )
    x, y = data.features.data, data.labels.data
    preds = np.concatenate([forward_product(model, Tensor(x[i:i + chunk])).data
                            for i in range(0, len(data), chunk)])
    out = {"loss": _loss_value(preds, y, loss), "n": len(data)}
    if data.task == "classification":
        out["accuracy"] = float(np.mean(preds.argmax(axis=1) == y.argmax(axis=1)))
    return out


def param_norm(params: dict) -> float:
    return float(np.sqrt(sum(float(np.dot(p.flat(), p.flat())) for p in params.values())))


def training_graph(model: ProductNet, loss: str) -> Graph:
    g, _, out = model.build_graph()
    y = g.input("y")
    g.output = g.mse(out, y) if loss == "mse" else g.softmax_cross_entropy(out, y)
    return g


def train(model: ProductNet, data: Dataset, cfg: TrainConfig, eval_data: Dataset | None = None,
          checkpoint_dir=None, log_fn=None) -> tuple[ProductNet, MetricsLog]:
    """Minibatch training, deterministic given ``cfg.seed`` and the initial model.

    Raises :class:`TrainingDiverged` as soon as a batch loss is non-finite.
    """
    cfg.validate()
    # overflow inside a diverging run is reported through TrainingDiverged, not as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(model, data, cfg, eval_data, checkpoint_dir, log_fn)


def _train(model, data, cfg, eval_data, checkpoint_dir, log_fn):
    if data.input_dim != model.input_dim or data.output_dim != model.output_dim:
        raise ShapeError(
            f"dataset is {data.input_dim}->{data.output_dim}, model is {model.input_dim}->{model.output_dim}"
        )
    graph = training_graph(model, cfg.loss)
    params = model.params()
    step = STEPS[cfg.optimizer]
    rng = np.random.default_rng(cfg.seed)
    x, y = data.features.data, data.labels.data
    n = len(data)
    state = None
    log = MetricsLog()
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        gnorms = []
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss = graph.forward({"z": Tensor._wrap(x[idx]), "y": Tensor._wrap(y[idx]), **params}).item()
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch + 1, loss)
            grads, gnorm = clip_gradients(graph.backward(), cfg.clip)
            if not math.isfinite(gnorm):
                raise TrainingDiverged(epoch + 1, gnorm)
            gnorms.append(gnorm)
            params, state = step(params, grads, state, cfg, lr)
        model = model.with_params(params)
        tr = evaluate(model, data, cfg.loss)
        if not math.isfinite(tr["loss"]):
            raise TrainingDiverged(epoch + 1, tr["loss"])
        row = {"epoch": epoch + 1, "lr": lr, "train_loss": tr["loss"],
               "train_accuracy": tr.get("accuracy"), "eval_loss": None, "eval_accuracy": None,
               "param_norm": param_norm(params), "grad_norm": float(np.mean(gnorms))}
        if eval_data is not None:
            ev = evaluate(model, eval_data, cfg.loss)
            row["eval_loss"], row["eval_accuracy"] = ev["loss"], ev.get("accuracy")
        log.append(row, time.perf_counter() - start)
        if log_fn:
            log_fn(row)
        if checkpoint_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"epoch{epoch + 1:04d}.pinet", model, {"epoch": epoch + 1})
    return model, log
