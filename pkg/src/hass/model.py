"""Classifier heads on top of the encoder, cross-entropy training, and prediction."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import EpochRecord, stack
from .encoder import HassEncoderParams, encode, encoder_from_named, glorot
from .seeding import stream
from .stages import N_STAGES, SleepStage

logger = logging.getLogger(__name__)

HEAD_KINDS = ("linear", "tinyconv")
CONV_KERNEL = 5
CONV_FILTERS = 8


class NumericalError(RuntimeError):
    pass


@dataclass
class ClassifierParams:
    """A linear or tiny convolutional head producing 5 stage logits.

    ``linear``: ``w (5 x C*T*D)``, ``b (5)`` on the flattened record.
    ``tinyconv``: ``conv_w (F x C*D*k)``, ``conv_b (F)`` for a valid 1-D
    convolution over time, ReLU, global average pool, then ``w (5 x F)``,
    ``b (5)``.
    """

    kind: str
    tensors: dict[str, Tensor]
    input_shape: tuple[int, int, int]  # C, T, D the head was built for

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}; expected one of {HEAD_KINDS}")
        w, b = self.tensors["w"], self.tensors["b"]
        if w.shape[0] != N_STAGES or b.shape != (N_STAGES,):
            raise ValueError(f"head output dimension must be {N_STAGES}, got {w.shape}")
        if self.kind == "tinyconv":
            cw, cb = self.tensors["conv_w"], self.tensors["conv_b"]
            if cb.shape != (cw.shape[0],) or w.shape[1] != cw.shape[0]:
                raise ValueError("tinyconv head shapes disagree")
            C, T, D = self.input_shape
            if cw.shape[1] != C * D * conv_kernel(T):
                raise ValueError(f"tinyconv window width {cw.shape[1]} does not match input {self.input_shape}")
        elif w.shape[1] != int(np.prod(self.input_shape)):
            raise ValueError(f"linear head width {w.shape[1]} does not match input {self.input_shape}")

    def named(self) -> dict[str, Tensor]:
        return dict(self.tensors)


def conv_kernel(timesteps: int) -> int:
    return min(CONV_KERNEL, timesteps)


def init_head(kind: str, channels: int, timesteps: int, depth: int = 1,
              seed: int | np.random.Generator = 0) -> ClassifierParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if kind == "linear":
        flat = channels * timesteps * depth
        tensors = {"w": Tensor(glorot(rng, N_STAGES, flat)), "b": Tensor(np.zeros(N_STAGES))}
    elif kind == "tinyconv":
        k = conv_kernel(timesteps)
        tensors = {
            "conv_w": Tensor(glorot(rng, CONV_FILTERS, channels * depth * k)),
            "conv_b": Tensor(np.zeros(CONV_FILTERS)),
            "w": Tensor(glorot(rng, N_STAGES, CONV_FILTERS)),
            "b": Tensor(np.zeros(N_STAGES)),
        }
    else:
        raise ValueError(f"unknown head kind {kind!r}; expected one of {HEAD_KINDS}")
    return ClassifierParams(kind, tensors, (channels, timesteps, depth))


def _dense_rows(features: Tensor, w: Tensor, b: Tensor) -> Tensor:
    # features: B x F  ->  B x out
    return ad.transpose(ad.add_bias_broadcast(ad.matmul(w, ad.transpose(features)), b))


def head_forward(x: Tensor, head: ClassifierParams) -> Tensor:
    """Logits ``B x 5`` for a batch ``B x C x T x D``."""
    B, C, T, D = x.shape
    if (C, T, D) != head.input_shape:
        raise ValueError(f"head expects {head.input_shape} records, got {(C, T, D)}")
    p = head.tensors
    if head.kind == "linear":
        return _dense_rows(ad.reshape(x, (B, C * T * D)), p["w"], p["b"])
    k = conv_kernel(T)
    series = ad.reshape(ad.transpose(x, (0, 1, 3, 2)), (B, C * D, T))
    conv = ad.add_bias_broadcast(ad.matmul(p["conv_w"], ad.sliding_windows(series, k)), p["conv_b"])
    pooled = ad.mean_last(ad.relu(conv))                      # B x F
    return _dense_rows(pooled, p["w"], p["b"])


def forward_classify(I, encoder: HassEncoderParams | None, head: ClassifierParams) -> Tensor:
    """Logits for one record (``C x T x D`` -> ``5``) or a batch (``B x ...`` -> ``B x 5``)."""
    x = I if isinstance(I, Tensor) else Tensor(I)
    single = x.ndim == 3
    if single:
        x = ad.reshape(x, (1, *x.shape))
    if x.ndim != 4:
        raise ValueError(f"expected C x T x D or B x C x T x D input, got {x.shape}")
    if encoder is not None:
        if x.shape[1:] != encoder.input_shape:
            raise ValueError(f"encoder expects {encoder.input_shape} records, got {x.shape[1:]}")
        x = encode(x, encoder)
    logits = head_forward(x, head)
    return ad.reshape(logits, (N_STAGES,)) if single else logits


def cross_entropy_loss(logits: Tensor, labels: Sequence[int]) -> Tensor:
    labels = np.asarray([int(v) for v in labels], dtype=np.int64)
    if labels.size == 0:
        raise ValueError("cross_entropy_loss: empty batch")
    return ad.cross_entropy(logits, labels)


# ---------------------------------------------------------------- optimizers


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    use_hass: bool = True

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: list[Tensor], lr: float):
        self.params, self.lr = params, lr

    def step(self, grads: list[np.ndarray]) -> None:
        for p, g in zip(self.params, grads):
            p.data -= self.lr * g


# ---------------------------------------------------------------- training


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    encoder: HassEncoderParams | None
    head: ClassifierParams
    trace: list[EpochStats] = field(default_factory=list)


def _as_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple):
        x, y = dataset
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)
    return stack(list(dataset))


def _clone(params):
    return copy.deepcopy(params)


def model_tensors(encoder: HassEncoderParams | None, head: ClassifierParams) -> dict[str, Tensor]:
    """All trainable tensors under their model-file names."""
    out = {}
    if encoder is not None:
        out.update({f"enc.{k}": v for k, v in encoder.named().items()})
    out.update({f"head.{k}": v for k, v in head.named().items()})
    return out


def model_arrays(encoder: HassEncoderParams | None, head: ClassifierParams) -> dict[str, np.ndarray]:
    """Model-file contents: trainable tensors plus the head's ``input_shape`` record."""
    out = {k: v.data for k, v in model_tensors(encoder, head).items()}
    out["head.input_shape"] = np.asarray(head.input_shape, dtype=np.float64)
    return out


def model_from_tensors(arrays: dict[str, np.ndarray]) -> tuple[HassEncoderParams | None, ClassifierParams]:
    unknown = [k for k in arrays if not k.startswith(("head.", "enc."))]
    if unknown:
        raise ValueError(f"unexpected tensors in model file: {unknown[:5]}")
    if "head.input_shape" not in arrays:
        raise ValueError("model file lacks head.input_shape")
    shape = tuple(int(v) for v in np.asarray(arrays["head.input_shape"]).reshape(-1))
    if len(shape) != 3 or min(shape) < 1:
        raise ValueError(f"bad head.input_shape {shape}")
    head_t = {k[5:]: Tensor(v) for k, v in arrays.items() if k.startswith("head.") and k != "head.input_shape"}
    enc_t = {k[4:]: Tensor(v) for k, v in arrays.items() if k.startswith("enc.")}
    try:
        kind = "tinyconv" if "conv_w" in head_t else "linear"
        head = ClassifierParams(kind, head_t, shape)
        encoder = encoder_from_named(enc_t, depth=shape[2]) if enc_t else None
    except KeyError as exc:
        raise ValueError(f"model file is missing tensor {exc}") from exc
    if encoder is not None and encoder.input_shape != shape:
        raise ValueError(f"encoder input {encoder.input_shape} disagrees with head input {shape}")
    return encoder, head


def train(dataset, config: TrainConfig, encoder: HassEncoderParams | None, head: ClassifierParams,
          on_epoch: Callable[[EpochStats], None] | None = None) -> TrainResult:
    """Minibatch cross-entropy training; inputs are copied, not mutated.

    ``dataset`` is a sequence of records or an ``(x, y)`` pair. Shuffling uses
    the ``shuffle`` stream of ``config.seed``. Loss and accuracy in the trace
    are running means over each epoch's batches, measured before each update.
    """
    config.validate()
    x, y = _as_arrays(dataset)
    if len(y) == 0:
        raise ValueError("empty dataset")
    enc = _clone(encoder) if config.use_hass else None
    if config.use_hass and enc is None:
        raise ValueError("use_hass is set but no encoder parameters were given")
    hd = _clone(head)
    params = list(model_tensors(enc, hd).values())
    if config.optimizer == "adam":
        opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    else:
        opt = SGD(params, config.learning_rate)
    rng = stream(config.seed, "shuffle")
    n = len(y)
    result = TrainResult(enc, hd)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            logits = forward_classify(Tensor(x[idx]), enc, hd)
            loss = cross_entropy_loss(logits, y[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch {bi}")
            grads = ad.backward(loss, params)
            opt.step([grads[p] for p in params])
            if not all(np.all(np.isfinite(p.data)) for p in params):
                raise NumericalError(f"non-finite parameters after epoch {epoch}, batch {bi}")
            total_loss += value * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == y[idx]).sum())
        stats = EpochStats(epoch, total_loss / n, correct / n)
        result.trace.append(stats)
        logger.debug("epoch %d loss %.6f acc %.4f", epoch, stats.loss, stats.accuracy)
        if on_epoch is not None:
            on_epoch(stats)
    return result


def predict_logits(dataset, encoder: HassEncoderParams | None, head: ClassifierParams,
                   batch_size: int = 256) -> np.ndarray:
    x, _ = _as_arrays(dataset) if not isinstance(dataset, np.ndarray) else (dataset, None)
    out = []
    with ad.no_grad():
        for start in range(0, len(x), batch_size):
            out.append(forward_classify(Tensor(x[start:start + batch_size]), encoder, head).data)
    return np.concatenate(out, axis=0)


def argmax_stage(logits: np.ndarray) -> list[SleepStage]:
    """Per-row argmax; exact ties go to the lower stage code."""
    logits = np.atleast_2d(logits)
    return [SleepStage(int(i)) for i in np.argmax(logits, axis=1)]


def predict(dataset, encoder: HassEncoderParams | None, head: ClassifierParams) -> list[SleepStage]:
    return argmax_stage(predict_logits(dataset, encoder, head))
