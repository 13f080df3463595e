"""Spike-count loss, Adam, and the BPTT training loop with learning-rate sweep."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, backward, scale, softmax_cross_entropy, time_sum, zero_grad
from .data import DatasetSplit, rate_encode
from .models import HwAwareMLP, Model
from .snn import LifParams, forward, sample_errors

log = logging.getLogger(__name__)

LOSSES = ("counts", "membrane")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 512
    learning_rates: tuple[float, ...] = (0.03, 0.003, 0.0003)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 100
    delta_t: float = 1.0
    tau: float = 10.0
    u_thr: float = 1.0
    surrogate_slope: float = 25.0
    alpha_train: float = 0.1
    literal_mean: bool = False
    loss: str = "counts"
    cache_encodings: bool = False
    noisy_validation: bool = True
    micro_batch: int = 32
    eval_batch_size: int = 64

    def __post_init__(self):
        self.learning_rates = tuple(float(lr) for lr in self.learning_rates)
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.steps < 1 or self.micro_batch < 1:
            raise ValueError("epochs >= 0 and batch_size, micro_batch, steps >= 1 are required")

    def lif(self) -> LifParams:
        return LifParams(tau=self.tau, delta_t=self.delta_t, u_thr=self.u_thr,
                         surrogate_slope=self.surrogate_slope)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learning_rates"] = list(self.learning_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


class TrainingDiverged(RuntimeError):
    pass


class SweepFailed(RuntimeError):
    pass


def spike_count_loss(output: Tensor, labels, steps: int, loss: str = "counts") -> Tensor:
    """Cross entropy of the softmaxed output spike counts, batch-averaged.

    ``output`` is the flattened ``(T*B, C)`` readout.  With
    ``loss="membrane"`` the readout is taken to be membrane potentials and
    the cross entropy is averaged over every time step instead.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if loss == "counts":
        return softmax_cross_entropy(time_sum(output, steps), labels)
    if loss == "membrane":
        return softmax_cross_entropy(output, np.tile(labels, steps))
    raise ValueError(f"unknown loss {loss!r}")


def readout_for(loss: str) -> str:
    return "membrane" if loss == "membrane" else "spikes"


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and a new state."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("parameter, gradient and state lists differ in length")
    step = state.step + 1
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, step)


class Adam:
    """Adam over a fixed list of leaf tensors, reading their ``.grad``."""

    def __init__(self, params: Sequence[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.zeros_like([p.values for p in self.params])

    def step(self) -> None:
        grads = [np.zeros_like(p.values) if p.grad is None else p.grad for p in self.params]
        new, self.state = adam_step([p.values for p in self.params], grads, self.state,
                                    self.lr, self.beta1, self.beta2, self.eps)
        for p, v in zip(self.params, new):
            p.values = v

    def zero_grad(self) -> None:
        zero_grad(self.params)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_val_loss(self) -> float:
        return self.records[-1].val_loss if self.records else math.nan

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_acc"]
        lines += [f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_acc!r}" for r in self.records]
        return "\n".join(lines) + "\n"

    def to_list(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_list(cls, rows) -> "History":
        return cls([EpochRecord(**r) for r in rows])


def inference_weights(model: Model) -> list[Tensor]:
    return [w.detach() for w in model.weights()]


def _train_noise(model: Model, cfg: TrainConfig):
    if isinstance(model, HwAwareMLP):
        return model.alpha_train
    return None


def evaluate_split(model: Model, split: DatasetSplit, cfg: TrainConfig, encoded: np.ndarray,
                   noise_rng: np.random.Generator | None = None,
                   alpha: float | None = None) -> tuple[float, float]:
    """Mean loss and accuracy over pre-encoded ``(T, B, 4)`` trains.

    With ``alpha`` set, each evaluation batch sees a fresh mismatch draw.
    """
    weights = inference_weights(model)
    readout = readout_for(cfg.loss)
    total_loss, correct = 0.0, 0
    n = len(split)
    for start in range(0, n, cfg.eval_batch_size):
        sl = slice(start, min(n, start + cfg.eval_batch_size))
        errors = None
        if alpha is not None:
            errors = sample_errors([w.values for w in weights], alpha, noise_rng, cfg.literal_mean)
        out = forward(model, encoded[:, sl], errors=errors, readout=readout, weights=weights)
        labels = split.labels[sl]
        total_loss += spike_count_loss(out, labels, cfg.steps, cfg.loss).item() * len(labels)
        scores = time_sum(out, cfg.steps).values
        correct += int((np.argmax(scores, axis=1) == labels).sum())
    return total_loss / n, correct / n


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def train_model(model: Model, splits: dict[str, DatasetSplit], cfg: TrainConfig, lr: float,
                seed: int, val_seed: int | None = None,
                progress: Callable[[EpochRecord], None] | None = None) -> tuple[Model, History]:
    """Train ``model`` in place with Adam on the training split.

    Each epoch reshuffles and re-encodes the training split (unless
    ``cfg.cache_encodings``) and records the validation loss.  The
    hardware-aware family draws a fresh mismatch sample per forward pass.
    Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    train, val = splits["training"], splits["validation"]
    shuffle_rng, encode_rng, noise_rng = _streams(seed, 3)
    val_seed = seed if val_seed is None else val_seed
    val_encode_rng, _ = _streams(val_seed + 1, 2)
    val_encoded = rate_encode(val.features, cfg.steps, val_encode_rng)
    alpha = _train_noise(model, cfg)
    val_alpha = alpha if cfg.noisy_validation else None
    readout = readout_for(cfg.loss)
    opt = Adam(model.parameters(), lr, cfg.beta1, cfg.beta2, cfg.eps)
    history = History()
    cached = rate_encode(train.features, cfg.steps, encode_rng) if cfg.cache_encodings else None
    n = len(train)
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        if cached is None:
            encoded = rate_encode(train.features[perm], cfg.steps, encode_rng)
        else:
            encoded = cached[:, perm]
        labels = train.labels[perm]
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            stop = min(n, start + cfg.batch_size)
            opt.zero_grad()
            weights = model.weights()
            errors = None
            if alpha is not None:
                errors = sample_errors([w.values for w in weights], alpha, noise_rng, cfg.literal_mean)
            # gradient accumulation over cache-sized chunks; the batch mean is unchanged
            batch_loss = 0.0
            for lo in range(start, stop, cfg.micro_batch):
                hi = min(stop, lo + cfg.micro_batch)
                out = forward(model, encoded[:, lo:hi], errors=errors, readout=readout, weights=weights)
                loss = spike_count_loss(out, labels[lo:hi], cfg.steps, cfg.loss)
                frac = (hi - lo) / (stop - start)
                batch_loss += loss.item() * frac
                backward(scale(loss, frac))
            # spikes hide NaN potentials from the loss, so the gradients are checked too
            grads_ok = all(p.grad is None or np.isfinite(p.grad).all() for p in opt.params)
            if not (math.isfinite(batch_loss) and grads_ok):
                what = f"loss {batch_loss}" if grads_ok else "gradient"
                raise TrainingDiverged(f"non-finite {what} at epoch {epoch}, "
                                       f"batch starting {start}, lr={lr}")
            opt.step()
            if not all(np.isfinite(p.values).all() for p in opt.params):
                raise TrainingDiverged(f"non-finite parameters after the update at epoch {epoch}, "
                                       f"batch starting {start}, lr={lr}")
            running += batch_loss * (stop - start)
        val_noise = np.random.default_rng(val_seed) if val_alpha is not None else None
        val_loss, val_acc = evaluate_split(model, val, cfg, val_encoded, val_noise, val_alpha)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}, lr={lr}")
        rec = EpochRecord(epoch, running / n, val_loss, val_acc)
        history.records.append(rec)
        log.debug("epoch %d lr=%g train=%.4f val=%.4f acc=%.4f", epoch, lr,
                  rec.train_loss, rec.val_loss, rec.val_acc)
        if progress is not None:
            progress(rec)
    return model, history


@dataclass
class ArmResult:
    lr: float
    model: Model | None
    history: History | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.history is not None


def select_arm(arms: Sequence[ArmResult]) -> ArmResult:
    """Lowest final validation loss; ties go to the smaller learning rate."""
    ok = [a for a in arms if a.ok and math.isfinite(a.history.final_val_loss)]
    if not ok:
        detail = "; ".join(f"lr={a.lr}: {a.error or 'no history'}" for a in arms)
        raise SweepFailed(f"every sweep arm failed ({detail})")
    return min(ok, key=lambda a: (a.history.final_val_loss, a.lr))


def run_arm(factory: Callable[[], Model], splits, cfg: TrainConfig, lr: float, seed: int,
            val_seed: int | None = None) -> ArmResult:
    model = factory()
    try:
        model, history = train_model(model, splits, cfg, lr, seed, val_seed)
    except TrainingDiverged as exc:
        log.warning("sweep arm lr=%g diverged: %s", lr, exc)
        return ArmResult(lr, None, None, str(exc))
    return ArmResult(lr, model, history)


def sweep_and_select(factory: Callable[[], Model], splits, cfg: TrainConfig,
                     lrs: Sequence[float] | None = None, seeds: Sequence[int] | None = None,
                     val_seed: int = 0) -> tuple[ArmResult, list[ArmResult]]:
    """Train one fresh model per learning rate and keep the best arm."""
    lrs = list(cfg.learning_rates if lrs is None else lrs)
    if not lrs:
        raise ValueError("learning-rate sweep needs at least one rate")
    seeds = list(range(len(lrs))) if seeds is None else list(seeds)
    arms = [run_arm(factory, splits, cfg, lr, s, val_seed) for lr, s in zip(lrs, seeds)]
    return select_arm(arms), arms
