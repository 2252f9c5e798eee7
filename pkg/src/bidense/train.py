"""Adam optimizer, step-halving learning-rate schedule, and the training loop.

Training recipe: batches of random aligned RGB patch pairs, mean absolute
error on the raw (unclamped) network output, Adam with beta1=0.9,
beta2=0.999, eps=1e-8, learning rate 1e-4 halved every 2e5 updates over
1e6 total updates.  Each step draws its sampler from (seed, step), so
runs are replayable from any checkpoint without carrying RNG state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tape, Tensor, l1_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetIndex, batch_to_tensors, sample_batch
from .model import ModelConfig, Network, build_network, forward

__all__ = [
    "AdamState",
    "TrainSchedule",
    "TrainingDiverged",
    "adam_step",
    "lr_at",
    "train",
    "TrainResult",
    "training_patch_psnr",
]

LOSS_LOG_NAME = "loss.csv"
OPT_STATE_SUFFIX = ".opt.npz"


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries the offending step."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass
class TrainSchedule:
    lr0: float = 1e-4
    halve_every: int = 200_000
    total_steps: int = 1_000_000
    batch: int = 16
    hr_patch: int = 96

    def __post_init__(self):
        for name in ("lr0", "halve_every", "batch", "hr_patch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")


def lr_at(step: int, sched: TrainSchedule) -> float:
    """Piecewise-constant rate: lr0 * 0.5^floor(step / halve_every)."""
    if not 0 <= step < sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps})")
    return sched.lr0 * 0.5 ** (step // sched.halve_every)


class AdamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    def __init__(self, params: list[Tensor]):
        self.m = [np.zeros_like(t.data) for t in params]
        self.v = [np.zeros_like(t.data) for t in params]
        self.t = 0

    def save(self, path) -> None:
        arrays = {f"m_{i}": m for i, m in enumerate(self.m)}
        arrays.update({f"v_{i}": v for i, v in enumerate(self.v)})
        arrays["t"] = np.asarray(self.t, dtype=np.int64)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, params: list[Tensor]) -> "AdamState":
        state = cls(params)
        with np.load(path) as data:
            state.t = int(data["t"])
            for i, t in enumerate(params):
                m, v = data[f"m_{i}"], data[f"v_{i}"]
                if m.shape != t.data.shape or v.shape != t.data.shape:
                    raise ValueError(
                        f"optimizer state shape {m.shape} does not match "
                        f"parameter {i} shape {t.data.shape}"
                    )
                state.m[i] = m
                state.v[i] = v
        return state


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place, no weight decay."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must have matching lengths")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class TrainResult:
    network: Network
    steps_run: int
    final_loss: float | None
    loss_csv: Path
    checkpoints: list[Path] = field(default_factory=list)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    # sampler is a pure function of (seed, step); resume needs no RNG state
    return np.random.default_rng(np.random.SeedSequence([seed, step]))


def train(cfg: ModelConfig, index: DatasetIndex, sched: TrainSchedule, seed: int,
          out_dir, *, checkpoint_every: int = 1000, log_every: int = 1,
          resume=None, deterministic: bool = True) -> TrainResult:
    """Run the training loop, emitting a loss CSV and periodic checkpoints.

    ``resume`` takes a checkpoint path written by a previous run; its
    optimizer sidecar must sit next to it.  In deterministic mode an
    interrupted-and-resumed run replays the uninterrupted step sequence
    exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        net = load_checkpoint(resume)
        if net.config != cfg:
            raise ValueError(
                f"checkpoint config {net.config} does not match requested {cfg}"
            )
        params = [t for _, t in net.parameters()]
        opt_path = Path(str(resume) + OPT_STATE_SUFFIX)
        if not opt_path.is_file():
            raise FileNotFoundError(
                f"missing optimizer sidecar {opt_path}; cannot resume exactly"
            )
        state = AdamState.load(opt_path, params)
    else:
        net = build_network(cfg, rng_seed=seed)
        params = [t for _, t in net.parameters()]
        state = AdamState(params)

    def save_at(step_count: int) -> Path:
        path = out_dir / f"checkpoint_{step_count:07d}.ckpt"
        save_checkpoint(path, net)
        state.save(str(path) + OPT_STATE_SUFFIX)
        return path

    checkpoints = [save_at(state.t)]
    start = state.t
    final_loss = None
    log_path = out_dir / LOSS_LOG_NAME
    with open(log_path, "w") as log:
        log.write("step,lr,loss\n")
        for step in range(start, sched.total_steps):
            rng = _step_rng(seed, step)
            pairs = sample_batch(index, cfg.scale, sched.batch, rng, sched.hr_patch)
            x, y = batch_to_tensors(pairs)
            net.zero_grad()
            with Tape() as tape:
                pred = forward(net, x)
                loss = l1_loss(pred, y)
                tape.backward(loss)
            loss_value = loss.item()
            lr = lr_at(step, sched)
            if step % log_every == 0:
                log.write(f"{step},{lr:.10g},{loss_value:.10g}\n")
            if not math.isfinite(loss_value):
                log.flush()
                raise TrainingDiverged(step, loss_value)
            grads = [t.grad for t in params]
            adam_step(params, grads, state, lr)
            final_loss = loss_value
            if checkpoint_every and (step + 1) % checkpoint_every == 0:
                checkpoints.append(save_at(step + 1))
    if state.t > start and (not checkpoint_every or state.t % checkpoint_every):
        checkpoints.append(save_at(state.t))
    return TrainResult(net, state.t - start, final_loss, log_path, checkpoints)


def training_patch_psnr(net: Network, index: DatasetIndex, seed: int = 0,
                        batch: int = 16, hr_patch: int = 96) -> float:
    """Mean RGB PSNR (dB, 255 peak) of the net on a deterministic patch batch."""
    rng = _step_rng(seed, 0)
    pairs = sample_batch(index, net.config.scale, batch, rng, hr_patch)
    x, y = batch_to_tensors(pairs)
    pred = np.clip(forward(net, x).data, 0.0, 1.0)
    mse = float(np.mean((pred.astype(np.float64) - y.data) ** 2)) * 255.0 ** 2
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)
