"""Pretraining loop: AdamW, cosine annealing, checkpoints, metrics.

One training step draws a shuffled batch of augmented view pairs, runs
encoder and Gaussian head, samples latents through the reparameterization
trick, backpropagates the total loss and applies a fused AdamW update.
Every stream of randomness (batch order, per-sample augmentation, the
sampling noise xi) is keyed by the run seed plus structural indices
(epoch, sample, step, view), never by call order, so a run is both
reproducible and resumable: restarting from a checkpoint at step t
replays exactly the steps an uninterrupted run would have taken.

A non-finite loss aborts immediately with NanLossError carrying a
diagnostic snapshot; nothing is written past the last good checkpoint.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vcl import kernels
from vcl.autograd import Tensor
from vcl.config import RunConfig
from vcl.datasets import (LabeledDataset, batches, generate_synthetic,
                          inject_outliers)
from vcl.losses import LossBreakdown, nt_xent_cosine, total_loss
from vcl.model import (EncoderConfig, GaussianParams, encode, gaussian_head,
                       init_params, reparameterize)

CKPT_MAGIC = b"VCLC"
CKPT_VERSION = 1


class NanLossError(RuntimeError):
    """Loss became non-finite; diagnostics holds the failing step's state."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class CheckpointError(ValueError):
    """Checkpoint file violates the container format."""


@dataclass(frozen=True)
class Schedule:
    base_lr: float
    min_lr: float
    total_steps: int

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if not (0.0 <= self.min_lr <= self.base_lr):
            raise ValueError(
                f"min_lr must lie in [0, base_lr], got {self.min_lr}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")


def cosine_lr(sched: Schedule, t: int) -> float:
    """Learning rate at step t of a half-cosine decay from base to min."""
    if not (0 <= t <= sched.total_steps):
        raise ValueError(
            f"step {t} outside schedule range [0, {sched.total_steps}]")
    span = sched.base_lr - sched.min_lr
    return sched.min_lr + 0.5 * span * (1.0 + math.cos(
        math.pi * t / sched.total_steps))


@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


def init_optim_state(params: dict[str, Tensor], lr: float = 1e-3,
                     beta1: float = 0.9, beta2: float = 0.999,
                     eps: float = 1e-8,
                     weight_decay: float = 0.01) -> OptimState:
    return OptimState(
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
        t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        weight_decay=weight_decay)


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: OptimState,
               lr: float | None = None) -> tuple[dict[str, Tensor], OptimState]:
    """One decoupled-weight-decay Adam update over a named parameter dict.

    Out of place: returns fresh Tensors and a fresh state with t + 1.
    The step count is shared across parameters, as all of them update on
    every call.
    """
    if set(grads) != set(params):
        raise KeyError("grads must cover exactly the parameter names")
    eff_lr = state.lr if lr is None else float(lr)
    t = state.t + 1
    new_params: dict[str, Tensor] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        p2, m2, v2 = kernels.adamw_update(
            p.data, grads[name], state.m[name], state.v[name], t,
            eff_lr, state.beta1, state.beta2, state.eps, state.weight_decay)
        new_params[name] = Tensor(p2, requires_grad=True)
        new_m[name] = m2
        new_v[name] = v2
    return new_params, OptimState(
        m=new_m, v=new_v, t=t, lr=state.lr, beta1=state.beta1,
        beta2=state.beta2, eps=state.eps, weight_decay=state.weight_decay)


# ---------------------------------------------------------------------------
# deterministic stream derivation

def _epoch_seed(run_seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence(
        [run_seed, 3, epoch]).generate_state(1, np.uint64)[0])


def _outlier_seed(gen_seed: int) -> int:
    return int(np.random.SeedSequence(
        [gen_seed, 4]).generate_state(1, np.uint64)[0])


def _draw_xi(run_seed: int, step: int, n_views: int, dim: int) -> np.ndarray:
    """Sampling noise, one stream per (seed, step, view index)."""
    out = np.empty((n_views, dim), dtype=np.float32)
    for i in range(n_views):
        rng = np.random.default_rng([run_seed, 2, step, i])
        out[i] = rng.standard_normal(dim).astype(np.float32)
    return out


def build_dataset(run: RunConfig) -> LabeledDataset:
    ds = generate_synthetic(run.data.gen)
    if run.data.rho > 0:
        ds = inject_outliers(ds, run.data.rho,
                             _outlier_seed(run.data.gen.seed),
                             run.data.outlier_mode)
    return ds


def encoder_config_for_run(run: RunConfig) -> EncoderConfig:
    g = run.data.gen
    oh, ow = run.augment.crop_out
    return EncoderConfig(input_shape=(g.channels, oh, ow),
                         hidden_dims=tuple(run.model.hidden_dims),
                         embed_dim=run.model.embed_dim)


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    state: OptimState
    step: int
    step_records: list = field(default_factory=list)
    epoch_records: list = field(default_factory=list)
    checkpoint_path: Path | None = None
    dataset: LabeledDataset | None = None


def _loss_for_batch(run: RunConfig, params: dict[str, Tensor], batch,
                    step: int) -> tuple[Tensor, LossBreakdown, GaussianParams]:
    h = encode(params, batch.views)
    g = gaussian_head(params, h)
    if run.objective == "vcl_beta":
        xi = _draw_xi(run.seed, step, batch.views.shape[0],
                      run.model.head_dim)
        z = reparameterize(g, xi, run.model.reparam_mode)
        loss, detail = total_loss(z, g, batch.partner, run.loss)
    else:
        loss = nt_xent_cosine(g.mu, batch.partner, run.loss.tau)
        val = float(loss.data)
        detail = LossBreakdown(l_beta=val, l_dist=0.0, l_norm=0.0, total=val)
    return loss, detail, g


def pretrain(run: RunConfig, out_dir=None, resume=None,
             dataset: LabeledDataset | None = None) -> TrainResult:
    """Run the pretraining loop for ``run.steps`` optimizer steps.

    When ``out_dir`` is given, periodic checkpoints (every
    ``checkpoint_every`` epochs) and a final ``checkpoint.vclc`` are
    written there. ``resume`` restores params and optimizer state from a
    checkpoint and continues at its recorded step on the same seed
    streams, which reproduces the uninterrupted run exactly.
    """
    ds = dataset if dataset is not None else build_dataset(run)
    enc_cfg = encoder_config_for_run(run)
    spe = len(ds) // run.batch_n
    if spe < 1:
        raise ValueError(
            f"dataset of {len(ds)} rows cannot fill a batch of {run.batch_n}")

    if resume is not None:
        ck = load_checkpoint(resume)
        params = ck.params
        if ck.step >= run.steps:
            raise ValueError(
                f"checkpoint step {ck.step} is past the budget {run.steps}")
        state = OptimState(m=ck.m, v=ck.v, t=ck.step, lr=run.optim.lr,
                           beta1=run.optim.beta1, beta2=run.optim.beta2,
                           eps=run.optim.eps,
                           weight_decay=run.optim.weight_decay)
        step = ck.step
    else:
        params = init_params(enc_cfg, run.model.head_dim, run.seed)
        state = init_optim_state(
            params, lr=run.optim.lr, beta1=run.optim.beta1,
            beta2=run.optim.beta2, eps=run.optim.eps,
            weight_decay=run.optim.weight_decay)
        step = 0

    sched = Schedule(base_lr=run.optim.lr,
                     min_lr=run.schedule.min_lr,
                     total_steps=run.steps)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    step_records: list[dict] = []
    epoch_records: list[dict] = []
    epoch = step // spe
    while step < run.steps:
        ep_seed = _epoch_seed(run.seed, epoch)
        skip = step - epoch * spe
        ep_totals: list[LossBreakdown] = []
        ep_wall = 0.0
        interrupted = False
        for bi, batch in enumerate(batches(ds, run.batch_n, run.augment,
                                           ep_seed)):
            if bi < skip:
                continue
            if step >= run.steps:
                interrupted = True
                break
            t0 = time.perf_counter()
            lr_t = cosine_lr(sched, step)
            loss, detail, _ = _loss_for_batch(run, params, batch, step)
            if not math.isfinite(detail.total):
                raise NanLossError(
                    f"non-finite loss at step {step}",
                    {"step": step, "l_beta": detail.l_beta,
                     "l_dist": detail.l_dist, "l_norm": detail.l_norm,
                     "total": detail.total,
                     "views_min": float(batch.views.min()),
                     "views_max": float(batch.views.max())})
            loss.backward()
            grads = {k: (p.grad if p.grad is not None
                         else np.zeros_like(p.data))
                     for k, p in params.items()}
            params, state = adamw_step(params, grads, state, lr=lr_t)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            step_records.append({
                "step": step, "lr": lr_t, "l_beta": detail.l_beta,
                "l_dist": detail.l_dist, "l_norm": detail.l_norm,
                "total": detail.total, "wall_ms": wall_ms})
            ep_totals.append(detail)
            ep_wall += wall_ms
            step += 1
        if ep_totals:
            n = len(ep_totals)
            epoch_records.append({
                "epoch": epoch, "steps": n,
                "mean_total": sum(d.total for d in ep_totals) / n,
                "mean_l_beta": sum(d.l_beta for d in ep_totals) / n,
                "mean_l_dist": sum(d.l_dist for d in ep_totals) / n,
                "mean_l_norm": sum(d.l_norm for d in ep_totals) / n,
                "wall_ms": ep_wall})
        finished_epoch = not interrupted and step == (epoch + 1) * spe
        if (out_path is not None and finished_epoch
                and run.checkpoint_every > 0
                and (epoch + 1) % run.checkpoint_every == 0
                and step < run.steps):
            save_checkpoint(out_path / f"ckpt_epoch{epoch:04d}.vclc",
                            params, state, step)
        epoch += 1

    final = None
    if out_path is not None:
        final = out_path / "checkpoint.vclc"
        save_checkpoint(final, params, state, step)
    return TrainResult(params=params, state=state, step=step,
                       step_records=step_records,
                       epoch_records=epoch_records,
                       checkpoint_path=final, dataset=ds)


# ---------------------------------------------------------------------------
# checkpoint container

@dataclass(frozen=True)
class CheckpointData:
    step: int
    params: dict[str, Tensor]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def _write_block(fh, arrays: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise CheckpointError(f"name too long: {name[:32]}...")
        fh.write(struct.pack("<H", len(nb)))
        fh.write(nb)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(
            f"truncated checkpoint: wanted {n} bytes for {what} at offset "
            f"{fh.tell() - len(buf)}")
    return buf


def _read_block(fh) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(fh, 4, "block count"))
    if count > 100000:
        raise CheckpointError(f"implausible tensor count {count}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
        name = _read_exact(fh, nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
        if rank > 4:
            raise CheckpointError(f"implausible rank {rank} for {name!r}")
        shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "shape"))
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(_read_exact(fh, 4 * n, f"data of {name!r}"),
                             dtype="<f4").reshape(shape).copy()
        if name in out:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        out[name] = data
    return out


def save_checkpoint(path, params: dict[str, Tensor], state: OptimState,
                    step: int) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, step))
        _write_block(fh, {k: p.data for k, p in params.items()})
        _write_block(fh, state.m)
        _write_block(fh, state.v)


def load_checkpoint(path) -> CheckpointData:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CKPT_MAGIC:
            raise CheckpointError(
                f"bad magic at offset 0: {magic!r}, expected {CKPT_MAGIC!r}")
        version, step = struct.unpack("<IQ", _read_exact(fh, 12, "header"))
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported version {version}")
        raw_params = _read_block(fh)
        m = _read_block(fh)
        v = _read_block(fh)
        if fh.read(1):
            raise CheckpointError(f"trailing bytes at offset {fh.tell() - 1}")
    if set(m) != set(raw_params) or set(v) != set(raw_params):
        raise CheckpointError("optimizer blocks do not match parameter names")
    params = {k: Tensor(arr, requires_grad=True)
              for k, arr in raw_params.items()}
    return CheckpointData(step=int(step), params=params, m=m, v=v)
