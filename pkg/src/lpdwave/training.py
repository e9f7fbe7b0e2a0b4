"""Two-stage adversarial training of the waveform generator.

Stage one trains generator and critic on the Wasserstein objective with a
gradient penalty, alternating several critic updates per generator update.
Stage two resumes from a stage-one checkpoint and adds the ambiguity
shaping loss, scaled by eta, to the generator objective.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .ambiguity import (DopplerGrid, ThumbtackTarget, ZeroDopplerWeight,
                        ambiguity_loss)
from .iqfile import DatasetManifest
from .nn import checkpoint as ckpt
from .nn import engine
from .nn.engine import Tensor, grad, no_grad
from .nn.models import Critic, Generator, Topology
from .nn.optim import Adam, RMSProp
from .rng import Rng, STREAM_BATCH, STREAM_INIT, STREAM_INTERP, STREAM_LATENT

STAGE_ADVERSARIAL = "adversarial"
STAGE_FINETUNE = "finetune"


class NonFiniteLoss(RuntimeError):
    pass


class MissingCheckpoint(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    frame_length: int = 256
    latent_dim: int = 64
    conditional: bool = True
    width: int = 16
    mid_width: int = 16
    blocks: int = 3
    cardinality: int = 4
    kernel: int = 5

    critic_iters_per_gen: int = 5
    batch_size: int = 64
    gen_lr: float = 1e-5
    critic_lr: float = 5e-5
    lambda_gp: float = 10.0

    stage: str = STAGE_ADVERSARIAL
    adversarial_iters: int = 2000
    finetune_iters: int = 3000
    eta: float = 0.0
    chi: float = 1000.0
    gamma: float = 1000.0
    loss_doppler_slices: int = 257
    loss_max_fraction: float = 0.10

    early_stop: bool = False
    early_stop_window: int = 200
    early_stop_rel: float = 0.01

    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.gen_lr < 0 or self.critic_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if self.critic_iters_per_gen < 1:
            raise ValueError("critic_iters_per_gen must be >= 1")
        if self.stage not in (STAGE_ADVERSARIAL, STAGE_FINETUNE):
            raise ValueError(f"unknown stage {self.stage!r}")

    @property
    def cond_channels(self) -> int:
        return 2 if self.conditional else 0

    def generator_topology(self) -> Topology:
        return Topology(kind="generator", frame_length=self.frame_length,
                        latent_dim=self.latent_dim,
                        cond_channels=self.cond_channels, width=self.width,
                        mid_width=self.mid_width, blocks=self.blocks,
                        cardinality=self.cardinality, kernel=self.kernel)

    def critic_topology(self) -> Topology:
        return replace(self.generator_topology(), kind="critic")

    def loss_grid(self) -> DopplerGrid:
        return DopplerGrid(self.loss_doppler_slices, self.loss_max_fraction,
                           delay_extent=self.frame_length)


LOSS_FIELDS = ("iteration", "stage", "critic_loss", "gen_loss", "wasserstein",
               "grad_penalty", "l_main", "l_side", "l_ambig", "l_total")


@dataclass
class LossEntry:
    iteration: int
    stage: str
    critic_loss: float = math.nan
    gen_loss: float = math.nan
    wasserstein: float = math.nan
    grad_penalty: float = math.nan
    l_main: float = 0.0
    l_side: float = 0.0
    l_ambig: float = 0.0
    l_total: float = math.nan

    def row(self) -> list:
        out = []
        for name in LOSS_FIELDS:
            v = getattr(self, name)
            out.append(f"{v:.9g}" if isinstance(v, float) else v)
        return out


class LossReport:
    """Append-only per-iteration loss records with CSV persistence."""

    def __init__(self):
        self.entries: list[LossEntry] = []

    def append(self, entry: LossEntry) -> None:
        self.entries.append(entry)

    def write_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOSS_FIELDS)
            for e in self.entries:
                writer.writerow(e.row())

    def wasserstein_trace(self) -> list[float]:
        return [e.wasserstein for e in self.entries
                if not math.isnan(e.wasserstein)]


class GanDataset:
    """Training frames indexed by (class, snr) cell for condition pairing."""

    def __init__(self, frames: np.ndarray, manifest: DatasetManifest,
                 dtype=np.float32):
        frames = np.asarray(frames)
        self.frames = np.stack([frames.real, frames.imag], axis=1).astype(dtype)
        self.manifest = manifest
        cells: dict[tuple[str, float], list[int]] = {}
        for i, e in enumerate(manifest.entries):
            cells.setdefault((e.label, e.snr_db), []).append(i)
        self.cells = {k: np.asarray(v) for k, v in cells.items()}

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_length(self) -> int:
        return self.frames.shape[2]

    def sample_pairs(self, batch: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) with y a sibling frame from the same (class, snr) cell."""
        gen = rng.generator()
        xi = gen.integers(0, len(self), size=batch)
        yi = np.empty(batch, dtype=int)
        for j, i in enumerate(xi):
            e = self.manifest.entries[i]
            cell = self.cells[(e.label, e.snr_db)]
            yi[j] = cell[gen.integers(0, cell.size)]
        return self.frames[xi], self.frames[yi]

    def sample_conditions(self, count: int, rng: Rng) -> np.ndarray:
        gen = rng.generator()
        idx = gen.integers(0, len(self), size=count)
        return self.frames[idx]


@dataclass
class GanModel:
    generator: Generator
    critic: Critic
    gen_opt: Adam
    critic_opt: RMSProp
    config: TrainConfig
    iteration: int = 0
    stage: str = STAGE_ADVERSARIAL

    @staticmethod
    def initialize(config: TrainConfig) -> "GanModel":
        rng = Rng(config.seed, STREAM_INIT)
        gen = Generator(config.generator_topology(), rng.fork(1))
        critic = Critic(config.critic_topology(), rng.fork(2))
        return GanModel(
            generator=gen,
            critic=critic,
            gen_opt=Adam(gen.parameters(), config.gen_lr),
            critic_opt=RMSProp(critic.parameters(), config.critic_lr),
            config=config,
        )


def _check_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise NonFiniteLoss(f"{name} produced non-finite loss: {values}")


def _latent(config: TrainConfig, batch: int, rng: Rng) -> np.ndarray:
    return rng.generator().normal(
        size=(batch, config.latent_dim)).astype(np.float32)


def critic_step(model: GanModel, x: np.ndarray, y: Optional[np.ndarray],
                step_rng: Rng) -> LossEntry:
    """One critic update: Wasserstein surrogate plus gradient penalty.

    Interpolates are drawn per example; the penalty differentiates the
    critic twice (through the input gradient), which every layer in the
    critic supports. Generator parameters are untouched.
    """
    cfg = model.config
    batch = x.shape[0]
    cond = Tensor(y) if cfg.conditional else None
    z = _latent(cfg, batch, step_rng.fork(STREAM_LATENT))
    with no_grad():
        fake = model.generator(Tensor(z), cond)

    eps = step_rng.fork(STREAM_INTERP).generator().uniform(
        size=(batch, 1, 1)).astype(x.dtype)
    x_hat = Tensor(eps * x + (1.0 - eps) * fake.data, requires_grad=True)

    # One batched pass over [fakes; reals] (critic layers are per-example),
    # and a separate double-backward-capable pass over the interpolates.
    stacked = Tensor(np.concatenate([fake.data, x]))
    cond2 = Tensor(np.concatenate([y, y])) if cfg.conditional else None
    scores = model.critic(stacked, cond2)
    score_fake = scores[:batch]
    score_real = scores[batch:]

    score_hat = model.critic(x_hat, cond)
    gx = grad(score_hat.sum(), [x_hat], create_graph=True)[0]
    sq = (gx * gx).sum(axis=(1, 2))
    norms = engine.sqrt(sq + np.asarray(1e-12, dtype=x.dtype))
    one = Tensor(np.asarray(1.0, dtype=x.dtype))
    gp = ((norms - one) ** 2.0).mean() * Tensor(
        np.asarray(cfg.lambda_gp, dtype=x.dtype))

    w_est = score_real.mean() - score_fake.mean()
    loss = score_fake.mean() - score_real.mean() + gp

    _check_finite("critic_step", loss.item(), gp.item())
    grads = grad(loss, model.critic.parameters(), allow_unused=True)
    model.critic_opt.step(grads)
    return LossEntry(iteration=model.iteration, stage=model.stage,
                     critic_loss=loss.item(), wasserstein=w_est.item(),
                     grad_penalty=gp.item())


def generator_step(model: GanModel, y: Optional[np.ndarray],
                   step_rng: Rng) -> LossEntry:
    """One generator update; the fine-tune stage adds eta * L_ambig.

    Critic parameters are untouched.
    """
    cfg = model.config
    batch = cfg.batch_size
    cond = Tensor(y) if cfg.conditional else None
    z = _latent(cfg, batch, step_rng.fork(STREAM_LATENT))
    fake = model.generator(Tensor(z), cond)
    adv = engine.neg(model.critic(fake, cond).mean())

    eta = cfg.eta if model.stage == STAGE_FINETUNE else 0.0
    if eta > 0.0:
        l_main, l_side, l_ambig = ambiguity_loss(
            fake, ThumbtackTarget(cfg.chi), ZeroDopplerWeight(cfg.gamma),
            cfg.loss_grid())
        total = adv + Tensor(np.asarray(eta, dtype=np.float32)) * l_ambig
        lm, ls, la = l_main.item(), l_side.item(), l_ambig.item()
    else:
        total = adv
        lm = ls = la = 0.0

    _check_finite("generator_step", total.item())
    grads = grad(total, model.generator.parameters(), allow_unused=True)
    model.gen_opt.step(grads)
    return LossEntry(iteration=model.iteration, stage=model.stage,
                     gen_loss=adv.item(), l_main=lm, l_side=ls, l_ambig=la,
                     l_total=total.item())


def _early_stop(trace: list[float], window: int, rel: float) -> bool:
    if len(trace) < 2 * window:
        return False
    recent = float(np.mean(trace[-window:]))
    prior = float(np.mean(trace[-2 * window:-window]))
    return abs(recent - prior) / max(abs(prior), 1e-9) < rel


def train(
    model: GanModel,
    dataset: GanDataset,
    iterations: Optional[int] = None,
    out_dir: Optional[Path | str] = None,
    report: Optional[LossReport] = None,
) -> LossReport:
    """Alternating schedule: critic_iters_per_gen critic updates, then one
    generator update, repeated for the stage's iteration budget."""
    cfg = model.config
    if model.stage == STAGE_FINETUNE and model.iteration == 0:
        raise MissingCheckpoint(
            "fine-tune requires a model resumed from a stage-one checkpoint")
    iters = iterations if iterations is not None else (
        cfg.finetune_iters if model.stage == STAGE_FINETUNE
        else cfg.adversarial_iters)
    report = report if report is not None else LossReport()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    base = Rng(cfg.seed, STREAM_BATCH)
    for _ in range(iters):
        step_base = base.fork(model.iteration)
        for c in range(cfg.critic_iters_per_gen):
            x, y = dataset.sample_pairs(cfg.batch_size, step_base.fork(c))
            report.append(critic_step(model, x,
                                      y if cfg.conditional else None,
                                      step_base.fork(100 + c)))
        _, y = dataset.sample_pairs(cfg.batch_size, step_base.fork(50))
        report.append(generator_step(model, y if cfg.conditional else None,
                                     step_base.fork(150)))
        model.iteration += 1
        if out_dir is not None and cfg.checkpoint_every and \
                model.iteration % cfg.checkpoint_every == 0:
            save_model(out_dir / f"gen_{model.iteration:06d}.lpdw", model)
        if cfg.early_stop and _early_stop(report.wasserstein_trace(),
                                          cfg.early_stop_window,
                                          cfg.early_stop_rel):
            break
    if out_dir is not None:
        save_model(out_dir / "gen_final.lpdw", model)
        save_model(out_dir / "critic_final.lpdw", model, which="critic")
        report.write_csv(out_dir / "losses.csv")
    return report


def finetune(
    generator_path: Path | str,
    critic_path: Path | str,
    dataset: GanDataset,
    config: TrainConfig,
    iterations: Optional[int] = None,
    out_dir: Optional[Path | str] = None,
) -> tuple[GanModel, LossReport]:
    """Resume a stage-one checkpoint and continue with the ambiguity loss."""
    generator_path = Path(generator_path)
    if not generator_path.exists():
        raise MissingCheckpoint(f"missing stage-one checkpoint {generator_path}")
    config = replace(config, stage=STAGE_FINETUNE)
    model = GanModel.initialize(config)
    model.generator = ckpt.load(generator_path, expect_kind="generator")
    model.critic = ckpt.load(critic_path, expect_kind="critic")
    model.gen_opt = Adam(model.generator.parameters(), config.gen_lr)
    model.critic_opt = RMSProp(model.critic.parameters(), config.critic_lr)
    model.stage = STAGE_FINETUNE
    model.iteration = 1  # resumed
    report = train(model, dataset, iterations=iterations, out_dir=out_dir)
    return model, report


def save_model(path: Path | str, model: GanModel, which: str = "generator",
               with_optimizer: bool = False) -> None:
    if which == "generator":
        ckpt.save(path, model.generator,
                  model.gen_opt if with_optimizer else None)
    elif which == "critic":
        ckpt.save(path, model.critic,
                  model.critic_opt if with_optimizer else None)
    else:
        raise ValueError(which)


def generate(
    generator_path: Path | str,
    conditions: Optional[np.ndarray],
    count: int,
    seed: int,
) -> np.ndarray:
    """Frames from a saved generator checkpoint: [count, n] complex64."""
    gen_net = ckpt.load(generator_path, expect_kind="generator")
    return generate_with(gen_net, conditions, count, seed)


def generate_with(
    gen_net: Generator,
    conditions: Optional[np.ndarray],
    count: int,
    seed: int,
    batch: int = 256,
) -> np.ndarray:
    """Sample `count` frames in eval mode; conditions are cycled to length."""
    topo = gen_net.topo
    was_training = gen_net.training
    gen_net.eval()
    if topo.cond_channels:
        if conditions is None:
            raise engine.ShapeMismatch("generator requires condition frames")
        conditions = np.asarray(conditions, dtype=np.float32)
        reps = int(np.ceil(count / conditions.shape[0]))
        conditions = np.tile(conditions, (reps, 1, 1))[:count]
    out = np.empty((count, topo.frame_length), dtype=np.complex64)
    rng = Rng(seed, STREAM_LATENT)
    with no_grad():
        for start in range(0, count, batch):
            stop = min(start + batch, count)
            z = rng.fork(start).generator().normal(
                size=(stop - start, topo.latent_dim)).astype(np.float32)
            cond = Tensor(conditions[start:stop]) if topo.cond_channels else None
            frames = gen_net(Tensor(z), cond).data
            out[start:stop] = frames[:, 0, :] + 1j * frames[:, 1, :]
    if was_training:
        gen_net.train()
    return out
