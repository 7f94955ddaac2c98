"""Staged training: per-stage configs, the noise-prediction step, Adam, checkpoints."""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import checkpoint
from . import numerics as nx
from .alss import AlssConfig, required_source_length, sample_sequence
from .conditioning import draw_drop, make_training_bundle
from .embedders import EmbeddingProviders
from .errors import ConfigError, DataError, TrainingError
from .model import GROUPS, NetConfig, POS_SLOTS, STAGE_GROUPS, UNetLite, forward, init_unet
from .schedule import NoiseSchedule, make_linear_schedule

# Desk-scale budgets. The reference schedule ran 200k / 100k / 100k iterations.
STAGE_DEFAULTS = {
    1: {"f": 8, "lr": 2e-4, "iterations": 2000},
    2: {"f": 11, "lr": 6e-5, "iterations": 1000},
    3: {"f": 18, "lr": 2e-5, "iterations": 1000},
}

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class StageConfig:
    stage: int = 1
    f: int = 8
    lr: float = 2e-4
    iterations: int = 2000
    manifest: str = ""
    drop_r: float = 0.5
    trainable: Optional[frozenset] = None
    seed: int = 0
    net_seed: int = 0
    s: int = 6
    routing_preset: int = 0
    width: int = 32
    ctx_dim: int = 32
    resample: str = "iteration"
    grad_accum: int = 1
    checkpoint_every: int = 0
    out_dir: str = ""
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def __post_init__(self):
        if self.stage not in STAGE_GROUPS:
            raise ConfigError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.f < 2:
            raise ConfigError(f"f must be >= 2, got {self.f}")
        if 2 * self.f - 1 > POS_SLOTS:
            raise ConfigError(f"f={self.f} gives {2 * self.f - 1} frames, above the {POS_SLOTS}-slot limit")
        if not 0.0 <= self.drop_r <= 1.0:
            raise ConfigError(f"drop_r must be in [0, 1], got {self.drop_r}")
        if self.resample not in ("iteration", "video"):
            raise ConfigError(f"resample must be 'iteration' or 'video', got {self.resample!r}")
        if self.grad_accum < 1 or self.iterations < 0 or self.lr <= 0:
            raise ConfigError("grad_accum >= 1, iterations >= 0 and lr > 0 required")
        if self.trainable is None:
            object.__setattr__(self, "trainable", STAGE_GROUPS[self.stage])
        else:
            groups = frozenset(self.trainable)
            if not groups <= set(GROUPS):
                raise ConfigError(f"unknown parameter groups {sorted(groups - set(GROUPS))}")
            object.__setattr__(self, "trainable", groups)

    @classmethod
    def for_stage(cls, stage: int, **overrides) -> "StageConfig":
        if stage not in STAGE_DEFAULTS:
            raise ConfigError(f"stage must be 1, 2 or 3, got {stage}")
        return cls(stage=stage, **{**STAGE_DEFAULTS[stage], **overrides})

    @property
    def alss(self) -> AlssConfig:
        return AlssConfig(s=self.s, f=self.f)

    @property
    def frames(self) -> int:
        return 2 * self.f - 1

    def schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)

    def net_config(self) -> NetConfig:
        return NetConfig(self.width, self.ctx_dim, self.routing_preset)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


@dataclass
class TrainState:
    net: UNetLite
    adam: AdamState
    iteration: int
    rng: np.random.Generator
    stage: int


def optimizer_step(params: dict, grads: dict, moments: AdamState, lr: float):
    """One Adam update (betas 0.9/0.999, eps 1e-8) of the entries named in ``grads``.

    Returns new ``(params, moments)``; inputs are not modified.
    """
    step = moments.step + 1
    new_params, m, v = dict(params), dict(moments.m), dict(moments.v)
    c1, c2 = 1.0 - BETA1**step, 1.0 - BETA2**step
    for name, g in grads.items():
        m[name] = BETA1 * m.get(name, 0.0) + (1.0 - BETA1) * g
        v[name] = BETA2 * v.get(name, 0.0) + (1.0 - BETA2) * g * g
        new_params[name] = params[name] - lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + ADAM_EPS)
    return new_params, AdamState(m, v, step)


# -- one step --------------------------------------------------------------------


def _sequence_for(clip, cfg: StageConfig, rng: np.random.Generator):
    if cfg.resample == "iteration":
        return sample_sequence(cfg.alss, rng)
    video_rng = np.random.default_rng([cfg.seed, zlib.crc32(clip.id.encode())])
    return sample_sequence(cfg.alss, video_rng)


def sample_loss(net: UNetLite, clip, cfg: StageConfig, sched: NoiseSchedule, providers, rng, leaves=None):
    """Draw one training example from ``clip`` and return ``(loss, t)``.

    ``loss`` is a ``Var`` when ``leaves`` (tape-watched parameters) are given.
    """
    need = required_source_length(cfg.alss)
    if len(clip) < need:
        raise DataError(f"video {clip.id} has {len(clip)} frames, stage {cfg.stage} needs {need}")
    seq = _sequence_for(clip, cfg, rng)
    start = int(rng.integers(0, len(clip) - need + 1))
    indices = [start + i for i in seq.indices]
    dropped = draw_drop(cfg.drop_r, rng)
    t = int(rng.integers(sched.T))
    eps = rng.standard_normal((cfg.frames,) + clip.latents.shape[1:])
    bundle, _ = make_training_bundle(
        clip.latents, indices, cfg.f, cfg.stage, t, eps, sched, dropped, clip.latent_masks
    )
    image_ctx = providers.image_embedder(clip.frames[indices[0]])
    text_ctx = providers.text_embedder(clip.caption)
    pred = forward(net, bundle.z_c, t, image_ctx, text_ctx, params=leaves)
    return nx.mean(nx.square(nx.sub(pred, eps))), t


def training_step(
    state: TrainState,
    sample,
    cfg: StageConfig,
    sched: NoiseSchedule,
    providers: Optional[EmbeddingProviders] = None,
):
    """Noise-prediction step on one clip (or a list, for gradient accumulation).

    Only groups in ``cfg.trainable`` are updated; every other array in
    ``state.net.params`` is left as the identical object. Returns
    ``(state, loss)`` with ``state`` updated in place.
    """
    providers = providers or EmbeddingProviders.default(state.net.config.ctx_dim)
    clips = sample if isinstance(sample, (list, tuple)) else [sample]
    names = state.net.names_in(cfg.trainable)
    grads = {n: np.zeros_like(state.net.params[n]) for n in names}
    total = 0.0
    for clip in clips:
        with nx.Tape() as tape:
            leaves = {n: tape.watch(state.net.params[n]) for n in names}
            loss, t = sample_loss(state.net, clip, cfg, sched, providers, state.rng, leaves)
            tape.backward(loss)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(
                f"non-finite loss {value} at stage {cfg.stage} iteration {state.iteration} "
                f"(video {clip.id}, t={t})"
            )
        total += value
        for n in names:
            if leaves[n].grad is not None:
                grads[n] += leaves[n].grad
    if len(clips) > 1:
        grads = {n: g / len(clips) for n, g in grads.items()}
    state.net.params, state.adam = optimizer_step(state.net.params, grads, state.adam, cfg.lr)
    state.iteration += 1
    return state, total / len(clips)


# -- state lifecycle -------------------------------------------------------------


def save_state(path, state: TrainState, cfg: StageConfig) -> None:
    extra = {f"adam.m.{k}": v for k, v in state.adam.m.items()}
    extra.update({f"adam.v.{k}": v for k, v in state.adam.v.items()})
    meta = {
        "stage": state.stage,
        "iteration": state.iteration,
        "f": cfg.f,
        "adam_step": state.adam.step,
        "rng_state": state.rng.bit_generator.state,
        "trainable": sorted(cfg.trainable),
    }
    checkpoint.save(path, state.net, meta, extra)


def load_state(path):
    """Returns ``(TrainState, meta)``."""
    net, meta, extra = checkpoint.load(path)
    m = {k[len("adam.m.") :]: v for k, v in extra.items() if k.startswith("adam.m.")}
    v = {k[len("adam.v.") :]: a for k, a in extra.items() if k.startswith("adam.v.")}
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state = TrainState(net, AdamState(m, v, meta["adam_step"]), meta["iteration"], rng, meta["stage"])
    return state, meta


def begin_stage(cfg: StageConfig, previous: Optional[TrainState] = None) -> TrainState:
    """State for the start of ``cfg.stage`` or for continuing it.

    Stage 1 may start fresh; stage n otherwise needs a stage n-1 state (fresh
    optimiser) or a stage n state (resumed as-is).
    """
    if previous is None:
        if cfg.stage != 1:
            raise ConfigError(f"stage {cfg.stage} needs a stage {cfg.stage - 1} checkpoint")
        net = init_unet(cfg.net_config(), seed=cfg.net_seed)
        return TrainState(net, AdamState(), 0, np.random.default_rng([cfg.seed, 1]), 1)
    if previous.net.config.width != cfg.width or previous.net.config.ctx_dim != cfg.ctx_dim:
        raise ConfigError("checkpoint width/ctx_dim differ from the stage config")
    net = UNetLite(cfg.net_config(), previous.net.params)
    if previous.stage == cfg.stage:
        return TrainState(net, previous.adam, previous.iteration, previous.rng, cfg.stage)
    if previous.stage == cfg.stage - 1:
        return TrainState(net, AdamState(), 0, np.random.default_rng([cfg.seed, cfg.stage]), cfg.stage)
    raise ConfigError(f"cannot start stage {cfg.stage} from a stage {previous.stage} checkpoint")


def run_stage(
    cfg: StageConfig,
    state: TrainState,
    dataset: Sequence,
    out_dir=None,
    sched: Optional[NoiseSchedule] = None,
    providers: Optional[EmbeddingProviders] = None,
    stop_after: Optional[int] = None,
    on_step: Optional[Callable] = None,
):
    """Iterate :func:`training_step` until ``cfg.iterations``; returns ``(state, log)``.

    ``stop_after`` ends the call early after that many steps (for interrupted
    runs). With ``out_dir`` set, loss records are appended to
    ``loss_log.jsonl`` and checkpoints written every ``cfg.checkpoint_every``
    steps plus a ``stage{n}_final.ckpt`` on completion.
    """
    if state.stage != cfg.stage:
        raise ConfigError(f"state is at stage {state.stage}, config is stage {cfg.stage}")
    if not dataset:
        raise DataError("empty dataset")
    sched = sched or cfg.schedule()
    providers = providers or EmbeddingProviders.default(cfg.ctx_dim)
    out_dir = Path(out_dir) if out_dir else None
    log_fh = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "loss_log.jsonl", "a")
    log = []
    t0 = time.perf_counter()
    steps = 0
    try:
        while state.iteration < cfg.iterations and (stop_after is None or steps < stop_after):
            clips = [dataset[int(state.rng.integers(len(dataset)))] for _ in range(cfg.grad_accum)]
            state, loss = training_step(state, clips, cfg, sched, providers)
            steps += 1
            rec = {
                "iteration": state.iteration,
                "stage": cfg.stage,
                "loss": loss,
                "lr": cfg.lr,
                "wallclock_ms": round(1000 * (time.perf_counter() - t0), 3),
            }
            log.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
            if on_step:
                on_step(rec)
            if out_dir and cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                save_state(out_dir / f"stage{cfg.stage}_{state.iteration:07d}.ckpt", state, cfg)
    finally:
        if log_fh:
            log_fh.close()
    if out_dir and state.iteration >= cfg.iterations:
        save_state(out_dir / f"stage{cfg.stage}_final.ckpt", state, cfg)
    return state, log


def smoothed(losses, window: int = 100) -> np.ndarray:
    """Trailing moving average (first ``window - 1`` entries dropped)."""
    losses = np.asarray(losses, dtype=np.float64)
    if len(losses) < window:
        raise ValueError(f"need at least {window} losses")
    c = np.cumsum(np.concatenate([[0.0], losses]))
    return (c[window:] - c[:-window]) / window
