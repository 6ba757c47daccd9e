"""Optimization loop: AdamW with global-norm gradient clipping, periodic EMA
shadow weights, per-encoder condition dropout, and deterministic resume.

One TrainState owns everything mutable; the same state trains either the
rectified-flow objective or the epsilon-prediction (DDIM) arm, selected by
TrainConfig.objective — weight shapes are identical by construction, only the
loss and sampler differ.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt
from . import conditioning as cond_mod
from . import model as model_mod
from . import rectflow
from .engine import Tensor, no_grad, zero_grads
from .errors import ConfigError, TrainAbortError
from .kernels import adamw_update


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 128
    grad_clip: float = 1.0
    ema_decay: float = 0.99
    ema_every: int = 100
    cond_dropout: float = 0.1
    steps: int = 1000
    objective: str = "rf"  # "rf" | "ddim"
    seed: int = 0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    t_dist: str = "uniform"
    ddpm_T: int = 1000
    sample_steps: int = 50
    cfg_scale: float = 3.5

    def __post_init__(self):
        if self.objective not in ("rf", "ddim"):
            raise ConfigError(f"objective must be rf or ddim, got {self.objective!r}")
        for name in ("lr", "batch_size", "grad_clip", "ema_decay", "ema_every", "steps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ConfigError("cond_dropout must be in [0, 1]")


@dataclass
class TrainState:
    model_config: model_mod.ModelConfig
    train_config: TrainConfig
    encoder_config: cond_mod.EncoderStubConfig
    params: dict
    ema: dict
    m: dict
    v: dict
    step: int
    rng: np.random.Generator
    norm_mean: float = 0.0
    norm_std: float = 1.0
    ddpm: rectflow.DDPMSchedule = field(default=None)

    def __post_init__(self):
        if self.ddpm is None:
            self.ddpm = rectflow.DDPMSchedule(T=self.train_config.ddpm_T)


def init_state(model_config, train_config, encoder_config, norm_stats=(0.0, 1.0)):
    params = model_mod.init_params(model_config, seed=train_config.seed)
    return TrainState(
        model_config=model_config,
        train_config=train_config,
        encoder_config=encoder_config,
        params=params,
        ema={k: p.data.copy() for k, p in params.items()},
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
        step=0,
        rng=np.random.default_rng([train_config.seed, 0x7281]),
        norm_mean=float(norm_stats[0]),
        norm_std=float(norm_stats[1]),
    )


# ---------------------------------------------------------------------------
# optimizer pieces
# ---------------------------------------------------------------------------


def clip_grad_norm(grads, max_norm):
    """Scale all gradients by min(1, max_norm / (global_norm + 1e-6)) in place.

    Returns the pre-clip global L2 norm.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = float(np.sqrt(total))
    scale = min(1.0, max_norm / (norm + 1e-6))
    if scale < 1.0:
        for g in grads.values():
            g *= scale
    return norm


def adamw_step(params, grads, moments_m, moments_v, step, lr,
               betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """Bias-corrected Adam with decoupled weight decay, in place over dicts.

    `step` is 1-based (the step being applied).
    """
    for name, p in params.items():
        arr = p.data if isinstance(p, Tensor) else p
        adamw_update(arr.reshape(-1), grads[name].reshape(-1),
                     moments_m[name].reshape(-1), moments_v[name].reshape(-1),
                     step, lr, betas[0], betas[1], eps, weight_decay)


def ema_update(ema, params, decay):
    """ema <- decay * ema + (1 - decay) * weights, in place."""
    for name, e in ema.items():
        p = params[name]
        arr = p.data if isinstance(p, Tensor) else p
        e *= decay
        e += (1.0 - decay) * arr


# ---------------------------------------------------------------------------
# objective plumbing
# ---------------------------------------------------------------------------


def model_fn(params, model_config, encoder_config):
    """Adapt forward_batch to the sampler/loss protocol (None = null cond)."""
    def fn(z, ts, cond):
        B = z.shape[0]
        if cond is None:
            cond = cond_mod.CondBatch(
                np.zeros((B, 0, model_config.d_fine), np.float32),
                np.zeros((B, 0), bool),
                np.zeros((B, model_config.d_coarse), np.float32),
            )
        zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z, np.float32))
        return model_mod.forward_batch(params, model_config, zt, ts, cond)
    return fn


def ema_model_fn(state):
    """Sampling-side forward using the EMA shadow weights (numpy output)."""
    ema_params = {k: Tensor(v) for k, v in state.ema.items()}
    fn = model_fn(ema_params, state.model_config, state.encoder_config)

    def sampler_fn(z, ts, cond):
        with no_grad():
            return fn(z, ts, cond).data
    return sampler_fn


def standardize(state, latents):
    return (np.asarray(latents, np.float32) - state.norm_mean) / state.norm_std


def destandardize(state, latents):
    return np.asarray(latents, np.float32) * state.norm_std + state.norm_mean


def encode_batch(state, captions, drop=True):
    conds = []
    for cap in captions:
        c = cond_mod.encode_text(cap, state.encoder_config)
        if drop:
            c = cond_mod.drop_conditions(c, state.train_config.cond_dropout, state.rng)
        conds.append(c)
    return cond_mod.batch_conditions(
        conds, d_fine=state.encoder_config.d_fine, d_coarse=state.encoder_config.d_coarse
    )


def train_step(state, batch):
    """One optimization step on (latents [B,16,128,c], captions).

    Returns a metrics dict {step, loss, grad_norm, lr, wall_ms}.
    """
    t_start = time.perf_counter()
    latents, captions = batch
    tc = state.train_config
    x0 = standardize(state, latents)
    cond = encode_batch(state, captions)
    fn = model_fn(state.params, state.model_config, state.encoder_config)

    if tc.objective == "rf":
        loss, _ = rectflow.rf_loss(fn, x0, cond, state.rng, t_dist=tc.t_dist)
    else:
        loss, _ = rectflow.ddpm_eps_loss(fn, x0, cond, state.rng, state.ddpm)

    loss_val = loss.item()
    if not np.isfinite(loss_val):
        raise TrainAbortError(f"step {state.step + 1}: non-finite loss")

    zero_grads(state.params.values())
    loss.backward()
    grads = {}
    for name, p in state.params.items():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        if not np.isfinite(p.grad.sum()):
            raise TrainAbortError(f"step {state.step + 1}: non-finite gradient in {name}")
        grads[name] = p.grad

    grad_norm = clip_grad_norm(grads, tc.grad_clip)
    state.step += 1
    adamw_step(state.params, grads, state.m, state.v, state.step, tc.lr,
               betas=(tc.beta1, tc.beta2), eps=tc.adam_eps, weight_decay=tc.weight_decay)
    if state.step % tc.ema_every == 0:
        ema_update(state.ema, state.params, tc.ema_decay)

    return {
        "step": state.step,
        "loss": loss_val,
        "grad_norm": grad_norm,
        "lr": tc.lr,
        "wall_ms": (time.perf_counter() - t_start) * 1e3,
    }


def batch_indices(step, batch_size):
    """Deterministic infinite data stream: step k consumes a fixed window."""
    start = step * batch_size
    return range(start, start + batch_size)


def run_training(state, dataset, steps=None, metrics_sink=None, checkpoint_every=None,
                 checkpoint_path=None):
    """Drive train_step over the deterministic index stream.

    Resuming from a restored state continues the identical stream: batch
    indices derive from the step counter and all stochastic draws come from
    the state's restored rng.
    """
    tc = state.train_config
    total = tc.steps if steps is None else steps
    metrics = []
    while state.step < total:
        idx = batch_indices(state.step, tc.batch_size)
        latents, captions, _ = dataset.batch(idx)
        rec = train_step(state, (latents, captions))
        metrics.append(rec)
        if metrics_sink is not None:
            metrics_sink(rec)
        if checkpoint_every and checkpoint_path and state.step % checkpoint_every == 0:
            save_state(state, checkpoint_path)
    return metrics


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_state(state, path):
    tensors = {}
    for name, p in state.params.items():
        tensors["w." + name] = p.data
    for name, e in state.ema.items():
        tensors["ema." + name] = e
    for name, m in state.m.items():
        tensors["m." + name] = m
    for name, v in state.v.items():
        tensors["v." + name] = v
    ckpt.save_checkpoint(
        path,
        model_config=state.model_config,
        train_config=state.train_config,
        encoder_config=state.encoder_config,
        step=state.step,
        tensors=tensors,
        norm_stats=(state.norm_mean, state.norm_std),
        rng_state=state.rng.bit_generator.state,
    )


def load_state(path):
    header, tensors = ckpt.load_checkpoint(path)
    mcfg = model_mod.ModelConfig(**header["model_config"])
    tcfg = TrainConfig(**header["train_config"])
    ecfg = cond_mod.EncoderStubConfig(**header["encoder_config"])
    params = {}
    for name, shape in model_mod.param_shapes(mcfg).items():
        arr = tensors["w." + name]
        if tuple(arr.shape) != tuple(shape):
            raise ConfigError(f"checkpoint tensor {name} has shape {arr.shape}, expected {shape}")
        params[name] = Tensor(arr, requires_grad=True, name=name)
    state = TrainState(
        model_config=mcfg,
        train_config=tcfg,
        encoder_config=ecfg,
        params=params,
        ema={k: tensors["ema." + k].copy() for k in params},
        m={k: tensors["m." + k].copy() for k in params},
        v={k: tensors["v." + k].copy() for k in params},
        step=header["step"],
        rng=np.random.default_rng(0),
        norm_mean=header["norm_stats"]["mean"],
        norm_std=header["norm_stats"]["std"],
    )
    state.rng.bit_generator.state = header["rng_state"]
    return state
