"""Prompt-to-latent sampling shared by the CLI and the toy evaluation:
wraps the EMA weights, encodes prompts, runs the arm-appropriate sampler
(Euler for the flow objective, DDIM for the epsilon arm) with classifier-free
guidance, and de-standardizes back to latent units."""

import numpy as np

from . import conditioning as cond_mod
from . import rectflow, trainer
from .datapipe import LATENT_H, LATENT_W
from .errors import ConfigError


def sample_latents(state, prompts, steps=None, cfg_scale=None, seed=0, objective=None,
                   use_ema=True, batch_size=64):
    """Generate one latent [16, 128, c] per prompt; fully seed-deterministic.

    Returns an array [len(prompts), 16, 128, c] in original latent units.
    """
    tc = state.train_config
    steps = tc.sample_steps if steps is None else int(steps)
    cfg_scale = tc.cfg_scale if cfg_scale is None else float(cfg_scale)
    objective = tc.objective if objective is None else objective
    if objective not in ("rf", "ddim"):
        raise ConfigError(f"unknown objective {objective!r}")

    if use_ema:
        fn = trainer.ema_model_fn(state)
    else:
        raw = trainer.model_fn(state.params, state.model_config, state.encoder_config)

        def fn(z, ts, cond):
            from .engine import no_grad
            with no_grad():
                return raw(z, ts, cond).data

    rng = np.random.default_rng([seed, 0x5A11])
    c = state.model_config.c
    outs = []
    for start in range(0, len(prompts), batch_size):
        chunk = prompts[start:start + batch_size]
        conds = [cond_mod.encode_text(p, state.encoder_config) for p in chunk]
        cond = cond_mod.batch_conditions(
            conds, d_fine=state.encoder_config.d_fine, d_coarse=state.encoder_config.d_coarse
        )
        z1 = rng.standard_normal((len(chunk), LATENT_H, LATENT_W, c)).astype(np.float32)
        if objective == "rf":
            sched = rectflow.RFSchedule(steps=steps)
            z0 = rectflow.euler_sample(fn, z1, cond, sched, s=cfg_scale)
        else:
            z0 = rectflow.ddim_sample(fn, z1, cond, state.ddpm, substeps=steps, s=cfg_scale)
        outs.append(trainer.destandardize(state, z0))
    return np.concatenate(outs, axis=0)
