"""Velocity-prediction transformer over patchified spectrogram latents.

The network consumes a noised latent [h, w, c] plus a text condition and
predicts the flow velocity with the same shape. Structure: patchify to a
token sequence, run m double-stream blocks (separate text/music weights,
one joint attention), drop the text stream, run n single-stream blocks
(fused parallel attention + MLP), then a modulated linear head back to
patches. All residual branches are gated and zero-initialized, so a fresh
model is the identity on its streams and outputs exactly zero.
"""

import functools
import math
from dataclasses import dataclass, replace

import numpy as np

from . import conditioning as cond_mod
from .engine import (
    Tensor,
    add,
    attention,
    channel_affine,
    check_finite,
    concat,
    gelu,
    linear,
    modulate,
    reshape,
    rms_norm,
    rope_rotate,
    silu,
    split,
    transpose,
)
from .errors import ConfigError, ShapeError

ROPE_THETA = 10000.0
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    m: int                 # double-stream block count
    n: int                 # single-stream block count
    d: int                 # hidden width
    h: int                 # attention heads
    p: int = 2             # patch size
    c: int = 8             # latent channels
    mlp_ratio: int = 4
    d_fine: int = 4096
    d_coarse: int = 512
    t_emb_dim: int = 256
    latent_h: int = 16
    latent_w: int = 128
    variant_name: str = "custom"

    def __post_init__(self):
        if self.d % self.h != 0:
            raise ConfigError(f"width {self.d} not divisible by heads {self.h}")
        if self.head_dim % 2 != 0:
            raise ConfigError(f"head_dim {self.head_dim} must be even")
        if self.latent_h % self.p or self.latent_w % self.p:
            raise ConfigError(
                f"latent {self.latent_h}x{self.latent_w} not divisible by patch {self.p}"
            )

    @property
    def head_dim(self):
        return self.d // self.h

    @property
    def patch_dim(self):
        return self.p * self.p * self.c

    @property
    def music_tokens(self):
        return (self.latent_h // self.p) * (self.latent_w // self.p)


# Size ladder (m, n, d, h); parameter totals are pinned by tests against the
# published reference counts.
PRESETS = {
    "small": ModelConfig(8, 16, 512, 16, variant_name="small"),
    "base": ModelConfig(12, 24, 768, 16, variant_name="base"),
    "large": ModelConfig(12, 24, 1024, 16, variant_name="large"),
    "giant": ModelConfig(16, 32, 1408, 16, variant_name="giant"),
    # all-double-stream variant used for the structure comparison
    "15d0s": ModelConfig(15, 0, 512, 16, variant_name="15d0s"),
    # desk-scale config: small widths, stub encoder dims, coarser patches
    "toy": ModelConfig(
        2, 4, 64, 4, p=4, c=4, d_fine=64, d_coarse=32, t_emb_dim=64, variant_name="toy"
    ),
}

REFERENCE_PARAM_COUNTS = {
    "small": 142.3e6,
    "base": 473.9e6,
    "large": 840.6e6,
    "giant": 2109.9e6,
    "15d0s": 145.5e6,
}

REFERENCE_GFLOPS = {"small": 194.5, "base": 654.4, "large": 1162.6, "giant": 2928.0}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[name]
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def param_shapes(cfg):
    """Ordered name -> shape map of every weight tensor (single source of
    truth for allocation, counting, checkpoints and the optimizer)."""
    d, r, dh = cfg.d, cfg.mlp_ratio, cfg.head_dim
    shapes = {
        "mus_in.w": (d, cfg.patch_dim), "mus_in.b": (d,),
        "txt_in.w": (d, cfg.d_fine), "txt_in.b": (d,),
        "t_mlp.fc1.w": (d, cfg.t_emb_dim), "t_mlp.fc1.b": (d,),
        "t_mlp.fc2.w": (d, d), "t_mlp.fc2.b": (d,),
        "c_mlp.fc1.w": (d, cfg.d_coarse), "c_mlp.fc1.b": (d,),
        "c_mlp.fc2.w": (d, d), "c_mlp.fc2.b": (d,),
    }
    for i in range(cfg.m):
        for mpfx in (f"double.{i}.txt.", f"double.{i}.mus."):
            shapes[mpfx + "norm1.g"] = (d,)
            shapes[mpfx + "qkv.w"] = (3 * d, d)
            shapes[mpfx + "qkv.b"] = (3 * d,)
            shapes[mpfx + "q_gain"] = (dh,)
            shapes[mpfx + "k_gain"] = (dh,)
            shapes[mpfx + "attn_out.w"] = (d, d)
            shapes[mpfx + "attn_out.b"] = (d,)
            shapes[mpfx + "norm2.g"] = (d,)
            shapes[mpfx + "mlp.fc1.w"] = (r * d, d)
            shapes[mpfx + "mlp.fc1.b"] = (r * d,)
            shapes[mpfx + "mlp.fc2.w"] = (d, r * d)
            shapes[mpfx + "mlp.fc2.b"] = (d,)
            shapes[mpfx + "mod.w"] = (6 * d, d)
            shapes[mpfx + "mod.b"] = (6 * d,)
    for i in range(cfg.n):
        pfx = f"single.{i}."
        shapes[pfx + "norm.g"] = (d,)
        shapes[pfx + "in.w"] = (3 * d + r * d, d)
        shapes[pfx + "in.b"] = (3 * d + r * d,)
        shapes[pfx + "q_gain"] = (dh,)
        shapes[pfx + "k_gain"] = (dh,)
        shapes[pfx + "out.w"] = (d, d + r * d)
        shapes[pfx + "out.b"] = (d,)
        shapes[pfx + "mod.w"] = (3 * d, d)
        shapes[pfx + "mod.b"] = (3 * d,)
    shapes["final.norm.g"] = (d,)
    shapes["final.mod.w"] = (2 * d, d)
    shapes["final.mod.b"] = (2 * d,)
    shapes["final.out.w"] = (cfg.patch_dim, d)
    shapes["final.out.b"] = (cfg.patch_dim,)
    return shapes


def _zero_initialized(name):
    # adaLN-zero convention: modulation projections, the single-block fused
    # output projection and the final head start at zero.
    return (
        ".mod." in name
        or name.startswith("final.")
        and name != "final.norm.g"
        or ".out." in name
        and name.startswith("single.")
    )


def _trunc_normal(rng, shape, std):
    x = rng.standard_normal(shape)
    while True:
        bad = np.abs(x) > 2.0
        if not bad.any():
            break
        x[bad] = rng.standard_normal(bad.sum())
    return x * std


def init_params(cfg, seed=0, dtype="f32"):
    """Allocate weights: truncated normal (std 0.02) matrices, zero biases,
    unit gains, and zeros for every gated/output projection."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g") or name.endswith("_gain"):
            data = np.ones(shape)
        elif name.endswith(".b") or _zero_initialized(name):
            data = np.zeros(shape)
        else:
            data = _trunc_normal(rng, shape, INIT_STD)
        params[name] = Tensor(data.astype(np.float32 if dtype == "f32" else np.float64),
                              requires_grad=True, dtype=dtype, name=name)
    return params


def count_params(cfg):
    """Closed-form parameter total; must equal sum over allocated tensors.

    Per double block and modality: 18*d^2 in matrices (qkv 3d^2, attention
    out d^2, MLP 2*r*d^2 with r=4, modulation 6d^2) plus 17d bias/gain
    vectors and 2 head-dim gains. Per single block: 15*d^2 (fused in 7d^2,
    fused out 5d^2, modulation 3d^2) plus 12d and 2 head-dim gains.
    """
    d, r, dh = cfg.d, cfg.mlp_ratio, cfg.head_dim
    per_modality = (3 + 1 + 2 * r + 6) * d * d + (3 + 1 + r + 1 + 6 + 2) * d + 2 * dh
    double = 2 * per_modality
    single = (3 + r + 1 + r + 3) * d * d + (3 + r + 1 + 3 + 1) * d + 2 * dh
    embed = (
        cfg.patch_dim * d + d
        + cfg.d_fine * d + d
        + cfg.t_emb_dim * d + d + d * d + d
        + cfg.d_coarse * d + d + d * d + d
    )
    final = d + 2 * d * d + 2 * d + cfg.patch_dim * d + cfg.patch_dim
    return cfg.m * double + cfg.n * single + embed + final


def count_flops(cfg, music_tokens=None, text_tokens=0):
    """Analytic forward flop count (multiply-accumulates x 2) including the
    quadratic attention terms. Returns (total, breakdown dict)."""
    Lm = cfg.music_tokens if music_tokens is None else music_tokens
    Lt = text_tokens
    d, r = cfg.d, cfg.mlp_ratio
    s = Lm + Lt
    macs = {}
    macs["embeds"] = (
        Lm * cfg.patch_dim * d
        + Lt * cfg.d_fine * d
        + cfg.t_emb_dim * d + d * d
        + cfg.d_coarse * d + d * d
    )
    per_mod = lambda L: L * d * (3 * d) + L * d * d + 2 * L * r * d * d + 6 * d * d
    macs["double_linear"] = cfg.m * (per_mod(Lm) + per_mod(Lt))
    macs["double_attention"] = cfg.m * 2 * s * s * d
    macs["single_linear"] = cfg.n * (Lm * d * (3 * d + r * d) + Lm * (d + r * d) * d + 3 * d * d)
    macs["single_attention"] = cfg.n * 2 * Lm * Lm * d
    macs["final"] = 2 * d * d + Lm * d * cfg.patch_dim
    total = 2 * sum(macs.values())
    return total, {k: 2 * v for k, v in macs.items()}


# ---------------------------------------------------------------------------
# patch grid and rotary tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchGrid:
    """Token layout of a patchified latent: gh x gw patches in row-major
    order, with per-token (row, col) ids. Text tokens use (0, 0)."""

    gh: int
    gw: int

    @property
    def tokens(self):
        return self.gh * self.gw

    def row_ids(self):
        return np.repeat(np.arange(self.gh), self.gw)

    def col_ids(self):
        return np.tile(np.arange(self.gw), self.gh)


def grid_for(cfg):
    return PatchGrid(cfg.latent_h // cfg.p, cfg.latent_w // cfg.p)


@functools.lru_cache(maxsize=32)
def _rope_tables(gh, gw, text_len, dh):
    """cos/sin pair-angle tables [text_len + gh*gw, dh//2] for two-axis
    rotary: first half of the pairs encodes the patch row, second half the
    column. Text tokens sit at (0, 0) and are unrotated."""
    if dh % 4 != 0:
        raise ConfigError(f"rotary needs head_dim divisible by 4, got {dh}")
    quarter = dh // 4
    freqs = ROPE_THETA ** (-np.arange(quarter) / quarter)
    grid = PatchGrid(gh, gw)
    rows, cols = grid.row_ids(), grid.col_ids()
    ang_mus = np.concatenate(
        [rows[:, None] * freqs[None, :], cols[:, None] * freqs[None, :]], axis=1
    )
    ang = np.concatenate([np.zeros((text_len, dh // 2)), ang_mus], axis=0)
    return np.cos(ang).astype(np.float32), np.sin(ang).astype(np.float32)


def apply_rope(q, k, grid, text_len=0):
    """Rotate joint-sequence q/k [B,h,s,dh] by the grid's two-axis angles."""
    dh = q.shape[-1]
    cos, sin = _rope_tables(grid.gh, grid.gw, text_len, dh)
    s = q.shape[2]
    if s != cos.shape[0]:
        raise ShapeError(f"sequence length {s} != grid tokens {cos.shape[0]}")
    if q.dtype == "f64":
        cos, sin = cos.astype(np.float64), sin.astype(np.float64)
    return rope_rotate(q, cos, sin), rope_rotate(k, cos, sin)


# ---------------------------------------------------------------------------
# patchify
# ---------------------------------------------------------------------------


def patchify(latent, p):
    """[B, h, w, c] -> [B, (h/p)*(w/p), p*p*c], row-major patches,
    channel-fastest inside a patch. Also accepts an unbatched [h, w, c]."""
    unbatched = latent.ndim == 3
    if unbatched:
        latent = reshape(latent, (1,) + latent.shape)
    B, h, w, c = latent.shape
    if h % p or w % p:
        raise ShapeError(f"latent {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = reshape(latent, (B, gh, p, gw, p, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    x = reshape(x, (B, gh * gw, p * p * c))
    return reshape(x, x.shape[1:]) if unbatched else x


def unpatchify(tokens, p, h, w, c):
    """Exact inverse of patchify."""
    unbatched = tokens.ndim == 2
    if unbatched:
        tokens = reshape(tokens, (1,) + tokens.shape)
    B, L, pd = tokens.shape
    gh, gw = h // p, w // p
    if L != gh * gw or pd != p * p * c:
        raise ShapeError(f"token grid {L}x{pd} does not match latent {h}x{w}x{c} at p={p}")
    x = reshape(tokens, (B, gh, gw, p, p, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    x = reshape(x, (B, h, w, c))
    return reshape(x, x.shape[1:]) if unbatched else x


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


def _mod_vectors(y_act, params, prefix, k):
    """k modulation vectors [B, d] from the block's projection of silu(y)."""
    out = linear(y_act, params[prefix + "mod.w"], params[prefix + "mod.b"])
    d = out.shape[-1] // k
    return split(out, [d] * k, axis=-1)


def _heads(x, h):
    """[B, L, d] -> [B, h, L, dh]."""
    B, L, d = x.shape
    return transpose(reshape(x, (B, L, h, d // h)), (0, 2, 1, 3))


def _unheads(x):
    """[B, h, L, dh] -> [B, L, d]."""
    B, h, L, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (B, L, h * dh))


def _qkv(x, params, prefix, cfg):
    qkv = linear(x, params[prefix + "qkv.w"], params[prefix + "qkv.b"])
    d = cfg.d
    q, k, v = split(qkv, [d, d, d], axis=-1)
    q, k, v = _heads(q, cfg.h), _heads(k, cfg.h), _heads(v, cfg.h)
    q = rms_norm(q, params[prefix + "q_gain"])
    k = rms_norm(k, params[prefix + "k_gain"])
    return q, k, v


def double_block(txt, mus, y_act, params, prefix, cfg, grid, key_mask=None):
    """One double-stream block: modality-specific projections, one joint
    attention over [text; music], gated residuals per modality."""
    if txt.shape[-1] != cfg.d or mus.shape[-1] != cfg.d:
        raise ShapeError(f"stream width mismatch: {txt.shape[-1]}/{mus.shape[-1]} vs d={cfg.d}")
    Lt, Lm = txt.shape[1], mus.shape[1]
    mods = {}
    for name in ("txt", "mus"):
        s1, sc1, g1, s2, sc2, g2 = _mod_vectors(y_act, params, f"{prefix}{name}.", 6)
        mods[name] = dict(shift1=s1, scale1=sc1, gate1=g1, shift2=s2, scale2=sc2, gate2=g2)

    txt_m = modulate(rms_norm(txt, params[prefix + "txt.norm1.g"]),
                     mods["txt"]["shift1"], mods["txt"]["scale1"])
    mus_m = modulate(rms_norm(mus, params[prefix + "mus.norm1.g"]),
                     mods["mus"]["shift1"], mods["mus"]["scale1"])
    tq, tk, tv = _qkv(txt_m, params, prefix + "txt.", cfg)
    mq, mk, mv = _qkv(mus_m, params, prefix + "mus.", cfg)
    # text first, then music, matching the token order of the input sequence
    q = concat([tq, mq], axis=2)
    k = concat([tk, mk], axis=2)
    v = concat([tv, mv], axis=2)
    q, k = apply_rope(q, k, grid, text_len=Lt)
    joint = attention(q, k, v, key_mask=key_mask)
    joint = _unheads(joint)
    txt_attn, mus_attn = (split(joint, [Lt, Lm], axis=1) if Lt > 0 else (None, joint))

    def residual(x, branch, name):
        out = linear(branch, params[f"{prefix}{name}.attn_out.w"],
                     params[f"{prefix}{name}.attn_out.b"])
        x = add(x, channel_affine(out, mods[name]["gate1"]))
        h = modulate(rms_norm(x, params[f"{prefix}{name}.norm2.g"]),
                     mods[name]["shift2"], mods[name]["scale2"])
        h = linear(gelu(linear(h, params[f"{prefix}{name}.mlp.fc1.w"],
                               params[f"{prefix}{name}.mlp.fc1.b"])),
                   params[f"{prefix}{name}.mlp.fc2.w"], params[f"{prefix}{name}.mlp.fc2.b"])
        return add(x, channel_affine(h, mods[name]["gate2"]))

    mus_out = residual(mus, mus_attn, "mus")
    txt_out = residual(txt, txt_attn, "txt") if Lt > 0 else txt
    return txt_out, mus_out


def single_block(seq, y_act, params, prefix, cfg, grid):
    """One single-stream block: fused input projection feeding parallel
    attention and SiLU-MLP branches, fused gated output projection."""
    if seq.shape[-1] != cfg.d:
        raise ShapeError(f"stream width {seq.shape[-1]} != d={cfg.d}")
    d, r = cfg.d, cfg.mlp_ratio
    shift, scale, gate = _mod_vectors(y_act, params, prefix, 3)
    x = modulate(rms_norm(seq, params[prefix + "norm.g"]), shift, scale)
    proj = linear(x, params[prefix + "in.w"], params[prefix + "in.b"])
    q, k, v, mlp = split(proj, [d, d, d, r * d], axis=-1)
    q, k, v = _heads(q, cfg.h), _heads(k, cfg.h), _heads(v, cfg.h)
    q = rms_norm(q, params[prefix + "q_gain"])
    k = rms_norm(k, params[prefix + "k_gain"])
    q, k = apply_rope(q, k, grid, text_len=0)
    attn = _unheads(attention(q, k, v))
    fused = concat([attn, silu(mlp)], axis=-1)
    out = linear(fused, params[prefix + "out.w"], params[prefix + "out.b"])
    return add(seq, channel_affine(out, gate))


# ---------------------------------------------------------------------------
# full forward
# ---------------------------------------------------------------------------


def forward_batch(params, cfg, z, ts, cond_batch):
    """Velocity prediction for a batch.

    z: Tensor [B, h, w, c]; ts: array [B] of times in [0, 1];
    cond_batch: conditioning.CondBatch. Returns Tensor [B, h, w, c].
    """
    if z.shape[1:] != (cfg.latent_h, cfg.latent_w, cfg.c):
        raise ShapeError(
            f"latent shape {z.shape[1:]} != config ({cfg.latent_h}, {cfg.latent_w}, {cfg.c})"
        )
    B = z.shape[0]
    grid = grid_for(cfg)
    dtype = z.dtype

    mus = linear(patchify(z, cfg.p), params["mus_in.w"], params["mus_in.b"])
    fine = Tensor(cond_batch.fine.astype(z.data.dtype), dtype=dtype)
    txt = linear(fine, params["txt_in.w"], params["txt_in.b"])
    Lt = txt.shape[1]

    t_emb = Tensor(
        cond_mod.timestep_embed_batch(ts, cfg.t_emb_dim).astype(z.data.dtype), dtype=dtype
    )
    coarse = Tensor(cond_batch.coarse.astype(z.data.dtype), dtype=dtype)
    y = cond_mod.build_y(t_emb, coarse, params)
    y_act = silu(y)

    key_mask = None
    if Lt > 0:
        key_mask = np.concatenate(
            [cond_batch.fine_mask, np.ones((B, grid.tokens), bool)], axis=1
        )

    for i in range(cfg.m):
        txt, mus = double_block(txt, mus, y_act, params, f"double.{i}.", cfg, grid, key_mask)
        check_finite(mus.data, f"double block {i}")
    for i in range(cfg.n):
        mus = single_block(mus, y_act, params, f"single.{i}.", cfg, grid)
        check_finite(mus.data, f"single block {i}")

    shift, scale = _mod_vectors(y_act, params, "final.", 2)
    head = modulate(rms_norm(mus, params["final.norm.g"]), shift, scale)
    out = linear(head, params["final.out.w"], params["final.out.b"])
    return unpatchify(out, cfg.p, cfg.latent_h, cfg.latent_w, cfg.c)


def forward(params, cfg, z, t, cond):
    """Single-sample wrapper: z [h, w, c], scalar t, one TextCondition."""
    batch = cond_mod.batch_conditions([cond], d_fine=cfg.d_fine, d_coarse=cfg.d_coarse)
    zb = reshape(z, (1,) + z.shape) if isinstance(z, Tensor) else Tensor(z[None], dtype="f32")
    out = forward_batch(params, cfg, zb, np.array([t]), batch)
    return reshape(out, out.shape[1:])
