"""Text conditioning: deterministic encoder stubs, timestep embedding, the
combined modulation vector y, and train-time condition dropout.

Two seeded hash-table encoders stand in for large pretrained text encoders:
a token-sequence encoder ("fine", concatenated with the music sequence) and a
mean-pooled encoder ("coarse", folded into the modulation signal). Both are
pure functions of (text, seed). Null conditions are stored zero embeddings so
classifier-free guidance can bypass encoder computation entirely.
"""

import functools
import zlib
from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor, add, linear, silu
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class EncoderStubConfig:
    vocab_hash_buckets: int = 4096
    d_fine: int = 256
    d_coarse: int = 64
    max_text_len: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.d_fine < 8 or self.d_coarse < 8:
            raise ConfigError("encoder dims must be >= 8")
        if self.vocab_hash_buckets < 1 or self.max_text_len < 1:
            raise ConfigError("vocab_hash_buckets and max_text_len must be positive")


@dataclass
class TextCondition:
    """Fine token embeddings plus a coarse pooled vector, with null flags."""

    fine_tokens: np.ndarray  # [L, d_fine] float32
    fine_mask: np.ndarray    # [L] bool
    coarse: np.ndarray       # [d_coarse] float32
    fine_is_null: bool = False
    coarse_is_null: bool = False
    text: str = ""

    def __post_init__(self):
        if self.fine_tokens.ndim != 2 or self.fine_mask.shape != (self.fine_tokens.shape[0],):
            raise ShapeError("fine_tokens must be [L, d_fine] with a matching [L] mask")


def _tokenize(text):
    return text.split()


def _bucket(token, buckets):
    # crc32 is stable across runs and platforms, unlike hash()
    return zlib.crc32(token.encode("utf-8")) % buckets


@functools.lru_cache(maxsize=8)
def _table(seed, stream, buckets, dim):
    rng = np.random.default_rng([seed, stream])
    return (rng.standard_normal((buckets, dim)) / np.sqrt(dim)).astype(np.float32)


def encode_fine(text, cfg):
    """Token embeddings from the seeded fine table.

    Returns (embeddings [L, d_fine], mask [L]); empty text gives L = 0.
    """
    tokens = _tokenize(text)[: cfg.max_text_len]
    if not tokens:
        return np.zeros((0, cfg.d_fine), np.float32), np.zeros(0, bool)
    table = _table(cfg.seed, 0, cfg.vocab_hash_buckets, cfg.d_fine)
    rows = np.stack([table[_bucket(t, cfg.vocab_hash_buckets)] for t in tokens])
    return rows.copy(), np.ones(len(tokens), bool)


def encode_coarse(text, cfg):
    """Mean of token embeddings from the seeded coarse table; zeros if empty."""
    tokens = _tokenize(text)[: cfg.max_text_len]
    if not tokens:
        return np.zeros(cfg.d_coarse, np.float32)
    table = _table(cfg.seed, 1, cfg.vocab_hash_buckets, cfg.d_coarse)
    rows = np.stack([table[_bucket(t, cfg.vocab_hash_buckets)] for t in tokens])
    return rows.mean(axis=0).astype(np.float32)


def encode_text(text, cfg):
    """Full TextCondition for a caption (null flags set for empty text)."""
    fine, mask = encode_fine(text, cfg)
    coarse = encode_coarse(text, cfg)
    empty = len(_tokenize(text)) == 0
    return TextCondition(fine, mask, coarse, fine_is_null=empty, coarse_is_null=empty, text=text)


def null_condition(cfg):
    """The pre-stored blank condition (zero embeddings, both flags set)."""
    return TextCondition(
        np.zeros((0, cfg.d_fine), np.float32),
        np.zeros(0, bool),
        np.zeros(cfg.d_coarse, np.float32),
        fine_is_null=True,
        coarse_is_null=True,
    )


def drop_conditions(cond, p, rng):
    """Independently null the fine and coarse streams with probability p each.

    Always draws exactly two uniforms so the rng stream position is
    deterministic regardless of outcome.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"dropout probability must be in [0,1], got {p}")
    u_fine, u_coarse = rng.random(), rng.random()
    drop_fine = u_fine < p
    drop_coarse = u_coarse < p
    if not (drop_fine or drop_coarse):
        return cond
    d_fine = cond.fine_tokens.shape[1]
    return TextCondition(
        np.zeros((0, d_fine), np.float32) if drop_fine else cond.fine_tokens,
        np.zeros(0, bool) if drop_fine else cond.fine_mask,
        np.zeros_like(cond.coarse) if drop_coarse else cond.coarse,
        fine_is_null=drop_fine or cond.fine_is_null,
        coarse_is_null=drop_coarse or cond.coarse_is_null,
        text=cond.text,
    )


def timestep_embed(t, dim):
    """Sinusoidal embedding of t in [0,1]: half sines then half cosines of
    1000*t over log-spaced frequencies down to period 10000."""
    if dim % 2 != 0:
        raise ConfigError(f"timestep embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = 1000.0 * float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)]).astype(np.float32)


def timestep_embed_batch(ts, dim):
    """Vectorized timestep_embed over a batch of scalars."""
    if dim % 2 != 0:
        raise ConfigError(f"timestep embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = 1000.0 * np.asarray(ts, np.float64)[:, None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)


def build_y(t_emb, coarse, params, prefix=""):
    """Modulation vector y = MLP_t(t_emb) + MLP_c(coarse).

    Both perceptrons are two-layer with a SiLU hidden; weights live in the
    model parameter dict under `{prefix}t_mlp.*` and `{prefix}c_mlp.*`.
    """
    if not isinstance(t_emb, Tensor) or not isinstance(coarse, Tensor):
        raise ShapeError("build_y expects engine Tensors")
    yt = linear(silu(linear(t_emb, params[prefix + "t_mlp.fc1.w"], params[prefix + "t_mlp.fc1.b"])),
                params[prefix + "t_mlp.fc2.w"], params[prefix + "t_mlp.fc2.b"])
    yc = linear(silu(linear(coarse, params[prefix + "c_mlp.fc1.w"], params[prefix + "c_mlp.fc1.b"])),
                params[prefix + "c_mlp.fc2.w"], params[prefix + "c_mlp.fc2.b"])
    return add(yt, yc)


@dataclass
class CondBatch:
    """A batch of TextConditions padded to a common length for the model."""

    fine: np.ndarray        # [B, L, d_fine] float32, zeros at padded/null slots
    fine_mask: np.ndarray   # [B, L] bool
    coarse: np.ndarray      # [B, d_coarse] float32
    conds: list = field(default_factory=list)

    @property
    def text_len(self):
        return self.fine.shape[1]


def batch_conditions(conds, d_fine=None, d_coarse=None):
    """Stack conditions into padded arrays; masked slots hold zero vectors."""
    conds = list(conds)
    if not conds:
        raise ShapeError("batch_conditions needs at least one condition")
    d_fine = d_fine if d_fine is not None else conds[0].fine_tokens.shape[1]
    d_coarse = d_coarse if d_coarse is not None else conds[0].coarse.shape[0]
    L = max((c.fine_tokens.shape[0] for c in conds), default=0)
    B = len(conds)
    fine = np.zeros((B, L, d_fine), np.float32)
    mask = np.zeros((B, L), bool)
    coarse = np.zeros((B, d_coarse), np.float32)
    for i, c in enumerate(conds):
        n = c.fine_tokens.shape[0]
        if n:
            fine[i, :n] = c.fine_tokens
            mask[i, :n] = c.fine_mask
        coarse[i] = c.coarse
    return CondBatch(fine, mask, coarse, conds)


def null_batch_like(batch, cfg):
    """Unconditional twin of a batch (all streams nulled, same text length)."""
    B, L, d_fine = batch.fine.shape
    return CondBatch(
        np.zeros((B, L, d_fine), np.float32),
        np.zeros((B, L), bool),
        np.zeros_like(batch.coarse),
        [null_condition(cfg) for _ in range(B)],
    )


EMBEDDING_FILE_MAGIC = "EMB v1"


def save_embedding_file(path, rows):
    """Write an embedding table: one-line header then little-endian f32 rows."""
    rows = np.asarray(rows, np.float32)
    if rows.ndim != 2:
        raise ShapeError("embedding file rows must be 2-D")
    with open(path, "wb") as f:
        f.write(f"{EMBEDDING_FILE_MAGIC} {rows.shape[0]} {rows.shape[1]}\n".encode("ascii"))
        f.write(rows.astype("<f4").tobytes())


def load_embedding_file(path):
    """Read a table written by save_embedding_file (or by external tooling)."""
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").strip()
        parts = header.split()
        if len(parts) != 4 or " ".join(parts[:2]) != EMBEDDING_FILE_MAGIC:
            raise ConfigError(f"bad embedding file header: {header!r}")
        count, dim = int(parts[2]), int(parts[3])
        payload = f.read(count * dim * 4)
        if len(payload) != count * dim * 4:
            raise ConfigError("embedding file truncated")
        return np.frombuffer(payload, "<f4").reshape(count, dim).copy()
