"""Deterministic toy spectrogram codec.

A 64x1024 log-mel is tiled into non-overlapping 4x8 (freq x time) blocks,
giving the fixed 16x128 latent grid; each 32-value block is projected to c
channels by a seeded matrix with orthonormal rows. Decompression applies the
transpose, which is the exact right-inverse on the projected subspace (and a
lossless inverse at c = 32). The codec stands in for a learned autoencoder:
it preserves the latent geometry the model trains on without any weights.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .audio import MelSpec, N_FRAMES, N_MELS

LATENT_H = 16
LATENT_W = 128
BLOCK_F = N_MELS // LATENT_H    # 4
BLOCK_T = N_FRAMES // LATENT_W  # 8
BLOCK_SIZE = BLOCK_F * BLOCK_T  # 32


@dataclass
class LatentSpec:
    """16 x 128 x c latent block-projection of a mel-spectrogram."""

    values: np.ndarray
    codec_seed: int

    def __post_init__(self):
        self.values = np.asarray(self.values, np.float32)
        if self.values.ndim != 3 or self.values.shape[:2] != (LATENT_H, LATENT_W):
            raise ShapeError(
                f"latent must be {LATENT_H}x{LATENT_W}xc, got {self.values.shape}"
            )


class ToyCodec:
    """Fixed orthonormal block projection keyed by (c, seed)."""

    def __init__(self, c=4, seed=0):
        if not 1 <= c <= BLOCK_SIZE:
            raise ConfigError(f"latent channels must be in [1, {BLOCK_SIZE}], got {c}")
        self.c = c
        self.seed = int(seed)
        rng = np.random.default_rng([self.seed, 0xC0DEC])
        q, r = np.linalg.qr(rng.standard_normal((BLOCK_SIZE, BLOCK_SIZE)))
        q *= np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
        self.projection = q[:, :c].T.copy()  # [c, 32], orthonormal rows

    def compress(self, mel, seed_check=True):
        """MelSpec (or raw [64,1024]) -> LatentSpec [16,128,c]."""
        values = mel.values if isinstance(mel, MelSpec) else np.asarray(mel, np.float32)
        if values.shape != (N_MELS, N_FRAMES):
            raise ShapeError(f"expected {N_MELS}x{N_FRAMES} mel, got {values.shape}")
        blocks = (
            values.reshape(LATENT_H, BLOCK_F, LATENT_W, BLOCK_T)
            .transpose(0, 2, 1, 3)
            .reshape(LATENT_H, LATENT_W, BLOCK_SIZE)
        )
        return LatentSpec(blocks @ self.projection.T, self.seed)

    def decompress(self, latent):
        """LatentSpec -> MelSpec via the transposed projection.

        Raises ConfigError when the latent was produced under another seed;
        silently decoding it would return garbage that still looks valid.
        """
        if isinstance(latent, LatentSpec):
            if latent.codec_seed != self.seed:
                raise ConfigError(
                    f"latent was encoded with codec seed {latent.codec_seed}, "
                    f"decoder has seed {self.seed}"
                )
            values = latent.values
        else:
            values = np.asarray(latent, np.float32)
        if values.shape != (LATENT_H, LATENT_W, self.c):
            raise ShapeError(
                f"expected {LATENT_H}x{LATENT_W}x{self.c} latent, got {values.shape}"
            )
        blocks = values @ self.projection  # [16,128,32]
        mel = (
            blocks.reshape(LATENT_H, LATENT_W, BLOCK_F, BLOCK_T)
            .transpose(0, 2, 1, 3)
            .reshape(N_MELS, N_FRAMES)
        )
        return MelSpec(mel.astype(np.float32))


def toy_compress(mel, c=4, seed=0):
    return ToyCodec(c=c, seed=seed).compress(mel)


def toy_decompress(latent, c=None, seed=None):
    if isinstance(latent, LatentSpec):
        c = latent.values.shape[2] if c is None else c
        seed = latent.codec_seed if seed is None else seed
    return ToyCodec(c=c, seed=seed).decompress(latent)
