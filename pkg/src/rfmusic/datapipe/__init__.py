"""Audio and data front-end: mel extraction, toy latent codec, Griffin-Lim
reconstruction, synthetic captioned data, and image/WAV serialization."""

from .audio import (
    CLIP_SAMPLES,
    HOP_LENGTH,
    LOG_FLOOR,
    N_FRAMES,
    N_MELS,
    SAMPLE_RATE,
    WIN_LENGTH,
    AudioClip,
    MelSpec,
    griffin_lim,
    hann_window,
    make_clip,
    mel_filterbank,
    mel_spectrogram,
    read_wav,
    stft_magnitude,
    write_wav,
)
from .codec import BLOCK_SIZE, LATENT_H, LATENT_W, LatentSpec, ToyCodec, toy_compress, toy_decompress
from .images import hstack_grid, read_pgm, write_pgm
from .synth import (
    ATTRIBUTE_AXES,
    ATTRIBUTES,
    DatasetManifest,
    ManifestEntry,
    SynthDataset,
    SynthRecipe,
    attrs_to_caption,
    caption_to_attrs,
    spectral_centroid,
    synth_mel,
)

__all__ = [
    "AudioClip", "MelSpec", "LatentSpec", "ToyCodec", "SynthDataset", "SynthRecipe",
    "DatasetManifest", "ManifestEntry",
    "mel_spectrogram", "griffin_lim", "stft_magnitude", "mel_filterbank", "hann_window",
    "toy_compress", "toy_decompress", "make_clip", "read_wav", "write_wav",
    "write_pgm", "read_pgm", "hstack_grid",
    "synth_mel", "attrs_to_caption", "caption_to_attrs", "spectral_centroid",
    "ATTRIBUTES", "ATTRIBUTE_AXES",
    "SAMPLE_RATE", "CLIP_SAMPLES", "N_MELS", "N_FRAMES", "HOP_LENGTH", "WIN_LENGTH",
    "LOG_FLOOR", "LATENT_H", "LATENT_W", "BLOCK_SIZE",
]
