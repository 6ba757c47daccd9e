"""Synthetic captioned dataset: parametric spectrogram patterns over a
binary attribute grid {pitch: low/high, tempo: slow/fast, texture:
tonal/percussive}. Every sample is a pure function of (recipe, seed, index),
so streaming, resume and held-out splits are all trivially reproducible.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError
from .audio import LOG_FLOOR, MelSpec, N_FRAMES, N_MELS
from .codec import ToyCodec

ATTRIBUTES = {
    "pitch": ("low", "high"),
    "tempo": ("slow", "fast"),
    "texture": ("tonal", "percussive"),
}
ATTRIBUTE_AXES = tuple(ATTRIBUTES)


@dataclass(frozen=True)
class SynthRecipe:
    """Pattern parameters; defaults give well-separated attribute classes."""

    low_bin: float = 10.0
    high_bin: float = 38.0
    bin_jitter: float = 2.0
    slow_hz: float = 1.0
    fast_hz: float = 4.0
    rate_jitter: float = 0.1
    harmonic_offsets: tuple = (0.0, 12.0, 20.0)
    tone_width: float = 1.6
    percussive_width: float = 13.0
    decay_frac: float = 0.12
    noise_floor: float = 2e-4
    name: str = "default"


@dataclass
class ManifestEntry:
    caption: str
    caption_source: str  # "original" | "synthetic"
    recipe: str = "default"
    index: int = 0
    audio_path: str = ""


@dataclass
class DatasetManifest:
    """JSON-lines manifest; `mixture_ratio` is the original-caption share."""

    entries: list = field(default_factory=list)
    mixture_ratio: float = 0.2

    def save(self, path):
        with open(path, "w") as f:
            f.write(json.dumps({"mixture_ratio": self.mixture_ratio}) + "\n")
            for e in self.entries:
                f.write(json.dumps(asdict(e)) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            header = json.loads(f.readline())
            entries = [ManifestEntry(**json.loads(line)) for line in f if line.strip()]
        return cls(entries, header.get("mixture_ratio", 0.2))


def attrs_to_caption(attrs, source="original"):
    base = f"{attrs['pitch']} {attrs['tempo']} {attrs['texture']}"
    if source == "synthetic":
        return base + " music clip"
    return base


def caption_to_attrs(caption):
    tokens = caption.split()
    attrs = {}
    for axis, values in ATTRIBUTES.items():
        found = [v for v in values if v in tokens]
        if len(found) != 1:
            raise ConfigError(f"caption {caption!r} does not name one {axis} value")
        attrs[axis] = found[0]
    return attrs


def synth_mel(attrs, rng, recipe=SynthRecipe()):
    """Log-mel [64, 1024] for an attribute combination with per-draw jitter."""
    frames = np.arange(N_FRAMES)
    dt = 160.0 / 16000.0  # seconds per frame
    rate = recipe.slow_hz if attrs["tempo"] == "slow" else recipe.fast_hz
    rate *= 1.0 + recipe.rate_jitter * (2.0 * rng.random() - 1.0)
    phase = rng.random()
    cycle = (frames * dt * rate + phase) % 1.0

    if attrs["texture"] == "tonal":
        env = 0.55 + 0.45 * np.sin(2.0 * np.pi * cycle)
    else:
        env = np.exp(-cycle / recipe.decay_frac)

    base = recipe.low_bin if attrs["pitch"] == "low" else recipe.high_bin
    base += recipe.bin_jitter * (2.0 * rng.random() - 1.0)
    bins = np.arange(N_MELS)
    if attrs["texture"] == "tonal":
        amps = (1.0, 0.6, 0.4)
        profile = np.zeros(N_MELS)
        for off, amp in zip(recipe.harmonic_offsets, amps):
            a = amp * (0.8 + 0.4 * rng.random())
            profile += a * np.exp(-0.5 * ((bins - base - off) / recipe.tone_width) ** 2)
    else:
        profile = np.exp(-0.5 * ((bins - base - 6.0) / recipe.percussive_width) ** 2)

    level = 0.8 + 0.4 * rng.random()
    mag = level * np.outer(profile, env)
    mag += recipe.noise_floor * rng.random((N_MELS, N_FRAMES))
    return MelSpec(np.log(np.maximum(mag, LOG_FLOOR)).astype(np.float32))


def spectral_centroid(mel):
    """Mean mel bin weighted by linear magnitude."""
    mag = np.exp(np.asarray(mel.values if isinstance(mel, MelSpec) else mel, np.float64))
    w = mag.sum(axis=1)
    return float((np.arange(N_MELS) * w).sum() / w.sum())


class SynthDataset:
    """Deterministic stream of (LatentSpec, caption, attrs) samples."""

    def __init__(self, recipe=SynthRecipe(), codec=None, seed=0, mixture_ratio=0.2):
        self.recipe = recipe
        self.codec = codec or ToyCodec()
        self.seed = int(seed)
        self.mixture_ratio = float(mixture_ratio)

    def _rng(self, index):
        return np.random.default_rng([self.seed, int(index)])

    def attrs(self, index):
        rng = self._rng(index)
        picks = rng.integers(0, 2, size=len(ATTRIBUTE_AXES))
        return {axis: ATTRIBUTES[axis][p] for axis, p in zip(ATTRIBUTE_AXES, picks)}

    def mel(self, index):
        rng = self._rng(index)
        picks = rng.integers(0, 2, size=len(ATTRIBUTE_AXES))
        attrs = {axis: ATTRIBUTES[axis][p] for axis, p in zip(ATTRIBUTE_AXES, picks)}
        return synth_mel(attrs, rng, self.recipe), attrs

    def sample(self, index):
        rng = self._rng(index)
        picks = rng.integers(0, 2, size=len(ATTRIBUTE_AXES))
        attrs = {axis: ATTRIBUTES[axis][p] for axis, p in zip(ATTRIBUTE_AXES, picks)}
        mel = synth_mel(attrs, rng, self.recipe)
        source = "original" if rng.random() < self.mixture_ratio else "synthetic"
        latent = self.codec.compress(mel)
        return latent, attrs_to_caption(attrs, source), attrs

    def batch(self, indices):
        """Stacked latents [B,16,128,c] plus captions and attrs lists."""
        latents, captions, attrs = [], [], []
        for i in indices:
            lat, cap, a = self.sample(i)
            latents.append(lat.values)
            captions.append(cap)
            attrs.append(a)
        return np.stack(latents), captions, attrs

    def manifest(self, count):
        entries = []
        for i in range(count):
            rng = self._rng(i)
            picks = rng.integers(0, 2, size=len(ATTRIBUTE_AXES))
            attrs = {axis: ATTRIBUTES[axis][p] for axis, p in zip(ATTRIBUTE_AXES, picks)}
            synth_mel(attrs, rng, self.recipe)  # keep rng stream aligned with sample()
            source = "original" if rng.random() < self.mixture_ratio else "synthetic"
            entries.append(ManifestEntry(attrs_to_caption(attrs, source), source, self.recipe.name, i))
        return DatasetManifest(entries, self.mixture_ratio)

    def normalization_stats(self, count=256):
        """Global (mean, std) of latent values over the first `count` samples."""
        vals = np.stack([self.sample(i)[0].values for i in range(count)])
        return float(vals.mean()), float(vals.std())
