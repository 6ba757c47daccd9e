"""Audio front-end: WAV I/O, exact-parameter mel-spectrogram extraction and
Griffin-Lim phase reconstruction.

Pinned analysis parameters: 16 kHz mono clips of exactly 163840 samples
(10.24 s), periodic Hann window of 1024, hop 160, centered frames with
reflect padding, 64 triangular mel filters on the Slaney scale over
0..8000 Hz with area normalization, natural log with floor 1e-5. A clip
therefore yields exactly ceil(163840/160) = 1024 frames.
"""

import struct
import wave
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InputError

SAMPLE_RATE = 16000
CLIP_SAMPLES = 163840  # 10.24 s
N_FFT = 1024
WIN_LENGTH = 1024
HOP_LENGTH = 160
N_MELS = 64
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-5
N_FRAMES = -(-CLIP_SAMPLES // HOP_LENGTH)  # ceil, = 1024


@dataclass
class AudioClip:
    """Mono f32 audio at 16 kHz, exactly 163840 samples, peak <= 1."""

    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, np.float32)
        if self.samples.ndim != 1 or self.samples.shape[0] != CLIP_SAMPLES:
            raise InputError(
                f"clip must be {CLIP_SAMPLES} mono samples, got shape {self.samples.shape}"
            )
        if np.abs(self.samples).max(initial=0.0) > 1.0 + 1e-6:
            raise InputError("clip samples exceed full scale (|s| > 1)")


def make_clip(samples):
    """Pad/trim arbitrary mono audio to clip length and clamp to full scale."""
    s = np.asarray(samples, np.float32).reshape(-1)
    if s.shape[0] < CLIP_SAMPLES:
        s = np.pad(s, (0, CLIP_SAMPLES - s.shape[0]))
    else:
        s = s[:CLIP_SAMPLES]
    return AudioClip(np.clip(s, -1.0, 1.0))


@dataclass
class MelSpec:
    """Log-mel magnitudes [64 bins, 1024 frames] plus summary stats."""

    values: np.ndarray
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, np.float32)
        if self.values.shape != (N_MELS, N_FRAMES):
            raise InputError(f"mel must be {N_MELS}x{N_FRAMES}, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise InputError("mel contains non-finite values")
        self.mean = float(self.values.mean())
        self.std = float(self.values.std())


def hann_window(n=WIN_LENGTH):
    """Periodic Hann window."""
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)).astype(np.float64)


def _frame_offsets(n_frames=N_FRAMES):
    return np.arange(n_frames) * HOP_LENGTH


def stft_magnitude(samples):
    """Magnitude STFT [513, 1024] of a clip, frames centered at k*hop."""
    return np.abs(_stft_padded(_reflect_pad(samples)))


def _reflect_pad(samples):
    half = WIN_LENGTH // 2
    return np.pad(np.asarray(samples, np.float64), (half, half), mode="reflect")


def _stft_padded(padded):
    """Complex STFT of an already-padded signal (frame t starts at t*hop)."""
    win = hann_window()
    offs = _frame_offsets()
    idx = offs[:, None] + np.arange(WIN_LENGTH)[None, :]
    frames = padded[idx] * win
    return np.fft.rfft(frames, n=N_FFT, axis=1).T  # [bins, frames]


def _istft_padded(spec):
    """Least-squares overlap-add inverse of _stft_padded (padded domain)."""
    win = hann_window()
    frames = np.fft.irfft(spec.T, n=N_FFT, axis=1)[:, :WIN_LENGTH]
    offs = _frame_offsets()
    out = np.zeros(offs[-1] + WIN_LENGTH)
    wsum = np.zeros_like(out)
    for t, o in enumerate(offs):
        out[o:o + WIN_LENGTH] += frames[t] * win
        wsum[o:o + WIN_LENGTH] += win * win
    good = wsum > 1e-10
    out[good] /= wsum[good]
    full = np.zeros(CLIP_SAMPLES + WIN_LENGTH)
    full[: out.shape[0]] = out
    return full


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, log above."""
    f = np.asarray(f, np.float64)
    f_sp = 200.0 / 3.0
    min_log_hz = 1000.0
    logstep = np.log(6.4) / 27.0
    mel = f / f_sp
    above = f >= min_log_hz
    mel = np.where(above, min_log_hz / f_sp + np.log(np.maximum(f, 1e-10) / min_log_hz) / logstep, mel)
    return mel


def mel_to_hz(m):
    m = np.asarray(m, np.float64)
    f_sp = 200.0 / 3.0
    min_log_mel = 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    f = m * f_sp
    above = m >= min_log_mel
    return np.where(above, 1000.0 * np.exp(logstep * (m - min_log_mel)), f)


def mel_filterbank():
    """[64, 513] triangular filters, Slaney area-normalized, 0..8 kHz."""
    fft_freqs = np.linspace(0, SAMPLE_RATE / 2, N_FFT // 2 + 1)
    pts = mel_to_hz(np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), N_MELS + 2))
    fb = np.zeros((N_MELS, fft_freqs.shape[0]))
    for m in range(N_MELS):
        lo, mid, hi = pts[m], pts[m + 1], pts[m + 2]
        up = (fft_freqs - lo) / (mid - lo)
        down = (hi - fft_freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        fb[m] *= 2.0 / (hi - lo)
    return fb


def mel_spectrogram(clip):
    """AudioClip -> 64x1024 log-mel MelSpec."""
    if isinstance(clip, AudioClip):
        samples = clip.samples
    else:
        samples = np.asarray(clip, np.float32)
        if samples.shape != (CLIP_SAMPLES,):
            raise InputError(
                f"expected a {CLIP_SAMPLES}-sample clip at {SAMPLE_RATE} Hz, got {samples.shape}"
            )
    mag = stft_magnitude(samples)
    mel = mel_filterbank() @ mag
    return MelSpec(np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32))


def griffin_lim(mel, iters=32, seed=None):
    """Reconstruct a waveform from a log-mel spectrogram.

    Mel magnitudes are lifted to the linear spectrogram with the filterbank
    pseudo-inverse (clamped at zero), then `iters` rounds of alternating
    projection recover a phase; starts from zero phase so the output is
    deterministic. Returns (AudioClip, residuals per iteration).
    """
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    values = mel.values if isinstance(mel, MelSpec) else np.asarray(mel)
    mag_mel = np.exp(values.astype(np.float64))
    target = np.maximum(np.linalg.pinv(mel_filterbank()) @ mag_mel, 0.0)
    phase = np.zeros_like(target)
    residuals = []
    x = None
    for _ in range(iters):
        spec = target * np.exp(1j * phase)
        x = _istft_padded(spec)
        rebuilt = _stft_padded(x)
        residuals.append(float(np.linalg.norm(np.abs(rebuilt) - target) / max(np.linalg.norm(target), 1e-12)))
        phase = np.angle(rebuilt)
    half = WIN_LENGTH // 2
    wav = x[half: half + CLIP_SAMPLES]
    peak = np.abs(wav).max()
    if peak > 1e-9:
        wav = 0.97 * wav / peak
    return AudioClip(wav.astype(np.float32)), residuals


def write_wav(path, clip):
    """PCM 16-bit mono 16 kHz little-endian RIFF."""
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def read_wav(path):
    """Read a PCM16 mono 16 kHz WAV and pad/trim it to clip length."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise InputError(f"{path}: expected mono, got {w.getnchannels()} channels")
        if w.getframerate() != SAMPLE_RATE:
            raise InputError(f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()}")
        if w.getsampwidth() != 2:
            raise InputError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        raw = w.readframes(w.getnframes())
    pcm = np.frombuffer(raw, "<i2").astype(np.float32) / 32768.0
    return make_clip(pcm)
