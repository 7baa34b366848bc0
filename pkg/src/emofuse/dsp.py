"""Frame-wise low-level acoustic feature extraction.

Audio is cut into 25 ms frames advanced by 10 ms and each frame is mapped
to a 34-dimensional feature vector. The feature set and its order are
frozen (checkpoints depend on them):

    [0]      zero crossing rate
    [1]      short-time energy (mean square)
    [2]      entropy of energy over 8 sub-blocks
    [3]      spectral centroid (fraction of Nyquist)
    [4]      spectral spread (fraction of Nyquist)
    [5]      spectral entropy over 8 bands
    [6]      spectral flux vs the previous frame (0 for the first)
    [7]      spectral rolloff at 0.90 of total power
    [8..20]  13 MFCCs (Hamming window, 40 HTK mel filters, orthonormal DCT-II)
    [21..32] 12 chroma-class energies (A440 reference, power-normalized)
    [33]     chroma deviation (population std of the 12 chroma values)

All spectral quantities share one windowed DFT per frame: Hamming window,
zero-padded to the next power of two, magnitude via the real FFT.
"""

from __future__ import annotations

import hashlib
import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InputError

SAMPLE_RATE = 16000
FRAME_WIDTH_MS = 25
FRAME_STEP_MS = 10
N_FEATURES = 34

FEATURE_NAMES: tuple[str, ...] = (
    "zcr", "energy", "energy_entropy", "spectral_centroid", "spectral_spread",
    "spectral_entropy", "spectral_flux", "spectral_rolloff",
    *(f"mfcc_{i}" for i in range(13)),
    *(f"chroma_{i}" for i in range(12)),
    "chroma_deviation",
)

_EPS = 1e-10


def feature_order_hash() -> str:
    """Stable fingerprint of the feature list; stored in checkpoints."""
    return hashlib.sha256(",".join(FEATURE_NAMES).encode()).hexdigest()[:16]


@dataclass
class AudioClip:
    """Mono audio samples in [-1, 1] at a known sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InputError(f"audio must be a nonempty 1-d array, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("audio contains non-finite samples")
        if np.abs(self.samples).max() > 1.0:
            raise InputError("audio samples must lie in [-1, 1]; normalize before loading")
        if self.sample_rate <= 0:
            raise InputError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FrameFeatureMatrix:
    """Feature column per frame: shape [34 × n]."""

    features: np.ndarray
    frame_width_ms: int = FRAME_WIDTH_MS
    frame_step_ms: int = FRAME_STEP_MS

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != N_FEATURES:
            raise InputError(
                f"feature matrix must be [{N_FEATURES} × n], got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise InputError("feature matrix contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.features.shape[1]


def read_wav(path) -> AudioClip:
    """Read a RIFF WAV file; only 16 kHz mono 16-bit PCM is accepted."""
    try:
        with wave.open(str(path), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            raw = wav.readframes(wav.getnframes())
    except (wave.Error, EOFError) as exc:
        raise InputError(f"not a readable WAV file: {path} ({exc})") from exc
    if channels != 1:
        raise InputError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise InputError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise InputError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz; resample first")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1]."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(pcm.tobytes())


def frame_signal(clip: AudioClip, width_ms: int = FRAME_WIDTH_MS,
                 step_ms: int = FRAME_STEP_MS) -> np.ndarray:
    """Cut the clip into frames; returns [n × win] with trailing samples dropped.

    n = (num_samples - win) // hop + 1 with win/hop in samples.
    """
    if step_ms <= 0 or width_ms < step_ms:
        raise InputError(f"need width_ms >= step_ms > 0, got {width_ms}/{step_ms}")
    win = clip.sample_rate * width_ms // 1000
    hop = clip.sample_rate * step_ms // 1000
    if clip.samples.size < win:
        raise InputError(
            f"clip of {clip.samples.size} samples is shorter than one {win}-sample frame")
    n = (clip.samples.size - win) // hop + 1
    frames = np.empty((n, win), dtype=np.float64)
    for i in range(n):
        frames[i] = clip.samples[i * hop:i * hop + win]
    return frames


# ---------------------------------------------------------------------------
# per-frame features


def _next_pow2(n: int) -> int:
    size = 1
    while size < n:
        size *= 2
    return size


@lru_cache(maxsize=8)
def _hamming(length: int) -> np.ndarray:
    return np.hamming(length)


@lru_cache(maxsize=8)
def _mel_filterbank(n_mels: int, nfft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters [n_mels × nfft//2+1] on the HTK mel scale, 0..Nyquist."""
    def to_mel(hz):
        return 2595.0 * np.log10(1.0 + hz / 700.0)

    def to_hz(mel):
        return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)

    edges = to_hz(np.linspace(to_mel(0.0), to_mel(sample_rate / 2.0), n_mels + 2))
    bin_hz = np.arange(nfft // 2 + 1) * (sample_rate / nfft)
    bank = np.zeros((n_mels, bin_hz.size))
    for j in range(n_mels):
        left, center, right = edges[j], edges[j + 1], edges[j + 2]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        bank[j] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


@lru_cache(maxsize=8)
def _dct_matrix(n_coeffs: int, n: int) -> np.ndarray:
    """Orthonormal DCT-II rows: D[k, i] = s_k cos(pi (2i+1) k / 2n)."""
    i = np.arange(n)
    mat = np.cos(np.pi * np.outer(np.arange(n_coeffs), 2 * i + 1) / (2 * n))
    mat[0] *= np.sqrt(1.0 / n)
    mat[1:] *= np.sqrt(2.0 / n)
    return mat


@lru_cache(maxsize=8)
def _chroma_classes(nfft: int, sample_rate: int) -> np.ndarray:
    """Pitch class (0..11, A440 reference) per spectrum bin; -1 for DC."""
    bin_hz = np.arange(nfft // 2 + 1) * (sample_rate / nfft)
    classes = np.full(bin_hz.size, -1, dtype=np.int64)
    positive = bin_hz > 0
    classes[positive] = np.round(12.0 * np.log2(bin_hz[positive] / 440.0)).astype(np.int64) % 12
    return classes


def _magnitude_spectrum(frame: np.ndarray) -> np.ndarray:
    nfft = _next_pow2(frame.size)
    return np.abs(np.fft.rfft(frame * _hamming(frame.size), nfft))


def _block_entropy(energies: np.ndarray) -> float:
    total = energies.sum()
    if total <= 0.0:
        return 0.0
    p = energies / total
    p = p[p > 0.0]
    return float(-(p * np.log2(p)).sum())


def zero_crossing_rate(frame: np.ndarray) -> float:
    """Crossings per adjacent pair, in [0, 1]; sign(0) counts as +1."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size < 2:
        return 0.0
    signs = np.where(frame >= 0.0, 1.0, -1.0)
    return float(np.abs(np.diff(signs)).sum() / (2.0 * (frame.size - 1)))


def short_time_energy(frame: np.ndarray) -> float:
    """Mean of squared samples."""
    frame = np.asarray(frame, dtype=np.float64)
    return float(np.mean(frame * frame))


def mfcc(frame: np.ndarray, sample_rate: int, n_mels: int = 40,
         n_coeffs: int = 13) -> np.ndarray:
    """Mel-frequency cepstral coefficients of one frame.

    Hamming window -> zero-padded power spectrum -> triangular mel
    filterbank -> natural log (floored at 1e-10) -> orthonormal DCT-II,
    first n_coeffs kept.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size < 2:
        raise InputError(f"mfcc needs a frame of at least 2 samples, got {frame.size}")
    mag = _magnitude_spectrum(frame)
    nfft = _next_pow2(frame.size)
    energies = _mel_filterbank(n_mels, nfft, sample_rate) @ (mag * mag)
    log_e = np.log(np.maximum(energies, _EPS))
    return _dct_matrix(n_coeffs, n_mels) @ log_e


def _llf_from_spectrum(frame: np.ndarray, mag: np.ndarray, prev_mag_l1: np.ndarray | None,
                       sample_rate: int) -> np.ndarray:
    out = np.empty(N_FEATURES, dtype=np.float64)
    power = mag * mag
    total_power = power.sum()
    nyquist = sample_rate / 2.0
    nfft = _next_pow2(frame.size)
    bin_hz = np.arange(mag.size) * (sample_rate / nfft)

    out[0] = zero_crossing_rate(frame)
    out[1] = short_time_energy(frame)

    n_blocks = min(8, frame.size)
    block_len = frame.size // n_blocks
    blocks = frame[:n_blocks * block_len].reshape(n_blocks, block_len)
    out[2] = _block_entropy((blocks * blocks).sum(axis=1))

    mag_sum = mag.sum()
    if mag_sum > 0.0:
        centroid_hz = float((bin_hz * mag).sum() / mag_sum)
        spread_hz = float(np.sqrt((((bin_hz - centroid_hz) ** 2) * mag).sum() / mag_sum))
        out[3] = centroid_hz / nyquist
        out[4] = spread_hz / nyquist
    else:
        out[3] = 0.0
        out[4] = 0.0

    n_bands = min(8, mag.size)
    band_len = mag.size // n_bands
    bands = power[:n_bands * band_len].reshape(n_bands, band_len)
    out[5] = _block_entropy(bands.sum(axis=1))

    mag_l1 = mag / mag_sum if mag_sum > 0.0 else np.zeros_like(mag)
    if prev_mag_l1 is None:
        out[6] = 0.0
    else:
        diff = mag_l1 - prev_mag_l1
        out[6] = float(np.sqrt((diff * diff).sum()))

    if total_power > 0.0:
        out[7] = float(np.argmax(np.cumsum(power) >= 0.90 * total_power)) / mag.size
    else:
        out[7] = 0.0

    out[8:21] = mfcc(frame, sample_rate)

    chroma = np.zeros(12, dtype=np.float64)
    if total_power > 0.0:
        classes = _chroma_classes(nfft, sample_rate)
        np.add.at(chroma, classes[classes >= 0], power[classes >= 0])
        chroma /= total_power
    out[21:33] = chroma
    out[33] = float(chroma.std())
    return out


def extract_llf(frame: np.ndarray, sample_rate: int,
                prev_frame: np.ndarray | None = None) -> np.ndarray:
    """The 34-dimensional feature vector of one frame.

    Spectral flux compares against prev_frame; pass None for the first
    frame of an utterance (flux is then 0).
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size < 2:
        raise InputError(f"need a frame of at least 2 samples, got {frame.size}")
    prev_l1 = None
    if prev_frame is not None:
        prev_mag = _magnitude_spectrum(np.asarray(prev_frame, dtype=np.float64))
        s = prev_mag.sum()
        prev_l1 = prev_mag / s if s > 0.0 else np.zeros_like(prev_mag)
    return _llf_from_spectrum(frame, _magnitude_spectrum(frame), prev_l1, sample_rate)


def utterance_features(clip: AudioClip, width_ms: int = FRAME_WIDTH_MS,
                       step_ms: int = FRAME_STEP_MS) -> FrameFeatureMatrix:
    """Feature matrix [34 × n] for a whole clip; column i describes frame i."""
    frames = frame_signal(clip, width_ms, step_ms)
    out = np.empty((N_FEATURES, frames.shape[0]), dtype=np.float64)
    prev_l1 = None
    for i in range(frames.shape[0]):
        mag = _magnitude_spectrum(frames[i])
        out[:, i] = _llf_from_spectrum(frames[i], mag, prev_l1, clip.sample_rate)
        s = mag.sum()
        prev_l1 = mag / s if s > 0.0 else np.zeros_like(mag)
    return FrameFeatureMatrix(out, width_ms, step_ms)
