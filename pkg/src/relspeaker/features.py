"""Log mel-filterbank front end with mean normalization and SpecAugment.

80-dim log mel features, 25 ms window / 10 ms hop, mean-normalized across
time. No voice activity detection. SpecAugment masks up to 10 time frames
and up to 8 mel bins per utterance during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = 1e-10
PREEMPHASIS = 0.97


@dataclass
class WaveformClip:
    """A single-channel waveform with its speaker label."""

    samples: np.ndarray
    sample_rate: int = 16000
    speaker_id: int = 0
    clip_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("clip %r: samples must be a non-empty 1-D array" % self.clip_id)
        if self.sample_rate <= 0:
            raise ValueError("clip %r: sample_rate must be positive, got %d"
                             % (self.clip_id, self.sample_rate))


@dataclass
class LogMelFeatures:
    """n_mels x T matrix of natural-log mel energies."""

    values: np.ndarray
    n_mels: int = 80
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.n_mels:
            raise ValueError("expected a %d x T feature matrix, got shape %s"
                             % (self.n_mels, self.values.shape))

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class SpecAugmentConfig:
    max_time_frames: int = 10
    max_freq_bins: int = 8
    mask_value: float = 0.0

    def __post_init__(self):
        if self.max_time_frames < 0:
            raise ValueError("max_time_frames must be >= 0")
        if self.max_freq_bins < 0:
            raise ValueError("max_freq_bins must be >= 0")


def num_frames(num_samples: int, window_samples: int, hop_samples: int) -> int:
    """Frame count for a clip: floor((L - window) / hop) + 1."""
    if num_samples < window_samples:
        return 0
    return (num_samples - window_samples) // hop_samples + 1


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int,
                   f_min: float = 20.0, f_max: float | None = None) -> np.ndarray:
    """Triangular mel filters (HTK scale) on rfft bins, shape n_mels x (n_fft//2 + 1)."""
    if f_max is None:
        f_max = sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fbank = np.zeros((n_mels, bin_freqs.size))
    for m in range(n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (bin_freqs - left) / (center - left)
        down = (right - bin_freqs) / (right - center)
        fbank[m] = np.maximum(0.0, np.minimum(up, down))
    return fbank


def mel_center_freqs(n_mels: int, sample_rate: int,
                     f_min: float = 20.0, f_max: float | None = None) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    if f_max is None:
        f_max = sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    return mel_to_hz(mel_points)[1:-1]


def compute_log_mel(clip: WaveformClip, n_mels: int = 80,
                    window_ms: float = 25.0, hop_ms: float = 10.0) -> LogMelFeatures:
    """Frame, window (Hamming, after pre-emphasis), DFT, mel-integrate, log."""
    window_samples = int(round(clip.sample_rate * window_ms / 1000.0))
    hop_samples = int(round(clip.sample_rate * hop_ms / 1000.0))
    n_samples = clip.samples.size
    t = num_frames(n_samples, window_samples, hop_samples)
    if t < 1:
        raise ValueError(
            "clip %r has %d samples, shorter than one %g ms analysis window (%d samples)"
            % (clip.clip_id, n_samples, window_ms, window_samples))

    emphasized = np.append(clip.samples[0], clip.samples[1:] - PREEMPHASIS * clip.samples[:-1])
    idx = np.arange(window_samples)[None, :] + hop_samples * np.arange(t)[:, None]
    frames = emphasized[idx] * np.hamming(window_samples)

    spectrum = np.abs(np.fft.rfft(frames, n=window_samples, axis=1)) ** 2
    fbank = mel_filterbank(n_mels, window_samples, clip.sample_rate)
    mel_energy = spectrum @ fbank.T
    log_mel = np.log(np.maximum(mel_energy, LOG_FLOOR)).T  # n_mels x T
    return LogMelFeatures(values=log_mel, n_mels=n_mels,
                          frame_length_ms=window_ms, frame_shift_ms=hop_ms)


def mean_normalize(features: LogMelFeatures) -> LogMelFeatures:
    """Subtract the per-mel-bin temporal mean."""
    values = features.values - features.values.mean(axis=1, keepdims=True)
    return LogMelFeatures(values=values, n_mels=features.n_mels,
                          frame_length_ms=features.frame_length_ms,
                          frame_shift_ms=features.frame_shift_ms)


def spec_augment(features: LogMelFeatures, config: SpecAugmentConfig,
                 rng: np.random.Generator) -> LogMelFeatures:
    """Apply one time mask and one frequency mask, widths drawn uniformly."""
    values = features.values.copy()
    n_mels, t = values.shape

    t_width = int(rng.integers(0, min(config.max_time_frames, t) + 1))
    t_start = int(rng.integers(0, t - t_width + 1))
    values[:, t_start:t_start + t_width] = config.mask_value

    f_width = int(rng.integers(0, min(config.max_freq_bins, n_mels) + 1))
    f_start = int(rng.integers(0, n_mels - f_width + 1))
    values[f_start:f_start + f_width, :] = config.mask_value

    return LogMelFeatures(values=values, n_mels=features.n_mels,
                          frame_length_ms=features.frame_length_ms,
                          frame_shift_ms=features.frame_shift_ms)
