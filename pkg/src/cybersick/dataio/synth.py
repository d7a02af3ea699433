"""Seeded synthetic ERP generator with planted, recoverable structure.

Each trial is temporally smoothed Gaussian noise plus a late positive
deflection on the configured discriminative channels. Non-sick trials carry
the full deflection; sick trials carry it attenuated by the effect
amplitude, so mean(non-sick - sick) at the peak equals `effect_uv`. Every
subject gets a fixed per-channel affine shift (gain ~ N(1, 0.1^2), offset ~
N(0, subject_shift_uv^2)) emulating inter-subject variability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DEFAULT_CHANNELS, DatasetError, ErpEpoch, SubjectSet

PEAK_SAMPLE = 100          # 400 ms at 250 Hz
PEAK_WIDTH = 12.0          # gaussian bump sigma, samples
NOISE_SMOOTH = 4.0         # noise smoothing kernel sigma, samples
GAIN_SIGMA = 0.1


@dataclass
class SynthSpec:
    n_subjects: int = 8
    trials_per_subject: int = 330
    n_channels: int = 16
    n_samples: int = 200
    sampling_rate_hz: float = 250.0
    noise_uv: float = 2.0
    channel_names: tuple = DEFAULT_CHANNELS
    discriminative: tuple = ("LLPf",)
    effect_uv: float = 5.0
    base_uv: float = 2.0            # deflection floor shared by both labels
    sick_fraction: object = 0.3     # scalar, or one value per subject
    subject_shift_uv: float = 3.0
    seed: int = 0

    def __post_init__(self):
        self.channel_names = tuple(self.channel_names)[: self.n_channels]
        self.discriminative = tuple(self.discriminative)
        if min(self.n_subjects, self.trials_per_subject, self.n_channels,
               self.n_samples) <= 0:
            raise DatasetError("all counts must be positive")
        if len(self.channel_names) != self.n_channels:
            raise DatasetError(
                f"{self.n_channels} channels need {self.n_channels} names")
        unknown = set(self.discriminative) - set(self.channel_names)
        if unknown:
            raise DatasetError(f"discriminative channels not in montage: "
                               f"{sorted(unknown)}")
        if self.noise_uv < 0 or self.effect_uv < 0 or self.subject_shift_uv < 0:
            raise DatasetError("noise, effect and shift must be non-negative")

    def sick_fractions(self) -> np.ndarray:
        f = np.asarray(self.sick_fraction, dtype=float).reshape(-1)
        if f.size == 1:
            f = np.repeat(f, self.n_subjects)
        if f.size != self.n_subjects:
            raise DatasetError(
                f"sick_fraction needs 1 or {self.n_subjects} values, got {f.size}")
        if f.min() < 0 or f.max() > 1:
            raise DatasetError("sick fractions must lie in [0, 1]")
        return f


def _smooth_noise(rng, shape, sigma_samples, noise_uv):
    """White noise convolved along time with a unit-energy gaussian kernel,
    so the marginal std stays `noise_uv`."""
    if noise_uv == 0:
        return np.zeros(shape)
    half = int(np.ceil(3 * sigma_samples))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma_samples) ** 2)
    k /= np.sqrt(np.sum(k * k))
    t = shape[-1]
    white = rng.standard_normal(shape[:-1] + (t + 2 * half,))
    sm = np.apply_along_axis(lambda row: np.convolve(row, k, mode="valid"),
                             -1, white)
    return noise_uv * sm


def generate_synthetic(spec: SynthSpec) -> list[SubjectSet]:
    fractions = spec.sick_fractions()
    root = np.random.SeedSequence(spec.seed)
    subject_seeds = root.spawn(spec.n_subjects)

    time = np.arange(spec.n_samples)
    bump = np.exp(-0.5 * ((time - PEAK_SAMPLE) / PEAK_WIDTH) ** 2)
    disc_idx = [spec.channel_names.index(ch) for ch in spec.discriminative]

    subjects = []
    for sidx in range(spec.n_subjects):
        rng = np.random.default_rng(subject_seeds[sidx])
        gain = rng.normal(1.0, GAIN_SIGMA, size=spec.n_channels)
        offset = rng.normal(0.0, spec.subject_shift_uv, size=spec.n_channels)
        labels = (rng.random(spec.trials_per_subject) < fractions[sidx]).astype(int)
        epochs = []
        for i in range(spec.trials_per_subject):
            sig = _smooth_noise(rng, (spec.n_channels, spec.n_samples),
                                NOISE_SMOOTH, spec.noise_uv)
            amp = spec.base_uv + (0.0 if labels[i] else spec.effect_uv)
            for ch in disc_idx:
                sig[ch] += amp * bump
            sig = gain[:, None] * sig + offset[:, None]
            epochs.append(ErpEpoch(subject_id=sidx, trial_index=i,
                                   signal=sig.astype(np.float32),
                                   label=int(labels[i])))
        subjects.append(SubjectSet(subject_id=sidx, epochs=epochs,
                                   channel_names=spec.channel_names))
    return subjects
