"""Windowed single-frame DFT of sensor windows into magnitude/phase spectra.

Each sliding window is reduced to one complex spectrum per sensor: the
signal is multiplied by an analysis window, zero-padded up to the DFT
size, and transformed. Only the non-negative frequency half is kept
(``F = n_fft // 2 + 1`` bins). Magnitude and principal-value phase are
stored side by side; downstream modules treat phase as the carrier of
within-window timing information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WINDOW_KINDS = ("hann", "rectangular")


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralConfig:
    """DFT size and analysis window selection.

    The Hann window is the periodic variant 0.5 - 0.5*cos(2*pi*n/W).
    Signals shorter than ``n_fft`` are zero-padded after windowing.
    """

    n_fft: int = 128
    analysis_window: str = "hann"

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft % 2 != 0:
            raise SpectralError(f"n_fft must be even and >= 2, got {self.n_fft}")
        if self.analysis_window not in WINDOW_KINDS:
            raise SpectralError(
                f"analysis_window must be one of {WINDOW_KINDS}, "
                f"got {self.analysis_window!r}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


def analysis_window_values(kind: str, length: int) -> np.ndarray:
    """Sample the analysis window at ``length`` points."""
    if kind == "hann":
        n = np.arange(length)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)
    if kind == "rectangular":
        return np.ones(length)
    raise SpectralError(f"unknown analysis window {kind!r}")


@dataclass
class SpectralTensor:
    """Per-sensor magnitude and phase spectra of one window.

    magnitude: (C, F), non-negative. phase: (C, F), radians in [-pi, pi];
    bins with exactly zero magnitude carry phase 0 by convention.
    """

    magnitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        self.magnitude = np.asarray(self.magnitude, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.magnitude.shape != self.phase.shape or self.magnitude.ndim != 2:
            raise SpectralError(
                f"magnitude/phase must be matching 2-D arrays, got "
                f"{self.magnitude.shape} and {self.phase.shape}")

    @property
    def n_channels(self) -> int:
        return self.magnitude.shape[0]

    @property
    def n_bins(self) -> int:
        return self.magnitude.shape[1]

    def stacked(self) -> np.ndarray:
        """(C, 2, F) array with magnitude in channel 0 and phase in channel 1."""
        return np.stack([self.magnitude, self.phase], axis=1)


def dft_single_frame(signal: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Windowed, zero-padded DFT of one frame; returns bins 0..F-1.

    The signal (length W <= n_fft) is multiplied by the analysis window
    sampled at W points, zero-padded to n_fft, and transformed.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise SpectralError(f"expected a 1-D signal, got shape {signal.shape}")
    w = signal.shape[0]
    if w > cfg.n_fft:
        raise SpectralError(
            f"signal length {w} exceeds n_fft {cfg.n_fft}; shorten the window "
            f"or enlarge the DFT")
    g = analysis_window_values(cfg.analysis_window, w)
    return np.fft.rfft(signal * g, n=cfg.n_fft)


def to_spectral_tensor(window, cfg: SpectralConfig) -> SpectralTensor:
    """Transform a window (SensorWindow or W x C array) into spectra.

    Phase of a bin with exactly zero magnitude is defined as 0, which
    keeps atan2(0, 0) out of the coherence computations.
    """
    data = np.asarray(getattr(window, "data", window), dtype=np.float64)
    if data.ndim != 2:
        raise SpectralError(f"expected a W x C window, got shape {data.shape}")
    w, n_ch = data.shape
    if w > cfg.n_fft:
        raise SpectralError(
            f"window length {w} exceeds n_fft {cfg.n_fft}")
    g = analysis_window_values(cfg.analysis_window, w)
    spectra = np.fft.rfft(data * g[:, None], n=cfg.n_fft, axis=0).T  # (C, F)
    magnitude = np.abs(spectra)
    phase = np.angle(spectra)
    phase[magnitude == 0.0] = 0.0
    return SpectralTensor(magnitude=magnitude, phase=phase)
