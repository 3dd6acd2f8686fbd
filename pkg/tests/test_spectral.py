"""The windowed DFT against a direct O(N^2) summation oracle, Parseval,
and the lag-to-phase law that makes phase carry timing information."""

import numpy as np
import pytest

from phasecoh.ingest import SensorWindow
from phasecoh.spectral import (SpectralConfig, SpectralError,
                               analysis_window_values, dft_single_frame,
                               to_spectral_tensor)


def dft_direct(signal, cfg):
    """Direct evaluation of the windowed DFT sum, bins 0..F-1."""
    signal = np.asarray(signal, dtype=np.float64)
    w = signal.shape[0]
    g = analysis_window_values(cfg.analysis_window, w)
    out = np.zeros(cfg.n_bins, dtype=complex)
    for f in range(cfg.n_bins):
        acc = 0.0 + 0.0j
        for n in range(w):
            acc += signal[n] * g[n] * np.exp(-2j * np.pi * f * n / cfg.n_fft)
        out[f] = acc
    return out


class TestDftOracle:
    @pytest.mark.parametrize("n_fft", [8, 32, 128, 256])
    @pytest.mark.parametrize("window_kind", ["hann", "rectangular"])
    def test_matches_direct_sum(self, rng, n_fft, window_kind):
        cfg = SpectralConfig(n_fft=n_fft, analysis_window=window_kind)
        for w in {n_fft // 2 + 1, n_fft}:
            signal = rng.normal(size=w)
            np.testing.assert_allclose(dft_single_frame(signal, cfg),
                                       dft_direct(signal, cfg),
                                       rtol=0, atol=1e-9)

    def test_zero_signal_is_exactly_zero(self):
        cfg = SpectralConfig(n_fft=128)
        out = dft_single_frame(np.zeros(60), cfg)
        assert np.all(out == 0)

    def test_on_grid_cosine_rectangular(self):
        # cos at bin 8, full frame: magnitude N/2 there, nothing elsewhere
        cfg = SpectralConfig(n_fft=128, analysis_window="rectangular")
        n = np.arange(128)
        out = dft_single_frame(np.cos(2 * np.pi * 8 * n / 128), cfg)
        mags = np.abs(out)
        assert mags[8] == pytest.approx(64.0, abs=1e-9)
        others = np.delete(mags, 8)
        assert others.max() < 1e-9

    def test_constant_signal_dc_bin(self):
        cfg = SpectralConfig(n_fft=128, analysis_window="rectangular")
        out = dft_single_frame(np.ones(128), cfg)
        assert out[0] == pytest.approx(128.0 + 0.0j, abs=1e-9)
        assert np.abs(out[1:]).max() < 1e-9

    def test_signal_longer_than_fft_rejected(self):
        cfg = SpectralConfig(n_fft=64)
        with pytest.raises(SpectralError, match="exceeds n_fft"):
            dft_single_frame(np.zeros(65), cfg)

    def test_parseval_rectangular(self, rng):
        cfg = SpectralConfig(n_fft=128, analysis_window="rectangular")
        for _ in range(20):
            signal = rng.normal(size=128)
            half = dft_single_frame(signal, cfg)
            # reconstruct the full-spectrum energy from the one-sided bins
            energy = (np.abs(half[0]) ** 2 + np.abs(half[-1]) ** 2
                      + 2 * (np.abs(half[1:-1]) ** 2).sum())
            time_energy = (signal ** 2).sum()
            assert energy / cfg.n_fft == pytest.approx(time_energy, rel=1e-6)

    def test_time_shift_rotates_phase(self):
        # shifting an on-grid sinusoid by k samples rotates its bin phase
        # by -2*pi*f*k/N (mod 2*pi)
        cfg = SpectralConfig(n_fft=128, analysis_window="rectangular")
        n = np.arange(128)
        f_bin = 8
        base = dft_single_frame(np.cos(2 * np.pi * f_bin * n / 128), cfg)
        for k in (1, 5, 13, 40):
            shifted = dft_single_frame(
                np.cos(2 * np.pi * f_bin * (n - k) / 128), cfg)
            delta = np.angle(shifted[f_bin]) - np.angle(base[f_bin])
            expected = -2 * np.pi * f_bin * k / 128
            wrapped = np.angle(np.exp(1j * (delta - expected)))
            assert abs(wrapped) < 1e-6


class TestSpectralTensor:
    def test_magnitude_phase_ranges_fuzzed(self, rng):
        cfg = SpectralConfig()
        for _ in range(50):
            window = SensorWindow(data=rng.normal(size=(60, 5)) * 10,
                                  start_index=0, label=0)
            spec = to_spectral_tensor(window, cfg)
            assert (spec.magnitude >= 0).all()
            assert (spec.phase >= -np.pi).all() and (spec.phase <= np.pi).all()

    def test_matches_modulus_and_argument(self, rng):
        cfg = SpectralConfig()
        data = rng.normal(size=(60, 3))
        spec = to_spectral_tensor(data, cfg)
        for ch in range(3):
            z = dft_single_frame(data[:, ch], cfg)
            np.testing.assert_allclose(spec.magnitude[ch], np.abs(z), atol=1e-12)
            nonzero = np.abs(z) > 0
            np.testing.assert_allclose(spec.phase[ch][nonzero],
                                       np.angle(z[nonzero]), atol=1e-12)

    def test_modulus_argument_identity(self):
        # the decomposition convention itself: z = 3+4j
        z = 3.0 + 4.0j
        assert np.abs(z) == pytest.approx(5.0)
        assert np.angle(z) == pytest.approx(np.arctan2(4.0, 3.0))
        assert np.angle(z) == pytest.approx(0.9272952180016122)

    def test_zero_bins_get_phase_zero(self):
        cfg = SpectralConfig()
        spec = to_spectral_tensor(np.zeros((60, 4)), cfg)
        assert np.all(spec.magnitude == 0)
        assert np.all(spec.phase == 0)

    def test_paper_scale_shape(self, rng):
        cfg = SpectralConfig(n_fft=128)
        spec = to_spectral_tensor(rng.normal(size=(60, 51)), cfg)
        assert spec.stacked().shape == (51, 2, 65)

    def test_config_validation(self):
        with pytest.raises(SpectralError, match="even"):
            SpectralConfig(n_fft=65)
        with pytest.raises(SpectralError, match="analysis_window"):
            SpectralConfig(analysis_window="hamming")
        assert SpectralConfig(n_fft=128).n_bins == 65
