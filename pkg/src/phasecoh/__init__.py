"""Phase-coherence frequency-domain anomaly detection for multivariate
sensor streams.

Submodules:
    ingest     CSV loading, scaling, windowing, splits
    spectral   windowed single-frame DFT into magnitude/phase spectra
    coherence  phase coherence index and circular helpers
    autodiff   minimal reverse-mode differentiation engine
    model      CNN + coherence-weighted graph attention + transformer
               autoencoder, parameter accounting, checkpoints
    train      composite loss, Adam, cosine schedule, epoch loop
    detect     scoring, thresholding, detection metrics
    synth      coupled-oscillator data generator with attack injection
    cli        the ``phasecoh`` command
"""

from . import autodiff, coherence, config, detect, ingest, model, spectral, synth, train

__all__ = ["autodiff", "coherence", "config", "detect", "ingest", "model",
           "spectral", "synth", "train"]

__version__ = "0.1.0"
