import numpy as np
import pytest

from phasecoh.model import ModelConfig


@pytest.fixture(scope="session")
def tiny_cfg():
    """Desk-scale model used by most integration tests."""
    return ModelConfig(n_channels=8, window_size=60, n_fft=128, embed_dim=32,
                       d_model=64, heads=4, transformer_layers=2, gat_layers=2,
                       gat_heads=4, ffn_dim=128, cnn_channels=(8, 16),
                       decoder_hidden=64, seed=7)


@pytest.fixture(scope="session")
def micro_cfg():
    """Smallest config that still exercises every path; used for
    finite-difference checks of the end-to-end gradient."""
    return ModelConfig(n_channels=4, window_size=12, n_fft=16, embed_dim=8,
                       d_model=16, heads=4, transformer_layers=2, gat_layers=2,
                       gat_heads=4, ffn_dim=32, cnn_channels=(4, 8),
                       decoder_hidden=16, seed=11)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def random_window(rng, n_rows, n_channels, start=0, label=0):
    from phasecoh.ingest import SensorWindow
    return SensorWindow(data=rng.normal(size=(n_rows, n_channels)),
                        start_index=start, label=label)
