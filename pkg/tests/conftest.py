import numpy as np
import pytest

from everadapt.data import DomainDataset
from everadapt.models import ModelSpec
from everadapt.types import ConvBlock

TINY_BLOCKS = (ConvBlock(4, 5), ConvBlock(6, 3))

TINY_CONFIG = """\
seeds = 2

[data]
window_len = 32
n_per_class = 5

[model]
conv_blocks = [[4, 5, 0.0]]

[train]
epochs = 1
batch_size = 8
lr = 0.01
"""


def make_domain(domain_id, *, n_per_class=8, window=32, gain=1.0, noise=0.1, seed=0, classes=3):
    """Class `c` is a sinusoid with `2 * (c + 1)` cycles per window."""
    rng = np.random.default_rng(seed)
    time = np.arange(window) / window
    segments, labels = [], []
    for label in range(classes):
        for _ in range(n_per_class):
            phase = rng.uniform(0.0, 2 * np.pi)
            signal = gain * np.sin(2 * np.pi * 2 * (label + 1) * time + phase)
            segments.append(signal + rng.normal(0.0, noise, window))
            labels.append(label)
    return DomainDataset(domain_id, np.stack(segments)[:, None, :], np.asarray(labels))


@pytest.fixture
def domain_factory():
    return make_domain


@pytest.fixture
def tiny_spec():
    return ModelSpec(conv_blocks=TINY_BLOCKS, input_length=32, num_classes=3)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "everadapt.toml"
    path.write_text(TINY_CONFIG)
    return path
