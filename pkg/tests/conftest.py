import pytest
import torch

from uppsqa.samos import ModelConfig
from uppsqa.toy import ToyCorpusConfig, make_toy_corpus

torch.set_num_threads(1)

TINY = dict(
    backbone_options={"dim": 8, "num_layers": 3},
    bottleneck_dim=4,
    lstm_hidden=3,
    head_hidden=4,
    dtype="float64",
)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(**TINY)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Three systems, two clean tones per split, 0.1 s each."""
    cfg = ToyCorpusConfig(
        n_waveforms=6, split_sizes=(2, 2, 2), snrs_db=(20.0, 8.0, 0.0), duration_s=0.1, seed=3
    )
    root = tmp_path_factory.mktemp("small_corpus")
    return root, make_toy_corpus(root, cfg)
