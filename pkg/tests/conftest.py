import numpy as np
import pytest
import torch

from relspeaker.data import SyntheticSpeakerSpec, generate_synthetic_corpus


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """6 speakers (2 held out) x 6 short clips; enough for fast smoke runs."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    spec = SyntheticSpeakerSpec(n_speakers=6, n_heldout=2, clips_per_speaker=6,
                                clip_seconds=1.0, seed=11)
    manifest = generate_synthetic_corpus(spec, out)
    return out, manifest


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """The acceptance-scale corpus: 10 train speakers x 20 clips, 5 held out."""
    out = tmp_path_factory.mktemp("desk_corpus")
    spec = SyntheticSpeakerSpec(n_speakers=15, n_heldout=5, clips_per_speaker=20,
                                clip_seconds=1.0, seed=7)
    manifest = generate_synthetic_corpus(spec, out)
    return out, manifest
