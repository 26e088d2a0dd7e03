import numpy as np
import pytest

from cdvae import synth
from cdvae.model import CdvaeParams, ModelConfig
from cdvae.nn import Rng


def tiny_config(width: int = 6, latent: int = 4, speaker: int = 3, sp_dim: int = 9, mcc_dim: int = 5) -> ModelConfig:
    return ModelConfig(sp_dim=sp_dim, mcc_dim=mcc_dim, latent_dim=latent, speaker_dim=speaker,
                       enc_sp_hidden=(width,), enc_mcc_hidden=(width,),
                       dec_sp_hidden=(width,), dec_mcc_hidden=(width,))


SMALL_MODEL = ModelConfig(latent_dim=8, speaker_dim=8, enc_sp_hidden=(16,), enc_mcc_hidden=(16,),
                          dec_sp_hidden=(16,), dec_mcc_hidden=(16,))


@pytest.fixture
def tiny_params():
    return CdvaeParams.initialize(tiny_config(), ["a", "b"], Rng(7))


@pytest.fixture(scope="session")
def small_corpus():
    """Two speakers, three short training and two held-out utterances each."""
    cfg = synth.SynthConfig(seed=5, utterances_per_speaker=3, frames_per_utterance=30, test_utterances=2)
    return synth.synthesize(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One summary line per acceptance criterion, filled by test_acceptance.py.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
