import numpy as np
import pytest

from cdvae import features, synth
from cdvae.training import aligned_pairs


def test_same_seed_byte_identical(tmp_path):
    cfg = synth.SynthConfig(seed=3, utterances_per_speaker=2, frames_per_utterance=20, test_utterances=1)
    synth.gen_synthetic_corpus(cfg, tmp_path / "a")
    synth.gen_synthetic_corpus(cfg, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 2 + 2 * 3 * 5
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_different_seed_differs():
    a = synth.synthesize(synth.SynthConfig(seed=1, utterances_per_speaker=1, frames_per_utterance=20))[0]
    b = synth.synthesize(synth.SynthConfig(seed=2, utterances_per_speaker=1, frames_per_utterance=20))[0]
    assert not np.array_equal(a[0].sp.frames, b[0].sp.frames)


def test_zero_perturbation_gives_identical_speakers():
    train, _ = synth.synthesize(synth.SynthConfig(perturbation=0.0, n_speakers=3, utterances_per_speaker=2,
                                                  frames_per_utterance=30))
    pairs = aligned_pairs(train)
    assert len(pairs) == 12
    for a, b in pairs:
        assert a.sp.frames.tobytes() == b.sp.frames.tobytes()


def test_mcd_between_and_within_speakers():
    train, _ = synth.synthesize(synth.SynthConfig(utterances_per_speaker=2, frames_per_utterance=60))
    for a, b in aligned_pairs(train):
        assert features.mean_mcd(a.mcc, b.mcc) > 0
        assert features.mean_mcd(a.mcc, a.mcc) == 0


def test_stream_shapes_and_alignment():
    train, test = synth.synthesize(synth.SynthConfig(utterances_per_speaker=2, frames_per_utterance=40,
                                                     test_utterances=1))
    assert len(train) == 4 and len(test) == 2
    for u in train + test:
        assert u.sp.frames.shape == (40, 513) and u.mcc.frames.shape == (40, 35)
        assert u.ap.frames.shape == (40, 513) and u.f0.frames.shape == (40, 1)
        assert np.any(u.f0.frames == 0) and np.any(u.f0.frames > 0)
        np.testing.assert_allclose(u.log_energy.frames[:, 0], np.log10(u.sp.frames.sum(1)), rtol=1e-12)
    assert {u.utt_id for u in test} == {"t000"}


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        synth.gen_synthetic_corpus(synth.SynthConfig(utterances_per_speaker=1, frames_per_utterance=10),
                                   blocker / "sub")
