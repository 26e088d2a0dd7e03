import numpy as np
import pytest

from cdvae import features, io, training
from cdvae.conversion import (NO_POSTFILTER, ConversionPath, PostFilter, batch_convert, convert_utterance,
                              latent_means)
from cdvae.model import Domain, decode, encode
from cdvae.training import ConfigError, TrainConfig

from conftest import SMALL_MODEL


@pytest.fixture(scope="module")
def ckpt(small_corpus):
    train, _ = small_corpus
    c, _ = training.train(train, TrainConfig(epochs=3, seed=1, model=SMALL_MODEL, lr=1e-3))
    return c


@pytest.fixture(scope="module")
def utt(small_corpus):
    return small_corpus[1][0]


@pytest.fixture(scope="module")
def corpus_dir(small_corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    entries = [io.ManifestEntry(u.speaker_id, u.utt_id, io.write_utterance(u, root / u.speaker_id))
               for u in small_corpus[1]]
    return io.write_manifest(root / "test.tsv", entries)


@pytest.mark.parametrize("path", list(ConversionPath))
@pytest.mark.parametrize("postfilter", [PostFilter(), NO_POSTFILTER])
def test_stream_contracts(ckpt, utt, path, postfilter):
    conv = convert_utterance(ckpt, utt, "S0", "S1", path, postfilter)
    for seq in (conv.sp, conv.mcc, conv.f0, conv.ap, conv.log_energy):
        assert seq.n_frames == utt.n_frames
    assert conv.sp.dim == 513 and conv.mcc.dim == 35
    assert conv.ap.frames.tobytes() == utt.ap.frames.tobytes()
    assert conv.log_energy.frames.tobytes() == utt.log_energy.frames.tobytes()
    assert np.array_equal(conv.f0.frames > 0, utt.f0.frames > 0)
    np.testing.assert_allclose(np.log10(conv.sp.frames.sum(1)), utt.log_energy.frames[:, 0], atol=1e-9)


def test_self_conversion_is_reconstruction(ckpt, utt):
    conv = convert_utterance(ckpt, utt, "S0", "S0", "sp-sp", NO_POSTFILTER)
    norm, energy = features.normalize_sp(utt.sp.frames)
    z = encode(ckpt.params, Domain.SP, ckpt.sp_scaler.transform(norm)).mean
    out = ckpt.sp_scaler.inverse(decode(ckpt.params, Domain.SP, z, ckpt.params.code("S0")))
    shape = out - np.log10(np.sum(10.0 ** out, axis=1, keepdims=True))
    np.testing.assert_allclose(conv.sp.frames, 10.0 ** (shape + energy[:, None]), rtol=1e-12)


def test_mcc_output_keeps_source_power(ckpt, utt):
    conv = convert_utterance(ckpt, utt, "S0", "S1", "mcc-mcc", PostFilter(gv=False, smooth=False))
    assert np.array_equal(conv.mcc.frames[:, 0], utt.mcc.frames[:, 0])


def test_gv_applied_to_mcc_output(ckpt, utt):
    conv = convert_utterance(ckpt, utt, "S0", "S1", "mcc-mcc", PostFilter(gv=True, smooth=False))
    np.testing.assert_allclose(conv.mcc.frames[:, 1:].var(0), ckpt.stats["S1"].mcc_gv[1:], rtol=1e-9)


def test_sp_encoder_paths_share_latents(ckpt, utt):
    a = convert_utterance(ckpt, utt, "S0", "S1", "sp-sp")
    b = convert_utterance(ckpt, utt, "S0", "S1", "sp-mcc")
    c = convert_utterance(ckpt, utt, "S0", "S1", "mcc-sp")
    assert np.array_equal(a.latent_mean, b.latent_mean)
    assert np.array_equal(c.latent_mean, latent_means(ckpt, utt, Domain.MCC))


def test_deterministic_and_read_only(ckpt, utt):
    before = ckpt.fingerprint()
    a = convert_utterance(ckpt, utt, "S0", "S1", "mcc-sp")
    b = convert_utterance(ckpt, utt, "S0", "S1", "mcc-sp")
    assert a.sp.frames.tobytes() == b.sp.frames.tobytes()
    assert a.mcc.frames.tobytes() == b.mcc.frames.tobytes()
    assert ckpt.fingerprint() == before


def test_unknown_speaker(ckpt, utt):
    with pytest.raises(KeyError):
        convert_utterance(ckpt, utt, "S0", "S9", "sp-sp")
    with pytest.raises(KeyError):
        convert_utterance(ckpt, utt, "S9", "S1", "sp-sp")


def test_baseline_checkpoint_paths(small_corpus, utt):
    vae, _ = training.train(small_corpus[0], TrainConfig(epochs=1, model=SMALL_MODEL, objective="vae-sp"))
    convert_utterance(vae, utt, "S0", "S1", "sp-sp")
    for path in ("sp-mcc", "mcc-sp", "mcc-mcc"):
        with pytest.raises(ConfigError):
            convert_utterance(vae, utt, "S0", "S1", path)


def test_path_domains():
    assert ConversionPath.SP_MCC.input_domain is Domain.SP
    assert ConversionPath.SP_MCC.output_domain is Domain.MCC
    assert ConversionPath("mcc-sp") is ConversionPath.MCC_SP


class TestBatchConvert:
    def test_counts_and_manifest(self, ckpt, corpus_dir, tmp_path):
        files = batch_convert(ckpt, corpus_dir, [("S0", "S1"), ("S1", "S0")], "sp-mcc", tmp_path)
        n_utts = len(io.read_manifest(corpus_dir))
        assert len(files) == n_utts * len(io.STREAMS)
        out = io.read_manifest(tmp_path / "manifest.tsv")
        assert len(out) == n_utts
        assert {e.speaker_id for e in out} == {"S0", "S1"}
        io.load_utterance(out[0])

    def test_rerun_is_byte_identical(self, ckpt, corpus_dir, tmp_path):
        a = batch_convert(ckpt, corpus_dir, [("S0", "S1")], "mcc-mcc", tmp_path / "a")
        b = batch_convert(ckpt, corpus_dir, [("S0", "S1")], "mcc-mcc", tmp_path / "b")
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]

    def test_empty_pairs(self, ckpt, corpus_dir, tmp_path):
        assert batch_convert(ckpt, corpus_dir, [], "sp-sp", tmp_path / "none") == []
        assert not (tmp_path / "none").exists()

    def test_missing_file_named(self, ckpt, corpus_dir, tmp_path):
        entries = io.read_manifest(corpus_dir)
        gone = entries[0].paths["ap"]
        entries[0].paths["ap"] = gone.with_name("missing.ap.cdvf")
        with pytest.raises(FileNotFoundError, match="missing.ap.cdvf"):
            batch_convert(ckpt, entries, [(entries[0].speaker_id, "S1")], "sp-sp", tmp_path)
