"""Seeded synthetic parallel corpus of formant-like spectra.

Every speaker utters the same phone sequences, so utterances with the same
id are frame-aligned across speakers. Spectra are sums of Gaussian formant
bumps on the linear-frequency grid; phones share formant templates and each
speaker applies its own frequency scaling, bandwidth scaling, amplitude
offsets, spectral tilt and overall gain, all multiplied by ``perturbation``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features, io
from .features import FeatureDomain, FeatureSequence, MccWarpConfig
from .training import Utterance

N_FORMANTS = 4
SILENCE_DB = -60.0


@dataclass
class SynthConfig:
    seed: int = 0
    n_speakers: int = 2
    utterances_per_speaker: int = 10
    frames_per_utterance: int = 100
    n_phones: int = 8
    perturbation: float = 1.0
    test_utterances: int = 0
    frame_period_ms: float = 5.0
    mcc: MccWarpConfig = field(default_factory=MccWarpConfig)

    def __post_init__(self):
        if isinstance(self.mcc, dict):
            self.mcc = MccWarpConfig(**self.mcc)
        for name in ("n_speakers", "utterances_per_speaker", "frames_per_utterance", "n_phones"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.test_utterances < 0 or self.perturbation < 0:
            raise ValueError("test_utterances and perturbation must be >= 0")


def speaker_ids(n: int) -> list[str]:
    return [f"S{i}" for i in range(n)]


def _rng(cfg: SynthConfig, *key: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, *key])


def _phone_templates(cfg: SynthConfig) -> dict[str, np.ndarray]:
    rng = _rng(cfg, 0)
    centers = np.sort(rng.uniform(0.03, 0.75, (cfg.n_phones, N_FORMANTS)), axis=1)
    return {
        "center": centers,
        "width": rng.uniform(0.012, 0.035, (cfg.n_phones, N_FORMANTS)),
        "amp": rng.uniform(1.5, 4.0, (cfg.n_phones, N_FORMANTS)),
        "tilt": rng.uniform(2.0, 5.0, cfg.n_phones),
        "voiced": rng.uniform(size=cfg.n_phones) < 0.75,
    }


def _speaker_traits(cfg: SynthConfig, index: int) -> dict:
    rng = _rng(cfg, 1, index)
    n = cfg.n_speakers
    spread = 0.0 if n == 1 else -1.0 + 2.0 * index / (n - 1)
    p = cfg.perturbation
    return {
        "freq_scale": np.exp(p * (0.12 * spread + rng.normal(0, 0.02))),
        "width_scale": np.exp(p * rng.normal(0, 0.15)),
        "amp_offset": p * rng.normal(0, 0.5, N_FORMANTS),
        "tilt_offset": p * (0.8 * spread + rng.normal(0, 0.3)),
        "gain_db": p * rng.normal(0, 3.0),
        "logf0_mean": np.log(120.0) + 0.5 * spread + rng.normal(0, 0.05),
        "logf0_std": rng.uniform(0.08, 0.16),
    }


def _content(cfg: SynthConfig, utt_key: int, templates: dict) -> dict:
    """Speaker-independent frame trajectories of one utterance."""
    rng = _rng(cfg, 2, utt_key)
    T = cfg.frames_per_utterance
    n_sil = min(3, max(0, (T - 1) // 4))
    phones = np.empty(T, dtype=np.intp)
    t = 0
    while t < T:
        dur = int(rng.integers(6, 17))
        phones[t:t + dur] = rng.integers(cfg.n_phones)
        t += dur
    params = {k: templates[k][phones] for k in ("center", "width", "amp", "tilt")}
    kernel = np.array([0.25, 0.5, 0.25])
    for k, v in params.items():
        # soften phone boundaries
        pad = np.concatenate([v[:1], v, v[-1:]]) if v.ndim == 1 else np.vstack([v[:1], v, v[-1:]])
        params[k] = sum(w * pad[i:i + T] for i, w in enumerate(kernel))
    params["center"] = params["center"] + rng.normal(0, 0.002, params["center"].shape)
    silent = np.zeros(T, dtype=bool)
    silent[:n_sil] = True
    silent[T - n_sil:] = True
    energy_db = np.cumsum(rng.normal(0, 0.8, T))
    energy_db -= energy_db.mean()
    return {**params, "voiced": templates["voiced"][phones] & ~silent, "silent": silent,
            "energy_db": energy_db, "f0_shape": np.convolve(rng.normal(0, 1, T + 8), np.ones(9) / 3, "valid")}


def _spectrum(cfg: SynthConfig, content: dict, traits: dict) -> np.ndarray:
    n_bins = cfg.mcc.n_bins
    f = np.linspace(0.0, 1.0, n_bins)
    centers = np.clip(content["center"] * traits["freq_scale"], 0.005, 0.98)
    widths = content["width"] * traits["width_scale"]
    amps = content["amp"] + traits["amp_offset"]
    tilt = content["tilt"] + traits["tilt_offset"]
    bumps = amps[:, :, None] * np.exp(-0.5 * ((f[None, None, :] - centers[:, :, None]) / widths[:, :, None]) ** 2)
    log_sp = bumps.sum(axis=1) - tilt[:, None] * f[None, :]
    log_sp = np.where(content["silent"][:, None], -1.0 * f[None, :], log_sp)
    gain_db = content["energy_db"] + traits["gain_db"] + np.where(content["silent"], SILENCE_DB, 0.0)
    return np.exp(log_sp) * 10.0 ** (gain_db[:, None] / 10.0) * 1e-3


def _utterance(cfg: SynthConfig, spk_index: int, utt_id: str, utt_key: int, templates: dict) -> Utterance:
    spk = speaker_ids(cfg.n_speakers)[spk_index]
    traits = _speaker_traits(cfg, spk_index)
    content = _content(cfg, utt_key, templates)
    sp = _spectrum(cfg, content, traits)
    T, period = sp.shape[0], cfg.frame_period_ms
    f0 = np.where(content["voiced"], np.exp(traits["logf0_mean"] + traits["logf0_std"] * content["f0_shape"]), 0.0)
    log_energy = features.normalize_sp(sp)[1]

    def seq(domain, frames):
        return FeatureSequence(domain, frames, period, spk)

    return Utterance(spk, utt_id,
                     seq(FeatureDomain.SP, sp),
                     seq(FeatureDomain.MCC, features.sp_to_mcc(sp, cfg.mcc)),
                     seq(FeatureDomain.AP, np.full((T, cfg.mcc.n_bins), 0.1)),
                     seq(FeatureDomain.F0, f0[:, None]),
                     seq(FeatureDomain.LOG_ENERGY, log_energy[:, None]))


def synthesize(cfg: SynthConfig) -> tuple[list[Utterance], list[Utterance]]:
    """In-memory (train, held-out test) utterances for every speaker."""
    templates = _phone_templates(cfg)
    train, test = [], []
    for s in range(cfg.n_speakers):
        for j in range(cfg.utterances_per_speaker):
            train.append(_utterance(cfg, s, f"u{j:03d}", j, templates))
        for j in range(cfg.test_utterances):
            test.append(_utterance(cfg, s, f"t{j:03d}", 100_000 + j, templates))
    return train, test


def quantize(utts: list[Utterance]) -> list[Utterance]:
    """Round every stream through float32, as a write/read of feature files would."""
    out = []
    for u in utts:
        q = {k: FeatureSequence(s.domain, s.frames.astype(np.float32).astype(np.float64),
                                s.frame_period_ms, s.speaker_id)
             for k, s in zip(("sp", "mcc", "ap", "f0", "log_energy"),
                             (u.sp, u.mcc, u.ap, u.f0, u.log_energy))}
        out.append(Utterance(u.speaker_id, u.utt_id, **q))
    return out


def gen_synthetic_corpus(cfg: SynthConfig, out_dir) -> Path:
    """Write all feature files plus ``train.tsv`` (and ``test.tsv``); return the train manifest path."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out_dir}: {e}") from e
    train, test = synthesize(cfg)
    for name, utts in (("train", train), ("test", test)):
        if not utts:
            continue
        entries = [io.ManifestEntry(u.speaker_id, u.utt_id, io.write_utterance(u, out_dir / u.speaker_id))
                   for u in utts]
        io.write_manifest(out_dir / f"{name}.tsv", entries)
    return out_dir / "train.tsv"
