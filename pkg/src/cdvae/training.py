"""Mini-batch training of the CDVAE (or a single-domain baseline) and MCD evaluation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from . import features, kernels
from .features import FeatureDomain, MccWarpConfig, SpeakerStats
from .model import CdvaeParams, LossBreakdown, LossWeights, ModelConfig, Objective, draw_noise
from .nn import Rng

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Training data is empty or inconsistent."""


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


class ConfigError(ValueError):
    """Contradictory or unsupported configuration."""


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-4
    batch_size: int | None = None  # None: 1 for CDVAE, 16 for the baselines
    seed: int = 0
    objective: Objective = Objective.CDVAE
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    sim_on_sample: bool = False
    shared_noise: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_interval: int = 0

    def __post_init__(self):
        self.objective = Objective(self.objective)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.batch_size is None:
            self.batch_size = 1 if self.objective is Objective.CDVAE else 16
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "lr": self.lr, "batch_size": self.batch_size, "seed": self.seed,
            "objective": self.objective.value, "weights": vars(self.weights).copy(),
            "model": self.model.to_dict(), "sim_on_sample": self.sim_on_sample,
            "shared_noise": self.shared_noise, "beta1": self.beta1, "beta2": self.beta2,
            "adam_eps": self.adam_eps, "log_interval": self.log_interval,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class FeatureScaler:
    """Per-dimension RMS scaling of network inputs and targets.

    There is no centering, so a zero network output still means a zero
    feature: an untrained decoder does not start out predicting the
    corpus mean.
    """

    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "FeatureScaler":
        rms = np.sqrt(np.mean(np.square(x), axis=0))
        return cls(np.where(rms > 1e-8, rms, 1.0))

    @classmethod
    def identity(cls, dim: int) -> "FeatureScaler":
        return cls(np.ones(dim))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return x / self.scale

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale


@dataclass
class Checkpoint:
    params: CdvaeParams
    config: TrainConfig
    epoch: int
    rng_state: dict
    stats: dict[str, SpeakerStats]
    sp_scaler: FeatureScaler
    mcc_scaler: FeatureScaler
    mcc_cfg: MccWarpConfig = MccWarpConfig()

    def scaler(self, domain) -> FeatureScaler:
        return self.sp_scaler if domain.value == "sp" else self.mcc_scaler

    def fingerprint(self) -> str:
        """Hash of every tensor and counter; changes iff the checkpoint state changes."""
        h = hashlib.sha256()
        st = self.params.store
        for arr in (st.data, st.m, st.v, self.sp_scaler.scale, self.mcc_scaler.scale):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(json.dumps([st.t, self.epoch, self.rng_state], sort_keys=True, default=int).encode())
        return h.hexdigest()


@dataclass
class Utterance:
    """One utterance: the five frame-aligned feature streams of a speaker."""

    speaker_id: str
    utt_id: str
    sp: features.FeatureSequence
    mcc: features.FeatureSequence
    ap: features.FeatureSequence
    f0: features.FeatureSequence
    log_energy: features.FeatureSequence

    def __post_init__(self):
        n = {s.n_frames for s in self.streams().values()}
        if len(n) != 1:
            raise DataError(f"{self.speaker_id}/{self.utt_id}: streams differ in frame count {sorted(n)}")

    def streams(self) -> dict[FeatureDomain, features.FeatureSequence]:
        return {FeatureDomain.SP: self.sp, FeatureDomain.MCC: self.mcc, FeatureDomain.AP: self.ap,
                FeatureDomain.F0: self.f0, FeatureDomain.LOG_ENERGY: self.log_energy}

    @property
    def n_frames(self) -> int:
        return self.sp.n_frames


@dataclass
class FramePool:
    x_sp: np.ndarray
    x_mcc: np.ndarray
    speaker_idx: np.ndarray


def speakers_of(corpus: Sequence[Utterance]) -> list[str]:
    return sorted({u.speaker_id for u in corpus})


def model_inputs(utts: Sequence[Utterance]) -> tuple[np.ndarray, np.ndarray]:
    """Unscaled network inputs: normalized log10 SP and raw MCC, frames stacked."""
    sp = np.concatenate([features.normalize_sp(u.sp.frames)[0] for u in utts])
    mcc = np.concatenate([u.mcc.frames for u in utts])
    return sp, mcc


def build_pool(corpus: Sequence[Utterance], params: CdvaeParams,
               sp_scaler: FeatureScaler, mcc_scaler: FeatureScaler) -> FramePool:
    sp, mcc = model_inputs(corpus)
    idx = np.concatenate([np.full(u.n_frames, params.speaker_index(u.speaker_id), dtype=np.intp)
                          for u in corpus])
    return FramePool(np.ascontiguousarray(sp_scaler.transform(sp)),
                     np.ascontiguousarray(mcc_scaler.transform(mcc)), idx)


def compute_speaker_stats(corpus: Sequence[Utterance]) -> dict[str, SpeakerStats]:
    stats = {}
    for spk in speakers_of(corpus):
        utts = [u for u in corpus if u.speaker_id == spk]
        stats[spk] = features.speaker_stats(spk, [u.f0 for u in utts], [u.mcc for u in utts])
    return stats


def _format_record(epoch: int, batch: int, bd: LossBreakdown) -> str:
    return "\t".join([str(epoch), str(batch)] + [repr(float(v)) for v in bd.as_tuple()])


def init_checkpoint(corpus: Sequence[Utterance], config: TrainConfig,
                    mcc_cfg: MccWarpConfig = MccWarpConfig()) -> Checkpoint:
    """Fresh parameters and scalers (epoch 0) for ``corpus``."""
    if not corpus:
        raise DataError("empty corpus")
    cfg = config.model
    sp, mcc = model_inputs(corpus)
    if sp.shape[1] != cfg.sp_dim or mcc.shape[1] != cfg.mcc_dim:
        raise DataError(f"corpus dims (SP {sp.shape[1]}, MCC {mcc.shape[1]}) do not match the model "
                        f"(SP {cfg.sp_dim}, MCC {cfg.mcc_dim})")
    rng = Rng(config.seed)
    params = CdvaeParams.initialize(cfg, speakers_of(corpus), rng)
    return Checkpoint(params, config, 0, rng.state, {}, FeatureScaler.fit(sp),
                      FeatureScaler.fit(mcc), mcc_cfg)


def train(corpus: Sequence[Utterance], config: TrainConfig, *, resume: Checkpoint | None = None,
          log: TextIO | None = None, backend: str | None = None,
          on_epoch: Callable[[int, LossBreakdown], None] | None = None,
          mcc_cfg: MccWarpConfig = MccWarpConfig()) -> tuple[Checkpoint, list[LossBreakdown]]:
    """Run ``config.epochs`` epochs (on top of ``resume`` if given).

    Frames are shuffled each epoch with the checkpoint RNG, which also draws
    the re-parameterization noise, so the run is fully determined by seed,
    corpus and config. Returns the final checkpoint (speaker statistics
    filled in) and the per-epoch mean loss breakdowns.
    """
    if not corpus:
        raise DataError("empty corpus")
    if resume is None:
        ckpt = init_checkpoint(corpus, config, mcc_cfg)
    else:
        ckpt = resume
        if resume.config.model != config.model or resume.config.objective != config.objective:
            raise ConfigError("resume: model or objective differs from the checkpoint")
        ckpt.config = config
        missing = set(speakers_of(corpus)) - set(ckpt.params.speakers)
        if missing:
            raise DataError(f"resume: speakers {sorted(missing)} are not in the checkpoint")
    params = ckpt.params
    rng = Rng(config.seed)
    rng.state = ckpt.rng_state
    pool = build_pool(corpus, params, ckpt.sp_scaler, ckpt.mcc_scaler)
    n = len(pool.speaker_idx)
    if n == 0:
        raise DataError("corpus has no frames")

    objective = config.objective
    x_sp = pool.x_sp if objective is not Objective.VAE_MCC else None
    x_mcc = pool.x_mcc if objective is not Objective.VAE_SP else None
    weights = config.weights.as_array() if objective is Objective.CDVAE else np.array([1.0, 1.0, 0.0, 0.0])
    kernel = kernels.get(backend).ObjectiveKernel(params)
    adam = kernels.get(backend).adam_update
    st = params.store
    bs, L, mode = config.batch_size, params.config.latent_dim, objective.code
    history = []
    for _ in range(config.epochs):
        epoch = ckpt.epoch + 1
        perm = rng.permutation(n)
        sums = np.zeros(4)
        for b, start in enumerate(range(0, n, bs)):
            idx = perm[start:start + bs]
            noise = draw_noise(rng, len(idx), L, objective, config.shared_noise)
            losses = kernel.loss_and_grad(None if x_sp is None else x_sp[idx],
                                          None if x_mcc is None else x_mcc[idx],
                                          pool.speaker_idx[idx], noise, weights, mode, config.sim_on_sample)
            total = float(weights @ losses)
            if not math.isfinite(total):
                raise DivergenceError(epoch, b, total)
            st.t += 1
            adam(st.data, st.grad, st.m, st.v, st.t, config.lr, config.beta1, config.beta2, config.adam_eps)
            sums += losses * len(idx)
            if log is not None and config.log_interval and (b + 1) % config.log_interval == 0:
                log.write(_format_record(epoch, b + 1, LossBreakdown(*losses, weights=config.weights)) + "\n")
        mean = LossBreakdown(*(sums / n), weights=LossWeights(*weights))
        history.append(mean)
        ckpt.epoch = epoch
        if log is not None:
            log.write(_format_record(epoch, -1, mean) + "\n")
            log.flush()
        if on_epoch is not None:
            on_epoch(epoch, mean)
    ckpt.rng_state = rng.state
    ckpt.stats = compute_speaker_stats(corpus)
    return ckpt, history


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class PairResult:
    source: str
    target: str
    mcd: float
    mcd_before: float
    n_utterances: int


def evaluate(corpus_pairs: Sequence[tuple[Utterance, Utterance]], checkpoint: Checkpoint,
             conversion_path, postfilter=None, silence_threshold_db: float = 40.0) -> list[PairResult]:
    """Mean MCD per (source, target) speaker pair, with the before-conversion baseline.

    Each pair holds a source utterance and the frame-aligned target utterance
    of the same content. Utterance-level mean MCDs are averaged per pair.
    """
    from .conversion import ConversionPath, PostFilter, check_path, convert_utterance

    path = ConversionPath(conversion_path)
    check_path(checkpoint, path)
    postfilter = PostFilter() if postfilter is None else postfilter
    n_bins = checkpoint.mcc_cfg.n_bins
    acc: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for src, tgt in corpus_pairs:
        if src.n_frames != tgt.n_frames:
            raise DataError(f"{src.utt_id} and {tgt.utt_id} are not frame-aligned")
        conv = convert_utterance(checkpoint, src, src.speaker_id, tgt.speaker_id, path, postfilter)
        after = features.mean_mcd(conv.mcc, tgt.mcc, silence_threshold_db, n_bins)
        before = features.mean_mcd(src.mcc, tgt.mcc, silence_threshold_db, n_bins)
        acc.setdefault((src.speaker_id, tgt.speaker_id), []).append((after, before))
    return [PairResult(s, t, float(np.mean([a for a, _ in v])), float(np.mean([b for _, b in v])), len(v))
            for (s, t), v in sorted(acc.items())]


def aligned_pairs(utts: Sequence[Utterance], source: str | None = None,
                  target: str | None = None) -> list[tuple[Utterance, Utterance]]:
    """All (source, target) utterance pairs of different speakers sharing an utterance id."""
    by_id: dict[str, dict[str, Utterance]] = {}
    for u in utts:
        by_id.setdefault(u.utt_id, {})[u.speaker_id] = u
    pairs = []
    for uid in sorted(by_id):
        group = by_id[uid]
        for s in sorted(group):
            for t in sorted(group):
                if s == t or (source is not None and s != source) or (target is not None and t != target):
                    continue
                pairs.append((group[s], group[t]))
    return pairs
