"""Frame-level speech features: spectral codecs, F0 transform and metrics.

Conventions
-----------
* SP and AP are positive spectral envelopes on ``n_bins`` linear-frequency
  bins covering [0, pi]. SP normalization uses base-10 logs.
* Mel-cepstra are computed in closed form: natural-log spectrum, resampled
  onto an all-pass-warped frequency axis, then an orthonormal DCT-II,
  truncated to ``order`` coefficients. Coefficient 0 carries frame power.
* F0 is in Hz with 0 marking unvoiced frames; statistics use natural logs.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.fft
import scipy.ndimage

from .nn import ShapeError

logger = logging.getLogger(__name__)


class FeatureError(ValueError):
    """Invalid feature values (e.g. non-positive spectra)."""


class StatisticsError(ValueError):
    """Statistics cannot be computed or are degenerate."""


class EvaluationError(ValueError):
    """A metric has no frames to average over."""


class FeatureDomain(enum.IntEnum):
    SP = 0
    MCC = 1
    AP = 2
    F0 = 3
    LOG_ENERGY = 4

    @property
    def suffix(self) -> str:
        return {0: "sp", 1: "mcc", 2: "ap", 3: "f0", 4: "energy"}[int(self)]


@dataclass
class FeatureSequence:
    """Time-ordered frames (T x D) of one feature stream."""

    domain: FeatureDomain
    frames: np.ndarray
    frame_period_ms: float = 5.0
    speaker_id: str = ""

    def __post_init__(self):
        self.domain = FeatureDomain(self.domain)
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames[:, None]
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise FeatureError(f"{self.domain.name}: need a non-empty (T, D) matrix, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise FeatureError(f"{self.domain.name}: non-finite frame values")
        if self.domain in (FeatureDomain.SP, FeatureDomain.AP) and np.any(frames <= 0):
            raise FeatureError(f"{self.domain.name}: entries must be positive")
        if self.domain in (FeatureDomain.F0, FeatureDomain.LOG_ENERGY) and frames.shape[1] != 1:
            raise FeatureError(f"{self.domain.name}: expected one value per frame")
        if self.domain is FeatureDomain.F0 and np.any(frames < 0):
            raise FeatureError("F0: entries must be >= 0")
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class SpeakerStats:
    speaker_id: str
    logf0_mean: float
    logf0_std: float
    mcc_gv: np.ndarray
    mcc_mean: np.ndarray


@dataclass(frozen=True)
class MccWarpConfig:
    alpha: float = 0.455
    order: int = 35
    n_bins: int = 513

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.order > self.n_bins:
            raise ValueError(f"order {self.order} exceeds n_bins {self.n_bins}")
        if self.order < 1 or self.n_bins < 2:
            raise ValueError("order >= 1 and n_bins >= 2 required")


# ---------------------------------------------------------------------------
# SP normalization


def normalize_sp(sp: np.ndarray) -> tuple[np.ndarray, np.ndarray | float]:
    """Split a spectrum into a unit-energy log10 shape and its log10 energy.

    Works on one frame (returns a float energy) or a (T, n_bins) matrix.
    """
    sp = np.asarray(sp, dtype=np.float64)
    if np.any(~(sp > 0)):
        raise FeatureError("normalize_sp: spectrum entries must be positive")
    energy = sp.sum(axis=-1, keepdims=True)
    norm = np.log10(sp / energy)
    log_energy = np.log10(energy[..., 0])
    return norm, (float(log_energy) if sp.ndim == 1 else log_energy)


def denormalize_sp(norm_sp: np.ndarray, log_energy) -> np.ndarray:
    norm_sp = np.asarray(norm_sp, dtype=np.float64)
    log_energy = np.asarray(log_energy, dtype=np.float64)
    if norm_sp.ndim == 2:
        log_energy = log_energy.reshape(-1, 1)
    return 10.0 ** (norm_sp + log_energy)


# ---------------------------------------------------------------------------
# Warped cepstrum codec


def warp_frequency(omega: np.ndarray, alpha: float) -> np.ndarray:
    """Phase response of the first-order all-pass: the mel-like frequency map."""
    return omega + 2.0 * np.arctan(alpha * np.sin(omega) / (1.0 - alpha * np.cos(omega)))


def _grid(n_bins: int) -> np.ndarray:
    return np.linspace(0.0, np.pi, n_bins)


def _warp_log_spectrum(log_sp: np.ndarray, alpha: float) -> np.ndarray:
    if alpha == 0:
        return log_sp
    omega = _grid(log_sp.shape[-1])
    warped = warp_frequency(omega, alpha)
    return np.apply_along_axis(lambda row: np.interp(omega, warped, row), -1, log_sp)


def _unwarp_log_spectrum(log_sp_warped: np.ndarray, alpha: float) -> np.ndarray:
    if alpha == 0:
        return log_sp_warped
    omega = _grid(log_sp_warped.shape[-1])
    warped = warp_frequency(omega, alpha)
    return np.apply_along_axis(lambda row: np.interp(warped, omega, row), -1, log_sp_warped)


def sp_to_mcc(sp: np.ndarray, cfg: MccWarpConfig = MccWarpConfig()) -> np.ndarray:
    """Mel-cepstrum of one SP frame or a (T, n_bins) matrix."""
    sp = np.asarray(sp, dtype=np.float64)
    if sp.shape[-1] != cfg.n_bins:
        raise FeatureError(f"sp_to_mcc: expected {cfg.n_bins} bins, got {sp.shape[-1]}")
    if np.any(~(sp > 0)):
        raise FeatureError("sp_to_mcc: spectrum entries must be positive")
    warped = _warp_log_spectrum(np.log(sp), cfg.alpha)
    return scipy.fft.dct(warped, type=2, norm="ortho", axis=-1)[..., :cfg.order]


def mcc_to_sp(mcc: np.ndarray, cfg: MccWarpConfig = MccWarpConfig()) -> np.ndarray:
    """Spectral envelope from mel-cepstra: zero-pad, inverse DCT, unwarp, exponentiate."""
    mcc = np.asarray(mcc, dtype=np.float64)
    if mcc.shape[-1] > cfg.n_bins:
        raise FeatureError(f"mcc_to_sp: {mcc.shape[-1]} coefficients exceed {cfg.n_bins} bins")
    pad = [(0, 0)] * (mcc.ndim - 1) + [(0, cfg.n_bins - mcc.shape[-1])]
    warped = scipy.fft.idct(np.pad(mcc, pad), type=2, norm="ortho", axis=-1)
    return np.exp(_unwarp_log_spectrum(warped, cfg.alpha))


def log_spectrum_gain(n_bins: int) -> float:
    """Coefficient 0 produced by a log-spectrum that is 1 on every bin."""
    return math.sqrt(n_bins)


# ---------------------------------------------------------------------------
# F0


def _frames_of(seq) -> np.ndarray:
    return np.ravel(seq.frames if isinstance(seq, FeatureSequence) else seq)


def f0_statistics(f0_seqs: Iterable) -> tuple[float, float]:
    """Mean and population std of ln F0 over voiced frames of all sequences."""
    voiced = [f[f > 0] for f in (_frames_of(s) for s in f0_seqs)]
    voiced = np.concatenate(voiced) if voiced else np.zeros(0)
    if voiced.size == 0:
        raise StatisticsError("f0_statistics: no voiced frames")
    logf0 = np.log(voiced)
    mean, std = float(logf0.mean()), float(logf0.std())
    if std == 0:
        logger.warning("f0_statistics: log-F0 has zero variance (degenerate statistics)")
    return mean, std


def convert_f0(f0, src: SpeakerStats, tgt: SpeakerStats):
    """Linear mean/variance transform in the log-F0 domain; unvoiced (0) passes through."""
    if not src.logf0_std > 0:
        raise StatisticsError(f"convert_f0: source speaker {src.speaker_id!r} has degenerate log-F0 std")
    f0 = np.asarray(f0, dtype=np.float64)
    out = np.zeros_like(f0)
    voiced = f0 > 0
    out[voiced] = np.exp((np.log(f0[voiced]) - src.logf0_mean) * (tgt.logf0_std / src.logf0_std)
                         + tgt.logf0_mean)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Mel-cepstral distortion

MCD_CONST = 10.0 / math.log(10.0)


def mcd_frame(mcc_a: np.ndarray, mcc_b: np.ndarray) -> float:
    """Mel-cepstral distortion in dB between two frames; coefficient 0 ignored."""
    a, b = np.asarray(mcc_a, dtype=np.float64), np.asarray(mcc_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"mcd_frame: shapes {a.shape} and {b.shape} differ")
    d = a[1:] - b[1:]
    return MCD_CONST * math.sqrt(2.0 * float(d @ d))


def mcd_frames(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-frame MCD for two (T, D) matrices."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mcd_frames: shapes {a.shape} and {b.shape} differ")
    d = a[:, 1:] - b[:, 1:]
    return MCD_CONST * np.sqrt(2.0 * np.sum(d * d, axis=1))


def nonsilent_mask(reference: np.ndarray, silence_threshold_db: float = 40.0,
                   n_bins: int = 513) -> np.ndarray:
    """Frames whose power (coefficient 0) lies within ``silence_threshold_db`` of the loudest."""
    c0 = np.asarray(reference)[:, 0]
    margin = silence_threshold_db / 10.0 * math.log(10.0) * log_spectrum_gain(n_bins)
    return c0 > c0.max() - margin


def mean_mcd(seq_a, seq_b, silence_threshold_db: float = 40.0, n_bins: int = 513) -> float:
    """Mean MCD over non-silent frames of two frame-aligned MCC sequences.

    ``seq_b`` is the reference whose frame power decides silence.
    """
    a = seq_a.frames if isinstance(seq_a, FeatureSequence) else np.asarray(seq_a, dtype=np.float64)
    b = seq_b.frames if isinstance(seq_b, FeatureSequence) else np.asarray(seq_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mean_mcd: sequences differ in shape {a.shape} vs {b.shape}")
    mask = nonsilent_mask(b, silence_threshold_db, n_bins)
    if not mask.any():
        raise EvaluationError("mean_mcd: no non-silent frames")
    return float(mcd_frames(a[mask], b[mask]).mean())


# ---------------------------------------------------------------------------
# Post-processing


def gv_postfilter(seq: FeatureSequence, tgt: SpeakerStats) -> FeatureSequence:
    """Scale each MCC trajectory (dims >= 1) about its mean to the target global variance."""
    x = seq.frames
    if x.shape[0] < 2:
        raise ValueError("gv_postfilter: need at least two frames")
    gv = np.asarray(tgt.mcc_gv, dtype=np.float64)
    if gv.shape != (x.shape[1],):
        raise ShapeError(f"gv_postfilter: GV has shape {gv.shape}, frames have {x.shape[1]} dims")
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    y = x.copy()
    for d in range(1, x.shape[1]):
        if var[d] == 0:
            if gv[d] > 0:
                warnings.warn(f"gv_postfilter: dim {d} has zero variance; left unchanged", RuntimeWarning)
            continue
        y[:, d] = math.sqrt(gv[d] / var[d]) * (x[:, d] - mean[d]) + mean[d]
    return FeatureSequence(seq.domain, y, seq.frame_period_ms, seq.speaker_id)


def gaussian_smooth(seq: FeatureSequence, sigma_frames: float = 1.0) -> FeatureSequence:
    """Low-pass each dimension along time with a normalized Gaussian window.

    The window is truncated at 3 sigma and boundaries are mirrored.
    """
    if sigma_frames < 0:
        raise ValueError("sigma_frames must be >= 0")
    if sigma_frames == 0:
        y = seq.frames.copy()
    else:
        y = scipy.ndimage.gaussian_filter1d(seq.frames, sigma_frames, axis=0,
                                            mode="reflect", truncate=3.0)
    return FeatureSequence(seq.domain, y, seq.frame_period_ms, seq.speaker_id)


def speaker_stats(speaker_id: str, f0_seqs: Iterable, mcc_seqs: Iterable) -> SpeakerStats:
    """Log-F0 statistics and per-dimension MCC mean/variance over a speaker's frames."""
    mean, std = f0_statistics(f0_seqs)
    mcc = np.concatenate([np.asarray(m.frames if isinstance(m, FeatureSequence) else m) for m in mcc_seqs])
    return SpeakerStats(speaker_id, mean, std, mcc.var(axis=0), mcc.mean(axis=0))
