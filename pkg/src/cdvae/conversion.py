"""Utterance conversion along the four encoder/decoder paths."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import features
from .features import FeatureDomain, FeatureSequence
from .model import Domain, Objective, decode, encode
from .training import Checkpoint, ConfigError, Utterance


class ConversionPath(str, enum.Enum):
    SP_SP = "sp-sp"
    SP_MCC = "sp-mcc"
    MCC_SP = "mcc-sp"
    MCC_MCC = "mcc-mcc"

    @property
    def input_domain(self) -> Domain:
        return Domain(self.value.split("-")[0])

    @property
    def output_domain(self) -> Domain:
        return Domain(self.value.split("-")[1])


@dataclass
class PostFilter:
    gv: bool = True
    smooth: bool = True
    sigma_frames: float = 1.0


NO_POSTFILTER = PostFilter(gv=False, smooth=False)


@dataclass
class ConvertedUtterance:
    sp: FeatureSequence
    mcc: FeatureSequence
    f0: FeatureSequence
    ap: FeatureSequence
    log_energy: FeatureSequence
    path: ConversionPath
    source: str
    target: str
    latent_mean: np.ndarray


def check_path(checkpoint: Checkpoint, path: ConversionPath) -> None:
    objective = checkpoint.config.objective
    if objective is Objective.CDVAE:
        return
    allowed = {Objective.VAE_SP: ConversionPath.SP_SP, Objective.VAE_MCC: ConversionPath.MCC_MCC}[objective]
    if ConversionPath(path) is not allowed:
        raise ConfigError(f"path {ConversionPath(path).value} needs an encoder/decoder that a "
                          f"{objective.value} checkpoint does not train")


def _renormalize(norm_sp: np.ndarray) -> np.ndarray:
    """Shift a log10 spectral shape so its linear sum is exactly 1."""
    return norm_sp - np.log10(np.sum(10.0 ** norm_sp, axis=-1, keepdims=True))


def latent_means(checkpoint: Checkpoint, utt: Utterance, domain: Domain) -> np.ndarray:
    domain = Domain(domain)
    if domain is Domain.SP:
        x = features.normalize_sp(utt.sp.frames)[0]
    else:
        x = utt.mcc.frames
    return encode(checkpoint.params, domain, checkpoint.scaler(domain).transform(x)).mean


def convert_utterance(checkpoint: Checkpoint, utt: Utterance, src_id: str, tgt_id: str,
                      path: ConversionPath, postfilter: PostFilter | None = None) -> ConvertedUtterance:
    """Convert ``utt`` from ``src_id`` to ``tgt_id`` along ``path``.

    The latent code is the posterior mean (no sampling), so conversion is
    deterministic. Frame energy and AP are copied from the source; F0 goes
    through the log-domain mean/variance transform. MCC trajectories are
    GV post-filtered and Gaussian-smoothed when enabled; SP outputs are
    smoothed in the log domain and their MCC view is derived from them.
    """
    path = ConversionPath(path)
    check_path(checkpoint, path)
    postfilter = PostFilter() if postfilter is None else postfilter
    params = checkpoint.params
    params.speaker_index(src_id)
    y = params.code(tgt_id)
    try:
        src_stats, tgt_stats = checkpoint.stats[src_id], checkpoint.stats[tgt_id]
    except KeyError as e:
        raise KeyError(f"no speaker statistics for {e.args[0]!r} in checkpoint") from None
    mcc_cfg = checkpoint.mcc_cfg
    period, energy = utt.sp.frame_period_ms, utt.log_energy.frames[:, 0]

    z = latent_means(checkpoint, utt, path.input_domain)
    out = checkpoint.scaler(path.output_domain).inverse(decode(params, path.output_domain, z, y))

    if path.output_domain is Domain.SP:
        log_shape = _renormalize(out)
        if postfilter.smooth:
            log_shape = _renormalize(features.gaussian_smooth(
                FeatureSequence(FeatureDomain.MCC, log_shape), postfilter.sigma_frames).frames)
        sp = features.denormalize_sp(log_shape, energy)
        mcc = FeatureSequence(FeatureDomain.MCC, features.sp_to_mcc(sp, mcc_cfg), period, tgt_id)
        if postfilter.gv:
            mcc = features.gv_postfilter(mcc, tgt_stats)
    else:
        frames = out.copy()
        frames[:, 0] = utt.mcc.frames[:, 0]
        mcc = FeatureSequence(FeatureDomain.MCC, frames, period, tgt_id)
        if postfilter.gv:
            mcc = features.gv_postfilter(mcc, tgt_stats)
        if postfilter.smooth:
            mcc = features.gaussian_smooth(mcc, postfilter.sigma_frames)
        sp = features.mcc_to_sp(mcc.frames, mcc_cfg)
        sp = features.denormalize_sp(_renormalize(np.log10(sp)), energy)

    f0 = features.convert_f0(utt.f0.frames[:, 0], src_stats, tgt_stats)
    return ConvertedUtterance(
        sp=FeatureSequence(FeatureDomain.SP, sp, period, tgt_id),
        mcc=mcc,
        f0=FeatureSequence(FeatureDomain.F0, f0[:, None], period, tgt_id),
        ap=FeatureSequence(FeatureDomain.AP, utt.ap.frames.copy(), period, tgt_id),
        log_energy=FeatureSequence(FeatureDomain.LOG_ENERGY, utt.log_energy.frames.copy(), period, tgt_id),
        path=path, source=src_id, target=tgt_id, latent_mean=z,
    )


def batch_convert(checkpoint: Checkpoint, manifest, pairs: Sequence[tuple[str, str]],
                  path: ConversionPath, out_dir, postfilter: PostFilter | None = None) -> list[Path]:
    """Convert every manifest utterance of each source speaker to the paired target.

    Bundles go to ``out_dir/<src>_to_<tgt>/`` and are listed in
    ``out_dir/manifest.tsv`` (speaker column = target). Existing files are
    overwritten. Returns the written feature file paths.
    """
    from . import io

    entries = io.read_manifest(manifest) if isinstance(manifest, (str, os.PathLike)) else list(manifest)
    out_dir = Path(out_dir)
    written: list[Path] = []
    rows = []
    for src, tgt in pairs:
        for entry in entries:
            if entry.speaker_id != src:
                continue
            utt = io.load_utterance(entry)
            conv = convert_utterance(checkpoint, utt, src, tgt, path, postfilter)
            bundle = Utterance(tgt, entry.utt_id, conv.sp, conv.mcc, conv.ap, conv.f0, conv.log_energy)
            files = io.write_utterance(bundle, out_dir / f"{src}_to_{tgt}")
            written.extend(files.values())
            rows.append(io.ManifestEntry(tgt, entry.utt_id, files))
    if rows:
        io.write_manifest(out_dir / "manifest.tsv", rows)
    return written
