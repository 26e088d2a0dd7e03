"""On-disk formats: feature files, corpus manifests and checkpoints.

Feature file (``.cdvf``), little-endian::

    magic "CDVF" | version u16 | domain u8 | dim u32 | frames u32 | frame_period f64
    payload: frames x dim float32, row-major

Checkpoint (``.cdvc``), little-endian::

    magic "CDVC" | version u16 | header length u32 | JSON header (UTF-8)
    payload: float64 tensors in the order listed by header["tensors"]

Manifest: tab-separated text, one utterance per line::

    speaker  utterance  sp  mcc  ap  f0  energy

with feature paths relative to the manifest's directory. Lines starting
with ``#`` are comments.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .features import FeatureDomain, FeatureSequence, MccWarpConfig, SpeakerStats
from .model import CdvaeParams
from .training import Checkpoint, FeatureScaler, TrainConfig, Utterance

FEATURE_MAGIC = b"CDVF"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"CDVC"
CHECKPOINT_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sHBIId")
_CKPT_PREFIX = struct.Struct("<4sHI")
STREAMS = ("sp", "mcc", "ap", "f0", "energy")


class FormatError(ValueError):
    """A file does not follow its declared format."""


# ---------------------------------------------------------------------------
# Feature files


def write_feature_file(path, seq: FeatureSequence) -> None:
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, int(seq.domain),
                                  frames.shape[1], frames.shape[0], float(seq.frame_period_ms))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes())


def read_feature_file(path, speaker_id: str = "") -> FeatureSequence:
    raw = Path(path).read_bytes()
    n = _FEATURE_HEADER.size
    if len(raw) < n:
        raise FormatError(f"{path}: truncated header at offset {len(raw)} (need {n} bytes)")
    magic, version, domain, dim, frames, period = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version > FEATURE_VERSION or version == 0:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    try:
        domain = FeatureDomain(domain)
    except ValueError:
        raise FormatError(f"{path}: unknown domain tag {domain} at offset 6") from None
    expected = 4 * dim * frames
    if len(raw) - n < expected:
        raise FormatError(f"{path}: truncated payload at offset {len(raw)}: header declares "
                          f"{frames} x {dim} frames ({expected} bytes), found {len(raw) - n}")
    if len(raw) - n > expected:
        raise FormatError(f"{path}: {len(raw) - n - expected} trailing bytes at offset {n + expected}")
    data = np.frombuffer(raw, dtype="<f4", count=dim * frames, offset=n).reshape(frames, dim)
    return FeatureSequence(domain, data.astype(np.float64), period, speaker_id)


# ---------------------------------------------------------------------------
# Manifests


@dataclass
class ManifestEntry:
    speaker_id: str
    utt_id: str
    paths: dict[str, Path]


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 2 + len(STREAMS):
            raise FormatError(f"{path}:{lineno}: expected {2 + len(STREAMS)} tab-separated fields, got {len(cols)}")
        entries.append(ManifestEntry(cols[0], cols[1], {k: base / p for k, p in zip(STREAMS, cols[2:])}))
    return entries


def write_manifest(path, entries: Iterable[ManifestEntry]) -> Path:
    path = Path(path)
    base = path.parent.resolve()
    lines = ["#speaker\tutterance\t" + "\t".join(STREAMS)]
    for e in entries:
        rel = []
        for k in STREAMS:
            p = Path(e.paths[k]).resolve()
            try:
                rel.append(p.relative_to(base).as_posix())
            except ValueError:
                rel.append(p.as_posix())
        lines.append("\t".join([e.speaker_id, e.utt_id, *rel]))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_utterance(entry: ManifestEntry) -> Utterance:
    seqs = {}
    for k in STREAMS:
        p = entry.paths[k]
        if not Path(p).is_file():
            raise FileNotFoundError(f"missing feature file: {p}")
        seqs[k] = read_feature_file(p, entry.speaker_id)
    return Utterance(entry.speaker_id, entry.utt_id, seqs["sp"], seqs["mcc"], seqs["ap"],
                     seqs["f0"], seqs["energy"])


def load_corpus(manifest) -> list[Utterance]:
    return [load_utterance(e) for e in read_manifest(manifest)]


def write_utterance(utt: Utterance, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    seqs = dict(zip(STREAMS, (utt.sp, utt.mcc, utt.ap, utt.f0, utt.log_energy)))
    paths = {}
    for k, seq in seqs.items():
        paths[k] = out_dir / f"{utt.utt_id}.{k}.cdvf"
        write_feature_file(paths[k], seq)
    return paths


# ---------------------------------------------------------------------------
# Checkpoints


def _tensors(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    st = ckpt.params.store
    out = [("params", st.data), ("adam.m", st.m), ("adam.v", st.v),
           ("scaler.sp", ckpt.sp_scaler.scale), ("scaler.mcc", ckpt.mcc_scaler.scale)]
    for spk in sorted(ckpt.stats):
        out.append((f"stats.{spk}.mcc_gv", ckpt.stats[spk].mcc_gv))
        out.append((f"stats.{spk}.mcc_mean", ckpt.stats[spk].mcc_mean))
    return out


def checkpoint_header(ckpt: Checkpoint) -> dict:
    st = ckpt.params.store
    return {
        "format": "cdvae-checkpoint",
        "train_config": ckpt.config.to_dict(),
        "speakers": ckpt.params.speakers,
        "epoch": ckpt.epoch,
        "adam_step": st.t,
        "rng_state": ckpt.rng_state,
        "mcc": {"alpha": ckpt.mcc_cfg.alpha, "order": ckpt.mcc_cfg.order, "n_bins": ckpt.mcc_cfg.n_bins},
        "param_shapes": [[k, list(v)] for k, v in st.shapes.items()],
        "stats": [{"speaker_id": s.speaker_id, "logf0_mean": s.logf0_mean, "logf0_std": s.logf0_std}
                  for _, s in sorted(ckpt.stats.items())],
        "tensors": [{"name": n, "shape": list(np.shape(a))} for n, a in _tensors(ckpt)],
    }


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    header = json.dumps(checkpoint_header(ckpt), sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for _, arr in _tensors(ckpt):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)
    return path


def read_checkpoint_header(path) -> tuple[dict, bytes, int]:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_PREFIX.size:
        raise FormatError(f"{path}: truncated checkpoint prefix at offset {len(raw)}")
    magic, version, hlen = _CKPT_PREFIX.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version > CHECKPOINT_VERSION or version == 0:
        raise FormatError(f"{path}: unsupported checkpoint version {version} at offset 4")
    start = _CKPT_PREFIX.size
    if len(raw) < start + hlen:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    try:
        header = json.loads(raw[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable header at offset {start}: {e}") from None
    return header, raw, start + hlen


def load_checkpoint(path) -> Checkpoint:
    header, raw, off = read_checkpoint_header(path)
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if off + 8 * count > len(raw):
            raise FormatError(f"{path}: truncated tensor {entry['name']!r} at offset {off}")
        tensors[entry["name"]] = np.frombuffer(raw, "<f8", count, off).reshape(entry["shape"]).astype(np.float64)
        off += 8 * count
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes at offset {off}")
    config = TrainConfig.from_dict(header["train_config"])
    params = CdvaeParams(config.model, header["speakers"])
    st = params.store
    if [[k, list(v)] for k, v in st.shapes.items()] != header["param_shapes"]:
        raise FormatError(f"{path}: parameter shapes do not match the stored model config")
    st.data[:] = tensors["params"]
    st.m[:] = tensors["adam.m"]
    st.v[:] = tensors["adam.v"]
    st.t = int(header["adam_step"])
    stats = {}
    for s in header["stats"]:
        spk = s["speaker_id"]
        stats[spk] = SpeakerStats(spk, float(s["logf0_mean"]), float(s["logf0_std"]),
                                  tensors[f"stats.{spk}.mcc_gv"], tensors[f"stats.{spk}.mcc_mean"])
    return Checkpoint(
        params=params, config=config, epoch=int(header["epoch"]), rng_state=header["rng_state"],
        stats=stats,
        sp_scaler=FeatureScaler(tensors["scaler.sp"]),
        mcc_scaler=FeatureScaler(tensors["scaler.mcc"]),
        mcc_cfg=MccWarpConfig(**header["mcc"]),
    )
