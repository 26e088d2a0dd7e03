"""Command-line interface: ``cdvae {gen-synthetic,train,convert,evaluate,inspect}``.

Every subcommand accepts ``--config FILE`` (JSON object whose keys are the
long option names, with ``-`` or ``_``); explicit flags override it. Errors
are reported as one JSON line on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import features, io, kernels, synth, training
from .conversion import NO_POSTFILTER, ConversionPath, PostFilter, batch_convert
from .features import MccWarpConfig
from .model import ModelConfig, Objective

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _pair(text: str) -> tuple[str, str]:
    src, sep, tgt = text.partition(":")
    if not sep or not src or not tgt:
        raise argparse.ArgumentTypeError(f"expected SRC:TGT, got {text!r}")
    return src, tgt


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cdvae", description="Cross-domain VAE voice conversion on SP and MCC features.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synthetic", help="write a seeded synthetic parallel corpus")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--speakers", type=int, default=2)
    g.add_argument("--utterances", type=int, default=10, help="training utterances per speaker")
    g.add_argument("--test-utterances", type=int, default=5, help="held-out utterances per speaker")
    g.add_argument("--frames", type=int, default=100)
    g.add_argument("--phones", type=int, default=8)
    g.add_argument("--perturbation", type=float, default=1.0)
    g.add_argument("--alpha", type=float, default=0.455)
    g.add_argument("--order", type=int, default=35)
    g.add_argument("--bins", type=int, default=513)

    t = sub.add_parser("train", help="train a CDVAE or baseline VAE")
    t.add_argument("--config")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="checkpoint path to write")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--objective", choices=[o.value for o in Objective])
    t.add_argument("--weights", type=_floats, help="wi,kld,cross,sim")
    t.add_argument("--latent-dim", type=int)
    t.add_argument("--speaker-dim", type=int)
    t.add_argument("--hidden", type=_ints, help="hidden widths for all four networks, e.g. 64,64")
    for net in ("enc-sp", "enc-mcc", "dec-sp", "dec-mcc"):
        t.add_argument(f"--{net}-hidden", type=_ints)
    t.add_argument("--sim-on-sample", action="store_true", default=None)
    t.add_argument("--independent-noise", action="store_true", default=None)
    t.add_argument("--log", help="append tab-separated loss records here")
    t.add_argument("--log-interval", type=int)
    t.add_argument("--backend", choices=["compiled", "python"])

    c = sub.add_parser("convert", help="convert manifest utterances between speakers")
    c.add_argument("--config")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--manifest", required=True)
    c.add_argument("--pairs", type=_pair, action="append", required=True, metavar="SRC:TGT")
    c.add_argument("--path", choices=[x.value for x in ConversionPath], default="sp-sp")
    c.add_argument("--out", required=True)
    c.add_argument("--no-postfilter", action="store_true")
    c.add_argument("--sigma", type=float, default=1.0, help="Gaussian smoothing width in frames")

    e = sub.add_parser("evaluate", help="mean MCD on frame-aligned utterance pairs")
    e.add_argument("--config")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--path", choices=[x.value for x in ConversionPath], action="append",
                   help="repeatable; default: every path the checkpoint supports")
    e.add_argument("--no-postfilter", action="store_true")
    e.add_argument("--sigma", type=float, default=1.0)
    e.add_argument("--silence-db", type=float, default=40.0)
    e.add_argument("--json", action="store_true", help="emit JSON records instead of a table")

    i = sub.add_parser("inspect", help="describe a checkpoint, feature file or manifest")
    i.add_argument("kind", choices=["checkpoint", "feature", "manifest"])
    i.add_argument("file")
    return p


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args([a for a in argv if a not in ("-v", "--verbose")])
    if not known.config:
        return
    try:
        values = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config file {known.config}: {e}") from None
    if not isinstance(values, dict):
        raise UsageError("config file must hold a JSON object")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices.get(known.command)
    if sp is None:
        return
    dests = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise UsageError(f"unknown config key {key!r} for {known.command}")
        action = dests[dest]
        if action.required:
            action.required = False
        if isinstance(value, list) and action.type in (_ints, _floats):
            value = tuple(value)
        elif isinstance(value, str) and action.type is not None and action.type not in (str,):
            value = action.type(value)
        defaults[dest] = value
    sp.set_defaults(**defaults)


# ---------------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    cfg = synth.SynthConfig(seed=args.seed, n_speakers=args.speakers, utterances_per_speaker=args.utterances,
                            frames_per_utterance=args.frames, n_phones=args.phones,
                            perturbation=args.perturbation, test_utterances=args.test_utterances,
                            mcc=MccWarpConfig(args.alpha, args.order, args.bins))
    manifest = synth.gen_synthetic_corpus(cfg, args.out)
    print(f"wrote {manifest}")
    return 0


def _train_config(args, base: training.TrainConfig | None) -> training.TrainConfig:
    d = base.to_dict() if base is not None else {}
    model = dict(d.get("model", ModelConfig().to_dict()))
    overrides = {"latent_dim": args.latent_dim, "speaker_dim": args.speaker_dim}
    if args.hidden is not None:
        for net in ("enc_sp", "enc_mcc", "dec_sp", "dec_mcc"):
            overrides[f"{net}_hidden"] = args.hidden
    for net in ("enc_sp", "enc_mcc", "dec_sp", "dec_mcc"):
        overrides[f"{net}_hidden"] = getattr(args, f"{net}_hidden") or overrides.get(f"{net}_hidden")
    for k, v in overrides.items():
        if v is not None:
            model[k] = list(v) if isinstance(v, tuple) else v
    if base is not None and model != d["model"]:
        raise UsageError("--resume: model width flags contradict the checkpoint")
    if base is not None and args.objective is not None and args.objective != d["objective"]:
        raise UsageError("--resume: --objective contradicts the checkpoint")
    if base is not None and args.seed is not None and args.seed != d["seed"]:
        raise UsageError("--resume: --seed contradicts the checkpoint")
    d["model"] = model
    d["epochs"] = args.epochs
    for key in ("lr", "batch_size", "seed", "objective", "log_interval"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    if args.weights is not None:
        if len(args.weights) != 4:
            raise UsageError("--weights needs four values: wi,kld,cross,sim")
        d["weights"] = dict(zip(("wi", "kld", "cross", "sim"), args.weights))
    if args.sim_on_sample is not None:
        d["sim_on_sample"] = True
    if args.independent_noise is not None:
        d["shared_noise"] = False
    return training.TrainConfig.from_dict(d)


def cmd_train(args) -> int:
    corpus = io.load_corpus(args.manifest)
    resume = io.load_checkpoint(args.resume) if args.resume else None
    config = _train_config(args, resume.config if resume else None)
    mcc_cfg = resume.mcc_cfg if resume else MccWarpConfig(n_bins=config.model.sp_dim, order=config.model.mcc_dim)
    log = open(args.log, "a") if args.log else None
    try:
        ckpt, history = training.train(corpus, config, resume=resume, log=log, backend=args.backend,
                                       mcc_cfg=mcc_cfg)
    finally:
        if log is not None:
            log.close()
    io.save_checkpoint(args.out, ckpt)
    last = history[-1]
    print(f"epoch {ckpt.epoch}: l_wi={last.l_wi:.6g} l_kld={last.l_kld:.6g} l_cross={last.l_cross:.6g} "
          f"l_sim={last.l_sim:.6g} total={last.total:.6g} [{args.backend or kernels.BACKEND} kernels]")
    print(f"wrote {args.out}")
    return 0


def _postfilter(args) -> PostFilter:
    return NO_POSTFILTER if args.no_postfilter else PostFilter(sigma_frames=args.sigma)


def cmd_convert(args) -> int:
    ckpt = io.load_checkpoint(args.checkpoint)
    files = batch_convert(ckpt, args.manifest, args.pairs, ConversionPath(args.path), args.out, _postfilter(args))
    print(f"wrote {len(files)} feature files under {args.out}")
    return 0


def _valid_paths(ckpt) -> list[ConversionPath]:
    return {Objective.CDVAE: list(ConversionPath), Objective.VAE_SP: [ConversionPath.SP_SP],
            Objective.VAE_MCC: [ConversionPath.MCC_MCC]}[ckpt.config.objective]


def cmd_evaluate(args) -> int:
    ckpt = io.load_checkpoint(args.checkpoint)
    pairs = training.aligned_pairs(io.load_corpus(args.manifest))
    if not pairs:
        raise training.DataError("manifest holds no frame-aligned utterance pairs of different speakers")
    paths = [ConversionPath(p) for p in args.path] if args.path else _valid_paths(ckpt)
    records = []
    for path in paths:
        for r in training.evaluate(pairs, ckpt, path, _postfilter(args), args.silence_db):
            records.append({"path": path.value, "source": r.source, "target": r.target,
                            "mcd": r.mcd, "mcd_before": r.mcd_before, "utterances": r.n_utterances})
    if args.json:
        for rec in records:
            print(json.dumps(rec))
    else:
        print("path\tsource\ttarget\tmcd_db\tbefore_db\tutterances")
        for rec in records:
            print(f"{rec['path']}\t{rec['source']}\t{rec['target']}\t{rec['mcd']:.4f}\t"
                  f"{rec['mcd_before']:.4f}\t{rec['utterances']}")
    return 0


def cmd_inspect(args) -> int:
    if args.kind == "checkpoint":
        header, _, _ = io.read_checkpoint_header(args.file)
        print(f"epoch: {header['epoch']}  adam steps: {header['adam_step']}")
        print(f"speakers: {', '.join(header['speakers'])}")
        print("config: " + json.dumps(header["train_config"], sort_keys=True))
        print("mcc: " + json.dumps(header["mcc"], sort_keys=True))
        for name, shape in header["param_shapes"]:
            print(f"  {name}\t{'x'.join(str(n) for n in shape)}")
    elif args.kind == "feature":
        seq = io.read_feature_file(args.file)
        f = seq.frames
        print(f"domain: {seq.domain.name}  frames: {seq.n_frames}  dim: {seq.dim}  "
              f"frame_period_ms: {seq.frame_period_ms}")
        print(f"min {f.min():.6g}  max {f.max():.6g}  mean {f.mean():.6g}")
    else:
        entries = io.read_manifest(args.file)
        by_spk: dict[str, int] = {}
        for e in entries:
            by_spk[e.speaker_id] = by_spk.get(e.speaker_id, 0) + 1
        print(f"utterances: {len(entries)}")
        for spk, n in sorted(by_spk.items()):
            print(f"  {spk}\t{n}")
    return 0


COMMANDS = {"gen-synthetic": cmd_gen_synthetic, "train": cmd_train, "convert": cmd_convert,
            "evaluate": cmd_evaluate, "inspect": cmd_inspect}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as e:
        return _fail("usage", str(e), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        return _fail("usage", str(e), EXIT_USAGE)
    except training.ConfigError as e:
        return _fail("config", str(e), EXIT_USAGE)
    except (io.FormatError, FileNotFoundError, OSError) as e:
        return _fail("io", str(e), EXIT_FAILURE)
    except (training.DataError, features.FeatureError, features.StatisticsError,
            features.EvaluationError, KeyError, ValueError, FloatingPointError) as e:
        return _fail(type(e).__name__, str(e.args[0] if e.args else e), EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
