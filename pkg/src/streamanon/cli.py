"""Command-line entry point: ``python -m streamanon <command> ...``.

Settings resolve as defaults < ``--config`` INI file < explicit flags. Every
run logs the fully resolved settings; every command that writes an artifact
also writes ``<artifact>.manifest.json`` with the settings, seed and content
hashes of the checkpoints/inputs it used.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import anonymizer, dsp, evaluation, streaming, synth
from .checkpoint import file_hash, load_models, save_models
from .config import AnonymizerConfig, ConfigError, ModelConfig, StreamingConfig, read_ini, update_dataclass
from .training import ToyTrainConfig, train_toy

log = logging.getLogger("streamanon")


# ------------------------------------------------------------------ helpers

def _ini(args) -> dict[str, dict[str, str]]:
    return read_ini(args.config) if getattr(args, "config", None) else {}


def _resolve(obj, ini: dict, section: str, args, mapping: dict[str, str]):
    """Apply the INI section, then every flag in ``mapping`` that was given."""
    obj = update_dataclass(obj, ini.get(section, {}))
    flags = {field: getattr(args, flag) for flag, field in mapping.items() if getattr(args, flag, None) is not None}
    return update_dataclass(obj, flags)


def _sidecar(out: str | Path, command: str, settings: dict, seed, checkpoints=(), inputs=()) -> None:
    record = {
        "command": command,
        "settings": settings,
        "seed": seed,
        "checkpoints": {str(p): file_hash(p) for p in checkpoints},
        "inputs": {str(p): file_hash(p) for p in inputs},
    }
    if Path(out).is_file():
        record["output_hash"] = file_hash(out)
    Path(f"{out}.manifest.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _log_settings(command: str, settings: dict) -> None:
    log.info("%s resolved settings: %s", command, json.dumps(settings, sort_keys=True, default=str))


def _session_settings(args) -> tuple[streaming.SessionConfig, AnonymizerConfig]:
    ini = _ini(args)
    st = _resolve(StreamingConfig(), ini, "streaming", args, {"chunk_ms": "chunk_ms", "delay": "delay", "seed": "seed"})
    an = _resolve(AnonymizerConfig(), ini, "anonymizer", args, {"strategy": "strategy", "alpha": "alpha"})
    anonymizer.SelectionStrategy(an.strategy, an.fixed_speaker)
    cfg = streaming.SessionConfig(chunk_ms=st.chunk_ms, delay=st.delay, strategy=an.strategy, alpha=an.alpha,
                                  seed=st.seed, sampling=bool(getattr(args, "sampling", False)),
                                  warmup_chunks=st.warmup_chunks)
    return cfg, an


def _context(args, models, cfg: streaming.SessionConfig, an: AnonymizerConfig):
    if args.context:
        return anonymizer.load_context(args.context), [args.context]
    if not args.pool:
        raise ConfigError("either --context or --pool is required")
    pool = anonymizer.load_manifest(args.pool)
    strategy = anonymizer.SelectionStrategy(an.strategy, an.fixed_speaker)
    return anonymizer.build_context(pool, strategy, cfg.seed, models, an.alpha, an), [args.pool]


# ----------------------------------------------------------------- commands

def cmd_make_toy_data(args) -> int:
    info = synth.make_toy_data(args.out, args.seed)
    _log_settings("make-toy-data", {"out": args.out, "seed": args.seed})
    print(json.dumps(info, indent=2))
    return 0


def cmd_pool_build(args) -> int:
    embedder, ckpts = None, []
    if args.embed:
        if not args.checkpoint:
            raise ConfigError("--embed needs --checkpoint to supply the speaker embedder")
        embedder = load_models(args.checkpoint).embedder
        ckpts = [args.checkpoint]
    entries = anonymizer.pool_build(args.root, embedder)
    anonymizer.save_manifest(args.out, entries)
    settings = {"root": args.root, "embed": args.embed}
    _log_settings("pool-build", settings)
    _sidecar(args.out, "pool-build", settings, None, ckpts)
    print(f"{len(entries)} entries -> {args.out}")
    return 0


def cmd_train_toy(args) -> int:
    ini = _ini(args)
    mc = ModelConfig.from_dict(ini)
    mc.validate()
    tc = _resolve(ToyTrainConfig(), ini, "train", args, {
        "seed": "seed", "encoder_steps": "encoder_steps", "codec_steps": "codec_steps", "arvc_steps": "arvc_steps"})
    settings = {"model": mc.to_dict(), "train": dataclasses.asdict(tc)}
    _log_settings("train-toy", settings)
    models, history = train_toy(tc, mc)
    digest = save_models(args.out, models, {"train": dataclasses.asdict(tc)})
    _sidecar(args.out, "train-toy", settings, tc.seed)
    summary = {k: {"first": v[0], "last": v[-1]} for k, v in history.items() if v}
    print(json.dumps({"checkpoint": args.out, "hash": digest, "losses": summary}, indent=2))
    return 0


def cmd_precompute_contexts(args) -> int:
    models = load_models(args.checkpoint)
    ini = _ini(args)
    an = _resolve(AnonymizerConfig(), ini, "anonymizer", args, {"strategy": "strategy", "alpha": "alpha"})
    seed = args.seed if args.seed is not None else int(ini.get("streaming", {}).get("seed", 0))
    pool = anonymizer.load_manifest(args.pool)
    settings = {"anonymizer": dataclasses.asdict(an), "count": args.count, "seed": seed}
    _log_settings("precompute-contexts", settings)
    strategy = anonymizer.SelectionStrategy(an.strategy, an.fixed_speaker)
    paths = anonymizer.precompute_contexts(pool, strategy, args.count, models, args.out, seed, an.alpha, an)
    for p in paths:
        _sidecar(p, "precompute-contexts", settings, seed, [args.checkpoint], [args.pool])
    print(f"{len(paths)} contexts -> {args.out}")
    return 0


def cmd_anonymize(args) -> int:
    cfg, an = _session_settings(args)
    models = load_models(args.checkpoint)
    ctx, ctx_inputs = _context(args, models, cfg, an)
    source = dsp.read_wav(args.inp)
    if source.sample_rate != models.config.frontend.sample_rate:
        raise ConfigError(f"{args.inp}: sample rate {source.sample_rate}, expected {models.config.frontend.sample_rate}")
    settings = {"session": dataclasses.asdict(cfg), "anonymizer": dataclasses.asdict(an)}
    _log_settings("anonymize", settings)
    audio, metrics = streaming.anonymize_audio(source.samples, cfg, ctx, models)
    dsp.write_wav(args.out, dsp.AudioChunk(audio, source.sample_rate))
    _sidecar(args.out, "anonymize", settings, cfg.seed, [args.checkpoint], [args.inp, *ctx_inputs])
    log.info("frames in %d out %d, rtf %.3f", metrics.frames_in, metrics.frames_out, metrics.rtf)
    return 0


def cmd_bench(args) -> int:
    cfg, an = _session_settings(args)
    models = load_models(args.checkpoint)
    ctx, _ = _context(args, models, cfg, an)
    _log_settings("bench", {"session": dataclasses.asdict(cfg), "duration": args.duration})
    report = streaming.bench(cfg, models, ctx, args.duration, cfg.seed)
    if args.report == "json":
        text = json.dumps(report, indent=2, sort_keys=True)
    else:
        text = (f"chunk {report['chunk_ms']} ms, d={report['delay']}: mean {report['mean_inference_ms']:.2f} ms, "
                f"p95 {report['p95_inference_ms']:.2f} ms, RTF {report['rtf']:.3f}, "
                f"latency {report['predicted_latency_ms']:.1f} ms")
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_eval(args) -> int:
    if args.metric == "eer":
        rate, thr = evaluation.eer(evaluation.read_scores(args.scores))
        result = {"metric": "eer", "eer": rate, "threshold": thr}
    elif args.metric == "wer":
        refs, hyps = evaluation.read_transcripts(args.ref), evaluation.read_transcripts(args.hyp)
        result = {"metric": "wer", "wer": evaluation.corpus_wer(refs, hyps), "utterances": len(refs)}
    else:
        cm = evaluation.read_confusion(args.confusion)
        result = {"metric": "uar", "uar": evaluation.uar(cm), "classes": int(cm.shape[0])}
    print(json.dumps(result, sort_keys=True))
    return 0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamanon", description="Streaming speaker anonymization toolkit.")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, seed=True):
        sp.add_argument("--config", help="INI file with sections named after modules")
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("make-toy-data", help="write a synthetic prompt pool and source utterance")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_make_toy_data)

    sp = sub.add_parser("pool-build", help="scan <root>/<dataset>/<speaker>[/<emotion>]/*.wav into a manifest")
    sp.add_argument("--root", required=True)
    sp.add_argument("--out", required=True, help="manifest path (JSON lines)")
    sp.add_argument("--embed", action="store_true", help="precompute speaker embeddings")
    sp.add_argument("--checkpoint")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_pool_build)

    sp = sub.add_parser("train-toy", help="train all toy models on synthetic speech")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--encoder-steps", type=int, dest="encoder_steps")
    sp.add_argument("--codec-steps", type=int, dest="codec_steps")
    sp.add_argument("--arvc-steps", type=int, dest="arvc_steps")
    common(sp)
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("precompute-contexts", help="build and store anonymization contexts")
    sp.add_argument("--pool", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--count", type=int, default=10)
    sp.add_argument("--strategy", choices=anonymizer.STRATEGIES)
    sp.add_argument("--alpha", type=float)
    common(sp)
    sp.set_defaults(func=cmd_precompute_contexts)

    for name, func, text in (("anonymize", cmd_anonymize, "anonymize a WAV file through the streaming pipeline"),
                             ("bench", cmd_bench, "measure per-chunk latency and RTF")):
        sp = sub.add_parser(name, help=text)
        if name == "anonymize":
            sp.add_argument("--in", dest="inp", required=True)
            sp.add_argument("--out", required=True)
        else:
            sp.add_argument("--duration", type=float, default=5.0)
            sp.add_argument("--report", choices=["json", "text"], default="json")
            sp.add_argument("--out")
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--pool", help="prompt manifest (builds a context on the fly)")
        sp.add_argument("--context", help="precomputed context file")
        sp.add_argument("--chunk-ms", type=float, dest="chunk_ms")
        sp.add_argument("--delay", type=int)
        sp.add_argument("--strategy", choices=anonymizer.STRATEGIES)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--sampling", action="store_true", help="top-k sampling instead of greedy decoding")
        common(sp)
        sp.set_defaults(func=func)

    sp = sub.add_parser("eval", help="EER / WER / UAR from files")
    ev = sp.add_subparsers(dest="metric", required=True)
    e = ev.add_parser("eer")
    e.add_argument("--scores", required=True, help="CSV: trial_id,label,score")
    e = ev.add_parser("wer")
    e.add_argument("--ref", required=True)
    e.add_argument("--hyp", required=True)
    e = ev.add_parser("uar")
    e.add_argument("--confusion", required=True, help="square CSV of counts")
    sp.set_defaults(func=cmd_eval)
    return p


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, OSError) as err:
        print(f"streamanon {args.command}: error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
