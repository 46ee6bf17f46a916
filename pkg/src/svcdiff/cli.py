"""Command-line interface: slice, featurize, train, distill, slim, convert, bench.

One JSON configuration file feeds every subcommand; command-line flags
override file values, and the effective configuration's hash goes into a
reproducibility record written next to each command's outputs. Exit codes:
0 success, 1 internal error, 2 bad input or configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    config_hash,
    distill_cfg_from,
    load_config,
    loss_cfg_from,
    sampler_cfg_from,
    schedule_from,
    slicer_cfg_from,
)
from .errors import SvcdiffError

_RUN_SEED_KEYS = {
    "slice": ("features", "cond_seed"),
    "featurize": ("features", "cond_seed"),
    "train": ("train", "seed"),
    "distill": ("distill", "seed"),
    "slim": ("denoiser", "seed"),
    "convert": ("sampler", "seed"),
    "bench": ("sampler", "seed"),
}


def _write_run_record(out_dir: Path, command: str, cfg: dict, argv):
    import scipy

    section, key = _RUN_SEED_KEYS[command]
    record = {
        "command": command,
        "argv": list(argv),
        "config_hash": config_hash(cfg),
        "seed": cfg[section][key],
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "svcdiff": __version__,
        },
        "timestamp": time.time(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{command}_run.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)


def _prepared_clip(path, cfg, threads):
    from .features import normalize, read_wav, resample

    clip = read_wav(path)
    clip = resample(clip, int(cfg["features"]["target_rate"]))
    return normalize(clip)


def _load_feature_dataset(features_dir: Path, shift=None, scale=None):
    """(DataSample, ConditioningTrack) pairs from featurize outputs."""
    from .features.content import ConditioningTrack
    from .sampler import DataSample
    from .tensorio import read_tensor

    mels = sorted(features_dir.glob("*.mel.bin"))
    if not mels:
        raise SvcdiffError(f"no *.mel.bin feature files under {features_dir}")
    dataset = []
    raw_frames = []
    for mel_path in mels:
        stem = mel_path.name[: -len(".mel.bin")]
        cond_path = features_dir / f"{stem}.cond.bin"
        mel = read_tensor(mel_path).astype(np.float64)
        cond = read_tensor(cond_path).astype(np.float64)
        raw_frames.append(mel)
        dataset.append((mel, ConditioningTrack(cond)))
    stacked = np.concatenate(raw_frames, axis=0)
    if shift is None:
        shift = stacked.mean(axis=0)
        scale = np.maximum(stacked.std(axis=0), 1e-6)
    out = [(DataSample((mel - shift) / scale), cond) for mel, cond in dataset]
    return out, shift, scale


# --- commands -------------------------------------------------------------------

def _cmd_slice(args, cfg):
    from .features import slice_spans, write_wav
    from .features.audio import AudioClip
    from .features.slicer import augment_spans

    in_dir = Path(args.in_dir)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    slicer_cfg = slicer_cfg_from(cfg)
    sizes = list(cfg["augment"]["sizes"])
    overlap = float(cfg["augment"]["overlap"])
    failures = []
    rows = []
    for wav in sorted(in_dir.glob("*.wav")):
        try:
            clip = _prepared_clip(wav, cfg, args.threads)
        except (SvcdiffError, ValueError, OSError) as exc:
            failures.append({"source": str(wav), "message": str(exc)})
            continue
        spans = slice_spans(clip, slicer_cfg)
        if sizes:  # overlap augmentation re-windows each segment
            spans = [
                (lo + alo, lo + ahi)
                for lo, hi in spans
                for alo, ahi in augment_spans(hi - lo, clip.rate, sizes, overlap)
            ]
        for i, (lo, hi) in enumerate(spans):
            seg_path = out_dir / f"{wav.stem}_{i:03d}.wav"
            write_wav(seg_path, AudioClip(clip.samples[lo:hi], clip.rate))
            rows.append((str(wav), lo / clip.rate, hi / clip.rate, str(seg_path)))
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "start_sec", "end_sec", "path"])
        for source, lo, hi, path in rows:
            writer.writerow([source, f"{lo:.6f}", f"{hi:.6f}", path])
    _write_run_record(out_dir, "slice", cfg, args.argv)
    if failures:
        print(json.dumps({"error": "UnreadableInput", "failures": failures}), file=sys.stderr)
        return 2
    return 0


def _cmd_featurize(args, cfg):
    from .features import content_features, estimate_f0, read_wav
    from .features.content import build_conditioning
    from .features.stft import mel_spectrogram
    from .tensorio import write_tensor

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Path(args.manifest)
    if not manifest.exists():
        print(json.dumps({"error": "UnreadableInput", "message": f"{manifest} not found"}), file=sys.stderr)
        return 2
    with open(manifest) as fh:
        rows = list(csv.DictReader(fh))
    failures = []
    cond_seed = int(cfg["features"]["cond_seed"])
    for row in rows:
        seg = Path(row["path"])
        stem = seg.stem
        outputs = {
            "mel": out_dir / f"{stem}.mel.bin",
            "f0": out_dir / f"{stem}.f0.bin",
            "voiced": out_dir / f"{stem}.voiced.bin",
            "cond": out_dir / f"{stem}.cond.bin",
        }
        try:
            if seg.exists() and all(p.exists() and p.stat().st_mtime >= seg.stat().st_mtime for p in outputs.values()):
                continue  # up to date
            clip = read_wav(seg)
            mel = mel_spectrogram(clip, threads=args.threads)
            f0 = estimate_f0(clip, threads=args.threads)
            cond = build_conditioning(f0, content_features(mel), seed=cond_seed)
            write_tensor(outputs["mel"], mel.frames.astype(np.float32))
            write_tensor(outputs["f0"], f0.hz.astype(np.float32))
            write_tensor(outputs["voiced"], f0.voiced)
            write_tensor(outputs["cond"], cond.vectors.astype(np.float32))
        except (SvcdiffError, ValueError, OSError) as exc:
            failures.append({"segment": str(seg), "message": str(exc)})
    _write_run_record(out_dir, "featurize", cfg, args.argv)
    if failures:
        print(json.dumps({"error": "FeaturizeFailed", "failures": failures}), file=sys.stderr)
        return 2
    return 0


def _cmd_train(args, cfg):
    from .denoiser import init_denoiser, save_checkpoint, train

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, shift, scale = _load_feature_dataset(Path(args.features))
    dn = cfg["denoiser"]
    params = init_denoiser(
        tuple(dn["arch"]), cond_dim=int(dn["cond_dim"]), seed=int(dn["seed"]),
        data_dim=dataset[0][0].values.shape[1], time_embed=int(dn["time_embed"]),
        use_attention=bool(dn["use_attention"]),
    )
    schedule = schedule_from(cfg)
    trained, losses = train(
        params, dataset, schedule, loss_cfg_from(cfg),
        steps=int(cfg["train"]["steps"]), seed=int(cfg["train"]["seed"]),
    )
    trained.shift, trained.scale = shift, scale
    save_checkpoint(trained, out_dir / "checkpoint.ckpt")
    with open(out_dir / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, value in enumerate(losses):
            writer.writerow([i, f"{value:.8f}"])
    _write_run_record(out_dir, "train", cfg, args.argv)
    return 0


def _cmd_distill(args, cfg):
    from .denoiser import load_checkpoint, save_checkpoint
    from .distill import progressive_distill

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    teacher = load_checkpoint(args.checkpoint)
    dataset, _, _ = _load_feature_dataset(Path(args.features), teacher.shift, teacher.scale)
    schedule = schedule_from(cfg)
    stages = progressive_distill(teacher, dataset, schedule, distill_cfg_from(cfg))
    with open(out_dir / "stages.jsonl", "w") as fh:
        for stage in stages:
            stage.params.shift, stage.params.scale = teacher.shift, teacher.scale
            save_checkpoint(stage.params, out_dir / f"stage{stage.stage + 1}_steps{stage.steps}.ckpt")
            fh.write(json.dumps(stage.report, sort_keys=True) + "\n")
    _write_run_record(out_dir, "distill", cfg, args.argv)
    return 0


def _cmd_slim(args, cfg):
    from .denoiser import draw_batch_noise, load_checkpoint, save_checkpoint
    from .distill import SlimEvalSet, slim_network

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = load_checkpoint(args.checkpoint)
    dataset, _, _ = _load_feature_dataset(Path(args.features), net.shift, net.scale)
    eval_batch = dataset[: min(8, len(dataset))]
    rng = np.random.Generator(np.random.Philox(int(cfg["denoiser"]["seed"])))
    draws = draw_batch_noise(rng, eval_batch)
    eval_set = SlimEvalSet(
        eval_batch, schedule_from(cfg), loss_cfg_from(cfg), draws,
        rng.standard_normal((int(cfg["slim"]["eval_frames"]), net.data_dim)),
    )
    target = float(args.latency_target if args.latency_target is not None else cfg["slim"]["latency_target"])
    slimmed, log = slim_network(net, target, eval_set, latency_reps=int(cfg["slim"]["latency_reps"]))
    save_checkpoint(slimmed, out_dir / "slimmed.ckpt")
    with open(out_dir / "actions.jsonl", "w") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    _write_run_record(out_dir, "slim", cfg, args.argv)
    return 0


def _cmd_convert(args, cfg):
    from .bench import run_pipeline
    from .denoiser import load_checkpoint
    from .features import write_wav
    from .tensorio import write_tensor

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = load_checkpoint(args.checkpoint)
    clip = _prepared_clip(args.in_wav, cfg, args.threads)
    out, times, sampled = run_pipeline(
        clip, net, schedule_from(cfg), sampler_cfg_from(cfg),
        threads=args.threads, gl_iters=int(cfg["features"]["gl_iters"]),
        cond_seed=int(cfg["features"]["cond_seed"]),
    )
    write_wav(out_dir / "converted.wav", out)
    write_tensor(out_dir / "converted.mel.bin", sampled.frames.astype(np.float32))
    with open(out_dir / "convert_timing.json", "w") as fh:
        json.dump({"stage_seconds": times, "audio_seconds": clip.duration}, fh, indent=2, sort_keys=True)
    _write_run_record(out_dir, "convert", cfg, args.argv)
    return 0


def _cmd_bench(args, cfg):
    from .bench import step_sweep, svg_rtf_plot
    from .denoiser import init_denoiser, load_checkpoint

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        net = load_checkpoint(args.checkpoint)
    else:
        dn = cfg["denoiser"]
        net = init_denoiser(
            tuple(dn["arch"]), cond_dim=int(dn["cond_dim"]), seed=int(dn["seed"]),
            data_dim=80, time_embed=int(dn["time_embed"]), use_attention=bool(dn["use_attention"]),
        )
    clip = _prepared_clip(args.in_wav, cfg, args.threads)
    steps_list = [int(s) for s in args.steps.split(",")] if args.steps else [int(s) for s in cfg["bench"]["steps"]]
    threads_list = [int(t) for t in cfg["bench"]["threads"]]
    reports = step_sweep(
        net, clip, steps_list, threads_list, schedule_from(cfg), sampler_cfg_from(cfg),
        repetitions=int(cfg["bench"]["repetitions"]), gl_iters=int(cfg["features"]["gl_iters"]),
        jsonl_path=out_dir / "bench.jsonl", csv_path=out_dir / "bench.csv",
    )
    if args.plot:
        (out_dir / "bench.svg").write_text(svg_rtf_plot(reports))
    _write_run_record(out_dir, "bench", cfg, args.argv)
    return 0


# --- parser ----------------------------------------------------------------------

def _add_common(sub, *, sampler_flags=False):
    sub.add_argument("--config", help="JSON run configuration file")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--threads", type=int, default=1, help="parallelism cap for this command")
    if sampler_flags:
        sub.add_argument("--mode", choices=["ancestral", "ddim"], help="sampler mode (config: sampler.mode)")
        sub.add_argument("--steps", help="sampler steps, or comma list for bench (config: sampler.steps)")
        sub.add_argument("--kappa", type=float, help="ancestral noise interpolation (config: sampler.kappa)")
        sub.add_argument("--seed", type=int, help="sampler seed (config: sampler.seed)")
        sub.add_argument("--time-grid", choices=["uniform", "quadratic"], help="config: sampler.time_grid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svcdiff",
        description="CPU-first singing-voice-conversion engine built on continuous-time diffusion.",
    )
    parser.add_argument("--version", action="version", version=f"svcdiff {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("slice", help="split WAVs at long silences",
                        epilog="config keys: slicer.{silence_db,min_silence,max_segment,min_segment}, "
                               "augment.{sizes,overlap}, features.target_rate")
    p.add_argument("in_dir", help="directory of input WAV files")
    _add_common(p)

    p = subs.add_parser("featurize", help="extract mel/F0/conditioning tensors for sliced segments",
                        epilog="config keys: features.{target_rate,cond_seed}")
    p.add_argument("manifest", help="manifest.csv produced by the slice command")
    _add_common(p)

    p = subs.add_parser("train", help="train the denoiser on featurized segments",
                        epilog="config keys: denoiser.{arch,time_embed,cond_dim,seed,use_attention}, "
                               "loss.{weight_fn,batch,lr,optimizer,beta1,beta2,eps}, train.{steps,seed}, schedule.{kind,params}")
    p.add_argument("--features", required=True, help="directory of featurize outputs")
    _add_common(p)

    p = subs.add_parser("distill", help="progressively halve the sampler step count",
                        epilog="config keys: distill.{start_steps,halvings,steps_per_stage,lr,seed,batch}, schedule.{kind,params}")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--halvings", type=int, help="override config distill.halvings")
    p.add_argument("--start-steps", type=int, help="override config distill.start_steps")
    _add_common(p)

    p = subs.add_parser("slim", help="remove low-value blocks until a latency target is met",
                        epilog="config keys: slim.{latency_target,latency_reps,eval_frames}, loss.*, schedule.*, denoiser.seed")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--latency-target", type=float, help="override config slim.latency_target (seconds)")
    _add_common(p)

    p = subs.add_parser("convert", help="convert one WAV through the full pipeline",
                        epilog="config keys: sampler.{mode,steps,kappa,seed,time_grid}, "
                               "features.{target_rate,cond_seed,gl_iters}, schedule.{kind,params}")
    p.add_argument("in_wav")
    p.add_argument("--checkpoint", required=True)
    _add_common(p, sampler_flags=True)

    p = subs.add_parser("bench", help="benchmark real-time factor across steps and threads",
                        epilog="config keys: bench.{repetitions,steps,threads}, sampler.*, features.gl_iters, schedule.*")
    p.add_argument("in_wav")
    p.add_argument("--checkpoint")
    p.add_argument("--plot", action="store_true", help="also write an SVG of RTF vs steps")
    _add_common(p, sampler_flags=True)
    return parser


def _overrides_from(args) -> dict:
    overrides: dict = {}
    sampler = {}
    if getattr(args, "mode", None) is not None:
        sampler["mode"] = args.mode
    if getattr(args, "kappa", None) is not None:
        sampler["kappa"] = args.kappa
    if getattr(args, "seed", None) is not None:
        sampler["seed"] = args.seed
    if getattr(args, "time_grid", None) is not None:
        sampler["time_grid"] = args.time_grid
    steps = getattr(args, "steps", None)
    if steps is not None and args.command != "bench":
        sampler["steps"] = int(steps)
    if sampler:
        overrides["sampler"] = sampler
    distill = {}
    if getattr(args, "halvings", None) is not None:
        distill["halvings"] = args.halvings
    if getattr(args, "start_steps", None) is not None:
        distill["start_steps"] = args.start_steps
    if distill:
        overrides["distill"] = distill
    return overrides


_COMMANDS = {
    "slice": _cmd_slice,
    "featurize": _cmd_featurize,
    "train": _cmd_train,
    "distill": _cmd_distill,
    "slim": _cmd_slim,
    "convert": _cmd_convert,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        cfg = load_config(args.config, _overrides_from(args))
        return _COMMANDS[args.command](args, cfg)
    except SvcdiffError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
