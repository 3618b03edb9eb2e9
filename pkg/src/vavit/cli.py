"""Command-line harness: train-mapping, simulate, track, evaluate, run-e2e.

A run is configured by a single JSON document with optional sections
"scenario", "tracker", "metrics", "train" and a top-level "seed". Unknown
keys are rejected. The seed can be overridden by --seed or the VAVIT_SEED
environment variable (flag wins). Exit codes: 0 success, 2 input/config
error, 3 runtime/numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import avmap, metrics, sim, tracker
from .core import InputError, NumericError
from .fileio import dataclass_from_dict, dataclass_to_dict, dump_json, load_json, write_jsonl


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the mapping-training step."""

    r_experts: int = 3
    n_pairs: int = 3000
    max_iter: int = 100
    tol: float = 1e-7

    def __post_init__(self):
        if self.r_experts < 1 or self.n_pairs < 1 or self.max_iter < 1 or self.tol <= 0:
            raise InputError("train section fields must be positive")


_SECTIONS = {
    "scenario": sim.ScenarioConfig,
    "tracker": tracker.TrackerConfig,
    "metrics": metrics.MetricConfig,
    "train": TrainConfig,
}
_TOP_KEYS = set(_SECTIONS) | {"seed"}


@dataclass(eq=False)
class RunConfig:
    seed: int
    scenario: sim.ScenarioConfig
    tracker: tracker.TrackerConfig
    metrics: metrics.MetricConfig
    train: TrainConfig
    raw: dict

    def echo(self) -> dict:
        return {
            "seed": self.seed,
            "scenario": dataclass_to_dict(self.scenario),
            "tracker": dataclass_to_dict(self.tracker),
            "metrics": dataclass_to_dict(self.metrics),
            "train": dataclass_to_dict(self.train),
        }


def resolve_seed(doc: dict, cli_seed: int | None) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("VAVIT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise InputError(f"VAVIT_SEED must be an integer, got {env!r}") from exc
    if "seed" in doc:
        return int(doc["seed"])
    return int(doc.get("scenario", {}).get("seed", 0))


def load_run_config(config_path, cli_seed=None, image_rect=None) -> RunConfig:
    doc = load_json(config_path) if config_path else {}
    if not isinstance(doc, dict):
        raise InputError("config file must hold a JSON object")
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        raise InputError(f"unknown config key(s): {', '.join(unknown)}")
    seed = resolve_seed(doc, cli_seed)
    scenario_doc = dict(doc.get("scenario", {}))
    scenario_doc["seed"] = seed
    scenario = dataclass_from_dict(sim.ScenarioConfig, scenario_doc, "scenario")
    tracker_doc = dict(doc.get("tracker", {}))
    tracker_doc.setdefault("image_rect", tuple(image_rect or scenario.image_rect))
    return RunConfig(
        seed=seed,
        scenario=scenario,
        tracker=dataclass_from_dict(tracker.TrackerConfig, tracker_doc, "tracker"),
        metrics=dataclass_from_dict(metrics.MetricConfig, doc.get("metrics", {}), "metrics"),
        train=dataclass_from_dict(TrainConfig, doc.get("train", {}), "train"),
        raw=doc,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def read_training_pairs(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"pairs file not found: {path}")
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                pairs.append(avmap.TrainingPair(x=row["x"], g=row["g"]))
            except (json.JSONDecodeError, KeyError, TypeError, InputError) as exc:
                raise InputError(f"{path}:{lineno}: malformed training pair: {exc}") from exc
    return pairs


def write_training_pairs(pairs, path) -> None:
    write_jsonl(({"x": p.x.tolist(), "g": p.g.tolist()} for p in pairs), path)


def cmd_train_mapping(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    pairs = read_training_pairs(args.pairs)
    model = avmap.train_mapping(
        pairs,
        r_experts=cfg.train.r_experts,
        seed=cfg.seed,
        max_iter=cfg.train.max_iter,
        tol=cfg.train.tol,
    )
    avmap.save_mapping(model, args.out)
    for k, loglik in enumerate(model.training_info["loglik"]):
        print(f"subband {k}: loglik {loglik:.6f}")
    if model.training_info["regularized"]:
        print(f"covariance repairs: {model.training_info['regularized']}")
    print(f"wrote {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    gt, visual, audio, _mapping = sim.simulate_scenario(cfg.scenario)
    sim.write_scenario(args.out, cfg.scenario, gt, visual, audio)
    print(f"wrote scenario: {cfg.scenario.n_frames} frames, "
          f"{cfg.scenario.n_persons} persons -> {args.out}")
    return 0


def _resolve_track_mapping(args, meta_cfg: sim.ScenarioConfig):
    if args.visual_only:
        return None
    if args.doa_mode:
        spec = meta_cfg.mapping or {}
        sigma = spec.get("sigma", 5.0) if spec.get("mode") == "doa-point" else 5.0
        return avmap.doa_point_model(
            sigma, meta_cfg.image_rect, k_subbands=meta_cfg.subband_count
        )
    if args.model is None:
        return None
    model = avmap.load_mapping(args.model)
    if model.n_subbands != meta_cfg.subband_count:
        raise InputError(
            f"model has {model.n_subbands} sub-bands but the scenario was generated "
            f"with {meta_cfg.subband_count}"
        )
    return model


def _run_tracker(scenario_dir, tracker_cfg, mapping, visual_only, audio_only):
    frames = sim.read_observations(scenario_dir, visual_only=visual_only, audio_only=audio_only)
    engine = tracker.Tracker(tracker_cfg, mapping)
    records = []
    births = 0
    started = time.perf_counter()
    for frame in frames:
        out = engine.step(frame)
        births += len(out.births)
        records.append(tracker.frame_record(out))
    elapsed = time.perf_counter() - started
    per_frame_ms = 1000.0 * elapsed / max(len(frames), 1)
    return records, births, per_frame_ms


def cmd_track(args) -> int:
    meta = sim.read_meta(args.scenario)
    meta_cfg = dataclass_from_dict(sim.ScenarioConfig, meta["config"], "scenario")
    cfg = load_run_config(args.config, args.seed, image_rect=meta_cfg.image_rect)
    tracker_cfg = cfg.tracker
    if args.audio_only and tracker_cfg.fixed_n == 0:
        # no visual detections means no birth process; start with placeholders
        tracker_cfg = dataclasses.replace(tracker_cfg, fixed_n=meta_cfg.n_persons)
    mapping = _resolve_track_mapping(args, meta_cfg)
    records, births, per_frame_ms = _run_tracker(
        args.scenario, tracker_cfg, mapping, args.visual_only, args.audio_only
    )
    write_jsonl(records, args.out)
    print(f"tracked {len(records)} frames, {births} births, {per_frame_ms:.2f} ms/frame")
    return 0


def load_track_frames(path, n_frames: int):
    from .fileio import read_jsonl

    rows = read_jsonl(path)
    frames = [[] for _ in range(n_frames)]
    for row in rows:
        t = row.get("t")
        if not isinstance(t, int) or not 0 <= t < n_frames:
            raise InputError(f"track record frame index {t!r} outside scenario range")
        frames[t] = row.get("tracks", [])
    return frames


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config, None)
    meta = sim.read_meta(args.gt)
    states, speaking = sim.read_ground_truth(args.gt)
    n_frames = meta["n_frames"]
    track_frames = load_track_frames(args.tracks, n_frames)
    report = metrics.evaluate_tracking(
        states, speaking, track_frames, cfg.metrics,
        blind_strips=[tuple(s) for s in meta.get("blind_strips", [])],
    )
    report["config_echo"] = cfg.echo()
    report["scenario_meta"] = {"seed": meta["seed"], "n_frames": n_frames}
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(report, report_path)
    csv_path = report_path.with_suffix(".csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("t,ospa,fp,fn,ids\n")
        for t, ospa, fp, fn, ids in metrics.report_csv_rows(report):
            fh.write(f"{t},{ospa!r},{fp},{fn},{ids}\n")
    if not args.no_figures:
        from . import plots

        image_rect = tuple(meta["config"]["image_rect"])
        strips = [tuple(s) for s in meta.get("blind_strips", [])]
        plots.render_report_figures(
            report, states, speaking, track_frames, image_rect, strips,
            str(report_path.with_suffix("")),
        )
    der_text = "n/a" if report["der"] is None else f"{report['der']:.2f}"
    print(
        f"MOTA {report['mota']:.2f} | OSPA-T {report['ospa_mean']:.2f} | DER {der_text}"
    )
    return 0


def cmd_run_e2e(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = load_run_config(args.config, args.seed)
    scenario_dir = out_dir / "scenario"

    gt, visual, audio, true_mapping = sim.simulate_scenario(cfg.scenario)
    sim.write_scenario(scenario_dir, cfg.scenario, gt, visual, audio)

    mapping_mode = (cfg.scenario.mapping or {}).get("mode")
    model_path = out_dir / "model.json"
    if args.visual_only or true_mapping is None:
        tracker_model = None
    elif args.doa_mode or mapping_mode == "doa-point":
        tracker_model = true_mapping
        avmap.save_mapping(tracker_model, model_path)
    elif mapping_mode == "file":
        tracker_model = true_mapping
        avmap.save_mapping(tracker_model, model_path)
    else:
        pairs = sim.sample_training_pairs(
            true_mapping, cfg.train.n_pairs, seed=cfg.seed, image_rect=cfg.scenario.image_rect
        )
        write_training_pairs(pairs, out_dir / "pairs.jsonl")
        tracker_model = avmap.train_mapping(
            pairs,
            r_experts=cfg.train.r_experts,
            seed=cfg.seed,
            max_iter=cfg.train.max_iter,
            tol=cfg.train.tol,
        )
        avmap.save_mapping(tracker_model, model_path)

    tracker_cfg = cfg.tracker
    if args.audio_only and tracker_cfg.fixed_n == 0:
        tracker_cfg = dataclasses.replace(tracker_cfg, fixed_n=cfg.scenario.n_persons)
    records, births, per_frame_ms = _run_tracker(
        scenario_dir, tracker_cfg, tracker_model, args.visual_only, args.audio_only
    )
    tracks_path = out_dir / "tracks.jsonl"
    write_jsonl(records, tracks_path)

    eval_args = argparse.Namespace(
        config=args.config,
        gt=str(scenario_dir),
        tracks=str(tracks_path),
        report=str(out_dir / "report.json"),
        no_figures=args.no_figures,
        seed=None,
    )
    status = cmd_evaluate(eval_args)
    print(f"run-e2e complete: {births} births, {per_frame_ms:.2f} ms/frame -> {out_dir}")
    return status


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _defaults_epilog() -> str:
    lines = ["config file sections and defaults:"]
    for name, cls in _SECTIONS.items():
        lines.append(f"  {name}:")
        for f in dataclasses.fields(cls):
            if f.default is not dataclasses.MISSING:
                lines.append(f"    {f.name} = {f.default!r}")
    lines.append("  seed = 0  (overridden by --seed or VAVIT_SEED)")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vavit",
        description="Variational audio-visual tracking: simulate, track, evaluate.",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train-mapping", help="fit an audio mapping from (x, g) pairs")
    train.add_argument("--config", default=None, help="run config JSON")
    train.add_argument("--pairs", required=True, help="training pairs JSONL")
    train.add_argument("--out", required=True, help="output model JSON path")
    train.add_argument("--seed", type=int, default=None)
    train.set_defaults(func=cmd_train_mapping)

    simulate = sub.add_parser("simulate", help="generate a scenario bundle")
    simulate.add_argument("--config", default=None)
    simulate.add_argument("--out", required=True, help="output scenario directory")
    simulate.add_argument("--seed", type=int, default=None)
    simulate.set_defaults(func=cmd_simulate)

    track = sub.add_parser("track", help="run the tracker over a scenario bundle")
    track.add_argument("--config", default=None)
    track.add_argument("--scenario", required=True, help="scenario bundle directory")
    track.add_argument("--model", default=None, help="audio mapping model JSON")
    track.add_argument("--out", required=True, help="output tracks JSONL path")
    track.add_argument("--visual-only", action="store_true")
    track.add_argument("--audio-only", action="store_true")
    track.add_argument("--doa-mode", action="store_true",
                       help="treat audio observations as 2-D DOA points")
    track.add_argument("--seed", type=int, default=None)
    track.set_defaults(func=cmd_track)

    evaluate = sub.add_parser("evaluate", help="score a tracker run against ground truth")
    evaluate.add_argument("--config", default=None)
    evaluate.add_argument("--gt", required=True, help="scenario bundle directory")
    evaluate.add_argument("--tracks", required=True, help="tracks JSONL path")
    evaluate.add_argument("--report", required=True, help="output report JSON path")
    evaluate.add_argument("--no-figures", action="store_true")
    evaluate.set_defaults(func=cmd_evaluate)

    e2e = sub.add_parser("run-e2e", help="simulate, train, track and evaluate in one go")
    e2e.add_argument("--config", default=None)
    e2e.add_argument("--out", required=True, help="output directory")
    e2e.add_argument("--seed", type=int, default=None)
    e2e.add_argument("--visual-only", action="store_true")
    e2e.add_argument("--audio-only", action="store_true")
    e2e.add_argument("--doa-mode", action="store_true")
    e2e.add_argument("--no-figures", action="store_true")
    e2e.set_defaults(func=cmd_run_e2e)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
