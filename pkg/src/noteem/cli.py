"""Batch command-line front end.

Subcommands: align (one stack + one score to labels), em (full EM run from a
config), eval (score reference vs estimate files), synth (generate a
reproducible benchmark corpus). Exit codes: 0 ok, 2 unreadable input,
3 shape/semantic mismatch, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .core import (
    FrameClock,
    InputError,
    NoteSequence,
    ShapeError,
    TargetRoll,
    extract_notes,
    needed_frames,
    rasterize,
    threshold_stack,
)
from .descriptor import DescriptorWeights
from .dtw import dtw_align, singular_points
from .em import (
    LabelingConfig,
    Piece,
    RunConfig,
    StackTranscriber,
    TrainExample,
    Transcriber,
    run,
)
from .formats import (
    PieceEntry,
    read_config,
    read_grid,
    read_manifest,
    read_stack,
    write_grid,
    write_manifest,
    write_smf,
    write_stack,
)
from .labeler import LabelGrid, Provenance, PseudoLabelConfig, label_pipeline
from .metrics import (
    MetricsReport,
    aggregate,
    evaluate_notes,
    frame_metrics,
    note_metrics,
    note_with_instrument_metrics,
    note_with_offset_metrics,
    offset_sweep,
)
from .midi import InstrumentMap, load_note_sequence
from .synth import (
    OracleNoise,
    PerformanceSim,
    gen_score,
    oracle_predict,
    random_time_map,
    simulate_performance,
)
from .toy import ToyTranscriber

EXIT_INPUT = 2
EXIT_SHAPE = 3
EXIT_IO = 4


# ---------------------------------------------------------------------------
# align

def _add_labeling_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--w", type=int, default=3, help="collapse window for singular points")
    p.add_argument("--w-prime", type=int, default=100, help="stretch window for singular points")
    p.add_argument("--A", type=float, default=100.0, help="onset descriptor weight")
    p.add_argument("--B", type=float, default=0.01, help="frame descriptor weight")
    p.add_argument("--C", type=float, default=0.001, help="offset descriptor weight")
    p.add_argument("--t-pos", type=float, default=0.75)
    p.add_argument("--t-neg", type=float, default=0.01)
    p.add_argument("--no-pseudo", action="store_true")
    p.add_argument("--no-local-max", action="store_true")
    p.add_argument("--window", type=int, default=7, help="local-max window (frames)")
    p.add_argument("--sweeps", type=int, default=3)
    p.add_argument("--band", type=int, default=None, help="optional alignment band width")


def cmd_align(args) -> int:
    stack = read_stack(args.stack)
    score, _ = load_note_sequence(args.midi, _imap_for(stack.instrument_count))
    roll = rasterize(score, stack.clock, needed_frames(score, stack.clock))
    weights = DescriptorWeights(args.A, args.B, args.C)
    from .descriptor import build_descriptors
    path = dtw_align(build_descriptors(stack, weights), build_descriptors(roll, weights),
                     band=args.band)
    singular = singular_points(path, args.w, args.w_prime)
    pseudo = None if args.no_pseudo else PseudoLabelConfig(args.t_pos, args.t_neg)
    grid = label_pipeline(path, singular, roll, stack, pseudo=pseudo,
                          window=args.window, sweeps=args.sweeps,
                          local_max=not args.no_local_max)
    if args.out:
        write_grid(grid, args.out)
    counts = grid.provenance_counts()
    summary = {
        "normalized_cost": path.normalized_cost,
        "path_length": len(path),
        "s1_count": int(singular.collapsed.size),
        "s2_count": int(singular.stretched.size),
        "pseudo_positive": counts["pseudo_pos"],
        "pseudo_negative": counts["pseudo_neg"],
        "unknown_masked": counts["unknown_masked"],
        "params": {"w": args.w, "w_prime": args.w_prime, "A": args.A, "B": args.B,
                   "C": args.C, "t_pos": args.t_pos, "t_neg": args.t_neg,
                   "pseudo": not args.no_pseudo, "local_max": not args.no_local_max},
        "out": args.out,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _imap_for(instrument_count: int) -> InstrumentMap:
    return InstrumentMap.single() if instrument_count == 1 else InstrumentMap.classical_12()


# ---------------------------------------------------------------------------
# em

def _config_get(cfg: dict, key: str, default, cast):
    if key not in cfg:
        return default
    raw = cfg[key]
    if cast is bool:
        if raw.lower() in ("on", "true", "yes", "1"):
            return True
        if raw.lower() in ("off", "false", "no", "0"):
            return False
        raise InputError(f"config key {key}: expected on/off, got {raw!r}")
    try:
        return cast(raw)
    except ValueError as exc:
        raise InputError(f"config key {key}: {exc}") from exc


def _load_pieces(entries: list[PieceEntry], base: Path, transcriber_kind: str,
                 ) -> tuple[list[Piece], list[tuple[Piece, LabelGrid]], list[Piece]]:
    """Materialize manifest rows into (train, pretrain, holdout) pieces."""
    train: list[Piece] = []
    pretrain: list[tuple[Piece, LabelGrid]] = []
    holdout: list[Piece] = []
    imap_cache: dict[int, InstrumentMap] = {}
    for entry in entries:
        truth = read_grid(entry.resolve(base, "truth"))
        imap = imap_cache.setdefault(truth.instrument_count, _imap_for(truth.instrument_count))
        score, _ = load_note_sequence(entry.resolve(base, "score"), imap)
        performance = extract_notes(truth.to_roll())
        if transcriber_kind == "stacks":
            handle = entry.resolve(base, "stack")
        else:
            handle = performance
        piece = Piece(entry.id, score, truth.clock, truth.n_frames,
                      seed=entry.seed, handle=handle)
        if entry.role == "pretrain":
            pretrain.append((piece, truth))
        elif entry.role == "holdout":
            holdout.append(piece)
        else:
            train.append(piece)
    return train, pretrain, holdout


def cmd_em(args) -> int:
    cfg = read_config(args.config)
    for required in ("manifest", "out_dir"):
        if required not in cfg:
            raise InputError(f"config is missing required key '{required}'")
    manifest_path = Path(cfg["manifest"])
    if not manifest_path.is_absolute():
        manifest_path = Path(args.config).parent / manifest_path
    if not manifest_path.exists():
        raise InputError(f"manifest not found: {manifest_path}")
    entries = read_manifest(manifest_path)
    base = manifest_path.parent

    seed = _config_get(cfg, "seed", 0, int)
    kind = _config_get(cfg, "transcriber", "toy", str)
    if kind not in ("toy", "stacks"):
        raise InputError(f"transcriber must be toy or stacks, got {kind!r}")

    train, pretrain, holdout = _load_pieces(entries, base, kind)
    if not train:
        raise InputError("manifest has no train pieces")

    labeling = LabelingConfig(
        weights=DescriptorWeights(_config_get(cfg, "A", 100.0, float),
                                  _config_get(cfg, "B", 0.01, float),
                                  _config_get(cfg, "C", 0.001, float)),
        w=_config_get(cfg, "w", 3, int),
        w_prime=_config_get(cfg, "w_prime", 100, int),
        pseudo=PseudoLabelConfig(_config_get(cfg, "t_pos", 0.75, float),
                                 _config_get(cfg, "t_neg", 0.01, float),
                                 _config_get(cfg, "pseudo", True, bool)),
        local_max=_config_get(cfg, "local_max", True, bool),
        window=_config_get(cfg, "window", 7, int),
        sweeps=_config_get(cfg, "sweeps", 3, int),
        band=_config_get(cfg, "band", None, int),
        mode=_config_get(cfg, "labeling_mode", "align", str),
        threshold=_config_get(cfg, "threshold", 0.5, float),
    )
    label_iters = None
    if "label_iterations" in cfg:
        label_iters = tuple(int(v) for v in cfg["label_iterations"].split(",") if v.strip())
    run_cfg = RunConfig(
        labeling=labeling,
        max_iterations=_config_get(cfg, "iterations", 2, int),
        label_iterations=label_iters,
        eps=_config_get(cfg, "eps", 1e-4, float),
        steps_per_piece=_config_get(cfg, "steps_per_piece", 90, int),
        shifts=tuple(range(-5, 6)) if _config_get(cfg, "pitch_shifts", True, bool) else (0,),
        pseudo_from_iteration=_config_get(cfg, "pseudo_from_iteration", 0, int),
        jobs=args.jobs if args.jobs is not None else _config_get(cfg, "jobs", 1, int),
    )

    if kind == "toy":
        instrument_count = train[0].score.instrument_count
        transcriber: Transcriber = ToyTranscriber(
            instrument_count=instrument_count, seed=seed,
            lr=_config_get(cfg, "lr", 0.05, float),
            batch_frames=_config_get(cfg, "batch_frames", 256, int))
        pretrain_steps = _config_get(cfg, "pretrain_steps", 400, int)
        if pretrain and pretrain_steps > 0:
            transcriber.train([TrainExample(p, g) for p, g in pretrain], pretrain_steps)
    else:
        transcriber = StackTranscriber()

    result = run(train, transcriber, run_cfg)

    out_dir = Path(cfg["out_dir"])
    if not out_dir.is_absolute():
        out_dir = Path(args.config).parent / out_dir
    labels_dir = out_dir / "labels"
    labels_dir.mkdir(parents=True, exist_ok=True)
    for piece_id, grid in result.state.labels.items():
        if grid is not None:
            write_grid(grid, labels_dir / f"{piece_id}.nel")

    ids = [p.id for p in train]
    csv_lines = ["iteration,labeled,mean_d," + ",".join(f"d_{i}" for i in ids)]
    for stat in result.history:
        row = [str(stat.iteration), "1" if stat.labeled else "0", repr(stat.mean_cost)]
        row += [repr(stat.costs[i]) for i in ids]
        csv_lines.append(",".join(row))
    (out_dir / "cost_history.csv").write_text("\n".join(csv_lines) + "\n")

    if holdout:
        pred_dir = out_dir / "predictions"
        pred_dir.mkdir(parents=True, exist_ok=True)
        for piece in holdout:
            write_stack(result.transcriber.predict(piece), pred_dir / f"{piece.id}.nem")

    summary = {
        "pieces": len(train),
        "holdout": len(holdout),
        "iterations_run": len(result.history),
        "converged": result.converged,
        "final_mean_cost": result.state.mean_cost(),
        "costs": result.state.costs,
        "seed": seed,
        "transcriber": kind,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# eval

def _load_eval_side(path: str, threshold: float) -> tuple[NoteSequence, TargetRoll | None]:
    suffix = Path(path).suffix.lower()
    if suffix in (".mid", ".midi"):
        seq, _ = load_note_sequence(path, InstrumentMap.classical_12())
        clock = FrameClock()
        return seq, rasterize(seq, clock, needed_frames(seq, clock))
    if suffix == ".nel":
        grid = read_grid(path)
        roll = grid.to_roll()
        return extract_notes(roll), roll
    if suffix == ".nem":
        stack = read_stack(path)
        roll = threshold_stack(stack, threshold, threshold, threshold)
        return extract_notes(roll), roll
    raise InputError(f"cannot evaluate {path!r}: expected .mid, .nel, or .nem")


def _pad_to(roll: TargetRoll, n_frames: int) -> TargetRoll:
    if roll.n_frames >= n_frames:
        return roll
    pad = n_frames - roll.n_frames
    planes = [np.pad(p, ((0, pad), (0, 0))) for p in roll.planes()]
    return TargetRoll(*planes, clock=roll.clock, instrument_count=roll.instrument_count)


def cmd_eval(args) -> int:
    families = [f.strip() for f in args.metrics.split(",") if f.strip()]
    ref_seq, ref_roll = _load_eval_side(args.ref, args.threshold)
    est_seq, est_roll = _load_eval_side(args.est, args.threshold)

    report = MetricsReport()
    for family in families:
        if family == "note":
            report.entries["note"] = note_metrics(ref_seq, est_seq, args.onset_tol)
        elif family == "frame":
            t = max(ref_roll.n_frames, est_roll.n_frames)
            report.entries["frame"] = frame_metrics(_pad_to(ref_roll, t), _pad_to(est_roll, t))
        elif family == "offset":
            report.entries["note_with_offset"] = note_with_offset_metrics(
                ref_seq, est_seq, args.onset_tol)
        elif family == "instrument":
            try:
                report.entries["note_with_instrument"] = note_with_instrument_metrics(
                    ref_seq, est_seq, args.onset_tol)
            except ValueError as exc:
                raise ShapeError(str(exc)) from exc
        else:
            raise InputError(f"unknown metric family {family!r}")
    if args.offset_sweep:
        sweep = offset_sweep(ref_seq, est_seq, args.onset_tol)
        report.entries.update(sweep.entries)

    print(report.to_table())
    payload = report.to_json()
    if args.json:
        Path(args.json).write_text(payload)
    else:
        print(payload)
    return 0


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".writable"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc}", file=sys.stderr)
        return EXIT_IO

    clock = FrameClock()
    entries = []
    roles = ["train"] * args.pieces + ["pretrain"] * args.pretrain + ["holdout"] * args.holdout
    for index, role in enumerate(roles):
        piece_seed = args.seed * 100_000 + index
        rng = np.random.default_rng(piece_seed)
        pitch_range = (args.pretrain_pitch_lo, args.pretrain_pitch_hi) \
            if role == "pretrain" else (args.pitch_lo, args.pitch_hi)
        score = gen_score(args.notes, pitch_range=pitch_range, polyphony=args.polyphony,
                          seed=piece_seed, gap_range=(args.gap_lo, args.gap_hi),
                          dur_range=(args.dur_lo, args.dur_hi))
        curve = random_time_map(rng, score.end_time(), (args.slope_lo, args.slope_hi))
        sim = PerformanceSim(tempo_curve=curve, onset_jitter_std=args.jitter_ms / 1000.0,
                             insert_rate=args.insert_rate, delete_rate=args.delete_rate,
                             trill_swap_rate=args.trill_rate, duration_noise=args.duration_noise,
                             insert_burst_max=args.insert_burst, seed=piece_seed + 1)
        performance, _ = simulate_performance(score, sim)
        noise = OracleNoise(miss_rate=args.miss_rate, fp_rate=args.fp_rate,
                            prob_noise_std=args.prob_noise, fidelity=args.fidelity,
                            seed=piece_seed + 2)
        n_frames = needed_frames(performance, clock) + 1
        stack = oracle_predict(performance, clock, noise, length_frames=n_frames)
        truth = LabelGrid.from_roll(rasterize(performance, clock, n_frames))

        piece_id = f"{role}{index:03d}"
        write_smf(score, out / f"{piece_id}.score.mid")
        write_stack(stack, out / f"{piece_id}.stack.nem")
        write_grid(truth, out / f"{piece_id}.truth.nel")
        entries.append(PieceEntry(piece_id, role, piece_seed, f"{piece_id}.score.mid",
                                  f"{piece_id}.truth.nel", f"{piece_id}.stack.nem"))
    write_manifest(entries, out / "manifest.tsv")
    print(json.dumps({"pieces": len(entries), "out": str(out),
                      "manifest": str(out / "manifest.tsv")}, indent=2))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noteem",
        description="Align separate-source scores to transcriber predictions, "
                    "produce loss-maskable training labels, and drive EM training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_align = sub.add_parser("align", help="label one piece from a stack and a score")
    p_align.add_argument("--stack", required=True, help="probability stack (.nem)")
    p_align.add_argument("--midi", required=True, help="unaligned score (.mid)")
    p_align.add_argument("--out", default=None, help="label file to write (.nel)")
    _add_labeling_flags(p_align)
    p_align.set_defaults(fn=cmd_align)

    p_em = sub.add_parser("em", help="run the EM loop from a config file")
    p_em.add_argument("--config", required=True)
    p_em.add_argument("--jobs", type=int, default=None, help="worker threads for the E-step")
    p_em.set_defaults(fn=cmd_em)

    p_eval = sub.add_parser("eval", help="score an estimate against a reference")
    p_eval.add_argument("--ref", required=True, help=".mid, .nel, or .nem")
    p_eval.add_argument("--est", required=True, help=".mid, .nel, or .nem")
    p_eval.add_argument("--metrics", default="note,frame",
                        help="comma list from note,frame,offset,instrument")
    p_eval.add_argument("--onset-tol", type=float, default=0.05)
    p_eval.add_argument("--offset-sweep", action="store_true",
                        help="emit the full offset-tolerance grid")
    p_eval.add_argument("--threshold", type=float, default=0.5,
                        help="binarization threshold for .nem estimates")
    p_eval.add_argument("--json", default=None, help="also write the JSON report here")
    p_eval.set_defaults(fn=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a reproducible benchmark corpus")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--pieces", type=int, required=True, help="train piece count")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--pretrain", type=int, default=0)
    p_synth.add_argument("--holdout", type=int, default=0)
    p_synth.add_argument("--notes", type=int, default=200)
    p_synth.add_argument("--polyphony", type=int, default=4)
    p_synth.add_argument("--pitch-lo", type=int, default=55)
    p_synth.add_argument("--pitch-hi", type=int, default=80)
    p_synth.add_argument("--pretrain-pitch-lo", type=int, default=60)
    p_synth.add_argument("--pretrain-pitch-hi", type=int, default=67)
    p_synth.add_argument("--gap-lo", type=float, default=0.06)
    p_synth.add_argument("--gap-hi", type=float, default=0.26)
    p_synth.add_argument("--dur-lo", type=float, default=0.30)
    p_synth.add_argument("--dur-hi", type=float, default=0.90)
    p_synth.add_argument("--slope-lo", type=float, default=0.9)
    p_synth.add_argument("--slope-hi", type=float, default=1.15)
    p_synth.add_argument("--jitter-ms", type=float, default=6.0)
    p_synth.add_argument("--insert-rate", type=float, default=0.0)
    p_synth.add_argument("--insert-burst", type=int, default=3)
    p_synth.add_argument("--delete-rate", type=float, default=0.0)
    p_synth.add_argument("--trill-rate", type=float, default=0.0)
    p_synth.add_argument("--duration-noise", type=float, default=0.0)
    p_synth.add_argument("--miss-rate", type=float, default=0.0)
    p_synth.add_argument("--fp-rate", type=float, default=0.0)
    p_synth.add_argument("--prob-noise", type=float, default=0.1)
    p_synth.add_argument("--fidelity", type=float, default=0.9)
    p_synth.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except FileNotFoundError as exc:
        # a missing input is an input problem, not an I/O failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
