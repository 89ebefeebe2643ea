"""``ttv``: one entry point for the full pipeline.

Subcommands: analyze, preprocess, train, vectors, shape-vector, generate,
compose-chain, eval, gradcheck.  Exit codes: 0 on success (the requested
artifact was fully written), 1 for internal errors, 2 for invalid input.
All randomized subcommands are deterministic under a fixed ``--rng-seed``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, latent
from .corpus import build_dataset, load_dataset, save_dataset, song_fragments
from .errors import InvalidInputError, TtvaeError
from .generate import (
    ChainPlan,
    GenerationRequest,
    compose_chain,
    generate,
)
from .latent import (
    STANDARD_KINDS,
    ShapeTemplate,
    build_vectors,
    load_vectors,
    save_vectors,
    triangle_template,
)
from .midi import parse_midi
from .vae import ModelConfig, TensionVae, gradient_check, load_checkpoint, train
from .vae.training import training_split

GRADCHECK_TOLERANCE = 1e-4


def _print_json(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _load_model(path, expected_config=None):
    ckpt = load_checkpoint(path, expected_config)
    return TensionVae(ckpt.config, ckpt.params), ckpt


def _fragment_csv(fragments, keys_line: str) -> str:
    lines = ["step,tensile_strain,cloud_diameter"]
    for i, fragment in enumerate(fragments):
        lines.append(f"# fragment {i} (bars {fragment.bar_offset}-"
                     f"{fragment.bar_offset + 3}){keys_line}")
        for step in range(64):
            lines.append(f"{step},{fragment.tensile[step]:.6f},"
                         f"{fragment.diameter[step]:.6f}")
    return "\n".join(lines) + "\n"


def cmd_analyze(args) -> int:
    score = parse_midi(Path(args.infile).read_bytes())
    fragments, key, warnings = song_fragments(
        score, args.melody_track, args.bass_track)
    if not fragments:
        raise InvalidInputError(f"{args.infile} yields no 4-bar fragments")
    if args.json:
        payload = {
            "source": str(args.infile),
            "detected_key": str(key),
            "warnings": warnings,
            "fragments": [
                {
                    "bar_offset": f.bar_offset,
                    "tensile_strain": [round(float(v), 6) for v in f.tensile],
                    "cloud_diameter": [round(float(v), 6) for v in f.diameter],
                }
                for f in fragments
            ],
        }
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        text = _fragment_csv(fragments, f" [detected key: {key}]")
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(fragments)} fragment(s) to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_preprocess(args) -> int:
    dataset = build_dataset(args.indir, args.melody_track, args.bass_track)
    save_dataset(dataset, args.out)
    summary = {
        "fragments": len(dataset),
        "songs": len(dataset.meta.get("original_keys", {})),
        "skipped": len(dataset.meta.get("skips", [])),
        "dataset": str(args.out),
    }
    if args.json:
        _print_json(summary)
    else:
        print(f"{summary['fragments']} fragments from {summary['songs']} "
              f"songs ({summary['skipped']} skipped) -> {args.out}")
        for skip in dataset.meta.get("skips", []):
            print(f"  skipped {skip['file']}: {skip['reason']}")
    return 0


def _config_from_args(args) -> ModelConfig:
    cfg = ModelConfig.from_json_file(args.config) if args.config \
        else ModelConfig()
    if args.rng_seed is not None:
        cfg = ModelConfig.from_dict(dict(cfg.to_dict(), rng_seed=args.rng_seed))
    return cfg


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    cfg = _config_from_args(args)
    progress = None
    if args.verbose:
        progress = lambda epoch, tr, val: print(
            f"epoch {epoch}: train total {tr.total:.4f}, "
            f"val total {val.total:.4f}", flush=True)
    result = train(dataset, cfg, out_dir=args.out, progress=progress)
    summary = {
        "checkpoint": str(result.checkpoint_path),
        "checkpoint_id": result.checkpoint_id,
        "ledger": str(result.ledger_path),
        "epochs_run": result.epochs_run,
        "best_epoch": result.best_epoch,
        "global_batches": result.global_batches,
    }
    if args.json:
        _print_json(summary)
    else:
        print(f"trained {result.epochs_run} epochs (best {result.best_epoch}) "
              f"-> {result.checkpoint_path}")
        test_rows = [r for r in result.ledger if r.split == "test"]
        if test_rows:
            print(f"test total loss: {test_rows[-1].losses.total:.4f}")
    return 0


def cmd_vectors(args) -> int:
    model, ckpt = _load_model(args.model)
    dataset = load_dataset(args.dataset)
    kinds = list(STANDARD_KINDS) if args.kinds == "all" \
        else [k.strip() for k in args.kinds.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in STANDARD_KINDS]
    if unknown:
        raise InvalidInputError(
            f"unknown vector kinds {unknown}; choose from {list(STANDARD_KINDS)}")
    restrict = training_split(ckpt.config, len(dataset))["train"].tolist()
    vectors_file = build_vectors(model, dataset, kinds=kinds,
                                 target_n=args.target_n,
                                 restrict_ids=restrict,
                                 checkpoint_id=ckpt.ident)
    save_vectors(args.out, vectors_file)
    if args.json:
        _print_json({"vectors": sorted(vectors_file.vectors),
                     "out": str(args.out),
                     "checkpoint_id": ckpt.ident})
    else:
        for name, vector in sorted(vectors_file.vectors.items()):
            print(f"{name}: classes {vector.class_sizes}, "
                  f"thresholds {vector.effective_thresholds}")
        print(f"wrote {args.out}")
    return 0


def _load_template(args) -> ShapeTemplate:
    if args.template == "triangle":
        return triangle_template(args.peak_step)
    path = Path(args.template)
    if not path.exists():
        raise InvalidInputError(
            f"template must be 'triangle' or a JSON file of 64 values, "
            f"got {args.template!r}")
    try:
        values = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise InvalidInputError(f"cannot parse template {path}: {err}") from err
    return ShapeTemplate(path.stem, np.asarray(values, dtype=float))


def cmd_shape_vector(args) -> int:
    model, ckpt = _load_model(args.model)
    dataset = load_dataset(args.dataset)
    template = _load_template(args)
    name = args.name or f"shape_{template.name}"
    kind = f"shape:{name}"
    restrict = training_split(ckpt.config, len(dataset))["train"].tolist()
    built = build_vectors(model, dataset, kinds=[kind],
                          target_n=args.target_n, restrict_ids=restrict,
                          templates={kind: template},
                          checkpoint_id=ckpt.ident)
    vector = built.vectors.pop(kind)
    vector.name = name
    built.vectors[name] = vector
    out = Path(args.out)
    if out.exists():
        existing = load_vectors(out)
        if existing.latent_dim == built.latent_dim \
                and existing.checkpoint_id == built.checkpoint_id:
            existing.vectors[name] = vector
            built = existing
    save_vectors(out, built)
    if args.json:
        _print_json({"vector": name, "out": str(out),
                     "class_sizes": list(vector.class_sizes)})
    else:
        print(f"wrote shape vector {name!r} (classes {vector.class_sizes}) "
              f"to {out}")
    return 0


def _parse_edits(pairs: list[str]) -> list[tuple[str, float]]:
    edits = []
    for item in pairs or []:
        if "=" not in item:
            raise InvalidInputError(
                f"--edit expects NAME=SCALE, got {item!r}")
        name, _, scale = item.partition("=")
        try:
            edits.append((name.strip(), float(scale)))
        except ValueError as err:
            raise InvalidInputError(f"bad edit scale in {item!r}") from err
    return edits


def _request_from_args(args) -> GenerationRequest:
    if args.seed_midi:
        return GenerationRequest(seed_midi=Path(args.seed_midi),
                                 fragment_index=args.fragment_index,
                                 edits=_parse_edits(args.edit))
    return GenerationRequest(sample_seed=args.rng_seed or 0,
                             edits=_parse_edits(args.edit))


def cmd_generate(args) -> int:
    model, ckpt = _load_model(args.model)
    vectors = load_vectors(args.vectors)
    request = _request_from_args(args)
    result = generate(model, vectors, request, checkpoint_id=ckpt.ident)
    out = Path(args.out)
    out.write_bytes(result.midi_bytes)
    report_path = out.with_name(out.name + ".tension.json")
    evaluation.write_json(report_path, result.report)
    if args.json:
        _print_json({"midi": str(out), "report": str(report_path),
                     "edits": result.report["edits"]})
    else:
        print(f"wrote {out} and {report_path}")
    return 0


def cmd_compose_chain(args) -> int:
    model, ckpt = _load_model(args.model)
    vectors = load_vectors(args.vectors)
    try:
        plan_data = json.loads(Path(args.plan).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise InvalidInputError(f"cannot read plan {args.plan}: {err}") from err
    plan = ChainPlan.from_dict(plan_data)
    request = _request_from_args(args)
    result = compose_chain(model, vectors, plan, request,
                           checkpoint_id=ckpt.ident)
    out = Path(args.out)
    out.write_bytes(result.midi_bytes)
    report_path = out.with_name(out.name + ".tension.json")
    evaluation.write_json(report_path, result.report)
    if args.json:
        _print_json({"midi": str(out), "report": str(report_path),
                     "total_bars": result.report["total_bars"]})
    else:
        print(f"wrote {result.report['total_bars']}-bar chain to {out}")
    return 0


def _parse_scales(text: str | None, default) -> tuple[float, ...]:
    if not text:
        return tuple(default)
    try:
        return tuple(float(s) for s in text.split(","))
    except ValueError as err:
        raise InvalidInputError(f"bad --scales value {text!r}") from err


def cmd_eval(args) -> int:
    model, ckpt = _load_model(args.model)
    vectors = load_vectors(args.vectors)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.rng_seed or 0
    trained = ckpt.schedule.get("global_batches")
    outputs: dict[str, str] = {}

    def emit_sweep(report, stem):
        evaluation.write_sweep_csv(out_dir / f"{stem}.csv", report)
        evaluation.write_json(out_dir / f"{stem}.json",
                              evaluation.sweep_summary(report))
        outputs[stem] = str(out_dir / f"{stem}.csv")
        if args.charts:
            evaluation.write_ratio_chart_svg(out_dir / f"{stem}.svg", report)

    if args.experiment == "direction":
        scales = _parse_scales(args.scales, evaluation.DEFAULT_DIRECTION_SCALES)
        for kind in latent.DIRECTION_KINDS:
            if kind in vectors.vectors:
                report = evaluation.direction_sweep(
                    model, vectors.get(kind), scales, args.n, seed,
                    trained_batches=trained)
                emit_sweep(report, f"direction_{kind}")
    elif args.experiment == "level":
        scales = _parse_scales(args.scales, evaluation.DEFAULT_LEVEL_SCALES)
        for kind in latent.LEVEL_KINDS:
            if kind in vectors.vectors:
                report = evaluation.level_sweep(
                    model, vectors.get(kind), scales, args.n, seed,
                    trained_batches=trained)
                emit_sweep(report, f"level_{kind}")
    elif args.experiment == "interaction":
        scales = _parse_scales(args.scales, evaluation.DEFAULT_DIRECTION_SCALES)
        pairs = [("direction", latent.DIRECTION_KINDS, "upward"),
                 ("level", latent.LEVEL_KINDS, "high")]
        for label, kinds, mode in pairs:
            if not all(k in vectors.vectors for k in kinds):
                continue
            va, vb = (vectors.get(k) for k in kinds)
            if mode == "upward":
                taus = {"tensile": float(va.effective_thresholds.get(
                            "class_a_min_score", 0.0)),
                        "diameter": float(vb.effective_thresholds.get(
                            "class_a_min_score", 0.0))}
                report = evaluation.interaction_grid(
                    model, va, vb, scales, args.n, seed, taus=taus,
                    trained_batches=trained)
            else:
                level_params = {
                    "tensile": {
                        "threshold": float(va.effective_thresholds.get(
                            "threshold", 0.0)),
                        "tau": float(va.effective_thresholds.get(
                            "class_a_min_magnitude", 0.0))},
                    "diameter": {
                        "threshold": float(vb.effective_thresholds.get(
                            "threshold", 0.0)),
                        "tau": float(vb.effective_thresholds.get(
                            "class_a_min_magnitude", 0.0))},
                }
                report = evaluation.interaction_grid(
                    model, va, vb, scales, args.n, seed, mode="high",
                    level_params=level_params, trained_batches=trained)
            evaluation.write_interaction_csv(
                out_dir / f"interaction_{label}.csv", report)
            evaluation.write_json(out_dir / f"interaction_{label}.json",
                                  evaluation.interaction_summary(report))
            outputs[f"interaction_{label}"] = str(
                out_dir / f"interaction_{label}.csv")
    elif args.experiment == "pitch-dist":
        from .vae.network import sample_latent
        from .latent import apply_vector
        vector = vectors.get(args.vector)
        z = sample_latent(args.n, model.cfg.latent_dim, seed).astype(model.dtype)
        original = evaluation.decode_hardened(model, z)[0]
        modified = evaluation.decode_hardened(
            model, apply_vector(z, vector, args.scale))[0]
        bars = (2, 4)
        hist_orig = evaluation.pitch_class_histogram(original, bars)
        hist_mod = evaluation.pitch_class_histogram(modified, bars)
        evaluation.write_histogram_csv(out_dir / "pitch_distribution.csv",
                                       hist_orig, hist_mod)
        evaluation.write_json(out_dir / "pitch_distribution.json", {
            "vector": vector.name, "scale": args.scale, "bars": list(bars),
            "n": args.n, "rng_seed": seed,
            "original": hist_orig.tolist(), "modified": hist_mod.tolist(),
        })
        outputs["pitch_distribution"] = str(out_dir / "pitch_distribution.csv")
    if not outputs:
        raise InvalidInputError(
            f"experiment {args.experiment!r} found no matching vectors in "
            f"{args.vectors}")
    if args.json:
        _print_json({"experiment": args.experiment, "outputs": outputs})
    else:
        for stem, path in sorted(outputs.items()):
            print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    result = gradient_check(hidden=args.hidden, latent=args.latent,
                            n_weights=args.samples, step=args.step,
                            seed=args.rng_seed or 0)
    passed = result.max_rel_error < GRADCHECK_TOLERANCE
    if args.json:
        _print_json({"max_rel_error": result.max_rel_error,
                     "n_checked": result.n_checked,
                     "tolerance": GRADCHECK_TOLERANCE,
                     "passed": passed})
    else:
        print(result.summary())
        print("PASS" if passed else "FAIL")
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttv",
        description="Tonal-tension curves, tension-predicting VAE, and "
                    "tension-controlled music generation.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--rng-seed", type=int, default=None,
                        help="seed for all randomized behavior")
    common.add_argument("--config", default=None,
                        help="JSON file of model/training settings")
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--json", action="store_true",
                        help="machine-readable JSON output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common],
                       help="tension curves of a MIDI file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--melody-track", default=None)
    p.add_argument("--bass-track", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("preprocess", parents=[common],
                       help="build a fragment dataset from a MIDI directory")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--melody-track", default=None)
    p.add_argument("--bass-track", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train the model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("vectors", parents=[common],
                       help="extract tension attribute vectors")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--kinds", default="all")
    p.add_argument("--target-n", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vectors)

    p = sub.add_parser("shape-vector", parents=[common],
                       help="extract a custom tension-shape vector")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--template", default="triangle",
                   help="'triangle' or a JSON file of 64 values")
    p.add_argument("--peak-step", type=int, default=32)
    p.add_argument("--name", default=None)
    p.add_argument("--target-n", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shape_vector)

    p = sub.add_parser("generate", parents=[common],
                       help="decode an edited seed into MIDI")
    p.add_argument("--model", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--seed-midi", default=None)
    p.add_argument("--fragment-index", type=int, default=0)
    p.add_argument("--edit", action="append", metavar="NAME=SCALE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("compose-chain", parents=[common],
                       help="chain 4-bar blocks with cumulative edits")
    p.add_argument("--model", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--seed-midi", default=None)
    p.add_argument("--fragment-index", type=int, default=0)
    p.add_argument("--edit", action="append", metavar="NAME=SCALE",
                   help="extra edits applied to the seed before section 1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compose_chain)

    p = sub.add_parser("eval", parents=[common],
                       help="run a latent-edit experiment suite")
    p.add_argument("--model", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--experiment", required=True,
                   choices=("direction", "level", "interaction", "pitch-dist"))
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--scales", default=None, help="comma-separated scales")
    p.add_argument("--vector", default="tensile_strain_direction",
                   help="vector for pitch-dist")
    p.add_argument("--scale", type=float, default=6.0,
                   help="scale for pitch-dist")
    p.add_argument("--charts", action="store_true",
                   help="also write SVG ratio charts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="verify analytic gradients on a tiny model")
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--latent", type=int, default=4)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--step", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TtvaeError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except Exception as err:  # internal failure
        if getattr(args, "verbose", False):
            raise
        print(f"internal error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
