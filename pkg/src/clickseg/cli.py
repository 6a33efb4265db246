"""Command-line entry points.

Subcommands: synth, partition, annotate, train, infer, eval, report. Every
subcommand accepts ``--config <path>`` (flat key=value file) and ``--seed``.
Exit codes: 0 success, 1 validation error, 2 I/O or file-format error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import selftrain
from .annotate import (
    PROPAGATED,
    expand_clicks,
    load_pseudo_labels,
    save_pseudo_labels,
    simulate_clicks,
    PseudoLabels,
)
from .config import SynthScalars, TrainConfig, parse_config
from .errors import FileFormatError, ValidationError
from .features import extract_features
from .metrics import miou
from .nets import load_checkpoint, save_checkpoint
from .scene import load_scene
from .supervoxel import load_partition, partition_region_growing, save_partition
from .synth import SynthSpec, generate_corpus


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config(args):
    if args.config:
        return parse_config(args.config)
    return TrainConfig(), SynthScalars()


def _cmd_synth(args):
    _train, scalars = _load_config(args)
    spec = SynthSpec(seed=args.seed, scalars=scalars)
    paths = generate_corpus(spec, args.count, args.out)
    print(f"wrote {len(paths)} scenes to {args.out}")
    return 0


def _cmd_partition(args):
    cfg, _ = _load_config(args)
    out_dir = Path(args.out_dir) if args.out_dir else None
    for scene_path in args.scenes:
        scene = load_scene(scene_path)
        feats = extract_features(scene, cfg.k_neighbors)
        part = partition_region_growing(scene, feats, cfg.partition)
        target = (out_dir or Path(scene_path).parent) / (Path(scene_path).stem + ".otsp")
        if out_dir:
            out_dir.mkdir(parents=True, exist_ok=True)
        save_partition(part, target)
        print(f"{scene_path}: {part.num_supervoxels} super-voxels -> {target}")
    return 0


def _cmd_annotate(args):
    cfg, _ = _load_config(args)
    scene = load_scene(args.scene)
    part = load_partition(args.partition, scene)
    clicks = simulate_clicks(
        scene, args.seed, clicks_per_thing=cfg.clicks_per_thing, thing_fraction=cfg.thing_fraction
    )
    seeds, conflicts = expand_clicks(clicks, part)
    save_pseudo_labels(seeds, args.out)
    print(
        f"{len(clicks)} clicks -> {int(seeds.labeled_mask.sum())} seed super-voxels"
        f" ({conflicts} conflicts) -> {args.out}"
    )
    return 0


def _split_scenes(data_dir, eval_count):
    paths = sorted(Path(data_dir).glob("*.otoc"))
    if not paths:
        raise ValidationError(f"no .otoc scenes found in {data_dir}")
    if eval_count >= len(paths):
        raise ValidationError("eval-count must leave at least one training scene")
    scenes = [load_scene(p) for p in paths]
    if eval_count == 0:
        return scenes, []
    return scenes[:-eval_count], scenes[-eval_count:]


def _cmd_train(args):
    cfg, _ = _load_config(args)
    train_scenes, eval_scenes = _split_scenes(args.data_dir, args.eval_count)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.full_gt:
        result = selftrain.run_fully_supervised(cfg, train_scenes, eval_scenes, args.seed)
    else:
        result = selftrain.run(cfg, train_scenes, eval_scenes, args.seed)
    csv_text = selftrain.report_csv(result.history)
    (out_dir / "report.csv").write_text(csv_text)
    save_checkpoint(out_dir / "model.otnn", result.unary, result.relation, result.bank)
    sys.stdout.write(csv_text)
    print(f"model -> {out_dir / 'model.otnn'}")
    return 0


def _cmd_infer(args):
    cfg, _ = _load_config(args)
    unary, relation, bank = load_checkpoint(args.model)
    scene = load_scene(args.scene)
    feats = extract_features(scene, cfg.k_neighbors)
    if args.partition:
        part = load_partition(args.partition, scene)
    else:
        part = partition_region_growing(scene, feats, cfg.partition)
    bundle = selftrain.SceneBundle(scene=scene, features=feats, partition=part)

    if args.dump_marginals and not args.no_propagation:
        from .graph import build_graph, mean_field
        from .nets import combine_probs, pooled_embeddings, predict_unary, relation_probs
        from .supervoxel import pool_distribution

        probs_pt, u_pt = predict_unary(unary, feats)
        sv_probs = pool_distribution(probs_pt, part)
        if cfg.use_relation and relation is not None:
            f = pooled_embeddings(relation, feats, part)
            dist = combine_probs(sv_probs, relation_probs(f, bank))
        else:
            f = np.zeros((part.num_supervoxels, cfg.embed_dim))
            dist = sv_probs
        graph = build_graph(part, scene, u_pt, f, selftrain._pairwise_params(cfg))
        _field, history = mean_field(graph, dist, cfg.mean_field_iterations, record=True)
        dump_dir = Path(args.dump_marginals)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for it, q in enumerate(history, start=1):
            lines = [",".join(f"{v:.9f}" for v in row) for row in q]
            (dump_dir / f"marginals_iter{it:02d}.csv").write_text("\n".join(lines) + "\n")

    pred = selftrain.predict_points(
        bundle, unary, relation, bank, cfg, no_propagation=args.no_propagation
    )
    out = PseudoLabels(
        labels=pred.astype(np.int32),
        confidence=np.ones(len(pred)),
        provenance=np.full(len(pred), PROPAGATED, np.uint8),
    )
    save_pseudo_labels(out, args.out)
    print(f"predictions for {len(pred)} points -> {args.out}")
    return 0


def _cmd_eval(args):
    pred = load_pseudo_labels(args.pred)
    scene = load_scene(args.gt)
    if len(pred) != scene.num_points:
        raise ValidationError(
            f"prediction has {len(pred)} entries but scene has {scene.num_points} points"
        )
    result = miou(pred.labels, scene.gt_semantic, scene.num_categories)
    for c, value in enumerate(result.iou):
        shown = "undefined" if np.isnan(value) else f"{value:.4f}"
        print(f"class {c}: IoU {shown}")
    print(f"mIoU: {result.miou:.4f}")
    return 0


def _cmd_report(args):
    text = Path(args.csv).read_text()
    rows = [line.split(",") for line in text.strip().splitlines()]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="clickseg", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key=value config file")
    common.add_argument("--seed", type=int, default=0, help="PRNG seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("partition", parents=[common], help="compute super-voxel partitions")
    p.add_argument("scenes", nargs="+")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_partition)

    p = sub.add_parser("annotate", parents=[common], help="simulate clicks into seed labels")
    p.add_argument("scene")
    p.add_argument("partition")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("train", parents=[common], help="run the self-training pipeline")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--eval-count", type=int, default=0, help="scenes held out for evaluation")
    p.add_argument("--full-gt", action="store_true", help="train on 100%% ground truth instead")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", parents=[common], help="predict labels for one scene")
    p.add_argument("--model", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--partition", default=None)
    p.add_argument(
        "--no-propagation",
        action="store_true",
        help="classifier only: no graph propagation or relation net at inference",
    )
    p.add_argument("--dump-marginals", default=None, help="dump per-sweep marginals as CSV")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", parents=[common], help="pretty-print a report CSV")
    p.add_argument("csv")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
