"""``roomtopo`` command line: one subcommand per pipeline stage, every artifact a file.

Exit status is 0 on success, 1 on a domain error (bad or missing input), 2 on
a usage error. Settings resolve as command-line flag > ``--config`` file >
built-in default.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import plotting
from .association import assign_objects, build_room_index, dump_assignment, load_assignment
from .errors import RoomTopoError, SchemaError
from .evaluation import UNLABELED, labeling_metrics, pipeline_report, segmentation_report
from .geometry_io import load_embedding_table, load_object_map, read_cloud, read_vector
from .labeler import (
    LabelerConfig,
    RoomSample,
    average_scores,
    dump_dataset,
    infer_labels,
    init_model,
    load_checkpoint,
    load_dataset,
    logits_label,
    predict_logits,
    save_checkpoint,
    train,
)
from .occupancy import CEILING_BETA, DEFAULT_TILE_SIZE, FLOOR_BETA, dump_grid, export_channel_pngs, fit_grid, load_grid, rasterize
from .segmentation import SegmenterParams, dump_masks, export_instance_pngs, import_masks, mask_file_spec, segment_heuristic
from .synthgen import SceneSpec, generate_embedding_world, generate_scene, room_dataset, write_scene
from .topomap import build, dump_map, load_map, query, similarity_field

PROG = "roomtopo"
PROFILES = ("full", "toy")


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class PipelineConfig:
    tile_size: float = DEFAULT_TILE_SIZE
    beta_ceiling: tuple[float, float] = CEILING_BETA
    beta_floor: tuple[float, float] = FLOOR_BETA
    seed: int = 0
    segmenter: SegmenterParams = SegmenterParams()
    labeler_profile: str = "full"
    labeler_settings: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.tile_size > 0:
            raise SchemaError("tile_size must be positive")
        for name in ("beta_ceiling", "beta_floor"):
            lo, hi = getattr(self, name)
            if not 0 <= lo < hi <= 1:
                raise SchemaError(f"{name} must satisfy 0 <= lo < hi <= 1, got {lo} {hi}")
        if self.segmenter.wall_density_threshold < 1:
            raise SchemaError("wall_density_threshold must be >= 1")
        if self.segmenter.min_room_cells is not None and self.segmenter.min_room_cells < 1:
            raise SchemaError("min_room_cells must be >= 1")
        if self.labeler_profile not in PROFILES:
            raise SchemaError(f"labeler profile must be one of {PROFILES}")
        self.labeler()

    def labeler(self, **overrides) -> LabelerConfig:
        settings = {"seed": self.seed, **self.labeler_settings, **overrides}
        try:
            if self.labeler_profile == "toy":
                return LabelerConfig.toy(**settings)
            return LabelerConfig(**settings)
        except (TypeError, ValueError) as e:
            raise SchemaError(f"invalid labeler settings: {e}") from None

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {"tile_size", "beta_ceiling", "beta_floor", "seed", "segmenter", "labeler", "paths"}
        unknown = set(doc) - known
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        try:
            if "tile_size" in doc:
                kw["tile_size"] = float(doc["tile_size"])
            for name in ("beta_ceiling", "beta_floor"):
                if name in doc:
                    lo, hi = doc[name]
                    kw[name] = (float(lo), float(hi))
            if "seed" in doc:
                kw["seed"] = int(doc["seed"])
            if "segmenter" in doc:
                kw["segmenter"] = SegmenterParams(**doc["segmenter"])
            if "labeler" in doc:
                lab = dict(doc["labeler"])
                kw["labeler_profile"] = lab.pop("profile", "full")
                kw["labeler_settings"] = lab
            if "paths" in doc:
                kw["paths"] = {str(k): str(v) for k, v in doc["paths"].items()}
        except (TypeError, ValueError) as e:
            raise SchemaError(f"invalid config: {e}") from None
        return cls(**kw)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise SchemaError(f"config {path}: {e}") from None
        if not isinstance(doc, dict):
            raise SchemaError(f"config {path} must hold a JSON object")
        cfg = PipelineConfig.from_dict(doc)
    flags = {}
    for name in ("tile_size", "seed"):
        if getattr(args, name, None) is not None:
            flags[name] = getattr(args, name)
    for name in ("beta_ceiling", "beta_floor"):
        if getattr(args, name, None) is not None:
            flags[name] = tuple(getattr(args, name))
    seg = {}
    if getattr(args, "wall_density_threshold", None) is not None:
        seg["wall_density_threshold"] = args.wall_density_threshold
    if getattr(args, "min_room_cells", None) is not None:
        seg["min_room_cells"] = args.min_room_cells
    if seg:
        flags["segmenter"] = replace(cfg.segmenter, **seg)
    if getattr(args, "profile", None) is not None:
        flags["labeler_profile"] = args.profile
    if "seed" in flags:
        flags["labeler_settings"] = {k: v for k, v in cfg.labeler_settings.items() if k != "seed"}
    cfg = replace(cfg, **flags)
    cfg.validate()
    return cfg


# --------------------------------------------------------------- helpers

def _read_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _input(args, cfg: PipelineConfig, name: str) -> Path:
    value = getattr(args, name, None) or cfg.paths.get(name)
    if value is None:
        raise _Usage(f"--{name.replace('_', '-')} is required (or set paths.{name} in the config)")
    return Path(value)


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_seg(path: Path):
    return import_masks(_read_text(path))


def _load_labels(path: Path) -> dict[int, dict]:
    try:
        doc = json.loads(_read_text(path))
        return {int(r["room_id"]): r for r in doc["rooms"]}
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"invalid labels file {path}: {e}") from None


def _load_gt_labels(path: Path) -> dict[int, str]:
    try:
        doc = json.loads(_read_text(path))
        return {int(k): str(v) for k, v in doc["room_labels"].items()}
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise SchemaError(f"invalid ground-truth file {path}: {e}") from None


def _write_report(report, out: Path, stem: str) -> None:
    (out / f"{stem}.json").write_text(report.to_json())
    (out / f"{stem}.csv").write_text(report.to_csv())


class _Usage(Exception):
    pass


# ----------------------------------------------------------- subcommands

def cmd_synth(args, cfg: PipelineConfig) -> str:
    try:
        rows, cols = (int(v) for v in args.rooms.lower().split("x"))
    except ValueError:
        raise _Usage(f"--rooms must look like RxC, got {args.rooms!r}") from None
    world = generate_embedding_world(dim=args.embedding_dim, seed=cfg.seed, confounded=args.confounded)
    spec = SceneSpec(
        rows=rows, cols=cols, tile_size=cfg.tile_size, seed=cfg.seed, embedding_dim=args.embedding_dim,
        extra_door_prob=args.extra_door_prob, open_passage_prob=args.open_passage_prob,
        position_noise=args.position_noise,
    )
    cloud, gt = generate_scene(spec, world)
    out = _out_dir(args)
    write_scene(out, cloud, gt)
    plotting.plot_instances(gt.seg, out / "gt_masks.png", title="Ground truth")
    extra = ""
    if args.dataset_rooms:
        samples = room_dataset(world, args.dataset_rooms, seed=cfg.seed + 1)
        (out / "rooms.json").write_text(dump_dataset(samples, "phrases.json"))
        extra = f", {len(samples)} dataset rooms"
    return (f"synth: {len(cloud)} points, {len(gt.seg.rooms)} rooms, "
            f"{len(gt.seg.transitions)} doorways{extra} -> {out}")


def cmd_rasterize(args, cfg: PipelineConfig) -> str:
    cloud = read_cloud(_input(args, cfg, "cloud"))
    if args.grid_from:
        spec = mask_file_spec(_read_text(args.grid_from))
        if abs(spec.tile_size - cfg.tile_size) > 1e-12 and args.tile_size is not None:
            raise SchemaError("--tile-size disagrees with the grid taken from --grid-from")
    else:
        spec = fit_grid(cloud, cfg.tile_size, args.padding, align=True)
    grid = rasterize(cloud, spec, cfg.beta_ceiling, cfg.beta_floor)
    out = _out_dir(args)
    (out / "grid.json").write_text(dump_grid(grid))
    if not args.no_png:
        export_channel_pngs(grid, out)
    return (f"rasterize: {len(cloud)} points -> {spec.width}x{spec.height} grid, "
            f"{int(grid.o_ceiling.sum())} ceiling / {int(grid.o_floor.sum())} floor cells -> {out / 'grid.json'}")


def cmd_segment(args, cfg: PipelineConfig) -> str:
    grid = load_grid(_read_text(_input(args, cfg, "grid")))
    seg = segment_heuristic(grid, cfg.segmenter)
    out = _out_dir(args)
    (out / "masks.json").write_text(dump_masks(seg))
    plotting.plot_instances(seg, out / "masks.png", title="Predicted instances", background=grid.density)
    if args.instance_pngs:
        export_instance_pngs(seg, out / "instances")
    return f"segment: {len(seg.rooms)} rooms, {len(seg.transitions)} transitions -> {out / 'masks.json'}"


def cmd_associate(args, cfg: PipelineConfig) -> str:
    seg = _load_seg(_input(args, cfg, "masks"))
    objects = load_object_map(_read_text(_input(args, cfg, "objects")))
    assign = assign_objects(objects, build_room_index(seg))
    out = _out_dir(args)
    (out / "assignment.json").write_text(dump_assignment(assign))
    used = len({r for r, _ in assign.mapping.values()})
    return f"associate: {len(assign.mapping)} objects into {used} rooms -> {out / 'assignment.json'}"


def cmd_train_labeler(args, cfg: PipelineConfig) -> str:
    samples, table = load_dataset(_input(args, cfg, "dataset"))
    flags = {"embedding_dim": table.dim}
    for flag, key in (("epochs", "epochs"), ("lr", "learning_rate"), ("temperature", "temperature"),
                      ("head_mode", "head_mode"), ("batch_size", "batch_size")):
        if getattr(args, flag) is not None:
            flags[key] = getattr(args, flag)
    config = cfg.labeler(**flags)
    model = init_model(config, classes=table.phrases if config.head_mode == "logits" else ())
    t0 = time.perf_counter()
    model, history = train(model, samples, table, config)
    elapsed = time.perf_counter() - t0
    out = _out_dir(args)
    save_checkpoint(model, out / "model.npz")
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows((k + 1, f"{v:.8g}") for k, v in enumerate(history))
    plotting.plot_loss_history(history, out / "loss.png")
    final = history[-1] if history else float("nan")
    return (f"train-labeler: {len(samples)} rooms, {config.epochs} epochs, {model.num_parameters} params, "
            f"final loss {final:.4f} in {elapsed:.1f}s -> {out / 'model.npz'}")


def cmd_label(args, cfg: PipelineConfig) -> str:
    model = load_checkpoint(_input(args, cfg, "model"))
    seg = _load_seg(_input(args, cfg, "masks"))
    objects = load_object_map(_read_text(_input(args, cfg, "objects")))
    assign = load_assignment(_read_text(_input(args, cfg, "assignment")))
    table = load_embedding_table(_read_text(_input(args, cfg, "phrases")))
    emb = {o.id: o.embedding for o in objects.objects}
    room_ids, samples = [], []
    for m in sorted(seg.rooms, key=lambda m: m.instance_id):
        oids = assign.objects_in(m.instance_id)
        missing = [o for o in oids if o not in emb]
        if missing:
            raise SchemaError(f"assignment refers to unknown objects {missing}")
        if oids:
            room_ids.append(m.instance_id)
            samples.append(RoomSample(np.stack([emb[o] for o in oids])))
    records = []
    results = infer_labels(model, samples, table)
    for rid, sample, (label, e, scores) in zip(room_ids, samples, results):
        if model.config.head_mode == "logits":
            label = logits_label(model, sample)
            scores = {c: float(v) for c, v in zip(model.classes, predict_logits(model, sample))}
        records.append({"room_id": rid, "label": label, "embedding": e.tolist(),
                        "object_ids": assign.objects_in(rid), "scores": scores})
    for m in seg.rooms:
        if m.instance_id not in room_ids:
            records.append({"room_id": m.instance_id, "label": UNLABELED, "embedding": None,
                            "object_ids": [], "scores": {}})
    records.sort(key=lambda r: r["room_id"])
    out = _out_dir(args)
    (out / "labels.json").write_text(json.dumps({"rooms": records}, indent=1))
    return f"label: {len(room_ids)} labelled, {len(records) - len(room_ids)} unlabeled rooms -> {out / 'labels.json'}"


def cmd_build_map(args, cfg: PipelineConfig) -> str:
    seg = _load_seg(_input(args, cfg, "masks"))
    assign = load_assignment(_read_text(_input(args, cfg, "assignment")))
    labels = _load_labels(_input(args, cfg, "labels"))
    room_labels = {
        rid: (r["label"], np.asarray(r["embedding"], dtype=np.float64))
        for rid, r in labels.items() if r.get("embedding") is not None
    }
    tmap = build(seg, assign, room_labels)
    out = _out_dir(args)
    (out / "map.json").write_text(dump_map(tmap))
    cents = {n.room_id: n.centroid for n in tmap.nodes}
    plotting.plot_instances(seg, out / "map.png", title="Topological map",
                            edges=[(cents[e.rooms[0]], cents[e.rooms[1]]) for e in tmap.edges])
    return (f"build-map: {len(tmap.nodes)} rooms, {len(tmap.edges)} edges, "
            f"{len(tmap.dangling_transitions)} dangling -> {out / 'map.json'}")


def cmd_query(args, cfg: PipelineConfig) -> str:
    tmap = load_map(_read_text(_input(args, cfg, "map")))
    if args.embedding:
        q = read_vector(_read_text(args.embedding))
        what = Path(args.embedding).name
    else:
        if not args.phrase or not args.table:
            raise _Usage("query needs --embedding FILE or both --phrase and --table")
        table = load_embedding_table(_read_text(args.table))
        if args.phrase not in table:
            raise SchemaError(f"phrase {args.phrase!r} is not in {args.table}")
        q = table[args.phrase]
        what = repr(args.phrase)
    hits = query(tmap, q, args.k)
    for rid, label, sim in hits:
        print(f"{rid}\t{label}\t{sim:.6f}")
    if args.png:
        field_ = similarity_field(tmap, q)
        marks = [(n.centroid, n.label) for n in tmap.nodes if n.embedding is not None]
        plotting.plot_similarity_field(field_, tmap.spec, args.png, title=f"query {what}", labels=marks)
    return f"query: {len(hits)} of {sum(n.embedding is not None for n in tmap.nodes)} rooms for {what}"


def cmd_eval(args, cfg: PipelineConfig) -> str:
    out = _out_dir(args)
    if args.model or args.dataset:
        return _eval_labeling(args, cfg, out)
    pred = _load_seg(_input(args, cfg, "pred"))
    gt = _load_seg(_input(args, cfg, "gt"))
    report = segmentation_report(pred, gt, args.iou)
    print(report.format_table())
    _write_report(report, out, "segmentation_report")
    plotting.plot_pr_curves(report, out / "pr_curves.png")
    summary = ", ".join(f"{c} AP {100 * r['ap']:.2f}" for c, r in report.rows.items())
    if args.pred_labels or args.gt_labels:
        if not (args.pred_labels and args.gt_labels):
            raise _Usage("--pred-labels and --gt-labels go together")
        pred_labels = {rid: r["label"] for rid, r in _load_labels(Path(args.pred_labels)).items()}
        pipe = pipeline_report(pred, pred_labels, gt, _load_gt_labels(Path(args.gt_labels)), args.iou)
        print()
        print(pipe.format_table())
        _write_report(pipe, out, "pipeline_report")
        summary += f", pipeline mAP {100 * pipe.aggregate['mAP']:.2f}"
    return f"eval: {summary} -> {out}"


def _eval_labeling(args, cfg, out: Path) -> str:
    model = load_checkpoint(_input(args, cfg, "model"))
    samples, table = load_dataset(_input(args, cfg, "dataset"))
    gts = [s.gt_label for s in samples]
    if model.config.head_mode == "logits":
        preds = []
        for s in samples:
            z = predict_logits(model, s)
            preds.append((logits_label(model, s), {c: float(v) for c, v in zip(model.classes, z)}))
    else:
        preds = [(label, scores) for label, _, scores in infer_labels(model, samples, table)]
    ours = labeling_metrics(preds, gts, table.phrases)
    ours.title = "Room labeling (trained encoder)"
    base = labeling_metrics([average_scores(s, table) for s in samples], gts, table.phrases)
    base.title = "Room labeling (averaged object embeddings)"
    for r in (base, ours):
        print(r.format_table())
        print()
    _write_report(ours, out, "labeling_report")
    _write_report(base, out, "labeling_baseline")
    plotting.plot_category_bars(ours, out / "labeling_f1.png")
    return (f"eval: weighted F1 {100 * ours.aggregate['weighted_f1']:.2f} "
            f"(averaging {100 * base.aggregate['weighted_f1']:.2f}), mAP {100 * ours.aggregate['mAP']:.2f} -> {out}")


# ----------------------------------------------------------------- parser

def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    g = parser.add_argument_group("pipeline settings")
    g.add_argument("--tile-size", type=float, default=d, metavar="M", help="grid cell size in meters")
    g.add_argument("--beta-ceiling", type=float, nargs=2, default=d, metavar=("LO", "HI"),
                   help="ceiling slice as fractions of room height (default 0.7 0.9)")
    g.add_argument("--beta-floor", type=float, nargs=2, default=d, metavar=("LO", "HI"),
                   help="floor slice as fractions of room height (default 0.1 0.3)")
    g.add_argument("--seed", type=int, default=d)
    g.add_argument("--config", default=d, metavar="PATH", help="JSON config file")
    g.add_argument("--out", default=d, metavar="DIR", help="output directory (default: cwd)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=PROG, description="Point cloud to queryable room graph.")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        _common(sp, suppress=True)
        sp.set_defaults(func=func)
        return sp

    s = add("synth", cmd_synth, "generate a synthetic scene with ground truth")
    s.add_argument("--rooms", default="2x2", metavar="RxC")
    s.add_argument("--dataset-rooms", type=int, default=0, metavar="N",
                   help="also write a labeling dataset of N rooms from the same embedding world")
    s.add_argument("--embedding-dim", type=int, default=32)
    s.add_argument("--confounded", action="store_true", help="share categories between paired room types")
    s.add_argument("--extra-door-prob", type=float, default=0.0)
    s.add_argument("--open-passage-prob", type=float, default=0.0)
    s.add_argument("--position-noise", type=float, default=0.0, metavar="M")

    s = add("rasterize", cmd_rasterize, "point cloud -> density and occupancy grid")
    s.add_argument("--cloud", metavar="PLY|XYZ")
    s.add_argument("--grid-from", metavar="MASKS", help="reuse the grid spec stored in a mask file")
    s.add_argument("--padding", type=int, default=0, metavar="CELLS")
    s.add_argument("--no-png", action="store_true")

    s = add("segment", cmd_segment, "grid -> room and transition masks")
    s.add_argument("--grid")
    s.add_argument("--wall-density-threshold", type=int)
    s.add_argument("--min-room-cells", type=int)
    s.add_argument("--instance-pngs", action="store_true")

    s = add("associate", cmd_associate, "assign objects to rooms")
    s.add_argument("--masks")
    s.add_argument("--objects")

    s = add("train-labeler", cmd_train_labeler, "train the room labeler on a dataset file")
    s.add_argument("--dataset")
    s.add_argument("--profile", choices=PROFILES)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--temperature", type=float)
    s.add_argument("--head-mode", choices=("contrastive", "logits"))
    s.add_argument("--batch-size", type=int)

    s = add("label", cmd_label, "label rooms from their objects")
    for flag in ("--model", "--masks", "--objects", "--assignment", "--phrases"):
        s.add_argument(flag)

    s = add("build-map", cmd_build_map, "assemble the topological map")
    for flag in ("--masks", "--assignment", "--labels"):
        s.add_argument(flag)

    s = add("query", cmd_query, "rank rooms against a query embedding")
    s.add_argument("--map")
    s.add_argument("--embedding", metavar="FILE")
    s.add_argument("--phrase")
    s.add_argument("--table", metavar="FILE")
    s.add_argument("-k", type=int, default=1)
    s.add_argument("--png", metavar="PATH", help="write the similarity heat map")

    s = add("eval", cmd_eval, "segmentation AP, pipeline mAP, or labeling metrics")
    s.add_argument("--pred", metavar="MASKS")
    s.add_argument("--gt", metavar="MASKS")
    s.add_argument("--pred-labels")
    s.add_argument("--gt-labels")
    s.add_argument("--iou", type=float, default=0.5)
    s.add_argument("--model")
    s.add_argument("--dataset")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "k", 1) < 1:
        parser.print_usage(sys.stderr)
        print(f"{PROG}: error: -k must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = resolve_config(args)
        summary = args.func(args, cfg)
    except _Usage as e:
        parser.print_usage(sys.stderr)
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 2
    except (RoomTopoError, OSError, ValueError, KeyError) as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 1
    print(summary, file=sys.stderr if args.command == "query" else sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
