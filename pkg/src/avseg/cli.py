"""Command-line front end.

Subcommands cover the whole pipeline on files: ``synth`` writes a scene
corpus, ``pair`` builds the neighbor table, ``train`` fits adapters,
``infer`` writes predicted masks, ``eval`` scores them. Exit code 0 on
success, 1 for usage problems, 2 for bad data or configuration; every
failure also prints a single machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import storage
from .errors import ConfigError, ContractError, FormatError, PipelineError
from .inference import InferenceConfig, Proposal, kmeans_cosine, mpm, sounding_mask
from .metrics import evaluate
from .model import AdapterParams, FrozenTrunk, Placement, TrunkConfig, audio_forward, visual_forward
from .objective import ObjectiveConfig
from .pairing import PairTable, build_knn_table
from .synthetic import SceneConfig, gen_dataset, global_embedding
from .trainer import TrainConfig, train

_PRECISIONS = {"f32": np.float32, "f64": np.float64}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _load_json(path, what: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise FormatError(f"cannot read {what}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{what} is not valid JSON: {e.msg} (line {e.lineno})") from e
    if not isinstance(doc, dict):
        raise FormatError(f"{what} must be a JSON object")
    return doc


def _dataclass_from(cls, doc: dict, what: str, **overrides):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {', '.join(unknown)}")
    merged = {**doc, **overrides}
    try:
        return cls(**merged)
    except TypeError as e:
        raise ConfigError(f"bad {what}: {e}") from e


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    doc = _load_json(args.config, "scene config") if args.config else {}
    cfg = _dataclass_from(SceneConfig, doc, "scene config")
    dtype = _PRECISIONS[args.precision]
    out = Path(args.out)
    scenes_dir = out / "scenes"
    scenes_dir.mkdir(parents=True, exist_ok=True)

    scenes = gen_dataset(cfg, args.num_scenes)
    records = []
    for scene in scenes:
        sid = f"scene_{scene.index:05d}"
        rel = lambda name: f"scenes/{sid}.{name}.tnsr"
        storage.save_tensor(out / rel("image"), scene.visual_tokens.astype(dtype))
        storage.save_tensor(out / rel("audio"), scene.audio_tokens.astype(dtype))
        storage.save_mask(out / rel("gt"), scene.gt_mask)
        props = []
        for j, p in enumerate(scene.proposals):
            storage.save_mask(out / rel(f"prop{j}.mask"), p.mask)
            storage.save_tensor(out / rel(f"prop{j}.emb"), p.embedding.astype(dtype))
            props.append(
                storage.ProposalRecord(
                    mask=rel(f"prop{j}.mask"), embedding=rel(f"prop{j}.emb"), score=p.score
                )
            )
        records.append(
            storage.ManifestRecord(
                id=sid,
                image_features=rel("image"),
                audio_features=rel("audio"),
                gt_mask=rel("gt"),
                proposals=props,
            )
        )
    storage.write_manifest(out / "manifest.jsonl", records)
    (out / "scene_config.json").write_text(json.dumps(dataclasses.asdict(cfg), indent=2) + "\n")
    print(f"wrote {len(records)} scenes under {out}")
    return 0


# ---------------------------------------------------------------------------
# pair


def _cmd_pair(args) -> int:
    records = storage.load_manifest(args.manifest)
    base = Path(args.manifest).parent
    embs = []
    for rec in records:
        feats = storage.load_tensor(base / rec.image_features)
        if feats.ndim != 3:
            raise FormatError(f"image features for {rec.id} must be (h, w, d), got {feats.shape}")
        embs.append(feats.reshape(-1, feats.shape[-1]).mean(axis=0))
    table = build_knn_table(np.asarray(embs, dtype=np.float64), k=args.k)
    storage.save_tensor(args.out, table.neighbors)
    print(f"neighbor table for {len(records)} scenes (k={args.k}) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _load_scene_arrays(records, base: Path, dtype):
    scenes = []
    grid = None
    for rec in records:
        img = storage.load_tensor(base / rec.image_features)
        aud = storage.load_tensor(base / rec.audio_features)
        if img.ndim != 3:
            raise FormatError(f"image features for {rec.id} must be (h, w, d), got {img.shape}")
        if aud.ndim != 2 or aud.shape[1] != img.shape[2]:
            raise FormatError(
                f"audio features for {rec.id} must be (k, {img.shape[2]}), got {aud.shape}"
            )
        if grid is None:
            grid = img.shape[:2]
        elif img.shape[:2] != grid:
            raise FormatError(f"scene {rec.id} grid {img.shape[:2]} differs from {grid}")
        scenes.append(
            SimpleNamespace(
                visual_tokens=img.astype(dtype), audio_tokens=aud.astype(dtype), id=rec.id
            )
        )
    return scenes, grid


def _resolve_train_config(doc: dict, data_shape: dict):
    """Merge a config document with sizes inferred from the data."""
    trunk_doc = dict(doc.get("trunk", {}))
    for key in ("d", "n", "k_audio"):
        if key in trunk_doc and trunk_doc[key] != data_shape[key]:
            raise ConfigError(
                f"trunk {key}={trunk_doc[key]} conflicts with data ({data_shape[key]})"
            )
        trunk_doc[key] = data_shape[key]
    trunk_cfg = _dataclass_from(TrunkConfig, trunk_doc, "trunk config")
    placement = _dataclass_from(Placement, doc.get("placement", {}), "placement config")
    objective = _dataclass_from(ObjectiveConfig, doc.get("objective", {}), "objective config")
    tcfg = _dataclass_from(TrainConfig, doc.get("train", {}), "train config")
    adapter_doc = dict(doc.get("adapter", {}))
    extra = sorted(set(adapter_doc) - {"m", "r", "seed", "zero_up"})
    if extra:
        raise ConfigError(f"unknown adapter config keys: {', '.join(extra)}")
    known = sorted(set(doc) - {"trunk", "placement", "objective", "train", "adapter"})
    if known:
        raise ConfigError(f"unknown config sections: {', '.join(known)}")
    return trunk_cfg, placement, objective, tcfg, adapter_doc


def _meta_doc(trunk_cfg, placement, objective, tcfg, adapter_doc, precision, grid) -> dict:
    return {
        "config": {
            "trunk": dataclasses.asdict(trunk_cfg),
            "placement": dataclasses.asdict(placement),
            "objective": dataclasses.asdict(objective),
            "train": dataclasses.asdict(tcfg),
            "adapter": adapter_doc,
        },
        "precision": precision,
        "grid": list(grid),
    }


def _cmd_train(args) -> int:
    records = storage.load_manifest(args.manifest)
    base = Path(args.manifest).parent
    doc = _load_json(args.config, "train config") if args.config else {}

    if args.resume:
        if doc:
            raise ConfigError("a resumed run takes its config from the checkpoint; drop --config")
        adapters, state, meta = storage.load_checkpoint(args.resume)
        cfg_doc = meta["config"]
        precision = meta["precision"]
        dtype = _PRECISIONS[precision]
        scenes, grid = _load_scene_arrays(records, base, dtype)
        h, w = grid
        data_shape = {
            "d": scenes[0].visual_tokens.shape[-1],
            "n": h * w,
            "k_audio": scenes[0].audio_tokens.shape[0],
        }
        trunk_cfg, placement, objective, tcfg, adapter_doc = _resolve_train_config(
            cfg_doc, data_shape
        )
    else:
        precision = args.precision
        dtype = _PRECISIONS[precision]
        scenes, grid = _load_scene_arrays(records, base, dtype)
        h, w = grid
        data_shape = {
            "d": scenes[0].visual_tokens.shape[-1],
            "n": h * w,
            "k_audio": scenes[0].audio_tokens.shape[0],
        }
        trunk_cfg, placement, objective, tcfg, adapter_doc = _resolve_train_config(doc, data_shape)
        state = None
        adapters = AdapterParams.initialize(
            num_layers=placement.count,
            d=trunk_cfg.d,
            k_audio=trunk_cfg.k_audio,
            m=adapter_doc.get("m", 4),
            r=adapter_doc.get("r"),
            seed=adapter_doc.get("seed", 0),
            zero_up=adapter_doc.get("zero_up", True),
            dtype=dtype,
        )

    neighbors = storage.load_tensor(args.pairs)
    if neighbors.dtype != np.int64 or neighbors.ndim != 2:
        raise FormatError(f"neighbor table must be 2-D int64, got {neighbors.dtype} {neighbors.shape}")
    table = PairTable(neighbors)

    trunk = FrozenTrunk(trunk_cfg, dtype=dtype)
    result = train(
        scenes,
        table,
        trunk,
        adapters,
        placement,
        objective_cfg=objective,
        cfg=tcfg,
        optim_state=state,
        run_until=args.stop_after,
    )
    meta = _meta_doc(trunk_cfg, placement, objective, tcfg, adapter_doc, precision, grid)
    storage.save_checkpoint(args.out, result.adapters, result.state, meta)
    old_trace = []
    if args.resume:
        prev = Path(args.resume) / "loss.csv"
        if prev.exists():
            old_trace = storage.load_loss_trace(prev)
    storage.save_loss_trace(Path(args.out) / "loss.csv", old_trace + result.trace)
    last = result.trace[-1][1] if result.trace else float("nan")
    print(f"trained to step {result.state.step}/{tcfg.max_iters}, last loss {last:.6f} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# infer


def _rebuild_from_checkpoint(ckpt_dir):
    adapters, state, meta = storage.load_checkpoint(ckpt_dir)
    cfg = meta["config"]
    trunk_cfg = TrunkConfig(**cfg["trunk"])
    placement = Placement(**cfg["placement"])
    dtype = _PRECISIONS[meta["precision"]]
    trunk = FrozenTrunk(trunk_cfg, dtype=dtype)
    return adapters, trunk, placement, meta


def _cmd_infer(args) -> int:
    records = storage.load_manifest(args.manifest)
    base = Path(args.manifest).parent
    adapters, trunk, placement, meta = _rebuild_from_checkpoint(args.checkpoint)
    icfg = InferenceConfig(
        k_clusters=args.k,
        silent_threshold=args.silent_threshold,
        mpm_iou=args.mpm_iou,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overlay = Path(args.overlay) if args.overlay else None
    if overlay:
        overlay.mkdir(parents=True, exist_ok=True)

    silent_count = 0
    for idx, rec in enumerate(records):
        img = storage.load_tensor(base / rec.image_features).astype(trunk.dtype)
        aud = storage.load_tensor(base / rec.audio_features).astype(trunk.dtype)
        if img.ndim != 3:
            raise FormatError(f"image features for {rec.id} must be (h, w, d), got {img.shape}")
        h, w, d = img.shape
        trace = audio_forward(aud, trunk)
        tokens = visual_forward(img.reshape(h * w, d), trunk, adapters, placement, trace).data
        labels = kmeans_cosine(
            tokens,
            icfg.k_clusters,
            seed=np.random.default_rng((icfg.seed, 5, idx)),
            max_iter=icfg.kmeans_max_iter,
            tol=icfg.kmeans_tol,
        )
        mask, silent = sounding_mask(tokens.reshape(h, w, d), labels, trace.pooled, icfg)
        silent_count += silent
        if rec.proposals and not args.no_mpm and not silent:
            props = [Proposal(mask=storage.load_mask(base / p.mask)) for p in rec.proposals]
            mask = mpm(mask, props, iou_threshold=icfg.mpm_iou)
        storage.save_mask(out / f"{rec.id}.mask.tnsr", mask)
        if overlay:
            storage.save_pgm(overlay / f"{rec.id}.mask.pgm", mask.astype(np.uint8) * 255)
    (out / "infer.json").write_text(
        json.dumps({"scenes": len(records), "silent": silent_count, "k": icfg.k_clusters}) + "\n"
    )
    print(f"wrote {len(records)} masks ({silent_count} silent) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    records = storage.load_manifest(args.manifest)
    base = Path(args.manifest).parent
    pred_dir = Path(args.pred)
    preds, gts = [], []
    for rec in records:
        if rec.gt_mask is None:
            raise FormatError(f"scene {rec.id} has no ground-truth mask; cannot evaluate")
        gts.append(storage.load_mask(base / rec.gt_mask))
        pred_path = pred_dir / f"{rec.id}.mask.tnsr"
        if not pred_path.exists():
            raise FormatError(f"no prediction for {rec.id} under {pred_dir}")
        preds.append(storage.load_mask(pred_path))
    report = evaluate(preds, gts)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(report.render())
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="avseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--num-scenes", type=int, required=True)
    p.add_argument("--config", help="JSON scene config; defaults apply when omitted")
    p.add_argument("--precision", choices=sorted(_PRECISIONS), default="f32")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pair", help="build the cosine nearest-neighbor table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=7)
    p.set_defaults(func=_cmd_pair)

    p = sub.add_parser("train", help="fit adapter weights on a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory to write")
    p.add_argument("--config", help="JSON with trunk/adapter/placement/objective/train sections")
    p.add_argument("--precision", choices=sorted(_PRECISIONS), default="f32")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.add_argument("--stop-after", type=int, default=None, help="pause after this many total steps")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="predict sounding-object masks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=2, help="number of token clusters")
    p.add_argument("--silent-threshold", type=float, default=0.1)
    p.add_argument("--mpm-iou", type=float, default=0.5)
    p.add_argument("--no-mpm", action="store_true", help="skip proposal refinement")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overlay", help="directory for PGM previews")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except _UsageError as e:
        _emit_error("usage", str(e))
        return 1
    try:
        return args.func(args)
    except _UsageError as e:
        _emit_error("usage", str(e))
        return 1
    except (PipelineError, OSError) as e:
        kind = type(e).__name__ if isinstance(e, PipelineError) else "io"
        _emit_error(kind, str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
