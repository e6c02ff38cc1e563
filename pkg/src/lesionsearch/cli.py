"""Command-line interface.

Subcommands cover the whole pipeline: ``make-phantoms`` (demo corpus),
``ingest``, ``describe``, ``train``, ``evaluate``, ``filter-preview``, and
``serve``. Binary artifacts share the JSON-header + packed-floats layout
documented in their modules.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import imagecore, phantoms
from .descriptor import (
    BUILTIN_ENCODER,
    DescriptorConfig,
    describe,
    load_descriptor_table,
    load_feature_map,
    save_descriptor_table,
)
from .frangi import FrangiParams, frangi_filter
from .imagecore import load_manifest
from .metric import TrainConfig, save_head, train_head
from .retrieval import evaluate, load_index, query
from .service import ServiceConfig, RetrievalEngine, parse_scale_spec, serve


def _frangi_from_args(args) -> FrangiParams:
    return FrangiParams(
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        scales=parse_scale_spec(args.scales) if args.scales else FrangiParams().scales,
        soft_suppression=getattr(args, "soft_suppression", False),
    )


def _descriptor_config(args) -> DescriptorConfig:
    encoder = BUILTIN_ENCODER if args.encoder == "builtin" else "precomputed"
    return DescriptorConfig(
        encoder=encoder,
        gem_p=args.gem_p,
        band_count=args.band_count,
        frangi=_frangi_from_args(args),
    )


def _add_frangi_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--beta", type=float, default=0.6)
    parser.add_argument("--gamma", type=float, default=0.0444)
    parser.add_argument(
        "--scales",
        default=None,
        help="sigma sweep 'start:stop:step' or comma list (default 1:9:0.2)",
    )


def _add_descriptor_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--encoder", choices=["builtin", "precomputed"], default="builtin")
    parser.add_argument("--gem-p", dest="gem_p", type=float, default=3.0)
    parser.add_argument("--band-count", dest="band_count", type=int, default=4)
    _add_frangi_args(parser)


def cmd_make_phantoms(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = phantoms.make_phantom_corpus(
        per_class=args.per_class, patients_per_class=args.patients_per_class, seed=args.seed
    )
    rows = []
    for i, img in enumerate(corpus.images):
        name = f"phantom_{i:04d}.png"
        imagecore.save_png(img.plane(0), out / name, bit_depth=16)
        rows.append(
            {
                "image_path": name,
                "patient_id": corpus.patient_ids[i],
                "study_id": corpus.study_ids[i],
                "lesion_type": corpus.labels[i],
                "left": 0,
                "top": 0,
                "right": img.width,
                "bottom": img.height,
            }
        )
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(imagecore.MANIFEST_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} phantom images + manifest.csv to {out}")
    return 0


def cmd_ingest(args) -> int:
    config = (
        ServiceConfig.from_json(args.config)
        if args.config
        else ServiceConfig(
            data_dir=Path(args.data_dir),
            head_path=Path(args.head) if args.head else None,
            descriptor=_descriptor_config(args),
        )
    )
    engine = RetrievalEngine(config)
    manifest = load_manifest(args.manifest)
    root = Path(args.images_root or Path(args.manifest).parent)
    payload = {}
    for record in manifest.records:
        path = root / record.image_path
        if not path.exists():
            print(f"error: missing image file {path}", file=sys.stderr)
            return 2
        payload[record.image_path] = path.read_bytes()
    result = engine.ingest(manifest, payload)
    print(json.dumps(result))
    return 0


def cmd_describe(args) -> int:
    cfg = _descriptor_config(args)
    manifest = load_manifest(args.manifest)
    root = Path(args.images_root or Path(args.manifest).parent)
    vectors = []
    for record in manifest.records:
        if cfg.encoder == "precomputed":
            fmap_path = (Path(args.features_dir) if args.features_dir else root) / (
                record.image_path + ".fmap"
            )
            source = load_feature_map(fmap_path)
        else:
            image = imagecore.load_image(root / record.image_path)
            roi = imagecore.crop_roi(image, record.bbox)
            source = imagecore.resize_bilinear(roi, args.roi_size, args.roi_size)
        vectors.append(describe(source, cfg).vector)
    encoder_id = BUILTIN_ENCODER if cfg.encoder == BUILTIN_ENCODER else "precomputed"
    save_descriptor_table(np.array(vectors), args.out, gem_p=cfg.gem_p, encoder_id=encoder_id)
    print(f"wrote {len(vectors)} descriptors (dim {len(vectors[0])}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    table, header = load_descriptor_table(args.descriptors)
    manifest = load_manifest(args.manifest)
    if len(manifest.records) != table.shape[0]:
        print(
            f"error: descriptor table has {table.shape[0]} rows but the manifest "
            f"has {len(manifest.records)}",
            file=sys.stderr,
        )
        return 2
    labels = [r.lesion_type for r in manifest.records]
    cfg = TrainConfig(
        margin=args.margin,
        learning_rate=args.lr,
        momentum=args.momentum,
        iterations=args.iters,
        seed=args.seed,
    )
    head = train_head(table, labels, cfg)
    save_head(head, args.out)
    print(f"wrote head ({head.output_dim} x {head.input_dim}) to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    index, meta = load_index(args.index)
    report = evaluate(index, args.setting)
    payload = report.to_dict()
    payload["index_meta"] = meta
    payload["k"] = args.k
    neighbors = {}
    for pos in range(index.count):
        entry = index.entry(pos)
        ranked = query(
            index,
            entry.embedding,
            k=args.k,
            setting=args.setting,
            query_patient=entry.patient_id,
            exclude_id=entry.id,
        )
        neighbors[entry.id] = ranked.ids()
    payload["top_k_ids"] = neighbors
    Path(args.report).write_text(json.dumps(payload, indent=1), encoding="utf-8")
    print(
        f"{report.setting}: mAP@10={report.map_at_10:.4f} "
        f"P@1={report.precision_at_1:.4f} P@10={report.precision_at_10:.4f} "
        f"({report.query_count} queries) -> {args.report}"
    )
    return 0


def cmd_filter_preview(args) -> int:
    image = imagecore.load_image(args.input)
    params = _frangi_from_args(args)
    rm = frangi_filter(image, params)
    imagecore.save_png(rm.response[0], args.out, bit_depth=16)
    sidecar = Path(args.out).with_suffix(Path(args.out).suffix + ".json")
    sidecar.write_text(
        json.dumps(
            {
                "width": image.width,
                "height": image.height,
                "scales": list(params.scales),
                "alpha": params.alpha,
                "beta": params.beta,
                "gamma": params.gamma,
                "argmax_scale": rm.argmax_scale[0].tolist(),
            }
        ),
        encoding="utf-8",
    )
    print(f"wrote response map to {args.out} (+ {sidecar.name})")
    return 0


def cmd_serve(args) -> int:
    serve(ServiceConfig.from_json(args.config))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lesionsearch",
        description="Content-based retrieval for grayscale lesion ROIs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-phantoms", help="write a synthetic demo corpus + manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=12)
    p.add_argument("--patients-per-class", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_phantoms)

    p = sub.add_parser("ingest", help="build/extend a service index from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images-root", default=None)
    p.add_argument("--data-dir", default="lesionsearch_data")
    p.add_argument("--head", default=None, help="embedding head file to apply")
    p.add_argument("--config", default=None, help="service config JSON (overrides flags)")
    _add_descriptor_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("describe", help="write a descriptor table for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images-root", default=None)
    p.add_argument("--features-dir", default=None, help="fmap dir for --encoder precomputed")
    p.add_argument("--roi-size", dest="roi_size", type=int, default=64)
    p.add_argument("--out", required=True)
    _add_descriptor_args(p)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("train", help="fit the embedding head on a descriptor table")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--margin", type=float, default=0.8)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score an index under a clinical setting")
    p.add_argument("--index", required=True)
    p.add_argument("--setting", choices=["all", "same", "cross"], default="all")
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("filter-preview", help="emit the multiscale response as 16-bit PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--soft-suppression", action="store_true")
    _add_frangi_args(p)
    p.set_defaults(func=cmd_filter_preview)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
