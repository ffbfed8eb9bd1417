"""Command-line pipeline driver: segmentation through coverage reports.

Subcommands run in dependency order: segment, index-gallery, correspond,
explain-local, explain-global, evaluate, report. Each reads the JSON
artifacts of the stages before it from the configured output directory
and writes its own stage subdirectory there, plus a manifest recording
the config hash, component versions, a UTC timestamp, and the files
written. Every artifact embeds the config hash that produced it; a rerun
with unchanged inputs and config reproduces each artifact byte for byte
(manifests differ only in their timestamp). `evaluate` refuses inputs
whose embedded hashes disagree.

Exit codes: 0 success; 1 validation failure, including a missing
upstream artifact (the message names the path); 2 runtime failure.
The GEPC_LOG environment variable (DEBUG/INFO/WARNING/ERROR) sets the
log level. A `--jobs N` bound parallelizes per-image work across
threads; results do not depend on N, and artifact writing stays
serialized on the main thread.
"""

import argparse
import datetime
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .annotations import PartAnnotation, PartLabeling
from .backends import (
    PrecomputedBackend,
    WARMCOOL_CLASS_NAMES,
    warmcool_backend,
)
from .config import PipelineConfig, config_hash, load_config
from .correspondence import (
    OffsetSpace,
    build_hyperimage,
    match_hyperpixels,
    transfer_part_labels,
)
from .cover import (
    CoverageReport,
    DecisionList,
    ExplanationFamily,
    ImageExplanations,
    evaluate_coverage,
    greedy_set_cover,
    split_train_test,
)
from .errors import ArtifactError, GepcError, InvalidInputError
from .imaging import SegmentMap, load_image, slic_segment
from .msx import find_msxs, msxs_from_json_dict, msxs_to_json_dict
from .onnx_backend import OnnxBackend
from .reporting import emit_report
from .retrieval import GalleryEntry, GalleryIndex, nearest_gallery
from .symbolic import relational_msx, symbolize_msx

log = logging.getLogger("gepc")

SUBCOMMANDS = (
    "segment",
    "index-gallery",
    "correspond",
    "explain-local",
    "explain-global",
    "evaluate",
    "report",
)


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ"
    )


def _versions() -> dict:
    return {
        "gepc": __version__,
        "numpy": np.__version__,
        "python": ".".join(str(v) for v in sys.version_info[:3]),
        "scipy": scipy.__version__,
    }


def _pmap(fn, items, jobs: int) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _list_images(directory: Path) -> list:
    files = sorted(directory.glob("*.png"))
    if not files:
        raise InvalidInputError(f"no .png images found in {directory}")
    return files


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _write_artifact(path: Path, kind: str, cfg_hash: str, payload: dict) -> None:
    _write_json(path, {"kind": kind, "config_hash": cfg_hash, **payload})


def _read_artifact(path: Path, kind: str, hashes: set | None = None) -> dict:
    if not path.is_file():
        raise ArtifactError(f"missing upstream artifact: {path}")
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ArtifactError(f"unreadable artifact {path}: {exc}") from exc
    if doc.get("kind") != kind or "config_hash" not in doc:
        raise ArtifactError(f"artifact {path} is not a {kind!r} record")
    if hashes is not None:
        hashes.add(doc["config_hash"])
    return doc


def _finish_stage(stage_dir: Path, subcommand: str, cfg_hash: str, outputs) -> None:
    _write_json(
        stage_dir / "manifest.json",
        {
            "kind": "run_manifest",
            "subcommand": subcommand,
            "config_hash": cfg_hash,
            "versions": _versions(),
            "created_utc": _utc_now(),
            "outputs": sorted(str(o) for o in outputs),
        },
    )


class _BackendProvider:
    """Hands out the configured backend, per image for the synthetic recipe."""

    def __init__(self, cfg: PipelineConfig):
        self._cfg = cfg
        self._shared = None
        if cfg.backend_kind == "precomputed":
            self._shared = PrecomputedBackend(cfg.backend_store)
        elif cfg.backend_kind == "onnx":
            self._shared = OnnxBackend(cfg.backend_model, cfg.backend_sidecar)

    def for_image(self, image, seg: SegmentMap | None = None):
        if self._shared is not None:
            return self._shared
        return warmcool_backend(image, seg, match_tol=self._cfg.backend_match_tol)

    @property
    def class_names(self) -> tuple:
        if self._shared is not None:
            return self._shared.class_names
        return WARMCOOL_CLASS_NAMES


def _class_name(names: tuple, class_id: int) -> str:
    if 0 <= class_id < len(names):
        return names[class_id]
    return str(class_id)


def _segment_path(cfg: PipelineConfig, image_id: str) -> Path:
    return cfg.output_dir / "segments" / f"{image_id}.json"


def _load_segment_map(cfg, image_id, hashes=None) -> SegmentMap:
    doc = _read_artifact(_segment_path(cfg, image_id), "segment_map", hashes)
    return SegmentMap.from_json_dict(doc["segment_map"])


def cmd_segment(cfg: PipelineConfig, jobs: int, class_id) -> None:
    del class_id
    h = config_hash(cfg)
    stage = cfg.output_dir / "segments"

    def work(path: Path):
        seg = slic_segment(
            load_image(path),
            n_segments=cfg.slic_n_segments,
            compactness=cfg.slic_compactness,
            max_iters=cfg.slic_max_iters,
        )
        return path.stem, seg

    results = _pmap(work, _list_images(cfg.images_dir), jobs)
    outputs = []
    for image_id, seg in results:
        name = f"{image_id}.json"
        _write_artifact(
            stage / name,
            "segment_map",
            h,
            {"image_id": image_id, "segment_map": seg.to_json_dict()},
        )
        outputs.append(name)
    _finish_stage(stage, "segment", h, outputs)
    log.info("segment: wrote %d segment maps to %s", len(outputs), stage)


def cmd_index_gallery(cfg: PipelineConfig, jobs: int, class_id) -> None:
    del class_id
    h = config_hash(cfg)
    stage = cfg.output_dir / "gallery"
    provider = _BackendProvider(cfg)

    def work(path: Path):
        ann_path = cfg.annotations_dir / f"{path.stem}.json"
        if not ann_path.is_file():
            raise InvalidInputError(f"missing gallery annotation: {ann_path}")
        image = load_image(path)
        backend = provider.for_image(image)
        return GalleryEntry(
            image_id=path.stem,
            class_id=backend.classify(image).top1(),
            embedding=backend.pooled_embedding(image),
            annotation_path=f"{path.stem}.json",
        )

    entries = _pmap(work, _list_images(cfg.gallery_dir), jobs)
    index = GalleryIndex(entries)
    _write_artifact(
        stage / "index.json", "gallery_index", h, {"entries": index.to_json_list()}
    )
    _finish_stage(stage, "index-gallery", h, ["index.json"])
    log.info("index-gallery: indexed %d gallery images", len(index))


def cmd_correspond(cfg: PipelineConfig, jobs: int, class_id) -> None:
    del class_id
    h = config_hash(cfg)
    stage = cfg.output_dir / "correspondence"
    provider = _BackendProvider(cfg)
    index_doc = _read_artifact(cfg.output_dir / "gallery" / "index.json", "gallery_index")
    index = GalleryIndex.from_json_list(index_doc["entries"])
    offsets = OffsetSpace(cfg.corr_offset_bins)

    gallery = {}
    for entry in index.entries:
        path = cfg.gallery_dir / f"{entry.image_id}.png"
        if not path.is_file():
            raise InvalidInputError(f"missing gallery image: {path}")
        image = load_image(path)
        backend = provider.for_image(image)
        hi = build_hyperimage(backend.extract_features(image, cfg.corr_layers))
        ann = PartAnnotation.load(cfg.annotations_dir / entry.annotation_path)
        gallery[entry.image_id] = (hi, ann)

    def work(path: Path):
        image_id = path.stem
        seg = _load_segment_map(cfg, image_id)
        image = load_image(path)
        backend = provider.for_image(image)
        predicted = backend.classify(image).top1()
        embedding = backend.pooled_embedding(image)
        try:
            ranked = nearest_gallery(embedding, index, class_filter=predicted)
        except InvalidInputError:
            ranked = nearest_gallery(embedding, index)
        gallery_id, similarity = ranked[0]
        gallery_hi, gallery_ann = gallery[gallery_id]
        query_hi = build_hyperimage(backend.extract_features(image, cfg.corr_layers))
        matches = match_hyperpixels(
            query_hi, gallery_hi, offsets, d=cfg.corr_exponent
        )
        labeling = transfer_part_labels(
            seg, query_hi, gallery_hi, gallery_ann, matches
        )
        return image_id, gallery_id, similarity, predicted, labeling

    results = _pmap(work, _list_images(cfg.images_dir), jobs)
    outputs = []
    for image_id, gallery_id, similarity, predicted, labeling in results:
        name = f"{image_id}.json"
        _write_artifact(
            stage / name,
            "part_labeling",
            h,
            {
                "image_id": image_id,
                "gallery_id": gallery_id,
                "similarity": float(similarity),
                "predicted_class": int(predicted),
                "predicted_class_name": _class_name(provider.class_names, predicted),
                "labels": list(labeling.labels),
                "confidences": [float(c) for c in labeling.confidences],
            },
        )
        outputs.append(name)
    _finish_stage(stage, "correspond", h, outputs)
    log.info("correspond: labeled %d images", len(outputs))


def cmd_explain_local(cfg: PipelineConfig, jobs: int, class_id) -> None:
    del class_id
    h = config_hash(cfg)
    stage = cfg.output_dir / "local"
    provider = _BackendProvider(cfg)

    def work(path: Path):
        image_id = path.stem
        seg = _load_segment_map(cfg, image_id)
        image = load_image(path)
        backend = provider.for_image(image, seg)
        predicted = backend.classify(image).top1()
        msxs = find_msxs(image, seg, backend, predicted, cfg.msx)
        return image_id, predicted, msxs

    results = _pmap(work, _list_images(cfg.images_dir), jobs)
    outputs = []
    names = provider.class_names
    for image_id, predicted, msxs in results:
        name = f"{image_id}.json"
        _write_artifact(
            stage / name,
            "local_explanations",
            h,
            {
                **msxs_to_json_dict(image_id, predicted, msxs),
                "class_name": _class_name(names, predicted),
            },
        )
        outputs.append(name)
    _finish_stage(stage, "explain-local", h, outputs)
    log.info("explain-local: wrote explanations for %d images", len(outputs))


def _rebuild_explanations(cfg: PipelineConfig, hashes: set):
    """Reassemble per-image explanations from the three upstream stages."""
    explanations = {}
    classes = {}
    for path in _list_images(cfg.images_dir):
        image_id = path.stem
        local = _read_artifact(
            cfg.output_dir / "local" / f"{image_id}.json", "local_explanations", hashes
        )
        labeling_doc = _read_artifact(
            cfg.output_dir / "correspondence" / f"{image_id}.json",
            "part_labeling",
            hashes,
        )
        seg = _load_segment_map(cfg, image_id, hashes)
        _, predicted, msxs = msxs_from_json_dict(local)
        labeling = PartLabeling(
            tuple(labeling_doc["labels"]),
            tuple(float(c) for c in labeling_doc["confidences"]),
        )
        symbolic, relational = [], []
        for msx in msxs:
            sym = symbolize_msx(msx, labeling)
            if sym is not None and sym not in symbolic:
                symbolic.append(sym)
            rel = relational_msx(msx, labeling, seg, cfg.rules_tau)
            if rel is not None and rel not in relational:
                relational.append(rel)
        explanations[image_id] = ImageExplanations(
            image_id, tuple(symbolic), tuple(relational)
        )
        classes[image_id] = predicted
    return explanations, classes


def _select_classes(classes: dict, class_id) -> list:
    present = sorted(set(classes.values()))
    if class_id is None:
        return present
    if class_id not in present:
        raise InvalidInputError(
            f"no images predicted as class {class_id}; present: {present}"
        )
    return [class_id]


def cmd_explain_global(cfg: PipelineConfig, jobs: int, class_id) -> None:
    del jobs
    h = config_hash(cfg)
    stage = cfg.output_dir / "global"
    provider = _BackendProvider(cfg)
    explanations, classes = _rebuild_explanations(cfg, set())
    train, test = split_train_test(classes, cfg.split_ratio, cfg.split_seed)
    outputs = ["split.json"]
    _write_artifact(
        stage / "split.json",
        "split",
        h,
        {"train": list(train), "test": list(test)},
    )
    for cls in _select_classes(classes, class_id):
        train_cls = [i for i in train if classes[i] == cls]
        explained = [
            explanations[i] for i in train_cls if explanations[i].of_mode(cfg.rules_mode)
        ]
        unexplained = sorted(
            i for i in train_cls if not explanations[i].of_mode(cfg.rules_mode)
        )
        if not explained:
            if class_id is not None:
                raise InvalidInputError(
                    f"class {cls}: no training image has a {cfg.rules_mode!r} explanation"
                )
            log.info("explain-global: class %d has no explained training images", cls)
            continue
        dlist = greedy_set_cover(ExplanationFamily.build(explained, cfg.rules_mode))
        name = f"decision_list_class{cls}.json"
        _write_artifact(
            stage / name,
            "decision_list",
            h,
            {
                **dlist.to_json_dict(cls),
                "class_name": _class_name(provider.class_names, cls),
                "train_images": sorted(e.image_id for e in explained),
                "train_no_explanation": unexplained,
            },
        )
        outputs.append(name)
    _finish_stage(stage, "explain-global", h, outputs)
    log.info("explain-global: wrote %d artifacts", len(outputs))


def _decision_list_paths(cfg: PipelineConfig, class_id) -> list:
    stage = cfg.output_dir / "global"
    if class_id is not None:
        return [stage / f"decision_list_class{class_id}.json"]
    paths = sorted(stage.glob("decision_list_class*.json"))
    if not paths:
        raise ArtifactError(
            f"missing upstream artifact: {stage / 'decision_list_class*.json'}"
        )
    return paths


def cmd_evaluate(cfg: PipelineConfig, jobs: int, class_id) -> None:
    del jobs
    h = config_hash(cfg)
    stage = cfg.output_dir / "evaluation"
    hashes = set()
    explanations, classes = _rebuild_explanations(cfg, hashes)
    split_doc = _read_artifact(
        cfg.output_dir / "global" / "split.json", "split", hashes
    )
    docs = [
        _read_artifact(path, "decision_list", hashes)
        for path in _decision_list_paths(cfg, class_id)
    ]
    if len(hashes) > 1:
        raise InvalidInputError(
            f"mixed config hashes among input artifacts: {sorted(hashes)}"
        )
    outputs = []
    for doc in docs:
        cls, dlist = DecisionList.from_json_dict(doc)
        test_ids = [i for i in split_doc["test"] if classes.get(i) == cls]
        if not test_ids:
            if class_id is not None:
                raise InvalidInputError(f"class {cls}: no test images in the split")
            log.info("evaluate: class %d has no test images", cls)
            continue
        report = evaluate_coverage(
            dlist, [explanations[i] for i in test_ids], cfg.rules_mode
        )
        name = f"coverage_class{cls}.json"
        _write_artifact(
            stage / name,
            "coverage_report",
            h,
            {
                **report.to_json_dict(),
                "class_id": cls,
                "test_images": sorted(test_ids),
            },
        )
        outputs.append(name)
    _finish_stage(stage, "evaluate", h, outputs)
    log.info("evaluate: wrote %d coverage reports", len(outputs))


def cmd_report(cfg: PipelineConfig, jobs: int, class_id) -> None:
    del jobs
    h = config_hash(cfg)
    stage = cfg.output_dir / "report"
    eval_dir = cfg.output_dir / "evaluation"
    if class_id is not None:
        coverage_paths = [eval_dir / f"coverage_class{class_id}.json"]
    else:
        coverage_paths = sorted(eval_dir.glob("coverage_class*.json"))
        if not coverage_paths:
            raise ArtifactError(
                f"missing upstream artifact: {eval_dir / 'coverage_class*.json'}"
            )
    outputs = []
    for cov_path in coverage_paths:
        cov_doc = _read_artifact(cov_path, "coverage_report")
        cls = int(cov_doc["class_id"])
        dl_doc = _read_artifact(
            cfg.output_dir / "global" / f"decision_list_class{cls}.json",
            "decision_list",
        )
        _, dlist = DecisionList.from_json_dict(dl_doc)
        report = CoverageReport.from_json_dict(cov_doc)
        written = emit_report(
            dlist, report, stage / f"class{cls}", fmt=cfg.report_format
        )
        outputs.extend(p.relative_to(stage) for p in written)
    _finish_stage(stage, "report", h, outputs)
    log.info("report: wrote %d files", len(outputs))


_HANDLERS = {
    "segment": cmd_segment,
    "index-gallery": cmd_index_gallery,
    "correspond": cmd_correspond,
    "explain-local": cmd_explain_local,
    "explain-global": cmd_explain_global,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def _setup_logging() -> None:
    level_name = os.environ.get("GEPC_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level)


def run_command(subcommand: str, config_path, overrides: dict | None = None) -> int:
    """Run one pipeline subcommand; returns the process exit code."""
    overrides = dict(overrides or {})
    _setup_logging()
    try:
        handler = _HANDLERS.get(subcommand)
        if handler is None:
            raise InvalidInputError(
                f"unknown subcommand {subcommand!r}; choose from {SUBCOMMANDS}"
            )
        cfg = load_config(
            config_path,
            mode=overrides.get("mode"),
            seed=overrides.get("seed"),
            output=overrides.get("output"),
        )
        handler(cfg, jobs=int(overrides.get("jobs") or 1), class_id=overrides.get("class_id"))
        return 0
    except (InvalidInputError, ArtifactError) as exc:
        print(f"gepc: error: {exc}", file=sys.stderr)
        return 1
    except GepcError as exc:
        print(f"gepc: runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last-resort guard
        log.exception("unhandled failure")
        print(f"gepc: runtime error: {exc}", file=sys.stderr)
        return 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidInputError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="gepc",
        description="Part-based post hoc explanation pipeline.",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="pipeline config file")
    parser.add_argument("--jobs", type=int, default=1, help="parallel image workers")
    parser.add_argument("--seed", type=int, default=None, help="override split seed")
    parser.add_argument(
        "--mode", choices=("parts", "relational"), default=None, help="override rule mode"
    )
    parser.add_argument(
        "--class", dest="class_id", type=int, default=None, help="restrict to one class"
    )
    parser.add_argument("--output", default=None, help="override output directory")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except InvalidInputError as exc:
        print(f"gepc: error: {exc}", file=sys.stderr)
        return 1
    return run_command(
        args.subcommand,
        args.config,
        {
            "jobs": args.jobs,
            "seed": args.seed,
            "mode": args.mode,
            "class_id": args.class_id,
            "output": args.output,
        },
    )


if __name__ == "__main__":
    sys.exit(main())
