"""Fixture dumping: run an exported model over a directory of images.

dump_fixtures loads the ONNX file and its sidecar through the consumer
backend, then writes per image: the class-score vector, one feature map
per exposed layer in (H, W, C) order, and the L2-normalized pooled
embedding, each as one GPCT file named <stem>_<artifact>.gpct. The store
manifest records class names, layer ids, preprocessing, and a sha256
per file, and is verified against the written files before returning.
An unreadable image is skipped with a warning recorded in the manifest;
so is a second image with pixel content identical to an earlier one.
Single-threaded and deterministic: rerunning over the same inputs
rewrites byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

from gepc.errors import GepcError
from gepc.onnx_backend import OnnxBackend

from . import gpct
from .errors import ExportError
from .images import content_key, load_rgb
from .manifest import ExportManifest

_SUFFIXES = (".bmp", ".jpeg", ".jpg", ".png")

_log = logging.getLogger(__name__)


def _image_files(images_dir) -> list:
    root = Path(images_dir)
    if not root.is_dir():
        raise ExportError(f"{root}: not a directory")
    files = sorted(
        p for p in root.iterdir() if p.is_file() and p.suffix.lower() in _SUFFIXES
    )
    if not files:
        raise ExportError(f"no images found in {root} (expected {', '.join(_SUFFIXES)})")
    stems = {}
    for path in files:
        other = stems.setdefault(path.stem, path)
        if other is not path:
            raise ExportError(
                f"duplicate image stem '{path.stem}' ({other.name}, {path.name}); "
                "artifact files are named by stem"
            )
    return files


def dump_fixtures(onnx_path, images_dir, out_dir, sidecar_path=None) -> ExportManifest:
    try:
        backend = OnnxBackend(onnx_path, sidecar_path)
    except GepcError as exc:
        raise ExportError(f"cannot load model: {exc}") from exc
    sidecar_file = Path(sidecar_path) if sidecar_path else Path(onnx_path).with_suffix(".json")
    sidecar = json.loads(sidecar_file.read_text())
    files = _image_files(images_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    layer_ids = backend.available_layers
    images = {}
    sources = {}
    warnings = []
    for path in files:
        try:
            arr = load_rgb(path)
        except ExportError as exc:
            warnings.append(f"skipped: {exc}")
            _log.warning("skipped %s: %s", path.name, exc)
            continue
        key = content_key(arr)
        if key in images:
            warnings.append(f"skipped: {path.name} duplicates pixel content of {sources[key]}")
            _log.warning("skipped %s: duplicate content of %s", path.name, sources[key])
            continue
        artifacts = {
            "scores": backend.classify(arr).scores,
            "embedding": backend.pooled_embedding(arr),
        }
        stack = backend.extract_features(arr, layer_ids)
        for lid in layer_ids:
            artifacts[f"layer{lid}"] = stack.layer(lid).values
        entry = {}
        for name in sorted(artifacts):
            blob = gpct.encode(artifacts[name])
            file_name = f"{path.stem}_{name}.gpct"
            (out / file_name).write_bytes(blob)
            entry[name] = {"file": file_name, "sha256": hashlib.sha256(blob).hexdigest()}
        images[key] = {"source": path.name, "artifacts": entry}
        sources[key] = path.name
    if not images:
        raise ExportError(f"no readable images in {images_dir}")
    manifest = ExportManifest(
        model_name=str(sidecar.get("model_name", "")),
        input_size=backend_input_size(sidecar),
        mean=sidecar["mean"],
        std=sidecar["std"],
        layer_outputs=sidecar["layer_outputs"],
        class_names=backend.class_names,
        images=images,
        warnings=warnings,
    )
    manifest.verify(out)
    manifest.write(out / "manifest.json")
    _log.info("dumped %d images into %s", len(images), out)
    return manifest


def backend_input_size(sidecar: dict) -> tuple:
    size = sidecar["input_size"]
    if isinstance(size, (int, float)):
        return (int(size), int(size))
    return (int(size[0]), int(size[1]))
