"""ONNX-file backend: wires the numpy graph executor into ModelBackend.

A model is an .onnx file plus a JSON sidecar:

    {"input_size": [H, W] or S, "mean": [3], "std": [3],
     "layer_outputs": {output_name: layer_id}, "class_names": [...]}

The single graph output not named in layer_outputs is taken as the logits
vector; classify() applies a stable softmax to it. Images are resized to
input_size (bilinear, half-pixel centers) and normalized per channel before
inference.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .backends import ClassScores, FeatureMap, FeatureStack, ModelBackend, _normalize_layer_ids
from .errors import BackendError, InvalidInputError
from .imaging import resize_bilinear, validate_image
from .onnx_graph import load_model, run_model


class OnnxBackend(ModelBackend):
    def __init__(self, model_path, sidecar_path=None):
        model_path = Path(model_path)
        if sidecar_path is None:
            sidecar_path = model_path.with_suffix(".json")
        sidecar_path = Path(sidecar_path)
        self._model = load_model(model_path)
        if not sidecar_path.is_file():
            raise BackendError(f"{sidecar_path}: missing sidecar")
        try:
            sidecar = json.loads(sidecar_path.read_text())
        except (OSError, ValueError) as exc:
            raise BackendError(f"{sidecar_path}: unreadable sidecar ({exc})") from exc
        try:
            size = sidecar["input_size"]
            self._input_size = (
                (int(size), int(size)) if np.isscalar(size) else (int(size[0]), int(size[1]))
            )
            self._mean = np.asarray(sidecar["mean"], dtype=np.float32)
            self._std = np.asarray(sidecar["std"], dtype=np.float32)
            layer_outputs = {str(k): int(v) for k, v in sidecar["layer_outputs"].items()}
            self._class_names = tuple(str(n) for n in sidecar["class_names"])
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise BackendError(f"{sidecar_path}: malformed sidecar ({exc})") from exc
        if self._mean.shape != (3,) or self._std.shape != (3,):
            raise BackendError(f"{sidecar_path}: mean/std must each hold 3 values")
        if (self._std == 0).any():
            raise BackendError(f"{sidecar_path}: std contains zeros")
        if not self._class_names:
            raise BackendError(f"{sidecar_path}: class_names is empty")
        outputs = set(self._model.outputs)
        ghosts = sorted(set(layer_outputs) - outputs)
        if ghosts:
            raise BackendError(
                f"{sidecar_path}: layer_outputs name missing graph outputs {ghosts}"
            )
        if len(set(layer_outputs.values())) != len(layer_outputs):
            raise BackendError(f"{sidecar_path}: duplicate layer ids in layer_outputs")
        remaining = [n for n in self._model.outputs if n not in layer_outputs]
        if len(remaining) != 1:
            raise BackendError(
                f"{sidecar_path}: expected exactly one non-layer (logits) output, got {remaining}"
            )
        self._logits_name = remaining[0]
        self._layer_names = {lid: name for name, lid in layer_outputs.items()}
        if len(self._model.inputs) != 1:
            raise BackendError(
                f"{model_path}: expected exactly one graph input, got {list(self._model.inputs)}"
            )
        self._input_name = self._model.inputs[0]

    @property
    def n_classes(self):
        return len(self._class_names)

    @property
    def class_names(self):
        return self._class_names

    @property
    def available_layers(self):
        return tuple(sorted(self._layer_names))

    def _prepare(self, image) -> np.ndarray:
        arr = validate_image(image)
        if arr.shape[:2] != self._input_size:
            arr = resize_bilinear(arr, *self._input_size)
        normalized = (arr - self._mean) / self._std
        return normalized.transpose(2, 0, 1)[None].astype(np.float32)

    def classify(self, image) -> ClassScores:
        x = self._prepare(image)
        out = run_model(self._model, {self._input_name: x}, [self._logits_name])
        logits = np.asarray(out[self._logits_name], dtype=np.float64).reshape(-1)
        if logits.size != self.n_classes:
            raise BackendError(
                f"model emits {logits.size} logits but sidecar lists "
                f"{self.n_classes} class names"
            )
        shifted = logits - logits.max()
        e = np.exp(shifted)
        return ClassScores(e / e.sum())

    def extract_features(self, image, layer_ids) -> FeatureStack:
        arr = validate_image(image)
        ids = _normalize_layer_ids(layer_ids)
        unknown = [l for l in ids if l not in self._layer_names]
        if unknown:
            raise InvalidInputError(
                f"unknown layer ids {unknown}; model provides {sorted(self._layer_names)}"
            )
        names = [self._layer_names[l] for l in ids]
        out = run_model(
            self._model, {self._input_name: self._prepare(arr)}, names
        )
        maps = []
        for lid, name in zip(ids, names):
            values = np.asarray(out[name], dtype=np.float32)
            if values.ndim != 4 or values.shape[0] != 1:
                raise BackendError(
                    f"layer output '{name}' has shape {values.shape}, expected (1, C, H, W)"
                )
            maps.append(FeatureMap(lid, values[0].transpose(1, 2, 0)))
        return FeatureStack(tuple(maps), arr.shape[0], arr.shape[1])
