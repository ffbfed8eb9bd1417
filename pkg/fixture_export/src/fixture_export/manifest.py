"""The export manifest: what a fixture store contains and how it was made.

Serialized as manifest.json in the store directory using the consumer's
"gepc-fixture-store" version 1 layout (format, version, class_names,
layer_ids, images with per-artifact sha256 hashes), extended with a
"model" block recording the source model name, preprocessing, and the
tap-name-to-layer-id map, plus any warnings raised while dumping. Layer
ids must be strictly increasing, and verify() rechecks every recorded
hash against the store directory so fixture drift surfaces as an error.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ExportError

FORMAT = "gepc-fixture-store"
VERSION = 1


@dataclass(frozen=True, eq=False)
class ExportManifest:
    model_name: str
    input_size: tuple
    mean: tuple
    std: tuple
    layer_outputs: dict
    class_names: tuple
    images: dict
    warnings: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        object.__setattr__(
            self, "layer_outputs", {str(k): int(v) for k, v in dict(self.layer_outputs).items()}
        )
        object.__setattr__(self, "class_names", tuple(str(n) for n in self.class_names))
        object.__setattr__(self, "images", dict(self.images))
        object.__setattr__(self, "warnings", tuple(str(w) for w in self.warnings))
        ids = list(self.layer_outputs.values())
        if sorted(set(ids)) != sorted(ids):
            raise ExportError(f"duplicate layer ids in {self.layer_outputs}")
        if not self.class_names:
            raise ExportError("class_names is empty")
        for key, entry in self.images.items():
            artifacts = entry.get("artifacts")
            if not artifacts:
                raise ExportError(f"image {key} has no artifacts")
            for name, info in artifacts.items():
                if "file" not in info or "sha256" not in info:
                    raise ExportError(f"image {key} artifact '{name}' lacks file or sha256")

    @property
    def layer_ids(self) -> tuple:
        return tuple(sorted(self.layer_outputs.values()))

    def to_store_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "class_names": list(self.class_names),
            "layer_ids": list(self.layer_ids),
            "model": {
                "name": self.model_name,
                "input_size": list(self.input_size),
                "mean": list(self.mean),
                "std": list(self.std),
                "layer_outputs": dict(self.layer_outputs),
            },
            "images": self.images,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_store_dict(cls, data: dict, source: str = "<dict>") -> "ExportManifest":
        if data.get("format") != FORMAT or data.get("version") != VERSION:
            raise ExportError(f"{source}: not a {FORMAT} v{VERSION} manifest")
        model = data.get("model") or {}
        try:
            return cls(
                model_name=str(model.get("name", "")),
                input_size=model.get("input_size", (0, 0)),
                mean=model.get("mean", (0.0, 0.0, 0.0)),
                std=model.get("std", (1.0, 1.0, 1.0)),
                layer_outputs=model.get(
                    "layer_outputs", {f"layer{i}": i for i in data.get("layer_ids", [])}
                ),
                class_names=data["class_names"],
                images=data["images"],
                warnings=data.get("warnings", ()),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ExportError(f"{source}: malformed manifest ({exc})") from exc

    @classmethod
    def load(cls, path) -> "ExportManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise ExportError(f"{path}: unreadable manifest ({exc})") from exc
        return cls.from_store_dict(data, source=str(path))

    def write(self, path) -> None:
        text = json.dumps(self.to_store_dict(), indent=2, sort_keys=True) + "\n"
        Path(path).write_text(text)

    def verify(self, store_dir) -> None:
        """Recompute every artifact hash against the store directory."""
        store = Path(store_dir)
        for key, entry in sorted(self.images.items()):
            for name, info in sorted(entry["artifacts"].items()):
                path = store / info["file"]
                try:
                    digest = hashlib.sha256(path.read_bytes()).hexdigest()
                except OSError as exc:
                    raise ExportError(f"{path}: missing fixture file ({exc})") from exc
                if digest != info["sha256"]:
                    raise ExportError(
                        f"{path}: hash mismatch (manifest {info['sha256']}, file {digest})"
                    )
