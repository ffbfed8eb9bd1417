"""Model export: one zoo entry to an ONNX file plus JSON sidecar.

export_model writes <name>.onnx and <name>.json into out_dir. The graph
always computes the full network; each requested tap becomes an extra
graph output next to "logits", and the sidecar maps tap names to layer
ids numbered shallow to deep regardless of request order. The sidecar
also records preprocessing and class names, so the file pair is
self-describing for consumers.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from . import zoo

_log = logging.getLogger(__name__)


def export_model(model_name: str, layer_names, out_dir) -> tuple[Path, Path]:
    entry = zoo.get_model(model_name)
    names = entry.normalize_layers(layer_names)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    onnx_path = out / f"{entry.name}.onnx"
    sidecar_path = out / f"{entry.name}.json"
    onnx_path.write_bytes(entry.graph_bytes(names))
    sidecar_path.write_text(json.dumps(entry.sidecar(names), indent=2, sort_keys=True) + "\n")
    _log.info("exported %s with taps %s to %s", entry.name, ", ".join(names), out)
    return onnx_path, sidecar_path
