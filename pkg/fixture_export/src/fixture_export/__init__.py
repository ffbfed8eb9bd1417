"""One-shot tooling that produces committed golden fixtures for gepc.

Two operations: export_model writes a zoo network as an ONNX file with
auxiliary outputs for the requested intermediate layers plus a JSON
sidecar, and dump_fixtures runs such a model over a directory of images,
writing class scores, per-layer feature maps, and pooled embeddings as
GPCT tensors under a hashed store manifest. Goldens are committed to the
main repository so its test suite never needs to invoke this package.
"""

from .dump import dump_fixtures
from .errors import ExportError
from .export import export_model
from .manifest import ExportManifest

__version__ = "0.1.0"

__all__ = ["ExportError", "ExportManifest", "dump_fixtures", "export_model"]
