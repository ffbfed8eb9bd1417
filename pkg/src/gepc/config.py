"""Pipeline configuration: a small TOML-style file format plus hashing.

The file is line-based: `[section]` headers, `key = value` assignments,
`#` comments. Values are double-quoted strings, integers, floats, booleans,
or flat arrays of those. Relative paths resolve against the config file's
directory. Input paths must exist when the config is loaded; the output
directory is created on demand.

config_hash digests the semantic parameters (backend kind, segmentation,
correspondence, MSX, rules, split) and deliberately excludes filesystem
locations, so moving a dataset or redirecting output keeps artifact
identity while any parameter change breaks it.
"""

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidInputError
from .msx import MsxConfig

BACKEND_KINDS = ("synthetic-warmcool", "precomputed", "onnx")
RULE_MODES = ("parts", "relational")
REPORT_FORMATS = ("csv", "svg", "all")

_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_-]+)\]$")
_KEY_RE = re.compile(r"^([A-Za-z0-9_-]+)\s*=\s*(.+)$")
_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")

_ESCAPES = {"\\": "\\", '"': '"', "n": "\n", "t": "\t"}


def _strip_comment(line: str, lineno: int) -> str:
    out = []
    in_string = False
    i = 0
    while i < len(line):
        ch = line[i]
        if in_string and ch == "\\":
            out.append(line[i : i + 2])
            i += 2
            continue
        if ch == '"':
            in_string = not in_string
        elif ch == "#" and not in_string:
            break
        out.append(ch)
        i += 1
    if in_string:
        raise InvalidInputError(f"line {lineno}: unterminated string")
    return "".join(out).strip()


def _parse_string(raw: str, lineno: int) -> str:
    body = raw[1:-1]
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == '"':
            raise InvalidInputError(f"line {lineno}: stray quote inside string")
        if ch == "\\":
            if i + 1 >= len(body) or body[i + 1] not in _ESCAPES:
                raise InvalidInputError(f"line {lineno}: bad escape in string")
            out.append(_ESCAPES[body[i + 1]])
            i += 2
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def _split_array(body: str, lineno: int) -> list:
    items = []
    current = []
    in_string = False
    i = 0
    while i < len(body):
        ch = body[i]
        if in_string and ch == "\\":
            current.append(body[i : i + 2])
            i += 2
            continue
        if ch == '"':
            in_string = not in_string
        elif ch == "[" and not in_string:
            raise InvalidInputError(f"line {lineno}: nested arrays are not supported")
        elif ch == "," and not in_string:
            items.append("".join(current))
            current = []
            i += 1
            continue
        current.append(ch)
        i += 1
    items.append("".join(current))
    return items


def _parse_value(raw: str, lineno: int):
    raw = raw.strip()
    if not raw:
        raise InvalidInputError(f"line {lineno}: missing value")
    if raw.startswith('"'):
        if len(raw) < 2 or not raw.endswith('"'):
            raise InvalidInputError(f"line {lineno}: unterminated string")
        return _parse_string(raw, lineno)
    if raw.startswith("["):
        if not raw.endswith("]"):
            raise InvalidInputError(f"line {lineno}: unterminated array")
        body = raw[1:-1].strip()
        if not body:
            return []
        return [_parse_value(item, lineno) for item in _split_array(body, lineno)]
    if raw == "true":
        return True
    if raw == "false":
        return False
    if _INT_RE.match(raw):
        return int(raw)
    if _FLOAT_RE.match(raw):
        return float(raw)
    raise InvalidInputError(f"line {lineno}: cannot parse value {raw!r}")


def parse_config_text(text: str) -> dict:
    """Parse config text into {section: {key: value}}."""
    doc = {}
    section = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = _strip_comment(rawline, lineno)
        if not line:
            continue
        header = _SECTION_RE.match(line)
        if header:
            name = header.group(1)
            if name in doc:
                raise InvalidInputError(f"line {lineno}: duplicate section [{name}]")
            doc[name] = {}
            section = name
            continue
        if line.startswith("["):
            raise InvalidInputError(f"line {lineno}: malformed section header")
        assignment = _KEY_RE.match(line)
        if not assignment:
            raise InvalidInputError(f"line {lineno}: expected `key = value`")
        if section is None:
            raise InvalidInputError(
                f"line {lineno}: assignments must appear inside a [section]"
            )
        key, raw = assignment.groups()
        if key in doc[section]:
            raise InvalidInputError(
                f"line {lineno}: duplicate key {key!r} in [{section}]"
            )
        doc[section][key] = _parse_value(raw, lineno)
    return doc


_SCHEMA = {
    "backend": {"kind", "match_tol", "store", "model", "sidecar"},
    "segmentation": {"n_segments", "compactness", "max_iters"},
    "correspondence": {"layers", "exponent", "offset_bins"},
    "msx": {"p_h", "beam_width", "max_subset_size", "max_msx_count", "blur_sigma"},
    "rules": {"mode", "tau"},
    "split": {"ratio", "k", "seed"},
    "paths": {"images", "gallery", "annotations", "output"},
    "report": {"format"},
}


@dataclass(frozen=True)
class PipelineConfig:
    backend_kind: str
    backend_match_tol: float
    backend_store: Path | None
    backend_model: Path | None
    backend_sidecar: Path | None
    slic_n_segments: int
    slic_compactness: float
    slic_max_iters: int
    corr_layers: tuple
    corr_exponent: float
    corr_offset_bins: int
    msx: MsxConfig
    rules_mode: str
    rules_tau: float | None
    split_ratio: float
    split_k: int
    split_seed: int
    images_dir: Path
    gallery_dir: Path
    annotations_dir: Path
    output_dir: Path
    report_format: str


def _check_schema(doc: dict) -> None:
    for section, keys in doc.items():
        if section not in _SCHEMA:
            raise InvalidInputError(f"unknown config section [{section}]")
        for key in keys:
            if key not in _SCHEMA[section]:
                raise InvalidInputError(f"unknown config key {section}.{key}")


def _get_int(doc, section, key, default):
    value = doc.get(section, {}).get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidInputError(f"{section}.{key} must be an integer, got {value!r}")
    return value


def _get_float(doc, section, key, default):
    value = doc.get(section, {}).get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidInputError(f"{section}.{key} must be a number, got {value!r}")
    return float(value)


def _get_str(doc, section, key, default=None, required=False):
    value = doc.get(section, {}).get(key, default)
    if value is None:
        if required:
            raise InvalidInputError(f"{section}.{key} is required")
        return None
    if not isinstance(value, str):
        raise InvalidInputError(f"{section}.{key} must be a string, got {value!r}")
    return value


def _resolve(base: Path, raw: str) -> Path:
    path = Path(raw)
    return path if path.is_absolute() else base / path


def _require_exists(path: Path, want_dir: bool, what: str) -> Path:
    ok = path.is_dir() if want_dir else path.is_file()
    if not ok:
        kind = "directory" if want_dir else "file"
        raise InvalidInputError(f"{what}: {kind} does not exist: {path}")
    return path


def load_config(path, *, mode=None, seed=None, output=None) -> PipelineConfig:
    """Load, validate, and resolve a config file, applying CLI overrides."""
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"config file does not exist: {path}")
    doc = parse_config_text(path.read_text(encoding="utf-8"))
    _check_schema(doc)
    base = path.parent

    kind = _get_str(doc, "backend", "kind", "synthetic-warmcool")
    if kind not in BACKEND_KINDS:
        raise InvalidInputError(
            f"backend.kind must be one of {BACKEND_KINDS}, got {kind!r}"
        )
    match_tol = _get_float(doc, "backend", "match_tol", 0.0)
    if match_tol < 0:
        raise InvalidInputError(f"backend.match_tol must be >= 0, got {match_tol}")
    store = model = sidecar = None
    if kind == "precomputed":
        store = _require_exists(
            _resolve(base, _get_str(doc, "backend", "store", required=True)),
            want_dir=True,
            what="backend.store",
        )
    if kind == "onnx":
        model = _require_exists(
            _resolve(base, _get_str(doc, "backend", "model", required=True)),
            want_dir=False,
            what="backend.model",
        )
        sidecar = _require_exists(
            _resolve(base, _get_str(doc, "backend", "sidecar", required=True)),
            want_dir=False,
            what="backend.sidecar",
        )

    n_segments = _get_int(doc, "segmentation", "n_segments", 49)
    if n_segments < 1:
        raise InvalidInputError(f"segmentation.n_segments must be >= 1, got {n_segments}")
    compactness = _get_float(doc, "segmentation", "compactness", 10.0)
    if compactness <= 0:
        raise InvalidInputError("segmentation.compactness must be positive")
    max_iters = _get_int(doc, "segmentation", "max_iters", 10)
    if max_iters < 1:
        raise InvalidInputError("segmentation.max_iters must be >= 1")

    raw_layers = doc.get("correspondence", {}).get("layers", [0])
    if not isinstance(raw_layers, list) or not raw_layers:
        raise InvalidInputError("correspondence.layers must be a non-empty array")
    layers = []
    for item in raw_layers:
        if isinstance(item, bool) or not isinstance(item, int) or item < 0:
            raise InvalidInputError(
                f"correspondence.layers entries must be integers >= 0, got {item!r}"
            )
        layers.append(item)
    layers = tuple(sorted(set(layers)))
    exponent = _get_float(doc, "correspondence", "exponent", 1.0)
    if exponent <= 0:
        raise InvalidInputError("correspondence.exponent must be positive")
    offset_bins = _get_int(doc, "correspondence", "offset_bins", 16)
    if offset_bins < 1:
        raise InvalidInputError("correspondence.offset_bins must be >= 1")

    msx = MsxConfig(
        p_h=_get_float(doc, "msx", "p_h", 0.9),
        beam_width=_get_int(doc, "msx", "beam_width", 5),
        max_subset_size=_get_int(doc, "msx", "max_subset_size", 10),
        max_msx_count=_get_int(doc, "msx", "max_msx_count", 20),
        blur_sigma=_get_float(doc, "msx", "blur_sigma", 10.0),
    )

    rules_mode = mode if mode is not None else _get_str(doc, "rules", "mode", "parts")
    if rules_mode not in RULE_MODES:
        raise InvalidInputError(
            f"rules.mode must be one of {RULE_MODES}, got {rules_mode!r}"
        )
    rules_tau = None
    if "tau" in doc.get("rules", {}):
        rules_tau = _get_float(doc, "rules", "tau", None)
        if rules_tau < 0:
            raise InvalidInputError(f"rules.tau must be >= 0, got {rules_tau}")

    ratio = _get_float(doc, "split", "ratio", 0.7)
    if not 0.0 < ratio < 1.0:
        raise InvalidInputError(f"split.ratio must be in (0, 1), got {ratio}")
    k = _get_int(doc, "split", "k", 5)
    if k < 2:
        raise InvalidInputError(f"split.k must be >= 2, got {k}")
    split_seed = seed if seed is not None else _get_int(doc, "split", "seed", 0)

    if "paths" not in doc:
        raise InvalidInputError("config is missing the [paths] section")
    images_dir = _require_exists(
        _resolve(base, _get_str(doc, "paths", "images", required=True)),
        want_dir=True,
        what="paths.images",
    )
    gallery_dir = _require_exists(
        _resolve(base, _get_str(doc, "paths", "gallery", required=True)),
        want_dir=True,
        what="paths.gallery",
    )
    annotations_dir = _require_exists(
        _resolve(base, _get_str(doc, "paths", "annotations", required=True)),
        want_dir=True,
        what="paths.annotations",
    )
    output_dir = (
        Path(output)
        if output is not None
        else _resolve(base, _get_str(doc, "paths", "output", required=True))
    )

    report_format = _get_str(doc, "report", "format", "all")
    if report_format not in REPORT_FORMATS:
        raise InvalidInputError(
            f"report.format must be one of {REPORT_FORMATS}, got {report_format!r}"
        )

    return PipelineConfig(
        backend_kind=kind,
        backend_match_tol=match_tol,
        backend_store=store,
        backend_model=model,
        backend_sidecar=sidecar,
        slic_n_segments=n_segments,
        slic_compactness=compactness,
        slic_max_iters=max_iters,
        corr_layers=layers,
        corr_exponent=exponent,
        corr_offset_bins=offset_bins,
        msx=msx,
        rules_mode=rules_mode,
        rules_tau=rules_tau,
        split_ratio=ratio,
        split_k=k,
        split_seed=int(split_seed),
        images_dir=images_dir,
        gallery_dir=gallery_dir,
        annotations_dir=annotations_dir,
        output_dir=output_dir,
        report_format=report_format,
    )


def config_hash(cfg: PipelineConfig) -> str:
    """sha256 over the semantic parameters; filesystem locations excluded."""
    semantic = {
        "backend": {"kind": cfg.backend_kind, "match_tol": cfg.backend_match_tol},
        "segmentation": {
            "n_segments": cfg.slic_n_segments,
            "compactness": cfg.slic_compactness,
            "max_iters": cfg.slic_max_iters,
        },
        "correspondence": {
            "layers": list(cfg.corr_layers),
            "exponent": cfg.corr_exponent,
            "offset_bins": cfg.corr_offset_bins,
        },
        "msx": {
            "p_h": cfg.msx.p_h,
            "beam_width": cfg.msx.beam_width,
            "max_subset_size": cfg.msx.max_subset_size,
            "max_msx_count": cfg.msx.max_msx_count,
            "blur_sigma": cfg.msx.blur_sigma,
        },
        "rules": {"mode": cfg.rules_mode, "tau": cfg.rules_tau},
        "split": {"ratio": cfg.split_ratio, "k": cfg.split_k, "seed": cfg.split_seed},
    }
    canonical = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
