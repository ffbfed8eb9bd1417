"""Command-line entry point for the fixture tool.

Two subcommands:

    export --model NAME --layers A,B,C --out DIR
    dump --model PATH --images DIR --out DIR

Expected failures (unknown model or layer, unreadable model, empty image
directory, hash drift) print one "fixture-export: error:" line and exit
with status 1; anything unexpected exits with status 2.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .dump import dump_fixtures
from .errors import ExportError
from .export import export_model


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gepc-fixture-export",
        description="Export zoo models to ONNX and dump GPCT golden fixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="write a zoo model as ONNX plus JSON sidecar")
    exp.add_argument("--model", required=True, help="zoo model name")
    exp.add_argument("--layers", required=True, help="comma-separated layer names to expose")
    exp.add_argument("--out", required=True, help="output directory")
    dmp = sub.add_parser("dump", help="dump GPCT fixtures for every image in a directory")
    dmp.add_argument("--model", required=True, help="path to an exported .onnx file")
    dmp.add_argument("--images", required=True, help="directory of images")
    dmp.add_argument("--out", required=True, help="store directory to write")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            names = [part.strip() for part in args.layers.split(",") if part.strip()]
            onnx_path, sidecar_path = export_model(args.model, names, args.out)
            print(f"wrote {onnx_path} and {sidecar_path}")
        else:
            manifest = dump_fixtures(args.model, args.images, args.out)
            count = len(manifest.images) * (1 + len(manifest.layer_ids) + 1)
            print(f"dumped {count} tensors for {len(manifest.images)} images into {args.out}")
    except ExportError as exc:
        print(f"fixture-export: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"fixture-export: runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
