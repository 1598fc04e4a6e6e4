#!/usr/bin/env python3
"""Export pretrained backbone weights to a PZTA tensor archive.

Usage:
    export.py --model squeezenet --out squeezenet.pzta [--manifest manifest.json]
"""

import argparse
import sys

from pztaexport import MODELS, ExportError, export


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", required=True, choices=MODELS)
    parser.add_argument("--out", required=True, help="output .pzta path")
    parser.add_argument("--manifest", help="optional manifest JSON path")
    args = parser.parse_args(argv)

    try:
        manifest = export(args.model, args.out, manifest_path=args.manifest)
    except ExportError as e:
        print(e, file=sys.stderr)
        return 2
    source = "zoo weights" if manifest["pretrained"] else \
        "seeded fallback initialization (zoo unreachable)"
    print(f"wrote {args.out}: {len(manifest['parameters'])} tensors "
          f"({args.model}, {source})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
