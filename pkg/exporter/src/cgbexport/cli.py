"""Command-line entry points: export, verify, fixtures, parity."""

from __future__ import annotations

import argparse
import json
import sys

from groundkit.bundle import load_bundle

from .convert import export_checkpoint
from .errors import ExportError
from .fixtures import check_parity, emit_parity_fixtures
from .manifest import load_manifest, verify_manifest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgb-export")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="convert a checkpoint to a CGB1 bundle")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None, help="manifest path (default: <out>.manifest.json)")
    p.add_argument("--tokenizer", default=None, help="tokenizer JSON (overrides checkpoint meta)")
    p.add_argument("--model-id", default=None)

    p = sub.add_parser("verify", help="check a bundle against its manifest")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("fixtures", help="emit parity fixtures for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--phrases", nargs="*", default=None)
    p.add_argument("--images", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tokenizer", default=None)

    p = sub.add_parser("parity", help="replay fixtures through the engine and report")
    p.add_argument("--bundle", required=True)
    p.add_argument("--fixtures", required=True)
    p.add_argument("--min-cosine", type=float, default=0.999)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "export":
            manifest = export_checkpoint(
                args.checkpoint, args.out,
                manifest_path=args.manifest, tokenizer_path=args.tokenizer,
                model_id=args.model_id,
            )
            print(f"wrote {args.out}: {manifest['tensor_count']} tensors, arch {manifest['arch']}")
        elif args.command == "verify":
            verify_manifest(args.bundle, load_manifest(args.manifest))
            print("ok")
        elif args.command == "fixtures":
            index = emit_parity_fixtures(
                args.checkpoint, args.out,
                phrases=args.phrases, n_images=args.images, seed=args.seed,
                tokenizer_path=args.tokenizer,
            )
            print(f"wrote {args.out}: {len(index['images'])} images, {len(index['texts'])} texts")
        elif args.command == "parity":
            report = check_parity(load_bundle(args.bundle), args.fixtures)
            print(json.dumps(report, indent=2))
            ok = all(r["cosine"] >= args.min_cosine for r in report["images"])
            ok &= all(
                r["cosine"] >= args.min_cosine and r["ids_match"] for r in report["texts"]
            )
            if not ok:
                print("parity check failed", file=sys.stderr)
                return 1
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
