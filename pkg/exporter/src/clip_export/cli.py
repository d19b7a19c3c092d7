"""Exporter commands.

    clip-export anchors --labels FILE --out DIR [--template STR] [--encoder hashed|clip]
    clip-export corpus  --videos DIR|LISTFILE --captions FILE --out DIR
                        [--frames T] [--encoder hashed|clip] [--split test]
                        [--anchor-labels FILE] [--template STR]

Exit codes: 0 ok, 2 invalid inputs, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .encoders import make_encoder
from .errors import ExportError
from .export import DEFAULT_TEMPLATE, ExportJob, export_anchors, export_corpus


def read_labels(path: str | Path) -> list[str]:
    lines = Path(path).read_text().splitlines()
    return [ln.strip() for ln in lines if ln.strip()]


def collect_videos(source: str) -> list[Path]:
    """A directory (scanned, sorted) or a text file listing one path per line."""
    p = Path(source)
    if p.is_dir():
        entries = sorted(p.iterdir())
        return [e for e in entries if e.is_dir() or e.suffix]
    if p.is_file():
        return [Path(line.strip()) for line in p.read_text().splitlines() if line.strip()]
    raise FileNotFoundError(f"{source} is neither a directory nor a list file")


def cmd_anchors(args: argparse.Namespace) -> int:
    labels = read_labels(args.labels)
    encoder = make_encoder(args.encoder, dim=args.dim)
    manifest = export_anchors(labels, args.template, encoder, args.out)
    print(json.dumps({"manifest": str(manifest), "anchors": len(labels)}))
    return 0


def cmd_corpus(args: argparse.Namespace) -> int:
    captions = json.loads(Path(args.captions).read_text())
    if not isinstance(captions, dict):
        raise ExportError("captions file must map id -> caption")
    job = ExportJob(
        videos=collect_videos(args.videos),
        captions=captions,
        frames=args.frames,
        out_dir=Path(args.out),
        anchor_labels=read_labels(args.anchor_labels) if args.anchor_labels else None,
        template=args.template,
        split=args.split,
    )
    encoder = make_encoder(args.encoder, dim=args.dim)
    manifest = export_corpus(job, encoder)
    print(json.dumps({
        "manifest": str(manifest),
        "clips": len(json.loads(manifest.read_text())["ids"]),
        "skipped": job.skipped,
    }))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clip-export", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("anchors", help="encode label prompts into an anchor store")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--template", default=DEFAULT_TEMPLATE)
    p.add_argument("--encoder", default="clip", choices=["hashed", "clip"])
    p.add_argument("--dim", type=int, default=512)
    p.set_defaults(fn=cmd_anchors)

    p = sub.add_parser("corpus", help="encode videos and captions into paired stores")
    p.add_argument("--videos", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--encoder", default="clip", choices=["hashed", "clip"])
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--anchor-labels", default=None)
    p.add_argument("--template", default=DEFAULT_TEMPLATE)
    p.set_defaults(fn=cmd_corpus)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
