"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 extraction or provider error.
"""
from __future__ import annotations

import argparse
import os
import sys

from .embeddings import ProviderConfig, extract_embeddings
from .errors import ExtractorError
from .extract import extract_trace
from .manifest import load_manifest


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mlhub-extract", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("extract", help="pre-test a model over an image tree")
    p.add_argument("--manifest", required=True, help="extraction manifest JSON")
    p.add_argument("--out", required=True, help="trace file to write")

    p = sub.add_parser("embed", help="fetch embeddings for a list of texts")
    p.add_argument("--texts", required=True,
                   help="file with one text per line")
    p.add_argument("--provider", required=True, help="provider model name")
    p.add_argument("--url", required=True, help="provider endpoint")
    p.add_argument("--api-key-env", default=None,
                   help="environment variable holding the API key")
    p.add_argument("--out", required=True, help="embedding file to write")
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--backoff", type=float, default=0.5)
    return parser


def cmd_extract(args: argparse.Namespace) -> int:
    report = extract_trace(load_manifest(args.manifest), args.out)
    print(
        f"wrote {report.out_path}: {report.records} records over "
        f"{len(report.nodes)} nodes, {report.skipped} skipped"
    )
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    try:
        with open(args.texts, "r", encoding="utf-8") as handle:
            texts = [line.rstrip("\n") for line in handle if line.strip()]
    except OSError as exc:
        raise ExtractorError(f"cannot read texts: {exc}") from exc
    api_key = os.environ.get(args.api_key_env) if args.api_key_env else None
    cfg = ProviderConfig(
        name=args.provider,
        url=args.url,
        api_key=api_key,
        max_retries=args.max_retries,
        backoff_seconds=args.backoff,
    )
    report = extract_embeddings(texts, cfg, args.out)
    print(
        f"wrote {report.out_path}: {report.texts} texts, "
        f"dimension {report.dimension}"
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    command = cmd_extract if args.command == "extract" else cmd_embed
    try:
        return command(args)
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
