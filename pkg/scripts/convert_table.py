#!/usr/bin/env python3
"""Convert a CSV/TSV dataset dump into the instance JSONL format.

Public NLI explanation dumps keep one instance per row with the hypothesis
and each explanation sentence in its own column.  This script maps named
columns onto the fields the `nlproof` commands expect:

    python3 scripts/convert_table.py dump.csv instances.jsonl \
        --id-column pair_id \
        --hypothesis-column hypothesis \
        --explanation-columns explanation_1,explanation_2,explanation_3 \
        --premise-columns premise \
        --dataset esnli

Empty cells in premise or explanation columns are skipped.  Rows without a
hypothesis or without any explanation text are dropped with a warning on
stderr, since the pipeline cannot do anything with them.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path


def split_columns(raw: str) -> list[str]:
    columns = [name.strip() for name in raw.split(",") if name.strip()]
    if not columns:
        raise argparse.ArgumentTypeError("expected a comma-separated column list")
    return columns


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("input", help="CSV or TSV file with a header row")
    parser.add_argument("output", help="instance JSONL file to write")
    parser.add_argument("--id-column", required=True)
    parser.add_argument("--hypothesis-column", required=True)
    parser.add_argument(
        "--explanation-columns",
        required=True,
        type=split_columns,
        help="comma-separated column names holding explanation sentences",
    )
    parser.add_argument(
        "--premise-columns",
        type=split_columns,
        default=[],
        help="comma-separated column names holding premise sentences",
    )
    parser.add_argument(
        "--dataset", help="optional dataset tag written as the file header line"
    )
    parser.add_argument(
        "--delimiter",
        help="field delimiter (default: tab for .tsv files, comma otherwise)",
    )
    return parser


def cells(row: dict, columns: list[str], line_no: int) -> list[str]:
    values = []
    for column in columns:
        if column not in row:
            raise KeyError(f"row {line_no} has no column {column!r}")
        value = (row[column] or "").strip()
        if value:
            values.append(value)
    return values


def convert(args: argparse.Namespace) -> int:
    path = Path(args.input)
    delimiter = args.delimiter or ("\t" if path.suffix.lower() == ".tsv" else ",")
    written = 0
    skipped = 0
    with open(path, newline="", encoding="utf-8") as source, open(
        args.output, "w", encoding="utf-8"
    ) as target:
        if args.dataset:
            target.write(json.dumps({"dataset": args.dataset}) + "\n")
        reader = csv.DictReader(source, delimiter=delimiter)
        for line_no, row in enumerate(reader, 2):
            instance_id = (row.get(args.id_column) or "").strip()
            hypothesis = (row.get(args.hypothesis_column) or "").strip()
            explanations = cells(row, args.explanation_columns, line_no)
            if not instance_id or not hypothesis or not explanations:
                skipped += 1
                print(
                    f"skipping row {line_no}: missing id, hypothesis, or explanations",
                    file=sys.stderr,
                )
                continue
            record = {
                "id": instance_id,
                "premises": cells(row, args.premise_columns, line_no),
                "hypothesis": hypothesis,
                "explanations": explanations,
            }
            target.write(json.dumps(record, ensure_ascii=False) + "\n")
            written += 1
    print(f"wrote {written} instances ({skipped} rows skipped)", file=sys.stderr)
    return 0 if written else 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return convert(args)
    except (OSError, KeyError, csv.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
