#!/usr/bin/env python3
"""Re-run every fixture under tests/fixtures and rewrite its golden block"""

import argparse
import json
import tempfile
from pathlib import Path

from app import cmd_beam, cmd_check_regularization, cmd_solve
from utils import config

FIXTURE_DIR = Path(__file__).parent / "tests" / "fixtures"
RESIDUAL_KEYS = ("piecewise_sup", "delta_norm")


def golden_for(path: Path, doc: dict) -> dict:
    with tempfile.TemporaryDirectory() as out:
        if "triples" in doc:
            report = cmd_check_regularization(path, out)
            return {"exit_code": report.exit_code, "labels": list(report.details)}
        if "n" in doc:
            report = cmd_solve(path, out)
        else:
            report = cmd_beam(path, out)
    golden = {
        "exit_code": report.exit_code,
        "existence": report.existence,
        "classifications": [sys["classification"] for sys in report.interfaces],
        "residual_bound": config.RESIDUAL_TOL,
    }
    residuals = report.residuals
    if "beam" in report.details:
        golden["classifications"] = [sys["classification"] for sys in report.details["beam"]["interfaces"]]
        golden["constants"] = report.details["beam"]["closed_form"]
        residuals = report.details["beam"]["residuals"]
    if residuals:
        golden["residuals"] = {key: residuals[key] for key in RESIDUAL_KEYS}
    return golden


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description="Rewrite fixture golden blocks from fresh runs.")
    p.add_argument("names", nargs="*", help="fixture file names (default: all)")
    args = p.parse_args(argv)

    paths = [FIXTURE_DIR / name for name in args.names] or sorted(FIXTURE_DIR.glob("*.json"))
    for path in paths:
        doc = json.loads(path.read_text(encoding="utf-8"))
        try:
            doc["golden"] = golden_for(path, doc)
        except Exception as e:
            print(f"Error updating {path.name}: {e}")
            return 1
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        print(f"Updated {path.name}: exit {doc['golden']['exit_code']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
