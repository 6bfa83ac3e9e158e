"""Run the acceptance suite and print one PASS/FAIL line per criterion."""

import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(pytest.main([str(ROOT / "tests" / "test_acceptance.py"), "-q", "-s", "-p", "no:cacheprovider"]))
