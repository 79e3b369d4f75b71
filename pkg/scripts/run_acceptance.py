"""Run the acceptance suite and print one verdict line per criterion.

    python3 scripts/run_acceptance.py            # all eight criteria (several minutes)
    python3 scripts/run_acceptance.py --fast     # skip the Monte Carlo criteria 4 to 7
"""
import argparse
import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--fast", action="store_true", help="skip tests marked slow")
    args = parser.parse_args()
    argv = [str(ROOT / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider"]
    if args.fast:
        argv += ["-m", "not slow"]
    return int(pytest.main(argv))


if __name__ == "__main__":
    sys.exit(main())
