"""Build a self-contained demo bundle for the prediction service.

Writes a calibration artifact, energy config, class map, taxonomy, and
classifier head for a 10-class synthetic model into the given directory,
ready for `trustgate serve --bundle <dir>` or `trustgate predict`.
"""

from __future__ import annotations

import argparse

from trustgate.fixtures import build_demo_bundle


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("bundle_dir", help="destination directory (created if missing)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    bundle_dir = build_demo_bundle(args.bundle_dir, seed=args.seed)
    print(f"bundle written to {bundle_dir}")
    print(f"try:  trustgate serve --bundle {bundle_dir}")


if __name__ == "__main__":
    main()
