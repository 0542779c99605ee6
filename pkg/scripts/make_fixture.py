"""Write the small end-to-end fixture corpus and its pipeline config.

    python3 scripts/make_fixture.py /tmp/polymine-fixture
    polymine run --config /tmp/polymine-fixture/config.json
"""

import argparse

from polymine.synthetic import write_pipeline_fixture


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(write_pipeline_fixture(args.dir, seed=args.seed))


if __name__ == "__main__":
    main()
