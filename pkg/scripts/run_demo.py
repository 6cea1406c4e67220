"""Full synthetic run (corpus, library, samples, metrics) with timing.

    python3 scripts/run_demo.py --out /tmp/flowpalm_demo --seed 0
"""

import argparse
import json
import logging
import time

from flowpalm.config import load_config
from flowpalm.pipeline import cmd_demo


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="flowpalm_demo")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = load_config(args.config)
    config.seed = args.seed
    start = time.perf_counter()
    result = cmd_demo(config.validate(), args.out, force=True)
    print(json.dumps(result, indent=2))
    print(f"finished in {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
