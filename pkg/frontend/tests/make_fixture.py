"""Regenerate the committed fixture run directory from the primary CLI.

Run from the repository root:  python3 frontend/tests/make_fixture.py
"""

import json
import os
import sys

from pseudomode.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "fixtures", "run_mizohata")
CFG = {
    "model": {"builtin": "mizohata"},
    "lambdas": [64.0, 96.0, 128.0],
    "zero_timings": True,
    "eikonal": {"n_pass1": 401, "n_pass2": 301},
    "grid": {"n_t": 65},
}

if __name__ == "__main__":
    cfg_path = os.path.join(HERE, "fixtures", "fixture_config.json")
    os.makedirs(os.path.dirname(cfg_path), exist_ok=True)
    with open(cfg_path, "w") as fh:
        json.dump(CFG, fh, indent=1, sort_keys=True)
    sys.exit(main(["run", "--config", cfg_path, "--out", OUT, "-q"]))
