#!/usr/bin/env python3
"""Dump the default experiment configuration as JSON, ready for the CLI.

Usage: python scripts/write_default_config.py [out.json]
"""

import json
import sys

from safempc.harness import ExperimentConfig

out = sys.argv[1] if len(sys.argv) > 1 else "config.json"
with open(out, "w") as fh:
    json.dump(ExperimentConfig().to_dict(), fh, indent=2)
print(f"wrote {out}")
