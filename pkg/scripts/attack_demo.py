"""Leakage of one planted record as k and sigma vary; thin wrapper over the CLI."""

import sys

from dprdm.cli import main

if __name__ == "__main__":
    argv = sys.argv[1:] or ["--output", "attack.csv"]
    sys.exit(main(["attack-demo", *argv]))
