"""Likelihood and gradient scan over gamma1 for the INS error model.

Writes results/ins_scan/scan.csv and a gnuplot script; ``gnuplot -p scan.gp``
inside that directory draws both panels.
"""
import sys

from udsens.cli import main

if __name__ == "__main__":
    sys.exit(main(["scan", "--out", "results/ins_scan", *sys.argv[1:]]))
