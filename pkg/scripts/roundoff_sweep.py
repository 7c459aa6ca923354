"""Monte Carlo estimation sweep over the conditioning knob delta.

Pass ``--full-scale`` for 250 replications (about 10 minutes on one core).
"""
import sys

from udsens.cli import main

if __name__ == "__main__":
    sys.exit(main(["monte-carlo", "--out", "results/roundoff_sweep", *sys.argv[1:]]))
