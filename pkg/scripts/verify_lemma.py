"""Print the MWGS derivative intermediates of the static example and check them."""
import sys

from udsens.cli import main

if __name__ == "__main__":
    sys.exit(main(["verify-lemma", "--out", "results/verify_lemma", *sys.argv[1:]]))
