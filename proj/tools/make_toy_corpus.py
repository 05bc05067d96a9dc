#!/usr/bin/env python3
"""Writes data/toy_corpus.smi: 200 small molecules with pairwise distinct scaffolds.

Scaffolds are single rings, fused bicycles, and ring pairs joined directly or
through a one- or two-atom linker. Each molecule gets an optional terminal
substituent on its first atom so the scaffold differs from the molecule.
Output is deterministic.
"""

import argparse
import random
from pathlib import Path

# Ring templates with a free position at the first and the last atom.
RINGS = [
    "c{d}ccccc{d}",     # benzene
    "c{d}ccncc{d}",     # pyridine
    "c{d}cncnc{d}",     # pyrimidine
    "c{d}nccnc{d}",     # pyrazine
    "c{d}ccsc{d}",      # thiophene
    "c{d}ccoc{d}",      # furan
    "c{d}ncsc{d}",      # thiazole
    "c{d}ncoc{d}",      # oxazole
    "C{d}CCCCC{d}",     # cyclohexane
    "C{d}CCNCC{d}",     # piperidine
    "C{d}COCCN{d}",     # morpholine
    "C{d}CNCCN{d}",     # piperazine
    "C{d}CCCC{d}",      # cyclopentane
    "C{d}CCOC{d}",      # oxolane
    "C{d}CC{d}",        # cyclopropane
    "C{d}CCC{d}",       # cyclobutane
    "C{d}CCNC{d}",      # pyrrolidine
    "C{d}CCOCC{d}",     # oxane
]

FUSED = [
    "c1ccc2ccccc2c1",
    "c1ccc2ncccc2c1",
    "c1ccc2cnccc2c1",
    "c1ccc2ncncc2c1",
    "C1Cc2ccccc2C1",
    "C1CCc2ccccc2C1",
    "c1ccc2occc2c1",
    "c1ccc2sccc2c1",
    "c1ccc2ocnc2c1",
    "c1ccc2scnc2c1",
    "C1COc2ccccc2C1",
    "C1Cc2ccccc2N1",
]

LINKERS = ["", "C", "CC", "O", "N"]
SUBSTITUENTS = ["", "", "C", "O", "F", "Cl", "N", "CC", "OC", "Br"]


def scaffolds(rng, count):
    singles = [r.format(d=1) for r in RINGS] + FUSED
    pairs = []
    for i, a in enumerate(RINGS):
        for b in RINGS[i:]:
            for link in LINKERS:
                pairs.append(a.format(d=1) + link + b.format(d=2))
    rng.shuffle(pairs)
    return singles + pairs[: count - len(singles)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "toy_corpus.smi")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    lines = ["# toy corpus: one molecule per line, tab, id"]
    for k, core in enumerate(scaffolds(rng, args.count)):
        lines.append(f"{rng.choice(SUBSTITUENTS)}{core}\ttoy{k:03d}")
    args.out.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
