#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the bundled pipeline fixtures under fixtures/.

Synthetic gesture data: a raw sensor CSV for the prepare stage, a plain-text
corpus of instruction-style documents with random labels (pretraining only
ever sees the layout, never the fine-tune answers) and 21 balanced
fine-tune records.
"""

import argparse
import csv
import json
import pathlib
import random

LABELS = ["Tap", "Double Tap", "Hold"]
INSTRUCTION = "Determine the hand gesture. Answer Tap, Double Tap, or Hold."
CHANNELS = ["Proximity"]


def gesture_input(rng):
    return " ".join(
        f"{name}: [{', '.join(str(rng.randrange(100)) for _ in range(6))}]" for name in CHANNELS
    )


def write_csv(path, rng, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["timestamp", "Proximity", "Red", "Green", "Blue"])
        prox, colors = 40.0, [300.0, 500.0, 200.0]
        for i in range(rows):
            prox = min(255.0, max(0.0, prox + rng.gauss(0, 12)))
            colors = [min(1023.0, max(0.0, c + rng.gauss(0, 30))) for c in colors]
            w.writerow([f"{i * 0.05:.2f}", f"{prox:.1f}"] + [f"{c:.1f}" for c in colors])


def write_corpus(path, rng, docs):
    # same record layout as the fine-tune set, labels drawn at random
    with open(path, "w") as f:
        for _ in range(docs):
            rec = {"instruction": INSTRUCTION, "input": gesture_input(rng), "output": rng.choice(LABELS)}
            f.write(json.dumps(rec) + "\n")


def write_records(path, rng, n):
    with open(path, "w") as f:
        for i in range(n):
            rec = {"instruction": INSTRUCTION, "input": gesture_input(rng), "output": LABELS[i % 3]}
            f.write(json.dumps(rec) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parents[2] / "fixtures"))
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)
    write_csv(out / "sensors.csv", rng, 1800)
    write_corpus(out / "instructions.jsonl", rng, 900)
    write_records(out / "gesture_records.jsonl", rng, 21)


if __name__ == "__main__":
    main()
