#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Write tests/data/tokenizer_reference.json using the HuggingFace `tokenizers`
byte-level BPE implementation as an independent reference."""
import json
import sys

from tokenizers import ByteLevelBPETokenizer

SENTENCES = [
    "hello world",
    "Hello world",
    "Sensor data values are provided in the following order: proximity, red, green, and blue light intensity values.",
    "Proximity: [2, 10, 23]\nRed: [244, 243, 20]\nBlue: [255, 255, 255]\nGreen: [200, 201, 45]",
    "### Instruction:\nDetermine the gesture.\n\n### Response:\nDouble Tap",
    "It's 42°C — naïve café, don't we'll they've I'm 🙂  done   \n\n",
]


def main(assets, out):
    tok = ByteLevelBPETokenizer(f"{assets}/vocab.json", f"{assets}/merges.txt")
    cases = [{"text": s, "ids": tok.encode(s).ids} for s in SENTENCES]
    with open(out, "w", encoding="utf-8") as f:
        json.dump({"generator": "huggingface tokenizers ByteLevelBPETokenizer", "cases": cases}, f,
                  ensure_ascii=False, indent=1)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
