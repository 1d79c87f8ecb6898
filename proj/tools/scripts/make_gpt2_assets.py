#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Rebuild assets/vocab.json and assets/merges.txt from a GPT-2 rank table.

The input is the `gpt2.tiktoken` file (base64 token bytes, rank per line)
shipped with several open-source speech/text packages. Ranks equal GPT-2 ids.
Merge rules are recovered by re-running BPE on each token's bytes restricted
to lower ranks; the last step must join exactly two parts.
"""
import base64
import json
import sys


def bytes_to_unicode():
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + \
        list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, map(chr, cs)))


def split_by_lower_ranks(ranks, token, max_rank):
    parts = [bytes([b]) for b in token]
    while True:
        best = None
        for i in range(len(parts) - 1):
            r = ranks.get(parts[i] + parts[i + 1])
            if r is not None and r < max_rank and (best is None or r < best[0]):
                best = (r, i)
        if best is None:
            return parts
        i = best[1]
        parts = parts[:i] + [parts[i] + parts[i + 1]] + parts[i + 2:]


def main(src, out_dir):
    ranks = {}
    with open(src, "rb") as f:
        for line in f:
            if not line.strip():
                continue
            tok, rank = line.split()
            ranks[base64.b64decode(tok)] = int(rank)
    enc = bytes_to_unicode()
    to_str = lambda b: "".join(enc[x] for x in b)
    vocab = {to_str(tok): rank for tok, rank in ranks.items()}
    vocab["<|endoftext|>"] = len(ranks)
    merges = []
    for tok, rank in sorted(ranks.items(), key=lambda kv: kv[1]):
        if len(tok) == 1:
            continue
        parts = split_by_lower_ranks(ranks, tok, rank)
        assert len(parts) == 2, (tok, parts)
        merges.append(to_str(parts[0]) + " " + to_str(parts[1]))
    with open(f"{out_dir}/vocab.json", "w", encoding="utf-8") as f:
        json.dump(vocab, f, ensure_ascii=False)
    with open(f"{out_dir}/merges.txt", "w", encoding="utf-8") as f:
        f.write("#version: 0.2\n")
        f.write("\n".join(merges) + "\n")
    print(f"vocab={len(vocab)} merges={len(merges)}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
