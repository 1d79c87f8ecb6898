#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Emit src/unicode_ranges.inc: code point ranges for letters (L*), numbers (N*)
and white space, used by the byte-level BPE pre-tokenizer."""
import sys
import unicodedata


def ranges(pred):
    out, start = [], None
    for cp in range(0x110000):
        ok = pred(cp)
        if ok and start is None:
            start = cp
        elif not ok and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def emit(name, rs):
    lines = [f"inline constexpr CodeRange {name}[] = {{"]
    for i in range(0, len(rs), 4):
        lines.append("    " + " ".join(f"{{0x{a:X}, 0x{b:X}}}," for a, b in rs[i:i + 4]))
    lines.append("};")
    return "\n".join(lines)


def main(path):
    cat = lambda cp: unicodedata.category(chr(cp))
    letters = ranges(lambda cp: cat(cp).startswith("L"))
    numbers = ranges(lambda cp: cat(cp).startswith("N"))
    spaces = ranges(lambda cp: chr(cp).isspace())
    with open(path, "w") as f:
        f.write("// SPDX-License-Identifier: Apache-2.0\n")
        f.write(f"// Generated by tools/scripts/gen_unicode_ranges.py (Unicode {unicodedata.unidata_version}).\n\n")
        f.write(emit("kLetterRanges", letters) + "\n\n")
        f.write(emit("kNumberRanges", numbers) + "\n\n")
        f.write(emit("kSpaceRanges", spaces) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
