#!/usr/bin/env python3
"""Regenerates core/src/unicode_tables.inc.

The GPT-2 pre-tokenizer pattern is evaluated by the `regex` package, so the
character classes are taken from that package rather than `unicodedata`.
"""

import sys

import regex

CLASSES = {
    "kLetterRanges": regex.compile(r"\p{L}"),
    "kNumberRanges": regex.compile(r"\p{N}"),
    "kSpaceRanges": regex.compile(r"\s"),
}


def ranges(pattern):
    out = []
    start = None
    for cp in range(0x110000):
        hit = bool(pattern.match(chr(cp)))
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def main():
    lines = [
        "// Generated by tools/scripts/gen_unicode_tables.py; do not edit.",
        f"// regex {regex.__version__}",
        "",
    ]
    for name, pattern in CLASSES.items():
        rs = ranges(pattern)
        lines.append(f"inline constexpr CodepointRange {name}[] = {{")
        for lo, hi in rs:
            lines.append(f"    {{0x{lo:X}, 0x{hi:X}}},")
        lines.append("};")
        lines.append("")
    sys.stdout.write("\n".join(lines))


if __name__ == "__main__":
    main()
