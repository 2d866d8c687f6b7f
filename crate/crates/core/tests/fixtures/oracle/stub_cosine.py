"""Recomputes stub-embedding cosine similarities for the validator fixture.

Written independently of the Rust code: hashed character trigrams of the
lowercased text, count-weighted, into 256 buckets, then plain cosine.

    python3 stub_cosine.py > ../validator_cases.json
"""

import json
import math
import sys

DIM = 256
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data):
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def embed(text):
    chars = list(text.lower())
    grams = ["".join(chars)] if len(chars) < 3 else ["".join(chars[i:i + 3]) for i in range(len(chars) - 2)]
    v = [0.0] * DIM
    for g in grams:
        v[fnv1a64(g.encode("utf-8")) % DIM] += 1.0
    return v


def cosine(a, b):
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    return dot / (na * nb)


REFERENCE = "find the name of every singer whose age is greater than 30."
CANDIDATES = [
    "Find the name of every singer whose age is greater than 30 .",
    "Find the name of each singer whose age is greater than 30 .",
    "Find the names of every singer whose age is greater than 30 ?",
    "What is the name of every singer whose age is greater than 30 ?",
    "Show the name of every singer whose age is greater than 30 .",
    "Find the name of every singer whose age is greater than 40 .",
    "Find the name of every singer whose age is over 30 .",
    "Find the name of every singer older than 30 .",
    "List singers over thirty .",
]


def main():
    ref = embed(REFERENCE)
    cases = [{"question": q, "similarity": cosine(ref, embed(q))} for q in CANDIDATES]
    json.dump({"reference": REFERENCE, "lambda": 0.85, "k": 5, "candidates": cases}, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
