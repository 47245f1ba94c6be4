#!/usr/bin/env python3
"""Writes a small deterministic English-like corpus for smoke training.

Usage: make_smoke_corpus.py [OUT_DIR] [--bytes N] [--seed S]
Produces OUT_DIR/train.txt, valid.txt and test.txt (90/5/5 split by size).
"""
import argparse
import pathlib
import random

DETERMINERS = ["the", "a", "every", "this", "that", "one", "some", "no"]
ADJECTIVES = ["old", "young", "quiet", "bright", "small", "large", "careful", "tired", "green",
              "distant", "patient", "narrow", "cold", "warm", "strange", "simple", "heavy", "gentle"]
NOUNS = ["river", "village", "teacher", "window", "garden", "letter", "horse", "market", "bridge",
         "farmer", "city", "road", "child", "stone", "lamp", "winter", "forest", "sailor", "clock",
         "house", "mountain", "story", "friend", "door", "field", "song", "boat", "king", "mirror"]
VERBS_T = ["watched", "found", "carried", "opened", "followed", "remembered", "painted", "crossed",
           "built", "heard", "lost", "sold", "visited", "described", "kept", "closed", "answered"]
VERBS_I = ["waited", "slept", "laughed", "arrived", "vanished", "listened", "wandered", "rested",
           "returned", "spoke", "trembled", "smiled", "worked"]
ADVERBS = ["slowly", "quietly", "again", "today", "at last", "once more", "without a word", "early",
           "in the evening", "before dawn", "for a while"]
PREPS = ["near", "behind", "across", "under", "beside", "beyond", "toward", "inside"]
NAMES = ["Anna", "Tomas", "Mira", "Jonah", "Elise", "Oskar", "Lena", "Pavel"]
CONNECT = ["and", "but", "so", "while", "because", "until"]


def noun_phrase(rng):
    words = [rng.choice(DETERMINERS)]
    if rng.random() < 0.5:
        words.append(rng.choice(ADJECTIVES))
    words.append(rng.choice(NOUNS))
    if rng.random() < 0.2:
        words += [rng.choice(PREPS), rng.choice(DETERMINERS), rng.choice(NOUNS)]
    return " ".join(words)


def subject(rng):
    return rng.choice(NAMES) if rng.random() < 0.3 else noun_phrase(rng)


def clause(rng):
    if rng.random() < 0.6:
        parts = [subject(rng), rng.choice(VERBS_T), noun_phrase(rng)]
    else:
        parts = [subject(rng), rng.choice(VERBS_I)]
        if rng.random() < 0.5:
            parts += [rng.choice(PREPS), noun_phrase(rng)]
    if rng.random() < 0.4:
        parts.append(rng.choice(ADVERBS))
    return " ".join(parts)


def sentence(rng):
    text = clause(rng)
    if rng.random() < 0.35:
        text += ", " + rng.choice(CONNECT) + " " + clause(rng)
    text = text[0].upper() + text[1:]
    return text + rng.choice([".", ".", ".", "!", "?"])


def paragraph(rng):
    return " ".join(sentence(rng) for _ in range(rng.randint(3, 7)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="data/charlm_smoke")
    ap.add_argument("--bytes", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    paragraphs, size = [], 0
    while size < args.bytes:
        p = paragraph(rng)
        paragraphs.append(p)
        size += len(p) + 1

    total = len(paragraphs)
    n_train = int(total * 0.9)
    n_valid = int(total * 0.05)
    splits = {
        "train.txt": paragraphs[:n_train],
        "valid.txt": paragraphs[n_train:n_train + n_valid],
        "test.txt": paragraphs[n_train + n_valid:],
    }
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, ps in splits.items():
        (out / name).write_text("\n".join(ps) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
