#!/usr/bin/env python3
"""Rebuild the files under data/ from upstream package archives.

Nothing here downloads on its own; fetch the archives first:

    pip download --no-deps -d dl word-piece-tokenizer==1.0.1 movie-reviews==0.0.2 nlpaug==1.1.11
    python3 tools/prepare_data.py dl data

Outputs:
    vocab/bert-base-uncased.txt   the published uncased WordPiece vocabulary (30522 lines)
    rt/{train,dev,test}.tsv       Rotten Tomatoes sentence polarity, 6920/872/738 split
    misspellings_en.txt           "misspelling->correct" lines from the natural-noise list
"""
import glob
import hashlib
import io
import os
import random
import sys
import zipfile

import pandas as pd

VOCAB_SHA256 = "07eced375cec144d27c900241f3e339478dec958f92fddbc551f295c992038a3"
SPLIT_SEED = 2020
TRAIN, DEV = 6920, 872


def wheel(dl, prefix):
    hits = sorted(glob.glob(os.path.join(dl, prefix + "-*.whl")))
    if not hits:
        sys.exit(f"missing {prefix} wheel in {dl}")
    return zipfile.ZipFile(hits[-1])


def main(dl, out):
    os.makedirs(os.path.join(out, "vocab"), exist_ok=True)
    os.makedirs(os.path.join(out, "rt"), exist_ok=True)

    vocab = wheel(dl, "word_piece_tokenizer").read("word_piece_tokenizer/vocab.txt")
    if hashlib.sha256(vocab).hexdigest() != VOCAB_SHA256:
        sys.exit("vocab checksum mismatch")
    with open(os.path.join(out, "vocab", "bert-base-uncased.txt"), "wb") as f:
        f.write(vocab)

    raw = wheel(dl, "movie_reviews").read("movie_reviews/data/combined_movie_reviews.csv")
    df = pd.read_csv(io.BytesIO(raw))
    rows = [(t.strip(), int(l)) for t, l in df[df.source == "rotten_tomatoes"][["text", "label"]].values]
    random.Random(SPLIT_SEED).shuffle(rows)
    splits = {"train": rows[:TRAIN], "dev": rows[TRAIN:TRAIN + DEV], "test": rows[TRAIN + DEV:]}
    for name, part in splits.items():
        with open(os.path.join(out, "rt", name + ".tsv"), "w", encoding="utf-8", newline="\n") as f:
            for text, label in part:
                f.write(f"{text}\t{label}\n")

    noise = wheel(dl, "nlpaug").read("nlpaug/res/word/spelling/spelling_en.txt").decode("utf-8")
    with open(os.path.join(out, "misspellings_en.txt"), "w", encoding="utf-8", newline="\n") as f:
        for line in noise.splitlines():
            parts = line.split(" ")
            if len(parts) < 2 or not parts[0]:
                continue
            for variant in parts[1:]:
                if variant:
                    f.write(f"{variant}->{parts[0]}\n")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
