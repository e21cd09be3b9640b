#!/usr/bin/env python3
"""Convert an OpenKE-style benchmark directory (entity2id/relation2id/*2id.txt)
into label-based, tab-separated head/relation/tail files."""
import argparse
import pathlib


def load_vocab(path):
    lines = path.read_text().splitlines()[1:]
    vocab = {}
    for line in lines:
        label, idx = line.rsplit("\t", 1) if "\t" in line else line.rsplit(" ", 1)
        vocab[int(idx)] = label
    return vocab


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("src", type=pathlib.Path)
    ap.add_argument("dst", type=pathlib.Path)
    args = ap.parse_args()
    ents = load_vocab(args.src / "entity2id.txt")
    rels = load_vocab(args.src / "relation2id.txt")
    args.dst.mkdir(parents=True, exist_ok=True)
    for split in ("train", "valid", "test"):
        rows = (args.src / f"{split}2id.txt").read_text().split("\n")[1:]
        with open(args.dst / f"{split}.txt", "w") as out:
            for row in rows:
                if not row.strip():
                    continue
                h, t, r = (int(x) for x in row.split())
                out.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")


if __name__ == "__main__":
    main()
