"""Regenerate the bundled letter and bigram frequency tables.

Reads the word-frequency lists shipped inside a wordfreq wheel (or an
unpacked ``wordfreq/data`` directory) and writes
``src/dnscovert/data/{english,italian}_{mono,bi}.tsv``.  Needs ``msgpack``.

    python scripts/build_language_profiles.py wordfreq-3.1.1-py3-none-any.whl
"""

import argparse
import gzip
import sys
import unicodedata
import zipfile
from collections import Counter
from pathlib import Path

import msgpack

LANGS = {"english": "en", "italian": "it"}
OUT = Path(__file__).resolve().parent.parent / "src" / "dnscovert" / "data"


def read_cbpack(raw: bytes):
    data = msgpack.unpackb(gzip.decompress(raw), raw=False)
    header, buckets = data[0], data[1:]
    if header.get("format") != "cB":
        raise ValueError("unexpected wordlist format")
    for i, words in enumerate(buckets):
        freq = 10 ** (-i / 100)
        for w in words:
            yield w, freq


def ascii_fold(word: str) -> str:
    s = unicodedata.normalize("NFKD", word.lower())
    return "".join(c for c in s if "a" <= c <= "z" or c == " ")


def profile(pairs, n_words):
    mono, bi = Counter(), Counter()
    for k, (word, freq) in enumerate(pairs):
        if k >= n_words:
            break
        for token in ascii_fold(word).split():
            for c in token:
                mono[c] += freq
            for i in range(len(token) - 1):
                bi[token[i:i + 2]] += freq
    return mono, bi


def write_tsv(path, counts, header):
    total = sum(counts.values())
    rows = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header)
        for sym, c in rows:
            fh.write(f"{sym}\t{c / total:.8f}\n")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", help="wordfreq wheel or its data directory")
    ap.add_argument("--words", type=int, default=50000, help="most frequent words to use")
    args = ap.parse_args(argv)

    src = Path(args.source)
    for lang, code in LANGS.items():
        name = f"large_{code}.msgpack.gz"
        if src.suffix == ".whl":
            raw = zipfile.ZipFile(src).read(f"wordfreq/data/{name}")
        else:
            raw = (src / name).read_bytes()
        mono, bi = profile(read_cbpack(raw), args.words)
        header = (
            f"# {lang} {{kind}} frequencies: top {args.words} words of the wordfreq '{code}' list,\n"
            "# weighted by word frequency, accents folded to ASCII.\n"
        )
        write_tsv(OUT / f"{lang}_mono.tsv", mono, header.format(kind="letter"))
        write_tsv(OUT / f"{lang}_bi.tsv", bi, header.format(kind="bigram"))
        print(lang, "letters:", "".join(k for k, _ in mono.most_common(10)),
              "bigrams:", " ".join(k for k, _ in bi.most_common(10)), file=sys.stderr)


if __name__ == "__main__":
    main()
