"""Independent reference for ingestion, tokenization and corpus statistics.

Reads documents.txt and vocab.txt, writes golden.jsonl (ingest output at the
default 512-char limit), stats.json and hist_{chars,words,tokens}.csv
(bin width 8).
"""
import json
import math
import string
import unicodedata

MAX_CHARS = 512
BIN_WIDTH = 8
ABBREVIATIONS = {"Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.", "No.", "vs.", "etc.", "e.g.", "i.e."}
CLOSING = set("\"')]}”’»")
OPENING = set("\"'([{“‘«")
PUNCT_RANGES = [
    (0x2010, 0x2027), (0x2030, 0x2043), (0x2045, 0x2051), (0x2053, 0x205E), (0x3001, 0x3003),
    (0x3008, 0x3011), (0x3014, 0x301F), (0xFF01, 0xFF03), (0xFF05, 0xFF0A), (0xFF0C, 0xFF0F),
]
PUNCT_SINGLES = {0x00A1, 0x00A7, 0x00AB, 0x00B6, 0x00B7, 0x00BB, 0x00BF, 0x037E, 0x0387, 0xFF1A, 0xFF1B, 0xFF1F, 0xFF20}


def is_punct(c):
    if ord(c) < 128:
        return c in string.punctuation
    o = ord(c)
    return o in PUNCT_SINGLES or any(a <= o <= b for a, b in PUNCT_RANGES)


def count_words(text):
    n = 0
    for chunk in text.split():
        prev = None
        for c in chunk:
            p = is_punct(c)
            if p != prev:
                n += 1
                prev = p
    return n


def is_abbrev(word):
    core = word.lstrip("".join(OPENING))
    if core in ABBREVIATIONS:
        return True
    return len(core) == 2 and core[1] == "." and core[0].isupper()


def boundary(word, nxt):
    core = word.rstrip("".join(CLOSING))
    if not core or core[-1] not in ".?!":
        return False
    f = nxt[0]
    if not (f.isupper() or f in "0123456789" or f in OPENING):
        return False
    return not (core[-1] == "." and is_abbrev(core))


def split_sentences(doc):
    words = doc.split()
    out, start = [], 0
    for i, w in enumerate(words):
        if i + 1 == len(words) or boundary(w, words[i + 1]):
            out.append(" ".join(words[start:i + 1]))
            start = i + 1
    return out


def documents(text):
    docs, cur = [], []
    for line in text.split("\n"):
        if line.strip() == "":
            if cur:
                docs.append("\n".join(cur))
                cur = []
        else:
            cur.append(line)
    if cur:
        docs.append("\n".join(cur))
    return docs


def ingest(text, max_chars=MAX_CHARS):
    records = []
    for doc_id, doc in enumerate(documents(text)):
        for s in split_sentences(doc):
            if len(s) < max_chars:
                records.append({
                    "text": s, "char_len": len(s), "word_len": count_words(s),
                    "token_len": 0, "doc_id": doc_id, "split": "unassigned",
                })
    return records


def normalize(text):
    out = []
    for c in unicodedata.normalize("NFD", text.lower()):
        cat = unicodedata.category(c)
        if c.isspace():
            out.append(" ")
        elif cat == "Cc" or cat.startswith("M") or c == "�":
            continue
        else:
            out.append(c)
    return " ".join("".join(out).split())


def split_words(norm):
    words = []
    for chunk in norm.split():
        cur = ""
        for c in chunk:
            if is_punct(c):
                if cur:
                    words.append(cur)
                words.append(c)
                cur = ""
            else:
                cur += c
        if cur:
            words.append(cur)
    return words


def wordpiece(word, vocab):
    if len(word) > 100:
        return ["[UNK]"]
    pieces, start = [], 0
    while start < len(word):
        end = len(word)
        while end > start:
            p = word[start:end] if start == 0 else "##" + word[start:end]
            if p in vocab:
                break
            end -= 1
        if end == start:
            return ["[UNK]"]
        pieces.append(p)
        start = end
    return pieces


def tokens(text, vocab):
    return [p for w in split_words(normalize(text)) for p in wordpiece(w, vocab)]


def nearest_rank(sorted_vals, p):
    n = len(sorted_vals)
    rank = max(1, min(n, math.ceil(p / 100 * n - 1e-9)))
    return sorted_vals[rank - 1]


def summary(vals):
    s = sorted(vals)
    n = len(s)
    mean = sum(s) / n
    var = sum((v - mean) ** 2 for v in s) / n
    q = lambda p: float(nearest_rank(s, p))
    return {
        "mean": mean, "stddev": math.sqrt(var), "median": q(50), "q25": q(25), "q75": q(75),
        "iqr": q(75) - q(25), "q95": q(95), "q99": q(99),
    }


def histogram(vals, width):
    counts = [0] * (max(vals) // width + 1)
    for v in vals:
        counts[v // width] += 1
    return "bin_start,count\n" + "".join(f"{i * width},{c}\n" for i, c in enumerate(counts))


def main():
    text = open("documents.txt", encoding="utf-8").read()
    vocab = set(open("vocab.txt", encoding="utf-8").read().split("\n")) - {""}
    records = ingest(text)
    assert len(records) == 1000, len(records)
    with open("golden.jsonl", "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n")

    chars = [r["char_len"] for r in records]
    words = [r["word_len"] for r in records]
    toks = [len(tokens(r["text"], vocab)) for r in records]
    nc, nw, nt = sum(chars), sum(words), sum(toks)
    stats = {
        "n_documents": len({r["doc_id"] for r in records}),
        "n_sentences": len(records),
        "n_characters": nc, "n_words": nw, "n_tokens": nt,
        "chars_per_word": nc / nw, "chars_per_token": nc / nt, "tokens_per_word": nt / nw,
        "chars": summary(chars), "words": summary(words), "tokens": summary(toks),
    }
    with open("stats.json", "w", encoding="utf-8") as f:
        json.dump(stats, f, indent=2)
        f.write("\n")
    for name, vals in (("chars", chars), ("words", words), ("tokens", toks)):
        with open(f"hist_{name}.csv", "w", encoding="utf-8") as f:
            f.write(histogram(vals, BIN_WIDTH))


if __name__ == "__main__":
    main()
