"""Byte-level BPE tokenizer.

The base alphabet is always the 256 byte values (ids 0..255), so any byte
sequence round-trips losslessly, including invalid UTF-8.  Optional special
tokens sit right after the base alphabet; learned merge tokens follow.

Training greedily merges the highest-frequency adjacent pair.  Ties break
deterministically: lexicographically smallest left token bytes, then right.
By default text is split on Unicode whitespace runs before counting, so no
merge ever crosses a word/whitespace boundary; ``word_split=False`` lifts
that restriction.

Encoding applies merges in creation order (lowest rank first, left to
right).  For word-split models this is done per whitespace chunk with a
cache, which provably matches whole-text application because no learned
merge spans a chunk boundary.
"""

from __future__ import annotations

import json
import re
from collections import Counter

_CHUNK_RE = re.compile(r"\s+|\S+")
TOKENIZER_VERSION = 1


def _to_bytes(text) -> bytes:
    return text.encode("utf-8") if isinstance(text, str) else bytes(text)


def _chunks(data: bytes) -> list[bytes]:
    """Partition bytes into alternating whitespace / non-whitespace runs.

    surrogateescape makes the str round trip lossless for arbitrary bytes,
    and escape surrogates never count as whitespace.
    """
    s = data.decode("utf-8", errors="surrogateescape")
    return [c.encode("utf-8", errors="surrogateescape") for c in _CHUNK_RE.findall(s)]


class TokenizerModel:
    """A trained (or hand-built) tokenizer: vocab table plus merge rules."""

    def __init__(self, vocab: list[bytes], merges: list[tuple[int, int]],
                 specials: dict[str, int], word_split: bool = True):
        self.vocab = list(vocab)
        self.merges = [tuple(m) for m in merges]
        self.specials = dict(specials)
        self.word_split = bool(word_split)
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._cache: dict[bytes, list[int]] = {}
        self._validate()

    def _validate(self):
        n_special = len(self.specials)
        expect = 256 + n_special + len(self.merges)
        if len(self.vocab) != expect:
            raise ValueError(
                f"vocab has {len(self.vocab)} entries, expected {expect} "
                f"(256 bytes + {n_special} specials + {len(self.merges)} merges)")
        for i in range(256):
            if self.vocab[i] != bytes([i]):
                raise ValueError(f"base alphabet corrupted at id {i}")
        special_ids = sorted(self.specials.values())
        if special_ids != list(range(256, 256 + n_special)):
            raise ValueError("special token ids must be 256..256+n_specials-1")
        merge_base = 256 + n_special
        for k, (l, r) in enumerate(self.merges):
            new_id = merge_base + k
            if not (0 <= l < new_id and 0 <= r < new_id):
                raise ValueError(f"merge {k} references undefined token ids ({l}, {r})")
            if self.vocab[new_id] != self.vocab[l] + self.vocab[r]:
                raise ValueError(f"merge {k} bytes do not match its vocab entry")

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    # -- encode / decode ---------------------------------------------------

    def _bpe(self, bs: bytes) -> list[int]:
        ids = list(bs)
        while len(ids) >= 2:
            best_rank, best_pair = None, None
            for pair in zip(ids, ids[1:]):
                r = self.ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank, best_pair = r, pair
            if best_pair is None:
                break
            new_id = 256 + len(self.specials) + best_rank
            out, i = [], 0
            while i < len(ids):
                if i + 1 < len(ids) and ids[i] == best_pair[0] and ids[i + 1] == best_pair[1]:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(ids[i])
                    i += 1
            ids = out
        return ids

    def encode(self, text) -> list[int]:
        """Byte sequence (or str, taken as UTF-8) to token ids.

        Deterministic; never emits special tokens; lossless under decode.
        """
        data = _to_bytes(text)
        if not data:
            return []
        if not self.word_split:
            return self._bpe(data)
        out = []
        for chunk in _chunks(data):
            got = self._cache.get(chunk)
            if got is None:
                got = self._bpe(chunk)
                if len(self._cache) < 1_000_000:
                    self._cache[chunk] = got
            out.extend(got)
        return out

    def decode(self, ids) -> bytes:
        """Token ids back to bytes.  Unknown ids raise ValueError."""
        parts = []
        for i in ids:
            if not (0 <= i < len(self.vocab)):
                raise ValueError(f"token id {i} outside vocab of size {len(self.vocab)}")
            parts.append(self.vocab[i])
        return b"".join(parts)

    # -- persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": TOKENIZER_VERSION,
            "word_split": self.word_split,
            "specials": self.specials,
            "vocab": {str(i): b.hex() for i, b in enumerate(self.vocab)},
            "merges": [list(m) for m in self.merges],
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=1)
            f.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "TokenizerModel":
        if d.get("version") != TOKENIZER_VERSION:
            raise ValueError(f"unsupported tokenizer version {d.get('version')}")
        vocab_map = d["vocab"]
        vocab = []
        for i in range(len(vocab_map)):
            hexed = vocab_map.get(str(i))
            if hexed is None:
                raise ValueError(f"vocab ids are not dense: missing id {i}")
            vocab.append(bytes.fromhex(hexed))
        return cls(vocab, [tuple(m) for m in d["merges"]], d["specials"],
                   word_split=d.get("word_split", False))

    @classmethod
    def load(cls, path) -> "TokenizerModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _initial_words(corpus, word_split: bool) -> Counter:
    """Count occurrences of each training unit (whitespace chunk or whole
    document) as a tuple of byte ids."""
    counts: Counter = Counter()
    for doc in corpus:
        data = _to_bytes(doc)
        if not data:
            continue
        if word_split:
            for chunk in _chunks(data):
                counts[chunk] += 1
        else:
            counts[data] += 1
    return Counter({tuple(k): v for k, v in counts.items()})


def _merge_word(syms: tuple, pair: tuple, new_id: int) -> tuple:
    out, i = [], 0
    n = len(syms)
    while i < n:
        if i + 1 < n and syms[i] == pair[0] and syms[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


def _pick_best(pair_counts: dict, vocab: list) -> tuple:
    """Highest count; ties by smallest left bytes, then right bytes, then ids."""
    best_count = max(pair_counts.values())
    cands = [p for p, c in pair_counts.items() if c == best_count]
    return min(cands, key=lambda p: (vocab[p[0]], vocab[p[1]], p))


def train_bbpe(corpus, vocab_size: int, specials=(), word_split: bool = True) -> TokenizerModel:
    """Learn a byte-level BPE tokenizer.

    corpus: iterable of str or bytes documents.
    vocab_size: total target size including the 256-byte base alphabet and
    any specials.  Training stops early only when no adjacent pair is left
    to merge.  Growing vocab_size extends the merge list of a smaller run
    on the same corpus (the tie-break is deterministic, so the greedy
    sequence is a prefix).
    """
    specials = list(specials)
    if vocab_size < 256 + len(specials):
        raise ValueError(
            f"vocab_size {vocab_size} cannot hold 256 bytes + {len(specials)} specials")
    if len(set(specials)) != len(specials):
        raise ValueError("duplicate special token names")

    vocab = [bytes([i]) for i in range(256)]
    special_map = {}
    for j, name in enumerate(specials):
        special_map[name] = 256 + j
        vocab.append(name.encode("utf-8"))

    word_counts = _initial_words(corpus, word_split)
    words = [list(w) for w in word_counts]
    wfreq = [word_counts[tuple(w)] for w in words]

    pair_counts: dict = {}
    pair_words: dict = {}
    for wi, syms in enumerate(words):
        c = wfreq[wi]
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] = pair_counts.get(pair, 0) + c
            pair_words.setdefault(pair, set()).add(wi)

    merges: list[tuple[int, int]] = []
    while len(vocab) < vocab_size and pair_counts:
        best = _pick_best(pair_counts, vocab)
        new_id = len(vocab)
        vocab.append(vocab[best[0]] + vocab[best[1]])
        merges.append(best)
        touched = sorted(pair_words.get(best, ()))
        for wi in touched:
            syms = words[wi]
            c = wfreq[wi]
            old_pairs = Counter(zip(syms, syms[1:]))
            new_syms = list(_merge_word(tuple(syms), best, new_id))
            new_pairs = Counter(zip(new_syms, new_syms[1:]))
            words[wi] = new_syms
            for p, k in (new_pairs - old_pairs).items():
                pair_counts[p] = pair_counts.get(p, 0) + k * c
                pair_words.setdefault(p, set()).add(wi)
            for p, k in (old_pairs - new_pairs).items():
                left = pair_counts[p] - k * c
                if left:
                    pair_counts[p] = left
                else:
                    del pair_counts[p]
                    pair_words.pop(p, None)
                if p not in new_pairs and p in pair_words:
                    pair_words[p].discard(wi)

    return TokenizerModel(vocab, merges, special_map, word_split=word_split)


# -- compression metrics ----------------------------------------------------

def compression_ratio(model: TokenizerModel, corpus) -> float:
    """Tokens per byte over a corpus of documents; lower is better.

    A merge-free tokenizer scores exactly 1.0.
    """
    tokens = 0
    nbytes = 0
    for doc in corpus:
        data = _to_bytes(doc)
        tokens += len(model.encode(data))
        nbytes += len(data)
    if nbytes == 0:
        raise ValueError("compression_ratio needs a non-empty corpus")
    return tokens / nbytes


def weighted_compression(ratios: dict, weights: dict) -> float:
    """Weighted average of per-domain compression ratios.

    Weight keys must exactly match ratio keys, be non-negative, and sum
    to 1 within 1e-9.
    """
    if set(ratios) != set(weights):
        raise ValueError(f"weight domains {sorted(weights)} != ratio domains {sorted(ratios)}")
    total = sum(weights.values())
    if any(w < 0 for w in weights.values()):
        raise ValueError("weights must be non-negative")
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {total!r}")
    return sum(weights[k] * ratios[k] for k in ratios)


def compression_table(model: TokenizerModel, docs_by_domain: dict, weights: dict | None = None):
    """Per-domain compression ratios plus an optional weighted average.

    Returns (rows, weighted) where rows is a list of
    {domain, byte_count, token_count, ratio} dicts in sorted domain order.
    """
    rows = []
    ratios = {}
    for domain in sorted(docs_by_domain):
        docs = docs_by_domain[domain]
        nbytes = sum(len(_to_bytes(d)) for d in docs)
        ntok = sum(len(model.encode(d)) for d in docs)
        if nbytes == 0:
            raise ValueError(f"domain {domain!r} has no bytes")
        ratios[domain] = ntok / nbytes
        rows.append({"domain": domain, "byte_count": nbytes,
                     "token_count": ntok, "ratio": ntok / nbytes})
    weighted = weighted_compression(ratios, weights) if weights is not None else None
    return rows, weighted
