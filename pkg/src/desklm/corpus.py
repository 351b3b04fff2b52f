"""Corpus curation: near-duplicate removal, domain sampling plans, and
sequence packing.

Documents travel as JSONL records ``{"id", "domain", "text"}``.  Dedup is
MinHash over 5-gram word shingles with LSH banding for candidate pairs;
an exact-hash pass handles verbatim paragraph repeats.  Sampling plans
turn per-domain proportions into integer token quotas.  Packing fills
fixed-length rows completely, splitting documents at row boundaries and
tagging each row position with a segment id so attention masks can stop
cross-document mixing.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, EmptyShingleError, PlanningError


@dataclass
class Document:
    id: str
    domain: str
    text: str


def read_jsonl(path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}:{line_no}: invalid JSON ({e})") from e
            for k in ("id", "domain", "text"):
                if k not in rec:
                    raise ConfigError(f"{path}:{line_no}: missing field {k!r}")
            docs.append(Document(id=str(rec["id"]), domain=str(rec["domain"]),
                                 text=str(rec["text"])))
    return docs


def write_jsonl(path, docs):
    with open(path, "w", encoding="utf-8") as f:
        for d in docs:
            f.write(json.dumps({"id": d.id, "domain": d.domain, "text": d.text},
                               ensure_ascii=False, sort_keys=True) + "\n")


# -- exact paragraph dedup ---------------------------------------------------

_WS_RE = re.compile(r"\s+")


def _normalize(text: str) -> str:
    return _WS_RE.sub(" ", text.lower()).strip()


def dedup_paragraphs(docs) -> tuple[list, int]:
    """Remove paragraphs whose normalized text already appeared anywhere
    earlier in the corpus (case-folded, whitespace-collapsed exact match).

    Returns (new documents, paragraphs removed).  Documents left empty are
    dropped entirely.
    """
    seen = set()
    out = []
    removed = 0
    for d in docs:
        kept = []
        for para in d.text.split("\n\n"):
            key = hashlib.blake2b(_normalize(para).encode("utf-8"), digest_size=16).digest()
            if not _normalize(para):
                kept.append(para)
                continue
            if key in seen:
                removed += 1
                continue
            seen.add(key)
            kept.append(para)
        text = "\n\n".join(kept)
        if text.strip():
            out.append(Document(id=d.id, domain=d.domain, text=text))
    return out, removed


# -- MinHash -----------------------------------------------------------------

_P_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def shingle_hashes(text: str, n: int = 5) -> np.ndarray:
    """64-bit hashes of n-gram word shingles (whitespace-normalized).

    Documents with fewer than n words contribute a single whole-text
    shingle; a document with no words raises EmptyShingleError.
    """
    words = text.split()
    if not words:
        raise EmptyShingleError("document has no words to shingle")
    if len(words) < n:
        grams = [" ".join(words)]
    else:
        grams = [" ".join(words[i:i + n]) for i in range(len(words) - n + 1)]
    out = np.empty(len(grams), dtype=np.uint64)
    for i, g in enumerate(grams):
        digest = hashlib.blake2b(g.encode("utf-8"), digest_size=8).digest()
        out[i] = int.from_bytes(digest, "little")
    return np.unique(out)


def _permutations(k: int, seed: int):
    """Affine 64-bit hash mixers: odd multiplier a, offset b.

    Multiplication by an odd constant is a bijection mod 2^64, so each
    (a, b) pair permutes the shingle-hash space.
    """
    gen = np.random.Generator(np.random.PCG64(seed))
    a = gen.integers(0, 2 ** 63, size=k, dtype=np.uint64) * np.uint64(2) + np.uint64(1)
    b = gen.integers(0, 2 ** 63, size=k, dtype=np.uint64)
    return a, b


@dataclass
class MinHashSignature:
    k: int
    seed: int
    mins: np.ndarray   # k uint64 values

    def __eq__(self, other):
        return (self.k == other.k and self.seed == other.seed
                and np.array_equal(self.mins, other.mins))


def signature_from_hashes(hashes: np.ndarray, k: int, seed: int) -> MinHashSignature:
    if hashes.size == 0:
        raise EmptyShingleError("empty shingle set")
    a, b = _permutations(k, seed)
    # (n, k) permuted values; uint64 arithmetic wraps mod 2^64 by design.
    permuted = hashes[:, None] * a[None, :] + b[None, :]
    return MinHashSignature(k=k, seed=seed, mins=permuted.min(axis=0))


def minhash_signature(text: str, k: int = 128, shingle_n: int = 5,
                      seed: int = 0) -> MinHashSignature:
    return signature_from_hashes(shingle_hashes(text, shingle_n), k, seed)


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    """Fraction of matching signature slots; unbiased estimate of Jaccard."""
    if a.k != b.k or a.seed != b.seed:
        raise ConfigError("signatures come from different permutation families")
    return float(np.mean(a.mins == b.mins))


@dataclass
class Removal:
    dropped_id: str
    matched_id: str
    est_jaccard: float


def dedup(docs, threshold: float = 0.8, k: int = 128, shingle_n: int = 5,
          seed: int = 0, bands: int = 16) -> tuple[list, list]:
    """Greedy near-duplicate removal in input order.

    Each document is bucketed by LSH bands (k/bands rows per band); only
    documents sharing a band bucket with an already-kept document are
    compared, by full-signature Jaccard estimate.  At or above
    ``threshold`` the newcomer is dropped and logged against its best
    match.  Deterministic for fixed inputs and seed; idempotent because a
    second pass replays the identical keep decisions.

    Documents with no words are kept as-is (nothing to hash).
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigError("threshold must be in (0, 1]")
    if k % bands != 0:
        raise ConfigError(f"k={k} must divide evenly into {bands} bands")
    rows = k // bands
    buckets: dict = {}
    kept, removals = [], []
    kept_sigs: dict = {}
    for doc in docs:
        try:
            sig = minhash_signature(doc.text, k=k, shingle_n=shingle_n, seed=seed)
        except EmptyShingleError:
            kept.append(doc)
            continue
        band_keys = []
        for bi in range(bands):
            chunk = sig.mins[bi * rows:(bi + 1) * rows].tobytes()
            band_keys.append((bi, hashlib.blake2b(chunk, digest_size=8).digest()))
        cand_ids = []
        seen_cand = set()
        for key in band_keys:
            for kid in buckets.get(key, ()):
                if kid not in seen_cand:
                    seen_cand.add(kid)
                    cand_ids.append(kid)
        best_id, best_est = None, -1.0
        for kid in cand_ids:
            est = estimate_jaccard(sig, kept_sigs[kid])
            if est > best_est:
                best_id, best_est = kid, est
        if best_id is not None and best_est >= threshold:
            removals.append(Removal(dropped_id=doc.id, matched_id=best_id,
                                    est_jaccard=best_est))
            continue
        kept.append(doc)
        kept_sigs[doc.id] = sig
        for key in band_keys:
            buckets.setdefault(key, []).append(doc.id)
    return kept, removals


def write_removal_log(path, removals):
    with open(path, "w", encoding="utf-8") as f:
        for r in removals:
            f.write(json.dumps(asdict(r), sort_keys=True) + "\n")


# -- manifest and sampling plan ----------------------------------------------

@dataclass
class DomainSpec:
    name: str
    languages: list
    path: str
    sampling_prop: float
    epochs: float
    size_bytes: int
    token_estimate: int | None = None
    quality: str | None = None     # carried through for operators; never computed


@dataclass
class CorpusManifest:
    domains: list
    total_token_budget: int

    def validate(self):
        if not self.domains:
            raise ConfigError("manifest has no domains")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate domain names in manifest")
        total = sum(d.sampling_prop for d in self.domains)
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"sampling proportions sum to {total!r}, expected 1")
        for d in self.domains:
            if d.sampling_prop < 0:
                raise ConfigError(f"domain {d.name}: negative sampling_prop")
            if d.epochs <= 0:
                raise ConfigError(f"domain {d.name}: epochs must be positive")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        domains = [DomainSpec(**spec) for spec in d["domains"]]
        return cls(domains=domains,
                   total_token_budget=int(d["total_token_budget"])).validate()

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {"domains": [asdict(d) for d in self.domains],
                "total_token_budget": self.total_token_budget}


@dataclass
class DomainQuota:
    name: str
    quota: int
    available: int | None    # epochs * token_estimate, None if unknown
    feasible: bool


def sample_plan(manifest: CorpusManifest, total_tokens: int | None = None) -> list:
    """Integer token quotas per domain.

    quota_i = round(prop_i * total); any rounding residue lands on the
    largest domain so the quotas sum to the total exactly.  A domain is
    infeasible when its quota exceeds epochs * token_estimate; any
    infeasible domain raises PlanningError naming the offenders (the full
    plan rides along on the exception).
    """
    manifest.validate()
    total = manifest.total_token_budget if total_tokens is None else int(total_tokens)
    if total <= 0:
        raise ConfigError("total token budget must be positive")
    quotas = {d.name: int(round(d.sampling_prop * total)) for d in manifest.domains}
    residue = total - sum(quotas.values())
    largest = max(manifest.domains, key=lambda d: (d.sampling_prop, d.name)).name
    quotas[largest] += residue
    plan = []
    bad = []
    for d in manifest.domains:
        available = None
        feasible = True
        if d.token_estimate is not None:
            available = int(d.epochs * d.token_estimate)
            feasible = quotas[d.name] <= available
        if not feasible:
            bad.append(d.name)
        plan.append(DomainQuota(name=d.name, quota=quotas[d.name],
                                available=available, feasible=feasible))
    if bad:
        raise PlanningError(
            f"sampling plan infeasible for domain(s) {', '.join(bad)}: "
            f"quota exceeds epochs * token_estimate", domains=bad, plan=plan)
    return plan


# -- packing -----------------------------------------------------------------

def sequences_per_step(batch_tokens: int, context_length: int) -> int:
    """How many packed rows form one optimizer step's batch."""
    if context_length <= 0:
        raise ConfigError("context_length must be positive")
    if batch_tokens % context_length != 0:
        raise ConfigError(
            f"batch_tokens {batch_tokens} not divisible by context {context_length}")
    return batch_tokens // context_length


def pack(token_docs, context_length: int, pad_id: int):
    """Pack documents (lists of token ids) into fixed-length rows.

    Rows are filled completely in document order; a document hitting a row
    boundary continues in the next row, so only the final row can contain
    padding.  Each position carries a segment id (1.. per document within
    the row, 0 for padding) for cross-document attention masking and loss
    masks.  Token conservation: non-pad positions == total input tokens.

    Returns (tokens, segments) int32 arrays of shape [rows, context_length].
    """
    if context_length < 2:
        raise ConfigError("context_length must be at least 2")
    rows_tok, rows_seg = [], []
    cur_tok: list[int] = []
    cur_seg: list[int] = []
    next_seg = 1

    def flush(pad: bool):
        nonlocal cur_tok, cur_seg, next_seg
        if pad:
            while len(cur_tok) < context_length:
                cur_tok.append(pad_id)
                cur_seg.append(0)
        rows_tok.append(cur_tok)
        rows_seg.append(cur_seg)
        cur_tok, cur_seg = [], []
        next_seg = 1

    for doc in token_docs:
        doc = list(doc)
        if not doc:
            continue
        seg = next_seg
        next_seg += 1
        pos = 0
        while pos < len(doc):
            space = context_length - len(cur_tok)
            take = min(space, len(doc) - pos)
            cur_tok.extend(doc[pos:pos + take])
            cur_seg.extend([seg] * take)
            pos += take
            if len(cur_tok) == context_length:
                flush(pad=False)
                if pos < len(doc):
                    # the document continues: it opens the new row as segment 1
                    seg = 1
                    next_seg = 2
    if cur_tok:
        flush(pad=True)
    tokens = np.asarray(rows_tok, dtype=np.int32).reshape(-1, context_length)
    segments = np.asarray(rows_seg, dtype=np.int32).reshape(-1, context_length)
    return tokens, segments


def save_packed(path, tokens, segments, meta: dict | None = None):
    from . import io as dio
    m = {"kind": "packed", "context_length": int(tokens.shape[1])}
    if meta:
        m.update(meta)
    dio.save_arrays(path, {"tokens": tokens.astype(np.int32),
                           "segments": segments.astype(np.int32)}, m)


def load_packed(path):
    from . import io as dio
    arrays, meta = dio.load_arrays(path)
    if meta.get("kind") != "packed":
        raise ConfigError(f"{path} is not a packed-token file")
    return arrays["tokens"], arrays["segments"], meta
