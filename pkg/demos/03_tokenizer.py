"""Byte-level BPE: train one, prove it lossless, measure compression.

The production recipe trains an 80,000-entry byte-level BPE vocabulary on a
multi-terabyte mixed corpus; its published per-domain compression ratios are
shown below for context.  The desk-scale version trains in seconds on
synthetic text, is lossless on arbitrary byte sequences by construction,
and reports the same ratio metric (tokens per UTF-8 byte, lower is better).
"""
from desklm.synth import STYLES, build_corpus
from desklm.tokenizer import compression_table, train_bbpe


def banner(title):
    print(f"\n=== {title} " + "=" * max(0, 60 - len(title)))


banner("Training on a mixed synthetic corpus")
docs = build_corpus(seed=5, target_bytes=400_000)
texts = [d.text for d in docs]
tok = train_bbpe(texts, vocab_size=512, specials=("<pad>",))
print(f"{len(docs)} documents, vocab {tok.vocab_size} "
      f"({len(tok.merges)} learned merges, 1 special)")
first = [(tok.vocab[a] + tok.vocab[b]).decode("utf-8", "replace")
         for a, b in tok.merges[:8]]
print("first merges learned:", ", ".join(repr(m) for m in first))

banner("Losslessness")
samples = [
    "plain ascii text",
    "混合中文 with English",
    b"\xc3(",                      # invalid UTF-8 continuation
    b"\xed\xa0\x80",               # UTF-8 encoding of a lone surrogate
    bytes(range(256)),             # every byte value once
]
for s in samples:
    raw = s.encode("utf-8") if isinstance(s, str) else s
    ok = tok.decode(tok.encode(s)) == raw
    label = repr(s)[:46]
    print(f"  round trip {'ok ' if ok else 'BAD'}  {label}")

banner("Per-domain compression (tokens / byte, lower is better)")
held_out = build_corpus(seed=99, target_bytes=120_000)
by_domain = {s: [d.text for d in held_out if d.domain == s] for s in STYLES}
rows, weighted = compression_table(tok, by_domain,
                                   weights={s: 1 / len(STYLES) for s in STYLES})
for row in rows:
    print(f"  {row['domain']:18s} {row['ratio']:.3f}")
print(f"  {'weighted average':18s} {weighted:.3f}")

banner("Published production-vocabulary ratios, for context")
print("an 80,000-entry vocabulary trained on a multi-terabyte corpus reports:")
for domain, ratio in [("english", 0.248), ("chinese", 0.235),
                      ("classical chinese", 0.307), ("code", 0.363),
                      ("multilingual", 0.340), ("math", 0.965),
                      ("weighted average", 0.261)]:
    print(f"  {domain:18s} {ratio:.3f}")
print("those exact numbers need the production corpus and vocab size;")
print("the desk-scale suite instead verifies the trainer merge-for-merge")
print("against a quadratic reference implementation on a 1MB fixture.")
