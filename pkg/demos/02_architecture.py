"""Architecture tour: the reference configurations and a live forward pass.

Two published model rows anchor the laboratory: a 52B-parameter flagship at
width 8192 and a width-512 proxy used for hyperparameter search.  Both are
encoded as presets, and the exact parameter-count formula reproduces their
published sizes.  A toy model with the same anatomy then runs a forward
pass small enough to inspect.
"""
import math

import numpy as np

from desklm.model import Model, attention_bias, count_params
from desklm.presets import (config_52b, config_mup_512, toy_config,
                            toy_hyperparams)
from desklm.tensor import RngState


def banner(title):
    print(f"\n=== {title} " + "=" * max(0, 60 - len(title)))


banner("Published configurations")
for label, cfg, published in [("flagship (width 8192)", config_52b(), 52_850e6),
                              ("search proxy (width 512)", config_mup_512(), 283e6)]:
    n = count_params(cfg)
    gap = abs(n - published) / published
    print(f"{label:26s} layers={cfg.layer_num:3d} heads={cfg.attention_heads:3d} "
          f"d={cfg.hidden_size:5d} ffn={cfg.ffn_hidden_size:6d}")
    print(f"{'':26s} params={n:>17,d}  published {published / 1e6:,.0f}M "
          f"(gap {gap:.3%})")

banner("Anatomy of the parameter count")
cfg = config_52b()
d, f, V, L = cfg.hidden_size, cfg.ffn_hidden_size, cfg.vocab_size, cfg.layer_num
print(f"untied embedding + head  2*V*d             = {2 * V * d:>17,d}")
print(f"attention per layer      4*d^2             = {4 * d * d:>17,d}")
print(f"SwiGLU per layer         3*d*f             = {3 * d * f:>17,d}")
print(f"norm gains per layer     2*d               = {2 * d:>17,d}")
print(f"final LayerNorm          2*d               = {2 * d:>17,d}")
print(f"total                                      = {count_params(cfg):>17,d}")

banner("A toy model you can watch think")
tcfg = toy_config(width=64, layer_num=2, vocab_size=512, context_length=128)
model = Model.build(tcfg, toy_hyperparams(), RngState(0))
print(f"toy config: {count_params(tcfg):,} params, head_dim {tcfg.head_dim}")
only_bias = [k for k in model.params if "bias" in k]
print(f"bias parameters (final LayerNorm only): {only_bias}")

tokens = RngState(1).integers(0, 512, size=(2, 16)).astype(np.int32)
segments = np.ones_like(tokens)
segments[1, 10:] = 0                      # a padded row
loss = model.loss(tokens, segments)
print(f"loss on random tokens: {loss.item():.4f} "
      f"(log vocab = {math.log(512):.4f})")

banner("Packed-row attention masking")
seg = np.array([[1, 1, 1, 2, 2, 0]])        # two documents + padding
bias = attention_bias(seg)[0, 0]
print("rows may look at (o = allowed):")
for i in range(6):
    row = "".join("o" if math.isfinite(bias[i, j]) else "." for j in range(6))
    kind = "doc1" if seg[0, i] == 1 else ("doc2" if seg[0, i] == 2 else "pad ")
    print(f"  pos {i} [{kind}]  {row}")
print("documents cannot see each other; pads see only themselves.")
