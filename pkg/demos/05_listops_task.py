"""The nested prefix-arithmetic task: generation and the label oracle.

Expressions over MAX, MIN, MED (median rounded down) and SM (sum mod 10)
serialize to token sequences whose value 0-9 is the class label. The
generator computes labels on its expression tree; an independent
recursive-descent evaluator re-derives them from the serialized tokens.
"""

import numpy as np

from linattn.data import (batch_iter, eval_listops_tokens, gen_listops,
                          listops_to_string)

ds = gen_listops(seed=42, count=1000, max_len=64, max_depth=3)

print("five samples:")
for tokens, label in ds.examples[:5]:
    print(f"  {listops_to_string(tokens):<70} -> {label}")

mismatches = sum(1 for tokens, label in ds.examples
                 if eval_listops_tokens(tokens) != label)
lengths = [len(t) for t, _ in ds.examples]
labels = np.bincount([y for _, y in ds.examples], minlength=10)

print(f"\noracle mismatches over {len(ds)} expressions: {mismatches}")
print(f"token lengths: mean {np.mean(lengths):.1f}, max {max(lengths)} "
      f"(budget {64})")
print(f"label histogram: {labels.tolist()}")

batch = next(batch_iter(ds, batch_size=4, max_len=64, shuffle_seed=0))
print(f"\nbatch tokens {batch.tokens.shape}, pads are masked out: "
      f"{np.array_equal(batch.mask, batch.tokens != 0)}")
