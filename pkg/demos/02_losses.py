"""
Cosine objectives on toy vectors
================================

Similarities are remapped to (1 + cos) / 2 and treated as a binary
probability. Positives pull the shared halves together, negatives push the
private halves apart.
"""

import math

import numpy as np

from mvlatent import losses as L

e1, e2 = np.eye(4)[:2]
print("s~ parallel, orthogonal, antiparallel:",
      L.remapped_sim(e1, e1), L.remapped_sim(e1, e2), L.remapped_sim(e1, -e1))

same = np.stack([e1, e1])
orth = np.stack([e2, e2])
print("cos+ sample, orthogonal pairs:", round(L.cos_plus_sample(same, orth), 4),
      "(-log 0.5 =", round(-math.log(0.5), 4), ")")
print("cos- sample, identical pairs:", round(L.cos_minus_sample(same, same), 3),
      "(clamped at -log eps)")

# Batch level: row j's positive is column j, every other column is a negative.
two = np.stack([e1, e2])
print("cos+ batch, B=2 with orthogonal negatives:", round(L.cos_plus_batch(two, two), 4))
print("InfoNCE is the same formula:", L.infonce_loss(two, two) == L.cos_plus_batch(two, two))

# Subspaces are flattened per clip, so frame order does not matter.
rng = np.random.default_rng(0)
a, b = rng.standard_normal((2, 3, 5, 4))
perm = rng.permutation(5)
print("frame permutation changes cos- batch by",
      abs(L.cos_minus_batch(a, b) - L.cos_minus_batch(a[:, perm], b[:, perm])))

# Masking zeroes entries without rescaling survivors.
z = np.ones((100, 100))
masked = L.apply_mask(z, L.MaskSpec("private", 0.4, seed=3))
print("zeroed fraction at r=0.4:", float(np.mean(masked == 0)), "max survivor:", masked.max())

# Gradients come with every loss; here one step of descent lowers cos-.
value, gu, gv = L.cos_minus_sample_grad(a, b)
after = L.cos_minus_sample(a - 0.1 * gu, b - 0.1 * gv)
print(f"cos- sample {value:.4f} -> {after:.4f} after one gradient step")
