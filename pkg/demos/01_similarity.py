"""
Representation similarity with linear CKA
=========================================

Two models that see the same inputs are compared through their activation
matrices (one row per input). Linear CKA is 1 for identical representations,
does not care about rotations or overall scale, and drops towards 0 for
unrelated features.
"""

import numpy as np

from vlmsearch import cka, minibatch_cka
from vlmsearch.similarity import split_batches

rng = np.random.default_rng(0)
n = 256

# two "models" reading the same 4-dimensional latent through different projections
latent = rng.standard_normal((n, 4))
a = latent @ rng.standard_normal((4, 16)) + 0.3 * rng.standard_normal((n, 16))
b = latent @ rng.standard_normal((4, 24)) + 0.3 * rng.standard_normal((n, 24))
unrelated = rng.standard_normal((n, 16))

print(f"cka(a, a)          = {cka(a, a):.4f}")
print(f"cka(a, b)          = {cka(a, b):.4f}")
print(f"cka(a, unrelated)  = {cka(a, unrelated):.4f}")

# rotating and rescaling one side leaves the score unchanged
q, _ = np.linalg.qr(rng.standard_normal((16, 16)))
print(f"cka(5 a Q, b)      = {cka(5.0 * a @ q, b):.4f}")

###############################################################################
# Minibatches
# -----------
# With many inputs the n x n kernels get large. The minibatch estimator sums
# unbiased HSIC terms over batches; with 4 batches of 64 it lands close to
# the full-data value.

mb = minibatch_cka(split_batches(a, 64), split_batches(b, 64))
print(f"minibatch cka(a, b) = {mb:.4f}  (full {cka(a, b):.4f})")
