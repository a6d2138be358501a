"""Check the hand-written reverse-mode gradients against central differences."""

import numpy as np

from smile import diffcore as dc

rng = np.random.default_rng(0)
a = dc.Tensor(rng.normal(size=(6, 3)), requires_grad=True)

# nuclear norm of a through its Gram matrix, as the low-rank regularizer uses it
def nuclear():
    return dc.trace_sqrt_psd(dc.matmul(dc.transpose(a), a))

with dc.Tape() as tape:
    y = nuclear()
(g,) = dc.backward(y, tape, wrt=[a])
print("value %.6f, SVD sum %.6f" % (y.item(), np.linalg.svd(a.data, compute_uv=False).sum()))
print("max rel error vs finite differences: %.2e" % dc.finite_diff_check(nuclear, [a], 1e-5))

# a strided blur, the building block of the learned downsampling operator
x = dc.Tensor(rng.random((9, 9, 2)), requires_grad=True)
k = dc.Tensor(rng.random((5, 5)), requires_grad=True)
w = rng.normal(size=(5, 5, 2))
err = dc.finite_diff_check(lambda: dc.tsum(dc.mul(dc.conv2d_stride(x, k, 2), w)), [x, k], 1e-5)
print("strided conv max rel error: %.2e" % err)
