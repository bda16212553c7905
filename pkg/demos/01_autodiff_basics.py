"""A tour of the tape-based autodiff core.

Build tensors on a tape, run a little computation, pull gradients back into
named parameters, and sanity-check them against finite differences.
"""

import numpy as np

from crosswatch import autodiff as ad
from crosswatch.autodiff import Parameter, Tape, grad_check

# forward values -----------------------------------------------------------
tape = Tape()
print("sigmoid(0) =", ad.sigmoid(tape.tensor([0.0])).data[0])
print("row_softmax([1,1,1]) =", ad.row_softmax(tape.tensor([1.0, 1.0, 1.0])).data)

# gradients of a tiny two-layer network -------------------------------------
rng = np.random.default_rng(0)
w1 = Parameter("w1", rng.normal(size=(2, 3)))
w2 = Parameter("w2", rng.normal(size=(3, 1)))

tape = Tape()  # a tape lives for one forward pass; leaves belong to their tape
x = tape.tensor([[1.0, 2.0], [3.0, 4.0]])
hidden = ad.tanh(ad.matmul(x, tape.watch(w1)))
out = ad.mean(ad.sigmoid(ad.matmul(hidden, tape.watch(w2))))
tape.backward(out)
print("\nmean output:", float(out.data))
print("d(out)/d(w1) row 0:", w1.grad[0])
print("d(out)/d(w2) column:", w2.grad[:, 0])

# the same gradients, checked numerically ------------------------------------


def f(theta):
    t = theta.tape
    h = ad.tanh(ad.matmul(t.tensor([[1.0, 2.0], [3.0, 4.0]]), theta))
    return ad.mean(ad.sigmoid(ad.matmul(h, t.tensor(w2.value))))


err = grad_check(f, w1.value, epsilon=1e-5)
print(f"\ngrad_check max relative error: {err:.2e} (want < 1e-4)")

# gradients are linear in the objective --------------------------------------
for a, b in [(1.0, 0.0), (2.0, -1.0)]:
    p = Parameter("x", np.array([[0.5, -0.2]]))
    t = Tape()
    leaf = t.watch(p)
    combo = ad.add(ad.scale(ad.mean(ad.tanh(leaf)), a), ad.scale(ad.mean(ad.sigmoid(leaf)), b))
    t.backward(combo)
    print(f"grad of {a}*tanh-mean + {b}*sigmoid-mean:", p.grad[0])
