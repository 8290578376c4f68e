"""
A small tape autodiff
=====================

The model is trained with a reverse-mode autodiff written on numpy. Every
operation records a vector-Jacobian product; ``backward`` replays them.
"""

import numpy as np

from heteroloc import autodiff as ad

rng = np.random.default_rng(0)
x = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True)

# a tiny network: relu(x w), softmax over the two outputs, mean of the first column
def net(x, w):
    y = ad.softmax(ad.relu(x @ w), axis=1)
    return ad.mean(ad.gather(ad.reshape(y, (8,)), np.arange(0, 8, 2)))


loss = net(x, w)
gx, gw = ad.backward(loss, [x, w])
print("loss", float(loss.data))
print("d loss / d w\n", gw)

# central differences agree with the tape to many digits
err = ad.grad_check(lambda p: net(*p), [x.data, w.data])
print(f"max relative error vs finite differences: {err:.1e}")

# matmul sums each output row in a fixed order, so a row never depends on its neighbors' values
a = rng.normal(size=(5, 3))
b = a.copy()
b[1:] += 100.0
print("row 0 bit-identical:", np.array_equal(ad.matmul(a, w.data).data[0], ad.matmul(b, w.data).data[0]))
