"""
The tensor engine
=================

Reverse-mode gradients for the handful of ops the autoencoder needs,
checked here against central differences, then a tiny network trained with
Adam on a soft-Dice loss.
"""

import numpy as np

from postdae.autodiff import AdamState, LayerSpec, Sequential, Tensor, adam_step, conv2d, soft_dice_loss

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(1, 2, 6, 6)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
b = Tensor(np.zeros(3), requires_grad=True)
conv2d(x, w, b, stride=2).sum().backward()

# numerical derivative for one weight entry
h = 1e-6
w.data[1, 0, 2, 1] += h
up = conv2d(x, w, b, stride=2).data.sum()
w.data[1, 0, 2, 1] -= 2 * h
down = conv2d(x, w, b, stride=2).data.sum()
w.data[1, 0, 2, 1] += h
print("analytic %.8f  numeric %.8f" % (w.grad[1, 0, 2, 1], (up - down) / (2 * h)))

# learn to copy a square through a conv -> relu -> conv -> sigmoid stack
target = np.zeros((1, 1, 8, 8))
target[0, 0, 2:6, 3:7] = 1
inp = Tensor(np.concatenate([1 - target, target], axis=1))
net = Sequential(
    [
        LayerSpec("conv3x3", in_channels=2, out_channels=4),
        LayerSpec("relu"),
        LayerSpec("conv3x3", in_channels=4, out_channels=1),
        LayerSpec("sigmoid"),
    ],
    seed=1,
)
state = AdamState(lr=0.05)
for step in range(101):
    loss = soft_dice_loss(net(inp), target)
    net.zero_grad()
    loss.backward()
    adam_step(net.parameters(), [p.grad for p in net.parameters()], state)
    if step % 25 == 0:
        print("step %3d  loss %.4f" % (step, loss.item()))
