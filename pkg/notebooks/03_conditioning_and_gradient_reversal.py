"""
Conditioning, entropy weights and gradient reversal
====================================================

The pieces behind the two domain losses.
"""
import torch

from dapn.adversarial import (ConditionalDomainHead, ConditioningMaps,
                              condition, domain_confusion_loss, entropy,
                              gradient_reversal, grl_lambda, transfer_weight)

torch.manual_seed(0)

# small inputs use the exact outer product, flattened row-major
f = torch.tensor([1.0, 2.0])
g = torch.tensor([0.25, 0.75])
print(condition(f, g))

# large ones use fixed random projections of size d instead
f_big, g_big = torch.randn(512), torch.softmax(torch.randn(20), 0)
maps = ConditioningMaps(512, 20, d=1024, seed=0)
print(condition(f_big, g_big, maps, d_feat=1024).shape)

# confident predictions get more weight in the adversarial loss
for probs in ([1.0, 0.0, 0.0], [0.7, 0.2, 0.1], [1 / 3] * 3):
    p = torch.tensor([probs])
    print(probs, "H=%.3f" % entropy(p).item(),
          "w=%.3f" % transfer_weight(entropy(p)).item())

# gradient reversal: identity forward, -lambda times the gradient backward
x = torch.ones(3, requires_grad=True)
gradient_reversal(x, 0.5).sum().backward()
print(x.grad)

# lambda ramps from 0 towards 1 over training
print([round(grl_lambda(p), 3) for p in (0.0, 0.1, 0.25, 0.5, 1.0)])

# the confusion loss trains the head to tell domains apart while the
# reversed gradient pushes the features to make that impossible
head = ConditionalDomainHead(feat_dim=8, n_classes=4, hidden=16)
fs = torch.randn(10, 8, requires_grad=True)
ft = torch.randn(10, 8) + 1.0
gs = torch.softmax(torch.randn(10, 4), 1)
gt = torch.softmax(torch.randn(10, 4), 1)
loss = domain_confusion_loss(fs, gs, ft, gt, head, lam=1.0)
loss.backward()
print("loss %.4f" % loss.item())
print("gradients reach the head and the features:",
      head.discriminator.net[0].weight.grad.norm().item() > 0,
      fs.grad.norm().item() > 0)
