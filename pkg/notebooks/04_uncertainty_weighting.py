"""
Learned loss weights
====================

Each loss gets a log-variance ``w``; the combined objective is
``sum(w / 2 + exp(-w) * L)``.
"""
import math

import torch

from dapn.weighting import combine_losses, stationary_weight

# all weights at zero is the plain sum
losses = [torch.tensor(v) for v in (1.0, 0.5, 2.0, 0.1)]
print(combine_losses(losses, torch.zeros(4)).item())

# a disabled loss (None) adds nothing, not even its w / 2 term
print(combine_losses([losses[0], losses[1], None, None],
                     torch.zeros(4)).item())

# minimising over w alone settles each weight at log(2 L)
w = torch.zeros(4, requires_grad=True)
opt = torch.optim.SGD([w], lr=0.1)
for _ in range(500):
    opt.zero_grad()
    combine_losses(losses, w).backward()
    opt.step()
for j, loss in enumerate(losses):
    print("L=%.2f  w=%.4f  log(2L)=%.4f" % (loss.item(), w[j].item(),
                                            stationary_weight(loss.item())))

# so a loss that stays large is down-weighted by exp(-w) = 1 / (2 L)
print([round(math.exp(-v), 3) for v in w.detach().tolist()])
