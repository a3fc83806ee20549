"""
Prototypes, class distributions and the episode loss
=====================================================

"""
import torch

from dapn.proto import (class_distribution, compute_prototypes, predict,
                        proto_loss)

torch.manual_seed(0)

# three classes, two support points each, in a 2-d embedding space
centres = torch.tensor([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
support = centres.repeat_interleave(2, 0) + 0.3 * torch.randn(6, 2)
labels = [0, 0, 1, 1, 2, 2]

# a prototype is the mean of its class's support embeddings
protos = compute_prototypes(support, labels)
print(protos.prototypes)

# queries are softly assigned by softmax over negative squared distance
query = centres + 0.5 * torch.randn(3, 2)
print(class_distribution(query, protos.prototypes))

# hard predictions pick the nearest prototype
print(predict(support, labels, query))

# the episode loss is the mean negative log-probability of the true class
q_labels = [0, 1, 2]
print("sq_euclidean:", proto_loss(support, labels, query, q_labels).item())
print("euclidean:   ",
      proto_loss(support, labels, query, q_labels, "euclidean").item())

# gradients reach both the queries and the support set
support.requires_grad_(True)
query.requires_grad_(True)
proto_loss(support, labels, query, q_labels).backward()
print(support.grad.norm().item(), query.grad.norm().item())
