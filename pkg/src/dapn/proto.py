"""Prototypical-network head: prototypes, distance softmax, episodic loss."""
from __future__ import annotations

from typing import Callable, List, NamedTuple, Optional

import numpy as np
import torch
import torch.nn.functional as F

DIST_MODES = ("sq_euclidean", "euclidean")


class PrototypeSet(NamedTuple):
    prototypes: torch.Tensor  # [way, M]
    class_ids: List[int]


def _as_labels(labels) -> torch.Tensor:
    return torch.as_tensor(np.asarray(labels) if not torch.is_tensor(labels)
                           else labels, dtype=torch.long)


def compute_prototypes(embeddings: torch.Tensor, labels,
                       n_classes: Optional[int] = None) -> PrototypeSet:
    """Per-class mean of ``embeddings``.

    With ``n_classes`` the prototypes are indexed 0..n_classes-1 and every
    class must be present; otherwise the classes are the sorted unique labels.
    """
    labels = _as_labels(labels)
    if labels.numel() != embeddings.shape[0]:
        raise ValueError("one label per embedding required")
    present = sorted(int(c) for c in torch.unique(labels))
    class_ids = list(range(n_classes)) if n_classes is not None else present
    missing = sorted(set(class_ids) - set(present))
    if missing:
        raise ValueError(f"no support samples for classes {missing}")
    index = {c: i for i, c in enumerate(class_ids)}
    if any(c not in index for c in present):
        raise ValueError("labels outside 0..n_classes-1")
    slot = torch.tensor([index[int(c)] for c in labels], dtype=torch.long)
    sums = embeddings.new_zeros((len(class_ids), embeddings.shape[1]))
    sums = sums.index_add(0, slot, embeddings)
    counts = torch.bincount(slot, minlength=len(class_ids)).to(embeddings)
    return PrototypeSet(sums / counts[:, None], class_ids)


def distances(x: torch.Tensor, prototypes: torch.Tensor,
              dist: str = "sq_euclidean") -> torch.Tensor:
    if x.shape[-1] != prototypes.shape[-1]:
        raise ValueError(f"embedding dim {x.shape[-1]} != prototype dim "
                         f"{prototypes.shape[-1]}")
    diff = x[:, None, :] - prototypes[None, :, :]
    sq = (diff * diff).sum(-1)
    if dist == "sq_euclidean":
        return sq
    if dist == "euclidean":
        return torch.sqrt(sq.clamp_min(1e-12))
    raise ValueError(f"unknown distance {dist!r}; choose from {DIST_MODES}")


def class_log_distribution(x, prototypes, dist="sq_euclidean"):
    d = distances(x, prototypes, dist)
    if torch.isnan(d).any():
        raise FloatingPointError("NaN distance between embedding and prototype")
    return F.log_softmax(-d, dim=-1)


def class_distribution(x: torch.Tensor, prototypes,
                       dist: str = "sq_euclidean") -> torch.Tensor:
    """Rows of ``softmax(-dist(x, p_c))`` over the prototype classes."""
    if isinstance(prototypes, PrototypeSet):
        prototypes = prototypes.prototypes
    return class_log_distribution(x, prototypes, dist).exp()


def proto_loss(support: torch.Tensor, support_labels, query: torch.Tensor,
               query_labels, dist: str = "sq_euclidean") -> torch.Tensor:
    """Mean negative log-probability of each query under its true class."""
    protos = compute_prototypes(support, support_labels)
    index = {c: i for i, c in enumerate(protos.class_ids)}
    query_labels = _as_labels(query_labels)
    unknown = sorted({int(c) for c in query_labels} - set(index))
    if unknown:
        raise ValueError(f"query labels {unknown} absent from support")
    target = torch.tensor([index[int(c)] for c in query_labels],
                          dtype=torch.long)
    logp = class_log_distribution(query, protos.prototypes, dist)
    return F.nll_loss(logp, target)


def predict(support, support_labels, query, dist="sq_euclidean") -> np.ndarray:
    """Nearest-prototype labels; ties go to the lowest class index."""
    protos = compute_prototypes(support, support_labels)
    d = distances(query, protos.prototypes, dist)
    # argmin returns the first minimum
    idx = torch.argmin(d, dim=1).cpu().numpy()
    return np.asarray(protos.class_ids)[idx]


def episode_accuracy(support, support_labels, query, query_labels,
                     dist="sq_euclidean") -> float:
    with torch.no_grad():
        pred = predict(support, support_labels, query, dist)
    truth = _as_labels(query_labels).cpu().numpy()
    return float(np.mean(pred == truth))


def evaluate_episode(episode, embed: Callable[[np.ndarray], torch.Tensor],
                     dist: str = "sq_euclidean") -> float:
    """Top-1 accuracy of ``embed`` on an :class:`~dapn.data.Episode`."""
    with torch.no_grad():
        s = embed(episode.support_images())
        q = embed(episode.query_images())
    return episode_accuracy(s, episode.local_labels(episode.support), q,
                            episode.local_labels(episode.query), dist)
