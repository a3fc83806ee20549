import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dapn.proto import (class_distribution, compute_prototypes, distances,
                        episode_accuracy, evaluate_episode, predict,
                        proto_loss)


def _central_diff(fn, x, eps=1e-6):
    """Central finite-difference gradient of scalar ``fn`` at ``x``."""
    grad = torch.zeros_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + eps
        hi = fn(x).item()
        flat[i] = old - eps
        lo = fn(x).item()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


class TestPrototypes:
    def test_single_vector_is_prototype(self):
        x = torch.tensor([[1.0, 2.0], [3.0, -1.0]])
        p = compute_prototypes(x, [0, 1])
        assert torch.equal(p.prototypes, x) and p.class_ids == [0, 1]

    def test_mean(self):
        x = torch.tensor([[0.0, 0.0], [2.0, 4.0]])
        p = compute_prototypes(x, [0, 0])
        assert p.prototypes.tolist() == [[1.0, 2.0]]

    def test_permutation_invariant(self):
        g = torch.Generator().manual_seed(0)
        x = torch.randn(12, 5, generator=g, dtype=torch.float64)
        y = np.repeat(np.arange(3), 4)
        perm = torch.randperm(12, generator=g)
        a = compute_prototypes(x, y).prototypes
        b = compute_prototypes(x[perm], y[perm.numpy()]).prototypes
        torch.testing.assert_close(a, b, rtol=0, atol=1e-12)

    def test_duplication_idempotent(self):
        x = torch.randn(6, 4, dtype=torch.float64)
        y = np.array([0, 1, 2, 0, 1, 2])
        a = compute_prototypes(x, y).prototypes
        b = compute_prototypes(torch.cat([x, x]), np.concatenate([y, y]))
        torch.testing.assert_close(a, b.prototypes, rtol=0, atol=1e-12)

    def test_empty_class(self):
        with pytest.raises(ValueError, match="2"):
            compute_prototypes(torch.zeros(2, 3), [0, 1], n_classes=3)


class TestClassDistribution:
    def test_equidistant(self):
        protos = torch.tensor([[1.0, 0.0], [-1.0, 0.0]])
        g = class_distribution(torch.tensor([[0.0, 3.0]]), protos)
        torch.testing.assert_close(g, torch.tensor([[0.5, 0.5]]))

    @pytest.mark.parametrize("far", [20.0, 21.0])
    def test_confident(self, far):
        # softmax(0, -far, -far)[0] = 1 / (1 + 2 e^-far); at far=20 this is
        # 1 - 4.12e-9, at far=21 it is 1 - 1.52e-9
        protos = torch.tensor([[0.0], [math.sqrt(far)], [-math.sqrt(far)]],
                              dtype=torch.float64)
        g = class_distribution(torch.zeros(1, 1, dtype=torch.float64), protos)
        expected = 1 / (1 + 2 * math.exp(-far))
        assert g[0, 0].item() == pytest.approx(expected, abs=1e-15)
        if far >= 21:
            assert g[0, 0].item() >= 1 - 3e-9

    def test_nan_raises(self):
        with pytest.raises(FloatingPointError):
            class_distribution(torch.tensor([[float("nan")]]),
                               torch.zeros(2, 1))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(1, 5), st.integers(0, 10 ** 6))
    def test_simplex(self, way, dim, seed):
        g = torch.Generator().manual_seed(seed)
        x = torch.randn(4, dim, generator=g, dtype=torch.float64)
        p = torch.randn(way, dim, generator=g, dtype=torch.float64)
        probs = class_distribution(x, p)
        assert (probs >= 0).all()
        torch.testing.assert_close(probs.sum(1), torch.ones(4,
                                   dtype=torch.float64), atol=1e-6, rtol=0)

    def test_shift_invariance(self):
        d = torch.tensor([[1.0, 2.0, 5.0]], dtype=torch.float64)
        a = torch.softmax(-d, -1)
        b = torch.softmax(-(d + 7.5), -1)
        torch.testing.assert_close(a, b)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 100.0), st.integers(0, 10 ** 6))
    def test_argmax_scale_invariant(self, s, seed):
        g = torch.Generator().manual_seed(seed)
        sup = torch.randn(6, 3, generator=g, dtype=torch.float64)
        q = torch.randn(5, 3, generator=g, dtype=torch.float64)
        y = [0, 0, 1, 1, 2, 2]
        assert np.array_equal(predict(sup, y, q), predict(s * sup, y, s * q))

    def test_euclidean_mode(self):
        d = distances(torch.tensor([[3.0, 4.0]]), torch.zeros(1, 2),
                      "euclidean")
        assert d.item() == pytest.approx(5.0)
        with pytest.raises(ValueError):
            distances(torch.zeros(1, 2), torch.zeros(1, 2), "cosine")


class TestProtoLoss:
    def test_perfect_predictor(self):
        sup = torch.tensor([[0.0, 0.0], [40.0 ** 0.5, 0.0]], dtype=torch.float64)
        q = sup.clone()
        loss = proto_loss(sup, [0, 1], q, [0, 1])
        # -log(1 / (1 + e^-40))
        assert loss.item() <= 1e-9

    def test_uniform(self):
        sup = torch.eye(5, dtype=torch.float64)
        q = torch.zeros(3, 5, dtype=torch.float64)
        loss = proto_loss(sup, range(5), q, [0, 3, 4])
        assert loss.item() == pytest.approx(math.log(5), abs=1e-12)

    def test_query_order_invariant(self):
        g = torch.Generator().manual_seed(1)
        sup = torch.randn(6, 4, generator=g, dtype=torch.float64)
        q = torch.randn(9, 4, generator=g, dtype=torch.float64)
        yq = np.array([0, 1, 2] * 3)
        perm = np.random.default_rng(0).permutation(9)
        a = proto_loss(sup, [0, 0, 1, 1, 2, 2], q, yq)
        b = proto_loss(sup, [0, 0, 1, 1, 2, 2], q[perm], yq[perm])
        assert a.item() == pytest.approx(b.item(), abs=1e-12)

    def test_unknown_query_label(self):
        with pytest.raises(ValueError, match="3"):
            proto_loss(torch.zeros(2, 2), [0, 1], torch.zeros(1, 2), [3])

    @pytest.mark.parametrize("dist", ["sq_euclidean", "euclidean"])
    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_finite_differences(self, dist, seed):
        g = torch.Generator().manual_seed(seed)
        sup = torch.randn(6, 4, generator=g, dtype=torch.float64)
        q = torch.randn(6, 4, generator=g, dtype=torch.float64,
                        requires_grad=True)
        ys, yq = [0, 0, 1, 1, 2, 2], [0, 1, 2, 0, 1, 2]
        proto_loss(sup, ys, q, yq, dist).backward()
        fd = _central_diff(lambda x: proto_loss(sup, ys, x, yq, dist),
                           q.detach().clone())
        torch.testing.assert_close(q.grad, fd, rtol=1e-4, atol=1e-8)


class TestAccuracy:
    def test_query_copies_support(self):
        sup = torch.eye(4)
        assert episode_accuracy(sup, range(4), sup.clone(), range(4)) == 1.0

    def test_wrong_nearest(self):
        assert episode_accuracy(torch.tensor([[0.0], [1.0]]), [0, 1],
                                torch.tensor([[0.9]]), [0]) == 0.0

    def test_tie_goes_to_lowest(self):
        pred = predict(torch.tensor([[1.0], [-1.0], [1.0]]), [2, 0, 1],
                       torch.tensor([[0.0]]))
        assert pred.tolist() == [0]

    def test_random_embeddings_chance(self):
        rng = np.random.default_rng(0)
        acc = []
        for _ in range(2000):
            sup = torch.from_numpy(rng.normal(size=(5, 8)))
            q = torch.from_numpy(rng.normal(size=(15, 8)))
            acc.append(episode_accuracy(sup, range(5), q,
                                        np.repeat(np.arange(5), 3)))
        assert np.mean(acc) == pytest.approx(0.2, abs=0.02)

    def test_evaluate_episode(self, toy_split, rng):
        from dapn.data import sample_episode
        ep = sample_episode(toy_split.test_pool, 4, 2, 3, rng)
        # oracle embedder: one-hot class id, fed in episode order
        s_ids = [s.class_id for s in ep.support]
        q_ids = [s.class_id for s in ep.query]
        feeds = iter([s_ids, q_ids])
        acc = evaluate_episode(
            ep, lambda imgs: torch.nn.functional.one_hot(
                torch.tensor(next(feeds)), 16).double())
        assert acc == 1.0
