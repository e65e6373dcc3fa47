"""Contrastive objective: worked examples, oracles and invariants.

The oracle functions here recompute every quantity scalar-by-scalar with
plain Python loops (no vectorization, no torch) so they stay independent of
the implementation under test.
"""

import math

import numpy as np
import pytest
import torch

from c2am.loss import (
    CLAMP_EPS,
    LossBreakdown,
    SimilarityMatrix,
    cosine_sim,
    negative_loss,
    positive_loss,
    rank_weights,
    total_loss,
)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def oracle_cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = max(math.sqrt(sum(x * x for x in a)), 1e-8)
    nb = max(math.sqrt(sum(y * y for y in b)), 1e-8)
    return min(1.0, max(-1.0, dot / (na * nb)))


def oracle_rank_weights(pair_sims, alpha):
    """Naive per-pair rank counting: rank = #pairs strictly more similar."""
    weights = []
    for s in pair_sims:
        rank = sum(1 for other in pair_sims if other > s)
        weights.append(math.exp(-alpha * rank))
    return weights


def _clamp(s):
    return min(1.0 - CLAMP_EPS, max(CLAMP_EPS, s))


def oracle_total_loss(v_f, v_b, alpha):
    """Scalar-by-scalar recomputation of every component."""
    n = len(v_f)
    l_neg = -sum(
        math.log(1.0 - _clamp(oracle_cosine(v_f[i], v_b[j])))
        for i in range(n)
        for j in range(n)
    ) / (n * n)

    def pos(reps):
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        sims = {p: oracle_cosine(reps[p[0]], reps[p[1]]) for p in pairs}
        w = {}
        for p in pairs:
            rank = sum(1 for q in pairs if sims[q] > sims[p])
            w[p] = math.exp(-alpha * rank)
        total = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    p = (min(i, j), max(i, j))
                    total += w[p] * math.log(_clamp(sims[p]))
        return -total / (n * (n - 1))

    l_pos_f = pos(v_f)
    l_pos_b = pos(v_b)
    return l_neg, l_pos_f, l_pos_b


def vectors_with_cosine(s):
    """Two unit vectors with an exact prescribed cosine."""
    angle = math.acos(s)
    return [1.0, 0.0], [math.cos(angle), math.sin(angle)]


# ---------------------------------------------------------------------------
# cosine similarity
# ---------------------------------------------------------------------------

class TestCosineSim:
    def test_identical_direction(self):
        assert float(cosine_sim([1.0, 0.0], [1.0, 0.0])) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert float(cosine_sim([1.0, 0.0], [0.0, 1.0])) == pytest.approx(0.0)

    def test_45_degrees(self):
        assert float(cosine_sim([1.0, 1.0], [1.0, 0.0])) == pytest.approx(0.70710678, abs=1e-7)

    def test_zero_vector_gives_zero(self):
        assert float(cosine_sim([0.0, 0.0], [1.0, 2.0])) == 0.0

    def test_matches_oracle_on_random_vectors(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a = rng.standard_normal(5)
            b = rng.standard_normal(5)
            assert float(cosine_sim(a, b)) == pytest.approx(oracle_cosine(a, b), abs=1e-12)


# ---------------------------------------------------------------------------
# negative loss
# ---------------------------------------------------------------------------

class TestNegativeLoss:
    def test_n1_orthogonal_is_zero(self):
        v_f = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        v_b = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
        assert float(negative_loss(v_f, v_b)) == pytest.approx(0.0, abs=1e-6)

    def test_n1_half_similarity(self):
        a, b = vectors_with_cosine(0.5)
        value = negative_loss(
            torch.tensor([a], dtype=torch.float64), torch.tensor([b], dtype=torch.float64)
        )
        assert float(value) == pytest.approx(0.69314718, abs=1e-7)

    def test_n2_all_half(self):
        # v_f rows equal, v_b rows equal, cos(f, b) = 0.5 for all four pairs
        a, b = vectors_with_cosine(0.5)
        v_f = torch.tensor([a, a], dtype=torch.float64)
        v_b = torch.tensor([b, b], dtype=torch.float64)
        assert float(negative_loss(v_f, v_b)) == pytest.approx(0.69314718, abs=1e-7)

    def test_finite_for_identical_and_zero_vectors(self):
        v = torch.tensor([[1.0, 1.0], [0.0, 0.0]], dtype=torch.float64)
        assert math.isfinite(float(negative_loss(v, v)))


# ---------------------------------------------------------------------------
# rank weights
# ---------------------------------------------------------------------------

def sim_matrix_from_pairs(n, pair_values):
    """Symmetric matrix with the given upper-triangle values (diagonal 1)."""
    m = np.eye(n)
    it = iter(pair_values)
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = next(it)
    return m


class TestRankWeights:
    def test_alpha_zero_all_ones_exact(self):
        rng = np.random.default_rng(3)
        m = sim_matrix_from_pairs(4, rng.uniform(0, 1, 6))
        rw = rank_weights(m, 0.0)
        assert all(w == 1.0 for w in rw.weights.values())

    def test_three_pairs_alpha_quarter(self):
        m = sim_matrix_from_pairs(3, [0.9, 0.5, 0.1])  # pairs (0,1), (0,2), (1,2)
        rw = rank_weights(m, 0.25)
        assert rw.weights[(0, 1)] == pytest.approx(1.0)
        assert rw.weights[(0, 2)] == pytest.approx(0.77880078, abs=1e-8)
        assert rw.weights[(1, 2)] == pytest.approx(0.60653066, abs=1e-8)

    def test_ties_share_best_rank(self):
        m = sim_matrix_from_pairs(2, [0.4])
        # single pair trivially rank 0; two tied pairs need n=3 with one low odd pair
        m = sim_matrix_from_pairs(3, [0.4, 0.4, -0.5])
        rw = rank_weights(m, 1.0)
        assert rw.weights[(0, 1)] == pytest.approx(1.0)
        assert rw.weights[(0, 2)] == pytest.approx(1.0)
        assert rw.weights[(1, 2)] == pytest.approx(math.exp(-2.0))

    def test_kind_checked(self):
        m = sim_matrix_from_pairs(3, [0.4, 0.2, 0.1])
        with pytest.raises(ValueError, match="positive pairs"):
            rank_weights(SimilarityMatrix(values=m, kind="neg"), 0.5)
        rank_weights(SimilarityMatrix(values=m, kind="fg-fg"), 0.5)  # accepted

    def test_too_few_samples(self):
        with pytest.raises(ValueError, match="at least 2"):
            rank_weights(np.eye(1), 0.5)

    def test_matrix_respects_pair_symmetry(self):
        m = sim_matrix_from_pairs(4, [0.6, 0.5, 0.4, 0.3, 0.2, 0.1])
        rw = rank_weights(m, 0.3)
        full = rw.as_matrix(4)
        assert np.array_equal(full, full.T)
        assert np.all(np.diag(full) == 0)

    def test_monotone_in_similarity(self):
        """Strictly higher similarity implies strictly higher weight when alpha > 0."""
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(3, 8))
            vals = rng.uniform(0, 1, n * (n - 1) // 2)
            rw = rank_weights(sim_matrix_from_pairs(n, vals), 0.7)
            sims = {}
            it = iter(vals)
            for i in range(n):
                for j in range(i + 1, n):
                    sims[(i, j)] = next(it)
            for p in sims:
                for q in sims:
                    if sims[p] > sims[q]:
                        assert rw.weights[p] > rw.weights[q]


# ---------------------------------------------------------------------------
# positive loss
# ---------------------------------------------------------------------------

class TestPositiveLoss:
    def test_identical_vectors_near_zero(self):
        reps = torch.tensor([[1.0, 2.0], [1.0, 2.0]], dtype=torch.float64)
        assert float(positive_loss(reps, 0.4)) <= 1e-6

    def test_n2_similarity_08(self):
        a, b = vectors_with_cosine(0.8)
        reps = torch.tensor([a, b], dtype=torch.float64)
        for alpha in (0.0, 0.2, 1.5):  # single pair always rank 0
            assert float(positive_loss(reps, alpha)) == pytest.approx(0.22314355, abs=1e-7)

    def test_n2_similarity_05_alpha0(self):
        a, b = vectors_with_cosine(0.5)
        reps = torch.tensor([a, b], dtype=torch.float64)
        assert float(positive_loss(reps, 0.0)) == pytest.approx(0.69314718, abs=1e-7)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError, match="at least 2"):
            positive_loss(torch.ones(1, 4), 0.2)

    def test_alpha_zero_equals_unweighted_mean(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            reps = torch.tensor(rng.uniform(0, 1, (5, 7)))
            got = float(positive_loss(reps, 0.0))
            expect = 0.0
            n = 5
            for i in range(n):
                for j in range(n):
                    if i != j:
                        expect += math.log(_clamp(oracle_cosine(reps[i].tolist(), reps[j].tolist())))
            expect = -expect / (n * (n - 1))
            assert got == pytest.approx(expect, abs=1e-12)


# ---------------------------------------------------------------------------
# total loss
# ---------------------------------------------------------------------------

class TestTotalLoss:
    def test_additivity_exact(self):
        rng = np.random.default_rng(6)
        v_f = torch.tensor(rng.uniform(0, 1, (4, 6)))
        v_b = torch.tensor(rng.uniform(0, 1, (4, 6)))
        lb = total_loss(v_f, v_b, 0.25)
        assert float(lb.l_pos) == float(lb.l_pos_f + lb.l_pos_b)
        assert float(lb.l_total) == float(lb.l_pos + lb.l_neg)

    def test_global_optimum_configuration(self):
        """Identical fg rows, identical bg rows, fg orthogonal to bg: loss ~ 0."""
        v_f = torch.tensor([[1.0, 0.0, 0.0]] * 3, dtype=torch.float64)
        v_b = torch.tensor([[0.0, 1.0, 0.0]] * 3, dtype=torch.float64)
        lb = total_loss(v_f, v_b, 0.2)
        assert float(lb.l_total) == pytest.approx(0.0, abs=1e-5)

    def test_matches_scalar_oracle(self):
        """Vectorized path equals the loop oracle to 1e-9 on random instances."""
        rng = np.random.default_rng(7)
        for _ in range(25):
            v_f = rng.uniform(0, 1, (4, 8))
            v_b = rng.uniform(0, 1, (4, 8))
            lb = total_loss(torch.tensor(v_f), torch.tensor(v_b), 0.25)
            l_neg, l_pos_f, l_pos_b = oracle_total_loss(v_f.tolist(), v_b.tolist(), 0.25)
            assert float(lb.l_neg) == pytest.approx(l_neg, abs=1e-9)
            assert float(lb.l_pos_f) == pytest.approx(l_pos_f, abs=1e-9)
            assert float(lb.l_pos_b) == pytest.approx(l_pos_b, abs=1e-9)

    def test_breakdown_is_loss_breakdown(self):
        lb = total_loss(torch.ones(2, 3), torch.ones(2, 3), 0.0)
        assert isinstance(lb, LossBreakdown)
        assert set(lb.as_floats()) == {"l_neg", "l_pos_f", "l_pos_b", "l_pos", "l_total"}


class TestInvariants:
    def test_polarity_symmetry(self):
        """Swapping roles leaves the total unchanged to 1e-9 (double precision)."""
        rng = np.random.default_rng(8)
        for _ in range(100):
            n = int(rng.integers(2, 9))
            v_f = torch.tensor(rng.uniform(0, 2, (n, 6)))
            v_b = torch.tensor(rng.uniform(0, 2, (n, 6)))
            forward = total_loss(v_f, v_b, 0.3)
            swapped = total_loss(v_b, v_f, 0.3)
            assert abs(float(forward.l_total) - float(swapped.l_total)) < 1e-9
            assert float(forward.l_pos_f) == pytest.approx(float(swapped.l_pos_b), abs=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(2, 8))
            v_f = torch.tensor(rng.uniform(0, 1, (n, 5)))
            v_b = torch.tensor(rng.uniform(0, 1, (n, 5)))
            perm = rng.permutation(n)
            base = total_loss(v_f, v_b, 0.4)
            shuffled = total_loss(v_f[perm], v_b[perm], 0.4)
            for key, value in base.as_floats().items():
                assert abs(value - shuffled.as_floats()[key]) < 1e-9

    def test_clamp_safety_on_degenerate_inputs(self):
        """Finite loss for all-zero, identical, and mixed degenerate representations."""
        cases = [
            torch.zeros(3, 4, dtype=torch.float64),
            torch.ones(3, 4, dtype=torch.float64),
            torch.tensor([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]], dtype=torch.float64),
        ]
        for v_f in cases:
            for v_b in cases:
                lb = total_loss(v_f, v_b, 0.5)
                assert math.isfinite(float(lb.l_total))

    def test_gradients_flow_to_representations(self):
        rng = np.random.default_rng(10)
        v_f = torch.tensor(rng.uniform(0.1, 1, (3, 5)), requires_grad=True)
        v_b = torch.tensor(rng.uniform(0.1, 1, (3, 5)), requires_grad=True)
        total_loss(v_f, v_b, 0.2).l_total.backward()
        assert v_f.grad is not None and torch.isfinite(v_f.grad).all()
        assert v_b.grad is not None and torch.isfinite(v_b.grad).all()

    def test_rank_weights_detached(self):
        """No gradient flows through the sorting that produces the weights."""
        reps = torch.tensor([[1.0, 0.2], [0.8, 0.4], [0.3, 0.9]], dtype=torch.float64, requires_grad=True)
        loss_val = positive_loss(reps, 0.5)
        loss_val.backward()
        assert reps.grad is not None  # gradient exists through the similarities themselves
