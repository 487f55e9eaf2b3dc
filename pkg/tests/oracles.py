"""Independent scalar reference implementations used to pin expected values.

Everything here is written with explicit Python loops and ``math`` calls so
it shares no code path with the vectorized package implementations.
"""

from collections import Counter
import math

import numpy as np


def cosine(a, b) -> float:
    na = math.sqrt(sum(float(x) * float(x) for x in a))
    nb = math.sqrt(sum(float(x) * float(x) for x in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(float(x) * float(y) for x, y in zip(a, b)) / (na * nb)


def nt_xent_oracle(z1, z2, tau) -> float:
    views = [list(row) for row in z1] + [list(row) for row in z2]
    n = len(z1)
    m = 2 * n
    total = 0.0
    for a in range(m):
        counterpart = a + n if a < n else a - n
        num = math.exp(cosine(views[a], views[counterpart]) / tau)
        den = sum(
            math.exp(cosine(views[a], views[k]) / tau) for k in range(m) if k != a
        )
        total += -math.log(num / den)
    return total / m


def cmc_oracle(z_i, z_s, tau, reduction="mean") -> float:
    n = len(z_i)
    total = 0.0
    for j in range(n):
        for anchor, others in ((z_i[j], z_s), (z_s[j], z_i)):
            num = math.exp(cosine(anchor, others[j]) / tau)
            den = sum(math.exp(cosine(anchor, others[k]) / tau) for k in range(n))
            total += -math.log(num / den)
    return total / n if reduction == "mean" else total


def topk_oracle(matrix, j, k) -> list[int]:
    """Exhaustive sort of row j (diagonal excluded, ties to the lowest index)."""
    candidates = [i for i in range(len(matrix)) if i != j]
    ranked = sorted(candidates, key=lambda i: (-float(matrix[j][i]), i))
    return sorted(ranked[:k])


def cmkm_oracle(z_i, z_s, s_i, s_s, k, tau, use_intra_negatives, reduction="mean") -> float:
    n = len(z_i)
    total = 0.0
    for j in range(n):
        top_i = topk_oracle(s_i, j, k)
        top_s = topk_oracle(s_s, j, k)
        mined = set(top_i) | set(top_s)
        rest = [x for x in range(n) if x != j and x not in mined]
        for anchor, cross, intra, cross_top, intra_top in (
            (z_i[j], z_s, z_i, top_s, top_i),
            (z_s[j], z_i, z_s, top_i, top_s),
        ):
            num = math.exp(cosine(anchor, cross[j]) / tau)
            num += sum(math.exp(cosine(anchor, cross[l]) / tau) for l in cross_top)
            num += sum(math.exp(cosine(anchor, intra[l]) / tau) for l in intra_top)
            den = num + sum(math.exp(cosine(anchor, cross[l]) / tau) for l in rest)
            if use_intra_negatives:
                den += sum(math.exp(cosine(anchor, intra[l]) / tau) for l in rest)
            total += -math.log(num / den)
    return total / n if reduction == "mean" else total


def cmc_from_similarities_oracle(cross_sim, tau) -> float:
    """Mean two-direction InfoNCE evaluated directly on a similarity matrix."""
    n = len(cross_sim)
    total = 0.0
    for j in range(n):
        num = math.exp(cross_sim[j][j] / tau)
        den = sum(math.exp(cross_sim[j][k] / tau) for k in range(n))
        total += -math.log(num / den)
        den_t = sum(math.exp(cross_sim[k][j] / tau) for k in range(n))
        total += -math.log(num / den_t)
    return total / n


def knn_oracle(train_features, train_labels, test_features, k) -> np.ndarray:
    predictions = []
    for query in test_features:
        sims = [cosine(query, row) for row in train_features]
        ranked = sorted(range(len(sims)), key=lambda i: (-sims[i], i))[:k]
        votes = Counter(int(train_labels[i]) for i in ranked)
        top = max(votes.values())
        tied = {label for label, count in votes.items() if count == top}
        predictions.append(next(int(train_labels[i]) for i in ranked if int(train_labels[i]) in tied))
    return np.asarray(predictions)


def finite_difference_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, grad_flat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        f_plus = fn(x)
        flat[i] = original - eps
        f_minus = fn(x)
        flat[i] = original
        grad_flat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def random_guidance_matrix(rng: np.random.Generator, n: int, d: int = 4) -> np.ndarray:
    """Valid guidance matrix: cosine similarities of random unit vectors."""
    vectors = rng.standard_normal((n, d))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    sim = vectors @ vectors.T
    sim = (sim + sim.T) / 2.0
    np.fill_diagonal(sim, 1.0)
    return np.clip(sim, -1.0, 1.0)
