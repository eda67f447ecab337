"""k-means with k-means++ seeding, elbow selection and nearest-centroid assignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InsufficientPoints

MAX_ITER = 100
K_CLAMP = (3, 5)
TIE_EPS = 1e-12


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray  # (k, d)
    labels: np.ndarray  # (n,)
    sse_history: tuple[float, ...]
    iterations: int

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def sse(self) -> float:
        return self.sse_history[-1]

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)

    def sizes(self) -> list[int]:
        return [int(np.sum(self.labels == c)) for c in range(self.k)]


def _as_matrix(vectors: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2:
        raise ValueError("vectors must be a 2-D array")
    return x


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _sse(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


def _seed_centroids(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # all remaining points coincide with a centre; pick any unused index
            unused = [i for i in range(n) if i not in chosen]
            idx = int(rng.choice(unused))
        chosen.append(idx)
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _repair_empty(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Move the point farthest from its centroid into each empty cluster."""
    labels = labels.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        sizes = np.bincount(labels, minlength=k)
        dist = ((x - centroids[labels]) ** 2).sum(axis=1)
        dist[sizes[labels] < 2] = -1.0  # never empty another cluster
        labels[int(np.argmax(dist))] = c
    return labels


def kmeans(vectors: Sequence[Sequence[float]] | np.ndarray, k: int, seed: int = 0,
           max_iter: int = MAX_ITER) -> ClusterModel:
    """Lloyd iterations from k-means++ seeds.

    Stops when assignments no longer change or after ``max_iter`` updates.
    The within-cluster SSE after every update is recorded and checked to be
    non-increasing.
    """
    x = _as_matrix(vectors)
    n = len(x)
    if k < 1 or k > n:
        raise InsufficientPoints(f"k={k} needs between 1 and {n} points")
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(x, k, rng)
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    history: list[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        labels = _repair_empty(x, centroids, labels, k)
        centroids = np.vstack([x[labels == c].mean(axis=0) for c in range(k)])
        sse = _sse(x, centroids, labels)
        if history and sse > history[-1] + 1e-9 * max(1.0, history[-1]):
            raise RuntimeError(f"SSE increased from {history[-1]} to {sse}")
        history.append(sse)
        dists = _sq_dists(x, centroids)
        new_labels = np.argmin(dists, axis=1)
        # converged when reassignment cannot strictly lower the SSE (covers ties)
        if np.array_equal(new_labels, labels) or dists.min(axis=1).sum() >= sse - 1e-12 * max(1.0, sse):
            break
        if iterations == max_iter:
            break
        labels = new_labels
    return ClusterModel(centroids, labels, tuple(history), iterations)


@dataclass(frozen=True)
class ElbowResult:
    k: int
    raw_k: int
    clamped: bool
    sse: dict[int, float]

    @property
    def notice(self) -> str:
        if not self.clamped:
            return ""
        return f"elbow chose k={self.raw_k}; clamped to {self.k} (allowed {K_CLAMP[0]}..{K_CLAMP[1]})"


def best_of(vectors: np.ndarray, k: int, seed: int, restarts: int) -> ClusterModel:
    """Lowest-SSE model over ``restarts`` consecutive seeds."""
    models = [kmeans(vectors, k, seed + r) for r in range(max(1, restarts))]
    return min(models, key=lambda m: m.sse)


def select_k_elbow(vectors: Sequence[Sequence[float]] | np.ndarray, k_range: tuple[int, int] = (2, 6),
                   seed: int = 0, restarts: int = 3, clamp: tuple[int, int] = K_CLAMP) -> ElbowResult:
    """Pick k at the largest discrete second difference of the SSE curve.

    Ties go to the smaller k. A range too short to have an interior point
    yields its lower end. The choice is then clamped to ``clamp``.
    """
    x = _as_matrix(vectors)
    lo, hi = k_range
    if lo < 2 or hi < lo or hi > len(x):
        raise InsufficientPoints(f"k range {lo}..{hi} must lie within 2..{len(x)}")
    sse = {k: best_of(x, k, seed, restarts).sse for k in range(lo, hi + 1)}
    raw_k = lo
    best = -np.inf
    for k in range(lo + 1, hi):
        curvature = sse[k - 1] - 2 * sse[k] + sse[k + 1]
        if curvature > best + TIE_EPS:
            best, raw_k = curvature, k
    k = min(max(raw_k, clamp[0]), clamp[1])
    return ElbowResult(k, raw_k, k != raw_k, sse)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def assign_cluster(robot: Sequence[float] | np.ndarray, model: ClusterModel) -> int:
    """Nearest centroid by cosine; ties go to the lower cluster id."""
    r = np.asarray(robot, dtype=float)
    best, best_id = -np.inf, 0
    for cid, centroid in enumerate(model.centroids):
        sim = cosine(r, centroid)
        if sim > best + TIE_EPS:
            best, best_id = sim, cid
    return best_id


def canonical_relabel(labels: Sequence[int], keys: Sequence[str]) -> list[int]:
    """Relabel clusters by descending size, then by their sorted member keys.

    Two clusterings of the same items in different orders get identical
    labels once each item is compared through its key.
    """
    groups: dict[int, list[str]] = {}
    for label, key in zip(labels, keys):
        groups.setdefault(int(label), []).append(key)
    ordered = sorted(groups, key=lambda c: (-len(groups[c]), sorted(groups[c])))
    mapping = {old: new for new, old in enumerate(ordered)}
    return [mapping[int(label)] for label in labels]
