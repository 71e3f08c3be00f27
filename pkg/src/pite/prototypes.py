"""Per-group learnable prototypes and the prototype losses.

Prototypes live in a ``(2, K, d_h)`` array: index 0 is the control group,
index 1 the treated group. Cluster indices are 0-based.

The clustering loss is normalised per cluster::

    L_cluster = sum_t sum_k mean_{i in S_tk} |phi_i - mu_tk|^2

which makes its prototype gradient ``(2/|S_tk|) sum_i (mu_tk - phi_i)``.
Empty clusters contribute nothing.
"""
import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import ConfigError, ShapeError
from .numeric import as_matrix, pairwise_sq_dist

logger = logging.getLogger(__name__)

REMATCH_STRATEGIES = ("index", "greedy", "optimal")


@dataclass
class PrototypeSet:
    mu: np.ndarray

    def __post_init__(self):
        self.mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        if self.mu.ndim != 3 or self.mu.shape[0] != 2 or self.mu.shape[1] < 1:
            raise ShapeError(f"prototypes must have shape (2, K, d_h), got {self.mu.shape}")
        if not np.all(np.isfinite(self.mu)):
            raise ConfigError("prototypes must be finite")

    @property
    def K(self):
        return self.mu.shape[1]

    @property
    def dim(self):
        return self.mu.shape[2]

    def copy(self):
        return PrototypeSet(self.mu.copy())

    def to_dict(self):
        return {
            "K": self.K,
            "dim": self.dim,
            "groups": {
                str(g): [{"index": k, "mu": self.mu[g, k].tolist()} for k in range(self.K)]
                for g in (0, 1)
            },
        }

    @classmethod
    def from_dict(cls, d):
        mu = np.empty((2, d["K"], d["dim"]))
        for g in (0, 1):
            for entry in d["groups"][str(g)]:
                mu[g, entry["index"]] = entry["mu"]
        return cls(mu)


@dataclass
class AssignmentTable:
    """Nearest-prototype index per sample, within the sample's own group."""

    k: np.ndarray
    t: np.ndarray
    K: int

    @property
    def counts(self):
        """``(2, K)`` member counts."""
        out = np.zeros((2, self.K), dtype=np.int64)
        np.add.at(out, (self.t, self.k), 1)
        return out

    def members(self, group, k):
        return np.flatnonzero((self.t == group) & (self.k == k))

    def empty_clusters(self):
        c = self.counts
        return [(g, k) for g in (0, 1) for k in range(self.K) if c[g, k] == 0]


def _groups(t):
    return np.asarray(t).reshape(-1).astype(np.int64)


def assign(phi, t, protos):
    """Nearest same-group prototype; ties go to the smallest index."""
    phi = as_matrix(phi, "phi")
    t = _groups(t)
    if phi.shape[1] != protos.dim:
        raise ShapeError(f"phi has {phi.shape[1]} columns, prototypes have {protos.dim}")
    if t.shape[0] != phi.shape[0]:
        raise ShapeError("t and phi disagree on the number of samples")
    k = np.zeros(phi.shape[0], dtype=np.int64)
    for g in (0, 1):
        idx = np.flatnonzero(t == g)
        if idx.size:
            k[idx] = np.argmin(pairwise_sq_dist(phi[idx], protos.mu[g]), axis=1)
    return AssignmentTable(k=k, t=t, K=protos.K)


def _cluster_terms(phi, table, protos):
    diff = phi - protos.mu[table.t, table.k]
    inv = 1.0 / np.maximum(table.counts, 1)
    return diff, inv[table.t, table.k]


def cluster_loss(phi, table, protos):
    diff, w = _cluster_terms(as_matrix(phi, "phi"), table, protos)
    return float(np.sum(w * np.einsum("ij,ij->i", diff, diff)))


def cluster_loss_grad_mu(phi, table, protos):
    """``(2, K, d_h)`` gradient; zero for empty clusters."""
    diff, w = _cluster_terms(as_matrix(phi, "phi"), table, protos)
    g = np.zeros_like(protos.mu)
    np.add.at(g, (table.t, table.k), -2.0 * w[:, None] * diff)
    return g


def cluster_loss_grad_phi(phi, table, protos):
    diff, w = _cluster_terms(as_matrix(phi, "phi"), table, protos)
    return 2.0 * w[:, None] * diff


def align_loss(protos):
    d = protos.mu[1] - protos.mu[0]
    return float(np.sum(d * d) / protos.K)


def align_loss_grad(protos):
    d = protos.mu[1] - protos.mu[0]
    g = np.empty_like(protos.mu)
    g[1] = 2.0 * d / protos.K
    g[0] = -g[1]
    return g


def diversity_loss(protos):
    """Negative mean ordered-pair squared distance within each group, summed over groups."""
    K = protos.K
    if K < 2:
        logger.info("diversity loss is 0 for K=1 (no prototype pairs)")
        return 0.0
    total = 0.0
    for g in (0, 1):
        total += pairwise_sq_dist(protos.mu[g], protos.mu[g]).sum()
    return float(-total / (K * (K - 1)))


def diversity_loss_grad(protos):
    K = protos.K
    if K < 2:
        return np.zeros_like(protos.mu)
    # each unordered pair appears twice in the ordered sum
    centred = K * protos.mu - protos.mu.sum(axis=1, keepdims=True)
    return -4.0 * centred / (K * (K - 1))


@dataclass
class ProtoLoss:
    cluster: float
    align: float
    div: float
    beta: float
    gamma_div: float

    @property
    def total(self):
        return self.cluster + self.beta * self.align + self.gamma_div * self.div


def proto_loss(phi, table, protos, beta, gamma_div):
    if beta < 0 or gamma_div < 0:
        raise ConfigError("beta and gamma_div must be non-negative")
    return ProtoLoss(
        cluster=cluster_loss(phi, table, protos),
        align=align_loss(protos),
        div=diversity_loss(protos),
        beta=beta,
        gamma_div=gamma_div,
    )


def proto_loss_grads(phi, table, protos, beta, gamma_div):
    """Gradients of the combined prototype loss w.r.t. ``(phi, mu)``."""
    g_mu = cluster_loss_grad_mu(phi, table, protos)
    if beta:
        g_mu += beta * align_loss_grad(protos)
    if gamma_div:
        g_mu += gamma_div * diversity_loss_grad(protos)
    return cluster_loss_grad_phi(phi, table, protos), g_mu


def matching_cost(protos, perm):
    return float(np.sum((protos.mu[1] - protos.mu[0][perm]) ** 2))


def rematch_prototypes(protos, strategy="index"):
    """Permutation ``perm`` pairing treated prototype ``k`` with control prototype ``perm[k]``."""
    K = protos.K
    if strategy not in REMATCH_STRATEGIES:
        raise ConfigError(f"unknown rematch strategy {strategy!r}")
    if strategy == "index":
        return np.arange(K)
    cost = pairwise_sq_dist(protos.mu[1], protos.mu[0])
    if strategy == "optimal":
        rows, cols = linear_sum_assignment(cost)
        perm = np.empty(K, dtype=np.int64)
        perm[rows] = cols
        # keep the identity when it is already optimal, so stable states stay put
        if matching_cost(protos, np.arange(K)) <= matching_cost(protos, perm):
            return np.arange(K)
        return perm
    perm = np.full(K, -1, dtype=np.int64)
    free = np.ones((K, K), dtype=bool)
    for _ in range(K):
        masked = np.where(free, cost, np.inf)
        r, c = np.unravel_index(np.argmin(masked), masked.shape)
        perm[r] = c
        free[r, :] = False
        free[:, c] = False
    return perm


def apply_rematch(protos, perm):
    """Reorder control prototypes so index ``k`` pairs with treated ``k``."""
    mu = protos.mu.copy()
    mu[0] = mu[0][perm]
    return PrototypeSet(mu)


def exhaustive_min_matching(protos):
    """Brute force over all K! pairings; for checks with small K."""
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(protos.K)):
        c = matching_cost(protos, np.array(perm))
        if c < best:
            best, best_perm = c, np.array(perm)
    return best, best_perm


def handle_empty_cluster(protos, table, phi, rng=None):
    """Move each empty prototype onto the group sample farthest from its prototype.

    Samples that are the sole member of their cluster are not eligible, so
    the move never empties another cluster. Returns ``(protos, table)`` with
    assignments recomputed. ``rng`` is accepted for interface symmetry; the
    choice is deterministic.
    """
    empties = table.empty_clusters()
    if not empties:
        return protos, table
    phi = as_matrix(phi, "phi")
    mu = protos.mu.copy()
    used = set()
    for g, k in empties:
        counts = np.bincount(table.k[table.t == g], minlength=protos.K)
        idx = np.flatnonzero(table.t == g)
        idx = np.array([i for i in idx if counts[table.k[i]] > 1 and i not in used], dtype=np.int64)
        if idx.size == 0:
            logger.warning("group %d has no sample to reseed empty prototype %d", g, k)
            continue
        dist = np.sum((phi[idx] - protos.mu[g, table.k[idx]]) ** 2, axis=1)
        pick = idx[int(np.argmax(dist))]
        used.add(pick)
        mu[g, k] = phi[pick]
    new = PrototypeSet(mu)
    return new, assign(phi, table.t, new)


def lloyd_step(phi, t, protos):
    """One assign + exact-centroid update. Empty clusters keep their prototype."""
    phi = as_matrix(phi, "phi")
    table = assign(phi, t, protos)
    mu = protos.mu.copy()
    counts = table.counts
    sums = np.zeros_like(mu)
    np.add.at(sums, (table.t, table.k), phi)
    nz = counts > 0
    mu[nz] = sums[nz] / counts[nz][:, None]
    return PrototypeSet(mu), table


def _kmeanspp(points, K, rng):
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a centre
            nxt = points[rng.integers(n)]
        else:
            nxt = points[rng.choice(n, p=d2 / total)]
        centers.append(nxt)
        d2 = np.minimum(d2, np.sum((points - nxt) ** 2, axis=1))
    return np.array(centers)


def init_prototypes(phi, t, K, rng, lloyd_iters=10):
    """k-means++ seeding per group followed by ``lloyd_iters`` Lloyd iterations."""
    phi = as_matrix(phi, "phi")
    t = _groups(t)
    if K < 1:
        raise ConfigError("K must be >= 1")
    mu = np.empty((2, K, phi.shape[1]))
    for g in (0, 1):
        pts = phi[t == g]
        if pts.shape[0] < K:
            raise ConfigError(f"group {g} has {pts.shape[0]} samples, fewer than K={K}")
        mu[g] = _kmeanspp(pts, K, rng)
    protos = PrototypeSet(mu)
    for _ in range(lloyd_iters):
        protos, _ = lloyd_step(phi, t, protos)
    return protos
