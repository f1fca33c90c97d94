"""Provider views of the population: K-means segments, dataplan tiers, categories.

A provider that models the market at level of detail L sees L representative
clusters instead of the J ground-truth groups. Cluster profiles are
population-weighted means; cluster sizes and session rates are sums.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from .users import UserGroup

log = logging.getLogger(__name__)

DEFAULT_FEATURES = ("w_R", "h", "w_V", "n")
HOURS_PER_MONTH = 720.0  # 30-day month

CATEGORIES = ("business", "low-profile", "value-for-money", "lenient")


@dataclass
class ProviderView:
    provider: int
    level: int
    clusters: list[UserGroup]
    mapping: np.ndarray  # cluster index of each ground-truth group
    inertia: float = 0.0  # weighted within-cluster sum of squares, standardized units

    def to_dict(self) -> dict:
        return {
            "provider": self.provider,
            "level": self.level,
            "inertia": self.inertia,
            "mapping": [int(m) for m in self.mapping],
            "clusters": [
                {k: float(v) if k != "id" else int(v) for k, v in vars(c).items()} for c in self.clusters
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _feature_matrix(groups: Sequence[UserGroup], features: Sequence[str]) -> np.ndarray:
    x = np.array([[getattr(g, f) for f in features] for g in groups], dtype=float)
    return x.reshape(len(groups), len(features))


def standardized_features(groups: Sequence[UserGroup], features=DEFAULT_FEATURES) -> np.ndarray:
    """Size-weighted z-scores of the chosen profile fields; constant fields are dropped."""
    x = _feature_matrix(groups, features)
    w = np.array([g.size for g in groups], dtype=float)
    w = w / w.sum() if w.sum() > 0 else np.full(len(groups), 1.0 / len(groups))
    mean = w @ x
    std = np.sqrt(w @ (x - mean) ** 2)
    keep = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    return (x[:, keep] - mean[keep]) / std[keep]


def merge_groups(groups: Sequence[UserGroup], cluster_id: int = 0) -> UserGroup:
    """One group standing for ``groups``: N-weighted profile, summed size and rate."""
    size = np.array([g.size for g in groups], dtype=float)
    w = size / size.sum() if size.sum() > 0 else np.full(len(groups), 1.0 / len(groups))

    def avg(name):
        return float(w @ np.array([getattr(g, name) for g in groups], dtype=float))

    return UserGroup(
        id=cluster_id,
        size=float(size.sum()),
        w_R=avg("w_R"),
        h=avg("h"),
        tau=avg("tau"),
        w_V=avg("w_V"),
        w_P=avg("w_P"),
        session_rate=float(sum(g.session_rate for g in groups)),
        demand_mb=avg("demand_mb"),
        n=avg("n"),
    )


def _inertia(x: np.ndarray, weights: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    for c in np.unique(labels):
        m = labels == c
        w = weights[m]
        centre = (w @ x[m]) / w.sum() if w.sum() > 0 else x[m].mean(axis=0)
        total += float(w @ np.sum((x[m] - centre) ** 2, axis=1))
    return total


def cluster_population(
    groups: Sequence[UserGroup],
    level: int,
    seed: int = 0,
    provider: int = 0,
    features: Sequence[str] = DEFAULT_FEATURES,
    n_init: int = 10,
) -> ProviderView:
    """Segment ``groups`` into ``level`` clusters with size-weighted K-means.

    Groups are put in a canonical order before clustering and clusters are
    numbered by their centroid, so the view does not depend on input order.
    """
    groups = list(groups)
    n = len(groups)
    if not 1 <= level <= n:
        raise ValueError(f"level of detail must lie in [1, {n}], got {level}")
    x = standardized_features(groups, features)
    size = np.array([g.size for g in groups], dtype=float)

    if level == n:
        labels = np.arange(n)
    elif level == 1 or x.shape[1] == 0:
        labels = np.zeros(n, dtype=int)
    else:
        raw = _feature_matrix(groups, features)
        order = np.lexsort(raw.T[::-1])
        km = KMeans(n_clusters=level, init="k-means++", n_init=n_init, random_state=seed)
        labels = np.empty(n, dtype=int)
        labels[order] = km.fit_predict(x[order], sample_weight=size[order])
    if level == n:
        relabel = np.arange(n)
    else:
        # number clusters by their centroid in feature space
        cent = np.array([size[labels == c] @ x[labels == c] / max(size[labels == c].sum(), 1e-300)
                         for c in range(labels.max() + 1)])
        rank = np.lexsort(cent.T[::-1]) if cent.shape[1] else np.arange(len(cent))
        relabel = np.empty_like(rank)
        relabel[rank] = np.arange(len(rank))
    labels = relabel[labels]
    n_clusters = int(labels.max()) + 1
    if n_clusters < level:
        log.warning("only %d distinct clusters for level %d", n_clusters, level)
    if level == n:
        clusters = [replace(g, id=k) for k, g in enumerate(groups)]
    else:
        clusters = [merge_groups([g for g, lab in zip(groups, labels) if lab == c], c) for c in range(n_clusters)]
    inertia = 0.0 if level == n else _inertia(x, size, labels)
    return ProviderView(provider, level, clusters, labels, inertia)


def monthly_demand(n, mean_rate: float, session_mb: float = 10.0):
    """MB per member per month for normalized rate ``n`` at ``mean_rate`` sessions/hour."""
    return np.asarray(n, dtype=float) * mean_rate * HOURS_PER_MONTH * session_mb


def dataplan_tiers(groups: Sequence[UserGroup], n_plans: int, mean_rate: float, session_mb: float = 10.0):
    """Plan limits D_1..D_S in MB/month at equal percentiles of the group n values.

    Plan s serves groups between the (s-1)/S and s/S quantiles; the last plan
    is unbounded. With no traffic (mean_rate = 0) every demand is 0 and falls
    into the first plan; limits are then expressed per unit mean rate.
    """
    if n_plans < 1:
        raise ValueError("need at least one dataplan")
    if n_plans == 1:
        return np.array([np.inf])
    n = np.array([g.n for g in groups], dtype=float)
    q = np.percentile(n, 100.0 * np.arange(1, n_plans) / n_plans, method="inverted_cdf")
    if np.any(np.diff(q) <= 0):
        raise ValueError(f"n values too concentrated for {n_plans} distinct plans")
    unit = mean_rate if mean_rate > 0 else 1.0
    return np.append(monthly_demand(q, unit, session_mb), np.inf)


def categorize_groups(groups: Sequence[UserGroup]) -> list[str]:
    """Quadrant of each group in the (w_R, h) plane, split at the medians.

    Values equal to the median count as low.
    """
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    w = np.array([g.w_R for g in groups], dtype=float)
    h = np.array([g.h for g in groups], dtype=float)
    mw, mh = np.median(w), np.median(h)
    ties = int(np.sum(w == mw) + np.sum(h == mh))
    if ties:
        log.info("%d profile values sit on a median; assigned to the lower side", ties)
    high_w, high_h = w > mw, h > mh
    out = []
    for a, b in zip(high_w, high_h):
        if a and not b:
            out.append("business")
        elif b and not a:
            out.append("low-profile")
        elif not a:
            out.append("value-for-money")
        else:
            out.append("lenient")
    return out


def category_shares(categories: Sequence[str], z, sizes) -> dict[str, np.ndarray]:
    """Per-category strategy shares, sum_j in cat z_ji N_j / sum_j in cat N_j."""
    z = np.asarray(z, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    cats = np.asarray(categories)
    out = {}
    for c in CATEGORIES:
        m = cats == c
        if m.any() and sizes[m].sum() > 0:
            out[c] = sizes[m] @ z[m] / sizes[m].sum()
        else:
            out[c] = np.full(z.shape[1], np.nan)
    return out
