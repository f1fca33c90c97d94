import json

import numpy as np
import pytest

from wimarket.scenario import ProfileSpec, ScenarioSpec, sample_population
from wimarket.segmentation import (
    CATEGORIES,
    _inertia,
    categorize_groups,
    category_shares,
    cluster_population,
    dataplan_tiers,
    merge_groups,
    monthly_demand,
    standardized_features,
)
from wimarket.users import UserGroup

CORR = [[1.0, -0.85, 0.0], [-0.85, 1.0, 0.0], [0.0, 0.0, 1.0]]


def population(groups=100, seed=0, n_std=0.0, corr=CORR, rate=0.5):
    spec = ScenarioSpec(groups=groups, population=1e5, profile=ProfileSpec(std=[7.6, 0.3, n_std], correlation=corr))
    return sample_population(spec, seed, rate)


# clustering

def test_full_detail_returns_the_groups():
    groups = population(20)
    view = cluster_population(groups, 20)
    assert view.level == 20 and view.inertia == 0.0
    for g, c in zip(groups, view.clusters):
        assert (c.size, c.w_R, c.h, c.n, c.session_rate) == (g.size, g.w_R, g.h, g.n, g.session_rate)
    np.testing.assert_array_equal(view.mapping, np.arange(20))


def test_single_cluster_is_the_weighted_mean():
    rng = np.random.default_rng(0)
    groups = [UserGroup(j, float(rng.uniform(1, 10)), w_R=float(rng.uniform(10, 50)), h=float(rng.uniform(0.1, 1)),
                        session_rate=float(rng.uniform(0, 5)), n=float(rng.uniform(0.5, 1.5))) for j in range(12)]
    view = cluster_population(groups, 1)
    (c,) = view.clusters
    size = np.array([g.size for g in groups])
    assert c.size == pytest.approx(size.sum(), rel=1e-14)
    assert c.w_R == pytest.approx(size @ [g.w_R for g in groups] / size.sum(), rel=1e-12)
    assert c.h == pytest.approx(size @ [g.h for g in groups] / size.sum(), rel=1e-12)
    assert c.session_rate == pytest.approx(sum(g.session_rate for g in groups), rel=1e-12)


def test_five_clusters_beat_random_assignments():
    groups = population(100)
    view = cluster_population(groups, 5, seed=0)
    x = standardized_features(groups)
    w = np.array([g.size for g in groups])
    rng = np.random.default_rng(1)
    for _ in range(100):
        labels = rng.integers(0, 5, len(groups))
        assert view.inertia <= _inertia(x, w, labels)


def test_level_out_of_range():
    groups = population(10)
    with pytest.raises(ValueError):
        cluster_population(groups, 11)
    with pytest.raises(ValueError):
        cluster_population(groups, 0)


def test_constant_features_are_dropped():
    groups = population(30)  # n and w_V constant
    assert standardized_features(groups).shape == (30, 2)


def test_merge_conserves_rate_and_size():
    groups = population(8)
    m = merge_groups(groups)
    assert m.size == pytest.approx(sum(g.size for g in groups))
    assert m.session_rate == pytest.approx(sum(g.session_rate for g in groups))


def test_view_json_round_trip():
    view = cluster_population(population(20), 5)
    data = json.loads(view.to_json())
    assert data["level"] == 5 and len(data["clusters"]) == 5 and len(data["mapping"]) == 20


def test_same_seed_same_view():
    groups = population(40)
    a, b = cluster_population(groups, 9, seed=3), cluster_population(groups, 9, seed=3)
    np.testing.assert_array_equal(a.mapping, b.mapping)


# dataplan tiers

def test_one_plan_is_unbounded():
    assert dataplan_tiers(population(20), 1, 0.5).tolist() == [np.inf]


def test_two_plans_split_at_the_median():
    groups = population(200, n_std=0.2, seed=4)
    d = dataplan_tiers(groups, 2, 1.0)
    assert np.isinf(d[-1])
    assert d[0] / monthly_demand(1.0, 1.0) == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("seed", range(5))
def test_three_plans_balance_occupancy(seed):
    rate = 0.8
    groups = population(20, n_std=0.2, seed=seed, rate=rate)
    d = dataplan_tiers(groups, 3, rate)
    demand = np.array([g.demand_mb for g in groups])
    # count groups per tier by the interval definition
    lo = np.concatenate([[0.0], d[:-1]])
    counts = [int(np.sum((demand > a) & (demand <= b))) for a, b in zip(lo, d)]
    assert sum(counts) == 20
    assert all(abs(c - 20 / 3) <= 2 for c in counts)


def test_tiers_at_zero_demand_stay_increasing():
    groups = population(20, n_std=0.2, rate=0.0)
    d = dataplan_tiers(groups, 3, 0.0)
    assert np.all(np.diff(d) > 0)


def test_constant_demand_cannot_split():
    with pytest.raises(ValueError):
        dataplan_tiers(population(20), 3, 1.0)


def test_monthly_demand_units():
    assert monthly_demand(1.0, 1.0) == pytest.approx(720 * 10.0)


# categories

def _g(j, w_R, h):
    return UserGroup(j, 1.0, w_R=w_R, h=h)


def test_corner_groups():
    groups = [_g(0, 50, 0.1), _g(1, 10, 0.1), _g(2, 10, 1.2), _g(3, 50, 1.2), _g(4, 30, 0.6)]
    cats = categorize_groups(groups)
    assert cats[0] == "business"
    assert cats[1] == "value-for-money"
    assert cats[2] == "low-profile"
    assert cats[3] == "lenient"


def test_four_quadrants_one_each():
    groups = [_g(0, 50, 0.1), _g(1, 10, 0.1), _g(2, 10, 1.2), _g(3, 50, 1.2)]
    assert sorted(categorize_groups(groups)) == sorted(CATEGORIES)


def test_single_group_rejected():
    with pytest.raises(ValueError):
        categorize_groups([_g(0, 1, 1)])


def test_category_shares_are_weighted_means():
    cats = ["business", "business", "lenient", "value-for-money"]
    z = np.array([[0.2, 0.8], [0.6, 0.4], [0.5, 0.5], [1.0, 0.0]])
    out = category_shares(cats, z, [1.0, 3.0, 2.0, 2.0])
    np.testing.assert_allclose(out["business"], [0.5, 0.5])
    assert np.all(np.isnan(out["low-profile"]))
