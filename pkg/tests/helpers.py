"""Small markets and independent reference computations for the tests."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from wimarket.queueing import (
    BaseStation,
    MobilityModel,
    ProviderNetwork,
    handover_rates,
    hexagon_cell,
    mobility_stationary,
    service_rate,
)
from wimarket.users import Market, UserGroup, choice_probabilities

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def ring_network(n_cells: int, bandwidth: float, speed: float = 5.0, spacing: float = 1.6) -> ProviderNetwork:
    area, perimeter = hexagon_cell(spacing)
    routing = np.zeros((n_cells, n_cells))
    if n_cells > 1:
        for k in range(n_cells):
            routing[k, (k + 1) % n_cells] += 0.5
            routing[k, (k - 1) % n_cells] += 0.5
        np.fill_diagonal(routing, 0.0)
        routing /= routing.sum(axis=1, keepdims=True)
    stations = [BaseStation(k, (spacing * k, 0.0), bandwidth, area, perimeter) for k in range(n_cells)]
    mu = service_rate(np.full(n_cells, bandwidth))
    v = handover_rates(np.full(n_cells, area), perimeter, speed) if n_cells > 1 else np.zeros(1)
    omega = mobility_stationary(routing, mu + v)
    return ProviderNetwork(stations, MobilityModel(routing, omega, speed), mu, v)


def random_network(rng, n_cells: int, per_group: int | None = None) -> ProviderNetwork:
    """Connected random cell graph with random bandwidths and handover rates."""
    adj = np.zeros((n_cells, n_cells), dtype=bool)
    for k in range(1, n_cells):
        m = rng.integers(k)
        adj[k, m] = adj[m, k] = True
    extra = rng.random((n_cells, n_cells)) < 0.3
    adj |= extra | extra.T
    np.fill_diagonal(adj, False)
    routing = adj / adj.sum(axis=1, keepdims=True)
    bw = rng.uniform(10.0, 30.0, n_cells)
    stations = [BaseStation(k, (float(k), 0.0), float(bw[k]), 2.2, 5.5) for k in range(n_cells)]
    mu = service_rate(bw)
    v = rng.uniform(0.0, 3.0, n_cells)
    if per_group:
        omega = rng.dirichlet(np.ones(n_cells), size=per_group)
    else:
        omega = mobility_stationary(routing, mu + v)
    return ProviderNetwork(stations, MobilityModel(routing, omega, 5.0), mu, v)


def random_groups(rng, n_groups: int, load: float = 1.0, w_V: float = 0.0) -> list[UserGroup]:
    return [
        UserGroup(
            id=j,
            size=float(rng.uniform(500, 5000)),
            w_R=float(rng.uniform(10, 50)),
            h=float(rng.uniform(0.05, 1.2)),
            w_V=float(w_V * rng.random()),
            session_rate=float(load * rng.uniform(1.0, 20.0)),
            demand_mb=float(rng.uniform(100, 3000)),
        )
        for j in range(n_groups)
    ]


def damped_fixed_point(market: Market, price_mat, epsilon: float, alpha: float = 0.1, tol: float = 1e-13, max_iter=200000):
    """z <- (1 - alpha) z + alpha softmax(u(z)/eps) from the uniform profile."""
    z = np.full((market.n_groups, market.n_providers + 1), 1.0 / (market.n_providers + 1))
    for _ in range(max_iter):
        new = (1 - alpha) * z + alpha * choice_probabilities(market.utilities(z, price_mat), epsilon)
        if np.max(np.abs(new - z)) < tol:
            return new
        z = new
    raise RuntimeError("damped iteration did not settle")


def logit_closed_form(u, epsilon):
    """1 / (1 + sum_{k != i} exp((u_k - u_i)/eps)), written out term by term."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    for j in range(u.shape[0]):
        for i in range(u.shape[1]):
            s = sum(math.exp((u[j, k] - u[j, i]) / epsilon) for k in range(u.shape[1]) if k != i)
            out[j, i] = 1.0 / (1.0 + s)
    return out


def ctmc_stationary(a, mu, v, routing, n_max: int) -> np.ndarray:
    """Stationary vector of the explicit truncated CTMC for a 2-cell network.

    Transitions: fresh arrival a_k, completion mu_k and handover v_k p*_km,
    both of the latter only when n_k >= 1 (one PS server per cell).
    Arrivals that would leave the box are dropped.
    """
    size = n_max + 1
    n_states = size * size
    gen = np.zeros((n_states, n_states))

    def idx(n1, n2):
        return n1 * size + n2

    for n1 in range(size):
        for n2 in range(size):
            s = idx(n1, n2)
            n = (n1, n2)
            for k in range(2):
                up = list(n)
                up[k] += 1
                if up[k] <= n_max:
                    gen[s, idx(*up)] += a[k]
                if n[k] >= 1:
                    down = list(n)
                    down[k] -= 1
                    gen[s, idx(*down)] += mu[k]
                    m = 1 - k
                    moved = list(down)
                    moved[m] += 1
                    if moved[m] <= n_max and routing[k, m] > 0:
                        gen[s, idx(*moved)] += v[k] * routing[k, m]
            gen[s, s] = -gen[s].sum()
    lhs = gen.T.copy()
    lhs[-1] = 1.0
    rhs = np.zeros(n_states)
    rhs[-1] = 1.0
    return np.linalg.solve(lhs, rhs).reshape(size, size)


def lattice_count(width, height, spacing) -> int:
    """Points i*(a, 0) + j*(a/2, a*sqrt3/2) inside the rectangle, by brute enumeration."""
    span = int(2 * (width + height) / spacing) + 3
    i, j = np.meshgrid(np.arange(-span, span + 1), np.arange(-span, span + 1), indexing="ij")
    x = spacing * (i + 0.5 * j)
    y = spacing * math.sqrt(3) / 2 * j
    tol = 1e-7 * spacing
    inside = (x >= -tol) & (x <= width + tol) & (y >= -tol) & (y <= height + tol)
    return int(inside.sum())


def random_waypoint_crossings(spacing, speed, hours, n_users=40, seed=0, step_km=0.02):
    """Cell changes per hour for users doing random waypoint on a hexagonal tiling."""
    rng = np.random.default_rng(seed)
    size = 40 * spacing
    row = spacing * math.sqrt(3) / 2
    sites = []
    for r in range(int(size / row) + 3):
        for c in range(int(size / spacing) + 3):
            sites.append((c * spacing + (spacing / 2 if r % 2 else 0.0), r * row))
    tree = cKDTree(np.array(sites))
    total_km = speed * hours
    crossings, hours_done = 0, 0.0
    for _ in range(n_users):
        pos = rng.uniform(0.2 * size, 0.8 * size, 2)
        travelled = 0.0
        cell = tree.query(pos)[1]
        while travelled < total_km:
            dest = rng.uniform(0.1 * size, 0.9 * size, 2)
            dist = float(np.hypot(*(dest - pos)))
            n = max(int(dist / step_km), 1)
            path = pos + np.outer(np.arange(1, n + 1) / n, dest - pos)
            cells = tree.query(path)[1]
            seq = np.concatenate([[cell], cells])
            crossings += int(np.count_nonzero(seq[1:] != seq[:-1]))
            cell, pos = cells[-1], dest
            travelled += dist
        hours_done += travelled / speed
    return crossings / hours_done
