"""Analytic model of a provider's base-station network.

Every BS is an M/M/1 processor-sharing queue. Sessions arrive fresh
(rate ``a``) or by handover from neighbouring cells, and leave either on
completion (rate ``mu``) or by handing over (rate ``v``). The network is an
open Jackson network, so its stationary law is a product of geometric
marginals and the per-group QoS seen by users reduces to closed forms in the
traffic intensities.

Units: rates are sessions/min, bandwidths Mbps, lengths km, speeds km/h.
A session of ``session_mb`` megabytes on a ``B`` Mbps link completes at
``mu = 60 * B / (8 * session_mb)`` sessions/min (25 Mbps, 10 MB -> 18.75).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.csgraph import connected_components

MINUTES_PER_HOUR = 60.0
BITS_PER_BYTE = 8.0


class DegenerateGeometryError(ValueError):
    """Cell or market geometry with zero or negative extent."""


class ReducibleChainError(ValueError):
    """Mobility chain without a unique stationary distribution."""


class UnstableNetworkError(ValueError):
    """Routing that never lets sessions leave, or a queue with rho >= 1."""


@dataclass(frozen=True)
class BaseStation:
    id: int
    position: tuple[float, float]
    bandwidth: float  # Mbps
    cell_area: float  # km^2
    cell_perimeter: float  # km

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError(f"BS {self.id}: bandwidth must be positive")
        if self.cell_area <= 0 or self.cell_perimeter <= 0:
            raise DegenerateGeometryError(f"BS {self.id}: degenerate cell geometry")


@dataclass
class MobilityModel:
    """Where users of a provider sit and how they move between cells.

    ``routing`` is the conditional handover matrix p* (row m: targets of a
    handover out of cell m). ``omega`` is either one location distribution
    shared by every group, shape (K,), or one row per group, shape (J, K).
    """

    routing: np.ndarray
    omega: np.ndarray
    mean_speed: float = 0.0

    def __post_init__(self):
        self.routing = np.asarray(self.routing, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        k = self.routing.shape[0]
        if self.routing.shape != (k, k):
            raise ValueError("routing must be square")
        if np.any(np.diag(self.routing) != 0):
            raise ValueError("routing must have a zero diagonal")
        rows = self.routing.sum(axis=1)
        if k > 1 and np.any(np.abs(rows - 1) > 1e-12):
            raise ValueError("routing rows must sum to 1")
        if self.omega.shape[-1] != k:
            raise ValueError("omega does not match the number of cells")
        if np.any(self.omega < 0) or np.any(np.abs(self.omega.sum(axis=-1) - 1) > 1e-12):
            raise ValueError("omega must be a probability vector")

    def group_omega(self, n_groups: int) -> np.ndarray:
        """Location distribution as a (J, K) array."""
        if self.omega.ndim == 1:
            return np.broadcast_to(self.omega, (n_groups, self.omega.size))
        if self.omega.shape[0] != n_groups:
            raise ValueError(f"per-group omega has {self.omega.shape[0]} rows, need {n_groups}")
        return self.omega


@dataclass
class ProviderNetwork:
    stations: list[BaseStation]
    mobility: MobilityModel
    service_rate: np.ndarray  # mu_k, sessions/min
    handover_rate: np.ndarray  # v_k, sessions/min

    def __post_init__(self):
        self.service_rate = np.asarray(self.service_rate, dtype=float)
        self.handover_rate = np.asarray(self.handover_rate, dtype=float)
        k = len(self.stations)
        if self.service_rate.shape != (k,) or self.handover_rate.shape != (k,):
            raise ValueError("rate vectors must have one entry per BS")
        if np.any(self.service_rate <= 0):
            raise ValueError("service rates must be positive")
        if np.any(self.handover_rate < 0):
            raise ValueError("handover rates must be non-negative")
        if self.mobility.routing.shape[0] != k:
            raise ValueError("mobility model does not match the station list")

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @cached_property
    def bandwidth(self) -> np.ndarray:
        return np.array([s.bandwidth for s in self.stations])

    @property
    def departure_rate(self) -> np.ndarray:
        return self.handover_rate + self.service_rate

    def unconditional_routing(self) -> np.ndarray:
        """p_{m,k} = v_m p*_{m,k} / d_m."""
        d = self.departure_rate
        return (self.handover_rate / d)[:, None] * self.mobility.routing


@dataclass
class TrafficSolution:
    new_sessions: np.ndarray  # a, (J, K)
    arrivals: np.ndarray  # gamma, (J, K)
    intensities: np.ndarray  # rho per group, (J, K)
    total_intensity: np.ndarray | None = None  # sum_j z_j rho_j, (K,)

    @property
    def saturated(self) -> np.ndarray | None:
        if self.total_intensity is None:
            return None
        return self.total_intensity >= 1.0

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.__dict__), indent=2)


@dataclass
class QosReport:
    mean_rate: np.ndarray  # R, (J, I)
    rate_variance: np.ndarray  # V, (J, I)
    expected_occupancy: list[np.ndarray] = field(default_factory=list)  # E[N_ik] per provider

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.__dict__), indent=2)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def hexagon_cell(spacing: float) -> tuple[float, float]:
    """(area, perimeter) of the hexagonal cell of a triangular lattice site."""
    if spacing <= 0:
        raise DegenerateGeometryError("lattice spacing must be positive")
    side = spacing / math.sqrt(3.0)
    return math.sqrt(3.0) / 2.0 * spacing**2, 6.0 * side


def service_rate(bandwidth, session_mb: float = 10.0):
    """Sessions/min a link of ``bandwidth`` Mbps completes."""
    return MINUTES_PER_HOUR * np.asarray(bandwidth, dtype=float) / (BITS_PER_BYTE * session_mb)


def handover_rates(cell_area, cell_perimeter, mean_speed: float) -> np.ndarray:
    """Fluid-flow boundary-crossing rate per session, in sessions/min.

    v = speed * perimeter / (pi * area), with speed in km/h.
    """
    area = np.atleast_1d(np.asarray(cell_area, dtype=float))
    perimeter = np.broadcast_to(np.asarray(cell_perimeter, dtype=float), area.shape)
    if np.any(area <= 0):
        raise DegenerateGeometryError("cell area must be positive")
    if mean_speed < 0:
        raise ValueError("mean speed must be non-negative")
    return mean_speed * perimeter / (math.pi * area) / MINUTES_PER_HOUR


def mobility_stationary(routing, departure) -> np.ndarray:
    """Stationary location distribution of a user.

    The jump chain moves by ``routing``; a visit to cell k lasts 1/d_k on
    average, so omega solves omega Q = 0 for Q = diag(d) (p* - I).
    """
    p = np.asarray(routing, dtype=float)
    d = np.asarray(departure, dtype=float)
    k = p.shape[0]
    if k == 1:
        return np.ones(1)
    n_comp, _ = connected_components(p > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise ReducibleChainError(f"mobility chain splits into {n_comp} classes")
    generator = d[:, None] * (p - np.eye(k))
    a = generator.T.copy()
    a[-1] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    omega = np.linalg.solve(a, b)
    omega = np.clip(omega, 0.0, None)
    return omega / omega.sum()


def solve_traffic_equations(new_sessions, routing) -> np.ndarray:
    """gamma = a + p^T gamma, for a of shape (K,) or (J, K).

    ``routing`` is the unconditional handover matrix, shared or (J, K, K).
    """
    a = np.asarray(new_sessions, dtype=float)
    p = np.asarray(routing, dtype=float)
    if p.ndim == 2:
        radius = np.max(np.abs(np.linalg.eigvals(p))) if p.size else 0.0
        if radius >= 1.0 - 1e-12:
            raise UnstableNetworkError(f"routing spectral radius {radius:.6g} >= 1")
        m = np.eye(p.shape[0]) - p.T
        return np.linalg.solve(m, a.T).T
    if a.ndim != 2 or p.shape[0] != a.shape[0]:
        raise ValueError("per-group routing needs one (K, K) matrix per row of a")
    return np.stack([solve_traffic_equations(a[j], p[j]) for j in range(a.shape[0])])


def traffic_intensities(arrivals, departure, shares=None):
    """rho_k^j = gamma_k^j / d_k, plus sum_j z_j rho^j when ``shares`` is given."""
    d = np.asarray(departure, dtype=float)
    if np.any(d <= 0):
        raise ValueError("departure rates must be positive")
    rho = np.asarray(arrivals, dtype=float) / d
    if shares is None:
        return rho
    return rho, np.asarray(shares, dtype=float) @ np.atleast_2d(rho)


def solve_traffic(network: ProviderNetwork, session_rates, shares=None) -> TrafficSolution:
    """Per-group traffic of a network when group j generates ``session_rates[j]``."""
    lam = np.asarray(session_rates, dtype=float)
    omega = network.mobility.group_omega(lam.size)
    a = omega * lam[:, None]
    gamma = solve_traffic_equations(a, network.unconditional_routing())
    rho = traffic_intensities(gamma, network.departure_rate)
    total = None if shares is None else np.asarray(shares, dtype=float) @ rho
    return TrafficSolution(a, gamma, rho, total)


def stationary_distribution(rho, n_max: int = 30) -> np.ndarray:
    """Product-form law of the BS occupancies on the box [0, n_max]^K."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if np.any(rho >= 1.0):
        raise UnstableNetworkError("every BS needs total intensity below 1")
    n = np.arange(n_max + 1)
    q = np.ones(())
    for r in rho:
        marginal = (1.0 - r) * r**n
        q = np.multiply.outer(q, marginal)
    return q / q.sum()


def _shift(arr: np.ndarray, axis: int, lo: int, hi: int) -> tuple:
    idx = [slice(None)] * arr.ndim
    idx[axis] = slice(lo, hi)
    return tuple(idx)


def check_local_balance(q, new_sessions, handover, service, routing) -> float:
    """Largest residual of the two local-balance families over the box.

    (a) d_k Q(n) = a_k Q(n - e_k) + sum_m v_m p*_mk Q(n - e_k + e_m)
    (b) sum_k a_k Q(n) = sum_k mu_k Q(n + e_k)

    Only states whose neighbours all lie inside the truncated box are checked.
    """
    q = np.asarray(q, dtype=float)
    a = np.atleast_1d(np.asarray(new_sessions, dtype=float))
    v = np.atleast_1d(np.asarray(handover, dtype=float))
    mu = np.atleast_1d(np.asarray(service, dtype=float))
    p = np.atleast_2d(np.asarray(routing, dtype=float))
    k_count = q.ndim
    top = q.shape[0] - 1
    d = v + mu
    worst = 0.0

    for k in range(k_count):
        # region: n_k in [1, top], n_m in [0, top - 1] for m != k
        region = [slice(0, top)] * k_count
        region[k] = slice(1, top + 1)
        lhs = d[k] * q[tuple(region)]
        down = list(region)
        down[k] = slice(0, top)
        rhs = a[k] * q[tuple(down)]
        for m in range(k_count):
            if m == k or p[m, k] == 0:
                continue
            moved = list(down)
            moved[m] = slice(1, top + 1)
            rhs = rhs + v[m] * p[m, k] * q[tuple(moved)]
        if lhs.size:
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))

    inner = tuple([slice(0, top)] * k_count)
    lhs = a.sum() * q[inner]
    rhs = np.zeros_like(lhs)
    for k in range(k_count):
        up = list(inner)
        up[k] = slice(1, top + 1)
        rhs = rhs + mu[k] * q[tuple(up)]
    if lhs.size:
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def effective_rates(bandwidth, rho, shares) -> np.ndarray:
    """Rate a newly arriving session gets at each BS, B (1 - load), floored at 0.

    ``shares`` may carry leading batch axes: (..., J) with rho (J, K).
    """
    load = np.asarray(shares, dtype=float) @ np.asarray(rho, dtype=float)
    return np.asarray(bandwidth, dtype=float) * np.clip(1.0 - load, 0.0, None)


def rate_moments(bandwidth, omega, rho, shares, with_variance: bool = True):
    """Mean and spatial variance of the data rate seen by each group.

    ``omega`` is (J, K); returns arrays of shape (..., J). The variance is
    the weighted squared deviation itself, not E[X^2] - E[X]^2.
    """
    eff = effective_rates(bandwidth, rho, shares)
    mean = eff @ omega.T
    if not with_variance:
        return mean, None
    dev = eff[..., None, :] - mean[..., :, None]
    return mean, np.einsum("...jk,jk->...j", dev**2, omega)


def average_rate(network: ProviderNetwork, rho, shares) -> np.ndarray:
    """R^j = sum_k omega_k^j B_k (1 - sum_l z_l rho_k^l), per group."""
    rho = np.atleast_2d(rho)
    omega = network.mobility.group_omega(rho.shape[0])
    return rate_moments(network.bandwidth, omega, rho, shares, with_variance=False)[0]


def rate_variance(network: ProviderNetwork, rho, shares) -> np.ndarray:
    """V^j = sum_k omega_k^j (B_k (1 - load_k) - R^j)^2, per group."""
    rho = np.atleast_2d(rho)
    omega = network.mobility.group_omega(rho.shape[0])
    return rate_moments(network.bandwidth, omega, rho, shares)[1]


def expected_occupancy(total_rho) -> np.ndarray:
    """E[N_k] = rho_k / (1 - rho_k); infinite for saturated cells."""
    total_rho = np.asarray(total_rho, dtype=float)
    out = np.full(total_rho.shape, np.inf)
    ok = total_rho < 1.0
    out[ok] = total_rho[ok] / (1.0 - total_rho[ok])
    return out


def qos_report(networks: list[ProviderNetwork], intensities: list[np.ndarray], z) -> QosReport:
    """R, V and occupancies for every (group, provider) under profile ``z``.

    ``z`` is J x (I+1) with column 0 the disconnection share.
    """
    z = np.asarray(z, dtype=float)
    mean = np.empty((z.shape[0], len(networks)))
    var = np.empty_like(mean)
    occupancy = []
    for i, (net, rho) in enumerate(zip(networks, intensities)):
        shares = z[:, i + 1]
        mean[:, i] = average_rate(net, rho, shares)
        var[:, i] = rate_variance(net, rho, shares)
        occupancy.append(expected_occupancy(shares @ rho))
    return QosReport(mean, var, occupancy)
