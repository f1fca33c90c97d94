"""User service selection: utilities, tiered dataplans and Logit dynamics.

A group's members choose among strategies 0..I (0 = stay disconnected).
The profile z evolves by

    dz_ji/dt = r * softmax_i(u_j(z) / eps) - r * z_ji

with QoS (mean/variance of the data rate) recomputed from the current z at
every evaluation. The user equilibrium is the rest point reached from the
uniform profile. When each provider has a single location law the rest
point is found directly in offered-load space, where it is unique;
otherwise the dynamics are integrated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import softmax

from .queueing import ProviderNetwork, rate_moments, solve_traffic

log = logging.getLogger(__name__)


class EquilibriumError(RuntimeError):
    """Logit dynamics did not settle within the allowed time."""

    def __init__(self, message, z, residual):
        super().__init__(message)
        self.z = z
        self.residual = residual


@dataclass(frozen=True)
class UserGroup:
    id: int
    size: float  # N_j
    w_R: float  # willingness to pay
    h: float  # tolerance to low data rate, 1/Mbps
    tau: float = 1.0
    w_V: float = 0.0
    w_P: float = 1.0
    session_rate: float = 0.0  # lambda_j, sessions/min for the whole group
    demand_mb: float = 0.0  # d_j, MB per member per month
    n: float = 1.0  # per-capita session rate relative to the population mean

    def __post_init__(self):
        if self.size < 0:
            raise ValueError(f"group {self.id}: negative size")
        if self.h <= 0 or self.w_P <= 0:
            raise ValueError(f"group {self.id}: h and w_P must be positive")
        if self.w_R < 0 or self.w_V < 0:
            raise ValueError(f"group {self.id}: w_R and w_V must be non-negative")
        if self.demand_mb < 0 or self.session_rate < 0:
            raise ValueError(f"group {self.id}: negative demand")


@dataclass
class DataplanSchedule:
    """One provider's plans: price s applies to demand in (D_{s-1}, D_s]."""

    prices: np.ndarray
    thresholds: np.ndarray
    price_cap: float = 100.0

    def __post_init__(self):
        self.prices = np.atleast_1d(np.asarray(self.prices, dtype=float))
        self.thresholds = np.atleast_1d(np.asarray(self.thresholds, dtype=float))
        if self.prices.size < 1 or self.prices.size != self.thresholds.size:
            raise ValueError("need one threshold per plan")
        if np.any(np.diff(self.thresholds) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(self.prices < 0) or np.any(self.prices > self.price_cap):
            raise ValueError("prices must lie in [0, price_cap]")


@dataclass
class LogitConfig:
    epsilon: float = 1.5
    r: float = 1.0
    tol: float = 1e-8  # on ||dz/dt||_inf (and on the fixed-point residual)
    rtol: float = 1e-8
    atol: float = 1e-10
    t_max: float = 2000.0
    method: str = "auto"  # "load", "lsoda", "rk45"; auto picks load when the market allows it

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("the Logit solver needs epsilon > 0")
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.method not in ("auto", "load", "lsoda", "rk45"):
            raise ValueError(f"unknown integration method {self.method!r}")


def tier_index(thresholds, demand) -> np.ndarray:
    """Plan index for each demand; right-closed tiers, overflow to the last."""
    thresholds = np.atleast_1d(np.asarray(thresholds, dtype=float))
    idx = np.searchsorted(thresholds, np.asarray(demand, dtype=float), side="left")
    return np.minimum(idx, thresholds.size - 1)


def dataplan_price(schedule: DataplanSchedule, demand: float) -> float:
    return float(schedule.prices[tier_index(schedule.thresholds, demand)])


def group_utility(group: UserGroup, provider: int, mean_rate=0.0, rate_var=0.0, price=0.0) -> float:
    """Utility of ``group`` for strategy ``provider`` (0 = disconnect)."""
    if provider == 0:
        return 0.0
    value = group.w_R * (group.tau - np.exp(-group.h * mean_rate))
    return float(value - group.w_V * rate_var - group.w_P * price)


def choice_probabilities(u, epsilon: float) -> np.ndarray:
    """Logit choice over the last axis, max-shifted for stability."""
    return softmax(np.asarray(u, dtype=float) / epsilon, axis=-1)


def logit_rhs(z, u, epsilon: float, r: float = 1.0) -> np.ndarray:
    return r * (choice_probabilities(u, epsilon) - z)


def uniform_profile(n_groups: int, n_providers: int) -> np.ndarray:
    return np.full((n_groups, n_providers + 1), 1.0 / (n_providers + 1))


def market_share(z, sizes) -> np.ndarray:
    """Population-weighted share of each strategy, z_i = sum_j z_ji N_j / N."""
    sizes = np.asarray(sizes, dtype=float)
    return np.einsum("...ji,j->...i", np.asarray(z, dtype=float), sizes) / sizes.sum()


class Market:
    """A population of groups facing a fixed set of provider networks.

    Holds everything that does not depend on z or on prices: per-group
    traffic intensities at every provider, location weights and the plan
    each group falls into. ``thresholds[i]`` are provider i's plan limits.
    """

    def __init__(
        self,
        networks: Sequence[ProviderNetwork],
        groups: Sequence[UserGroup],
        thresholds: Sequence[Sequence[float]] | None = None,
    ):
        self.networks = list(networks)
        self.groups = list(groups)
        n_prov = len(self.networks)
        if thresholds is None:
            thresholds = [[np.inf]] * n_prov
        if len(thresholds) != n_prov:
            raise ValueError("one threshold list per provider")
        self.thresholds = [np.atleast_1d(np.asarray(t, dtype=float)) for t in thresholds]

        g = self.groups
        self.sizes = np.array([x.size for x in g], dtype=float)
        self.w_R = np.array([x.w_R for x in g], dtype=float)
        self.tau = np.array([x.tau for x in g], dtype=float)
        self.h = np.array([x.h for x in g], dtype=float)
        self.w_V = np.array([x.w_V for x in g], dtype=float)
        self.w_P = np.array([x.w_P for x in g], dtype=float)
        self.demand = np.array([x.demand_mb for x in g], dtype=float)
        self.session_rates = np.array([x.session_rate for x in g], dtype=float)

        self.rho = [solve_traffic(net, self.session_rates).intensities for net in self.networks]
        self.omega = [np.ascontiguousarray(net.mobility.group_omega(len(g))) for net in self.networks]
        # with one location law per provider, BS loads are (offered rate) x (unit intensity)
        self.separable = all(net.mobility.omega.ndim == 1 for net in self.networks)
        if self.separable:
            self.unit_rho = [solve_traffic(net, [1.0]).intensities[0] for net in self.networks]
            self.shared_omega = [net.mobility.omega for net in self.networks]
        self.bandwidth = [net.bandwidth for net in self.networks]
        self.tiers = np.stack([tier_index(t, self.demand) for t in self.thresholds], axis=1)
        self._with_variance = bool(np.any(self.w_V != 0))

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_providers(self) -> int:
        return len(self.networks)

    @property
    def plan_counts(self) -> list[int]:
        return [t.size for t in self.thresholds]

    def price_matrix(self, prices) -> np.ndarray:
        """(J, I) price each group pays at each provider."""
        out = np.empty((self.n_groups, self.n_providers))
        for i, c in enumerate(prices):
            out[:, i] = np.atleast_1d(np.asarray(c, dtype=float))[self.tiers[:, i]]
        return out

    def qos(self, z) -> tuple[np.ndarray, np.ndarray | None]:
        """Mean rate and variance, each (..., J, I); variance None if unused."""
        z = np.asarray(z, dtype=float)
        mean = np.empty(z.shape[:-1] + (self.n_providers,))
        var = np.empty_like(mean) if self._with_variance else None
        for i in range(self.n_providers):
            m, v = rate_moments(self.bandwidth[i], self.omega[i], self.rho[i], z[..., i + 1], self._with_variance)
            mean[..., i] = m
            if var is not None:
                var[..., i] = v
        return mean, var

    def full_qos(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        mean = np.empty(z.shape[:-1] + (self.n_providers,))
        var = np.empty_like(mean)
        for i in range(self.n_providers):
            mean[..., i], var[..., i] = rate_moments(self.bandwidth[i], self.omega[i], self.rho[i], z[..., i + 1])
        return mean, var

    def utilities(self, z, price_mat) -> np.ndarray:
        """(..., J, I+1) utilities with column 0 (disconnection) fixed at 0."""
        mean, var = self.qos(z)
        return self._utility_from_rates(mean, var, price_mat)

    def _utility_from_rates(self, mean, var, price_mat) -> np.ndarray:
        u = self.w_R[:, None] * (self.tau[:, None] - np.exp(-self.h[:, None] * mean))
        u = u - self.w_P[:, None] * price_mat
        if var is not None:
            u = u - self.w_V[:, None] * var
        zero = np.zeros(u.shape[:-1] + (1,))
        return np.concatenate([zero, u], axis=-1)

    def load_response(self, offered, price_mat, epsilon: float, derivative: bool = False):
        """Choice probabilities when provider p carries ``offered[..., p]`` sessions/min.

        Separable markets only. Returns G (..., J, I+1) and, if asked, the
        slopes du_jp/d(offered_p) as (..., J, I).
        """
        offered = np.asarray(offered, dtype=float)
        mean = np.empty(offered.shape)
        var = np.empty(offered.shape) if self._with_variance else None
        slope = np.empty(offered.shape[:-1] + (self.n_groups, self.n_providers)) if derivative else None
        for p in range(self.n_providers):
            unit, omega, bw = self.unit_rho[p], self.shared_omega[p], self.bandwidth[p]
            load = offered[..., p, None] * unit
            eff = bw * np.clip(1.0 - load, 0.0, None)
            mean[..., p] = m = eff @ omega
            dev = eff - m[..., None]
            if var is not None:
                var[..., p] = (dev**2) @ omega
            if derivative:
                d_eff = -bw * unit * (load < 1.0)
                d_mean = d_eff @ omega
                du = self.w_R * self.h * np.exp(-self.h * m[..., None]) * d_mean[..., None]
                if var is not None:
                    d_var = 2.0 * (dev * d_eff) @ omega
                    du = du - self.w_V * d_var[..., None]
                slope[..., p] = du
        shape = offered.shape[:-1] + (self.n_groups, self.n_providers)
        mean = np.broadcast_to(mean[..., None, :], shape)
        if var is not None:
            var = np.broadcast_to(var[..., None, :], shape)
        g = choice_probabilities(self._utility_from_rates(mean, var, price_mat), epsilon)
        return g, slope

    def rhs(self, z, price_mat, config: LogitConfig) -> np.ndarray:
        return logit_rhs(z, self.utilities(z, price_mat), config.epsilon, config.r)

    def fixed_point_residual(self, z, price_mat, config: LogitConfig) -> float:
        best = choice_probabilities(self.utilities(z, price_mat), config.epsilon)
        return float(np.max(np.abs(np.asarray(z) - best)))

    def revenue(self, z, price_mat, provider: int) -> np.ndarray:
        """sum_j N_j z_j,i c_i(d_j) for provider index ``provider`` (0-based)."""
        return np.einsum("...j,j,...j->...", z[..., provider + 1], self.sizes, price_mat[..., provider])


@dataclass
class UserEquilibrium:
    z: np.ndarray
    residual: float
    time: float
    steps: int
    trajectory: list[tuple[float, np.ndarray]] = field(default_factory=list)

    def write_trajectory_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            j, k = self.z.shape
            writer.writerow(["t"] + [f"z_{a}_{b}" for a in range(j) for b in range(k)])
            for t, z in self.trajectory:
                writer.writerow([repr(t)] + [repr(float(x)) for x in z.ravel()])


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def integrate_to_rest(f, y0, *, tol, rtol, atol, t_max, h0=0.1, record=None):
    """Integrate y' = f(y) with Dormand-Prince until ||f(y)||_inf < tol.

    Returns (y, f(y), t, accepted_steps). Raises EquilibriumError at t_max.
    ``record(t, y)`` is called after every accepted step when given.
    """
    y = np.array(y0, dtype=float)
    k1 = f(y)
    t, h, steps = 0.0, h0, 0
    if record is not None:
        record(t, y)
    while np.max(np.abs(k1)) >= tol:
        if t >= t_max:
            raise EquilibriumError(f"no rest point by t={t:.4g}", y, float(np.max(np.abs(k1))))
        ks = [k1]
        for s in range(1, 7):
            ys = y + h * sum(a * k for a, k in zip(_A[s], ks) if a != 0.0)
            ks.append(f(ys))
        y_new = ys  # stage 7 is evaluated at the 5th-order solution
        err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = float(np.max(np.abs(err) / scale))
        if err_norm <= 1.0:
            t += h
            y, k1 = y_new, ks[6]
            steps += 1
            if record is not None:
                record(t, y)
        factor = 5.0 if err_norm == 0 else min(5.0, max(0.2, 0.9 * err_norm**-0.2))
        h *= factor if err_norm <= 1.0 else min(factor, 1.0)
    return y, k1, t, steps


def rest_point_loads(market: Market, price_mats, config: LogitConfig, max_iter: int = 200):
    """Rest point of the Logit dynamics solved in offered-load space.

    When every provider has one location law, u depends on z only through
    the offered rate Lambda_p = sum_l z_lp lambda_l of each provider. The
    rest point is then Lambda = Phi(Lambda) with Phi_p = sum_l lambda_l
    G_lp(Lambda). Lambda - Phi has a column diagonally dominant Z-matrix as
    Jacobian (own congestion lowers own share, rival congestion raises it),
    so the root is unique. Safeguarded Newton, with a Gauss-Seidel sweep of
    scalar bisections whenever a Newton step fails to reduce the residual.
    Returns z = G(Lambda*), shaped (..., J, I+1).
    """
    lam = market.session_rates
    n_prov = market.n_providers
    batch = price_mats.shape[:-2]
    eps = config.epsilon
    top = lam.sum()
    mats = price_mats.reshape((-1,) + price_mats.shape[-2:])
    x = np.full((mats.shape[0], n_prov), top / (n_prov + 1))
    target = 0.1 * config.tol / max(config.r, 1.0)

    def excess(xr, rows):
        g, _ = market.load_response(xr, mats[rows], eps)
        return xr - np.einsum("bjp,j->bp", g[..., 1:], lam)

    def sweep(x, rows):
        trial = x[rows]
        for p in range(n_prov):
            lo = np.zeros(len(trial))
            hi = np.full(len(trial), top)
            for _ in range(60):
                trial[:, p] = mid = 0.5 * (lo + hi)
                up = excess(trial, rows)[:, p] > 0
                hi = np.where(up, mid, hi)
                lo = np.where(up, lo, mid)
            trial[:, p] = 0.5 * (lo + hi)
        x[rows] = trial

    eye = np.eye(n_prov)
    for _ in range(max_iter):
        g, slope = market.load_response(x, mats, eps, derivative=True)
        gap = _z_residual(market, g, mats, eps)
        done = gap < target
        if done.all() or top == 0:
            return g.reshape(batch + g.shape[-2:])
        gp = g[..., 1:]
        h = x - np.einsum("bjp,j->bp", gp, lam)
        # dG_lp/dLambda_q = G_lp (delta_pq - G_lq) slope_lq / eps
        dg = gp[..., :, None] * (eye - gp[..., None, :]) * slope[..., None, :] / eps
        jac = eye - np.einsum("bjpq,j->bpq", dg, lam)
        step = np.linalg.solve(jac, h[..., None])[..., 0]
        norm = np.max(np.abs(h), axis=-1)
        t = np.ones(len(x))
        accepted = done.copy()
        for _ in range(8):
            rows = np.flatnonzero(~accepted)
            if rows.size == 0:
                break
            cand = np.clip(x[rows] - t[rows, None] * step[rows], 0.0, top)
            ok = np.max(np.abs(excess(cand, rows)), axis=-1) <= (1.0 - 1e-4 * t[rows]) * norm[rows]
            x[rows[ok]] = cand[ok]
            accepted[rows[ok]] = True
            t[rows[~ok]] *= 0.5
        if not accepted.all():
            sweep(x, np.flatnonzero(~accepted))
    raise EquilibriumError("load iteration did not converge", g.reshape(batch + g.shape[-2:]), float(gap.max()))


def _z_residual(market: Market, z, price_mats, eps) -> np.ndarray:
    """Per-member ||z - softmax(u(z)/eps)||_inf for z of shape (B, J, I+1)."""
    best = choice_probabilities(market.utilities(z, price_mats), eps)
    return np.max(np.abs(z - best), axis=(-2, -1))


def _integrate_lsoda(f, y0, tol, t_max, record=None):
    """Stiff-aware integration to rest with scipy's LSODA, stopping once ||f|| < tol."""
    shape = y0.shape

    def flat(t, y):
        return f(y.reshape(shape)).ravel()

    def at_rest(t, y):
        return np.max(np.abs(flat(t, y))) - 0.5 * tol

    at_rest.terminal = True
    sol = solve_ivp(flat, (0.0, t_max), np.ravel(y0), method="LSODA", rtol=1e-10, atol=1e-12, events=at_rest)
    y = sol.y[:, -1].reshape(shape)
    k = f(y)
    if record is not None:
        for t, col in zip(sol.t, sol.y.T):
            record(t, col.reshape(shape))
    if np.max(np.abs(k)) >= tol:
        raise EquilibriumError(f"no rest point by t={sol.t[-1]:.4g}", y, float(np.max(np.abs(k))))
    return y, k, float(sol.t[-1]), len(sol.t)


def _solve(market: Market, price_mats: np.ndarray, config: LogitConfig, z0=None, record=None):
    explicit_start = z0 is not None
    if z0 is None:
        z0 = uniform_profile(market.n_groups, market.n_providers)
    z0 = np.broadcast_to(z0, price_mats.shape[:-1] + (market.n_providers + 1,))
    use_loads = config.method == "load" or (config.method == "auto" and market.separable)
    if use_loads and record is None and not explicit_start:
        if not market.separable:
            raise ValueError("load-space solver needs one location law per provider")
        z = rest_point_loads(market, price_mats, config)
        return z, market.rhs(z, price_mats, config), np.nan, 0

    def f(z):
        return market.rhs(z, price_mats, config)

    tol = config.tol * min(1.0, config.r)
    if config.method != "rk45":
        return _integrate_lsoda(f, z0, tol, config.t_max, record)
    return integrate_to_rest(
        f, z0, tol=tol, rtol=config.rtol, atol=config.atol, t_max=config.t_max, h0=0.1 / config.r, record=record
    )


def solve_user_equilibrium(
    market: Market, prices, config: LogitConfig | None = None, z0=None, trajectory: bool = False
) -> UserEquilibrium:
    """Rest point of the Logit dynamics for one price vector.

    ``prices[i]`` lists provider i's plan prices.
    """
    config = config or LogitConfig()
    price_mat = market.price_matrix(prices)
    path: list = []
    record = (lambda t, y: path.append((t, y.copy()))) if trajectory else None
    z, _, t, steps = _solve(market, price_mat, config, z0, record)
    residual = market.fixed_point_residual(z, price_mat, config)
    return UserEquilibrium(z, residual, t, steps, path)


def solve_user_equilibria(market: Market, price_batch, config: LogitConfig | None = None) -> np.ndarray:
    """Equilibria for a batch of price vectors, solved side by side. Returns (B, J, I+1)."""
    config = config or LogitConfig()
    mats = np.stack([market.price_matrix(p) for p in price_batch])
    return _solve(market, mats, config)[0]


def equilibria_at(market: Market, price_mats, config: LogitConfig | None = None) -> np.ndarray:
    """Equilibria for per-group price matrices of shape (..., J, I)."""
    return _solve(market, np.asarray(price_mats, dtype=float), config or LogitConfig())[0]
