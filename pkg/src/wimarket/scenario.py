"""Scenario generation, demand sweeps and result export.

A scenario fixes the market geometry, the provider capacities, how the
ground-truth population is drawn and how finely each provider segments it.
A sweep varies the mean session rate (sessions/hour per user) and records
the pricing equilibrium and its realized outcome at every point.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .game import NashConfig, NashResult, solve_nash
from .queueing import (
    BaseStation,
    DegenerateGeometryError,
    MobilityModel,
    ProviderNetwork,
    handover_rates,
    hexagon_cell,
    mobility_stationary,
    service_rate,
)
from .segmentation import (
    CATEGORIES,
    DEFAULT_FEATURES,
    categorize_groups,
    category_shares,
    cluster_population,
    dataplan_tiers,
    monthly_demand,
)
from .users import LogitConfig, Market, UserGroup, market_share

log = logging.getLogger(__name__)

PROFILE_FIELDS = ("w_R", "h", "n")


class ConfigError(ValueError):
    pass


def _from_dict(cls, data: dict, where: str):
    """Build dataclass ``cls`` from ``data``, refusing unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _from_dict(sub, value, f"{where}.{name}") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class ProfileSpec:
    """Marginals of (w_R, h, n) and their correlation matrix, in that order."""

    mean: list[float] = field(default_factory=lambda: [30.0, 0.6, 1.0])
    std: list[float] = field(default_factory=lambda: [7.6, 0.3, 0.0])
    correlation: list[list[float]] = field(default_factory=lambda: np.eye(3).tolist())
    w_V: float = 0.0
    tau: float = 1.0  # not given for the reference study; u = 0 at zero rate and price
    w_P: float = 1.0  # not given for the reference study; prices in raw currency units

    def __post_init__(self):
        corr = np.asarray(self.correlation, dtype=float)
        if len(self.mean) != 3 or len(self.std) != 3 or corr.shape != (3, 3):
            raise ConfigError("profile needs 3 means, 3 stds and a 3x3 correlation matrix")
        if np.any(np.asarray(self.std) < 0):
            raise ConfigError("standard deviations must be non-negative")
        if not np.allclose(corr, corr.T) or np.any(np.abs(np.diag(corr) - 1) > 1e-12):
            raise ConfigError("correlation matrix must be symmetric with unit diagonal")
        if np.min(np.linalg.eigvalsh(corr)) < -1e-10:
            raise ConfigError("correlation matrix is not positive semi-definite")
        if self.mean[1] <= 0 or self.mean[2] <= 0:
            raise ConfigError("mean h and mean n must be positive")


@dataclass
class SweepSpec:
    start: float = 0.0  # sessions/hour per user
    stop: float = 1.5
    points: int = 7

    def __post_init__(self):
        if self.start < 0 or self.stop < self.start:
            raise ConfigError("sweep range must be non-negative and increasing")
        if self.points < 1:
            raise ConfigError("sweep needs at least one point")

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.points)


@dataclass
class SolverSpec:
    epsilon: float = 1.5
    r: float = 1.0
    price_cap: float = 100.0
    fd_step: float = 0.05
    gradient_tol: float = 1e-5
    grid: int = 200
    verify_tol: float = 0.005
    restarts: int = 5

    def nash_config(self, seed: int) -> NashConfig:
        return NashConfig(
            logit=LogitConfig(epsilon=self.epsilon, r=self.r, tol=1e-10),
            price_cap=self.price_cap,
            step=self.fd_step,
            tol=self.gradient_tol,
            grid=self.grid,
            verify_tol=self.verify_tol,
            restarts=self.restarts,
            seed=seed,
        )


@dataclass
class ScenarioSpec:
    name: str = "scenario"
    width_km: float = 14.4
    height_km: float = 12.5
    spacing_km: float = 1.6
    capacities: list[float] = field(default_factory=lambda: [25.0, 22.0, 19.0, 16.0])
    session_mb: float = 10.0
    mean_speed: float = 5.0  # km/h
    population: float = 300000.0
    groups: int = 100
    profile: ProfileSpec = field(default_factory=ProfileSpec)
    levels: list[int] = field(default_factory=lambda: [1, 1, 1, 1])
    plans: list[int] = field(default_factory=lambda: [1, 1, 1, 1])
    features: list[str] = field(default_factory=lambda: list(DEFAULT_FEATURES))
    sweep: SweepSpec = field(default_factory=SweepSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    seed: int = 0

    def __post_init__(self):
        if any(c <= 0 for c in self.capacities) or not self.capacities:
            raise ConfigError("capacities must be positive")
        n = len(self.capacities)
        if len(self.levels) != n or len(self.plans) != n:
            raise ConfigError("levels and plans need one entry per provider")
        if self.groups < 1 or self.population <= 0:
            raise ConfigError("need a positive population and at least one group")
        if any(not 1 <= L <= self.groups for L in self.levels):
            raise ConfigError(f"levels must lie in [1, {self.groups}]")
        if any(s < 1 for s in self.plans):
            raise ConfigError("every provider needs at least one plan")
        bad = [f for f in self.features if f not in ("w_R", "h", "w_V", "n", "demand_mb", "tau", "w_P")]
        if bad:
            raise ConfigError(f"unknown clustering features {bad}")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        return _from_dict(cls, data, "config")

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def n_providers(self) -> int:
        return len(self.capacities)


_NESTED = {(ScenarioSpec, "profile"): ProfileSpec, (ScenarioSpec, "sweep"): SweepSpec, (ScenarioSpec, "solver"): SolverSpec}


def lattice_sites(width: float, height: float, spacing: float) -> np.ndarray:
    """Triangular-lattice points in [0, width] x [0, height], rows offset by half a spacing."""
    if spacing <= 0 or width < 0 or height < 0:
        raise DegenerateGeometryError("need positive spacing and non-negative extent")
    pad = 1e-9 * spacing
    row = spacing * math.sqrt(3.0) / 2.0
    pts = []
    for r in range(int(math.floor(height / row + 1e-9)) + 1):
        x0 = 0.5 * spacing if r % 2 else 0.0
        for c in range(int(math.floor((width - x0) / spacing + 1e-9)) + 1):
            x = x0 + c * spacing
            if x <= width + pad:
                pts.append((x, r * row))
    return np.array(pts, dtype=float).reshape(-1, 2)


def neighbour_routing(sites: np.ndarray, spacing: float) -> np.ndarray:
    """Handover targets uniform over the lattice neighbours of each site."""
    diff = sites[:, None, :] - sites[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    adj = np.abs(dist - spacing) < 1e-6 * spacing
    deg = adj.sum(axis=1)
    if np.any(deg == 0):
        raise DegenerateGeometryError("isolated site in the lattice")
    return adj / deg[:, None]


def build_network(spec: ScenarioSpec) -> list[ProviderNetwork]:
    """One network per provider on the shared BS lattice."""
    sites = lattice_sites(spec.width_km, spec.height_km, spec.spacing_km)
    if len(sites) < 2:
        raise DegenerateGeometryError("market rectangle holds fewer than two cells")
    area, perimeter = hexagon_cell(spec.spacing_km)
    routing = neighbour_routing(sites, spec.spacing_km)
    k = len(sites)
    v = handover_rates(np.full(k, area), perimeter, spec.mean_speed)
    nets = []
    for cap in spec.capacities:
        stations = [BaseStation(i, (float(x), float(y)), float(cap), area, perimeter) for i, (x, y) in enumerate(sites)]
        mu = service_rate(np.full(k, float(cap)), spec.session_mb)
        omega = mobility_stationary(routing, mu + v)
        nets.append(ProviderNetwork(stations, MobilityModel(routing, omega, spec.mean_speed), mu, v))
    return nets


def sample_profiles(spec: ScenarioSpec, seed: int | None = None) -> np.ndarray:
    """(J, 3) draws of (w_R, h, n); rows with a non-positive entry are redrawn."""
    p = spec.profile
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    corr = np.asarray(p.correlation, dtype=float)
    vals, vecs = np.linalg.eigh(corr)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    mean, std = np.asarray(p.mean, dtype=float), np.asarray(p.std, dtype=float)
    out = np.empty((spec.groups, 3))
    filled = 0
    for _ in range(1000):
        draw = mean + std * (rng.standard_normal((spec.groups, 3)) @ factor.T)
        ok = draw[np.all(draw > 0, axis=1)]
        take = min(len(ok), spec.groups - filled)
        out[filled : filled + take] = ok[:take]
        filled += take
        if filled == spec.groups:
            return out
    raise ConfigError("profile distribution rarely yields positive values")


def sample_population(spec: ScenarioSpec, seed: int | None = None, mean_rate: float = 0.0) -> list[UserGroup]:
    """Ground-truth groups of equal size at ``mean_rate`` sessions/hour per user."""
    prof = sample_profiles(spec, seed)
    size = spec.population / spec.groups
    p = spec.profile
    return [
        UserGroup(
            id=j,
            size=size,
            w_R=float(w),
            h=float(h),
            tau=p.tau,
            w_V=p.w_V,
            w_P=p.w_P,
            session_rate=float(n * mean_rate * size / 60.0),
            demand_mb=float(monthly_demand(n, mean_rate, spec.session_mb)),
            n=float(n),
        )
        for j, (w, h, n) in enumerate(prof)
    ]


@dataclass
class MarketOutcome:
    lambda_bar: float
    prices: list[np.ndarray]
    z: np.ndarray | None
    revenue: np.ndarray  # realized on the ground truth
    shares: np.ndarray  # strategy 0 (disconnected) first
    disconnected: float
    category_shares: dict[str, np.ndarray]
    status: str
    max_gain: float
    nash: NashResult | None = None
    error: str | None = None

    def row(self) -> dict:
        out = {"lambda_bar": self.lambda_bar}
        for i, p in enumerate(self.prices):
            for s, c in enumerate(p):
                out[f"price_{i + 1}_{s + 1}"] = c
        for i, r in enumerate(self.revenue):
            out[f"revenue_{i + 1}"] = r
        for i, s in enumerate(self.shares):
            out[f"share_{i}"] = s
        out["disconnected_frac"] = self.disconnected
        for cat in CATEGORIES:
            for i, s in enumerate(self.category_shares[cat]):
                out[f"{cat}_share_{i}"] = s
        out["status"] = self.status
        out["max_unilateral_gain"] = self.max_gain
        out["error"] = self.error or ""
        return out

    def to_dict(self) -> dict:
        return {
            "lambda_bar": self.lambda_bar,
            "prices": [p.tolist() for p in self.prices],
            "revenue": self.revenue.tolist(),
            "shares": self.shares.tolist(),
            "disconnected_frac": self.disconnected,
            "category_shares": {k: v.tolist() for k, v in self.category_shares.items()},
            "status": self.status,
            "error": self.error,
            "nash": None if self.nash is None else self.nash.to_dict(),
        }


def solve_point(spec: ScenarioSpec, mean_rate: float, seed: int | None = None) -> MarketOutcome:
    """Pricing equilibrium and realized outcome at one mean session rate."""
    seed = spec.seed if seed is None else seed
    nets = build_network(spec)
    groups = sample_population(spec, seed, mean_rate)
    thresholds = [dataplan_tiers(groups, s, mean_rate, spec.session_mb) for s in spec.plans]
    truth = Market(nets, groups, thresholds)
    cats = categorize_groups(groups) if len(groups) > 1 else ["business"]
    n_prov = spec.n_providers
    try:
        cache = {}
        views = []
        for i, level in enumerate(spec.levels):
            if level not in cache:
                view = cluster_population(groups, level, seed=seed, features=spec.features)
                cache[level] = Market(nets, view.clusters, thresholds)
            views.append(cache[level])
        nash = solve_nash(views, config=spec.solver.nash_config(seed), truth=truth)
    except Exception as exc:  # recorded in-row, the sweep continues
        log.warning("lambda=%g failed: %s", mean_rate, exc)
        nan = np.full(n_prov + 1, np.nan)
        return MarketOutcome(
            mean_rate, [np.full(s, np.nan) for s in spec.plans], None, np.full(n_prov, np.nan), nan,
            float("nan"), {c: nan for c in CATEGORIES}, "failed", float("nan"), error=f"{type(exc).__name__}: {exc}",
        )
    z = nash.realized_z
    shares = market_share(z, truth.sizes)
    return MarketOutcome(
        lambda_bar=float(mean_rate),
        prices=nash.prices,
        z=z,
        revenue=nash.realized_revenue,
        shares=shares,
        disconnected=float(shares[0]),
        category_shares=category_shares(cats, z, truth.sizes),
        status=nash.status,
        max_gain=nash.verification.max_gain,
        nash=nash,
    )


def run_sweep(spec: ScenarioSpec, seed: int | None = None, points: int | None = None, jobs: int = 1):
    """Outcomes for every sweep point, ordered by mean session rate."""
    sweep = spec.sweep if points is None else SweepSpec(spec.sweep.start, spec.sweep.stop, points)
    rates = [float(x) for x in sweep.values()]
    if jobs > 1 and len(rates) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(solve_point, [spec] * len(rates), rates, [seed] * len(rates)))
    return [solve_point(spec, lam, seed) for lam in rates]


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_outcomes(outcomes: list[MarketOutcome], out_dir, spec: ScenarioSpec | None = None) -> Path:
    """sweep.csv plus one point_XXX.json per row. Returns the CSV path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [o.row() for o in outcomes]
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(v) for k, v in r.items()})
    for k, o in enumerate(outcomes):
        with open(out / f"point_{k:03d}.json", "w") as fh:
            json.dump(o.to_dict(), fh, indent=2)
    if spec is not None:
        with open(out / "config.json", "w") as fh:
            json.dump(spec.to_dict(), fh, indent=2)
    return path


def read_sweep(path) -> dict[str, np.ndarray]:
    """Columns of a sweep CSV (a directory or the file itself) as float arrays."""
    path = Path(path)
    if path.is_dir():
        path = path / "sweep.csv"
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty sweep")
    out = {}
    for key in rows[0]:
        if key in ("status", "error"):
            out[key] = np.array([r[key] for r in rows])
        else:
            out[key] = np.array([float(r[key]) if r[key] != "" else np.nan for r in rows])
    return out


def compare_runs(baseline: dict[str, np.ndarray], variant: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Point-by-point deltas of a variant sweep against a baseline sweep.

    Revenue gains are relative, in percent; disconnection, prices and shares
    are absolute differences (shares and disconnection in percentage points).
    """
    lam = baseline["lambda_bar"]
    if lam.shape != variant["lambda_bar"].shape or not np.allclose(lam, variant["lambda_bar"], rtol=0, atol=1e-12):
        raise ValueError("baseline and variant sweeps use different lambda grids")
    out = {"lambda_bar": lam}
    for key in baseline:
        if key not in variant or key in ("lambda_bar", "status", "error", "max_unilateral_gain"):
            continue
        b, v = baseline[key], variant[key]
        if key.startswith("revenue_"):
            with np.errstate(divide="ignore", invalid="ignore"):
                out[f"{key}_gain_pct"] = np.where(b != 0, 100.0 * (v - b) / np.abs(b), np.where(v == b, 0.0, np.nan))
            out[f"{key}_delta"] = v - b
        elif key.startswith("price_"):
            out[f"{key}_delta"] = v - b
        else:  # shares and disconnection, in percentage points
            out[f"{key}_delta_pp"] = 100.0 * (v - b)
    return out


def write_table(table: dict[str, np.ndarray], path=None) -> str:
    keys = list(table)
    lines = [",".join(keys)]
    for k in range(len(table["lambda_bar"])):
        lines.append(",".join(_fmt(table[key][k]) for key in keys))
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
