"""Provider pricing game on top of the user equilibrium.

Provider i chooses its plan prices c_i in [0, C_max]^S_i to maximize its
revenue sigma_i(c) = sum_j N_j z*_ji(c) c_i(d_j), where z*(c) is the user
equilibrium of the provider's own (possibly clustered) view of the market.
Competitor prices are always the actual ones.

A Nash point is sought as a root of the stacked own-price gradients, with a
cyclic best-response search when the root-finder cannot make progress. Any
candidate is then checked by scanning unilateral deviations on a grid.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .users import LogitConfig, Market, equilibria_at, solve_user_equilibria

log = logging.getLogger(__name__)


@dataclass
class NashConfig:
    logit: LogitConfig = field(default_factory=lambda: LogitConfig(tol=1e-10))
    price_cap: float = 100.0
    step: float = 0.05  # finite-difference step, currency units
    tol: float = 1e-5  # on the per-capita own-price gradient
    max_newton: int = 30
    max_sweeps: int = 60
    sweep_tol: float = 1e-4  # price change that ends the best-response search
    scan_points: int = 41  # coarse grid before each 1-D best response
    grid: int = 200  # verification points per price
    verify_tol: float = 0.005
    restarts: int = 5  # random starts tried when verification fails
    seed: int = 0

    def __post_init__(self):
        if self.price_cap <= 0 or self.step <= 0:
            raise ValueError("price_cap and step must be positive")
        if self.grid < 2:
            raise ValueError("verification grid needs at least two points")


@dataclass
class Verification:
    gains: list[np.ndarray]  # max relative gain per provider and plan
    scans: list[list[tuple[np.ndarray, np.ndarray]]]  # (grid, revenue) per provider and plan
    tolerance: float

    @property
    def max_gain(self) -> float:
        return float(max(np.max(g) for g in self.gains))

    @property
    def passed(self) -> bool:
        return self.max_gain < self.tolerance

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["provider", "plan", "price", "revenue"])
            for i, plans in enumerate(self.scans):
                for s, (grid, rev) in enumerate(plans):
                    for c, r in zip(grid, rev):
                        writer.writerow([i + 1, s + 1, repr(float(c)), repr(float(r))])


@dataclass
class NashResult:
    prices: list[np.ndarray]
    revenue: np.ndarray  # sigma_i under provider i's own view
    estimated_z: list[np.ndarray]
    status: str  # "global", "local" or "failed"
    verification: Verification | None
    gradient_norm: float
    method: str
    iterations: int
    realized_z: np.ndarray | None = None
    realized_revenue: np.ndarray | None = None
    candidates: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "prices": [p.tolist() for p in self.prices],
            "revenue": self.revenue.tolist(),
            "status": self.status,
            "gradient_norm": self.gradient_norm,
            "method": self.method,
            "iterations": self.iterations,
            "max_unilateral_gain": None if self.verification is None else self.verification.max_gain,
            "unilateral_gains": None if self.verification is None else [g.tolist() for g in self.verification.gains],
            "estimated_z": [z.tolist() for z in self.estimated_z],
            "realized_z": None if self.realized_z is None else self.realized_z.tolist(),
            "realized_revenue": None if self.realized_revenue is None else self.realized_revenue.tolist(),
            "candidates": self.candidates,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _Prices:
    """Flat layout of all plan prices: provider i owns slice(offsets[i], offsets[i+1])."""

    def __init__(self, plan_counts: Sequence[int]):
        self.counts = list(plan_counts)
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)]).astype(int)
        self.size = int(self.offsets[-1])

    def own(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def flatten(self, prices) -> np.ndarray:
        flat = np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in prices])
        if flat.size != self.size:
            raise ValueError(f"expected {self.size} prices, got {flat.size}")
        return flat

    def split(self, flat) -> list[np.ndarray]:
        return [np.array(flat[self.own(i)], dtype=float) for i in range(len(self.counts))]


def _price_index(view: Market, layout: _Prices) -> np.ndarray:
    """(J, I) index into the flat price vector of the price each group pays."""
    return layout.offsets[:-1][None, :] + view.tiers


def _revenue_batch(view: Market, provider: int, flat_batch, logit: LogitConfig, layout: _Prices):
    """sigma_provider and z* for each row of ``flat_batch`` (B, n)."""
    flat_batch = np.atleast_2d(flat_batch)
    mats = flat_batch[:, _price_index(view, layout)]
    z = equilibria_at(view, mats, logit)
    return view.revenue(z, mats, provider), z


def provider_revenue(view: Market, provider: int, prices, logit: LogitConfig | None = None) -> float:
    """Revenue of ``provider`` (0-based) at price vector ``prices`` under ``view``."""
    logit = logit or LogitConfig()
    z = solve_user_equilibria(view, [prices], logit)[0]
    return float(view.revenue(z, view.price_matrix(prices), provider))


def _fd_points(x, i: int, layout: _Prices, step: float, cap: float):
    """Perturbed copies of x along provider i's prices and the matching divisors."""
    rows, plus, minus, width = [], [], [], []
    for k in range(layout.offsets[i], layout.offsets[i + 1]):
        hi = min(x[k] + step, cap)
        lo = max(x[k] - step, 0.0)
        a, b = x.copy(), x.copy()
        a[k], b[k] = hi, lo
        plus.append(len(rows))
        rows.append(a)
        minus.append(len(rows))
        rows.append(b)
        width.append(hi - lo)
    return rows, np.array(plus), np.array(minus), np.array(width)


def _gradients(views, xs, layout, config: NashConfig) -> np.ndarray:
    """Per-capita own-price gradients at each row of xs, (B, n)."""
    xs = np.atleast_2d(xs)
    out = np.empty_like(xs)
    for i, view in enumerate(views):
        batch, meta = [], []
        for x in xs:
            rows, plus, minus, width = _fd_points(x, i, layout, config.step, config.price_cap)
            meta.append((len(batch), plus, minus, width))
            batch.extend(rows)
        rev, _ = _revenue_batch(view, i, np.array(batch), config.logit, layout)
        rev = rev / view.sizes.sum()
        for b, (start, plus, minus, width) in enumerate(meta):
            out[b, layout.own(i)] = (rev[start + plus] - rev[start + minus]) / width
    return out


def revenue_gradient(views: Sequence[Market], prices, config: NashConfig | None = None) -> list[np.ndarray]:
    """d sigma_i / d c_is for every provider and plan, by central differences.

    Each provider's derivative is taken under its own view. Coordinates at a
    bound of [0, C_max] use a one-sided difference.
    """
    config = config or NashConfig()
    layout = _Prices(views[0].plan_counts)
    x = layout.flatten(prices)
    g = _gradients(views, x, layout, config)[0]
    total = [v.sizes.sum() for v in views]
    return [g[layout.own(i)] * total[i] for i in range(len(views))]


def _jacobian(views, x, layout, config: NashConfig):
    """Gradient at x and its finite-difference Jacobian (n, n)."""
    n = layout.size
    pts = [x]
    for k in range(n):
        for sgn in (1.0, -1.0):
            y = x.copy()
            y[k] = np.clip(y[k] + sgn * config.step, 0.0, config.price_cap)
            pts.append(y)
    g = _gradients(views, np.array(pts), layout, config)
    jac = np.empty((n, n))
    for k in range(n):
        width = pts[1 + 2 * k][k] - pts[2 + 2 * k][k]
        jac[:, k] = (g[1 + 2 * k] - g[2 + 2 * k]) / width
    return g[0], jac


def _locally_concave(jac, layout) -> bool:
    for i in range(len(layout.counts)):
        block = jac[layout.own(i), layout.own(i)]
        if np.max(np.linalg.eigvalsh(0.5 * (block + block.T))) >= 0:
            return False
    return True


def _newton(views, x, layout, config: NashConfig):
    """Damped Newton on the stacked first-order conditions.

    Gives up (returns ok=False) as soon as some provider's own revenue is not
    locally concave, since the root there would not be a maximum.
    """
    cap = config.price_cap
    g, jac = _jacobian(views, x, layout, config)
    for it in range(config.max_newton):
        if not _locally_concave(jac, layout):
            return x, g, it, False
        norm = np.max(np.abs(g))
        if norm < config.tol:
            return x, g, it, True
        step = -np.linalg.solve(jac, g)
        step *= min(1.0, 0.2 * cap / max(np.max(np.abs(step)), 1e-300))
        t = 1.0
        for _ in range(10):
            y = np.clip(x + t * step, 0.0, cap)
            gy = _gradients(views, y, layout, config)[0]
            if np.max(np.abs(gy)) < (1 - 1e-4 * t) * norm:
                break
            t *= 0.5
        else:
            return x, g, it, False
        x = y
        g, jac = _jacobian(views, x, layout, config)
    return x, g, config.max_newton, bool(np.max(np.abs(g)) < config.tol) and _locally_concave(jac, layout)


def _best_response(view: Market, i: int, k: int, x, layout, config: NashConfig) -> float:
    """Maximizer of provider i's revenue over flat coordinate k, others fixed."""
    cap = config.price_cap
    grid = np.linspace(0.0, cap, config.scan_points)
    batch = np.repeat(x[None, :], grid.size, axis=0)
    batch[:, k] = grid
    rev, _ = _revenue_batch(view, i, batch, config.logit, layout)
    best = int(np.argmax(rev))
    lo, hi = grid[max(best - 1, 0)], grid[min(best + 1, grid.size - 1)]

    def neg(c):
        y = x.copy()
        y[k] = c
        return -_revenue_batch(view, i, y, config.logit, layout)[0][0]

    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 0.1 * config.sweep_tol})
    return float(res.x) if -res.fun >= rev[best] else float(grid[best])


def _best_response_search(views, x, layout, config: NashConfig):
    x = x.copy()
    for sweep in range(1, config.max_sweeps + 1):
        moved = 0.0
        for i, view in enumerate(views):
            for k in range(layout.offsets[i], layout.offsets[i + 1]):
                c = _best_response(view, i, k, x, layout, config)
                moved = max(moved, abs(c - x[k]))
                x[k] = c
        if moved < config.sweep_tol:
            return x, sweep, True
    return x, config.max_sweeps, False


def verify_nash(views: Sequence[Market], prices, config: NashConfig | None = None, grid: int | None = None):
    """Scan every provider's unilateral deviations on a grid over [0, C_max].

    For each provider and plan, all other prices are held at ``prices`` and
    ``grid`` points are evaluated under the provider's own view. Reports the
    largest relative revenue gain over the candidate.
    """
    config = config or NashConfig()
    grid = grid or config.grid
    layout = _Prices(views[0].plan_counts)
    x = layout.flatten(prices)
    pts = np.linspace(0.0, config.price_cap, grid)
    gains, scans = [], []
    for i, view in enumerate(views):
        own = layout.own(i)
        batch = [x]
        for k in range(own.start, own.stop):
            b = np.repeat(x[None, :], grid, axis=0)
            b[:, k] = pts
            batch.extend(b)
        rev, _ = _revenue_batch(view, i, np.array(batch), config.logit, layout)
        base = rev[0]
        g, sc = [], []
        for s in range(own.stop - own.start):
            r = rev[1 + s * grid : 1 + (s + 1) * grid]
            best = float(np.max(r))
            if base > 0:
                g.append(max(best / base - 1.0, 0.0))
            else:
                g.append(0.0 if best <= 0 else np.inf)
            sc.append((pts, r))
        gains.append(np.array(g))
        scans.append(sc)
    return Verification(gains, scans, config.verify_tol)


def _search(views, x0, layout, config: NashConfig):
    """Root-finding from x0, best-response search if it stalls, Newton polish."""
    x, g, it, ok = _newton(views, x0, layout, config)
    if ok:
        return x, g, "newton", it
    log.info("root-finder stalled after %d steps; switching to best responses", it)
    x, sweeps, _ = _best_response_search(views, x0, layout, config)
    y, gy, it2, ok2 = _newton(views, x, layout, config)
    if ok2:
        return y, gy, "best-response+newton", sweeps + it2
    return x, _gradients(views, x, layout, config)[0], "best-response", sweeps


def solve_nash(
    views: Sequence[Market],
    start=None,
    config: NashConfig | None = None,
    truth: Market | None = None,
) -> NashResult:
    """Pricing equilibrium where provider i optimizes against ``views[i]``.

    ``start`` defaults to the middle of the price box. If the first candidate
    fails grid verification, random restarts are tried and the candidate
    with the smallest unilateral gain wins. ``truth`` is the ground-truth
    market used to report realized shares and revenues.
    """
    config = config or NashConfig()
    views = list(views)
    layout = _Prices(views[0].plan_counts)
    if any(v.plan_counts != layout.counts for v in views):
        raise ValueError("all views must share the plan layout")
    x0 = np.full(layout.size, 0.5 * config.price_cap) if start is None else layout.flatten(start)

    rng = np.random.default_rng(config.seed)
    starts = [x0] + [rng.uniform(0.0, config.price_cap, layout.size) for _ in range(config.restarts)]
    candidates, best = [], None
    for n, s in enumerate(starts):
        x, g, method, iters = _search(views, s, layout, config)
        gnorm = float(np.max(np.abs(g)))
        ver = verify_nash(views, layout.split(x), config)
        candidates.append({"start": s.tolist(), "prices": x.tolist(), "gradient_norm": gnorm,
                           "max_unilateral_gain": ver.max_gain, "method": method})
        key = (ver.max_gain, gnorm)
        if best is None or key < best[0]:
            best = (key, x, g, method, iters, ver)
        if ver.passed:
            break
        log.info("candidate %d failed verification (gain %.3g)", n, ver.max_gain)

    _, x, g, method, iters, ver = best
    gnorm = float(np.max(np.abs(g)))
    if ver.passed:
        status = "global"
    elif gnorm < 10 * config.tol:
        status = "local"
    else:
        status = "failed"
    prices = layout.split(x)
    est_rev, est_z = [], []
    for i, view in enumerate(views):
        r, z = _revenue_batch(view, i, x, config.logit, layout)
        est_rev.append(r[0])
        est_z.append(z[0])
    result = NashResult(prices, np.array(est_rev), est_z, status, ver, gnorm, method, iters, candidates=candidates)
    if truth is not None:
        mats = x[None, :][:, _price_index(truth, layout)]
        z = equilibria_at(truth, mats, config.logit)[0]
        result.realized_z = z
        result.realized_revenue = np.array([truth.revenue(z, mats[0], i) for i in range(truth.n_providers)])
    return result
