"""Monte Carlo cross-validation via a grid CTMC at natural scale.

The diffusion U at natural scale is approximated by a continuous-time
Markov chain on a grid u_0 < ... < u_N. The construction encodes scale and
speed exactly at cell resolution:

* jump probabilities follow the natural-scale martingale rule
  up_prob[i] = (u_i - u_{i-1}) / (u_{i+1} - u_{i-1}),
* expected holding times are Green-function integrals of the speed measure,
  mean_hold[i] = 2 * integral of G_i(u_i, y) mU(dy) over the neighbour span,
  with G_i(x, y) = (x^y - u_{i-1})(u_{i+1} - x v y)/(u_{i+1} - u_{i-1}),
  so speed atoms (stickiness) enter the holding times exactly,
* a reflecting boundary forces an up-move with holding time
  2 * integral of (u_1 - y) mU(dy) over [u_0, u_1), including the boundary
  atom; an absorbing boundary is an absorbing state; truncated inaccessible
  boundaries are padded and exiting paths are discarded and counted.

Sampling is vectorized over paths with a counter-based generator (Philox),
so runs are bit-reproducible for a fixed seed and chunk layout, and path
batches can be re-streamed deterministically by any estimator that needs
per-event access.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .diffusion_model import DiffusionSpec, NaturalScaleView
from .measure_kit import DecomposedMeasure, _leggauss

__all__ = [
    "ChainModel",
    "PathBatch",
    "TradeoffEstimate",
    "StrategyResult",
    "DiagnosticResult",
    "build_chain",
    "sample_paths",
    "estimate_local_time_field",
    "estimate_tradeoff",
    "run_strategy",
    "martingale_diagnostic",
    "gamma_drift_rates",
    "cell_exit_statistics",
    "normal_cdf",
    "ks_distance",
    "wilson_interval",
    "subseed",
]

_CHUNK = 32768
_GL_NODES = 12


def subseed(seed: int, stream: int) -> tuple[int, int]:
    """Key for a named substream; every (seed, stream) pair is independent."""
    return (int(seed) & (2**63 - 1), int(stream) & (2**63 - 1))


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=subseed(seed, stream)))


def normal_cdf(x) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.array([0.5 * (1.0 + math.erf(v / math.sqrt(2.0))) for v in arr])
    return out.reshape(np.shape(x)) if np.shape(x) else float(out[0])


def normal_quantile(p: float) -> float:
    lo, hi = -10.0, 10.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ks_distance(samples: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Kolmogorov-Smirnov distance of an empirical sample to a given cdf."""
    xs = np.sort(np.asarray(samples, dtype=float))
    n = xs.size
    F = np.asarray(cdf(xs), dtype=float)
    upper = np.max(np.arange(1, n + 1) / n - F)
    lower = np.max(F - np.arange(0, n) / n)
    return float(max(upper, lower))


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson 95% confidence interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return (lo, hi)


# ---------------------------------------------------------------------------
# Chain construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainModel:
    """Grid CTMC in natural-scale coordinates."""

    grid: np.ndarray
    up_prob: np.ndarray
    mean_hold: np.ndarray
    cell_mass: np.ndarray
    q_grid: np.ndarray
    left_rule: str  # 'absorb' | 'reflect' | 'pad'
    right_rule: str
    r: float
    start_index: int

    @property
    def n_states(self) -> int:
        return self.grid.size

    def state_of(self, u: float) -> int:
        return int(np.argmin(np.abs(self.grid - u)))

    def cell_widths(self) -> np.ndarray:
        g = self.grid
        mids = 0.5 * (g[:-1] + g[1:])
        w = np.empty_like(g)
        w[1:-1] = mids[1:] - mids[:-1]
        w[0] = mids[0] - g[0]
        w[-1] = g[-1] - mids[-1]
        return w


def _gauss_bound_padding(exit_prob: float) -> float:
    """k with P(max |N(0,1)| excursion > k) <= 4(1 - Phi(k)) = exit_prob."""
    target = 1.0 - exit_prob / 4.0
    return normal_quantile(target)


def _measure_green_holds(mU: DecomposedMeasure, grid: np.ndarray) -> np.ndarray:
    """mean_hold via 2 * integral of the two-sided Green function.

    Vectorized fixed-order Gauss-Legendre per half-cell; atoms are assumed
    to sit on grid points (the grid is built that way), entering through
    G_i(u_i, atom) exactly.
    """
    n = grid.size
    hold = np.zeros(n)
    t, w = _leggauss(_GL_NODES)
    t = 0.5 * (t + 1.0)  # nodes on (0,1)
    w = 0.5 * w

    lo = grid[:-2]  # u_{i-1} for i = 1..n-2
    mid = grid[1:-1]
    hi = grid[2:]
    den = hi - lo

    if mU.ac_density is not None:
        # left half: y in (lo, mid): G = (y - lo)(hi - mid)/den
        y_l = lo[:, None] + (mid - lo)[:, None] * t[None, :]
        rho_l = np.asarray(mU.ac_density(y_l.ravel()), float).reshape(y_l.shape)
        g_l = (y_l - lo[:, None]) * (hi - mid)[:, None] / den[:, None]
        int_l = (mid - lo) * np.dot(rho_l * g_l, w)
        # right half: y in (mid, hi): G = (mid - lo)(hi - y)/den
        y_r = mid[:, None] + (hi - mid)[:, None] * t[None, :]
        rho_r = np.asarray(mU.ac_density(y_r.ravel()), float).reshape(y_r.shape)
        g_r = (mid - lo)[:, None] * (hi[:, None] - y_r) / den[:, None]
        int_r = (hi - mid) * np.dot(rho_r * g_r, w)
        hold[1:-1] = 2.0 * (int_l + int_r)

    for p, m in mU.atoms:
        if math.isinf(m):
            continue
        inside = (p > grid[0]) & (p < grid[-1])
        if not inside:
            continue
        i = int(np.argmin(np.abs(grid - p)))
        if 1 <= i <= n - 2:
            g_at = (min(p, grid[i]) - grid[i - 1]) * (grid[i + 1] - max(p, grid[i])) / (
                grid[i + 1] - grid[i - 1]
            )
            hold[i] += 2.0 * m * g_at

    if mU.sc is not None:
        us = np.linspace(grid[0], grid[-1], 4097)
        cdf = np.asarray(mU.sc.base_cdf(us), float)
        mids = 0.5 * (us[:-1] + us[1:])
        mult = np.asarray(mU.sc.multiplier(mids), float)
        dm = mult * np.diff(cdf)
        for i in range(1, n - 1):
            sel = (mids > grid[i - 1]) & (mids < grid[i + 1])
            if np.any(sel):
                y = mids[sel]
                g = np.where(
                    y <= grid[i],
                    (y - grid[i - 1]) * (grid[i + 1] - grid[i]),
                    (grid[i] - grid[i - 1]) * (grid[i + 1] - y),
                ) / (grid[i + 1] - grid[i - 1])
                hold[i] += 2.0 * float(np.dot(g, dm[sel]))
    return hold


def _boundary_hold(mU: DecomposedMeasure, u0: float, u1: float, left: bool) -> float:
    """2 * integral over the boundary cell of the distance to the first
    interior node, including the boundary atom (stickiness)."""
    t, w = _leggauss(_GL_NODES)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    total = 0.0
    if mU.ac_density is not None:
        y = u0 + (u1 - u0) * t
        rho = np.asarray(mU.ac_density(y), float)
        dist = (u1 - y) if left else (y - u0)
        total += (u1 - u0) * float(np.dot(rho * dist, w))
    for p, m in mU.atoms:
        if math.isinf(m):
            continue
        if left and u0 <= p < u1:
            total += m * (u1 - p)
        elif not left and u0 < p <= u1:
            total += m * (p - u0)
    return 2.0 * total


def _cell_masses(mU: DecomposedMeasure, grid: np.ndarray) -> np.ndarray:
    n = grid.size
    mids = 0.5 * (grid[:-1] + grid[1:])
    edges = np.concatenate([[grid[0]], mids, [grid[-1]]])
    t, w = _leggauss(_GL_NODES)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    mass = np.zeros(n)
    if mU.ac_density is not None:
        lo = edges[:-1]
        hi = edges[1:]
        y = lo[:, None] + (hi - lo)[:, None] * t[None, :]
        rho = np.asarray(mU.ac_density(y.ravel()), float).reshape(y.shape)
        mass = (hi - lo) * np.dot(rho, w)
    for p, m in mU.atoms:
        if p < grid[0] or p > grid[-1]:
            continue
        i = int(np.argmin(np.abs(grid - p)))
        if math.isinf(m):
            continue  # absorbing-boundary atom: holding time is infinite anyway
        mass[i] += m
    if mU.sc is not None:
        us = np.linspace(grid[0], grid[-1], 4097)
        cdf = np.asarray(mU.sc.base_cdf(us), float)
        centers = 0.5 * (us[:-1] + us[1:])
        mult = np.asarray(mU.sc.multiplier(centers), float)
        contrib = mult * np.diff(cdf)
        idx = np.searchsorted(edges, centers) - 1
        idx = np.clip(idx, 0, n - 1)
        np.add.at(mass, idx, contrib)
    return mass


def build_chain(
    view: NaturalScaleView,
    spec: DiffusionSpec,
    N: int = 512,
    window: Optional[tuple[float, float]] = None,
    grid_in: str = "natural",
    exit_prob_bound: float = 1e-4,
    horizon: Optional[float] = None,
) -> ChainModel:
    """Grid CTMC for the natural-scale diffusion.

    The window spans the accessible part of s(J); inaccessible boundaries
    are truncated with padding chosen so a Gaussian bound puts the exit
    probability below ``exit_prob_bound``. Interior speed atoms and the
    start point are snapped onto grid points.
    """
    if N < 16:
        raise ValueError("grid size N must be at least 16")
    T = spec.horizon if horizon is None else float(horizon)
    s_lo, s_hi = view.sJ
    u_start = view.s_x0

    if window is None:
        # local variance rate of U is 1/mU_ac; pad by a high-quantile
        # Gaussian excursion bound, iterating once to update the rate
        k = _gauss_bound_padding(exit_prob_bound)
        width = k * math.sqrt(T)
        for _ in range(2):
            probe_lo = max(s_lo, u_start - width)
            probe_hi = min(s_hi, u_start + width)
            us = np.linspace(probe_lo, probe_hi, 65)[1:-1]
            if view.mU.ac_density is None:
                rate = 1.0
            else:
                dens = np.asarray(view.mU.ac_density(us), float)
                dens = dens[np.isfinite(dens) & (dens > 0)]
                rate = 1.0 / float(np.min(dens)) if dens.size else 1.0
            width = k * math.sqrt(rate * T)
        lo = s_lo if math.isfinite(s_lo) else u_start - width
        hi = s_hi if math.isfinite(s_hi) else u_start + width
        lo = max(lo, s_lo)
        hi = min(hi, s_hi)
        window = (lo, hi)
    lo, hi = window
    if not (lo < u_start < hi) and not (lo == u_start or hi == u_start):
        raise ValueError("window does not contain the start point")

    left_rule = "pad"
    right_rule = "pad"
    if math.isfinite(s_lo) and abs(lo - s_lo) <= 1e-12 * (1 + abs(s_lo)):
        beh = view.boundary("left")
        if beh.kind == "absorbing":
            left_rule = "absorb"
        elif beh.kind == "reflecting":
            left_rule = "reflect"
    if math.isfinite(s_hi) and abs(hi - s_hi) <= 1e-12 * (1 + abs(s_hi)):
        beh = view.boundary("right")
        if beh.kind == "absorbing":
            right_rule = "absorb"
        elif beh.kind == "reflecting":
            right_rule = "reflect"

    anchors = {lo, hi, u_start}
    for p, _ in view.mU.atoms:
        if lo < p < hi:
            anchors.add(float(p))
    for p, _ in view.qpp.atoms:
        if lo < p < hi:
            anchors.add(float(p))
    # pin the singular points of phi (flat spots of q, annotated poles) so
    # refinement ladders see them at exactly one grid point
    for a, b in spec.qprime_zero_set:
        for p in (a, b):
            if lo < p < hi:
                anchors.add(float(p))
    for beh in spec.phi_behaviors:
        if lo < beh.point < hi:
            anchors.add(float(beh.point))

    if grid_in == "state":
        # uniform in the original coordinate, mapped through the scale;
        # reproduces the skew jump probability on symmetric state grids
        x_anchors = sorted(float(view.q.value(np.asarray(a))) for a in anchors)
        grid_parts = []
        target = (x_anchors[-1] - x_anchors[0]) / N
        for a, b in zip(x_anchors[:-1], x_anchors[1:]):
            n_seg = max(1, int(round((b - a) / target)))
            grid_parts.append(np.linspace(a, b, n_seg + 1)[:-1])
        xs = np.concatenate(grid_parts + [[x_anchors[-1]]])
        grid = np.asarray(spec.scale.value(xs), float)
    else:
        u_anchors = sorted(anchors)
        grid_parts = []
        target = (hi - lo) / N
        for a, b in zip(u_anchors[:-1], u_anchors[1:]):
            n_seg = max(1, int(round((b - a) / target)))
            grid_parts.append(np.linspace(a, b, n_seg + 1)[:-1])
        grid = np.concatenate(grid_parts + [[hi]])
    grid = np.unique(grid)
    if grid.size < 3:
        raise ValueError("degenerate grid")

    n = grid.size
    up = np.zeros(n)
    up[1:-1] = (grid[1:-1] - grid[:-2]) / (grid[2:] - grid[:-2])
    hold = _measure_green_holds(view.mU, grid)
    if np.any(~np.isfinite(hold[1:-1])) or np.any(hold[1:-1] <= 0):
        bad = int(np.argmin(hold[1:-1])) + 1
        raise ValueError(f"non-positive or infinite expected holding time at interior cell {bad}")

    mass = _cell_masses(view.mU, grid)

    # boundary cells
    if left_rule == "reflect":
        up[0] = 1.0
        hold[0] = _boundary_hold(view.mU, grid[0], grid[1], left=True)
    elif left_rule == "absorb":
        up[0] = 0.0
        hold[0] = math.inf
    else:
        up[0] = 1.0
        hold[0] = math.inf  # pad states are terminal; paths there are discarded
    if right_rule == "reflect":
        up[-1] = 0.0
        hold[-1] = _boundary_hold(view.mU, grid[-2], grid[-1], left=False)
    elif right_rule == "absorb":
        up[-1] = 0.0
        hold[-1] = math.inf
    else:
        up[-1] = 0.0
        hold[-1] = math.inf

    q_grid = np.asarray(view.q.value(grid), float)
    start_index = int(np.argmin(np.abs(grid - u_start)))
    return ChainModel(
        grid=grid,
        up_prob=up,
        mean_hold=hold,
        cell_mass=mass,
        q_grid=q_grid,
        left_rule=left_rule,
        right_rule=right_rule,
        r=spec.r,
        start_index=start_index,
    )


def gamma_drift_rates(chain: ChainModel, view: NaturalScaleView) -> np.ndarray:
    """Per-state drift rate of the price predicted by the market-price-of-
    risk field.

    For each interior cell this is the Green-weighted Lebesgue integral of
    gamma(x) [q'(x)]^2 (the density of the compensator against quadratic-
    variation occupation), divided by the expected holding time. At a
    reflecting boundary cell the one-sided Green function (u_1 - y) is used.
    Absorbing and pad states get rate 0.
    """
    g = chain.grid
    n = g.size
    t, w = _leggauss(_GL_NODES)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w

    qp = view.q.d_plus
    d2 = view.q.d2_ac
    q_val = view.q.value
    mU_ac = view.mU.ac_density
    r = view.r

    def dens(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        out = 0.5 * np.asarray(d2(x), float)
        if r != 0.0 and mU_ac is not None:
            out = out - r * np.asarray(q_val(x), float) * np.asarray(mU_ac(x), float)
        d = np.asarray(qp(x), float)
        return np.where((d != 0.0) & np.isfinite(d), out, 0.0)

    num = np.zeros(n)
    lo, mid, hi = g[:-2], g[1:-1], g[2:]
    den = hi - lo
    y_l = lo[:, None] + (mid - lo)[:, None] * t[None, :]
    f_l = dens(y_l.ravel()).reshape(y_l.shape)
    g_l = (y_l - lo[:, None]) * (hi - mid)[:, None] / den[:, None]
    y_r = mid[:, None] + (hi - mid)[:, None] * t[None, :]
    f_r = dens(y_r.ravel()).reshape(y_r.shape)
    g_r = (mid - lo)[:, None] * (hi[:, None] - y_r) / den[:, None]
    num[1:-1] = 2.0 * ((mid - lo) * np.dot(f_l * g_l, w) + (hi - mid) * np.dot(f_r * g_r, w))

    if chain.left_rule == "reflect":
        y = g[0] + (g[1] - g[0]) * t
        num[0] = 2.0 * (g[1] - g[0]) * float(np.dot(dens(y) * (g[1] - y), w))
    if chain.right_rule == "reflect":
        y = g[-1] - (g[-1] - g[-2]) * t
        num[-1] = 2.0 * (g[-1] - g[-2]) * float(np.dot(dens(y) * (y - g[-2]), w))

    with np.errstate(divide="ignore", invalid="ignore"):
        rates = num / chain.mean_hold
    return np.where(np.isfinite(rates), rates, 0.0)


# ---------------------------------------------------------------------------
# Path sampling
# ---------------------------------------------------------------------------


@dataclass
class PathBatch:
    """Summaries of a sampled batch plus the handle to re-stream it.

    Re-running ``sample_paths`` with the recorded seed reproduces the paths
    bit-exactly (counter-based generator, fixed chunk layout), so heavier
    estimators re-stream instead of storing full event logs.
    """

    chain: ChainModel
    seed: int
    n_paths: int
    T: float
    terminal_state: np.ndarray
    discarded: np.ndarray
    occupation: np.ndarray  # summed over paths, per state
    marked_occupation: dict[int, np.ndarray]
    hit_time: dict[int, np.ndarray]
    payoff: Optional[np.ndarray] = None
    residual: Optional[np.ndarray] = None
    mesh_times: Optional[np.ndarray] = None
    mesh_state: Optional[np.ndarray] = None
    mesh_marked_occ: Optional[np.ndarray] = None  # (paths, mesh, marked states)
    mesh_marked_states: tuple[int, ...] = ()

    @property
    def kept(self) -> np.ndarray:
        return ~self.discarded

    @property
    def n_kept(self) -> int:
        return int(np.sum(self.kept))


def sample_paths(
    chain: ChainModel,
    n_paths: int,
    seed: int,
    T: float,
    marked_states: Sequence[int] = (),
    hit_levels: Sequence[int] = (),
    position_table: Optional[np.ndarray] = None,
    residual_rates: Optional[np.ndarray] = None,
    residual_weight: Optional[np.ndarray] = None,
    mesh_times: Optional[Sequence[float]] = None,
    mesh_marked_states: Sequence[int] = (),
    stream: int = 0,
) -> PathBatch:
    """Sample CTMC paths to the horizon with occupation bookkeeping.

    Exponential holding times with the chain's means, Bernoulli up/down
    jumps; deterministic for a fixed (seed, stream). Optional accumulators:
    position_table H(state) feeds a predictable discrete integral of H
    against the discounted price; residual_rates subtracts a per-state
    predicted drift rate from the price increments (weighted per state by
    residual_weight); mesh_times records the state and the occupation of
    the ``mesh_marked_states`` at fixed times.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n_states = chain.n_states
    mean_hold = chain.mean_hold
    up_prob = chain.up_prob
    q_grid = chain.q_grid
    r = chain.r

    terminal = np.full(n_paths, -1, dtype=np.int64)
    discarded = np.zeros(n_paths, dtype=bool)
    occupation = np.zeros(n_states)
    marked = {int(s): np.zeros(n_paths) for s in marked_states}
    hits = {int(s): np.full(n_paths, np.inf) for s in hit_levels}
    want_payoff = position_table is not None
    payoff = np.zeros(n_paths) if want_payoff else None
    want_resid = residual_rates is not None
    resid = np.zeros(n_paths) if want_resid else None
    w_resid = residual_weight if residual_weight is not None else (
        np.ones(n_states) if want_resid else None
    )
    mesh = None if mesh_times is None else np.asarray(list(mesh_times), float)
    mesh_marks = tuple(int(s) for s in mesh_marked_states)
    if mesh is not None:
        mesh_state = np.full((n_paths, mesh.size), -1, dtype=np.int64)
        mesh_occ = np.zeros((n_paths, mesh.size, len(mesh_marks)))
        for ms in mesh_marks:
            if ms not in marked:
                marked[ms] = np.zeros(n_paths)
    else:
        mesh_state = mesh_occ = None

    pad_left = chain.left_rule == "pad"
    pad_right = chain.right_rule == "pad"
    absorb_left = chain.left_rule == "absorb"
    absorb_right = chain.right_rule == "absorb"

    # the loop carries compacted per-path arrays (survivors only); scalar
    # accumulators ride along compacted and are scattered back on death
    for c0 in range(0, n_paths, _CHUNK):
        c1 = min(c0 + _CHUNK, n_paths)
        m = c1 - c0
        rng = _rng(seed, stream * 1_000_003 + (c0 // _CHUNK) + 1)
        ids = np.arange(c0, c1, dtype=np.int64)
        st = np.full(m, chain.start_index, dtype=np.int64)
        tt = np.zeros(m)
        acc_marked = {ms: np.zeros(m) for ms in marked}
        acc_hit = {lv: np.full(m, np.inf) for lv in hits}
        acc_pay = np.zeros(m) if want_payoff else None
        acc_res = np.zeros(m) if want_resid else None
        mesh_next = np.zeros(m, dtype=np.int64) if mesh is not None else None

        def _flush(sel_local: np.ndarray) -> None:
            rows = ids[sel_local]
            for ms, acc in acc_marked.items():
                marked[ms][rows] = acc[sel_local]
            for lv, acc in acc_hit.items():
                hits[lv][rows] = acc[sel_local]
            if want_payoff:
                payoff[rows] = acc_pay[sel_local]
            if want_resid:
                resid[rows] = acc_res[sel_local]

        while ids.size:
            mh = mean_hold[st]
            e = rng.standard_exponential(ids.size)
            uu = rng.random(ids.size)
            dwell_raw = e * mh
            t_new = tt + dwell_raw
            expire = t_new >= T
            dwell = np.where(expire, T - tt, dwell_raw)
            t_next = np.where(expire, T, t_new)

            occupation += np.bincount(st, weights=dwell, minlength=n_states)
            for ms, acc in acc_marked.items():
                acc += np.where(st == ms, dwell, 0.0)

            if mesh is not None:
                # record snapshots at every mesh time inside this sojourn;
                # marked occupancy was advanced by the whole dwell already,
                # so roll it back to the snapshot time
                while True:
                    pending = mesh_next < mesh.size
                    if not np.any(pending):
                        break
                    mt = np.where(pending, mesh[np.minimum(mesh_next, mesh.size - 1)], np.inf)
                    inside = pending & (mt <= t_next) & (mt >= tt)
                    if not np.any(inside):
                        break
                    rows = ids[inside]
                    mesh_state[rows, mesh_next[inside]] = st[inside]
                    for j, ms in enumerate(mesh_marks):
                        base = acc_marked[ms][inside]
                        rollback = np.where(
                            st[inside] == ms, t_next[inside] - mt[inside], 0.0
                        )
                        mesh_occ[rows, mesh_next[inside], j] = base - rollback
                    mesh_next[inside] += 1

            up = uu < up_prob[st]
            s_next = st + np.where(up, 1, -1)

            if want_payoff or want_resid:
                s_eff = np.where(expire, st, s_next)
                if r != 0.0:
                    disc_old = np.exp(-r * tt)
                    disc_new = np.exp(-r * t_next)
                    dS = disc_new * q_grid[s_eff] - disc_old * q_grid[st]
                else:
                    dS = q_grid[s_eff] - q_grid[st]
                if want_payoff:
                    acc_pay += position_table[st] * dS
                if want_resid:
                    disc_int = (disc_old - disc_new) / r if r != 0.0 else dwell
                    acc_res += w_resid[st] * (dS - residual_rates[st] * disc_int)

            for lv, acc in acc_hit.items():
                arrived = (~expire) & (s_next == lv) & np.isinf(acc)
                if np.any(arrived):
                    acc[arrived] = t_next[arrived]

            # deaths: horizon, pad exit (discard), absorbing entry (the
            # clock stops; occupation counts time up to absorption only)
            dead_pad = (~expire) & (
                (pad_left & (s_next == 0)) | (pad_right & (s_next == n_states - 1))
            )
            absorbed = (~expire) & (
                (absorb_left & (s_next == 0)) | (absorb_right & (s_next == n_states - 1))
            )
            if np.any(absorbed) and (want_payoff or want_resid) and r != 0.0:
                # the price keeps discounting while parked at the absorbing
                # value; settle that increment analytically
                tail = np.where(
                    absorbed,
                    (math.exp(-r * T) - np.exp(-r * t_next)) * q_grid[s_next],
                    0.0,
                )
                if want_payoff:
                    acc_pay += position_table[s_next] * tail
                if want_resid:
                    acc_res += w_resid[s_next] * tail
            dead = expire | dead_pad | absorbed
            if np.any(dead):
                terminal[ids[dead]] = np.where(expire, st, s_next)[dead]
                if np.any(dead_pad):
                    discarded[ids[dead_pad]] = True
                _flush(dead)
                keep = ~dead
                ids = ids[keep]
                st = s_next[keep]
                tt = t_next[keep]
                for ms in acc_marked:
                    acc_marked[ms] = acc_marked[ms][keep]
                for lv in acc_hit:
                    acc_hit[lv] = acc_hit[lv][keep]
                if want_payoff:
                    acc_pay = acc_pay[keep]
                if want_resid:
                    acc_res = acc_res[keep]
                if mesh is not None:
                    mesh_next = mesh_next[keep]
            else:
                st = s_next
                tt = t_next

    return PathBatch(
        chain=chain,
        seed=seed,
        n_paths=n_paths,
        T=T,
        terminal_state=terminal,
        discarded=discarded,
        occupation=occupation,
        marked_occupation=marked,
        hit_time=hits,
        payoff=payoff,
        residual=resid,
        mesh_times=mesh,
        mesh_state=mesh_state,
        mesh_marked_occ=mesh_occ,
        mesh_marked_states=mesh_marks,
    )


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def estimate_local_time_field(batch: PathBatch, chain: ChainModel) -> np.ndarray:
    """Mean local-time field: occupation / (paths * cell mass) per state.

    Inverts the occupation identity at chain resolution. States with zero
    cell mass get NaN; requesting them explicitly is an error.
    """
    n = max(batch.n_kept, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lt = batch.occupation / (n * chain.cell_mass)
    return np.where(chain.cell_mass > 0, lt, np.nan)


def local_time_at(batch: PathBatch, chain: ChainModel, index: int) -> float:
    if chain.cell_mass[index] <= 0:
        raise ValueError(f"cell {index} has zero speed mass; local time undefined there")
    return float(batch.occupation[index] / (max(batch.n_kept, 1) * chain.cell_mass[index]))


@dataclass(frozen=True)
class TradeoffEstimate:
    """Mean-variance-tradeoff estimates over a refinement ladder."""

    grid_sizes: tuple[int, ...]
    estimates: tuple[float, ...]
    ratios: tuple[float, ...]
    divergence: bool
    seed: int

    def last(self) -> float:
        return self.estimates[-1]


def _tradeoff_single(view: NaturalScaleView, chain: ChainModel, batch: PathBatch) -> float:
    """K_hat = sum of phi(u_i)^2 * local-time * cell width over interior states."""
    lt = estimate_local_time_field(batch, chain)
    widths = chain.cell_widths()
    phi_vals = np.asarray(view.phi(chain.grid), float)
    interior = np.ones(chain.n_states, dtype=bool)
    interior[0] = interior[-1] = False
    vals = np.where(np.isfinite(lt) & interior, phi_vals**2 * lt * widths, 0.0)
    return float(np.sum(vals))


def estimate_tradeoff(
    view: NaturalScaleView,
    spec: DiffusionSpec,
    n_paths: int = 4000,
    seed: int = 42,
    base_grid: int = 256,
    levels: int = 3,
    divergence_ratio: float = 1.5,
    grid_in: str = "natural",
    horizon: Optional[float] = None,
) -> TradeoffEstimate:
    """Estimate K_T across a grid-refinement ladder and flag divergence.

    The flag is raised when the last two level-to-level ratios both exceed
    ``divergence_ratio``: a 1/x-type pole of phi doubles the estimate per
    refinement, while an integrable phi keeps the ladder flat.
    """
    if levels < 3:
        raise ValueError("the refinement ladder needs at least 3 levels")
    grids = []
    ests = []
    for lv in range(levels):
        N = base_grid * 2**lv
        chain = build_chain(view, spec, N=N, grid_in=grid_in, horizon=horizon)
        batch = sample_paths(
            chain, n_paths, seed, T=(spec.horizon if horizon is None else horizon), stream=100 + lv
        )
        grids.append(N)
        ests.append(_tradeoff_single(view, chain, batch))
    ratios = tuple(
        (ests[i + 1] / ests[i]) if ests[i] > 0 else math.inf if ests[i + 1] > 0 else 1.0
        for i in range(len(ests) - 1)
    )
    divergence = len(ratios) >= 2 and all(rho >= divergence_ratio for rho in ratios[-2:])
    return TradeoffEstimate(
        grid_sizes=tuple(grids),
        estimates=tuple(ests),
        ratios=ratios,
        divergence=divergence,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrategyResult:
    name: str
    n_paths: int
    n_used: int
    mean: float
    se: float
    min_payoff: float
    frac_positive: float
    wilson_low: float
    wilson_high: float
    grid_step: float

    def positive_ci_excludes_zero(self) -> bool:
        return self.wilson_low > 0.0


def run_strategy(
    view: NaturalScaleView,
    spec: DiffusionSpec,
    strategy: str | np.ndarray,
    chain: Optional[ChainModel] = None,
    n_paths: int = 10_000,
    seed: int = 42,
    N: int = 512,
    level: Optional[float] = None,
    horizon: Optional[float] = None,
) -> StrategyResult:
    """Discrete stochastic integral of a predictable position against the
    discounted price along chain paths.

    Strategies: 'post_hitting_hold' (enter one unit after first hitting the
    given level, default the accessible boundary; payoff telescopes to
    S_T - S at the hit), 'boundary_sit' (hold one unit only while at the
    reflecting boundary state), or a custom per-state position table.
    """
    T = spec.horizon if horizon is None else float(horizon)
    if chain is None:
        chain = build_chain(view, spec, N=N, horizon=T)
    step = float(np.max(np.diff(chain.grid)))

    if isinstance(strategy, str) and strategy == "post_hitting_hold":
        if level is None:
            acc = [s for s, b in view.boundaries if b.accessible]
            if not acc:
                raise ValueError("post_hitting_hold needs a level or an accessible boundary")
            level = view.boundary_image(acc[0])
        lv_idx = chain.state_of(float(level))
        batch = sample_paths(chain, n_paths, seed, T, hit_levels=[lv_idx], stream=7)
        keep = batch.kept
        ht = batch.hit_time[lv_idx][keep]
        term = batch.terminal_state[keep]
        if chain.start_index == lv_idx:
            ht = np.zeros_like(ht)  # the start state counts as hit at time 0
        hit = np.isfinite(ht)
        pay = np.zeros(term.size)
        if chain.r != 0.0:
            pay[hit] = np.exp(-chain.r * T) * chain.q_grid[term[hit]] - np.exp(
                -chain.r * ht[hit]
            ) * chain.q_grid[lv_idx]
        else:
            pay[hit] = chain.q_grid[term[hit]] - chain.q_grid[lv_idx]
        name = f"post_hitting_hold@{float(level):g}"
    else:
        if isinstance(strategy, str) and strategy == "boundary_sit":
            refl = [s for s, b in view.boundaries if b.kind == "reflecting"]
            if not refl:
                raise ValueError("boundary_sit requires a reflecting boundary")
            table = np.zeros(chain.n_states)
            table[chain.state_of(view.boundary_image(refl[0]))] = 1.0
            name = "boundary_sit"
        else:
            table = np.asarray(strategy, float)
            if table.shape != (chain.n_states,):
                raise ValueError("custom strategy table must have one position per state")
            name = "custom_table"
        batch = sample_paths(chain, n_paths, seed, T, position_table=table, stream=7)
        pay = batch.payoff[batch.kept]

    n_used = pay.size
    k_pos = int(np.sum(pay > 0))
    lo, hi = wilson_interval(k_pos, n_used)
    return StrategyResult(
        name=name,
        n_paths=n_paths,
        n_used=n_used,
        mean=float(np.mean(pay)) if n_used else 0.0,
        se=float(np.std(pay, ddof=1) / math.sqrt(n_used)) if n_used > 1 else math.inf,
        min_payoff=float(np.min(pay)) if n_used else 0.0,
        frac_positive=k_pos / n_used if n_used else 0.0,
        wilson_low=lo,
        wilson_high=hi,
        grid_step=step,
    )


# ---------------------------------------------------------------------------
# Martingale diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticResult:
    target: str
    t_stat: float
    mean: float
    se: float
    n_samples: int
    note: str = ""

    def passes(self, threshold: float = 3.0) -> bool:
        return abs(self.t_stat) < threshold


def martingale_diagnostic(
    view: NaturalScaleView,
    spec: DiffusionSpec,
    target: str,
    chain: Optional[ChainModel] = None,
    n_paths: int = 5000,
    seed: int = 42,
    N: int = 512,
    mesh_points: int = 8,
    target_states: Optional[Sequence[int]] = None,
    grid_in: str = "natural",
    horizon: Optional[float] = None,
) -> DiagnosticResult:
    """Empirical martingale tests on the chain.

    'U_minus_half_L': with a reflecting left boundary, increments of
    U - L/2 over a time mesh must be centered (L estimated as boundary
    occupation over the boundary cell mass).

    'discounted_price_drift': price increments minus the drift predicted by
    the market-price-of-risk field (Green-averaged per cell) must be
    centered; restricted to ``target_states`` when given, e.g. the sticky
    cell. A violated singular-part identity shows up as a biased residual
    at the affected cell.
    """
    T = spec.horizon if horizon is None else float(horizon)
    if chain is None:
        chain = build_chain(view, spec, N=N, grid_in=grid_in, horizon=T)

    if target == "U_minus_half_L":
        refl = [s for s, b in view.boundaries if b.kind == "reflecting"]
        if not refl:
            raise ValueError("U_minus_half_L requires a reflecting boundary")
        # left reflection pushes up (compensator -L/2), right reflection
        # pushes down (+L/2); with both present, both enter
        comps = []
        for side in refl:
            b_idx = 0 if side == "left" else chain.n_states - 1
            sign = 1.0 if side == "left" else -1.0
            comps.append((b_idx, sign, chain.cell_mass[b_idx]))
        mesh = np.linspace(0.0, T, mesh_points + 1)[1:]
        batch = sample_paths(
            chain,
            n_paths,
            seed,
            T,
            mesh_times=mesh,
            mesh_marked_states=[idx for idx, _, _ in comps],
            stream=11,
        )
        keep = batch.kept
        states = batch.mesh_state[keep]
        u_vals = chain.grid[states]
        u_full = np.concatenate(
            [np.full((u_vals.shape[0], 1), chain.grid[chain.start_index]), u_vals], axis=1
        )
        incr = np.diff(u_full, axis=1)
        for j, (idx, sign, cm) in enumerate(comps):
            occ = batch.mesh_marked_occ[keep][:, :, j]
            occ_full = np.concatenate([np.zeros((occ.shape[0], 1)), occ], axis=1)
            incr = incr - sign * np.diff(occ_full, axis=1) / (2.0 * cm)
        flat = incr.ravel()
        mean = float(np.mean(flat))
        se = float(np.std(flat, ddof=1) / math.sqrt(flat.size))
        return DiagnosticResult(
            target="U_minus_half_L",
            t_stat=mean / se if se > 0 else 0.0,
            mean=mean,
            se=se,
            n_samples=flat.size,
            note=f"{mesh_points} mesh increments per path, "
            f"{len(comps)} reflecting compensator(s)",
        )

    if target == "discounted_price_drift":
        rates = gamma_drift_rates(chain, view)
        weight = np.zeros(chain.n_states)
        if target_states is None:
            weight[1:-1] = 1.0
        else:
            for s in target_states:
                weight[int(s)] = 1.0
        batch = sample_paths(
            chain,
            n_paths,
            seed,
            T,
            residual_rates=rates,
            residual_weight=weight,
            stream=13,
        )
        res = batch.residual[batch.kept]
        mean = float(np.mean(res))
        se = float(np.std(res, ddof=1) / math.sqrt(res.size))
        return DiagnosticResult(
            target="discounted_price_drift",
            t_stat=mean / se if se > 0 else 0.0,
            mean=mean,
            se=se,
            n_samples=res.size,
            note="per-path residual of price increments against the predicted drift",
        )

    raise ValueError(f"unknown diagnostic target {target!r}")


# ---------------------------------------------------------------------------
# Chain-level statistics used by the validation suite
# ---------------------------------------------------------------------------


def cell_exit_statistics(
    chain: ChainModel, index: int, n: int, seed: int
) -> dict[str, float]:
    """Empirical holding time and up-move frequency at one cell.

    Uses the same generator family as the path sampler; checks that the
    sampled exponential clock and Bernoulli jumps match the chain fields.
    """
    rng = _rng(seed, 999)
    holds = rng.standard_exponential(n) * chain.mean_hold[index]
    ups = rng.random(n) < chain.up_prob[index]
    return {
        "mean_hold": float(np.mean(holds)),
        "se_hold": float(np.std(holds, ddof=1) / math.sqrt(n)),
        "up_frac": float(np.mean(ups)),
        "se_up": float(math.sqrt(chain.up_prob[index] * (1 - chain.up_prob[index]) / n)),
    }
