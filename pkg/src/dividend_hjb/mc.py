"""Euler-Maruyama simulation of the filtered surplus / drift-estimate system.

Both components are driven by the same Brownian increment:

    dX = (vartheta - u) dt + sigma dW,
    dvartheta = (vartheta - theta1)(theta2 - vartheta) / sigma dW.

Paths are simulated in chunks.  Chunk ``k`` owns the ``k``-th child of
``SeedSequence(seed)``; normals come from that child's generator in blocks
of steps, only for paths still alive, and the stepping itself runs in a
numba kernel.  Chunk results are concatenated in order, so every estimate
is a pure function of the configuration.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
import csv
import io
import math

import numba
import numpy as np

from .grid import GridField
from .model import ModelParams, State, check_state, validate
from .policy import ThresholdCurve

NO_PAY, CURVE, FIELD, ALWAYS_PAY = 0, 1, 2, 3
CHUNK = 8192
BLOCK = 256


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 30.0
    paths: int = 10_000
    seed: int = 12345
    antithetic: bool = False
    bridge: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0 and self.paths >= 1):
            raise ValueError("need dt > 0, horizon > 0 and paths >= 1")
        if self.antithetic and self.paths % 2:
            raise ValueError("antithetic sampling needs an even path count")

    @property
    def steps(self) -> int:
        return max(1, int(math.ceil(self.horizon / self.dt - 1e-9)))

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PathResult:
    discounted_dividends: float
    ruin_time: float | None
    terminal: State


@dataclass(frozen=True)
class Batch:
    """Raw per-path output; ``ruin_time`` is NaN for paths alive at the horizon."""

    discounted: np.ndarray
    ruin_time: np.ndarray
    x: np.ndarray
    vartheta: np.ndarray
    clamps: int
    steps: int

    @property
    def clamp_fraction(self) -> float:
        return self.clamps / (self.discounted.size * self.steps)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    paths: int
    clamp_fraction: float = 0.0

    def within(self, target: float, n_se: float = 3.0, rel: float = 0.0) -> bool:
        return abs(self.mean - target) <= n_se * self.stderr + rel * abs(target)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "paths": self.paths,
                "clamp_fraction": self.clamp_fraction}


def _policy_arrays(policy):
    """Encode the strategy for the kernel as (mode, thetas, levels, xs, field)."""
    empty = np.zeros(1)
    empty2 = np.zeros((1, 1))
    if policy is None or (isinstance(policy, str) and policy == "never"):
        return NO_PAY, empty, empty, empty, empty2
    if isinstance(policy, str) and policy == "always":
        return ALWAYS_PAY, empty, empty, empty, empty2
    if isinstance(policy, ThresholdCurve):
        return (CURVE, np.ascontiguousarray(policy.thetas, dtype=float),
                np.ascontiguousarray(policy.levels, dtype=float), empty, empty2)
    if isinstance(policy, GridField):
        return (FIELD, np.ascontiguousarray(policy.grid.thetas), empty,
                np.ascontiguousarray(policy.grid.xs), np.ascontiguousarray(policy.values, dtype=float))
    raise TypeError(f"unsupported policy {policy!r}")


@numba.njit(cache=True)
def _bisect(grid, v):
    """Index ``i`` with ``grid[i] <= v < grid[i+1]``, clipped to ``[0, size-2]``."""
    lo, hi = 0, grid.size - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if grid[mid] <= v:
            lo = mid
        else:
            hi = mid
    return lo


def _rate(mode, x, th, kmax, ct, cb, fx, fv):
    """Python reference for the policy lookup inlined in :func:`_advance`."""
    if mode == NO_PAY:
        return 0.0
    if mode == ALWAYS_PAY:
        return kmax
    if mode == CURVE:
        return kmax if x >= np.interp(th, ct, cb) else 0.0
    i = int(np.argmin(np.abs(fx - x)))
    j = int(np.argmin(np.abs(ct - th)))
    return float(fv[i, j])


@numba.njit(cache=True)
def _advance(idx, z, k0, width, x, th, disc, ruin, alive, th1, th2, sigma, delta, kmax, dt,
             mode, ct, cb, fx, fv, bridge, absorb, useed):
    """Advance the paths (or antithetic pairs) in ``idx`` by ``z.shape[1]`` steps."""
    np.random.seed(useed)
    sq = math.sqrt(dt)
    inv_sig = 1.0 / sigma
    bridge_scale = 2.0 / (sigma * sigma * dt)
    decay = math.exp(-delta * dt)
    ncurve = ct.size
    nfx = fx.size
    clamps = 0
    for j in range(idx.size):
        p = idx[j]
        for m in range(width):
            q = p * width + m
            if not alive[q]:
                continue
            xx = x[q]
            tt = th[q]
            acc = disc[q]
            df = math.exp(-delta * k0 * dt)
            sign = 1.0 if m == 0 else -1.0
            for s in range(z.shape[1]):
                dw = sign * z[j, s] * sq
                # policy lookup is written out here; a helper taking the
                # arrays costs refcount traffic on every step
                if mode == ALWAYS_PAY:
                    u = kmax
                elif mode == NO_PAY:
                    u = 0.0
                elif mode == CURVE:
                    if tt <= ct[0]:
                        b = cb[0]
                    elif tt >= ct[ncurve - 1]:
                        b = cb[ncurve - 1]
                    else:
                        i = _bisect(ct, tt)
                        w = (tt - ct[i]) / (ct[i + 1] - ct[i])
                        b = cb[i] + w * (cb[i + 1] - cb[i])
                    u = kmax if xx >= b else 0.0
                else:
                    if xx >= fx[nfx - 1]:
                        i = nfx - 1
                    elif xx <= fx[0]:
                        i = 0
                    else:
                        i = _bisect(fx, xx)
                        if xx - fx[i] > fx[i + 1] - xx:
                            i += 1
                    if tt >= ct[ncurve - 1]:
                        jj = ncurve - 1
                    elif tt <= ct[0]:
                        jj = 0
                    else:
                        jj = _bisect(ct, tt)
                        if tt - ct[jj] > ct[jj + 1] - tt:
                            jj += 1
                    u = fv[i, jj]
                acc += df * u * dt
                xold = xx
                xx = xold + (tt - u) * dt + sigma * dw
                tnew = tt + (tt - th1) * (th2 - tt) * inv_sig * dw
                if tnew < th1:
                    tnew = th1
                    clamps += 1
                elif tnew > th2:
                    tnew = th2
                    clamps += 1
                tt = tnew
                df *= decay
                if absorb:
                    hit = xx <= 0.0
                    if not hit and bridge:
                        # crossing probabilities below e^-40 are skipped outright
                        expo = bridge_scale * xold * xx
                        if expo < 40.0 and np.random.random() < math.exp(-expo):
                            hit = True
                    if hit:
                        alive[q] = False
                        ruin[q] = (k0 + s + 1) * dt
                        break
            x[q] = xx
            th[q] = tt
            disc[q] = acc
    return clamps


def _chunk_rngs(seed: int, nchunks: int) -> list[np.random.Generator]:
    return [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(nchunks)]


def _run_chunk(rng, npaths, params, start, arrays, cfg, steps, absorb):
    mode, ct, cb, fx, fv = arrays
    width = 2 if cfg.antithetic else 1
    x = np.full(npaths, float(start.x))
    th = np.full(npaths, float(start.vartheta))
    disc = np.zeros(npaths)
    ruin = np.full(npaths, np.nan)
    alive = np.ones(npaths, dtype=np.bool_)
    if absorb and start.x <= 0.0:
        alive[:] = False
        ruin[:] = 0.0
    idx = np.arange(npaths // width)
    clamps = 0
    k = 0
    while k < steps and idx.size:
        nb = min(BLOCK, steps - k)
        z = rng.standard_normal((idx.size, nb))
        useed = int(rng.integers(0, 2**31 - 1))
        clamps += _advance(idx, z, k, width, x, th, disc, ruin, alive, params.theta1,
                           params.theta2, params.sigma, params.delta, params.kmax, cfg.dt,
                           mode, ct, cb, fx, fv, cfg.bridge, absorb, useed)
        k += nb
        live = alive.reshape(-1, width).any(axis=1)
        idx = idx[live[idx]]
    return disc, ruin, x, th, clamps


def simulate_batch(params: ModelParams, start: State, policy, cfg: SimConfig,
                   absorb: bool = True) -> Batch:
    """Run ``cfg.paths`` paths from ``start`` under ``policy``.

    ``policy`` is ``None``/``"never"``, ``"always"``, a :class:`ThresholdCurve`
    (pay iff ``x >= b(vartheta)``) or a :class:`GridField` of rates looked up at
    the nearest node.  With ``absorb=False`` paths ignore ruin and run to the
    horizon, which is what the filter checks need.
    """
    validate(params)
    if absorb:
        check_state(params, start)
    arrays = _policy_arrays(policy)
    nchunks = -(-cfg.paths // CHUNK)
    rngs = _chunk_rngs(cfg.seed, nchunks)
    parts, clamps = [], 0
    for c, rng in enumerate(rngs):
        npaths = min(CHUNK, cfg.paths - c * CHUNK)
        *arrs, cl = _run_chunk(rng, npaths, params, start, arrays, cfg, cfg.steps, absorb)
        parts.append(arrs)
        clamps += cl
    cols = [np.concatenate([p[i] for p in parts]) for i in range(4)]
    return Batch(*cols, clamps=clamps, steps=cfg.steps)


def simulate_path(params: ModelParams, start: State, policy, cfg: SimConfig) -> PathResult:
    """First path of the batch defined by ``cfg`` (same numbers as path 0 of a full run)."""
    b = simulate_batch(params, start, policy, cfg.replace(paths=2 if cfg.antithetic else 1))
    rt = None if np.isnan(b.ruin_time[0]) else float(b.ruin_time[0])
    return PathResult(float(b.discounted[0]), rt, State(float(b.x[0]), float(b.vartheta[0])))


def mean_stderr(samples: np.ndarray, antithetic: bool = False) -> tuple[float, float]:
    """Sample mean and its standard error; antithetic pairs are averaged first."""
    samples = np.asarray(samples, dtype=float)
    if antithetic:
        samples = 0.5 * (samples[0::2] + samples[1::2])
    n = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return float(samples.mean()), se


def estimate_value(params: ModelParams, start: State, policy, cfg: SimConfig) -> Estimate:
    """Monte Carlo mean and standard error of the discounted dividends."""
    b = simulate_batch(params, start, policy, cfg)
    mean, se = mean_stderr(b.discounted, cfg.antithetic)
    return Estimate(mean, se, cfg.paths, b.clamp_fraction)


def estimate_ruin(params: ModelParams, start: State, policy, t_end: float,
                  cfg: SimConfig) -> Estimate:
    """Fraction of paths ruined by ``t_end``; ``policy=None`` gives the uncontrolled surplus."""
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    b = simulate_batch(params, start, policy, cfg.replace(horizon=t_end))
    hit = ~np.isnan(b.ruin_time)
    mean, se = mean_stderr(hit.astype(float), cfg.antithetic)
    return Estimate(mean, se, cfg.paths, b.clamp_fraction)


def simulate_filter(params: ModelParams, vartheta0: float, t: float, cfg: SimConfig) -> Batch:
    """Uncontrolled, unabsorbed run to time ``t`` from ``(0, vartheta0)``.

    ``Batch.x`` then holds the increments ``Z_t - Z_0`` and ``Batch.vartheta``
    the SDE-stepped drift estimates.
    """
    return simulate_batch(params, State(0.0, vartheta0), None, cfg.replace(horizon=t),
                          absorb=False)


def dump_paths(params: ModelParams, start: State, policy, cfg: SimConfig, count: int = 5,
               every: int = 100) -> str:
    """CSV trace of the first ``count`` paths of chunk 0, sampled every ``every`` steps.

    Uses the same normals as :func:`simulate_batch` (without the bridge test)
    so a suspicious estimate can be looked at path by path.
    """
    validate(params)
    check_state(params, start)
    count = min(count, CHUNK, cfg.paths)
    rng = _chunk_rngs(cfg.seed, 1)[0]
    npaths = min(CHUNK, cfg.paths)
    arrays = _policy_arrays(policy)
    rows = {p: [] for p in range(count)}
    x = np.full(npaths, float(start.x))
    th = np.full(npaths, float(start.vartheta))
    disc = np.zeros(npaths)
    ruin = np.full(npaths, np.nan)
    alive = np.ones(npaths, dtype=np.bool_)
    width = 2 if cfg.antithetic else 1
    idx = np.arange(npaths // width)
    k = 0
    while k < cfg.steps and idx.size:
        nb = min(BLOCK, cfg.steps - k)
        z = rng.standard_normal((idx.size, nb))
        rng.integers(0, 2**31 - 1)
        for s in range(0, nb, every):
            step = min(every, nb - s)
            for p in range(count):
                rows[p].append((k + s, x[p], th[p], disc[p], bool(alive[p])))
            sub = np.ascontiguousarray(z[:, s:s + step])
            _advance(idx, sub, k + s, width, x, th, disc, ruin, alive, params.theta1,
                     params.theta2, params.sigma, params.delta, params.kmax, cfg.dt,
                     *arrays, False, True, 0)
        k += nb
        live = alive.reshape(-1, width).any(axis=1)
        idx = idx[live[idx]]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "t [time]", "X [currency]", "vartheta [currency/time]",
                "discounted [currency]", "alive"])
    for p in range(count):
        for step, xv, tv, dv, al in rows[p]:
            w.writerow([p, repr(step * cfg.dt), repr(float(xv)), repr(float(tv)), repr(float(dv)),
                        int(al)])
    return buf.getvalue()
