"""Batch selection, pathwise continual updates and simulated DMTA cycles."""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .epinet import EpinetPosterior
from .errors import CoarseBindWarning, InputError, NumericError

EXACT_LIMIT = 20_000  # candidate batches scored exhaustively in emax_select


def _samples(posterior):
    s = posterior.samples if isinstance(posterior, EpinetPosterior) else np.asarray(posterior, dtype=np.float64)
    if s.ndim != 2:
        raise InputError("posterior must be a K x N matrix")
    return s


def greedy_select(predictions, b, available=None):
    """Indices of the ``b`` highest predictions (lower index first on ties)."""
    pred = np.asarray(predictions, dtype=np.float64)
    idx = np.arange(len(pred)) if available is None else np.asarray(sorted(available), dtype=int)
    if b > len(idx):
        warnings.warn(f"asked for {b} of {len(idx)} available items; selecting all", CoarseBindWarning, stacklevel=2)
        b = len(idx)
    order = sorted(idx, key=lambda i: (-pred[i], i))
    return [int(i) for i in order[:b]]


def emax(posterior, subset):
    """Mean over sample paths of the best value within ``subset``."""
    subset = list(subset)
    if not subset:
        raise InputError("subset must be non-empty")
    return float(_samples(posterior)[:, subset].max(axis=1).mean())


def _exact_emax_batch(sub, b, cand):
    best, best_value = None, -np.inf
    for combo in itertools.combinations(range(sub.shape[1]), b):
        value = sub[:, combo].max(axis=1).mean()
        if value > best_value:
            best, best_value = combo, value
    return [cand[c] for c in best]


def emax_select(posterior, b, available=None):
    """Batch of ``b`` columns with high EMAX.

    When there are at most ``EXACT_LIMIT`` candidate batches, all of them are
    scored and the best is returned (lowest indices on ties).  Otherwise
    columns are added greedily (largest EMAX of the augmented batch, lowest
    index on ties) and the batch is polished by single swaps with unchosen
    columns until no swap raises EMAX.
    """
    s = _samples(posterior)
    cand = list(range(s.shape[1])) if available is None else sorted(int(i) for i in available)
    if b > len(cand):
        warnings.warn(f"asked for {b} of {len(cand)} available items; selecting all", CoarseBindWarning, stacklevel=2)
        b = len(cand)
    if b == 0:
        return []
    sub = s[:, cand]
    if math.comb(len(cand), b) <= EXACT_LIMIT:
        return _exact_emax_batch(sub, b, cand)
    best = np.full(s.shape[0], -np.inf)
    chosen = []
    for _ in range(b):
        vals = np.maximum(best[:, None], sub).mean(axis=0)
        vals[chosen] = -np.inf
        c = int(np.argmax(vals))
        chosen.append(c)
        best = np.maximum(best, sub[:, c])
    value = best.mean()
    improved = True
    while improved:
        improved = False
        for pos in range(b):
            rest = np.max(sub[:, [c for k, c in enumerate(chosen) if k != pos]], axis=1) if b > 1 else np.full(s.shape[0], -np.inf)
            vals = np.maximum(rest[:, None], sub).mean(axis=0)
            vals[chosen] = -np.inf
            c = int(np.argmax(vals))
            if vals[c] > value + 1e-12:
                chosen[pos], value, improved = c, vals[c], True
    return sorted(cand[c] for c in chosen)


def pathwise_update(posterior, observed, sigma_obs=0.5, seed=0, noise=True):
    """Condition every sample path on observations (Matheron's rule).

    ``observed`` is a list of ``(column, y_true)``.  With ``K`` the empirical
    covariance among observed columns and ``K*`` between all columns and the
    observed ones, path k becomes ``s_k + K* (K + s^2 I)^-1 (y - s_k[obs] - eps_k)``
    with ``eps_k ~ N(0, s^2 I)``, or ``eps_k = 0`` when ``noise`` is False.
    """
    s = _samples(posterior)
    if not observed:
        return posterior
    cols = [int(i) for i, _ in observed]
    y = np.array([float(v) for _, v in observed])
    if len(set(cols)) != len(cols) or any(not 0 <= c < s.shape[1] for c in cols):
        raise InputError("observed columns must be distinct valid indices")
    k = s.shape[0]
    if k < 2:
        raise InputError("need at least 2 sample paths for an empirical covariance")
    centered = s - s.mean(axis=0)
    obs = centered[:, cols]
    k_oo = obs.T @ obs / (k - 1)
    k_ao = centered.T @ obs / (k - 1)
    system = k_oo + sigma_obs**2 * np.eye(len(cols))
    if np.linalg.matrix_rank(system) < len(cols):
        raise NumericError("singular observation covariance; use sigma_obs > 0")
    eps = np.random.default_rng([*np.ravel(seed).tolist(), 53]).standard_normal((k, len(cols))) * sigma_obs if noise else 0.0
    resid = y[None, :] - s[:, cols] - eps
    try:
        gain = np.linalg.solve(system, k_ao.T)  # |obs| x N
    except np.linalg.LinAlgError:
        raise NumericError("singular observation covariance; use sigma_obs > 0") from None
    updated = s + resid @ gain
    if isinstance(posterior, EpinetPosterior):
        return posterior.with_samples(updated)
    return updated


# --------------------------------------------------------------------------
# DMTA simulation


class Strategy(str, enum.Enum):
    GREEDY = "greedy"
    CONTINUAL_GREEDY = "continual_greedy"
    CONTINUAL_EMAX = "continual_emax"
    STATIC_EXTERNAL = "static_external"
    ORACLE = "oracle"


@dataclass(frozen=True)
class SelectionPool:
    ids: tuple
    latents: np.ndarray
    base_predictions: np.ndarray
    true_y: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise InputError("pool ids must be unique")
        if len(self.latents) != n or len(self.base_predictions) != n or len(self.true_y) != n:
            raise InputError("pool arrays must have one row per id")

    def __len__(self):
        return len(self.ids)


@dataclass
class DMTAState:
    strategy: Strategy
    cycle: int = 0
    selected: list = field(default_factory=list)
    observed: list = field(default_factory=list)
    max_gap: list = field(default_factory=list)
    flags: list = field(default_factory=list)


def dmta_simulate(pool, strategy, cycles, b=5, sigma_obs=0.5, seed=0, posterior=None, external=None):
    """Run select -> observe -> update cycles and track the max-gap.

    Continual strategies re-condition the prior ``posterior`` on every
    observation made so far before each selection.  ``max_gap`` after each
    cycle is the pool's best true value minus the best value observed so far.
    """
    strategy = Strategy(strategy)
    n = len(pool)
    if strategy in (Strategy.CONTINUAL_GREEDY, Strategy.CONTINUAL_EMAX) and posterior is None:
        raise InputError(f"{strategy.value} needs a prior posterior")
    if strategy is Strategy.STATIC_EXTERNAL and (external is None or len(external) != n):
        raise InputError("static_external needs one external prediction per pool item")
    prior = None if posterior is None else _samples(posterior)
    available = set(range(n))
    best_true = float(np.max(pool.true_y))
    state = DMTAState(strategy)
    best_seen = -np.inf
    for cycle in range(cycles):
        if not available:
            state.flags.append(f"pool exhausted after {cycle} cycles")
            break
        if strategy is Strategy.GREEDY:
            picks = greedy_select(pool.base_predictions, min(b, len(available)), available)
        elif strategy is Strategy.STATIC_EXTERNAL:
            picks = greedy_select(external, min(b, len(available)), available)
        elif strategy is Strategy.ORACLE:
            picks = greedy_select(pool.true_y, min(b, len(available)), available)
        else:
            current = pathwise_update(prior, state.observed, sigma_obs, seed=(seed, cycle))
            if strategy is Strategy.CONTINUAL_GREEDY:
                picks = greedy_select(current.mean(axis=0), min(b, len(available)), available)
            else:
                picks = emax_select(current, min(b, len(available)), available)
        available.difference_update(picks)
        obs = [(i, float(pool.true_y[i])) for i in picks]
        state.observed.extend(obs)
        state.selected.append([pool.ids[i] for i in picks])
        best_seen = max(best_seen, max(y for _, y in obs))
        state.max_gap.append(best_true - best_seen)
        state.cycle = cycle + 1
    return state


# --------------------------------------------------------------------------
# synthetic activity-cliff pools


@dataclass
class CliffWorld:
    """A selection pool plus labeled training compounds from a subset of its series."""

    pool: SelectionPool
    train_latents: np.ndarray
    train_base: np.ndarray
    train_y: np.ndarray
    train_assays: tuple


def make_cliff_pool(n_items=500, n_series=25, latent_dim=8, seed=0, n_train_series=10, train_per_series=12,
                    bias_scale=1.0, cliff_rate=0.1, cliff_size=2.0):
    """Congeneric series with activity cliffs and a base model biased per series.

    Items of a series share a latent center.  True affinities combine a series
    level, a smooth within-series term and occasional cliff jumps the base
    model does not see; the base model is also off by a per-series bias.
    """
    if not 0 <= n_train_series <= n_series:
        raise InputError("n_train_series must lie between 0 and n_series")
    rng = np.random.default_rng([seed, 61])
    centers = 2.0 * rng.standard_normal((n_series, latent_dim))
    level = 6.0 + 0.7 * rng.standard_normal(n_series)
    bias = bias_scale * rng.standard_normal(n_series)
    w = rng.standard_normal(latent_dim) / np.sqrt(latent_dim)

    def series_items(s, count):
        g = centers[s] + 0.4 * rng.standard_normal((count, latent_dim))
        smooth = 0.8 * (g - centers[s]) @ w
        jumps = cliff_size * rng.choice([-1.0, 1.0], count) * (rng.random(count) < cliff_rate)
        return g, level[s] + smooth + jumps, level[s] + bias[s] + smooth

    series = np.arange(n_items) % n_series
    g, y, base = (np.empty((n_items, latent_dim)), np.empty(n_items), np.empty(n_items))
    for s in range(n_series):
        idx = np.flatnonzero(series == s)
        g[idx], y[idx], base[idx] = series_items(s, len(idx))
    pool = SelectionPool(tuple(f"cpd-{i}" for i in range(n_items)), g, base, y)
    tg, ty, tb, ta = [], [], [], []
    for s in rng.choice(n_series, n_train_series, replace=False):
        gs, ys, bs = series_items(int(s), train_per_series)
        tg.append(gs)
        ty.append(ys)
        tb.append(bs)
        ta += [f"series-{s}"] * train_per_series
    return CliffWorld(pool, np.concatenate(tg), np.concatenate(tb), np.concatenate(ty), tuple(ta))
