"""Metropolis-Hastings model fitting with early rejection and tempering.

The sampler maximizes the posterior p(x|Q) = L(Q|x) p(x) with
log L = sqrt(similarity). Proposals mutate one active parameter at a
time (local Gaussian with probability beta, else a global uniform
redraw); out-of-bounds proposals are kept and die through the zero
prior, which keeps the proposal kernel symmetric.

Early rejection walks the dividing levels coarse-to-fine and re-tests
acceptance at every level against the current state's cached top-level
posterior, aborting on the first rejection. The asymmetry is deliberate:
the coarse-level posterior of the proposal is compared against the
fine-level posterior of the incumbent, which biases early tests toward
rejection; proposals are accepted carefully but rejected boldly.

Parallel tempering runs n_chains at a geometric temperature ladder and
attempts one adjacent-pair state swap per round-robin round. Results
are deterministic given (seed, n_chains, budget).
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import PointCloud, eta_top
from .grammar import (
    ModelFamily,
    ParamVector,
    active_params,
    instantiate,
    log_prior,
    resync_params,
    sample_prior,
)
from .metrics import MetricConfig, SampledModel, mm, smm, wmm
from .spatial import NNIndex

TRACE_COLUMNS = (
    "iter",
    "seconds",
    "chain",
    "temperature",
    "level_reached",
    "log_likelihood",
    "accepted",
    "best_log_post",
)

_METRIC_FNS = {"MM": mm, "SMM": smm, "WMM": wmm}


def default_temperatures(n_chains: int = 10, ratio: float = 1.5) -> Tuple[float, ...]:
    return tuple(ratio ** k for k in range(n_chains))


@dataclass(frozen=True)
class FitConfig:
    """All sampler tunables."""

    delta: float
    budget: int
    epsilon: float = 1e-8
    beta: float = 0.8
    sigma: float = 0.05
    h: float = 2.5
    metric: str = "WMM"
    n_chains: int = 10
    temperatures: Optional[Tuple[float, ...]] = None
    swap_prob: float = 0.1
    seed: int = 0
    early_rejection: bool = True

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.metric not in _METRIC_FNS:
            raise ValueError(f"metric must be one of {sorted(_METRIC_FNS)}")
        if self.n_chains < 1:
            raise ValueError("need at least one chain")
        if not 0 <= self.swap_prob <= 1:
            raise ValueError("swap_prob must lie in [0, 1]")
        temps = self.temperatures
        if temps is None:
            temps = default_temperatures(self.n_chains)
        temps = tuple(float(t) for t in temps)
        if len(temps) != self.n_chains:
            raise ValueError("temperature ladder length must equal n_chains")
        if any(t < 1.0 for t in temps):
            raise ValueError("temperatures must be >= 1")
        object.__setattr__(self, "temperatures", temps)

    def metric_config(self) -> MetricConfig:
        return MetricConfig(epsilon=self.epsilon, h=self.h)


@dataclass
class ChainState:
    params: ParamVector
    log_post_top: float
    temperature: float
    chain_id: int
    proposal_rng: np.random.Generator
    accept_rng: np.random.Generator


@dataclass
class FitResult:
    best_params: ParamVector
    best_log_post: float
    trace: List[tuple]
    wall_seconds: float
    proposals_per_second: float
    early_rejection: bool

    def trace_column(self, name: str) -> list:
        i = TRACE_COLUMNS.index(name)
        return [row[i] for row in self.trace]


# =============================================================================
# CORE PIECES
# =============================================================================


def log_likelihood(r: float) -> float:
    """Log of the likelihood exp(sqrt(r)): just sqrt(r)."""
    if r < 0:
        raise ValueError("similarity must be non-negative")
    return math.sqrt(r)


def accept_prob(logp_new: float, logp_cur: float, temperature: float = 1.0) -> float:
    """Metropolis acceptance min(1, exp((logp_new - logp_cur)/T))."""
    if logp_new == -math.inf:
        return 0.0
    if not math.isfinite(logp_cur):
        raise ValueError("current log-posterior must be finite")
    delta = (logp_new - logp_cur) / temperature
    if delta >= 0:
        return 1.0
    return math.exp(delta)


def propose(
    params: ParamVector,
    descriptors: Dict,
    rng: np.random.Generator,
    beta: float,
    sigma: float,
    family: Optional[ModelFamily] = None,
) -> ParamVector:
    """Mutate one active parameter chosen uniformly at random.

    Continuous: with probability beta a local Gaussian move with
    sigma_x = sigma * (max - min), else a global uniform redraw.
    Discrete parameters always move globally. The draw is kept even when
    it leaves the bounds (the prior rejects it later). A structural
    change re-syncs the vector so new floor parameters get prior draws.
    """
    keys = list(descriptors)
    key = keys[rng.integers(len(keys))]
    desc = descriptors[key]
    t = rng.uniform()
    if desc.kind == "continuous":
        lo, hi = desc.bounds
        if t < beta:
            value = float(rng.normal(params.get(key), sigma * (hi - lo)))
        else:
            value = float(rng.uniform(lo, hi))
    else:
        value = desc.values[rng.integers(len(desc.values))]
    proposed = params.with_value(key, value)
    if family is not None and key == "height" and desc.contains(value):
        proposed = resync_params(family, proposed, rng)
    return proposed


def model_eta_top(family: ModelFamily, params: ParamVector, delta: float) -> int:
    """Top dividing level of the instantiated model (max across primitives)."""
    prims = instantiate(family, params)
    return max(eta_top(p.gamma, delta) for p in prims)


def posterior_log_at_level(
    params: ParamVector,
    q_index: NNIndex,
    eta: int,
    family: ModelFamily,
    cfg: FitConfig,
    override: Optional[Callable[[ParamVector], float]] = None,
) -> float:
    """log-likelihood + log-prior with the model divided at level eta.

    An empty division (e.g. the degenerate frame) has similarity 0. The
    override hook replaces the metric likelihood with a closed-form
    log-density, used by the sampler-correctness tests.
    """
    lp = log_prior(family, params)
    if lp == -math.inf:
        return -math.inf
    if override is not None:
        return override(params) + lp
    prims = instantiate(family, params)
    model = SampledModel.from_primitives(prims, eta)
    if len(model) == 0 or model.total_measure <= 0:
        return 0.0 + lp
    sim = _METRIC_FNS[cfg.metric](model, q_index, cfg.metric_config())
    return log_likelihood(sim.value) + lp


# =============================================================================
# MH STEP AND DRIVER
# =============================================================================


def mh_step(
    chain: ChainState,
    q_index: NNIndex,
    family: ModelFamily,
    cfg: FitConfig,
    override: Optional[Callable[[ParamVector], float]] = None,
) -> Tuple[int, bool]:
    """One proposal on one chain. Returns (level_reached, accepted).

    With early rejection the proposal must survive an acceptance test at
    every dividing level 0..eta_top, each against the incumbent's cached
    top-level posterior with a fresh uniform draw; the first failure
    keeps the current state. Without it, a single test at eta_top.
    """
    descriptors = active_params(family, chain.params)
    proposed = propose(chain.params, descriptors, chain.proposal_rng, cfg.beta, cfg.sigma, family)

    if log_prior(family, proposed) == -math.inf:
        # dies at the first test regardless of level; still consume one draw
        chain.accept_rng.uniform()
        return 0, False

    top = model_eta_top(family, proposed, cfg.delta)
    if cfg.early_rejection:
        for eta in range(top + 1):
            logp_eta = posterior_log_at_level(proposed, q_index, eta, family, cfg, override)
            alpha = accept_prob(logp_eta, chain.log_post_top, chain.temperature)
            if chain.accept_rng.uniform() >= alpha:
                return eta, False
        chain.params = proposed
        chain.log_post_top = logp_eta  # last loop value is the top level
        return top, True

    logp_top = posterior_log_at_level(proposed, q_index, top, family, cfg, override)
    alpha = accept_prob(logp_top, chain.log_post_top, chain.temperature)
    if chain.accept_rng.uniform() < alpha:
        chain.params = proposed
        chain.log_post_top = logp_top
        return top, True
    return top, False


def run_fit(
    family: ModelFamily,
    Q: PointCloud,
    cfg: FitConfig,
    override: Optional[Callable[[ParamVector], float]] = None,
    snapshot_every: Optional[int] = None,
    snapshot_hook: Optional[Callable[[int, ParamVector], None]] = None,
) -> FitResult:
    """Fit a family to a query with tempered MH under a total proposal budget.

    The budget counts proposals summed over all chains (round-robin).
    After every round one adjacent temperature pair may swap states. The
    incumbent best is updated from any chain whose committed top-level
    posterior exceeds it.
    """
    if len(Q) == 0:
        raise ValueError("empty query")
    if Q.resolution_hint is not None and cfg.delta > Q.resolution_hint / 2 + 1e-12:
        warnings.warn(
            "delta should be at least 2x smaller than the query resolution", stacklevel=2
        )

    q_index = NNIndex(Q)
    root = np.random.SeedSequence(cfg.seed)
    streams = root.spawn(1 + 2 * cfg.n_chains)
    coordinator = np.random.default_rng(streams[0])

    chains: List[ChainState] = []
    for k in range(cfg.n_chains):
        prop_rng = np.random.default_rng(streams[1 + 2 * k])
        acc_rng = np.random.default_rng(streams[2 + 2 * k])
        params = sample_prior(family, prop_rng)
        lp = posterior_log_at_level(
            params, q_index, model_eta_top(family, params, cfg.delta), family, cfg, override
        )
        chains.append(ChainState(params, lp, cfg.temperatures[k], k, prop_rng, acc_rng))

    best = max(chains, key=lambda c: c.log_post_top)
    best_params, best_lp = best.params, best.log_post_top

    trace: List[tuple] = []
    t0 = time.perf_counter()
    done = 0
    while done < cfg.budget:
        for chain in chains:
            if done >= cfg.budget:
                break
            level, accepted = mh_step(chain, q_index, family, cfg, override)
            if chain.log_post_top > best_lp:
                best_lp = chain.log_post_top
                best_params = chain.params
            trace.append(
                (
                    done,
                    time.perf_counter() - t0,
                    chain.chain_id,
                    chain.temperature,
                    level,
                    chain.log_post_top,
                    int(accepted),
                    best_lp,
                )
            )
            done += 1
            if snapshot_every and snapshot_hook and done % snapshot_every == 0:
                snapshot_hook(done, best_params)
        # one adjacent-pair swap attempt per round
        if cfg.n_chains >= 2 and coordinator.uniform() < cfg.swap_prob:
            j = int(coordinator.integers(cfg.n_chains - 1))
            a, b = chains[j], chains[j + 1]
            log_alpha = (1.0 / a.temperature - 1.0 / b.temperature) * (
                b.log_post_top - a.log_post_top
            )
            alpha = 1.0 if log_alpha >= 0 else math.exp(log_alpha)
            if coordinator.uniform() < alpha:
                a.params, b.params = b.params, a.params
                a.log_post_top, b.log_post_top = b.log_post_top, a.log_post_top

    wall = time.perf_counter() - t0
    pps = cfg.budget / wall if wall > 0 else float("inf")
    return FitResult(
        best_params=best_params,
        best_log_post=best_lp,
        trace=trace,
        wall_seconds=wall,
        proposals_per_second=pps,
        early_rejection=cfg.early_rejection,
    )
