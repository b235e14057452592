"""Private shrinking dartboard and the limited-updates stochastic reduction."""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Protocol

import numpy as np

from dpol.dp_primitives import (CompositionLedger, ParameterError,
                                PrivacyBudget, RngStream,
                                sample_exponential_mechanism)
from dpol.experts_env import (AlgorithmTrace, LossSequence, RegretReport,
                              gen_stochastic, score_run)

logger = logging.getLogger(__name__)


def privacy_identity(eta: float, p: float, T: int, delta: float,
                     B: int = 1) -> float:
  """Epsilon guaranteed for step size ``eta``, switch probability ``p``.

  ``B == 1`` uses the plain algorithm's bounds (pure or approximate);
  ``B > 1`` uses the batched bound, which exists only for ``delta > 0``.
  """
  if B == 1:
    if delta > 0:
      return (5 * eta / p + 100 * T * p * eta**2
              + 20 * eta * math.sqrt(T * p * math.log(1 / delta)))
    return eta / p + 16 * T * p * eta
  if not delta > 0:
    raise ParameterError("the batched bound needs delta > 0")
  return (5 * eta / (B * p) + 100 * T * p * eta**2 / B**3
          + 20 * eta / B * math.sqrt(12 * T * p / B * math.log(1 / delta)))


def regret_bound(eta: float, p: float, T: int, d: int, B: int = 1) -> float:
  """``eta T + B ln d / eta + 2T exp(-Tp/3B)``."""
  return eta * T + B * math.log(d) / eta + 2 * T * math.exp(-T * p / (3 * B))


@dataclasses.dataclass(frozen=True)
class DartboardConfig:
  T: int
  d: int
  eta: float
  p: float
  K: int
  delta: float = 0.0
  B: int = 1

  def __post_init__(self):
    if not 0 < self.eta < 0.5:
      raise ParameterError(f"eta must lie in (0, 1/2), got {self.eta}")
    if not 0 < self.p < 0.5:
      raise ParameterError(f"p must lie in (0, 1/2), got {self.p}")
    if self.B < 1 or self.K < 1:
      raise ParameterError("B and K must be >= 1")

  @classmethod
  def make(cls, T: int, d: int, eta: float, p: float, delta: float = 0.0,
           B: int = 1, K: int | None = None) -> "DartboardConfig":
    if K is None:
      K = math.ceil(4 * T * p / B)
    return cls(T, d, eta, p, max(1, K), delta, B)

  @classmethod
  def from_mode(cls, mode: str, T: int, d: int,
                budget: PrivacyBudget) -> "DartboardConfig":
    """Parameters from one of the corollaries: ``cor_pure``, ``cor_appr``,
    ``cor_batch``."""
    eps, delta = budget.epsilon, budget.delta
    if mode == "cor_pure":
      p = 1 / math.sqrt(T)
      return cls.make(T, d, p * eps / 20, p)
    if not delta > 0:
      raise ParameterError(f"{mode} needs delta > 0")
    L = math.log(1 / delta)
    if mode == "cor_appr":
      eps0 = min(eps / 2, L**(1 / 3) * T**(-1 / 6) * math.sqrt(math.log(d)))
      p = (T * L)**(-1 / 3)
      return cls.make(T, d, p * eps0 / 20, p, delta)
    if mode == "cor_batch":
      B = max(1, round(batch_size(T, d, eps, delta)))
      p = (B / (T * L))**(1 / 3)
      eta = B * p * eps / 40
      # The batched bound carries an extra sqrt(12) the corollary's
      # arithmetic drops; shrink eta until it holds.
      if privacy_identity(eta, p, T, delta, B) > eps:
        lo, hi = 0.0, eta
        for _ in range(200):
          mid = 0.5 * (lo + hi)
          if privacy_identity(mid, p, T, delta, B) <= eps:
            lo = mid
          else:
            hi = mid
        eta = lo
      return cls.make(T, d, eta, p, delta, B)
    raise ParameterError(f"unknown eta_mode {mode!r}")

  @property
  def epsilon(self) -> float:
    return privacy_identity(self.eta, self.p, self.T, self.delta, self.B)

  def privacy_spent(self) -> PrivacyBudget:
    return PrivacyBudget(self.epsilon, self.delta)

  def ledger(self) -> CompositionLedger:
    led = CompositionLedger()
    led.add("dartboard", self.epsilon, self.delta)
    return led

  def regret_bound(self) -> float:
    return regret_bound(self.eta, self.p, self.T, self.d, self.B)


def batch_size(T: int, d: int, eps: float, delta: float) -> float:
  """``ln^{2/5}(1/delta) ln^{3/5}(d) / (T^{1/5} eps^{3/5})`` (unrounded)."""
  return (math.log(1 / delta)**0.4 * math.log(d)**0.6
          / (T**0.2 * eps**0.6))


def weight_log_ratio(loss_row: np.ndarray, eta: float) -> np.ndarray:
  """``ln(w^t / w^{t-1}) = loss * ln(1 - eta)``."""
  return loss_row * math.log1p(-eta)


def _log_weights(losses: np.ndarray, eta: float) -> np.ndarray:
  """Row t-1 holds ``ln w^t``; ``w^1 = 1``."""
  T, d = losses.shape
  lw = np.zeros((T, d))
  for t in range(1, T):
    lw[t] = lw[t - 1] + weight_log_ratio(losses[t - 1], eta)
  return lw


def _normalise(logw: np.ndarray) -> np.ndarray:
  w = np.exp(logw - logw.max(axis=-1, keepdims=True))
  return w / w.sum(axis=-1, keepdims=True)


def mw_distribution(losses, eta: float) -> np.ndarray:
  """Multiplicative-weights law ``P^t ∝ (1-eta)^{S_{t-1}}``, one row per t."""
  losses = np.asarray(losses, dtype=float)
  prev = np.vstack([np.zeros(losses.shape[1]),
                    np.cumsum(losses, axis=0)[:-1]])
  w = (1 - eta)**(prev - prev.min(axis=1, keepdims=True))
  return w / w.sum(axis=1, keepdims=True)


@dataclasses.dataclass
class _ChainDraws:
  actions: np.ndarray
  z1: np.ndarray
  z2: np.ndarray
  resampled: np.ndarray
  k: np.ndarray


def _simulate(losses: np.ndarray, eta: float, p: float, K: int,
              rng: RngStream, n: int) -> _ChainDraws:
  """Run ``n`` independent copies of the dartboard chain in lock step."""
  T, d = losses.shape
  lw = _log_weights(losses, eta)
  probs = _normalise(lw)
  cdf = np.cumsum(probs, axis=1)
  acts = np.empty((n, T), dtype=np.int64)
  z1 = np.ones((n, T), dtype=bool)
  z2 = np.ones((n, T), dtype=bool)
  res = np.zeros((n, T), dtype=bool)
  gen = rng.gen
  acts[:, 0] = np.minimum(np.searchsorted(cdf[0], gen.random(n), side="right"),
                          d - 1)
  k = np.ones(n, dtype=np.int64)
  for t in range(1, T):
    prev = acts[:, t - 1]
    first = gen.random(n) < 1 - p
    ratio = np.exp(weight_log_ratio(losses[t - 1], eta))[prev]
    second = gen.random(n) < ratio
    u = gen.random(n)
    keep = first & second
    switch = ~keep & (k < K)
    fresh = np.minimum(np.searchsorted(cdf[t], u, side="right"), d - 1)
    acts[:, t] = np.where(switch, fresh, prev)
    k += switch
    z1[:, t] = first
    z2[:, t] = second
    res[:, t] = switch
  return _ChainDraws(acts, z1, z2, res, k)


def _trace_from_draws(draws: _ChainDraws, per_round: np.ndarray, B: int,
                      T: int, seq: LossSequence) -> AlgorithmTrace:
  trace = AlgorithmTrace()
  for t in range(T):
    m = t // B
    x = int(draws.actions[0, m])
    first = bool(draws.z1[0, m])
    at_boundary = t % B == 0
    trace.record(x, seq.losses[t, x], at_boundary and bool(draws.resampled[0, m]),
                 0,
                 z1=first if m and at_boundary else "",
                 z2=bool(draws.z2[0, m]) if m and at_boundary and first else "",
                 resampled=at_boundary and bool(draws.resampled[0, m]))
    if at_boundary and draws.resampled[0, m]:
      trace.log(t + 1, "resample")
  return trace


def run_dartboard(seq: LossSequence, cfg: DartboardConfig,
                  rng: RngStream) -> tuple[AlgorithmTrace, RegretReport]:
  if cfg.B != 1:
    return run_dartboard_batched(seq, cfg, rng)
  return _run(seq, cfg, rng, seq.losses, 1)


def run_dartboard_batched(seq: LossSequence, cfg: DartboardConfig,
                          rng: RngStream) -> tuple[AlgorithmTrace, RegretReport]:
  """Dartboard on batch-averaged losses; the expert is fixed within a batch.

  A final partial batch is padded with zero losses for the update only;
  regret is always scored on the original rounds.
  """
  B = cfg.B
  if B == 1:
    return _run(seq, cfg, rng, seq.losses, 1)
  T, d = seq.T, seq.d
  meta_T = math.ceil(T / B)
  padded = np.zeros((meta_T * B, d))
  padded[:T] = seq.losses
  if meta_T * B != T:
    logger.info("padding %d rounds of zero loss to complete the last batch",
                meta_T * B - T)
  grouped = padded.reshape(meta_T, B, d).mean(axis=1)
  return _run(seq, cfg, rng, grouped, B)


def _run(seq, cfg, rng, table, B):
  if seq.T != cfg.T or seq.d != cfg.d:
    raise ParameterError("config does not match sequence dimensions")
  draws = _simulate(table, cfg.eta, cfg.p, cfg.K, rng, 1)
  trace = _trace_from_draws(draws, table, B, seq.T, seq)
  trace.ledger = cfg.ledger()
  trace.meta.update(switches=int(draws.k[0]), K=cfg.K,
                    privacy=cfg.privacy_spent(),
                    budget=cfg.privacy_spent())
  return trace, score_run(seq, trace)


def simulate_marginals(seq: LossSequence, cfg: DartboardConfig, rng: RngStream,
                       n: int) -> tuple[np.ndarray, np.ndarray]:
  """Empirical marginals of x_t over ``n`` runs, plus each run's final k."""
  draws = _simulate(seq.losses, cfg.eta, cfg.p, cfg.K, rng, n)
  freq = np.stack([np.bincount(draws.actions[:, t], minlength=seq.d) / n
                   for t in range(seq.T)])
  return freq, draws.k


def exact_marginal_oracle(seq: LossSequence, eta: float, p: float,
                          limit: int = 10**6) -> np.ndarray:
  """Exact marginals ``Q_t`` of the unlimited-switch chain via its recurrence.

  ``Q_t(x) = p P^t(x) + (1-p) r_x Q_{t-1}(x)
             + (1-p) P^t(x) sum_x' Q_{t-1}(x') (1 - r_x')``
  where ``r_x = w^t_x / w^{t-1}_x``.
  """
  if seq.T * seq.d > limit:
    raise ParameterError(f"d*T = {seq.T * seq.d} exceeds the exact-oracle "
                         f"guard {limit}")
  lw = _log_weights(seq.losses, eta)
  P = _normalise(lw)
  Q = np.empty_like(P)
  Q[0] = P[0]
  for t in range(1, seq.T):
    r = np.exp(weight_log_ratio(seq.losses[t - 1], eta))
    leave = float(np.dot(Q[t - 1], 1 - r))
    Q[t] = p * P[t] + (1 - p) * r * Q[t - 1] + (1 - p) * P[t] * leave
  return Q


def tv_distance(a, b) -> float:
  return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


# --------------------------------------------------------------------------
# Stochastic adversaries


class ScoSolver(Protocol):
  """A private stochastic-optimisation routine over the d experts."""

  def solve(self, samples: np.ndarray, budget: PrivacyBudget,
            rng: RngStream) -> int:
    ...


def baseline_sco_selector(samples, budget: PrivacyBudget,
                          rng: RngStream) -> int:
  """Exponential mechanism on per-expert summed loss at ``eta = epsilon``."""
  samples = np.atleast_2d(np.asarray(samples, dtype=float))
  if samples.shape[0] == 0:
    raise ParameterError("need at least one sample")
  return sample_exponential_mechanism(rng, samples.sum(axis=0), budget.epsilon)


class BaselineSelector:
  def solve(self, samples, budget, rng):
    return baseline_sco_selector(samples, budget, rng)


def update_rounds(T: int) -> list[int]:
  """Rounds ``2^l <= T`` with ``l >= 1``."""
  return [1 << l for l in range(1, T.bit_length()) if 1 << l <= T]


def run_stochastic_reduction(seq: LossSequence, solver, budget: PrivacyBudget,
                             rng: RngStream
                             ) -> tuple[AlgorithmTrace, RegretReport]:
  """Refit only at rounds ``2^l`` on the losses of rounds ``2^{l-1}..2^l - 1``.

  Windows are disjoint, so each row reaches exactly one solver call and the
  whole run inherits the solver's guarantee.
  """
  budget.require_positive()
  trace = AlgorithmTrace()
  x = rng.randint(seq.d)
  updates = set(update_rounds(seq.T))
  windows = []
  for t in range(1, seq.T + 1):
    updated = t in updates
    if updated:
      lo, hi = t // 2, t - 1
      windows.append((lo, hi))
      x = int(solver.solve(seq.losses[lo - 1:hi], budget, rng))
      trace.log(t, f"update window=[{lo},{hi}]")
    trace.record(x, seq.losses[t - 1, x], updated, len(windows),
                 update=updated)
  trace.ledger = CompositionLedger()
  trace.ledger.add("sco_disjoint_windows", budget.epsilon, budget.delta)
  trace.ledger.non_private = rng.oracle_mode
  trace.meta.update(windows=windows, privacy=budget, budget=budget)
  return trace, score_run(seq, trace)


def measure_excess_loss(solver, means, n: int, budget: PrivacyBudget,
                        rng: RngStream, reps: int) -> tuple[float, float]:
  """Monte Carlo excess population loss of ``solver`` with ``n`` samples.

  Returns the mean over ``reps`` and its standard error.
  """
  means = np.asarray(means, dtype=float)
  out = np.empty(reps)
  for r in range(reps):
    seq = gen_stochastic(rng, n, means.size, means)
    x = solver.solve(seq.losses, budget, rng)
    out[r] = means[x] - means.min()
  return float(out.mean()), float(out.std(ddof=1) / math.sqrt(reps))
