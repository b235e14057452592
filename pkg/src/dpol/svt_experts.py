"""Sparse-vector expert switching for (near-)realizable experts problems.

Three algorithms share this module:

* :func:`run_svt_zero_loss` keeps an expert until AboveThreshold reports that
  its loss since the last switch crossed the threshold, then resamples with
  the exponential mechanism on ``max(cumulative loss, L*)``.
* :func:`run_svt_adaptive` wraps it in a doubling schedule for an unknown
  ``L*``.
* :func:`run_bintree_experts` replaces sparse vector with binary-tree
  counters over a privately selected batch of experts.

Round accounting: one loss row per global round. The AboveThreshold query at
round t only uses losses up to t-1; when it halts, the new expert is drawn
before ``l_t`` is paid.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from dpol.dp_primitives import (AboveThreshold, BinaryTreeCounter,
                                CompositionLedger, ParameterError,
                                PrivacyBudget, RngStream, compose_advanced,
                                compose_basic, per_use_epsilon, sample_laplace,
                                sample_exponential_mechanism)
from dpol.experts_env import (AlgorithmTrace, LossSequence, RegretReport,
                              score_run)


def switch_budget(d: int, beta: float) -> int:
  """``K = ceil(6 ceil(ln d) + 24 ln(1/beta))``."""
  return max(1, math.ceil(6 * math.ceil(math.log(d)) + 24 * math.log(1 / beta)))


@dataclasses.dataclass(frozen=True)
class SvtExpertsConfig:
  T: int
  d: int
  beta: float
  budget: PrivacyBudget
  L_star_bound: float
  K: int
  B: float
  eta: float
  threshold: float
  initial_expert: int | None = None

  @classmethod
  def make(cls, T: int, d: int, budget: PrivacyBudget, beta: float = 0.05,
           L_star: float = 0.0, threshold: float | None = None,
           initial_expert: int | None = None) -> "SvtExpertsConfig":
    """Derive K, eta, B and the threshold from the horizon and budget.

    ``threshold`` overrides the derived ``L* + 4/eta + 8B/eps`` (used for
    hand-traced tests).
    """
    budget.require_positive()
    if not 0 < beta < 0.5:
      raise ParameterError("beta must lie in (0, 1/2)")
    if L_star < 0:
      raise ParameterError("L_star_bound must be >= 0")
    eps = budget.epsilon
    K = switch_budget(d, beta)
    if budget.pure:
      eta = eps / (2 * K)
    else:
      if eps > math.sqrt(math.log(T) * math.log(1 / budget.delta)):
        raise ParameterError(
            "approximate variant needs eps <= sqrt(ln T * ln(1/delta))")
      eta = min(eps / math.sqrt(32 * K * math.log(1 / budget.delta)),
                per_use_epsilon(eps / 2, K, budget.delta))
    B = math.log(2 * T * T / beta)
    if threshold is None:
      threshold = L_star + 4 / eta + 8 * B / eps
    if initial_expert is not None and not 0 <= initial_expert < d:
      raise ParameterError("initial_expert out of range")
    return cls(T, d, beta, budget, float(L_star), K, B, eta, float(threshold),
               initial_expert)

  @property
  def session_epsilon(self) -> float:
    return self.budget.epsilon / 2

  @property
  def session_beta(self) -> float:
    return self.beta / self.T

  def ledger(self) -> CompositionLedger:
    led = CompositionLedger()
    led.add("sparse_vector", self.session_epsilon)
    led.add("exp_mech", self.eta, 0.0, self.K)
    return led

  def privacy_spent(self) -> PrivacyBudget:
    """Sparse vector (each row enters one session) plus K selections."""
    sel = CompositionLedger()
    sel.add("exp_mech", self.eta, 0.0, self.K)
    if self.budget.pure:
      s = compose_basic(sel)
    else:
      s = compose_advanced(sel, self.budget.delta)
      b = compose_basic(sel)
      s = b if b.epsilon <= s.epsilon else s
    return PrivacyBudget(self.session_epsilon + s.epsilon, s.delta)


class _SvtPhase:
  """State machine of one run of the zero-loss algorithm."""

  def __init__(self, cfg: SvtExpertsConfig, rng: RngStream, expert: int,
               start: int, L_star: float, threshold: float,
               session_epsilon: float, eta: float):
    self.cfg = cfg
    self.rng = rng
    self.expert = expert
    self.t_p = start
    self.k = 0
    self.L_star = L_star
    self.threshold = threshold
    self.session_epsilon = session_epsilon
    self.eta = eta
    self.queries: list[float] = []
    self.session = self._open()

  def _open(self):
    return AboveThreshold(self.session_epsilon, self.threshold,
                          self.cfg.session_beta, self.cfg.T, self.rng)

  def step(self, t: int, cum: np.ndarray) -> bool:
    """Decide the expert for round t; returns True when it was resampled."""
    if self.k >= self.cfg.K:
      return False
    q = cum[t - 1, self.expert] - cum[self.t_p - 1, self.expert]
    self.queries.append(float(q))
    if not self.session.add_query(q):
      return False
    scores = np.maximum(cum[t - 1], self.L_star)
    self.expert = sample_exponential_mechanism(self.rng, scores, self.eta)
    self.k += 1
    self.t_p = t
    if self.k < self.cfg.K:
      self.session = self._open()
    return True


def _initial_expert(cfg, rng: RngStream) -> int:
  if cfg.initial_expert is not None:
    return cfg.initial_expert
  return rng.randint(cfg.d)


def _check_dims(seq: LossSequence, cfg) -> None:
  if seq.T != cfg.T or seq.d != cfg.d:
    raise ParameterError(
        f"config is for T={cfg.T}, d={cfg.d}; sequence is {seq.T}x{seq.d}")


def run_svt_zero_loss(seq: LossSequence, cfg: SvtExpertsConfig,
                      rng: RngStream) -> tuple[AlgorithmTrace, RegretReport]:
  _check_dims(seq, cfg)
  cum = seq.cumulative()
  trace = AlgorithmTrace()
  x0 = _initial_expert(cfg, rng)
  phase = _SvtPhase(cfg, rng, x0, 1, cfg.L_star_bound, cfg.threshold,
                    cfg.session_epsilon, cfg.eta)
  for t in range(1, cfg.T + 1):
    resampled = phase.step(t, cum)
    if resampled:
      trace.log(t, f"switch {phase.k}")
      if phase.k >= cfg.K:
        trace.log(t, "frozen")
    x = phase.expert
    trace.record(x, seq.losses[t - 1, x], resampled, 0)
  trace.ledger = cfg.ledger()
  trace.ledger.non_private = rng.oracle_mode
  trace.meta.update(switches=phase.k, K=cfg.K, queries=phase.queries,
                    privacy=cfg.privacy_spent(), budget=cfg.budget)
  return trace, score_run(seq, trace)


# --------------------------------------------------------------------------
# Adaptive (doubling) wrapper


@dataclasses.dataclass(frozen=True)
class AdaptiveSvtConfig:
  """Parameters of the doubling wrapper.

  Each of at most ``max_phases = ceil(log2 T)`` inner runs gets
  ``eps0 = eps / (2 max_phases)``: half for the inner run, half for the K
  Laplace checks on the selected expert's loss.
  """

  T: int
  d: int
  beta: float
  budget: PrivacyBudget
  max_phases: int
  eps0: float
  beta0: float
  K: int
  eta: float
  B: float
  slack: float
  margin: float
  initial_expert: int | None = None

  @classmethod
  def make(cls, T: int, d: int, budget: PrivacyBudget, beta: float = 0.05,
           slack: float | None = None, margin: float | None = None,
           initial_expert: int | None = None) -> "AdaptiveSvtConfig":
    """``slack`` overrides ``4/eta + 8B/eps0`` and ``margin`` overrides
    ``5K ln(1/beta0)/eps0``; both exist for hand-traced tests."""
    if T < 2:
      raise ParameterError("adaptive wrapper needs T >= 2")
    budget.require_positive()
    if not budget.pure:
      raise ParameterError("the adaptive wrapper is a pure-DP algorithm")
    max_phases = max(1, math.ceil(math.log2(T)))
    eps0 = budget.epsilon / (2 * max_phases)
    beta0 = beta / T
    K = switch_budget(d, beta0)
    eta = eps0 / (2 * K)
    B = math.log(2 * T * T / beta0)
    if slack is None:
      slack = 4 / eta + 8 * B / eps0
    if margin is None:
      margin = 5 * K * math.log(1 / beta0) / eps0
    return cls(T, d, beta, budget, max_phases, eps0, beta0, K, eta, B,
               float(slack), float(margin), initial_expert)

  @property
  def session_beta(self) -> float:
    return self.beta0 / self.T

  def estimate_cap(self) -> float:
    """``2 (1 + 5K ln(1/beta0)/eps0)``: high-probability cap on the estimate
    for realizable inputs."""
    return 2 * (1 + 5 * self.K * math.log(1 / self.beta0) / self.eps0)

  def ledger(self) -> CompositionLedger:
    led = CompositionLedger()
    led.add("sparse_vector", self.eps0 / 2, 0.0, self.max_phases)
    led.add("exp_mech", self.eta, 0.0, self.K * self.max_phases)
    led.add("laplace_check", self.eps0 / self.K, 0.0,
            self.K * self.max_phases)
    return led

  def privacy_spent(self) -> PrivacyBudget:
    return compose_basic(self.ledger())


def run_svt_adaptive(seq: LossSequence, cfg: AdaptiveSvtConfig,
                     rng: RngStream) -> tuple[AlgorithmTrace, RegretReport]:
  """Doubling-trick wrapper around the zero-loss algorithm.

  The estimate starts at 1. At every exponential-mechanism resample the newly
  chosen expert's loss so far, plus Lap(K/eps0), is compared against
  ``estimate - margin``; exceeding it doubles the estimate and restarts the
  inner algorithm from the current round, keeping the freshly drawn expert.
  The estimate is doubled at most ``max_phases - 1`` times.
  """
  _check_dims(seq, cfg)
  cum = seq.cumulative()
  trace = AlgorithmTrace()
  estimate = 1.0
  phase_no = 0

  def new_phase(expert, start):
    return _SvtPhase(cfg, rng, expert, start, estimate, estimate + cfg.slack,
                     cfg.eps0 / 2, cfg.eta)

  inner = new_phase(_initial_expert(cfg, rng), 1)
  trace.log(1, f"phase 0 estimate={estimate:g}")
  for t in range(1, cfg.T + 1):
    resampled = inner.step(t, cum)
    if resampled:
      x = inner.expert
      noisy = cum[t - 1, x] + sample_laplace(rng, cfg.K / cfg.eps0)
      if noisy > estimate - cfg.margin and phase_no + 1 < cfg.max_phases:
        estimate *= 2
        phase_no += 1
        trace.log(t, f"phase {phase_no} estimate={estimate:g}")
        inner = new_phase(x, t)
    x = inner.expert
    trace.record(x, seq.losses[t - 1, x], resampled, phase_no)
  trace.ledger = cfg.ledger()
  trace.ledger.non_private = rng.oracle_mode
  trace.meta.update(estimate=estimate, phases=phase_no + 1,
                    privacy=cfg.privacy_spent(), budget=cfg.budget)
  return trace, score_run(seq, trace)


# --------------------------------------------------------------------------
# Binary-tree variant


@dataclasses.dataclass(frozen=True)
class BinTreeExpertsConfig:
  """Budget split: half to the B_good binary trees of the live phase (one loss
  row feeds each of them once), half to the ``max_phases * B_good``
  exponential-mechanism draws."""

  T: int
  d: int
  budget: PrivacyBudget
  B_good: int
  tau: float
  max_phases: int
  tree_epsilon: float
  eta: float

  @classmethod
  def make(cls, T: int, d: int, budget: PrivacyBudget,
           B_good: int | None = None, tau: float | None = None,
           max_phases: int | None = None) -> "BinTreeExpertsConfig":
    budget.require_positive()
    eps = budget.epsilon
    if B_good is None:
      B_good = min(d, math.ceil(math.log(d * T)))
    if not 1 <= B_good <= d:
      raise ParameterError("B_good must lie in [1, d]")
    if tau is None:
      tau = 16 * math.log(d * T) * math.log(T) / eps
    if max_phases is None:
      max_phases = math.ceil(d / B_good)
    return cls(T, d, PrivacyBudget(eps, 0.0), B_good, float(tau), max_phases,
               eps / (2 * B_good), eps / (2 * max_phases * B_good))

  def ledger(self) -> CompositionLedger:
    led = CompositionLedger()
    led.add("binary_tree", self.tree_epsilon, 0.0, self.B_good)
    led.add("exp_mech", self.eta, 0.0, self.max_phases * self.B_good)
    return led

  def privacy_spent(self) -> PrivacyBudget:
    return compose_basic(self.ledger())


def run_bintree_experts(seq: LossSequence, cfg: BinTreeExpertsConfig,
                        rng: RngStream) -> tuple[AlgorithmTrace, RegretReport]:
  """Track a privately chosen batch of experts with binary-tree counters.

  Each round plays the tracked expert with the smallest estimate (lowest index
  on ties). Once every tracked estimate reaches ``tau`` a new batch is drawn
  from the unused experts; when none are left the run freezes on its best
  current estimate.
  """
  _check_dims(seq, cfg)
  cum = seq.cumulative()
  trace = AlgorithmTrace()
  used: list[int] = []
  phase_no = -1
  frozen = False
  selected: list[int] = []
  trees: list[BinaryTreeCounter] = []
  est = np.zeros(0)

  def select(t):
    chosen: list[int] = []
    for _ in range(min(cfg.B_good, cfg.d - len(used))):
      chosen.append(sample_exponential_mechanism(
          rng, cum[t - 1], cfg.eta, exclude=used + chosen))
    return chosen

  for t in range(1, cfg.T + 1):
    new_phase = False
    if not frozen and (phase_no < 0 or np.all(est >= cfg.tau)):
      if len(used) >= cfg.d or phase_no + 1 >= cfg.max_phases:
        frozen = True
        trace.log(t, "experts exhausted; frozen")
      else:
        selected = select(t)
        used.extend(selected)
        phase_no += 1
        new_phase = True
        trees = [BinaryTreeCounter(cfg.T - t + 1,
                                   PrivacyBudget(cfg.tree_epsilon), rng)
                 for _ in selected]
        est = np.zeros(len(selected))
        trace.log(t, f"phase {phase_no} experts={selected}")
    i = int(np.argmin(est))
    x = selected[i]
    trace.record(x, seq.losses[t - 1, x], new_phase, phase_no,
                 estimate=float(est[i]))
    est = np.array([tree.feed(seq.losses[t - 1, y])
                    for tree, y in zip(trees, selected)])
  trace.ledger = cfg.ledger()
  trace.ledger.non_private = rng.oracle_mode
  trace.meta.update(phases=phase_no + 1, privacy=cfg.privacy_spent(),
                    budget=cfg.budget)
  return trace, score_run(seq, trace)
