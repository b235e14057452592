"""Sparse vector on the log-potential of exponential weights.

For a finite expert set under the uniform measure the potential after t
rounds is ``phi(t) = mean_x exp(-eta * S_t(x))`` with ``S_t`` the cumulative
loss. The algorithm holds a sample from the exponential weights and
resamples once the log-potential has dropped by roughly ``2 * alpha`` since
the last resample, as judged by AboveThreshold on
``q_t = (ln phi(t*) - ln phi(t-1)) / eta``.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from dpol.dp_primitives import (AboveThreshold, CompositionLedger,
                                ParameterError, PrivacyBudget, RngStream,
                                compose_best, per_use_epsilon)
from dpol.experts_env import (AlgorithmTrace, LossSequence, RegretReport,
                              score_run)


class ConfigError(ParameterError):
  pass


def log_mean_exp(a: np.ndarray, axis=-1) -> np.ndarray:
  m = np.max(a, axis=axis, keepdims=True)
  out = np.log(np.mean(np.exp(a - m), axis=axis, keepdims=True)) + m
  return np.squeeze(out, axis=axis)


def log_potential(seq: LossSequence, eta: float) -> np.ndarray:
  """``ln phi(t)`` for t = 0..T (entry 0 is exactly 0)."""
  return log_mean_exp(-eta * seq.cumulative(), axis=1)


def weights_distribution(cum_row: np.ndarray, eta: float) -> np.ndarray:
  """Exponential-weights law ``exp(-eta S(x)) / (d phi)``."""
  z = -eta * (cum_row - cum_row.min())
  w = np.exp(z)
  return w / w.sum()


@dataclasses.dataclass(frozen=True)
class PotentialConfig:
  """Parameters of the potential algorithm.

  Defaults follow the theorem's choices: ``alpha = 1``, ``beta = 1/T^2``,
  ``K = ceil(2 ln(1/gamma))`` and ``eta = eps0 / (56 ln T)``. ``eps0`` is
  calibrated so that K phases, each costing ``eps0 + 2 eta`` (sparse vector
  plus an exponential-weights draw), compose within the budget.
  """

  T: int
  d: int
  gamma: float
  budget: PrivacyBudget
  variant: str
  alpha: float
  beta: float
  K: int
  eps0: float
  eta: float
  query_sensitivity: float = 1.0
  initial_expert: int | None = None

  @classmethod
  def make(cls, T: int, d: int, budget: PrivacyBudget, gamma: float | None = None,
           variant: str | None = None, alpha: float = 1.0,
           beta: float | None = None, eta: float | None = None,
           eps0: float | None = None, K: int | None = None,
           query_sensitivity: float = 1.0,
           initial_expert: int | None = None) -> "PotentialConfig":
    budget.require_positive()
    if T < 2:
      raise ConfigError("need T >= 2")
    gamma = 1.0 / d if gamma is None else gamma
    if not 0 < gamma <= 1:
      raise ConfigError("gamma must lie in (0, 1]")
    if variant is None:
      variant = "pure" if budget.pure else "approx"
    if variant not in ("pure", "approx"):
      raise ConfigError(f"unknown variant {variant!r}")
    if variant == "approx" and budget.pure:
      raise ConfigError("approx variant needs delta > 0")
    beta = 1.0 / T**2 if beta is None else beta
    if K is None:
      K = max(1, math.ceil(2 * math.log(1 / gamma)))
    ratio = 1.0 / (56 * math.log(T))
    if eps0 is None:
      delta = budget.delta if variant == "approx" else 0.0
      per_phase = per_use_epsilon(budget.epsilon, K, delta)
      eps0 = per_phase / (1 + 2 * ratio)
    if eta is None:
      eta = eps0 * ratio
    cfg = cls(T, d, gamma, budget, variant, alpha, beta, K, eps0, eta,
              query_sensitivity, initial_expert)
    cfg.check()
    return cfg

  def required_alpha(self) -> float:
    return (8 * self.eta * (math.log(self.T) + math.log(2 * self.T / self.beta))
            / self.eps0)

  def check(self) -> None:
    if not 0 < self.eta < 0.5:
      raise ConfigError(f"eta must lie in (0, 1/2), got {self.eta}")
    need = self.required_alpha()
    if self.alpha < need:
      raise ConfigError(
          f"alpha >= 8 eta (ln T + ln(2T/beta)) / eps0 violated: "
          f"alpha={self.alpha:.6g} < {need:.6g}")

  def ledger(self) -> CompositionLedger:
    led = CompositionLedger()
    led.add("phase", self.eps0 + 2 * self.eta, 0.0, self.K)
    return led

  def privacy_spent(self) -> PrivacyBudget:
    delta = self.budget.delta if self.variant == "approx" else 0.0
    return compose_best(self.ledger(), delta)

  def loss_bound(self, L_gamma: float) -> float:
    """Expected-loss bound ``2e^{3 alpha}(L*(gamma) + ln(1/gamma)/eta) + 2 beta T``."""
    return (2 * math.exp(3 * self.alpha)
            * (L_gamma + math.log(1 / self.gamma) / self.eta)
            + 2 * self.beta * self.T)

  def in_hypothesis(self, L_gamma: float) -> bool:
    eps, g, T = self.budget.epsilon, math.log(1 / self.gamma), math.log(self.T)
    if self.variant == "pure":
      return L_gamma <= g**2 * T / eps
    return L_gamma <= g**1.5 * T * math.sqrt(math.log(1 / self.budget.delta)) / eps


def _sample_weights(rng: RngStream, cum_row: np.ndarray, eta: float) -> int:
  if rng.oracle_mode:
    return int(np.argmin(cum_row))
  p = weights_distribution(cum_row, eta)
  return int(min(np.searchsorted(np.cumsum(p), rng.uniform(), side="right"),
                 len(p) - 1))


def run_potential(seq: LossSequence, cfg: PotentialConfig,
                  rng: RngStream) -> tuple[AlgorithmTrace, RegretReport]:
  if seq.T != cfg.T or seq.d != cfg.d:
    raise ParameterError("config does not match sequence dimensions")
  cum = seq.cumulative()
  log_phi = log_potential(seq, cfg.eta)
  trace = AlgorithmTrace()
  if cfg.initial_expert is not None:
    x = cfg.initial_expert
  else:
    x = _sample_weights(rng, cum[0], cfg.eta)
  k, t_star = 0, 0
  events = {"max_gap": 0.0, "phase_drops": []}

  def open_session():
    # q is in units of ln(phi) / eta, so the 2 alpha drop is 2 alpha / eta.
    return AboveThreshold(cfg.eps0, 2 * cfg.alpha / cfg.eta, cfg.beta / cfg.T,
                          cfg.T, rng, sensitivity=cfg.query_sensitivity)

  session = open_session()
  for t in range(1, cfg.T + 1):
    resampled = False
    q = float("nan")
    if k < cfg.K:
      q = (log_phi[t_star] - log_phi[t - 1]) / cfg.eta
      if session.add_query(q):
        x = _sample_weights(rng, cum[t - 1], cfg.eta)
        k += 1
        events["phase_drops"].append(float(log_phi[t_star] - log_phi[t - 1]))
        t_star = t - 1
        resampled = True
        trace.log(t, f"switch {k}")
        if k < cfg.K:
          session = open_session()
        else:
          trace.log(t, "frozen")
    events["max_gap"] = max(events["max_gap"],
                            float(log_phi[t_star] - log_phi[t]))
    trace.record(x, seq.losses[t - 1, x], resampled, k, query=q,
                 log_phi=float(log_phi[t]))
  trace.ledger = cfg.ledger()
  trace.ledger.non_private = rng.oracle_mode
  trace.meta.update(switches=k, K=cfg.K, log_phi=log_phi, events=events,
                    privacy=cfg.privacy_spent(), budget=cfg.budget)
  return trace, score_run(seq, trace)


def svt_event_holds(trace: AlgorithmTrace, cfg: PotentialConfig) -> bool:
  """Both conclusions of the sparse-vector lemma for one run.

  The log-potential never sits more than ``3 alpha`` below its value at the
  last resample, and every completed phase dropped it by at least ``alpha``.
  """
  ev = trace.meta["events"]
  return (ev["max_gap"] <= 3 * cfg.alpha
          and all(drop >= cfg.alpha for drop in ev["phase_drops"]))


def sandwich_holds(log_phi: np.ndarray, eta: float, tol: float = 1e-12) -> bool:
  """``ln phi(t-1) >= ln phi(t) >= ln phi(t-1) - eta`` for every round."""
  step = np.diff(log_phi)
  return bool(np.all(step <= tol) and np.all(step >= -eta - tol))


def potential_queries(seq: LossSequence, eta: float, t_star: int = 0) -> np.ndarray:
  """``q_t = (ln phi(t*) - ln phi(t-1)) / eta`` for every round ``t > t*``."""
  lp = log_potential(seq, eta)
  return (lp[t_star] - lp[t_star:seq.T]) / eta


def potential_query_sensitivity_check(seq: LossSequence, t: int, row,
                                      eta: float, t_star: int = 0) -> float:
  """Largest change in any query when round ``t`` is replaced by ``row``.

  Queries are taken relative to a fixed resample point ``t_star``. With
  ``t_star`` before the changed round the change is at most 1; a change at
  or before ``t_star`` moves both potentials and can exceed 1.
  """
  other = seq.with_row(t, row)
  return float(np.max(np.abs(potential_queries(seq, eta, t_star)
                             - potential_queries(other, eta, t_star))))
