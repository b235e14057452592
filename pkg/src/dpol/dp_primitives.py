"""Seedable randomness and the differential-privacy building blocks.

Everything in here is research-grade: draws are plain double-precision
transforms and make no attempt to resist floating-point attacks.

A stream created with ``oracle_mode=True`` turns every noise source into its
deterministic analogue (Laplace/Gaussian noise is exactly zero, the exponential
mechanism returns the lowest-index minimiser). Such runs are labelled
non-private in their composition ledger.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class ParameterError(ValueError):
  """A mechanism was configured with an out-of-domain parameter."""


class StateError(RuntimeError):
  """A mechanism session was used after it stopped accepting input."""


class RngStream:
  """Deterministic random stream keyed by ``(seed, stream_id)``.

  Distinct stream ids are spawned children of the same seed sequence, so
  replications with different ids are statistically independent.
  """

  def __init__(self, seed: int, stream_id: int = 0, oracle_mode: bool = False,
               _path: tuple[int, ...] = ()):
    if seed < 0 or stream_id < 0:
      raise ParameterError("seed and stream_id must be nonnegative")
    self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
    self.oracle_mode = bool(oracle_mode)
    self._key = (self.stream_id,) + tuple(_path)
    ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self._key)
    self.gen = np.random.Generator(np.random.PCG64(ss))

  def __repr__(self):
    return (f"RngStream(seed={self.seed}, stream_id={self.stream_id}, "
            f"oracle_mode={self.oracle_mode})")

  def child(self, index: int) -> "RngStream":
    """Substream ``index`` of this stream; same seed and oracle flag."""
    return RngStream(self.seed, self.stream_id, self.oracle_mode,
                     self._key[1:] + (int(index),))

  def uniform(self) -> float:
    return float(self.gen.random())

  def bernoulli(self, prob: float) -> bool:
    return bool(self.gen.random() < prob)

  def randint(self, n: int) -> int:
    return int(self.gen.integers(n))


@dataclasses.dataclass(frozen=True)
class PrivacyBudget:
  """An ``(epsilon, delta)`` pair; ``delta == 0`` means pure DP."""

  epsilon: float
  delta: float = 0.0

  def __post_init__(self):
    if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
      raise ParameterError(f"epsilon must be finite and >= 0, got {self.epsilon}")
    if not 0.0 <= self.delta <= 1.0:
      raise ParameterError(f"delta must lie in [0, 1], got {self.delta}")

  @property
  def pure(self) -> bool:
    return self.delta == 0.0

  def require_positive(self) -> "PrivacyBudget":
    if self.epsilon <= 0:
      raise ParameterError("a configured budget needs epsilon > 0")
    return self

  def within(self, other: "PrivacyBudget", tol: float = 1e-9) -> bool:
    """True if this spend fits inside ``other`` up to ``tol``."""
    return (self.epsilon <= other.epsilon + tol
            and self.delta <= other.delta + tol)


def sample_laplace(rng: RngStream, scale: float) -> float:
  """One draw from Laplace(0, scale); zero scale (or oracle mode) gives 0.0."""
  if scale < 0 or not math.isfinite(scale):
    raise ParameterError(f"Laplace scale must be finite and >= 0, got {scale}")
  if scale == 0 or rng.oracle_mode:
    return 0.0
  return float(rng.gen.laplace(0.0, scale))


def sample_gaussian(rng: RngStream, sigma: float, size: int) -> np.ndarray:
  if sigma < 0:
    raise ParameterError(f"Gaussian sigma must be >= 0, got {sigma}")
  if sigma == 0 or rng.oracle_mode:
    return np.zeros(size)
  return rng.gen.normal(0.0, sigma, size=size)


def _checked_scores(scores) -> np.ndarray:
  s = np.asarray(scores, dtype=float)
  if s.ndim != 1 or s.size == 0:
    raise ParameterError("scores must be a nonempty vector")
  if not np.all(np.isfinite(s)):
    raise ParameterError("scores must be finite")
  return s


def exponential_mechanism_probs(scores, eta: float) -> np.ndarray:
  """Selection law of :func:`sample_exponential_mechanism`.

  ``P(i) ∝ exp(-eta * scores[i] / 2)``, evaluated after shifting by the
  minimum score so the largest weight is exactly 1.
  """
  s = _checked_scores(scores)
  if not eta > 0:
    raise ParameterError(f"eta must be > 0, got {eta}")
  w = np.exp(-0.5 * eta * (s - s.min()))
  return w / w.sum()


def sample_exponential_mechanism(rng: RngStream, scores, eta: float,
                                 exclude: Sequence[int] = ()) -> int:
  """Pick an index with probability proportional to ``exp(-eta*score/2)``.

  Sampling uses Gumbel-max on the shifted log-weights, which never
  exponentiates and so cannot underflow. Indices in ``exclude`` are never
  returned. Oracle mode returns the lowest-index minimiser.
  """
  s = _checked_scores(scores)
  if not eta > 0:
    raise ParameterError(f"eta must be > 0, got {eta}")
  logw = -0.5 * eta * (s - s.min())
  if len(exclude):
    logw = logw.copy()
    logw[list(exclude)] = -np.inf
    if np.all(np.isneginf(logw)):
      raise ParameterError("every index is excluded")
  if rng.oracle_mode:
    return int(np.argmax(logw))
  return int(np.argmax(logw + rng.gen.gumbel(size=s.size)))


# --------------------------------------------------------------------------
# AboveThreshold (sparse vector)


def svt_accuracy(epsilon0: float, horizon: int, beta: float) -> float:
  """Accuracy radius ``8 (ln T + ln(2/beta)) / epsilon0``."""
  return 8.0 * (math.log(horizon) + math.log(2.0 / beta)) / epsilon0


class AboveThreshold:
  """A single AboveThreshold session.

  Threshold noise is Lap(2/epsilon0) and each query gets fresh Lap(4/epsilon0)
  noise, both multiplied by ``sensitivity``. The session halts on the first
  query whose noisy value reaches the noisy threshold and then refuses input.
  """

  def __init__(self, epsilon0: float, threshold: float, beta: float,
               horizon: int, rng: RngStream, sensitivity: float = 1.0):
    if not epsilon0 > 0:
      raise ParameterError(f"epsilon0 must be > 0, got {epsilon0}")
    if not 0 < beta < 1:
      raise ParameterError(f"beta must lie in (0, 1), got {beta}")
    if horizon < 1:
      raise ParameterError(f"horizon must be >= 1, got {horizon}")
    self.epsilon0 = float(epsilon0)
    self.threshold = float(threshold)
    self.beta = float(beta)
    self.horizon = int(horizon)
    self.sensitivity = float(sensitivity)
    self._rng = rng
    self.alpha = svt_accuracy(epsilon0, horizon, beta)
    self.noisy_threshold = self.threshold + sample_laplace(
        rng, 2.0 * self.sensitivity / self.epsilon0)
    self.halted = False
    self.queries_seen = 0

  def add_query(self, value: float) -> bool:
    """Feed one query answer; returns True when the session halts on it."""
    if self.halted:
      raise StateError("AboveThreshold session already halted")
    self.queries_seen += 1
    noisy = value + sample_laplace(self._rng,
                                   4.0 * self.sensitivity / self.epsilon0)
    if noisy >= self.noisy_threshold:
      self.halted = True
    return self.halted


# --------------------------------------------------------------------------
# Binary tree counter


def tree_levels(horizon: int) -> int:
  """Number of dyadic levels a single stream element touches."""
  return int(horizon).bit_length()


def dyadic_cover(t: int) -> list[tuple[int, int]]:
  """Dyadic nodes ``(level, index)`` whose intervals partition ``[1, t]``.

  Node ``(h, j)`` covers ``[j*2^h + 1, (j+1)*2^h]``; one node per set bit of t.
  """
  if t < 1:
    raise ParameterError("t must be >= 1")
  nodes = []
  start = 0
  for h in reversed(range(t.bit_length())):
    if t >> h & 1:
      nodes.append((h, start >> h))
      start += 1 << h
  return nodes


def _normal_cdf(x: float) -> float:
  return 0.5 * math.erfc(-x / math.sqrt(2.0))


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
  """Noise scale making the Gaussian mechanism ``(epsilon, delta)``-DP.

  For ``epsilon <= 1`` this is the classical
  ``sensitivity * sqrt(2 ln(1.25/delta)) / epsilon``. That formula is not
  valid above 1, so larger ``epsilon`` use the exact privacy profile
  ``Phi(D/2s - e s/D) - e^e Phi(-D/2s - e s/D) <= delta``, solved by
  bisection.
  """
  if not (sensitivity > 0 and epsilon > 0 and 0 < delta < 1):
    raise ParameterError("need sensitivity > 0, epsilon > 0, 0 < delta < 1")
  if epsilon <= 1:
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon

  def profile(s):
    a, b = sensitivity / (2 * s), epsilon * s / sensitivity
    return _normal_cdf(a - b) - math.exp(epsilon) * _normal_cdf(-a - b)

  lo, hi = 1e-12 * sensitivity, sensitivity
  while profile(hi) > delta:
    hi *= 2
  for _ in range(200):
    mid = 0.5 * (lo + hi)
    if profile(mid) > delta:
      lo = mid
    else:
      hi = mid
  return hi


class BinaryTreeCounter:
  """Continual prefix-sum release with the binary tree mechanism.

  Scalar mode counts values in ``[0, clip]`` and adds Laplace noise with
  scale ``clip*levels/epsilon`` to every node. Vector mode takes inputs of
  norm at most ``clip``; replacing one moves each of its nodes by up to
  ``2 clip``, so the per-coordinate Gaussian noise is calibrated to the L2
  sensitivity ``2 clip sqrt(levels)`` (see ``gaussian_sigma``). ``levels`` is
  the number of tree levels an element participates in (``floor(log2 T)+1``).
  Out-of-range inputs are clipped, never rejected.
  """

  def __init__(self, horizon: int, budget: PrivacyBudget, rng: RngStream,
               dim: int = 1, clip: float = 1.0, mode: str = "scalar-laplace"):
    if horizon < 1:
      raise ParameterError("horizon must be >= 1")
    if mode not in ("scalar-laplace", "vector-gaussian"):
      raise ParameterError(f"unknown mode {mode!r}")
    if mode == "scalar-laplace" and dim != 1:
      raise ParameterError("scalar-laplace mode needs dim == 1")
    if mode == "vector-gaussian" and not budget.delta > 0:
      raise ParameterError("vector-gaussian mode needs delta > 0")
    if not clip > 0:
      raise ParameterError("clip must be > 0")
    budget.require_positive()
    self.horizon = int(horizon)
    self.dim = int(dim)
    self.budget = budget
    self.clip = float(clip)
    self.mode = mode
    self._rng = rng
    self.levels = tree_levels(horizon)
    if mode == "scalar-laplace":
      self.node_scale = self.clip * self.levels / budget.epsilon
    else:
      self.node_scale = gaussian_sigma(2 * self.clip * math.sqrt(self.levels),
                                       budget.epsilon, budget.delta)
    self.node_noise: dict[tuple[int, int], np.ndarray] = {}
    self.t = 0
    self.clipped = 0
    self._exact = np.zeros(self.dim)

  def _noise(self, node):
    if node not in self.node_noise:
      if self.mode == "scalar-laplace":
        self.node_noise[node] = np.array(
            [sample_laplace(self._rng, self.node_scale)])
      else:
        self.node_noise[node] = sample_gaussian(self._rng, self.node_scale,
                                                self.dim)
    return self.node_noise[node]

  def feed(self, a):
    """Add ``a_t`` and return the noisy prefix-sum estimate ``c_t``."""
    if self.t >= self.horizon:
      raise StateError(f"binary tree fed past its horizon T={self.horizon}")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (self.dim,):
      raise ParameterError(f"expected input of dimension {self.dim}")
    if self.mode == "scalar-laplace" and not 0 <= a[0] <= self.clip:
      self.clipped += 1
      logger.warning("binary tree input at t=%d is %.4g, outside [0, %.4g]; "
                     "clipped", self.t + 1, a[0], self.clip)
      a = np.clip(a, 0.0, self.clip)
    norm = float(np.linalg.norm(a))
    if norm > self.clip:
      self.clipped += 1
      logger.warning("binary tree input at t=%d has norm %.4g > %.4g; clipped",
                     self.t + 1, norm, self.clip)
      a = a * (self.clip / norm)
    self.t += 1
    self._exact = self._exact + a
    noise = sum((self._noise(n) for n in dyadic_cover(self.t)),
                np.zeros(self.dim))
    est = self._exact + noise
    return float(est[0]) if self.mode == "scalar-laplace" else est

  def privacy(self) -> PrivacyBudget:
    return self.budget


# --------------------------------------------------------------------------
# Composition


@dataclasses.dataclass(frozen=True)
class LedgerEntry:
  name: str
  epsilon: float
  delta: float
  count: int


@dataclasses.dataclass
class CompositionLedger:
  """Record of mechanism invocations, each ``(epsilon, delta)``-DP."""

  entries: list[LedgerEntry] = dataclasses.field(default_factory=list)
  non_private: bool = False

  def add(self, name: str, epsilon: float, delta: float = 0.0,
          count: int = 1) -> None:
    if epsilon < 0 or delta < 0 or count < 0:
      raise ParameterError("ledger entries must be nonnegative")
    self.entries.append(LedgerEntry(name, float(epsilon), float(delta),
                                    int(count)))

  def extend(self, other: "CompositionLedger", prefix: str = "") -> None:
    for e in other.entries:
      self.entries.append(dataclasses.replace(e, name=prefix + e.name))
    self.non_private |= other.non_private

  def __iter__(self) -> Iterator[LedgerEntry]:
    return iter(self.entries)

  @property
  def total_count(self) -> int:
    return sum(e.count for e in self.entries)


def compose_basic(ledger: CompositionLedger) -> PrivacyBudget:
  eps = math.fsum(e.count * e.epsilon for e in ledger)
  delta = math.fsum(e.count * e.delta for e in ledger)
  return PrivacyBudget(eps, min(delta, 1.0))


def advanced_epsilon(epsilon: float, k: int, delta_prime: float) -> float:
  """``sqrt(2k ln(1/delta')) eps + k eps (e^eps - 1)``."""
  if not delta_prime > 0:
    raise ParameterError("delta_prime must be > 0")
  return (math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) * epsilon
          + k * epsilon * math.expm1(epsilon))


def compose_advanced(ledger: CompositionLedger,
                     delta_prime: float) -> PrivacyBudget:
  """Advanced composition of a ledger whose entries share one ``(eps, delta)``.

  An empty ledger (k = 0) composes to ``(0, delta_prime)``.
  """
  if not delta_prime > 0:
    raise ParameterError("delta_prime must be > 0")
  used = [e for e in ledger if e.count > 0]
  if not used:
    return PrivacyBudget(0.0, delta_prime)
  eps, delta = used[0].epsilon, used[0].delta
  if any(e.epsilon != eps or e.delta != delta for e in used):
    raise ParameterError("advanced composition needs uniform entries")
  k = sum(e.count for e in used)
  return PrivacyBudget(advanced_epsilon(eps, k, delta_prime),
                       min(delta_prime + k * delta, 1.0))


def compose_best(ledger: CompositionLedger,
                 delta_prime: float = 0.0) -> PrivacyBudget:
  """Tighter of basic and (when allowed) advanced composition."""
  basic = compose_basic(ledger)
  if delta_prime <= 0:
    return basic
  try:
    adv = compose_advanced(ledger, delta_prime)
  except ParameterError:
    return basic
  return adv if adv.epsilon < basic.epsilon else basic


def per_use_epsilon(total: float, k: int, delta: float = 0.0) -> float:
  """Largest per-use epsilon whose k-fold composition stays within ``total``.

  Uses basic composition for pure DP; with ``delta > 0`` advanced composition
  (at ``delta' = delta``) is used whenever it allows a larger per-use budget.
  """
  if k <= 0:
    return total
  basic = total / k
  if delta <= 0:
    return basic
  lo, hi = 0.0, total
  for _ in range(200):
    mid = 0.5 * (lo + hi)
    if advanced_epsilon(mid, k, delta) <= total:
      lo = mid
    else:
      hi = mid
  return max(basic, lo)
