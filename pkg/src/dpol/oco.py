"""Private online convex optimisation over a Euclidean ball.

Two routes: discretise the ball with a rho-net and run the zero-loss experts
algorithm over the centres (low dimension only), or run DP-FTRL on gradients
released by a vector binary tree (smooth, nonnegative losses).
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np

from dpol.dp_primitives import (BinaryTreeCounter, CompositionLedger,
                                ParameterError, PrivacyBudget, RngStream)
from dpol.experts_env import (AlgorithmTrace, LossSequence, RegretReport,
                              count_switches)
from dpol.potential_experts import ConfigError
from dpol.svt_experts import SvtExpertsConfig, run_svt_zero_loss

logger = logging.getLogger(__name__)

LOSS_KINDS = ("quadratic-to-anchor", "smoothed-hinge", "distance")


class SizeError(ParameterError):
  pass


@dataclasses.dataclass(frozen=True)
class BallDomain:
  d: int
  D: float

  def __post_init__(self):
    if self.d < 1 or not self.D > 0:
      raise ParameterError("need d >= 1 and D > 0")

  def contains(self, x, tol: float = 1e-9) -> bool:
    return float(np.linalg.norm(x)) <= self.D + tol

  def project(self, x: np.ndarray) -> np.ndarray:
    """Euclidean projection of one point or of each row."""
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(n > self.D, x * (self.D / np.maximum(n, 1e-300)), x)

  def sample(self, rng: RngStream, n: int) -> np.ndarray:
    """``n`` points uniform in the ball."""
    g = rng.gen.standard_normal((n, self.d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (self.D * rng.gen.random((n, 1))**(1.0 / self.d))


@dataclasses.dataclass(frozen=True)
class SmoothLoss:
  """One round's loss on the ball.

  ``quadratic-to-anchor``: ``(beta/2)||x - c||^2``.
  ``smoothed-hinge``: ``h(margin - <a, x>)`` where ``h`` is the Huber-smoothed
  hinge with width ``mu``; ``beta = ||a||^2 / mu``.
  ``distance``: ``||x - c||``, convex and 1-Lipschitz but not smooth; only for
  the experts reduction.
  ``lipschitz`` is a bound valid on the whole domain.
  """

  kind: str
  anchor: np.ndarray
  beta: float
  lipschitz: float
  margin: float = 0.0
  mu: float = 1.0

  def __post_init__(self):
    if self.kind not in LOSS_KINDS:
      raise ParameterError(f"unknown loss kind {self.kind!r}; "
                           f"valid: {', '.join(LOSS_KINDS)}")
    object.__setattr__(self, "anchor",
                       np.atleast_1d(np.asarray(self.anchor, dtype=float)))

  @classmethod
  def quadratic(cls, anchor, beta: float, domain: BallDomain) -> "SmoothLoss":
    anchor = np.atleast_1d(np.asarray(anchor, dtype=float))
    L = beta * (domain.D + float(np.linalg.norm(anchor)))
    return cls("quadratic-to-anchor", anchor, beta, L)

  @classmethod
  def hinge(cls, direction, margin: float, mu: float) -> "SmoothLoss":
    a = np.atleast_1d(np.asarray(direction, dtype=float))
    na = float(np.linalg.norm(a))
    return cls("smoothed-hinge", a, na**2 / mu, na, margin, mu)

  @classmethod
  def distance(cls, anchor) -> "SmoothLoss":
    return cls("distance", anchor, math.inf, 1.0)

  @property
  def smooth(self) -> bool:
    return self.kind != "distance"

  def value(self, x) -> np.ndarray:
    """Loss at one point (scalar) or at each row of ``x``."""
    x = np.asarray(x, dtype=float)
    if self.kind == "quadratic-to-anchor":
      out = 0.5 * self.beta * np.sum((x - self.anchor)**2, axis=-1)
    elif self.kind == "distance":
      out = np.linalg.norm(x - self.anchor, axis=-1)
    else:
      z = self.margin - x @ self.anchor
      out = np.where(z <= 0, 0.0,
                     np.where(z <= self.mu, z**2 / (2 * self.mu),
                              z - self.mu / 2))
    return out

  def grad(self, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if self.kind == "quadratic-to-anchor":
      return self.beta * (x - self.anchor)
    if self.kind == "distance":
      diff = x - self.anchor
      n = np.linalg.norm(diff)
      return diff / n if n > 0 else np.zeros_like(diff)
    z = self.margin - float(x @ self.anchor)
    slope = 0.0 if z <= 0 else min(z / self.mu, 1.0)
    return -slope * self.anchor


def gen_realizable_quadratics(rng: RngStream, T: int, domain: BallDomain,
                              beta: float, anchor=None) -> list[SmoothLoss]:
  """Quadratics sharing one minimiser with curvature drawn in [beta/2, beta].

  The anchor defaults to a uniform point of the ball of radius ``D/2``;
  every loss is then ``2 beta D``-Lipschitz on the domain at worst.
  """
  if anchor is None:
    anchor = domain.sample(rng, 1)[0] * 0.5
  anchor = np.asarray(anchor, dtype=float)
  if not domain.contains(anchor):
    raise ParameterError("anchor must lie in the domain")
  curv = beta * (0.5 + 0.5 * rng.gen.random(T))
  L = beta * (domain.D + float(np.linalg.norm(anchor)))
  return [SmoothLoss("quadratic-to-anchor", anchor, float(c), L)
          for c in curv]


def gen_realizable_distances(rng: RngStream, T: int, domain: BallDomain,
                             anchor=None) -> list[SmoothLoss]:
  if anchor is None:
    anchor = domain.sample(rng, 1)[0]
  return [SmoothLoss.distance(anchor) for _ in range(T)]


# --------------------------------------------------------------------------
# rho-net reduction


@dataclasses.dataclass(frozen=True)
class CoverNet:
  rho: float
  centers: np.ndarray

  @property
  def M(self) -> int:
    return len(self.centers)

  def max_distance(self, points: np.ndarray) -> float:
    """Largest distance from any of ``points`` to its nearest centre."""
    worst = 0.0
    for chunk in np.array_split(points, max(1, len(points) // 2048)):
      dist = np.linalg.norm(chunk[:, None, :] - self.centers[None], axis=2)
      worst = max(worst, float(dist.min(axis=1).max()))
    return worst


def predicted_cover_size(domain: BallDomain, rho: float) -> int:
  """Grid cells per axis, raised to ``d`` (an upper bound on M)."""
  h = 2 * rho / math.sqrt(domain.d)
  return math.ceil(2 * domain.D / h)**domain.d


def build_cover(domain: BallDomain, rho: float) -> CoverNet:
  """Centres of the ``2 rho / sqrt(d)`` grid cells that meet the ball.

  Every point of a cell is within ``rho`` of the cell centre. A centre that
  falls outside the ball is replaced by its projection, which is no farther
  from any point of the ball's part of that cell.
  """
  d, D = domain.d, domain.D
  if d > 3:
    raise SizeError(f"rho-net needs d <= 3 (got d={d}); the net grows like "
                    f"2^(d log(4D/rho))")
  if not 0 < rho <= 2 * D:
    raise ParameterError(f"rho must lie in (0, 2D], got {rho}")
  M = predicted_cover_size(domain, rho)
  if M > 10**7:
    raise SizeError(f"predicted net size {M} exceeds 1e7 "
                    f"(bound 2^(d log2(4D/rho)) = "
                    f"{2.0**(d * math.log2(4 * D / rho)):.3g})")
  h = 2 * rho / math.sqrt(d)
  n = math.ceil(2 * D / h)
  axis = (np.arange(n) - (n - 1) / 2) * h
  grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
  # nearest point of each cell to the origin decides whether it meets the ball
  near = np.maximum(np.abs(grid) - h / 2, 0.0)
  keep = np.linalg.norm(near, axis=1) <= D
  return CoverNet(rho, domain.project(grid[keep]))


def probe_points(domain: BallDomain, rng: RngStream, n: int) -> np.ndarray:
  """Uniform interior samples plus points on the boundary sphere."""
  inner = domain.sample(rng, n - n // 4)
  g = rng.gen.standard_normal((n // 4, domain.d))
  g *= domain.D / np.linalg.norm(g, axis=1, keepdims=True)
  return np.vstack([inner, g])


def rho_for(mode: str, L: float, T: int, eps: float) -> float:
  if mode == "theorem":
    return 1.0 / (L * T)
  if mode == "proof":
    return 1.0 / (L * T * eps)
  raise ParameterError(f"unknown rho_mode {mode!r}; valid: theorem, proof")


def continuous_minimum(losses, domain: BallDomain, rng: RngStream | None = None,
                       resolution: float | None = None,
                       starts: int = 8, iters: int = 500) -> tuple[float, np.ndarray]:
  """Oracle for ``min_x sum_t loss_t(x)`` over the ball.

  Grid search for ``d <= 2`` (then a local refinement around the best grid
  point), multi-start projected gradient descent otherwise. Not private.
  """
  d, D = domain.d, domain.D
  if d <= 2:
    h = resolution or D / 200
    n = math.ceil(2 * D / h) + 1
    axis = np.linspace(-D, D, n)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
    grid = grid[np.linalg.norm(grid, axis=1) <= D]
    total = _total(losses, grid)
    best = grid[int(np.argmin(total))]
    fine = best + np.stack(np.meshgrid(
        *([np.linspace(-h, h, 41)] * d), indexing="ij"), -1).reshape(-1, d)
    fine = domain.project(fine)
    total = _total(losses, fine)
    i = int(np.argmin(total))
    return float(total[i]), fine[i]
  rng = rng or RngStream(0)
  beta = sum(l.beta for l in losses if l.smooth) or 1.0
  step = 1.0 / beta
  best_val, best_x = math.inf, None
  for x in domain.sample(rng, starts):
    for _ in range(iters):
      g = sum(l.grad(x) for l in losses)
      x = domain.project(x - step * g)
    v = float(_total(losses, x[None])[0])
    if v < best_val:
      best_val, best_x = v, x
  return best_val, best_x


def _total(losses, pts: np.ndarray) -> np.ndarray:
  # losses sharing a kind and anchor are summed in closed form
  out = np.zeros(len(pts))
  groups: dict = {}
  for l in losses:
    key = (l.kind, l.anchor.tobytes(), l.margin, l.mu)
    groups.setdefault(key, [l, 0.0, 0])
    groups[key][1] += l.beta if l.smooth else 1.0
    groups[key][2] += 1
  for l, weight, count in groups.values():
    if l.kind == "quadratic-to-anchor":
      out += weight / l.beta * l.value(pts)
    else:
      out += count * l.value(pts)
  return out


def run_oco_experts_reduction(losses, domain: BallDomain,
                              budget: PrivacyBudget, beta_fail: float,
                              rng: RngStream, rho_mode: str = "theorem",
                              rho: float | None = None,
                              initial_expert: int | None = None,
                              lipschitz: float | None = None
                              ) -> tuple[AlgorithmTrace, RegretReport]:
  """Zero-loss sparse-vector experts over a rho-net of the ball.

  Losses are divided by ``2 L D`` (a per-round bound for realizable
  L-Lipschitz losses) before being handed to the experts algorithm; regret
  is reported on the original scale against the continuous minimiser.
  """
  T = len(losses)
  L = lipschitz or max(l.lipschitz for l in losses)
  if rho is None:
    rho = rho_for(rho_mode, L, T, budget.epsilon)
  net = build_cover(domain, min(rho, 2 * domain.D))
  scale = 2 * L * domain.D
  table = np.stack([l.value(net.centers) for l in losses]) / scale
  bad = int(np.count_nonzero((table < 0) | (table > 1)))
  if bad:
    logger.warning("clamped %d scaled losses onto [0, 1]", bad)
  table = np.clip(table, 0.0, 1.0)
  seq = LossSequence(table)
  cfg = SvtExpertsConfig.make(T, net.M, budget, beta_fail,
                              initial_expert=initial_expert)
  inner, net_report = run_svt_zero_loss(seq, cfg, rng)
  trace = AlgorithmTrace()
  paid = 0.0
  for t, (i, sw, ph) in enumerate(zip(inner.actions, inner.switched,
                                      inner.phase)):
    x = net.centers[i]
    v = float(losses[t].value(x))
    paid += v
    gn = float(np.linalg.norm(losses[t].grad(x)))
    trace.record(x, v, sw, ph, x_norm=float(np.linalg.norm(x)), grad_norm=gn)
  trace.phase_log = list(inner.phase_log)
  trace.ledger = inner.ledger
  best, _ = continuous_minimum(losses, domain, rng.child(10**6),
                               resolution=rho / 4 if domain.d == 1 else None)
  trace.meta.update(inner.meta)
  trace.meta.update(M=net.M, rho=net.rho, scale=scale, clamped=bad,
                    net_regret=net_report.regret * scale,
                    net_best=net_report.best_loss * scale)
  report = RegretReport(paid, best, paid - best, count_switches(inner.actions),
                        list(inner.phase_log))
  return trace, report


def reduction_regret_bound(M: int, T: int, beta: float, eps: float, L: float,
                           rho: float, slack: float = 10.0) -> float:
  return (slack * (math.log(M)**2 + math.log(T / beta) * math.log(M / beta))
          / eps + T * L * rho)


# --------------------------------------------------------------------------
# DP-FTRL


def ftrl_step(g_bar, lam: float, domain: BallDomain) -> np.ndarray:
  """``argmin_{||x|| <= D} <g, x> + (lam/2)||x||^2`` in closed form."""
  if not lam > 0:
    raise ParameterError("lambda must be > 0")
  g = np.asarray(g_bar, dtype=float)
  n = float(np.linalg.norm(g))
  if n / lam <= domain.D:
    return -g / lam
  return -domain.D * g / n


def ftrl_lambda(beta: float, L: float, D: float, T: int, d: int, eps: float,
                delta: float) -> float:
  """Regulariser weight; the noise term uses the tree's sensitivity ``2L``."""
  return 32 * beta + (beta / eps**2 * (2 * L / D)**2 * T * d * math.log(T)
                      * math.log(1 / delta))**(1 / 3)


def ftrl_regret_bound(beta: float, L: float, D: float, T: int, d: int,
                      eps: float, delta: float, L_star: float = 0.0,
                      slack: float = 10.0) -> float:
  return slack * (L_star + beta * D**2
                  + (beta * D**2 * (L * D)**2 * T * d * math.log(T)
                     * math.log(1 / delta) / eps**2)**(1 / 3))


def _validate_smooth(losses, domain):
  for l in losses:
    if not l.smooth:
      raise ConfigError(f"DP-FTRL needs smooth losses, got {l.kind!r}")
    if l.anchor.shape != (domain.d,):
      raise ConfigError("loss dimension does not match the domain")


def run_dp_ftrl(losses, domain: BallDomain, budget: PrivacyBudget,
                rng: RngStream, lam: float | None = None,
                L_star: float | None = None
                ) -> tuple[AlgorithmTrace, RegretReport]:
  """FTRL on binary-tree estimates of the gradient prefix sums.

  Gradients are clipped at ``L`` inside the tree. Regret is measured against
  the continuous minimiser unless ``L_star`` (the known optimum) is given.
  """
  if not budget.delta > 0:
    raise ConfigError("DP-FTRL releases vectors with the Gaussian tree and "
                      "needs delta > 0")
  budget.require_positive()
  _validate_smooth(losses, domain)
  T, d = len(losses), domain.d
  L = max(l.lipschitz for l in losses)
  beta = max(l.beta for l in losses)
  if lam is None:
    lam = ftrl_lambda(beta, L, domain.D, T, d, budget.epsilon, budget.delta)
  tree = BinaryTreeCounter(T, budget, rng, dim=d, clip=L,
                           mode="vector-gaussian")
  g_bar = np.zeros(d)
  trace = AlgorithmTrace()
  paid = 0.0
  prev = None
  for t, loss in enumerate(losses, start=1):
    x = ftrl_step(g_bar, lam, domain)
    v = float(loss.value(x))
    g = loss.grad(x)
    paid += v
    trace.record(x, v, prev is None or not np.array_equal(x, prev), 0,
                 x_norm=float(np.linalg.norm(x)),
                 grad_norm=float(np.linalg.norm(g)))
    g_bar = tree.feed(g)
    prev = x
  if L_star is None:
    L_star, _ = continuous_minimum(losses, domain, rng.child(10**6))
  trace.ledger = CompositionLedger()
  trace.ledger.add("binary_tree", budget.epsilon, budget.delta)
  trace.ledger.non_private = rng.oracle_mode
  trace.meta.update(lam=lam, L=L, beta=beta, clipped=tree.clipped,
                    privacy=budget, budget=budget)
  report = RegretReport(paid, float(L_star), paid - float(L_star),
                        count_switches(np.asarray(trace.actions)), [])
  return trace, report


def self_bounding_check(loss: SmoothLoss, domain: BallDomain, n_points: int,
                        rng: RngStream) -> float:
  """``max ||grad||^2 - 4 beta loss`` over ``n_points`` uniform samples."""
  if n_points < 1:
    raise ParameterError("n_points must be >= 1")
  pts = domain.sample(rng, n_points)
  vals = loss.value(pts)
  grads = np.stack([loss.grad(x) for x in pts])
  return float(np.max(np.sum(grads**2, axis=1) - 4 * loss.beta * vals))


def finite_difference_check(loss: SmoothLoss, domain: BallDomain,
                            n_points: int, rng: RngStream,
                            h: float = 1e-6) -> float:
  """Largest relative gap between ``grad`` and central differences."""
  worst = 0.0
  eye = np.eye(domain.d) * h
  for x in domain.sample(rng, n_points):
    fd = np.array([(loss.value(x + e) - loss.value(x - e)) / (2 * h)
                   for e in eye])
    g = loss.grad(x)
    worst = max(worst, float(np.linalg.norm(g - fd)
                             / max(np.linalg.norm(g), 1e-3)))
  return worst
