"""Experiment configuration, replicated runs, sweeps and the oracle suite."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import itertools
import json
import math
import os
import time
from pathlib import Path
from typing import Callable

import numpy as np

from dpol import dartboard, oco, potential_experts, svt_experts
from dpol import dp_primitives as dp
from dpol import experts_env as env
from dpol.dp_primitives import ParameterError, PrivacyBudget, RngStream


class ConfigError(ParameterError):
  pass


class VerificationError(AssertionError):
  pass


class ReplicationError(RuntimeError):
  pass


EXPERT_ALGS = ("svt", "svt_ada", "bintree", "potential", "dartboard",
               "dartboard_b", "stoch_reduce")
OCO_ALGS = ("oco_net", "dp_ftrl")
ALGORITHMS = EXPERT_ALGS + OCO_ALGS
EXPERT_ADVERSARIES = ("realizable", "low_loss", "lower_bound", "stochastic",
                      "gamma_good", "zeros", "csv")
OCO_ADVERSARIES = ("quadratics", "distances")
ADVERSARIES = EXPERT_ADVERSARIES + OCO_ADVERSARIES

_CORE = {"alg": str, "adversary": str, "T": int, "d": int, "eps": float,
         "delta": float, "beta": float, "reps": int, "seed": int, "out": str,
         "oracle_mode": bool, "traces": bool, "time_budget": float}


def _parse_bool(s: str) -> bool:
  if s.lower() in ("1", "true", "yes", "on"):
    return True
  if s.lower() in ("0", "false", "no", "off"):
    return False
  raise ConfigError(f"not a boolean: {s!r}")


def _fmt(v) -> str:
  if isinstance(v, bool):
    return "true" if v else "false"
  if isinstance(v, float):
    return repr(v)
  return str(v)


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
  """One experiment cell.

  The textual form is one ``key=value`` per line. Algorithm, adversary, domain
  and loss options use dotted keys (``alg.p``, ``adv.churn``, ``domain.D``,
  ``loss.beta``) and are kept verbatim in ``params``.
  """

  alg: str
  adversary: str
  T: int
  d: int
  eps: float = 1.0
  delta: float = 0.0
  beta: float = 0.05
  reps: int = 1
  seed: int = 0
  out: str = "out"
  oracle_mode: bool = False
  traces: bool = False
  time_budget: float = 120.0
  params: tuple[tuple[str, str], ...] = ()

  def __post_init__(self):
    object.__setattr__(self, "params", tuple(sorted(dict(self.params).items())))
    self.validate()

  def validate(self) -> None:
    if self.alg not in ALGORITHMS:
      raise ConfigError(f"unknown alg {self.alg!r}; valid ids: "
                        f"{', '.join(ALGORITHMS)}")
    valid = OCO_ADVERSARIES if self.alg in OCO_ALGS else EXPERT_ADVERSARIES
    if self.adversary not in valid:
      raise ConfigError(f"unknown adversary {self.adversary!r} for "
                        f"{self.alg}; valid ids: {', '.join(valid)}")
    if self.reps < 1:
      raise ConfigError("reps must be >= 1")
    if self.T < 1 or self.d < 1:
      raise ConfigError("T and d must be >= 1")
    for k, _ in self.params:
      if "." not in k:
        raise ConfigError(f"unknown key {k!r}; option keys are dotted "
                          f"(alg.*, adv.*, domain.*, loss.*)")

  @property
  def budget(self) -> PrivacyBudget:
    return PrivacyBudget(self.eps, self.delta)

  def get(self, key: str, default=None, cast: Callable = str):
    p = dict(self.params)
    if key not in p:
      return default
    try:
      return cast(p[key])
    except ValueError as e:
      raise ConfigError(f"bad value for {key}: {p[key]!r}") from e

  def to_text(self) -> str:
    lines = [f"{k}={_fmt(getattr(self, k))}" for k in _CORE]
    lines += [f"{k}={v}" for k, v in self.params]
    return "\n".join(lines) + "\n"

  @classmethod
  def from_text(cls, text: str, overrides: dict[str, str] | None = None
                ) -> "ExperimentConfig":
    raw: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
      line = line.split("#", 1)[0].strip()
      if not line:
        continue
      if "=" not in line:
        raise ConfigError(f"line {n}: expected key=value, got {line!r}")
      k, v = line.split("=", 1)
      raw[k.strip()] = v.strip()
    raw.update(overrides or {})
    return cls.from_mapping(raw)

  @classmethod
  def from_mapping(cls, raw: dict[str, str]) -> "ExperimentConfig":
    kw, params = {}, {}
    for k, v in raw.items():
      if k in _CORE:
        cast = _parse_bool if _CORE[k] is bool else _CORE[k]
        try:
          kw[k] = cast(v) if not isinstance(v, _CORE[k]) else v
        except ValueError as e:
          raise ConfigError(f"bad value for {k}: {v!r}") from e
      else:
        params[k] = str(v)
    for req in ("alg", "adversary", "T", "d"):
      if req not in kw:
        raise ConfigError(f"missing required key {req!r}")
    return cls(params=tuple(params.items()), **kw)

  def replace(self, **changes) -> "ExperimentConfig":
    raw = dict(self.to_mapping())
    raw.update({k: _fmt(v) for k, v in changes.items()})
    return ExperimentConfig.from_mapping(raw)

  def to_mapping(self) -> dict[str, str]:
    m = {k: _fmt(getattr(self, k)) for k in _CORE}
    m.update(self.params)
    return m

  def digest(self) -> str:
    return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def load_config(path, overrides: dict[str, str] | None = None
                ) -> ExperimentConfig:
  return ExperimentConfig.from_text(Path(path).read_text(), overrides)


def _floats(s: str) -> list[float]:
  return [float(v) for v in s.split(",") if v.strip()]


# --------------------------------------------------------------------------
# Instances and algorithms


def make_sequence(cfg: ExperimentConfig, rng: RngStream) -> env.LossSequence:
  T, d, a = cfg.T, cfg.d, cfg.adversary
  churn = cfg.get("adv.churn", 1.0, float)
  if a == "realizable":
    z = cfg.get("adv.zero_expert", None, int)
    return env.gen_realizable(rng, T, d, rng.randint(d) if z is None else z,
                              churn)
  if a == "low_loss":
    return env.gen_low_loss(rng, T, d, cfg.get("adv.target", 0, int),
                            cfg.get("adv.expert", None, int), churn)
  if a == "lower_bound":
    return env.gen_lower_bound_adversary(rng, T, d,
                                         cfg.get("adv.eps", cfg.eps, float))
  if a == "stochastic":
    means = cfg.get("adv.means", None, _floats)
    if means is None:
      raise ConfigError("adversary stochastic needs adv.means")
    return env.gen_stochastic(rng, T, d, means)
  if a == "gamma_good":
    return env.gen_gamma_good(rng, T, d, cfg.get("adv.gamma", 1 / d, float),
                              cfg.get("adv.good_loss", 0, int), churn)
  if a == "zeros":
    return env.LossSequence(np.zeros((T, d)))
  if a == "csv":
    path = cfg.get("adv.path")
    if path is None:
      raise ConfigError("adversary csv needs adv.path")
    seq = env.LossSequence.from_csv(path)
    if (seq.T, seq.d) != (T, d):
      raise ConfigError(f"{path} is {seq.T}x{seq.d}, config says {T}x{d}")
    return seq
  raise ConfigError(f"unknown adversary {a!r}")


def make_oco_instance(cfg: ExperimentConfig, rng: RngStream):
  dom = oco.BallDomain(cfg.get("domain.d", cfg.d, int),
                       cfg.get("domain.D", 1.0, float))
  anchor = cfg.get("loss.anchor", None, _floats)
  if cfg.adversary == "quadratics":
    losses = oco.gen_realizable_quadratics(rng, cfg.T, dom,
                                           cfg.get("loss.beta", 0.5, float),
                                           anchor)
  else:
    losses = oco.gen_realizable_distances(rng, cfg.T, dom, anchor)
  return dom, losses


def _run_one(cfg: ExperimentConfig, rng: RngStream):
  """One replication; returns (trace, report, extras)."""
  alg, B = cfg.alg, cfg.budget
  inst_rng, alg_rng = rng.child(0), rng.child(1)
  if alg in OCO_ALGS:
    dom, losses = make_oco_instance(cfg, inst_rng)
    if alg == "oco_net":
      tr, rep = oco.run_oco_experts_reduction(
          losses, dom, B, cfg.beta, alg_rng,
          rho_mode=cfg.get("alg.rho_mode", "theorem"),
          lipschitz=cfg.get("alg.L", None, float))
      return tr, rep, {"M": tr.meta["M"], "rho": tr.meta["rho"]}
    tr, rep = oco.run_dp_ftrl(losses, dom, B, alg_rng,
                              lam=cfg.get("alg.lam", None, float),
                              L_star=0.0)
    return tr, rep, {"lam": tr.meta["lam"]}
  seq = make_sequence(cfg, inst_rng)
  init = cfg.get("alg.initial_expert", None, int)
  if alg == "svt":
    c = svt_experts.SvtExpertsConfig.make(
        cfg.T, cfg.d, B, cfg.beta, cfg.get("alg.Lstar", 0.0, float),
        initial_expert=init)
    tr, rep = svt_experts.run_svt_zero_loss(seq, c, alg_rng)
    return tr, rep, {"K": c.K}
  if alg == "svt_ada":
    c = svt_experts.AdaptiveSvtConfig.make(cfg.T, cfg.d, B, cfg.beta,
                                           initial_expert=init)
    tr, rep = svt_experts.run_svt_adaptive(seq, c, alg_rng)
    return tr, rep, {"estimate": tr.meta["estimate"],
                     "phases": tr.meta["phases"]}
  if alg == "bintree":
    c = svt_experts.BinTreeExpertsConfig.make(
        cfg.T, cfg.d, B, cfg.get("alg.B_good", None, int),
        cfg.get("alg.tau", None, float))
    tr, rep = svt_experts.run_bintree_experts(seq, c, alg_rng)
    return tr, rep, {"phases": tr.meta["phases"]}
  if alg == "potential":
    c = potential_experts.PotentialConfig.make(
        cfg.T, cfg.d, B, gamma=cfg.get("alg.gamma", None, float),
        variant=cfg.get("alg.variant"), alpha=cfg.get("alg.alpha", 1.0, float),
        initial_expert=init)
    tr, rep = potential_experts.run_potential(seq, c, alg_rng)
    gamma = c.gamma
    lg = env.quantile_loss(seq, gamma)
    return tr, rep, {"out_of_hypothesis": not c.in_hypothesis(lg),
                     "L_gamma": lg}
  if alg in ("dartboard", "dartboard_b"):
    mode = cfg.get("alg.eta_mode", "manual")
    if mode == "manual":
      p = cfg.get("alg.p", None, float)
      eta = cfg.get("alg.eta", None, float)
      if p is None or eta is None:
        raise ConfigError("eta_mode=manual needs alg.p and alg.eta")
      c = dartboard.DartboardConfig.make(cfg.T, cfg.d, eta, p, cfg.delta,
                                         cfg.get("alg.B", 1, int))
    else:
      c = dartboard.DartboardConfig.from_mode(mode, cfg.T, cfg.d, B)
    tr, rep = (dartboard.run_dartboard_batched if alg == "dartboard_b"
               else dartboard.run_dartboard)(seq, c, alg_rng)
    return tr, rep, {"K": c.K, "B": c.B, "bound": c.regret_bound()}
  if alg == "stoch_reduce":
    tr, rep = dartboard.run_stochastic_reduction(
        seq, dartboard.BaselineSelector(), B, alg_rng)
    return tr, rep, {"updates": len(tr.meta["windows"])}
  raise ConfigError(f"unknown alg {alg!r}")


def check_ledger(trace, budget: PrivacyBudget, tol: float = 1e-9
                 ) -> PrivacyBudget:
  spent = trace.meta["privacy"]
  if not spent.within(budget, tol):
    raise VerificationError(
        f"privacy ledger total ({spent.epsilon:.12g}, {spent.delta:.3g}) "
        f"exceeds configured ({budget.epsilon:.12g}, {budget.delta:.3g})")
  return spent


def run_replication(cfg: ExperimentConfig, r: int):
  rng = RngStream(cfg.seed, r, cfg.oracle_mode)
  try:
    tr, rep, extra = _run_one(cfg, rng)
  except (ParameterError, VerificationError):
    raise
  except Exception as e:
    raise ReplicationError(
        f"replication {r} failed (seed={cfg.seed}, stream_id={r}): "
        f"{type(e).__name__}: {e}") from e
  spent = check_ledger(tr, cfg.budget)
  return tr, rep, extra, spent


@dataclasses.dataclass
class CellResult:
  summary: dict
  reports: list
  wall_time: float


def _jsonable(v):
  if isinstance(v, (np.floating, np.integer, np.bool_)):
    return v.item()
  if isinstance(v, float) and not math.isfinite(v):
    return None
  return v


def run_experiment(cfg: ExperimentConfig, workers: int = 1,
                   write: bool = True) -> CellResult:
  """``cfg.reps`` seeded replications (stream id = replication index).

  The summary JSON never contains timings, so equal configs give byte-equal
  files. The cell aborts once ``cfg.time_budget`` seconds have elapsed.
  """
  start = time.monotonic()
  results = []
  if workers > 1:
    with concurrent.futures.ProcessPoolExecutor(workers) as pool:
      futs = [pool.submit(run_replication, cfg, r) for r in range(cfg.reps)]
      for f in futs:
        results.append(f.result())
  else:
    for r in range(cfg.reps):
      results.append(run_replication(cfg, r))
      if time.monotonic() - start > cfg.time_budget and r + 1 < cfg.reps:
        raise ReplicationError(
            f"cell exceeded its {cfg.time_budget:g}s budget after {r + 1} "
            f"replications (seed={cfg.seed})")
  out = Path(cfg.out)
  if write and cfg.traces:
    tdir = out / cfg.digest()
    tdir.mkdir(parents=True, exist_ok=True)
    for r, (tr, *_rest) in enumerate(results):
      tr.to_csv(tdir / f"trace_r{r}.csv")
  regrets = np.array([rep.regret for _, rep, _, _ in results])
  switches = np.array([rep.switch_count for _, rep, _, _ in results])
  eps_spent = max(s.epsilon for *_, s in results)
  delta_spent = max(s.delta for *_, s in results)
  extras: dict[str, list] = {}
  for _, _, extra, _ in results:
    for k, v in extra.items():
      extras.setdefault(k, []).append(_jsonable(v))
  summary = {
      "alg": cfg.alg,
      "adversary": cfg.adversary,
      "config_hash": cfg.digest(),
      "seed": cfg.seed,
      "reps": cfg.reps,
      "T": cfg.T,
      "d": cfg.d,
      "eps": cfg.eps,
      "delta": cfg.delta,
      "regret_mean": float(regrets.mean()),
      "regret_median": float(np.median(regrets)),
      "regret_q90": float(np.quantile(regrets, 0.9)),
      "regrets": [float(v) for v in regrets],
      "switches_mean": float(switches.mean()),
      "privacy_epsilon": float(eps_spent),
      "privacy_delta": float(delta_spent),
      "extra": {cfg.alg: extras},
  }
  cell = CellResult(summary, [rep for _, rep, _, _ in results],
                    time.monotonic() - start)
  if write:
    write_summary([cell], out / f"summary_{cfg.digest()}.json")
  return cell


def write_summary(cells, path) -> None:
  path = Path(path)
  path.parent.mkdir(parents=True, exist_ok=True)
  path.write_text(json.dumps([c.summary for c in cells], indent=2,
                             sort_keys=True) + "\n")


def parse_axes(specs: list[str]) -> dict[str, list[str]]:
  axes = {}
  for s in specs:
    if "=" not in s:
      raise ConfigError(f"axis must look like key=v1,v2 (got {s!r})")
    k, vals = s.split("=", 1)
    axes[k.strip()] = [v.strip() for v in vals.split(",") if v.strip()]
    if not axes[k.strip()]:
      raise ConfigError(f"axis {k!r} has no values")
  return axes


def sweep(base: ExperimentConfig, axes: dict[str, list[str]],
          workers: int = 1, write: bool = True) -> list[CellResult]:
  """Run the full cartesian product of ``axes`` over ``base``."""
  keys = list(axes)
  cells = []
  for combo in itertools.product(*(axes[k] for k in keys)):
    cfg = base.replace(**dict(zip(keys, combo)))
    cells.append(run_experiment(cfg, workers, write=False))
  assert len(cells) == math.prod(len(v) for v in axes.values())
  if write:
    write_summary(cells, Path(base.out) / f"sweep_{base.digest()}.json")
  return cells


def spearman(x, y) -> float:
  """Spearman rank correlation (average ranks on ties)."""
  def ranks(a):
    a = np.asarray(a, dtype=float)
    order = a.argsort()
    r = np.empty(len(a))
    r[order] = np.arange(len(a))
    for v in np.unique(a):
      m = a == v
      r[m] = r[m].mean()
    return r
  rx, ry = ranks(x), ranks(y)
  if rx.std() == 0 or ry.std() == 0:
    return 0.0
  return float(np.corrcoef(rx, ry)[0, 1])


# --------------------------------------------------------------------------
# Statistical oracles


@dataclasses.dataclass
class TailCheck:
  name: str
  empirical: float
  bound: float
  stderr: float

  @property
  def passed(self) -> bool:
    return self.empirical <= self.bound + 3 * self.stderr


def _mc_stderr(p_hat: float, reps: int) -> float:
  return math.sqrt(max(p_hat * (1 - p_hat), 1 / reps) / reps)


def geometric_tail(rng: RngStream, n: int, p: float, k: int,
                   reps: int) -> TailCheck:
  """``P(W > 2k/p) <= exp(-k/4)`` for W a sum of n Geometric(p) trials."""
  if k < n:
    raise ParameterError(f"the geometric tail bound needs k >= n (k={k}, n={n})")
  w = rng.gen.geometric(p, size=(reps, n)).sum(axis=1)
  emp = float(np.mean(w > 2 * k / p))
  return TailCheck("geometric", emp, math.exp(-k / 4), _mc_stderr(emp, reps))


def chernoff_tail(rng: RngStream, n: int, p: float, delta: float,
                  reps: int) -> TailCheck:
  """``P(X > (1+delta) n p) <= exp(-n p delta^2 / 3)`` for X ~ Bin(n, p)."""
  x = rng.gen.binomial(n, p, size=reps)
  emp = float(np.mean(x > (1 + delta) * n * p))
  return TailCheck("chernoff", emp, math.exp(-n * p * delta**2 / 3),
                   _mc_stderr(emp, reps))


def verify_tail_lemmas(rng: RngStream, n: int = 10, p: float = 0.5,
                       k: int = 10, reps: int = 10**5,
                       chernoff: tuple[int, float, float] = (1000, 0.5, 0.2)
                       ) -> list[TailCheck]:
  if reps < 10**4:
    raise ParameterError("need reps >= 1e4 for a meaningful tail estimate")
  return [geometric_tail(rng, n, p, k, reps),
          chernoff_tail(rng, *chernoff, reps)]


# --------------------------------------------------------------------------
# Oracle suite


def _suite_dartboard(rng):
  out = []
  worst = 0.0
  for i in range(20):
    r = rng.child(i)
    d, T = 2 + r.randint(3), 2 + r.randint(5)
    seq = env.LossSequence(r.gen.random((T, d)))
    eta, p = 0.05 + 0.4 * r.uniform(), 0.05 + 0.4 * r.uniform()
    q = dartboard.exact_marginal_oracle(seq, eta, p)
    worst = max(worst, float(np.abs(q - dartboard.mw_distribution(
        seq.losses, eta)).max()))
  out.append(("exact marginals equal MW law", worst <= 1e-12,
              f"max gap {worst:.2e}"))
  seq = env.LossSequence(rng.gen.random((5, 3)))
  cfg = dartboard.DartboardConfig.make(5, 3, 0.3, 0.2, K=10**9)
  freq, _ = dartboard.simulate_marginals(seq, cfg, rng.child(99), 10**5)
  q = dartboard.exact_marginal_oracle(seq, 0.3, 0.2)
  tv = max(dartboard.tv_distance(freq[t], q[t]) for t in range(5))
  out.append(("simulated marginals", tv <= 0.02, f"max TV {tv:.4f}"))
  return out


def _suite_determinism(rng):
  out = []
  o = RngStream(0, oracle_mode=True)
  ok = True
  for _ in range(50):
    L = float(rng.gen.integers(1, 20))
    vals = np.cumsum(rng.gen.random(40))
    sess = dp.AboveThreshold(1.0, L, 0.05, 40, o)
    halted = next((i for i, v in enumerate(vals) if sess.add_query(v)), None)
    first = next((i for i, v in enumerate(vals) if v >= L), None)
    ok &= halted == first
  out.append(("AboveThreshold halts at first query >= L", ok, ""))
  ok = True
  for i in range(100):
    T = 1 + int(rng.gen.integers(1, 64))
    xs = rng.gen.random(T)
    tree = dp.BinaryTreeCounter(T, PrivacyBudget(1.0), o)
    got = np.array([tree.feed(v) for v in xs])
    ok &= bool(np.allclose(got, np.cumsum(xs), rtol=0, atol=1e-12))
  out.append(("binary tree exact prefix sums", ok, "100 streams"))
  a = env.LossSequence(rng.gen.random((50, 4)))
  cfg = svt_experts.SvtExpertsConfig.make(50, 4, PrivacyBudget(1.0))
  r1 = svt_experts.run_svt_zero_loss(a, cfg, RngStream(3, oracle_mode=True))
  r2 = svt_experts.run_svt_zero_loss(a, cfg, RngStream(3, oracle_mode=True))
  out.append(("noise-free runs repeat", r1[0].actions == r2[0].actions, ""))
  return out


def _suite_sensitivity(rng):
  worst_svt = 0.0
  worst_pot = 0.0
  for i in range(100):
    seq = env.LossSequence(rng.gen.random((30, 8)))
    t = 1 + rng.randint(30)
    row = rng.gen.random(8)
    other = seq.with_row(t, row)
    c1, c2 = seq.cumulative(), other.cumulative()
    tp = 1 + rng.randint(30)
    x = rng.randint(8)
    q1 = c1[tp:, x] - c1[tp - 1, x]
    q2 = c2[tp:, x] - c2[tp - 1, x]
    worst_svt = max(worst_svt, float(np.abs(q1 - q2).max()))
    worst_pot = max(worst_pot, potential_experts.potential_query_sensitivity_check(
        seq, t, row, 0.3))
  return [("svt queries 1-sensitive", worst_svt <= 1 + 1e-9,
           f"max {worst_svt:.4f}"),
          ("potential queries 1-sensitive", worst_pot <= 1 + 1e-9,
           f"max {worst_pot:.4f}")]


def _suite_self_bounding(rng):
  dom = oco.BallDomain(3, 1.0)
  losses = [oco.SmoothLoss.quadratic([0.2, -0.1, 0.3], 2.0, dom),
            oco.SmoothLoss.hinge([0.6, 0.8, 0.0], 0.5, 0.3)]
  out = []
  for l in losses:
    v = oco.self_bounding_check(l, dom, 1000, rng)
    fd = oco.finite_difference_check(l, dom, 100, rng)
    out.append((f"{l.kind} self-bounding", v <= 1e-9, f"max {v:.2e}"))
    out.append((f"{l.kind} finite differences", fd <= 1e-5, f"max {fd:.2e}"))
  return out


def _suite_ftrl(rng):
  dom = oco.BallDomain(2, 1.0)
  axis = np.linspace(-1, 1, 2001)
  grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)
  grid = grid[np.linalg.norm(grid, axis=1) <= 1]
  worst = 0.0
  for _ in range(20):
    g = rng.gen.normal(size=2) * 5
    lam = 0.5 + 10 * rng.uniform()
    x = oco.ftrl_step(g, lam, dom)
    f = lambda z: z @ g + 0.5 * lam * np.sum(z**2, axis=-1)
    worst = max(worst, float(f(x) - f(grid).min()))
  return [("ftrl closed form vs grid", worst <= 1e-6, f"gap {worst:.2e}")]


def _suite_composition(rng):
  led = dp.CompositionLedger()
  led.add("m", 0.1, 0.0, 1)
  a = dp.compose_advanced(led, math.exp(-2)).epsilon
  led = dp.CompositionLedger()
  led.add("m", 0.1, 0.0, 8)
  b = dp.compose_advanced(led, 1e-6).epsilon
  return [("advanced composition k=1", abs(a - 0.2105) <= 1e-4, f"{a:.6f}"),
          ("advanced composition k=8", abs(b - 1.5709) <= 1e-4, f"{b:.6f}")]


def _suite_tail(rng):
  return [(f"{c.name} tail lemma", c.passed,
           f"{c.empirical:.5f} <= {c.bound:.5f} + 3*{c.stderr:.1e}")
          for c in verify_tail_lemmas(rng)]


SUITES = {
    "dartboard": _suite_dartboard,
    "determinism": _suite_determinism,
    "sensitivity": _suite_sensitivity,
    "self_bounding": _suite_self_bounding,
    "ftrl": _suite_ftrl,
    "composition": _suite_composition,
    "tail_lemmas": _suite_tail,
}


def verify_all(filter: str | None = None, seed: int = 0,
               printer: Callable[[str], None] | None = print
               ) -> list[tuple[str, str, bool, str]]:
  """Run the oracle suites (optionally only those whose name contains
  ``filter``) and print a pass/fail table."""
  names = [n for n in SUITES if filter is None or filter in n]
  if not names:
    raise ConfigError(f"no suite matches {filter!r}; suites: "
                      f"{', '.join(SUITES)}")
  rows = []
  for i, n in enumerate(names):
    for check, ok, detail in SUITES[n](RngStream(seed, i)):
      rows.append((n, check, bool(ok), detail))
  if printer:
    w = max(len(f"{s}/{c}") for s, c, _, _ in rows)
    for s, c, ok, detail in rows:
      printer(f"{'PASS' if ok else 'FAIL'}  {f'{s}/{c}':<{w}}  {detail}")
  return rows


def seed_from_env(default: int) -> int:
  v = os.environ.get("DPOL_SEED")
  if v is None or v == "":
    return default
  try:
    return int(v)
  except ValueError as e:
    raise ConfigError(f"DPOL_SEED must be an integer, got {v!r}") from e
