"""Acceptance suite: one test per criterion, each reporting PASS or FAIL.

Every check runs at its stated size and tolerance; a criterion that does not
hold is reported and fails rather than being relaxed.
"""

import math

import numpy as np

from dpol import harness
from dpol import dp_primitives as dp
from dpol.dartboard import (BaselineSelector, DartboardConfig,
                            exact_marginal_oracle, measure_excess_loss,
                            mw_distribution, run_stochastic_reduction,
                            simulate_marginals, tv_distance, update_rounds)
from dpol.dp_primitives import PrivacyBudget, RngStream
from dpol.experts_env import (LossSequence, gen_gamma_good,
                              gen_lower_bound_adversary, gen_realizable,
                              gen_stochastic, quantile_loss)
from dpol.oco import (BallDomain, build_cover, finite_difference_check,
                      ftrl_regret_bound, ftrl_step, gen_realizable_quadratics,
                      probe_points, reduction_regret_bound, run_dp_ftrl,
                      run_oco_experts_reduction, self_bounding_check,
                      SmoothLoss)
from dpol.potential_experts import (PotentialConfig, log_potential,
                                    potential_query_sensitivity_check,
                                    run_potential, sandwich_holds)
from dpol.svt_experts import (AdaptiveSvtConfig, SvtExpertsConfig,
                              run_svt_adaptive, run_svt_zero_loss,
                              switch_budget)


def test_1_dartboard_marginal_oracle(criterion):
  rng = RngStream(101)
  worst_gap = worst_tv = 0.0
  for i in range(20):
    r = rng.child(i)
    T, d = 1 + r.randint(6), 1 + r.randint(4)
    seq = LossSequence(r.gen.random((T, d)))
    eta, p = 0.01 + 0.48 * r.uniform(), 0.01 + 0.48 * r.uniform()
    Q = exact_marginal_oracle(seq, eta, p)
    worst_gap = max(worst_gap,
                    float(np.abs(Q - mw_distribution(seq.losses, eta)).max()))
    cfg = DartboardConfig.make(T, d, eta, p, K=T + 1)
    freq, _ = simulate_marginals(seq, cfg, r.child(1), 10**5)
    worst_tv = max(worst_tv, max(tv_distance(f, q) for f, q in zip(freq, Q)))
  ok = criterion(1, worst_gap <= 1e-12 and worst_tv <= 0.02,
                 f"max |Q - P| = {worst_gap:.1e}, max TV = {worst_tv:.4f}")
  assert ok


def test_2_noise_free_determinism(criterion):
  rng = RngStream(102)
  oracle = RngStream(0, oracle_mode=True)
  halts_ok = True
  for _ in range(100):
    L = float(rng.gen.integers(1, 30))
    vals = np.cumsum(rng.gen.random(60))
    sess = dp.AboveThreshold(1.0, L, 0.05, 60, oracle)
    halted = next((i for i, v in enumerate(vals) if sess.add_query(v)), None)
    halts_ok &= halted == next((i for i, v in enumerate(vals) if v >= L),
                               None)
  tree_ok = True
  for _ in range(100):
    T = int(rng.gen.integers(1, 200))
    xs = rng.gen.random(T)
    tree = dp.BinaryTreeCounter(T, PrivacyBudget(1.0), oracle)
    got = np.array([tree.feed(v) for v in xs])
    tree_ok &= bool(np.allclose(got, np.cumsum(xs), rtol=0, atol=1e-12))
  dom = BallDomain(2, 1.0)
  axis = np.linspace(-1, 1, 2001)
  grid = np.stack(np.meshgrid(axis, axis), -1).reshape(-1, 2)
  grid = grid[np.linalg.norm(grid, axis=1) <= 1]
  gap = 0.0
  for _ in range(30):
    g, lam = rng.gen.normal(size=2) * 4, 0.2 + 10 * rng.uniform()
    f = lambda z: z @ g + 0.5 * lam * np.sum(z**2, axis=-1)
    gap = max(gap, float(f(ftrl_step(g, lam, dom)) - f(grid).min()))
  ok = criterion(2, halts_ok and tree_ok and gap <= 1e-6,
                 f"halt={halts_ok} tree={tree_ok} ftrl gap={gap:.1e}")
  assert ok


def _lower_bound_runs(eps, reps=100, T=20000, d=256, beta=0.05, seed=103):
  regrets, switches = [], []
  for r in range(reps):
    rng = RngStream(seed, r)
    seq = gen_lower_bound_adversary(rng.child(0), T, d, eps)
    cfg = SvtExpertsConfig.make(T, d, PrivacyBudget(eps), beta)
    tr, rep = run_svt_zero_loss(seq, cfg, rng.child(1))
    regrets.append(rep.regret)
    switches.append(tr.meta["switches"])
  return np.array(regrets), np.array(switches), cfg


def test_3_switch_budget(criterion):
  _, switches, cfg = _lower_bound_runs(1.0)
  K = math.ceil(6 * math.ceil(math.log(256)) + 24 * math.log(1 / 0.05))
  within = int(np.sum(switches <= K))
  ok = criterion(3, cfg.K == K == switch_budget(256, 0.05) and within >= 90,
                 f"K={K}, runs with k <= K: {within}/100, "
                 f"max k={switches.max()}")
  assert ok


def test_4_realizable_regret(criterion):
  T, d, beta = 20000, 256, 0.05
  medians = {}
  inside = 0
  for eps in (0.25, 0.5, 1.0, 2.0):
    regrets, _, _ = _lower_bound_runs(eps)
    medians[eps] = float(np.median(regrets))
    if eps == 1.0:
      bound = 10 * (math.log(d)**2 + math.log(T / beta)
                    * math.log(d / beta)) / eps
      inside = int(np.sum(regrets <= bound))
  med = [medians[e] for e in sorted(medians)]
  monotone = all(a >= b for a, b in zip(med, med[1:]))
  rho = harness.spearman(sorted(medians), med)
  ok = criterion(4, inside >= 90 and monotone and rho <= 0,
                 f"within bound {inside}/100 (bound {bound:.0f}); medians "
                 f"{med} spearman={rho:.2f}")
  assert ok


def test_5_adaptive_wrapper(criterion):
  T, d = 10**4, 16
  phases_ok, below = True, 0
  for r in range(200):
    rng = RngStream(105, r)
    seq = gen_realizable(rng.child(0), T, d, rng.randint(d), churn=0.5)
    cfg = AdaptiveSvtConfig.make(T, d, PrivacyBudget(1.0))
    tr, _ = run_svt_adaptive(seq, cfg, rng.child(1))
    phases_ok &= tr.meta["phases"] <= math.ceil(math.log2(T))
    below += tr.meta["estimate"] <= cfg.estimate_cap()
  ok = criterion(5, phases_ok and below >= 180,
                 f"phase cap held={phases_ok}, estimate <= "
                 f"{cfg.estimate_cap():.3g} in {below}/200")
  assert ok


def test_6_potential(criterion):
  T, d, gamma = 2000, 16, 0.25
  sandwich = True
  losses, bound = [], None
  for r in range(100):
    rng = RngStream(106, r)
    seq = gen_gamma_good(rng.child(0), T, d, gamma, good_loss=5)
    cfg = PotentialConfig.make(T, d, PrivacyBudget(1.0), gamma=gamma)
    _, rep = run_potential(seq, cfg, rng.child(1))
    sandwich &= sandwich_holds(log_potential(seq, cfg.eta), cfg.eta)
    losses.append(rep.cumulative_alg_loss)
    bound = 5 * cfg.loss_bound(quantile_loss(seq, gamma))
  rng = RngStream(1060)
  worst = 0.0
  for _ in range(100):
    seq = LossSequence(rng.gen.random((60, 8)))
    worst = max(worst, potential_query_sensitivity_check(
        seq, 1 + rng.randint(60), rng.gen.random(8), cfg.eta))
  mean = float(np.mean(losses))
  ok = criterion(6, sandwich and worst <= 1 + 1e-12 and mean <= bound,
                 f"sandwich={sandwich} sensitivity={worst:.4f} "
                 f"mean loss {mean:.1f} <= {bound:.1f}")
  assert ok


def test_7_dp_ftrl(criterion):
  T, d, beta, D = 10**4, 5, 0.5, 1.0
  dom = BallDomain(d, D)
  budget = PrivacyBudget(1.0, 1e-6)
  inside, worst = 0, 0.0
  for r in range(50):
    rng = RngStream(107, r)
    losses = gen_realizable_quadratics(rng.child(0), T, dom, beta)
    tr, rep = run_dp_ftrl(losses, dom, budget, rng.child(1), L_star=0.0)
    bound = ftrl_regret_bound(beta, tr.meta["L"], D, T, d, 1.0, 1e-6)
    inside += rep.regret <= bound
    worst = max(worst, rep.regret)
  dom3 = BallDomain(3, 1.0)
  rng = RngStream(1070)
  sb = max(self_bounding_check(l, dom3, 2000, rng) for l in (
      SmoothLoss.quadratic([0.3, -0.2, 0.1], beta, dom3),
      SmoothLoss.hinge([0.6, 0.0, 0.8], 0.4, 0.25)))
  fd = max(finite_difference_check(l, dom3, 300, rng) for l in (
      SmoothLoss.quadratic([0.3, -0.2, 0.1], beta, dom3),
      SmoothLoss.hinge([0.6, 0.0, 0.8], 0.4, 0.25)))
  ok = criterion(7, inside >= 45 and sb <= 1e-9 and fd <= 1e-5,
                 f"within bound {inside}/50 (worst {worst:.0f} vs "
                 f"{bound:.0f}); self-bounding {sb:.1e}, fd {fd:.1e}")
  assert ok


def test_8_oco_experts_reduction(criterion):
  T, dom, beta = 2000, BallDomain(1, 1.0), 0.05
  worst_margin = math.inf
  cover_ok = True
  for r in range(10):
    rng = RngStream(108, r)
    losses = gen_realizable_quadratics(rng.child(0), T, dom, 0.5)
    tr, rep = run_oco_experts_reduction(losses, dom, PrivacyBudget(1.0), beta,
                                        rng.child(1), lipschitz=1.0)
    M, rho = tr.meta["M"], tr.meta["rho"]
    bound = reduction_regret_bound(M, T, beta, 1.0, 1.0, rho)
    worst_margin = min(worst_margin, bound - rep.regret)
    net = build_cover(dom, rho)
    cover_ok &= net.max_distance(probe_points(dom, rng.child(2), 10**4)) \
        <= rho + 1e-12
  ok = criterion(8, worst_margin >= 0 and cover_ok,
                 f"M={M}, rho={rho:.1e}, bound {bound:.0f}, smallest slack "
                 f"{worst_margin:.0f}, cover ok={cover_ok}")
  assert ok


def test_9_stochastic_reduction(criterion):
  T, means, budget = 2**12, [0.0, 0.5], PrivacyBudget(1.0)
  solver = BaselineSelector()
  structural = update_rounds(T) == [2**i for i in range(1, 13)]
  regrets = []
  for r in range(200):
    rng = RngStream(109, r)
    seq = gen_stochastic(rng.child(0), T, 2, means)
    tr, rep = run_stochastic_reduction(seq, solver, budget, rng.child(1))
    w = tr.meta["windows"]
    seen = [i for lo, hi in w for i in range(lo, hi + 1)]
    structural &= len(seen) == len(set(seen)) and \
        [hi + 1 for _, hi in w] == update_rounds(T)
    regrets.append(rep.regret)
  total, var = 0.0, 0.0
  for i in range(1, 13):
    m, se = measure_excess_loss(solver, means, 2**i, budget,
                                RngStream(1090, i), 4000)
    total += 2**i * m
    var += (2**i * se)**2
  mean = float(np.mean(regrets))
  mc = math.sqrt(var + np.var(regrets, ddof=1) / len(regrets))
  ok = criterion(9, structural and mean <= total + 3 * mc,
                 f"structural={structural}; mean regret {mean:.3f} vs "
                 f"sum 2^i D_2^i = {total:.3f} + 3*{mc:.3f}")
  assert ok


def test_10_tail_lemmas_and_composition(criterion):
  checks = harness.verify_tail_lemmas(RngStream(110))
  led = dp.CompositionLedger()
  led.add("m", 0.1, 0.0, 1)
  a = dp.compose_advanced(led, math.exp(-2)).epsilon
  led = dp.CompositionLedger()
  led.add("m", 0.1, 0.0, 8)
  b = dp.compose_advanced(led, 1e-6).epsilon
  # eps sqrt(2k ln(1/delta')) + k eps (e^eps - 1), recomputed here
  ra = 0.1 * math.sqrt(2 * 2) + 0.1 * math.expm1(0.1)
  rb = 0.1 * math.sqrt(16 * math.log(1e6)) + 0.8 * math.expm1(0.1)
  comp = (abs(a - 0.2105) <= 1e-4 and abs(b - 1.5709) <= 1e-4
          and abs(a - ra) <= 1e-12 and abs(b - rb) <= 1e-12)
  tails = all(c.passed for c in checks)
  ok = criterion(10, tails and comp,
                 "; ".join(f"{c.name} {c.empirical:.4f} <= {c.bound:.4f}"
                           for c in checks) + f"; composition {a:.4f}, "
                 f"{b:.4f}")
  assert ok


def _recompose(ledger, budget):
  # each repeated mechanism may use advanced composition with an equal share
  # of the delta the ledger leaves unused; the groups then compose basically
  basic = dp.compose_basic(ledger)
  repeated = [e for e in ledger if e.count > 1]
  slack = budget.delta - basic.delta
  if slack <= 0 or not repeated:
    return basic
  eps, delta = 0.0, 0.0
  for e in ledger:
    one = dp.CompositionLedger()
    one.add(e.name, e.epsilon, e.delta, e.count)
    part = dp.compose_best(one, slack / len(repeated) if e.count > 1 else 0.0)
    eps += part.epsilon
    delta += part.delta if e.count > 1 and part.epsilon < e.count * e.epsilon \
        else e.count * e.delta
  return dp.PrivacyBudget(eps, delta)


_MATRIX = [
    ("svt", "realizable", (0.0, 1e-6), {}),
    ("svt_ada", "realizable", (0.0,), {}),
    ("bintree", "realizable", (0.0, 1e-6), {}),
    ("potential", "gamma_good", (0.0, 1e-6), {"adv.gamma": "0.25"}),
    ("dartboard", "realizable", (0.0,), {"alg.eta_mode": "cor_pure"}),
    ("dartboard", "realizable", (1e-6,), {"alg.eta_mode": "cor_appr"}),
    ("dartboard_b", "realizable", (1e-6,), {"alg.eta_mode": "cor_batch"}),
    ("stoch_reduce", "stochastic", (0.0, 1e-6),
     {"adv.means": "0.1,0.5,0.5,0.9,0.9,0.9,0.9,0.9"}),
    ("oco_net", "quadratics", (0.0, 1e-6), {"d": "1", "alg.L": "1"}),
    ("dp_ftrl", "quadratics", (1e-6,), {"d": "3"}),
]


def test_11_ledger_soundness(criterion):
  worst, runs, bad = -math.inf, 0, []
  for alg, adv, deltas, extra in _MATRIX:
    for eps in (0.25, 0.5, 1.0, 2.0):
      for delta in deltas:
        raw = {"alg": alg, "adversary": adv, "T": "500", "d": "8",
               "eps": repr(eps), "delta": repr(delta), "reps": "2",
               "seed": "111"}
        raw.update(extra)
        cfg = harness.ExperimentConfig.from_mapping(raw)
        for r in range(cfg.reps):
          tr, _, _, spent = harness.run_replication(cfg, r)
          again = _recompose(tr.ledger, cfg.budget)
          runs += 1
          over = max(spent.epsilon - eps, again.epsilon - eps)
          worst = max(worst, over)
          if (over > 1e-9 or spent.delta > delta + 1e-15
              or again.delta > delta + 1e-15):
            bad.append((alg, eps, delta))
  ok = criterion(11, not bad,
                 f"{runs} runs, largest eps overshoot {worst:.1e}; "
                 f"violations {bad}")
  assert ok
