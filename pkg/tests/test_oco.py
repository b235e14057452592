import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpol.dp_primitives import ParameterError, PrivacyBudget, RngStream
from dpol.oco import (BallDomain, SizeError, SmoothLoss, build_cover,
                      continuous_minimum, finite_difference_check, ftrl_lambda,
                      ftrl_step, gen_realizable_distances,
                      gen_realizable_quadratics, predicted_cover_size,
                      probe_points, rho_for, run_dp_ftrl,
                      run_oco_experts_reduction, self_bounding_check)
from dpol.potential_experts import ConfigError

UNIT1 = BallDomain(1, 1.0)
UNIT2 = BallDomain(2, 1.0)


def test_domain_projection():
  assert np.allclose(UNIT2.project([3.0, 4.0]), [0.6, 0.8])
  assert np.allclose(UNIT2.project([0.1, 0.2]), [0.1, 0.2])
  pts = UNIT2.sample(RngStream(0), 500)
  assert np.all(np.linalg.norm(pts, axis=1) <= 1 + 1e-12)


def test_cover_hand_examples():
  assert sorted(build_cover(UNIT1, 0.5).centers.ravel()) == [-0.5, 0.5]
  assert build_cover(UNIT1, 2.0).centers.tolist() == [[0.0]]
  net = build_cover(UNIT2, 0.25)
  assert net.M <= 256 and net.M <= predicted_cover_size(UNIT2, 0.25)
  assert net.max_distance(probe_points(UNIT2, RngStream(1), 10**4)) <= 0.25


@pytest.mark.parametrize("d,rho", [(1, 0.01), (2, 0.1), (3, 0.3)])
def test_cover_radius_on_probes(d, rho):
  dom = BallDomain(d, 1.0)
  net = build_cover(dom, rho)
  assert np.all(np.linalg.norm(net.centers, axis=1) <= 1 + 1e-12)
  assert net.max_distance(probe_points(dom, RngStream(d), 10**4)) <= rho + 1e-12


def test_cover_size_guards():
  with pytest.raises(SizeError):
    build_cover(BallDomain(4, 1.0), 0.5)
  with pytest.raises(SizeError):
    build_cover(BallDomain(3, 1.0), 1e-3)
  with pytest.raises(ParameterError):
    build_cover(UNIT1, 0.0)


def test_rho_modes():
  assert rho_for("theorem", 2.0, 100, 0.5) == pytest.approx(1 / 200)
  assert rho_for("proof", 2.0, 100, 0.5) == pytest.approx(1 / 100)
  with pytest.raises(ParameterError):
    rho_for("other", 1, 1, 1)


def test_ftrl_step_hand_values():
  assert np.allclose(ftrl_step([3.0, 4.0], 10.0, UNIT2), [-0.3, -0.4])
  assert np.allclose(ftrl_step([3.0, 4.0], 5.0, UNIT2), [-0.6, -0.8])
  assert np.allclose(ftrl_step([3.0, 4.0], 1.0, UNIT2), [-0.6, -0.8])
  assert np.array_equal(ftrl_step([0.0, 0.0], 1.0, UNIT2), [0.0, 0.0])
  with pytest.raises(ParameterError):
    ftrl_step([1.0, 0.0], 0.0, UNIT2)


def _ftrl_objective(x, g, lam):
  return x @ g + 0.5 * lam * np.sum(x**2, axis=-1)


@settings(deadline=None, max_examples=30)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 10))
def test_ftrl_step_matches_grid(g1, g2, lam):
  g = np.array([g1, g2])
  axis = np.linspace(-1, 1, 801)
  grid = np.stack(np.meshgrid(axis, axis), -1).reshape(-1, 2)
  grid = grid[np.linalg.norm(grid, axis=1) <= 1]
  x = ftrl_step(g, lam, UNIT2)
  assert UNIT2.contains(x)
  assert _ftrl_objective(x, g, lam) <= _ftrl_objective(grid, g, lam).min() + 1e-6


def test_ftrl_lambda_plug_in():
  # noise term uses sensitivity 2L, so (2L/D)^2 = 4
  lam = ftrl_lambda(0.5, 1.0, 1.0, 10**4, 5, 1.0, 1e-6)
  expect = 16 + (0.5 * 4 * 10**4 * 5 * math.log(10**4) * math.log(1e6))**(1 / 3)
  assert lam == pytest.approx(expect, rel=1e-12)


def test_losses_hand_values():
  q = SmoothLoss.quadratic([0.5], 2.0, UNIT1)
  assert q.value([1.0]) == pytest.approx(0.25)
  assert q.lipschitz == pytest.approx(3.0)
  h = SmoothLoss.hinge([1.0], 1.0, 0.5)
  assert h.value([2.0]) == 0
  assert h.value([0.75]) == pytest.approx(0.25**2 / 1.0)
  assert h.value([-1.0]) == pytest.approx(2.0 - 0.25)
  with pytest.raises(ParameterError):
    SmoothLoss("cubic", [0.0], 1.0, 1.0)


@pytest.mark.parametrize("make", [
    lambda: SmoothLoss.quadratic([0.2, -0.3, 0.1], 1.5, BallDomain(3, 1.0)),
    lambda: SmoothLoss.hinge([0.6, 0.8, 0.0], 0.5, 0.3),
])
def test_self_bounding_and_gradients(make):
  loss, dom = make(), BallDomain(3, 1.0)
  assert self_bounding_check(loss, dom, 2000, RngStream(0)) <= 1e-9
  assert finite_difference_check(loss, dom, 200, RngStream(1)) <= 1e-5


def test_continuous_minimum_realizable():
  dom = BallDomain(2, 1.0)
  losses = gen_realizable_quadratics(RngStream(2), 30, dom, 0.5)
  val, x = continuous_minimum(losses, dom)
  assert val <= 1e-6
  assert np.allclose(x, losses[0].anchor, atol=1e-2)
  dom3 = BallDomain(3, 1.0)
  losses = gen_realizable_quadratics(RngStream(3), 30, dom3, 0.5)
  assert continuous_minimum(losses, dom3, RngStream(0))[0] <= 1e-9


def test_ftrl_rejects_pure_and_nonsmooth():
  dom = BallDomain(2, 1.0)
  losses = gen_realizable_quadratics(RngStream(0), 5, dom, 0.5)
  with pytest.raises(ConfigError):
    run_dp_ftrl(losses, dom, PrivacyBudget(1.0), RngStream(0))
  with pytest.raises(ConfigError):
    run_dp_ftrl(gen_realizable_distances(RngStream(0), 5, dom), dom,
                PrivacyBudget(1.0, 1e-6), RngStream(0))


def test_ftrl_iterates_feasible_and_oracle_deterministic():
  dom = BallDomain(3, 1.0)
  losses = gen_realizable_quadratics(RngStream(4), 400, dom, 0.5)
  budget = PrivacyBudget(1.0, 1e-6)
  tr, _ = run_dp_ftrl(losses, dom, budget, RngStream(5))
  assert all(n <= 1 + 1e-12 for n in tr.columns["x_norm"])
  a, ra = run_dp_ftrl(losses, dom, budget, RngStream(1, oracle_mode=True))
  b, rb = run_dp_ftrl(losses, dom, budget, RngStream(2, oracle_mode=True))
  assert np.array_equal(np.asarray(a.actions), np.asarray(b.actions))
  assert ra == rb
  loss = np.asarray(a.losses)
  assert loss[-50:].mean() < loss[:50].mean()


def test_reduction_no_clamping_and_oracle_regret():
  dom = UNIT1
  losses = gen_realizable_quadratics(RngStream(6), 200, dom, 0.5)
  tr, rep = run_oco_experts_reduction(losses, dom, PrivacyBudget(1.0), 0.05,
                                      RngStream(0, oracle_mode=True),
                                      lipschitz=1.0)
  assert tr.meta["clamped"] == 0
  assert tr.meta["M"] == len(build_cover(dom, tr.meta["rho"]).centers)
  assert rep.best_loss <= 1e-6
  assert rep.regret >= -1e-9


def test_reduction_guards_dimension():
  dom = BallDomain(5, 1.0)
  losses = gen_realizable_quadratics(RngStream(0), 10, dom, 0.5)
  with pytest.raises(SizeError):
    run_oco_experts_reduction(losses, dom, PrivacyBudget(1.0), 0.05,
                              RngStream(0))
