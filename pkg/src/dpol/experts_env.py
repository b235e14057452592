"""Loss sequences for d experts, adversary generators and regret scoring."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from dpol.dp_primitives import CompositionLedger, ParameterError, RngStream


@dataclasses.dataclass(frozen=True)
class LossSequence:
  """A committed ``T x d`` table of losses in [0, 1] (oblivious adversary)."""

  losses: np.ndarray

  def __post_init__(self):
    arr = np.array(self.losses, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
      raise ParameterError("losses must be a nonempty T x d table")
    if not np.all((arr >= 0) & (arr <= 1)):
      raise ParameterError("every loss must lie in [0, 1]")
    arr.setflags(write=False)
    object.__setattr__(self, "losses", arr)

  @property
  def T(self) -> int:
    return self.losses.shape[0]

  @property
  def d(self) -> int:
    return self.losses.shape[1]

  def column_sums(self) -> np.ndarray:
    return self.losses.sum(axis=0)

  def best_loss(self) -> float:
    return float(self.column_sums().min())

  def cumulative(self) -> np.ndarray:
    """``(T+1) x d`` table whose row t is the loss over rounds 1..t."""
    out = np.zeros((self.T + 1, self.d))
    np.cumsum(self.losses, axis=0, out=out[1:])
    return out

  def with_row(self, t: int, row) -> "LossSequence":
    """Copy with round ``t`` (1-indexed) replaced, i.e. a neighbouring input."""
    arr = self.losses.copy()
    arr[t - 1] = row
    return LossSequence(arr)

  def to_csv(self, path_or_file) -> None:
    """Write ``t,x0,..`` rows to a path or an open text stream."""
    if hasattr(path_or_file, "write"):
      self._write_csv(path_or_file)
      return
    with open(path_or_file, "w", newline="") as f:
      self._write_csv(f)

  def _write_csv(self, f) -> None:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["t"] + [f"x{i}" for i in range(self.d)])
    for t, row in enumerate(self.losses, start=1):
      w.writerow([t] + [repr(float(v)) for v in row])

  @classmethod
  def from_csv(cls, path) -> "LossSequence":
    with open(path, newline="") as f:
      rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    if header[0] != "t" or header[1:] != [f"x{i}" for i in range(len(header) - 1)]:
      raise ParameterError(f"unexpected loss CSV header {header}")
    return cls(np.array([[float(v) for v in r[1:]] for r in body]))

  def save(self, path) -> None:
    """Compact binary cache (``.npz``)."""
    with open(path, "wb") as f:
      np.savez_compressed(f, losses=self.losses)

  @classmethod
  def load(cls, path) -> "LossSequence":
    with np.load(path) as data:
      return cls(data["losses"])


def gen_realizable(rng: RngStream, T: int, d: int, zero_expert: int,
                   churn: float = 1.0) -> LossSequence:
  """Expert ``zero_expert`` never loses; others lose w.p. ``churn`` per round."""
  if not 0 <= zero_expert < d:
    raise ParameterError(f"zero_expert must lie in [0, {d})")
  if not 0 <= churn <= 1:
    raise ParameterError("churn must lie in [0, 1]")
  losses = (rng.gen.random((T, d)) < churn).astype(float)
  losses[:, zero_expert] = 0.0
  return LossSequence(losses)


def gen_low_loss(rng: RngStream, T: int, d: int, target: int,
                 expert: int | None = None, churn: float = 1.0) -> LossSequence:
  """Like :func:`gen_realizable`, but the designated expert loses ``target``
  times, at uniformly random rounds."""
  if target > T or target < 0:
    raise ParameterError(f"target L* must lie in [0, T={T}]")
  if expert is None:
    expert = rng.randint(d)
  arr = gen_realizable(rng, T, d, expert, churn).losses.copy()
  rounds = rng.gen.choice(T, size=int(target), replace=False)
  arr[rounds, expert] = 1.0
  return LossSequence(arr)


def lower_bound_tail(d: int, epsilon: float) -> int:
  return max(1, math.ceil(math.log(d) / (2.0 * epsilon)))


def gen_lower_bound_adversary(rng: RngStream, T: int, d: int,
                              epsilon: float) -> LossSequence:
  """Zero losses, then ``k = ceil(ln d / 2 eps)`` rounds where only a hidden
  expert ``j`` escapes a unit loss."""
  k = lower_bound_tail(d, epsilon)
  if k > T:
    raise ParameterError(f"tail length k={k} exceeds horizon T={T}")
  j = rng.randint(d)
  losses = np.zeros((T, d))
  losses[T - k:, :] = 1.0
  losses[T - k:, j] = 0.0
  return LossSequence(losses)


def gen_stochastic(rng: RngStream, T: int, d: int, means) -> LossSequence:
  means = np.asarray(means, dtype=float)
  if means.shape != (d,) or np.any(means < 0) or np.any(means > 1):
    raise ParameterError("means must be d values in [0, 1]")
  return LossSequence((rng.gen.random((T, d)) < means).astype(float))


def gen_gamma_good(rng: RngStream, T: int, d: int, gamma: float,
                   good_loss: int, churn: float = 1.0) -> LossSequence:
  """Exactly ``ceil(gamma*d)`` experts end with total loss ``good_loss``.

  The good experts' losses sit at random rounds; the rest lose with
  probability ``churn`` per round. Intended for instances where the quantile
  loss ``L*(gamma)`` must be known by construction, so ``churn`` should make
  the bad experts clearly worse.
  """
  n_good = math.ceil(gamma * d)
  if not 1 <= n_good <= d:
    raise ParameterError("gamma must select between 1 and d experts")
  if good_loss > T:
    raise ParameterError("good_loss exceeds T")
  losses = (rng.gen.random((T, d)) < churn).astype(float)
  good = rng.gen.choice(d, size=n_good, replace=False)
  for x in good:
    losses[:, x] = 0.0
    losses[rng.gen.choice(T, size=int(good_loss), replace=False), x] = 1.0
  return LossSequence(losses)


def quantile_loss(seq: LossSequence, gamma: float) -> float:
  """Smallest L with at least a gamma fraction of experts at total loss <= L."""
  sums = np.sort(seq.column_sums())
  return float(sums[math.ceil(gamma * seq.d) - 1])


# --------------------------------------------------------------------------
# Traces and scoring


@dataclasses.dataclass
class AlgorithmTrace:
  """Per-round record of a run.

  ``actions`` holds expert indices (or points for OCO runs). ``columns`` holds
  algorithm-specific per-round extras that are written to the trace CSV.
  """

  actions: list = dataclasses.field(default_factory=list)
  losses: list[float] = dataclasses.field(default_factory=list)
  switched: list[bool] = dataclasses.field(default_factory=list)
  phase: list[int] = dataclasses.field(default_factory=list)
  columns: dict[str, list] = dataclasses.field(default_factory=dict)
  phase_log: list[tuple[int, str]] = dataclasses.field(default_factory=list)
  ledger: CompositionLedger = dataclasses.field(
      default_factory=CompositionLedger)
  meta: dict[str, Any] = dataclasses.field(default_factory=dict)

  def record(self, action, loss: float, switched: bool, phase: int,
             **extra) -> None:
    self.actions.append(action)
    self.losses.append(float(loss))
    self.switched.append(bool(switched))
    self.phase.append(int(phase))
    for k, v in extra.items():
      self.columns.setdefault(k, []).append(v)

  def log(self, t: int, event: str) -> None:
    self.phase_log.append((int(t), event))

  def __len__(self):
    return len(self.losses)

  def to_csv(self, path) -> None:
    extra = list(self.columns)
    vector_actions = len(self.actions) and np.ndim(self.actions[0]) > 0
    head = ["t"] + ([] if vector_actions else ["expert"])
    head += ["loss", "switched", "phase"] + extra
    with open(path, "w", newline="") as f:
      w = csv.writer(f, lineterminator="\n")
      w.writerow(head)
      for i in range(len(self)):
        row = [i + 1] + ([] if vector_actions else [int(self.actions[i])])
        row += [repr(self.losses[i]), int(self.switched[i]), self.phase[i]]
        row += [_csv_value(self.columns[k][i]) for k in extra]
        w.writerow(row)


def _csv_value(v):
  if isinstance(v, (bool, np.bool_)):
    return int(v)
  if isinstance(v, float):
    return repr(v)
  return v


@dataclasses.dataclass
class RegretReport:
  cumulative_alg_loss: float
  best_loss: float
  regret: float
  switch_count: int
  phase_log: list[tuple[int, str]] = dataclasses.field(default_factory=list)

  def to_dict(self) -> dict:
    return {
        "regret": self.regret,
        "best_loss": self.best_loss,
        "alg_loss": self.cumulative_alg_loss,
        "switches": self.switch_count,
        "phases": [[t, e] for t, e in self.phase_log],
    }

  def to_json(self) -> str:
    return json.dumps(self.to_dict(), sort_keys=True)

  @classmethod
  def from_dict(cls, d: dict) -> "RegretReport":
    return cls(d["alg_loss"], d["best_loss"], d["regret"], d["switches"],
               [tuple(p) for p in d["phases"]])


def count_switches(actions) -> int:
  """Initial pick plus every round whose action differs from the last."""
  if not len(actions):
    return 0
  a = np.asarray(actions)
  if a.ndim == 1:
    return 1 + int(np.count_nonzero(a[1:] != a[:-1]))
  return 1 + int(np.count_nonzero(np.any(a[1:] != a[:-1], axis=1)))


def score_run(seq: LossSequence, trace: AlgorithmTrace) -> RegretReport:
  """Regret of an experts trace against the best expert in hindsight.

  The algorithm's loss is recomputed from ``seq``, not taken from the trace.
  Note that regret can be negative: a switching algorithm may beat every
  fixed expert.
  """
  if len(trace.actions) != seq.T:
    raise ParameterError(
        f"trace covers {len(trace.actions)} rounds, sequence has {seq.T}")
  acts = np.asarray(trace.actions, dtype=int)
  alg = float(seq.losses[np.arange(seq.T), acts].sum())
  best = seq.best_loss()
  return RegretReport(alg, best, alg - best, count_switches(acts),
                      list(trace.phase_log))
