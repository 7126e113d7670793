"""Oblivious adversarial environments with delayed feedback.

Feedback for round t with delay d is released at the start of round
t + d + 1, i.e. it can influence the decision of that round onward.  Arms
are 0-based throughout.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, OrderError


@dataclass(frozen=True)
class FeedbackEvent:
    round: int
    observed_loss: float


class DelaySchedule:
    """Delays d_t >= 0, possibly depending on the played arm."""

    def __init__(self, kind: str, value=None, p: float | None = None, seed: int | None = None, horizon: int | None = None):
        self.kind = kind
        self.p = p
        self.seed = seed
        if kind == "zero":
            self._fixed = None
        elif kind == "uniform":
            if int(value) < 0:
                raise ConfigError("delay must be nonnegative")
            self._fixed = int(value)
        elif kind == "per_round":
            self._vec = np.asarray(value, dtype=np.int64)
            if self._vec.ndim != 1 or np.any(self._vec < 0):
                raise ConfigError("per-round delays must be a nonnegative vector")
        elif kind == "arm_dependent":
            self._mat = np.asarray(value, dtype=np.int64)
            if self._mat.ndim != 2 or np.any(self._mat < 0):
                raise ConfigError("arm-dependent delays must be a nonnegative T x K matrix")
        elif kind == "geometric":
            if horizon is None or not 0 < p <= 1:
                raise ConfigError("geometric delays need 0 < p <= 1 and a horizon")
            rng = np.random.default_rng(seed)
            # number of failures before the first success, capped at 10 T
            self._vec = np.minimum(rng.geometric(p, size=horizon) - 1, 10 * horizon).astype(np.int64)
        else:
            raise ConfigError(f"unknown delay kind {kind!r}")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def uniform(cls, d: int):
        return cls("uniform", d)

    @classmethod
    def per_round(cls, delays):
        return cls("per_round", delays)

    @classmethod
    def arm_dependent(cls, matrix):
        return cls("arm_dependent", matrix)

    @classmethod
    def geometric(cls, p: float, seed: int, horizon: int):
        return cls("geometric", p=p, seed=seed, horizon=horizon)

    @property
    def is_zero(self) -> bool:
        if self.kind == "zero":
            return True
        if self.kind == "uniform":
            return self._fixed == 0
        if self.kind in ("per_round", "geometric"):
            return not np.any(self._vec)
        return not np.any(self._mat)

    def delay(self, t: int, arm=None) -> int:
        """Delay of round t (1-based); ``arm`` is only read for arm-dependent schedules."""
        if self.kind == "zero":
            return 0
        if self.kind == "uniform":
            return self._fixed
        if self.kind == "arm_dependent":
            return int(self._mat[t - 1, int(arm)])
        return int(self._vec[t - 1])


class LossModel:
    """A fully materialized oblivious loss sequence.

    MAB models hold a ``T x K`` matrix; linear models hold ``T x n`` loss
    vectors and the action set they are bounded against.
    """

    def __init__(self, kind: str, matrix, action_set: str | None = None, scale: float = 1.0):
        self.kind = kind
        self._matrix = np.asarray(matrix, dtype=float)
        self.action_set = action_set
        self._scale = float(scale)
        if self._matrix.ndim != 2:
            raise ConfigError("loss data must be two-dimensional")
        if kind in ("matrix", "bernoulli") and (self._matrix.min(initial=0) < 0 or self._matrix.max(initial=0) > 1):
            raise ConfigError("MAB losses must lie in [0, 1]")
        if kind == "linear":
            if action_set not in ("hypercube", "ball"):
                raise ConfigError(f"unknown action set {action_set!r}")
            dual_norm = np.abs(self._matrix).sum(axis=1) if action_set == "hypercube" else np.linalg.norm(self._matrix, axis=1)
            if np.any(dual_norm > 1 + 1e-12):
                raise ConfigError("linear losses violate the loss-set constraint")

    @classmethod
    def from_matrix(cls, matrix):
        return cls("matrix", matrix)

    @classmethod
    def bernoulli(cls, means, horizon: int, seed: int):
        means = np.asarray(means, dtype=float)
        rng = np.random.default_rng(seed)
        return cls("bernoulli", (rng.random((horizon, means.size)) < means).astype(float))

    @classmethod
    def scale_free(cls, base, L: float):
        """Losses ``L * base`` with base entries in [-1, 1]; L stays hidden from policies."""
        base = np.asarray(base, dtype=float)
        if np.any(np.abs(base) > 1):
            raise ConfigError("scale-free base losses must lie in [-1, 1]")
        return cls("scale_free", L * base, scale=L)

    @classmethod
    def linear(cls, vectors, action_set: str = "hypercube"):
        return cls("linear", vectors, action_set=action_set)

    @classmethod
    def random_linear(cls, horizon: int, dim: int, seed: int, action_set: str = "hypercube",
                      bias=None, noise: float = 0.5):
        """Biased noisy loss vectors rescaled into the loss set."""
        rng = np.random.default_rng(seed)
        if bias is None:
            bias = np.full(dim, 0.5 / dim)
        bias = np.asarray(bias, dtype=float)
        raw = bias + noise * rng.uniform(-1.0, 1.0, size=(horizon, dim)) / dim
        norms = np.abs(raw).sum(axis=1) if action_set == "hypercube" else np.linalg.norm(raw, axis=1)
        raw = raw / np.maximum(norms, 1.0)[:, None]
        return cls("linear", raw, action_set=action_set)

    @classmethod
    def from_csv(cls, path):
        """Read a ``t,arm_1..arm_K`` loss matrix."""
        return cls.from_matrix(read_round_csv(path))

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    @property
    def horizon(self) -> int:
        return self._matrix.shape[0]

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    def rows(self) -> np.ndarray:
        """Oracle-side view of the whole sequence (read-only)."""
        view = self._matrix.view()
        view.flags.writeable = False
        return view

    def loss(self, t: int, action) -> float:
        if self.is_linear:
            return float(self._matrix[t - 1] @ np.asarray(action, dtype=float))
        return float(self._matrix[t - 1, int(action)])

    def scaled(self, c: float) -> LossModel:
        """Same instance with every loss multiplied by c."""
        out = LossModel.__new__(LossModel)
        out.kind = "scale_free" if self.kind != "linear" else "linear"
        out._matrix = self._matrix * c
        out.action_set = self.action_set
        out._scale = self._scale * c
        return out


class Environment:
    """Plays one run against a loss model and a delay schedule.

    Policies only ever see the events returned by :meth:`release`.
    """

    def __init__(self, model: LossModel, delays: DelaySchedule, horizon: int | None = None):
        self._model = model
        self._delays = delays
        self.horizon = model.horizon if horizon is None else int(horizon)
        if self.horizon > model.horizon:
            raise ConfigError(f"horizon {self.horizon} exceeds loss sequence length {model.horizon}")
        self._queue: list[tuple[int, int, float]] = []
        self._last = 0
        self.realized_delays: list[int] = []
        self.release_rounds: list[int] = []
        self.losses: list[float] = []

    def play(self, t: int, action) -> float:
        if t != self._last + 1 or t > self.horizon:
            raise OrderError(f"round {t} played after round {self._last}")
        self._last = t
        loss = self._model.loss(t, action)
        arm = None if self._model.is_linear else int(action)
        d = self._delays.delay(t, arm)
        release = t + d + 1
        heapq.heappush(self._queue, (release, t, loss))
        self.realized_delays.append(d)
        self.release_rounds.append(release)
        self.losses.append(loss)
        return loss

    def release(self, t: int) -> list[FeedbackEvent]:
        out = []
        while self._queue and self._queue[0][0] <= t:
            _, s, loss = heapq.heappop(self._queue)
            out.append(FeedbackEvent(s, loss))
        out.sort(key=lambda e: e.round)
        return out

    def drain(self) -> list[FeedbackEvent]:
        """Everything still in flight after the last round (diagnostics only)."""
        out = [FeedbackEvent(s, loss) for _, s, loss in sorted(self._queue, key=lambda e: e[1])]
        self._queue.clear()
        return out

    @property
    def has_zero_delays(self) -> bool:
        return self._delays.is_zero

    @property
    def pending(self) -> int:
        return len(self._queue)

    @property
    def total_delay(self) -> int:
        return int(sum(self.realized_delays))


def env_play(env: Environment, t: int, action) -> float:
    return env.play(t, action)


def env_release(env: Environment, t: int) -> list[FeedbackEvent]:
    return env.release(t)


def best_fixed_comparator(model: LossModel, horizon: int | None = None):
    """Best fixed action in hindsight and its total loss.

    MAB ties go to the smallest arm index; on the hypercube zero coordinates
    of the summed loss go to +1.
    """
    rows = model.rows()[: horizon if horizon is not None else model.horizon]
    total = rows.sum(axis=0)
    if not model.is_linear:
        arm = int(np.argmin(total))
        return arm, float(math.fsum(rows[:, arm]))
    if model.action_set == "hypercube":
        y = np.where(total > 0, -1.0, 1.0)
    else:
        norm = float(np.linalg.norm(total))
        y = -total / norm if norm > 0 else np.zeros_like(total)
    return y, float(math.fsum(rows @ y))


def comparator_losses(model: LossModel, horizon: int | None = None) -> np.ndarray:
    """Per-round losses of the best fixed comparator."""
    rows = model.rows()[: horizon if horizon is not None else model.horizon]
    comp, _ = best_fixed_comparator(model, horizon)
    if model.is_linear:
        return rows @ comp
    return rows[:, comp].copy()


def regret_trajectory(losses, comparator) -> np.ndarray:
    return np.cumsum(np.asarray(losses, dtype=float) - np.asarray(comparator, dtype=float))


def pseudo_regret(records, model: LossModel):
    """Monte-Carlo mean cumulative regret and the standard error of its final value.

    ``records`` need ``losses`` (incurred per round) and all share ``model``.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    horizon = len(records[0].losses)
    comp = comparator_losses(model, horizon)
    curves = np.stack([regret_trajectory(r.losses, comp) for r in records]) if horizon else np.zeros((len(records), 0))
    mean = curves.mean(axis=0)
    if len(records) < 2 or horizon == 0:
        return mean, 0.0
    return mean, float(curves[:, -1].std(ddof=1) / math.sqrt(len(records)))


def read_round_csv(path) -> np.ndarray:
    """Load a CSV with a header row whose first column is the round index ``t``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "t":
            raise ConfigError(f"{path}: expected header starting with 't'")
        rows = [row for row in reader if row]
    data = np.array([[float(v) for v in row[1:]] for row in rows], dtype=float)
    ts = [int(row[0]) for row in rows]
    if ts != list(range(1, len(rows) + 1)):
        raise ConfigError(f"{path}: rounds must be 1..T in order")
    return data.reshape(len(rows), len(header) - 1)


def delays_from_csv(path) -> DelaySchedule:
    """``t,d`` gives per-round delays; ``t,arm_1..arm_K`` gives arm-dependent ones."""
    data = read_round_csv(path)
    if np.any(data != np.round(data)):
        raise ConfigError(f"{path}: delays must be integers")
    if data.shape[1] == 1:
        return DelaySchedule.per_round(data[:, 0].astype(np.int64))
    return DelaySchedule.arm_dependent(data.astype(np.int64))


def summation_lemma_gap(xs) -> float:
    """2 sqrt(1 + sum x) - sum_t x_t / sqrt(1 + sum_{s<=t} x_s); nonnegative for x >= 0."""
    xs = np.asarray(xs, dtype=float)
    partial = 1.0 + np.cumsum(xs)
    return 2.0 * math.sqrt(1.0 + xs.sum()) - float(np.sum(xs / np.sqrt(partial)))
