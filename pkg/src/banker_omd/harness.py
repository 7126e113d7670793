"""Experiment configuration, seeded Monte-Carlo runs and output files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .algorithms import POLICIES
from .environment import (
    DelaySchedule,
    Environment,
    LossModel,
    comparator_losses,
    delays_from_csv,
    read_round_csv,
)
from .errors import ConfigError
from .geometry import make_regularizer

SCHEMA_VERSION = 1

# splitmix64 increment (the 64-bit golden ratio) and a second odd constant
# separating auxiliary streams; ports must use the same values.
SEED_GAMMA = 0x9E3779B97F4A7C15
STREAM_GAMMA = 0xD1B54A32D192ED03
MASK64 = (1 << 64) - 1

RUN_COLUMNS = [
    "run", "t", "x_hash", "action", "loss", "observed_loss", "comparator_loss",
    "sigma", "investment", "total_investment", "backlog", "skipped",
]


def splitmix64(x: int) -> int:
    z = (x + SEED_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int, stream: int = 0) -> int:
    """Seed of run ``index`` (stream 0) or of an auxiliary stream."""
    x = (int(master_seed) + (int(index) + 1) * SEED_GAMMA + int(stream) * STREAM_GAMMA) & MASK64
    return splitmix64(x)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class AlgorithmConfig:
    kind: str = "tinf"
    arms: int = 2
    horizon: int = 1000
    regularizer: str | None = None
    prefactor: float = 1.0
    sigma: float = 1.0
    strategy: str = "greedy"


@dataclass
class EnvironmentConfig:
    losses: dict = field(default_factory=lambda: {"kind": "bernoulli", "means": [0.5, 0.4]})
    delays: dict = field(default_factory=lambda: {"kind": "zero"})


@dataclass
class OutputConfig:
    dir: str = "out"
    dump_actions: bool = False


@dataclass
class ExperimentConfig:
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    runs: int = 1
    master_seed: int = 0
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        data = dict(data or {})
        unknown = set(data) - {"algorithm", "environment", "runs", "master_seed", "output"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(
                algorithm=AlgorithmConfig(**data.get("algorithm", {})),
                environment=EnvironmentConfig(**data.get("environment", {})),
                runs=int(data.get("runs", 1)),
                master_seed=int(data.get("master_seed", 0)),
                output=OutputConfig(**data.get("output", {})),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        with path.open() as fh:
            data = yaml.safe_load(fh)
        cfg = cls.from_dict(data)
        cfg._base_dir = str(path.parent)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        alg = self.algorithm
        if alg.kind not in POLICIES:
            raise ConfigError(f"unknown algorithm {alg.kind!r}; choose from {sorted(POLICIES)}")
        if alg.horizon < 0 or alg.arms < 1:
            raise ConfigError("horizon must be >= 0 and arms >= 1")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if not 0 <= self.master_seed <= MASK64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")

    def override(self, path: str, value) -> ExperimentConfig:
        """Copy with the dotted ``path`` set to ``value`` (parsed as YAML scalar)."""
        data = self.to_dict()
        if isinstance(value, str):
            value = yaml.safe_load(value)
        node = data
        keys = path.split(".")
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(f"no config section {k!r} in {path!r}")
            node = node[k]
        node[keys[-1]] = value
        out = ExperimentConfig.from_dict(data)
        out._base_dir = getattr(self, "_base_dir", ".")
        return out

    def _resolve_path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(getattr(self, "_base_dir", ".")) / p


def build_loss_model(cfg: ExperimentConfig) -> LossModel:
    spec = dict(cfg.environment.losses)
    kind = spec.pop("kind", "bernoulli")
    T = cfg.algorithm.horizon
    seed = spec.pop("seed", None)
    if seed is None:
        seed = derive_seed(cfg.master_seed, 0, stream=1)
    if kind == "bernoulli":
        return LossModel.bernoulli(_means(spec, cfg.algorithm.arms), T, seed)
    if kind == "matrix":
        if "path" in spec:
            return LossModel.from_matrix(read_round_csv(cfg._resolve_path(spec["path"])))
        return LossModel.from_matrix(spec["values"])
    if kind == "scale_free":
        base_means = _means(spec, cfg.algorithm.arms)
        base = LossModel.bernoulli(base_means, T, seed).rows()
        if spec.get("signed", False):
            base = 2.0 * base - 1.0
        return LossModel.scale_free(base, float(spec.get("L", 1.0)))
    if kind == "linear":
        if "path" in spec:
            return LossModel.linear(read_round_csv(cfg._resolve_path(spec["path"])), spec.get("action_set", "hypercube"))
        return LossModel.random_linear(T, cfg.algorithm.arms, seed, spec.get("action_set", "hypercube"),
                                       spec.get("bias"), float(spec.get("noise", 0.5)))
    raise ConfigError(f"unknown loss kind {kind!r}")


def _means(spec, arms):
    if "means" in spec:
        means = list(spec["means"])
        if len(means) != arms:
            raise ConfigError(f"{len(means)} means given for {arms} arms")
        return means
    best = float(spec.get("best", 0.3))
    gap = float(spec.get("gap", 0.2))
    return [best] + [best + gap] * (arms - 1)


def build_delays(cfg: ExperimentConfig) -> DelaySchedule:
    spec = dict(cfg.environment.delays)
    kind = spec.pop("kind", "zero")
    if kind == "zero":
        return DelaySchedule.zero()
    if kind == "uniform":
        return DelaySchedule.uniform(int(spec.get("d", 0)))
    if kind in ("per_round", "arm_dependent") and "path" in spec:
        return delays_from_csv(cfg._resolve_path(spec["path"]))
    if kind == "per_round":
        return DelaySchedule.per_round(spec["values"])
    if kind == "arm_dependent":
        return DelaySchedule.arm_dependent(spec["values"])
    if kind == "geometric":
        seed = spec.get("seed")
        if seed is None:
            seed = derive_seed(cfg.master_seed, 0, stream=3)
        return DelaySchedule.geometric(float(spec["p"]), seed, cfg.algorithm.horizon)
    raise ConfigError(f"unknown delay kind {kind!r}")


def build_policy(cfg: ExperimentConfig, rng: np.random.Generator, model: LossModel | None = None, **kw):
    alg = cfg.algorithm
    cls = POLICIES[alg.kind]
    if alg.kind == "uniform":
        action_set = model.action_set if model is not None and model.is_linear else None
        return cls(alg.arms, alg.horizon, rng, action_set=action_set)
    extra = dict(kw)
    if alg.regularizer is not None:
        extra["reg"] = make_regularizer(alg.regularizer, alg.arms)
    if alg.kind == "tinf":
        extra["prefactor"] = alg.prefactor
    elif alg.kind == "constant":
        extra["sigma"] = alg.sigma
    return cls(alg.arms, alg.horizon, rng, strategy=alg.strategy, **extra)


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunRecord:
    run_index: int
    seed: int
    x_hashes: list
    actions: list
    losses: np.ndarray
    observed: np.ndarray
    comparator: np.ndarray
    sigmas: np.ndarray
    investments: np.ndarray
    total_investment: np.ndarray
    backlogs: np.ndarray
    skipped: np.ndarray
    release_rounds: np.ndarray
    realized_delay: int
    skip_count: int
    points: list | None = None

    @property
    def horizon(self) -> int:
        return len(self.losses)

    @property
    def final_investment(self) -> float:
        return float(self.total_investment[-1]) if self.horizon else 0.0

    @property
    def weighted_square_loss(self) -> float:
        """sum_t (backlog_t + 1) * loss_t^2."""
        return math.fsum((self.backlogs + 1) * self.losses ** 2)

    def regret_curve(self) -> np.ndarray:
        return np.cumsum(self.losses - self.comparator)

    @property
    def final_regret(self) -> float:
        return math.fsum(self.losses - self.comparator)


class ExperimentError(RuntimeError):
    pass


def run_single(cfg: ExperimentConfig, run_index: int, model: LossModel | None = None,
               delays: DelaySchedule | None = None, policy_kw: dict | None = None, return_policy: bool = False):
    """One seeded run of the interaction protocol."""
    model = build_loss_model(cfg) if model is None else model
    delays = build_delays(cfg) if delays is None else delays
    T = cfg.algorithm.horizon
    seed = derive_seed(cfg.master_seed, run_index)
    rng = np.random.default_rng(seed)
    env = Environment(model, delays, T)
    kw = dict(policy_kw or {})
    if cfg.output.dump_actions:
        kw.setdefault("dump_points", True)
    policy = build_policy(cfg, rng, model, **kw)
    t = 0
    try:
        for t in range(1, T + 1):
            policy.ingest(env.release(t))
            _, action = policy.decide(t)
            env.play(t, action)
        t = T + 1
        # late feedback settles the books but never reaches a decision
        policy.ingest(env.drain())
    except Exception as exc:
        raise ExperimentError(f"run {run_index}, round {t}: {type(exc).__name__}: {exc}") from exc
    log = policy.log
    release = np.asarray(env.release_rounds, dtype=np.int64)
    record = RunRecord(
        run_index=run_index,
        seed=seed,
        x_hashes=list(log.x_hashes),
        actions=list(log.actions),
        losses=np.asarray(env.losses, dtype=float),
        observed=release <= T + 1,
        comparator=comparator_losses(model, T) if T else np.zeros(0),
        sigmas=np.asarray(log.sigmas, dtype=float),
        investments=np.asarray(log.investments, dtype=float),
        total_investment=np.asarray(log.total_investment, dtype=float),
        backlogs=np.asarray(log.backlogs, dtype=np.int64),
        skipped=np.asarray(log.skipped, dtype=bool),
        release_rounds=release,
        realized_delay=env.total_delay,
        skip_count=int(policy.skip_count),
        points=list(log.points) if log.points else None,
    )
    if return_policy:
        return record, policy
    return record


def _run_worker(args):
    cfg, index, model, delays = args
    return run_single(cfg, index, model, delays)


def thread_count() -> int:
    raw = os.environ.get("BANKER_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"BANKER_THREADS must be an integer, got {raw!r}") from None
    return (os.cpu_count() or 1) if n <= 0 else n


@dataclass
class AggregateStats:
    mean_curve: np.ndarray
    stderr_curve: np.ndarray
    final_regrets: np.ndarray

    @property
    def runs(self) -> int:
        return len(self.final_regrets)

    @property
    def mean_final(self) -> float:
        return float(self.mean_curve[-1]) if self.mean_curve.size else 0.0

    @property
    def stderr_final(self) -> float:
        return float(self.stderr_curve[-1]) if self.stderr_curve.size else 0.0


def aggregate(records) -> AggregateStats:
    records = sorted(records, key=lambda r: r.run_index)
    curves = np.stack([r.regret_curve() for r in records])
    n = len(records)
    mean = curves.mean(axis=0)
    stderr = curves.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    finals = np.array([r.final_regret for r in records])
    return AggregateStats(mean, stderr, finals)


def run_monte_carlo(cfg: ExperimentConfig, threads: int | None = None):
    """All runs of an experiment against one shared environment instance."""
    model = build_loss_model(cfg)
    delays = build_delays(cfg)
    threads = thread_count() if threads is None else threads
    jobs = [(cfg, i, model, delays) for i in range(cfg.runs)]
    if threads > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=min(threads, cfg.runs)) as pool:
            records = list(pool.map(_run_worker, jobs))
    else:
        records = [_run_worker(j) for j in jobs]
    return aggregate(records), records


# ---------------------------------------------------------------------------
# outputs


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.ndarray):
        return ";".join(repr(float(c)) for c in v)
    return str(v)


def _stats(values) -> dict:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"mean": 0.0, "min": 0.0, "max": 0.0}
    return {"mean": float(arr.mean()), "min": float(arr.min()), "max": float(arr.max())}


def summary_dict(stats: AggregateStats | None, records, cfg: ExperimentConfig) -> dict:
    records = sorted(records, key=lambda r: r.run_index)
    return {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "master_seed": cfg.master_seed,
        "runs": len(records),
        "horizon": cfg.algorithm.horizon,
        "mean_final_regret": stats.mean_final if stats else 0.0,
        "stderr_final_regret": stats.stderr_final if stats else 0.0,
        "total_investment": _stats([r.final_investment for r in records]),
        "skips": _stats([r.skip_count for r in records]),
        "realized_delay": _stats([r.realized_delay for r in records]),
        "weighted_square_loss": _stats([r.weighted_square_loss for r in records]),
        "comparator_tie_break": "smallest arm index; +1 on zero hypercube coordinates",
    }


def emit_outputs(stats: AggregateStats | None, records, cfg: ExperimentConfig, out_dir=None) -> dict:
    """Write runs.csv, summary.json, regret_curve.csv (and actions.csv on request)."""
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    records = sorted(records, key=lambda r: r.run_index)
    paths = {name: out / name for name in ("runs.csv", "summary.json", "regret_curve.csv")}

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_COLUMNS)
    for r in records:
        for i in range(r.horizon):
            w.writerow([
                r.run_index, i + 1, r.x_hashes[i], _fmt(r.actions[i]), _fmt(r.losses[i]),
                _fmt(r.losses[i]) if r.observed[i] else "", _fmt(r.comparator[i]), _fmt(r.sigmas[i]),
                _fmt(r.investments[i]), _fmt(r.total_investment[i]), int(r.backlogs[i]), _fmt(bool(r.skipped[i])),
            ])
    _write(paths["runs.csv"], buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "mean_cum_regret", "stderr"])
    if stats is not None:
        for i, (m, s) in enumerate(zip(stats.mean_curve, stats.stderr_curve)):
            w.writerow([i + 1, _fmt(m), _fmt(s)])
    _write(paths["regret_curve.csv"], buf.getvalue())

    _write(paths["summary.json"], json.dumps(summary_dict(stats, records, cfg), indent=2, sort_keys=True) + "\n")

    if cfg.output.dump_actions:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "t", "x"])
        for r in records:
            for i, x in enumerate(r.points or []):
                w.writerow([r.run_index, i + 1, _fmt(np.asarray(x))])
        paths["actions.csv"] = out / "actions.csv"
        _write(paths["actions.csv"], buf.getvalue())
    return paths


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def load_runs_csv(path) -> dict[int, dict[str, np.ndarray]]:
    """Read runs.csv back into per-run column arrays (losses and comparator only)."""
    out: dict[int, dict[str, list]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            d = out.setdefault(int(row["run"]), {"loss": [], "comparator_loss": [], "investment": []})
            d["loss"].append(float(row["loss"]))
            d["comparator_loss"].append(float(row["comparator_loss"]))
            d["investment"].append(float(row["investment"]))
    return {k: {c: np.asarray(v) for c, v in d.items()} for k, d in out.items()}


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int | None = None):
    if cfg.algorithm.horizon == 0:
        records = [run_single(cfg, i) for i in range(cfg.runs)]
        stats = None
    else:
        stats, records = run_monte_carlo(cfg, threads)
    paths = emit_outputs(stats, records, cfg, out_dir)
    return stats, records, paths


def sweep(cfg: ExperimentConfig, param: str, values, out_dir=None, threads: int | None = None):
    """Run one experiment per value of ``param`` into ``<out>/<param>=<value>/``."""
    root = Path(out_dir if out_dir is not None else cfg.output.dir)
    rows = []
    for raw in values:
        sub = cfg.override(param, raw)
        stats, _, _ = run_experiment(sub, root / f"{param}={raw}", threads)
        rows.append((str(raw), stats.mean_final if stats else 0.0, stats.stderr_final if stats else 0.0))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["value", "mean_final_regret", "stderr"])
    for v, m, s in rows:
        w.writerow([v, _fmt(m), _fmt(s)])
    root.mkdir(parents=True, exist_ok=True)
    _write(root / "sweep.csv", buf.getvalue())
    return rows

