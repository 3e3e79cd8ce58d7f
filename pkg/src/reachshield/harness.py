"""Experiment configuration and orchestration shared by the CLI and the acceptance suite."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .dynamics import ModelError
from .learner import METRIC_FIELDS, MlpPolicy, TrainConfig, run_episode, run_training
from .recovery import synthesize, standing_setpoint, verify_viability
from .shield import ShieldConfig, ShieldMode, get_trigger_set
from .tasks import CdmParams, TaskEnv, TaskSpec, make_env, nominal_height
from .theory import RandomSystemSpec, regret_batch, write_regret_csv

log = logging.getLogger(__name__)

MAX_HORIZON = 200


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    trigger_set: str = "ctri1"
    w: int = 10
    shield_mode: ShieldMode = ShieldMode.REACH
    model_error: ModelError = ModelError(0.02, 0.02)
    model_seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    train: TrainConfig = field(default_factory=TrainConfig)
    cdm: CdmParams = field(default_factory=CdmParams)
    output_dir: str = "runs"
    ablate_w_values: tuple[int, ...] = (0, 5, 10, 15, 20)
    ablate_trigger_sets: tuple[str, ...] = ("ctri1", "ctri2", "ctri3")
    bound_systems: int = 200
    bound_seed: int = 0
    viability_samples: int = 200
    viability_horizon_s: float = 2.0
    viability_threshold: float = 0.99
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "shield_mode", ShieldMode(self.shield_mode))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "ablate_w_values", tuple(int(w) for w in self.ablate_w_values))
        object.__setattr__(self, "ablate_trigger_sets", tuple(self.ablate_trigger_sets))
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        for w in (self.w,) + self.ablate_w_values:
            if not 0 <= w <= MAX_HORIZON:
                raise ConfigError(f"planning horizon {w} outside 0..{MAX_HORIZON}")
        for name in (self.trigger_set, self.task.trigger_set) + self.ablate_trigger_sets:
            try:
                get_trigger_set(name)
            except KeyError as exc:
                raise ConfigError(str(exc.args[0])) from None
        if self.task.trigger_set != self.trigger_set:
            object.__setattr__(self, "task", replace(self.task, trigger_set=self.trigger_set))
        if self.task.episode_length != self.train.episode_length:
            object.__setattr__(self, "task", replace(self.task, episode_length=self.train.episode_length))
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["task"] = self.task.to_dict()
        d["shield_mode"] = self.shield_mode.value
        d["model_error"] = {"delta_A_scale": self.model_error.delta_A_scale,
                            "delta_B_scale": self.model_error.delta_B_scale}
        d["train"] = asdict(self.train)
        d["train"]["penalty_mode"] = self.train.penalty_mode.value
        d["cdm"] = asdict(self.cdm)
        for k in ("seeds", "ablate_w_values", "ablate_trigger_sets"):
            d[k] = list(d[k])
        d["cdm"]["inertia_diag"] = list(self.cdm.inertia_diag)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            if "task" in kw:
                kw["task"] = TaskSpec.from_dict(kw["task"])
            if "train" in kw:
                kw["train"] = TrainConfig(**kw["train"])
            if "cdm" in kw:
                c = dict(kw["cdm"])
                if "inertia_diag" in c:
                    c["inertia_diag"] = tuple(c["inertia_diag"])
                kw["cdm"] = CdmParams(**c)
            if "model_error" in kw:
                me = kw["model_error"]
                kw["model_error"] = ModelError(float(me.get("delta_A_scale", 0.0)),
                                               float(me.get("delta_B_scale", 0.0)))
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc.msg} at line {exc.lineno}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)


@dataclass
class RunSetup:
    env: TaskEnv
    recovery: object
    policy: MlpPolicy
    shield: ShieldConfig


def setup_run(cfg: ExperimentConfig, seed: int, w: int | None = None, trigger_set: str | None = None,
              mode: ShieldMode | None = None, init_out_scale: float | None = None) -> RunSetup:
    task = cfg.task if trigger_set is None else replace(cfg.task, trigger_set=trigger_set)
    env = make_env(task, cfg.cdm, cfg.model_error, cfg.model_seed)
    ts = env.trigger_set
    rec = synthesize(env.model, setpoint=standing_setpoint(nominal_height(ts)),
                     action_bound=task.action_bound)
    scale = cfg.train.init_out_scale if init_out_scale is None else init_out_scale
    pol = MlpPolicy.init(task.action_dim, np.random.default_rng([seed, 1]), cfg.train.hidden,
                         task.action_bound, env.start, cfg.train.init_log_std, scale)
    shield = ShieldConfig(cfg.shield_mode if mode is None else mode,
                          cfg.w if w is None else w, ts)
    return RunSetup(env, rec, pol, shield)


def train_seed(cfg: ExperimentConfig, seed: int, **kw) -> list[dict]:
    run = setup_run(cfg, seed, **kw)
    tc = replace(cfg.train, seed=seed)
    _, metrics = run_training(run.env, run.shield, run.recovery, run.policy, tc)
    return metrics


def _map(cfg: ExperimentConfig, fn, items):
    if cfg.workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(cfg.workers) as ex:
        return list(ex.map(fn, items))


def rank_correlation(x, y) -> float:
    """Spearman's rho; 0.0 when either sequence is constant (no monotone association)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(spearmanr(x, y).statistic)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _prepare(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.echo.json", cfg.to_dict())


def _mean_std(vals) -> dict:
    vals = np.asarray(vals, dtype=float)
    return {"mean": float(vals.mean()), "std": float(vals.std())}


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    _prepare(cfg, out)
    per_seed = _map(cfg, lambda s: train_seed(cfg, s), cfg.seeds)
    rows = [[seed] + [m[k] for k in METRIC_FIELDS] for seed, ms in zip(cfg.seeds, per_seed) for m in ms]
    _write_csv(out / "metrics.csv", ["seed"] + list(METRIC_FIELDS), rows)
    finals = [ms[-1]["reward"] for ms in per_seed if ms]
    summary = {
        "total_falls": int(sum(m["falls"] for ms in per_seed for m in ms)),
        "total_recovery_uses": int(sum(m["recovery_steps"] for ms in per_seed for m in ms)),
        "final_reward": _mean_std(finals),
        "seeds": list(cfg.seeds),
    }
    _write_json(out / "summary.json", summary)
    return summary


def _ablation_row(metrics: list[dict]) -> tuple[int, int, float]:
    falls = sum(m["falls"] for m in metrics)
    uses = sum(m["recovery_steps"] for m in metrics)
    return falls, uses, metrics[-1]["reward"]


def cmd_ablate_w(cfg: ExperimentConfig, out: Path) -> dict:
    _prepare(cfg, out)
    jobs = [(w, s) for w in cfg.ablate_w_values for s in cfg.seeds]
    results = _map(cfg, lambda job: _ablation_row(train_seed(cfg, job[1], w=job[0])), jobs)
    rows = [[w, s, f, u, r] for (w, s), (f, u, r) in zip(jobs, results)]
    _write_csv(out / "metrics.csv", ["w", "seed", "falls", "recovery_uses", "reward"], rows)
    ws = [r[0] for r in rows]
    summary = {
        "per_w": {str(w): {"falls": _mean_std([r[2] for r in rows if r[0] == w]),
                           "recovery_uses": _mean_std([r[3] for r in rows if r[0] == w]),
                           "reward": _mean_std([r[4] for r in rows if r[0] == w])}
                  for w in cfg.ablate_w_values},
        "spearman_w_falls": rank_correlation(ws, [r[2] for r in rows]),
        "spearman_w_recovery_uses": rank_correlation(ws, [r[3] for r in rows]),
    }
    _write_json(out / "summary.json", summary)
    return summary


def cmd_ablate_trigger(cfg: ExperimentConfig, out: Path) -> dict:
    _prepare(cfg, out)
    jobs = [(name, s) for name in cfg.ablate_trigger_sets for s in cfg.seeds]
    results = _map(cfg, lambda job: _ablation_row(train_seed(cfg, job[1], trigger_set=job[0])), jobs)
    rows = [[name, s, f, u, r] for (name, s), (f, u, r) in zip(jobs, results)]
    _write_csv(out / "metrics.csv", ["trigger_set", "seed", "falls", "recovery_uses", "reward"], rows)
    summary = {"per_set": {name: {"falls": _mean_std([r[2] for r in rows if r[0] == name]),
                                  "recovery_uses": _mean_std([r[3] for r in rows if r[0] == name]),
                                  "reward": _mean_std([r[4] for r in rows if r[0] == name])}
                           for name in cfg.ablate_trigger_sets}}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_verify_bound(cfg: ExperimentConfig, out: Path) -> dict:
    _prepare(cfg, out)
    rows = regret_batch(cfg.bound_systems, cfg.bound_seed, RandomSystemSpec())
    write_regret_csv(out / "metrics.csv", rows, cfg.bound_seed)
    violations = sum(rep.violated for _, rep in rows)
    summary = {"systems": len(rows), "violations": int(violations), "passed": violations == 0}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_verify_recovery(cfg: ExperimentConfig, out: Path) -> dict:
    _prepare(cfg, out)
    rows = []
    for seed in cfg.seeds:
        run = setup_run(cfg, seed)
        frac = verify_viability(run.recovery, run.env.true_dyn, run.env.trigger_set,
                                cfg.viability_samples, cfg.viability_horizon_s,
                                np.random.default_rng(seed))
        rows.append([seed, frac])
    _write_csv(out / "metrics.csv", ["seed", "fraction_recovered"], rows)
    worst = min(r[1] for r in rows)
    summary = {"min_fraction": worst, "threshold": cfg.viability_threshold,
               "passed": worst >= cfg.viability_threshold}
    _write_json(out / "summary.json", summary)
    return summary


def count_falls(run: RunSetup, episodes: int, steps: int, rng: np.random.Generator,
                stochastic: bool = True) -> tuple[int, int]:
    """(falls, recovery steps) over ``episodes`` evaluation episodes without learning."""
    falls = uses = 0
    for _ in range(episodes):
        st = run_episode(run.env, run.policy, run.recovery, run.shield, steps, rng,
                         stochastic=stochastic)
        falls += st.falls
        uses += st.recovery_steps
    return falls, uses
