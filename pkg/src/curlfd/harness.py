"""Experiment runner: config, seeded training loops, metrics, convergence.

One config file describes a full experiment (task, method, seeds, budget,
hyperparameters).  Each seed produces a deterministic metrics CSV, a
structured JSONL event log, checkpoints, and a summary row.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .awac import AwacConfig, AwacLearner
from .baselines import DdpgfdBcConfig, DdpgfdBcLearner, TdErrorQueryRule
from .buffers import DemoBuffer, ReplayBuffer, sample_balanced
from .curriculum import CurriculumScheduler, ScheduleConfig
from .demonstrators import (
    OracleDemonstrator,
    PoolDemonstrator,
    generate_pool,
    load_pool,
    pool_closest_initial,
)
from .env import Env, episode_success, rollout_episode
from .tasks import TaskSpec, load_task, spec_from_dict

METHODS = ("curriculum", "awac_offline", "ddpgfd_bc", "early_like")
DEMONSTRATOR_MODES = ("oracle", "pool", "human")


@dataclass
class ExperimentConfig:
    task: str = "ReachV0"
    method: str = "curriculum"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    env_step_budget: int = 200_000
    eval_every: int = 2_000
    eval_episodes: int = 20
    final_eval_episodes: int = 50
    checkpoint_every: int = 0  # 0: final checkpoint only

    # curriculum schedule (paper values)
    n_eval: int = 10
    n_train: int = 20
    w: float = 0.7
    delta_g: int = 10
    demo_budget: int = 10
    query_interval: int | None = None
    curriculum_radius: float = 0.03

    # learner
    hidden: tuple[int, ...] = (256, 256)
    batch_size: int = 256
    gamma: float = 0.98
    lam: float = 1.0
    tau: float = 0.005
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    value_samples: int = 4
    weight_clip: float = 20.0
    reward_scale: float = 1e-3
    log_std_init: float = -1.0
    rollout_capacity: int = 1_000_000

    # demonstrations
    demonstrator: str = "oracle"
    pool_path: str | None = None
    pool_size: int = 60
    pool_mode: str = "suffix"
    oracle_noise: float = 0.05

    # baselines
    beta_bc: float = 1.0
    explore_sigma: float = 0.1
    early_kappa: float = 0.2

    # convergence criterion
    convergence_window: int = 10_000
    convergence_tol: float = 0.05

    # optional geometry override (defaults to the built-in registry)
    task_geometry: dict | None = None

    human_port: int | None = None

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.seeds = list(self.seeds)
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; pick from {METHODS}")
        if self.demonstrator not in DEMONSTRATOR_MODES:
            raise ValueError(f"unknown demonstrator {self.demonstrator!r}")

    def spec(self) -> TaskSpec:
        if self.task_geometry is not None:
            merged = dict(self.task_geometry)
            defaults = merged.pop("defaults", {})
            return spec_from_dict(self.task, merged, defaults)
        return load_task(self.task)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        return cls(**data)

    def to_file(self, path: str | Path) -> None:
        data = asdict(self)
        data["hidden"] = list(self.hidden)
        with open(path, "w") as f:
            yaml.safe_dump(data, f, sort_keys=True)


def evaluate_policy(learner, spec: TaskSpec, episodes: int, rng: np.random.Generator) -> float:
    """Fraction of deterministic-policy episodes from the task rho0 that
    reach the goal."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    env = Env(spec)
    policy = lambda obs, det, r: learner.act(obs, det, r)
    successes = 0
    for _ in range(episodes):
        episode = rollout_episode(env, policy, rng, start_state=None, deterministic=True)
        successes += episode_success(episode)
    return successes / episodes


def detect_convergence(
    history: list[tuple[int, float]],
    window_steps: int = 10_000,
    tol: float = 0.05,
) -> int | None:
    """Earliest evaluation step opening a full window of spread <= tol.

    `history` is a list of (env_steps, success_rate) sorted by env_steps.  A
    window starting at evaluation step t covers [t, t + window_steps]; it
    counts only when the history extends past its end.
    """
    steps = [s for s, _ in history]
    rates = [r for _, r in history]
    if any(b < a for a, b in zip(steps, steps[1:])):
        raise ValueError("history must be sorted by env_steps")
    for i, start in enumerate(steps):
        end = start + window_steps
        if steps[-1] < end:
            break
        in_window = [r for s, r in history if start <= s <= end]
        if max(in_window) - min(in_window) <= tol:
            return start
    return None


# --------------------------------------------------------------- runners
class BaselineRunner:
    """Shared episode-loop runner for the three non-curriculum methods.

    One `run_block` = one training episode from the task rho0 followed by
    one gradient update per environment step, matching the curriculum
    method's update accounting.
    """

    def __init__(self, config: ExperimentConfig, spec: TaskSpec, seed: int, pool):
        self.config = config
        self.spec = spec
        self.pool = pool
        streams = np.random.SeedSequence(seed).spawn(4)
        self.rng_init = np.random.default_rng(streams[0])
        self.rng_train = np.random.default_rng(streams[1])
        self.rng_eval = np.random.default_rng(streams[2])
        self.rng_query = np.random.default_rng(streams[3])
        self.env = Env(spec)
        self.demo_buffer = DemoBuffer(spec)
        self.rollout_buffer = ReplayBuffer(spec, config.rollout_capacity)
        self.env_steps = 0
        self.episodes = 0
        self.demos_requested = 0
        self.events: list[dict] = []
        self.learner = self._make_learner()
        self._preload_demos()

    # hooks ------------------------------------------------------------
    def _make_learner(self):
        raise NotImplementedError

    def _preload_demos(self) -> None:
        pass

    def _after_episode(self, episode) -> None:
        pass

    # loop -------------------------------------------------------------
    def run_block(self) -> dict:
        policy = lambda obs, det, r: self.learner.act(obs, det, r)
        episode = rollout_episode(self.env, policy, self.rng_train, None, deterministic=False)
        self.rollout_buffer.push_episode(episode)
        self.env_steps += len(episode)
        self.episodes += 1
        self._after_episode(episode)
        stats = {}
        for _ in range(len(episode)):
            batch = sample_balanced(
                self.demo_buffer, self.rollout_buffer, self.config.batch_size, self.rng_train
            )
            stats = self.learner.update(batch, self.rng_train)
        return stats

    def emit(self, kind: str, **fields) -> None:
        self.events.append({"event": kind, "env_steps": self.env_steps,
                            "episodes": self.episodes, **fields})


def _awac_config(config: ExperimentConfig, spec: TaskSpec) -> AwacConfig:
    return AwacConfig(
        obs_dim=spec.obs_dim,
        hidden=config.hidden,
        gamma=config.gamma,
        lam=config.lam,
        tau=config.tau,
        value_samples=config.value_samples,
        weight_clip=config.weight_clip,
        lr_actor=config.lr_actor,
        lr_critic=config.lr_critic,
        batch_size=config.batch_size,
        reward_scale=config.reward_scale,
        log_std_init=config.log_std_init,
    )


class AwacOfflineRunner(BaselineRunner):
    """Plain AWAC preloaded with random pool demonstrations."""

    def _make_learner(self):
        return AwacLearner(_awac_config(self.config, self.spec), self.rng_init)

    def _preload_demos(self) -> None:
        n = self.config.demo_budget
        idx = self.rng_init.choice(len(self.pool), size=n, replace=False)
        for i in idx:
            self.demo_buffer.push_episode(self.pool[int(i)])
        self.demos_requested = n
        self.emit("preload", count=n, indices=[int(i) for i in idx])


class DdpgfdBcRunner(AwacOfflineRunner):
    def _make_learner(self):
        cfg = DdpgfdBcConfig(
            obs_dim=self.spec.obs_dim,
            hidden=self.config.hidden,
            gamma=self.config.gamma,
            tau=self.config.tau,
            lr_actor=self.config.lr_actor,
            lr_critic=self.config.lr_critic,
            batch_size=self.config.batch_size,
            reward_scale=self.config.reward_scale,
            beta_bc=self.config.beta_bc,
            explore_sigma=self.config.explore_sigma,
        )
        return DdpgfdBcLearner(cfg, self.rng_init)


class EarlyLikeRunner(BaselineRunner):
    """AWAC plus TD-error-triggered episodic queries at episode starts."""

    def _make_learner(self):
        self.rule = TdErrorQueryRule(self.config.early_kappa)
        return AwacLearner(_awac_config(self.config, self.spec), self.rng_init)

    def _after_episode(self, episode) -> None:
        from .env import observe

        obs = np.stack([observe(self.spec, t.s) for t in episode])
        act = np.stack([t.a for t in episode])
        rew = np.array([t.r for t in episode])
        nxt = np.stack([observe(self.spec, t.s_next) for t in episode])
        done = np.array([float(t.terminal) for t in episode])
        td = self.rule.episode_td_error(self.learner, (obs, act, rew, nxt, done), self.rng_query)
        if self.rule.should_query(td) and self.demos_requested < self.config.demo_budget:
            t0 = time.monotonic()
            demo = pool_closest_initial(self.pool, episode[0].s, self.spec)
            self.demo_buffer.push_episode(demo)
            self.demos_requested += 1
            self.emit(
                "query",
                start=episode[0].s.to_dict(),
                td_error=td,
                attempts=1,
                duration_ms=(time.monotonic() - t0) * 1e3,
                n_d=self.demos_requested,
                demo_len=len(demo),
            )


class CurriculumRunner:
    """Adapter giving the scheduler the same runner surface as baselines."""

    def __init__(self, config: ExperimentConfig, spec: TaskSpec, seed: int, pool):
        self.config = config
        self.spec = spec
        streams = np.random.SeedSequence(seed).spawn(2)
        rng_init = np.random.default_rng(streams[0])
        learner = AwacLearner(_awac_config(config, spec), rng_init)
        demonstrator = make_demonstrator(config, spec, pool)
        schedule = ScheduleConfig(
            n_eval=config.n_eval,
            n_train=config.n_train,
            w=config.w,
            delta_g=config.delta_g,
            demo_budget=config.demo_budget,
            query_interval=config.query_interval,
            curriculum_radius=config.curriculum_radius,
            batch_size=config.batch_size,
        )
        self.scheduler = CurriculumScheduler(
            spec, learner, demonstrator, schedule, seed=seed,
            rollout_buffer=ReplayBuffer(spec, config.rollout_capacity),
        )
        self.scheduler.bootstrap()

    @property
    def learner(self):
        return self.scheduler.learner

    @property
    def env_steps(self):
        return self.scheduler.env_steps

    @property
    def episodes(self):
        return self.scheduler.schedule.episodes

    @property
    def demos_requested(self):
        return self.scheduler.demos_requested

    @property
    def events(self):
        return self.scheduler.events

    @property
    def demo_buffer(self):
        return self.scheduler.demo_buffer

    @property
    def rollout_buffer(self):
        return self.scheduler.rollout_buffer

    def run_block(self) -> dict:
        return self.scheduler.train_iteration()


def make_demonstrator(config: ExperimentConfig, spec: TaskSpec, pool):
    if config.demonstrator == "oracle":
        return OracleDemonstrator(spec, noise_sigma=config.oracle_noise)
    if config.demonstrator == "pool":
        return PoolDemonstrator(spec, pool, mode=config.pool_mode)
    if config.demonstrator == "human":
        from .bridge import RemoteDemonstrator

        if config.human_port is None:
            raise ValueError("human demonstrator needs human_port")
        return RemoteDemonstrator(spec, port=config.human_port)
    raise ValueError(config.demonstrator)


def resolve_pool(config: ExperimentConfig, spec: TaskSpec):
    """Load or generate the demonstration pool when the method needs one."""
    needs_pool = config.method in ("awac_offline", "ddpgfd_bc", "early_like") or (
        config.demonstrator == "pool"
    )
    if not needs_pool:
        return None
    if config.pool_path is not None:
        return load_pool(config.pool_path)
    return generate_pool(
        spec,
        count=config.pool_size,
        rng=np.random.default_rng(123456789),
        noise_sigma=config.oracle_noise,
    )


def make_runner(config: ExperimentConfig, spec: TaskSpec, seed: int, pool):
    if config.method == "curriculum":
        return CurriculumRunner(config, spec, seed, pool)
    cls = {
        "awac_offline": AwacOfflineRunner,
        "ddpgfd_bc": DdpgfdBcRunner,
        "early_like": EarlyLikeRunner,
    }[config.method]
    return cls(config, spec, seed, pool)


# --------------------------------------------------------------- experiment
METRIC_FIELDS = (
    "env_steps",
    "episodes",
    "eval_success",
    "critic_loss",
    "actor_loss",
    "demos_requested",
)


def run_seed(config: ExperimentConfig, seed: int, outdir: str | Path, pool=None) -> dict:
    """Full training run for one seed; returns the summary row."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    spec = config.spec()
    if pool is None:
        pool = resolve_pool(config, spec)
    t_start = time.monotonic()
    runner = make_runner(config, spec, seed, pool)
    eval_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))

    metrics_path = outdir / f"metrics_seed{seed}.csv"
    events_path = outdir / f"events_seed{seed}.jsonl"
    history: list[tuple[int, float]] = []
    next_eval = 0
    next_ckpt = config.checkpoint_every or None
    last_stats: dict = {}
    with open(metrics_path, "w", newline="") as mf:
        writer = csv.DictWriter(mf, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        while runner.env_steps < config.env_step_budget:
            stats = runner.run_block()
            last_stats = stats or last_stats
            while runner.env_steps >= next_eval:
                rate = evaluate_policy(runner.learner, spec, config.eval_episodes, eval_rng)
                history.append((runner.env_steps, rate))
                writer.writerow(
                    {
                        "env_steps": runner.env_steps,
                        "episodes": runner.episodes,
                        "eval_success": repr(rate),
                        "critic_loss": repr(float(last_stats.get("critic_loss", float("nan")))),
                        "actor_loss": repr(float(last_stats.get("actor_loss", float("nan")))),
                        "demos_requested": runner.demos_requested,
                    }
                )
                next_eval += config.eval_every
            if next_ckpt is not None and runner.env_steps >= next_ckpt:
                runner.learner.save(outdir / f"checkpoint_seed{seed}_{runner.env_steps}.npz")
                next_ckpt += config.checkpoint_every

    with open(events_path, "w") as ef:
        for ev in runner.events:
            ef.write(json.dumps(ev) + "\n")
    runner.learner.save(outdir / f"checkpoint_seed{seed}_final.npz")

    final_rate = evaluate_policy(runner.learner, spec, config.final_eval_episodes, eval_rng)
    convergence = detect_convergence(
        history, config.convergence_window, config.convergence_tol
    )
    summary = {
        "seed": seed,
        "method": config.method,
        "task": config.task,
        "env_steps": runner.env_steps,
        "episodes": runner.episodes,
        "final_success": final_rate,
        "convergence_step": convergence,
        "demos_requested": runner.demos_requested,
        "wall_seconds": time.monotonic() - t_start,
    }
    with open(outdir / f"summary_seed{seed}.json", "w") as sf:
        json.dump(summary, sf, indent=2)
    return summary


def run_experiment(config: ExperimentConfig, outdir: str | Path) -> list[dict]:
    """All seeds sequentially; failures are recorded, other seeds continue."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    config.to_file(outdir / "config.yaml")
    spec = config.spec()
    pool = resolve_pool(config, spec)
    summaries = []
    for seed in config.seeds:
        try:
            summaries.append(run_seed(config, seed, outdir, pool=pool))
        except Exception as exc:  # noqa: BLE001 - seed isolation is the contract
            summaries.append(
                {"seed": seed, "method": config.method, "task": config.task,
                 "failed": True, "error": f"{type(exc).__name__}: {exc}"}
            )
    with open(outdir / "summary.json", "w") as f:
        json.dump(summaries, f, indent=2)
    return summaries


# --------------------------------------------------------------- exports
def read_metrics(path: str | Path) -> list[dict]:
    with open(path) as f:
        return [
            {
                "env_steps": int(r["env_steps"]),
                "episodes": int(r["episodes"]),
                "eval_success": float(r["eval_success"]),
                "critic_loss": float(r["critic_loss"]),
                "actor_loss": float(r["actor_loss"]),
                "demos_requested": int(r["demos_requested"]),
            }
            for r in csv.DictReader(f)
        ]


def export_success_curves(metric_paths: list[str | Path], out_path: str | Path) -> None:
    """Tidy CSV (run, env_steps, eval_success) ready for plotting."""
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "env_steps", "eval_success"])
        for path in metric_paths:
            name = Path(path).stem
            for row in read_metrics(path):
                writer.writerow([name, row["env_steps"], repr(row["eval_success"])])


def export_query_trace(event_paths: list[str | Path], out_path: str | Path) -> None:
    """Queried start positions in order, for Fig-style query-trace plots."""
    records = []
    for path in event_paths:
        with open(path) as f:
            for line in f:
                ev = json.loads(line)
                if ev.get("event") == "query":
                    records.append(
                        {
                            "run": Path(path).stem,
                            "query_index": len(records),
                            "env_steps": ev.get("env_steps"),
                            "start": ev["start"],
                            "attempts": ev.get("attempts"),
                            "duration_ms": ev.get("duration_ms"),
                        }
                    )
    with open(out_path, "w") as f:
        json.dump(records, f, indent=2)
