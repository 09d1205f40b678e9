"""Training loop, evaluation, seed aggregation and the expert-capacity ablation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from silcr.agents import (
    AgentKind,
    SacCore,
    act,
    load_checkpoint,
    make_sac_core,
    sac_update_step,
    save_checkpoint,
    silcr_update_step,
    sqil_update_step,
)
from silcr.envs import Env, make_env
from silcr.nn import ConfigurationError
from silcr.replay import ExpertBuffer, OnlineBuffer, Trajectory, Transition, read_demos, write_demos

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
TIMING_FILE = "wall_time.jsonl"
CHECKPOINT_FILE = "checkpoint.npz"


class AggregationError(ValueError):
    """Metric files that cannot be combined."""


@dataclass
class RunConfig:
    agent: str = "silcr"
    env: str = "pointgoal"
    episodic: bool = False
    total_steps: int = 150_000
    seed: int = 0
    batch_size: int = 128
    gamma: float = 0.99
    tau: float = 0.05
    alpha: float = 0.2
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    online_capacity: int = 1_000_000
    expert_capacity: int = 50_000
    hidden: tuple[int, ...] = (800, 400)
    warmup_steps: int = 1000
    eval_interval: int = 1000
    eval_episodes: int = 10
    demos: str | None = None
    q_count: int = 2
    out_dir: str | None = None

    def validate(self) -> None:
        AgentKind.parse(self.agent)
        make_env(self.env)
        if self.batch_size <= 0 or self.batch_size % 2 != 0:
            raise ConfigurationError("batch size must be even")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ConfigurationError("total_steps and warmup_steps must be non-negative")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigurationError("eval_interval and eval_episodes must be positive")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ConfigurationError(f"hidden sizes must be positive, got {self.hidden}")
        if AgentKind.parse(self.agent) is AgentKind.SQIL and not self.demos:
            raise ConfigurationError("agent sqil requires a demo file: --demos is missing")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def digest(self) -> str:
        """Hash of every field that can influence the run (``out_dir`` excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class MetricsRecord:
    env_step: int
    episodic_return_train: float
    episodic_return_eval: float
    q_loss: float
    policy_loss: float
    expert_buffer_min_return: float
    expert_buffer_max_return: float
    wall_time: float

    # wall_time goes to a side file so that metrics files are reproducible
    DETERMINISTIC_FIELDS = (
        "env_step", "episodic_return_train", "episodic_return_eval", "q_loss",
        "policy_loss", "expert_buffer_min_return", "expert_buffer_max_return",
    )

    def to_json(self) -> str:
        return json.dumps({k: _json_float(getattr(self, k)) for k in self.DETERMINISTIC_FIELDS})


def _json_float(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


@dataclass
class TrainResult:
    config: RunConfig
    records: list[MetricsRecord]
    core: SacCore
    online: OnlineBuffer
    expert: ExpertBuffer | None
    env_steps: int
    episodes: int
    out_dir: Path | None = None

    @property
    def final_eval(self) -> float:
        return self.records[-1].episodic_return_eval if self.records else float("nan")


def scale_action(action: np.ndarray, env: Env) -> np.ndarray:
    """Map ``(-1, 1)^d`` onto the environment's action box."""
    low, high = env.spec.action_low, env.spec.action_high
    return low + (np.asarray(action) + 1.0) * 0.5 * (high - low)


def greedy_policy(core: SacCore) -> Callable[[np.ndarray], np.ndarray]:
    return lambda s: act(core, s, deterministic=True)


def random_policy(action_dim: int, rng: np.random.Generator) -> Callable[[np.ndarray], np.ndarray]:
    return lambda s: rng.uniform(-1.0, 1.0, size=action_dim)


def run_episode(policy: Callable[[np.ndarray], np.ndarray], env: Env, seed: int) -> Trajectory:
    state = env.reset(seed)
    transitions = []
    while True:
        action = np.asarray(policy(state), dtype=np.float64)
        res = env.step(scale_action(action, env))
        transitions.append(Transition(state, action, res.reward, res.next_state,
                                      res.terminated, res.truncated))
        state = res.next_state
        if res.terminated or res.truncated:
            return Trajectory(transitions)


def episode_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence([int(seed), 0xE7A1])
    return [int(s) for s in ss.generate_state(n)]


def evaluate(policy: Callable[[np.ndarray], np.ndarray], env: Env | str, n_episodes: int,
             seed: int) -> tuple[float, float, list[float]]:
    """Mean and (population) std of dense returns over ``n_episodes`` seeded episodes.

    A string ``env`` is built in dense mode; a wrapped env reports the same
    totals anyway.
    """
    if n_episodes < 1:
        raise ConfigurationError("n_episodes must be >= 1")
    if isinstance(env, str):
        env = make_env(env, episodic=False)
    returns = [run_episode(policy, env, s).episodic_return for s in episode_seeds(seed, n_episodes)]
    arr = np.asarray(returns)
    return float(arr.mean()), float(arr.std()), returns


class _Streams:
    """Independent generators for init, env resets, acting, updates and evaluation."""

    def __init__(self, seed: int):
        init, env, policy, update, evaluation = np.random.SeedSequence(seed).spawn(5)
        self.init_seed = int(init.generate_state(1)[0])
        self.env = np.random.default_rng(env)
        self.policy = np.random.default_rng(policy)
        self.update = np.random.default_rng(update)
        self.eval_seed = int(evaluation.generate_state(1)[0])

    def states(self) -> dict:
        return {name: getattr(self, name).bit_generator.state for name in ("env", "policy", "update")}


def _new_reset_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**32))


def train(config: RunConfig, out_dir: str | Path | None = None,
          progress: Callable[[MetricsRecord], None] | None = None) -> TrainResult:
    """Run one seeded training job.

    Writes ``metrics.jsonl``, ``wall_time.jsonl`` and ``checkpoint.npz`` when an
    output directory is given (argument or ``config.out_dir``).
    """
    config.validate()
    kind = AgentKind.parse(config.agent)
    out = Path(out_dir or config.out_dir) if (out_dir or config.out_dir) else None

    env = make_env(config.env, config.episodic)
    streams = _Streams(config.seed)
    core = make_sac_core(
        env.spec.state_dim, env.spec.action_dim, config.hidden, streams.init_seed,
        q_count=config.q_count, alpha=config.alpha, gamma=config.gamma, tau=config.tau,
        lr_actor=config.lr_actor, lr_critic=config.lr_critic,
    )
    online = OnlineBuffer(config.online_capacity)
    expert: ExpertBuffer | None = None
    if kind is AgentKind.SILCR:
        expert = ExpertBuffer(config.expert_capacity)
    elif kind is AgentKind.SQIL:
        expert = ExpertBuffer.from_trajectories(read_demos(config.demos), frozen=True)

    metrics_fh = timing_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / METRICS_FILE, "w")
        timing_fh = open(out / TIMING_FILE, "w")
        metrics_fh.write(json.dumps({"config_digest": config.digest(), "seed": config.seed,
                                     "config": {k: v for k, v in config.to_dict().items()
                                                if k != "out_dir"}}) + "\n")

    records: list[MetricsRecord] = []
    start = time.perf_counter()
    last_train_return = float("nan")
    q_losses: list[float] = []
    pi_losses: list[float] = []
    episodes = 0
    state = env.reset(_new_reset_seed(streams.env))
    current: list[Transition] = []
    try:
        for step in range(1, config.total_steps + 1):
            if step <= config.warmup_steps:
                action = streams.policy.uniform(-1.0, 1.0, size=env.spec.action_dim)
            else:
                action = act(core, state, streams.policy)
            res = env.step(scale_action(action, env))
            current.append(Transition(state, action, res.reward, res.next_state,
                                      res.terminated, res.truncated))
            state = res.next_state
            if res.terminated or res.truncated:
                traj = Trajectory(current)
                online.store(traj)
                if kind is AgentKind.SILCR:
                    expert.offer(traj)
                last_train_return = traj.episodic_return
                episodes += 1
                current = []
                state = env.reset(_new_reset_seed(streams.env))

            if step > config.warmup_steps and len(online) > 0:
                if kind is AgentKind.SAC:
                    losses = sac_update_step(core, online, config.batch_size, streams.update)
                elif len(expert) > 0:
                    step_fn = silcr_update_step if kind is AgentKind.SILCR else sqil_update_step
                    losses = step_fn(core, online, expert, config.batch_size, streams.update)
                else:
                    losses = None
                if losses is not None:
                    q_losses.append(losses["q_loss"])
                    pi_losses.append(losses["policy_loss"])

            if step % config.eval_interval == 0:
                eval_mean, _, _ = evaluate(greedy_policy(core), config.env, config.eval_episodes,
                                           streams.eval_seed)
                rec = MetricsRecord(
                    env_step=step,
                    episodic_return_train=float(last_train_return),
                    episodic_return_eval=eval_mean,
                    q_loss=float(np.mean(q_losses)) if q_losses else float("nan"),
                    policy_loss=float(np.mean(pi_losses)) if pi_losses else float("nan"),
                    expert_buffer_min_return=float(expert.min_return) if expert else float("nan"),
                    expert_buffer_max_return=float(expert.max_return) if expert else float("nan"),
                    wall_time=time.perf_counter() - start,
                )
                q_losses, pi_losses = [], []
                records.append(rec)
                if metrics_fh is not None:
                    metrics_fh.write(rec.to_json() + "\n")
                    metrics_fh.flush()
                    timing_fh.write(json.dumps({"env_step": step, "wall_time": rec.wall_time}) + "\n")
                if progress is not None:
                    progress(rec)
        if current:
            # unfinished episode: keep the experience, but it has no final reward to rank by
            online.store(Trajectory(current))
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
            timing_fh.close()

    if out is not None:
        save_checkpoint(core, out / CHECKPOINT_FILE, rng_states=streams.states(),
                        meta={"config": config.to_dict(), "env_steps": config.total_steps})
    return TrainResult(config, records, core, online, expert, config.total_steps, episodes, out)


def read_metrics(path: str | Path) -> tuple[dict, list[dict]]:
    """Return ``(header, records)`` from a metrics file; nulls become NaN."""
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    records = [
        {k: (float("nan") if v is None else v) for k, v in json.loads(line).items()}
        for line in lines[1:] if line.strip()
    ]
    return header, records


def aggregate_seeds(paths: Sequence[str | Path]) -> dict[str, dict[str, np.ndarray]]:
    """Pointwise mean and population std of every metric across runs.

    Returns ``{metric: {"env_step": ..., "mean": ..., "std": ...}}``.
    """
    if len(paths) < 2:
        raise AggregationError("need at least two metric files")
    runs = [read_metrics(p)[1] for p in paths]
    steps = [tuple(r["env_step"] for r in run) for run in runs]
    if any(s != steps[0] for s in steps[1:]):
        raise AggregationError("metric files have different env_step grids")
    grid = np.asarray(steps[0], dtype=np.int64)
    out = {}
    for name in MetricsRecord.DETERMINISTIC_FIELDS:
        if name == "env_step":
            continue
        values = np.array([[r[name] for r in run] for run in runs], dtype=np.float64)
        out[name] = {"env_step": grid, "mean": values.mean(axis=0), "std": values.std(axis=0)}
    return out


def write_aggregate(agg: dict[str, dict[str, np.ndarray]], path: str | Path) -> None:
    lines = []
    names = list(agg)
    grid = agg[names[0]]["env_step"]
    for i, step in enumerate(grid):
        rec = {"env_step": int(step)}
        for name in names:
            rec[f"{name}_mean"] = _json_float(float(agg[name]["mean"][i]))
            rec[f"{name}_std"] = _json_float(float(agg[name]["std"][i]))
        lines.append(json.dumps(rec))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


DEFAULT_SEED_COUNT = 5


def run_ablation(base: RunConfig, expert_capacities: Iterable[int], out_root: str | Path | None = None,
                 workers: int = 1, n_seeds: int = 1) -> list[dict]:
    """SILCR training runs over expert capacities, everything else shared.

    Each capacity is trained with seeds ``base.seed .. base.seed + n_seeds - 1``
    into ``out_root/expert_capacity_<cap>/seed<seed>``. Returns one row
    ``{"expert_capacity", "seed", "final_eval", "metrics_path"}`` per run.
    """
    capacities = list(expert_capacities)
    if not capacities:
        raise ConfigurationError("expert_capacities must not be empty")
    if n_seeds < 1:
        raise ConfigurationError("n_seeds must be >= 1")
    configs = []
    for cap in capacities:
        for seed in range(base.seed, base.seed + n_seeds):
            run_dir = (str(Path(out_root) / f"expert_capacity_{cap}" / f"seed{seed}")
                       if out_root is not None else None)
            configs.append(base.replace(expert_capacity=int(cap), seed=seed, out_dir=run_dir))
    results = run_many(configs, workers)
    return [
        {"expert_capacity": cfg.expert_capacity, "seed": cfg.seed, "final_eval": res.final_eval,
         "metrics_path": str(Path(cfg.out_dir) / METRICS_FILE) if cfg.out_dir else None}
        for cfg, res in zip(configs, results)
    ]


def _train_quiet(config: RunConfig) -> TrainResult:
    return train(config)


def run_many(configs: Sequence[RunConfig], workers: int = 1) -> list[TrainResult]:
    """Train independent configs, optionally in a process pool."""
    if workers <= 1 or len(configs) <= 1:
        return [train(c) for c in configs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_quiet, configs))


def record_demos(checkpoint: str | Path, env_name: str, n_episodes: int, out_path: str | Path,
                 seed: int = 0) -> tuple[float, list[Trajectory]]:
    """Roll out the checkpoint's deterministic policy on the dense env and save the episodes.

    Returns the mean demo return and the trajectories.
    """
    core, _, _ = load_checkpoint(checkpoint)
    env = make_env(env_name, episodic=False)
    if core.state_dim != env.spec.state_dim or core.action_dim != env.spec.action_dim:
        raise ConfigurationError(f"checkpoint does not fit environment {env_name!r}")
    policy = greedy_policy(core)
    trajectories = [run_episode(policy, env, s) for s in episode_seeds(seed + 1, n_episodes)]
    write_demos(out_path, trajectories)
    mean = float(np.mean([t.episodic_return for t in trajectories]))
    return mean, trajectories
