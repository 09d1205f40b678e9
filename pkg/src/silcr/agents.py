"""Soft actor-critic core and the SILCR / SAC / SQIL update steps.

All three agents share :func:`update`; they differ only in how the training
batch is assembled:

* SILCR: half from the online buffer (reward 0), half from the self-collected
  expert buffer (reward 1).
* SQIL: same composition, but the expert half comes from fixed demonstrations.
* SAC: the whole batch from the online buffer with environment rewards.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from silcr.nn import (
    AdamState,
    ConfigurationError,
    MlpParameters,
    UsageError,
    adam_init,
    adam_step,
    mlp_apply,
    mlp_backward,
    mlp_forward,
    mlp_init,
    params_from_dict,
    params_to_dict,
    polyak_update,
)
from silcr.policy import SquashedGaussian, deterministic_action, sample_squashed, sample_squashed_backward
from silcr.replay import Batch, ExpertBuffer, OnlineBuffer, make_training_batch

CHECKPOINT_VERSION = 1


class AgentKind(str, enum.Enum):
    SILCR = "silcr"
    SAC = "sac"
    SQIL = "sqil"

    @classmethod
    def parse(cls, name: str) -> "AgentKind":
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown agent {name!r}; choose from {[k.value for k in cls]}"
            ) from None


@dataclass
class SacCore:
    policy: MlpParameters
    q_nets: list[MlpParameters]
    q_targets: list[MlpParameters]
    policy_opt: AdamState
    q_opts: list[AdamState]
    alpha: float = 0.2
    gamma: float = 0.99
    tau: float = 0.05
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1], got {self.gamma}")
        if len(self.q_nets) != len(self.q_targets) or not self.q_nets:
            raise ConfigurationError("need one target per Q network")
        for q, t in zip(self.q_nets, self.q_targets):
            if not q.same_shape(t):
                raise ConfigurationError("target Q shape differs from online Q shape")

    @property
    def action_dim(self) -> int:
        return self.policy.layer_dims[-1] // 2

    @property
    def state_dim(self) -> int:
        return self.policy.layer_dims[0]

    def copy(self) -> "SacCore":
        return SacCore(
            self.policy.copy(),
            [q.copy() for q in self.q_nets],
            [q.copy() for q in self.q_targets],
            _copy_adam(self.policy_opt),
            [_copy_adam(s) for s in self.q_opts],
            self.alpha, self.gamma, self.tau, self.lr_actor, self.lr_critic,
        )

    def equals(self, other: "SacCore") -> bool:
        nets = lambda c: [c.policy, *c.q_nets, *c.q_targets]
        return all(a.equals(b) for a, b in zip(nets(self), nets(other)))


def _copy_adam(s: AdamState) -> AdamState:
    return AdamState(s.first_moment.copy(), s.second_moment.copy(), s.step_count)


def make_sac_core(
    state_dim: int,
    action_dim: int,
    hidden: Sequence[int] = (800, 400),
    seed: int = 0,
    q_count: int = 2,
    alpha: float = 0.2,
    gamma: float = 0.99,
    tau: float = 0.05,
    lr_actor: float = 3e-4,
    lr_critic: float = 3e-4,
) -> SacCore:
    if q_count not in (1, 2):
        raise ConfigurationError(f"q_count must be 1 or 2, got {q_count}")
    rng = np.random.default_rng(seed)
    hidden = list(hidden)
    policy = mlp_init([state_dim, *hidden, 2 * action_dim], rng)
    q_nets = [mlp_init([state_dim + action_dim, *hidden, 1], rng) for _ in range(q_count)]
    return SacCore(
        policy=policy,
        q_nets=q_nets,
        q_targets=[q.copy() for q in q_nets],
        policy_opt=adam_init(policy),
        q_opts=[adam_init(q) for q in q_nets],
        alpha=alpha, gamma=gamma, tau=tau, lr_actor=lr_actor, lr_critic=lr_critic,
    )


def policy_distribution(core: SacCore, states: np.ndarray) -> SquashedGaussian:
    return SquashedGaussian.from_head(mlp_apply(core.policy, states))


def act(core: SacCore, state: np.ndarray, rng: np.random.Generator | None = None,
        deterministic: bool = False) -> np.ndarray:
    """Action in ``(-1, 1)^d`` for a single state."""
    dist = policy_distribution(core, state)
    if deterministic:
        return deterministic_action(dist)
    action, _ = sample_squashed(dist, rng.standard_normal(core.action_dim))
    return action


def _min_q(nets: Sequence[MlpParameters], states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    x = np.concatenate([states, actions], axis=-1)
    values = [mlp_apply(q, x)[:, 0] for q in nets]
    return values[0] if len(values) == 1 else np.minimum(values[0], values[1])


def compute_q_target(core: SacCore, batch: Batch, noise: np.ndarray | None = None,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Soft bootstrap target ``r + gamma * mask * (min target Q - alpha * log pi)``.

    ``mask`` is 0 for terminated transitions only; timeouts bootstrap. The
    target is a plain array, so nothing downstream differentiates through it.
    """
    if noise is None:
        noise = rng.standard_normal((len(batch), core.action_dim))
    dist = policy_distribution(core, batch.next_states)
    next_actions, next_log_prob = sample_squashed(dist, noise)
    soft_value = _min_q(core.q_targets, batch.next_states, next_actions) - core.alpha * next_log_prob
    mask = 1.0 - batch.terminated.astype(np.float64)
    return batch.rewards + core.gamma * mask * soft_value


def q_loss(core: SacCore, batch: Batch, y: np.ndarray) -> tuple[float, list[MlpParameters], list[float]]:
    """Mean of ``0.5 * (Q(s, a) - y)^2`` per Q network.

    Returns the summed loss, one gradient per network, and the per-network losses.
    """
    x = np.concatenate([batch.states, batch.actions], axis=-1)
    n = len(batch)
    grads, losses = [], []
    for q in core.q_nets:
        out, cache = mlp_forward(q, x)
        residual = out[:, 0] - y
        losses.append(float(0.5 * np.mean(residual**2)))
        g, _ = mlp_backward(q, cache, (residual / n)[:, None])
        grads.append(g)
    return float(sum(losses)), grads, losses


def policy_loss(core: SacCore, states: np.ndarray, noise: np.ndarray) -> tuple[float, MlpParameters]:
    """Mean of ``alpha * log pi(a|s) - min_i Q_i(s, a)`` with reparameterized ``a``."""
    n = states.shape[0]
    head, pcache = mlp_forward(core.policy, states)
    dist = SquashedGaussian.from_head(head)
    actions, log_prob = sample_squashed(dist, noise)

    x = np.concatenate([states, actions], axis=-1)
    outs = [mlp_forward(q, x) for q in core.q_nets]
    values = np.stack([o[:, 0] for o, _ in outs])
    chosen = np.argmin(values, axis=0)
    min_q = values[chosen, np.arange(n)]
    loss = float(np.mean(core.alpha * log_prob - min_q))

    grad_action = np.zeros_like(actions)
    for j, (q, (_, cache)) in enumerate(zip(core.q_nets, outs)):
        upstream = np.where(chosen == j, -1.0 / n, 0.0)[:, None]
        _, gx = mlp_backward(q, cache, upstream)
        grad_action += gx[:, core.state_dim:]
    grad_mean, grad_log_std = sample_squashed_backward(
        dist, noise, grad_action, np.full(n, core.alpha / n)
    )
    grads, _ = mlp_backward(core.policy, pcache, np.concatenate([grad_mean, grad_log_std], axis=-1))
    return loss, grads


def update(core: SacCore, batch: Batch, rng: np.random.Generator) -> dict[str, float]:
    """One critic step, one actor step, then Polyak-average the targets (in place)."""
    y = compute_q_target(core, batch, rng=rng)
    q_total, q_grads, _ = q_loss(core, batch, y)
    for i, (q, g) in enumerate(zip(core.q_nets, q_grads)):
        core.q_nets[i], core.q_opts[i] = adam_step(q, g, core.q_opts[i], core.lr_critic)

    noise = rng.standard_normal((len(batch), core.action_dim))
    pi_loss, pi_grads = policy_loss(core, batch.states, noise)
    core.policy, core.policy_opt = adam_step(core.policy, pi_grads, core.policy_opt, core.lr_actor)

    core.q_targets = [polyak_update(t, q, core.tau) for t, q in zip(core.q_targets, core.q_nets)]
    return {"q_loss": q_total, "policy_loss": pi_loss}


def silcr_update_step(core: SacCore, online: OnlineBuffer, expert: ExpertBuffer,
                      batch_size: int, rng: np.random.Generator) -> dict[str, float]:
    return update(core, make_training_batch(online, expert, batch_size, rng), rng)


def sqil_update_step(core: SacCore, online: OnlineBuffer, demos: ExpertBuffer,
                     batch_size: int, rng: np.random.Generator) -> dict[str, float]:
    # identical to SILCR; the caller never offers new trajectories to `demos`
    return update(core, make_training_batch(online, demos, batch_size, rng), rng)


def sac_update_step(core: SacCore, online: OnlineBuffer, batch_size: int,
                    rng: np.random.Generator) -> dict[str, float]:
    return update(core, online.sample(batch_size, rng, relabel=False), rng)


# -- checkpoints ------------------------------------------------------------


def _adam_to_dict(state: AdamState, prefix: str) -> dict[str, np.ndarray]:
    out = params_to_dict(state.first_moment, f"{prefix}/m")
    out.update(params_to_dict(state.second_moment, f"{prefix}/v"))
    out[f"{prefix}/t"] = np.asarray(state.step_count, dtype=np.int64)
    return out


def _adam_from_dict(data, prefix: str) -> AdamState:
    return AdamState(params_from_dict(data, f"{prefix}/m"), params_from_dict(data, f"{prefix}/v"),
                     int(data[f"{prefix}/t"]))


def save_checkpoint(core: SacCore, path: str | Path, rng_states: dict | None = None,
                    meta: dict | None = None) -> None:
    """Write networks, optimizer moments, hyperparameters and RNG states to one ``.npz``."""
    data = params_to_dict(core.policy, "policy")
    data.update(_adam_to_dict(core.policy_opt, "policy_opt"))
    for i, (q, t, s) in enumerate(zip(core.q_nets, core.q_targets, core.q_opts)):
        data.update(params_to_dict(q, f"q{i}"))
        data.update(params_to_dict(t, f"q{i}_target"))
        data.update(_adam_to_dict(s, f"q{i}_opt"))
    header = {
        "kind": "sac_core",
        "version": CHECKPOINT_VERSION,
        "q_count": len(core.q_nets),
        "hyper": {k: getattr(core, k) for k in ("alpha", "gamma", "tau", "lr_actor", "lr_critic")},
        "rng_states": rng_states or {},
        "meta": meta or {},
    }
    data["header"] = np.asarray(json.dumps(header))
    with open(path, "wb") as fh:
        np.savez(fh, **data)


def load_checkpoint(path: str | Path) -> tuple[SacCore, dict, dict]:
    """Return ``(core, rng_states, meta)``."""
    with np.load(path) as data:
        header = json.loads(str(data["header"]))
        if header.get("kind") != "sac_core" or header.get("version") != CHECKPOINT_VERSION:
            raise UsageError(f"{path}: not a version-{CHECKPOINT_VERSION} agent checkpoint")
        qn = header["q_count"]
        core = SacCore(
            policy=params_from_dict(data, "policy"),
            q_nets=[params_from_dict(data, f"q{i}") for i in range(qn)],
            q_targets=[params_from_dict(data, f"q{i}_target") for i in range(qn)],
            policy_opt=_adam_from_dict(data, "policy_opt"),
            q_opts=[_adam_from_dict(data, f"q{i}_opt") for i in range(qn)],
            **header["hyper"],
        )
    return core, header["rng_states"], header["meta"]
