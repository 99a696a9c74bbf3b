"""Advantage-weighted actor-critic learner.

Critic regression against a min-of-twin-targets backup, advantage-weighted
maximum-likelihood actor updates with exp(A / lam) weights, and Polyak
target smoothing.  Rewards are scaled inside the learner (default 1e-3, so
the sparse +/-1000 rewards become +/-1) purely for conditioning.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .buffers import TransitionBatch
from .nets import (
    AdamState,
    GaussianPolicy,
    Mlp,
    TrainingDiverged,
    adam_step,
    load_checkpoint,
    make_critic,
    polyak_update,
    save_checkpoint,
)


@dataclass
class AwacConfig:
    obs_dim: int
    act_dim: int = 2
    hidden: tuple[int, ...] = (256, 256)
    critic_layer_norm: bool = True
    gamma: float = 0.98
    lam: float = 1.0
    tau: float = 0.005
    value_samples: int = 4
    weight_clip: float = 20.0
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    batch_size: int = 256
    reward_scale: float = 1e-3
    log_std_init: float = -1.0
    obs_scale: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.lam <= 0.0:
            raise ValueError("lam must be positive")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.value_samples < 1:
            raise ValueError("value_samples must be >= 1")


class AwacLearner:
    """Owns the actor, twin critics, their targets, and optimizer state."""

    def __init__(self, config: AwacConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.actor = GaussianPolicy(
            c.obs_dim, c.act_dim, c.hidden, rng, log_std_init=c.log_std_init
        )
        self.q1 = make_critic(c.obs_dim, c.act_dim, c.hidden, rng, c.critic_layer_norm)
        self.q2 = make_critic(c.obs_dim, c.act_dim, c.hidden, rng, c.critic_layer_norm)
        self.q1_target = self.q1.clone()
        self.q2_target = self.q2.clone()
        self.opt_actor = AdamState.for_params(self.actor.params, lr=c.lr_actor)
        self.opt_q1 = AdamState.for_params(self.q1.params, lr=c.lr_critic)
        self.opt_q2 = AdamState.for_params(self.q2.params, lr=c.lr_critic)

    # ------------------------------------------------------------ policy
    def _s(self, obs: np.ndarray) -> np.ndarray:
        # observations are desk-scale meters; rescaled to O(1) net inputs
        return obs * self.config.obs_scale

    def act(self, obs: np.ndarray, deterministic: bool, rng: np.random.Generator) -> np.ndarray:
        return self.actor.act(self._s(obs), deterministic, rng)

    # ------------------------------------------------------------ critics
    def _q_input(self, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
        return np.concatenate([self._s(obs), act], axis=1)

    def min_q(self, obs: np.ndarray, act: np.ndarray, target: bool = False) -> np.ndarray:
        x = self._q_input(obs, act)
        a = (self.q1_target if target else self.q1)(x)[:, 0]
        b = (self.q2_target if target else self.q2)(x)[:, 0]
        return np.minimum(a, b)

    def q_target_given_next_actions(
        self, batch: TransitionBatch, next_act: np.ndarray
    ) -> np.ndarray:
        """Backup y = r_scaled + gamma * (1 - done) * min Q'(s', a')."""
        c = self.config
        next_q = self.min_q(batch.next_obs, next_act, target=True)
        return batch.rew * c.reward_scale + c.gamma * (1.0 - batch.done) * next_q

    def sample_next_actions(self, batch: TransitionBatch, rng: np.random.Generator) -> np.ndarray:
        return np.clip(self.actor.sample(self._s(batch.next_obs), rng), -1.0, 1.0)

    def q_target(self, batch: TransitionBatch, rng: np.random.Generator) -> np.ndarray:
        return self.q_target_given_next_actions(batch, self.sample_next_actions(batch, rng))

    def critic_loss_and_grads(
        self, critic: Mlp, batch: TransitionBatch, y: np.ndarray
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean squared error of one critic against fixed targets y."""
        x = self._q_input(batch.obs, batch.act)
        pred, cache = critic.forward(x)
        resid = pred[:, 0] - y
        loss = float((resid**2).mean())
        if not np.isfinite(loss):
            raise TrainingDiverged(f"critic loss diverged: {loss}")
        grads, _ = critic.backward(cache, (2.0 / len(resid)) * resid[:, None])
        return loss, grads

    def update_critics(self, batch: TransitionBatch, rng: np.random.Generator) -> float:
        y = self.q_target(batch, rng)
        loss1, g1 = self.critic_loss_and_grads(self.q1, batch, y)
        loss2, g2 = self.critic_loss_and_grads(self.q2, batch, y)
        loss = 0.5 * (loss1 + loss2)
        adam_step(self.q1.params, self.opt_q1, g1)
        adam_step(self.q2.params, self.opt_q2, g2)
        polyak_update(self.q1_target.params, self.q1.params, self.config.tau)
        polyak_update(self.q2_target.params, self.q2.params, self.config.tau)
        return loss

    # ------------------------------------------------------------ actor
    def value_estimate(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """V(s) as the mean of min-Q over M policy samples."""
        m = self.config.value_samples
        n = obs.shape[0]
        tiled = np.repeat(obs, m, axis=0)
        acts = np.clip(self.actor.sample(self._s(tiled), rng), -1.0, 1.0)
        q = self.min_q(tiled, acts)
        return q.reshape(n, m).mean(axis=1)

    def advantage(self, obs: np.ndarray, act: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        obs = np.atleast_2d(obs)
        act = np.atleast_2d(act)
        return self.min_q(obs, act) - self.value_estimate(obs, rng)

    def weights_from_advantage(self, adv: np.ndarray) -> np.ndarray:
        # exp weights clipped to avoid overflow early in training
        return np.minimum(np.exp(adv / self.config.lam), self.config.weight_clip)

    def update_actor(self, batch: TransitionBatch, rng: np.random.Generator) -> dict[str, float]:
        adv = self.advantage(batch.obs, batch.act, rng)
        w = self.weights_from_advantage(adv)
        loss, grads = self.actor.weighted_logprob_loss(self._s(batch.obs), batch.act, w)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"actor loss diverged: {loss}")
        adam_step(self.actor.params, self.opt_actor, grads)
        self.actor.clamp_log_std()
        return {
            "actor_loss": loss,
            "mean_weight": float(w.mean()),
            "mean_advantage": float(adv.mean()),
        }

    def update(self, batch: TransitionBatch, rng: np.random.Generator) -> dict[str, float]:
        critic_loss = self.update_critics(batch, rng)
        stats = self.update_actor(batch, rng)
        stats["critic_loss"] = critic_loss
        return stats

    # ------------------------------------------------------------ checkpoints
    def checkpoint_groups(self) -> dict[str, dict[str, np.ndarray]]:
        groups = {
            "actor": self.actor.params,
            "q1": self.q1.params,
            "q2": self.q2.params,
            "q1_target": self.q1_target.params,
            "q2_target": self.q2_target.params,
        }
        for name, opt in (
            ("opt_actor", self.opt_actor),
            ("opt_q1", self.opt_q1),
            ("opt_q2", self.opt_q2),
        ):
            groups[f"{name}.m"] = opt.m
            groups[f"{name}.v"] = opt.v
        return groups

    def save(self, path) -> None:
        meta = {
            "kind": "awac",
            "config": asdict(self.config),
            "opt_steps": {
                "opt_actor": self.opt_actor.step,
                "opt_q1": self.opt_q1.step,
                "opt_q2": self.opt_q2.step,
            },
        }
        save_checkpoint(path, self.checkpoint_groups(), meta)

    @classmethod
    def load(cls, path) -> "AwacLearner":
        groups, meta = load_checkpoint(path)
        cfg_dict = dict(meta["config"])
        cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
        config = AwacConfig(**cfg_dict)
        learner = cls(config, np.random.default_rng(0))
        learner.actor.set_params(groups["actor"])
        for name, net in (
            ("q1", learner.q1),
            ("q2", learner.q2),
            ("q1_target", learner.q1_target),
            ("q2_target", learner.q2_target),
        ):
            for k, v in groups[name].items():
                net.params[k][...] = v
        for name, opt in (
            ("opt_actor", learner.opt_actor),
            ("opt_q1", learner.opt_q1),
            ("opt_q2", learner.opt_q2),
        ):
            opt.m = {k: v.copy() for k, v in groups[f"{name}.m"].items()}
            opt.v = {k: v.copy() for k, v in groups[f"{name}.v"].items()}
            opt.step = int(meta["opt_steps"][name])
        return learner
