"""Comparison learners: offline-demo AWAC, DDPGfD-BC, and an EARLY-like
active query strategy.

All three consume the same balanced-sampling buffers and demo budget as the
curriculum method so their learning curves are directly comparable.  The
EARLY variant is a deliberately simplified reimplementation of a TD-error
driven query rule and makes no fidelity claim to the original.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .awac import AwacConfig, AwacLearner
from .buffers import TransitionBatch
from .nets import (
    AdamState,
    DeterministicPolicy,
    TrainingDiverged,
    adam_step,
    load_checkpoint,
    make_critic,
    polyak_update,
    save_checkpoint,
)


@dataclass
class DdpgfdBcConfig:
    obs_dim: int
    act_dim: int = 2
    hidden: tuple[int, ...] = (256, 256)
    critic_layer_norm: bool = True
    gamma: float = 0.98
    tau: float = 0.005
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    batch_size: int = 256
    reward_scale: float = 1e-3
    obs_scale: float = 1.0
    beta_bc: float = 1.0
    explore_sigma: float = 0.1

    def __post_init__(self):
        self.hidden = tuple(self.hidden)


class DdpgfdBcLearner:
    """Deterministic actor-critic with a Q-filtered behavior-cloning term.

    The BC penalty applies only on demo rows where the demo action currently
    out-scores the policy action under the critic.
    """

    def __init__(self, config: DdpgfdBcConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.actor = DeterministicPolicy(c.obs_dim, c.act_dim, c.hidden, rng)
        self.actor_target = DeterministicPolicy(c.obs_dim, c.act_dim, c.hidden, rng)
        for k, v in self.actor.params.items():
            self.actor_target.params[k][...] = v
        self.q1 = make_critic(c.obs_dim, c.act_dim, c.hidden, rng, c.critic_layer_norm)
        self.q2 = make_critic(c.obs_dim, c.act_dim, c.hidden, rng, c.critic_layer_norm)
        self.q1_target = self.q1.clone()
        self.q2_target = self.q2.clone()
        self.opt_actor = AdamState.for_params(self.actor.params, lr=c.lr_actor)
        self.opt_q1 = AdamState.for_params(self.q1.params, lr=c.lr_critic)
        self.opt_q2 = AdamState.for_params(self.q2.params, lr=c.lr_critic)

    def _s(self, obs: np.ndarray) -> np.ndarray:
        return obs * self.config.obs_scale

    def act(self, obs: np.ndarray, deterministic: bool, rng: np.random.Generator) -> np.ndarray:
        return self.actor.act(self._s(obs), deterministic, rng, noise_sigma=self.config.explore_sigma)

    def _q_input(self, obs, act):
        return np.concatenate([self._s(obs), act], axis=1)

    def _min_target_q(self, obs, act):
        x = self._q_input(obs, act)
        return np.minimum(self.q1_target(x)[:, 0], self.q2_target(x)[:, 0])

    def q_target(self, batch: TransitionBatch) -> np.ndarray:
        c = self.config
        next_act = self.actor_target(self._s(batch.next_obs))
        next_q = self._min_target_q(batch.next_obs, next_act)
        return batch.rew * c.reward_scale + c.gamma * (1.0 - batch.done) * next_q

    def qfilter_mask(self, batch: TransitionBatch) -> np.ndarray:
        """Demo rows where the demo action beats the current policy action."""
        from .buffers import SRC_DEMO

        x_demo = self._q_input(batch.obs, batch.act)
        x_pi = self._q_input(batch.obs, self.actor(self._s(batch.obs)))
        q_demo = self.q1(x_demo)[:, 0]
        q_pi = self.q1(x_pi)[:, 0]
        return ((batch.src == SRC_DEMO) & (q_demo > q_pi)).astype(float)

    def actor_loss_and_grads(
        self, batch: TransitionBatch, mask: np.ndarray
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Deterministic policy-gradient loss with a frozen Q-filter mask.

        L = -mean Q1(s, pi(s)) + beta_bc * mean(mask * ||pi(s) - a_demo||^2)
        """
        c = self.config
        n = len(batch)
        pi, cache = self.actor.net.forward(self._s(batch.obs))
        x = self._q_input(batch.obs, pi)
        q, qcache = self.q1.forward(x)
        bc_err = pi - batch.act
        loss = float(-q[:, 0].mean() + c.beta_bc * (mask * (bc_err**2).sum(axis=1)).mean())
        # dL/dpi: critic input gradient (action slice) plus the BC term
        _, dq_dx = self.q1.backward(qcache, np.full((n, 1), -1.0 / n))
        dpi = dq_dx[:, c.obs_dim :] + (2.0 * c.beta_bc / n) * mask[:, None] * bc_err
        grads, _ = self.actor.net.backward(cache, dpi)
        return loss, grads

    def update_critics(self, batch: TransitionBatch) -> float:
        y = self.q_target(batch)
        loss_total = 0.0
        for critic, opt in ((self.q1, self.opt_q1), (self.q2, self.opt_q2)):
            x = self._q_input(batch.obs, batch.act)
            pred, cache = critic.forward(x)
            resid = pred[:, 0] - y
            loss = float((resid**2).mean())
            if not np.isfinite(loss):
                raise TrainingDiverged(f"critic loss diverged: {loss}")
            grads, _ = critic.backward(cache, (2.0 / len(resid)) * resid[:, None])
            adam_step(critic.params, opt, grads)
            loss_total += 0.5 * loss
        polyak_update(self.q1_target.params, self.q1.params, self.config.tau)
        polyak_update(self.q2_target.params, self.q2.params, self.config.tau)
        return loss_total

    def update_actor(self, batch: TransitionBatch) -> float:
        mask = self.qfilter_mask(batch)
        loss, grads = self.actor_loss_and_grads(batch, mask)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"actor loss diverged: {loss}")
        adam_step(self.actor.params, self.opt_actor, grads)
        polyak_update(self.actor_target.params, self.actor.params, self.config.tau)
        return loss

    def update(self, batch: TransitionBatch, rng: np.random.Generator) -> dict[str, float]:
        critic_loss = self.update_critics(batch)
        actor_loss = self.update_actor(batch)
        return {"critic_loss": critic_loss, "actor_loss": actor_loss}

    # ------------------------------------------------------------ checkpoints
    def save(self, path) -> None:
        groups = {
            "actor": self.actor.params,
            "actor_target": self.actor_target.params,
            "q1": self.q1.params,
            "q2": self.q2.params,
            "q1_target": self.q1_target.params,
            "q2_target": self.q2_target.params,
        }
        meta = {"kind": "ddpgfd_bc", "config": asdict(self.config)}
        save_checkpoint(path, groups, meta)

    @classmethod
    def load(cls, path) -> "DdpgfdBcLearner":
        groups, meta = load_checkpoint(path)
        cfg = dict(meta["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        learner = cls(DdpgfdBcConfig(**cfg), np.random.default_rng(0))
        for name, net in (
            ("actor", learner.actor.net),
            ("actor_target", learner.actor_target.net),
            ("q1", learner.q1),
            ("q2", learner.q2),
            ("q1_target", learner.q1_target),
            ("q2_target", learner.q2_target),
        ):
            for k, v in groups[name].items():
                net.params[k][...] = v
        return learner


class TdErrorQueryRule:
    """EARLY-like trigger: query when an episode's mean absolute TD error
    exceeds (1 + kappa) times the running mean over past episodes."""

    def __init__(self, kappa: float = 0.2):
        self.kappa = kappa
        self.running_mean = 0.0
        self.episodes_seen = 0

    def episode_td_error(self, learner: AwacLearner, batch_arrays, rng) -> float:
        obs, act, rew, next_obs, done = batch_arrays
        batch = TransitionBatch(
            obs=obs, act=act, rew=rew, next_obs=next_obs, done=done,
            src=np.zeros(len(rew), dtype=int),
        )
        y = learner.q_target(batch, rng)
        q = learner.min_q(obs, act)
        return float(np.abs(q - y).mean())

    def should_query(self, td_error: float) -> bool:
        trigger = (
            self.episodes_seen > 0
            and td_error > (1.0 + self.kappa) * self.running_mean
        )
        self.episodes_seen += 1
        self.running_mean += (td_error - self.running_mean) / self.episodes_seen
        return trigger
