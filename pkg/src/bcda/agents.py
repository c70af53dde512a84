"""BCDA and DDPG agents sharing one interface.

Both agents follow the same loop: uniform random actions during warmup,
then actor actions with Gaussian exploration noise; one update per
environment step once the buffer holds more than a batch.

BCDA fits its broad critic by ridge regression on each sampled batch and
grows the critic while its training error stays above a threshold, until the
incremental-learning budget is spent. DDPG takes one Adam step on a deep
critic instead.
"""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from . import actor as mlp
from . import bls
from .errors import ConfigError, InsufficientData
from .replay import TrainingBuffer, Transition

# (feature, enhancement) nodes added over a whole run
IL_BUDGETS = {"s1": (0, 0), "s2": (5, 100), "s3": (5, 300), "s4": (10, 300)}
GROWTH_CHUNK = (1, 20)


@dataclass
class AgentConfig:
    gamma: float = 0.99
    rho: float = 0.995
    batch_size: int = 512
    warmup: int = 1000
    actor_lr: float = 0.005
    # deep critic and actor of the DDPG baseline only
    critic_lr: float = 1e-3
    ddpg_actor_lr: float = 1e-4
    lam: float = 2.0**-10
    shrinkage: float = 0.8
    n_feature: int = 10
    m_enhance: int = 500
    il_scheme: str = "s1"
    il_rmse_threshold: float = 0.05
    noise_sigma: float = 0.1
    buffer_capacity: int = 100_000
    hidden: tuple = (256, 256, 256)
    critic_accumulate: bool = False
    critic_forget: float = 0.99
    final_init: float | None = 3e-3
    input_norm: bool = False
    actor_grad_target: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.il_scheme = str(self.il_scheme).lower()
        checks = [
            (0.0 <= self.gamma < 1.0, "gamma must be in [0, 1)"),
            (0.0 <= self.rho <= 1.0, "rho must be in [0, 1]"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.warmup >= 0, "warmup must be >= 0"),
            (min(self.actor_lr, self.critic_lr, self.ddpg_actor_lr) > 0, "learning rates must be positive"),
            (self.lam > 0, "lam must be positive"),
            (0.0 < self.shrinkage <= 1.0, "shrinkage must be in (0, 1]"),
            (self.n_feature >= 1 and self.m_enhance >= 1, "node counts must be >= 1"),
            (self.il_scheme in IL_BUDGETS, f"il_scheme must be one of {sorted(IL_BUDGETS)}"),
            (self.il_rmse_threshold >= 0, "il_rmse_threshold must be >= 0"),
            (self.noise_sigma >= 0, "noise_sigma must be >= 0"),
            (self.buffer_capacity >= self.batch_size, "buffer_capacity must be >= batch_size"),
            (len(self.hidden) >= 1 and min(self.hidden) >= 1, "hidden sizes must be >= 1"),
            (0.0 < self.critic_forget <= 1.0, "critic_forget must be in (0, 1]"),
            (self.final_init is None or self.final_init > 0, "final_init must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


@dataclass
class UpdateReport:
    critic_rmse: float
    msbe: float
    grew_nodes: int = 0
    n_feature: int = 0
    m_enhance: int = 0


@dataclass
class _Rngs:
    init: np.random.Generator
    noise: np.random.Generator
    buffer: np.random.Generator
    growth: np.random.Generator

    @classmethod
    def from_seed(cls, seed):
        return cls(*(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)))


class _AgentBase:
    kind = ""

    def __init__(self, env_spec, cfg, seed):
        self.spec = env_spec
        self.cfg = cfg
        self.rngs = _Rngs.from_seed(seed)
        self.obs_dim = env_spec.obs_dim
        self.action_dim = env_spec.action_dim
        self.low = np.asarray(env_spec.action_low, dtype=np.float64)
        self.high = np.asarray(env_spec.action_high, dtype=np.float64)
        self.buffer = TrainingBuffer(
            cfg.buffer_capacity, self.obs_dim, self.action_dim, self.rngs.buffer
        )
        self.step_count = 0
        self.updates = 0
        # network inputs are (s - obs_mean) / obs_scale and a / action_scale;
        # identity until frozen from the warmup data at the first update
        self.obs_mean = np.zeros(self.obs_dim)
        self.obs_scale = np.ones(self.obs_dim)
        self.action_scale = np.ones(self.action_dim)
        self.norm_frozen = not cfg.input_norm

    def _freeze_norm(self):
        S = self.buffer.S[:self.buffer.size]
        self.obs_mean = S.mean(axis=0)
        sd = S.std(axis=0)
        # a dimension that never varied during warmup is left unscaled
        self.obs_scale = np.where(sd > 1e-6, sd, 1.0)
        self.action_scale = np.maximum(np.abs(self.low), np.abs(self.high))
        self.norm_frozen = True

    def _s(self, S):
        return (S - self.obs_mean) / self.obs_scale

    def _critic_input(self, S, A):
        return np.hstack([self._s(S), A / self.action_scale])

    def _new_actor(self):
        # tanh output scaled to the half-range; both tasks have symmetric bounds
        return mlp.mlp_init(
            self.obs_dim, self.action_dim, self.rngs.init,
            action_bound=(self.high - self.low) / 2.0, hidden=self.cfg.hidden,
            final_scale=self.cfg.final_init,
        )

    def policy(self, s):
        raise NotImplementedError

    def select_action(self, s, explore=True):
        """Deterministic policy when ``explore`` is false; otherwise warmup or noisy policy.

        Exploring calls advance ``step_count``; warmup covers steps 1..T.
        """
        if not explore:
            return self.policy(s)
        self.step_count += 1
        if self.step_count <= self.cfg.warmup:
            return self.rngs.noise.uniform(self.low, self.high)
        a = self.policy(s)
        sigma = self.cfg.noise_sigma * (self.high - self.low) / 2.0
        if self.cfg.noise_sigma > 0:
            a = a + sigma * self.rngs.noise.standard_normal(self.action_dim)
        return np.clip(a, self.low, self.high)

    def observe(self, s, a, r, s_next, terminated):
        self.buffer.push(Transition(s, a, r, s_next, terminated))

    def ready(self):
        return self.buffer.size > self.cfg.batch_size and self.step_count > self.cfg.warmup

    def maybe_update(self):
        if not self.ready():
            return None
        if not self.norm_frozen:
            self._freeze_norm()
        return self.update()

    def update(self):
        raise NotImplementedError

    def _require_ready(self):
        if not self.ready():
            raise InsufficientData(
                f"update needs buffer > {self.cfg.batch_size} and step > {self.cfg.warmup} "
                f"(buffer={self.buffer.size}, step={self.step_count})"
            )

    def _meta(self):
        return {"agent": self.kind, "step_count": self.step_count, "updates": self.updates,
                "config": asdict(self.cfg), "obs_mean": self.obs_mean.tolist(),
                "obs_scale": self.obs_scale.tolist(), "action_scale": self.action_scale.tolist()}


class BcdaAgent(_AgentBase):
    """Broad critic (ridge-fit BLS) with a deep deterministic actor."""

    kind = "bcda"

    def __init__(self, env_spec, cfg, seed):
        super().__init__(env_spec, cfg, seed)
        r = self.rngs.init
        self.bcn = bls.bls_init(
            self.obs_dim + self.action_dim, 1, cfg.n_feature, cfg.m_enhance,
            cfg.shrinkage, cfg.lam, r,
        )
        self.t_bcn = self.bcn.copy()
        self.dan = self._new_actor()
        self.t_dan = self.dan.copy()
        budget = IL_BUDGETS[cfg.il_scheme]
        self.growth_left = list(budget)
        self.target_std = None
        self._gram = None
        self._moment = None

    def policy(self, s):
        return mlp.mlp_forward(self.dan, self._s(s))

    def compute_targets(self, batch):
        """``y = r + gamma (1 - d) Q_target(s', mu_target(s'))``; exactly ``r`` when terminal."""
        a_next = mlp.mlp_forward(self.t_dan, self._s(batch.S_next))
        q_next = bls.bls_forward(self.t_bcn, self._critic_input(batch.S_next, a_next))[:, 0]
        y = batch.R + self.cfg.gamma * (1.0 - batch.D) * q_next
        return np.where(batch.D > 0, batch.R, y)

    def q_values(self, S, A):
        return bls.bls_forward(self.bcn, self._critic_input(S, A))[:, 0]

    def msbe(self, batch):
        return float(np.mean((self.q_values(batch.S, batch.A) - self.compute_targets(batch)) ** 2))

    def action_gradient(self, S, A, net=None):
        """Per-sample ``dQ/da`` of the current critic (or ``net``), shape ``(N, action_dim)``."""
        net = self.bcn if net is None else net
        g = bls.scalar_input_gradient(net, self._critic_input(S, A))[:, self.obs_dim:]
        return g / self.action_scale

    def _growth_threshold(self, y):
        """``il_rmse_threshold`` times an EMA of the batch target std.

        The EMA starts at the first batch whose targets are not all equal;
        until then there is no growth.
        """
        std = float(np.std(y))
        if self.target_std is None:
            if std == 0.0:
                return np.inf
            self.target_std = std
        else:
            self.target_std = 0.99 * self.target_std + 0.01 * std
        return self.cfg.il_rmse_threshold * self.target_std

    def _next_chunk(self):
        f_left, e_left = self.growth_left
        if f_left > 0:
            return bls.BlsGrowthPlan(min(GROWTH_CHUNK[0], f_left), min(GROWTH_CHUNK[1], e_left))
        if e_left > 0:
            return bls.BlsGrowthPlan(0, min(GROWTH_CHUNK[1], e_left))
        return None

    def _fit_critic(self, X, y, A):
        if not self.cfg.critic_accumulate:
            return bls.fit_output_weights(self.bcn, X, y[:, None], A=A).rmse
        # recursive accumulation of the normal equations with forgetting
        f = self.cfg.critic_forget
        if self._gram is None or self._gram.shape[0] != A.shape[1]:
            self._gram = A.T @ A
            self._moment = A.T @ y[:, None]
        else:
            self._gram = f * self._gram + A.T @ A
            self._moment = f * self._moment + A.T @ y[:, None]
        G = self._gram.copy()
        G[np.diag_indices_from(G)] += self.cfg.lam
        W = scipy.linalg.cho_solve(bls.numerics.cho_factor_spd(G), self._moment, check_finite=False)
        self.bcn.W_out = W
        self.bcn.invalidate_cache()
        return float(np.sqrt(np.mean((A @ W[:, 0] - y) ** 2)))

    def _grow(self, X, y, rmse):
        if self.growth_left == [0, 0]:
            return rmse, 0
        # round-off level residuals count as a perfect fit (e.g. constant targets)
        threshold = max(self._growth_threshold(y), 1e-9 * (1.0 + float(np.max(np.abs(y)))))
        grew = 0
        if self.cfg.critic_accumulate and rmse > threshold:
            bls.fit_output_weights(self.bcn, X, y[:, None])
        while rmse > threshold:
            plan = self._next_chunk()
            if plan is None:
                break
            rmse = bls.grow(self.bcn, plan, X, y[:, None], self.rngs.growth).rmse
            added = plan.add_feature + plan.add_enhance
            self.growth_left[0] -= plan.add_feature
            self.growth_left[1] -= plan.add_enhance
            grew += added
        if grew:
            bls.sync_hidden(self.t_bcn, self.bcn)
            self._gram = None
        return rmse, grew

    def update(self):
        self._require_ready()
        cfg = self.cfg
        batch = self.buffer.sample(cfg.batch_size)
        y = self.compute_targets(batch)
        self.buffer.store_targets(batch.index, y)
        X = self._critic_input(batch.S, batch.A)
        A = bls.build_design_matrix(self.bcn, X)
        msbe = float(np.mean((A @ self.bcn.W_out[:, 0] - y) ** 2))

        rmse = self._fit_critic(X, y, A)
        rmse, grew = self._grow(X, y, rmse)

        S = self._s(batch.S)
        a_mu, acts = mlp.forward_with_cache(self.dan, S)
        dq_da = self.action_gradient(batch.S, a_mu, self.t_bcn if cfg.actor_grad_target else None)
        grads = mlp.mlp_backward_chain(self.dan, S, dq_da, acts)
        mlp.adam_step(self.dan, grads, cfg.actor_lr)

        bls.polyak_output_weights(self.t_bcn, self.bcn, cfg.rho)
        mlp.polyak_update(self.t_dan, self.dan, cfg.rho)
        self.updates += 1
        return UpdateReport(rmse, msbe, grew, self.bcn.n_feature, self.bcn.m_enhance)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        bls.save_bls(self.bcn, os.path.join(directory, "bcn.bin"))
        bls.save_bls(self.t_bcn, os.path.join(directory, "t_bcn.bin"))
        mlp.save_mlp(self.dan, os.path.join(directory, "dan.bin"))
        mlp.save_mlp(self.t_dan, os.path.join(directory, "t_dan.bin"))
        meta = self._meta() | {"growth_left": self.growth_left}
        with open(os.path.join(directory, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


class DdpgAgent(_AgentBase):
    """Baseline: deep critic trained by Adam on the squared Bellman error."""

    kind = "ddpg"

    def __init__(self, env_spec, cfg, seed):
        super().__init__(env_spec, cfg, seed)
        self.critic = mlp.mlp_init(
            self.obs_dim + self.action_dim, 1, self.rngs.init, hidden=cfg.hidden, output="linear",
            final_scale=cfg.final_init,
        )
        self.t_critic = self.critic.copy()
        self.actor = self._new_actor()
        self.t_actor = self.actor.copy()

    def policy(self, s):
        return mlp.mlp_forward(self.actor, self._s(s))

    def compute_targets(self, batch):
        a_next = mlp.mlp_forward(self.t_actor, self._s(batch.S_next))
        q_next = mlp.mlp_forward(self.t_critic, self._critic_input(batch.S_next, a_next))[:, 0]
        y = batch.R + self.cfg.gamma * (1.0 - batch.D) * q_next
        return np.where(batch.D > 0, batch.R, y)

    def q_values(self, S, A):
        return mlp.mlp_forward(self.critic, self._critic_input(S, A))[:, 0]

    def msbe(self, batch):
        return float(np.mean((self.q_values(batch.S, batch.A) - self.compute_targets(batch)) ** 2))

    def critic_gradients(self, X, y):
        """Parameter gradients of ``mean((Q(X) - y)^2)`` and the loss itself."""
        q, acts = mlp.forward_with_cache(self.critic, X)
        err = q[:, 0] - y
        grads, _ = mlp.backward(self.critic, acts, (2.0 / len(y)) * err[:, None])
        return grads, float(np.mean(err * err))

    def action_gradient(self, S, A):
        """Per-sample ``dQ/da`` of the current critic, shape ``(N, action_dim)``."""
        q, acts = mlp.forward_with_cache(self.critic, self._critic_input(S, A))
        _, g_in = mlp.backward(self.critic, acts, np.ones_like(q))
        return g_in[:, self.obs_dim:] / self.action_scale

    def update(self):
        self._require_ready()
        cfg = self.cfg
        batch = self.buffer.sample(cfg.batch_size)
        y = self.compute_targets(batch)
        self.buffer.store_targets(batch.index, y)
        grads, msbe = self.critic_gradients(self._critic_input(batch.S, batch.A), y)
        mlp.adam_step(self.critic, grads, cfg.critic_lr)

        S = self._s(batch.S)
        a_mu, acts = mlp.forward_with_cache(self.actor, S)
        dq_da = self.action_gradient(batch.S, a_mu)
        grads = mlp.mlp_backward_chain(self.actor, S, dq_da, acts)
        mlp.adam_step(self.actor, grads, cfg.ddpg_actor_lr)

        mlp.polyak_update(self.t_critic, self.critic, cfg.rho)
        mlp.polyak_update(self.t_actor, self.actor, cfg.rho)
        self.updates += 1
        return UpdateReport(float(np.sqrt(msbe)), msbe)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        for name in ("critic", "t_critic", "actor", "t_actor"):
            mlp.save_mlp(getattr(self, name), os.path.join(directory, f"{name}.bin"))
        with open(os.path.join(directory, "meta.json"), "w") as fh:
            json.dump(self._meta(), fh, indent=2, sort_keys=True)


AGENTS = {"bcda": BcdaAgent, "ddpg": DdpgAgent}


def make_agent(kind, env_spec, cfg, seed):
    try:
        cls = AGENTS[kind]
    except KeyError:
        raise ConfigError(f"unknown agent {kind!r}; choose from {sorted(AGENTS)}") from None
    return cls(env_spec, cfg, seed)


def msbe(agent, batch):
    return agent.msbe(batch)


def compute_targets(agent, batch):
    return agent.compute_targets(batch)
