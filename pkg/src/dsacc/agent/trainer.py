"""Training loop, evaluation and metrics emission for the DSAC family."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..envs import make_env
from ..errors import EnvFault, NumericalError, UsageError
from ..nets import Adam, Network, NetworkSpec, load_checkpoint, save_checkpoint, target_update
from .buffer import ReplayBuffer
from .config import AgentConfig, TargetSource
from .losses import (
    TemperatureState,
    actor_loss,
    critic_loss,
    critic_targets,
    entropy,
    policy_terms,
    soft_state_value,
    temperature_update,
)

log = logging.getLogger(__name__)

METRIC_FIELDS = (
    "step", "variant", "seed", "eval_return_mean", "eval_return_std", "entropy",
    "alpha", "lambda_mean", "ev_mean_gap", "ev_var_gap", "q_mean",
)


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def action_probs(actor: Network, obs) -> np.ndarray:
    probs, _ = policy_terms(actor.forward(obs))
    return probs


def greedy_action(actor: Network, obs) -> int:
    # np.argmax returns the lowest index among ties
    return int(np.argmax(action_probs(actor, obs)))


@dataclass
class EvalResult:
    returns: list
    mean: float
    std: float

    def to_dict(self) -> dict:
        return {"returns": self.returns, "return_mean": self.mean, "return_std": self.std,
                "episodes": len(self.returns)}


def evaluate(actor: Network, env, episodes: int, mode: str = "greedy", seed=None) -> EvalResult:
    """Roll out ``episodes`` episodes and report undiscounted returns.

    Args:
        actor: policy network.
        env: environment; reseeded with ``seed`` on the first reset.
        episodes: number of episodes.
        mode: ``"greedy"`` (argmax, lowest index on ties) or ``"stochastic"``.
        seed: seeds both the env and the action sampler.
    """
    mode = mode.lower()
    if mode not in ("greedy", "stochastic"):
        raise UsageError(f"unknown evaluation mode {mode!r}")
    if episodes < 1:
        raise UsageError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    returns = []
    for ep in range(episodes):
        obs = env.reset(seed if ep == 0 else None)
        total = 0.0
        while True:
            if mode == "greedy":
                a = greedy_action(actor, obs)
            else:
                p = action_probs(actor, obs)
                a = int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), p.size - 1))
            res = env.step(a)
            total += res.reward
            obs = res.obs
            if res.done:
                break
        returns.append(total)
    arr = np.array(returns)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return EvalResult(returns, float(arr.mean()), std)


class Agent:
    """Actor, twin critics with target copies, optimizers and temperature."""

    def __init__(self, config: AgentConfig, obs_dim: int, n_actions: int):
        self.config = config
        self.obs_dim, self.n_actions = obs_dim, n_actions
        seeds = np.random.SeedSequence(config.seed).spawn(8)
        hidden = config.hidden_layers

        def net(k):
            return Network(NetworkSpec(obs_dim, n_actions, hidden, seed=_seed_int(seeds[k])))

        self.actor, self.critic1, self.critic2 = net(0), net(1), net(2)
        self.target1, self.target2 = self.critic1.copy(), self.critic2.copy()
        self.opt_actor = Adam(self.actor.params.size, config.lr)
        self.opt_critic1 = Adam(self.critic1.params.size, config.lr)
        self.opt_critic2 = Adam(self.critic2.params.size, config.lr)
        self.temp = TemperatureState.create(n_actions, config.initial_alpha, config.entropy_discount,
                                            config.alpha_lr)
        self.action_rng = np.random.default_rng(seeds[3])
        self.buffer_seed = seeds[4]
        self.env_seed = _seed_int(seeds[5])
        self.eval_seed = _seed_int(seeds[6])
        self.gradient_steps_done = 0

    @property
    def alpha(self) -> float:
        return self.temp.alpha

    def act(self, obs) -> int:
        p = action_probs(self.actor, obs)
        return int(min(np.searchsorted(np.cumsum(p), self.action_rng.random(), side="right"),
                       p.size - 1))

    def actor_terms(self, states, logits=None, cache=None):
        """Actor loss on ``states`` with the current networks; returns ``(result, cache)``."""
        cfg = self.config
        q = 0.5 * (self.critic1.forward(states, check=False) + self.critic2.forward(states, check=False))
        target_q = None
        if cfg.target_source is TargetSource.TARGET:
            target_q = 0.5 * (self.target1.forward(states, check=False)
                              + self.target2.forward(states, check=False))
        if logits is None:
            logits, cache = self.actor.forward(states, return_cache=True)
        return actor_loss(logits, q, self.temp.alpha, cfg.variant, target_q), cache

    def update(self, batch) -> dict:
        """One gradient step on critics, actor and temperature."""
        cfg = self.config
        alpha = self.temp.alpha

        # one actor pass over [s; s'] (the actor does not change before its own step)
        B = batch.states.shape[0]
        both = np.concatenate([batch.states, batch.next_states])
        logits_all, cache_all = self.actor.forward(both, return_cache=True)
        logits, cache_a = logits_all[:B], [c[:B] for c in cache_all]

        # critic targets from target critics and the current actor at s'
        probs_next, logp_next = policy_terms(logits_all[B:])
        nxt = batch.next_states
        v_next = soft_state_value(probs_next, logp_next, self.target1.forward(nxt, check=False),
                                  self.target2.forward(nxt, check=False), alpha, cfg.aggregation)
        y = critic_targets(batch.rewards, batch.dones, v_next, cfg.gamma)

        q1, cache1 = self.critic1.forward(batch.states, return_cache=True, check=False)
        q2, cache2 = self.critic2.forward(batch.states, return_cache=True, check=False)
        c_loss, (g1, g2) = critic_loss([q1, q2], batch.actions, y)
        if not math.isfinite(c_loss):
            raise NumericalError("critic loss is not finite", {"step": self.gradient_steps_done})
        self.opt_critic1.step(self.critic1.params, self.critic1.backward(batch.states, g1, cache1))
        self.opt_critic2.step(self.critic2.params, self.critic2.backward(batch.states, g2, cache2))

        # actor against the freshly updated online critics
        res, cache_a = self.actor_terms(batch.states, logits, cache_a)
        self.opt_actor.step(self.actor.params, self.actor.backward(batch.states, res.grad_logits, cache_a))

        # temperature from the pre-update actor probabilities
        self.temp = temperature_update(self.temp, res.probs, res.logp)

        self.gradient_steps_done += 1
        if self.gradient_steps_done % cfg.target_update_period == 0:
            target_update(self.critic1, self.target1, cfg.tau)
            target_update(self.critic2, self.target2, cfg.tau)

        return {
            "critic_loss": c_loss,
            "actor_loss": res.loss,
            "entropy": float(np.mean(entropy(res.probs, res.logp))),
            "lam": res.lam,
            "ev_mean_gap": float(np.mean(res.mean_gap)),
            "ev_var_gap": float(np.mean(res.var_gap)),
            "q_mean": float(np.mean(res.expected_q)),
        }

    def networks(self) -> dict:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "target1": self.target1, "target2": self.target2}

    def save(self, path, step: int):
        extra = {"step": step, "log_alpha": self.temp.log_alpha, "config": self.config.to_dict(),
                 "gradient_steps": self.gradient_steps_done, "eval_seed": self.eval_seed}
        opts = {"actor": self.opt_actor, "critic1": self.opt_critic1, "critic2": self.opt_critic2}
        return save_checkpoint(path, self.networks(), opts, extra)


def load_actor(path) -> tuple[Network, dict]:
    nets, _, extra = load_checkpoint(path)
    if "actor" not in nets:
        raise UsageError(f"checkpoint {path} has no actor network")
    return nets["actor"], extra


class _Window:
    """Running sums of per-update diagnostics between two evaluation points."""

    def __init__(self):
        self.n = 0
        self.sums = {"entropy": 0.0, "ev_mean_gap": 0.0, "ev_var_gap": 0.0, "q_mean": 0.0}
        self.lam_sum = 0.0
        self.lam_n = 0

    def add(self, diag):
        self.n += 1
        for k in self.sums:
            self.sums[k] += diag[k]
        if diag["lam"] is not None:
            self.lam_sum += float(np.sum(np.abs(diag["lam"])))
            self.lam_n += diag["lam"].size

    def means(self) -> dict:
        out = {k: (v / self.n if self.n else None) for k, v in self.sums.items()}
        out["lambda_mean"] = self.lam_sum / self.lam_n if self.lam_n else None
        return out


@dataclass
class TrainResult:
    agent: Agent
    records: list = field(default_factory=list)
    lambda_min: float | None = None
    lambda_max: float | None = None
    lambda_count: int = 0
    episodes: int = 0


class MetricsWriter:
    """Appends records to ``metrics.jsonl`` and ``metrics.csv`` in the same column order."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.jsonl = self.dir / "metrics.jsonl"
        self.csv = self.dir / "metrics.csv"
        self.jsonl.write_text("")
        self.csv.write_text(",".join(METRIC_FIELDS) + "\n")

    def write(self, record: dict):
        with self.jsonl.open("a") as f:
            f.write(json.dumps({k: record[k] for k in METRIC_FIELDS}) + "\n")
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(
            ["" if record[k] is None else (repr(record[k]) if isinstance(record[k], float) else record[k])
             for k in METRIC_FIELDS]
        )
        with self.csv.open("a") as f:
            f.write(buf.getvalue())


def train(config: AgentConfig, env=None, out_dir=None, on_eval=None) -> TrainResult:
    """Run the full off-policy loop for ``config.total_steps`` environment steps.

    Args:
        config: validated configuration.
        env: training environment; built from ``config.env`` when omitted.
        out_dir: if given, metrics files and checkpoints are written there.
        on_eval: optional callback ``(step, agent, record)`` after each evaluation.

    Raises:
        EnvFault: the environment raised; ``dump`` has the loop state.
        NumericalError: a loss or update went non-finite.
    """
    env = make_env(config.env) if env is None else env
    eval_env = make_env(config.env)
    obs_dim, n_actions = env.observation_dim, env.action_count
    agent = Agent(config, obs_dim, n_actions)
    buffer = ReplayBuffer(config.buffer_capacity, obs_dim, n_actions, seed=agent.buffer_seed)
    warm_rng = np.random.default_rng(agent.env_seed + 1)
    writer = MetricsWriter(out_dir) if out_dir is not None else None
    ckpt_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None
    result = TrainResult(agent)
    window = _Window()

    obs = env.reset(agent.env_seed)
    last_action = None
    for step in range(1, config.total_steps + 1):
        if step <= config.warmup:
            action = int(warm_rng.integers(n_actions))
        else:
            action = agent.act(obs)
        last_action = action
        try:
            res = env.step(action)
        except UsageError:
            raise
        except Exception as exc:  # surface env bugs with enough context to replay
            raise EnvFault(f"environment failed at step {step}: {exc}", {
                "step": step, "action": last_action, "obs": np.asarray(obs).tolist(),
                "episodes": result.episodes, "config": config.to_dict(),
            }) from exc
        buffer.add(obs, action, res.reward, res.obs, res.terminated)
        obs = res.obs
        if res.done:
            result.episodes += 1
            obs = env.reset()

        if step > config.warmup and len(buffer) >= config.batch_size:
            for _ in range(config.gradient_steps):
                diag = agent.update(buffer.sample(config.batch_size))
                window.add(diag)
                lam = diag["lam"]
                if lam is not None:
                    lo, hi = float(lam.min()), float(lam.max())
                    result.lambda_min = lo if result.lambda_min is None else min(result.lambda_min, lo)
                    result.lambda_max = hi if result.lambda_max is None else max(result.lambda_max, hi)
                    result.lambda_count += lam.size

        if step % config.eval_interval == 0 or step == config.total_steps:
            stats = evaluate(agent.actor, eval_env, config.eval_episodes, "greedy",
                             seed=agent.eval_seed)
            record = {"step": step, "variant": config.variant.label, "seed": config.seed,
                      "eval_return_mean": stats.mean, "eval_return_std": stats.std,
                      "alpha": agent.alpha, **window.means()}
            record = {k: record[k] for k in METRIC_FIELDS}
            result.records.append(record)
            log.info("step %d  return %.3f  alpha %.4g", step, stats.mean, agent.alpha)
            if writer:
                writer.write(record)
            if on_eval:
                on_eval(step, agent, record)
            window = _Window()

        if ckpt_dir is not None and config.checkpoint_interval and step % config.checkpoint_interval == 0:
            agent.save(ckpt_dir / f"step{step}.json", step)

    if ckpt_dir is not None:
        agent.save(ckpt_dir / "final.json", config.total_steps)
    return result
