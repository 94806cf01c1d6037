"""PPO with GAE for asynchronous multi-agent holding decisions."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Adam

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TrainConfig:
    gamma: float = 0.8
    tau: float = 0.95
    epsilon: float = 0.5
    omega1: float = 0.6
    omega2: float = 1.0
    max_hold: float = 180.0
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    minibatch_size: int = 256
    update_passes: int = 4
    hidden: tuple = (64, 64)
    init_log_std: float = math.log(0.3)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self):
        if not (0 <= self.gamma <= 1 and 0 <= self.tau <= 1):
            raise ValueError("gamma and tau must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.max_hold > 0:
            raise ValueError("max_hold must be positive")
        if self.minibatch_size < 1 or self.update_passes < 0:
            raise ValueError("minibatch_size must be >= 1 and update_passes >= 0")
        if self.lr_policy < 0 or self.lr_value < 0:
            raise ValueError("learning rates must be >= 0")
        return self


@dataclass
class Transition:
    actor_state: np.ndarray    # (h-, h+) / S
    critic_state: np.ndarray   # (H / S, nu), length 2N
    action_raw: float          # pre-clip Gaussian sample
    action_delta: float        # clipped to [-1, 1]
    applied_hold: float
    reward: float
    log_prob_old: float
    value_old: float
    decision_time: float
    bus_id: int
    episode: int = 0


@dataclass
class NetworkSnapshots:
    theta_old: object
    phi_old: object

    @classmethod
    def of(cls, theta, phi):
        return cls(theta.copy(), phi.copy())


class ReplayBuffer:
    """Transitions grouped into per-(episode, bus) trajectories."""

    def __init__(self):
        self._traj = {}
        self._bootstrap = {}

    def add(self, tr):
        key = (tr.episode, tr.bus_id)
        seq = self._traj.setdefault(key, [])
        if seq and tr.decision_time <= seq[-1].decision_time:
            raise ValueError("decision times of one bus must be strictly increasing")
        if not -1.0 <= tr.action_delta <= 1.0:
            raise ValueError("action_delta outside [-1, 1]")
        seq.append(tr)

    def set_bootstrap(self, episode, bus_id, value):
        self._bootstrap[(episode, bus_id)] = float(value)

    def trajectories(self):
        """[(transitions, bootstrap_value)] in (episode, bus) order."""
        return [(self._traj[k], self._bootstrap.get(k, 0.0)) for k in sorted(self._traj)]

    def transitions(self):
        return [tr for seq, _ in self.trajectories() for tr in seq]

    def clear(self):
        self._traj.clear()
        self._bootstrap.clear()

    def __len__(self):
        return sum(len(s) for s in self._traj.values())


def forward_policy(theta, actor_state):
    """(mean, log_std) of the action distribution for one state or a batch."""
    y, _ = theta.mean_net.forward(actor_state)
    mean = y[:, 0]
    log_std = np.full_like(mean, theta.log_std[0])
    if np.ndim(actor_state) == 1:
        return float(mean[0]), float(log_std[0])
    return mean, log_std


def forward_value(phi, critic_state):
    y, _ = phi.forward(critic_state)
    v = y[:, 0]
    return float(v[0]) if np.ndim(critic_state) == 1 else v


def sample_action(mean, log_std, rng):
    """(raw Gaussian sample, sample clipped to [-1, 1])."""
    raw = mean + math.exp(log_std) * rng.standard_normal()
    return raw, min(max(raw, -1.0), 1.0)


def log_prob(mean, log_std, action):
    """Gaussian log-density of the (pre-clip) action."""
    z = (np.asarray(action) - mean) * np.exp(-np.asarray(log_std))
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI


def compute_gae(rewards, values, gamma, tau):
    """Advantages A_t = sum_l (gamma tau)^l d_{t+l} with d_k = r_k + gamma V_{k+1} - V_k,
    and returns R_t = A_t + V_t. ``values`` carries the bootstrap V_T last."""
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(v) != len(r) + 1:
        raise ValueError("values must have exactly one more entry than rewards")
    adv = np.zeros_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * v[t + 1] - v[t] + gamma * tau * acc
        adv[t] = acc
    return adv, adv + v[:-1]


def reward(obs_next, applied_hold, config, headway_scale=153.5):
    """omega1 exp(-|h- - h+| / S) + omega2 exp(-hold / H_max)."""
    gap = abs(obs_next.h_minus - obs_next.h_plus) / headway_scale
    return config.omega1 * math.exp(-gap) + config.omega2 * math.exp(-applied_hold / config.max_hold)


@dataclass
class Batch:
    actor_states: np.ndarray
    critic_states: np.ndarray
    actions: np.ndarray       # raw actions
    log_prob_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.actions)

    def subset(self, idx):
        return Batch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    @classmethod
    def from_transitions(cls, transitions, advantages, returns):
        return cls(np.array([t.actor_state for t in transitions], dtype=float),
                   np.array([t.critic_state for t in transitions], dtype=float),
                   np.array([t.action_raw for t in transitions], dtype=float),
                   np.array([t.log_prob_old for t in transitions], dtype=float),
                   np.asarray(advantages, dtype=float), np.asarray(returns, dtype=float))


def ppo_policy_loss(batch, theta, config):
    """Clipped-surrogate loss -sum min(rho A, clip(rho, 1-eps, 1+eps) A) and its gradient.

    Samples whose probability ratio is not finite are skipped and logged.
    Returns (loss, grads) with grads aligned to ``theta.params``.
    """
    y, acts = theta.mean_net.forward(batch.actor_states)
    mean = y[:, 0]
    ls = theta.log_std[0]
    sigma2 = math.exp(2.0 * ls)
    diff = batch.actions - mean
    lp = -0.5 * diff * diff / sigma2 - ls - 0.5 * LOG_2PI
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(lp - batch.log_prob_old)
    ok = np.isfinite(ratio)
    if not ok.all():
        log.warning("ppo_policy_loss: skipped %d samples with non-finite ratio", int((~ok).sum()))
    ratio = np.where(ok, ratio, 1.0)
    adv = np.where(ok, batch.advantages, 0.0)
    eps = config.epsilon
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    loss = -float(np.sum(np.minimum(unclipped, clipped)))

    # zero gradient where the clipped branch is the (strictly) smaller one
    active = ~(((adv > 0) & (ratio > 1.0 + eps)) | ((adv < 0) & (ratio < 1.0 - eps)))
    dlogp = np.where(active, -adv * ratio, 0.0)
    d_mean = dlogp * diff / sigma2
    d_logstd = np.sum(dlogp * (diff * diff / sigma2 - 1.0))
    grads = theta.mean_net.backward(acts, d_mean[:, None])
    return loss, grads + [np.array([d_logstd])]


def value_loss(batch, phi):
    """0.5 * sum |V(s_t) - R_t| and its gradient w.r.t. ``phi.params``."""
    y, acts = phi.forward(batch.critic_states)
    err = y[:, 0] - batch.returns
    loss = 0.5 * float(np.sum(np.abs(err)))
    grads = phi.backward(acts, 0.5 * np.sign(err)[:, None])
    return loss, grads


class Optimizers:
    def __init__(self, theta, phi, config):
        self.policy = Adam(theta.params, config.lr_policy)
        self.value = Adam(phi.params, config.lr_value)


def train_epoch(buffer, theta, phi, snapshots, config, rng, optim=None):
    """One PPO update over everything in ``buffer``; clears it afterwards.

    Advantages come from the values recorded at collection time (the old critic).
    theta and phi are updated in place; the snapshots are refreshed at the end.
    """
    diag = {"n_transitions": len(buffer), "policy_loss": math.nan, "value_loss": math.nan,
            "mean_reward": math.nan, "clip_fraction": math.nan, "warning": ""}
    if len(buffer) == 0:
        diag["warning"] = "empty buffer"
        log.warning("train_epoch called with an empty buffer")
        return theta, phi, snapshots, diag
    optim = optim or Optimizers(theta, phi, config)

    trans, adv, ret = [], [], []
    for seq, bootstrap in buffer.trajectories():
        values = [t.value_old for t in seq] + [bootstrap]
        a, r = compute_gae([t.reward for t in seq], values, config.gamma, config.tau)
        trans += seq
        adv.append(a)
        ret.append(r)
    batch = Batch.from_transitions(trans, np.concatenate(adv), np.concatenate(ret))
    diag["mean_reward"] = float(np.mean([t.reward for t in trans]))

    n = len(batch)
    p_losses, v_losses, clipfrac = [], [], []
    for _ in range(config.update_passes):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            mb = batch.subset(order[start:start + config.minibatch_size])
            pl, pg = ppo_policy_loss(mb, theta, config)
            vl, vg = value_loss(mb, phi)
            optim.policy.step(theta.params, pg)
            optim.value.step(phi.params, vg)
            p_losses.append(pl / len(mb))
            v_losses.append(vl / len(mb))
            mean, ls = forward_policy(theta, mb.actor_states)
            ratio = np.exp(log_prob(mean, ls, mb.actions) - mb.log_prob_old)
            clipfrac.append(float(np.mean(np.abs(ratio - 1.0) > config.epsilon)))
    if p_losses:
        diag["policy_loss"] = float(np.mean(p_losses))
        diag["value_loss"] = float(np.mean(v_losses))
        diag["clip_fraction"] = float(np.mean(clipfrac))
    new = NetworkSnapshots.of(theta, phi)
    snapshots.theta_old, snapshots.phi_old = new.theta_old, new.phi_old
    buffer.clear()
    return theta, phi, snapshots, diag
