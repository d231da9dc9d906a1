"""PPO learner: Gaussian policy with state-independent log-std, separate
value net, generalized advantage estimation, and the clipped surrogate
update with advantage normalization."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..autodiff import Adam, Tensor, minimum
from ..errors import NumericFailure, ValidationError
from ..mlp import Mlp

LOG_2PI = float(np.log(2.0 * np.pi))
POLICY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PpoConfig:
    clip_ratio: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 3e-4
    epochs: int = 4
    minibatch: int = 512
    rollout_steps: int = 64
    entropy_coef: float = 0.002
    value_coef: float = 0.5
    init_log_std: float = -1.2
    log_std_range: tuple[float, float] = (-2.5, -0.5)
    max_grad_norm: float = 1.0
    hidden: tuple[int, ...] = (256, 256)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValidationError("discount gamma must be in (0, 1]")
        if self.clip_ratio <= 0.0:
            raise ValidationError("clip ratio must be positive")


class PolicyValue:
    """Actor (mean + global log-std) and critic over flat observations."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: PpoConfig,
                 rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.cfg = cfg
        self.policy = Mlp(obs_dim, act_dim, cfg.hidden, rng)
        self.log_std = Tensor(np.full(act_dim, cfg.init_log_std), requires_grad=True)
        self.value = Mlp(obs_dim, 1, cfg.hidden, rng)

    def parameters(self) -> list[Tensor]:
        return [*self.policy.params, self.log_std, *self.value.params]

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        return self.policy.forward_np(obs)

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        """Sample actions; returns (action, log_prob, value)."""
        mean = self.policy.forward_np(obs)
        std = np.exp(self.log_std.data)
        noise = rng.standard_normal(mean.shape)
        action = mean + std * noise
        logp = -0.5 * np.sum(noise ** 2, axis=-1) \
            - np.sum(self.log_std.data) - 0.5 * self.act_dim * LOG_2PI
        val = self.value.forward_np(obs)[..., 0]
        return action, logp, val

    def value_np(self, obs: np.ndarray) -> np.ndarray:
        return self.value.forward_np(obs)[..., 0]

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.policy.param_vector(), self.log_std.data,
                               self.value.param_vector()])

    def load_param_vector(self, vec: np.ndarray) -> None:
        np_pol = self.policy.param_count
        self.policy.load_param_vector(vec[:np_pol])
        self.log_std.data = vec[np_pol:np_pol + self.act_dim].copy()
        self.value.load_param_vector(vec[np_pol + self.act_dim:])

    def param_hash(self) -> str:
        import hashlib
        return hashlib.sha256(self.param_vector().astype("<f8").tobytes()).hexdigest()[:16]


@dataclass
class RolloutBuffer:
    obs: np.ndarray       # (T, N, O)
    actions: np.ndarray   # (T, N, A)
    rewards: np.ndarray   # (T, N)
    dones: np.ndarray     # (T, N) episode ended at this step
    values: np.ndarray    # (T, N)
    logp: np.ndarray      # (T, N)
    last_value: np.ndarray  # (N,) bootstrap for the step after the buffer


def gae(buf: RolloutBuffer, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns, shapes (T, N)."""
    t_len, n = buf.rewards.shape
    adv = np.zeros((t_len, n))
    last = np.zeros(n)
    for t in reversed(range(t_len)):
        nonterm = 1.0 - buf.dones[t].astype(np.float64)
        next_v = buf.last_value if t == t_len - 1 else buf.values[t + 1]
        delta = buf.rewards[t] + gamma * next_v * nonterm - buf.values[t]
        last = delta + gamma * lam * nonterm * last
        adv[t] = last
    return adv, adv + buf.values


def ppo_update(pv: PolicyValue, buf: RolloutBuffer, cfg: PpoConfig,
               rng: np.random.Generator, opt: Adam | None = None) -> dict:
    """Clipped-surrogate update over the buffer; returns statistics."""
    adv, returns = gae(buf, cfg.gamma, cfg.lam)
    t_len, n, _ = buf.obs.shape
    obs = buf.obs.reshape(t_len * n, -1)
    actions = buf.actions.reshape(t_len * n, -1)
    logp_old = buf.logp.reshape(-1)
    adv = adv.reshape(-1)
    returns = returns.reshape(-1)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    opt = opt or Adam(pv.parameters(), lr=cfg.lr)
    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_frac": [],
             "clip_inequality_ok": True}
    total = obs.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(total)
        for at in range(0, total, cfg.minibatch):
            idx = order[at:at + cfg.minibatch]
            mb_obs = obs[idx]
            mb_act = actions[idx]
            mb_adv = adv[idx]
            mb_ret = returns[idx]
            mb_logp_old = logp_old[idx]

            mean = pv.policy.forward_t(Tensor(mb_obs))
            inv_std = (-pv.log_std).exp()
            z = (Tensor(mb_act) - mean) * inv_std
            logp = (z * z).sum(axis=-1) * (-0.5) - pv.log_std.sum() \
                - 0.5 * pv.act_dim * LOG_2PI
            ratio = (logp - Tensor(mb_logp_old)).exp()
            surr1 = ratio * Tensor(mb_adv)
            surr2 = ratio.clip(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * Tensor(mb_adv)
            objective = minimum(surr1, surr2)
            if np.any(objective.data > surr1.data + 1e-12):
                stats["clip_inequality_ok"] = False
            policy_loss = -objective.mean()
            v = pv.value.forward_t(Tensor(mb_obs))[:, 0]
            dv = v - Tensor(mb_ret)
            value_loss = (dv * dv).mean()
            entropy = pv.log_std.sum() + 0.5 * pv.act_dim * (1.0 + LOG_2PI)
            loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
            if not np.isfinite(float(loss.data)):
                raise NumericFailure("PPO update loss is non-finite")
            opt.zero_grad()
            loss.backward()
            _clip_grad_norm(pv.parameters(), cfg.max_grad_norm)
            opt.step()
            np.clip(pv.log_std.data, *cfg.log_std_range, out=pv.log_std.data)
            stats["policy_loss"].append(float(policy_loss.data))
            stats["value_loss"].append(float(value_loss.data))
            stats["entropy"].append(float(entropy.data))
            clipped = np.abs(ratio.data - 1.0) > cfg.clip_ratio
            stats["clip_frac"].append(float(np.mean(clipped)))
    return stats


def _clip_grad_norm(params: list[Tensor], max_norm: float) -> None:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale


# ---- policy files -------------------------------------------------------------------


def save_policy(path, pv: PolicyValue) -> None:
    header = {
        "format_version": POLICY_FORMAT_VERSION,
        "obs_dim": pv.obs_dim,
        "act_dim": pv.act_dim,
        "hidden": list(pv.cfg.hidden),
        "param_count": int(pv.param_vector().size),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(pv.param_vector().astype("<f8").tobytes())


def load_policy(path, cfg: PpoConfig | None = None) -> PolicyValue:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        if header.get("format_version") != POLICY_FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported policy format_version")
        blob = fh.read(header["param_count"] * 8)
    cfg = cfg or PpoConfig(hidden=tuple(header["hidden"]))
    if tuple(header["hidden"]) != cfg.hidden:
        cfg = PpoConfig(**{**cfg.__dict__, "hidden": tuple(header["hidden"])})
    pv = PolicyValue(header["obs_dim"], header["act_dim"], cfg, np.random.default_rng(0))
    pv.load_param_vector(np.frombuffer(blob, dtype="<f8").copy())
    return pv
