"""PPO with an added range-supervision term on the policy mean.

The per-step loss, minimized, is::

    -clip_surrogate + c1 * td_error**2 + c2 * range_violation(mu)**2

where the last term is only active for ``Case.CASE3``. ``Case.CASE2``
instead subtracts the same quadratic, evaluated at the sampled action, from
the reward. ``Case.CASE1`` uses neither.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import numcore, policy
from .envsim import ArbitrageEnv, FeasibleRange
from .errors import ContractViolation, TrainingFailure
from .numcore import AdamState
from .policy import HiddenState, NetworkParams, Observation


class Case(IntEnum):
    CASE1 = 1  # plain PPO, env clamps infeasible actions
    CASE2 = 2  # range violation of the sampled action penalised in the reward
    CASE3 = 3  # range violation of the policy mean penalised in the loss


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    c1: float = 0.5
    c2: float = 10.0
    epochs_per_update: int = 10
    lr: float = 1e-3
    bptt_window: int = 64  # <= 0 means full-episode BPTT
    num_minibatches: int = 1
    case: Case = Case.CASE3
    penalty_coeff: float | None = None  # Case 2 only; None means c2
    normalize_advantages: bool = True
    critic_target: str = "td"  # "td": r + gamma * V_old(s'), "gae": GAE return
    max_grad_norm: float | None = None

    def __post_init__(self):
        self.case = Case(self.case)
        if not 0 < self.gamma <= 1:
            raise ContractViolation(f"gamma must be in (0, 1], got {self.gamma}")
        if not self.clip_eps > 0:
            raise ContractViolation("clip_eps must be positive")
        if self.c1 < 0 or self.c2 < 0:
            raise ContractViolation("c1 and c2 must be non-negative")
        if self.epochs_per_update < 0 or self.num_minibatches < 1:
            raise ContractViolation("epochs_per_update >= 0 and num_minibatches >= 1 required")
        if self.critic_target not in ("td", "gae"):
            raise ContractViolation(f"unknown critic_target {self.critic_target!r}")

    @property
    def penalty(self) -> float:
        return self.c2 if self.penalty_coeff is None else self.penalty_coeff


# --- loss terms -------------------------------------------------------------

def actor_term(log_prob_new, log_prob_old, advantage, eps):
    """Clipped surrogate ``min(R*A, clip(R, 1-eps, 1+eps)*A)``; to be maximized."""
    r = np.exp(np.asarray(log_prob_new) - np.asarray(log_prob_old))
    out = np.minimum(r * advantage, np.clip(r, 1.0 - eps, 1.0 + eps) * advantage)
    return float(out) if out.ndim == 0 else out


def critic_term(reward, value_next, value, gamma):
    d = np.asarray(reward) + gamma * np.asarray(value_next) - np.asarray(value)
    out = d * d
    return float(out) if out.ndim == 0 else out


def _range_violation(x, p_c, p_d):
    lo = np.minimum(np.asarray(x) - p_c, 0.0)
    hi = np.minimum(p_d - np.asarray(x), 0.0)
    return lo, hi


def supervising_term(mu, rng_: FeasibleRange | tuple):
    """Zero inside ``[p_c_bar, p_d_bar]``, squared distance to the range outside."""
    p_c, p_d = (rng_.p_c_bar, rng_.p_d_bar) if isinstance(rng_, FeasibleRange) else rng_
    lo, hi = _range_violation(mu, p_c, p_d)
    out = lo * lo + hi * hi
    return float(out) if out.ndim == 0 else out


def supervising_grad(mu, p_c, p_d):
    lo, hi = _range_violation(mu, p_c, p_d)
    return 2.0 * lo - 2.0 * hi


def case2_shaped_reward(raw_reward, action, rng_: FeasibleRange, penalty_coeff):
    return raw_reward - penalty_coeff * supervising_term(action, rng_)


# --- advantages -------------------------------------------------------------

def compute_gae(rewards, values, gamma, lam, last_value=0.0):
    """GAE over one episode. The value after the final step is ``last_value`` (0 = terminal)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(rewards) == 0:
        raise ContractViolation("empty episode")
    if rewards.shape != values.shape:
        raise ContractViolation("rewards and values differ in length")
    T = len(rewards)
    adv = np.empty(T)
    next_v = last_value
    running = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_v - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_v = values[t]
    return adv, adv + values


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    std = adv.std()
    if std == 0:
        return adv - adv.mean()
    return (adv - adv.mean()) / std


# --- rollouts ---------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    obs: Observation
    action: float
    log_prob_old: float
    reward: float
    value: float
    mu_old: float
    range: FeasibleRange
    done: bool


@dataclass
class RolloutBuffer:
    """One episode of transitions stored column-wise.

    ``hidden`` holds the recurrent state *before* each step, shape (T, 4, H),
    in the order (h1, c1, h2, c2).
    """

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    raw_rewards: np.ndarray
    values: np.ndarray
    mus: np.ndarray
    p_c: np.ndarray
    p_d: np.ndarray
    dones: np.ndarray
    hidden: np.ndarray
    profit_usd: float = 0.0
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)

    def transitions(self):
        for t in range(len(self)):
            yield Transition(
                Observation(*self.obs[t]), self.actions[t], self.log_probs[t], self.rewards[t],
                self.values[t], self.mus[t], FeasibleRange(self.p_c[t], self.p_d[t]), bool(self.dones[t]),
            )

    def compute_advantages(self, gamma, lam):
        self.advantages, self.returns = compute_gae(self.rewards, self.values, gamma, lam)

    def clear(self):
        for name in ("obs", "actions", "log_probs", "rewards", "raw_rewards", "values",
                     "mus", "p_c", "p_d", "dones", "hidden"):
            arr = getattr(self, name)
            setattr(self, name, arr[:0])
        self.advantages = self.returns = None


def collect_rollout(env: ArbitrageEnv, params: NetworkParams, config: PpoConfig,
                    rng: np.random.Generator) -> RolloutBuffer:
    """One pass over the env's price segment, sampling actions from the policy."""
    T = len(env)
    H = params.hidden_size
    buf = dict(
        obs=np.empty((T, 2)), actions=np.empty(T), log_probs=np.empty(T), rewards=np.empty(T),
        raw_rewards=np.empty(T), values=np.empty(T), mus=np.empty(T), p_c=np.empty(T),
        p_d=np.empty(T), dones=np.zeros(T, dtype=bool), hidden=np.empty((T, 4, H)),
    )
    obs = env.reset()
    hidden = HiddenState.zeros(H)
    sigma = params.sigma
    penalty = config.penalty
    for t in range(T):
        frange = env.feasible_range()
        buf["hidden"][t] = hidden
        mu, value, hidden, _ = policy.forward(obs, hidden, params)
        a = policy.sample_action(mu, sigma, rng)
        lp = policy.log_prob(mu, sigma, a)
        buf["obs"][t] = obs
        obs, reward, done, _ = env.step(a)
        buf["raw_rewards"][t] = reward
        if config.case is Case.CASE2:
            reward = case2_shaped_reward(reward, a, frange, penalty)
        buf["actions"][t] = a
        buf["log_probs"][t] = lp
        buf["rewards"][t] = reward
        buf["values"][t] = value
        buf["mus"][t] = mu
        buf["p_c"][t] = frange.p_c_bar
        buf["p_d"][t] = frange.p_d_bar
        buf["dones"][t] = done
    return RolloutBuffer(**buf, profit_usd=env.state.total_profit_usd)


# --- minibatches and loss ---------------------------------------------------

@dataclass
class Batch:
    """A set of BPTT windows laid out time-major, shape (L, B)."""

    obs: np.ndarray  # (L, B, 2)
    hidden0: HiddenState  # each (B, H)
    actions: np.ndarray
    log_probs_old: np.ndarray
    advantages: np.ndarray
    rewards: np.ndarray
    values_next: np.ndarray  # old-policy value of the following state; 0 after terminal
    returns: np.ndarray
    p_c: np.ndarray
    p_d: np.ndarray
    mask: np.ndarray

    def select(self, idx) -> "Batch":
        return Batch(
            self.obs[:, idx], HiddenState(*(h[idx] for h in self.hidden0)),
            *(getattr(self, n)[:, idx] for n in
              ("actions", "log_probs_old", "advantages", "rewards", "values_next", "returns", "p_c", "p_d", "mask")),
        )


def make_windows(buffer: RolloutBuffer, window: int, advantages=None) -> Batch:
    """Cut the episode into consecutive windows; the last one is zero-padded and masked."""
    T = len(buffer)
    if buffer.advantages is None:
        raise ContractViolation("advantages must be computed before building minibatches")
    adv = buffer.advantages if advantages is None else advantages
    L = T if window <= 0 else min(window, T)
    nw = math.ceil(T / L)
    pad = nw * L - T

    def lay(x):
        x = np.asarray(x, dtype=np.float64)
        x = np.concatenate([x, np.zeros((pad,) + x.shape[1:])])
        return x.reshape((nw, L) + x.shape[1:]).swapaxes(0, 1)

    values_next = np.append(buffer.values[1:], 0.0)
    values_next[buffer.dones] = 0.0
    starts = buffer.hidden[::L]  # (nw, 4, H)
    hidden0 = HiddenState(*(np.ascontiguousarray(starts[:, k]) for k in range(4)))
    return Batch(
        lay(buffer.obs), hidden0, lay(buffer.actions), lay(buffer.log_probs), lay(adv),
        lay(buffer.rewards), lay(values_next), lay(buffer.returns), lay(buffer.p_c), lay(buffer.p_d),
        lay(np.ones(T)),
    )


def _loss_pieces(params: NetworkParams, batch: Batch, config: PpoConfig):
    mu, value, _, caches = policy.sequence_forward(batch.obs, batch.hidden0, params)
    sigma = params.sigma
    n = batch.mask.sum()
    m = batch.mask / n

    lp_new = policy.log_prob(mu, sigma, batch.actions)
    ratio = np.exp(lp_new - batch.log_probs_old)
    A = batch.advantages
    eps = config.clip_eps
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    surr1, surr2 = ratio * A, clipped * A
    actor = np.minimum(surr1, surr2)
    # d actor / d ratio: unclipped branch, or clipped branch inside the clip interval
    inside = (ratio >= 1.0 - eps) & (ratio <= 1.0 + eps)
    d_ratio = np.where((surr1 <= surr2) | inside, A, 0.0)
    d_actor_mu = d_ratio * ratio * (batch.actions - mu) / (sigma * sigma)

    if config.critic_target == "td":
        target = batch.rewards + config.gamma * batch.values_next
    else:
        target = batch.returns
    td = target - value
    critic = td * td

    sup = supervising_term(mu, (batch.p_c, batch.p_d))
    use_sup = config.case is Case.CASE3
    terms = {
        "actor": float((actor * m).sum()),
        "critic": float((critic * m).sum()),
        "supervising": float((sup * m).sum()),
    }
    loss = -terms["actor"] + config.c1 * terms["critic"]
    grad_mu = -d_actor_mu
    if use_sup:
        loss += config.c2 * terms["supervising"]
        grad_mu = grad_mu + config.c2 * supervising_grad(mu, batch.p_c, batch.p_d)
    grad_mu = grad_mu * m
    grad_value = config.c1 * (-2.0 * td) * m
    return loss, terms, caches, grad_mu, grad_value


def total_loss(params: NetworkParams, batch: Batch, config: PpoConfig) -> float:
    """Mean over valid steps of ``-actor + c1*critic (+ c2*supervising in Case 3)``."""
    return _loss_pieces(params, batch, config)[0]


def loss_and_grad(params: NetworkParams, batch: Batch, config: PpoConfig):
    loss, terms, caches, grad_mu, grad_value = _loss_pieces(params, batch, config)
    grads = policy.sequence_backward(grad_mu, grad_value, caches, params)
    return loss, terms, grads


# --- update -----------------------------------------------------------------

@dataclass
class UpdateDiagnostics:
    loss: float
    actor: float
    critic: float
    supervising: float
    grad_steps: int = 0
    history: list = field(default_factory=list)


def _clip_grads(grads, max_norm):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        s = max_norm / (total + 1e-12)
        return {k: g * s for k, g in grads.items()}
    return grads


def update(params: NetworkParams, buffer: RolloutBuffer, config: PpoConfig, adam: AdamState,
           rng: np.random.Generator):
    """Run ``epochs_per_update`` epochs of minibatch Adam steps on one rollout.

    Returns ``(params, adam_state, diagnostics)``. Raises
    :class:`TrainingFailure` on a non-finite loss or gradient.
    """
    if buffer.advantages is None:
        buffer.compute_advantages(config.gamma, config.gae_lambda)
    adv = normalize_advantages(buffer.advantages) if config.normalize_advantages else buffer.advantages
    windows = make_windows(buffer, config.bptt_window, adv)
    nw = windows.mask.shape[1]
    n_mb = min(config.num_minibatches, nw)
    current = params.to_dict()
    net = params
    sums = np.zeros(4)
    steps = 0
    for epoch in range(config.epochs_per_update):
        order = rng.permutation(nw)
        for idx in np.array_split(order, n_mb):
            batch = windows.select(np.sort(idx))
            loss, terms, grads = loss_and_grad(net, batch, config)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingFailure(
                    f"non-finite loss at epoch {epoch}, step {steps}: loss={loss}, terms={terms}"
                )
            if config.max_grad_norm is not None:
                grads = _clip_grads(grads, config.max_grad_norm)
            current, adam = numcore.adam_step(current, grads, adam)
            net = params.with_tensors(current)
            sums += (loss, terms["actor"], terms["critic"], terms["supervising"])
            steps += 1
    mean = sums / max(steps, 1)
    buffer.clear()
    return net, adam, UpdateDiagnostics(*map(float, mean), grad_steps=steps)
