"""Recurrent actor-critic: 2-layer LSTM trunk, tanh actor head, linear critic head.

Observations are ``(soc, normalized price)``. Past actions are not fed back;
they are implied by the SoC trajectory. The Gaussian policy has a fixed
standard deviation ``sigma`` that is never trained.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import numcore
from .errors import ContractViolation, DataError
from .numcore import LstmCellParams

OBS_SIZE = 2
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Observation:
    soc: float
    price_norm: float

    def as_array(self) -> np.ndarray:
        return np.array([self.soc, self.price_norm])


@dataclass
class NetworkParams:
    lstm1: LstmCellParams
    lstm2: LstmCellParams
    actor_W: np.ndarray  # (1, H)
    actor_b: np.ndarray  # (1,)
    critic_W: np.ndarray
    critic_b: np.ndarray
    sigma: float = 0.2
    # fixed input standardization, x = (obs - obs_shift) / obs_scale; not trained
    obs_shift: np.ndarray = field(default_factory=lambda: np.zeros(OBS_SIZE))
    obs_scale: np.ndarray = field(default_factory=lambda: np.ones(OBS_SIZE))

    def __post_init__(self):
        if not self.sigma > 0:
            raise ContractViolation(f"sigma must be positive, got {self.sigma}")
        self.obs_shift = np.asarray(self.obs_shift, dtype=np.float64)
        self.obs_scale = np.asarray(self.obs_scale, dtype=np.float64)
        if self.obs_shift.shape != (OBS_SIZE,) or self.obs_scale.shape != (OBS_SIZE,) or not np.all(self.obs_scale > 0):
            raise ContractViolation("obs_shift/obs_scale must be length-2 with positive scales")
        H = self.lstm1.hidden_size
        if self.lstm2.input_size != H or self.lstm2.hidden_size != H:
            raise ContractViolation("second LSTM layer must map H -> H")

    @property
    def hidden_size(self) -> int:
        return self.lstm1.hidden_size

    @classmethod
    def init(cls, rng: np.random.Generator, hidden_size: int = 16, sigma: float = 0.2) -> "NetworkParams":
        k = 1.0 / math.sqrt(hidden_size)
        return cls(
            LstmCellParams.init(OBS_SIZE, hidden_size, rng),
            LstmCellParams.init(hidden_size, hidden_size, rng),
            rng.uniform(-k, k, (1, hidden_size)),
            np.zeros(1),
            rng.uniform(-k, k, (1, hidden_size)),
            np.zeros(1),
            sigma,
        )

    @classmethod
    def zeros(cls, hidden_size: int = 16, sigma: float = 0.2) -> "NetworkParams":
        return cls(
            LstmCellParams.zeros(OBS_SIZE, hidden_size),
            LstmCellParams.zeros(hidden_size, hidden_size),
            np.zeros((1, hidden_size)),
            np.zeros(1),
            np.zeros((1, hidden_size)),
            np.zeros(1),
            sigma,
        )

    def to_dict(self) -> dict[str, np.ndarray]:
        """Trainable tensors by name (sigma excluded)."""
        return {
            "lstm1.W_ih": self.lstm1.W_ih,
            "lstm1.W_hh": self.lstm1.W_hh,
            "lstm1.b": self.lstm1.b,
            "lstm2.W_ih": self.lstm2.W_ih,
            "lstm2.W_hh": self.lstm2.W_hh,
            "lstm2.b": self.lstm2.b,
            "actor.W": self.actor_W,
            "actor.b": self.actor_b,
            "critic.W": self.critic_W,
            "critic.b": self.critic_b,
        }

    @classmethod
    def from_dict(cls, d, sigma: float, obs_shift=None, obs_scale=None) -> "NetworkParams":
        shift = np.zeros(OBS_SIZE) if obs_shift is None else obs_shift
        scale = np.ones(OBS_SIZE) if obs_scale is None else obs_scale
        return cls(
            LstmCellParams(d["lstm1.W_ih"], d["lstm1.W_hh"], d["lstm1.b"]),
            LstmCellParams(d["lstm2.W_ih"], d["lstm2.W_hh"], d["lstm2.b"]),
            d["actor.W"],
            d["actor.b"],
            d["critic.W"],
            d["critic.b"],
            sigma,
            shift,
            scale,
        )

    def with_tensors(self, d) -> "NetworkParams":
        """Same sigma and input standardization, new trainable tensors."""
        return NetworkParams.from_dict(d, self.sigma, self.obs_shift, self.obs_scale)

    def copy(self) -> "NetworkParams":
        return self.with_tensors({k: v.copy() for k, v in self.to_dict().items()})


class HiddenState(NamedTuple):
    h1: np.ndarray
    c1: np.ndarray
    h2: np.ndarray
    c2: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None) -> "HiddenState":
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(*(np.zeros(shape) for _ in range(4)))


class StepCache(NamedTuple):
    cell1: numcore.LstmCache
    cell2: numcore.LstmCache
    actor: numcore.AffineCache
    critic: numcore.AffineCache
    mu: np.ndarray


def _as_obs_array(obs) -> np.ndarray:
    if isinstance(obs, Observation):
        return obs.as_array()
    return np.asarray(obs, dtype=np.float64)


def forward(obs, hidden: HiddenState, params: NetworkParams):
    """One step of the network. Returns ``(mu, value, hidden', cache)``.

    With a batched observation of shape (B, 2) and hidden of shape (B, H),
    ``mu`` and ``value`` have shape (B,); otherwise they are floats.
    """
    x = (_as_obs_array(obs) - params.obs_shift) / params.obs_scale
    h1, c1, k1 = numcore.lstm_cell_forward(x, hidden.h1, hidden.c1, params.lstm1)
    h2, c2, k2 = numcore.lstm_cell_forward(h1, hidden.h2, hidden.c2, params.lstm2)
    a_out, ka = numcore.affine_forward(h2, params.actor_W, params.actor_b)
    v_out, kv = numcore.affine_forward(h2, params.critic_W, params.critic_b)
    mu = np.tanh(a_out[..., 0])
    value = v_out[..., 0]
    if x.ndim == 1:
        mu, value = float(mu), float(value)
    return mu, value, HiddenState(h1, c1, h2, c2), StepCache(k1, k2, ka, kv, np.asarray(mu))


def sequence_forward(obs_seq: np.ndarray, hidden0: HiddenState, params: NetworkParams):
    """Run the network over ``obs_seq`` of shape (T, ..., 2).

    Returns ``(mu, value, hidden_T, caches)`` with ``mu``/``value`` of shape
    (T, ...).
    """
    T = obs_seq.shape[0]
    mus = np.empty(obs_seq.shape[:-1])
    vals = np.empty(obs_seq.shape[:-1])
    caches = []
    hidden = hidden0
    for t in range(T):
        mu, v, hidden, cache = forward(obs_seq[t], hidden, params)
        mus[t], vals[t] = mu, v
        caches.append(cache)
    return mus, vals, hidden, caches


def sequence_backward(grad_mu: np.ndarray, grad_value: np.ndarray, caches, params: NetworkParams):
    """Backpropagation through time over a window produced by :func:`sequence_forward`.

    Gradients with respect to the window's initial hidden state are dropped
    (truncated BPTT). Returns a dict keyed like :meth:`NetworkParams.to_dict`.
    """
    grads = {k: np.zeros_like(v) for k, v in params.to_dict().items()}
    H = params.hidden_size
    batch_shape = grad_mu.shape[1:]
    dh1 = np.zeros(batch_shape + (H,))
    dc1 = np.zeros_like(dh1)
    dh2 = np.zeros_like(dh1)
    dc2 = np.zeros_like(dh1)
    for t in range(len(caches) - 1, -1, -1):
        k = caches[t]
        g_a = (grad_mu[t] * (1.0 - k.mu * k.mu))[..., None]
        g_v = np.asarray(grad_value[t])[..., None]
        gh_a, gW, gb = numcore.affine_backward(g_a, k.actor)
        grads["actor.W"] += gW
        grads["actor.b"] += gb
        gh_v, gW, gb = numcore.affine_backward(g_v, k.critic)
        grads["critic.W"] += gW
        grads["critic.b"] += gb
        dh2 = dh2 + gh_a + gh_v
        gx2, dh2, dc2, gp2 = numcore.lstm_cell_backward(dh2, dc2, k.cell2, params.lstm2)
        grads["lstm2.W_ih"] += gp2.W_ih
        grads["lstm2.W_hh"] += gp2.W_hh
        grads["lstm2.b"] += gp2.b
        dh1 = dh1 + gx2
        _, dh1, dc1, gp1 = numcore.lstm_cell_backward(dh1, dc1, k.cell1, params.lstm1)
        grads["lstm1.W_ih"] += gp1.W_ih
        grads["lstm1.W_hh"] += gp1.W_hh
        grads["lstm1.b"] += gp1.b
    return grads


def sample_action(mu, sigma: float, rng: np.random.Generator):
    """Draw from N(mu, sigma^2). The result is not clamped."""
    z = rng.standard_normal() if np.ndim(mu) == 0 else rng.standard_normal(np.shape(mu))
    return mu + sigma * z


def log_prob(mu, sigma: float, a):
    if not sigma > 0:
        raise ContractViolation(f"sigma must be positive, got {sigma}")
    d = np.asarray(a) - np.asarray(mu)
    out = -(d * d) / (2.0 * sigma * sigma) - math.log(sigma) - LOG_SQRT_2PI
    return float(out) if np.ndim(out) == 0 else out


def act_deterministic(obs_seq, params: NetworkParams) -> np.ndarray:
    """Policy means over a fixed observation sequence, starting from a zero hidden state."""
    obs_seq = np.asarray(obs_seq, dtype=np.float64)
    mus, _, _, _ = sequence_forward(obs_seq, HiddenState.zeros(params.hidden_size), params)
    return mus


# Checkpoint format, version 1 (all integers little-endian):
#   magic  b"BPPOCKPT"
#   u32    format version
#   u32    number of entries
#   per entry:
#     u16 name length, utf-8 name
#     u8  ndim, ndim x u32 dims
#     prod(dims) x f64 values, row-major
# Entry "sigma" is a 0-d tensor holding the policy standard deviation;
# "obs_shift" and "obs_scale" hold the fixed input standardization.
CHECKPOINT_MAGIC = b"BPPOCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: NetworkParams, path) -> None:
    entries = dict(params.to_dict())
    entries["sigma"] = np.array(params.sigma)
    entries["obs_shift"] = params.obs_shift
    entries["obs_scale"] = params.obs_scale
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<II", CHECKPOINT_VERSION, len(entries))
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> NetworkParams:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, n = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    entries = {}
    try:
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + ln].decode("utf-8")
            pos += ln
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            entries[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    try:
        sigma = float(entries.pop("sigma"))
        shift = entries.pop("obs_shift", None)
        scale = entries.pop("obs_scale", None)
        return NetworkParams.from_dict(entries, sigma, shift, scale)
    except KeyError as exc:
        raise DataError(f"{path}: checkpoint lacks entry {exc.args[0]!r}") from exc
