"""Small differentiable numerical core.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every layer
has a hand-derived backward pass; there is no autodiff graph.

LSTM gate order is fixed as (input, forget, cell-candidate, output), i.e.
rows ``[0:H]``, ``[H:2H]``, ``[2H:3H]``, ``[3H:4H]`` of ``W_ih``, ``W_hh``
and ``b``. All cell and affine functions accept either a single vector or a
leading batch dimension.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ContractViolation, NumericError, ShapeError


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows, unlike 1 / (1 + exp(-z))
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmCellParams:
    W_ih: np.ndarray  # (4H, D)
    W_hh: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        four_h, d = self.W_ih.shape
        if four_h % 4:
            raise ShapeError(f"W_ih has {four_h} rows, not a multiple of 4")
        h = four_h // 4
        if self.W_hh.shape != (four_h, h):
            raise ShapeError(f"W_hh shape {self.W_hh.shape}, expected {(four_h, h)}")
        if self.b.shape != (four_h,):
            raise ShapeError(f"b shape {self.b.shape}, expected {(four_h,)}")

    @property
    def input_size(self) -> int:
        return self.W_ih.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_hh.shape[1]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmCellParams":
        h4 = 4 * hidden_size
        return cls(np.zeros((h4, input_size)), np.zeros((h4, hidden_size)), np.zeros(h4))

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "LstmCellParams":
        """Uniform(-1/sqrt(H), 1/sqrt(H)) weights and biases, forget bias 1.0."""
        k = 1.0 / np.sqrt(hidden_size)
        h4 = 4 * hidden_size
        W_ih = rng.uniform(-k, k, (h4, input_size))
        W_hh = rng.uniform(-k, k, (h4, hidden_size))
        b = rng.uniform(-k, k, h4)
        b[hidden_size:2 * hidden_size] = 1.0
        return cls(W_ih, W_hh, b)


@dataclass
class LstmCache:
    params: LstmCellParams
    x: np.ndarray
    h: np.ndarray
    c: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


def lstm_cell_forward(x, h, c, p: LstmCellParams):
    """One LSTM step. Returns ``(h_new, c_new, cache)``."""
    H = p.hidden_size
    if x.shape[-1] != p.input_size:
        raise ShapeError(f"input has size {x.shape[-1]}, cell expects {p.input_size}")
    if h.shape[-1] != H or c.shape != h.shape:
        raise ShapeError(f"hidden/cell shapes {h.shape}/{c.shape}, cell expects size {H}")
    if x.shape[:-1] != h.shape[:-1]:
        raise ShapeError(f"batch shapes differ: {x.shape[:-1]} vs {h.shape[:-1]}")
    z = x @ p.W_ih.T + h @ p.W_hh.T + p.b
    s = sigmoid(z)
    i = s[..., :H]
    f = s[..., H:2 * H]
    g = np.tanh(z[..., 2 * H:3 * H])
    o = s[..., 3 * H:]
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    return h_new, c_new, LstmCache(p, x, h, c, i, f, g, o, tanh_c)


def lstm_cell_backward(grad_h_new, grad_c_new, cache: LstmCache, p: LstmCellParams):
    """Backward of :func:`lstm_cell_forward`.

    Returns ``(grad_x, grad_h, grad_c, grad_p)`` where ``grad_p`` is an
    :class:`LstmCellParams` holding parameter gradients summed over the batch.
    """
    if cache.params is not p:
        raise ContractViolation("cache was produced with a different parameter object")
    if grad_h_new.shape != cache.h.shape or grad_c_new.shape != cache.c.shape:
        raise ContractViolation(
            f"upstream gradient shapes {grad_h_new.shape}/{grad_c_new.shape} "
            f"do not match cached state {cache.h.shape}"
        )
    i, f, g, o, tanh_c = cache.i, cache.f, cache.g, cache.o, cache.tanh_c
    do = grad_h_new * tanh_c
    dc = grad_c_new + grad_h_new * o * (1.0 - tanh_c * tanh_c)
    H = p.hidden_size
    dz = np.empty(dc.shape[:-1] + (4 * H,))
    dz[..., :H] = dc * g * i * (1.0 - i)
    dz[..., H:2 * H] = dc * cache.c * f * (1.0 - f)
    dz[..., 2 * H:3 * H] = dc * i * (1.0 - g * g)
    dz[..., 3 * H:] = do * o * (1.0 - o)
    grad_c = dc * f
    grad_x = dz @ p.W_ih
    grad_h = dz @ p.W_hh
    dz2 = dz.reshape(-1, dz.shape[-1])
    gW_ih = dz2.T @ cache.x.reshape(-1, cache.x.shape[-1])
    gW_hh = dz2.T @ cache.h.reshape(-1, cache.h.shape[-1])
    gb = dz2.sum(axis=0)
    return grad_x, grad_h, grad_c, LstmCellParams(gW_ih, gW_hh, gb)


@dataclass
class AffineCache:
    x: np.ndarray
    W: np.ndarray


def affine_forward(x, W, b):
    """``y = x @ W.T + b`` with ``W`` of shape (out, in). Returns ``(y, cache)``."""
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"x shape {x.shape} incompatible with W shape {W.shape}")
    if b.shape != (W.shape[0],):
        raise ShapeError(f"b shape {b.shape}, expected {(W.shape[0],)}")
    return x @ W.T + b, AffineCache(x, W)


def affine_backward(grad_y, cache: AffineCache):
    """Returns ``(grad_x, grad_W, grad_b)``; parameter gradients are batch sums."""
    W = cache.W
    if grad_y.shape[-1] != W.shape[0] or grad_y.shape[:-1] != cache.x.shape[:-1]:
        raise ShapeError(f"grad_y shape {grad_y.shape} does not match cached output")
    gy = grad_y.reshape(-1, W.shape[0])
    gx = grad_y @ W
    gW = gy.T @ cache.x.reshape(-1, W.shape[1])
    gb = gy.sum(axis=0)
    return gx, gW, gb


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState):
    """Bias-corrected Adam update. Pure: returns ``(new_params, new_state)``."""
    if state.step_count < 0:
        raise ContractViolation("negative Adam step count")
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p.copy()
            if name in state.m:
                new_m[name], new_v[name] = state.m[name], state.v[name]
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    new_state = AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)
    return new_params, new_state


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(
    f: Callable[[dict], float],
    grad_f: Callable[[dict], dict],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare ``grad_f`` against central differences of ``f``, entry by entry.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps entries whose gradient is essentially zero from reporting
    pure rounding noise as a large relative error.
    """
    base = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    analytic = grad_f(base)
    worst = (0.0, "", ())
    for name, arr in base.items():
        a_grad = np.asarray(analytic[name])
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            fp = f(base)
            arr[idx] = orig - step
            fm = f(base)
            arr[idx] = orig
            num = (fp - fm) / (2 * step)
            a = a_grad[idx]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            if err > worst[0]:
                worst = (err, name, idx)
    return GradCheckReport(worst[0], worst[1], worst[2], tolerance)
