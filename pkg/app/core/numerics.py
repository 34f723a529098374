"""
Numerics - dense linear algebra helpers, activations, sampling, optimizers
and the finite-difference gradient checker.

Tensors are float64 numpy arrays. Randomness always flows through an explicit
``numpy.random.Generator`` built on PCG64, so a run replays from
(seed, call order) on any platform.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.core.exceptions import NumericsError, ShapeError, UsageError

logger = logging.getLogger(__name__)

DTYPE = np.float64

# =============================================================================
# Tensors & parameters
# =============================================================================


@dataclass
class Param:
    """A named trainable tensor with its gradient buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=DTYPE)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeError(f"{self.name}: grad {self.grad.shape} != value {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def copy(self) -> "Param":
        return Param(self.name, self.value.copy(), self.grad.copy())


def make_rng(seed, *stream) -> np.random.Generator:
    """PCG64 generator for a (seed, stream...) key; streams never overlap."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    """Uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], 1)
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=tuple(shape)).astype(DTYPE)


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


# =============================================================================
# Elementary ops
# =============================================================================


def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = W x + b."""
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1 or W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ShapeError(f"affine: W{W.shape} x{x.shape} b{b.shape}")
    return W @ x + b


_OPEN_UNIT = (np.finfo(DTYPE).tiny, np.nextafter(DTYPE(1.0), DTYPE(0.0)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, kept strictly inside (0, 1) for every finite x."""
    x = np.asarray(x, dtype=DTYPE)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(out, *_OPEN_UNIT)


def softmax_stable(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=DTYPE)
    if s.size == 0:
        raise UsageError("softmax of an empty vector")
    e = np.exp(s - np.max(s))
    return e / e.sum()


def log_softmax(s: np.ndarray) -> np.ndarray:
    shifted = s - np.max(s)
    return shifted - np.log(np.exp(shifted).sum())


def sample_categorical(p: np.ndarray, rng: np.random.Generator) -> int:
    """Draw index i with probability p[i]; consumes exactly one uniform."""
    p = np.asarray(p, dtype=DTYPE)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise UsageError(f"not a probability distribution: {p}")
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    # cumsum may end slightly below 1; never land on a zero-mass tail
    idx = min(idx, p.size - 1)
    while p[idx] == 0.0 and idx > 0:
        idx -= 1
    return idx


def dropout_mask(rng: Optional[np.random.Generator], size: int, retain: float) -> np.ndarray:
    """Inverted-dropout mask; all ones when disabled."""
    if rng is None or retain >= 1.0:
        return np.ones(size, dtype=DTYPE)
    return (rng.random(size) < retain).astype(DTYPE) / retain


def masked_argmax(scores: np.ndarray, banned: Sequence[int] = ()) -> int:
    """Argmax ignoring ``banned`` indices; ties go to the lowest index."""
    if banned:
        scores = scores.copy()
        scores[list(banned)] = -np.inf
    return int(np.argmax(scores))


# =============================================================================
# Optimizers
# =============================================================================


def global_grad_norm(params: Iterable[Param]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))


def clip_grad_norm(params: Sequence[Param], max_norm: Optional[float]) -> float:
    norm = global_grad_norm(params)
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= scale
    return norm


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Param], state: AdamState, clip_norm: Optional[float] = None) -> None:
    """Bias-corrected Adam update in place, then zero the grads.

    A parameter whose gradient is entirely zero is left untouched, moments
    included, so an all-zero gradient step is the identity for any t.
    """
    clip_grad_norm(params, clip_norm)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p in params:
        if p.grad.shape != p.value.shape:
            raise NumericsError(f"{p.name}: grad {p.grad.shape} drifted from value {p.value.shape}")
        if not np.any(p.grad):
            continue
        m = state.m.setdefault(p.name, np.zeros_like(p.value))
        v = state.v.setdefault(p.name, np.zeros_like(p.value))
        if m.shape != p.value.shape:
            raise NumericsError(f"{p.name}: moment shape {m.shape} != {p.value.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (p.grad * p.grad)
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    zero_grads(params)


@dataclass
class SgdState:
    lr: float = 3e-4
    t: int = 0


def sgd_step(params: Sequence[Param], state: SgdState, clip_norm: Optional[float] = None) -> None:
    clip_grad_norm(params, clip_norm)
    state.t += 1
    for p in params:
        p.value -= state.lr * p.grad
    zero_grads(params)


class Optimizer:
    """Uniform front for the two update rules a TrainConfig can name."""

    def __init__(self, kind: str, lr: float, clip_norm: Optional[float] = None):
        if kind not in ("adam", "sgd"):
            raise UsageError(f"unknown optimizer: {kind}")
        self.kind = kind
        self.clip_norm = clip_norm
        self.state = AdamState(lr=lr) if kind == "adam" else SgdState(lr=lr)

    def step(self, params: Sequence[Param]) -> None:
        if self.kind == "adam":
            adam_step(params, self.state, self.clip_norm)
        else:
            sgd_step(params, self.state, self.clip_norm)


# =============================================================================
# Gradient checking
# =============================================================================


def grad_check(f: Callable[[], float], params: Sequence[Param], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` evaluates the scalar objective and accumulates its analytic gradient
    into ``Param.grad``. Error per coordinate is
    |a - n| / max(1, |a|, |n|).
    """
    if not 1e-7 <= h <= 1e-3:
        raise UsageError(f"step h={h} outside [1e-7, 1e-3]")
    zero_grads(params)
    base = f()
    if not np.isfinite(base):
        raise NumericsError(f"objective is not finite at the current point: {base}")
    analytic = {p.name: p.grad.copy() for p in params}

    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = f()
            flat[i] = original - h
            minus = f()
            flat[i] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericsError(f"objective not finite when perturbing {p.name}[{i}]")
            numeric = (plus - minus) / (2.0 * h)
            a = analytic[p.name].reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    zero_grads(params)
    logger.debug("grad_check over %d tensors: max rel err %.3e", len(params), worst)
    return worst


def check_finite(name: str, x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(np.ravel(x)))[0])
        raise NumericsError(f"{name}: non-finite value at flat index {bad}")
    return x


def params_by_name(params: Iterable[Param]) -> Dict[str, Param]:
    return {p.name: p for p in params}


def snapshot(params: Iterable[Param]) -> List[Param]:
    return [p.copy() for p in params]
