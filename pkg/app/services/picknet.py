"""
PickNet Service - the frame-pick policy and its episode runner.

s_t = W2 relu(W1 d_t + b1) + b2, policy = softmax(s_t) over (pick, drop).
The first frame is always picked and initialises the template.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np

from app.core.exceptions import ConfigError, ShapeError, UsageError
from app.core.numerics import DTYPE, Param, glorot_uniform, sample_categorical, softmax_stable
from app.schemas.reports import EpisodeRecord
from app.services.glance import GLANCE_DIM, glance_diff

logger = logging.getLogger(__name__)

PICK, DROP = 0, 1
Mode = Literal["stochastic", "greedy"]


class PickNetParams:
    """theta: W1 (hidden x 3136), b1, W2 (2 x hidden), b2."""

    def __init__(self, hidden_dim: int, input_dim: int = GLANCE_DIM):
        self.hidden_dim = hidden_dim
        self.input_dim = input_dim
        self.tensors: Dict[str, Param] = {
            "W1": Param("W1", np.zeros((hidden_dim, input_dim), dtype=DTYPE)),
            "b1": Param("b1", np.zeros(hidden_dim, dtype=DTYPE)),
            "W2": Param("W2", np.zeros((2, hidden_dim), dtype=DTYPE)),
            "b2": Param("b2", np.zeros(2, dtype=DTYPE)),
        }

    @classmethod
    def initialize(cls, hidden_dim: int, rng: np.random.Generator, input_dim: int = GLANCE_DIM) -> "PickNetParams":
        params = cls(hidden_dim, input_dim)
        params.tensors["W1"].value[...] = glorot_uniform(rng, (hidden_dim, input_dim))
        params.tensors["W2"].value[...] = glorot_uniform(rng, (2, hidden_dim))
        return params

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name].value

    def grad(self, name: str) -> np.ndarray:
        return self.tensors[name].grad

    def params(self) -> List[Param]:
        return [self.tensors[n] for n in sorted(self.tensors)]

    def copy(self) -> "PickNetParams":
        out = PickNetParams(self.hidden_dim, self.input_dim)
        out.tensors = {n: p.copy() for n, p in self.tensors.items()}
        return out

    def config(self) -> Dict[str, Any]:
        return {"kind": "picknet", "hidden_dim": self.hidden_dim, "input_dim": self.input_dim}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {n: p.value for n, p in self.tensors.items()}

    @classmethod
    def from_state(cls, tensors: Dict[str, np.ndarray], config: Dict[str, Any]) -> "PickNetParams":
        if config.get("kind") != "picknet":
            raise ConfigError(f"checkpoint holds {config.get('kind')!r}, not picknet weights")
        params = cls(config["hidden_dim"], config.get("input_dim", GLANCE_DIM))
        for name, p in params.tensors.items():
            if name not in tensors or tensors[name].shape != p.shape:
                raise ConfigError(f"checkpoint tensor {name} missing or mis-shaped")
            p.value[...] = tensors[name]
        return params


# =============================================================================
# Policy
# =============================================================================

@dataclass
class PolicyTrace:
    d: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray


def pick_policy(d: np.ndarray, params: PickNetParams):
    """Returns (logits s, distribution over (pick, drop), trace)."""
    if d.shape != (params.input_dim,):
        raise ShapeError(f"difference vector has shape {d.shape}, policy expects ({params.input_dim},)")
    hidden_pre = params["W1"] @ d + params["b1"]
    hidden = np.maximum(hidden_pre, 0.0)
    logits = params["W2"] @ hidden + params["b2"]
    return logits, softmax_stable(logits), PolicyTrace(d, hidden_pre, hidden)


def pick_policy_backward(trace: PolicyTrace, dlogits: np.ndarray, params: PickNetParams) -> None:
    params.grad("W2")[...] += np.outer(dlogits, trace.hidden)
    params.grad("b2")[...] += dlogits
    dhidden = (params["W2"].T @ dlogits) * (trace.hidden_pre > 0)
    params.grad("W1")[...] += np.outer(dhidden, trace.d)
    params.grad("b1")[...] += dhidden


# =============================================================================
# Episodes
# =============================================================================

@dataclass
class PickAction:
    choice: int  # PICK or DROP
    prob: float  # probability of the chosen action
    logits: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    forced: bool = False
    trace: Optional[PolicyTrace] = field(default=None, repr=False)


@dataclass
class EpisodeTrace:
    actions: List[PickAction]
    picked: List[int]  # 0-based frame indices, strictly increasing
    mode: str
    templates: List[int]  # frame index serving as template when frame t was judged

    @property
    def n_frames(self) -> int:
        return len(self.actions)

    @property
    def n_picked(self) -> int:
        return len(self.picked)

    def record(self, video_id: str) -> EpisodeRecord:
        return EpisodeRecord(video=video_id, picks=list(self.picked), n=self.n_frames)

    def to_ndjson(self, video_id: str) -> str:
        return json.dumps(self.record(video_id).model_dump(), sort_keys=True)


def run_episode(glances: Sequence[np.ndarray], params: PickNetParams, mode: Mode = "greedy",
                rng: Optional[np.random.Generator] = None) -> EpisodeTrace:
    """One pass of the policy over a video; only frames <= t inform decision t."""
    if len(glances) == 0:
        raise UsageError("an episode needs at least one glance")
    if mode not in ("stochastic", "greedy"):
        raise UsageError(f"unknown episode mode: {mode}")
    if mode == "stochastic" and rng is None:
        raise UsageError("stochastic episodes need an rng")

    actions = [PickAction(PICK, 1.0, forced=True)]
    picked = [0]
    templates = [0]
    template = glances[0]
    for t in range(1, len(glances)):
        templates.append(picked[-1])
        logits, probs, trace = pick_policy(glance_diff(glances[t], template), params)
        if mode == "stochastic":
            choice = sample_categorical(probs, rng)
        else:
            choice = int(np.argmax(probs))
        actions.append(PickAction(choice, float(probs[choice]), logits, probs, False, trace))
        if choice == PICK:
            picked.append(t)
            template = glances[t]
    return EpisodeTrace(actions, picked, mode, templates)


def episode_log_prob(trace: EpisodeTrace) -> float:
    """log prod_t p(a_t) over non-forced actions."""
    return float(sum(np.log(a.prob) for a in trace.actions if not a.forced))


def policy_gradient(trace: EpisodeTrace, advantage: float, params: PickNetParams) -> None:
    """Accumulate advantage * sum_t (p(a_t) - 1_{a_t}) ds_t/dtheta.

    This is the gradient of -advantage * log p(actions); the forced first
    pick contributes nothing and a zero advantage touches no gradient.
    """
    if advantage == 0.0:
        return
    for action in trace.actions:
        if action.forced:
            continue
        dlogits = action.probs.copy()
        dlogits[action.choice] -= 1.0
        pick_policy_backward(action.trace, advantage * dlogits, params)
