"""
Seq2Seq Service - LSTM video encoder, GRU caption decoder, greedy decoding
and cross-entropy training with scheduled sampling.

Every forward op returns a trace; the matching ``*_backward`` consumes it and
accumulates into ``Param.grad`` (backpropagation through time, by hand).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app.core.exceptions import ConfigError, ShapeError, UsageError
from app.core.numerics import (
    DTYPE, Param, affine, dropout_mask, glorot_uniform, log_softmax, masked_argmax,
    sigmoid, softmax_stable,
)
from app.schemas.config import ModelConfig
from app.services.text import BOS, EOS, PAD

logger = logging.getLogger(__name__)

LSTM_GATES = ("i", "f", "g", "o")
GRU_GATES = ("z", "r", "p")
BANNED_WORDS = (PAD, BOS)


# =============================================================================
# Parameters
# =============================================================================

class Seq2SeqParams:
    """All encoder/decoder weights (omega), each a named Param."""

    def __init__(self, feature_dim: int, embed_dim: int, hidden_dim: int, vocab_size: int,
                 standard_output_gate: bool = False):
        self.feature_dim = feature_dim
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.vocab_size = vocab_size
        self.standard_output_gate = standard_output_gate
        self.tensors: Dict[str, Param] = {}
        for name, shape in self.shapes().items():
            self.tensors[name] = Param(name, np.zeros(shape, dtype=DTYPE))

    def shapes(self) -> Dict[str, tuple]:
        D, E, H, N = self.feature_dim, self.embed_dim, self.hidden_dim, self.vocab_size
        shapes = {"W_e": (E, D), "b_e": (E,)}
        for k in LSTM_GATES:
            shapes[f"W_{k}x"] = (H, E)
            shapes[f"W_{k}h"] = (H, H)
            shapes[f"b_{k}"] = (H,)
        shapes["W_w"] = (N, E)
        for k in GRU_GATES:
            shapes[f"W_{k}w"] = (H, E)
            shapes[f"W_{k}v"] = (H, H)
            shapes[f"W_{k}p"] = (H, H)
            shapes[f"b_{k}"] = (H,)
        shapes["W_p"] = (N, H)
        return shapes

    @classmethod
    def initialize(cls, cfg: ModelConfig, vocab_size: int, rng: np.random.Generator) -> "Seq2SeqParams":
        params = cls(cfg.feature_dim, cfg.embed_dim, cfg.hidden_dim, vocab_size, cfg.standard_output_gate)
        for name in sorted(params.tensors):
            p = params.tensors[name]
            if p.value.ndim == 2:
                p.value[...] = glorot_uniform(rng, p.shape)
        return params

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name].value

    def grad(self, name: str) -> np.ndarray:
        return self.tensors[name].grad

    def params(self) -> List[Param]:
        return [self.tensors[n] for n in sorted(self.tensors)]

    def copy(self) -> "Seq2SeqParams":
        out = Seq2SeqParams(self.feature_dim, self.embed_dim, self.hidden_dim, self.vocab_size,
                            self.standard_output_gate)
        for name, p in self.tensors.items():
            out.tensors[name] = p.copy()
        return out

    def config(self) -> Dict[str, Any]:
        return {
            "kind": "seq2seq",
            "feature_dim": self.feature_dim,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "vocab_size": self.vocab_size,
            "standard_output_gate": self.standard_output_gate,
        }

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {n: p.value for n, p in self.tensors.items()}

    @classmethod
    def from_state(cls, tensors: Dict[str, np.ndarray], config: Dict[str, Any]) -> "Seq2SeqParams":
        if config.get("kind") != "seq2seq":
            raise ConfigError(f"checkpoint holds {config.get('kind')!r}, not seq2seq weights")
        params = cls(config["feature_dim"], config["embed_dim"], config["hidden_dim"],
                     config["vocab_size"], config.get("standard_output_gate", False))
        for name, p in params.tensors.items():
            if name not in tensors or tensors[name].shape != p.shape:
                raise ConfigError(f"checkpoint tensor {name} missing or mis-shaped")
            p.value[...] = tensors[name]
        return params


# =============================================================================
# Encoder
# =============================================================================

@dataclass
class EncoderState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "EncoderState":
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))


@dataclass
class LstmStepTrace:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray  # candidate cell c~
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


def embed_feature(x: np.ndarray, params: Seq2SeqParams) -> np.ndarray:
    return affine(params["W_e"], x, params["b_e"])


def lstm_step(x: np.ndarray, state: EncoderState, params: Seq2SeqParams):
    if x.shape != (params.embed_dim,) or state.h.shape != (params.hidden_dim,):
        raise ShapeError(f"lstm_step: x{x.shape} h{state.h.shape} vs embed {params.embed_dim}, "
                         f"hidden {params.hidden_dim}")
    pre = {k: affine(params[f"W_{k}x"], x, params[f"b_{k}"]) + params[f"W_{k}h"] @ state.h for k in LSTM_GATES}
    i = sigmoid(pre["i"])
    f = sigmoid(pre["f"])
    g = np.tanh(pre["g"])
    o = sigmoid(pre["o"]) if params.standard_output_gate else np.tanh(pre["o"])
    c = f * state.c + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return EncoderState(h, c), LstmStepTrace(x, state.h, state.c, i, f, g, o, c, tanh_c, h)


def lstm_step_backward(tr: LstmStepTrace, dh: np.ndarray, dc: np.ndarray, params: Seq2SeqParams):
    """Returns (dx, dh_prev, dc_prev); accumulates weight grads."""
    dc_total = dc + dh * tr.o * (1.0 - tr.tanh_c ** 2)
    do = dh * tr.tanh_c
    d_pre = {
        "i": dc_total * tr.g * tr.i * (1.0 - tr.i),
        "f": dc_total * tr.c_prev * tr.f * (1.0 - tr.f),
        "g": dc_total * tr.i * (1.0 - tr.g ** 2),
        "o": do * tr.o * (1.0 - tr.o) if params.standard_output_gate else do * (1.0 - tr.o ** 2),
    }
    dx = np.zeros_like(tr.x)
    dh_prev = np.zeros_like(tr.h_prev)
    for k, d in d_pre.items():
        params.grad(f"W_{k}x")[...] += np.outer(d, tr.x)
        params.grad(f"W_{k}h")[...] += np.outer(d, tr.h_prev)
        params.grad(f"b_{k}")[...] += d
        dx += params[f"W_{k}x"].T @ d
        dh_prev += params[f"W_{k}h"].T @ d
    return dx, dh_prev, dc_total * tr.f


@dataclass
class EncoderPass:
    features: np.ndarray
    input_masks: List[np.ndarray]
    traces: List[LstmStepTrace]
    output_mask: np.ndarray
    v: np.ndarray


def encode_forward(features: np.ndarray, params: Seq2SeqParams,
                   rng: Optional[np.random.Generator] = None, retain: float = 1.0) -> EncoderPass:
    features = np.asarray(features, dtype=DTYPE)
    if features.ndim != 2 or features.shape[0] == 0:
        raise UsageError("encoder needs at least one feature vector")
    if features.shape[1] != params.feature_dim:
        raise ShapeError(f"features are {features.shape[1]}-d, encoder expects {params.feature_dim}")
    state = EncoderState.zeros(params.hidden_dim)
    masks, traces = [], []
    for x in features:
        mask = dropout_mask(rng, params.embed_dim, retain)
        state, tr = lstm_step(embed_feature(x, params) * mask, state, params)
        masks.append(mask)
        traces.append(tr)
    out_mask = dropout_mask(rng, params.hidden_dim, retain)
    return EncoderPass(features, masks, traces, out_mask, state.h * out_mask)


def encode_sequence(features: np.ndarray, params: Seq2SeqParams) -> np.ndarray:
    """VideoCode v: the last encoder hidden state."""
    return encode_forward(features, params).v


def encode_backward(enc: EncoderPass, dv: np.ndarray, params: Seq2SeqParams) -> np.ndarray:
    """Backprop dv through the encoder; returns d(features)."""
    dfeatures = np.zeros_like(enc.features)
    dh = dv * enc.output_mask
    dc = np.zeros(params.hidden_dim)
    for t in range(len(enc.traces) - 1, -1, -1):
        dx, dh, dc = lstm_step_backward(enc.traces[t], dh, dc, params)
        de = dx * enc.input_masks[t]
        params.grad("W_e")[...] += np.outer(de, enc.features[t])
        params.grad("b_e")[...] += de
        dfeatures[t] = params["W_e"].T @ de
    return dfeatures


# =============================================================================
# Decoder
# =============================================================================

@dataclass
class DecoderState:
    p: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "DecoderState":
        return cls(np.zeros(hidden_dim))


@dataclass
class GruStepTrace:
    word: int
    e: np.ndarray
    e_mask: np.ndarray
    v: np.ndarray
    p_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    p_tilde: np.ndarray
    p: np.ndarray


def gru_step(prev_word: int, v: np.ndarray, state: DecoderState, params: Seq2SeqParams,
             e_mask: Optional[np.ndarray] = None):
    if not 0 <= prev_word < params.vocab_size:
        raise ShapeError(f"word id {prev_word} outside vocabulary of size {params.vocab_size}")
    if v.shape != (params.hidden_dim,) or state.p.shape != (params.hidden_dim,):
        raise ShapeError(f"gru_step: v{v.shape} p{state.p.shape} vs hidden {params.hidden_dim}")
    if e_mask is None:
        e_mask = np.ones(params.embed_dim)
    e = params["W_w"][prev_word] * e_mask
    p_prev = state.p
    z = sigmoid(params["W_zw"] @ e + params["W_zv"] @ v + params["W_zp"] @ p_prev + params["b_z"])
    r = sigmoid(params["W_rw"] @ e + params["W_rv"] @ v + params["W_rp"] @ p_prev + params["b_r"])
    p_tilde = np.tanh(params["W_pw"] @ e + params["W_pv"] @ v + params["W_pp"] @ (r * p_prev) + params["b_p"])
    p = (1.0 - z) * p_prev + z * p_tilde
    return DecoderState(p), GruStepTrace(prev_word, e, e_mask, v, p_prev, z, r, p_tilde, p)


def gru_step_backward(tr: GruStepTrace, dp: np.ndarray, params: Seq2SeqParams):
    """Returns (dp_prev, dv); accumulates weight grads."""
    dz = dp * (tr.p_tilde - tr.p_prev) * tr.z * (1.0 - tr.z)
    dpt = dp * tr.z * (1.0 - tr.p_tilde ** 2)
    rp = tr.r * tr.p_prev
    d_rp = params["W_pp"].T @ dpt
    dr = d_rp * tr.p_prev * tr.r * (1.0 - tr.r)

    de = np.zeros_like(tr.e)
    dv = np.zeros_like(tr.v)
    dp_prev = dp * (1.0 - tr.z) + d_rp * tr.r
    for k, d, recurrent_in in (("z", dz, tr.p_prev), ("r", dr, tr.p_prev), ("p", dpt, rp)):
        params.grad(f"W_{k}w")[...] += np.outer(d, tr.e)
        params.grad(f"W_{k}v")[...] += np.outer(d, tr.v)
        params.grad(f"W_{k}p")[...] += np.outer(d, recurrent_in)
        params.grad(f"b_{k}")[...] += d
        de += params[f"W_{k}w"].T @ d
        dv += params[f"W_{k}v"].T @ d
    dp_prev += params["W_zp"].T @ dz + params["W_rp"].T @ dr
    params.grad("W_w")[tr.word] += de * tr.e_mask
    return dp_prev, dv


def word_logits(state: DecoderState, params: Seq2SeqParams) -> np.ndarray:
    return params["W_p"] @ state.p


def word_distribution(state: DecoderState, params: Seq2SeqParams) -> np.ndarray:
    return softmax_stable(word_logits(state, params))


def greedy_decode(v: np.ndarray, params: Seq2SeqParams, max_len: int = 20) -> List[int]:
    """BOS-started argmax decoding; EOS ends the caption and is not returned."""
    if max_len < 1:
        raise UsageError("max_len must be at least 1")
    state = DecoderState.zeros(params.hidden_dim)
    prev, words = BOS, []
    for _ in range(max_len):
        state, _ = gru_step(prev, v, state, params)
        prev = masked_argmax(word_logits(state, params), BANNED_WORDS)
        if prev == EOS:
            break
        words.append(prev)
    return words


# =============================================================================
# Cross-entropy
# =============================================================================

@dataclass
class XentResult:
    loss: float
    dv: np.ndarray
    fed_words: List[int] = field(default_factory=list)


def xent_loss_and_grads(v: np.ndarray, gt: Sequence[int], params: Seq2SeqParams,
                        feedback_prob: float = 0.0, rng: Optional[np.random.Generator] = None,
                        retain: float = 1.0) -> XentResult:
    """L_X = -sum_t log p(y_t | fed words, v), with decoder grads accumulated.

    The word fed at step t > 1 is the model's own argmax from step t-1 with
    probability ``feedback_prob``, the ground truth otherwise.
    """
    if len(gt) == 0:
        raise UsageError("ground-truth sentence is empty")
    if not 0.0 <= feedback_prob <= 1.0:
        raise UsageError(f"feedback probability {feedback_prob} outside [0, 1]")
    if 0.0 < feedback_prob < 1.0 and rng is None:
        raise UsageError("scheduled sampling needs an rng")

    H = params.hidden_dim
    state = DecoderState.zeros(H)
    prev = BOS
    loss = 0.0
    steps = []
    fed = []
    for t, target in enumerate(gt):
        fed.append(prev)
        e_mask = dropout_mask(rng, params.embed_dim, retain)
        state, tr = gru_step(prev, v, state, params, e_mask)
        o_mask = dropout_mask(rng, H, retain)
        p_out = state.p * o_mask
        logits = params["W_p"] @ p_out
        log_probs = log_softmax(logits)
        loss -= float(log_probs[target])
        steps.append((tr, o_mask, p_out, np.exp(log_probs)))
        if t + 1 < len(gt):
            if feedback_prob >= 1.0 or (feedback_prob > 0.0 and rng.random() < feedback_prob):
                prev = masked_argmax(logits, BANNED_WORDS)
            else:
                prev = int(target)

    dv = np.zeros(H)
    dp_next = np.zeros(H)
    for (tr, o_mask, p_out, probs), target in zip(reversed(steps), reversed(list(gt))):
        dlogits = probs.copy()
        dlogits[target] -= 1.0
        params.grad("W_p")[...] += np.outer(dlogits, p_out)
        dp = (params["W_p"].T @ dlogits) * o_mask + dp_next
        dp_next, dv_t = gru_step_backward(tr, dp, params)
        dv += dv_t
    return XentResult(loss, dv, fed)


def caption_loss_and_grads(features: np.ndarray, gt: Sequence[int], params: Seq2SeqParams,
                           feedback_prob: float = 0.0, rng: Optional[np.random.Generator] = None,
                           retain: float = 1.0):
    """Encode -> decode -> XE with gradients through the whole of omega.

    Returns (loss, d(features)).
    """
    enc = encode_forward(features, params, rng, retain)
    result = xent_loss_and_grads(enc.v, gt, params, feedback_prob, rng, retain)
    dfeatures = encode_backward(enc, result.dv, params)
    return result.loss, dfeatures
