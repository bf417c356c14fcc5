"""Tiny decoder-only transformer with exact reverse-mode gradients.

Pre-norm blocks, learned positional embeddings, GELU MLPs, float64
throughout. The last vocabulary id is reserved as a field separator used
when serializing demonstrations ahead of a scored example. Only response
positions contribute to any loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .corpus import Example, PREF, SFT

LN_EPS = 1e-5
SFT_LOSS = "sft"
DPO_LOSS = "dpo"
SIMPO_LOSS = "simpo"

_GELU_C = math.sqrt(2.0 / math.pi)


class SequenceTooLong(ValueError):
    """Sequence (after demonstration truncation) exceeds the context window."""


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = 32
    dim: int = 32
    layers: int = 2
    heads: int = 2
    ctx_len: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab < 2:
            raise ValueError("vocab must be at least 2")
        if self.layers < 0 or self.heads < 1 or self.dim < 1 or self.ctx_len < 2:
            raise ValueError("invalid model dimensions")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")

    @property
    def sep_token(self) -> int:
        """Separator between a prompt and its response."""
        return self.vocab - 1

    @property
    def demo_sep_token(self) -> int:
        """Separator closing each demonstration pair."""
        return self.vocab - 2


@dataclass
class ModelParams:
    """All weights, as a flat name -> float64 array mapping."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        if self.tensors.keys() != other.tensors.keys():
            return False
        return all(np.allclose(self.tensors[k], other.tensors[k], rtol=0.0, atol=atol) for k in self.tensors)


Gradients = dict  # name -> np.ndarray, shape-congruent with ModelParams.tensors


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Name, shape, and init family ('normal' | 'zeros' | 'ones') for every tensor."""
    d, h4 = cfg.dim, 4 * cfg.dim
    shapes: list[tuple[str, tuple[int, ...], str]] = [
        ("tok_emb", (cfg.vocab, d), "normal"),
        ("pos_emb", (cfg.ctx_len, d), "normal"),
    ]
    for i in range(cfg.layers):
        p = f"h{i}."
        shapes += [
            (p + "ln1.g", (d,), "ones"),
            (p + "ln1.b", (d,), "zeros"),
            (p + "attn.wq", (d, d), "normal"),
            (p + "attn.wk", (d, d), "normal"),
            (p + "attn.wv", (d, d), "normal"),
            (p + "attn.wo", (d, d), "normal"),
            (p + "attn.bo", (d,), "zeros"),
            (p + "ln2.g", (d,), "ones"),
            (p + "ln2.b", (d,), "zeros"),
            (p + "mlp.w1", (d, h4), "normal"),
            (p + "mlp.b1", (h4,), "zeros"),
            (p + "mlp.w2", (h4, d), "normal"),
            (p + "mlp.b2", (d,), "zeros"),
        ]
    shapes += [
        ("ln_f.g", (d,), "ones"),
        ("ln_f.b", (d,), "zeros"),
        ("head.w", (d, cfg.vocab), "normal"),
    ]
    return shapes


def init_params(cfg: ModelConfig) -> ModelParams:
    """Seeded init: normal(0, 0.02) weights, unit norm scales, zero shifts."""
    rng = np.random.default_rng(cfg.seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, family in _param_shapes(cfg):
        if family == "normal":
            tensors[name] = rng.normal(0.0, 0.02, size=shape)
        elif family == "ones":
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(cfg, tensors)


def zero_gradients(params: ModelParams) -> Gradients:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


@dataclass
class LossSpec:
    """Which per-example loss to use, with its margin knobs.

    The DPO reference is attached by the training loop (pinned to the
    starting checkpoint) and must be present whenever a DPO loss is
    evaluated; SFT and SimPO reject one.
    """

    kind: str = SFT_LOSS
    beta: float = 1.0
    gamma: float = 0.0
    ref_params: ModelParams | None = None

    def __post_init__(self) -> None:
        if self.kind not in (SFT_LOSS, DPO_LOSS, SIMPO_LOSS):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind in (DPO_LOSS, SIMPO_LOSS) and self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.kind != DPO_LOSS and self.ref_params is not None:
            raise ValueError(f"{self.kind} loss does not take a reference model")

    def with_ref(self, ref: ModelParams) -> "LossSpec":
        return LossSpec(self.kind, self.beta, self.gamma, ref)

    def require_ref(self) -> ModelParams:
        if self.ref_params is None:
            raise ValueError("DPO loss requires a reference checkpoint")
        return self.ref_params

    def dataset_kind(self) -> str:
        return SFT if self.kind == SFT_LOSS else PREF


# -- sequence assembly -------------------------------------------------------


def demo_prefix(demos, sep: int, demo_sep: int) -> list[int]:
    """prompt SEP target DEMO_SEP per demonstration, in retrieval order."""
    out: list[int] = []
    for demo in demos:
        out.extend(demo.prompt)
        out.append(sep)
        out.extend(demo.target())
        out.append(demo_sep)
    return out


def _candidate_tokens(x, y, sep: int) -> tuple[list[int], int]:
    x, y = list(x), list(y)
    if not x:
        raise ValueError("prompt may not be empty")
    if not y:
        raise ValueError("response may not be empty")
    return x + [sep] + y, len(x) + 1


def fit_demos(demos, longest_candidate: int, ctx_len: int, sep: int, demo_sep: int) -> list[int]:
    """Drop trailing (least similar) demos until the serialized prefix fits."""
    demos = list(demos)
    if longest_candidate > ctx_len:
        raise SequenceTooLong(f"candidate length {longest_candidate} exceeds context {ctx_len}")
    prefix = demo_prefix(demos, sep, demo_sep)
    while demos and len(prefix) + longest_candidate > ctx_len:
        demos.pop()
        prefix = demo_prefix(demos, sep, demo_sep)
    return prefix


# -- forward graph -----------------------------------------------------------


class _Graph:
    """One evaluation tape over a parameter set."""

    def __init__(self, params: ModelParams, trainable: bool):
        self.cfg = params.config
        self.t = {k: Tensor(v, requires_grad=trainable) for k, v in params.tensors.items()}

    def _layer_norm(self, x: Tensor, g: Tensor, b: Tensor) -> Tensor:
        d = self.cfg.dim
        mu = x.sum(axis=-1, keepdims=True) / d
        xc = x - mu
        var = (xc * xc).sum(axis=-1, keepdims=True) / d
        inv = (var + LN_EPS) ** -0.5
        return xc * inv * g + b

    def _attention(self, x: Tensor, layer: int, T: int) -> Tensor:
        cfg, t = self.cfg, self.t
        p = f"h{layer}.attn."
        H, dh = cfg.heads, cfg.dim // cfg.heads
        q = (x @ t[p + "wq"]).reshape(T, H, dh).transpose(1, 0, 2)
        k = (x @ t[p + "wk"]).reshape(T, H, dh).transpose(1, 0, 2)
        v = (x @ t[p + "wv"]).reshape(T, H, dh).transpose(1, 0, 2)
        scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(dh))
        mask = np.triu(np.full((T, T), -np.inf), k=1)
        probs = (scores + mask).softmax_lastaxis()
        ctx = (probs @ v).transpose(1, 0, 2).reshape(T, cfg.dim)
        return ctx @ t[p + "wo"] + t[p + "bo"]

    def _mlp(self, x: Tensor, layer: int) -> Tensor:
        t = self.t
        p = f"h{layer}.mlp."
        h = x @ t[p + "w1"] + t[p + "b1"]
        gelu = h * 0.5 * (((h + (h * h * h) * 0.044715) * _GELU_C).tanh() + 1.0)
        return gelu @ t[p + "w2"] + t[p + "b2"]

    def trunk(self, tokens: np.ndarray, pos_offset: int) -> Tensor:
        """Hidden states after the final norm, shape (T, dim)."""
        cfg, t = self.cfg, self.t
        T = len(tokens)
        if T < 1:
            raise ValueError("empty token sequence")
        if pos_offset < 0 or pos_offset + T > cfg.ctx_len:
            raise SequenceTooLong(f"sequence of {T} tokens at offset {pos_offset} exceeds context {cfg.ctx_len}")
        if tokens.min() < 0 or tokens.max() >= cfg.vocab:
            raise ValueError("token id outside vocabulary")
        x = t["tok_emb"].take_rows(tokens) + t["pos_emb"][pos_offset : pos_offset + T]
        for i in range(cfg.layers):
            x = x + self._attention(self._layer_norm(x, t[f"h{i}.ln1.g"], t[f"h{i}.ln1.b"]), i, T)
            x = x + self._mlp(self._layer_norm(x, t[f"h{i}.ln2.g"], t[f"h{i}.ln2.b"]), i)
        return self._layer_norm(x, t["ln_f.g"], t["ln_f.b"])

    def logits(self, tokens: np.ndarray, pos_offset: int = 0) -> Tensor:
        return self.trunk(tokens, pos_offset) @ self.t["head.w"]

    def response_logprob(self, tokens: np.ndarray, y_start: int, y_len: int, pos_offset: int = 0) -> Tensor:
        """Scalar sum of log-probabilities of tokens[y_start : y_start+y_len].

        The relevant hidden rows are sliced before the output projection so
        the arithmetic for those positions is independent of how much
        context precedes them.
        """
        hidden = self.trunk(tokens, pos_offset)
        rows = hidden[y_start - 1 : y_start - 1 + y_len]
        logprobs = (rows @ self.t["head.w"]).log_softmax_lastaxis()
        return logprobs.pick(tokens[y_start : y_start + y_len]).sum()

    def grads(self) -> Gradients:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.t.items()}


def forward_logits(params: ModelParams, tokens, pos_offset: int = 0) -> np.ndarray:
    """Per-position logits, (len, vocab); causal and deterministic."""
    tokens = np.asarray(tokens, dtype=np.int64)
    return _Graph(params, trainable=False).logits(tokens, pos_offset).data


# -- losses -------------------------------------------------------------------


def _seq(params: ModelParams, x, y, demos=()) -> tuple[np.ndarray, int, int, int]:
    """(tokens, y_start, y_len, prefix_len) for a serialized candidate."""
    sep = params.config.sep_token
    cand, rel_start = _candidate_tokens(x, y, sep)
    prefix = fit_demos(demos, len(cand), params.config.ctx_len, sep, params.config.demo_sep_token)
    tokens = np.asarray(prefix + cand, dtype=np.int64)
    return tokens, len(prefix) + rel_start, len(cand) - rel_start, len(prefix)


def nll_loss(params: ModelParams, x, y, pos_offset: int = 0) -> float:
    """Negative log-likelihood of y after x; only y positions contribute."""
    tokens, y_start, y_len, _ = _seq(params, x, y)
    g = _Graph(params, trainable=False)
    return float(-g.response_logprob(tokens, y_start, y_len, pos_offset).data)


def conditional_nll_loss(params: ModelParams, demos, x, y) -> float:
    """NLL of y with serialized demonstrations prepended; empty demos ≡ nll_loss."""
    tokens, y_start, y_len, _ = _seq(params, x, y, demos)
    g = _Graph(params, trainable=False)
    return float(-g.response_logprob(tokens, y_start, y_len, 0).data)


def _pref_margin(graph: _Graph, spec: LossSpec, x, y_w, y_l, demos=(), pos_offset_override: int | None = None):
    """Preference margin tensor for DPO/SimPO, optionally demo-conditioned.

    Demonstrations condition only the policy terms; the DPO reference is a
    fixed anchor of the loss and is always evaluated on the bare candidate
    at offset zero.
    """
    params_cfg = graph.cfg
    sep = params_cfg.sep_token
    cand_w, rel_w = _candidate_tokens(x, y_w, sep)
    cand_l, rel_l = _candidate_tokens(x, y_l, sep)
    prefix = fit_demos(demos, max(len(cand_w), len(cand_l)), params_cfg.ctx_len, sep,
                       params_cfg.demo_sep_token)
    if pos_offset_override is None:
        tok_w = np.asarray(prefix + cand_w, dtype=np.int64)
        tok_l = np.asarray(prefix + cand_l, dtype=np.int64)
        off = 0
        start_w, start_l = len(prefix) + rel_w, len(prefix) + rel_l
    else:
        tok_w = np.asarray(cand_w, dtype=np.int64)
        tok_l = np.asarray(cand_l, dtype=np.int64)
        off = pos_offset_override
        start_w, start_l = rel_w, rel_l
    len_w, len_l = len(cand_w) - rel_w, len(cand_l) - rel_l

    lp_w = graph.response_logprob(tok_w, start_w, len_w, off)
    lp_l = graph.response_logprob(tok_l, start_l, len_l, off)
    if spec.kind == DPO_LOSS:
        ref = _Graph(spec.require_ref(), trainable=False)
        bare_w = np.asarray(cand_w, dtype=np.int64)
        bare_l = np.asarray(cand_l, dtype=np.int64)
        ref_w = float(ref.response_logprob(bare_w, rel_w, len_w, 0).data)
        ref_l = float(ref.response_logprob(bare_l, rel_l, len_l, 0).data)
        return ((lp_w - ref_w) - (lp_l - ref_l)) * spec.beta
    return lp_w * (spec.beta / len_w) - lp_l * (spec.beta / len_l) - spec.gamma


def dpo_loss(params: ModelParams, ref_params: ModelParams, x, y_w, y_l, beta: float) -> float:
    spec = LossSpec(DPO_LOSS, beta=beta, ref_params=ref_params)
    g = _Graph(params, trainable=False)
    margin = _pref_margin(g, spec, x, y_w, y_l)
    return float((-margin).softplus().data)


def simpo_loss(params: ModelParams, x, y_w, y_l, beta: float, gamma: float) -> float:
    spec = LossSpec(SIMPO_LOSS, beta=beta, gamma=gamma)
    g = _Graph(params, trainable=False)
    margin = _pref_margin(g, spec, x, y_w, y_l)
    return float((-margin).softplus().data)


def _example_loss_tensor(graph: _Graph, spec: LossSpec, example: Example, demos=()) -> Tensor:
    if spec.kind == SFT_LOSS:
        if example.kind != SFT:
            raise ValueError("SFT loss requires an SFT example")
        sep = graph.cfg.sep_token
        cand, rel = _candidate_tokens(example.prompt, example.response, sep)
        prefix = fit_demos(demos, len(cand), graph.cfg.ctx_len, sep, graph.cfg.demo_sep_token)
        tokens = np.asarray(prefix + cand, dtype=np.int64)
        return -graph.response_logprob(tokens, len(prefix) + rel, len(cand) - rel, 0)
    if example.kind != PREF:
        raise ValueError(f"{spec.kind} loss requires a preference example")
    margin = _pref_margin(graph, spec, example.prompt, example.chosen, example.rejected, demos)
    return (-margin).softplus()


def example_loss(params: ModelParams, spec: LossSpec, example: Example) -> float:
    """Unconditional per-example loss under the configured objective."""
    g = _Graph(params, trainable=False)
    return float(_example_loss_tensor(g, spec, example).data)


def loss_and_grad(params: ModelParams, spec: LossSpec, example: Example, demos=()) -> tuple[float, Gradients]:
    """Loss and its exact reverse-mode gradient for every parameter tensor."""
    g = _Graph(params, trainable=True)
    loss = _example_loss_tensor(g, spec, example, demos)
    loss.backward()
    return float(loss.data), g.grads()


def loss_with_context(
    params: ModelParams,
    spec: LossSpec,
    example: Example,
    demos,
    match_positions: bool = False,
) -> tuple[float, float]:
    """(plain, conditioned) losses for one example.

    By default the plain leg is the ordinary loss at offset zero. With
    match_positions it is instead evaluated at the positional offset the
    conditioned sequence gives the candidate (fixed-offset serialization),
    so architectures that cannot move information across positions yield
    exactly equal legs.
    """
    g = _Graph(params, trainable=False)
    if spec.kind == SFT_LOSS:
        if example.kind != SFT:
            raise ValueError("SFT loss requires an SFT example")
        tokens, y_start, y_len, prefix_len = _seq(params, example.prompt, example.response, demos)
        cond = float(-g.response_logprob(tokens, y_start, y_len, 0).data)
        cand = tokens[prefix_len:]
        off = prefix_len if match_positions else 0
        plain = float(-g.response_logprob(cand, y_start - prefix_len, y_len, off).data)
        return plain, cond
    if example.kind != PREF:
        raise ValueError(f"{spec.kind} loss requires a preference example")
    sep = params.config.sep_token
    cand_w, _ = _candidate_tokens(example.prompt, example.chosen, sep)
    cand_l, _ = _candidate_tokens(example.prompt, example.rejected, sep)
    prefix_len = len(fit_demos(demos, max(len(cand_w), len(cand_l)), params.config.ctx_len, sep,
                              params.config.demo_sep_token))
    cond = float((-_pref_margin(g, spec, example.prompt, example.chosen, example.rejected, demos)).softplus().data)
    off = prefix_len if match_positions else 0
    plain_margin = _pref_margin(g, spec, example.prompt, example.chosen, example.rejected, (), pos_offset_override=off)
    plain = float((-plain_margin).softplus().data)
    return plain, cond
