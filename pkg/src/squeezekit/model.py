"""A small post-layer-norm transformer encoder for sequence classification.

The forward pass runs over a ModelView, a bundle of layer operators. Plain
models supply dense operators over their own parameter tensors; reparameterized
and factorized schemes supply operators whose weights are products of trainable
factors, so one forward implementation serves every scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint
from .tensor import (
    MASK_VALUE,
    Tensor,
    dropout,
    embedding,
    gelu,
    layer_norm,
    matmul,
    narrow,
    softmax,
)


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    hidden_size: int
    num_heads: int
    vocab_size: int
    max_seq_len: int
    num_classes: int
    ffn_size: int = 0  # 0 means the conventional 4 * hidden_size
    attn_dropout: float = 0.1
    hidden_dropout: float = 0.1

    def __post_init__(self):
        if self.ffn_size == 0:
            object.__setattr__(self, "ffn_size", 4 * self.hidden_size)
        for name in ("num_layers", "hidden_size", "num_heads", "vocab_size",
                     "max_seq_len", "num_classes", "ffn_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"num_heads ({self.num_heads}) must divide hidden_size ({self.hidden_size})"
            )
        for name in ("attn_dropout", "hidden_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {p}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def with_dropout(self, attn: float, hidden: float) -> "ModelConfig":
        return replace(self, attn_dropout=attn, hidden_dropout=hidden)


# -- initializers ----------------------------------------------------------


def xavier_normal(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[1]
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape)


def xavier_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# -- layer operators -------------------------------------------------------


class Linear:
    """y = x @ w (+ b). Weight stored (in_features, out_features)."""

    def __init__(self, w: Tensor, b: Tensor | None = None):
        self.w = w
        self.b = b

    def apply(self, x: Tensor) -> Tensor:
        y = matmul(x, self.w)
        return y if self.b is None else y + self.b


class Embedding:
    def __init__(self, table: Tensor):
        self.table = table

    def lookup(self, ids: np.ndarray) -> Tensor:
        return embedding(self.table, ids)


@dataclass
class EncoderLayerView:
    q: Linear
    k: Linear
    v: Linear
    o: Linear
    ff1: Linear
    ff2: Linear
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class ModelView:
    config: ModelConfig
    embed: Embedding
    pos: Tensor
    layers: list[EncoderLayerView]
    classifier: Linear


@dataclass
class ForwardOutput:
    logits: Tensor
    hidden_states: list[Tensor]  # embedding output first, then one per layer
    attn_probs: list[Tensor]
    pooled: Tensor  # masked mean of the final hidden state, pre-dropout
    pad_mask: np.ndarray


def pooled_state(out: ForwardOutput) -> Tensor:
    return out.pooled


def first_position_state(out: ForwardOutput, layer: int) -> Tensor:
    """Hidden state at sequence position 0 after `layer` (0 = embeddings)."""
    if not 0 <= layer < len(out.hidden_states):
        raise IndexError(
            f"layer {layer} out of range, model has {len(out.hidden_states)} recorded states"
        )
    h = out.hidden_states[layer]
    b, _, width = h.shape
    return narrow(h, 1, 0, 1).reshape((b, width))


def forward(view: ModelView, token_ids: np.ndarray, pad_mask: np.ndarray | None = None,
            mode: str = "eval", rng: np.random.Generator | None = None) -> ForwardOutput:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = view.config
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ValueError(f"token_ids must be (batch, seq), got shape {ids.shape}")
    batch, seq = ids.shape
    if seq > cfg.max_seq_len:
        raise ValueError(f"sequence length {seq} exceeds max_seq_len {cfg.max_seq_len}")
    if pad_mask is None:
        mask = np.ones((batch, seq))
    else:
        mask = np.asarray(pad_mask, dtype=np.float64)
        if mask.shape != (batch, seq):
            raise ValueError(f"pad_mask shape {mask.shape} does not match ids {ids.shape}")
    training = mode == "train"

    x = view.embed.lookup(ids) + narrow(view.pos, 0, 0, seq)
    hidden_states = [x]
    attn_probs: list[Tensor] = []

    heads = cfg.num_heads
    width = cfg.hidden_size
    head_dim = width // heads
    # additive mask over key positions, broadcast across queries and heads
    add_mask = Tensor(
        np.repeat((1.0 - mask)[:, None, :] * MASK_VALUE, heads, axis=0)
    )
    inv_sqrt_d = 1.0 / math.sqrt(head_dim)

    def split_heads(t: Tensor) -> Tensor:
        return (t.reshape((batch, seq, heads, head_dim))
                 .transpose((0, 2, 1, 3))
                 .reshape((batch * heads, seq, head_dim)))

    for layer in view.layers:
        qh = split_heads(layer.q.apply(x))
        kh = split_heads(layer.k.apply(x))
        vh = split_heads(layer.v.apply(x))
        scores = matmul(qh, kh.transpose((0, 2, 1))) * inv_sqrt_d
        scores = scores + add_mask
        probs = softmax(scores, axis=-1)
        attn_probs.append(probs)
        probs = dropout(probs, cfg.attn_dropout, rng, training)
        ctx = (matmul(probs, vh)
               .reshape((batch, heads, seq, head_dim))
               .transpose((0, 2, 1, 3))
               .reshape((batch, seq, width)))
        x = layer_norm(x + layer.o.apply(ctx), layer.ln1_gain, layer.ln1_bias)
        ff = layer.ff2.apply(gelu(layer.ff1.apply(x)))
        x = layer_norm(x + ff, layer.ln2_gain, layer.ln2_bias)
        hidden_states.append(x)

    # masked mean over sequence positions, so appended padding cannot leak in
    counts = mask.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("every sequence needs at least one unmasked position")
    pooled = (x * Tensor(mask[:, :, None])).sum(axis=1) * Tensor(1.0 / counts)
    dropped = dropout(pooled, cfg.hidden_dropout, rng, training)
    logits = view.classifier.apply(dropped)
    return ForwardOutput(logits=logits, hidden_states=hidden_states,
                         attn_probs=attn_probs, pooled=pooled, pad_mask=mask)


# -- parameter naming ------------------------------------------------------

ATTN_WEIGHTS = ("wq", "wk", "wv", "wo")
ATTN_BIASES = ("bq", "bk", "bv", "bo")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter enumeration: name -> shape, in storage order."""
    h, f = cfg.hidden_size, cfg.ffn_size
    shapes: dict[str, tuple[int, ...]] = {
        "token_emb": (cfg.vocab_size, h),
        "pos_emb": (cfg.max_seq_len, h),
    }
    for i in range(cfg.num_layers):
        p = f"layer{i}"
        for wn in ATTN_WEIGHTS:
            shapes[f"{p}.attn.{wn}"] = (h, h)
        for bn in ATTN_BIASES:
            shapes[f"{p}.attn.{bn}"] = (1, h)
        shapes[f"{p}.attn.ln_gain"] = (h,)
        shapes[f"{p}.attn.ln_bias"] = (h,)
        shapes[f"{p}.ffn.w1"] = (h, f)
        shapes[f"{p}.ffn.b1"] = (1, f)
        shapes[f"{p}.ffn.w2"] = (f, h)
        shapes[f"{p}.ffn.b2"] = (1, h)
        shapes[f"{p}.ffn.ln_gain"] = (h,)
        shapes[f"{p}.ffn.ln_bias"] = (h,)
    shapes["classifier.w"] = (h, cfg.num_classes)
    shapes["classifier.b"] = (1, cfg.num_classes)
    return shapes


def param_kind(name: str) -> str:
    """linear | bias | embedding | norm | classifier_w | classifier_b"""
    if name == "classifier.w":
        return "classifier_w"
    if name == "classifier.b":
        return "classifier_b"
    if name in ("token_emb", "pos_emb"):
        return "embedding"
    if ".ln_" in name:
        return "norm"
    leaf = name.rsplit(".", 1)[1]
    return "linear" if leaf.startswith("w") else "bias"


def param_group(name: str) -> str:
    if name in ("token_emb", "pos_emb"):
        return "embeddings"
    if name.startswith("classifier"):
        return "classifier"
    if ".ln_" in name:
        return "norms"
    return "attention" if ".attn." in name else "ffn"


def view_from_params(cfg: ModelConfig, p: dict[str, Tensor]) -> ModelView:
    """Wire a dense ModelView over a full named parameter set."""
    layers = []
    for i in range(cfg.num_layers):
        a, f = f"layer{i}.attn", f"layer{i}.ffn"
        layers.append(EncoderLayerView(
            q=Linear(p[f"{a}.wq"], p[f"{a}.bq"]),
            k=Linear(p[f"{a}.wk"], p[f"{a}.bk"]),
            v=Linear(p[f"{a}.wv"], p[f"{a}.bv"]),
            o=Linear(p[f"{a}.wo"], p[f"{a}.bo"]),
            ff1=Linear(p[f"{f}.w1"], p[f"{f}.b1"]),
            ff2=Linear(p[f"{f}.w2"], p[f"{f}.b2"]),
            ln1_gain=p[f"{a}.ln_gain"], ln1_bias=p[f"{a}.ln_bias"],
            ln2_gain=p[f"{f}.ln_gain"], ln2_bias=p[f"{f}.ln_bias"],
        ))
    return ModelView(config=cfg, embed=Embedding(p["token_emb"]), pos=p["pos_emb"],
                     layers=layers, classifier=Linear(p["classifier.w"], p["classifier.b"]))


class TransformerModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = param_shapes(config)
        if set(params) != set(expected):
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ValueError(f"parameter set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = {name: params[name] for name in expected}  # canonical order

    @classmethod
    def init(cls, config: ModelConfig, seed: int | np.random.Generator = 0,
             trainable: bool = True) -> "TransformerModel":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        for name, shape in param_shapes(config).items():
            kind = param_kind(name)
            if kind in ("linear", "classifier_w"):
                data = xavier_normal(shape, rng)
            elif kind == "embedding":
                data = xavier_uniform(shape, rng)
            elif kind == "norm":
                data = np.ones(shape) if name.endswith("gain") else np.zeros(shape)
            else:
                data = np.zeros(shape)
            params[name] = Tensor(data, requires_grad=trainable)
        return cls(config, params)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray],
                    trainable: bool = True) -> "TransformerModel":
        return cls(config, {n: Tensor(a.copy(), requires_grad=trainable) for n, a in arrays.items()})

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.params.items() if t.requires_grad}

    def freeze(self) -> "TransformerModel":
        for t in self.params.values():
            t.requires_grad = False
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self.params.items():
            t.data = np.ascontiguousarray(arrays[n], dtype=np.float64)

    def view(self) -> ModelView:
        return view_from_params(self.config, self.params)

    def forward(self, token_ids, pad_mask=None, mode: str = "eval",
                rng: np.random.Generator | None = None) -> ForwardOutput:
        return forward(self.view(), token_ids, pad_mask, mode, rng)

    def train_param_count(self) -> int:
        return count_from_config(self.config)

    inference_param_count = train_param_count

    def save(self, path) -> None:
        checkpoint.save_tensors(path, {n: t.data for n, t in self.params.items()},
                                meta={"kind": "transformer", "config": self.config.to_dict()})

    @classmethod
    def load(cls, path, trainable: bool = True) -> "TransformerModel":
        arrays, meta = checkpoint.load_tensors(path)
        if meta.get("kind") != "transformer":
            raise ValueError(f"{path} holds a {meta.get('kind')!r} checkpoint, not a model")
        return cls.from_arrays(ModelConfig.from_dict(meta["config"]), arrays, trainable=trainable)


def count_parameters(model: TransformerModel) -> dict:
    """Exact parameter counts, total and grouped by component."""
    by_group: dict[str, int] = {}
    for name, t in model.params.items():
        g = param_group(name)
        by_group[g] = by_group.get(g, 0) + t.size
    return {"total": sum(by_group.values()), "by_group": by_group}


def count_from_config(cfg: ModelConfig) -> int:
    """Closed-form parameter count of a plain model with this config."""
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())
