"""Student weight construction schemes over a frozen teacher.

Four ways to produce a student's weights:

* WSMapping: every teacher linear weight (n x m) is squeezed through a
  trainable bilinear product L @ W_t @ R into the student shape (a x b);
  biases and embedding tables get a one-sided right map W_t @ R; the
  classifier weight gets a left map only (its class dimension is fixed).
  Layer norms and the classifier bias are free student parameters.
* GatedWSMapping: convex blend (1 - sigma(s)) * mapped + sigma(s) * base,
  one scalar gate shared model-wide, base is a trainable student-shaped
  model. With the gate frozen at 1 this is exactly plain fine-tuning of
  the base.
* SVDFactors: truncated SVD of each linear weight and the token embedding,
  singular values absorbed into the left factor, both factors trainable.
* TTFactors: tensor-train factorization with 4 cores per weight, dims split
  into near-equal factors, initialized by a TT-SVD sweep.

All schemes produce a ModelView for the shared forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import checkpoint
from .model import (
    EncoderLayerView,
    Linear,
    ModelConfig,
    ModelView,
    TransformerModel,
    count_from_config,
    param_kind,
    param_shapes,
    view_from_params,
    xavier_normal,
    xavier_uniform,
)
from .tensor import Tensor, concat, matmul, narrow, sigmoid


@dataclass(frozen=True)
class ReparamSpec:
    """Tagged choice of student construction scheme."""
    kind: str  # plain | ws | gated-ws | svd | tt
    rank: int | None = None
    cores: int = 4
    s0: float = 2.0
    freeze_gate: float | None = None

    KINDS = ("plain", "ws", "gated-ws", "svd", "tt")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown reparam kind {self.kind!r}, expected one of {self.KINDS}")
        if self.kind in ("svd", "tt") and self.rank is not None and self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.freeze_gate is not None and self.freeze_gate not in (0.0, 1.0):
            raise ValueError("freeze_gate must be 0.0, 1.0, or None")


def _is_factorized(name: str) -> bool:
    return param_kind(name) == "linear" or name == "token_emb"


# ---------------------------------------------------------------------------
# Bilinear weight squeezing
# ---------------------------------------------------------------------------


class WSMapping:
    def __init__(self, teacher: TransformerModel, student_config: ModelConfig,
                 left: dict[str, Tensor], right: dict[str, Tensor],
                 free: dict[str, Tensor]):
        self.teacher = teacher
        self.config = student_config
        self.left = left
        self.right = right
        self.free = free
        t_pos = teacher.params["pos_emb"].data
        self._pos_src = Tensor(t_pos[: student_config.max_seq_len].copy())

    def trainable_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update({f"left.{n}": t for n, t in self.left.items()})
        out.update({f"right.{n}": t for n, t in self.right.items()})
        out.update({f"free.{n}": t for n, t in self.free.items()})
        return out

    def _mapped(self, name: str) -> Tensor:
        kind = param_kind(name)
        t = self.teacher.params[name]
        if kind == "linear":
            return matmul(matmul(self.left[name], t), self.right[name])
        if kind == "classifier_w":
            return matmul(self.left[name], t)
        if name == "pos_emb":
            return matmul(self._pos_src, self.right[name])
        # biases and the token embedding share the one-sided right map form
        return matmul(t, self.right[name])

    def materialize(self) -> dict[str, Tensor]:
        """Full student parameter set, graph-connected to the maps."""
        out: dict[str, Tensor] = {}
        for name in param_shapes(self.config):
            if name in self.free:
                out[name] = self.free[name]
            else:
                out[name] = self._mapped(name)
        return out

    def view(self) -> ModelView:
        return view_from_params(self.config, self.materialize())

    def bake(self) -> TransformerModel:
        """Collapse the maps into a standalone student. Purely arithmetic, so
        baking twice yields bit-identical weights."""
        arrays: dict[str, np.ndarray] = {}
        for name in param_shapes(self.config):
            if name in self.free:
                arrays[name] = self.free[name].data.copy()
                continue
            kind = param_kind(name)
            t = self.teacher.params[name].data
            if kind == "linear":
                arrays[name] = self.left[name].data @ t @ self.right[name].data
            elif kind == "classifier_w":
                arrays[name] = self.left[name].data @ t
            elif name == "pos_emb":
                arrays[name] = self._pos_src.data @ self.right[name].data
            else:
                arrays[name] = t @ self.right[name].data
        return TransformerModel.from_arrays(self.config, arrays, trainable=True)

    def train_param_count(self) -> int:
        return sum(t.size for t in self.trainable_parameters().values())

    def inference_param_count(self) -> int:
        return count_from_config(self.config)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"ws.left.{n}": t.data.copy() for n, t in self.left.items()}
        out.update({f"ws.right.{n}": t.data.copy() for n, t in self.right.items()})
        out.update({f"ws.free.{n}": t.data.copy() for n, t in self.free.items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self.left.items():
            t.data = arrays[f"ws.left.{n}"].copy()
        for n, t in self.right.items():
            t.data = arrays[f"ws.right.{n}"].copy()
        for n, t in self.free.items():
            t.data = arrays[f"ws.free.{n}"].copy()

    def save(self, path) -> None:
        checkpoint.save_tensors(path, self.state_dict(), meta={
            "kind": "ws_mapping",
            "student_config": self.config.to_dict(),
            "teacher_config": self.teacher.config.to_dict(),
        })

    @classmethod
    def load(cls, path, teacher: TransformerModel) -> "WSMapping":
        arrays, meta = checkpoint.load_tensors(path)
        if meta.get("kind") != "ws_mapping":
            raise ValueError(f"{path} is not a ws_mapping checkpoint")
        if meta["teacher_config"] != teacher.config.to_dict():
            raise ValueError("teacher config does not match the one this mapping was trained against")
        mapping = ws_init(teacher, ModelConfig.from_dict(meta["student_config"]), seed=0)
        mapping.load_state(arrays)
        return mapping


def ws_init(teacher: TransformerModel, student_cfg: ModelConfig,
            seed: int | np.random.Generator) -> WSMapping:
    tcfg = teacher.config
    if tcfg.num_layers != student_cfg.num_layers:
        raise ValueError(
            f"layer counts differ (teacher {tcfg.num_layers}, student {student_cfg.num_layers}); "
            "the bilinear scheme maps layer i to layer i")
    if student_cfg.hidden_size >= tcfg.hidden_size:
        raise ValueError("student hidden size must be smaller than the teacher's")
    if student_cfg.ffn_size > tcfg.ffn_size:
        raise ValueError("student ffn size must not exceed the teacher's")
    if student_cfg.vocab_size != tcfg.vocab_size:
        raise ValueError("teacher and student must share a vocabulary")
    if student_cfg.num_classes != tcfg.num_classes:
        raise ValueError("teacher and student must share the class count")
    if student_cfg.max_seq_len > tcfg.max_seq_len:
        raise ValueError("student max_seq_len must not exceed the teacher's")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t_shapes = param_shapes(tcfg)
    left: dict[str, Tensor] = {}
    right: dict[str, Tensor] = {}
    free: dict[str, Tensor] = {}
    for name, s_shape in param_shapes(student_cfg).items():
        kind = param_kind(name)
        t_shape = t_shapes[name]
        if kind == "linear":
            n, m = t_shape
            a, b = s_shape
            left[name] = Tensor(xavier_normal((a, n), rng), requires_grad=True)
            right[name] = Tensor(xavier_normal((m, b), rng), requires_grad=True)
        elif kind == "bias":
            right[name] = Tensor(xavier_normal((t_shape[1], s_shape[1]), rng), requires_grad=True)
        elif kind == "embedding":
            right[name] = Tensor(xavier_uniform((t_shape[1], s_shape[1]), rng), requires_grad=True)
        elif kind == "classifier_w":
            left[name] = Tensor(xavier_normal((s_shape[0], t_shape[0]), rng), requires_grad=True)
        elif kind == "classifier_b":
            free[name] = Tensor(teacher.params[name].data.copy(), requires_grad=True)
        else:  # norm
            init = np.ones(s_shape) if name.endswith("gain") else np.zeros(s_shape)
            free[name] = Tensor(init, requires_grad=True)
    return WSMapping(teacher, student_cfg, left, right, free)


def bake(mapping: "WSMapping | GatedWSMapping") -> TransformerModel:
    return mapping.bake()


# ---------------------------------------------------------------------------
# Gated blending with a trainable base
# ---------------------------------------------------------------------------


class GatedWSMapping:
    def __init__(self, teacher: TransformerModel, base: TransformerModel,
                 left: dict[str, Tensor], right: dict[str, Tensor],
                 gate_logit: Tensor, freeze_gate: float | None = None):
        self.teacher = teacher
        self.base = base
        self.config = base.config
        self.left = left
        self.right = right
        self.gate_logit = gate_logit
        self.freeze_gate = freeze_gate
        t_pos = teacher.params["pos_emb"].data
        self._pos_src = Tensor(t_pos[: base.config.max_seq_len].copy())

    def gate(self) -> Tensor:
        if self.freeze_gate is not None:
            return Tensor(np.array([self.freeze_gate]))
        return sigmoid(self.gate_logit)

    def sigma(self) -> float:
        return float(self.gate().data[0])

    def trainable_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update({f"left.{n}": t for n, t in self.left.items()})
        out.update({f"right.{n}": t for n, t in self.right.items()})
        out.update({f"base.{n}": t for n, t in self.base.params.items()})
        if self.freeze_gate is None:
            out["gate_logit"] = self.gate_logit
        return out

    def _mapped(self, name: str) -> Tensor:
        kind = param_kind(name)
        t = self.teacher.params[name]
        if kind == "linear":
            return matmul(matmul(self.left[name], t), self.right[name])
        if kind == "classifier_w":
            return matmul(self.left[name], t)
        if kind == "classifier_b":
            return t  # class dimension is fixed, blended as-is
        if name == "pos_emb":
            return matmul(self._pos_src, self.right[name])
        return matmul(t, self.right[name])

    def materialize(self) -> dict[str, Tensor]:
        g = self.gate()
        one_minus = 1.0 - g
        out: dict[str, Tensor] = {}
        for name in param_shapes(self.config):
            base_t = self.base.params[name]
            if param_kind(name) == "norm":
                out[name] = base_t  # no teacher-side counterpart at student width
            else:
                out[name] = self._mapped(name) * one_minus + base_t * g
        return out

    def view(self) -> ModelView:
        return view_from_params(self.config, self.materialize())

    def bake(self) -> TransformerModel:
        arrays = {name: t.data.copy() for name, t in self.materialize().items()}
        return TransformerModel.from_arrays(self.config, arrays, trainable=True)

    def train_param_count(self) -> int:
        return sum(t.size for t in self.trainable_parameters().values())

    def inference_param_count(self) -> int:
        return count_from_config(self.config)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"gated.left.{n}": t.data.copy() for n, t in self.left.items()}
        out.update({f"gated.right.{n}": t.data.copy() for n, t in self.right.items()})
        out.update({f"gated.base.{n}": t.data.copy() for n, t in self.base.params.items()})
        out["gated.gate_logit"] = self.gate_logit.data.copy()
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self.left.items():
            t.data = arrays[f"gated.left.{n}"].copy()
        for n, t in self.right.items():
            t.data = arrays[f"gated.right.{n}"].copy()
        for n, t in self.base.params.items():
            t.data = arrays[f"gated.base.{n}"].copy()
        self.gate_logit.data = arrays["gated.gate_logit"].copy()

    def save(self, path) -> None:
        checkpoint.save_tensors(path, self.state_dict(), meta={
            "kind": "gated_ws_mapping",
            "student_config": self.config.to_dict(),
            "teacher_config": self.teacher.config.to_dict(),
            "freeze_gate": self.freeze_gate,
        })

    @classmethod
    def load(cls, path, teacher: TransformerModel) -> "GatedWSMapping":
        arrays, meta = checkpoint.load_tensors(path)
        if meta.get("kind") != "gated_ws_mapping":
            raise ValueError(f"{path} is not a gated_ws_mapping checkpoint")
        if meta["teacher_config"] != teacher.config.to_dict():
            raise ValueError("teacher config does not match the one this mapping was trained against")
        base = TransformerModel.init(ModelConfig.from_dict(meta["student_config"]), seed=0)
        mapping = gated_ws_init(teacher, base, seed=0, freeze_gate=meta.get("freeze_gate"))
        mapping.load_state(arrays)
        return mapping


def gated_ws_init(teacher: TransformerModel, base: TransformerModel,
                  seed: int | np.random.Generator, s0: float = 2.0,
                  freeze_gate: float | None = None) -> GatedWSMapping:
    tcfg, scfg = teacher.config, base.config
    if tcfg.num_layers < scfg.num_layers:
        raise ValueError("teacher must have at least as many layers as the base; "
                         "its first num_layers(base) layers are blended")
    if scfg.hidden_size > tcfg.hidden_size:
        raise ValueError("base hidden size must not exceed the teacher's")
    if scfg.ffn_size > tcfg.ffn_size:
        raise ValueError("base ffn size must not exceed the teacher's")
    if scfg.vocab_size != tcfg.vocab_size or scfg.num_classes != tcfg.num_classes:
        raise ValueError("teacher and base must share vocabulary and class count")
    if scfg.max_seq_len > tcfg.max_seq_len:
        raise ValueError("base max_seq_len must not exceed the teacher's")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t_shapes = param_shapes(tcfg)
    left: dict[str, Tensor] = {}
    right: dict[str, Tensor] = {}
    for name, s_shape in param_shapes(scfg).items():
        kind = param_kind(name)
        t_shape = t_shapes[name]  # deeper teacher layers are simply unused
        if kind == "linear":
            left[name] = Tensor(xavier_normal((s_shape[0], t_shape[0]), rng), requires_grad=True)
            right[name] = Tensor(xavier_normal((t_shape[1], s_shape[1]), rng), requires_grad=True)
        elif kind == "bias":
            right[name] = Tensor(xavier_normal((t_shape[1], s_shape[1]), rng), requires_grad=True)
        elif kind == "embedding":
            right[name] = Tensor(xavier_uniform((t_shape[1], s_shape[1]), rng), requires_grad=True)
        elif kind == "classifier_w":
            left[name] = Tensor(xavier_normal((s_shape[0], t_shape[0]), rng), requires_grad=True)
    gate_logit = Tensor(np.array([float(s0)]), requires_grad=(freeze_gate is None))
    return GatedWSMapping(teacher, base, left, right, gate_logit, freeze_gate)


# ---------------------------------------------------------------------------
# Truncated SVD baseline
# ---------------------------------------------------------------------------


class FactoredLinear:
    """y = (x @ u) @ v (+ b): two thin matmuls, activation width unchanged."""

    def __init__(self, u: Tensor, v: Tensor, b: Tensor | None = None):
        self.u = u
        self.v = v
        self.b = b

    def apply(self, x: Tensor) -> Tensor:
        y = matmul(matmul(x, self.u), self.v)
        return y if self.b is None else y + self.b


class FactoredEmbedding:
    def __init__(self, u: Tensor, v: Tensor):
        self.u = u
        self.v = v

    def lookup(self, ids: np.ndarray) -> Tensor:
        from .tensor import embedding
        return matmul(embedding(self.u, ids), self.v)


class SVDFactors:
    def __init__(self, config: ModelConfig, rank: int, u: dict[str, Tensor],
                 v: dict[str, Tensor], dense: dict[str, Tensor]):
        self.config = config
        self.rank = rank
        self.u = u
        self.v = v
        self.dense = dense

    def trainable_parameters(self) -> dict[str, Tensor]:
        out = {f"u.{n}": t for n, t in self.u.items()}
        out.update({f"v.{n}": t for n, t in self.v.items()})
        out.update({f"dense.{n}": t for n, t in self.dense.items()})
        return out

    def view(self) -> ModelView:
        ops: dict[str, object] = {}
        for name in self.u:
            ops[name] = (self.u[name], self.v[name])
        p = self.dense
        cfg = self.config
        layers = []
        for i in range(cfg.num_layers):
            a, f = f"layer{i}.attn", f"layer{i}.ffn"
            def fl(wname, bname):
                u, v = ops[wname]
                return FactoredLinear(u, v, p[bname])
            layers.append(EncoderLayerView(
                q=fl(f"{a}.wq", f"{a}.bq"), k=fl(f"{a}.wk", f"{a}.bk"),
                v=fl(f"{a}.wv", f"{a}.bv"), o=fl(f"{a}.wo", f"{a}.bo"),
                ff1=fl(f"{f}.w1", f"{f}.b1"), ff2=fl(f"{f}.w2", f"{f}.b2"),
                ln1_gain=p[f"{a}.ln_gain"], ln1_bias=p[f"{a}.ln_bias"],
                ln2_gain=p[f"{f}.ln_gain"], ln2_bias=p[f"{f}.ln_bias"],
            ))
        eu, ev = ops["token_emb"]
        return ModelView(config=cfg, embed=FactoredEmbedding(eu, ev), pos=p["pos_emb"],
                         layers=layers, classifier=Linear(p["classifier.w"], p["classifier.b"]))

    def train_param_count(self) -> int:
        return sum(t.size for t in self.trainable_parameters().values())

    inference_param_count = train_param_count  # factors are the deployed form

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"svd.u.{n}": t.data.copy() for n, t in self.u.items()}
        out.update({f"svd.v.{n}": t.data.copy() for n, t in self.v.items()})
        out.update({f"svd.dense.{n}": t.data.copy() for n, t in self.dense.items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self.u.items():
            t.data = arrays[f"svd.u.{n}"].copy()
        for n, t in self.v.items():
            t.data = arrays[f"svd.v.{n}"].copy()
        for n, t in self.dense.items():
            t.data = arrays[f"svd.dense.{n}"].copy()

    def save(self, path) -> None:
        checkpoint.save_tensors(path, self.state_dict(), meta={
            "kind": "svd_factors", "rank": self.rank, "config": self.config.to_dict()})

    @classmethod
    def load(cls, path) -> "SVDFactors":
        arrays, meta = checkpoint.load_tensors(path)
        if meta.get("kind") != "svd_factors":
            raise ValueError(f"{path} is not an svd_factors checkpoint")
        cfg = ModelConfig.from_dict(meta["config"])
        u, v, dense = {}, {}, {}
        for key, arr in arrays.items():
            group, name = key.split(".", 2)[1], key.split(".", 2)[2]
            target = {"u": u, "v": v, "dense": dense}[group]
            target[name] = Tensor(arr.copy(), requires_grad=True)
        return cls(cfg, int(meta["rank"]), u, v, dense)


def svd_factorize(teacher: TransformerModel, rank: int) -> SVDFactors:
    """Replace each linear weight and the token embedding with rank-r factors
    initialized from the truncated SVD; everything else is a dense copy."""
    if rank < 1:
        raise ValueError(f"rank must be at least 1, got {rank}")
    cfg = teacher.config
    u: dict[str, Tensor] = {}
    v: dict[str, Tensor] = {}
    dense: dict[str, Tensor] = {}
    for name, t in teacher.params.items():
        if not _is_factorized(name):
            dense[name] = Tensor(t.data.copy(), requires_grad=True)
            continue
        n, m = t.shape
        if rank > min(n, m):
            raise ValueError(f"rank {rank} exceeds min dimension {min(n, m)} of {name} {t.shape}")
        uu, ss, vt = np.linalg.svd(t.data, full_matrices=False)
        u[name] = Tensor(uu[:, :rank] * ss[:rank], requires_grad=True)
        v[name] = Tensor(vt[:rank, :].copy(), requires_grad=True)
    return SVDFactors(cfg, rank, u, v, dense)


# ---------------------------------------------------------------------------
# Tensor-train baseline
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _exact_splits(n: int, parts: int) -> tuple[tuple[int, ...], ...]:
    """All non-decreasing `parts`-tuples of factors >= 1 whose product is n."""
    if parts == 1:
        return ((n,),)
    out = []
    for d in range(1, n + 1):
        if n % d:
            continue
        for rest in _exact_splits(n // d, parts - 1):
            if rest[0] >= d:
                out.append((d,) + rest)
    return tuple(out)


def _best_split(n: int, parts: int) -> tuple[int, ...]:
    # minimize the sorted-descending tuple: max factor first, then the next
    return min(_exact_splits(n, parts), key=lambda t: tuple(sorted(t, reverse=True)))


@lru_cache(maxsize=None)
def dim_factorization(n: int, parts: int = 4) -> tuple[tuple[int, ...], int]:
    """Split a dimension into `parts` near-equal factors.

    Returns (factors ascending, padded size). Dims with a balanced exact split
    are not padded; otherwise the dim is zero-padded to the smallest size
    admitting a split whose max factor is as small as possible.
    """
    if n < 1 or parts < 2:
        raise ValueError(f"cannot factorize dimension {n} into {parts} parts")
    balanced = math_ceil(n ** (1.0 / parts))
    exact = _best_split(n, parts)
    if max(exact) <= 2 * balanced:
        return exact, n
    for cap in range(balanced, n + 1):
        best: tuple[int, ...] | None = None
        best_prod = None
        for split_ in _bounded_splits(cap, parts):
            prod = 1
            for f in split_:
                prod *= f
            if prod < n:
                continue
            key = (prod, tuple(sorted(split_, reverse=True)))
            if best_prod is None or key < best_prod:
                best_prod = key
                best = split_
        if best is not None:
            return tuple(sorted(best)), best_prod[0]
    return exact, n  # unreachable for n >= 1


def math_ceil(x: float) -> int:
    v = int(x)
    return v if v == x else v + 1


@lru_cache(maxsize=None)
def _bounded_splits(cap: int, parts: int) -> tuple[tuple[int, ...], ...]:
    """All non-decreasing `parts`-tuples with every factor in [1, cap]."""
    if parts == 1:
        return tuple((d,) for d in range(1, cap + 1))
    out = []
    for first in range(1, cap + 1):
        for rest in _bounded_splits(cap, parts - 1):
            if rest[0] >= first:
                out.append((first,) + rest)
    return tuple(out)


def tt_clipped_ranks(modes: tuple[int, ...], cap: int | None) -> list[int]:
    """Feasible bond ranks for a TT-SVD sweep: each bond is limited by the
    mode products on either side, and optionally by a uniform cap."""
    d = len(modes)
    ranks = [1]
    for k in range(1, d):
        lo = 1
        for s in modes[:k]:
            lo *= s
        hi = 1
        for s in modes[k:]:
            hi *= s
        r = min(lo, hi)
        if cap is not None:
            r = min(r, cap)
        ranks.append(r)
    ranks.append(1)
    return ranks


def _to_tt_tensor(w: np.ndarray, rf: tuple[int, ...], cf: tuple[int, ...],
                  n_pad: int, m_pad: int) -> np.ndarray:
    wp = np.zeros((n_pad, m_pad))
    wp[: w.shape[0], : w.shape[1]] = w
    parts = len(rf)
    t = wp.reshape(rf + cf)
    perm = []
    for k in range(parts):
        perm.extend((k, parts + k))
    modes = tuple(r * c for r, c in zip(rf, cf))
    return t.transpose(perm).reshape(modes)


def tt_svd(w: np.ndarray, rf: tuple[int, ...], cf: tuple[int, ...],
           n_pad: int, m_pad: int, cap: int | None) -> list[np.ndarray]:
    """Successive reshape + truncated SVD sweep. Returns cores shaped
    (rank_in, row_factor * col_factor, rank_out)."""
    modes = tuple(r * c for r, c in zip(rf, cf))
    t = _to_tt_tensor(w, rf, cf, n_pad, m_pad)
    cores: list[np.ndarray] = []
    rank_in = 1
    c = t.reshape(rank_in * modes[0], -1)
    for k in range(len(modes) - 1):
        uu, ss, vt = np.linalg.svd(c, full_matrices=False)
        r = uu.shape[1] if cap is None else min(cap, uu.shape[1])
        cores.append(uu[:, :r].reshape(rank_in, modes[k], r))
        c = ss[:r, None] * vt[:r]
        rank_in = r
        if k + 1 < len(modes) - 1:
            c = c.reshape(rank_in * modes[k + 1], -1)
    cores.append(c.reshape(rank_in, modes[-1], 1))
    return cores


def tt_reconstruct(cores: list[Tensor], rf: tuple[int, ...], cf: tuple[int, ...],
                   n: int, m: int) -> Tensor:
    """Contract cores back into the (n, m) matrix (padding stripped)."""
    parts = len(rf)
    t = cores[0].reshape((cores[0].shape[1], cores[0].shape[2]))
    for g in cores[1:]:
        rho, s, rho_out = g.shape
        t = matmul(t, g.reshape((rho, s * rho_out)))
        t = t.reshape((t.shape[0] * s, rho_out))
    modes_interleaved: list[int] = []
    for r, c in zip(rf, cf):
        modes_interleaved.extend((r, c))
    t = t.reshape(tuple(modes_interleaved))
    perm = [2 * k for k in range(parts)] + [2 * k + 1 for k in range(parts)]
    n_pad = int(np.prod(rf))
    m_pad = int(np.prod(cf))
    t = t.transpose(tuple(perm)).reshape((n_pad, m_pad))
    if n_pad > n:
        t = narrow(t, 0, 0, n)
    if m_pad > m:
        t = narrow(t, 1, 0, m)
    return t


class TTLinear:
    """Contract the input against the cores one factor at a time, never
    materializing the full weight."""

    def __init__(self, cores: list[Tensor], rf: tuple[int, ...], cf: tuple[int, ...],
                 n: int, m: int, b: Tensor | None = None):
        self.cores = cores
        self.rf = rf
        self.cf = cf
        self.n = n
        self.m = m
        self.n_pad = int(np.prod(rf))
        self.m_pad = int(np.prod(cf))
        self.b = b

    def apply(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        batch = int(np.prod(lead)) if lead else 1
        t = x.reshape((batch, x.shape[-1]))
        if self.n_pad > self.n:
            t = concat([t, Tensor(np.zeros((batch, self.n_pad - self.n)))], axis=1)
        rf, cf = self.rf, self.cf
        t = t.reshape((batch, rf[0], self.n_pad // rf[0], 1, 1))
        for k, g in enumerate(self.cores):
            rho_in, _, rho_out = g.shape
            _, _, rest, m_done, _ = t.shape
            t = t.transpose((0, 2, 3, 1, 4)).reshape((batch * rest * m_done, rf[k] * rho_in))
            gm = (g.reshape((rho_in, rf[k], cf[k], rho_out))
                   .transpose((1, 0, 2, 3))
                   .reshape((rf[k] * rho_in, cf[k] * rho_out)))
            t = matmul(t, gm).reshape((batch, rest, m_done * cf[k], rho_out))
            if k + 1 < len(self.cores):
                nxt = rf[k + 1]
                t = t.reshape((batch, nxt, rest // nxt, m_done * cf[k], rho_out))
        t = t.reshape((batch, self.m_pad))
        if self.m_pad > self.m:
            t = narrow(t, 1, 0, self.m)
        y = t.reshape(lead + (self.m,))
        return y + self.b if self.b is not None else y


class TTEmbedding:
    """Rebuild the table from its cores, then gather rows. Padding rows are
    unreachable because ids are validated against the true vocab size."""

    def __init__(self, cores: list[Tensor], rf, cf, vocab: int, width: int):
        self.cores = cores
        self.rf = rf
        self.cf = cf
        self.vocab = vocab
        self.width = width

    def lookup(self, ids: np.ndarray) -> Tensor:
        from .tensor import embedding
        table = tt_reconstruct(self.cores, self.rf, self.cf, self.vocab, self.width)
        return embedding(table, ids)


class TTFactors:
    def __init__(self, config: ModelConfig, rank: int | None,
                 cores: dict[str, list[Tensor]], facts: dict[str, dict],
                 dense: dict[str, Tensor], parts: int = 4):
        self.config = config
        self.rank = rank
        self.cores = cores
        self.facts = facts
        self.dense = dense
        self.parts = parts

    def trainable_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, gs in self.cores.items():
            for k, g in enumerate(gs, start=1):
                out[f"core{k}.{name}"] = g
        out.update({f"dense.{n}": t for n, t in self.dense.items()})
        return out

    def view(self) -> ModelView:
        p = self.dense
        cfg = self.config

        def tl(wname, bname):
            f = self.facts[wname]
            return TTLinear(self.cores[wname], tuple(f["rf"]), tuple(f["cf"]),
                            f["n"], f["m"], p[bname])

        layers = []
        for i in range(cfg.num_layers):
            a, f = f"layer{i}.attn", f"layer{i}.ffn"
            layers.append(EncoderLayerView(
                q=tl(f"{a}.wq", f"{a}.bq"), k=tl(f"{a}.wk", f"{a}.bk"),
                v=tl(f"{a}.wv", f"{a}.bv"), o=tl(f"{a}.wo", f"{a}.bo"),
                ff1=tl(f"{f}.w1", f"{f}.b1"), ff2=tl(f"{f}.w2", f"{f}.b2"),
                ln1_gain=p[f"{a}.ln_gain"], ln1_bias=p[f"{a}.ln_bias"],
                ln2_gain=p[f"{f}.ln_gain"], ln2_bias=p[f"{f}.ln_bias"],
            ))
        ef = self.facts["token_emb"]
        embed = TTEmbedding(self.cores["token_emb"], tuple(ef["rf"]), tuple(ef["cf"]),
                            ef["n"], ef["m"])
        return ModelView(config=cfg, embed=embed, pos=p["pos_emb"], layers=layers,
                         classifier=Linear(p["classifier.w"], p["classifier.b"]))

    def train_param_count(self) -> int:
        return sum(t.size for t in self.trainable_parameters().values())

    inference_param_count = train_param_count

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, gs in self.cores.items():
            for k, g in enumerate(gs, start=1):
                out[f"tt.core{k}.{name}"] = g.data.copy()
        out.update({f"tt.dense.{n}": t.data.copy() for n, t in self.dense.items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, gs in self.cores.items():
            for k, g in enumerate(gs, start=1):
                g.data = arrays[f"tt.core{k}.{name}"].copy()
        for n, t in self.dense.items():
            t.data = arrays[f"tt.dense.{n}"].copy()

    def save(self, path) -> None:
        checkpoint.save_tensors(path, self.state_dict(), meta={
            "kind": "tt_factors", "rank": self.rank, "parts": self.parts,
            "config": self.config.to_dict(), "facts": self.facts})

    @classmethod
    def load(cls, path) -> "TTFactors":
        arrays, meta = checkpoint.load_tensors(path)
        if meta.get("kind") != "tt_factors":
            raise ValueError(f"{path} is not a tt_factors checkpoint")
        cfg = ModelConfig.from_dict(meta["config"])
        facts = meta["facts"]
        parts = int(meta["parts"])
        cores: dict[str, list[Tensor]] = {}
        dense: dict[str, Tensor] = {}
        for key, arr in arrays.items():
            _, group, name = key.split(".", 2)
            if group == "dense":
                dense[name] = Tensor(arr.copy(), requires_grad=True)
            else:
                k = int(group.removeprefix("core"))
                cores.setdefault(name, [None] * parts)[k - 1] = Tensor(arr.copy(), requires_grad=True)
        rank = meta["rank"]
        return cls(cfg, None if rank is None else int(rank), cores, facts, dense, parts)


def tt_factorize(teacher: TransformerModel, rank: int | None, parts: int = 4) -> TTFactors:
    """Factorize each linear weight and the token embedding into a chain of
    `parts` cores via the TT-SVD sweep. rank=None keeps all singular values."""
    if parts < 2:
        raise ValueError(f"need at least 2 cores, got {parts}")
    if rank is not None and rank < 1:
        raise ValueError(f"rank must be at least 1 or None, got {rank}")
    cfg = teacher.config
    cores: dict[str, list[Tensor]] = {}
    facts: dict[str, dict] = {}
    dense: dict[str, Tensor] = {}
    for name, t in teacher.params.items():
        if not _is_factorized(name):
            dense[name] = Tensor(t.data.copy(), requires_grad=True)
            continue
        n, m = t.shape
        rf, n_pad = dim_factorization(n, parts)
        cf, m_pad = dim_factorization(m, parts)
        gs = tt_svd(t.data, rf, cf, n_pad, m_pad, rank)
        cores[name] = [Tensor(g, requires_grad=True) for g in gs]
        facts[name] = {"rf": list(rf), "cf": list(cf), "n": n, "m": m,
                       "n_pad": n_pad, "m_pad": m_pad,
                       "ranks": [g.shape[0] for g in gs] + [1]}
    return TTFactors(cfg, rank, cores, facts, dense, parts)


# ---------------------------------------------------------------------------
# Closed-form parameter counts and budget matching
# ---------------------------------------------------------------------------


def _fixed_dense_count(tcfg: ModelConfig) -> int:
    total = 0
    for name, shape in param_shapes(tcfg).items():
        if not _is_factorized(name):
            total += int(np.prod(shape))
    return total


def svd_param_count(tcfg: ModelConfig, rank: int) -> int:
    total = _fixed_dense_count(tcfg)
    for name, shape in param_shapes(tcfg).items():
        if _is_factorized(name):
            n, m = shape
            total += rank * (n + m)
    return total


def tt_param_count(tcfg: ModelConfig, rank: int, parts: int = 4) -> int:
    total = _fixed_dense_count(tcfg)
    for name, shape in param_shapes(tcfg).items():
        if not _is_factorized(name):
            continue
        n, m = shape
        rf, _ = dim_factorization(n, parts)
        cf, _ = dim_factorization(m, parts)
        modes = tuple(r * c for r, c in zip(rf, cf))
        ranks = tt_clipped_ranks(modes, rank)
        total += sum(ranks[k] * modes[k] * ranks[k + 1] for k in range(len(modes)))
    return total


def ws_trainable_count(tcfg: ModelConfig, scfg: ModelConfig) -> int:
    """Map parameters plus free student parameters, the trainable set."""
    t_shapes = param_shapes(tcfg)
    total = 0
    for name, s_shape in param_shapes(scfg).items():
        kind = param_kind(name)
        t_shape = t_shapes[name]
        if kind == "linear":
            total += s_shape[0] * t_shape[0] + t_shape[1] * s_shape[1]
        elif kind in ("bias", "embedding"):
            total += t_shape[1] * s_shape[1]
        elif kind == "classifier_w":
            total += s_shape[0] * t_shape[0]
        else:  # free: norms, classifier bias
            total += int(np.prod(s_shape))
    return total


def match_rank_to_budget(teacher_cfg: ModelConfig, student_cfg: ModelConfig,
                         method: str, parts: int = 4) -> int:
    """Largest rank whose factorized parameter count stays within 1.05x the
    plain student's count."""
    if method not in ("svd", "tt"):
        raise ValueError(f"method must be 'svd' or 'tt', got {method!r}")
    budget = 1.05 * count_from_config(student_cfg)
    count = svd_param_count if method == "svd" else tt_param_count
    if method == "svd":
        max_rank = min(min(shape) for name, shape in param_shapes(teacher_cfg).items()
                       if _is_factorized(name))
    else:
        max_rank = 1 << 20
    best = 0
    prev = None
    for r in range(1, max_rank + 1):
        c = count(teacher_cfg, r)
        if c > budget:
            break
        best = r
        if prev is not None and c == prev:
            break  # ranks saturated by mode products
        prev = c
    if best == 0:
        raise ValueError(f"no {method} rank fits the budget {budget:.0f}")
    return best
