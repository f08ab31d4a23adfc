"""Classification training objectives.

Three kinds:

* mle: cross-entropy against the integer labels.
* kd: alpha * mle + (1 - alpha) * soft cross-entropy between the student's
  log-probabilities and a frozen teacher's distribution, both at a shared
  temperature. No temperature-squared rescaling is applied.
* kd-eo: adds a hidden-state term, gamma * sum over student layers of the
  mean squared error between the teacher's first-position state and an
  affine map of the student's, with (alpha, beta, gamma) on the simplex.

Weighted terms are combined by literal multiplication, so a weight of
exactly 0.0 or 1.0 removes or keeps a term bit-exactly and the degenerate
objectives coincide with their simpler forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ForwardOutput, Linear, first_position_state, xavier_normal
from .tensor import Tensor, cross_entropy_with_logits, log_softmax

KINDS = ("mle", "kd", "kd-eo")


def simplex_weights(values: tuple[float, float, float],
                    mode: str = "normalize") -> tuple[float, float, float]:
    """Project three raw weights onto the probability simplex.

    normalize: divide nonnegative weights by their sum.
    softmax: treat the values as logits, required to lie in [-5, 5].
    """
    if mode == "normalize":
        if any(v < 0 for v in values):
            raise ValueError(f"normalize mode needs nonnegative weights, got {values}")
        s = sum(values)
        if s <= 0:
            raise ValueError("at least one objective weight must be positive")
        return tuple(v / s for v in values)
    if mode == "softmax":
        if any(not -5.0 <= v <= 5.0 for v in values):
            raise ValueError(f"softmax mode needs logits in [-5, 5], got {values}")
        m = max(values)
        e = [math.exp(v - m) for v in values]
        s = sum(e)
        return tuple(x / s for x in e)
    raise ValueError(f"unknown weight mode {mode!r}")


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "mle"
    alpha: float = 0.5   # label term weight
    beta: float = 0.0    # teacher-distribution term weight (kd-eo only; kd uses 1 - alpha)
    gamma: float = 0.0   # hidden-state term weight
    temperature: float = 1.0
    weight_mode: str = "normalize"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}, expected one of {KINDS}")
        if self.temperature < 1.0:
            raise ValueError(f"temperature must be >= 1, got {self.temperature}")
        if self.kind == "mle":
            object.__setattr__(self, "alpha", 1.0)
            object.__setattr__(self, "beta", 0.0)
            object.__setattr__(self, "gamma", 0.0)
        elif self.kind == "kd":
            if not 0.0 <= self.alpha <= 1.0:
                raise ValueError(f"kd needs alpha in [0, 1], got {self.alpha}")
            object.__setattr__(self, "beta", 1.0 - self.alpha)
            object.__setattr__(self, "gamma", 0.0)
        else:
            a, b, g = simplex_weights((self.alpha, self.beta, self.gamma), self.weight_mode)
            object.__setattr__(self, "alpha", a)
            object.__setattr__(self, "beta", b)
            object.__setattr__(self, "gamma", g)

    @property
    def needs_teacher(self) -> bool:
        return self.kind != "mle"

    @property
    def needs_hidden_maps(self) -> bool:
        return self.kind == "kd-eo" and self.gamma > 0.0


class HiddenMaps:
    """One trainable affine map per student layer, from student width to
    teacher width, used by the hidden-state term."""

    def __init__(self, maps: list[Linear]):
        self.maps = maps

    @classmethod
    def create(cls, num_layers: int, student_width: int, teacher_width: int,
               seed: int | np.random.Generator) -> "HiddenMaps":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        maps = []
        for _ in range(num_layers):
            w = Tensor(xavier_normal((student_width, teacher_width), rng), requires_grad=True)
            b = Tensor(np.zeros((1, teacher_width)), requires_grad=True)
            maps.append(Linear(w, b))
        return cls(maps)

    def apply(self, layer: int, x: Tensor) -> Tensor:
        """layer is 1-indexed: map j pairs with the j-th encoder layer."""
        return self.maps[layer - 1].apply(x)

    def trainable_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for j, lin in enumerate(self.maps, start=1):
            out[f"hidden_map{j}.w"] = lin.w
            out[f"hidden_map{j}.b"] = lin.b
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.trainable_parameters().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.trainable_parameters().items():
            t.data = arrays[name].copy()


def mle_loss(student_out: ForwardOutput, labels: np.ndarray) -> Tensor:
    return cross_entropy_with_logits(student_out.logits, labels)


def kd_soft_loss(student_out: ForwardOutput, teacher_out: ForwardOutput,
                 temperature: float = 1.0) -> Tensor:
    """Cross-entropy of the student's tempered log-probabilities under the
    teacher's tempered distribution. The teacher side is a constant."""
    t_logits = teacher_out.logits.data / temperature
    z = t_logits - t_logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    t_probs = Tensor(e / e.sum(axis=1, keepdims=True))
    logp = log_softmax(student_out.logits * (1.0 / temperature))
    batch = student_out.logits.shape[0]
    return -(t_probs * logp).sum() * (1.0 / batch)


def eo_loss(student_out: ForwardOutput, teacher_out: ForwardOutput,
            hidden_maps: HiddenMaps) -> Tensor:
    """Sum over student layers of the MSE between the teacher's first-position
    hidden state and the mapped student state. The teacher pairs layer by
    layer from the bottom, so a deeper teacher contributes its first layers."""
    num_student = len(student_out.hidden_states) - 1
    num_teacher = len(teacher_out.hidden_states) - 1
    if num_teacher < num_student:
        raise ValueError(
            f"teacher has {num_teacher} layers, fewer than the student's {num_student}")
    if len(hidden_maps.maps) != num_student:
        raise ValueError(
            f"got {len(hidden_maps.maps)} hidden maps for {num_student} student layers")
    total: Tensor | None = None
    for j in range(1, num_student + 1):
        hs = first_position_state(student_out, j)
        ht = Tensor(first_position_state(teacher_out, j).data)  # constant
        d = hidden_maps.apply(j, hs) - ht
        sq = (d * d).mean()
        total = sq if total is None else total + sq
    return total


def objective_loss(spec: ObjectiveSpec, student_out: ForwardOutput, labels: np.ndarray,
                   teacher_out: ForwardOutput | None = None,
                   hidden_maps: HiddenMaps | None = None) -> tuple[Tensor, dict]:
    """Combined loss and per-term float values."""
    mle = mle_loss(student_out, labels)
    terms = {"mle": float(mle.data)}
    if spec.kind == "mle":
        terms["total"] = terms["mle"]
        return mle, terms

    if teacher_out is None:
        raise ValueError(f"objective {spec.kind!r} needs teacher outputs")
    soft = kd_soft_loss(student_out, teacher_out, spec.temperature)
    terms["kd"] = float(soft.data)
    if spec.kind == "kd":
        loss = mle * spec.alpha + soft * spec.beta
        terms["total"] = float(loss.data)
        return loss, terms

    if hidden_maps is None:
        raise ValueError("kd-eo needs hidden maps")
    eo = eo_loss(student_out, teacher_out, hidden_maps)
    terms["eo"] = float(eo.data)
    loss = mle * spec.alpha + soft * spec.beta + eo * spec.gamma
    terms["total"] = float(loss.data)
    return loss, terms
