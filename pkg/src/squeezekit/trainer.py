"""Training loop: Adam with bias correction, linear warmup then linear decay,
periodic dev evaluation with best-state restore, and a JSONL run report.

Every source of randomness is a named stream derived from the run seed, so
two runs with the same seed and inputs produce identical checkpoints and
identical reports up to wall-clock fields.
"""
from __future__ import annotations

import json
import logging
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Task, collate, eval_batches
from .model import TransformerModel, forward
from .objectives import HiddenMaps, ObjectiveSpec, objective_loss
from .tensor import Tensor

log = logging.getLogger("squeezekit.trainer")

WALL_CLOCK_KEYS = ("wall_clock_s",)


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; training aborts immediately."""


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose under one run seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


@dataclass
class TrainConfig:
    total_steps: int
    batch_size: int = 32
    learning_rate: float = 1e-3
    map_learning_rate: float | None = None  # hidden-map group; defaults to learning_rate
    warmup_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    attn_dropout: float = 0.1
    hidden_dropout: float = 0.1
    eval_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(
                f"warmup_steps must lie in [0, total_steps], got {self.warmup_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.map_learning_rate is not None and self.map_learning_rate <= 0:
            raise ValueError(f"map_learning_rate must be positive, got {self.map_learning_rate}")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        for name in ("attn_dropout", "hidden_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {p}")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak rate over warmup_steps, then linear decay so
    that step == total_steps lands on zero. `step` counts from 0."""
    total, warmup, base = cfg.total_steps, cfg.warmup_steps, cfg.learning_rate
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if warmup and step < warmup:
        return base * step / warmup
    if total == warmup:
        return 0.0
    return base * (total - step) / (total - warmup)


class Adam:
    """Bias-corrected Adam over named parameter groups. Each group carries an
    lr scale applied on top of the scheduled rate."""

    def __init__(self, groups: list[tuple[dict[str, Tensor], float]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.slots: list[tuple[Tensor, float, np.ndarray, np.ndarray]] = []
        seen: set[int] = set()
        for params, scale in groups:
            for name, p in params.items():
                if id(p) in seen:
                    raise ValueError(f"parameter {name} appears in more than one group")
                seen.add(id(p))
                self.slots.append((p, scale, np.zeros_like(p.data), np.zeros_like(p.data)))

    def zero_grad(self) -> None:
        for p, _, _, _ in self.slots:
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, scale, m, v in self.slots:
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (lr * scale) * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class RunReport:
    records: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.jsonl", "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(out / "summary.json", "w") as fh:
            json.dump(self.summary, fh, sort_keys=True, indent=2)
            fh.write("\n")


def comparable(record: dict) -> dict:
    """Copy of a record or summary with wall-clock fields removed, the form
    used for determinism comparisons."""
    return {k: v for k, v in record.items() if k not in WALL_CLOCK_KEYS}


def _batch_iter(examples, batch_size: int, rng: np.random.Generator):
    """Reshuffled epochs of full batches; datasets smaller than one batch are
    used whole each step."""
    n = len(examples)
    if n <= batch_size:
        while True:
            order = rng.permutation(n)
            yield [examples[i] for i in order]
        return
    while True:
        order = rng.permutation(n)
        for lo in range(0, n - batch_size + 1, batch_size):
            yield [examples[order[i]] for i in range(lo, lo + batch_size)]


def accuracy(artifact, examples, batch_size: int = 64) -> float:
    """Argmax accuracy in eval mode (no dropout)."""
    if not examples:
        raise ValueError("cannot evaluate on an empty example list")
    hits = 0
    for chunk in eval_batches(examples, batch_size):
        ids, mask, labels = collate(chunk)
        out = forward(artifact.view(), ids, mask, mode="eval")
        hits += int((out.logits.data.argmax(axis=1) == labels).sum())
    return hits / len(examples)


def _snapshot(artifact, hidden_maps: HiddenMaps | None) -> dict[str, np.ndarray]:
    state = artifact.state_dict()
    if hidden_maps is not None:
        state.update({f"hmap.{k}": v for k, v in hidden_maps.state_dict().items()})
    return state


def _restore(artifact, hidden_maps: HiddenMaps | None, state: dict[str, np.ndarray]) -> None:
    artifact.load_state({k: v for k, v in state.items() if not k.startswith("hmap.")})
    if hidden_maps is not None:
        hidden_maps.load_state({k.removeprefix("hmap."): v for k, v in state.items()
                                if k.startswith("hmap.")})


def train(artifact, task: Task, objective: ObjectiveSpec, cfg: TrainConfig,
          teacher: TransformerModel | None = None,
          hidden_maps: HiddenMaps | None = None,
          out_dir=None):
    """Train `artifact` (a plain model, a mapping, or a factor set) in place
    and return (artifact, RunReport).

    Records one report line per evaluation. The best dev state seen is
    restored at the end, so the artifact leaves this function holding its
    best checkpoint, not its last one.
    """
    if objective.needs_teacher and teacher is None:
        raise ValueError(f"objective {objective.kind!r} needs a teacher model")
    if objective.kind == "kd-eo" and hidden_maps is None:
        hidden_maps = HiddenMaps.create(
            artifact.config.num_layers, artifact.config.hidden_size,
            teacher.config.hidden_size, rng_stream(cfg.seed, "hidden-map-init"))

    groups: list[tuple[dict[str, Tensor], float]] = [(artifact.trainable_parameters(), 1.0)]
    if hidden_maps is not None:
        map_lr = cfg.map_learning_rate if cfg.map_learning_rate is not None else cfg.learning_rate
        groups.append((hidden_maps.trainable_parameters(), map_lr / cfg.learning_rate))
    opt = Adam(groups, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    data_rng = rng_stream(cfg.seed, "data-order")
    drop_rng = rng_stream(cfg.seed, "dropout")
    batches = _batch_iter(task.train, cfg.batch_size, data_rng)

    report = RunReport()
    best_dev = None
    best_step = None
    best_state = None
    is_gated = hasattr(artifact, "sigma")
    t0 = time.monotonic()

    for step in range(cfg.total_steps):
        lr = lr_schedule(step, cfg)
        ids, mask, labels = collate(next(batches))
        view = artifact.view()
        view.config = view.config.with_dropout(cfg.attn_dropout, cfg.hidden_dropout)
        out = forward(view, ids, mask, mode="train", rng=drop_rng)
        teacher_out = None
        if objective.needs_teacher:
            teacher_out = forward(teacher.view(), ids, mask, mode="eval")
        loss, terms = objective_loss(objective, out, labels, teacher_out, hidden_maps)
        if not np.isfinite(loss.data):
            raise TrainingDiverged(f"non-finite loss at step {step}: {float(loss.data)}")
        opt.zero_grad()
        loss.backward()
        opt.step(lr)

        if (step + 1) % cfg.eval_every == 0 or step == cfg.total_steps - 1:
            dev = accuracy(artifact, task.dev, cfg.batch_size)
            rec = {"step": step, "lr": lr, "loss": float(loss.data), "terms": terms,
                   "dev_accuracy": dev, "wall_clock_s": time.monotonic() - t0}
            if is_gated:
                rec["gate"] = artifact.sigma()
            report.records.append(rec)
            log.info("step %d loss %.4f dev %.4f lr %.2e", step, float(loss.data), dev, lr)
            if best_dev is None or dev > best_dev:
                best_dev, best_step = dev, step
                best_state = _snapshot(artifact, hidden_maps)
        else:
            log.debug("step %d loss %.4f lr %.2e", step, float(loss.data), lr)

    if best_state is not None:
        _restore(artifact, hidden_maps, best_state)

    report.summary = {
        "total_steps": cfg.total_steps,
        "seed": cfg.seed,
        "objective": objective.kind,
        "final_loss": report.records[-1]["loss"],
        "best_dev_accuracy": best_dev,
        "best_step": best_step,
        "wall_clock_s": time.monotonic() - t0,
    }
    if is_gated:
        report.summary["gate"] = artifact.sigma()
    if out_dir is not None:
        report.save(out_dir)
    return artifact, report
