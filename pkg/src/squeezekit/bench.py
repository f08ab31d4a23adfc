"""Parameter accounting, analytic cost counting, and wall-clock measurement.

Costs are multiply-accumulate (MAC) counts for one forward pass. Elementwise
work (softmax, layer norm, gelu, dropout, residuals) is linear in activation
size and excluded from the totals; the report says so explicitly. Factorized
models keep their activations at the original width, which is why their
attention terms dwarf a genuinely narrow student's.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, forward
from .reparam import ReparamSpec, dim_factorization, tt_clipped_ranks
from .trainer import rng_stream

EXCLUDED_NOTE = ("elementwise terms (softmax, layer norm, gelu, residuals, dropout) "
                 "are linear in activation size and excluded from MAC totals")


@dataclass
class FlopReport:
    total: int
    components: dict[str, int]
    batch: int
    seq: int
    note: str = EXCLUDED_NOTE

    def to_dict(self) -> dict:
        return {"total_macs": self.total, "components": self.components,
                "batch": self.batch, "seq": self.seq, "note": self.note}


def _svd_linear_macs(n: int, m: int, rank: int, rows: int) -> int:
    # (x @ u) @ v: two thin products at the original widths
    return rows * rank * (n + m)


def _tt_linear_macs(rf, cf, ranks, rows: int) -> int:
    """Core-by-core contraction cost, mirroring the actual forward: at step k
    the running tensor has rows * prod(rf[k+1:]) * prod(cf[:k]) rows and is
    multiplied by an (rf[k] * rank_in, cf[k] * rank_out) matrix."""
    total = 0
    parts = len(rf)
    for k in range(parts):
        rest = int(np.prod(rf[k + 1:])) if k + 1 < parts else 1
        m_done = int(np.prod(cf[:k])) if k else 1
        total += rows * rest * m_done * (rf[k] * ranks[k]) * (cf[k] * ranks[k + 1])
    return total


def _tt_reconstruct_macs(modes, ranks) -> int:
    """Chain cost of rebuilding a full table from its cores (batch-free)."""
    total = 0
    rows = modes[0]
    for k in range(1, len(modes)):
        total += rows * ranks[k] * modes[k] * ranks[k + 1]
        rows *= modes[k]
    return total


def _tt_weight(cfg_shape: tuple[int, int], rank: int | None, parts: int):
    n, m = cfg_shape
    rf, _ = dim_factorization(n, parts)
    cf, _ = dim_factorization(m, parts)
    modes = tuple(r * c for r, c in zip(rf, cf))
    return rf, cf, modes, tt_clipped_ranks(modes, rank)


def flops(cfg: ModelConfig, spec: ReparamSpec | None = None,
          batch: int = 1, seq: int = 128) -> FlopReport:
    """Closed-form MAC counts for one forward pass.

    plain, ws, and gated-ws share the dense student cost: a squeezed model is
    deployed baked, so its forward cost equals the plain student's. svd and tt
    are counted over `cfg` (the width the factors were built at) with the
    factorized layers replaced by their thin-product or contraction costs.
    """
    spec = spec or ReparamSpec("plain")
    kind = spec.kind
    h, f, c = cfg.hidden_size, cfg.ffn_size, cfg.num_classes
    b, n = batch, seq
    rows = b * n
    comp: dict[str, int] = {}

    comp["attention_scores"] = cfg.num_layers * b * n * n * h
    comp["attention_context"] = cfg.num_layers * b * n * n * h

    if kind in ("plain", "ws", "gated-ws"):
        comp["embedding"] = 0
        comp["attention_projections"] = cfg.num_layers * 4 * rows * h * h
        comp["ffn"] = cfg.num_layers * (rows * h * f + rows * f * h)
    elif kind == "svd":
        if spec.rank is None:
            raise ValueError("svd cost needs a rank")
        r = spec.rank
        comp["embedding"] = rows * r * h
        comp["attention_projections"] = cfg.num_layers * 4 * _svd_linear_macs(h, h, r, rows)
        comp["ffn"] = cfg.num_layers * (_svd_linear_macs(h, f, r, rows)
                                        + _svd_linear_macs(f, h, r, rows))
    elif kind == "tt":
        parts = spec.cores
        _, _, emodes, eranks = _tt_weight((cfg.vocab_size, h), spec.rank, parts)
        comp["embedding"] = _tt_reconstruct_macs(emodes, eranks)
        arf, acf, _, aranks = _tt_weight((h, h), spec.rank, parts)
        comp["attention_projections"] = cfg.num_layers * 4 * _tt_linear_macs(arf, acf, aranks, rows)
        f1 = _tt_weight((h, f), spec.rank, parts)
        f2 = _tt_weight((f, h), spec.rank, parts)
        comp["ffn"] = cfg.num_layers * (_tt_linear_macs(f1[0], f1[1], f1[3], rows)
                                        + _tt_linear_macs(f2[0], f2[1], f2[3], rows))
    else:
        raise ValueError(f"no cost model for reparam kind {kind!r}")

    comp["classifier"] = b * h * c
    return FlopReport(total=sum(comp.values()), components=comp, batch=b, seq=n)


@dataclass
class SpeedReport:
    label: str
    hidden_size: int
    repeats: int
    timings_ms: list[float]
    mean_ms: float
    std_ms: float
    relative: float | None = None  # vs a baseline; the baseline itself reads 1.0
    flagged: bool = False

    def to_dict(self) -> dict:
        return {"label": self.label, "hidden_size": self.hidden_size,
                "repeats": self.repeats, "timings_ms": self.timings_ms,
                "mean_ms": self.mean_ms, "std_ms": self.std_ms,
                "relative": self.relative, "flagged": self.flagged}


def measure_speed(artifact, seq_len: int = 128, n_samples: int = 32, batch: int = 8,
                  repeats: int = 5, warmup: int = 3, seed: int = 0,
                  label: str | None = None) -> SpeedReport:
    """Wall-clock forward time over n_samples fixed random sequences, timed
    with a monotonic clock. The first `warmup` sweeps are discarded. A
    std/mean ratio above 25% flags the measurement as unstable."""
    if repeats < 2:
        raise ValueError(f"repeats must be >= 2, got {repeats}")
    cfg = artifact.config
    if cfg.vocab_size <= 4:
        raise ValueError("benchmark inputs need a vocabulary beyond the reserved ids")
    rng = rng_stream(seed, "bench-inputs")
    ids = rng.integers(4, cfg.vocab_size, size=(n_samples, min(seq_len, cfg.max_seq_len)),
                       dtype=np.int64)
    view = artifact.view()
    chunks = [ids[lo: lo + batch] for lo in range(0, n_samples, batch)]

    timings: list[float] = []
    for i in range(warmup + repeats):
        t0 = time.monotonic()
        for chunk in chunks:
            forward(view, chunk, mode="eval")
        dt = time.monotonic() - t0
        if i >= warmup:
            timings.append(dt * 1000.0)
    mean = float(np.mean(timings))
    std = float(np.std(timings))
    return SpeedReport(label=label or type(artifact).__name__, hidden_size=cfg.hidden_size,
                       repeats=repeats, timings_ms=timings, mean_ms=mean, std_ms=std,
                       flagged=bool(std > 0.25 * mean))


def speed_table(reports: list[SpeedReport]) -> dict:
    """Relative factors against the first entry (the non-factorized baseline),
    plus an aligned text table."""
    if not reports:
        raise ValueError("speed_table needs at least one report")
    base = reports[0].mean_ms
    for r in reports:
        r.relative = r.mean_ms / base
    header = f"{'model':<24} {'hidden':>6} {'mean ms':>10} {'std ms':>9} {'relative':>9}"
    lines = [header, "-" * len(header)]
    for r in reports:
        flag = "  (unstable)" if r.flagged else ""
        lines.append(f"{r.label:<24} {r.hidden_size:>6} {r.mean_ms:>10.2f} "
                     f"{r.std_ms:>9.2f} {r.relative:>8.2f}x{flag}")
    return {"rows": [r.to_dict() for r in reports], "text": "\n".join(lines)}


def count_report(entries: list[tuple[str, object]]) -> dict:
    """Train-time vs deployed parameter counts per artifact. A mapped model
    deploys baked, so its inference count is the plain student count; factor
    models deploy their factors."""
    rows = []
    for label, artifact in entries:
        rows.append({"label": label,
                     "train_params": int(artifact.train_param_count()),
                     "inference_params": int(artifact.inference_param_count())})
    header = f"{'model':<24} {'train params':>14} {'inference params':>18}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['label']:<24} {r['train_params']:>14,} {r['inference_params']:>18,}")
    return {"rows": rows, "text": "\n".join(lines)}
