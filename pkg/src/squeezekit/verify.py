"""Self-contained invariant checks behind the `verify` command.

Each check is small and fast (the whole suite stays under ~30 seconds) and
returns a human-readable detail string. The pytest suite covers the same
ground more thoroughly; this module exists so a deployed install can vouch
for itself without a test harness.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import objectives, reparam, trainer
from .bench import flops
from .data import synth_task
from .model import ModelConfig, TransformerModel, count_from_config, forward
from .objectives import ObjectiveSpec
from .reparam import ReparamSpec
from .tensor import Tensor, layer_norm, matmul, softmax


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _fd_grad(f, x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f() wrt x.data, edited in place."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f()
        flat[i] = keep - h
        fm = f()
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / denom


def check_op_gradients() -> str:
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    gain = Tensor(rng.normal(size=(5,)), requires_grad=True)
    bias = Tensor(rng.normal(size=(5,)), requires_grad=True)
    probe = Tensor(rng.normal(size=(3, 5)))  # keeps the softmax output non-degenerate

    def loss_tensor():
        return (softmax(layer_norm(matmul(x, w), gain, bias)) * probe).sum()

    worst = 0.0
    for p in (x, w, gain, bias):
        out = loss_tensor()
        p.zero_grad()
        out.backward()
        fd = _fd_grad(lambda: float(loss_tensor().data), p)
        worst = max(worst, _rel_err(p.grad, fd))
    if worst > 1e-6:
        raise AssertionError(f"op gradient rel err {worst:.2e} > 1e-6")
    return f"matmul/layer_norm/softmax chain rel err {worst:.2e}"


def check_bilinear_gradient() -> str:
    rng = np.random.default_rng(12)
    left = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    theta = Tensor(rng.normal(size=(6, 7)))
    right = Tensor(rng.normal(size=(7, 4)), requires_grad=True)

    def loss_tensor():
        return matmul(matmul(left, theta), right).sum()

    worst = 0.0
    for p in (left, right):
        out = loss_tensor()
        p.zero_grad()
        out.backward()
        fd = _fd_grad(lambda: float(loss_tensor().data), p)
        worst = max(worst, _rel_err(p.grad, fd))
    if worst > 1e-6:
        raise AssertionError(f"bilinear gradient rel err {worst:.2e} > 1e-6")
    return f"sum(L@T@R) rel err {worst:.2e}"


def _small_pair():
    tcfg = ModelConfig(num_layers=2, hidden_size=8, num_heads=2, vocab_size=31,
                       max_seq_len=16, num_classes=2, ffn_size=16,
                       attn_dropout=0.0, hidden_dropout=0.0)
    scfg = ModelConfig(num_layers=2, hidden_size=4, num_heads=2, vocab_size=31,
                       max_seq_len=16, num_classes=2, ffn_size=8,
                       attn_dropout=0.0, hidden_dropout=0.0)
    teacher = TransformerModel.init(tcfg, seed=1).freeze()
    return teacher, scfg


def check_bake_equivalence() -> str:
    teacher, scfg = _small_pair()
    mapping = reparam.ws_init(teacher, scfg, seed=2)
    baked = mapping.bake()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        ids = rng.integers(4, scfg.vocab_size, size=(2, 9))
        a = forward(mapping.view(), ids).logits.data
        b = forward(baked.view(), ids).logits.data
        worst = max(worst, float(np.abs(a - b).max()))
    n_baked = sum(t.size for t in baked.params.values())
    if worst > 1e-10:
        raise AssertionError(f"baked logits differ by {worst:.2e} > 1e-10")
    if n_baked != count_from_config(scfg):
        raise AssertionError(f"baked count {n_baked} != plain count {count_from_config(scfg)}")
    return f"mapped vs baked max diff {worst:.2e}; baked count {n_baked}"


def check_loss_identities() -> str:
    teacher, scfg = _small_pair()
    student = TransformerModel.init(scfg, seed=4)
    rng = np.random.default_rng(5)
    ids = rng.integers(4, scfg.vocab_size, size=(6, 9))
    ids[:, 0] = 2
    labels = rng.integers(0, 2, size=6)
    s_out = forward(student.view(), ids)
    t_out = forward(teacher.view(), ids)
    maps = objectives.HiddenMaps.create(scfg.num_layers, scfg.hidden_size,
                                        teacher.config.hidden_size, seed=6)
    mle, _ = objectives.objective_loss(ObjectiveSpec("mle"), s_out, labels)
    kd1, _ = objectives.objective_loss(ObjectiveSpec("kd", alpha=1.0), s_out, labels, t_out)
    d1 = abs(float(mle.data) - float(kd1.data))
    a = 0.3
    kd, _ = objectives.objective_loss(ObjectiveSpec("kd", alpha=a), s_out, labels, t_out)
    kdeo, _ = objectives.objective_loss(ObjectiveSpec("kd-eo", alpha=a, beta=1.0 - a, gamma=0.0),
                                        s_out, labels, t_out, maps)
    d2 = abs(float(kd.data) - float(kdeo.data))
    spec = ObjectiveSpec("kd-eo", alpha=1.0, beta=2.0, gamma=1.0)
    d3 = abs(spec.alpha + spec.beta + spec.gamma - 1.0)
    if max(d1, d2, d3) > 1e-12:
        raise AssertionError(f"identity gaps {d1:.2e}, {d2:.2e}, {d3:.2e} exceed 1e-12")
    return f"kd(a=1) gap {d1:.2e}; kd-eo(g=0) gap {d2:.2e}; simplex gap {d3:.2e}"


def check_full_rank_reconstruction() -> str:
    teacher, _ = _small_pair()
    worst = 0.0
    full = reparam.svd_factorize(teacher, rank=8)
    for name in full.u:
        w = teacher.params[name].data
        approx = full.u[name].data @ full.v[name].data
        worst = max(worst, float(np.linalg.norm(approx - w) / np.linalg.norm(w)))
    tt = reparam.tt_factorize(teacher, rank=None)
    for name, cores in tt.cores.items():
        f = tt.facts[name]
        w = teacher.params[name].data
        approx = reparam.tt_reconstruct(cores, tuple(f["rf"]), tuple(f["cf"]),
                                        f["n"], f["m"]).data
        worst = max(worst, float(np.linalg.norm(approx - w) / np.linalg.norm(w)))
    if worst > 1e-8:
        raise AssertionError(f"full-rank reconstruction rel err {worst:.2e} > 1e-8")
    return f"svd r=8 and untruncated tt rel err {worst:.2e}"


def check_gated_frozen_gate() -> str:
    teacher, scfg = _small_pair()
    base = TransformerModel.init(scfg, seed=7)
    gated = reparam.gated_ws_init(teacher, base, seed=8, freeze_gate=1.0)
    plain = TransformerModel.from_arrays(scfg, base.state_dict())
    rng = np.random.default_rng(9)
    ids = rng.integers(4, scfg.vocab_size, size=(3, 7))
    a = forward(gated.view(), ids).logits.data
    b = forward(plain.view(), ids).logits.data
    worst = float(np.abs(a - b).max())
    if worst > 1e-9:
        raise AssertionError(f"frozen-gate logits differ by {worst:.2e} > 1e-9")
    return f"sigma=1 frozen logits match plain base to {worst:.2e}"


def check_budget_ranks() -> str:
    tcfg = ModelConfig(num_layers=2, hidden_size=64, num_heads=4, vocab_size=101,
                       max_seq_len=32, num_classes=2, ffn_size=256)
    scfg = ModelConfig(num_layers=2, hidden_size=16, num_heads=2, vocab_size=101,
                       max_seq_len=32, num_classes=2, ffn_size=64)
    budget = 1.05 * count_from_config(scfg)
    out = []
    for method, count in (("svd", reparam.svd_param_count), ("tt", reparam.tt_param_count)):
        r = reparam.match_rank_to_budget(tcfg, scfg, method)
        c_r = count(tcfg, r)
        c_next = count(tcfg, r + 1)
        if c_r > budget:
            raise AssertionError(f"{method} rank {r} count {c_r} exceeds budget {budget:.0f}")
        if c_next <= budget and c_next != c_r:
            raise AssertionError(f"{method} rank {r} is not maximal (rank {r + 1} also fits)")
        out.append(f"{method} r={r} ({c_r} params)")
    return "; ".join(out) + f" within budget {budget:.0f}"


def check_flop_ordering() -> str:
    tcfg = ModelConfig(num_layers=2, hidden_size=64, num_heads=4, vocab_size=101,
                       max_seq_len=32, num_classes=2, ffn_size=256)
    scfg = ModelConfig(num_layers=2, hidden_size=16, num_heads=2, vocab_size=101,
                       max_seq_len=32, num_classes=2, ffn_size=64)
    r_svd = reparam.match_rank_to_budget(tcfg, scfg, "svd")
    r_tt = reparam.match_rank_to_budget(tcfg, scfg, "tt")
    p = flops(scfg, ReparamSpec("plain"), batch=1, seq=32).total
    s = flops(tcfg, ReparamSpec("svd", rank=r_svd), batch=1, seq=32).total
    t = flops(tcfg, ReparamSpec("tt", rank=r_tt), batch=1, seq=32).total
    if not p < s < t:
        raise AssertionError(f"cost ordering violated: plain {p}, svd {s}, tt {t}")
    return f"plain {p} < svd(r={r_svd}) {s} < tt(r={r_tt}) {t}"


def check_determinism() -> str:
    task = synth_task("keyword", train_size=32, dev_size=16, vocab_size=12, seed=5,
                      seq_len=8, num_triggers=2)
    cfg = ModelConfig(num_layers=1, hidden_size=8, num_heads=2, vocab_size=len(task.vocab),
                      max_seq_len=16, num_classes=2, ffn_size=16)
    tc = trainer.TrainConfig(total_steps=6, batch_size=8, learning_rate=1e-3,
                             eval_every=3, seed=17, attn_dropout=0.1, hidden_dropout=0.1)
    states = []
    reports = []
    for _ in range(2):
        model = TransformerModel.init(cfg, seed=23)
        _, rep = trainer.train(model, task, ObjectiveSpec("mle"), tc)
        states.append(model.state_dict())
        reports.append([trainer.comparable(r) for r in rep.records])
    for name in states[0]:
        if not np.array_equal(states[0][name], states[1][name]):
            raise AssertionError(f"parameter {name} differs between identical runs")
    if reports[0] != reports[1]:
        raise AssertionError("eval records differ between identical runs")
    return f"two 6-step runs bit-identical across {len(states[0])} tensors"


CHECKS = (
    ("op-gradients", check_op_gradients),
    ("bilinear-gradient", check_bilinear_gradient),
    ("bake-equivalence", check_bake_equivalence),
    ("loss-identities", check_loss_identities),
    ("full-rank-reconstruction", check_full_rank_reconstruction),
    ("gated-frozen-gate", check_gated_frozen_gate),
    ("budget-ranks", check_budget_ranks),
    ("flop-ordering", check_flop_ordering),
    ("determinism", check_determinism),
)


def run_all() -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        try:
            results.append(CheckResult(name, True, fn()))
        except Exception as exc:  # a failed check must not stop the others
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return results
