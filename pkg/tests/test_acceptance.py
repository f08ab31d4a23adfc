"""End-to-end acceptance checks for the package's headline claims.

Each test prints one PASS/FAIL line naming the claim it covers, so the
whole contract can be audited from the run transcript:

    python3 -m pytest tests/test_acceptance.py -v -s

Two claims depend on training noise or on the host machine (the transfer
study's accuracy comparison and the wall-clock ordering). Those are soft:
a violation prints a FLAG line and is recorded in the study report, but
does not fail the run. Everything else is a hard assertion.

The transfer study at the bottom trains eleven small models and dominates
the runtime (tens of minutes); all other checks finish in seconds.
"""

import json
import time

import numpy as np

from _oracles import fd_grad, jacobi_svd, rel_err
from squeezekit.bench import flops, measure_speed
from squeezekit.cli import main
from squeezekit.data import synth_task
from squeezekit.model import ModelConfig, TransformerModel, forward
from squeezekit.objectives import HiddenMaps, ObjectiveSpec, objective_loss
from squeezekit.reparam import (ReparamSpec, bake, gated_ws_init, match_rank_to_budget,
                                svd_factorize, tt_factorize, tt_reconstruct, ws_init)
from squeezekit.tensor import (Tensor, add, concat, cross_entropy_with_logits, dropout,
                               embedding, gelu, layer_norm, log_softmax, matmul, mul,
                               narrow, reshape, scale, sigmoid, softmax, sub, tmean,
                               transpose, tsum)
from squeezekit.trainer import TrainConfig, comparable, rng_stream, train


def report(tag, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} {tag}: {detail}", flush=True)
    return ok


def soft_report(tag, ok, detail):
    # soft claim: a violation is flagged, never a test failure
    print(f"{'PASS' if ok else 'FLAG'} {tag}: {detail}", flush=True)


def small_cfg(hidden, ffn, layers=2, vocab=31, seq=12, heads=2):
    return ModelConfig(num_layers=layers, hidden_size=hidden, num_heads=heads,
                       vocab_size=vocab, max_seq_len=seq, num_classes=2,
                       ffn_size=ffn, attn_dropout=0.0, hidden_dropout=0.0)


def small_teacher(seed=1):
    return TransformerModel.init(small_cfg(8, 16), seed=seed).freeze()


# Frozen design of the transfer study (the one slow check). Plain students
# at this size plateau well below the teacher on the 8-way pair matching
# task, which is what gives the squeezed arm room to show an effect.
STUDY = {
    "task": dict(kind="pair-match", train_size=2000, dev_size=1000,
                 vocab_size=32, seed=0, num_triggers=8),
    "teacher_hidden": 64,
    "teacher_steps": 1500,
    "student_hidden": 16,
    "student_steps": 2000,
    "batch_size": 64,
    "learning_rate": 1e-3,
    "warmup_steps": 100,
    "alpha": 0.3,
    "temperature": 3.0,
    "seeds": (100, 101, 102, 103, 104),
}


def test_01_desk_scale_scope():
    # Published large-benchmark numbers need days of GPU time and a real
    # corpus; nothing at this scale can confirm or deny them. What this
    # suite does claim, it checks as training properties of small models
    # on synthetic tasks, and the largest run stays desk sized.
    ok = (STUDY["teacher_hidden"] <= 64 and STUDY["task"]["train_size"] <= 2000
          and STUDY["student_steps"] <= 2000)
    assert report("scope", ok,
                  "accuracy claims are property-checked at synthetic scale only; "
                  f"largest trained model: hidden {STUDY['teacher_hidden']}, "
                  f"{STUDY['task']['train_size']} training rows")


def test_02_gradient_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    errs = {}

    def leaf(*shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    def check(name, build, leaves, tol=1e-6):
        for p in leaves.values():
            p.zero_grad()
        build().backward()
        for lname, p in leaves.items():
            num = fd_grad(lambda: build().item(), p.data)
            err = rel_err(p.grad, num)
            errs[f"{name}.{lname}"] = err
            assert err <= tol, f"{name}.{lname}: rel err {err:.3e}"

    a, b, c = leaf(3, 4), leaf(1, 4), leaf(3, 4)
    check("add-sub-mul", lambda: tsum(mul(sub(add(a, b), c), c)), {"a": a, "b": b, "c": c})
    d = leaf(2, 3)
    check("scale", lambda: tsum(scale(d, -1.7)), {"d": d})
    m1, m2 = leaf(3, 4), leaf(4, 2)
    check("matmul", lambda: tsum(matmul(m1, m2)), {"m1": m1, "m2": m2})
    b1, b2 = leaf(2, 3, 4), leaf(2, 4, 2)
    check("matmul-batched", lambda: tsum(matmul(b1, b2)), {"b1": b1, "b2": b2})
    e = leaf(3, 4)
    probe_t = Tensor(rng.normal(size=(4, 3)))
    check("transpose", lambda: tsum(mul(transpose(e), probe_t)), {"e": e})
    check("reshape", lambda: tsum(mul(reshape(e, (2, 6)), reshape(probe_t, (2, 6)))),
          {"e": e})
    f, g = leaf(2, 3), leaf(2, 2)
    check("concat", lambda: tsum(concat([f, g], axis=1)), {"f": f, "g": g})
    h = leaf(4, 5)
    check("narrow", lambda: tsum(narrow(h, 1, 1, 3)), {"h": h})
    k = leaf(3, 4, 2)
    probe_k = Tensor(rng.normal(size=(3, 2)))
    probe_m = Tensor(rng.normal(size=4))
    check("sum-axis", lambda: tsum(mul(tsum(k, axis=1), probe_k)), {"k": k})
    check("mean-axes", lambda: tsum(mul(tmean(k, axis=(0, 2)), probe_m)), {"k": k})
    s = leaf(3, 5)
    probe_s = Tensor(rng.normal(size=(3, 5)))
    check("softmax", lambda: tsum(mul(softmax(s), probe_s)), {"s": s})
    check("log-softmax", lambda: tsum(mul(log_softmax(s), probe_s)), {"s": s})
    check("sigmoid", lambda: tsum(mul(sigmoid(s), probe_s)), {"s": s})
    check("gelu", lambda: tsum(mul(gelu(s), probe_s)), {"s": s})
    x = leaf(4, 6)
    gain = Tensor(rng.normal(size=6) * 0.1 + 1.0, requires_grad=True)
    bias = Tensor(rng.normal(size=6) * 0.1, requires_grad=True)
    probe_n = Tensor(rng.normal(size=(4, 6)))
    check("layer-norm", lambda: tsum(mul(layer_norm(x, gain, bias), probe_n)),
          {"x": x, "gain": gain, "bias": bias})
    table = leaf(7, 3)
    ids = np.array([[1, 1, 4], [0, 6, 2]])
    probe_e = Tensor(rng.normal(size=(2, 3, 3)))
    check("embedding", lambda: tsum(mul(embedding(table, ids), probe_e)), {"table": table})
    logits = leaf(5, 3)
    labels = np.array([0, 2, 1, 1, 0])
    check("cross-entropy", lambda: cross_entropy_with_logits(logits, labels),
          {"logits": logits})
    dx = leaf(4, 4)
    check("dropout", lambda: tsum(mul(dropout(dx, 0.4, np.random.default_rng(3), True),
                                      Tensor(np.ones((4, 4))))), {"dx": dx})

    # end to end through the two-sided map: loss = sum(L @ W @ R)
    lmap, rmap = leaf(4, 6), leaf(5, 3)
    w_t = Tensor(rng.normal(size=(6, 5)))
    for p in (lmap, rmap):
        p.zero_grad()
    tsum(matmul(matmul(lmap, w_t), rmap)).backward()
    e2e = 0.0
    for p in (lmap, rmap):
        num = fd_grad(lambda: tsum(matmul(matmul(lmap, w_t), rmap)).item(), p.data)
        e2e = max(e2e, rel_err(p.grad, num))
    assert e2e <= 1e-4, f"end-to-end map grad rel err {e2e:.3e}"

    elapsed = time.monotonic() - t0
    ok = elapsed < 60.0
    assert report("grad-suite", ok,
                  f"{len(errs)} op-level checks <= 1e-6 (worst {max(errs.values()):.2e}), "
                  f"end-to-end map check {e2e:.2e} <= 1e-4, {elapsed:.1f}s")


def test_03_bake_equivalence():
    teacher = small_teacher()
    scfg = small_cfg(4, 8)
    mapping = ws_init(teacher, scfg, seed=rng_stream(5, "mapping-init"))
    baked = bake(mapping)
    mview, bview = mapping.view(), baked.view()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        ids = rng.integers(0, scfg.vocab_size, size=(1, scfg.max_seq_len))
        got = forward(mview, ids).logits.data
        want = forward(bview, ids).logits.data
        worst = max(worst, float(np.max(np.abs(got - want))))
    plain = TransformerModel.init(scfg, seed=0)
    counts_match = (baked.train_param_count() == plain.train_param_count()
                    == mapping.inference_param_count())
    ok = worst <= 1e-10 and counts_match
    assert report("bake", ok,
                  f"mapped vs baked logits agree to {worst:.2e} on 100 inputs; "
                  f"baked size {baked.train_param_count()} == plain student size")


def test_04_objective_identities():
    teacher = small_teacher()
    scfg = small_cfg(4, 8)
    student = TransformerModel.init(scfg, seed=3)
    rng = np.random.default_rng(2)
    ids = rng.integers(0, scfg.vocab_size, size=(8, scfg.max_seq_len))
    labels = rng.integers(0, 2, size=8)
    sout = forward(student.view(), ids)
    tout = forward(teacher.view(), ids)

    mle, _ = objective_loss(ObjectiveSpec("mle"), sout, labels)
    kd_all_label, _ = objective_loss(ObjectiveSpec("kd", alpha=1.0, temperature=2.0),
                                     sout, labels, teacher_out=tout)
    d_kd = abs(mle.item() - kd_all_label.item())

    maps = HiddenMaps.create(scfg.num_layers, scfg.hidden_size,
                             teacher.config.hidden_size, seed=rng_stream(0, "hidden-map-init"))
    eo_off = ObjectiveSpec("kd-eo", alpha=0.4, beta=0.6, gamma=0.0, temperature=2.0)
    kd_ref = ObjectiveSpec("kd", alpha=0.4, temperature=2.0)
    l_eo, _ = objective_loss(eo_off, sout, labels, teacher_out=tout, hidden_maps=maps)
    l_kd, _ = objective_loss(kd_ref, sout, labels, teacher_out=tout)
    d_eo = abs(l_eo.item() - l_kd.item())

    worst_sum = 0.0
    for spec in (ObjectiveSpec("mle"),
                 ObjectiveSpec("kd", alpha=0.3),
                 ObjectiveSpec("kd-eo", alpha=1.0, beta=2.0, gamma=1.0),
                 ObjectiveSpec("kd-eo", alpha=0.5, beta=-1.0, gamma=2.0,
                               weight_mode="softmax")):
        worst_sum = max(worst_sum, abs(spec.alpha + spec.beta + spec.gamma - 1.0))

    ok = d_kd <= 1e-12 and d_eo <= 1e-12 and worst_sum <= 1e-12
    assert report("objective-identities", ok,
                  f"kd(alpha=1) vs mle {d_kd:.2e}; kd-eo(gamma=0) vs kd {d_eo:.2e}; "
                  f"term weights sum to 1 within {worst_sum:.2e}")


def test_05_low_rank_oracles():
    teacher = small_teacher()
    rng = np.random.default_rng(6)
    ids = rng.integers(0, teacher.config.vocab_size, size=(4, teacher.config.max_seq_len))
    ref = forward(teacher.view(), ids).logits.data

    # full rank: every factored weight and the end logits come back exactly
    full = svd_factorize(teacher, rank=8)
    worst_w = 0.0
    for name in full.u:
        w = teacher.params[name].data
        w_hat = full.u[name].data @ full.v[name].data
        worst_w = max(worst_w, float(np.linalg.norm(w - w_hat) / np.linalg.norm(w)))
    svd_logits = float(np.max(np.abs(forward(full.view(), ids).logits.data - ref)))

    tt = tt_factorize(teacher, rank=None)
    worst_tt = 0.0
    for name, fact in tt.facts.items():
        w = teacher.params[name].data
        w_hat = tt_reconstruct(tt.cores[name], tuple(fact["rf"]), tuple(fact["cf"]),
                               fact["n"], fact["m"]).data
        worst_tt = max(worst_tt, float(np.linalg.norm(w - w_hat) / np.linalg.norm(w)))
    tt_logits = float(np.max(np.abs(forward(tt.view(), ids).logits.data - ref)))

    # truncation error against an independently written SVD
    r = 3
    trunc = svd_factorize(teacher, rank=r)
    worst_tail = 0.0
    for name in trunc.u:
        w = teacher.params[name].data
        actual = float(np.linalg.norm(w - trunc.u[name].data @ trunc.v[name].data))
        s = jacobi_svd(w)[1]
        expected = float(np.sqrt(np.sum(s[r:] ** 2)))
        worst_tail = max(worst_tail, abs(actual - expected) / expected)

    ok = (worst_w <= 1e-8 and worst_tt <= 1e-8 and svd_logits <= 1e-8
          and tt_logits <= 1e-8 and worst_tail <= 1e-6)
    assert report("low-rank-oracles", ok,
                  f"full-rank reconstruction (svd {worst_w:.2e}, tt {worst_tt:.2e}), "
                  f"untrained logits match (svd {svd_logits:.2e}, tt {tt_logits:.2e}), "
                  f"rank-{r} residual vs independent svd {worst_tail:.2e}")


def test_06_frozen_gate_matches_plain():
    task = synth_task("keyword", 64, 32, vocab_size=8, seed=4)
    vocab = len(task.vocab)
    teacher = TransformerModel.init(small_cfg(8, 16, vocab=vocab, seq=16),
                                    seed=rng_stream(4, "model-init")).freeze()
    scfg = small_cfg(4, 8, vocab=vocab, seq=16)
    base_gated = TransformerModel.init(scfg, seed=rng_stream(9, "model-init"))
    base_plain = TransformerModel.init(scfg, seed=rng_stream(9, "model-init"))
    gated = gated_ws_init(teacher, base_gated, seed=rng_stream(9, "mapping-init"),
                          freeze_gate=1.0)

    # dropout left on so the comparison also pins the rng stream alignment
    cfg = TrainConfig(total_steps=20, batch_size=8, learning_rate=1e-3,
                      warmup_steps=0, eval_every=1, seed=7)
    _, rep_g = train(gated, task, ObjectiveSpec("mle"), cfg)
    _, rep_p = train(base_plain, task, ObjectiveSpec("mle"), cfg)
    losses_g = [r["loss"] for r in rep_g.records]
    losses_p = [r["loss"] for r in rep_p.records]
    gap = max(abs(a - b) for a, b in zip(losses_g, losses_p))
    ok = len(losses_g) == len(losses_p) == 20 and gap <= 1e-9
    assert report("frozen-gate", ok,
                  f"gate pinned fully open reproduces plain fine-tuning: "
                  f"max loss gap {gap:.2e} over 20 steps")


def _reference_scale():
    base = dict(num_layers=8, num_heads=8, vocab_size=30522, max_seq_len=512,
                num_classes=2, attn_dropout=0.0, hidden_dropout=0.0)
    tcfg = ModelConfig(hidden_size=512, ffn_size=2048, **base)
    s16 = ModelConfig(hidden_size=16, ffn_size=64, **base)
    s32 = ModelConfig(hidden_size=32, ffn_size=128, **base)
    return tcfg, s16, s32


def test_07_budget_rank_match():
    tcfg, s16, s32 = _reference_scale()
    svd16 = match_rank_to_budget(tcfg, s16, "svd")
    svd32 = match_rank_to_budget(tcfg, s32, "svd")
    tt16 = match_rank_to_budget(tcfg, s16, "tt")
    tt32 = match_rank_to_budget(tcfg, s32, "tt")
    ok = (svd16 == 2 and svd32 == 7 and abs(tt16 - 9) <= 1 and abs(tt32 - 18) <= 1)
    assert report("budget-ranks", ok,
                  f"hidden 16 -> svd rank {svd16} (want 2), tt rank {tt16} (want 9 +/- 1); "
                  f"hidden 32 -> svd rank {svd32} (want 7), tt rank {tt32} (want 18 +/- 1)")


def test_08_cost_ordering():
    tcfg, s16, _ = _reference_scale()
    fp = flops(s16, batch=8, seq=128).total
    fs = flops(tcfg, ReparamSpec("svd", rank=2), batch=8, seq=128).total
    ft = flops(tcfg, ReparamSpec("tt", rank=9), batch=8, seq=128).total
    assert report("cost-order", fp < fs < ft,
                  f"analytic MACs at matched budgets: plain {fp:,} < svd {fs:,} "
                  f"< tt {ft:,}")

    # wall clock depends on the host; measured, reported, flagged only
    vcfg = small_cfg(64, 256, vocab=101, seq=64, heads=4)
    scfg = small_cfg(16, 64, vocab=101, seq=64, heads=4)
    teacher = TransformerModel.init(vcfg, seed=2).freeze()
    plain = TransformerModel.init(scfg, seed=3)
    svd = svd_factorize(teacher, match_rank_to_budget(vcfg, scfg, "svd"))
    tt = tt_factorize(teacher, match_rank_to_budget(vcfg, scfg, "tt"))
    reports = [measure_speed(art, seq_len=48, n_samples=16, batch=8, repeats=5,
                             warmup=2, label=label)
               for label, art in (("plain", plain), ("svd", svd), ("tt", tt))]
    stats = ", ".join(f"{r.label} {r.mean_ms:.1f}+/-{r.std_ms:.1f}ms" for r in reports)
    ordered = reports[0].mean_ms < reports[1].mean_ms < reports[2].mean_ms
    soft_report("cost-order-clock", ordered, f"5-repeat forward timings: {stats}")


def test_09_cli_determinism(tmp_path):
    task = ["--override", "task.kind=keyword", "--override", "task.train_size=32",
            "--override", "task.dev_size=16", "--override", "task.vocab_size=8",
            "--override", "task.seq_len=6"]
    teacher = ["--override", "model.num_layers=1", "--override", "model.hidden_size=8",
               "--override", "model.num_heads=2", "--override", "model.max_seq_len=16"]
    student = ["--override", "student.num_layers=1", "--override", "student.hidden_size=4",
               "--override", "student.num_heads=2", "--override", "student.max_seq_len=16"]
    quick = ["--override", "train.total_steps=8", "--override", "train.eval_every=4",
             "--override", "train.warmup_steps=2", "--override", "train.batch_size=16"]

    def run_twice(cmd, extra, ckpt_names):
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{cmd}-{rep}"
            rc = main([cmd, "--seed", "3", "--out", str(out), *task, *extra, *quick])
            assert rc == 0
            outs.append(out)
        for name in ckpt_names:
            a = (outs[0] / name).read_bytes()
            b = (outs[1] / name).read_bytes()
            assert a == b, f"{cmd}: {name} differs between identical runs"
        for rec_a, rec_b in zip((outs[0] / "report.jsonl").read_text().splitlines(),
                                (outs[1] / "report.jsonl").read_text().splitlines()):
            assert comparable(json.loads(rec_a)) == comparable(json.loads(rec_b))
        sa = json.loads((outs[0] / "summary.json").read_text())
        sb = json.loads((outs[1] / "summary.json").read_text())
        assert comparable(sa) == comparable(sb)
        return outs[0]

    tdir = run_twice("train-teacher", teacher, ["teacher.ckpt"])
    ckpt = ["--override", f"teacher.checkpoint={tdir / 'teacher.ckpt'}"]
    run_twice("squeeze", [*teacher, *student, *ckpt,
                          "--override", "objective.kind=kd"],
              ["mapping.ckpt", "student.ckpt"])
    assert report("determinism", True,
                  "re-running train-teacher and squeeze with a fixed seed reproduces "
                  "checkpoints byte for byte and reports up to wall clock")


def test_10_transfer_study():
    t0 = time.monotonic()
    s = STUDY
    task = synth_task(**s["task"])
    vocab = len(task.vocab)

    tcfg = ModelConfig(num_layers=4, hidden_size=s["teacher_hidden"], num_heads=4,
                       vocab_size=vocab, max_seq_len=16, num_classes=2,
                       ffn_size=4 * s["teacher_hidden"],
                       attn_dropout=0.0, hidden_dropout=0.0)
    teacher = TransformerModel.init(tcfg, seed=rng_stream(0, "model-init"))
    tc = TrainConfig(total_steps=s["teacher_steps"], batch_size=32,
                     learning_rate=s["learning_rate"], warmup_steps=s["warmup_steps"],
                     eval_every=300, seed=0, attn_dropout=0.0, hidden_dropout=0.0)
    teacher, trep = train(teacher, task, ObjectiveSpec("mle"), tc)
    teacher.freeze()
    teacher_dev = trep.summary["best_dev_accuracy"]
    assert report("transfer-teacher", teacher_dev >= 0.95,
                  f"teacher reaches dev accuracy {teacher_dev:.3f} (needs >= 0.95)")

    scfg = ModelConfig(num_layers=4, hidden_size=s["student_hidden"], num_heads=4,
                       vocab_size=vocab, max_seq_len=16, num_classes=2,
                       ffn_size=4 * s["student_hidden"],
                       attn_dropout=0.0, hidden_dropout=0.0)
    plain_dev, ws_dev = [], []
    for seed in s["seeds"]:
        pc = TrainConfig(total_steps=s["student_steps"], batch_size=s["batch_size"],
                         learning_rate=s["learning_rate"], warmup_steps=s["warmup_steps"],
                         eval_every=200, seed=seed,
                         attn_dropout=0.0, hidden_dropout=0.0)
        student = TransformerModel.init(scfg, seed=rng_stream(seed, "model-init"))
        _, rep = train(student, task, ObjectiveSpec("mle"), pc)
        plain_dev.append(rep.summary["best_dev_accuracy"])
        mapping = ws_init(teacher, scfg, seed=rng_stream(seed, "mapping-init"))
        _, rep = train(mapping, task,
                       ObjectiveSpec("kd", alpha=s["alpha"], temperature=s["temperature"]),
                       pc, teacher=teacher)
        ws_dev.append(rep.summary["best_dev_accuracy"])
        print(f"  seed {seed}: plain+mle {plain_dev[-1]:.3f}  squeeze+kd {ws_dev[-1]:.3f}",
              flush=True)

    p_mean, w_mean = float(np.mean(plain_dev)), float(np.mean(ws_dev))
    flagged = w_mean < p_mean
    study = {"teacher_dev": teacher_dev, "plain_dev": plain_dev, "ws_dev": ws_dev,
             "plain_mean": p_mean, "ws_mean": w_mean, "flagged": flagged,
             "minutes": round((time.monotonic() - t0) / 60.0, 1)}
    print(f"  study report: {json.dumps(study)}", flush=True)
    soft_report("transfer-study", not flagged,
                f"squeeze+kd mean dev {w_mean:.3f} vs plain+mle {p_mean:.3f} "
                f"over {len(s['seeds'])} seeds")

    elapsed = time.monotonic() - t0
    assert report("transfer-runtime", elapsed < 1800.0,
                  f"study finished in {elapsed / 60.0:.1f} min (budget 30)")
