"""Compress the same teacher with the two low-rank baselines.

SVD keeps two thin factors per weight; the tensor-train route chains four
small cores. Both are sized here to the parameter budget of a hidden-16
student, the same budget the bilinear squeeze competes under.

    python3 demos/03_low_rank_baselines.py
"""

import numpy as np

from squeezekit.data import collate, synth_task
from squeezekit.model import ModelConfig, TransformerModel, forward
from squeezekit.objectives import ObjectiveSpec
from squeezekit.reparam import match_rank_to_budget, svd_factorize, tt_factorize
from squeezekit.trainer import TrainConfig, accuracy, rng_stream, train

# vocab_size 28 keeps every weight at least hidden-size wide, so the
# full-rank checks at the bottom can be exact
task = synth_task("keyword", 512, 256, vocab_size=28, seed=0)
tcfg = ModelConfig(num_layers=2, hidden_size=32, num_heads=4, vocab_size=len(task.vocab),
                   max_seq_len=16, num_classes=2, ffn_size=128)
teacher = TransformerModel.init(tcfg, seed=rng_stream(0, "model-init"))
tc = TrainConfig(total_steps=300, batch_size=32, learning_rate=1e-3,
                 warmup_steps=30, eval_every=100, seed=0)
teacher, rep = train(teacher, task, ObjectiveSpec("mle"), tc)
teacher.freeze()
print(f"teacher: {teacher.train_param_count():,} params, "
      f"dev {rep.summary['best_dev_accuracy']:.3f}")

scfg = ModelConfig(num_layers=2, hidden_size=16, num_heads=2, vocab_size=len(task.vocab),
                   max_seq_len=16, num_classes=2, ffn_size=64)
budget = TransformerModel.init(scfg, seed=0).train_param_count()
print(f"budget: hidden-{scfg.hidden_size} student = {budget:,} params (+5% slack)\n")

ids, mask, _ = collate(task.dev[:64])
ref = forward(teacher.view(), ids, mask).logits.data

for method, factorize in (("svd", svd_factorize), ("tt", tt_factorize)):
    rank = match_rank_to_budget(tcfg, scfg, method)
    factors = factorize(teacher, rank)
    drift = float(np.max(np.abs(forward(factors.view(), ids, mask).logits.data - ref)))
    print(f"{method} rank {rank}: {factors.train_param_count():,} params, "
          f"untrained logit drift {drift:.3f}, dev {accuracy(factors, task.dev):.3f}")
    fc = TrainConfig(total_steps=200, batch_size=32, learning_rate=3e-4,
                     warmup_steps=20, eval_every=100, seed=0)
    factors, rep = train(factors, task, ObjectiveSpec("mle"), fc)
    print(f"  after 200 recovery steps: dev {rep.summary['best_dev_accuracy']:.3f}")

# full rank is lossless by construction
full = svd_factorize(teacher, rank=tcfg.hidden_size)
drift = float(np.max(np.abs(forward(full.view(), ids, mask).logits.data - ref)))
print(f"\nsvd at full rank {tcfg.hidden_size}: logit drift {drift:.2e} (exact recovery)")
