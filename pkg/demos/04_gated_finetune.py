"""Blend a pretrained base model with squeezed teacher weights.

A single scalar gate interpolates every weight between the squeezed
teacher (gate 0) and the base model (gate 1). The gate trains with
everything else, so the optimizer decides how much donor structure to
keep. Pinning the gate fully open recovers ordinary fine-tuning.

    python3 demos/04_gated_finetune.py
"""

from squeezekit.data import synth_task
from squeezekit.model import ModelConfig, TransformerModel
from squeezekit.objectives import ObjectiveSpec
from squeezekit.reparam import gated_ws_init
from squeezekit.trainer import TrainConfig, rng_stream, train

task = synth_task("pair-match", 1024, 256, vocab_size=16, seed=2)

# donor: wider and deeper than the model we actually want to run
tcfg = ModelConfig(num_layers=3, hidden_size=32, num_heads=4, vocab_size=len(task.vocab),
                   max_seq_len=16, num_classes=2, ffn_size=128)
teacher = TransformerModel.init(tcfg, seed=rng_stream(2, "model-init"))
tc = TrainConfig(total_steps=700, batch_size=32, learning_rate=1e-3,
                 warmup_steps=70, eval_every=350, seed=2)
teacher, rep = train(teacher, task, ObjectiveSpec("mle"), tc)
teacher.freeze()
print(f"teacher (3 layers, hidden 32): dev {rep.summary['best_dev_accuracy']:.3f}")

scfg = ModelConfig(num_layers=2, hidden_size=16, num_heads=2, vocab_size=len(task.vocab),
                   max_seq_len=16, num_classes=2, ffn_size=64)
base = TransformerModel.init(scfg, seed=rng_stream(7, "model-init"))

gated = gated_ws_init(teacher, base, seed=rng_stream(7, "mapping-init"), s0=2.0)
print(f"gated student (2 layers, hidden 16): gate starts at sigma {gated.sigma():.4f} "
      "(mostly the base model)")

gc = TrainConfig(total_steps=1200, batch_size=32, learning_rate=1e-3,
                 warmup_steps=100, eval_every=200, seed=7)
gated, rep = train(gated, task, ObjectiveSpec("kd", alpha=0.5, temperature=2.0),
                   gc, teacher=teacher)

print("\ngate trajectory (sigma 1.0 = pure base, 0.0 = pure squeezed teacher):")
for r in rep.records:
    print(f"  step {r['step']:>3}: gate {r['gate']:.4f}  dev {r['dev_accuracy']:.3f}")
print(f"\nfinal: gate {gated.sigma():.4f}, dev {rep.summary['best_dev_accuracy']:.3f}")
