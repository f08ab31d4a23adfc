"""Squeeze a trained teacher into a quarter-width student.

Trains a small transformer on a synthetic keyword task, then trains only
the bilinear maps of a squeezed student against it with distillation.
Finishes in well under a minute on a laptop:

    python3 demos/02_squeeze_small.py
"""

from squeezekit.data import synth_task
from squeezekit.model import ModelConfig, TransformerModel
from squeezekit.objectives import ObjectiveSpec
from squeezekit.reparam import bake, ws_init
from squeezekit.trainer import TrainConfig, accuracy, rng_stream, train

task = synth_task("keyword", 512, 256, vocab_size=16, seed=0)
print(f"task: {task.name}, {len(task.train)} train / {len(task.dev)} dev rows, "
      f"vocab {len(task.vocab)}")

tcfg = ModelConfig(num_layers=2, hidden_size=32, num_heads=4, vocab_size=len(task.vocab),
                   max_seq_len=16, num_classes=2, ffn_size=128)
teacher = TransformerModel.init(tcfg, seed=rng_stream(0, "model-init"))
tc = TrainConfig(total_steps=300, batch_size=32, learning_rate=1e-3,
                 warmup_steps=30, eval_every=100, seed=0)
teacher, rep = train(teacher, task, ObjectiveSpec("mle"), tc)
teacher.freeze()
print(f"teacher: hidden {tcfg.hidden_size}, {teacher.train_param_count():,} params, "
      f"dev accuracy {rep.summary['best_dev_accuracy']:.3f}")

scfg = ModelConfig(num_layers=2, hidden_size=8, num_heads=2, vocab_size=len(task.vocab),
                   max_seq_len=16, num_classes=2, ffn_size=32)
mapping = ws_init(teacher, scfg, seed=rng_stream(0, "mapping-init"))
print(f"\nsqueezed student: hidden {scfg.hidden_size}, "
      f"{mapping.train_param_count():,} trainable map/free params, "
      f"{mapping.inference_param_count():,} after baking")

sc = TrainConfig(total_steps=400, batch_size=32, learning_rate=1e-3,
                 warmup_steps=40, eval_every=100, seed=0)
mapping, rep = train(mapping, task, ObjectiveSpec("kd", alpha=0.3, temperature=2.0),
                     sc, teacher=teacher)
print(f"trained maps only; student dev accuracy {rep.summary['best_dev_accuracy']:.3f}")

student = bake(mapping)
print(f"\nbaked to a plain model: {student.train_param_count():,} params "
      f"({teacher.train_param_count() / student.train_param_count():.1f}x smaller "
      f"than the teacher)")
print(f"baked dev accuracy {accuracy(student, task.dev):.3f} "
      "(identical weights, no mapping left)")
