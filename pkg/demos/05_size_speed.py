"""Size and cost tables for the three compression routes.

First the closed-form numbers at a published reference width (hidden 512
teacher, hidden 16/32 students, 30522-word vocabulary), then measured
forward timings on small models that actually fit in a demo.

    python3 demos/05_size_speed.py
"""

from squeezekit.bench import count_report, flops, measure_speed, speed_table
from squeezekit.model import ModelConfig, TransformerModel
from squeezekit.reparam import (ReparamSpec, match_rank_to_budget, svd_factorize,
                                svd_param_count, tt_factorize, tt_param_count,
                                ws_trainable_count)

base = dict(num_layers=8, num_heads=8, vocab_size=30522, max_seq_len=512,
            num_classes=2, attn_dropout=0.0, hidden_dropout=0.0)
tcfg = ModelConfig(hidden_size=512, ffn_size=2048, **base)

print("reference widths: teacher hidden 512, ffn 2048, 8 layers, vocab 30522")
print(f"{'student':>10} {'params':>12} {'svd rank':>9} {'svd params':>11} "
      f"{'tt rank':>8} {'tt params':>10} {'map params':>11}")
for h in (16, 32):
    scfg = ModelConfig(hidden_size=h, ffn_size=4 * h, **base)
    plain = TransformerModel.init(scfg, seed=0).train_param_count()
    r_svd = match_rank_to_budget(tcfg, scfg, "svd")
    r_tt = match_rank_to_budget(tcfg, scfg, "tt")
    print(f"{'hidden ' + str(h):>10} {plain:>12,} {r_svd:>9} "
          f"{svd_param_count(tcfg, r_svd):>11,} {r_tt:>8} "
          f"{tt_param_count(tcfg, r_tt):>10,} {ws_trainable_count(tcfg, scfg):>11,}")

scfg16 = ModelConfig(hidden_size=16, ffn_size=64, **base)
print("\nforward MACs per batch of 8, sequence 128 (elementwise work excluded):")
for label, cfg, spec in (("plain h16", scfg16, None),
                         ("svd r2", tcfg, ReparamSpec("svd", rank=2)),
                         ("tt r9", tcfg, ReparamSpec("tt", rank=9))):
    print(f"  {label:>9}: {flops(cfg, spec, batch=8, seq=128).total:>14,}")

# measured timings at a size a demo can build
vcfg = ModelConfig(num_layers=2, hidden_size=64, num_heads=4, vocab_size=101,
                   max_seq_len=64, num_classes=2, ffn_size=256)
scfg = ModelConfig(num_layers=2, hidden_size=16, num_heads=4, vocab_size=101,
                   max_seq_len=64, num_classes=2, ffn_size=64)
teacher = TransformerModel.init(vcfg, seed=2).freeze()
plain = TransformerModel.init(scfg, seed=3)
svd = svd_factorize(teacher, match_rank_to_budget(vcfg, scfg, "svd"))
tt = tt_factorize(teacher, match_rank_to_budget(vcfg, scfg, "tt"))

print("\nparameter budgets at demo scale:")
print(count_report([("plain", plain), ("svd", svd), ("tt", tt)])["text"])

reports = [measure_speed(art, seq_len=48, n_samples=16, batch=8, repeats=5,
                         warmup=2, label=label)
           for label, art in (("plain", plain), ("svd", svd), ("tt", tt))]
print("\nmeasured forward time, 5 repeats (machine dependent):")
for row in speed_table(reports)["rows"]:
    flagged = "  (noisy)" if row["flagged"] else ""
    print(f"  {row['label']:>6}: {row['mean_ms']:7.1f} +/- {row['std_ms']:.1f} ms, "
          f"{row['relative']:.2f}x the plain student{flagged}")
