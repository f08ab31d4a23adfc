"""Command-line entry point for reproducible runs.

Commands: train-teacher, squeeze, gated-finetune, bench, verify. Every run is
driven by a flat dotted-key config (file keys < --override flags < --seed),
and the resolved config is echoed to stdout and into the output directory, so
a run is reproducible from its config alone. SQUEEZE_LOG={error,info,debug}
controls logging verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import bench, verify
from .data import Task, load_task, synth_task
from .model import ModelConfig, TransformerModel
from .objectives import ObjectiveSpec
from .reparam import (
    ReparamSpec,
    gated_ws_init,
    match_rank_to_budget,
    svd_factorize,
    tt_factorize,
    ws_init,
)
from .trainer import TrainConfig, TrainingDiverged, rng_stream, train

log = logging.getLogger("squeezekit.cli")


class ConfigError(Exception):
    pass


DEFAULTS: dict[str, object] = {
    "seed": 0,
    # task
    "task.kind": "keyword",          # keyword | parity | pair-match | tsv
    "task.train": None,              # tsv paths, required when task.kind == tsv
    "task.dev": None,
    "task.train_size": 256,
    "task.dev_size": 128,
    "task.vocab_size": 32,
    "task.seq_len": 12,
    "task.num_triggers": 4,
    "task.max_vocab": None,
    # teacher architecture (train-teacher)
    "model.num_layers": 2,
    "model.hidden_size": 32,
    "model.num_heads": 4,
    "model.max_seq_len": 64,
    "model.ffn_size": 0,             # 0 = 4 * hidden
    "model.attn_dropout": 0.1,
    "model.hidden_dropout": 0.1,
    # student architecture (squeeze / gated-finetune / bench)
    "student.num_layers": 2,
    "student.hidden_size": 8,
    "student.num_heads": 2,
    "student.max_seq_len": 64,
    "student.ffn_size": 0,
    "student.attn_dropout": 0.1,
    "student.hidden_dropout": 0.1,
    # checkpoints
    "teacher.checkpoint": None,
    "base.checkpoint": None,
    # reparameterization
    "reparam.kind": "ws",            # ws | svd | tt (squeeze); gated-finetune ignores it
    "reparam.rank": "budget",        # integer, or "budget" to match the student count
    "reparam.cores": 4,
    "reparam.s0": 2.0,
    "reparam.freeze_gate": None,     # None, 0.0, or 1.0
    # objective
    "objective.kind": "mle",
    "objective.alpha": 0.5,
    "objective.beta": 0.25,
    "objective.gamma": 0.25,
    "objective.temperature": 1.0,
    "objective.weight_mode": "normalize",
    # training
    "train.total_steps": 200,
    "train.batch_size": 16,
    "train.learning_rate": 1e-3,
    "train.map_learning_rate": None,
    "train.warmup_steps": 20,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.attn_dropout": 0.1,
    "train.hidden_dropout": 0.1,
    "train.eval_every": 25,
    # bench
    "bench.seq_len": 32,
    "bench.batch": 4,
    "bench.n_samples": 16,
    "bench.repeats": 5,
    "bench.warmup": 3,
}


def parse_value(raw: str):
    s = raw.strip()
    low = s.lower()
    if low in ("none", "null"):
        return None
    if low == "true":
        return True
    if low == "false":
        return False
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def parse_config_file(path: str) -> dict:
    cfg: dict[str, object] = {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"{path}: line {lineno}: expected key=value, got {line!r}")
        key, _, val = s.partition("=")
        cfg[key.strip()] = parse_value(val)
    return cfg


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    updates: dict[str, object] = {}
    if args.config:
        updates.update(parse_config_file(args.config))
    for item in args.override or []:
        if "=" not in item:
            raise ConfigError(f"--override expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        updates[key.strip()] = parse_value(val)
    for key, val in updates.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = val
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def echo_config(cfg: dict, out: Path) -> None:
    text = json.dumps(cfg, sort_keys=True, indent=2)
    print("resolved config:")
    print(text)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(text + "\n", encoding="utf-8")


def build_task(cfg: dict) -> Task:
    kind = cfg["task.kind"]
    if kind == "tsv":
        if not cfg["task.train"] or not cfg["task.dev"]:
            raise ConfigError("task.kind=tsv needs task.train and task.dev paths")
        for key in ("task.train", "task.dev"):
            if not Path(cfg[key]).exists():
                raise ConfigError(f"{key} file {cfg[key]} does not exist")
        return load_task(cfg["task.train"], cfg["task.dev"], max_vocab=cfg["task.max_vocab"])
    if kind not in ("keyword", "parity", "pair-match"):
        raise ConfigError(f"unknown task.kind {kind!r}")
    return synth_task(kind, cfg["task.train_size"], cfg["task.dev_size"],
                      cfg["task.vocab_size"], cfg["seed"],
                      seq_len=cfg["task.seq_len"], num_triggers=cfg["task.num_triggers"])


def model_config(cfg: dict, prefix: str, vocab_size: int, num_classes: int) -> ModelConfig:
    try:
        return ModelConfig(
            num_layers=cfg[f"{prefix}.num_layers"],
            hidden_size=cfg[f"{prefix}.hidden_size"],
            num_heads=cfg[f"{prefix}.num_heads"],
            vocab_size=vocab_size,
            max_seq_len=cfg[f"{prefix}.max_seq_len"],
            num_classes=num_classes,
            ffn_size=cfg[f"{prefix}.ffn_size"],
            attn_dropout=cfg[f"{prefix}.attn_dropout"],
            hidden_dropout=cfg[f"{prefix}.hidden_dropout"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad {prefix}.* configuration: {exc}") from None


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            total_steps=cfg["train.total_steps"],
            batch_size=cfg["train.batch_size"],
            learning_rate=cfg["train.learning_rate"],
            map_learning_rate=cfg["train.map_learning_rate"],
            warmup_steps=cfg["train.warmup_steps"],
            beta1=cfg["train.beta1"],
            beta2=cfg["train.beta2"],
            eps=cfg["train.eps"],
            attn_dropout=cfg["train.attn_dropout"],
            hidden_dropout=cfg["train.hidden_dropout"],
            eval_every=cfg["train.eval_every"],
            seed=cfg["seed"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad train.* configuration: {exc}") from None


def objective_spec(cfg: dict) -> ObjectiveSpec:
    try:
        return ObjectiveSpec(
            kind=cfg["objective.kind"],
            alpha=cfg["objective.alpha"],
            beta=cfg["objective.beta"],
            gamma=cfg["objective.gamma"],
            temperature=cfg["objective.temperature"],
            weight_mode=cfg["objective.weight_mode"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad objective.* configuration: {exc}") from None


def load_teacher(cfg: dict) -> TransformerModel:
    path = cfg["teacher.checkpoint"]
    if not path:
        raise ConfigError("teacher.checkpoint is required for this command")
    if not Path(path).exists():
        raise ConfigError(f"teacher.checkpoint {path} does not exist")
    return TransformerModel.load(path).freeze()


def resolve_rank(cfg: dict, teacher_cfg: ModelConfig, student_cfg: ModelConfig,
                 method: str) -> int:
    rank = cfg["reparam.rank"]
    if rank == "budget" or rank is None:
        return match_rank_to_budget(teacher_cfg, student_cfg, method,
                                    parts=cfg["reparam.cores"])
    if not isinstance(rank, int) or rank < 1:
        raise ConfigError(f"reparam.rank must be a positive integer or 'budget', got {rank!r}")
    return rank


def _finish(report, cfg: dict, out: Path) -> None:
    report.summary["config"] = cfg
    report.save(out)
    print(json.dumps({k: v for k, v in report.summary.items() if k != "config"},
                     sort_keys=True))


def cmd_train_teacher(cfg: dict, out: Path) -> int:
    task = build_task(cfg)
    mcfg = model_config(cfg, "model", len(task.vocab), task.num_classes)
    model = TransformerModel.init(mcfg, seed=rng_stream(cfg["seed"], "model-init"))
    _, report = train(model, task, ObjectiveSpec("mle"), train_config(cfg))
    model.save(out / "teacher.ckpt")
    task.vocab.save(out / "vocab.txt")
    _finish(report, cfg, out)
    print(f"teacher checkpoint: {out / 'teacher.ckpt'}")
    return 0


def cmd_squeeze(cfg: dict, out: Path) -> int:
    task = build_task(cfg)
    teacher = load_teacher(cfg)
    if teacher.config.vocab_size != len(task.vocab):
        raise ConfigError(
            f"teacher vocabulary size {teacher.config.vocab_size} does not match "
            f"the task's {len(task.vocab)}; train the teacher on the same task config")
    kind = cfg["reparam.kind"]
    scfg = model_config(cfg, "student", teacher.config.vocab_size, teacher.config.num_classes)
    if kind == "ws":
        artifact = ws_init(teacher, scfg, seed=rng_stream(cfg["seed"], "mapping-init"))
    elif kind == "svd":
        artifact = svd_factorize(teacher, resolve_rank(cfg, teacher.config, scfg, "svd"))
    elif kind == "tt":
        artifact = tt_factorize(teacher, resolve_rank(cfg, teacher.config, scfg, "tt"),
                                parts=cfg["reparam.cores"])
    else:
        raise ConfigError(f"reparam.kind must be ws, svd, or tt, got {kind!r}")
    objective = objective_spec(cfg)
    _, report = train(artifact, task, objective, train_config(cfg), teacher=teacher)
    if kind == "ws":
        artifact.save(out / "mapping.ckpt")
        artifact.bake().save(out / "student.ckpt")
        print(f"mapping checkpoint: {out / 'mapping.ckpt'}")
        print(f"baked student checkpoint: {out / 'student.ckpt'}")
    else:
        artifact.save(out / "factors.ckpt")
        print(f"factor checkpoint: {out / 'factors.ckpt'}")
    _finish(report, cfg, out)
    return 0


def cmd_gated_finetune(cfg: dict, out: Path) -> int:
    task = build_task(cfg)
    teacher = load_teacher(cfg)
    if teacher.config.vocab_size != len(task.vocab):
        raise ConfigError(
            f"teacher vocabulary size {teacher.config.vocab_size} does not match "
            f"the task's {len(task.vocab)}")
    if cfg["base.checkpoint"]:
        if not Path(cfg["base.checkpoint"]).exists():
            raise ConfigError(f"base.checkpoint {cfg['base.checkpoint']} does not exist")
        base = TransformerModel.load(cfg["base.checkpoint"])
    else:
        scfg = model_config(cfg, "student", teacher.config.vocab_size,
                            teacher.config.num_classes)
        base = TransformerModel.init(scfg, seed=rng_stream(cfg["seed"], "model-init"))
    freeze = cfg["reparam.freeze_gate"]
    if freeze is not None:
        freeze = float(freeze)
    try:
        gated = gated_ws_init(teacher, base, seed=rng_stream(cfg["seed"], "mapping-init"),
                              s0=cfg["reparam.s0"], freeze_gate=freeze)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    objective = objective_spec(cfg)
    _, report = train(gated, task, objective, train_config(cfg), teacher=teacher)
    gated.save(out / "mapping.ckpt")
    gated.bake().save(out / "student.ckpt")
    _finish(report, cfg, out)
    print(f"gate sigma(s) after training: {gated.sigma():.4f}")
    print(f"baked student checkpoint: {out / 'student.ckpt'}")
    return 0


def cmd_bench(cfg: dict, out: Path) -> int:
    teacher = load_teacher(cfg)
    tcfg = teacher.config
    scfg = model_config(cfg, "student", tcfg.vocab_size, tcfg.num_classes)
    seed = cfg["seed"]
    plain = TransformerModel.init(scfg, seed=rng_stream(seed, "model-init"))
    mapping = ws_init(teacher, scfg, seed=rng_stream(seed, "mapping-init"))
    r_svd = resolve_rank(cfg, tcfg, scfg, "svd")
    r_tt = resolve_rank(cfg, tcfg, scfg, "tt")
    svd = svd_factorize(teacher, r_svd)
    tt = tt_factorize(teacher, r_tt, parts=cfg["reparam.cores"])

    counts = bench.count_report([
        ("plain student", plain),
        ("squeezed (train/baked)", mapping),
        (f"svd r={r_svd}", svd),
        (f"tt r={r_tt}", tt),
    ])
    b, n = cfg["bench.batch"], cfg["bench.seq_len"]
    flop_rows = {
        "plain student": bench.flops(scfg, ReparamSpec("plain"), b, n).to_dict(),
        "squeezed (baked)": bench.flops(scfg, ReparamSpec("ws"), b, n).to_dict(),
        f"svd r={r_svd}": bench.flops(tcfg, ReparamSpec("svd", rank=r_svd), b, n).to_dict(),
        f"tt r={r_tt}": bench.flops(tcfg, ReparamSpec("tt", rank=r_tt,
                                                      cores=cfg["reparam.cores"]), b, n).to_dict(),
    }
    speed_kwargs = dict(seq_len=n, n_samples=cfg["bench.n_samples"], batch=b,
                        repeats=cfg["bench.repeats"], warmup=cfg["bench.warmup"], seed=seed)
    speeds = bench.speed_table([
        bench.measure_speed(plain, label="plain student", **speed_kwargs),
        bench.measure_speed(mapping.bake(), label="squeezed (baked)", **speed_kwargs),
        bench.measure_speed(svd, label=f"svd r={r_svd}", **speed_kwargs),
        bench.measure_speed(tt, label=f"tt r={r_tt}", **speed_kwargs),
    ])

    print(counts["text"])
    print()
    print(speeds["text"])
    flop_totals = {k: v["total_macs"] for k, v in flop_rows.items()}
    print()
    print("forward MACs at batch %d seq %d: %s" % (b, n, json.dumps(flop_totals, sort_keys=True)))
    payload = {"counts": counts["rows"], "flops": flop_rows,
               "speed": [r for r in speeds["rows"]]}
    (out / "bench.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                                    encoding="utf-8")
    return 0


def cmd_verify() -> int:
    results = verify.run_all()
    for res in results:
        print(f"{'PASS' if res.ok else 'FAIL'} {res.name}: {res.detail}")
    failed = [r for r in results if not r.ok]
    if failed:
        print(f"verify failed at: {failed[0].name}", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def _setup_logging() -> None:
    level = os.environ.get("SQUEEZE_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"SQUEEZE_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level],
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="squeezekit",
        description="Train compressed transformer students from a frozen teacher.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, description in (
        ("train-teacher", "train a wide teacher on a task and save its checkpoint"),
        ("squeeze", "train a mapped or factorized student against a teacher"),
        ("gated-finetune", "blend a mapped teacher with a trainable base via one gate"),
        ("bench", "parameter counts, analytic MACs, and wall-clock timings"),
        ("verify", "run the built-in invariant checklist"),
    ):
        p = sub.add_parser(name, help=description)
        if name != "verify":
            p.add_argument("--config", help="flat key=value config file")
            p.add_argument("--seed", type=int, default=None, help="run seed")
            p.add_argument("--out", default=None, help="output directory")
            p.add_argument("--override", action="append", metavar="KEY=VALUE",
                           help="override one config key (repeatable)")
    return parser


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "squeeze": cmd_squeeze,
    "gated-finetune": cmd_gated_finetune,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if args.command == "verify":
            return cmd_verify()
        cfg = resolve_config(args)
        out = Path(args.out) if args.out else Path("runs") / args.command
        echo_config(cfg, out)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
