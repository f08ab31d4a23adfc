"""Corpus loading, whitespace tokenization, synthetic tasks, and batching.

Sequences are lowercased, whitespace-split token lists prefixed with <cls>;
sentence pairs are joined with <sep>. Reserved vocabulary ids are fixed:
pad=0, unk=1, cls=2, sep=3. Every synthetic task is constructed so that a
perfect classifier exists (Bayes accuracy 1.0).
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PAD, UNK, CLS, SEP = "<pad>", "<unk>", "<cls>", "<sep>"
RESERVED = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocab:
    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError(f"vocab must start with the reserved tokens {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab contains duplicate tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


def build_vocab(corpus, max_size: int | None = None) -> Vocab:
    """Most-frequent tokens first, ties broken lexicographically. `corpus`
    holds strings or pre-split token lists; max_size caps the total size
    including the four reserved ids."""
    counts: Counter = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        counts.update(tokenize(doc) if isinstance(doc, str) else doc)
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    for r in RESERVED:
        counts.pop(r, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        if max_size <= len(RESERVED):
            raise ValueError(f"max_size must exceed {len(RESERVED)}, got {max_size}")
        ranked = ranked[: max_size - len(RESERVED)]
    return Vocab(list(RESERVED) + [t for t, _ in ranked])


@dataclass
class Example:
    token_ids: list[int]
    label: int


@dataclass
class Task:
    name: str
    train: list[Example]
    dev: list[Example]
    vocab: Vocab
    num_classes: int


def load_tsv(path) -> list[tuple[int, list[str]]]:
    """Rows of (label, cls-prefixed tokens). Lines are either
    "label<TAB>text" or "label<TAB>text1<TAB>text2"."""
    rows: list[tuple[int, list[str]]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise ValueError(
                    f"{path}: line {lineno}: expected 2 or 3 tab-separated fields, "
                    f"got {len(fields)}")
            try:
                label = int(fields[0])
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: label {fields[0]!r} is not an integer") from None
            if label < 0:
                raise ValueError(f"{path}: line {lineno}: label must be nonnegative, got {label}")
            tokens = [CLS] + tokenize(fields[1])
            if len(fields) == 3:
                tokens += [SEP] + tokenize(fields[2])
            rows.append((label, tokens))
    return rows


def write_tsv(path, rows) -> None:
    """Rows of (label, text) or (label, text1, text2)."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write("\t".join(str(f) for f in row) + "\n")


def examples_from(vocab: Vocab, rows: list[tuple[int, list[str]]]) -> list[Example]:
    return [Example(vocab.encode(tokens), label) for label, tokens in rows]


def load_task(train_path, dev_path, name: str = "tsv",
              max_vocab: int | None = None) -> Task:
    train_rows = load_tsv(train_path)
    dev_rows = load_tsv(dev_path)
    if not train_rows:
        raise ValueError(f"{train_path} holds no examples")
    vocab = build_vocab([tokens for _, tokens in train_rows], max_vocab)
    labels = {lab for lab, _ in train_rows}
    num_classes = max(labels) + 1
    for lab, _ in dev_rows:
        if lab >= num_classes:
            raise ValueError(f"dev label {lab} unseen in training data "
                             f"(num_classes {num_classes})")
    return Task(name, examples_from(vocab, train_rows), examples_from(vocab, dev_rows),
                vocab, num_classes)


# -- synthetic tasks ---------------------------------------------------------

SYNTH_KINDS = ("keyword", "parity", "pair-match")


def synth_vocab(vocab_size: int, num_triggers: int) -> Vocab:
    """Fixed word inventory: trigger words k0.. then filler words w0.."""
    triggers = [f"k{i}" for i in range(num_triggers)]
    fillers = [f"w{i}" for i in range(vocab_size)]
    return Vocab(list(RESERVED) + triggers + fillers)


def synth_rows(kind: str, size: int, vocab_size: int, rng: np.random.Generator,
               seq_len: int = 12, num_triggers: int = 4) -> list[tuple[int, list[str]]]:
    """Labeled token rows with an exactly balanced label split (odd sizes get
    the extra example in class 1)."""
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic task {kind!r}, expected one of {SYNTH_KINDS}")
    if size <= 0:
        raise ValueError(f"size must be positive, got {size}")
    if vocab_size < 2 or num_triggers < 2 or seq_len < 4:
        raise ValueError("need vocab_size >= 2, num_triggers >= 2, seq_len >= 4")
    triggers = [f"k{i}" for i in range(num_triggers)]
    fillers = [f"w{i}" for i in range(vocab_size)]

    def filler_seq(n):
        return [fillers[i] for i in rng.integers(0, len(fillers), size=n)]

    labels = [1] * (size - size // 2) + [0] * (size // 2)
    rows: list[tuple[int, list[str]]] = []
    for label in labels:
        if kind == "keyword":
            seq = filler_seq(seq_len)
            if label == 1:
                seq[int(rng.integers(0, seq_len))] = triggers[int(rng.integers(0, num_triggers))]
            rows.append((label, [CLS] + seq))
        elif kind == "parity":
            seq = filler_seq(seq_len)
            count = int(rng.choice([0, 2, 4] if label == 0 else [1, 3]))
            for pos in rng.choice(seq_len, size=count, replace=False):
                seq[int(pos)] = triggers[0]
            rows.append((label, [CLS] + seq))
        else:  # pair-match
            half = seq_len // 2
            a, b = filler_seq(half), filler_seq(half)
            if label == 1:
                t = int(rng.integers(0, num_triggers))
                ta = tb = t
            else:
                ta = int(rng.integers(0, num_triggers))
                tb = (ta + 1 + int(rng.integers(0, num_triggers - 1))) % num_triggers
            a[int(rng.integers(0, half))] = triggers[ta]
            b[int(rng.integers(0, half))] = triggers[tb]
            rows.append((label, [CLS] + a + [SEP] + b))
    order = rng.permutation(size)
    return [rows[i] for i in order]


def synth_task(kind: str, train_size: int, dev_size: int, vocab_size: int,
               seed: int, seq_len: int = 12, num_triggers: int = 4) -> Task:
    vocab = synth_vocab(vocab_size, num_triggers)
    train = synth_rows(kind, train_size, vocab_size, np.random.default_rng([seed, 0]),
                       seq_len, num_triggers)
    dev = synth_rows(kind, dev_size, vocab_size, np.random.default_rng([seed, 1]),
                     seq_len, num_triggers)
    return Task(f"synth-{kind}", examples_from(vocab, train), examples_from(vocab, dev),
                vocab, num_classes=2)


# -- batching ----------------------------------------------------------------


def collate(examples: list[Example], pad_id: int = PAD_ID):
    """Pad to the batch max length. Returns (ids, mask, labels); mask is 1.0
    on real positions, 0.0 on padding."""
    if not examples:
        raise ValueError("cannot collate an empty batch")
    width = max(len(ex.token_ids) for ex in examples)
    ids = np.full((len(examples), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(examples), width))
    labels = np.empty(len(examples), dtype=np.int64)
    for i, ex in enumerate(examples):
        n = len(ex.token_ids)
        if n == 0:
            raise ValueError(f"example {i} is empty")
        ids[i, :n] = ex.token_ids
        mask[i, :n] = 1.0
        labels[i] = ex.label
    if not (ids[:, 0] == CLS_ID).all():
        raise ValueError("every sequence must start with the cls token")
    return ids, mask, labels


def eval_batches(examples: list[Example], batch_size: int):
    """Consecutive fixed-order chunks for evaluation."""
    for lo in range(0, len(examples), batch_size):
        yield examples[lo: lo + batch_size]
