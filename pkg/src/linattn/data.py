"""Deterministic synthetic datasets and batching.

Three desk-scale sequence tasks:

* nested prefix arithmetic (``gen_listops``): expressions over MAX, MIN,
  MED (median, rounded down) and SM (sum mod 10) whose value 0-9 is the
  label; every generated label is cross-checked against an independent
  recursive evaluator in the tests.
* motif classification (``gen_text_classification``): each class plants
  its own k-gram at a random position; filler tokens are drawn uniformly
  from a disjoint token range, so a motif scan classifies perfectly.
* motif matching (``gen_matching``): positive pairs plant the same motif
  in both sequences, negative pairs plant two different ones.

Token id 0 is reserved for padding and never emitted by a generator. All
generators run on numpy's PCG64 generator seeded explicitly, so a given
(seed, arguments) pair reproduces the dataset byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

PAD_ID = 0

LISTOPS_OPS = ("MAX", "MIN", "MED", "SM")
LISTOPS_SYMBOLS = ["<pad>", "]"] + [f"[{op}" for op in LISTOPS_OPS] + [str(d) for d in range(10)]
_CLOSE_ID = 1
_OP_IDS = {op: 2 + i for i, op in enumerate(LISTOPS_OPS)}
_DIGIT_BASE = 2 + len(LISTOPS_OPS)

# Tree-shape constants, tuned so the mean expression length sits near
# half the token budget at the default (max_len=128, max_depth=4).
LISTOPS_ARITY_RANGE = (2, 5)
LISTOPS_RECURSE_PROB = 0.55


@dataclass
class Dataset:
    """Token-id examples with a symbol table.

    ``examples`` holds (tokens, label) pairs for ``kind="classify"`` and
    (tokens_a, tokens_b, label) triples for ``kind="match"``; tokens are
    int arrays, labels ints below ``classes``.
    """

    examples: list
    vocab: list[str]
    classes: int
    kind: str = "classify"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.examples:
            raise DataError("dataset is empty")
        if self.kind not in ("classify", "match"):
            raise DataError(f"unknown dataset kind {self.kind!r}")

    def __len__(self):
        return len(self.examples)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)


@dataclass
class Batch:
    tokens: np.ndarray   # (B, L) int64, padded with PAD_ID
    mask: np.ndarray     # (B, L) bool, False exactly on pads
    labels: np.ndarray   # (B,) int64


@dataclass
class MatchBatch:
    tokens_a: np.ndarray
    mask_a: np.ndarray
    tokens_b: np.ndarray
    mask_b: np.ndarray
    labels: np.ndarray


# ---------------------------------------------------------------------------
# nested prefix arithmetic
# ---------------------------------------------------------------------------

def _eval_op(op: str, vals: list[int]) -> int:
    if op == "MAX":
        return max(vals)
    if op == "MIN":
        return min(vals)
    if op == "MED":
        s = sorted(vals)
        n = len(s)
        mid = (s[n // 2] + s[(n - 1) // 2]) / 2
        return int(mid)  # median rounded down
    if op == "SM":
        return sum(vals) % 10
    raise DataError(f"unknown operator {op}")


def _gen_tree(rng: np.random.Generator, depth_left: int, budget: int):
    """Returns (node, token_count); node is int digit or (op, [children])."""
    lo, hi = LISTOPS_ARITY_RANGE
    can_recurse = depth_left > 0 and budget >= lo + 2  # [OP digit digit ]
    if not can_recurse:
        return int(rng.integers(0, 10)), 1
    op = LISTOPS_OPS[rng.integers(0, len(LISTOPS_OPS))]
    arity = int(rng.integers(lo, min(hi, budget - 2) + 1))
    children = []
    used = 2  # opening [OP and closing ]
    for i in range(arity):
        remaining_slots = arity - i - 1
        child_budget = budget - used - remaining_slots  # leave room for digits
        recurse = child_budget >= lo + 2 and rng.random() < LISTOPS_RECURSE_PROB
        child, n = _gen_tree(rng, depth_left - 1 if recurse else 0, child_budget)
        children.append(child)
        used += n
    return (op, children), used


def _tree_value(node) -> int:
    if isinstance(node, int):
        return node
    op, children = node
    return _eval_op(op, [_tree_value(c) for c in children])


def _tree_tokens(node, out: list[int]):
    if isinstance(node, int):
        out.append(_DIGIT_BASE + node)
        return
    op, children = node
    out.append(_OP_IDS[op])
    for c in children:
        _tree_tokens(c, out)
    out.append(_CLOSE_ID)


def eval_listops_tokens(tokens) -> int:
    """Independent recursive-descent evaluator over serialized token ids.

    This is the oracle the generator's labels are checked against; it
    shares no code with the tree construction above.
    """
    tokens = [int(t) for t in tokens if t != PAD_ID]
    pos = 0

    def parse() -> int:
        nonlocal pos
        t = tokens[pos]
        if t >= _DIGIT_BASE:
            pos += 1
            return t - _DIGIT_BASE
        op = LISTOPS_SYMBOLS[t][1:]  # strip the "["
        pos += 1
        vals = []
        while tokens[pos] != _CLOSE_ID:
            vals.append(parse())
        pos += 1
        return _eval_op(op, vals)

    value = parse()
    if pos != len(tokens):
        raise DataError(f"trailing tokens after position {pos}")
    return value


def listops_to_string(tokens) -> str:
    return " ".join(LISTOPS_SYMBOLS[int(t)] for t in tokens if t != PAD_ID)


def gen_listops(seed: int, count: int, max_len: int = 128, max_depth: int = 4) -> Dataset:
    """Nested prefix expressions; the label is the expression value (0-9)."""
    if max_depth < 1:
        raise ConfigError(f"max_depth must be >= 1, got {max_depth}")
    if max_len < 8:
        raise ConfigError(f"max_len must be >= 8 to fit an expression, got {max_len}")
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(count):
        tree, _ = _gen_tree(rng, max_depth, max_len)
        toks: list[int] = []
        _tree_tokens(tree, toks)
        if isinstance(tree, int):  # wrap bare digits so every example is an expression
            toks = [_OP_IDS["MAX"]] + toks + [_CLOSE_ID]
            tree = ("MAX", [tree])
        examples.append((np.asarray(toks, dtype=np.int64), _tree_value(tree)))
    return Dataset(examples=examples, vocab=list(LISTOPS_SYMBOLS), classes=10,
                   kind="classify", meta={"task": "listops", "max_depth": max_depth})


# ---------------------------------------------------------------------------
# motif classification / matching
# ---------------------------------------------------------------------------

def _motif_layout(vocab_size: int, n_motifs: int, motif_len: int):
    """Split the vocab into filler ids and per-motif id runs."""
    needed = 1 + 2 + n_motifs * motif_len  # pad + >=2 filler + motif tokens
    if vocab_size < needed:
        raise ConfigError(
            f"vocab_size {vocab_size} too small for {n_motifs} distinct motifs of "
            f"length {motif_len} (need >= {needed})")
    motif_base = vocab_size - n_motifs * motif_len
    motifs = [tuple(range(motif_base + i * motif_len, motif_base + (i + 1) * motif_len))
              for i in range(n_motifs)]
    return motif_base, motifs


def _plant(rng, length: int, motif, filler_hi: int) -> np.ndarray:
    seq = rng.integers(1, filler_hi, size=length).astype(np.int64)
    pos = int(rng.integers(0, length - len(motif) + 1))
    seq[pos:pos + len(motif)] = motif
    return seq


def gen_text_classification(seed: int, count: int, length: int = 128,
                            vocab_size: int = 32, classes: int = 2,
                            motif_len: int = 3) -> Dataset:
    """Each class plants its own k-gram motif in uniform filler noise.

    Filler ids and motif ids are disjoint, so the task is perfectly
    separable and a motif scan recovers every label. Labels alternate for
    an exactly balanced histogram.
    """
    if classes < 2:
        raise ConfigError(f"classes must be >= 2, got {classes}")
    if length < motif_len:
        raise ConfigError(f"length {length} shorter than motif_len {motif_len}")
    filler_hi, motifs = _motif_layout(vocab_size, classes, motif_len)
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % classes
    rng.shuffle(labels)
    examples = [(_plant(rng, length, motifs[lbl], filler_hi), int(lbl)) for lbl in labels]
    return Dataset(examples=examples, vocab=[str(i) for i in range(vocab_size)],
                   classes=classes, kind="classify",
                   meta={"task": "text_classification", "motifs": motifs,
                         "motif_len": motif_len})


def gen_matching(seed: int, count: int, length: int = 128, vocab_size: int = 48,
                 motif_len: int = 3, n_motifs: int = 6) -> Dataset:
    """Sequence pairs; label 1 iff both sides carry the same motif."""
    if n_motifs < 2:
        raise ConfigError(f"need >= 2 motifs to form negatives, got {n_motifs}")
    if length < motif_len:
        raise ConfigError(f"length {length} shorter than motif_len {motif_len}")
    filler_hi, motifs = _motif_layout(vocab_size, n_motifs, motif_len)
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 2
    rng.shuffle(labels)
    examples = []
    for lbl in labels:
        i = int(rng.integers(0, n_motifs))
        if lbl == 1:
            j = i
        else:
            j = int(rng.integers(0, n_motifs - 1))
            if j >= i:
                j += 1
        a = _plant(rng, length, motifs[i], filler_hi)
        b = _plant(rng, length, motifs[j], filler_hi)
        examples.append((a, b, int(lbl)))
    return Dataset(examples=examples, vocab=[str(i) for i in range(vocab_size)],
                   classes=2, kind="match",
                   meta={"task": "matching", "motifs": motifs, "motif_len": motif_len})


def _find_motifs(tokens: np.ndarray, motifs) -> set[int]:
    found = set()
    toks = tokens.tolist()
    for idx, motif in enumerate(motifs):
        m = list(motif)
        k = len(m)
        for start in range(len(toks) - k + 1):
            if toks[start:start + k] == m:
                found.add(idx)
                break
    return found


def motif_oracle(ds: Dataset) -> np.ndarray:
    """Label every example by scanning for planted motifs (no learning)."""
    motifs = ds.meta["motifs"]
    preds = []
    for ex in ds.examples:
        if ds.kind == "classify":
            tokens, _ = ex
            found = _find_motifs(tokens, motifs)
            preds.append(min(found) if found else -1)
        else:
            a, b, _ = ex
            shared = _find_motifs(a, motifs) & _find_motifs(b, motifs)
            preds.append(int(bool(shared)))
    return np.asarray(preds)


# ---------------------------------------------------------------------------
# TSV ingestion / export
# ---------------------------------------------------------------------------

def load_tsv_dataset(path, schema: str = "classify") -> Dataset:
    """Rows are ``label<TAB>ids`` (classify) or ``label<TAB>ids<TAB>ids``
    (match), ids space-separated integers. The vocab is max id + 1."""
    if schema not in ("classify", "match"):
        raise ConfigError(f"schema must be 'classify' or 'match', got {schema!r}")
    examples = []
    max_id = 0
    max_label = 0
    want_cols = 2 if schema == "classify" else 3
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != want_cols:
                raise DataError(f"{path}:{lineno}: expected {want_cols} tab-separated "
                                f"columns, got {len(cols)}")
            try:
                label = int(cols[0])
                token_cols = [np.asarray([int(t) for t in c.split()], dtype=np.int64)
                              for c in cols[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if label < 0:
                raise DataError(f"{path}:{lineno}: negative label {label}")
            for toks in token_cols:
                if toks.size == 0:
                    raise DataError(f"{path}:{lineno}: empty token column")
                if toks.min() < 0:
                    raise DataError(f"{path}:{lineno}: negative token id")
                max_id = max(max_id, int(toks.max()))
            max_label = max(max_label, label)
            examples.append((*token_cols, label))
    if not examples:
        raise DataError(f"{path}: no rows")
    vocab = [str(i) for i in range(max_id + 1)]
    return Dataset(examples=examples, vocab=vocab, classes=max_label + 1,
                   kind=schema, meta={"task": "tsv", "path": str(path)})


def save_tsv_dataset(ds: Dataset, path):
    """Inverse of ``load_tsv_dataset`` (labels and space-joined ids)."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in ds.examples:
            *token_cols, label = ex
            cols = [str(label)] + [" ".join(str(int(t)) for t in toks) for toks in token_cols]
            fh.write("\t".join(cols) + "\n")


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def _pad_stack(seqs, max_len: int):
    width = min(max(len(s) for s in seqs), max_len)
    tokens = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        s = s[:max_len]
        tokens[i, :len(s)] = s
        mask[i, :len(s)] = True
    return tokens, mask


def batch_iter(ds: Dataset, batch_size: int, max_len: int, shuffle_seed: int | None = None):
    """Deterministically shuffled, padded batches; the final partial batch
    is kept. Sequences longer than ``max_len`` are truncated."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(ds))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        chunk = [ds.examples[i] for i in order[start:start + batch_size]]
        if ds.kind == "classify":
            tokens, mask = _pad_stack([ex[0] for ex in chunk], max_len)
            labels = np.asarray([ex[1] for ex in chunk], dtype=np.int64)
            yield Batch(tokens=tokens, mask=mask, labels=labels)
        else:
            ta, ma = _pad_stack([ex[0] for ex in chunk], max_len)
            tb, mb = _pad_stack([ex[1] for ex in chunk], max_len)
            labels = np.asarray([ex[2] for ex in chunk], dtype=np.int64)
            yield MatchBatch(tokens_a=ta, mask_a=ma, tokens_b=tb, mask_b=mb, labels=labels)
