"""Text pipeline: tokenization, vocabulary, datasets and embedding files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_PUNCTUATION = set(".,!?;:'\"()")

# Used only when stop-word stripping is switched on; off by default because
# attention analysis cares about words like "just" and "again".
STOPWORDS = frozenset("""
a an and are as at be but by for from had has have he her his i if in into is
it its me my of on or our she so that the their them they this to was we were
what when where which who will with you your
""".split())


class TextError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and break out each punctuation
    character (.,!?;:'"()) as its own token. Deterministic; empty or
    whitespace-only input gives an empty list."""
    tokens = []
    for chunk in text.lower().split():
        word = ""
        for ch in chunk:
            if ch in _PUNCTUATION:
                if word:
                    tokens.append(word)
                    word = ""
                tokens.append(ch)
            else:
                word += ch
        if word:
            tokens.append(word)
    return tokens


def strip_stopwords(tokens: list[str]) -> list[str]:
    return [t for t in tokens if t not in STOPWORDS]


@dataclass
class Vocabulary:
    """Token ids, dense in [0, V); id 0 is PAD, id 1 is UNK."""

    itos: list[str]
    stoi: dict[str, int] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.itos)

    def id_of(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi


def build_vocab(corpus, min_count: int = 1) -> Vocabulary:
    """Vocabulary over all tokens with frequency >= min_count, ids ordered
    by descending frequency with a lexicographic tie-break."""
    if min_count < 1:
        raise TextError(f"min_count must be >= 1, got {min_count}")
    counts: dict[str, int] = {}
    for tokens in corpus:
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t))
    itos = [PAD_TOKEN, UNK_TOKEN] + kept
    stoi = {t: i for i, t in enumerate(itos)}
    return Vocabulary(itos=itos, stoi=stoi)


@dataclass
class TokenSequence:
    """Model input: vocabulary ids plus the original surface tokens."""

    ids: list[int]
    words: list[str]

    def __post_init__(self):
        if len(self.ids) != len(self.words):
            raise TextError("ids and words must have equal length")
        if not self.ids:
            raise TextError("a token sequence must contain at least one token")

    @property
    def length(self) -> int:
        return len(self.ids)


def encode(vocab: Vocabulary, tokens: list[str]) -> TokenSequence:
    """Map surface tokens to ids (unknowns to UNK), keeping the words."""
    if not tokens:
        raise TextError("cannot encode an empty token list")
    return TokenSequence(ids=[vocab.id_of(t) for t in tokens], words=list(tokens))


@dataclass
class EmbeddingTable:
    """(V, D) embedding matrix; row PAD_ID is all-zero and stays that way."""

    matrix: Tensor
    trainable: bool

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def random_embeddings(vocab_size: int, dim: int, seed: int,
                      trainable: bool = True) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    mat = rng.uniform(-0.05, 0.05, size=(vocab_size, dim))
    mat[PAD_ID] = 0.0
    return EmbeddingTable(matrix=Tensor(mat), trainable=trainable)


def load_embeddings(path, vocab: Vocabulary, seed: int,
                    trainable: bool = True) -> tuple[EmbeddingTable, float]:
    """Read a `word v1 v2 ... vD` text file.

    Rows for in-vocabulary words are copied; words missing from the file
    keep their uniform(-0.05, 0.05) init drawn from `seed` (whole matrix
    drawn first, then covered rows overwritten). Returns the table plus
    the fraction of non-reserved vocabulary words found in the file.
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise TextError(f"{path}: line {lineno}: no vector values")
            elif len(values) != dim:
                raise TextError(
                    f"{path}: line {lineno}: expected {dim} values, "
                    f"got {len(values)}")
            if word not in vocab:
                continue
            try:
                vectors[word] = np.array([float(v) for v in values])
            except ValueError:
                raise TextError(f"{path}: line {lineno}: unparsable number")
    if dim is None:
        raise TextError(f"{path}: empty embedding file")

    rng = np.random.default_rng(seed)
    mat = rng.uniform(-0.05, 0.05, size=(vocab.size, dim))
    for word, vec in vectors.items():
        mat[vocab.stoi[word]] = vec
    mat[PAD_ID] = 0.0
    n_real = vocab.size - 2
    coverage = len(vectors) / n_real if n_real > 0 else 1.0
    return EmbeddingTable(matrix=Tensor(mat), trainable=trainable), coverage


# datasets ---------------------------------------------------------------


@dataclass
class Example:
    text: str
    label: int
    split: str | None = None


def load_jsonl_dataset(path) -> list[Example]:
    """JSON-lines file with one {"text": ..., "label": 0|1} object per
    line; an optional "split" field marks train/test membership."""
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TextError(f"{path}: line {lineno}: invalid JSON ({exc})")
            if not isinstance(obj, dict) or "text" not in obj or "label" not in obj:
                raise TextError(
                    f"{path}: line {lineno}: expected an object with "
                    "'text' and 'label'")
            if obj["label"] not in (0, 1):
                raise TextError(
                    f"{path}: line {lineno}: label must be 0 or 1, "
                    f"got {obj['label']!r}")
            if not isinstance(obj["text"], str):
                raise TextError(f"{path}: line {lineno}: text must be a string")
            examples.append(Example(
                text=obj["text"], label=int(obj["label"]),
                split=obj.get("split")))
    if not examples:
        raise TextError(f"{path}: dataset is empty")
    return examples


def prepare(examples, vocab: Vocabulary, max_len: int,
            drop_stopwords: bool = False) -> list[tuple[TokenSequence, int]]:
    """Tokenize, optionally strip stop words, truncate to max_len and
    encode. Raises on examples that tokenize to nothing."""
    out = []
    for i, ex in enumerate(examples):
        tokens = tokenize(ex.text)
        if drop_stopwords:
            tokens = strip_stopwords(tokens)
        tokens = tokens[:max_len]
        if not tokens:
            raise TextError(f"example {i}: text tokenizes to nothing: {ex.text!r}")
        out.append((encode(vocab, tokens), ex.label))
    return out
