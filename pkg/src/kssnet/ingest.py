"""Loaders for label vocabularies, annotations, knowledge edges, and word embeddings.

All structures are immutable after construction and safe to share across
threads.  Loading itself is single-threaded.

File formats
------------
vocabulary       one label per line, UTF-8
annotations      whitespace-separated ``sample_id label...`` lines; spaces
                 inside a label name are written as underscores
knowledge edges  TSV ``head <TAB> relation <TAB> tail <TAB> weight``
embedding table  text, ``token v1 v2 ... vF`` per line (GloVe-style)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """An input file violates its documented format."""


class UnresolvedLabelError(ValueError):
    """No word of a label name resolves in the embedding table."""


_WORD_SPLIT = re.compile(r"[\s\-]+")


def tokenize_label(name: str) -> list[str]:
    """Lowercase a label name and split it on whitespace and hyphens."""
    return [w for w in _WORD_SPLIT.split(name.lower()) if w]


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered label names with stable integer indices (the graph's node set)."""

    names: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.names) == 0:
            raise FormatError("vocabulary is empty")
        index: dict[str, int] = {}
        for i, name in enumerate(self.names):
            if name in index:
                raise FormatError(f"duplicate label {name!r}")
            index[name] = i
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.names)

    def resolve(self, token: str) -> int:
        """Map a label token to its index.

        Tries the token verbatim first, then with underscores replaced by
        spaces (the annotation-file encoding for multi-word names).
        """
        if token in self.index:
            return self.index[token]
        spaced = token.replace("_", " ")
        if spaced in self.index:
            return self.index[spaced]
        raise KeyError(token)


@dataclass(frozen=True)
class AnnotationSet:
    """Per-sample label index sets drawn from a fixed vocabulary.

    Empty label sets are legal; they are surfaced through
    :attr:`empty_sample_ids` rather than rejected, since they legitimately
    contribute zero to co-occurrence counts.
    """

    n_labels: int
    samples: tuple[tuple[str, frozenset[int]], ...]

    def __post_init__(self):
        if self.n_labels < 1:
            raise FormatError("n_labels must be >= 1")
        seen: set[str] = set()
        for sample_id, labels in self.samples:
            if sample_id in seen:
                raise FormatError(f"duplicate sample_id {sample_id!r}")
            seen.add(sample_id)
            for idx in labels:
                if not (0 <= idx < self.n_labels):
                    raise FormatError(
                        f"sample {sample_id!r}: label index {idx} outside [0, {self.n_labels})"
                    )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def empty_sample_ids(self) -> tuple[str, ...]:
        return tuple(sid for sid, labels in self.samples if not labels)

    @property
    def mean_labels_per_sample(self) -> float:
        if not self.samples:
            return 0.0
        return sum(len(labels) for _, labels in self.samples) / len(self.samples)


@dataclass(frozen=True)
class KnowledgeEdgeList:
    """Weighted relation triples between vocabulary labels.

    Multiple triples per (head, tail) pair are allowed; ``dropped`` counts
    input records whose endpoints fell outside the vocabulary (semantic
    networks rarely cover a dataset's full label set).
    """

    n_labels: int
    triples: tuple[tuple[int, int, str, float], ...]
    dropped: int = 0

    def __post_init__(self):
        for head, tail, relation, weight in self.triples:
            if not (0 <= head < self.n_labels and 0 <= tail < self.n_labels):
                raise FormatError(f"edge ({head}, {tail}) outside [0, {self.n_labels})")
            if not np.isfinite(weight) or weight < 0:
                raise FormatError(
                    f"edge ({head}, {tail}, {relation!r}): weight {weight} must be finite and >= 0"
                )

    def __len__(self) -> int:
        return len(self.triples)


@dataclass(frozen=True)
class EmbeddingTable:
    """Token -> fixed-width real vector map."""

    dim: int
    rows: dict[str, np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise FormatError("embedding dim must be >= 1")
        for token, vec in self.rows.items():
            if vec.shape != (self.dim,):
                raise FormatError(
                    f"token {token!r}: expected {self.dim} values, got {vec.shape}"
                )


def load_vocabulary(path) -> LabelVocabulary:
    """Read one label per line; line order defines the indices."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    names = []
    for lineno, raw in enumerate(lines, start=1):
        name = raw.strip()
        if not name:
            raise FormatError(f"{path}:{lineno}: empty label")
        names.append(name)
    return LabelVocabulary(tuple(names))


def save_vocabulary(vocab: LabelVocabulary, path) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in vocab.names), encoding="utf-8")


def load_annotations(path, vocab: LabelVocabulary) -> AnnotationSet:
    """Read ``sample_id label...`` lines, resolving names to indices.

    Unknown label names abort with an error listing every offender.
    """
    samples = []
    unknown: list[str] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        tokens = raw.split()
        if not tokens:
            continue
        sample_id, label_tokens = tokens[0], tokens[1:]
        labels = set()
        for tok in label_tokens:
            try:
                labels.add(vocab.resolve(tok))
            except KeyError:
                unknown.append(f"{path}:{lineno}: {tok!r}")
        samples.append((sample_id, frozenset(labels)))
    if unknown:
        raise FormatError("unknown label name(s): " + ", ".join(unknown))
    return AnnotationSet(len(vocab), tuple(samples))


def save_annotations(ann: AnnotationSet, vocab: LabelVocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id, labels in ann.samples:
            names = [vocab.names[i].replace(" ", "_") for i in sorted(labels)]
            fh.write(" ".join([sample_id, *names]) + "\n")


def load_knowledge_edges(path, vocab: LabelVocabulary) -> KnowledgeEdgeList:
    """Read TSV relation triples, dropping records that touch unknown labels.

    Dropped records are counted, not reported individually; negative weights
    and malformed records are hard errors.
    """
    triples = []
    dropped = 0
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
        head_name, relation, tail_name, weight_str = (f.strip() for f in fields)
        try:
            weight = float(weight_str)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad weight {weight_str!r}") from None
        if not np.isfinite(weight) or weight < 0:
            raise FormatError(f"{path}:{lineno}: weight {weight_str!r} must be finite and >= 0")
        try:
            head = vocab.resolve(head_name)
            tail = vocab.resolve(tail_name)
        except KeyError:
            dropped += 1
            continue
        triples.append((head, tail, relation, weight))
    return KnowledgeEdgeList(len(vocab), tuple(triples), dropped)


def save_knowledge_edges(edges: KnowledgeEdgeList, vocab: LabelVocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for head, tail, relation, weight in edges.triples:
            fh.write(f"{vocab.names[head]}\t{relation}\t{vocab.names[tail]}\t{weight!r}\n")


def load_embedding_table(path) -> EmbeddingTable:
    """Read a GloVe-style text table; the first line fixes the width."""
    rows: dict[str, np.ndarray] = {}
    dim = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        parts = raw.split()
        token, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
            if dim < 1:
                raise FormatError(f"{path}:{lineno}: no vector components")
        elif len(values) != dim:
            raise FormatError(f"{path}:{lineno}: expected {dim} values, got {len(values)}")
        if token in rows:
            raise FormatError(f"{path}:{lineno}: duplicate token {token!r}")
        try:
            rows[token] = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric vector component") from None
    if dim is None:
        raise FormatError(f"{path}: empty embedding table")
    return EmbeddingTable(dim, rows)


def save_embedding_table(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token, vec in table.rows.items():
            fh.write(" ".join([token, *(repr(float(v)) for v in vec)]) + "\n")


def build_initial_embeddings(table: EmbeddingTable, vocab: LabelVocabulary) -> np.ndarray:
    """Build the N x F initial label-embedding matrix in vocabulary order.

    Single-word labels take their table row directly; multi-word labels take
    the arithmetic mean of their resolvable words' rows.  A label with zero
    resolvable words is an error.
    """
    out = np.zeros((len(vocab), table.dim), dtype=np.float64)
    for i, name in enumerate(vocab.names):
        vectors = [table.rows[w] for w in tokenize_label(name) if w in table.rows]
        if not vectors:
            raise UnresolvedLabelError(f"label {name!r}: no word found in the embedding table")
        out[i] = np.mean(vectors, axis=0)
    return out
