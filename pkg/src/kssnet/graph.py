"""KS label-graph construction: co-occurrence statistics, knowledge priors, superimposing.

The pipeline runs:

    annotations -> co-occurrence counts -> conditional probabilities,
        binarized at ``binarize_threshold``          (statistical adjacency)
    relation triples -> max relation weight per pair (knowledge adjacency)
    both normalized by D^{-1/2} A D^{-1/2}, convex-combined with ``lam``,
    thresholded at ``tau``, identity-mixed with ``eta``, and the result
    normalized once more for graph convolution.

Matrices are dense float64 throughout; label counts here are at most a few
hundred, so sparsity machinery would buy nothing.  All functions are pure.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import AnnotationSet, KnowledgeEdgeList


@dataclass(frozen=True)
class GraphPipelineConfig:
    """Knobs of the graph pipeline.

    ``lam`` weighs the statistical graph against the knowledge graph,
    ``tau`` prunes weak superimposed edges, ``eta`` mixes the pruned graph
    with the identity, and ``binarize_threshold`` is the conditional
    probability cut used when building the statistical adjacency.

    ``normalize_after_superimpose`` moves the single post-superimposing
    normalization from after identity mixing (the default) to directly after
    the convex combination; both placements are defensible readings of the
    construction and the default keeps ``tau`` acting on convex-combination
    scale.
    """

    lam: float = 0.4
    tau: float = 0.02
    eta: float = 0.4
    binarize_threshold: float = 0.4
    normalize_after_superimpose: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if not self.tau >= 0.0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.binarize_threshold <= 1.0:
            raise ValueError(
                f"binarize_threshold must lie in [0, 1], got {self.binarize_threshold}"
            )


def _check_adjacency(a: np.ndarray, name: str = "adjacency") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(a < 0):
        raise ValueError(f"{name} has negative entries")
    return a


def cooccurrence_counts(ann: AnnotationSet, n: int | None = None):
    """Count pairwise label co-occurrences over an annotation set.

    Returns ``(M, counts)`` where ``M[i, j]`` is the number of samples
    containing both labels i and j (zero diagonal, symmetric) and
    ``counts[i]`` is the number of samples containing label i.
    """
    if n is None:
        n = ann.n_labels
    elif n < ann.n_labels:
        raise ValueError(f"n={n} smaller than annotation vocabulary {ann.n_labels}")
    m = np.zeros((n, n), dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for _, labels in ann.samples:
        idx = sorted(labels)
        for a in idx:
            counts[a] += 1
        for pos, a in enumerate(idx):
            for b in idx[pos + 1:]:
                m[a, b] += 1
                m[b, a] += 1
    return m, counts


def statistical_adjacency(m: np.ndarray, counts: np.ndarray, t: float = 0.4) -> np.ndarray:
    """Binarize conditional co-occurrence probabilities into an adjacency.

    ``P[i, j] = M[i, j] / counts[i]`` (zero when label i never occurs);
    edges with ``P >= t`` survive, the diagonal is cleared.  The result is
    generally asymmetric: conditioning direction is row-wise.
    """
    m = np.asarray(m, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    p = np.divide(m, counts[:, None], out=np.zeros_like(m), where=counts[:, None] > 0)
    a = (p >= t).astype(np.float64)
    np.fill_diagonal(a, 0.0)
    return a


def knowledge_adjacency(
    edges: KnowledgeEdgeList, n: int | None = None, symmetric: bool = True
) -> np.ndarray:
    """Adjacency whose (i, j) entry is the maximum relation weight between i and j.

    Pairs with no relation get 0.  Relation triples are treated as undirected
    by default (a relation between i and j belongs to both entry pairs); pass
    ``symmetric=False`` to keep head -> tail direction only.
    """
    if n is None:
        n = edges.n_labels
    elif n < edges.n_labels:
        raise ValueError(f"n={n} smaller than edge-list vocabulary {edges.n_labels}")
    a = np.zeros((n, n), dtype=np.float64)
    for head, tail, _, weight in edges.triples:
        a[head, tail] = max(a[head, tail], weight)
        if symmetric:
            a[tail, head] = max(a[tail, head], weight)
    return a


def normalize(a: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization D^{-1/2} A D^{-1/2}.

    Degrees are row sums.  Zero-degree nodes map to zero rows and columns
    (D_ii^{-1/2} is defined as 0 there); they regain a self-connection later
    through identity mixing.
    """
    a = _check_adjacency(a)
    deg = a.sum(axis=1)
    denom = np.sqrt(np.outer(deg, deg))
    return np.divide(a, denom, out=np.zeros_like(a), where=denom > 0)


def superimpose(a_s: np.ndarray, a_k: np.ndarray, lam: float) -> np.ndarray:
    """Elementwise convex combination ``lam * a_s + (1 - lam) * a_k``."""
    a_s = np.asarray(a_s, dtype=np.float64)
    a_k = np.asarray(a_k, dtype=np.float64)
    if a_s.shape != a_k.shape:
        raise ValueError(f"shape mismatch: {a_s.shape} vs {a_k.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    return lam * a_s + (1.0 - lam) * a_k


def threshold_filter(a: np.ndarray, tau: float) -> np.ndarray:
    """Zero out entries strictly below ``tau``; entries >= tau pass unchanged."""
    if not tau >= 0.0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    a = np.asarray(a, dtype=np.float64)
    return np.where(a < tau, 0.0, a)


def identity_mix(a_tau: np.ndarray, eta: float) -> np.ndarray:
    """Blend with the identity: ``eta * a_tau + (1 - eta) * I``."""
    a_tau = np.asarray(a_tau, dtype=np.float64)
    if a_tau.ndim != 2 or a_tau.shape[0] != a_tau.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a_tau.shape}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return eta * a_tau + (1.0 - eta) * np.eye(a_tau.shape[0])


def edge_set(a: np.ndarray) -> list[tuple[int, int]]:
    """All ordered index pairs with a nonzero entry, in row-major order."""
    a = np.asarray(a)
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(a))]


def build_ks_graph(
    ann: AnnotationSet,
    edges: KnowledgeEdgeList,
    config: GraphPipelineConfig = GraphPipelineConfig(),
):
    """Run the full pipeline; returns ``(a_ks, a_ks_norm)``.

    ``a_ks`` is the superimposed, thresholded, identity-mixed adjacency;
    ``a_ks_norm`` is its normalized form as consumed by graph convolution.
    """
    if ann.n_labels != edges.n_labels:
        raise ValueError(
            f"vocabulary size mismatch: annotations {ann.n_labels}, edges {edges.n_labels}"
        )
    m, counts = cooccurrence_counts(ann)
    a_s = statistical_adjacency(m, counts, config.binarize_threshold)
    a_k = knowledge_adjacency(edges)
    a = superimpose(normalize(a_s), normalize(a_k), config.lam)
    if config.normalize_after_superimpose:
        a = normalize(a)
    a_tau = threshold_filter(a, config.tau)
    a_ks = identity_mix(a_tau, config.eta)
    a_ks_norm = a_ks if config.normalize_after_superimpose else normalize(a_ks)
    return a_ks, a_ks_norm


def graph_summary(a: np.ndarray) -> dict:
    """Degree statistics and structural flags used by the CLI summaries."""
    a = np.asarray(a, dtype=np.float64)
    deg = a.sum(axis=1)
    nnz = int(np.count_nonzero(a))
    return {
        "n": int(a.shape[0]),
        "nnz": nnz,
        "edges": nnz,
        "symmetric": bool(np.array_equal(a, a.T)),
        "degree_min": float(deg.min()),
        "degree_mean": float(deg.mean()),
        "degree_max": float(deg.max()),
    }


# --- serialization -------------------------------------------------------

_BINARY_MAGIC = b"KSADJBIN"
_BINARY_VERSION = 1


def save_adjacency_text(a: np.ndarray, path) -> None:
    """Text format: header ``N``, then N rows of N space-separated decimals.

    Values are printed with 17 significant digits, enough to round-trip
    float64 exactly.
    """
    a = _check_adjacency(a)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{a.shape[0]}\n")
        for row in a:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_adjacency_text(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty adjacency file")
    try:
        n = int(lines[0])
    except ValueError:
        raise ValueError(f"{path}: bad header {lines[0]!r}") from None
    rows = [line.split() for line in lines[1:] if line.strip()]
    if len(rows) != n or any(len(r) != n for r in rows):
        raise ValueError(f"{path}: expected {n}x{n} entries")
    return _check_adjacency(np.array([[float(v) for v in r] for r in rows]), str(path))


def save_adjacency_binary(a: np.ndarray, path) -> None:
    """Binary format: magic, version, N, then row-major little-endian float64."""
    a = _check_adjacency(a)
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<II", _BINARY_VERSION, a.shape[0]))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_adjacency_binary(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:8] != _BINARY_MAGIC:
        raise ValueError(f"{path}: bad magic")
    version, n = struct.unpack("<II", blob[8:16])
    if version != _BINARY_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    data = np.frombuffer(blob[16:], dtype="<f8")
    if data.size != n * n:
        raise ValueError(f"{path}: expected {n * n} values, got {data.size}")
    return _check_adjacency(data.reshape(n, n).astype(np.float64), str(path))
