"""Independent reference implementations used to check the library.

Everything here is deliberately written the slow, obvious way (plain
Python loops, recursion, no shared code with the package) so each test
has a second route to the expected value.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from fedhin.graph import HeterogeneousGraph


def enumerate_typed_walks(graph: HeterogeneousGraph, type_sequence) -> np.ndarray:
    """Count walks following the type sequence by depth-first enumeration.

    Two nodes are adjacent when at least one edge connects them (parallel
    edges collapse).  Returns a |first type| x |last type| integer matrix
    over local per-type indices, diagonal included.
    """
    out_neighbors: dict[int, set[int]] = defaultdict(set)
    for src, dst, _rel in graph.edges:
        out_neighbors[src].add(dst)

    first_ids = [int(g) for g in graph.nodes_of_type(type_sequence[0])]
    last_ids = [int(g) for g in graph.nodes_of_type(type_sequence[-1])]
    last_index = {g: i for i, g in enumerate(last_ids)}
    counts = np.zeros((len(first_ids), len(last_ids)), dtype=np.int64)

    def walk(node: int, depth: int, row: int):
        if depth == len(type_sequence) - 1:
            counts[row, last_index[node]] += 1
            return
        want = type_sequence[depth + 1]
        for nxt in out_neighbors[node]:
            if graph.node_type[nxt] == want:
                walk(nxt, depth + 1, row)

    for row, start in enumerate(first_ids):
        walk(start, 0, row)
    return counts


def random_hin(rng: np.random.Generator, max_nodes: int = 40) -> HeterogeneousGraph:
    """A random small academic-flavored graph for exercising walk counting."""
    n_authors = int(rng.integers(2, max(3, max_nodes // 3)))
    n_papers = int(rng.integers(2, max(3, max_nodes // 2)))
    n_venues = int(rng.integers(1, 5))
    total = n_authors + n_papers + n_venues
    assert total <= max_nodes + 10

    nodes = [(i, "author", None) for i in range(n_authors)]
    nodes += [(n_authors + i, "paper", None) for i in range(n_papers)]
    nodes += [(n_authors + n_papers + i, "venue", None) for i in range(n_venues)]

    schema = [
        ("author", "writes", "paper"),
        ("paper", "written_by", "author"),
        ("paper", "cites", "paper"),
        ("paper", "published_in", "venue"),
        ("venue", "publishes", "paper"),
    ]
    edges = []
    for a in range(n_authors):
        for p in range(n_papers):
            if rng.random() < 0.25:
                edges.append((a, n_authors + p, "writes"))
            if rng.random() < 0.25:
                edges.append((n_authors + p, a, "written_by"))
    for p in range(n_papers):
        for q in range(n_papers):
            if p != q and rng.random() < 0.15:
                edges.append((n_authors + p, n_authors + q, "cites"))
        for v in range(n_venues):
            if rng.random() < 0.3:
                edges.append((n_authors + p, n_authors + n_papers + v, "published_in"))
            if rng.random() < 0.3:
                edges.append((n_authors + n_papers + v, n_authors + p, "publishes"))
    return HeterogeneousGraph(nodes, edges, schema, target_type="author")


def matvec_loops(matrix, vector):
    """Matrix-vector product by explicit scalar loops."""
    rows = len(matrix)
    cols = len(matrix[0])
    out = [0.0] * rows
    for r in range(rows):
        acc = 0.0
        for c in range(cols):
            acc += matrix[r][c] * vector[c]
        out[r] = acc
    return out


def softmax_loops(values):
    """Softmax by scalar math.exp, shifted for stability."""
    m = max(values)
    exps = [math.exp(v - m) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def cosine_loops(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb)


def finite_difference(loss_fn, tensor: np.ndarray, flat_index: int, h: float = 1e-5) -> float:
    """Central finite difference of ``loss_fn()`` w.r.t. one tensor coordinate."""
    flat = tensor.ravel()
    original = flat[flat_index]
    flat[flat_index] = original + h
    plus = loss_fn()
    flat[flat_index] = original - h
    minus = loss_fn()
    flat[flat_index] = original
    return (plus - minus) / (2.0 * h)


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def f1_by_confusion(predictions, truths, n_labels) -> tuple[float, float]:
    """Micro/macro F1 from an explicitly assembled confusion matrix."""
    confusion = [[0] * n_labels for _ in range(n_labels)]
    for p, t in zip(predictions, truths):
        confusion[t][p] += 1

    per_class = []
    tp_total = fp_total = fn_total = 0
    for c in range(n_labels):
        tp = confusion[c][c]
        fp = sum(confusion[t][c] for t in range(n_labels) if t != c)
        fn = sum(confusion[c][p] for p in range(n_labels) if p != c)
        tp_total += tp
        fp_total += fp
        fn_total += fn
        denom = 2 * tp + fp + fn
        per_class.append(2 * tp / denom if denom else 0.0)

    micro_denom = 2 * tp_total + fp_total + fn_total
    micro = 2 * tp_total / micro_denom if micro_denom else 0.0
    return micro, sum(per_class) / n_labels
