"""Two-level attention embedding network over meta-path adjacency features.

Per meta path, a node's raw feature is its adjacency vector (walk counts
to every other target node).  A linear transform maps it to a d-vector;
node-level attention weights each meta-path neighbor by the softmax of
cosine similarities between transformed features; the weighted neighbor
sum passes through an activation and is concatenated with the node's own
transformed feature, then projected back to d dimensions.  Meta-path-
level attention scores each per-path embedding by the cosine between a
learned per-node preference vector and a shared projection of the
embedding, softmaxes across paths, and fuses.  A linear classifier head
with summed cross-entropy closes the objective.

All arithmetic is float64.  ``backward`` returns exact reverse-mode
gradients of the batch loss with respect to every parameter tensor;
it is hand-derived for this fixed architecture and verified against
central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .graph import MetaPathAdjacency


class ModelError(Exception):
    """Shape or contract violation in the embedding model."""


# -- activations -----------------------------------------------------------


def _elu(x):
    return np.where(x > 0, x, np.expm1(x))


def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(x))


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0).astype(np.float64)


ACTIVATIONS = {
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
    "relu": (_relu, _relu_grad),
    "elu": (_elu, _elu_grad),
}


def softmax(x: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over a 1-D array."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max()
    e = np.exp(shifted)
    return e / e.sum()


def cosine(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """Cosine similarity; returns (value, degenerate) with 0 for zero-norm inputs."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0, True
    return float(np.dot(a, b) / (na * nb)), False


# -- parameters ------------------------------------------------------------


@dataclass(frozen=True)
class ModelDims:
    """Shape bookkeeping for one model instance."""

    n_targets: int
    n_paths: int
    embedding_dim: int
    preference_dim: int
    n_labels: int


@dataclass
class ModelParams:
    """All learnable tensors.

    ``wt[p]`` (d x N) transforms adjacency vectors of meta path p;
    ``wc[p]`` (d x 2d) recombines the aggregated-neighbor / self
    concatenation; ``wp`` (k x d) projects per-path embeddings into the
    preference space; ``wo`` (L x d) is the classifier head; ``pref``
    (N x k) holds one preference vector per target node.  The first four
    are shared across federated clients; ``pref`` stays client-local.
    """

    wt: list[np.ndarray]
    wc: list[np.ndarray]
    wp: np.ndarray
    wo: np.ndarray
    pref: np.ndarray

    @property
    def n_paths(self) -> int:
        return len(self.wt)

    def tensor_items(self) -> list[tuple[str, np.ndarray]]:
        """Named tensors in canonical order (shared tensors first, then pref)."""
        items = [(f"wt_{p}", self.wt[p]) for p in range(self.n_paths)]
        items += [(f"wc_{p}", self.wc[p]) for p in range(self.n_paths)]
        items += [("wp", self.wp), ("wo", self.wo), ("pref", self.pref)]
        return items

    def shared_items(self) -> list[tuple[str, np.ndarray]]:
        return [(n, t) for n, t in self.tensor_items() if n != "pref"]

    def copy(self) -> "ModelParams":
        return ModelParams(
            wt=[w.copy() for w in self.wt],
            wc=[w.copy() for w in self.wc],
            wp=self.wp.copy(),
            wo=self.wo.copy(),
            pref=self.pref.copy(),
        )

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            wt=[np.zeros_like(w) for w in self.wt],
            wc=[np.zeros_like(w) for w in self.wc],
            wp=np.zeros_like(self.wp),
            wo=np.zeros_like(self.wo),
            pref=np.zeros_like(self.pref),
        )


def init_params(dims: ModelDims, rng: np.random.Generator) -> ModelParams:
    """Random initialization: uniform +-1/sqrt(fan_in) for matrices, unit-norm
    Gaussian rows for preference vectors."""
    d, k, n, m, nl = (
        dims.embedding_dim,
        dims.preference_dim,
        dims.n_targets,
        dims.n_paths,
        dims.n_labels,
    )

    def uniform(rows, cols):
        bound = 1.0 / math.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    wt = [uniform(d, n) for _ in range(m)]
    wc = [uniform(d, 2 * d) for _ in range(m)]
    wp = uniform(k, d)
    wo = uniform(nl, d)
    pref = rng.standard_normal((n, k)) / math.sqrt(k)
    pref /= np.linalg.norm(pref, axis=1, keepdims=True)
    return ModelParams(wt=wt, wc=wc, wp=wp, wo=wo, pref=pref)


def shape_manifest(params: ModelParams) -> list[dict]:
    """Ordered name/shape listing of the shared (federated) tensors."""
    return [{"name": n, "shape": list(t.shape)} for n, t in params.shared_items()]


def pack_shared(params: ModelParams) -> np.ndarray:
    """Flatten the shared tensors into one float64 vector in manifest order."""
    return np.concatenate([t.ravel() for _, t in params.shared_items()])


def unpack_shared(flat: np.ndarray, params: ModelParams) -> ModelParams:
    """Write a flat vector back into the shared tensors of ``params`` (in place)."""
    flat = np.asarray(flat, dtype=np.float64)
    offset = 0
    for _, tensor in params.shared_items():
        size = tensor.size
        if offset + size > flat.size:
            raise ModelError(
                f"flat vector too short: need at least {offset + size}, got {flat.size}"
            )
        tensor[...] = flat[offset : offset + size].reshape(tensor.shape)
        offset += size
    if offset != flat.size:
        raise ModelError(f"flat vector too long: expected {offset}, got {flat.size}")
    return params


# -- forward trace ---------------------------------------------------------


@dataclass
class NodeTrace:
    """Everything the backward pass needs for one batch node."""

    index: int
    label: int
    samples: list[np.ndarray]          # per path: sampled neighbor indices
    sims: list[np.ndarray]             # per path: cosine similarities s
    sim_valid: list[np.ndarray]        # per path: mask, False where cosine degenerated
    coeffs: list[np.ndarray]           # per path: attention coefficients c
    preact: list[np.ndarray]           # per path: pre-activation neighbor sum u
    aggregated: list[np.ndarray]       # per path: activated neighbor embedding
    path_embed: np.ndarray             # (M, d) per-path embeddings e^pi
    projected: np.ndarray              # (M, k) preference-space projections
    raw_path_scores: np.ndarray        # (M,) cosines against the preference vector
    path_score_valid: np.ndarray       # (M,) mask for degenerate cosines
    path_coeffs: np.ndarray            # (M,) softmaxed meta-path attention
    fused: np.ndarray                  # (d,)
    probs: np.ndarray                  # (L,)
    loss: float


@dataclass
class ForwardTrace:
    """Batch forward record: per-node traces plus the shared transformed features."""

    params: ModelParams
    batch: np.ndarray
    transformed: list[np.ndarray]      # per path: (N, d) transformed features H
    norms: list[np.ndarray]            # per path: (N,) row norms of H
    nodes: list[NodeTrace]
    total_loss: float
    zero_norm_events: int = 0

    @property
    def losses(self) -> np.ndarray:
        return np.array([n.loss for n in self.nodes])


# -- the model ---------------------------------------------------------------


class AttentionModel:
    """Embedding network bound to a fixed set of meta-path adjacencies.

    The model object holds graph-derived structure only (adjacency
    matrices and neighbor lists); parameters travel separately so that
    snapshots can be copied between federated workers.  An instance is
    meant to be driven by one worker at a time.
    """

    def __init__(
        self,
        adjacencies: Sequence[MetaPathAdjacency],
        n_labels: int,
        embedding_dim: int = 128,
        preference_dim: int = 16,
        activation: str = "elu",
        sample_size: int | None = 16,
    ):
        if not adjacencies:
            raise ModelError("at least one meta-path adjacency is required")
        n = adjacencies[0].n
        for adj in adjacencies:
            if adj.matrix.shape != (n, n):
                raise ModelError("all meta-path adjacencies must be square with equal size")
        if activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {activation!r}; choose {sorted(ACTIVATIONS)}")
        if n_labels < 1:
            raise ModelError("n_labels must be >= 1")
        self.adjacencies = list(adjacencies)
        self.matrices = [
            adj.matrix.astype(np.float64).tocsr() for adj in adjacencies
        ]
        self.neighbor_lists: list[list[np.ndarray]] = []
        for mat in self.matrices:
            rows = []
            for i in range(n):
                start, stop = mat.indptr[i], mat.indptr[i + 1]
                rows.append(mat.indices[start:stop].astype(np.int64))
            self.neighbor_lists.append(rows)
        self.dims = ModelDims(
            n_targets=n,
            n_paths=len(adjacencies),
            embedding_dim=embedding_dim,
            preference_dim=preference_dim,
            n_labels=n_labels,
        )
        self.activation = activation
        self._act, self._act_grad = ACTIVATIONS[activation]
        self.sample_size = sample_size

    # -- op-level surface (single node, single path) ------------------------

    def transform_features(self, params: ModelParams, path: int, i: int) -> np.ndarray:
        """Transformed structural feature: wt[path] @ adjacency_row(i)."""
        row = self.adjacencies[path].row(i)
        wt = params.wt[path]
        if wt.shape[1] != row.size:
            raise ModelError(f"wt_{path} has {wt.shape[1]} columns, adjacency has {row.size}")
        return wt @ row

    def node_similarity(self, params: ModelParams, path: int, i: int, j: int) -> float:
        """Cosine similarity of the transformed features of nodes i and j."""
        value, _ = cosine(
            self.transform_features(params, path, i),
            self.transform_features(params, path, j),
        )
        return value

    def node_attention(self, params: ModelParams, path: int, i: int) -> dict[int, float]:
        """Softmax over cosine similarities to all meta-path neighbors of i."""
        nbrs = self.neighbor_lists[path][i]
        if nbrs.size == 0:
            return {}
        sims = np.array([self.node_similarity(params, path, i, int(j)) for j in nbrs])
        coeffs = softmax(sims)
        return {int(j): float(c) for j, c in zip(nbrs, coeffs)}

    def aggregate_neighbors(
        self,
        params: ModelParams,
        path: int,
        i: int,
        coeffs: Mapping[int, float],
        sample_size: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        """Activation of the coefficient-weighted sum of sampled neighbor features.

        Coefficients are renormalized over the uniform sample so they stay
        on the simplex; with no neighbors the result is activation(0).
        """
        d = self.dims.embedding_dim
        ids = np.array(sorted(coeffs), dtype=np.int64)
        if ids.size and sample_size is not None and rng is not None and ids.size > sample_size:
            ids = np.sort(rng.choice(ids, size=sample_size, replace=False))
        if ids.size == 0:
            return self._act(np.zeros(d))
        weights = np.array([coeffs[int(j)] for j in ids])
        weights = weights / weights.sum()
        feats = np.stack([self.transform_features(params, path, int(j)) for j in ids])
        return self._act(weights @ feats)

    def metapath_embedding(
        self, params: ModelParams, path: int, i: int, aggregated: np.ndarray
    ) -> np.ndarray:
        """Recombination wc[path] @ concat(aggregated, self feature)."""
        self_feat = self.transform_features(params, path, i)
        stacked = np.concatenate([aggregated, self_feat])
        wc = params.wc[path]
        if wc.shape[1] != stacked.size:
            raise ModelError(f"wc_{path} has {wc.shape[1]} columns, concat vector has {stacked.size}")
        return wc @ stacked

    def metapath_attention(
        self, params: ModelParams, i: int, embeddings: Sequence[np.ndarray]
    ) -> np.ndarray:
        """Softmax over cosines between node i's preference vector and the
        projected per-path embeddings."""
        if len(embeddings) < 1:
            raise ModelError("need at least one meta-path embedding")
        scores = []
        for emb in embeddings:
            value, _ = cosine(params.pref[i], params.wp @ emb)
            scores.append(value)
        return softmax(np.array(scores))

    # -- batch forward/backward ---------------------------------------------

    def _transformed_all(self, params: ModelParams) -> tuple[list[np.ndarray], list[np.ndarray]]:
        transformed, norms = [], []
        for p, mat in enumerate(self.matrices):
            h = mat @ params.wt[p].T  # (N, d); row i = wt @ adjacency_row(i)
            transformed.append(np.asarray(h))
            norms.append(np.linalg.norm(h, axis=1))
        return transformed, norms

    def forward(
        self,
        params: ModelParams,
        batch: Sequence[int],
        labels: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
    ) -> ForwardTrace:
        """Run the full two-level attention pass for a batch of target nodes.

        Neighbor sampling happens only when both ``rng`` and the model's
        ``sample_size`` are set; otherwise all neighbors participate and
        the pass is deterministic in (params, graph).
        """
        dims = self.dims
        batch = np.asarray(batch, dtype=np.int64)
        transformed, norms = self._transformed_all(params)
        zero_events = 0
        node_traces: list[NodeTrace] = []
        loss_terms: list[float] = []

        for i in batch:
            i = int(i)
            samples, sims_list, valid_list, coeff_list = [], [], [], []
            preact_list, agg_list = [], []
            path_embed = np.empty((dims.n_paths, dims.embedding_dim))
            for p in range(dims.n_paths):
                h = transformed[p]
                hi = h[i]
                ni = norms[p][i]
                nbrs = self.neighbor_lists[p][i]
                if (
                    rng is not None
                    and self.sample_size is not None
                    and nbrs.size > self.sample_size
                ):
                    nbrs = np.sort(rng.choice(nbrs, size=self.sample_size, replace=False))
                if nbrs.size:
                    hn = h[nbrs]
                    denom = ni * norms[p][nbrs]
                    valid = denom > 0.0
                    sims = np.zeros(nbrs.size)
                    sims[valid] = (hn[valid] @ hi) / denom[valid]
                    zero_events += int((~valid).sum())
                    coeffs = softmax(sims)
                    u = coeffs @ hn
                else:
                    sims = np.empty(0)
                    valid = np.empty(0, dtype=bool)
                    coeffs = np.empty(0)
                    u = np.zeros(dims.embedding_dim)
                a = self._act(u)
                samples.append(nbrs)
                sims_list.append(sims)
                valid_list.append(valid)
                coeff_list.append(coeffs)
                preact_list.append(u)
                agg_list.append(a)
                path_embed[p] = params.wc[p] @ np.concatenate([a, hi])

            projected = path_embed @ params.wp.T  # (M, k)
            pref_i = params.pref[i]
            pref_norm = np.linalg.norm(pref_i)
            proj_norms = np.linalg.norm(projected, axis=1)
            score_valid = (proj_norms > 0.0) & (pref_norm > 0.0)
            raw_scores = np.zeros(dims.n_paths)
            raw_scores[score_valid] = (projected[score_valid] @ pref_i) / (
                pref_norm * proj_norms[score_valid]
            )
            zero_events += int((~score_valid).sum())
            path_coeffs = softmax(raw_scores)
            fused = path_coeffs @ path_embed
            logits = params.wo @ fused
            probs = softmax(logits)

            label = -1
            node_loss = 0.0
            if labels is not None:
                label = int(labels[i])
                if label < 0:
                    raise ModelError(f"node {i} has no label; cannot contribute to the loss")
                node_loss = -math.log(max(probs[label], np.finfo(np.float64).tiny))
                loss_terms.append(node_loss)

            node_traces.append(
                NodeTrace(
                    index=i,
                    label=label,
                    samples=samples,
                    sims=sims_list,
                    sim_valid=valid_list,
                    coeffs=coeff_list,
                    preact=preact_list,
                    aggregated=agg_list,
                    path_embed=path_embed,
                    projected=projected,
                    raw_path_scores=raw_scores,
                    path_score_valid=score_valid,
                    path_coeffs=path_coeffs,
                    fused=fused,
                    probs=probs,
                    loss=node_loss,
                )
            )

        total = math.fsum(loss_terms) if loss_terms else 0.0
        return ForwardTrace(
            params=params,
            batch=batch,
            transformed=transformed,
            norms=norms,
            nodes=node_traces,
            total_loss=total,
            zero_norm_events=zero_events,
        )

    def loss(
        self,
        params: ModelParams,
        batch: Sequence[int],
        labels: np.ndarray,
        rng: np.random.Generator | None = None,
    ) -> tuple[float, ForwardTrace]:
        """Summed cross-entropy over the batch, with the trace kept for backward."""
        trace = self.forward(params, batch, labels=labels, rng=rng)
        return trace.total_loss, trace

    def backward(self, trace: ForwardTrace) -> ModelParams:
        """Exact gradients of the traced batch loss w.r.t. every parameter tensor."""
        params = trace.params
        dims = self.dims
        grads = params.zeros_like()
        d_transformed = [np.zeros((dims.n_targets, dims.embedding_dim)) for _ in range(dims.n_paths)]

        for node in trace.nodes:
            if node.label < 0:
                continue
            i = node.index
            # classifier head: d loss / d logits = probs - onehot
            dlogits = node.probs.copy()
            dlogits[node.label] -= 1.0
            grads.wo += np.outer(dlogits, node.fused)
            dfused = params.wo.T @ dlogits

            # fuse: e = sum_p delta_p e_p
            dpath_coeffs = node.path_embed @ dfused           # (M,)
            dpath_embed = np.outer(node.path_coeffs, dfused)  # (M, d)

            # softmax across meta paths
            pc = node.path_coeffs
            draw = pc * (dpath_coeffs - float(pc @ dpath_coeffs))

            # cosine(pref_i, wp @ e_p); degenerate scores are constants
            pref_i = params.pref[i]
            pref_norm = float(np.linalg.norm(pref_i))
            dprojected = np.zeros_like(node.projected)
            for p in range(dims.n_paths):
                if not node.path_score_valid[p] or draw[p] == 0.0:
                    continue
                f = node.projected[p]
                nf = float(np.linalg.norm(f))
                cos_v = node.raw_path_scores[p]
                scale = pref_norm * nf
                grads.pref[i] += draw[p] * (f / scale - cos_v * pref_i / pref_norm**2)
                dprojected[p] = draw[p] * (pref_i / scale - cos_v * f / nf**2)

            # projection f_p = wp @ e_p
            grads.wp += dprojected.T @ node.path_embed
            dpath_embed += dprojected @ params.wp

            for p in range(dims.n_paths):
                h = trace.transformed[p]
                hi = h[i]
                de_p = dpath_embed[p]
                # e_p = wc @ concat(a, hi)
                stacked = np.concatenate([node.aggregated[p], hi])
                grads.wc[p] += np.outer(de_p, stacked)
                dstacked = params.wc[p].T @ de_p
                da = dstacked[: dims.embedding_dim]
                dhi = dstacked[dims.embedding_dim :].copy()

                # a = act(u)
                du = da * self._act_grad(node.preact[p])

                nbrs = node.samples[p]
                if nbrs.size:
                    hn = h[nbrs]
                    coeffs = node.coeffs[p]
                    # u = coeffs @ hn
                    dcoeffs = hn @ du
                    d_transformed[p][nbrs] += np.outer(coeffs, du)
                    # coeffs = softmax(sims)
                    dsims = coeffs * (dcoeffs - float(coeffs @ dcoeffs))
                    dsims = np.where(node.sim_valid[p], dsims, 0.0)
                    if np.any(dsims):
                        ni = trace.norms[p][i]
                        nn = trace.norms[p][nbrs]
                        denom = ni * nn
                        safe = np.where(node.sim_valid[p], denom, 1.0)
                        w = dsims / safe
                        sims = node.sims[p]
                        # d cos(hi, hj) / d hi and / d hj
                        dhi += w @ hn - (float(np.dot(dsims, sims)) / ni**2) * hi
                        d_transformed[p][nbrs] += np.outer(w, hi) - (
                            hn * (dsims * sims / np.where(node.sim_valid[p], nn**2, 1.0))[:, None]
                        )
                d_transformed[p][i] += dhi

        # h = A @ wt.T, so d wt = dH.T @ A
        for p in range(dims.n_paths):
            grads.wt[p] = np.asarray((self.matrices[p].T @ d_transformed[p]).T)
        return grads

    # -- inference helpers ----------------------------------------------------

    def embed(self, params: ModelParams, nodes: Sequence[int] | None = None) -> np.ndarray:
        """Fused embeddings (deterministic, no sampling) for the given nodes."""
        if nodes is None:
            nodes = np.arange(self.dims.n_targets)
        trace = self.forward(params, nodes, labels=None, rng=None)
        return np.stack([n.fused for n in trace.nodes])

    def predict_proba(self, params: ModelParams, nodes: Sequence[int]) -> np.ndarray:
        """Class probabilities for the given nodes (deterministic pass)."""
        trace = self.forward(params, nodes, labels=None, rng=None)
        return np.stack([n.probs for n in trace.nodes])


def fuse(embeddings: Sequence[np.ndarray], coeffs: Sequence[float]) -> np.ndarray:
    """Convex combination of per-path embeddings with simplex coefficients."""
    emb = np.stack(embeddings)
    c = np.asarray(coeffs, dtype=np.float64)
    if emb.shape[0] != c.size:
        raise ModelError(f"{emb.shape[0]} embeddings but {c.size} coefficients")
    return c @ emb
