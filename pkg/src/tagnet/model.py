"""Instance embedding network and prediction heads.

Pipeline per design: edge-typed graph convolution -> GIN layer -> concat with
text features -> linear map to ``dim`` -> multi-head self-attention within
each sub-circuit. Heads: distance-norm (LayerNorm + FC metric space, pair
distance over a soft max of all in-sub-circuit pair distances), concat FC
distance, matching classifier, and per-net HPWL regressor.

All attention sums run over members sorted by row content, so the outputs are
exactly (bitwise) equivariant to reordering of the members.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .features import FEATURE_DIM
from .graph import CircuitGraph, EdgeType

CONV_TYPES = tuple(EdgeType)
EMBED_PREFIXES = ("gnn.", "combine.", "msa.")
HEAD_PREFIXES = {"NORM": ("norm.",), "CAT": ("cat.",), "match": ("match.",), "hpwl": ("hpwl.",)}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    use_text: bool = True
    use_attention: bool = True
    use_graph: bool = True
    head: str = "NORM"
    feature_dim: int = FEATURE_DIM
    text_dim: int = 128
    gnn_hidden: int = 64
    gnn_out: int = 32
    dim: int = 64
    heads: int = 4
    head_dim: int = 16
    fc_hidden: int = 128
    metric_dim: int = 64
    lse_temperature: float = 0.1
    init_seed: int = 0

    def validate(self) -> None:
        if not (self.use_text or self.use_graph):
            raise ConfigError("at least one of text (T) or graph (G) must be enabled")
        if self.heads * self.head_dim != self.dim:
            raise ConfigError(f"heads*head_dim = {self.heads * self.head_dim} != dim {self.dim}")
        if self.head not in ("NORM", "CAT"):
            raise ConfigError(f"unknown distance head {self.head!r}")
        if self.lse_temperature <= 0:
            raise ConfigError("lse_temperature must be positive")

    @property
    def variant(self) -> str:
        flags = ("T" if self.use_text else "") + ("A" if self.use_attention else "") + ("G" if self.use_graph else "")
        return f"{flags}-{self.head}"

    @classmethod
    def from_variant(cls, name: str, **kw) -> "ModelConfig":
        flags, _, head = name.partition("-")
        if not head or set(flags) - set("TAG") or not flags:
            raise ConfigError(f"bad variant name {name!r}")
        return cls(use_text="T" in flags, use_attention="A" in flags, use_graph="G" in flags, head=head, **kw)

    def to_json(self) -> dict:
        return asdict(self)


ABLATION_VARIANTS = tuple(f"{m}-{h}" for h in ("CAT", "NORM") for m in ("G", "T", "TA", "TG", "AG", "TAG"))


# ------------------------------------------------------------------ inputs


@dataclass
class GraphInputs:
    """Constant per-design tensors consumed by the embedding network."""

    features: np.ndarray  # (N, feature_dim), normalized
    text: np.ndarray  # (N, text_dim)
    conv_adj: dict  # EdgeType -> sparse (N, N), row-normalized by in-degree
    gin_adj: sp.csr_matrix  # (N, N) incoming-edge counts
    groups: np.ndarray  # (G, S) node ids, -1 padded; every node in exactly one group

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    def permuted(self, perm) -> "GraphInputs":
        """The same graph with node ``perm[r]`` renumbered to ``r``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)

        def relabel(a):
            a = a.tocoo()
            return sp.csr_matrix((a.data, (inv[a.row], inv[a.col])), shape=a.shape)

        return GraphInputs(self.features[perm], self.text[perm], {t: relabel(a) for t, a in self.conv_adj.items()},
                           relabel(self.gin_adj), np.where(self.groups >= 0, inv[np.maximum(self.groups, 0)], -1))


def pad_groups(groups) -> np.ndarray:
    width = max(len(g) for g in groups)
    out = np.full((len(groups), width), -1, dtype=np.int64)
    for i, g in enumerate(groups):
        out[i, :len(g)] = g
    return out


def attention_groups(graph: CircuitGraph):
    """Members of each sub-circuit occurrence; the top node is its own group."""
    groups = [[0]]
    groups += [m for m in graph.membership.values() if m]
    return groups


def graph_inputs(graph: CircuitGraph, features: np.ndarray, text: np.ndarray | None, text_dim: int = 128) -> GraphInputs:
    n = graph.num_nodes
    if text is None:
        text = np.zeros((n, text_dim))
    edges = np.array([(u, v, t.value) for u, v, t in graph.edges], dtype=np.int64).reshape(-1, 3)
    indeg = np.bincount(edges[:, 1], minlength=n).astype(np.float64) if len(edges) else np.zeros(n)
    conv = {}
    for t in CONV_TYPES:
        sel = edges[edges[:, 2] == t.value]
        w = 1.0 / indeg[sel[:, 1]] if len(sel) else np.zeros(0)
        conv[t] = sp.csr_matrix((w, (sel[:, 1], sel[:, 0])), shape=(n, n))
    gin = sp.csr_matrix((np.ones(len(edges)), (edges[:, 1], edges[:, 0])), shape=(n, n))
    return GraphInputs(np.asarray(features, dtype=np.float64), np.asarray(text, dtype=np.float64),
                       conv, gin, pad_groups(attention_groups(graph)))


# --------------------------------------------------------------- the model


def _glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class TagModel:
    """All trainable tensors plus the feature statistics and word model they
    were trained with."""

    def __init__(self, config: ModelConfig, stats=None, words=None):
        config.validate()
        self.config = config
        self.stats = stats
        self.words = words
        self.params = ad.ParamStore()
        self._init_params(np.random.default_rng(config.init_seed))

    def _init_params(self, rng) -> None:
        c = self.config
        p = self.params
        p.add("gnn.w_self", _glorot(rng, c.feature_dim, c.gnn_hidden))
        for t in CONV_TYPES:
            p.add(f"gnn.w_edge.{t.name}", _glorot(rng, c.feature_dim, c.gnn_hidden))
        p.add("gnn.w_gin", _glorot(rng, c.gnn_hidden, c.gnn_out))
        comb_in = (c.gnn_out if c.use_graph else 0) + (c.text_dim if c.use_text else 0)
        p.add("combine.w", _glorot(rng, comb_in, c.dim))
        p.add("msa.u_qkv", _glorot(rng, c.dim, 3 * c.heads * c.head_dim))
        p.add("msa.u_out", _glorot(rng, c.heads * c.head_dim, c.dim))
        p.add("norm.ln_gamma", np.ones(c.dim))
        p.add("norm.ln_beta", np.zeros(c.dim))
        self._fc(rng, "norm", c.dim, c.fc_hidden, c.metric_dim)
        self._fc(rng, "cat", 2 * c.dim, c.fc_hidden, 1)
        p.add("match.ln_gamma", np.ones(c.dim))
        p.add("match.ln_beta", np.zeros(c.dim))
        self._fc(rng, "match", 3 * c.dim, c.fc_hidden, 1)
        p.add("hpwl.ln_gamma", np.ones(c.dim))
        p.add("hpwl.ln_beta", np.zeros(c.dim))
        p.add("hpwl.msa.u_qkv", _glorot(rng, c.dim, 3 * c.heads * c.head_dim))
        p.add("hpwl.msa.u_out", _glorot(rng, c.heads * c.head_dim, c.dim))
        self._fc(rng, "hpwl", c.dim, c.fc_hidden, 1)
        # zero last layer: the ReLU clamp starts open for every net
        p["hpwl.fc2_w"].data[:] = 0.0
        p["hpwl.fc2_b"].data[:] = 0.2

    def _fc(self, rng, prefix, n_in, n_hidden, n_out):
        self.params.add(f"{prefix}.fc1_w", _glorot(rng, n_in, n_hidden))
        self.params.add(f"{prefix}.fc1_b", np.zeros(n_hidden))
        self.params.add(f"{prefix}.fc2_w", _glorot(rng, n_hidden, n_out))
        self.params.add(f"{prefix}.fc2_b", np.zeros(n_out))

    def names_with(self, prefixes) -> list:
        return [n for n in self.params.names() if n.startswith(tuple(prefixes))]

    def embedding_names(self) -> list:
        return self.names_with(EMBED_PREFIXES)

    def head_names(self, head: str) -> list:
        return self.names_with(HEAD_PREFIXES[head])

    def __getitem__(self, name):
        return self.params[name]

    # ------------------------------------------------------------ layers

    def fc(self, prefix: str, x: ad.Tensor) -> ad.Tensor:
        p = self.params
        h = ad.relu(ad.add(ad.matmul(x, p[f"{prefix}.fc1_w"]), p[f"{prefix}.fc1_b"]))
        return ad.add(ad.matmul(h, p[f"{prefix}.fc2_w"]), p[f"{prefix}.fc2_b"])

    def edge_typed_conv(self, inp: GraphInputs, h: ad.Tensor) -> ad.Tensor:
        return edge_typed_conv(inp, h, self.params["gnn.w_self"],
                               {t: self.params[f"gnn.w_edge.{t.name}"] for t in CONV_TYPES})

    def gin_layer(self, inp: GraphInputs, h: ad.Tensor) -> ad.Tensor:
        return gin_layer(inp, h, self.params["gnn.w_gin"])

    def embed(self, inp: GraphInputs) -> ad.Tensor:
        """Instance embeddings Z, one row per graph node."""
        c = self.config
        parts = []
        if c.use_graph:
            h1 = self.edge_typed_conv(inp, ad.Tensor(inp.features))
            parts.append(self.gin_layer(inp, h1))
        if c.use_text:
            parts.append(ad.Tensor(inp.text))
        hgt = parts[0] if len(parts) == 1 else ad.concat_axis(parts, axis=-1)
        hgt = ad.matmul(hgt, self.params["combine.w"])
        if not c.use_attention:
            return hgt
        return msa_scatter(hgt, inp.groups, self.params["msa.u_qkv"], self.params["msa.u_out"], c.heads, c.head_dim)

    # ------------------------------------------------------------- heads

    def metric_space(self, z: ad.Tensor) -> ad.Tensor:
        p = self.params
        return self.fc("norm", ad.layer_norm(z, p["norm.ln_gamma"], p["norm.ln_beta"]))

    def norm_predictions(self, z: ad.Tensor, pairs: np.ndarray, pair_group: np.ndarray, num_groups: int) -> ad.Tensor:
        """Relative distance for each row of ``pairs`` (node ids), normalized by
        the soft max over all pairs sharing its group id."""
        e = self.metric_space(z)
        return norm_distance(e, pairs, pair_group, num_groups, self.config.lse_temperature)

    def dist_norm(self, z: ad.Tensor, i: int, j: int, members) -> ad.Tensor:
        members = list(members)
        if len(members) < 2:
            raise ValueError("distance norm needs at least two members")
        if i == j:
            raise ValueError("distance norm needs two distinct instances")
        pairs = [(a, b) for k, a in enumerate(members) for b in members[k + 1:]]
        pairs.append((i, j))
        pairs = np.array(pairs)
        e = self.metric_space(z)
        d = ad.l2_norm_rows(ad.sub(ad.gather_rows(e, pairs[:, 0]), ad.gather_rows(e, pairs[:, 1])))
        den = ad.logsumexp(ad.gather_rows(d, np.arange(len(pairs) - 1)), temperature=self.config.lse_temperature)
        return ad.div(ad.gather_rows(d, [len(pairs) - 1]), den)

    def _head_input(self, prefix: str, z: ad.Tensor) -> ad.Tensor:
        # frozen embeddings carry a large shared offset; standardize per head
        if f"{prefix}.ln_gamma" not in self.params:
            return z
        return ad.layer_norm(z, self.params[f"{prefix}.ln_gamma"], self.params[f"{prefix}.ln_beta"])

    def _pair_head(self, prefix: str, z: ad.Tensor, pairs: np.ndarray, symmetric: bool,
                   with_diff: bool = False) -> ad.Tensor:
        pairs = np.asarray(pairs).reshape(-1, 2)
        z = self._head_input(prefix, z)
        zi, zj = ad.gather_rows(z, pairs[:, 0]), ad.gather_rows(z, pairs[:, 1])
        extra = [ad.absolute(ad.sub(zi, zj))] if with_diff else []
        fwd = ad.sigmoid(self.fc(prefix, ad.concat_axis([zi, zj] + extra, -1)))
        if not symmetric:
            return ad.reshape(fwd, (len(pairs),))
        bwd = ad.sigmoid(self.fc(prefix, ad.concat_axis([zj, zi] + extra, -1)))
        return ad.reshape(ad.scale(ad.add(fwd, bwd), 0.5), (len(pairs),))

    def cat_predictions(self, z: ad.Tensor, pairs, symmetric: bool = True) -> ad.Tensor:
        return self._pair_head("cat", z, pairs, symmetric)

    def match_probabilities(self, z: ad.Tensor, pairs, symmetric: bool = True) -> ad.Tensor:
        """P(pair is matched) from [z_i; z_j; |z_i - z_j|]; the difference term
        exposes pair similarity that a plain concatenation learns slowly."""
        return self._pair_head("match", z, pairs, symmetric, with_diff=True)

    def hpwl_predictions(self, z: ad.Tensor, nets: np.ndarray) -> ad.Tensor:
        """One non-negative wirelength per row of ``nets`` (node ids, -1 padded)."""
        c = self.config
        p = self.params
        z = self._head_input("hpwl", z)
        y, idx = msa(z, nets, p["hpwl.msa.u_qkv"], p["hpwl.msa.u_out"], c.heads, c.head_dim)
        mask = idx >= 0
        w = (mask / mask.sum(axis=1, keepdims=True))[:, None, :]  # (G, 1, S)
        pooled = ad.reshape(ad.matmul(ad.Tensor(w), y), (len(nets), c.dim))
        return ad.reshape(ad.relu(self.fc("hpwl", pooled)), (len(nets),))


# -------------------------------------------------------------- functional


def edge_typed_conv(inp: GraphInputs, h: ad.Tensor, w_self: ad.Tensor, w_edge: dict) -> ad.Tensor:
    """ReLU(W_self h_i + mean over incoming j of W_{type(j->i)} h_j)."""
    out = ad.matmul(h, w_self)
    for t in CONV_TYPES:
        adj = inp.conv_adj[t]
        if adj.nnz:
            out = ad.add(out, ad.matmul(ad.neighbor_sum(adj, h), w_edge[t]))
    return ad.relu(out)


def gin_layer(inp: GraphInputs, h: ad.Tensor, w: ad.Tensor) -> ad.Tensor:
    """W (h_i + sum over incoming j of h_j), epsilon = 0."""
    agg = ad.add(h, ad.neighbor_sum(inp.gin_adj, h)) if inp.gin_adj.nnz else h
    return ad.matmul(agg, w)


def canonical_groups(x: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Reorder each group's members by row content (lexicographic)."""
    out = np.full_like(groups, -1)
    for g in range(groups.shape[0]):
        members = groups[g][groups[g] >= 0]
        rows = x[members]
        order = np.lexsort(rows.T[::-1]) if rows.shape[1] else np.arange(len(members))
        out[g, :len(members)] = members[order]
    return out


def msa(x: ad.Tensor, groups: np.ndarray, u_qkv: ad.Tensor, u_out: ad.Tensor, heads: int, head_dim: int):
    """Multi-head self-attention within each group of row ids.

    Returns ``(y, idx)`` with ``y`` of shape (G, S, D) aligned with ``idx``
    (the content-sorted, -1 padded group table); padded rows are garbage.
    """
    idx = canonical_groups(x.data, np.asarray(groups))
    mask = idx >= 0
    xg = ad.gather_rows(x, idx)
    qkv = ad.matmul(xg, u_qkv)
    key_mask = mask[:, None, :]
    inv = 1.0 / math.sqrt(head_dim)
    outs = []
    for h in range(heads):
        b = 3 * head_dim * h
        q = ad.slice_last(qkv, b, b + head_dim)
        k = ad.slice_last(qkv, b + head_dim, b + 2 * head_dim)
        v = ad.slice_last(qkv, b + 2 * head_dim, b + 3 * head_dim)
        a = ad.row_softmax(ad.scale(ad.matmul(q, ad.transpose(k)), inv), mask=key_mask)
        outs.append(ad.matmul(a, v))
    cat = outs[0] if heads == 1 else ad.concat_axis(outs, -1)
    return ad.matmul(cat, u_out), idx


def msa_scatter(x: ad.Tensor, groups: np.ndarray, u_qkv, u_out, heads: int, head_dim: int) -> ad.Tensor:
    """MSA per group with outputs written back to each node's row of ``x``."""
    y, idx = msa(x, groups, u_qkv, u_out, heads, head_dim)
    g, s, d = y.shape
    flat = ad.reshape(y, (g * s, d))
    pos = np.full(x.shape[0], -1, dtype=np.int64)
    valid = idx >= 0
    pos[idx[valid]] = np.flatnonzero(valid)
    if (pos < 0).any():
        raise ValueError("every node must belong to an attention group")
    return ad.gather_rows(flat, pos)


def norm_distance(e: ad.Tensor, pairs: np.ndarray, pair_group: np.ndarray, num_groups: int,
                  temperature: float) -> ad.Tensor:
    pairs = np.asarray(pairs).reshape(-1, 2)
    d = ad.l2_norm_rows(ad.sub(ad.gather_rows(e, pairs[:, 0]), ad.gather_rows(e, pairs[:, 1])))
    den = ad.logsumexp(d, segments=pair_group, num_segments=num_groups, temperature=temperature)
    # a one-pair group at zero distance has LSE 0; define its output as 0
    den = ad.add(den, ad.Tensor((den.data == 0).astype(np.float64)))
    return ad.div(d, ad.gather_rows(den, pair_group))


def zero_shot_norm(vectors: np.ndarray, pairs: np.ndarray, pair_group: np.ndarray, num_groups: int) -> np.ndarray:
    """Distance norm with the exact max, applied directly to fixed vectors."""
    pairs = np.asarray(pairs).reshape(-1, 2)
    d = np.linalg.norm(vectors[pairs[:, 0]] - vectors[pairs[:, 1]], axis=1)
    mx = np.zeros(num_groups)
    np.maximum.at(mx, pair_group, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = d / mx[pair_group]
    return np.nan_to_num(out, nan=0.0)
