"""Cross-scale analysis of a fixed k-NN similarity graph.

A descending sequence of weight thresholds gives a nested family of
subgraphs. Communities are tracked across the levels; the full graph is
summarized by spectral, smoothness, role, motif and diffusion signatures.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np
from sklearn.cluster import KMeans

from .structure_graph import communities, giant, graph_metrics, path_graph

log = logging.getLogger(__name__)

OTHER = "Other"


class EmptyGraph(ValueError):
    pass


class Degenerate(ValueError):
    pass


def default_quantiles(levels: int = 8) -> np.ndarray:
    return np.linspace(0.95, 0.10, levels)


@dataclass
class Filtration:
    n_nodes: int
    quantiles: list[float]
    thresholds: list[float]
    edges: list[list[tuple[int, int, float]]]

    def __len__(self) -> int:
        return len(self.thresholds)

    def graph(self, level: int) -> nx.Graph:
        G = nx.Graph()
        G.add_nodes_from(range(self.n_nodes))
        G.add_weighted_edges_from(self.edges[level])
        return G


def build_filtration(G: nx.Graph, levels: int = 8,
                     quantiles: Sequence[float] | None = None) -> Filtration:
    """Level l keeps edges with w >= tau_l; thresholds strictly decrease."""
    edges = sorted((min(u, v), max(u, v), float(w))
                   for u, v, w in G.edges(data="weight", default=1.0))
    if not edges:
        raise EmptyGraph("graph has no edges")
    q = np.sort(np.asarray(default_quantiles(levels) if quantiles is None else quantiles))[::-1]
    w = np.array([e[2] for e in edges])
    taus = np.quantile(w, q)
    keep_q, keep_t = [], []
    for qi, t in zip(q, taus):
        if keep_t and t >= keep_t[-1]:
            continue
        keep_q.append(float(qi))
        keep_t.append(float(t))
    if len(keep_t) < len(taus):
        warnings.warn(f"{len(taus) - len(keep_t)} duplicate threshold(s) collapsed",
                      stacklevel=2)
    level_edges = [[e for e in edges if e[2] >= t] for t in keep_t]
    return Filtration(G.number_of_nodes(), keep_q, keep_t, level_edges)


def level_partitions(filt: Filtration) -> list[list[list[int]]]:
    return [communities(path_graph(filt.graph(i))) for i in range(len(filt))]


def level_reports(filt: Filtration, n_null: int = 20, seed: int = 0) -> list[dict]:
    rows = []
    for i in range(len(filt)):
        G = filt.graph(i)
        m = graph_metrics(G, n_null=n_null, seed=seed + i)
        rows.append({"level": i, "threshold": filt.thresholds[i], "quantile": filt.quantiles[i],
                     **{k: v for k, v in m.to_dict().items() if k != "small_world"}})
    return rows


# --------------------------------------------------------------------------
# persistence and flows

def jaccard_persistence(p1: Sequence[Sequence[int]], p2: Sequence[Sequence[int]]) -> float:
    a = [set(c) for c in p1]
    b = [set(d) for d in p2]
    if not a:
        return 0.0
    return float(np.mean([max(len(c & d) / len(c | d) for d in b) for c in a]))


def persistence_curve(parts: Sequence[Sequence[Sequence[int]]]) -> list[float]:
    return [jaccard_persistence(parts[i], parts[i + 1]) for i in range(len(parts) - 1)]


def _ranked(part: Sequence[Sequence[int]]) -> list[list[int]]:
    return sorted((sorted(c) for c in part), key=lambda c: (-len(c), c[0]))


def lineage_ids(parts: Sequence[Sequence[Sequence[int]]]) -> list[list[int]]:
    """Identity per community that persists across levels.

    A community inherits the id of its largest-overlap predecessor unless a
    larger sibling already took it; otherwise it is born with a fresh id.
    """
    ids: list[list[int]] = []
    next_id = 0
    prev: list[list[int]] = []
    for level, part in enumerate(parts):
        ranked = _ranked(part)
        cur = []
        taken = set()
        for c in ranked:
            inherit = None
            if level:
                s = set(c)
                best = max(range(len(prev)),
                           key=lambda k: (len(s & set(prev[k])), -k))
                if len(s & set(prev[best])) and ids[-1][best] not in taken:
                    inherit = ids[-1][best]
            if inherit is None:
                inherit = next_id
                next_id += 1
            taken.add(inherit)
            cur.append(inherit)
        ids.append(cur)
        prev = ranked
    return ids


@dataclass
class SankeyTable:
    nodes: list[dict] = field(default_factory=list)
    flows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"nodes": self.nodes, "flows": self.flows}


def sankey_flows(parts: Sequence[Sequence[Sequence[int]]], top_k: int = 6,
                 thresholds: Sequence[float] | None = None) -> SankeyTable:
    if len(parts) < 2:
        raise ValueError("need at least two levels")
    ids = lineage_ids(parts)
    n = sum(len(c) for c in parts[0])
    labels: list[dict[int, str]] = []
    table = SankeyTable()
    for level, part in enumerate(parts):
        ranked = _ranked(part)
        lab = {}
        mass: dict[str, int] = {}
        for rank, (c, cid) in enumerate(zip(ranked, ids[level])):
            name = f"C{cid}" if rank < top_k else OTHER
            for v in c:
                lab[v] = name
            mass[name] = mass.get(name, 0) + len(c)
        labels.append(lab)
        for name in sorted(mass, key=lambda s: (s == OTHER, -mass[s], s)):
            table.nodes.append({
                "level": level, "community": name, "size": mass[name],
                "percent": 100.0 * mass[name] / n,
                "threshold": None if thresholds is None else float(thresholds[level]),
            })
    for level in range(len(parts) - 1):
        agg: dict[tuple[str, str], int] = {}
        for v, src in labels[level].items():
            key = (src, labels[level + 1][v])
            agg[key] = agg.get(key, 0) + 1
        for (src, dst), f in sorted(agg.items()):
            table.flows.append({"level": level, "source": src, "target_level": level + 1,
                                "target": dst, "flow": f})
    return table


# --------------------------------------------------------------------------
# full-graph signatures

def spectral_summary(G: nx.Graph) -> dict:
    g = giant(path_graph(G))
    if g.number_of_nodes() < 2:
        raise Degenerate("giant component has fewer than 2 nodes")
    nodes = sorted(g.nodes)
    L = nx.normalized_laplacian_matrix(g, nodelist=nodes, weight="weight").toarray()
    lam = np.clip(np.linalg.eigvalsh((L + L.T) / 2), 0.0, None)
    pos = lam[lam > 1e-12]
    p = pos / pos.sum()
    h = float(max(0.0, -(p * np.log(p)).sum()))
    return {"eigenvalues": lam.tolist(), "von_neumann_entropy": h, "nodes": len(nodes)}


def signal_tv(G: nx.Graph, signal: str | Sequence[float] = "time") -> float:
    """Sum over edges of w (x_i - x_j)^2."""
    if isinstance(signal, str):
        if signal == "time":
            x = {v: float(G.nodes[v].get("t", v)) for v in G.nodes}
        elif signal == "degree":
            x = {v: float(d) for v, d in G.degree()}
        else:
            raise ValueError(f"unknown signal {signal!r}")
    else:
        x = {v: float(signal[v]) for v in G.nodes}
    return float(sum(w * (x[u] - x[v]) ** 2 for u, v, w in G.edges(data="weight", default=1.0)))


def _zscore(a: np.ndarray) -> np.ndarray:
    sd = a.std(axis=0)
    return np.divide(a - a.mean(axis=0), sd, out=np.zeros_like(a), where=sd > 0)


def cluster_roles(features: np.ndarray, k: int = 3, seed: int = 0) -> np.ndarray:
    """K-means on z-scored features; labels renumbered by descending first feature."""
    X = _zscore(np.asarray(features, float))
    k = min(k, len(np.unique(X, axis=0)))
    if k < 2:
        return np.zeros(len(X), int)
    km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(X)
    order = np.argsort(-km.cluster_centers_[:, 0], kind="stable")
    remap = np.empty(k, int)
    remap[order] = np.arange(k)
    return remap[km.labels_]


def bridge_index(G: nx.Graph, parts: Sequence[Sequence[int]]) -> dict[int, float]:
    label = {v: i for i, c in enumerate(parts) for v in c}
    out = {}
    for v in sorted(G.nodes):
        total = cross = 0.0
        for u, w in ((u, d.get("weight", 1.0)) for u, d in G[v].items()):
            total += w
            if label[u] != label[v]:
                cross += w
        out[v] = cross / total if total > 0 else 0.0
    return out


def roles_and_bridges(G: nx.Graph, k_roles: int = 3, seed: int = 0,
                      parts: Sequence[Sequence[int]] | None = None) -> dict:
    if k_roles not in (2, 3):
        raise ValueError("k_roles must be 2 or 3")
    H = path_graph(G)
    parts = communities(H) if parts is None else parts
    nodes = sorted(G.nodes)
    bet = nx.betweenness_centrality(H, weight="length")
    clus = nx.clustering(G)
    feats = np.array([[G.degree(v), G.degree(v, weight="weight"), clus[v], bet[v]]
                      for v in nodes], float)
    roles = cluster_roles(feats, k_roles, seed)
    b = bridge_index(G, parts)
    return {"roles": {v: int(r) for v, r in zip(nodes, roles)}, "bridge": b,
            "bridge_series": [b[v] for v in nodes], "features": feats.tolist()}


def _adj(G: nx.Graph) -> tuple[np.ndarray, list]:
    nodes = sorted(G.nodes)
    return nx.to_numpy_array(G, nodelist=nodes, weight=None), nodes


def triangle_count(G: nx.Graph) -> int:
    A, _ = _adj(G)
    return int(round(np.trace(A @ A @ A) / 6))


def four_cycle_approx(G: nx.Graph) -> int:
    A, _ = _adj(G)
    cn = A @ A
    iu = np.triu_indices(len(A), 1)
    c = cn[iu]
    return int(np.sum(c * (c - 1) / 2))


def double_edge_swap(G: nx.Graph, attempts: int, rng: np.random.Generator) -> nx.Graph:
    """Degree-preserving rewiring of the unweighted skeleton."""
    edges = [tuple(sorted(e)) for e in G.edges()]
    present = set(edges)
    m = len(edges)
    for _ in range(attempts if m >= 2 else 0):
        i, j = rng.choice(m, 2, replace=False)
        a, b = edges[i]
        c, d = edges[j]
        if rng.random() < 0.5:
            c, d = d, c
        e1, e2 = tuple(sorted((a, d))), tuple(sorted((c, b)))
        if a == d or c == b or e1 == e2 or e1 in present or e2 in present:
            continue
        present -= {edges[i], edges[j]}
        present |= {e1, e2}
        edges[i], edges[j] = e1, e2
    H = nx.Graph()
    H.add_nodes_from(G.nodes)
    H.add_edges_from(edges)
    return H


def motif_zscores(G: nx.Graph, n_null: int = 20, swaps_per_edge: int = 10,
                  seed: int = 0) -> dict:
    if G.number_of_edges() < 2:
        raise Degenerate("need at least two edges")
    tri, quad = triangle_count(G), four_cycle_approx(G)
    deg = sorted(d for _, d in G.degree())
    ss = np.random.SeedSequence(seed)
    tn, qn = [], []
    for child in ss.spawn(n_null):
        R = double_edge_swap(G, swaps_per_edge * G.number_of_edges(),
                             np.random.default_rng(child))
        if sorted(d for _, d in R.degree()) != deg:
            raise AssertionError("null sample changed the degree sequence")
        tn.append(triangle_count(R))
        qn.append(four_cycle_approx(R))
    flags = []

    def z(obs, null, name):
        sd = float(np.std(null))
        if sd == 0:
            flags.append(f"{name}_null_constant")
            return None
        return float((obs - np.mean(null)) / sd)
    return {"triangles": tri, "z_triangle": z(tri, tn, "triangle"),
            "four_cycles": quad, "z_four_cycle": z(quad, qn, "four_cycle"),
            "null_triangle_mean": float(np.mean(tn)), "null_four_cycle_mean": float(np.mean(qn)),
            "flags": flags}


def walk_eigenvalues(G: nx.Graph) -> np.ndarray:
    """Eigenvalues of P = D^-1 A on the giant, via the symmetric D^-1/2 A D^-1/2."""
    g = giant(path_graph(G))
    nodes = sorted(g.nodes)
    A = nx.to_numpy_array(g, nodelist=nodes, weight="weight")
    d = A.sum(axis=1)
    if len(nodes) < 2 or np.any(d <= 0):
        raise Degenerate("giant component has no edges")
    s = 1.0 / np.sqrt(d)
    lam = np.linalg.eigvalsh(s[:, None] * A * s[None, :])
    return np.clip(lam, -1.0, 1.0)


def diffusion_summary(G: nx.Graph, t_max: int = 32) -> dict:
    lam = walk_eigenvalues(G)
    ret = [float(np.mean(lam ** t)) for t in range(1, t_max + 1)]
    mods = np.sort(np.abs(lam))[::-1]
    lam2 = float(mods[1])
    return {"return_probability": ret, "lambda2_modulus": lam2, "spectral_gap": 1.0 - lam2}


def multiscale_report(G: nx.Graph, levels: int = 8, top_k: int = 6, k_roles: int = 3,
                      n_null: int = 20, seed: int = 0, per_level_signatures: bool = False,
                      t_max: int = 32) -> dict:
    filt = build_filtration(G, levels)
    parts = level_partitions(filt)
    report = {
        "levels": level_reports(filt, n_null, seed),
        "persistence": persistence_curve(parts),
        "partitions": parts,
        "sankey": sankey_flows(parts, top_k, filt.thresholds).to_dict()
        if len(parts) > 1 else None,
        "signatures": _signatures(G, k_roles, n_null, seed, t_max),
    }
    if per_level_signatures:
        report["level_signatures"] = []
        for i in range(len(filt)):
            try:
                report["level_signatures"].append(
                    _signatures(filt.graph(i), k_roles, n_null, seed + i, t_max))
            except Degenerate as exc:
                report["level_signatures"].append({"error": str(exc)})
    return report


def _signatures(G: nx.Graph, k_roles: int, n_null: int, seed: int, t_max: int) -> dict:
    return {
        "spectral": spectral_summary(G),
        "tv_time": signal_tv(G, "time"),
        "tv_degree": signal_tv(G, "degree"),
        "roles": roles_and_bridges(G, k_roles, seed),
        "motifs": motif_zscores(G, n_null, seed=seed),
        "diffusion": diffusion_summary(G, t_max),
    }

