"""Self-similarity graphs over symbolic feature frames and their metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np
from scipy import stats
from scipy.signal import find_peaks
from scipy.special import gammaln

from .score_model import Piece, pitch_to_midi

JS_EPS = 1e-12


class DegenerateGraph(ValueError):
    pass


class DegenerateDegrees(ValueError):
    pass


# --------------------------------------------------------------------------
# features and similarity

@dataclass
class FeatureFrames:
    frame_len: float
    frames: np.ndarray          # (F, 13) normalized chroma ++ onset
    chroma: np.ndarray          # (F, 12) raw duration-weighted mass
    onsets: np.ndarray          # (F,) raw onset counts

    def __len__(self) -> int:
        return len(self.frames)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def frame_features(piece: Piece, frame_len: float = 1.0) -> FeatureFrames:
    if frame_len <= 0:
        raise ValueError("frame_len must be positive")
    beats = piece.metadata.beats_per_bar
    total = beats * len(piece.bars)
    n_frames = max(1, math.ceil(total / frame_len - 1e-9))
    chroma = np.zeros((n_frames, 12))
    onsets = np.zeros(n_frames)
    for b_idx, bar in enumerate(piece.bars):
        for line in bar.voices:
            t = b_idx * beats
            for note in line.notes:
                start, end = t, t + note.duration
                t = end
                if note.is_rest:
                    continue
                pc = pitch_to_midi(note.pitch) % 12
                f0 = int(math.floor(start / frame_len + 1e-9))
                if f0 < n_frames:
                    onsets[f0] += 1
                f = f0
                while f < n_frames and f * frame_len < end - 1e-12:
                    lo, hi = max(start, f * frame_len), min(end, (f + 1) * frame_len)
                    if hi > lo:
                        chroma[f, pc] += hi - lo
                    f += 1
    frames = np.hstack([_unit(chroma), _unit(onsets[:, None])])
    return FeatureFrames(frame_len, frames, chroma, onsets)


def build_ssm(frames: FeatureFrames | np.ndarray) -> np.ndarray:
    """Cosine similarity; zero frames are similar to nothing, themselves included."""
    x = frames.frames if isinstance(frames, FeatureFrames) else np.asarray(frames, float)
    if len(x) < 2:
        raise DegenerateGraph("need at least two frames")
    u = _unit(x)
    s = u @ u.T
    s = (s + s.T) / 2
    if s.min() < -1e-12:
        s = (s + 1.0) / 2.0
    return np.clip(s, 0.0, 1.0)


def knn_graph(S: np.ndarray, k: int = 6, source: str = "ssm") -> nx.Graph:
    """Union k-NN rule: keep (i, j) if either endpoint ranks the other in its top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(S)
    G = nx.Graph(k=k, source=source)
    G.add_nodes_from(range(n))
    for i in range(n):
        order = sorted((j for j in range(n) if j != i), key=lambda j: (-S[i, j], j))
        for j in order[:k]:
            G.add_edge(i, j, weight=float(S[i, j]))
    return G


def graph_from_piece(piece: Piece, frame_len: float = 1.0, k: int = 6) -> nx.Graph:
    return knn_graph(build_ssm(frame_features(piece, frame_len)), k)


# --------------------------------------------------------------------------
# single-scale metrics

def path_graph(G: nx.Graph) -> nx.Graph:
    """Copy carrying length = 1/w; zero-weight edges cannot be traversed and are dropped."""
    H = nx.Graph()
    H.add_nodes_from(G.nodes)
    for u, v, w in G.edges(data="weight", default=1.0):
        if w > 0:
            H.add_edge(u, v, weight=w, length=1.0 / w)
    return H


def giant(G: nx.Graph) -> nx.Graph:
    if G.number_of_nodes() == 0:
        return G.copy()
    nodes = max(nx.connected_components(G), key=lambda c: (len(c), -min(c)))
    return G.subgraph(nodes).copy()


def communities(G: nx.Graph) -> list[list[int]]:
    """Greedy (CNM) modularity communities, sorted by smallest member."""
    if G.number_of_edges() == 0:
        return [[n] for n in sorted(G.nodes)]
    parts = nx.community.greedy_modularity_communities(G, weight="weight")
    return sorted((sorted(c) for c in parts), key=lambda c: c[0])


def degree_entropy(G: nx.Graph) -> float:
    degrees = [d for _, d in G.degree()]
    if not degrees:
        return 0.0
    _, counts = np.unique(degrees, return_counts=True)
    if len(counts) < 2:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum() / math.log(len(counts)))


def small_world_terms(G: nx.Graph) -> tuple[float, float]:
    """Unweighted average clustering and ASPL of the giant component."""
    g = giant(G)
    C = nx.average_clustering(G)
    L = nx.average_shortest_path_length(g) if g.number_of_nodes() > 1 else float("nan")
    return C, L


def small_worldness(G: nx.Graph, n_null: int = 20, seed: int = 0) -> dict:
    n, m = G.number_of_nodes(), G.number_of_edges()
    C, L = small_world_terms(G)
    ss = np.random.SeedSequence(seed)
    cr, lr = [], []
    for child in ss.spawn(n_null):
        R = nx.gnm_random_graph(n, m, seed=int(child.generate_state(1)[0]))
        c, l_ = small_world_terms(R)
        cr.append(c)
        lr.append(l_)
    C_r = float(np.mean(cr))
    L_r = float(np.nanmean(lr)) if np.isfinite(lr).any() else float("nan")
    sigma = None
    if C_r > 0 and L > 0 and L_r > 0 and np.isfinite(L):
        sigma = float((C / C_r) / (L / L_r))
    return {"C": C, "L": L, "C_rand": C_r, "L_rand": L_r, "sigma": sigma}


@dataclass
class GraphMetricsReport:
    nodes: int
    edges: int
    density: float
    components: int
    giant_size: int
    clustering: float
    transitivity: float
    assortativity: float | None
    modularity: float
    communities: list[list[int]]
    mean_betweenness: float
    aspl: float | None
    small_world: dict | None
    degree_entropy: float
    flags: list[str] = field(default_factory=list)

    @property
    def sigma(self) -> float | None:
        return self.small_world["sigma"] if self.small_world else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma"] = self.sigma
        return d


def graph_metrics(G: nx.Graph, n_null: int = 20, seed: int = 0) -> GraphMetricsReport:
    n = G.number_of_nodes()
    if n == 0:
        raise DegenerateGraph("empty graph")
    flags = []
    H = path_graph(G)
    g = giant(H)
    parts = communities(H)
    try:
        with np.errstate(invalid="ignore", divide="ignore"):
            assort = nx.degree_assortativity_coefficient(G)
        assort = None if not np.isfinite(assort) else float(assort)
    except (ValueError, ZeroDivisionError):
        assort = None
    if assort is None:
        flags.append("assortativity_undefined")
    bet = nx.betweenness_centrality(H, weight="length")
    aspl = (nx.average_shortest_path_length(g, weight="length")
            if g.number_of_nodes() > 1 else None)
    sw = None
    if n < 3:
        flags.append("degenerate_small_graph")
    else:
        sw = small_worldness(G, n_null, seed)
        if sw["sigma"] is None:
            flags.append("small_world_undefined")
    return GraphMetricsReport(
        nodes=n, edges=G.number_of_edges(), density=nx.density(G) if n > 1 else 0.0,
        components=nx.number_connected_components(G), giant_size=giant(G).number_of_nodes(),
        clustering=nx.average_clustering(G), transitivity=nx.transitivity(G),
        assortativity=assort,
        modularity=(nx.community.modularity(H, [set(c) for c in parts], weight="weight")
                    if H.number_of_edges() else 0.0),
        communities=parts, mean_betweenness=float(np.mean(list(bet.values()))),
        aspl=aspl, small_world=sw, degree_entropy=degree_entropy(G), flags=flags,
    )


# --------------------------------------------------------------------------
# novelty

def js_divergence(p: np.ndarray, q: np.ndarray, eps: float = JS_EPS) -> float:
    """Jensen-Shannon divergence in bits, in [0, 1]."""
    p = np.asarray(p, float) + eps
    q = np.asarray(q, float) + eps
    p, q = p / p.sum(), q / q.sum()
    m = (p + q) / 2
    js = 0.5 * np.sum(p * np.log2(p / m)) + 0.5 * np.sum(q * np.log2(q / m))
    return float(min(1.0, max(0.0, js)))


def novelty_peaks(curve: np.ndarray, min_dist: int = 2) -> np.ndarray:
    curve = np.asarray(curve, float)
    if len(curve) < 3:
        return np.array([], int)
    thr = curve.mean() + curve.std()
    peaks, _ = find_peaks(curve, distance=max(1, min_dist))
    return peaks[curve[peaks] > thr + 1e-15]


def js_novelty(frames: FeatureFrames, window: int = 4,
               peak_min_dist: int = 2) -> tuple[np.ndarray, np.ndarray, float]:
    """JS divergence between consecutive non-overlapping chroma windows.

    Returns (curve, peak indices, peaks per frame).
    """
    n_win = len(frames.chroma) // window
    if n_win < 2:
        raise DegenerateGraph("need at least two full windows")
    wins = frames.chroma[: n_win * window].reshape(n_win, window, 12).sum(axis=1)
    curve = np.array([js_divergence(wins[i], wins[i + 1]) for i in range(n_win - 1)])
    peaks = novelty_peaks(curve, peak_min_dist)
    return curve, peaks, len(peaks) / len(frames.chroma)


# --------------------------------------------------------------------------
# degree distribution fits

def _ks_discrete(sample: np.ndarray, cdf) -> float:
    xs = np.arange(sample.min(), sample.max() + 1)
    emp = np.searchsorted(np.sort(sample), xs, side="right") / len(sample)
    emp_before = np.searchsorted(np.sort(sample), xs, side="left") / len(sample)
    model = cdf(xs)
    model_before = cdf(xs - 1)
    return float(max(np.max(np.abs(emp - model)), np.max(np.abs(emp_before - model_before))))


def powerlaw_alpha(tail: np.ndarray, k_min: int) -> float:
    return float(1.0 + len(tail) / np.sum(np.log(tail / (k_min - 0.5))))


def _powerlaw_ks(tail: np.ndarray, k_min: int, alpha: float) -> float:
    xs = np.unique(tail)
    srt = np.sort(tail)
    emp_ge = 1.0 - np.searchsorted(srt, xs, side="left") / len(tail)
    model_ge = ((xs - 0.5) / (k_min - 0.5)) ** (1.0 - alpha)
    return float(np.max(np.abs(emp_ge - model_ge)))


def fit_degree_sequence(degrees: Sequence[int], min_tail: int = 10) -> dict:
    k = np.asarray(degrees, dtype=float)
    if len(k) < 10:
        raise DegenerateDegrees("need at least 10 nodes")
    out: dict = {"n": int(len(k)), "flags": []}
    lam = float(k.mean())
    if lam > 0:
        ll = float(np.sum(k * np.log(lam) - lam - gammaln(k + 1)))
    else:
        ll = 0.0
    out["poisson"] = {"params": {"lambda": lam}, "loglik": ll, "aic": 2 * 1 - 2 * ll,
                      "ks": _ks_discrete(k, lambda x: stats.poisson.cdf(x, lam))}
    y = np.log(k + 1)
    mu, s = float(y.mean()), float(y.std()) if np.ptp(k) > 0 else 0.0
    if s > 0:
        ll = float(np.sum(-np.log(k + 1) - np.log(s * math.sqrt(2 * math.pi))
                          - (y - mu) ** 2 / (2 * s * s)))
        ks = float(stats.kstest(k + 1, "lognorm", args=(s, 0, math.exp(mu))).statistic)
        out["lognormal"] = {"params": {"mu": mu, "sigma": s}, "loglik": ll,
                            "aic": 2 * 2 - 2 * ll, "ks": ks}
    else:
        out["lognormal"] = {"params": {"mu": mu, "sigma": 0.0}, "loglik": None, "aic": None,
                            "ks": None}
        out["flags"].append("zero_variance")
    best = None
    if s > 0:
        for k_min in np.unique(k[k >= 1]).astype(int):
            tail = k[k >= k_min]
            if len(tail) < min_tail or np.all(tail == tail[0]):
                continue
            a = powerlaw_alpha(tail, k_min)
            ks = _powerlaw_ks(tail, k_min, a)
            if best is None or ks < best[2] - 1e-15:
                best = (k_min, a, ks, tail)
    if best is None:
        out["powerlaw"] = None
        out["flags"].append("powerlaw_skipped")
    else:
        k_min, a, ks, tail = best
        x0 = k_min - 0.5
        ll = float(np.sum(np.log((a - 1) / x0) - a * np.log(tail / x0)))
        out["powerlaw"] = {"params": {"alpha": a, "k_min": int(k_min), "n_tail": int(len(tail))},
                           "loglik": ll, "aic": 2 * 2 - 2 * ll, "ks": ks}
    return out


def degree_fit(G: nx.Graph) -> dict:
    return fit_degree_sequence([d for _, d in G.degree()])


# --------------------------------------------------------------------------
# long-range coherence and variety

def circular_lag(i: int, j: int, n: int) -> int:
    d = abs(i - j)
    return min(d, n - d)


def gini(x: Sequence[float]) -> float:
    x = np.asarray(x, float)
    if len(x) == 0 or np.all(x == 0):
        return 0.0
    diff = np.abs(x[:, None] - x[None, :]).sum()
    return float(diff / (2 * len(x) ** 2 * x.mean()))


def community_span(members: Sequence[int], n: int) -> float:
    pos = sorted(members)
    gaps = [b - a for a, b in zip(pos, pos[1:])] + [pos[0] + n - pos[-1]]
    return 1.0 - max(gaps) / n


def longrange_metrics(G: nx.Graph, parts: Sequence[Sequence[int]] | None = None) -> dict:
    """Six long-range coherence/variety measures of a time-ordered graph (nodes 0..N-1)."""
    n = G.number_of_nodes()
    nodes = sorted(G.nodes)
    if nodes != list(range(n)):
        raise ValueError("nodes must be labelled 0..N-1 in time order")
    H = path_graph(G)
    parts = communities(H) if parts is None else [list(c) for c in parts]
    flags: list[str] = []
    tau = n / 4
    total_w = sum(w for _, _, w in G.edges(data="weight", default=1.0))
    lr_w = sum(w for u, v, w in G.edges(data="weight", default=1.0)
               if circular_lag(u, v, n) > tau)
    lr_ef = lr_w / total_w if total_w > 0 else 0.0

    far = [(i, j) for i in range(n) for j in range(i + 1, n) if circular_lag(i, j, n) > tau]
    if far:
        dist = dict(nx.all_pairs_dijkstra_path_length(H, weight="length"))
        lr_eff = sum(1.0 / dist[i][j] if j in dist.get(i, {}) else 0.0 for i, j in far) / len(far)
    else:
        lr_eff = 0.0
        flags.append("no_distant_pairs")

    cpt = sum(len(c) * community_span(c, n) for c in parts) / n if n else 0.0

    big_l = n // 2
    if big_l <= 1 or total_w <= 0:
        ele = 0.0
        flags.append("ele_degenerate")
    else:
        mass = np.zeros(big_l + 1)
        for u, v, w in G.edges(data="weight", default=1.0):
            mass[circular_lag(u, v, n)] += w
        p = mass[1:] / mass.sum()
        p = p[p > 0]
        ele = float(max(0.0, -(p * np.log(p)).sum() / math.log(big_l)))

    bet = nx.betweenness_centrality(H, weight="length")
    evenness = 1.0 - gini([bet[i] for i in range(n)])

    label = {v: ci for ci, c in enumerate(parts) for v in c}
    pcs = []
    for i in range(n):
        nbrs = list(G.neighbors(i))
        if not nbrs:
            pcs.append(0.0)
            continue
        counts = np.bincount([label[j] for j in nbrs], minlength=len(parts))
        pcs.append(1.0 - float(np.sum((counts / len(nbrs)) ** 2)))
    pc = float(np.mean(pcs)) if pcs else 0.0

    return {"LR_EF": float(lr_ef), "LR_Eff": float(lr_eff), "CPT": float(cpt), "ELE": ele,
            "evenness": float(evenness), "PC": pc, "flags": flags}
