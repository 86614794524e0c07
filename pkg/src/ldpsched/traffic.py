"""URLLC traffic tuples, reliability-to-demand conversion, and random generators.

A link's traffic is periodic: packet ``j`` (1-based) arrives at
``A1 + (j-1)*T`` and must be delivered before ``A1 + (j-1)*T + D``.
Reliability is handled by reserving ``X`` transmission opportunities per
packet, the least number for which ``1 - (1-p)**X >= P``.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np

from .conflict_graph import ConflictGraph
from .errors import GenerationError, InputError

__all__ = [
    "required_transmissions",
    "reliability_for",
    "LinkTraffic",
    "arrival_and_deadline",
    "DeploymentParams",
    "Topology",
    "generate_topology",
    "generate_traffic",
    "traffic_map",
    "load_traffic",
    "save_traffic",
    "load_topology",
    "save_topology",
]


def _exact(value, name):
    if isinstance(value, bool):
        raise InputError(f"{name} must be a probability, got {value!r}")
    if isinstance(value, (Fraction, int)):
        q = Fraction(value)
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise InputError(f"{name} must be finite, got {value!r}")
        # repr() gives the shortest decimal that round-trips, which is what
        # the caller typed (0.9, 0.999, ...), not the binary approximation.
        q = Fraction(repr(value))
    else:
        try:
            q = Fraction(value)
        except (TypeError, ValueError):
            raise InputError(f"{name} must be a probability, got {value!r}") from None
    if not 0 < q < 1:
        raise InputError(f"{name} must lie strictly between 0 and 1, got {value!r}")
    return q


def required_transmissions(p, P):
    """Smallest ``X`` with ``1 - (1-p)**X >= P``.

    ``p`` is the per-attempt success probability and ``P`` the required
    delivery probability.  The floating-point logarithm only seeds the
    search; the final answer is settled with exact rational arithmetic so
    cases like ``p=0.9, P=0.999`` (exactly 3) do not round up to 4.
    """
    qp = _exact(p, "p")
    qP = _exact(P, "P")
    fail = 1 - qp
    target = 1 - qP  # need fail**X <= target
    try:
        x = math.ceil(math.log(float(target)) / math.log(float(fail)))
    except (ValueError, ZeroDivisionError, OverflowError):
        x = 1
    x = max(x, 1)
    while fail ** x > target:
        x += 1
    while x > 1 and fail ** (x - 1) <= target:
        x -= 1
    return x


def reliability_for(p, X):
    """A float ``P`` such that ``required_transmissions(p, P) == X``."""
    qp = _exact(p, "p")
    P = float(1 - (1 - qp) ** X)
    # the decimal reading of the rounded float may exceed the exact target;
    # step down until it no longer asks for an extra transmission
    for _ in range(64):
        if P >= 1.0:
            break
        if required_transmissions(p, P) == X:
            return P
        P = math.nextafter(P, 0.0)
    raise InputError(f"cannot represent a reliability target for p={p}, X={X} as a float < 1")


@dataclass(frozen=True)
class LinkTraffic:
    """Periodic traffic of one link.

    ``X`` is the per-packet work demand (transmission opportunities).  When
    built from reliabilities use :meth:`from_requirements`, which derives X.
    """

    link: int
    T: int
    D: int
    X: int
    P: float = None
    p: float = None
    A1: int = 0

    def __post_init__(self):
        for name in ("link", "T", "D", "X", "A1"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise InputError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.link <= 0:
            raise InputError(f"link id must be positive, got {self.link}")
        if not 0 < self.D <= self.T:
            raise InputError(f"link {self.link}: need 0 < D <= T, got D={self.D}, T={self.T}")
        if self.X < 1:
            raise InputError(f"link {self.link}: work demand must be >= 1, got {self.X}")
        if self.A1 < 0:
            raise InputError(f"link {self.link}: first arrival must be >= 0")
        if (self.P is None) != (self.p is None):
            raise InputError(f"link {self.link}: give both P and p or neither")
        if self.p is not None:
            derived = required_transmissions(self.p, self.P)
            if derived != self.X:
                raise InputError(
                    f"link {self.link}: X={self.X} inconsistent with p={self.p}, P={self.P} (needs {derived})"
                )

    @classmethod
    def from_requirements(cls, link, T, D, P, p, A1=0):
        return cls(link=link, T=T, D=D, X=required_transmissions(p, P), P=P, p=p, A1=A1)

    @property
    def density(self):
        return Fraction(self.X, self.D)

    @property
    def utilization(self):
        return Fraction(self.X, self.T)

    def arrival(self, j):
        if j < 1:
            raise InputError(f"packet index must be >= 1, got {j}")
        return self.A1 + (j - 1) * self.T

    def deadline(self, j):
        return self.arrival(j) + self.D

    def with_demand(self, X):
        """Copy with a new work demand; P is re-derived to stay consistent."""
        if self.p is None:
            return replace(self, X=X)
        return replace(self, X=X, P=reliability_for(self.p, X))

    def to_dict(self):
        d = {"link": self.link, "T": self.T, "D": self.D, "X": self.X, "A1": self.A1}
        if self.p is not None:
            d["P"] = self.P
            d["p"] = self.p
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            link, T, D = d["link"], d["T"], d["D"]
        except (KeyError, TypeError) as exc:
            raise InputError(f"traffic entry missing field {exc}") from None
        A1 = d.get("A1", 0)
        P, p = d.get("P"), d.get("p")
        if "X" in d and d["X"] is not None:
            return cls(link=link, T=T, D=D, X=d["X"], P=P, p=p, A1=A1)
        if P is None or p is None:
            raise InputError(f"link {link}: X absent, so both P and p are required")
        return cls.from_requirements(link, T, D, P, p, A1)


def arrival_and_deadline(t, j):
    """``(A_{i,j}, D_{i,j})`` for the ``j``-th packet of traffic ``t``."""
    return t.arrival(j), t.deadline(j)


def traffic_map(traffic):
    """Normalize a list or mapping of :class:`LinkTraffic` to ``{link: traffic}``."""
    if isinstance(traffic, dict):
        return traffic
    out = {}
    for tr in traffic:
        if tr.link in out:
            raise InputError(f"duplicate traffic entry for link {tr.link}")
        out[tr.link] = tr
    return out


def save_traffic(traffic, path):
    items = sorted(traffic_map(traffic).values(), key=lambda tr: tr.link)
    with open(path, "w") as fh:
        json.dump([tr.to_dict() for tr in items], fh, indent=1)


def load_traffic(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise InputError("traffic file must hold a JSON array")
    return [LinkTraffic.from_dict(d) for d in data]


# ---------------------------------------------------------------------------
# Topology generation


@dataclass(frozen=True)
class DeploymentParams:
    """Geometry of a random multi-cell deployment.

    One base station is dropped uniformly inside each grid cell and the
    remaining ``n_nodes - rows*cols`` UEs uniformly over the region.  Links
    are then drawn from the candidate uplinks, downlinks and D2D pairs whose
    lengths fall in the configured ranges, mixed by ``class_mix`` weights
    (uplink, downlink, d2d).
    """

    width: float = 1200.0
    height: float = 1200.0
    rows: int = 3
    cols: int = 3
    n_nodes: int = 91
    n_links: int = None
    uplink_length: tuple = (50.0, 100.0)
    downlink_length: tuple = (100.0, 200.0)
    d2d_length: tuple = (50.0, 100.0)
    exclusion_ratio: tuple = (1.5, 2.0)
    class_mix: tuple = (1.0, 1.0, 1.0)
    channels: int = 4
    seed: int = 0
    max_retries: int = 200

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InputError("region dimensions must be positive")
        if self.rows < 1 or self.cols < 1:
            raise InputError("grid must have at least one cell")
        if self.n_nodes < self.rows * self.cols:
            raise InputError("need at least one node per cell for the base stations")
        lo, hi = self.exclusion_ratio
        if not 1 <= lo <= hi:
            raise InputError(f"exclusion ratio range must satisfy 1 <= lo <= hi, got {self.exclusion_ratio}")
        for rng in (self.uplink_length, self.downlink_length, self.d2d_length):
            if not 0 <= rng[0] <= rng[1]:
                raise InputError(f"bad link length range {rng}")
        if len(self.class_mix) != 3 or min(self.class_mix) < 0 or sum(self.class_mix) <= 0:
            raise InputError("class_mix needs three non-negative weights with a positive sum")
        if self.channels < 1:
            raise InputError("channel count must be >= 1")
        if self.n_links is not None and self.n_links < 0:
            raise InputError("n_links must be non-negative")

    @property
    def n_base_stations(self):
        return self.rows * self.cols

    @property
    def target_links(self):
        if self.n_links is not None:
            return self.n_links
        return self.n_nodes - self.n_base_stations

    @classmethod
    def network_1(cls, **overrides):
        """91 nodes, 1200 x 1200 m, 3 x 3 cells, 83 links."""
        base = dict(width=1200.0, height=1200.0, rows=3, cols=3, n_nodes=91, n_links=83)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def network_2(cls, **overrides):
        """151 nodes, 1200 x 1500 m, 3 columns x 4 rows of 400 x 375 m cells, 163 links."""
        base = dict(width=1200.0, height=1500.0, rows=4, cols=3, n_nodes=151, n_links=163)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("uplink_length", "downlink_length", "d2d_length", "exclusion_ratio", "class_mix"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(str(exc)) from None


@dataclass
class Topology:
    """Node positions, links, and the derived conflict graph."""

    positions: np.ndarray  # (n_nodes, 2)
    node_kind: list  # "bs" | "ue"
    links: list  # dicts: id, tx, rx, kind, length, exclusion_ratio
    graph: ConflictGraph
    params: DeploymentParams = field(default=None)

    def to_dict(self):
        return {
            "nodes": [
                {"id": k, "x": float(x), "y": float(y), "kind": kind}
                for k, ((x, y), kind) in enumerate(zip(self.positions, self.node_kind))
            ],
            "links": self.links,
            "conflict_graph": self.graph.to_dict(),
            "params": self.params.to_dict() if self.params is not None else None,
        }

    @classmethod
    def from_dict(cls, d):
        nodes = d.get("nodes", [])
        pos = np.array([[n["x"], n["y"]] for n in nodes], dtype=float).reshape(-1, 2)
        params = DeploymentParams.from_dict(d["params"]) if d.get("params") else None
        return cls(pos, [n["kind"] for n in nodes], list(d.get("links", [])),
                   ConflictGraph.from_dict(d["conflict_graph"]), params)


def save_topology(topo, path):
    with open(path, "w") as fh:
        json.dump(topo.to_dict(), fh, indent=1)


def load_topology(path):
    with open(path) as fh:
        return Topology.from_dict(json.load(fh))


def _candidate_links(bs, ue, params):
    """Candidate (tx, rx) node-index pairs per link class."""
    n_bs = len(bs)
    up, down, d2d = [], [], []
    if n_bs and len(ue):
        dist = np.linalg.norm(ue[:, None, :] - bs[None, :, :], axis=2)
        for u in range(len(ue)):
            order = np.argsort(dist[u], kind="stable")
            for lo_hi, bucket, uplink in ((params.uplink_length, up, True),
                                          (params.downlink_length, down, False)):
                lo, hi = lo_hi
                for b in order:
                    if lo <= dist[u, b] <= hi:
                        # nearest base station whose distance is admissible
                        ue_node, bs_node = n_bs + u, int(b)
                        bucket.append((ue_node, bs_node) if uplink else (bs_node, ue_node))
                        break
    if len(ue) > 1:
        lo, hi = params.d2d_length
        dd = np.linalg.norm(ue[:, None, :] - ue[None, :, :], axis=2)
        iu, ju = np.nonzero(np.triu((dd >= lo) & (dd <= hi), k=1))
        d2d = [(n_bs + int(a), n_bs + int(b)) for a, b in zip(iu, ju)]
    return up, down, d2d


def _conflicts(positions, links):
    tx = positions[[l["tx"] for l in links]]
    rx = positions[[l["rx"] for l in links]]
    radius = np.array([l["exclusion_ratio"] * l["length"] for l in links])
    # d[i, j] = distance from transmitter of j to receiver of i
    d = np.linalg.norm(rx[:, None, :] - tx[None, :, :], axis=2)
    inside = d < radius[:, None]
    hit = inside | inside.T
    np.fill_diagonal(hit, False)
    ids = [l["id"] for l in links]
    a, b = np.nonzero(np.triu(hit, k=1))
    return [(ids[i], ids[j]) for i, j in zip(a, b)]


def generate_topology(params, rng=None):
    """Random multi-cell deployment and its conflict graph.

    Retries fresh node placements until enough candidate links exist, up to
    ``params.max_retries`` times.  Deterministic for a given ``params.seed``
    when ``rng`` is omitted.
    """
    if rng is None:
        rng = np.random.default_rng(params.seed)
    target = params.target_links
    cell_w = params.width / params.cols
    cell_h = params.height / params.rows
    n_ue = params.n_nodes - params.n_base_stations
    mix = np.asarray(params.class_mix, dtype=float)
    best = -1
    for _ in range(params.max_retries):
        bs = np.array([
            [(c + rng.random()) * cell_w, (r + rng.random()) * cell_h]
            for r in range(params.rows) for c in range(params.cols)
        ])
        ue = rng.random((n_ue, 2)) * [params.width, params.height]
        pools = [list(p) for p in _candidate_links(bs, ue, params)]
        total = sum(len(p) for p in pools)
        best = max(best, total)
        if total < target:
            continue
        chosen = []
        kinds = ("uplink", "downlink", "d2d")
        while len(chosen) < target:
            w = np.array([mix[k] if pools[k] else 0.0 for k in range(3)])
            if w.sum() == 0:
                # only zero-weight classes still have candidates
                w = np.array([1.0 if pools[k] else 0.0 for k in range(3)])
            k = int(rng.choice(3, p=w / w.sum()))
            pair = pools[k].pop(int(rng.integers(len(pools[k]))))
            chosen.append((kinds[k], pair))
        positions = np.vstack([bs, ue]) if n_ue else bs
        lo, hi = params.exclusion_ratio
        links = []
        for link_id, (kind, (tx, rx)) in enumerate(chosen, start=1):
            length = float(np.linalg.norm(positions[tx] - positions[rx]))
            links.append({
                "id": link_id, "tx": int(tx), "rx": int(rx), "kind": kind,
                "length": length, "exclusion_ratio": float(rng.uniform(lo, hi)),
            })
        edges = _conflicts(positions, links) if links else []
        graph = ConflictGraph([l["id"] for l in links], edges)
        kinds_of_nodes = ["bs"] * params.n_base_stations + ["ue"] * n_ue
        return Topology(positions, kinds_of_nodes, links, graph, params)
    raise GenerationError(
        f"could not place {target} links in {params.max_retries} attempts "
        f"(largest candidate pool: {best}); widen the length ranges or add nodes"
    )


# ---------------------------------------------------------------------------
# Traffic generation


def _default_test(g, N):
    from .schedulability import LocalAnalyzer

    analyzer = LocalAnalyzer(g)

    def test(graph, i, traffic, channels):
        return analyzer.test(i, traffic, channels).schedulable

    return test


def generate_traffic(g, N, rng=None, sched_test=None, *, deadline_range=(10, 40),
                     slack_fraction=Fraction(1, 6), demand_fraction=(Fraction(1, 6), Fraction(5, 6)),
                     link_reliability=0.5, first_arrival=0, seed=0):
    """Random traffic for every link of ``g``, thinned until it passes the test.

    Deadlines are drawn from ``deadline_range``; the period exceeds the
    deadline by at most ``slack_fraction * D``; the work demand lies in
    ``demand_fraction * D``.  Each link whose test fails has its demand
    lowered one unit at a time (never below 1); links sharing a neighborhood
    with a lowered link are re-tested until nothing changes.

    Returns ``(traffic, flagged)``: the list of :class:`LinkTraffic` sorted
    by link id, and the sorted ids still failing at demand 1.
    """
    if len(g) == 0:
        return [], []
    if N < 1:
        raise InputError("channel count must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    if sched_test is None:
        sched_test = _default_test(g, N)
    lo_d, hi_d = deadline_range
    if not 1 <= lo_d <= hi_d:
        raise InputError(f"bad deadline range {deadline_range}")
    f_lo, f_hi = (Fraction(f) for f in demand_fraction)
    slack = Fraction(slack_fraction)

    traffic = {}
    for link in g.node_ids:
        D = int(rng.integers(lo_d, hi_d + 1))
        T = D + int(rng.integers(0, math.floor(slack * D) + 1))
        x_lo = max(1, math.ceil(f_lo * D))
        x_hi = max(x_lo, math.floor(f_hi * D))
        X = int(rng.integers(x_lo, x_hi + 1))
        phase = first_arrival(link, rng) if callable(first_arrival) else int(first_arrival)
        traffic[link] = LinkTraffic(link=link, T=T, D=D, X=X, p=link_reliability,
                                    P=reliability_for(link_reliability, X), A1=phase)

    flagged = set()
    pending = set(g.node_ids)
    while pending:
        changed = set()
        for i in sorted(pending):
            while not sched_test(g, i, traffic, N):
                if traffic[i].X == 1:
                    flagged.add(i)
                    break
                traffic[i] = traffic[i].with_demand(traffic[i].X - 1)
                changed.add(i)
            else:
                flagged.discard(i)
        pending = set()
        for i in changed:
            pending |= g.closed_neighborhood(i)
    return [traffic[l] for l in sorted(traffic)], sorted(flagged)
