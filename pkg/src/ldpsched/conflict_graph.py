"""Conflict graphs over wireless links.

Nodes of a :class:`ConflictGraph` are link ids (positive integers); an edge
joins two links that may not share a channel in the same slot.  Internally
each node's neighborhood is also kept as a Python-int bitmask so the
enumeration routines below stay fast on the ~30-80 node induced subgraphs
the schedulability test works with.
"""

import json
from dataclasses import dataclass
from itertools import combinations

from .errors import InputError

__all__ = [
    "ConflictGraph",
    "CliqueFamily",
    "neighbors",
    "two_hop_set",
    "cliques_containing",
    "maximal_independent_sets",
    "eight_link_example",
    "load_graph",
    "save_graph",
]


def _bits(mask):
    """Yield the positions of the set bits of ``mask`` in increasing order."""
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


class ConflictGraph:
    """Immutable undirected simple graph whose nodes are link ids."""

    __slots__ = ("_ids", "_index", "_adj", "_masks", "_hash")

    def __init__(self, links, conflicts=()):
        ids = []
        for link in links:
            if isinstance(link, bool) or not isinstance(link, int) or link <= 0:
                raise InputError(f"link ids must be positive integers, got {link!r}")
            ids.append(link)
        if len(set(ids)) != len(ids):
            raise InputError("duplicate link ids")
        ids.sort()
        self._ids = tuple(ids)
        self._index = {link: k for k, link in enumerate(self._ids)}
        adj = {link: set() for link in self._ids}
        seen = set()
        for pair in conflicts:
            a, b = pair
            if a == b:
                raise InputError(f"self-loop on link {a}")
            if a not in adj or b not in adj:
                raise InputError(f"conflict ({a}, {b}) references an unknown link")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise InputError(f"duplicate conflict {key}")
            seen.add(key)
            adj[a].add(b)
            adj[b].add(a)
        self._adj = {link: frozenset(nb) for link, nb in adj.items()}
        masks = []
        for link in self._ids:
            m = 0
            for nb in self._adj[link]:
                m |= 1 << self._index[nb]
            masks.append(m)
        self._masks = tuple(masks)
        self._hash = None

    # -- basic accessors -------------------------------------------------

    @property
    def node_ids(self):
        return self._ids

    def __len__(self):
        return len(self._ids)

    def __contains__(self, link):
        return link in self._index

    def __iter__(self):
        return iter(self._ids)

    def __eq__(self, other):
        if not isinstance(other, ConflictGraph):
            return NotImplemented
        return self._ids == other._ids and self._adj == other._adj

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self._ids, frozenset(self.edges())))
        return self._hash

    def __repr__(self):
        return f"ConflictGraph(links={len(self._ids)}, conflicts={self.n_edges})"

    def edges(self):
        """Sorted list of ``(a, b)`` pairs with ``a < b``."""
        return sorted((a, b) for a in self._ids for b in self._adj[a] if a < b)

    @property
    def n_edges(self):
        return sum(len(nb) for nb in self._adj.values()) // 2

    def degree(self, link):
        return len(self.neighbors(link))

    def adjacent(self, a, b):
        self._require(a)
        return b in self._adj[a]

    def _require(self, link):
        if link not in self._index:
            raise InputError(f"unknown link id {link!r}")

    def _require_all(self, links):
        for link in links:
            self._require(link)

    # -- bitmask helpers (used by the schedulability module) --------------

    def mask_of(self, links):
        m = 0
        index = self._index
        for link in links:
            m |= 1 << index[link]
        return m

    def links_of(self, mask):
        ids = self._ids
        return frozenset(ids[k] for k in _bits(mask))

    def neighbor_mask(self, link):
        return self._masks[self._index[link]]

    @property
    def masks(self):
        return self._masks

    # -- neighborhoods -----------------------------------------------------

    def neighbors(self, link):
        self._require(link)
        return self._adj[link]

    def closed_neighborhood(self, link):
        return self.neighbors(link) | {link}

    def two_hop_set(self, link):
        near = self.closed_neighborhood(link)
        far = set()
        for nb in self._adj[link]:
            far |= self._adj[nb]
        return frozenset(far - near)

    def is_independent(self, links):
        links = list(links)
        self._require_all(links)
        return not any(b in self._adj[a] for a, b in combinations(links, 2))

    def is_clique(self, links):
        links = list(links)
        self._require_all(links)
        return all(b in self._adj[a] for a, b in combinations(links, 2))

    def induced(self, links):
        """Subgraph induced by ``links``."""
        keep = set(links)
        self._require_all(keep)
        return ConflictGraph(keep, [(a, b) for a, b in self.edges() if a in keep and b in keep])

    # -- enumeration ---------------------------------------------------------

    def _maximal_independent_masks(self, sub):
        """All maximal independent sets of G[sub] as bitmasks.

        Bron-Kerbosch with Tomita pivoting, run on the complement of the
        induced subgraph (independent sets of G are cliques of its complement).
        """
        masks = self._masks
        comp = {v: sub & ~masks[v] & ~(1 << v) for v in _bits(sub)}
        out = []

        def expand(r, p, x):
            if not p and not x:
                out.append(r)
                return
            best, best_n = -1, -1
            for u in _bits(p | x):
                n = bin(p & comp[u]).count("1")
                if n > best_n:
                    best, best_n = u, n
            for v in _bits(p & ~comp[best]):
                bit = 1 << v
                expand(r | bit, p & comp[v], x & comp[v])
                p &= ~bit
                x |= bit

        if sub:
            expand(0, sub, 0)
        else:
            out.append(0)
        return out

    def _maximal_clique_masks(self, sub):
        """All maximal cliques of G[sub] as bitmasks (pivoting Bron-Kerbosch)."""
        masks = self._masks
        out = []

        def expand(r, p, x):
            if not p and not x:
                out.append(r)
                return
            best, best_n = -1, -1
            for u in _bits(p | x):
                n = bin(p & masks[u]).count("1")
                if n > best_n:
                    best, best_n = u, n
            for v in _bits(p & ~masks[best]):
                bit = 1 << v
                expand(r | bit, p & masks[v], x & masks[v])
                p &= ~bit
                x |= bit

        if sub:
            expand(0, sub, 0)
        else:
            out.append(0)
        return out

    def maximal_independent_sets(self, subset=None):
        """Maximal independent sets of the subgraph induced by ``subset``.

        Defaults to the whole graph.  The empty subset has exactly one maximal
        independent set, the empty set.  Results are sorted by member ids.
        """
        if subset is None:
            subset = self._ids
        subset = list(subset)
        self._require_all(subset)
        found = [self.links_of(m) for m in self._maximal_independent_masks(self.mask_of(subset))]
        return sorted(found, key=lambda s: sorted(s))

    def cliques_containing(self, link):
        """Maximal cliques of G[M_i + {i}] that contain ``link``."""
        nb = self.neighbors(link)
        if not nb:
            return CliqueFamily(link, (frozenset([link]),))
        found = [self.links_of(m) | {link} for m in self._maximal_clique_masks(self.mask_of(nb))]
        found.sort(key=lambda s: sorted(s))
        return CliqueFamily(link, tuple(found))

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        return {"links": list(self._ids), "conflicts": [list(e) for e in self.edges()]}

    @classmethod
    def from_dict(cls, data):
        try:
            links = data["links"]
            conflicts = data["conflicts"]
        except (KeyError, TypeError) as exc:
            raise InputError(f"graph object needs 'links' and 'conflicts': {exc}") from None
        pairs = []
        for pair in conflicts:
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise InputError(f"malformed conflict entry {pair!r}")
            a, b = pair
            if a >= b:
                raise InputError(f"conflict {pair!r} must be written with a < b")
            pairs.append((a, b))
        return cls(links, pairs)

    @classmethod
    def from_edges(cls, edges, links=None):
        edges = [tuple(e) for e in edges]
        if links is None:
            links = sorted({v for e in edges for v in e})
        return cls(links, edges)

    @classmethod
    def complete(cls, n):
        return cls(range(1, n + 1), combinations(range(1, n + 1), 2))


@dataclass(frozen=True)
class CliqueFamily:
    """The maximal cliques around ``owner`` in its closed neighborhood."""

    owner: int
    cliques: tuple

    def __iter__(self):
        return iter(self.cliques)

    def __len__(self):
        return len(self.cliques)

    def __getitem__(self, k):
        return self.cliques[k]

    def largest(self):
        return max(self.cliques, key=len)


# Module-level functional aliases.

def neighbors(g, i):
    return g.neighbors(i)


def two_hop_set(g, i):
    return g.two_hop_set(i)


def cliques_containing(g, i):
    return g.cliques_containing(i)


def maximal_independent_sets(g, subset=None):
    return g.maximal_independent_sets(subset)


_EIGHT_LINK_EDGES = (
    (1, 2), (1, 3), (1, 4), (1, 5), (2, 3), (3, 4), (4, 5),
    (3, 8), (4, 7), (5, 6), (6, 7), (6, 8), (7, 8),
)


def eight_link_example():
    """Eight-link conflict graph used throughout the docs and tests.

    Link 1 sits at the center of a fan of triangles {1,2,3}, {1,3,4},
    {1,4,5}; links 6, 7, 8 form a triangle two hops away.
    """
    return ConflictGraph(range(1, 9), _EIGHT_LINK_EDGES)


def load_graph(path):
    with open(path) as fh:
        data = json.load(fh)
    if "conflict_graph" in data:
        data = data["conflict_graph"]
    return ConflictGraph.from_dict(data)


def save_graph(g, path):
    with open(path, "w") as fh:
        json.dump(g.to_dict(), fh, indent=1)
