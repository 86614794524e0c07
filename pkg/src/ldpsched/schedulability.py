"""Feasible sets and the per-link schedulability test.

A set ``S`` with ``i in S`` and ``S`` inside the closed neighborhood of
``i`` is *feasible* when no maximal independent set of the conflict graph
misses ``S`` entirely, i.e. on every channel at least one member of ``S`` can
always be active.  Link ``i`` is declared schedulable when, for each maximal
clique ``K`` around it, some feasible superset of ``K`` has total work
density ``sum(X/D)`` of at most ``N``.

Feasibility only depends on the subgraph within two hops of ``i``.  Two
equivalent local checks are provided:

``"mis"``
    enumerate the maximal independent sets of the complement region
    ``M' = ({i} | M_i | M_i2) - S`` and look for one adjacent to every
    member of ``S``;
``"search"`` (default)
    backtrack directly for an independent set inside ``M'`` that touches
    every member of ``S``.  Any such set extends to a blocking maximal one,
    so both answer the same question; the search avoids materializing what
    can be tens of thousands of maximal sets on dense neighborhoods.

Brute-force oracles over the *whole* graph are included for verification.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

from .conflict_graph import _bits
from .errors import CapacityError, InputError
from .traffic import traffic_map

__all__ = [
    "FeasibleSetResult",
    "SchedulabilityVerdict",
    "LocalAnalyzer",
    "is_feasible_set",
    "min_scheduling_rate",
    "min_density_feasible_set",
    "schedulability_test",
    "necessary_condition",
    "approximation_ratios",
    "feasible_set_bruteforce",
    "network_verdicts",
]


@dataclass(frozen=True)
class FeasibleSetResult:
    members: frozenset
    U: Fraction

    @property
    def size(self):
        return len(self.members)


@dataclass
class SchedulabilityVerdict:
    link: int
    schedulable: bool
    clique_U: list  # [(sorted clique members, U)] in clique order
    necessary_ok: bool
    delta: Fraction
    delta_prime: Fraction
    min_sets: list = field(default_factory=list)  # minimizing feasible set per clique
    feasibility_calls: int = 0

    def to_dict(self):
        return {
            "link": self.link,
            "schedulable": self.schedulable,
            "necessary_ok": self.necessary_ok,
            "delta": float(self.delta),
            "delta_exact": str(self.delta),
            "delta_prime": float(self.delta_prime),
            "delta_prime_exact": str(self.delta_prime),
            "cliques": [
                {"clique": list(k), "U": str(u), "U_float": float(u), "min_set": sorted(s)}
                for (k, u), s in zip(self.clique_U, self.min_sets)
            ],
            "feasibility_calls": self.feasibility_calls,
        }


def _sort_key(members):
    return sorted(members)


class LocalAnalyzer:
    """Per-graph cache for the schedulability machinery.

    Clique families, two-hop regions and feasibility answers depend on
    topology only, so one analyzer can be reused across every traffic
    assignment tried on the same graph (the traffic generator's reduction
    loop leans on this heavily).  Not thread-safe; use one per worker.
    """

    def __init__(self, g, method="search"):
        if method not in ("search", "mis"):
            raise InputError(f"unknown feasibility method {method!r}")
        self.g = g
        self.method = method
        self._families = {}
        self._regions = {}
        self._feasible = {}
        self._mis = {}
        self.feasibility_calls = 0
        self.feasibility_evaluations = 0

    # -- topology --------------------------------------------------------------

    def cliques(self, i):
        fam = self._families.get(i)
        if fam is None:
            fam = self._families[i] = self.g.cliques_containing(i)
        return fam

    def region(self, i):
        """Bitmasks of the closed neighborhood and of {i} | M_i | M_i2."""
        r = self._regions.get(i)
        if r is None:
            g = self.g
            closed = g.mask_of(g.closed_neighborhood(i))
            far = g.mask_of(g.two_hop_set(i))
            r = self._regions[i] = (closed, closed | far)
        return r

    # -- feasibility -------------------------------------------------------------

    def is_feasible(self, i, S):
        g = self.g
        if i not in g:
            raise InputError(f"unknown link id {i!r}")
        s_mask = g.mask_of(S) if not isinstance(S, int) else S
        closed, _ = self.region(i)
        if not s_mask & (1 << g._index[i]):
            raise InputError(f"candidate set must contain link {i}")
        if s_mask & ~closed:
            raise InputError(f"candidate set must lie inside the closed neighborhood of {i}")
        return self._feasible_mask(i, s_mask)

    def _feasible_mask(self, i, s_mask):
        """Unvalidated, cached feasibility of the bitmask ``s_mask`` around ``i``."""
        self.feasibility_calls += 1
        key = (i, s_mask)
        hit = self._feasible.get(key)
        if hit is not None:
            return hit
        self.feasibility_evaluations += 1
        rest = self.region(i)[1] & ~s_mask
        if not rest:
            ok = True
        elif self.method == "mis":
            ok = self._check_by_enumeration(s_mask, rest)
        else:
            ok = not self._blocking_set_exists(s_mask, rest)
        self._feasible[key] = ok
        return ok

    def _check_by_enumeration(self, s_mask, rest):
        mis_list = self._mis.get(rest)
        if mis_list is None:
            mis_list = self._mis[rest] = self.g._maximal_independent_masks(rest)
        masks = self.g.masks
        members = list(_bits(s_mask))
        for mis in mis_list:
            if all(masks[v] & mis for v in members):
                return False
        return True

    def _blocking_set_exists(self, s_mask, rest):
        """Is there an independent set inside ``rest`` adjacent to every member of ``s_mask``?"""
        masks = self.g.masks
        members = list(_bits(s_mask))
        options = {v: masks[v] & rest for v in members}
        if any(not o for o in options.values()):
            return False

        def grow(chosen, blocked):
            best, best_opts = None, None
            for v in members:
                if masks[v] & chosen:
                    continue
                opts = options[v] & ~blocked
                if not opts:
                    return False
                if best is None or bin(opts).count("1") < bin(best_opts).count("1"):
                    best, best_opts = v, opts
            if best is None:
                return True
            for u in _bits(best_opts):
                bit = 1 << u
                if grow(chosen | bit, blocked | bit | masks[u]):
                    return True
            return False

        return grow(0, 0)

    # -- search for a low-density feasible set -----------------------------------

    def min_density_feasible_set(self, i, K, densities):
        """Low-density feasible superset of clique ``K`` (clique-combination search).

        If ``K`` is already feasible it is returned.  Otherwise each other
        clique ``K_x`` seeds ``fix = K | K_x``, with the remaining cliques
        queued in rotated order starting after ``x``, and a reduce step
        greedily grows ``fix`` by the cheapest clique that completes a
        feasible set.  The whole closed neighborhood (always feasible) is
        the fallback.  The result is an upper bound on the true minimum.
        """
        fam = self.cliques(i)
        K = frozenset(K)
        if K not in fam.cliques:
            raise InputError(f"{sorted(K)} is not a maximal clique around link {i}")
        closed = self.g.closed_neighborhood(i)
        missing = [l for l in closed if l not in densities]
        if missing:
            raise InputError(f"no density for links {sorted(missing)}")

        # Densities scaled to integers over a common denominator keep the
        # inner loop free of Fraction arithmetic.  Bit order equals id order,
        # so comparing bit tuples compares sorted member ids.
        g = self.g
        dens = {l: Fraction(densities[l]) for l in closed}
        scale = math.lcm(*(d.denominator for d in dens.values()))
        weight = {g._index[l]: int(d * scale) for l, d in dens.items()}
        memo = {}

        def cost(mask):
            c = memo.get(mask)
            if c is None:
                c = memo[mask] = (sum(weight[b] for b in _bits(mask)), tuple(_bits(mask)))
            return c

        feasible = self._feasible_mask
        best = [cost(g.mask_of(closed)), g.mask_of(closed)]

        def offer(mask):
            c = cost(mask)
            if c < best[0]:
                best[0], best[1] = c, mask

        def reduce(fix, waiting):
            choice, local_wait, pending = [], [], fix
            for kp in waiting:
                if feasible(i, pending | kp):
                    choice.append(kp)
                else:
                    local_wait.append(kp)
                    pending |= kp
            if local_wait:
                if not choice:
                    # nothing completes a feasible set from here; dead branch
                    return
                reduce(fix | min((fix | c for c in choice), key=cost), local_wait)
            elif feasible(i, fix):
                offer(fix)
            elif choice:
                offer(min((fix | c for c in choice), key=cost))

        cliques = [g.mask_of(c) for c in fam.cliques]
        j = list(fam.cliques).index(K)
        k_mask = cliques[j]
        if feasible(i, k_mask):
            best = [cost(k_mask), k_mask]
        else:
            n = len(cliques)
            for x in range(n):
                if x == j:
                    continue
                fix = k_mask | cliques[x]
                waiting = [cliques[(x + k) % n] for k in range(1, n) if (x + k) % n != j]
                reduce(fix, waiting)
        return FeasibleSetResult(g.links_of(best[1]), Fraction(best[0][0], scale))

    def test(self, i, traffic, N):
        """Sufficient-condition test for link ``i`` on ``N`` channels."""
        if N < 1:
            raise InputError("channel count must be >= 1")
        tr = traffic_map(traffic)
        closed = self.g.closed_neighborhood(i)
        missing = [l for l in closed if l not in tr]
        if missing:
            raise InputError(f"link {i}: missing traffic for {sorted(missing)}")
        densities = {l: tr[l].density for l in closed}
        before = self.feasibility_calls
        fam = self.cliques(i)
        clique_U, min_sets = [], []
        for K in fam:
            res = self.min_density_feasible_set(i, K, densities)
            clique_U.append((sorted(K), res.U))
            min_sets.append(res.members)
        util = max(sum((tr[l].utilization for l in K), Fraction(0)) for K in fam)
        worst_U = max(u for _, u in clique_U)
        delta = util / worst_U
        delta_prime = Fraction(len(fam.largest()), max(len(s) for s in min_sets))
        return SchedulabilityVerdict(
            link=i,
            schedulable=all(u <= N for _, u in clique_U),
            clique_U=clique_U,
            necessary_ok=util <= N,
            delta=delta,
            delta_prime=delta_prime,
            min_sets=min_sets,
            feasibility_calls=self.feasibility_calls - before,
        )


# ---------------------------------------------------------------------------
# Functional interface


def is_feasible_set(g, i, S, method="search"):
    """Local two-hop feasibility check of ``S`` for link ``i``."""
    return LocalAnalyzer(g, method).is_feasible(i, S)


def min_density_feasible_set(g, i, K, densities, analyzer=None):
    return (analyzer or LocalAnalyzer(g)).min_density_feasible_set(i, K, densities)


def schedulability_test(g, i, traffic, N, analyzer=None):
    return (analyzer or LocalAnalyzer(g)).test(i, traffic, N)


def network_verdicts(g, traffic, N, analyzer=None):
    """Verdicts for every link, keyed by link id."""
    analyzer = analyzer or LocalAnalyzer(g)
    return {i: analyzer.test(i, traffic, N) for i in g.node_ids}


def necessary_condition(g, i, traffic, N):
    """Worst clique utilization ``max_K sum(X/T)`` is at most ``N``."""
    tr = traffic_map(traffic)
    fam = g.cliques_containing(i)
    try:
        worst = max(sum((tr[l].utilization for l in K), Fraction(0)) for K in fam)
    except KeyError as exc:
        raise InputError(f"link {i}: missing traffic for link {exc}") from None
    return worst <= N


def approximation_ratios(g, i, traffic, analyzer=None):
    """``(delta, delta_prime)`` for link ``i``; independent of the channel count."""
    v = (analyzer or LocalAnalyzer(g)).test(i, traffic, 1)
    return v.delta, v.delta_prime


# ---------------------------------------------------------------------------
# Whole-graph oracles


def _whole_graph_mis(g, cap):
    if len(g) > cap:
        raise CapacityError(f"graph has {len(g)} links; exhaustive enumeration capped at {cap}")
    return g._maximal_independent_masks(g.mask_of(g.node_ids))


def min_scheduling_rate(g, S, N, cap=20, _mis=None):
    """``N * min |mis & S|`` over every maximal independent set of ``g``."""
    S = list(S)
    for l in S:
        if l not in g:
            raise InputError(f"unknown link id {l!r}")
    mis_list = _mis if _mis is not None else _whole_graph_mis(g, cap)
    s_mask = g.mask_of(S)
    return N * min(bin(m & s_mask).count("1") for m in mis_list)


def feasible_set_bruteforce(g, i, K, densities, N=1, cap=14):
    """Exact minimum-density feasible superset of ``K`` by exhaustive search.

    Every ``S`` with ``K <= S <= M_i | {i}`` is scored by the whole-graph
    minimum scheduling rate; ``S`` is feasible when that rate equals ``N``.
    """
    if i not in g:
        raise InputError(f"unknown link id {i!r}")
    K = frozenset(K)
    closed = g.closed_neighborhood(i)
    if i not in K or not K <= closed:
        raise InputError(f"{sorted(K)} must contain {i} and lie in its closed neighborhood")
    mis_list = _whole_graph_mis(g, cap)
    extra = sorted(closed - K)
    best = None
    for r in range(len(extra) + 1):
        for add in combinations(extra, r):
            S = K.union(add)
            if min_scheduling_rate(g, S, N, _mis=mis_list) != N:
                continue
            u = sum((Fraction(densities[l]) for l in S), Fraction(0))
            if best is None or (u, _sort_key(S)) < (best.U, _sort_key(best.members)):
                best = FeasibleSetResult(frozenset(S), u)
    return best
