"""Local-deadline-partition scheduling and the slotted simulation engine.

Every link splits time at the arrivals and deadlines of itself and its
conflict neighbors.  At the start of each such *partition* the link claims a
share of its remaining per-packet work proportional to the partition length,
and within the partition it contends for channels with priority
``min(local_density, 1)``, ties going to the larger link id.

The per-slot contention runs in synchronous rounds: every undecided link
applies the decision rules against the states its neighbors shared at the
end of the previous round, then all links share.  Local demand is an exact
:class:`~fractions.Fraction`; it is reduced by one per granted channel and
clamped at zero.
"""

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction

import numpy as np

from .errors import InputError, InvariantViolation
from .traffic import traffic_map

__all__ = [
    "ChannelState",
    "Partition",
    "LinkRuntimeState",
    "ScheduleSlot",
    "SimulationReport",
    "LinkRecord",
    "partition_bounds",
    "link_events",
    "local_demand",
    "local_density",
    "priority",
    "schedule_slot",
    "edf_baseline_slot",
    "run_simulation",
    "check_maximal_schedule",
]


class ChannelState(IntEnum):
    UNDECIDED = 0
    ACTIVE = 1
    INACTIVE = 2


UNDECIDED, ACTIVE, INACTIVE = ChannelState.UNDECIDED, ChannelState.ACTIVE, ChannelState.INACTIVE

_ZERO = Fraction(0)
_ONE = Fraction(1)


@dataclass(frozen=True)
class Partition:
    """Half-open slot range ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self):
        if not self.start < self.end:
            raise InvariantViolation(f"empty partition [{self.start}, {self.end})")

    @property
    def length(self):
        return self.end - self.start

    def __contains__(self, t):
        return self.start <= t < self.end


def link_events(tr, until):
    """Sorted arrival and deadline slots of one link, up to ``until`` inclusive."""
    out = set()
    a = tr.A1
    while a <= until:
        out.add(a)
        if a + tr.D <= until:
            out.add(a + tr.D)
        a += tr.T
    return sorted(out)


def partition_bounds(events, t):
    """Partition around slot ``t`` given the event slots of a closed neighborhood.

    ``events`` may hold plain slots or ``(slot, kind)`` pairs.
    """
    before, after = None, None
    for e in events:
        s = e[0] if isinstance(e, tuple) else e
        if s <= t:
            if before is None or s > before:
                before = s
        elif after is None or s < after:
            after = s
    if before is None or after is None:
        raise InvariantViolation(f"slot {t} is not bracketed by events")
    return Partition(before, after)


@dataclass
class LinkRuntimeState:
    """Scheduler state of one link.

    ``packet`` is the 1-based index of the packet currently in its window
    (0 before the first arrival).  ``grants`` counts transmissions given to
    that packet; ``grants_at_start`` and ``demand_at_start`` snapshot the
    counters at the start of the current partition.
    """

    traffic: object
    packet: int = 0
    grants: int = 0
    partition: Partition = None
    demand_at_start: Fraction = _ZERO
    grants_at_start: int = 0
    delivered: bool = False

    @property
    def deadline(self):
        if self.packet == 0:
            return None
        return self.traffic.deadline(self.packet)

    @property
    def remaining(self):
        """Work still owed to the current packet (``X - X'``)."""
        if self.packet == 0 or self.delivered:
            return 0
        return max(self.traffic.X - self.grants, 0)

    def start_partition(self, partition):
        self.partition = partition
        self.grants_at_start = self.grants
        self.demand_at_start = _ZERO
        self.demand_at_start = local_demand(self, partition.start)

    def advance_to(self, t):
        """Move packet bookkeeping to slot ``t`` (for tests and the public API)."""
        tr = self.traffic
        if t < tr.A1:
            return
        j = (t - tr.A1) // tr.T + 1
        if j != self.packet:
            self.packet = j
            self.grants = 0
            self.delivered = False


def local_demand(state, t):
    """Fraction of the current packet's remaining work owed within the partition.

    At the first slot of a partition the remaining work is scaled by
    ``L / (deadline - start)``; later slots subtract the grants made since
    the partition began.  Zero once the packet's deadline is at or before
    the partition start (or before the first arrival).
    """
    part = state.partition
    deadline = state.deadline
    if deadline is None or deadline <= part.start:
        return _ZERO
    if t == part.start:
        remaining = state.traffic.X - state.grants_at_start
        if state.delivered or remaining <= 0:
            return _ZERO
        return Fraction(remaining * part.length, deadline - part.start)
    if state.delivered:
        return _ZERO
    value = state.demand_at_start - (state.grants - state.grants_at_start)
    return value if value.numerator > 0 else _ZERO


def local_density(state, t, demand=None):
    """Local demand divided by the slots left in the partition."""
    end = state.partition.end
    if t >= end:
        raise InvariantViolation(f"slot {t} is past the partition end {end}")
    if demand is None:
        demand = local_demand(state, t)
    return Fraction(demand) / (end - t)


def priority(density):
    return density if density < _ONE else _ONE


@dataclass(frozen=True)
class ScheduleSlot:
    t: int
    active: tuple  # one frozenset of link ids per channel
    rounds: int
    grants: dict = field(default_factory=dict)
    demand_after: dict = field(default_factory=dict)


def _contend(contenders, neighbor_map, demand, prio_of, n_channels):
    """Round-synchronous channel contention shared by LDP and the EDF baseline.

    ``demand`` maps every contender to its positive demand and is decremented
    in place.  A link's per-channel priority stops changing once it is ACTIVE
    on that channel, so neighbors keep comparing against the value it won
    with.  Returns ``(active_per_channel, rounds, grants)``.
    """
    if not contenders:
        return [set() for _ in range(n_channels)], 0, {}
    rng_ch = range(n_channels)
    # plain ints in the hot loop; keys are (priority, link id) so ties go to the larger id
    und, act, ina = int(UNDECIDED), int(ACTIVE), int(INACTIVE)
    state, key = {}, {}
    for i in contenders:
        state[i] = [und] * n_channels
        key[i] = [(prio_of(i, demand[i]), i)] * n_channels
    vstate = {i: s[:] for i, s in state.items()}
    vkey = {i: k[:] for i, k in key.items()}
    nbrs = {i: [l for l in neighbor_map[i] if l in state] for i in contenders}
    undecided = sorted(contenders)
    guard = len(contenders) * n_channels
    rounds = 0
    while undecided:
        rounds += 1
        if rounds > guard:
            raise InvariantViolation(f"contention did not converge within {guard} rounds")
        for i in undecided:
            st, ky, nb = state[i], key[i], nbrs[i]
            cur = (prio_of(i, demand[i]), i)
            for rb in rng_ch:
                if st[rb] != und:
                    continue
                ky[rb] = cur
                if demand[i]:
                    for l in nb:
                        if vstate[l][rb] != ina and vkey[l][rb] > cur:
                            break
                    else:
                        st[rb] = act
                        d = demand[i] - 1
                        demand[i] = d if d.numerator > 0 else _ZERO
                        cur = (prio_of(i, demand[i]), i)
                        continue
                for l in nb:
                    if vstate[l][rb] == act and vkey[l][rb] > cur:
                        st[rb] = ina
                        break
                else:
                    if not demand[i]:
                        st[rb] = ina
        for i in undecided:
            vstate[i] = state[i][:]
            vkey[i] = key[i][:]
        undecided = [i for i in undecided if und in state[i]]
    active = [set() for _ in rng_ch]
    grants = {}
    for i, st in state.items():
        for rb in rng_ch:
            if st[rb] == ACTIVE:
                active[rb].add(i)
                grants[i] = grants.get(i, 0) + 1
    return active, rounds, grants


def _neighbor_map(g, links):
    return {i: g.neighbors(i) for i in links}


def schedule_slot(g, states, N, t):
    """One LDP slot over links with current partitions in ``states``.

    ``states`` maps link id to :class:`LinkRuntimeState`; it is not mutated.
    """
    demand, rem = {}, {}
    for i, s in states.items():
        x = local_demand(s, t)
        if x > 0:
            demand[i] = x
            rem[i] = s.partition.end - t
            if rem[i] <= 0:
                raise InvariantViolation(f"link {i}: slot {t} outside its partition")

    def prio_of(i, x):
        d = x / rem[i]
        return d if d < _ONE else _ONE

    contenders = list(demand)
    active, rounds, grants = _contend(contenders, _neighbor_map(g, contenders), demand, prio_of, N)
    return ScheduleSlot(t, tuple(frozenset(a) for a in active), rounds, grants, dict(demand))


def edf_baseline_slot(g, states, N, t):
    """Same contention protocol, priority by earliest absolute deadline."""
    demand, deadline = {}, {}
    for i, s in states.items():
        dl = s.deadline
        if dl is not None and dl > t and s.remaining > 0:
            demand[i] = s.remaining
            deadline[i] = dl

    def prio_of(i, x):
        return -deadline[i]

    contenders = list(demand)
    active, rounds, grants = _contend(contenders, _neighbor_map(g, contenders), demand, prio_of, N)
    return ScheduleSlot(t, tuple(frozenset(a) for a in active), rounds, grants, dict(demand))


def check_maximal_schedule(g, active, demand_after):
    """Raise unless each channel's ACTIVE set is independent and maximal.

    Maximality is with respect to links still holding positive demand once
    the slot's contention has finished.
    """
    for rb, act in enumerate(active):
        for i in act:
            if g.neighbors(i) & act:
                raise InvariantViolation(f"channel {rb}: adjacent links {sorted(g.neighbors(i) & act | {i})} both active")
        for i, x in demand_after.items():
            if x and i not in act and not (g.neighbors(i) & act):
                raise InvariantViolation(f"channel {rb}: link {i} has demand {x} and no active neighbor")


# ---------------------------------------------------------------------------
# Simulation


@dataclass
class LinkRecord:
    link: int
    packets: int = 0
    misses: int = 0
    delivered: int = 0
    transmissions: int = 0
    P: float = None

    @property
    def success_rate(self):
        return self.delivered / self.packets if self.packets else 1.0

    def requirement_met(self, mode):
        if mode == "deterministic":
            return self.misses == 0
        if self.packets == 0:
            return True
        P = self.P
        return self.success_rate >= P - 3 * math.sqrt(P * (1 - P) / self.packets)

    def to_dict(self, mode):
        return {
            "link": self.link,
            "packets": self.packets,
            "misses": self.misses,
            "delivered": self.delivered,
            "transmissions": self.transmissions,
            "success_rate": self.success_rate,
            "requirement_met": self.requirement_met(mode),
        }


@dataclass
class SimulationReport:
    scheduler: str
    mode: str
    channels: int
    horizon: int
    links: dict  # link id -> LinkRecord
    max_rounds: int = 0
    mean_rounds: float = 0.0
    contended_slots: int = 0
    invariant_checks: int = 0
    slot_active_counts: list = None

    @property
    def total_packets(self):
        return sum(r.packets for r in self.links.values())

    @property
    def total_misses(self):
        return sum(r.misses for r in self.links.values())

    @property
    def schedulable_ratio(self):
        if not self.links:
            return 1.0
        met = sum(r.requirement_met(self.mode) for r in self.links.values())
        return met / len(self.links)

    def unschedulable_links(self):
        return sorted(l for l, r in self.links.items() if not r.requirement_met(self.mode))

    def to_dict(self):
        return {
            "scheduler": self.scheduler,
            "mode": self.mode,
            "channels": self.channels,
            "horizon": self.horizon,
            "schedulable_ratio": self.schedulable_ratio,
            "total_packets": self.total_packets,
            "total_misses": self.total_misses,
            "max_rounds": self.max_rounds,
            "mean_rounds": self.mean_rounds,
            "contended_slots": self.contended_slots,
            "links": [self.links[l].to_dict(self.mode) for l in sorted(self.links)],
        }

    def write_slot_csv(self, path):
        if self.slot_active_counts is None:
            raise InputError("simulation was run without record_slots=True")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot"] + [f"ch{rb}" for rb in range(self.channels)])
            for t, counts in enumerate(self.slot_active_counts):
                w.writerow([t] + list(counts))


_MODES = {"deterministic": "deterministic", "det": "deterministic",
          "bernoulli": "bernoulli", "bern": "bernoulli"}
_SCHEDULERS = ("ldp", "edf")


def run_simulation(g, traffic, N, horizon, mode="deterministic", rng=None, *, scheduler="ldp",
                   seed=0, check_invariants=False, record_slots=False, trace=None):
    """Simulate slots ``0 .. horizon-1`` and tally per-link deadline outcomes.

    Deterministic mode: a packet succeeds iff it received ``X`` grants before
    its deadline.  Bernoulli mode: each grant succeeds with probability
    ``p``; the packet is done at its first success.  Packets whose deadline
    falls after the horizon are not counted.

    ``check_invariants`` asserts, every slot, that each channel's active set
    is independent and maximal among links with demand left.  ``trace`` is
    called as ``trace(t, info)`` with the slot's densities (LDP only),
    grants and the links that missed a deadline at ``t``.
    """
    mode = _MODES.get(mode)
    if mode is None:
        raise InputError("mode must be 'deterministic' or 'bernoulli'")
    if scheduler not in _SCHEDULERS:
        raise InputError(f"scheduler must be one of {_SCHEDULERS}")
    if N < 1:
        raise InputError("channel count must be >= 1")
    if horizon < 1:
        raise InputError("horizon must be >= 1")
    tr_map = traffic_map(traffic)
    ids = list(g.node_ids)
    missing = [l for l in ids if l not in tr_map]
    if missing:
        raise InputError(f"no traffic for links {missing}")
    if mode == "bernoulli":
        if rng is None:
            rng = np.random.default_rng(seed)
        no_p = [l for l in ids if tr_map[l].p is None]
        if no_p:
            raise InputError(f"bernoulli mode needs link reliabilities; missing for {no_p}")

    # Per-link event boundaries over the closed neighborhood, plus slot 0.
    reach = horizon + max((tr_map[l].T + tr_map[l].D for l in ids), default=0) + 1
    own_events = {l: link_events(tr_map[l], reach) for l in ids}
    bounds, ptr = {}, {}
    for i in ids:
        ev = set(own_events[i])
        for l in g.neighbors(i):
            ev.update(own_events[l])
        ev.add(0)
        bounds[i] = sorted(e for e in ev if e >= 0)
        ptr[i] = 0

    states = {l: LinkRuntimeState(tr_map[l]) for l in ids}
    records = {l: LinkRecord(l, P=tr_map[l].P) for l in ids}
    next_arrival = {l: tr_map[l].A1 for l in ids}
    neighbor_map = {i: g.neighbors(i) for i in ids}
    bern = mode == "bernoulli"
    p_of = {l: float(tr_map[l].p) for l in ids} if bern else None
    slot_counts = [] if record_slots else None
    max_rounds, sum_rounds, contended, checks = 0, 0, 0, 0

    def settle(l, s):
        rec = records[l]
        rec.packets += 1
        if bern:
            ok = s.delivered
        else:
            ok = s.grants >= s.traffic.X
        if ok:
            rec.delivered += 1
        else:
            rec.misses += 1
        return ok

    ldp = scheduler == "ldp"
    # Priorities are rationals whose denominators stay below max(D)**2; while
    # that is under 2**26 their float images are distinct and equally ordered,
    # which keeps contention exact and much faster than Fraction comparisons.
    max_d = max((tr_map[l].D for l in ids), default=1)
    fast_keys = max_d * max_d < 2 ** 26
    for t in range(horizon):
        missed = []
        demand, rem, dl = {}, {}, {}
        for l in ids:
            s = states[l]
            tr = s.traffic
            if s.packet and t == tr.A1 + (s.packet - 1) * tr.T + tr.D:
                if not settle(l, s):
                    missed.append(l)
            if t == next_arrival[l]:
                s.packet += 1
                s.grants = 0
                s.delivered = False
                next_arrival[l] += tr.T
            b = bounds[l]
            k = ptr[l]
            while k + 1 < len(b) and b[k + 1] <= t:
                k += 1
            ptr[l] = k
            if b[k] == t or s.partition is None:
                s.start_partition(Partition(b[k], b[k + 1]))
            if ldp:
                x = local_demand(s, t)
                if x:
                    demand[l] = x
                    rem[l] = s.partition.end - t
            else:
                r = s.remaining
                if r > 0 and s.deadline > t:
                    demand[l] = r
                    dl[l] = s.deadline

        if ldp and fast_keys:
            def prio_of(i, x):
                den = x.denominator * rem[i]
                return 1.0 if x.numerator >= den else x.numerator / den
        elif ldp:
            def prio_of(i, x):
                d = x / rem[i]
                return d if d < _ONE else _ONE
        else:
            def prio_of(i, x):
                return -dl[i]

        if trace is not None:
            dens = {l: (demand[l] / rem[l] if l in demand else _ZERO) for l in ids} if ldp else None
            start_demand = dict(demand)

        contenders = list(demand)
        active, rounds, grants = _contend(contenders, neighbor_map, demand, prio_of, N)
        if rounds:
            contended += 1
            sum_rounds += rounds
            max_rounds = max(max_rounds, rounds)
        if check_invariants:
            check_maximal_schedule(g, active, demand)
            checks += 1
        for l, n in grants.items():
            s = states[l]
            s.grants += n
            records[l].transmissions += n
            if bern and not s.delivered:
                p = p_of[l]
                for _ in range(n):
                    if rng.random() < p:
                        s.delivered = True
                        break
        if record_slots:
            slot_counts.append([len(a) for a in active])
        if trace is not None:
            trace(t, {"density": dens, "demand": start_demand, "grants": grants,
                      "active": active, "missed": missed, "rounds": rounds})

    # packets whose deadline is exactly the horizon are complete too
    for l in ids:
        s = states[l]
        if s.packet and s.deadline == horizon:
            settle(l, s)

    return SimulationReport(
        scheduler=scheduler,
        mode=mode,
        channels=N,
        horizon=horizon,
        links=records,
        max_rounds=max_rounds,
        mean_rounds=(sum_rounds / contended) if contended else 0.0,
        contended_slots=contended,
        invariant_checks=checks,
        slot_active_counts=slot_counts,
    )
