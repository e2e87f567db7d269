"""Deterministic discrete-time microsimulation with scripted collision events.

Car following is a simplified Krauss-style safe-speed rule:

    v_next = max(0, min(v_cap, v + a_max*dt, v_safe))

with midpoint position integration x += (v + v_next)/2 * dt. v_safe is solved
exactly for the discrete braking trajectory, so a follower can always stop
behind its leader's stopping point with deceleration b_max plus min-gap; the
no-overlap invariant holds at every step except the scripted contact instant.

A run is a pure function of (graph, specs, events, dt, horizon): routes and
departure times live in the specs, so repeated runs yield identical logs.
Vehicles are updated synchronously from the previous step's positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .emissions import DEFAULT_COEFFICIENTS, EmissionCoefficients, emission_rate
from .errors import ConfigError, DataError, SimulationError
from .network import RoadGraph
from .util import sub_rng

VEHICLE_CLASSES = ("PV", "bus", "AV")
EVENT_TYPES = ("rear", "inter")

# (follower class, leader class, event type) triples that may be scripted.
ADMISSIBLE_TRIPLES = frozenset({
    ("PV", "PV", "rear"),
    ("PV", "bus", "rear"),
    ("PV", "AV", "rear"),
    ("PV", "PV", "inter"),
})

# Kinematic defaults per class: vmax, accel, decel (m/s^2), length, min-gap (m),
# and the class maximum speed a scripted follower is raised to ("speeding").
CLASS_DEFAULTS: dict[str, dict[str, float]] = {
    "PV": dict(vmax=20.0, accel=2.6, decel=4.5, length=5.0, min_gap=2.5, vmax_speeding=33.3),
    "bus": dict(vmax=15.0, accel=1.2, decel=3.5, length=12.0, min_gap=2.5, vmax_speeding=20.0),
    "AV": dict(vmax=18.0, accel=2.0, decel=4.0, length=5.0, min_gap=3.0, vmax_speeding=25.0),
}

_LOOKAHEAD_M = 250.0     # how far past the current edge a vehicle scans for obstacles
_SNAP_DIST = 0.5         # halt-order arrival snap thresholds ("parks" the leader)
_SNAP_SPEED = 0.5


def admissible(follower: str, leader: str, kind: str) -> bool:
    """True iff (follower, leader, kind) is one of the scriptable triples."""
    return (follower, leader, kind) in ADMISSIBLE_TRIPLES


@dataclass
class VehicleSpec:
    id: str
    vclass: str
    route: list[str]
    depart_s: float
    vmax: float
    accel: float
    decel: float
    length: float
    min_gap: float
    vmax_speeding: float

    @classmethod
    def from_class(cls, vid: str, vclass: str, route: list[str], depart_s: float,
                   **overrides) -> "VehicleSpec":
        if vclass not in CLASS_DEFAULTS:
            raise ConfigError(f"unknown vehicle class {vclass!r}")
        params = dict(CLASS_DEFAULTS[vclass])
        params.update(overrides)
        return cls(id=vid, vclass=vclass, route=list(route), depart_s=depart_s, **params)


@dataclass(frozen=True)
class ScriptedEvent:
    event_id: str
    kind: str                      # "rear" | "inter"
    leader: str
    follower: str
    trigger_s: float
    dwell_s: float = 120.0
    clearance_s: float = 10.0
    stop_edge: str | None = None   # rear events: edge the leader halts on
    node: str | None = None        # inter events: the contested intersection


@dataclass(frozen=True)
class CollisionRecord:
    event_id: str
    kind: str
    leader: str
    follower: str
    x: float
    y: float
    t: float
    edge_id: str


@dataclass(frozen=True, slots=True)
class StepRecord:
    veh_id: str
    vclass: str
    edge_id: str
    t: float
    speed: float
    accel: float
    dwell_s: float
    ce_step: float


@dataclass(frozen=True, slots=True)
class EdgeTraversal:
    """A completed pass over one edge; dwell is the exact fractional time."""
    veh_id: str
    edge_id: str
    dwell_s: float
    t_exit: float


@dataclass
class RunSummary:
    departed: int = 0
    arrived: int = 0
    cleared: int = 0
    active_at_end: int = 0
    not_departed: int = 0
    unrealized_events: list[str] = field(default_factory=list)

    def reconciles(self) -> bool:
        return self.departed == self.arrived + self.cleared + self.active_at_end


@dataclass
class ScenarioResult:
    records: list[StepRecord]
    traversals: list[EdgeTraversal]
    collisions: list[CollisionRecord]
    summary: RunSummary


def _safe_speed(v0: float, gap: float, decel: float, dt: float) -> float:
    """Largest next-step speed that still stops within `gap` at decel b.

    Solves (v0+v1)/2*dt + D(v1) <= gap exactly for the discrete midpoint
    braking trajectory D(v1); choosing at most this speed keeps plain braking
    at b sufficient on every later step.
    """
    G = gap - 0.5 * v0 * dt
    if G <= 0:
        return 0.0
    m = math.floor((-1.0 + math.sqrt(1.0 + 8.0 * G / (decel * dt * dt))) / 2.0)
    return G / (dt * (m + 1)) + 0.5 * decel * dt * m


class _Vehicle:
    """Mutable runtime state; positions are front-bumper metres from edge start."""

    __slots__ = ("spec", "route_pos", "pos", "v", "lane", "dwell", "departed",
                 "done", "speeding", "ignore_id", "halt_edge", "halt_pos",
                 "hold_until", "halted_by_order")

    def __init__(self, spec: VehicleSpec):
        self.spec = spec
        self.route_pos = 0
        self.pos = 0.0
        self.v = 0.0
        self.lane = 0
        self.dwell = 0.0
        self.departed = False
        self.done = False           # arrived or removed
        self.speeding = False
        self.ignore_id: str | None = None
        self.halt_edge: str | None = None
        self.halt_pos = 0.0
        self.hold_until = -math.inf  # absolute hold while collided
        self.halted_by_order = False

    @property
    def edge_id(self) -> str:
        return self.spec.route[self.route_pos]

    def rear(self) -> float:
        return self.pos - self.spec.length


class _EventState:
    __slots__ = ("event", "phase", "collision_t")

    def __init__(self, event: ScriptedEvent):
        self.event = event
        self.phase = "pending"      # pending -> armed -> collided -> done
        self.collision_t = math.inf


class Simulation:
    """One deterministic run over a fixed horizon."""

    def __init__(self, graph: RoadGraph, specs: list[VehicleSpec], dt: float = 0.5,
                 horizon_s: float = 3600.0,
                 coefficients: dict[str, EmissionCoefficients] | None = None):
        if dt <= 0:
            raise ConfigError("dt must be positive")
        self.graph = graph
        self.dt = dt
        self.horizon_s = horizon_s
        self.coefficients = coefficients or DEFAULT_COEFFICIENTS
        self.t = 0.0
        self.vehicles = [_Vehicle(s) for s in sorted(specs, key=lambda s: s.id)]
        self.by_id = {v.spec.id: v for v in self.vehicles}
        if len(self.by_id) != len(self.vehicles):
            raise ConfigError("duplicate vehicle ids")
        for v in self.vehicles:
            self._check_route(v.spec)
        self.events: list[_EventState] = []
        self.records: list[StepRecord] = []
        self.traversals: list[EdgeTraversal] = []
        self.collisions: list[CollisionRecord] = []
        self.summary = RunSummary()
        self._entry_counter: dict[str, int] = {}
        self._contact_walls: dict[str, float] = {}
        # (t, veh_id, edge_id, lane, pos) snapshots for invariant checks
        self.position_trace: list[tuple[float, str, str, int, float]] | None = None

    # -- setup -------------------------------------------------------------------
    def _check_route(self, spec: VehicleSpec) -> None:
        if not spec.route:
            raise ConfigError(f"vehicle {spec.id}: empty route")
        for eid in spec.route:
            try:
                self.graph.edge(eid)
            except KeyError as exc:
                raise ConfigError(f"vehicle {spec.id}: unknown edge {eid}") from exc
        for a, b in zip(spec.route, spec.route[1:]):
            if self.graph.edge(a).to_node != self.graph.edge(b).from_node:
                raise ConfigError(f"vehicle {spec.id}: route breaks at {a} -> {b}")

    def inject_event(self, event: ScriptedEvent) -> None:
        """Validate and install a scripted event before or during a run."""
        leader = self.by_id.get(event.leader)
        follower = self.by_id.get(event.follower)
        if leader is None or follower is None:
            raise DataError(f"event {event.event_id}: unknown vehicle id")
        if not admissible(follower.spec.vclass, leader.spec.vclass, event.kind):
            raise DataError(
                f"event {event.event_id}: inadmissible triple "
                f"({follower.spec.vclass}, {leader.spec.vclass}, {event.kind})")
        if event.trigger_s > self.horizon_s:
            raise DataError(f"event {event.event_id}: trigger after simulation end")
        if event.dwell_s <= 0 or event.clearance_s < 0:
            raise DataError(f"event {event.event_id}: dwell must be > 0, clearance >= 0")
        if event.kind == "rear":
            if event.stop_edge is None:
                raise DataError(f"event {event.event_id}: rear event needs stop_edge")
            if (event.stop_edge not in leader.spec.route
                    or event.stop_edge not in follower.spec.route):
                raise DataError(f"event {event.event_id}: routes never reach stop edge "
                                f"{event.stop_edge} (unplaceable event)")
        elif event.kind == "inter":
            if event.node is None:
                raise DataError(f"event {event.event_id}: inter event needs node")
            for veh in (leader, follower):
                if self._approach_edge(veh.spec, event.node) is None:
                    raise DataError(f"event {event.event_id}: route of {veh.spec.id} never "
                                    f"reaches node {event.node} (unplaceable event)")
        else:
            raise DataError(f"event {event.event_id}: unknown kind {event.kind!r}")
        busy = {vid for st in self.events for vid in (st.event.leader, st.event.follower)}
        if busy & {event.leader, event.follower}:
            raise DataError(f"event {event.event_id}: vehicle already scripted "
                            "in another event")
        self.events.append(_EventState(event))

    def _approach_edge(self, spec: VehicleSpec, node_id: str) -> str | None:
        for eid in spec.route:
            if self.graph.edge(eid).to_node == node_id:
                return eid
        return None

    # -- main loop -----------------------------------------------------------------
    def run(self) -> ScenarioResult:
        steps = int(round(self.horizon_s / self.dt))
        for _ in range(steps):
            self.step()
        self._finalize()
        return ScenarioResult(self.records, self.traversals, self.collisions, self.summary)

    def run_until_drained(self, max_s: float) -> ScenarioResult:
        """Advance until every vehicle has departed and left, or max_s elapses."""
        steps = int(round(max_s / self.dt))
        for _ in range(steps):
            self.step()
            if all(v.done for v in self.vehicles):
                break
        self._finalize()
        return ScenarioResult(self.records, self.traversals, self.collisions, self.summary)

    def _finalize(self) -> None:
        for v in self.vehicles:
            if v.departed and not v.done:
                self.summary.active_at_end += 1
            if not v.departed:
                self.summary.not_departed += 1
        for st in self.events:
            if st.phase in ("pending", "armed"):
                self.summary.unrealized_events.append(st.event.event_id)

    def step(self) -> None:
        """Advance all vehicles by one dt; deterministic given current state."""
        t_next = self.t + self.dt
        self._update_events(t_next)
        self._process_departures()
        self._set_contact_walls()

        occupancy = self._occupancy()
        moves: list[tuple[_Vehicle, float, float]] = []
        for veh in self.vehicles:
            if veh.departed and not veh.done:
                moves.append((veh, veh.v, self._next_speed(veh, occupancy)))

        for veh, v_old, v_new in moves:
            self._advance(veh, v_old, v_new, t_next)

        self._untangle()
        self._check_contacts(t_next)

        for veh, v_old, _ in moves:
            if veh.done:
                continue
            accel = (veh.v - v_old) / self.dt
            ce = emission_rate(veh.v, accel, self.coefficients[veh.spec.vclass]) * self.dt
            self.records.append(StepRecord(veh.spec.id, veh.spec.vclass, veh.edge_id,
                                           t_next, veh.v, accel, veh.dwell, ce))
            if self.position_trace is not None:
                self.position_trace.append((t_next, veh.spec.id, veh.edge_id,
                                            veh.lane, veh.pos))
        self.t = t_next

    # -- event machinery -------------------------------------------------------------
    def _update_events(self, t_next: float) -> None:
        for st in self.events:
            ev = st.event
            leader = self.by_id[ev.leader]
            follower = self.by_id[ev.follower]
            if st.phase == "pending" and t_next >= ev.trigger_s:
                st.phase = "armed"
                if ev.kind == "rear":
                    edge = self.graph.edge(ev.stop_edge)
                    leader.halt_edge, leader.halt_pos = ev.stop_edge, edge.length_m / 2.0
                else:
                    eid = self._approach_edge(leader.spec, ev.node)
                    leader.halt_edge, leader.halt_pos = eid, self.graph.edge(eid).length_m
                follower.speeding = True
                follower.ignore_id = ev.leader
            elif st.phase == "collided":
                if t_next > st.collision_t + ev.dwell_s and follower.speeding:
                    follower.speeding = False
                    follower.ignore_id = None
                if t_next >= st.collision_t + ev.dwell_s + ev.clearance_s and not leader.done:
                    leader.done = True
                    self.summary.cleared += 1
                    st.phase = "done"

    def _set_contact_walls(self) -> None:
        """Armed followers stop dead at the scripted contact point, nowhere earlier."""
        self._contact_walls = {}
        for st in self.events:
            if st.phase != "armed":
                continue
            ev = st.event
            leader = self.by_id[ev.leader]
            follower = self.by_id[ev.follower]
            if leader.done or follower.done or not leader.halted_by_order:
                continue
            if ev.kind == "rear":
                if follower.edge_id == ev.stop_edge and leader.edge_id == ev.stop_edge:
                    self._contact_walls[follower.spec.id] = leader.rear()
            else:
                eid = self._approach_edge(follower.spec, ev.node)
                if follower.edge_id == eid:
                    self._contact_walls[follower.spec.id] = self.graph.edge(eid).length_m

    def _check_contacts(self, t_next: float) -> None:
        for st in self.events:
            if st.phase != "armed":
                continue
            ev = st.event
            follower = self.by_id[ev.follower]
            wall = self._contact_walls.get(ev.follower)
            if wall is None or follower.pos < wall - 1e-9:
                continue
            leader = self.by_id[ev.leader]
            if ev.kind == "rear":
                x, y = self.graph.point_on_edge(ev.stop_edge, leader.halt_pos)
                edge_id = ev.stop_edge
            else:
                node = self.graph.node(ev.node)
                x, y = node.x, node.y
                edge_id = follower.edge_id
            follower.v = 0.0
            follower.hold_until = t_next + ev.dwell_s
            st.phase = "collided"
            st.collision_t = t_next
            self.collisions.append(CollisionRecord(
                ev.event_id, ev.kind, ev.leader, ev.follower, x, y, t_next, edge_id))

    # -- per-step helpers --------------------------------------------------------------
    def _occupancy(self) -> dict[tuple[str, int], list[_Vehicle]]:
        occ: dict[tuple[str, int], list[_Vehicle]] = {}
        for veh in self.vehicles:
            if veh.departed and not veh.done:
                occ.setdefault((veh.edge_id, veh.lane), []).append(veh)
        for group in occ.values():
            group.sort(key=lambda v: (-v.pos, v.spec.id))
        return occ

    def _process_departures(self) -> None:
        waiting = [v for v in self.vehicles if not v.departed and v.spec.depart_s <= self.t]
        waiting.sort(key=lambda v: (v.spec.depart_s, v.spec.id))
        occ = self._occupancy()
        for veh in waiting:
            first = veh.spec.route[0]
            lane = self._peek_lane(first)
            group = occ.get((first, lane), [])
            if all(o.rear() >= veh.spec.length + veh.spec.min_gap for o in group):
                veh.departed = True
                veh.lane = lane
                veh.pos = veh.spec.length
                veh.v = 0.0
                veh.dwell = 0.0
                self._entry_counter[first] = self._entry_counter.get(first, 0) + 1
                occ.setdefault((first, lane), []).append(veh)
                occ[(first, lane)].sort(key=lambda v: (-v.pos, v.spec.id))
                self.summary.departed += 1

    def _peek_lane(self, edge_id: str) -> int:
        return self._entry_counter.get(edge_id, 0) % self.graph.edge(edge_id).lanes

    def _next_speed(self, veh: _Vehicle, occ) -> float:
        spec = veh.spec
        if veh.hold_until > self.t or veh.halted_by_order:
            return 0.0
        edge = self.graph.edge(veh.edge_id)
        v_cap = spec.vmax_speeding if veh.speeding else min(spec.vmax, edge.vmax_mps)
        v_new = min(v_cap, veh.v + spec.accel * self.dt)

        gap = self._obstacle_gap(veh, occ)
        if gap is not None:
            v_new = min(v_new, _safe_speed(veh.v, gap, spec.decel, self.dt))
        halt_gap = self._halt_order_gap(veh)
        if halt_gap is not None:
            if veh.edge_id == veh.halt_edge and halt_gap < _SNAP_DIST and veh.v < _SNAP_SPEED:
                veh.pos = veh.halt_pos
                veh.halted_by_order = True
                return 0.0
            v_new = min(v_new, _safe_speed(veh.v, halt_gap, spec.decel, self.dt))
        return max(0.0, v_new)

    def _obstacle_gap(self, veh: _Vehicle, occ) -> float | None:
        """Distance the vehicle may travel before min-gap behind the next obstacle."""
        spec = veh.spec
        best: float | None = None

        def consider(dist_to_rear: float, leader: _Vehicle) -> None:
            nonlocal best
            stop_dist = leader.v * leader.v / (2.0 * leader.spec.decel)
            gap = dist_to_rear + stop_dist - spec.min_gap
            best = gap if best is None else min(best, gap)

        group = occ.get((veh.edge_id, veh.lane), [])
        ahead = [o for o in group if o.pos > veh.pos and o.spec.id != spec.id
                 and o.spec.id != veh.ignore_id]
        if ahead:
            leader = min(ahead, key=lambda o: (o.pos, o.spec.id))
            consider(leader.rear() - veh.pos, leader)
        else:
            # scan subsequent route edges for the rear-most occupant
            cum = self.graph.edge(veh.edge_id).length_m - veh.pos
            idx = veh.route_pos + 1
            while cum < _LOOKAHEAD_M and idx < len(spec.route):
                nxt = spec.route[idx]
                group = [o for o in occ.get((nxt, self._peek_lane(nxt)), [])
                         if o.spec.id != veh.ignore_id]
                if group:
                    consider(cum + group[-1].rear(), group[-1])
                    break
                cum += self.graph.edge(nxt).length_m
                idx += 1
        return best

    def _halt_order_gap(self, veh: _Vehicle) -> float | None:
        if veh.halt_edge is None:
            return None
        if veh.edge_id == veh.halt_edge:
            return veh.halt_pos - veh.pos
        cum = self.graph.edge(veh.edge_id).length_m - veh.pos
        for eid in veh.spec.route[veh.route_pos + 1:]:
            if eid == veh.halt_edge:
                return cum + veh.halt_pos
            cum += self.graph.edge(eid).length_m
        return None   # already past the halt edge; order unreachable

    def _advance(self, veh: _Vehicle, v_old: float, v_new: float, t_next: float) -> None:
        veh.v = v_new
        dist = 0.5 * (v_old + v_new) * self.dt
        wall = self._contact_walls.get(veh.spec.id)
        if wall is not None:
            dist = min(dist, max(0.0, wall - veh.pos))
        if dist <= 0:
            veh.dwell += self.dt
            return
        total = dist
        remaining = dist
        while remaining > 0 and not veh.done:
            edge = self.graph.edge(veh.edge_id)
            space = edge.length_m - veh.pos
            if remaining <= space:
                veh.pos += remaining
                veh.dwell += self.dt * remaining / total
                return
            veh.dwell += self.dt * space / total
            remaining -= space
            self.traversals.append(EdgeTraversal(veh.spec.id, edge.id, veh.dwell, t_next))
            if veh.route_pos + 1 >= len(veh.spec.route):
                veh.done = True
                self.summary.arrived += 1
                return
            veh.route_pos += 1
            if veh.route_pos >= len(veh.spec.route):
                raise SimulationError(f"vehicle {veh.spec.id} left its route")
            veh.pos = 0.0
            veh.dwell = 0.0
            veh.lane = self._peek_lane(veh.edge_id)
            self._entry_counter[veh.edge_id] = self._entry_counter.get(veh.edge_id, 0) + 1

    def _untangle(self) -> None:
        """Resolve same-step merge overlaps; scripted contact pairs stay put."""
        contact_pairs = {(st.event.follower, st.event.leader)
                         for st in self.events if st.phase in ("collided", "armed")}
        for group in self._occupancy().values():
            for leader, follower in zip(group, group[1:]):
                if (follower.spec.id, leader.spec.id) in contact_pairs:
                    continue
                if follower.pos > leader.rear() + 1e-9:
                    follower.pos = max(0.0, leader.rear())
                    follower.v = min(follower.v, leader.v)


def run_scenario(graph: RoadGraph, specs: list[VehicleSpec], events: list[ScriptedEvent],
                 dt: float = 0.5, horizon_s: float = 3600.0,
                 coefficients: dict[str, EmissionCoefficients] | None = None) -> ScenarioResult:
    """Full mixed-traffic run with scripted events injected."""
    sim = Simulation(graph, specs, dt=dt, horizon_s=horizon_s, coefficients=coefficients)
    for ev in events:
        sim.inject_event(ev)
    return sim.run()


def run_baseline(graph: RoadGraph, specs: list[VehicleSpec], dt: float = 0.5,
                 coefficients: dict[str, EmissionCoefficients] | None = None) -> ScenarioResult:
    """Simulate each vehicle alone on an empty network (free-flow reference)."""
    records: list[StepRecord] = []
    traversals: list[EdgeTraversal] = []
    summary = RunSummary()
    for spec in sorted(specs, key=lambda s: s.id):
        route_tt = sum(graph.edge(e).freeflow_tt for e in spec.route)
        cap = spec.depart_s + 10.0 * route_tt + 600.0
        sim = Simulation(graph, [spec], dt=dt, horizon_s=cap, coefficients=coefficients)
        result = sim.run_until_drained(cap)
        if result.summary.arrived != 1:
            raise DataError(f"baseline for {spec.id} did not finish within {cap:.0f}s")
        records.extend(result.records)
        traversals.extend(result.traversals)
        summary.departed += 1
        summary.arrived += 1
    return ScenarioResult(records, traversals, [], summary)


def total_travel_time(result: ScenarioResult, dt: float) -> float:
    """Accumulated vehicle-seconds in the network (one dt per step record)."""
    return dt * len(result.records)


# -- scenario construction ------------------------------------------------------------

def build_vehicle_specs(graph: RoadGraph, counts: dict[str, int], seed: int,
                        depart_window_s: float = 600.0) -> list[VehicleSpec]:
    """Seeded random fleet: entry/exit pairs joined by fastest paths."""
    entries = sorted(n.id for n in graph.nodes if n.kind == "entry")
    exits = sorted(n.id for n in graph.nodes if n.kind == "exit")
    if not entries or not exits:
        raise DataError("network needs at least one entry and one exit node")
    rng = sub_rng(seed, "routes")
    specs: list[VehicleSpec] = []
    for vclass in VEHICLE_CLASSES:
        for i in range(int(counts.get(vclass, 0))):
            route = None
            for _ in range(64):
                src = entries[int(rng.integers(len(entries)))]
                dst = exits[int(rng.integers(len(exits)))]
                if src == dst:
                    continue
                try:
                    route = graph.shortest_edge_path(src, dst)
                    break
                except DataError:
                    continue
            if route is None:
                raise DataError(f"could not route a {vclass} after 64 attempts")
            depart = round(float(rng.uniform(0.0, depart_window_s)), 1)
            specs.append(VehicleSpec.from_class(f"{vclass.lower()}{i:04d}", vclass,
                                                route, depart))
    return specs


@dataclass(frozen=True)
class EventRequest:
    """Declarative event wish; planning rewrites participant routes."""
    kind: str
    trigger_s: float
    dwell_s: float = 120.0
    clearance_s: float = 10.0
    leader_class: str = "PV"
    follower_class: str = "PV"
    stop_edge: str | None = None    # rear: optional explicit edge
    node: str | None = None         # inter: optional explicit node


def plan_events(graph: RoadGraph, specs: list[VehicleSpec], requests: list[EventRequest],
                seed: int, headway_s: float = 10.0) -> list[ScriptedEvent]:
    """Turn event requests into concrete scripted events.

    Picks one unused vehicle per role, rewrites its route through the stop
    location with the stop edge near the route end (so clearing the leader
    forfeits little of its remaining trip), and times departures so the leader
    reaches the stop point just after the trigger with the follower trailing
    by `headway_s`.
    """
    rng = sub_rng(seed, "events")
    used: set[str] = set()
    by_id = {s.id: s for s in specs}
    events: list[ScriptedEvent] = []
    entries = sorted(n.id for n in graph.nodes if n.kind == "entry")
    exits = sorted(n.id for n in graph.nodes if n.kind == "exit")

    def pick(vclass: str) -> VehicleSpec:
        candidates = sorted(s.id for s in specs if s.vclass == vclass and s.id not in used)
        if not candidates:
            raise DataError(f"no unused {vclass} vehicle available for an event")
        used.add(candidates[0])
        return by_id[candidates[0]]

    def approach_route(target_node: str) -> list[str]:
        """Entry -> target_node path, preferring at least two edges of run-up."""
        options = []
        for src in entries:
            if src == target_node:
                continue
            try:
                options.append(graph.shortest_edge_path(src, target_node))
            except DataError:
                continue
        if not options:
            raise DataError(f"no entry node reaches {target_node}")
        options.sort(key=lambda p: (len(p), p[0]))
        for path in options:
            if len(path) >= 2:
                return path
        return options[0]

    def exit_route(from_node: str) -> list[str]:
        options = []
        for dst in exits:
            if dst == from_node:
                return []
            try:
                options.append(graph.shortest_edge_path(from_node, dst))
            except DataError:
                continue
        if not options:
            raise DataError(f"no exit reachable from {from_node}")
        options.sort(key=lambda p: (len(p), p[0]))
        return options[0]

    def freeflow_time(spec: VehicleSpec, route: list[str], distance_m: float) -> float:
        """Rough time to cover distance_m along route incl. the standing start."""
        t, covered = spec.vmax / (2.0 * spec.accel), 0.0
        for eid in route:
            edge = graph.edge(eid)
            seg = min(edge.length_m, distance_m - covered)
            t += seg / min(spec.vmax, edge.vmax_mps)
            covered += seg
            if covered >= distance_m:
                break
        return t

    for i, req in enumerate(requests):
        if req.kind not in EVENT_TYPES:
            raise ConfigError(f"unknown event type {req.kind!r}")
        if not admissible(req.follower_class, req.leader_class, req.kind):
            raise DataError(f"inadmissible event request "
                            f"({req.follower_class}, {req.leader_class}, {req.kind})")
        leader = pick(req.leader_class)
        follower = pick(req.follower_class)
        if req.kind == "rear":
            stop_edge, route = _plan_rear_route(graph, rng, req.stop_edge,
                                                approach_route, exit_route)
            stop_dist = (sum(graph.edge(e).length_m for e in route[:route.index(stop_edge)])
                         + graph.edge(stop_edge).length_m / 2.0)
            node_id = None
            f_route = list(route)
        else:
            node_id = req.node or sorted(n.id for n in graph.nodes
                                         if n.kind == "intersection")[0]
            in_edges = sorted(e.id for e in graph.edges if e.to_node == node_id)
            if len(in_edges) < 2:
                raise DataError(f"node {node_id} lacks two approaches for an inter event")
            lead_in, foll_in = _perpendicular_pair(graph, in_edges)
            stop_edge = None
            route = (approach_route(graph.edge(lead_in).from_node) + [lead_in]
                     + exit_route(node_id))
            stop_dist = sum(graph.edge(e).length_m
                            for e in route[:route.index(lead_in) + 1])
            f_route = (approach_route(graph.edge(foll_in).from_node) + [foll_in]
                       + exit_route(node_id))
        t_reach = freeflow_time(leader, route, stop_dist)
        depart = req.trigger_s + 3.0 - t_reach
        if depart < 0:
            raise ConfigError(f"event {i}: trigger {req.trigger_s}s too early for the "
                              f"approach ({t_reach:.0f}s needed)")
        leader.route = route
        leader.depart_s = round(depart, 1)
        follower.route = f_route
        follower.depart_s = round(depart + headway_s, 1)
        events.append(ScriptedEvent(
            event_id=f"ev{i:03d}", kind=req.kind, leader=leader.id, follower=follower.id,
            trigger_s=req.trigger_s, dwell_s=req.dwell_s, clearance_s=req.clearance_s,
            stop_edge=stop_edge, node=node_id))
    return events


def _plan_rear_route(graph: RoadGraph, rng, stop_edge: str | None,
                     approach_route, exit_route) -> tuple[str, list[str]]:
    candidates = ([stop_edge] if stop_edge else
                  [graph.edges[int(rng.integers(len(graph.edges)))].id for _ in range(32)])
    last_err: Exception | None = None
    for eid in candidates:
        edge = graph.edge(eid)
        try:
            route = approach_route(edge.from_node) + [eid] + exit_route(edge.to_node)
            return eid, route
        except DataError as exc:
            last_err = exc
    raise DataError(f"could not place rear event: {last_err}")


def _perpendicular_pair(graph: RoadGraph, in_edges: list[str]) -> tuple[str, str]:
    """Two approaches to a node whose directions are closest to perpendicular."""
    def direction(eid: str) -> tuple[float, float]:
        e = graph.edge(eid)
        a, b = graph.node(e.from_node), graph.node(e.to_node)
        dx, dy = b.x - a.x, b.y - a.y
        norm = math.hypot(dx, dy)
        return dx / norm, dy / norm

    best, best_dot = None, math.inf
    for i, a in enumerate(in_edges):
        for b in in_edges[i + 1:]:
            da, db = direction(a), direction(b)
            dot = abs(da[0] * db[0] + da[1] * db[1])
            if dot < best_dot:
                best, best_dot = (a, b), dot
    if best is None or best_dot > 0.5:
        raise DataError("no perpendicular approach pair at node")
    return best
