"""Key management: stores, queue-by-key-amount scheduling, consumption.

Stores hold a continuous byte quantity so that crossing times (store
empty, store full) are exact arithmetic rather than tick-quantized.
Scheduling admits connections greedily in ascending-buffer order, ties
broken by connection id, skipping any route that shares a transmitter,
receiver, or switch with an already admitted one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .topology import Topology

DEFAULT_CAPACITY_BYTES = 33_554_432   # 32 MB
STORE_EMPTY = "store-empty"
STORE_FULL = "store-full"

_EPS = 1e-9


class ScenarioError(ValueError):
    pass


@dataclass
class KeyStore:
    connection: str
    buffered_bytes: float = 0.0
    capacity_bytes: float = DEFAULT_CAPACITY_BYTES
    total_credited: float = 0.0
    total_debited: float = 0.0
    initial_bytes: float = field(init=False)

    def __post_init__(self):
        if not 0 <= self.buffered_bytes <= self.capacity_bytes:
            raise ValueError("buffered_bytes outside [0, capacity]")
        self.initial_bytes = self.buffered_bytes

    @property
    def is_empty(self) -> bool:
        return self.buffered_bytes <= _EPS

    @property
    def is_full(self) -> bool:
        return self.buffered_bytes >= self.capacity_bytes - _EPS

    def credit_bytes(self, amount: float) -> float:
        """Add up to `amount` bytes; overflow past capacity is discarded."""
        if amount < 0:
            raise ValueError("credit must be non-negative")
        accepted = min(amount, self.capacity_bytes - self.buffered_bytes)
        accepted = max(accepted, 0.0)
        self.buffered_bytes += accepted
        self.total_credited += accepted
        return accepted

    def credit_bits(self, bits: int) -> float:
        return self.credit_bytes(bits / 8.0)

    def debit_bytes(self, amount: float) -> float:
        """Remove up to `amount` bytes; returns what was actually served."""
        if amount < 0:
            raise ValueError("debit must be non-negative")
        served = min(amount, self.buffered_bytes)
        self.buffered_bytes -= served
        self.total_debited += served
        return served

    def conservation_holds(self) -> bool:
        expect = self.initial_bytes + self.total_credited - self.total_debited
        return abs(self.buffered_bytes - expect) < 1e-6


@dataclass(frozen=True)
class QueuePolicy:
    requeue_interval_s: float = 1800.0

    def __post_init__(self):
        if self.requeue_interval_s <= 0:
            raise ValueError("requeue interval must be positive")

    def order(self, connections, stores: dict[str, KeyStore]) -> list[str]:
        def key(conn: str):
            store = stores.get(conn)
            return (store.buffered_bytes if store else 0.0, conn)

        return sorted(connections, key=key)


@dataclass(frozen=True)
class Consumer:
    connection: str
    rate_Bps: float

    def __post_init__(self):
        if self.rate_Bps < 0:
            raise ValueError("consumer rate must be non-negative")


@dataclass(frozen=True)
class PairingSchedule:
    epoch_start_s: float
    epoch_length_s: float
    active: tuple[str, ...]

    def __contains__(self, connection: str) -> bool:
        return connection in self.active


def _route_nodes(topology: Topology, connection: str) -> tuple[str, ...]:
    tx, _, rx = connection.partition("-")
    route = topology.route_for(tx, rx)
    if route is None:
        raise ValueError(f"no route on file for connection {connection!r}")
    return route.hops


def select_pairings(
    feasible_connections,
    key_stores: dict[str, KeyStore],
    topology: Topology,
    policy: QueuePolicy,
    epoch_start_s: float = 0.0,
    ports_per_switch: int = 1,
) -> PairingSchedule:
    """Greedy conflict-free admission in ascending-buffer order.

    Endpoints are always exclusive; a switch node may carry up to
    ports_per_switch admitted routes (default one light path).
    """
    admitted: list[str] = []
    endpoint_used: set[str] = set()
    switch_load: dict[str, int] = {}
    for conn in policy.order(feasible_connections, key_stores):
        nodes = _route_nodes(topology, conn)
        tx, rx = nodes[0], nodes[-1]
        interior = nodes[1:-1]
        if tx in endpoint_used or rx in endpoint_used:
            continue
        if any(switch_load.get(s, 0) >= ports_per_switch for s in interior):
            continue
        admitted.append(conn)
        endpoint_used.update((tx, rx))
        for s in interior:
            switch_load[s] = switch_load.get(s, 0) + 1
    return PairingSchedule(
        epoch_start_s=epoch_start_s,
        epoch_length_s=policy.requeue_interval_s,
        active=tuple(admitted),
    )


# --- continuous generation/consumption ---------------------------------------

@dataclass(frozen=True)
class StoreEvent:
    kind: str
    connection: str
    timestamp_s: float


@dataclass
class EpochState:
    stores: dict[str, KeyStore]
    active: set[str] = field(default_factory=set)
    generation_Bps: dict[str, float] = field(default_factory=dict)
    consumers: dict[str, Consumer] = field(default_factory=dict)


def _evolve_store(
    store: KeyStore,
    inflow_Bps: float,
    outflow_Bps: float,
    start_s: float,
    delta_t: float,
) -> list[StoreEvent]:
    """Advance one store by delta_t with exact crossing events.

    At the empty boundary consumption halts (outflow capped at inflow);
    at the full boundary crediting pauses (inflow capped at outflow).
    """
    events: list[StoreEvent] = []
    t = 0.0
    while t < delta_t - _EPS:
        remaining = delta_t - t
        inflow = inflow_Bps
        outflow = outflow_Bps
        if store.is_empty and outflow > inflow:
            outflow = inflow
        if store.is_full and inflow > outflow:
            inflow = outflow
        net = inflow - outflow
        if net < 0 and not store.is_empty:
            t_cross = store.buffered_bytes / -net
        elif net > 0 and not store.is_full:
            t_cross = (store.capacity_bytes - store.buffered_bytes) / net
        else:
            t_cross = float("inf")
        step = min(remaining, t_cross)
        store.credit_bytes(inflow * step)
        store.debit_bytes(outflow * step)
        t += step
        if t_cross <= remaining + _EPS and t_cross < float("inf"):
            if net < 0:
                store.buffered_bytes = 0.0
                events.append(StoreEvent(STORE_EMPTY, store.connection, start_s + t))
            else:
                store.buffered_bytes = store.capacity_bytes
                events.append(StoreEvent(STORE_FULL, store.connection, start_s + t))
    return events


def tick(state: EpochState, delta_t: float, now_s: float = 0.0) -> list[StoreEvent]:
    """Advance all stores: credit active generators, debit consumers."""
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    events: list[StoreEvent] = []
    for conn in sorted(state.stores):
        store = state.stores[conn]
        inflow = state.generation_Bps.get(conn, 0.0) if conn in state.active else 0.0
        consumer = state.consumers.get(conn)
        outflow = consumer.rate_Bps if consumer else 0.0
        events.extend(_evolve_store(store, inflow, outflow, now_s, delta_t))
    return sorted(events, key=lambda e: (e.timestamp_s, e.connection))


# --- buffer drain scenario ----------------------------------------------------

_SCENARIO_KEYS = (
    "connection",
    "initial_bytes",
    "consumer_Bps",
    "generation_bps",
    "requeue_s",
    "horizon_periods",
)


@dataclass(frozen=True)
class DrainReport:
    connection: str
    time_to_empty_s: float | None
    periods_scheduled_consecutive: int
    buffer_stayed_minimum: bool
    schedule: tuple[str, ...]
    final_buffer_bytes: float
    events: tuple[StoreEvent, ...]

    def to_dict(self) -> dict:
        return {
            "connection": self.connection,
            "time_to_empty_s": self.time_to_empty_s,
            "periods_scheduled_consecutive": self.periods_scheduled_consecutive,
            "buffer_stayed_minimum": self.buffer_stayed_minimum,
            "schedule": list(self.schedule),
            "final_buffer_bytes": self.final_buffer_bytes,
            "events": [
                {"kind": e.kind, "connection": e.connection, "timestamp_s": e.timestamp_s}
                for e in self.events
            ],
        }


def run_drain_scenario(config: dict) -> DrainReport:
    """One connection with live consumption contends with idle peers.

    All stores share one optical resource: exactly one connection is
    paired per requeue period, chosen by ascending buffer with id
    tie-break. The named connection carries the only consumer.
    """
    missing = [k for k in _SCENARIO_KEYS if k not in config]
    if missing:
        raise ScenarioError(f"scenario config missing keys: {', '.join(missing)}")
    name = str(config["connection"])
    initial = float(config["initial_bytes"])
    consumer_Bps = float(config["consumer_Bps"])
    generation_Bps = float(config["generation_bps"]) / 8.0
    requeue_s = float(config["requeue_s"])
    horizon = int(config["horizon_periods"])
    peer_count = int(config.get("peer_count", 3))
    peer_initial = float(config.get("peer_initial_bytes", initial))
    if initial < 0 or consumer_Bps < 0 or generation_Bps < 0:
        raise ScenarioError("rates and initial buffer must be non-negative")
    if requeue_s <= 0 or horizon <= 0:
        raise ScenarioError("requeue_s and horizon_periods must be positive")

    capacity = max(initial, peer_initial, DEFAULT_CAPACITY_BYTES)
    stores = {name: KeyStore(name, initial, capacity)}
    for i in range(1, peer_count + 1):
        peer = f"peer-{i}"
        stores[peer] = KeyStore(peer, peer_initial, capacity)
    state = EpochState(
        stores=stores,
        generation_Bps={c: generation_Bps for c in stores},
        consumers={name: Consumer(name, consumer_Bps)},
    )
    policy = QueuePolicy(requeue_interval_s=requeue_s)

    schedule: list[str] = []
    events: list[StoreEvent] = []
    stayed_minimum = True
    for period in range(horizon):
        winner = policy.order(stores, stores)[0]
        schedule.append(winner)
        state.active = {winner}
        events.extend(tick(state, requeue_s, now_s=period * requeue_s))
        floor_bytes = min(s.buffered_bytes for s in stores.values())
        if stores[name].buffered_bytes > floor_bytes + _EPS:
            stayed_minimum = False

    consecutive = 0
    for winner in schedule:
        if winner != name:
            break
        consecutive += 1
    empties = [e for e in events if e.kind == STORE_EMPTY and e.connection == name]
    return DrainReport(
        connection=name,
        time_to_empty_s=empties[0].timestamp_s if empties else None,
        periods_scheduled_consecutive=consecutive,
        buffer_stayed_minimum=stayed_minimum,
        schedule=tuple(schedule),
        final_buffer_bytes=stores[name].buffered_bytes,
        events=tuple(events),
    )
