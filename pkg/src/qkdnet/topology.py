"""Switched metro network model: nodes, fiber segments, routes, attenuation.

Path loss is the sum of fiber segment losses plus a fixed insertion loss
per interior optical switch. Feasibility of a transmitter-receiver pair is
decided by searching for a route that stays within a switch-count limit
and a total-loss budget. Per-segment losses can also be derived from a
measured end-to-end loss matrix by least squares.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SWITCH_INSERTION_DB = 1.5


class TopologyError(ValueError):
    pass


class NodeKind(Enum):
    TRANSMITTER = "transmitter"
    RECEIVER = "receiver"
    SWITCH = "switch"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind


@dataclass(frozen=True)
class FiberSegment:
    a: str
    b: str
    loss_dB: float
    length_km: float | None = None

    def key(self) -> tuple[str, str]:
        return (self.a, self.b) if self.a <= self.b else (self.b, self.a)


@dataclass(frozen=True)
class Route:
    transmitter: str
    receiver: str
    hops: tuple[str, ...]   # full node sequence, transmitter first

    def interior(self) -> tuple[str, ...]:
        return self.hops[1:-1]

    def __str__(self) -> str:
        return "->".join(self.hops)


@dataclass(frozen=True)
class PathLoss:
    fiber_dB: float
    switch_dB: float

    @property
    def total_dB(self) -> float:
        return self.fiber_dB + self.switch_dB


@dataclass(frozen=True)
class FeasibilityPolicy:
    max_loss_dB: float = 13.8
    max_switches_per_path: int = 2

    def __post_init__(self):
        if self.max_loss_dB <= 0:
            raise ValueError("max_loss_dB must be positive")
        if self.max_switches_per_path < 1:
            raise ValueError("max_switches_per_path must be >= 1")


@dataclass
class Topology:
    nodes: dict[str, Node] = field(default_factory=dict)
    segments: dict[tuple[str, str], FiberSegment] = field(default_factory=dict)
    routes: list[Route] = field(default_factory=list)

    def node_kind(self, node_id: str) -> NodeKind:
        try:
            return self.nodes[node_id].kind
        except KeyError:
            raise TopologyError(f"unknown node {node_id!r}") from None

    def segment(self, a: str, b: str) -> FiberSegment:
        key = (a, b) if a <= b else (b, a)
        try:
            return self.segments[key]
        except KeyError:
            raise TopologyError(f"no fiber segment between {a!r} and {b!r}") from None

    def neighbors(self, node_id: str) -> list[str]:
        out = []
        for a, b in self.segments:
            if a == node_id:
                out.append(b)
            elif b == node_id:
                out.append(a)
        return sorted(out)

    def transmitters(self) -> list[str]:
        return sorted(n.id for n in self.nodes.values() if n.kind is NodeKind.TRANSMITTER)

    def receivers(self) -> list[str]:
        return sorted(n.id for n in self.nodes.values() if n.kind is NodeKind.RECEIVER)

    def route_for(self, transmitter: str, receiver: str) -> Route | None:
        for r in self.routes:
            if r.transmitter == transmitter and r.receiver == receiver:
                return r
        return None

    def validate_route(self, route: Route) -> None:
        if len(route.hops) < 2:
            raise TopologyError(f"route {route} has fewer than two hops")
        if len(set(route.hops)) != len(route.hops):
            raise TopologyError(f"route {route} repeats a node")
        if route.hops[0] != route.transmitter or route.hops[-1] != route.receiver:
            raise TopologyError(f"route {route} endpoints disagree with hops")
        for hop in route.hops:
            if hop not in self.nodes:
                raise TopologyError(f"route {route} uses unknown node {hop!r}")
        for hop in route.interior():
            if self.node_kind(hop) is not NodeKind.SWITCH:
                raise TopologyError(f"route {route} interior node {hop!r} is not a switch")
        for a, b in zip(route.hops, route.hops[1:]):
            self.segment(a, b)


_KINDS = {k.value: k for k in NodeKind}


def load_topology(config_text: str) -> Topology:
    """Parse the sectioned text grammar: [nodes], [segments], [routes]."""
    topo = Topology()
    section = None
    for lineno, raw in enumerate(config_text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("nodes", "segments", "routes"):
                raise TopologyError(f"line {lineno}: unknown section [{section}]")
            continue
        if section is None:
            raise TopologyError(f"line {lineno}: content before any section header")
        parts = line.split()
        if section == "nodes":
            if len(parts) != 2:
                raise TopologyError(f"line {lineno}: expected 'id kind'")
            node_id, kind_s = parts
            if kind_s.lower() not in _KINDS:
                raise TopologyError(f"line {lineno}: unknown node kind {kind_s!r}")
            if node_id in topo.nodes:
                raise TopologyError(f"line {lineno}: duplicate node {node_id!r}")
            topo.nodes[node_id] = Node(node_id, _KINDS[kind_s.lower()])
        elif section == "segments":
            if len(parts) not in (3, 4):
                raise TopologyError(f"line {lineno}: expected 'a b loss_dB [length_km]'")
            a, b = parts[0], parts[1]
            for end in (a, b):
                if end not in topo.nodes:
                    raise TopologyError(f"line {lineno}: unknown node {end!r}")
            try:
                loss = float(parts[2])
                length = float(parts[3]) if len(parts) == 4 else None
            except ValueError:
                raise TopologyError(f"line {lineno}: bad numeric field") from None
            if loss < 0 or (length is not None and length < 0):
                raise TopologyError(f"line {lineno}: negative loss or length")
            seg = FiberSegment(a, b, loss, length)
            if seg.key() in topo.segments:
                raise TopologyError(f"line {lineno}: duplicate segment {a}-{b}")
            topo.segments[seg.key()] = seg
        else:
            if len(parts) < 3:
                raise TopologyError(f"line {lineno}: expected 'tx rx hop1 [hop2 ...]'")
            tx, rx, hops = parts[0], parts[1], tuple(parts[2:])
            route = Route(tx, rx, (tx,) + hops + (rx,))
            try:
                topo.validate_route(route)
            except TopologyError as exc:
                raise TopologyError(f"line {lineno}: {exc}") from None
            topo.routes.append(route)
    return topo


def path_loss(topology: Topology, route: Route) -> PathLoss:
    fiber = 0.0
    for a, b in zip(route.hops, route.hops[1:]):
        fiber += topology.segment(a, b).loss_dB
    switches = sum(
        1 for hop in route.interior()
        if topology.node_kind(hop) is NodeKind.SWITCH
    )
    return PathLoss(fiber_dB=fiber, switch_dB=SWITCH_INSERTION_DB * switches)


def route_length_km(topology: Topology, route: Route) -> float | None:
    total = 0.0
    for a, b in zip(route.hops, route.hops[1:]):
        length = topology.segment(a, b).length_km
        if length is None:
            return None
        total += length
    return total


def _enumerate_routes(topology: Topology, tx: str, rx: str, max_switches: int):
    """All simple tx->rx paths whose interior nodes are switches."""
    results: list[Route] = []
    stack = [(tx, (tx,))]
    while stack:
        node, path = stack.pop()
        for nxt in topology.neighbors(node):
            if nxt in path:
                continue
            if nxt == rx:
                results.append(Route(tx, rx, path + (rx,)))
            elif (
                topology.node_kind(nxt) is NodeKind.SWITCH
                and len(path) - 1 < max_switches
            ):
                stack.append((nxt, path + (nxt,)))
    return results


def min_loss_route(
    topology: Topology, transmitter: str, receiver: str, policy: FeasibilityPolicy
) -> Route | None:
    """Admissible route minimizing total loss.

    Ties break toward fewer hops, then lexicographic hop names. Returns
    None when no route satisfies the switch-count limit; the loss budget
    is checked by the caller (feasible_connections), not here.
    """
    if transmitter not in topology.nodes or receiver not in topology.nodes:
        raise TopologyError(f"unknown endpoint {transmitter!r} or {receiver!r}")
    candidates = _enumerate_routes(
        topology, transmitter, receiver, policy.max_switches_per_path
    )
    if not candidates:
        return None
    return min(
        candidates,
        key=lambda r: (path_loss(topology, r).total_dB, len(r.hops), r.hops),
    )


def classify_connections(
    topology: Topology, policy: FeasibilityPolicy
) -> tuple[set[tuple[str, str]], set[tuple[str, str]], set[tuple[str, str]]]:
    """Split all tx/rx pairs into (feasible, excluded_by_loss, excluded_by_switches)."""
    feasible, by_loss, by_switch = set(), set(), set()
    for tx in topology.transmitters():
        for rx in topology.receivers():
            route = min_loss_route(topology, tx, rx, policy)
            if route is None:
                by_switch.add((tx, rx))
            elif path_loss(topology, route).total_dB <= policy.max_loss_dB:
                feasible.add((tx, rx))
            else:
                by_loss.add((tx, rx))
    return feasible, by_loss, by_switch


def feasible_connections(
    topology: Topology, policy: FeasibilityPolicy
) -> set[tuple[str, str]]:
    return classify_connections(topology, policy)[0]


@dataclass
class SegmentDerivation:
    losses: dict[tuple[str, str], float]
    residuals: dict[tuple[str, str], float]   # per (tx, rx) equation
    max_residual_dB: float
    rank: int
    n_unknowns: int

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.n_unknowns


def derive_segment_losses(
    loss_matrix: dict[tuple[str, str], float],
    route_table: dict[tuple[str, str], Route],
    residual_tolerance_dB: float = 0.01,
) -> SegmentDerivation:
    """Least-squares per-segment losses from end-to-end measurements.

    One equation per known matrix cell: the segment losses along that
    pair's route must sum to the measured total minus the switch
    insertion losses. Rank-deficient systems yield the minimum-norm
    solution (flagged via rank < n_unknowns).
    """
    missing = sorted(set(loss_matrix) - set(route_table))
    if missing:
        raise TopologyError(f"no route for measured pair(s) {missing[:3]}")
    seg_keys = sorted({
        (a, b) if a <= b else (b, a)
        for route in route_table.values()
        for a, b in zip(route.hops, route.hops[1:])
    })
    seg_idx = {k: i for i, k in enumerate(seg_keys)}
    pairs = sorted(loss_matrix)
    a_mat = np.zeros((len(pairs), len(seg_keys)))
    rhs = np.zeros(len(pairs))
    for row, pair in enumerate(pairs):
        route = route_table[pair]
        for x, y in zip(route.hops, route.hops[1:]):
            a_mat[row, seg_idx[(x, y) if x <= y else (y, x)]] += 1.0
        rhs[row] = loss_matrix[pair] - SWITCH_INSERTION_DB * len(route.interior())
    solution, _, rank, _ = np.linalg.lstsq(a_mat, rhs, rcond=None)
    resid = a_mat @ solution - rhs
    max_resid = float(np.abs(resid).max()) if len(pairs) else 0.0
    if max_resid > residual_tolerance_dB:
        raise TopologyError(
            f"loss matrix inconsistent with routes: residual {max_resid:.4f} dB "
            f"exceeds {residual_tolerance_dB} dB"
        )
    return SegmentDerivation(
        losses={k: float(v) for k, v in zip(seg_keys, solution)},
        residuals={p: float(r) for p, r in zip(pairs, resid)},
        max_residual_dB=max_resid,
        rank=int(rank),
        n_unknowns=len(seg_keys),
    )


def format_loss_matrix(
    topology: Topology, policy: FeasibilityPolicy | None = None
) -> str:
    """Text loss matrix: rows receivers, columns transmitters, '-' where
    no route satisfies the switch limit."""
    policy = policy or FeasibilityPolicy(max_loss_dB=1e9)
    txs, rxs = topology.transmitters(), topology.receivers()
    lines = ["# rows: receivers, columns: transmitters, total path loss in dB"]
    lines.append("\t".join(["."] + txs))
    for rx in rxs:
        cells = [rx]
        for tx in txs:
            route = topology.route_for(tx, rx)
            if route is None:
                route = min_loss_route(topology, tx, rx, policy)
            if route is None:
                cells.append("-")
            else:
                cells.append(f"{path_loss(topology, route).total_dB:.2f}")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def parse_loss_matrix(text: str) -> dict[tuple[str, str], float]:
    """Inverse of format_loss_matrix: (transmitter, receiver) -> dB."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows:
        raise TopologyError("empty loss matrix")
    header = rows[0][1]
    if header[0] != ".":
        raise TopologyError(f"line {rows[0][0]}: header must start with '.'")
    txs = header[1:]
    out: dict[tuple[str, str], float] = {}
    for lineno, cells in rows[1:]:
        if len(cells) != len(txs) + 1:
            raise TopologyError(f"line {lineno}: expected {len(txs) + 1} columns")
        rx = cells[0]
        for tx, cell in zip(txs, cells[1:]):
            if cell == "-":
                continue
            try:
                out[(tx, rx)] = float(cell)
            except ValueError:
                raise TopologyError(f"line {lineno}: bad cell {cell!r}") from None
    return out
