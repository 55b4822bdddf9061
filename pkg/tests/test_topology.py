"""Topology grammar, loss budgets, feasibility arithmetic, segment derivation."""
import numpy as np
import pytest

from qkdnet.simulation import read_ref
from qkdnet.topology import (
    SWITCH_INSERTION_DB,
    FeasibilityPolicy,
    NodeKind,
    TopologyError,
    classify_connections,
    derive_segment_losses,
    feasible_connections,
    format_loss_matrix,
    load_topology,
    min_loss_route,
    parse_loss_matrix,
    path_loss,
    route_length_km,
)

from reference_data import ROUTE_SURVEY

MINI = """
[nodes]
A transmitter
B receiver
S switch
T switch

[segments]
A S 1.0 0.5
S B 2.0 0.7
S T 0.5 0.1
T B 0.25 0.2

[routes]
A B S
"""


def test_mini_topology_loads():
    topo = load_topology(MINI)
    assert topo.node_kind("S") is NodeKind.SWITCH
    assert topo.transmitters() == ["A"]
    assert topo.receivers() == ["B"]
    route = topo.route_for("A", "B")
    assert route.hops == ("A", "S", "B")
    pl = path_loss(topo, route)
    assert pl.fiber_dB == pytest.approx(3.0)
    assert pl.switch_dB == pytest.approx(SWITCH_INSERTION_DB)


def test_min_loss_route_prefers_cheaper_path():
    topo = load_topology(MINI)
    # A-S-T-B: fiber 1.75 + two switches 3.0 = 4.75; A-S-B: 3.0 + 1.5 = 4.5
    route = min_loss_route(topo, "A", "B", FeasibilityPolicy(max_loss_dB=1e9))
    assert route.hops == ("A", "S", "B")
    one_switch = min_loss_route(
        topo, "A", "B", FeasibilityPolicy(max_loss_dB=1e9, max_switches_per_path=1)
    )
    assert one_switch.hops == ("A", "S", "B")


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("A transmitter", "before any section"),
        ("[nodes]\nA flying", "unknown node kind"),
        ("[nodes]\nA transmitter\nA receiver", "duplicate node"),
        ("[nodes]\nA transmitter\n[segments]\nA B 1.0", "unknown node"),
        ("[nodes]\nA transmitter\nB receiver\n[segments]\nA B x1", "bad numeric"),
        ("[nodes]\nA transmitter\nB receiver\n[segments]\nA B -1.0", "negative"),
        (
            "[nodes]\nA transmitter\nB receiver\n[segments]\nA B 1.0\nB A 2.0",
            "duplicate segment",
        ),
        ("[wires]\nA B", "unknown section"),
        (
            "[nodes]\nA transmitter\nB receiver\nC receiver\n"
            "[segments]\nA C 1.0\nC B 1.0\n[routes]\nA B C",
            "not a switch",
        ),
    ],
)
def test_grammar_errors(text, fragment):
    with pytest.raises(TopologyError, match=fragment):
        load_topology(text)


# --- shipped metro config ----------------------------------------------------

def test_survey_route_losses(metro_topology):
    for conn, (_length, loss_db, *_rest) in ROUTE_SURVEY.items():
        tx, rx = conn.split("-")
        route = metro_topology.route_for(tx, rx)
        assert route is not None, conn
        assert path_loss(metro_topology, route).total_dB == pytest.approx(
            loss_db, abs=0.01
        ), conn


def test_survey_route_lengths(metro_topology):
    # segment lengths are an underdetermined least-squares fit of the
    # surveyed route lengths; per-route agreement is loose, not exact
    for conn, (length_km, *_rest) in ROUTE_SURVEY.items():
        tx, rx = conn.split("-")
        route = metro_topology.route_for(tx, rx)
        assert route_length_km(metro_topology, route) == pytest.approx(
            length_km, abs=1.0
        ), conn


def test_classification_counts(metro_topology, default_policy):
    feasible, loss_x, switch_x = classify_connections(metro_topology, default_policy)
    assert len(feasible) == 30
    assert len(loss_x) == 11
    assert len(switch_x) == 8
    assert len(feasible | loss_x | switch_x) == 49
    assert feasible_connections(metro_topology, default_policy) == feasible


def test_classification_membership(metro_topology, default_policy):
    feasible, loss_x, switch_x = classify_connections(metro_topology, default_policy)
    assert ("U4", "U3") in feasible
    assert ("U11", "U1") in loss_x        # 14.47 dB > 13.8 dB budget
    assert ("U7", "U13") in switch_x      # would need a third switch
    assert {tx for tx, _ in switch_x} == {"U7", "U8", "U11", "U12"}
    assert {rx for _, rx in switch_x} == {"U13", "U14"}


def test_min_loss_route_against_exhaustive_search(metro_topology):
    # independent DFS over simple paths with switch-only interiors
    topo = metro_topology
    adj: dict[str, list[str]] = {}
    for a, b in topo.segments:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)

    def best_loss(tx, rx, max_switches):
        stack = [(tx, (tx,))]
        best = None
        while stack:
            node, path = stack.pop()
            if node == rx:
                fiber = sum(
                    topo.segment(x, y).loss_dB for x, y in zip(path, path[1:])
                )
                total = fiber + SWITCH_INSERTION_DB * (len(path) - 2)
                if best is None or total < best:
                    best = total
                continue
            for nxt in adj.get(node, ()):
                if nxt in path:
                    continue
                if nxt != rx:
                    if topo.node_kind(nxt) is not NodeKind.SWITCH:
                        continue
                    if len(path) - 1 >= max_switches:
                        continue
                stack.append((nxt, path + (nxt,)))
        return best

    wide = FeasibilityPolicy(max_loss_dB=1e9)
    for tx in topo.transmitters():
        for rx in topo.receivers():
            route = min_loss_route(topo, tx, rx, wide)
            expected = best_loss(tx, rx, wide.max_switches_per_path)
            if expected is None:
                assert route is None, (tx, rx)
            else:
                assert route is not None, (tx, rx)
                assert path_loss(topo, route).total_dB == pytest.approx(expected)


def test_segment_derivation_reproduces_matrix(metro_topology):
    matrix = parse_loss_matrix(read_ref("builtin:jinan_loss_matrix.txt", None))
    assert len(matrix) == 41
    wide = FeasibilityPolicy(max_loss_dB=1e9)
    routes = {}
    for pair in matrix:
        routes[pair] = metro_topology.route_for(*pair) or min_loss_route(
            metro_topology, *pair, wide
        )
    derivation = derive_segment_losses(matrix, routes)
    assert derivation.n_unknowns == 20
    assert derivation.rank == 17
    assert derivation.rank_deficient
    assert derivation.max_residual_dB <= 0.01
    # every measured cell is reproduced by the derived segment losses
    for pair, measured in matrix.items():
        route = routes[pair]
        fiber = sum(
            derivation.losses[(a, b) if a <= b else (b, a)]
            for a, b in zip(route.hops, route.hops[1:])
        )
        total = fiber + SWITCH_INSERTION_DB * len(route.interior())
        assert total == pytest.approx(measured, abs=0.01), pair


def test_derivation_rejects_inconsistent_matrix(metro_topology):
    matrix = parse_loss_matrix(read_ref("builtin:jinan_loss_matrix.txt", None))
    routes = {
        pair: metro_topology.route_for(*pair)
        or min_loss_route(metro_topology, *pair, FeasibilityPolicy(max_loss_dB=1e9))
        for pair in matrix
    }
    key = next(iter(matrix))
    matrix[key] += 5.0
    with pytest.raises(TopologyError, match="residual"):
        derive_segment_losses(matrix, routes)


def test_loss_matrix_format_parse_round_trip(metro_topology):
    shipped = parse_loss_matrix(read_ref("builtin:jinan_loss_matrix.txt", None))
    regenerated = parse_loss_matrix(format_loss_matrix(metro_topology))
    assert set(regenerated) == set(shipped)
    for pair, loss in shipped.items():
        assert regenerated[pair] == pytest.approx(loss, abs=0.01), pair
