"""FastAPI application wrapping the simulator core."""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__, kms, stats, timing, topology
from ..auth import (
    AuthError,
    AuthSession,
    CertificateAuthority,
    SessionState,
    make_identity,
    run_handshake,
)
from ..simulation import (
    compare_auth_modes,
    config_from_dict,
    read_ref,
    simulate,
    write_artifacts,
)
from . import schemas

HANDSHAKE_BUDGET_MS = 100.0


def _load_topology(body: schemas.TopologyBody) -> topology.Topology:
    if body.topology_text is not None:
        text = body.topology_text
    else:
        text = read_ref(body.topology, base_dir=None)
    return topology.load_topology(text)


def _pair_name(pair: tuple[str, str]) -> str:
    return f"{pair[0]}-{pair[1]}"


def create_app() -> FastAPI:
    app = FastAPI(title="qkdnet", version=__version__)

    @app.exception_handler(ValueError)
    async def _value_error(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/topo/loss-matrix", response_model=schemas.LossMatrixResponse)
    def loss_matrix(body: schemas.LossMatrixRequest):
        topo = _load_topology(body)
        policy = topology.FeasibilityPolicy(
            max_loss_dB=body.max_loss_db if body.max_loss_db else 1e9,
            max_switches_per_path=body.max_switches,
        )
        return schemas.LossMatrixResponse(
            matrix_text=topology.format_loss_matrix(topo, policy),
            transmitters=topo.transmitters(),
            receivers=topo.receivers(),
        )

    @app.post("/topo/feasible", response_model=schemas.FeasibleResponse)
    def feasible(body: schemas.FeasibleRequest):
        topo = _load_topology(body)
        policy = topology.FeasibilityPolicy(
            max_loss_dB=body.max_loss_db,
            max_switches_per_path=body.max_switches,
        )
        ok, by_loss, by_switch = topology.classify_connections(topo, policy)
        return schemas.FeasibleResponse(
            feasible=sorted(map(_pair_name, ok)),
            excluded_by_loss=sorted(map(_pair_name, by_loss)),
            excluded_by_switches=sorted(map(_pair_name, by_switch)),
        )

    @app.post("/topo/derive-segments", response_model=schemas.DeriveSegmentsResponse)
    def derive_segments(body: schemas.DeriveSegmentsRequest):
        topo = _load_topology(body)
        measured = topology.parse_loss_matrix(body.matrix_text)
        routes = {(r.transmitter, r.receiver): r for r in topo.routes}
        # cells measured over pairs outside the deployed route table (for
        # example loss-excluded but still routable) fall back to the
        # cheapest switch-legal path, matching how the matrix is printed
        wide = topology.FeasibilityPolicy(max_loss_dB=1e9)
        for pair in measured:
            if pair not in routes:
                route = topology.min_loss_route(topo, *pair, wide)
                if route is not None:
                    routes[pair] = route
        derivation = topology.derive_segment_losses(
            measured, routes, body.residual_tolerance_db
        )
        return schemas.DeriveSegmentsResponse(
            segments_db={f"{a}-{b}": v for (a, b), v in derivation.losses.items()},
            max_residual_db=derivation.max_residual_dB,
            rank=derivation.rank,
            n_unknowns=derivation.n_unknowns,
            rank_deficient=derivation.rank_deficient,
        )

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate_endpoint(body: schemas.SimulateRequest):
        config = config_from_dict(body.config)
        result = simulate(config)
        out_dir = None
        if body.write_artifacts:
            out_dir = str(write_artifacts(result, body.out_dir))
        daily = stats.build_daily_table(result.records, config.block_seconds)
        return schemas.SimulateResponse(
            summary=result.summary,
            report_csv=stats.report_to_csv(result.report_rows),
            daily_csv=stats.daily_to_csv(daily),
            log_lines=len(result.records),
            out_dir=out_dir,
        )

    @app.post("/report/build", response_model=schemas.ReportBuildResponse)
    def report_build(body: schemas.ReportBuildRequest):
        topo = _load_topology(body)
        records = stats.parse_log(body.log_text)
        rows = stats.build_report(
            records, topo, block_seconds=body.block_seconds, requeue_s=body.requeue_s
        )
        return schemas.ReportBuildResponse(report_csv=stats.report_to_csv(rows))

    @app.post("/report/daily", response_model=schemas.ReportDailyResponse)
    def report_daily(body: schemas.ReportDailyRequest):
        records = stats.parse_log(body.log_text)
        rows = stats.build_daily_table(records, body.block_seconds)
        return schemas.ReportDailyResponse(daily_csv=stats.daily_to_csv(rows))

    @app.post("/compare-auth", response_model=schemas.CompareAuthResponse)
    def compare_auth(body: schemas.CompareAuthRequest):
        doc = dict(body.config)
        doc.setdefault("seed", 20220314)
        doc.setdefault("duration_s", 6 * 1800.0)
        doc.setdefault("round_interval_s", 300.0)
        config = config_from_dict(doc)
        comparison = compare_auth_modes(config, connection=body.connection)
        return schemas.CompareAuthResponse(**comparison.to_dict())

    @app.post("/handshake-demo", response_model=schemas.HandshakeDemoResponse)
    def handshake_demo(body: schemas.HandshakeDemoRequest):
        model = timing.handshake_timing(
            delay_s=body.delay_s,
            bandwidth_bytes_per_s=body.bandwidth_bytes_per_s,
            op_costs_s={"sign": body.sign_op_s, "verify": body.verify_op_s},
        )
        ca = CertificateAuthority("CA", seed=b"\x11" * 32)
        alice = make_identity(ca, "U4", b"\x22" * 32, np.random.default_rng(1))
        bob = make_identity(ca, "U3", b"\x33" * 32, np.random.default_rng(2))
        session_a = AuthSession(identity=alice, ca_public_key=ca.public_key, now=0.0)
        session_b = AuthSession(identity=bob, ca_public_key=ca.public_key, now=0.0)
        tamper = None
        if body.tamper_message is not None:
            tamper = (body.tamper_message, body.tamper_byte or 0)
        try:
            wire = run_handshake(session_a, session_b, tamper=tamper)
        except AuthError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        if (
            session_a.state is SessionState.AUTHENTICATED
            and session_b.state is SessionState.AUTHENTICATED
        ):
            outcome = "authenticated"
            reason = None
        else:
            outcome = "failed"
            reason = session_a.fail_reason or session_b.fail_reason
        return schemas.HandshakeDemoResponse(
            total_ms=model.total_s * 1e3,
            within_budget_ms=HANDSHAKE_BUDGET_MS,
            phases=[
                schemas.PhaseRow(
                    name=p.name,
                    start_ms=p.start_s * 1e3,
                    end_ms=p.end_s * 1e3,
                    duration_ms=p.duration_s * 1e3,
                )
                for p in sorted(model.phases, key=lambda p: (p.start_s, p.end_s))
            ],
            frame_bytes=model.frame_bytes,
            outcome=outcome,
            fail_reason=reason,
            messages=[
                schemas.WireMessage(sender=s, size_bytes=len(b)) for s, b in wire
            ],
        )

    @app.post("/kms/schedule", response_model=schemas.KmsScheduleResponse)
    def kms_schedule(body: schemas.KmsScheduleRequest):
        topo = _load_topology(body)
        policy = topology.FeasibilityPolicy(
            max_loss_dB=body.max_loss_db,
            max_switches_per_path=body.max_switches,
        )
        if body.connections is not None:
            names = list(body.connections)
        else:
            names = sorted(
                map(_pair_name, topology.feasible_connections(topo, policy))
            )
        stores = {
            c: kms.KeyStore(c, buffered_bytes=body.buffered_bytes.get(c, 0.0))
            for c in names
        }
        queue = kms.QueuePolicy(requeue_interval_s=body.requeue_s)
        schedule = kms.select_pairings(names, stores, topo, queue)
        return schemas.KmsScheduleResponse(
            active=list(schedule.active),
            epoch_length_s=schedule.epoch_length_s,
            order=queue.order(names, stores),
        )

    @app.post("/kms/drain-scenario", response_model=schemas.DrainScenarioResponse)
    def drain_scenario(body: schemas.DrainScenarioRequest):
        config = body.model_dump()
        if config.get("peer_initial_bytes") is None:
            config.pop("peer_initial_bytes", None)
        report = kms.run_drain_scenario(config)
        return schemas.DrainScenarioResponse(**report.to_dict())

    return app


app = create_app()
