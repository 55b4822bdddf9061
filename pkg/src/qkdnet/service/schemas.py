"""Request/response bodies for the HTTP API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class TopologyBody(BaseModel):
    """Topology source: inline text wins over the builtin reference."""

    topology_text: str | None = None
    topology: str = "builtin:jinan.topo"


class LossMatrixRequest(TopologyBody):
    max_loss_db: float | None = None
    max_switches: int = 2


class LossMatrixResponse(BaseModel):
    matrix_text: str
    transmitters: list[str]
    receivers: list[str]


class FeasibleRequest(TopologyBody):
    max_loss_db: float = 13.8
    max_switches: int = 2


class FeasibleResponse(BaseModel):
    feasible: list[str]
    excluded_by_loss: list[str]
    excluded_by_switches: list[str]


class DeriveSegmentsRequest(TopologyBody):
    matrix_text: str
    residual_tolerance_db: float = 0.01


class DeriveSegmentsResponse(BaseModel):
    segments_db: dict[str, float]
    max_residual_db: float
    rank: int
    n_unknowns: int
    rank_deficient: bool


class SimulateRequest(BaseModel):
    config: dict
    out_dir: str | None = None
    write_artifacts: bool = True


class SimulateResponse(BaseModel):
    summary: dict
    report_csv: str
    daily_csv: str
    log_lines: int
    out_dir: str | None = None


class ReportBuildRequest(TopologyBody):
    log_text: str
    block_seconds: float = 1.0
    requeue_s: float = 1800.0


class ReportBuildResponse(BaseModel):
    report_csv: str


class ReportDailyRequest(BaseModel):
    log_text: str
    block_seconds: float = 1.0


class ReportDailyResponse(BaseModel):
    daily_csv: str


class CompareAuthRequest(BaseModel):
    connection: str
    config: dict = Field(default_factory=dict)


class CompareAuthResponse(BaseModel):
    connection: str
    rate_pqc_kbps: float
    rate_preshared_kbps: float
    delta_fraction: float
    rounds: int


class HandshakeDemoRequest(BaseModel):
    delay_s: float = 0.010
    bandwidth_bytes_per_s: float | None = 100_000.0
    sign_op_s: float = 0.010
    verify_op_s: float = 0.010
    tamper_message: int | None = None
    tamper_byte: int | None = None


class PhaseRow(BaseModel):
    name: str
    start_ms: float
    end_ms: float
    duration_ms: float


class WireMessage(BaseModel):
    sender: str
    size_bytes: int


class HandshakeDemoResponse(BaseModel):
    total_ms: float
    within_budget_ms: float
    phases: list[PhaseRow]
    frame_bytes: dict[str, int]
    outcome: str
    fail_reason: str | None
    messages: list[WireMessage]


class KmsScheduleRequest(TopologyBody):
    buffered_bytes: dict[str, float] = Field(default_factory=dict)
    connections: list[str] | None = None
    requeue_s: float = 1800.0
    max_loss_db: float = 13.8
    max_switches: int = 2


class KmsScheduleResponse(BaseModel):
    active: list[str]
    epoch_length_s: float
    order: list[str]


class DrainScenarioRequest(BaseModel):
    connection: str
    initial_bytes: float
    consumer_Bps: float
    generation_bps: float
    requeue_s: float
    horizon_periods: int
    peer_count: int = 3
    peer_initial_bytes: float | None = None


class DrainScenarioResponse(BaseModel):
    connection: str
    time_to_empty_s: float | None
    periods_scheduled_consecutive: int
    buffer_stayed_minimum: bool
    schedule: list[str]
    final_buffer_bytes: float
    events: list[dict]
