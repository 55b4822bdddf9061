"""Log statistics: outlier rules, daily series, connection reports.

The two filtering rules mirror the field analysis: key-rate samples go
through one estimate-then-eliminate 3-sigma pass; QBER samples are
averaged over those at or below the hardware threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pipeline import LogRecord
from .topology import Topology, path_loss, route_length_km

DEFAULT_QBER_THRESHOLD = 0.03125
SECONDS_PER_DAY = 86400.0

REPORT_HEADER = "connection,route,length_km,loss_db,pairing_count,key_rate_kbps,qber"
DAILY_HEADER = "day,connection,key_rate_kbps"


def _check_values(values) -> np.ndarray:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise ValueError("empty sample set")
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples must be finite")
    return arr


def mean_with_3sigma_elimination(
    values, ddof: int = 1, iterate: bool = False
) -> float:
    """Mean after dropping samples more than 3 sigma from the full-set mean.

    One pass by default: mu and sigma come from the complete set, and the
    survivors are averaged without re-estimating. sigma = 0 keeps all.
    """
    arr = _check_values(values)
    while True:
        mu = float(arr.mean())
        sigma = float(arr.std(ddof=ddof)) if arr.size > ddof else 0.0
        if sigma == 0.0:
            return mu
        keep = np.abs(arr - mu) <= 3.0 * sigma
        survivors = arr[keep]
        if survivors.size == 0:
            return mu
        if not iterate or survivors.size == arr.size:
            return float(survivors.mean())
        arr = survivors


def mean_qber_with_threshold(
    values, threshold: float = DEFAULT_QBER_THRESHOLD
) -> float | None:
    """Mean over samples at or below the threshold; None if none survive."""
    arr = _check_values(values)
    keep = arr[arr <= threshold]
    if keep.size == 0:
        return None
    return float(keep.mean())


def daily_series(
    samples, day_boundary_s: float = SECONDS_PER_DAY
) -> list[tuple[int, float]]:
    """Bucket (timestamp, value) pairs by simulated day; 3-sigma mean each."""
    buckets: dict[int, list[float]] = {}
    for ts, value in samples:
        buckets.setdefault(int(ts // day_boundary_s), []).append(float(value))
    # bucket values sorted so the result is bit-identical under input permutation
    return [
        (day, mean_with_3sigma_elimination(sorted(buckets[day])))
        for day in sorted(buckets)
    ]


# --- log handling ---------------------------------------------------------------

def parse_log(text: str) -> list[LogRecord]:
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            records.append(LogRecord.from_line(line))
        except ValueError as exc:
            raise ValueError(f"log line {lineno}: {exc}") from exc
    return records


def rate_samples_kbps(
    records: list[LogRecord], block_seconds: float = 1.0
) -> list[tuple[float, float]]:
    """(timestamp, kbps) for every round that delivered key."""
    return [
        (r.timestamp_s, r.key_bits_out / block_seconds / 1000.0)
        for r in records
        if r.key_bits_out > 0
    ]


@dataclass(frozen=True)
class ConnectionReport:
    connection: str
    route: str
    length_km: float | None
    loss_db: float
    pairing_count: int
    key_rate_kbps: float | None
    qber: float | None

    def to_csv_row(self) -> str:
        length = "" if self.length_km is None else f"{self.length_km:.2f}"
        rate = "" if self.key_rate_kbps is None else f"{self.key_rate_kbps:.3f}"
        qber = "" if self.qber is None else f"{self.qber:.6f}"
        return (
            f"{self.connection},{self.route},{length},{self.loss_db:.2f},"
            f"{self.pairing_count},{rate},{qber}"
        )


def build_report(
    records: list[LogRecord],
    topology: Topology,
    block_seconds: float = 1.0,
    requeue_s: float = 1800.0,
    qber_threshold: float = DEFAULT_QBER_THRESHOLD,
) -> list[ConnectionReport]:
    """One row per connection seen in the log: route, loss, counts, means."""
    by_conn: dict[str, list[LogRecord]] = {}
    for rec in records:
        by_conn.setdefault(rec.connection, []).append(rec)
    rows = []
    for conn in sorted(by_conn):
        recs = by_conn[conn]
        tx, _, rx = conn.partition("-")
        route = topology.route_for(tx, rx)
        if route is None:
            raise ValueError(f"no route on file for logged connection {conn!r}")
        loss = path_loss(topology, route).total_dB
        length = route_length_km(topology, route)
        epochs = {int(r.timestamp_s // requeue_s) for r in recs}
        rates = [v for _, v in rate_samples_kbps(recs, block_seconds)]
        qbers = [r.qber for r in recs if r.qber >= 0.0]
        rows.append(
            ConnectionReport(
                connection=conn,
                route=recs[0].route,
                length_km=length,
                loss_db=loss,
                pairing_count=len(epochs),
                key_rate_kbps=(
                    mean_with_3sigma_elimination(rates) if rates else None
                ),
                qber=(
                    mean_qber_with_threshold(qbers, qber_threshold)
                    if qbers
                    else None
                ),
            )
        )
    return rows


def report_to_csv(rows: list[ConnectionReport]) -> str:
    lines = [REPORT_HEADER]
    lines.extend(row.to_csv_row() for row in rows)
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> list[ConnectionReport]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError("missing or unexpected report header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 7:
            raise ValueError(f"report line {lineno}: expected 7 columns")
        conn, route, length, loss, count, rate, qber = parts
        rows.append(
            ConnectionReport(
                connection=conn,
                route=route,
                length_km=float(length) if length else None,
                loss_db=float(loss),
                pairing_count=int(count),
                key_rate_kbps=float(rate) if rate else None,
                qber=float(qber) if qber else None,
            )
        )
    return rows


def build_daily_table(
    records: list[LogRecord],
    block_seconds: float = 1.0,
    day_boundary_s: float = SECONDS_PER_DAY,
) -> list[tuple[int, str, float]]:
    """(day, connection, mean kbps) rows, gnuplot-ready."""
    by_conn: dict[str, list[LogRecord]] = {}
    for rec in records:
        by_conn.setdefault(rec.connection, []).append(rec)
    out = []
    for conn in sorted(by_conn):
        samples = rate_samples_kbps(by_conn[conn], block_seconds)
        for day, mean in daily_series(samples, day_boundary_s):
            out.append((day, conn, mean))
    out.sort(key=lambda r: (r[0], r[1]))
    return out


def daily_to_csv(rows: list[tuple[int, str, float]]) -> str:
    lines = [DAILY_HEADER]
    lines.extend(f"{day},{conn},{kbps:.3f}" for day, conn, kbps in rows)
    return "\n".join(lines) + "\n"
