"""Command-line client for the simulator service.

Every subcommand talks HTTP: in-process against the bundled app by
default, or against a running server via --url. Outputs are plain text
or JSON (--json) so they pipe cleanly.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx
import yaml


def _request(url: str | None, path: str, body: dict) -> httpx.Response:
    if url:
        with httpx.Client(base_url=url, timeout=600.0) as client:
            return client.post(path, json=body)

    import asyncio

    from .service.app import create_app

    async def go() -> httpx.Response:
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://qkdnet", timeout=600.0
        ) as client:
            return await client.post(path, json=body)

    return asyncio.run(go())


def _post(ctx: click.Context, path: str, body: dict) -> dict:
    response = _request(ctx.obj.get("url"), path, body)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise click.ClickException(f"{path} failed ({response.status_code}): {detail}")
    return response.json()


def _emit(ctx: click.Context, payload: dict, text: str) -> None:
    if ctx.obj.get("json"):
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        click.echo(text)


def _topology_body(topology_file: str | None) -> dict:
    if topology_file:
        return {"topology_text": Path(topology_file).read_text()}
    return {}


@click.group()
@click.option("--url", default=None, help="Remote service URL (default: in-process).")
@click.option("--json", "as_json", is_flag=True, help="Emit raw JSON responses.")
@click.pass_context
def main(ctx: click.Context, url: str | None, as_json: bool) -> None:
    """Metro QKD network simulator."""
    ctx.ensure_object(dict)
    ctx.obj["url"] = url
    ctx.obj["json"] = as_json


@main.group()
def topo() -> None:
    """Topology and loss-budget tools."""


@topo.command("loss-matrix")
@click.option("--topology", "topology_file", type=click.Path(exists=True), default=None)
@click.option("--max-switches", default=2, show_default=True)
@click.pass_context
def topo_loss_matrix(ctx, topology_file, max_switches):
    """Print the transmitter x receiver path-loss matrix."""
    body = {**_topology_body(topology_file), "max_switches": max_switches}
    data = _post(ctx, "/topo/loss-matrix", body)
    _emit(ctx, data, data["matrix_text"])


@topo.command("feasible")
@click.option("--topology", "topology_file", type=click.Path(exists=True), default=None)
@click.option("--max-loss-db", default=13.8, show_default=True)
@click.option("--max-switches", default=2, show_default=True)
@click.pass_context
def topo_feasible(ctx, topology_file, max_loss_db, max_switches):
    """List feasible connections and both exclusion sets."""
    body = {
        **_topology_body(topology_file),
        "max_loss_db": max_loss_db,
        "max_switches": max_switches,
    }
    data = _post(ctx, "/topo/feasible", body)
    lines = [
        f"feasible ({len(data['feasible'])}): {' '.join(data['feasible'])}",
        f"excluded by loss ({len(data['excluded_by_loss'])}): "
        f"{' '.join(data['excluded_by_loss'])}",
        f"excluded by switch limit ({len(data['excluded_by_switches'])}): "
        f"{' '.join(data['excluded_by_switches'])}",
    ]
    _emit(ctx, data, "\n".join(lines))


@topo.command("derive-segments")
@click.option("--matrix", "matrix_file", type=click.Path(exists=True), required=True)
@click.option("--topology", "topology_file", type=click.Path(exists=True), default=None)
@click.option("--tolerance-db", default=0.01, show_default=True)
@click.pass_context
def topo_derive_segments(ctx, matrix_file, topology_file, tolerance_db):
    """Solve per-segment losses from an end-to-end loss matrix."""
    body = {
        **_topology_body(topology_file),
        "matrix_text": Path(matrix_file).read_text(),
        "residual_tolerance_db": tolerance_db,
    }
    data = _post(ctx, "/topo/derive-segments", body)
    lines = [
        f"{seg}\t{loss:.3f}" for seg, loss in sorted(data["segments_db"].items())
    ]
    lines.append(
        f"max residual {data['max_residual_db']:.3e} dB, "
        f"rank {data['rank']}/{data['n_unknowns']}"
        + (" (rank deficient: minimum-norm gauge)" if data["rank_deficient"] else "")
    )
    _emit(ctx, data, "\n".join(lines))


def _load_config_doc(config_file: str) -> dict:
    path = Path(config_file)
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict):
        raise click.ClickException("config must be a YAML mapping")
    # inline referenced files so a remote service never needs our paths
    for key, text_key in (("topology", "topology_text"), ("profiles", "profiles_text")):
        ref = doc.get(key)
        if isinstance(ref, str) and not ref.startswith("builtin:"):
            ref_path = Path(ref)
            if not ref_path.is_absolute():
                ref_path = path.parent / ref_path
            if not ref_path.exists():
                raise click.ClickException(f"config references missing file: {ref_path}")
            doc[text_key] = ref_path.read_text()
            doc.pop(key)
    return doc


@main.command()
@click.option("--config", "config_file", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", default=None, help="Artifacts directory.")
@click.option("--no-write", is_flag=True, help="Skip writing artifacts.")
@click.pass_context
def simulate(ctx, config_file, out_dir, no_write):
    """Run a seeded experiment from a YAML config."""
    body = {
        "config": _load_config_doc(config_file),
        "out_dir": out_dir,
        "write_artifacts": not no_write,
    }
    data = _post(ctx, "/simulate", body)
    s = data["summary"]
    lines = [
        f"{s['auth_mode']} run, seed {s['seed']}, {s['duration_s']:.0f} s simulated",
        f"epochs {s['epochs']}, pairings {s['pairings']}, rounds {s['total_rounds']}",
        f"key material: {s['total_key_bits']} bits "
        f"({s['total_key_bytes'] / 1e6:.3f} MB)",
        f"auth failures {s['auth_failures']}, discards {s['discards']}, "
        f"calibrations {s['calibrations']}",
    ]
    if s.get("pool_exhausted"):
        lines.append("run halted: pre-shared pool exhausted")
    if data["out_dir"]:
        lines.append(f"artifacts: {data['out_dir']}")
    _emit(ctx, data, "\n".join(lines))


@main.group()
def report() -> None:
    """Rebuild reports from raw logs."""


@report.command("build")
@click.option("--log", "log_file", type=click.Path(exists=True), required=True)
@click.option("--topology", "topology_file", type=click.Path(exists=True), default=None)
@click.option("--block-seconds", default=1.0, show_default=True)
@click.option("--requeue-s", default=1800.0, show_default=True)
@click.pass_context
def report_build(ctx, log_file, topology_file, block_seconds, requeue_s):
    """Per-connection survey CSV (route, loss, counts, rate, qber) from a round log."""
    body = {
        **_topology_body(topology_file),
        "log_text": Path(log_file).read_text(),
        "block_seconds": block_seconds,
        "requeue_s": requeue_s,
    }
    data = _post(ctx, "/report/build", body)
    _emit(ctx, data, data["report_csv"].rstrip("\n"))


@report.command("daily")
@click.option("--log", "log_file", type=click.Path(exists=True), required=True)
@click.option("--block-seconds", default=1.0, show_default=True)
@click.pass_context
def report_daily(ctx, log_file, block_seconds):
    """Per-day mean key rate CSV from a round log."""
    body = {"log_text": Path(log_file).read_text(), "block_seconds": block_seconds}
    data = _post(ctx, "/report/daily", body)
    _emit(ctx, data, data["daily_csv"].rstrip("\n"))


@main.command("compare-auth")
@click.option("--connection", required=True, help="Connection id, e.g. U4-U3.")
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.pass_context
def compare_auth(ctx, connection, config_file):
    """Same-seed key-rate comparison: pqc vs pre-shared tags."""
    body = {"connection": connection}
    if config_file:
        body["config"] = _load_config_doc(config_file)
    data = _post(ctx, "/compare-auth", body)
    text = (
        f"connection {data['connection']} over {data['rounds']} rounds\n"
        f"pqc:       {data['rate_pqc_kbps']:.3f} kbps\n"
        f"preshared: {data['rate_preshared_kbps']:.3f} kbps\n"
        f"delta:     {data['delta_fraction'] * 100:.3f}%"
    )
    _emit(ctx, data, text)


@main.command("handshake-demo")
@click.option("--delay-ms", default=10.0, show_default=True)
@click.option("--bandwidth-kBps", "bandwidth_kBps", default=100.0, show_default=True,
              help="Classical channel bandwidth in kilobytes/s; 0 means unlimited.")
@click.option("--op-ms", default=10.0, show_default=True,
              help="Cost of one sign/verify operation.")
@click.option("--tamper", default=None, metavar="MSG:BYTE",
              help="Flip one byte of the MSG-th wire message.")
@click.pass_context
def handshake_demo(ctx, delay_ms, bandwidth_kBps, op_ms, tamper):
    """Mutual-authentication handshake: virtual timing + live transcript."""
    body = {
        "delay_s": delay_ms / 1e3,
        "bandwidth_bytes_per_s": bandwidth_kBps * 1000.0 if bandwidth_kBps > 0 else None,
        "sign_op_s": op_ms / 1e3,
        "verify_op_s": op_ms / 1e3,
    }
    if tamper:
        msg, _, byte = tamper.partition(":")
        body["tamper_message"] = int(msg)
        body["tamper_byte"] = int(byte or 0)
    data = _post(ctx, "/handshake-demo", body)
    lines = [f"{'phase':14s} {'start_ms':>9s} {'end_ms':>9s} {'dur_ms':>8s}"]
    for p in data["phases"]:
        lines.append(
            f"{p['name']:14s} {p['start_ms']:9.3f} {p['end_ms']:9.3f} "
            f"{p['duration_ms']:8.3f}"
        )
    budget = data["within_budget_ms"]
    verdict = "within" if data["total_ms"] <= budget else "OVER"
    lines.append(f"total {data['total_ms']:.3f} ms ({verdict} {budget:.0f} ms budget)")
    lines.append(
        "frames: "
        + ", ".join(f"{k}={v}B" for k, v in sorted(data["frame_bytes"].items()))
    )
    lines.append(
        f"live transcript: {len(data['messages'])} messages, outcome {data['outcome']}"
        + (f" ({data['fail_reason']})" if data["fail_reason"] else "")
    )
    _emit(ctx, data, "\n".join(lines))


@main.group()
def kms() -> None:
    """Key-store scheduling tools."""


@kms.command("schedule")
@click.option("--topology", "topology_file", type=click.Path(exists=True), default=None)
@click.option("--buffers", "buffers_file", type=click.Path(exists=True), default=None,
              help="YAML mapping connection -> buffered bytes.")
@click.option("--requeue-s", default=1800.0, show_default=True)
@click.pass_context
def kms_schedule(ctx, topology_file, buffers_file, requeue_s):
    """One conflict-free pairing selection in queue order."""
    buffers = {}
    if buffers_file:
        buffers = yaml.safe_load(Path(buffers_file).read_text()) or {}
    body = {
        **_topology_body(topology_file),
        "buffered_bytes": buffers,
        "requeue_s": requeue_s,
    }
    data = _post(ctx, "/kms/schedule", body)
    text = (
        f"queue order: {' '.join(data['order'])}\n"
        f"admitted ({len(data['active'])}): {' '.join(data['active'])}"
    )
    _emit(ctx, data, text)


@kms.command("drain-scenario")
@click.option("--config", "config_file", type=click.Path(exists=True), required=True)
@click.pass_context
def kms_drain_scenario(ctx, config_file):
    """Replay a buffer-drain scenario from a YAML config."""
    doc = yaml.safe_load(Path(config_file).read_text())
    if not isinstance(doc, dict):
        raise click.ClickException("scenario config must be a YAML mapping")
    data = _post(ctx, "/kms/drain-scenario", doc)
    empty = (
        f"{data['time_to_empty_s']:.4f} s"
        if data["time_to_empty_s"] is not None
        else "never"
    )
    text = (
        f"connection {data['connection']}\n"
        f"store empty at: {empty}\n"
        f"scheduled consecutively for {data['periods_scheduled_consecutive']} periods\n"
        f"buffer stayed minimum: {data['buffer_stayed_minimum']}\n"
        f"period winners: {' '.join(data['schedule'])}"
    )
    _emit(ctx, data, text)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8461, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main(obj={})
