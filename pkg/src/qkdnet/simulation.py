"""Experiment orchestration: seeded configs, event loop, artifact writing.

Every run is a pure function of its configuration. Randomness comes from
one root seed; child streams are keyed by (component, connection, epoch)
so that adding or removing a connection never perturbs the randomness
any other connection sees, and auth-mode choice never touches the
key-generation streams at all.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__, kms, stats, topology
from .auth import (
    AuthError,
    AuthSession,
    CertificateAuthority,
    PresharedPool,
    make_identity,
    run_handshake,
)
from .pipeline import (
    DeviceProfile,
    LogRecord,
    PairingParams,
    PairingProcess,
    PqcRoundAuth,
    PresharedRoundAuth,
    QberPolicy,
    calibrate_sift_rate,
)

AUTH_MODES = ("pqc", "preshared")


class ConfigError(ValueError):
    pass


# --- seeded stream derivation ---------------------------------------------------

def child_seed(root_seed: int, *labels) -> int:
    tag = ":".join([str(root_seed), *map(str, labels)]).encode()
    return int.from_bytes(hashlib.sha256(tag).digest()[:8], "big")


def child_rng(root_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(child_seed(root_seed, *labels))


# --- event loop -----------------------------------------------------------------

class EventLoop:
    """Virtual-time queue; events run in (timestamp, insertion order)."""

    def __init__(self, start_s: float = 0.0):
        self.now = start_s
        self._queue: list[tuple[float, int]] = []
        self._callbacks: dict[int, object] = {}
        self._seq = 0
        self.processed = 0

    def schedule(self, timestamp_s: float, callback) -> None:
        if timestamp_s < self.now:
            raise ValueError(
                f"cannot schedule at {timestamp_s} before now {self.now}"
            )
        heapq.heappush(self._queue, (timestamp_s, self._seq))
        self._callbacks[self._seq] = callback
        self._seq += 1

    def run(self, until_s: float | None = None) -> None:
        while self._queue:
            timestamp, seq = self._queue[0]
            if until_s is not None and timestamp > until_s:
                break
            heapq.heappop(self._queue)
            self.now = timestamp
            callback = self._callbacks.pop(seq)
            callback(self)
            self.processed += 1


# --- configuration ---------------------------------------------------------------

def _builtin(name: str) -> str:
    return (resources.files("qkdnet") / "data" / name).read_text()


@dataclass(frozen=True)
class SimConfig:
    seed: int
    duration_s: float
    topology_text: str
    profiles: dict[str, DeviceProfile]
    auth_mode: str = "pqc"
    requeue_interval_s: float = 1800.0
    round_interval_s: float = 1800.0
    block_seconds: float = 1.0
    qber_policy: QberPolicy = field(default_factory=QberPolicy)
    feasibility: topology.FeasibilityPolicy = field(
        default_factory=topology.FeasibilityPolicy
    )
    connections: tuple[str, ...] | None = None
    preshared_pool_bytes: float = 33_554_432.0
    auth_failure_rate: float = 0.0
    out_dir: str | None = None

    def __post_init__(self):
        if self.auth_mode not in AUTH_MODES:
            raise ConfigError(f"auth_mode must be one of {AUTH_MODES}")
        if self.duration_s < 0:
            raise ConfigError("duration_s must be non-negative")
        if self.requeue_interval_s <= 0 or self.round_interval_s <= 0:
            raise ConfigError("intervals must be positive")
        if not 0.0 <= self.auth_failure_rate < 1.0:
            raise ConfigError("auth_failure_rate must be in [0, 1)")

    def pairing_params(self) -> PairingParams:
        return PairingParams(
            block_seconds=self.block_seconds,
            round_interval_s=self.round_interval_s,
            qber_policy=self.qber_policy,
        )

    def canonical(self) -> dict:
        return {
            "seed": self.seed,
            "duration_s": self.duration_s,
            "auth_mode": self.auth_mode,
            "requeue_interval_s": self.requeue_interval_s,
            "round_interval_s": self.round_interval_s,
            "block_seconds": self.block_seconds,
            "qber_threshold": self.qber_policy.threshold,
            "qber_consecutive_limit": self.qber_policy.consecutive_limit,
            "max_loss_db": self.feasibility.max_loss_dB,
            "max_switches": self.feasibility.max_switches_per_path,
            "connections": sorted(self.connections) if self.connections else None,
            "preshared_pool_bytes": self.preshared_pool_bytes,
            "auth_failure_rate": self.auth_failure_rate,
            "topology_sha256": hashlib.sha256(
                self.topology_text.encode()
            ).hexdigest(),
            "profiles": {
                c: {"device_factor": p.device_factor, "qber_base": p.qber_base}
                for c, p in sorted(self.profiles.items())
            },
        }


def _load_profiles(doc: dict) -> dict[str, DeviceProfile]:
    profiles = {}
    for conn, fields_ in (doc.get("connections") or {}).items():
        profiles[conn] = DeviceProfile(
            device_factor=float(fields_["device_factor"]),
            qber_base=float(fields_["qber_base"]),
        )
    return profiles


def read_ref(ref: str, base_dir: Path | None) -> str:
    """Resolve a file reference: builtin:<name> or a (relative) path."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        try:
            return _builtin(name)
        except FileNotFoundError as exc:
            raise ConfigError(f"unknown builtin data file {name!r}") from exc
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    if not path.exists():
        raise ConfigError(f"referenced file does not exist: {path}")
    return path.read_text()


def config_from_dict(doc: dict, base_dir: Path | None = None) -> SimConfig:
    if "seed" not in doc:
        raise ConfigError("seed is mandatory (no wall-clock entropy)")
    # inline *_text keys carry file contents directly (remote clients)
    topo_text = doc.get("topology_text") or read_ref(
        str(doc.get("topology", "builtin:jinan.topo")), base_dir
    )
    profiles_text = doc.get("profiles_text") or read_ref(
        str(doc.get("profiles", "builtin:jinan_profiles.yaml")), base_dir
    )
    profiles = _load_profiles(yaml.safe_load(profiles_text) or {})
    qber = doc.get("qber") or {}
    feas = doc.get("feasibility") or {}
    connections = doc.get("connections")
    try:
        return SimConfig(
            seed=int(doc["seed"]),
            duration_s=float(doc.get("duration_s", 0.0)),
            topology_text=topo_text,
            profiles=profiles,
            auth_mode=str(doc.get("auth_mode", "pqc")),
            requeue_interval_s=float(doc.get("requeue_interval_s", 1800.0)),
            round_interval_s=float(doc.get("round_interval_s", 1800.0)),
            block_seconds=float(doc.get("block_seconds", 1.0)),
            qber_policy=QberPolicy(
                threshold=float(qber.get("threshold", 0.03125)),
                consecutive_limit=int(qber.get("consecutive_limit", 3)),
            ),
            feasibility=topology.FeasibilityPolicy(
                max_loss_dB=float(feas.get("max_loss_db", 13.8)),
                max_switches_per_path=int(feas.get("max_switches", 2)),
            ),
            connections=tuple(connections) if connections else None,
            preshared_pool_bytes=float(
                doc.get("preshared_pool_bytes", 33_554_432.0)
            ),
            auth_failure_rate=float(doc.get("auth_failure_rate", 0.0)),
            out_dir=doc.get("out_dir"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config must be a YAML mapping")
    return config_from_dict(doc, base_dir=path.parent)


# --- the experiment ---------------------------------------------------------------

@dataclass
class _ConnectionState:
    connection: str
    route: topology.Route
    loss_dB: float
    profile: DeviceProfile
    process: PairingProcess
    store: kms.KeyStore
    ca: CertificateAuthority
    identity_a: object = None
    identity_b: object = None
    handshakes: int = 0


@dataclass
class RunResult:
    config: SimConfig
    records: list[LogRecord]
    report_rows: list[stats.ConnectionReport]
    summary: dict
    out_dir: Path | None = None


def _active_connections(config: SimConfig, topo: topology.Topology) -> list[str]:
    feasible = topology.feasible_connections(topo, config.feasibility)
    names = [f"{tx}-{rx}" for tx, rx in feasible]
    if config.connections is None:
        return sorted(names)
    known = set(names)
    for conn in config.connections:
        if conn not in known:
            raise ConfigError(
                f"connection {conn!r} is not feasible under the active policy"
            )
    return sorted(config.connections)


def _build_states(
    config: SimConfig, topo: topology.Topology, names: list[str]
) -> dict[str, _ConnectionState]:
    params = config.pairing_params()
    ca = CertificateAuthority(
        "CA-root", hashlib.sha256(f"{config.seed}:ca".encode()).digest()
    )
    states: dict[str, _ConnectionState] = {}
    for conn in names:
        tx, _, rx = conn.partition("-")
        route = topo.route_for(tx, rx)
        loss = topology.path_loss(topo, route).total_dB
        profile = config.profiles.get(conn, DeviceProfile())
        sift_rate = calibrate_sift_rate(
            profile, loss, child_rng(config.seed, "calibrate", conn), params
        )
        if config.auth_mode == "pqc":
            identity_a = make_identity(
                ca, tx, hashlib.sha256(f"{config.seed}:id:{tx}".encode()).digest(),
                child_rng(config.seed, "identity", tx),
            )
            identity_b = make_identity(
                ca, rx, hashlib.sha256(f"{config.seed}:id:{rx}".encode()).digest(),
                child_rng(config.seed, "identity", rx),
            )
            round_auth = PqcRoundAuth(
                None,
                None,
                failure_rate=config.auth_failure_rate,
                fail_rng=child_rng(config.seed, "authfail", conn),
            )
        else:
            identity_a = identity_b = None
            shared = hashlib.sha256(f"{config.seed}:psk:{conn}".encode()).digest()
            round_auth = PresharedRoundAuth(
                shared, PresharedPool(remaining_bytes=config.preshared_pool_bytes)
            )
        process = PairingProcess(
            conn,
            str(route),
            profile,
            loss,
            round_auth,
            child_rng(config.seed, "round", conn, 0),
            params,
            sift_rate_bps=sift_rate,
        )
        states[conn] = _ConnectionState(
            connection=conn,
            route=route,
            loss_dB=loss,
            profile=profile,
            process=process,
            store=kms.KeyStore(conn),
            ca=ca,
            identity_a=identity_a,
            identity_b=identity_b,
        )
    return states


def _epoch_handshake(state: _ConnectionState, ca_public_key: bytes, now: float) -> bool:
    session_a = AuthSession(
        identity=state.identity_a, ca_public_key=ca_public_key, now=now
    )
    session_b = AuthSession(
        identity=state.identity_b, ca_public_key=ca_public_key, now=now
    )
    try:
        run_handshake(session_a, session_b)
    except AuthError:
        return False
    state.process.auth.session_a = session_a
    state.process.auth.session_b = session_b
    state.handshakes += 1
    return True


def simulate(config: SimConfig) -> RunResult:
    """Run the full requeue/pairing experiment in virtual time."""
    topo = topology.load_topology(config.topology_text)
    names = _active_connections(config, topo)
    states = _build_states(config, topo, names)
    policy = kms.QueuePolicy(requeue_interval_s=config.requeue_interval_s)
    stores = {c: s.store for c, s in states.items()}

    records: list[LogRecord] = []
    counters = {
        "epochs": 0,
        "pairings": 0,
        "handshakes": 0,
        "auth_failures": 0,
        "calibrations": 0,
        "discards": 0,
        "winnow_failures": 0,
        "pool_exhausted": False,
    }
    halt = {"flag": False}
    ca_public_key = states[names[0]].ca.public_key if names else b""

    n_epochs = int(config.duration_s // config.requeue_interval_s)
    if config.duration_s > 0:
        n_epochs = max(1, n_epochs)

    def epoch_event(epoch_index: int):
        def run_epoch(loop: EventLoop):
            if halt["flag"]:
                return
            start = epoch_index * config.requeue_interval_s
            length = min(config.requeue_interval_s, config.duration_s - start)
            schedule = kms.select_pairings(
                names, stores, topo, policy, epoch_start_s=start
            )
            counters["epochs"] += 1
            for conn in schedule.active:
                state = states[conn]
                if config.auth_mode == "pqc":
                    if not _epoch_handshake(state, ca_public_key, start):
                        continue
                    counters["handshakes"] += 1
                state.process.rng = child_rng(
                    config.seed, "round", conn, epoch_index
                )
                recs, _ = state.process.run(
                    length, epoch_start_s=start, key_store=state.store
                )
                records.extend(recs)
                counters["pairings"] += 1
                for rec in recs:
                    if rec.action == "auth-failed":
                        counters["auth_failures"] += 1
                    elif rec.action == "calibrate":
                        counters["calibrations"] += 1
                    elif rec.action == "discard":
                        counters["discards"] += 1
                    elif rec.action == "winnow-failed":
                        counters["winnow_failures"] += 1
                if state.process.halted == "pool-exhausted":
                    counters["pool_exhausted"] = True
                    halt["flag"] = True
                    return

        return run_epoch

    loop = EventLoop()
    for epoch in range(n_epochs):
        loop.schedule(epoch * config.requeue_interval_s, epoch_event(epoch))
    loop.run()

    report_rows = stats.build_report(
        records,
        topo,
        block_seconds=config.block_seconds,
        requeue_s=config.requeue_interval_s,
        qber_threshold=config.qber_policy.threshold,
    )
    total_bits = sum(r.key_bits_out for r in records)
    summary = {
        "auth_mode": config.auth_mode,
        "seed": config.seed,
        "duration_s": config.duration_s,
        "connections": len(names),
        "events_processed": loop.processed,
        "total_rounds": len(records),
        "total_key_bits": total_bits,
        "total_key_bytes": total_bits / 8.0,
        "store_bytes": {c: states[c].store.buffered_bytes for c in names},
        **counters,
    }
    return RunResult(
        config=config, records=records, report_rows=report_rows, summary=summary
    )


def _default_out_dir(config: SimConfig) -> Path:
    digest = hashlib.sha256(
        json.dumps(config.canonical(), sort_keys=True).encode()
    ).hexdigest()[:12]
    return Path("runs") / f"run-{digest}"


def write_artifacts(result: RunResult, out_dir: str | Path | None = None) -> Path:
    """Write logs, reports, summary, and input-hash manifest."""
    config = result.config
    out = Path(out_dir) if out_dir else (
        Path(config.out_dir) if config.out_dir else _default_out_dir(config)
    )
    out.mkdir(parents=True, exist_ok=True)
    log_text = "".join(r.to_line() + "\n" for r in result.records)
    (out / "logs.txt").write_text(log_text)
    (out / "report.csv").write_text(stats.report_to_csv(result.report_rows))
    daily = stats.build_daily_table(result.records, config.block_seconds)
    (out / "daily.csv").write_text(stats.daily_to_csv(daily))
    (out / "summary.json").write_text(
        json.dumps(result.summary, sort_keys=True, indent=2) + "\n"
    )
    canonical = config.canonical()
    manifest = {
        "package_version": __version__,
        "config_sha256": hashlib.sha256(
            json.dumps(canonical, sort_keys=True).encode()
        ).hexdigest(),
        "inputs": {
            "topology_sha256": canonical["topology_sha256"],
            "profiles_sha256": hashlib.sha256(
                json.dumps(canonical["profiles"], sort_keys=True).encode()
            ).hexdigest(),
            "seed": config.seed,
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    result.out_dir = out
    return out


def run_experiment(config: SimConfig, out_dir: str | Path | None = None) -> RunResult:
    result = simulate(config)
    write_artifacts(result, out_dir)
    return result


# --- auth-mode comparison ----------------------------------------------------------

@dataclass(frozen=True)
class AuthComparison:
    connection: str
    rate_pqc_kbps: float
    rate_preshared_kbps: float
    delta_fraction: float
    rounds: int

    def to_dict(self) -> dict:
        return {
            "connection": self.connection,
            "rate_pqc_kbps": self.rate_pqc_kbps,
            "rate_preshared_kbps": self.rate_preshared_kbps,
            "delta_fraction": self.delta_fraction,
            "rounds": self.rounds,
        }


def _overall_rate_kbps(records: list[LogRecord], block_seconds: float) -> float:
    """Delivered rate over all rounds, failed ones counting as zero."""
    if not records:
        return 0.0
    total = sum(r.key_bits_out for r in records)
    return total / (len(records) * block_seconds) / 1000.0


def compare_auth_modes(config: SimConfig, connection: str | None = None) -> AuthComparison:
    if connection is not None:
        config = replace(config, connections=(connection,))
    if not config.connections or len(config.connections) != 1:
        raise ConfigError("comparison config must name exactly one connection")
    conn = config.connections[0]
    results = {}
    for mode in AUTH_MODES:
        run = simulate(replace(config, auth_mode=mode))
        results[mode] = run
    rate_pqc = _overall_rate_kbps(results["pqc"].records, config.block_seconds)
    rate_pre = _overall_rate_kbps(results["preshared"].records, config.block_seconds)
    reference = max(rate_pqc, rate_pre)
    delta = abs(rate_pqc - rate_pre) / reference if reference > 0 else 0.0
    return AuthComparison(
        connection=conn,
        rate_pqc_kbps=rate_pqc,
        rate_preshared_kbps=rate_pre,
        delta_fraction=delta,
        rounds=len(results["pqc"].records),
    )
